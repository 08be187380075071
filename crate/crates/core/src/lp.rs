//! Dense revised simplex for multi-marginal transport polytopes.
//!
//! Rows are the marginal constraints (one per atom per axis), columns the
//! admissible index tuples. Every structural column has exactly one unit entry
//! per axis. The basis inverse is kept explicitly and refactorized
//! periodically; entering and leaving variables follow Bland's rule over a
//! caller-supplied column priority, which makes the pivot path deterministic.
//!
//! Phase I starts from an all-artificial basis. Artificials that remain basic
//! after Phase I sit in rows that are linear combinations of the others (the
//! marginal constraints always have at least `N - 1` such rows); their dual
//! value is zero and they never move again.

const REFACTOR_EVERY: usize = 50;
const PIVOT_TOL: f64 = 1e-9;
const RATIO_TIE_TOL: f64 = 1e-12;
const PHASE1_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpFailure {
    Infeasible { residual: f64 },
    PivotLimit { pivots: usize },
    Unbounded,
    Singular,
}

pub(crate) struct TransportLp<'a> {
    /// Row index of each column's unit entries, `n_axes` per column.
    pub rows: &'a [usize],
    pub n_axes: usize,
    pub costs: &'a [f64],
    pub rhs: &'a [f64],
    /// Bland priority of each structural column (lower pivots first).
    pub priority: &'a [usize],
    pub pivot_limit: usize,
}

pub(crate) struct LpSolution {
    /// Value of each structural column.
    pub x: Vec<f64>,
    /// One dual value per row.
    pub y: Vec<f64>,
    pub pivots: usize,
}

struct State {
    m: usize,
    n: usize,
    basis: Vec<usize>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    pivots: usize,
}

impl<'a> TransportLp<'a> {
    fn num_cols(&self) -> usize {
        self.costs.len()
    }

    fn col_rows(&self, j: usize) -> &[usize] {
        &self.rows[j * self.n_axes..(j + 1) * self.n_axes]
    }

    fn is_artificial(&self, col: usize) -> bool {
        col >= self.num_cols()
    }

    /// `B^{-1} a_col`.
    fn ftran(&self, st: &State, col: usize, out: &mut [f64]) {
        let m = st.m;
        if self.is_artificial(col) {
            let r = col - self.num_cols();
            for i in 0..m {
                out[i] = st.binv[i * m + r];
            }
        } else {
            let rows = self.col_rows(col);
            for i in 0..m {
                let base = i * m;
                out[i] = rows.iter().map(|&r| st.binv[base + r]).sum();
            }
        }
    }

    fn duals(&self, st: &State, cost_of: &dyn Fn(usize) -> f64) -> Vec<f64> {
        let m = st.m;
        let mut y = vec![0.0; m];
        for (i, &col) in st.basis.iter().enumerate() {
            let c = cost_of(col);
            if c != 0.0 {
                let row = &st.binv[i * m..(i + 1) * m];
                for (yr, b) in y.iter_mut().zip(row) {
                    *yr += c * b;
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, c: f64, y: &[f64]) -> f64 {
        c - self.col_rows(j).iter().map(|&r| y[r]).sum::<f64>()
    }

    fn rank(&self, col: usize) -> usize {
        if self.is_artificial(col) {
            self.num_cols() + (col - self.num_cols())
        } else {
            self.priority[col]
        }
    }

    fn pivot(&self, st: &mut State, r: usize, col: usize, d: &[f64]) -> Result<(), LpFailure> {
        let m = st.m;
        let piv = d[r];
        let theta = st.xb[r] / piv;
        for i in 0..m {
            if i != r {
                st.xb[i] -= theta * d[i];
                if st.xb[i] < 0.0 && st.xb[i] > -1e-12 {
                    st.xb[i] = 0.0;
                }
            }
        }
        st.xb[r] = theta;
        let (head, tail) = st.binv.split_at_mut(r * m);
        let (prow, rest) = tail.split_at_mut(m);
        for v in prow.iter_mut() {
            *v /= piv;
        }
        for (i, chunk) in head.chunks_mut(m).chain(rest.chunks_mut(m)).enumerate() {
            let di = d[if i < r { i } else { i + 1 }];
            if di != 0.0 {
                for (v, p) in chunk.iter_mut().zip(prow.iter()) {
                    *v -= di * p;
                }
            }
        }
        st.basis[r] = col;
        st.pivots += 1;
        if st.pivots.is_multiple_of(REFACTOR_EVERY) {
            self.refactor(st)?;
        }
        Ok(())
    }

    /// Rebuilds `B^{-1}` and `x_B` from scratch by Gauss-Jordan elimination.
    fn refactor(&self, st: &mut State) -> Result<(), LpFailure> {
        let m = st.m;
        let mut a = vec![0.0f64; m * m];
        for (k, &col) in st.basis.iter().enumerate() {
            if self.is_artificial(col) {
                a[(col - self.num_cols()) * m + k] = 1.0;
            } else {
                for &r in self.col_rows(col) {
                    a[r * m + k] += 1.0;
                }
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let p = (c..m)
                .max_by(|&i, &j| a[i * m + c].abs().total_cmp(&a[j * m + c].abs()))
                .unwrap();
            if a[p * m + c].abs() < 1e-12 {
                return Err(LpFailure::Singular);
            }
            if p != c {
                for k in 0..m {
                    a.swap(p * m + k, c * m + k);
                    inv.swap(p * m + k, c * m + k);
                }
            }
            let piv = a[c * m + c];
            for k in 0..m {
                a[c * m + k] /= piv;
                inv[c * m + k] /= piv;
            }
            for i in 0..m {
                if i != c {
                    let f = a[i * m + c];
                    if f != 0.0 {
                        for k in 0..m {
                            a[i * m + k] -= f * a[c * m + k];
                            inv[i * m + k] -= f * inv[c * m + k];
                        }
                    }
                }
            }
        }
        st.binv = inv;
        for i in 0..m {
            let v: f64 = (0..m).map(|r| st.binv[i * m + r] * self.rhs[r]).sum();
            st.xb[i] = if v < 0.0 && v > -1e-11 { 0.0 } else { v };
        }
        Ok(())
    }

    /// Bland iterations until no improving column remains.
    fn run_phase(
        &self,
        st: &mut State,
        order: &[usize],
        cost_of: &dyn Fn(usize) -> f64,
        allow_artificial: bool,
    ) -> Result<(), LpFailure> {
        let m = st.m;
        let scale = 1.0
            + (0..self.num_cols())
                .map(|j| cost_of(j).abs())
                .fold(0.0, f64::max);
        let rc_tol = 1e-11 * scale;
        let mut in_basis = vec![false; st.n + m];
        for &b in &st.basis {
            in_basis[b] = true;
        }
        let mut d = vec![0.0; m];
        loop {
            if st.pivots >= self.pivot_limit {
                return Err(LpFailure::PivotLimit { pivots: st.pivots });
            }
            let y = self.duals(st, cost_of);
            let entering = order
                .iter()
                .copied()
                .find(|&j| !in_basis[j] && self.reduced_cost(j, cost_of(j), &y) < -rc_tol);
            let entering = match entering {
                Some(j) => j,
                None if allow_artificial => {
                    match (0..m)
                        .map(|r| st.n + r)
                        .find(|&a| !in_basis[a] && cost_of(a) - y[a - st.n] < -rc_tol)
                    {
                        Some(a) => a,
                        None => return Ok(()),
                    }
                }
                None => return Ok(()),
            };
            self.ftran(st, entering, &mut d);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                if d[i] > PIVOT_TOL {
                    let ratio = st.xb[i].max(0.0) / d[i];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - RATIO_TIE_TOL
                                || (ratio <= lr + RATIO_TIE_TOL
                                    && self.rank(st.basis[i]) < self.rank(st.basis[li]))
                            {
                                Some((i, ratio.min(lr)))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(LpFailure::Unbounded);
            };
            in_basis[st.basis[r]] = false;
            in_basis[entering] = true;
            self.pivot(st, r, entering, &d)?;
        }
    }

    pub fn solve(&self) -> Result<LpSolution, LpFailure> {
        let m = self.rhs.len();
        let n = self.num_cols();
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = 1.0;
        }
        let mut st = State {
            m,
            n,
            basis: (n..n + m).collect(),
            binv,
            xb: self.rhs.to_vec(),
            pivots: 0,
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&j| self.priority[j]);

        let phase1_cost = |col: usize| if col >= n { 1.0 } else { 0.0 };
        self.run_phase(&mut st, &order, &phase1_cost, false)?;
        self.refactor(&mut st)?;
        let residual: f64 = st
            .basis
            .iter()
            .zip(&st.xb)
            .filter(|(&c, _)| c >= n)
            .map(|(_, &v)| v)
            .sum();
        if residual > PHASE1_TOL {
            return Err(LpFailure::Infeasible { residual });
        }

        // Drive zero-level artificials out of the basis where a structural
        // column can replace them; the rest mark redundant rows.
        let mut d = vec![0.0; m];
        let mut in_basis = vec![false; n + m];
        for &b in &st.basis {
            in_basis[b] = true;
        }
        for r in 0..m {
            if st.basis[r] < n {
                continue;
            }
            let row = &st.binv[r * m..(r + 1) * m];
            let replacement = order.iter().copied().find(|&j| {
                !in_basis[j] && self.col_rows(j).iter().map(|&k| row[k]).sum::<f64>().abs() > 1e-7
            });
            if let Some(j) = replacement {
                self.ftran(&st, j, &mut d);
                in_basis[st.basis[r]] = false;
                in_basis[j] = true;
                st.xb[r] = 0.0;
                self.pivot(&mut st, r, j, &d)?;
            }
        }
        self.refactor(&mut st)?;

        let phase2_cost = |col: usize| if col >= n { 0.0 } else { self.costs[col] };
        self.run_phase(&mut st, &order, &phase2_cost, false)?;
        self.refactor(&mut st)?;

        let y = self.duals(&st, &phase2_cost);
        let mut x = vec![0.0; n];
        for (&col, &v) in st.basis.iter().zip(&st.xb) {
            if col < n {
                x[col] = v.max(0.0);
            }
        }
        Ok(LpSolution {
            x,
            y,
            pivots: st.pivots,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two(costs: &[f64]) -> LpSolution {
        // rows: axis0 atoms 0,1 then axis1 atoms 0,1; columns (0,0),(0,1),(1,0),(1,1)
        let rows = [0, 2, 0, 3, 1, 2, 1, 3];
        let rhs = [0.5, 0.5, 0.5, 0.5];
        let priority = [0, 1, 2, 3];
        TransportLp {
            rows: &rows,
            n_axes: 2,
            costs,
            rhs: &rhs,
            priority: &priority,
            pivot_limit: 1000,
        }
        .solve()
        .unwrap()
    }

    #[test]
    fn identity_pairing_is_optimal_for_bilinear_cost() {
        let sol = two_by_two(&[0.0, 0.0, 0.0, -2.0]);
        assert_eq!(sol.x, vec![0.5, 0.0, 0.0, 0.5]);
        let dual: f64 = sol.y.iter().map(|y| 0.5 * y).sum();
        assert!((dual + 1.0).abs() < 1e-12);
    }

    #[test]
    fn anti_diagonal_when_it_is_cheaper() {
        let sol = two_by_two(&[3.0, 1.0, 1.0, 3.0]);
        assert_eq!(sol.x, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn detects_infeasibility() {
        // only column (0,0) admissible but axis-1 atom 1 needs mass
        let rows = [0, 2];
        let rhs = [0.5, 0.5, 0.5, 0.5];
        let err = TransportLp {
            rows: &rows,
            n_axes: 2,
            costs: &[1.0],
            rhs: &rhs,
            priority: &[0],
            pivot_limit: 100,
        }
        .solve()
        .err()
        .unwrap();
        assert!(matches!(err, LpFailure::Infeasible { .. }));
    }

    #[test]
    fn pivot_limit_is_reported() {
        let rows = [0, 2, 0, 3, 1, 2, 1, 3];
        let rhs = [0.5, 0.5, 0.5, 0.5];
        let err = TransportLp {
            rows: &rows,
            n_axes: 2,
            costs: &[0.0, 0.0, 0.0, -2.0],
            rhs: &rhs,
            priority: &[0, 1, 2, 3],
            pivot_limit: 1,
        }
        .solve()
        .err()
        .unwrap();
        assert_eq!(err, LpFailure::PivotLimit { pivots: 1 });
    }
}
