//! Entropically regularized multi-marginal transport by log-domain Sinkhorn sweeps.
//!
//! The plan is `gamma(t) = exp((sum_k g_k(t_k) - c(t)) / eps)` with
//! `g_k = f_k + eps log rho_k`; sweeping `k = 0..N-1` makes marginal `k` exact
//! in turn. Masked (`+inf` cost) tuples carry no mass and never enter a
//! reduction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::CostTensor;
use crate::measures::DiscreteMeasure;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100_000;
/// Sweeps between two recorded marginal-error checkpoints.
pub const CHECKPOINT_EVERY: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropicError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("infeasible: every tuple through atom {atom} of marginal {axis} is masked")]
    Infeasible { axis: usize, atom: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropicStatus {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropicState {
    /// Log-domain potentials `f_k`, one table per marginal.
    pub potentials: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub iterations: usize,
    /// Marginal error at every checkpoint, the last entry being the final error.
    pub error_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropicResult {
    /// `<c, gamma>` without the entropy term.
    pub value: f64,
    pub state: EntropicState,
    /// Max over axes of the L1 distance between the plan's marginal and the target.
    pub marginal_error: f64,
    pub status: EntropicStatus,
    /// Dense plan in the cost tensor's layout; masked tuples hold exactly zero.
    pub plan: Vec<f64>,
}

struct Layout {
    shape: Vec<usize>,
    strides: Vec<usize>,
}

impl Layout {
    fn new(shape: &[usize]) -> Self {
        let mut strides = vec![1; shape.len()];
        for k in (0..shape.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * shape[k + 1];
        }
        Self {
            shape: shape.to_vec(),
            strides,
        }
    }

    /// Flat indices of all tuples with `t_k = a`.
    fn slice(&self, k: usize, a: usize) -> impl Iterator<Item = usize> + '_ {
        let inner = self.strides[k];
        let block = inner * self.shape[k];
        let total: usize = self.shape.iter().product();
        (0..total / block).flat_map(move |o| {
            let base = o * block + a * inner;
            base..base + inner
        })
    }
}

/// Tensors smaller than this are processed on the calling thread.
const PARALLEL_MIN: usize = 1 << 15;

/// `(0..n).map(f)`, spread over the thread pool when `work` is large enough.
fn map_range<F>(n: usize, work: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if work >= PARALLEL_MIN {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// `sum_l g_l(t_l)` for every flat index.
fn potential_sums(layout: &Layout, g: &[Vec<f64>], out: &mut [f64]) {
    const CHUNK: usize = 4096;
    let fill = |(b, chunk): (usize, &mut [f64])| {
        for (off, slot) in chunk.iter_mut().enumerate() {
            let mut flat = b * CHUNK + off;
            let mut s = 0.0;
            for (k, st) in layout.strides.iter().enumerate() {
                s += g[k][flat / st];
                flat %= st;
            }
            *slot = s;
        }
    };
    if out.len() >= PARALLEL_MIN {
        out.par_chunks_mut(CHUNK).enumerate().for_each(fill);
    } else {
        out.chunks_mut(CHUNK).enumerate().for_each(fill);
    }
}

fn validate(
    cost: &CostTensor,
    marginals: &[DiscreteMeasure],
    eps: f64,
) -> Result<(), EntropicError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(EntropicError::InvalidInput(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    if marginals.is_empty() || cost.num_axes() != marginals.len() {
        return Err(EntropicError::InvalidInput(format!(
            "cost has {} axes, {} marginals given",
            cost.num_axes(),
            marginals.len()
        )));
    }
    for (k, (&n, m)) in cost.shape().iter().zip(marginals).enumerate() {
        if n != m.len() {
            return Err(EntropicError::InvalidInput(format!(
                "cost axis {k} has {n} entries, marginal has {} atoms",
                m.len()
            )));
        }
    }
    let layout = Layout::new(cost.shape());
    let log_w: Vec<Vec<f64>> = marginals
        .iter()
        .map(|m| m.weights().iter().map(|w| w.ln()).collect())
        .collect();
    for (k, m) in marginals.iter().enumerate() {
        for a in 0..m.len() {
            if m.weight(a) == 0.0 {
                continue;
            }
            let reachable = layout.slice(k, a).any(|flat| {
                cost.data()[flat].is_finite() && {
                    let t = cost.tuple(flat);
                    t.iter().enumerate().all(|(l, &i)| log_w[l][i].is_finite())
                }
            });
            if !reachable {
                return Err(EntropicError::Infeasible { axis: k, atom: a });
            }
        }
    }
    Ok(())
}

pub fn solve_sinkhorn(
    cost: &CostTensor,
    marginals: &[DiscreteMeasure],
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> Result<EntropicResult, EntropicError> {
    solve_sinkhorn_from(cost, marginals, eps, tol, max_iter, None)
}

/// Same as [`solve_sinkhorn`], starting from the given potentials.
pub fn solve_sinkhorn_from(
    cost: &CostTensor,
    marginals: &[DiscreteMeasure],
    eps: f64,
    tol: f64,
    max_iter: usize,
    init: Option<&[Vec<f64>]>,
) -> Result<EntropicResult, EntropicError> {
    validate(cost, marginals, eps)?;
    let n = marginals.len();
    let layout = Layout::new(cost.shape());
    let c = cost.data();
    let log_w: Vec<Vec<f64>> = marginals
        .iter()
        .map(|m| m.weights().iter().map(|w| w.ln()).collect())
        .collect();
    let mut f: Vec<Vec<f64>> = match init {
        Some(init)
            if init.len() == n && init.iter().zip(marginals).all(|(u, m)| u.len() == m.len()) =>
        {
            init.to_vec()
        }
        Some(_) => {
            return Err(EntropicError::InvalidInput(
                "initial potentials do not match the marginals".into(),
            ))
        }
        None => marginals.iter().map(|m| vec![0.0; m.len()]).collect(),
    };
    let g_of = |f: &[Vec<f64>]| -> Vec<Vec<f64>> {
        f.iter()
            .zip(&log_w)
            .map(|(fk, lw)| fk.iter().zip(lw).map(|(a, b)| a + eps * b).collect())
            .collect()
    };

    let mut sums = vec![0.0; c.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut status = EntropicStatus::MaxIter;
    let mut error = f64::INFINITY;

    loop {
        if iterations > 0 && (iterations % CHECKPOINT_EVERY == 0 || iterations == max_iter) {
            error = marginal_error(&layout, c, &g_of(&f), marginals, eps, &mut sums);
            history.push(error);
            if error <= tol {
                status = EntropicStatus::Converged;
                break;
            }
        }
        if iterations >= max_iter {
            break;
        }
        for k in 0..n {
            let g = g_of(&f);
            potential_sums(&layout, &g, &mut sums);
            let gk = &g[k];
            let updated = map_range(layout.shape[k], c.len(), |a| {
                if !log_w[k][a].is_finite() {
                    return 0.0;
                }
                let val = |flat: usize| (sums[flat] - gk[a] - c[flat]) / eps;
                let mx = layout
                    .slice(k, a)
                    .filter(|&fl| c[fl].is_finite())
                    .map(val)
                    .fold(f64::NEG_INFINITY, f64::max);
                if mx == f64::NEG_INFINITY {
                    return 0.0;
                }
                let s: f64 = layout
                    .slice(k, a)
                    .filter(|&fl| c[fl].is_finite())
                    .map(|fl| (val(fl) - mx).exp())
                    .sum();
                -eps * (mx + s.ln())
            });
            f[k] = updated;
        }
        iterations += 1;
    }

    let g = g_of(&f);
    potential_sums(&layout, &g, &mut sums);
    let plan = map_range(c.len(), c.len(), |i| {
        if c[i].is_finite() {
            ((sums[i] - c[i]) / eps).exp()
        } else {
            0.0
        }
    });
    let value = plan
        .iter()
        .zip(c)
        .filter(|(&p, _)| p > 0.0)
        .map(|(p, ck)| p * ck)
        .sum();
    if history.is_empty() {
        error = marginal_error(&layout, c, &g, marginals, eps, &mut sums);
        history.push(error);
    }
    Ok(EntropicResult {
        value,
        state: EntropicState {
            potentials: f,
            epsilon: eps,
            iterations,
            error_history: history,
        },
        marginal_error: error,
        status,
        plan,
    })
}

fn marginal_error(
    layout: &Layout,
    c: &[f64],
    g: &[Vec<f64>],
    marginals: &[DiscreteMeasure],
    eps: f64,
    sums: &mut [f64],
) -> f64 {
    potential_sums(layout, g, sums);
    let sums: &[f64] = sums;
    (0..marginals.len())
        .map(|k| {
            map_range(layout.shape[k], c.len(), |a| {
                let mass: f64 = layout
                    .slice(k, a)
                    .filter(|&fl| c[fl].is_finite())
                    .map(|fl| ((sums[fl] - c[fl]) / eps).exp())
                    .sum();
                (mass - marginals[k].weight(a)).abs()
            })
            .into_iter()
            .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Per-`eps` outcome of a schedule run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleStep {
    pub epsilon: f64,
    pub value: f64,
    pub iterations: usize,
    pub marginal_error: f64,
    pub status: EntropicStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleResult {
    /// Result at the smallest `eps`.
    pub result: EntropicResult,
    pub trace: Vec<ScheduleStep>,
}

/// Solves along a strictly decreasing `eps` list, warm-starting each stage.
pub fn epsilon_schedule_solve(
    cost: &CostTensor,
    marginals: &[DiscreteMeasure],
    eps_list: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<ScheduleResult, EntropicError> {
    if eps_list.is_empty() {
        return Err(EntropicError::InvalidInput("empty epsilon schedule".into()));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(EntropicError::InvalidInput(
            "epsilon schedule must be strictly decreasing".into(),
        ));
    }
    let mut trace = Vec::with_capacity(eps_list.len());
    let mut last: Option<EntropicResult> = None;
    for &eps in eps_list {
        let init = last.as_ref().map(|r| r.state.potentials.as_slice());
        let r = solve_sinkhorn_from(cost, marginals, eps, tol, max_iter, init)?;
        trace.push(ScheduleStep {
            epsilon: eps,
            value: r.value,
            iterations: r.state.iterations,
            marginal_error: r.marginal_error,
            status: r.status,
        });
        last = Some(r);
    }
    Ok(ScheduleResult {
        result: last.expect("schedule is non-empty"),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{cost_tensor, product_bilinear_value, CostFamily, CostSpec};

    fn half_half() -> DiscreteMeasure {
        DiscreteMeasure::uniform(vec![vec![0.0], vec![1.0]]).unwrap()
    }

    fn bilinear_2x2() -> (CostTensor, Vec<DiscreteMeasure>) {
        let ms = vec![half_half(), half_half()];
        let cost = cost_tensor(&CostSpec::new(CostFamily::Bilinear, 1, 1, 1), &ms).unwrap();
        (cost, ms)
    }

    #[test]
    fn small_epsilon_approaches_lp_value() {
        let (cost, ms) = bilinear_2x2();
        let r = solve_sinkhorn(&cost, &ms, 0.01, DEFAULT_TOL, 20_000).unwrap();
        assert!((r.value + 1.0).abs() < 1e-2, "value {}", r.value);
        // the kernel is nearly degenerate here, so the error only decays like 1/k
        assert!(r.marginal_error < 1e-4);
        let h = &r.state.error_history;
        assert!(h.windows(2).all(|w| w[1] <= w[0] * 1.1));
    }

    #[test]
    fn large_epsilon_gives_product_plan() {
        let (cost, ms) = bilinear_2x2();
        let r = solve_sinkhorn(&cost, &ms, 2e3, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let product = product_bilinear_value(&ms, 1).unwrap();
        assert!((r.value - product).abs() < 1e-3);
        for p in &r.plan {
            assert!((p - 0.25).abs() < 1e-3);
        }
    }

    #[test]
    fn masked_diagonal_gets_no_mass() {
        let ms = vec![half_half(), half_half()];
        let cost = cost_tensor(&CostSpec::coulomb(2, 1), &ms).unwrap();
        let r = solve_sinkhorn(&cost, &ms, 0.05, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(r.plan[0], 0.0);
        assert_eq!(r.plan[3], 0.0);
        assert!((r.value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn all_masked_slice_is_infeasible() {
        let ms = vec![
            DiscreteMeasure::dirac(vec![0.0]).unwrap(),
            DiscreteMeasure::dirac(vec![0.0]).unwrap(),
        ];
        let cost = cost_tensor(&CostSpec::coulomb(2, 1), &ms).unwrap();
        assert_eq!(
            solve_sinkhorn(&cost, &ms, 0.1, DEFAULT_TOL, 100).unwrap_err(),
            EntropicError::Infeasible { axis: 0, atom: 0 }
        );
    }

    #[test]
    fn max_iter_is_a_status() {
        let (cost, ms) = bilinear_2x2();
        let r = solve_sinkhorn(&cost, &ms, 0.01, 1e-300, 3).unwrap();
        assert_eq!(r.status, EntropicStatus::MaxIter);
        assert_eq!(r.state.iterations, 3);
    }

    #[test]
    fn schedule_warm_starts_toward_lp() {
        let (cost, ms) = bilinear_2x2();
        let s =
            epsilon_schedule_solve(&cost, &ms, &[1.0, 0.1, 0.01], DEFAULT_TOL, DEFAULT_MAX_ITER)
                .unwrap();
        assert!((s.result.value + 1.0).abs() < 1e-2);
        assert_eq!(s.trace.len(), 3);
        assert!(s.trace.windows(2).all(|w| w[1].value <= w[0].value + 1e-9));
    }

    #[test]
    fn single_step_schedule_matches_direct_solve() {
        let (cost, ms) = bilinear_2x2();
        let s = epsilon_schedule_solve(&cost, &ms, &[0.1], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let d = solve_sinkhorn(&cost, &ms, 0.1, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(s.result, d);
    }

    #[test]
    fn schedule_input_errors() {
        let (cost, ms) = bilinear_2x2();
        assert!(epsilon_schedule_solve(&cost, &ms, &[], 1e-8, 10).is_err());
        assert!(epsilon_schedule_solve(&cost, &ms, &[0.1, 0.1], 1e-8, 10).is_err());
        assert!(epsilon_schedule_solve(&cost, &ms, &[0.1, -1.0], 1e-8, 10).is_err());
    }

    #[test]
    fn deterministic_potentials() {
        let (cost, ms) = bilinear_2x2();
        let a = solve_sinkhorn(&cost, &ms, 0.05, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let b = solve_sinkhorn(&cost, &ms, 0.05, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(a.state.potentials, b.state.potentials);
    }
}
