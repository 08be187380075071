//! Joint probability measures over the product of finitely many discrete supports.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;

use super::{point_key, DiscreteMeasure, MeasureError, Point, Result, NORMALIZATION_TOL};

/// Largest number of axes accepted by [`CouplingTensor::symmetrize`].
pub const MAX_SYMMETRIZE_AXES: usize = 6;

/// Sparse coupling: a list of `(index tuple, mass)` pairs over `N` axes.
///
/// Each axis carries a *declared* marginal. The tensor itself only guarantees
/// nonnegative entries and unit total mass; use [`CouplingTensor::max_marginal_error`]
/// to check whether the declared marginals are actually attained.
///
/// Entries are kept sorted by index tuple with duplicates merged and zero
/// masses dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTensor {
    axes: Vec<DiscreteMeasure>,
    entries: Vec<(Vec<usize>, f64)>,
}

impl CouplingTensor {
    pub fn new(axes: Vec<DiscreteMeasure>, entries: Vec<(Vec<usize>, f64)>) -> Result<Self> {
        let n = axes.len();
        if n == 0 {
            return Err(MeasureError::Empty);
        }
        let mut merged: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (e, (tuple, mass)) in entries.into_iter().enumerate() {
            if tuple.len() != n {
                return Err(MeasureError::InvalidEntry {
                    entry: e,
                    reason: format!("tuple has {} indices, expected {n}", tuple.len()),
                });
            }
            if let Some(k) = (0..n).find(|&k| tuple[k] >= axes[k].len()) {
                return Err(MeasureError::InvalidEntry {
                    entry: e,
                    reason: format!("index {} out of range on axis {k}", tuple[k]),
                });
            }
            if !(mass >= 0.0) || !mass.is_finite() {
                return Err(MeasureError::InvalidEntry {
                    entry: e,
                    reason: format!("mass {mass} is negative or not finite"),
                });
            }
            if mass > 0.0 {
                *merged.entry(tuple).or_default() += mass;
            }
        }
        let total: f64 = merged.values().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(MeasureError::CouplingMass(total));
        }
        Ok(Self {
            axes,
            entries: merged.into_iter().collect(),
        })
    }

    /// Builds a coupling from explicit point tuples; declared marginals are the
    /// marginals of the resulting tensor.
    pub fn from_points(atoms: Vec<(Vec<Point>, f64)>) -> Result<Self> {
        let n = atoms
            .first()
            .map(|(t, _)| t.len())
            .ok_or(MeasureError::Empty)?;
        let mut supports: Vec<Vec<Point>> = vec![Vec::new(); n];
        let mut keys: Vec<HashMap<Vec<u64>, usize>> = vec![HashMap::new(); n];
        let mut entries = Vec::with_capacity(atoms.len());
        for (e, (tuple, mass)) in atoms.into_iter().enumerate() {
            if tuple.len() != n {
                return Err(MeasureError::InvalidEntry {
                    entry: e,
                    reason: format!("tuple has {} points, expected {n}", tuple.len()),
                });
            }
            let idx = tuple
                .into_iter()
                .enumerate()
                .map(|(k, p)| {
                    *keys[k].entry(point_key(&p)).or_insert_with(|| {
                        supports[k].push(p);
                        supports[k].len() - 1
                    })
                })
                .collect();
            entries.push((idx, mass));
        }
        let placeholder = supports
            .into_iter()
            .map(|pts| {
                let len = pts.len();
                DiscreteMeasure::from_unnormalized(pts, vec![1.0; len])
            })
            .collect::<Result<Vec<_>>>()?;
        let raw = Self::new(placeholder, entries)?;
        raw.with_attained_marginals()
    }

    /// The independent coupling `rho_1 (x) ... (x) rho_N`.
    pub fn independent(marginals: &[DiscreteMeasure]) -> Result<Self> {
        let first = marginals.first().ok_or(MeasureError::Empty)?;
        let mut acc = Self::new(
            vec![first.clone()],
            first
                .iter()
                .enumerate()
                .map(|(i, (_, w))| (vec![i], w))
                .collect(),
        )?;
        for m in &marginals[1..] {
            let next = Self::new(
                vec![m.clone()],
                m.iter()
                    .enumerate()
                    .map(|(i, (_, w))| (vec![i], w))
                    .collect(),
            )?;
            acc = acc.product(&next);
        }
        Ok(acc)
    }

    pub fn num_axes(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[DiscreteMeasure] {
        &self.axes
    }

    pub fn entries(&self) -> &[(Vec<usize>, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.entries.iter().map(|(_, m)| m).sum()
    }

    /// Support tuples carrying mass strictly above `tol`.
    pub fn support(&self, tol: f64) -> Vec<Vec<usize>> {
        self.entries
            .iter()
            .filter(|(_, m)| *m > tol)
            .map(|(t, _)| t.clone())
            .collect()
    }

    /// Points of the tuple `t`, one per axis.
    pub fn tuple_points<'a>(&'a self, t: &'a [usize]) -> impl Iterator<Item = &'a [f64]> + 'a {
        t.iter()
            .enumerate()
            .map(move |(k, &i)| self.axes[k].point(i))
    }

    /// `sum_t mass(t) f(points of t)`.
    pub fn integrate<F>(&self, mut f: F) -> f64
    where
        F: FnMut(&[&[f64]]) -> f64,
    {
        let mut buf: Vec<&[f64]> = Vec::with_capacity(self.axes.len());
        let mut total = 0.0;
        for (t, m) in &self.entries {
            buf.clear();
            buf.extend(self.tuple_points(t));
            total += m * f(&buf);
        }
        total
    }

    /// Pushforward of the coupling through the projection onto axis `i`,
    /// expressed on that axis' support.
    pub fn marginal(&self, i: usize) -> Result<DiscreteMeasure> {
        let axis = self.axes.get(i).ok_or(MeasureError::AxisOutOfRange {
            index: i,
            axes: self.axes.len(),
        })?;
        let mut w = vec![0.0; axis.len()];
        for (t, m) in &self.entries {
            w[t[i]] += m;
        }
        DiscreteMeasure::new(axis.points().to_vec(), w)
    }

    /// Largest absolute deviation between attained and declared marginals.
    pub fn max_marginal_error(&self) -> f64 {
        (0..self.axes.len())
            .map(|k| {
                let mut w = vec![0.0; self.axes[k].len()];
                for (t, m) in &self.entries {
                    w[t[k]] += m;
                }
                w.iter()
                    .zip(self.axes[k].weights())
                    .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
            })
            .fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max_marginal_error() <= tol
    }

    fn with_attained_marginals(self) -> Result<Self> {
        let axes = (0..self.axes.len())
            .map(|k| self.marginal(k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            axes,
            entries: self.entries,
        })
    }

    /// Tensor product: axes concatenate, masses multiply.
    pub fn product(&self, other: &CouplingTensor) -> CouplingTensor {
        let mut entries = Vec::with_capacity(self.entries.len() * other.entries.len());
        for (ta, ma) in &self.entries {
            for (tb, mb) in &other.entries {
                let mut t = ta.clone();
                t.extend_from_slice(tb);
                entries.push((t, ma * mb));
            }
        }
        let axes = self.axes.iter().chain(&other.axes).cloned().collect();
        // Lexicographic order is preserved by the nested loops.
        CouplingTensor { axes, entries }
    }

    /// Translates every axis by the same `shift`.
    pub fn translate(&self, shift: &[f64]) -> Result<CouplingTensor> {
        let shifts = vec![shift.to_vec(); self.axes.len()];
        self.translate_axes(&shifts)
    }

    /// Translates axis `k` by `shifts[k]`.
    pub fn translate_axes(&self, shifts: &[Point]) -> Result<CouplingTensor> {
        if shifts.len() != self.axes.len() {
            return Err(MeasureError::AxisOutOfRange {
                index: shifts.len(),
                axes: self.axes.len(),
            });
        }
        let mut remaps = Vec::with_capacity(self.axes.len());
        let mut axes = Vec::with_capacity(self.axes.len());
        for (axis, shift) in self.axes.iter().zip(shifts) {
            let moved = axis.translate(shift)?;
            let remap: Vec<usize> = axis
                .points()
                .iter()
                .map(|p| {
                    let q: Vec<f64> = p.iter().zip(shift).map(|(a, b)| a + b).collect();
                    moved.index_of(&q).expect("translated point present")
                })
                .collect();
            remaps.push(remap);
            axes.push(moved);
        }
        let entries = self
            .entries
            .iter()
            .map(|(t, m)| {
                (
                    t.iter().enumerate().map(|(k, &i)| remaps[k][i]).collect(),
                    *m,
                )
            })
            .collect();
        Self::new(axes, entries)
    }

    /// Average of the coupling over all `N!` permutations of its coordinates.
    ///
    /// All axes are re-expressed on the union of their supports; the result is
    /// permutation invariant, so its declared marginals all coincide.
    pub fn symmetrize(&self) -> Result<CouplingTensor> {
        let n = self.axes.len();
        if n > MAX_SYMMETRIZE_AXES {
            return Err(MeasureError::TooManyAxes {
                max: MAX_SYMMETRIZE_AXES,
                found: n,
            });
        }
        let d = self.axes[0].dim();
        if let Some(k) = self.axes.iter().position(|a| a.dim() != d) {
            return Err(MeasureError::DimensionMismatch {
                index: k,
                expected: d,
                found: self.axes[k].dim(),
            });
        }

        let mut union: Vec<Point> = Vec::new();
        let mut keys: HashMap<Vec<u64>, usize> = HashMap::new();
        let remaps: Vec<Vec<usize>> = self
            .axes
            .iter()
            .map(|axis| {
                axis.points()
                    .iter()
                    .map(|p| {
                        *keys.entry(point_key(p)).or_insert_with(|| {
                            union.push(p.clone());
                            union.len() - 1
                        })
                    })
                    .collect()
            })
            .collect();

        let perms = permutations(n);
        let scale = 1.0 / perms.len() as f64;
        let mut acc: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (t, m) in &self.entries {
            let global: Vec<usize> = t.iter().enumerate().map(|(k, &i)| remaps[k][i]).collect();
            for sigma in &perms {
                let permuted: Vec<usize> = sigma.iter().map(|&s| global[s]).collect();
                *acc.entry(permuted).or_default() += m * scale;
            }
        }

        let mut w = vec![0.0; union.len()];
        for (t, m) in &acc {
            w[t[0]] += m;
        }
        let common = DiscreteMeasure::new(union, w)?;
        Self::new(vec![common; n], acc.into_iter().collect())
    }

    /// A random coupling with the given marginals.
    ///
    /// Mixes `components` north-west-corner couplings built on independently
    /// shuffled atom orders, with random convex weights.
    pub fn random_plan<R: Rng + ?Sized>(
        marginals: &[DiscreteMeasure],
        components: usize,
        rng: &mut R,
    ) -> Result<CouplingTensor> {
        if marginals.is_empty() {
            return Err(MeasureError::Empty);
        }
        let components = components.max(1);
        let lambdas: Vec<f64> = (0..components).map(|_| rng.gen_range(0.05..1.0)).collect();
        let lsum: f64 = lambdas.iter().sum();
        let mut entries = Vec::new();
        for lambda in lambdas {
            let orders: Vec<Vec<usize>> = marginals
                .iter()
                .map(|m| {
                    let mut o: Vec<usize> = (0..m.len()).filter(|&i| m.weight(i) > 0.0).collect();
                    o.shuffle(rng);
                    o
                })
                .collect();
            for (t, m) in north_west_corner(marginals, &orders) {
                entries.push((t, m * lambda / lsum));
            }
        }
        let total: f64 = entries.iter().map(|(_, m)| m).sum();
        for e in &mut entries {
            e.1 /= total;
        }
        Self::new(marginals.to_vec(), entries)
    }
}

/// Multi-marginal north-west-corner rule along the given atom orders.
pub fn north_west_corner(
    marginals: &[DiscreteMeasure],
    orders: &[Vec<usize>],
) -> Vec<(Vec<usize>, f64)> {
    let n = marginals.len();
    let mut remaining: Vec<Vec<f64>> = marginals.iter().map(|m| m.weights().to_vec()).collect();
    let mut pos = vec![0usize; n];
    let mut out = Vec::new();
    while (0..n).all(|k| pos[k] < orders[k].len()) {
        let tuple: Vec<usize> = (0..n).map(|k| orders[k][pos[k]]).collect();
        let step = (0..n)
            .map(|k| remaining[k][tuple[k]])
            .fold(f64::INFINITY, f64::min);
        if step > 0.0 {
            out.push((tuple.clone(), step));
        }
        for k in 0..n {
            let r = &mut remaining[k][tuple[k]];
            *r -= step;
            if *r <= 1e-15 {
                *r = 0.0;
                pos[k] += 1;
            }
        }
    }
    out
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    loop {
        out.push(current.clone());
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| current[i - 1] < current[i]) else {
            break;
        };
        let j = (i..n).rev().find(|&j| current[j] > current[i - 1]).unwrap();
        current.swap(i - 1, j);
        current[i..].reverse();
    }
    out
}
