//! Cost functions, their tensorization over discrete supports, and the closed-form
//! constants of the small-`eta` expansion.
//!
//! Conventions: `x` denotes the `Na` positions of molecule alpha and `y` the `Nb`
//! positions of molecule beta, both in center-of-molecule coordinates. The
//! rescaled Coulomb cost uses
//!
//! ```text
//! V_eta(x, y) = sum_ij eta / sqrt(1 - 2 eta (x_i^1 - y_j^1) + eta^2 |x_i - y_j|^2)
//!             + V_ee(x) + V_ee(y)
//! ```
//!
//! which equals the plain Coulomb energy of the configuration where `x` is
//! translated by `-e1/(2 eta)` and `y` by `+e1/(2 eta)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{star, DiscreteMeasure};

/// Default cap on the number of entries of a dense cost tensor.
pub const MAX_TENSOR_ENTRIES: usize = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("invalid cost specification: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("expected {expected} marginals, got {found}")]
    AxisCount { expected: usize, found: usize },
    #[error(
        "eta = {eta} too large for support: radicand {radicand} at alpha axis {alpha_axis} atom {alpha_atom}, beta axis {beta_axis} atom {beta_atom}"
    )]
    EtaInadmissible {
        eta: f64,
        alpha_axis: usize,
        alpha_atom: usize,
        beta_axis: usize,
        beta_atom: usize,
        radicand: f64,
    },
    #[error("cost tensor would have {entries} entries, cap is {cap}")]
    TooLarge { entries: usize, cap: usize },
}

pub type Result<T> = std::result::Result<T, CostError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFamily {
    /// Plain Coulomb repulsion between all `Na + Nb` points.
    Coulomb,
    /// Rescaled two-molecule Coulomb cost at inverse separation `eta`.
    CoulombEta,
    /// `1/2 sum_ij (3 (x_i^1 - y_j^1)^2 - |x_i - y_j|^2)`.
    Harmonic,
    /// `sum_ij x_i . star(y_j)`.
    Bilinear,
}

/// Wire format: `{ "family": "...", "Na": int, "Nb": int, "eta": real?, "d": int }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub family: CostFamily,
    #[serde(rename = "Na")]
    pub n_alpha: usize,
    #[serde(rename = "Nb", default)]
    pub n_beta: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub d: usize,
}

impl CostSpec {
    pub fn new(family: CostFamily, n_alpha: usize, n_beta: usize, d: usize) -> Self {
        Self {
            family,
            n_alpha,
            n_beta,
            eta: None,
            d,
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = Some(eta);
        self
    }

    /// Single group of `n` mutually repelling electrons.
    pub fn coulomb(n: usize, d: usize) -> Self {
        Self::new(CostFamily::Coulomb, n, 0, d)
    }

    pub fn num_axes(&self) -> usize {
        self.n_alpha + self.n_beta
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(CostError::InvalidSpec("d must be at least 1".into()));
        }
        match self.family {
            CostFamily::Coulomb => {
                if self.num_axes() < 2 {
                    return Err(CostError::InvalidSpec(
                        "coulomb needs at least two electrons".into(),
                    ));
                }
            }
            _ => {
                if self.n_alpha == 0 || self.n_beta == 0 {
                    return Err(CostError::InvalidSpec(
                        "Na and Nb must be at least 1".into(),
                    ));
                }
            }
        }
        if self.family == CostFamily::CoulombEta {
            match self.eta {
                Some(eta) if eta > 0.0 && eta.is_finite() => {}
                Some(eta) => {
                    return Err(CostError::InvalidSpec(format!(
                        "eta must be positive, got {eta}"
                    )))
                }
                None => return Err(CostError::InvalidSpec("coulomb_eta requires eta".into())),
            }
        }
        Ok(())
    }

    /// Pointwise cost of one configuration (`Na + Nb` points). Assumes the spec
    /// is valid and, for `coulomb_eta`, that `eta` is admissible for the points.
    fn eval_unchecked(&self, z: &[&[f64]]) -> f64 {
        let (x, y) = z.split_at(self.n_alpha);
        match self.family {
            CostFamily::Coulomb => coulomb_total(z),
            CostFamily::CoulombEta => {
                let eta = self.eta.unwrap_or(f64::NAN);
                inter_eta(x, y, eta) + coulomb_total(x) + coulomb_total(y)
            }
            CostFamily::Harmonic => harmonic_unchecked(x, y),
            CostFamily::Bilinear => bilinear_unchecked(x, y),
        }
    }

    /// Pointwise cost of one configuration with full validation.
    pub fn evaluate<P: AsRef<[f64]>>(&self, z: &[P]) -> Result<f64> {
        self.validate()?;
        if z.len() != self.num_axes() {
            return Err(CostError::AxisCount {
                expected: self.num_axes(),
                found: z.len(),
            });
        }
        let refs: Vec<&[f64]> = z.iter().map(|p| p.as_ref()).collect();
        check_dims(&refs, self.d)?;
        if self.family == CostFamily::CoulombEta {
            let (x, y) = refs.split_at(self.n_alpha);
            return coulomb_eta(x, y, self.eta.unwrap_or(f64::NAN));
        }
        Ok(self.eval_unchecked(&refs))
    }
}

fn check_dims<P: AsRef<[f64]>>(points: &[P], d: usize) -> Result<()> {
    match points.iter().find(|p| p.as_ref().len() != d) {
        Some(p) => Err(CostError::DimensionMismatch {
            expected: d,
            found: p.as_ref().len(),
        }),
        None => Ok(()),
    }
}

fn common_dim<P: AsRef<[f64]>>(x: &[P], y: &[P]) -> Result<()> {
    if let Some(first) = x.iter().chain(y).next() {
        check_dims(x, first.as_ref().len())?;
        check_dims(y, first.as_ref().len())?;
    }
    Ok(())
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Pairwise Coulomb energy `sum_{i<j} 1/|z_i - z_j|`; `+inf` if two points coincide.
pub fn coulomb_total<P: AsRef<[f64]>>(z: &[P]) -> f64 {
    let mut total = 0.0;
    for i in 0..z.len() {
        for j in (i + 1)..z.len() {
            let r2 = dist2(z[i].as_ref(), z[j].as_ref());
            if r2 == 0.0 {
                return f64::INFINITY;
            }
            total += 1.0 / r2.sqrt();
        }
    }
    total
}

/// `1 - 2 eta (a^1 - b^1) + eta^2 |a - b|^2`, i.e. `eta^2 |a - b - e1/eta|^2`.
pub fn radicand(a: &[f64], b: &[f64], eta: f64) -> f64 {
    1.0 - 2.0 * eta * (a[0] - b[0]) + eta * eta * dist2(a, b)
}

fn inter_eta<P: AsRef<[f64]>>(x: &[P], y: &[P], eta: f64) -> f64 {
    let mut total = 0.0;
    for a in x {
        for b in y {
            total += eta / radicand(a.as_ref(), b.as_ref(), eta).sqrt();
        }
    }
    total
}

/// Rescaled two-molecule Coulomb cost, including the intra-molecular terms.
///
/// Coincident points inside one molecule give `+inf`; a nonpositive radicand
/// between the molecules is a domain error.
pub fn coulomb_eta<P: AsRef<[f64]>>(x: &[P], y: &[P], eta: f64) -> Result<f64> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(CostError::InvalidSpec(format!(
            "eta must be positive, got {eta}"
        )));
    }
    common_dim(x, y)?;
    for (i, a) in x.iter().enumerate() {
        for (j, b) in y.iter().enumerate() {
            let r = radicand(a.as_ref(), b.as_ref(), eta);
            if !(r > 0.0) {
                return Err(CostError::EtaInadmissible {
                    eta,
                    alpha_axis: i,
                    alpha_atom: 0,
                    beta_axis: j,
                    beta_atom: 0,
                    radicand: r,
                });
            }
        }
    }
    Ok(inter_eta(x, y, eta) + coulomb_total(x) + coulomb_total(y))
}

fn bilinear_unchecked<P: AsRef<[f64]>>(x: &[P], y: &[P]) -> f64 {
    let mut total = 0.0;
    for a in x {
        for b in y {
            let b = b.as_ref();
            let a = a.as_ref();
            total += -2.0 * a[0] * b[0] + dot(&a[1..], &b[1..]);
        }
    }
    total
}

/// `sum_i sum_j x_i . star(y_j)`.
pub fn bilinear_cost<P: AsRef<[f64]>>(x: &[P], y: &[P]) -> Result<f64> {
    common_dim(x, y)?;
    Ok(bilinear_unchecked(x, y))
}

fn harmonic_unchecked<P: AsRef<[f64]>>(x: &[P], y: &[P]) -> f64 {
    let mut total = 0.0;
    for a in x {
        for b in y {
            let (a, b) = (a.as_ref(), b.as_ref());
            let s = a[0] - b[0];
            total += 3.0 * s * s - dist2(a, b);
        }
    }
    0.5 * total
}

/// `1/2 sum_i sum_j (3 (x_i^1 - y_j^1)^2 - |x_i - y_j|^2)`.
pub fn harmonic_cost<P: AsRef<[f64]>>(x: &[P], y: &[P]) -> Result<f64> {
    common_dim(x, y)?;
    Ok(harmonic_unchecked(x, y))
}

fn axial_quadratic(z: &[f64]) -> f64 {
    3.0 * z[0] * z[0] - dot(z, z)
}

/// Pointwise `harmonic_cost - bilinear_cost`; a sum of one-body terms.
pub fn harmonic_bilinear_gap<P: AsRef<[f64]>>(x: &[P], y: &[P]) -> Result<f64> {
    common_dim(x, y)?;
    let gx: f64 = x.iter().map(|a| axial_quadratic(a.as_ref())).sum();
    let gy: f64 = y.iter().map(|b| axial_quadratic(b.as_ref())).sum();
    Ok(0.5 * (y.len() as f64 * gx + x.len() as f64 * gy))
}

/// Constant `C` with `harmonic = bilinear + C` after integration against any plan
/// whose alpha marginals are `rho_alpha` and beta marginals are `rho_beta`:
/// `C = 1/2 Na Nb (3 M2^1(rho_a) + 3 M2^1(rho_b) - M2(rho_a) - M2(rho_b))`.
pub fn quad_bilinear_constant(
    rho_alpha: &DiscreteMeasure,
    rho_beta: &DiscreteMeasure,
    n_alpha: usize,
    n_beta: usize,
) -> f64 {
    let ga = 3.0 * rho_alpha.second_moment_first() - rho_alpha.second_moment();
    let gb = 3.0 * rho_beta.second_moment_first() - rho_beta.second_moment();
    0.5 * (n_alpha * n_beta) as f64 * (ga + gb)
}

/// Same constant for per-axis marginals: the first `n_alpha` measures are the
/// alpha axes, the rest beta axes.
pub fn quad_bilinear_constant_axes(marginals: &[DiscreteMeasure], n_alpha: usize) -> f64 {
    let n_beta = marginals.len().saturating_sub(n_alpha);
    let g = |m: &DiscreteMeasure| 3.0 * m.second_moment_first() - m.second_moment();
    let gx: f64 = marginals[..n_alpha].iter().map(g).sum();
    let gy: f64 = marginals[n_alpha..].iter().map(g).sum();
    0.5 * (n_beta as f64 * gx + n_alpha as f64 * gy)
}

fn check_eta_pairs(
    rho_alpha: &DiscreteMeasure,
    rho_beta: &DiscreteMeasure,
    eta: f64,
) -> Result<()> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(CostError::InvalidSpec(format!(
            "eta must be positive, got {eta}"
        )));
    }
    if rho_alpha.dim() != rho_beta.dim() {
        return Err(CostError::DimensionMismatch {
            expected: rho_alpha.dim(),
            found: rho_beta.dim(),
        });
    }
    for (i, (a, _)) in rho_alpha.iter().enumerate() {
        for (j, (b, _)) in rho_beta.iter().enumerate() {
            let r = radicand(a, b, eta);
            if !(r > 0.0) {
                return Err(CostError::EtaInadmissible {
                    eta,
                    alpha_axis: 0,
                    alpha_atom: i,
                    beta_axis: 0,
                    beta_atom: j,
                    radicand: r,
                });
            }
        }
    }
    Ok(())
}

/// Interaction term of the expansion through second order:
/// `Na Nb (eta + (m1(rho_a) - m1(rho_b)) eta^2)`.
pub fn u_int(
    rho_alpha: &DiscreteMeasure,
    rho_beta: &DiscreteMeasure,
    n_alpha: usize,
    n_beta: usize,
    eta: f64,
) -> f64 {
    let dm = rho_alpha.mean_first() - rho_beta.mean_first();
    (n_alpha * n_beta) as f64 * (eta + dm * eta * eta)
}

/// Coefficient of `eta^3`: `Na Nb sum_ab w(a) w(b) 1/2 (3 (a^1 - b^1)^2 - |a - b|^2)`.
pub fn eta3_coefficient(
    rho_alpha: &DiscreteMeasure,
    rho_beta: &DiscreteMeasure,
    n_alpha: usize,
    n_beta: usize,
) -> f64 {
    let mut total = 0.0;
    for (a, wa) in rho_alpha.iter() {
        for (b, wb) in rho_beta.iter() {
            let s = a[0] - b[0];
            total += wa * wb * 0.5 * (3.0 * s * s - dist2(a, b));
        }
    }
    (n_alpha * n_beta) as f64 * total
}

/// Inter-molecular energy under any product plan, summed exactly over `rho_a (x) rho_b`.
pub fn interaction_exact(
    rho_alpha: &DiscreteMeasure,
    rho_beta: &DiscreteMeasure,
    n_alpha: usize,
    n_beta: usize,
    eta: f64,
) -> Result<f64> {
    check_eta_pairs(rho_alpha, rho_beta, eta)?;
    let mut total = 0.0;
    for (a, wa) in rho_alpha.iter() {
        for (b, wb) in rho_beta.iter() {
            total += wa * wb * eta / radicand(a, b, eta).sqrt();
        }
    }
    Ok((n_alpha * n_beta) as f64 * total)
}

/// Truncation order of the small-`eta` expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaylorOrder {
    /// Through `eta^2`: `u_int` alone.
    Second,
    /// Through `eta^3`: `u_int` plus the harmonic term.
    Third,
}

impl TaylorOrder {
    pub fn from_int(order: u32) -> Option<Self> {
        match order {
            2 => Some(TaylorOrder::Second),
            3 => Some(TaylorOrder::Third),
            _ => None,
        }
    }

    fn first_dropped(self) -> u32 {
        match self {
            TaylorOrder::Second => 2,
            TaylorOrder::Third => 3,
        }
    }
}

pub fn taylor_value(
    rho_alpha: &DiscreteMeasure,
    rho_beta: &DiscreteMeasure,
    n_alpha: usize,
    n_beta: usize,
    eta: f64,
    order: TaylorOrder,
) -> f64 {
    let base = u_int(rho_alpha, rho_beta, n_alpha, n_beta, eta);
    match order {
        TaylorOrder::Second => base,
        TaylorOrder::Third => {
            base + eta.powi(3) * eta3_coefficient(rho_alpha, rho_beta, n_alpha, n_beta)
        }
    }
}

/// `eta / sqrt(1 - 2 eta s + eta^2 r^2)` minus its Taylor polynomial, for one pair.
///
/// With `t = eta r` and `mu = s / r` the pair energy is the Legendre generating
/// function `eta sum_n P_n(mu) t^n`, so the remainder is the tail of that
/// series. Summing the tail avoids the cancellation of subtracting two nearly
/// equal numbers; for `t > 1/2` the direct difference is already well
/// conditioned.
fn pair_remainder(s: f64, r2: f64, eta: f64, order: TaylorOrder) -> f64 {
    if r2 == 0.0 {
        return 0.0;
    }
    let r = r2.sqrt();
    let t = eta * r;
    let k = order.first_dropped();
    if t > 0.5 {
        let exact = eta / (1.0 - 2.0 * eta * s + eta * eta * r2).sqrt();
        let mut taylor = eta + s * eta * eta;
        if k == 3 {
            taylor += 0.5 * (3.0 * s * s - r2) * eta.powi(3);
        }
        return exact - taylor;
    }
    let mu = (s / r).clamp(-1.0, 1.0);
    let (mut p_prev, mut p) = (1.0, mu);
    let mut tn = t;
    let mut sum = 0.0;
    let mut n = 1u32;
    loop {
        if n >= k {
            sum += p * tn;
            let bound = tn * t / (1.0 - t);
            if bound <= f64::EPSILON * 1e-3 * sum.abs() || bound < 1e-300 || n > 4000 {
                break;
            }
        }
        let next = ((2 * n + 1) as f64 * mu * p - n as f64 * p_prev) / (n + 1) as f64;
        p_prev = p;
        p = next;
        tn *= t;
        n += 1;
    }
    eta * sum
}

/// `interaction_exact - taylor_value(order)`, evaluated without cancellation.
pub fn interaction_remainder(
    rho_alpha: &DiscreteMeasure,
    rho_beta: &DiscreteMeasure,
    n_alpha: usize,
    n_beta: usize,
    eta: f64,
    order: TaylorOrder,
) -> Result<f64> {
    check_eta_pairs(rho_alpha, rho_beta, eta)?;
    let mut total = 0.0;
    for (a, wa) in rho_alpha.iter() {
        for (b, wb) in rho_beta.iter() {
            total += wa * wb * pair_remainder(a[0] - b[0], dist2(a, b), eta, order);
        }
    }
    Ok((n_alpha * n_beta) as f64 * total)
}

/// Dense cost array over the product of the marginal supports, last axis fastest.
/// `+inf` marks excluded (singular) configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTensor {
    shape: Vec<usize>,
    strides: Vec<usize>,
    data: Vec<f64>,
}

impl CostTensor {
    /// Panics if `data.len()` differs from the product of `shape`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let len: usize = shape.iter().product();
        assert_eq!(len, data.len(), "cost tensor shape/data mismatch");
        assert!(data.iter().all(|c| !c.is_nan()), "cost tensor contains NaN");
        let strides = strides_for(&shape);
        Self {
            shape,
            strides,
            data,
        }
    }

    pub fn from_fn<F: Fn(&[usize]) -> f64>(shape: Vec<usize>, f: F) -> Self {
        let len: usize = shape.iter().product();
        let strides = strides_for(&shape);
        let mut tuple = vec![0; shape.len()];
        let data = (0..len)
            .map(|flat| {
                unravel_into(&strides, flat, &mut tuple);
                f(&tuple)
            })
            .collect();
        Self::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn num_axes(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_index(&self, tuple: &[usize]) -> usize {
        tuple.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn unravel(&self, flat: usize, tuple: &mut [usize]) {
        unravel_into(&self.strides, flat, tuple)
    }

    pub fn tuple(&self, flat: usize) -> Vec<usize> {
        let mut t = vec![0; self.shape.len()];
        self.unravel(flat, &mut t);
        t
    }

    pub fn get(&self, tuple: &[usize]) -> f64 {
        self.data[self.flat_index(tuple)]
    }

    pub fn num_finite(&self) -> usize {
        self.data.iter().filter(|c| c.is_finite()).count()
    }

    /// `(min, max)` over finite entries, `None` if every entry is masked.
    pub fn finite_range(&self) -> Option<(f64, f64)> {
        self.data
            .iter()
            .filter(|c| c.is_finite())
            .fold(None, |acc, &c| match acc {
                None => Some((c, c)),
                Some((lo, hi)) => Some((lo.min(c), hi.max(c))),
            })
    }

    /// Same shape, entries mapped by `f(flat, value)`; masked entries stay masked.
    pub fn map_finite<F: Fn(usize, f64) -> f64>(&self, f: F) -> CostTensor {
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &c)| if c.is_finite() { f(i, c) } else { c })
            .collect();
        Self::new(self.shape.clone(), data)
    }
}

fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

fn unravel_into(strides: &[usize], mut flat: usize, tuple: &mut [usize]) {
    for (t, s) in tuple.iter_mut().zip(strides) {
        *t = flat / s;
        flat %= s;
    }
}

pub fn cost_tensor(spec: &CostSpec, marginals: &[DiscreteMeasure]) -> Result<CostTensor> {
    cost_tensor_with_cap(spec, marginals, MAX_TENSOR_ENTRIES)
}

/// Evaluates the cost on every tuple of the product support.
///
/// For `coulomb_eta`, admissibility of `eta` is checked for every alpha/beta
/// atom pair before anything is built.
pub fn cost_tensor_with_cap(
    spec: &CostSpec,
    marginals: &[DiscreteMeasure],
    cap: usize,
) -> Result<CostTensor> {
    spec.validate()?;
    if marginals.len() != spec.num_axes() {
        return Err(CostError::AxisCount {
            expected: spec.num_axes(),
            found: marginals.len(),
        });
    }
    if let Some(m) = marginals.iter().find(|m| m.dim() != spec.d) {
        return Err(CostError::DimensionMismatch {
            expected: spec.d,
            found: m.dim(),
        });
    }
    let shape: Vec<usize> = marginals.iter().map(|m| m.len()).collect();
    let entries = shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .filter(|&e| e <= cap)
        .ok_or(CostError::TooLarge {
            entries: shape.iter().fold(1usize, |a, &n| a.saturating_mul(n)),
            cap,
        })?;

    if spec.family == CostFamily::CoulombEta {
        let eta = spec.eta.unwrap_or(f64::NAN);
        for ia in 0..spec.n_alpha {
            for ib in spec.n_alpha..spec.num_axes() {
                for (i, (a, _)) in marginals[ia].iter().enumerate() {
                    for (j, (b, _)) in marginals[ib].iter().enumerate() {
                        let r = radicand(a, b, eta);
                        if !(r > 0.0) {
                            return Err(CostError::EtaInadmissible {
                                eta,
                                alpha_axis: ia,
                                alpha_atom: i,
                                beta_axis: ib,
                                beta_atom: j,
                                radicand: r,
                            });
                        }
                    }
                }
            }
        }
    }

    let strides = strides_for(&shape);
    let mut data = vec![0.0; entries];
    const BLOCK: usize = 4096;
    data.par_chunks_mut(BLOCK)
        .enumerate()
        .for_each(|(b, chunk)| {
            let mut tuple = vec![0; shape.len()];
            let mut pts: Vec<&[f64]> = Vec::with_capacity(shape.len());
            for (off, slot) in chunk.iter_mut().enumerate() {
                unravel_into(&strides, b * BLOCK + off, &mut tuple);
                pts.clear();
                pts.extend(
                    tuple
                        .iter()
                        .enumerate()
                        .map(|(k, &i)| marginals[k].point(i)),
                );
                *slot = spec.eval_unchecked(&pts);
            }
        });
    Ok(CostTensor::new(shape, data))
}

/// Objective of the bilinear cost under any product of the given marginals:
/// `(sum_{i<Na} mean(rho_i)) . star(sum_{j>=Na} mean(rho_j))`.
pub fn product_bilinear_value(marginals: &[DiscreteMeasure], n_alpha: usize) -> Result<f64> {
    if n_alpha == 0 || n_alpha >= marginals.len() {
        return Err(CostError::InvalidSpec(format!(
            "Na = {n_alpha} does not split {} marginals",
            marginals.len()
        )));
    }
    let d = marginals[0].dim();
    if let Some(m) = marginals.iter().find(|m| m.dim() != d) {
        return Err(CostError::DimensionMismatch {
            expected: d,
            found: m.dim(),
        });
    }
    let sum_means = |ms: &[DiscreteMeasure]| {
        ms.iter().fold(vec![0.0; d], |mut acc, m| {
            for (a, x) in acc.iter_mut().zip(m.mean()) {
                *a += x;
            }
            acc
        })
    };
    let xs = sum_means(&marginals[..n_alpha]);
    let ys = sum_means(&marginals[n_alpha..]);
    Ok(dot(&xs, &star(&ys)))
}
