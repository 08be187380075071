//! Discrete probability measures on `R^d` and the geometric maps acting on them.
//!
//! A [`DiscreteMeasure`] is a finite weighted point cloud whose weights sum to one.
//! Couplings between several such measures live in [`coupling`], seeded grid
//! constructions in [`grid`].

pub mod coupling;
pub mod grid;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use coupling::CouplingTensor;
pub use grid::{Density, GridCounts, GridSpec};

/// A point in `R^d`.
pub type Point = Vec<f64>;

/// Absolute tolerance on the total mass of a measure or coupling.
pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("a measure needs at least one atom")]
    Empty,
    #[error("points must have dimension at least 1")]
    ZeroDimension,
    #[error("{points} points but {weights} weights")]
    LengthMismatch { points: usize, weights: usize },
    #[error("point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("coordinate of point {index} is not finite")]
    NonFinitePoint { index: usize },
    #[error("weight {index} is negative or not finite ({value})")]
    InvalidWeight { index: usize, value: f64 },
    #[error("weights sum to {0}, expected 1 within 1e-12")]
    NotNormalized(f64),
    #[error("eta must be positive and finite, got {0}")]
    InvalidEta(f64),
    #[error("electron counts must be at least 1")]
    InvalidGroupSize,
    #[error("axis {index} out of range for a coupling with {axes} axes")]
    AxisOutOfRange { index: usize, axes: usize },
    #[error("exact symmetrization supports at most {max} axes, got {found}")]
    TooManyAxes { max: usize, found: usize },
    #[error("entry {entry}: {reason}")]
    InvalidEntry { entry: usize, reason: String },
    #[error("coupling mass is {0}, expected 1 within 1e-12")]
    CouplingMass(f64),
    #[error("invalid grid: {0}")]
    Grid(String),
}

pub type Result<T> = std::result::Result<T, MeasureError>;

/// Hashable identity of a point: bit patterns with `-0.0` folded onto `0.0`.
pub(crate) fn point_key(p: &[f64]) -> Vec<u64> {
    p.iter().map(|x| (x + 0.0).to_bits()).collect()
}

/// The star map `(v1, v2, ..., vd) -> (-2 v1, v2, ..., vd)`.
///
/// Attractive along the molecular axis, repulsive in the transverse directions.
pub fn star(v: &[f64]) -> Point {
    let mut out = v.to_vec();
    if let Some(first) = out.first_mut() {
        *first *= -2.0;
    }
    out
}

/// Which moment [`DiscreteMeasure::moment`] should compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentKind {
    Mean,
    MeanFirst,
    SecondMoment,
    SecondMomentFirst,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Moment {
    Vector(Point),
    Scalar(f64),
}

/// Finitely supported probability measure.
///
/// Points are pairwise distinct (duplicates are merged on construction) and all
/// share the same dimension. Weights are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureJson", into = "MeasureJson")]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<Point>,
    weights: Vec<f64>,
}

/// Wire format: `{ "d": int, "points": [[..]], "weights": [..] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureJson {
    pub d: usize,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl TryFrom<MeasureJson> for DiscreteMeasure {
    type Error = MeasureError;

    fn try_from(json: MeasureJson) -> Result<Self> {
        let m = DiscreteMeasure::new(json.points, json.weights)?;
        if m.dim != json.d {
            return Err(MeasureError::DimensionMismatch {
                index: 0,
                expected: json.d,
                found: m.dim,
            });
        }
        Ok(m)
    }
}

impl From<DiscreteMeasure> for MeasureJson {
    fn from(m: DiscreteMeasure) -> Self {
        MeasureJson {
            d: m.dim,
            points: m.points,
            weights: m.weights,
        }
    }
}

impl DiscreteMeasure {
    /// Builds a measure whose weights already sum to one (within 1e-12).
    ///
    /// Within tolerance the weights are renormalized exactly; outside it the
    /// measure is rejected.
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        let (points, weights) = validate_and_merge(points, weights)?;
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(MeasureError::NotNormalized(total));
        }
        Ok(Self::from_parts(
            points,
            weights.into_iter().map(|w| w / total).collect(),
        ))
    }

    /// Builds a measure from arbitrary nonnegative weights with positive sum.
    pub fn from_unnormalized(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        let (points, weights) = validate_and_merge(points, weights)?;
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(MeasureError::NotNormalized(total));
        }
        Ok(Self::from_parts(
            points,
            weights.into_iter().map(|w| w / total).collect(),
        ))
    }

    /// Equal weights on the given points (after merging duplicates, a repeated
    /// point carries the combined weight).
    pub fn uniform(points: Vec<Point>) -> Result<Self> {
        let n = points.len();
        Self::from_unnormalized(points, vec![1.0; n])
    }

    pub fn dirac(point: Point) -> Result<Self> {
        Self::new(vec![point], vec![1.0])
    }

    fn from_parts(points: Vec<Point>, weights: Vec<f64>) -> Self {
        let dim = points[0].len();
        Self {
            dim,
            points,
            weights,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| (p.as_slice(), w))
    }

    /// Number of atoms carrying positive mass.
    pub fn support_size(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    pub fn is_dirac(&self) -> bool {
        self.support_size() == 1
    }

    pub fn index_of(&self, p: &[f64]) -> Option<usize> {
        let key = point_key(p);
        self.points.iter().position(|q| point_key(q) == key)
    }

    /// Pushes the measure forward through `x -> x + shift`.
    pub fn translate(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(MeasureError::DimensionMismatch {
                index: 0,
                expected: self.dim,
                found: shift.len(),
            });
        }
        let points = self
            .points
            .iter()
            .map(|p| p.iter().zip(shift).map(|(a, b)| a + b).collect())
            .collect();
        // Translation can collide points only through rounding, so merge again.
        let (points, weights) = validate_and_merge(points, self.weights.clone())?;
        Ok(Self::from_parts(points, weights))
    }

    pub fn mean(&self) -> Point {
        let mut m = vec![0.0; self.dim];
        for (p, w) in self.iter() {
            for (acc, x) in m.iter_mut().zip(p) {
                *acc += w * x;
            }
        }
        m
    }

    pub fn mean_first(&self) -> f64 {
        self.iter().map(|(p, w)| w * p[0]).sum()
    }

    /// `sum_a w(a) |a|^2`.
    pub fn second_moment(&self) -> f64 {
        self.iter()
            .map(|(p, w)| w * p.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    /// `sum_a w(a) (a^1)^2`.
    pub fn second_moment_first(&self) -> f64 {
        self.iter().map(|(p, w)| w * p[0] * p[0]).sum()
    }

    pub fn moment(&self, kind: MomentKind) -> Moment {
        match kind {
            MomentKind::Mean => Moment::Vector(self.mean()),
            MomentKind::MeanFirst => Moment::Scalar(self.mean_first()),
            MomentKind::SecondMoment => Moment::Scalar(self.second_moment()),
            MomentKind::SecondMomentFirst => Moment::Scalar(self.second_moment_first()),
        }
    }

    /// Largest pointwise weight difference when both measures are viewed on the
    /// union of their supports. Points are matched exactly.
    pub fn max_abs_diff(&self, other: &DiscreteMeasure) -> f64 {
        let mut by_key: HashMap<Vec<u64>, f64> = HashMap::new();
        for (p, w) in self.iter() {
            *by_key.entry(point_key(p)).or_default() += w;
        }
        for (p, w) in other.iter() {
            *by_key.entry(point_key(p)).or_default() -= w;
        }
        by_key.values().fold(0.0, |acc, d| acc.max(d.abs()))
    }
}

fn validate_and_merge(points: Vec<Point>, weights: Vec<f64>) -> Result<(Vec<Point>, Vec<f64>)> {
    if points.len() != weights.len() {
        return Err(MeasureError::LengthMismatch {
            points: points.len(),
            weights: weights.len(),
        });
    }
    if points.is_empty() {
        return Err(MeasureError::Empty);
    }
    let dim = points[0].len();
    if dim == 0 {
        return Err(MeasureError::ZeroDimension);
    }
    let mut index: HashMap<Vec<u64>, usize> = HashMap::with_capacity(points.len());
    let mut out_points: Vec<Point> = Vec::with_capacity(points.len());
    let mut out_weights: Vec<f64> = Vec::with_capacity(points.len());
    for (i, (p, w)) in points.into_iter().zip(weights).enumerate() {
        if p.len() != dim {
            return Err(MeasureError::DimensionMismatch {
                index: i,
                expected: dim,
                found: p.len(),
            });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(MeasureError::NonFinitePoint { index: i });
        }
        if !(w >= 0.0) || !w.is_finite() {
            return Err(MeasureError::InvalidWeight { index: i, value: w });
        }
        match index.entry(point_key(&p)) {
            std::collections::hash_map::Entry::Occupied(e) => out_weights[*e.get()] += w,
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(out_points.len());
                out_points.push(p.into_iter().map(|x| x + 0.0).collect());
                out_weights.push(w);
            }
        }
    }
    Ok((out_points, out_weights))
}

/// First unit vector scaled by `s` in dimension `d`.
pub fn axis_vector(d: usize, s: f64) -> Point {
    let mut v = vec![0.0; d];
    v[0] = s;
    v
}

/// Single-particle density of the two-molecule system at separation `1/eta`.
///
/// `rho_alpha` is translated by `+e1/(2 eta)` and `rho_beta` by `-e1/(2 eta)`;
/// the two are mixed with weights `Na/(Na+Nb)` and `Nb/(Na+Nb)`.
pub fn mixture_rho_eta(
    rho_alpha: &DiscreteMeasure,
    rho_beta: &DiscreteMeasure,
    n_alpha: usize,
    n_beta: usize,
    eta: f64,
) -> Result<DiscreteMeasure> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(MeasureError::InvalidEta(eta));
    }
    if n_alpha == 0 || n_beta == 0 {
        return Err(MeasureError::InvalidGroupSize);
    }
    if rho_alpha.dim() != rho_beta.dim() {
        return Err(MeasureError::DimensionMismatch {
            index: 0,
            expected: rho_alpha.dim(),
            found: rho_beta.dim(),
        });
    }
    let d = rho_alpha.dim();
    let (r_alpha, r_beta) = molecule_centers(d, eta);
    let a = rho_alpha.translate(&r_alpha)?;
    let b = rho_beta.translate(&r_beta)?;
    let total = (n_alpha + n_beta) as f64;
    let (fa, fb) = (n_alpha as f64 / total, n_beta as f64 / total);
    let points = a.points.iter().chain(&b.points).cloned().collect();
    let weights = a
        .weights
        .iter()
        .map(|w| w * fa)
        .chain(b.weights.iter().map(|w| w * fb))
        .collect();
    DiscreteMeasure::new(points, weights)
}

/// Centers `(r_alpha, r_beta) = (+e1/(2 eta), -e1/(2 eta))` used by [`mixture_rho_eta`].
pub fn molecule_centers(d: usize, eta: f64) -> (Point, Point) {
    let h = 0.5 / eta;
    (axis_vector(d, h), axis_vector(d, -h))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(points: &[f64], weights: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(points.iter().map(|&x| vec![x]).collect(), weights.to_vec()).unwrap()
    }

    #[test]
    fn star_examples() {
        assert_eq!(star(&[1.0, 1.0]), vec![-2.0, 1.0]);
        assert_eq!(star(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(star(&[-1.0, 2.0, 3.0]), vec![2.0, 2.0, 3.0]);
    }

    #[test]
    fn rejects_bad_weights() {
        let e = DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.6]);
        assert!(matches!(e, Err(MeasureError::NotNormalized(_))));
        let e = DiscreteMeasure::new(vec![vec![0.0]], vec![-1.0]);
        assert!(matches!(e, Err(MeasureError::InvalidWeight { .. })));
        let e = DiscreteMeasure::new(vec![vec![0.0], vec![0.0, 1.0]], vec![0.5, 0.5]);
        assert!(matches!(
            e,
            Err(MeasureError::DimensionMismatch { index: 1, .. })
        ));
        assert_eq!(
            DiscreteMeasure::new(vec![], vec![]),
            Err(MeasureError::Empty)
        );
    }

    #[test]
    fn renormalizes_within_tolerance() {
        let m = DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5 + 5e-13]).unwrap();
        assert_eq!(m.weights().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn merges_duplicates() {
        let m = DiscreteMeasure::new(
            vec![vec![0.0, 1.0], vec![-0.0, 1.0], vec![2.0, 0.0]],
            vec![0.25, 0.25, 0.5],
        )
        .unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn translate_examples() {
        let d = DiscreteMeasure::dirac(vec![0.0, 0.0, 0.0]).unwrap();
        let t = d.translate(&[0.5, 0.0, 0.0]).unwrap();
        assert_eq!(t.points(), &[vec![0.5, 0.0, 0.0]]);

        let m = m1(&[0.0, 1.0], &[0.5, 0.5]);
        let t = m.translate(&[-1.0]).unwrap();
        assert_eq!(t.points(), &[vec![-1.0], vec![0.0]]);
        assert_eq!(t.weights(), &[0.5, 0.5]);
        assert_eq!(t.translate(&[1.0]).unwrap(), m);

        assert!(m.translate(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn mixture_examples() {
        let d0 = DiscreteMeasure::dirac(vec![0.0, 0.0]).unwrap();
        let mix = mixture_rho_eta(&d0, &d0, 1, 1, 1.0).unwrap();
        assert_eq!(mix.points(), &[vec![0.5, 0.0], vec![-0.5, 0.0]]);
        assert_eq!(mix.weights(), &[0.5, 0.5]);

        let mix = mixture_rho_eta(&d0, &d0, 3, 1, 1.0).unwrap();
        assert_eq!(mix.weights(), &[0.75, 0.25]);

        // alpha atom at -0.5 and beta atom at +0.5 both land on 0 when eta = 1.
        let a = DiscreteMeasure::dirac(vec![-0.5]).unwrap();
        let b = DiscreteMeasure::dirac(vec![0.5]).unwrap();
        let mix = mixture_rho_eta(&a, &b, 1, 1, 1.0).unwrap();
        assert_eq!(mix.points(), &[vec![0.0]]);
        assert_eq!(mix.weights(), &[1.0]);

        assert_eq!(
            mixture_rho_eta(&d0, &d0, 1, 1, 0.0),
            Err(MeasureError::InvalidEta(0.0))
        );
        assert_eq!(
            mixture_rho_eta(&d0, &d0, 0, 1, 1.0),
            Err(MeasureError::InvalidGroupSize)
        );
    }

    #[test]
    fn moment_examples() {
        let m = m1(&[-1.0, 1.0], &[0.5, 0.5]);
        assert_eq!(m.mean(), vec![0.0]);
        assert_eq!(m.second_moment(), 1.0);

        let a = DiscreteMeasure::dirac(vec![1.0, -2.0]).unwrap();
        assert_eq!(a.moment(MomentKind::Mean), Moment::Vector(vec![1.0, -2.0]));
        assert_eq!(a.moment(MomentKind::SecondMoment), Moment::Scalar(5.0));
        assert_eq!(a.moment(MomentKind::SecondMomentFirst), Moment::Scalar(1.0));
        assert_eq!(a.moment(MomentKind::MeanFirst), Moment::Scalar(1.0));

        let u = DiscreteMeasure::uniform(vec![vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert!((u.mean_first() - 1.0).abs() < 1e-15);
        assert!((u.second_moment() - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_and_dimension_check() {
        let m = m1(&[0.0, 1.0], &[0.25, 0.75]);
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"d":1,"points":[[0.0],[1.0]],"weights":[0.25,0.75]}"#);
        let back: DiscreteMeasure = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let bad =
            serde_json::from_str::<DiscreteMeasure>(r#"{"d":2,"points":[[0.0]],"weights":[1.0]}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn max_abs_diff_handles_disjoint_supports() {
        let a = m1(&[0.0, 1.0], &[0.5, 0.5]);
        let b = m1(&[1.0, 2.0], &[0.25, 0.75]);
        assert!((a.max_abs_diff(&b) - 0.75).abs() < 1e-15);
        assert_eq!(a.max_abs_diff(&a), 0.0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn star_is_linear(
                u in prop::collection::vec(-10.0..10.0f64, 3),
                v in prop::collection::vec(-10.0..10.0f64, 3),
                a in -5.0..5.0f64,
                b in -5.0..5.0f64,
            ) {
                let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
                let lhs = star(&combo);
                let (su, sv) = (star(&u), star(&v));
                for k in 0..3 {
                    prop_assert!((lhs[k] - (a * su[k] + b * sv[k])).abs() < 1e-10);
                }
            }
        }
    }
}
