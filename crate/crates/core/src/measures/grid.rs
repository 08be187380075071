//! Seeded jittered-grid measures.
//!
//! JSON form: `{ "box": [[lo, hi], ..], "n": int | [int, ..], "density": "uniform" |
//! "gaussian(sigma)" | "atoms", "jitter": real }`.
//!
//! The box is split into `n` cells per axis (or `n[k]` cells along axis `k`).
//! Each atom sits at its cell center displaced by a uniform offset of at most
//! `jitter * width / 2` per coordinate, so `jitter = 1` spreads atoms over the
//! whole cell.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DiscreteMeasure, MeasureError, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Density {
    /// Equal weights.
    Uniform,
    /// Weights proportional to `exp(-|p - c|^2 / (2 sigma^2))`, `c` the box center.
    Gaussian(f64),
    /// Random weights drawn from a flat Dirichlet distribution.
    Atoms,
}

impl FromStr for Density {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "uniform" => return Ok(Density::Uniform),
            "atoms" => return Ok(Density::Atoms),
            _ => {}
        }
        let sigma = s
            .strip_prefix("gaussian(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| MeasureError::Grid(format!("unknown density `{s}`")))?;
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(MeasureError::Grid(format!(
                "gaussian sigma must be positive, got {sigma}"
            )));
        }
        Ok(Density::Gaussian(sigma))
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Uniform => f.write_str("uniform"),
            Density::Atoms => f.write_str("atoms"),
            Density::Gaussian(s) => write!(f, "gaussian({s})"),
        }
    }
}

impl Serialize for Density {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Density {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Cell counts: one count for every axis or an explicit count per axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridCounts {
    Each(usize),
    PerAxis(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,
    pub n: GridCounts,
    pub density: Density,
    #[serde(default)]
    pub jitter: f64,
}

impl GridSpec {
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    fn counts(&self) -> Result<Vec<usize>> {
        let counts = match &self.n {
            GridCounts::Each(n) => vec![*n; self.dim()],
            GridCounts::PerAxis(v) => v.clone(),
        };
        if counts.len() != self.dim() {
            return Err(MeasureError::Grid(format!(
                "{} cell counts for a {}-dimensional box",
                counts.len(),
                self.dim()
            )));
        }
        if counts.contains(&0) {
            return Err(MeasureError::Grid("cell counts must be positive".into()));
        }
        Ok(counts)
    }

    /// Samples the measure. Identical `(spec, rng state)` give identical output.
    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DiscreteMeasure> {
        if self.bounds.is_empty() {
            return Err(MeasureError::ZeroDimension);
        }
        for (k, [lo, hi]) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(MeasureError::Grid(format!("box axis {k} is [{lo}, {hi}]")));
            }
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(MeasureError::Grid(format!(
                "jitter must lie in [0, 1], got {}",
                self.jitter
            )));
        }
        let counts = self.counts()?;
        let total: usize = counts.iter().product();
        let widths: Vec<f64> = self
            .bounds
            .iter()
            .zip(&counts)
            .map(|([lo, hi], &c)| (hi - lo) / c as f64)
            .collect();

        let mut points: Vec<Point> = Vec::with_capacity(total);
        let mut cell = vec![0usize; counts.len()];
        for _ in 0..total {
            let p = cell
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let center = self.bounds[k][0] + (c as f64 + 0.5) * widths[k];
                    let half = 0.5 * self.jitter * widths[k];
                    if half > 0.0 {
                        center + rng.gen_range(-half..=half)
                    } else {
                        center
                    }
                })
                .collect();
            points.push(p);
            // odometer increment, last axis fastest
            for k in (0..cell.len()).rev() {
                cell[k] += 1;
                if cell[k] < counts[k] {
                    break;
                }
                cell[k] = 0;
            }
        }

        let weights: Vec<f64> = match self.density {
            Density::Uniform => vec![1.0; total],
            Density::Gaussian(sigma) => {
                let c: Vec<f64> = self.bounds.iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect();
                points
                    .iter()
                    .map(|p| {
                        let r2: f64 = p.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
                        (-r2 / (2.0 * sigma * sigma)).exp()
                    })
                    .collect()
            }
            Density::Atoms => (0..total).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect(),
        };
        DiscreteMeasure::from_unnormalized(points, weights)
    }
}
