//! Shared oracles and generators for the integration suites.
#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sce_transport::measures::DiscreteMeasure;

pub type Plan = Vec<(Vec<usize>, f64)>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random measure with `n` atoms in `[lo, hi]^d` and weights bounded away from zero.
pub fn random_measure(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    lo: f64,
    hi: f64,
) -> DiscreteMeasure {
    let points = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(lo..hi)).collect())
        .collect();
    let weights = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    DiscreteMeasure::from_unnormalized(points, weights).unwrap()
}

/// Random measure on which `electrons` electrons can avoid each other:
/// no atom carries more than `1/electrons` of the mass.
pub fn spread_measure(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    electrons: usize,
) -> DiscreteMeasure {
    assert!(n >= electrons);
    loop {
        let m = random_measure(rng, n, d, -1.0, 1.0);
        if n == electrons {
            return DiscreteMeasure::uniform(m.points().to_vec()).unwrap();
        }
        if m.weights().iter().all(|&w| w <= 1.0 / electrons as f64) {
            return m;
        }
    }
}

/// Coulomb energy of a configuration, written out independently of the library.
pub fn plain_coulomb(points: &[Vec<f64>]) -> f64 {
    let mut e = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let r: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if r == 0.0 {
                return f64::INFINITY;
            }
            e += 1.0 / r;
        }
    }
    e
}

fn all_tuples(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &n in shape {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..n).map(move |i| {
                    let mut t = t.clone();
                    t.push(i);
                    t
                })
            })
            .collect();
    }
    out
}

/// Row-reduces `a` (row-major `rows x cols`) in place; returns the pivot columns.
fn row_reduce(a: &mut [Vec<f64>], cols: usize) -> Vec<usize> {
    let mut pivots = Vec::new();
    let mut row = 0;
    for c in 0..cols {
        if row == a.len() {
            break;
        }
        let p = (row..a.len())
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        if a[p][c].abs() < 1e-10 {
            continue;
        }
        a.swap(row, p);
        let piv = a[row][c];
        for v in a[row].iter_mut() {
            *v /= piv;
        }
        for i in 0..a.len() {
            if i != row {
                let f = a[i][c];
                if f != 0.0 {
                    let pivot_row = a[row].clone();
                    for (v, q) in a[i].iter_mut().zip(&pivot_row) {
                        *v -= f * q;
                    }
                }
            }
        }
        pivots.push(c);
        row += 1;
    }
    pivots
}

/// Every vertex of the transport polytope with the given marginal weights,
/// restricted to the tuples accepted by `admissible`.
///
/// Enumerates all column subsets of basis size; a subset whose columns are
/// independent and whose unique solution is nonnegative is a vertex.
pub fn vertex_couplings(weights: &[Vec<f64>], admissible: &dyn Fn(&[usize]) -> bool) -> Vec<Plan> {
    let shape: Vec<usize> = weights.iter().map(|w| w.len()).collect();
    let offsets: Vec<usize> = shape
        .iter()
        .scan(0, |acc, &n| {
            let o = *acc;
            *acc += n;
            Some(o)
        })
        .collect();
    let m: usize = shape.iter().sum();
    let b: Vec<f64> = weights.iter().flatten().copied().collect();
    let columns: Vec<Vec<usize>> = all_tuples(&shape)
        .into_iter()
        .filter(|t| admissible(t))
        .collect();
    let column_rows = |t: &[usize]| -> Vec<usize> {
        t.iter().enumerate().map(|(k, &i)| offsets[k] + i).collect()
    };

    let mut full: Vec<Vec<f64>> = vec![vec![0.0; columns.len()]; m];
    for (j, t) in columns.iter().enumerate() {
        for r in column_rows(t) {
            full[r][j] = 1.0;
        }
    }
    let rank = row_reduce(&mut full, columns.len()).len();
    if rank == 0 {
        return Vec::new();
    }

    let mut vertices: Vec<Plan> = Vec::new();
    let mut subset: Vec<usize> = (0..rank).collect();
    loop {
        let mut aug: Vec<Vec<f64>> = (0..m)
            .map(|r| {
                let mut row = vec![0.0; rank + 1];
                row[rank] = b[r];
                row
            })
            .collect();
        for (c, &j) in subset.iter().enumerate() {
            for r in column_rows(&columns[j]) {
                aug[r][c] = 1.0;
            }
        }
        let pivots = row_reduce(&mut aug, rank);
        let consistent = aug
            .iter()
            .skip(pivots.len())
            .all(|row| row[rank].abs() < 1e-10);
        if pivots.len() == rank && consistent {
            let x: Vec<f64> = (0..rank).map(|i| aug[i][rank]).collect();
            if x.iter().all(|&v| v >= -1e-12) {
                let mut plan: Plan = subset
                    .iter()
                    .zip(&x)
                    .filter(|(_, &v)| v > 1e-12)
                    .map(|(&j, &v)| (columns[j].clone(), v))
                    .collect();
                plan.sort_by(|a, b| a.0.cmp(&b.0));
                let dup = vertices.iter().any(|p| {
                    p.len() == plan.len()
                        && p.iter()
                            .zip(&plan)
                            .all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() < 1e-9)
                });
                if !dup {
                    vertices.push(plan);
                }
            }
        }
        // next combination
        let n = columns.len();
        let Some(i) = (0..rank).rev().find(|&i| subset[i] < n - rank + i) else {
            break;
        };
        subset[i] += 1;
        for k in i + 1..rank {
            subset[k] = subset[k - 1] + 1;
        }
    }
    vertices
}

pub fn plan_value(plan: &Plan, cost: &dyn Fn(&[usize]) -> f64) -> f64 {
    plan.iter().map(|(t, v)| v * cost(t)).sum()
}

/// Minimum of a linear objective over the transport polytope by vertex enumeration.
/// Tuples with infinite cost are excluded.
pub fn brute_force_min(
    weights: &[Vec<f64>],
    cost: &dyn Fn(&[usize]) -> f64,
) -> Option<(f64, Plan)> {
    vertex_couplings(weights, &|t| cost(t).is_finite())
        .into_iter()
        .map(|p| (plan_value(&p, cost), p))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

pub fn weights_of(ms: &[DiscreteMeasure]) -> Vec<Vec<f64>> {
    ms.iter().map(|m| m.weights().to_vec()).collect()
}
