//! Exact multi-marginal Kantorovich solver, dual certificates and Monge diagnostics.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::CostTensor;
use crate::lp::{LpFailure, TransportLp};
use crate::measures::{CouplingTensor, DiscreteMeasure};

pub use crate::costs::product_bilinear_value;

/// Largest number of LP variables (finite-cost tuples) accepted.
pub const MAX_LP_VARIABLES: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    PivotLimit,
    SizeCap,
    NumericalFailure,
    InvalidInput,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("problem has {variables} variables, cap is {cap}")]
    SizeCap { variables: usize, cap: usize },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("pivot limit reached after {pivots} pivots")]
    PivotLimit { pivots: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl SolveError {
    pub fn status(&self) -> SolveStatus {
        match self {
            SolveError::InvalidInput(_) => SolveStatus::InvalidInput,
            SolveError::SizeCap { .. } => SolveStatus::SizeCap,
            SolveError::Infeasible(_) => SolveStatus::Infeasible,
            SolveError::PivotLimit { .. } => SolveStatus::PivotLimit,
            SolveError::Numerical(_) => SolveStatus::NumericalFailure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub pivot_limit: usize,
    /// Entries at or below this mass are not counted as support.
    pub mass_tol: f64,
    pub max_variables: usize,
    /// Seeds a random Bland priority over the columns; `None` uses index order.
    #[serde(default)]
    pub column_seed: Option<u64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            pivot_limit: 1_000_000,
            mass_tol: 1e-9,
            max_variables: MAX_LP_VARIABLES,
            column_seed: None,
        }
    }
}

/// One potential table per marginal, indexed like that marginal's atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPotentials {
    pub tables: Vec<Vec<f64>>,
}

impl DualPotentials {
    pub fn tuple_sum(&self, tuple: &[usize]) -> f64 {
        self.tables.iter().zip(tuple).map(|(u, &i)| u[i]).sum()
    }

    /// `sum_k <u_k, rho_k>`.
    pub fn value(&self, marginals: &[DiscreteMeasure]) -> f64 {
        self.tables
            .iter()
            .zip(marginals)
            .map(|(u, m)| u.iter().zip(m.weights()).map(|(a, w)| a * w).sum::<f64>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub value: f64,
    pub dual_value: f64,
    pub coupling: CouplingTensor,
    pub potentials: DualPotentials,
    pub pivots: usize,
    pub status: SolveStatus,
}

impl SolveReport {
    pub fn duality_gap(&self) -> f64 {
        (self.value - self.dual_value).abs()
    }

    pub fn support(&self, mass_tol: f64) -> Vec<Vec<usize>> {
        self.coupling.support(mass_tol)
    }
}

fn check_shapes(cost: &CostTensor, marginals: &[DiscreteMeasure]) -> Result<(), SolveError> {
    if marginals.is_empty() {
        return Err(SolveError::InvalidInput("no marginals".into()));
    }
    if cost.num_axes() != marginals.len() {
        return Err(SolveError::InvalidInput(format!(
            "cost has {} axes, {} marginals given",
            cost.num_axes(),
            marginals.len()
        )));
    }
    for (k, (&n, m)) in cost.shape().iter().zip(marginals).enumerate() {
        if n != m.len() {
            return Err(SolveError::InvalidInput(format!(
                "cost axis {k} has {n} entries, marginal has {} atoms",
                m.len()
            )));
        }
    }
    Ok(())
}

pub fn solve_lp(
    cost: &CostTensor,
    marginals: &[DiscreteMeasure],
) -> Result<SolveReport, SolveError> {
    solve_lp_with(cost, marginals, &SolverOptions::default())
}

pub fn solve_lp_with(
    cost: &CostTensor,
    marginals: &[DiscreteMeasure],
    opts: &SolverOptions,
) -> Result<SolveReport, SolveError> {
    check_shapes(cost, marginals)?;
    let n_axes = marginals.len();
    let offsets: Vec<usize> = marginals
        .iter()
        .scan(0, |acc, m| {
            let o = *acc;
            *acc += m.len();
            Some(o)
        })
        .collect();
    let m_rows: usize = marginals.iter().map(|m| m.len()).sum();

    let finite = cost.num_finite();
    if finite > opts.max_variables {
        return Err(SolveError::SizeCap {
            variables: finite,
            cap: opts.max_variables,
        });
    }

    let mut flat_of_col = Vec::with_capacity(finite);
    let mut rows = Vec::with_capacity(finite * n_axes);
    let mut costs = Vec::with_capacity(finite);
    let mut covered = vec![false; m_rows];
    let mut tuple = vec![0; n_axes];
    for (flat, &c) in cost.data().iter().enumerate() {
        if !c.is_finite() {
            continue;
        }
        cost.unravel(flat, &mut tuple);
        for k in 0..n_axes {
            let r = offsets[k] + tuple[k];
            rows.push(r);
            covered[r] = true;
        }
        flat_of_col.push(flat);
        costs.push(c);
    }
    for (k, m) in marginals.iter().enumerate() {
        if let Some(a) = (0..m.len()).find(|&a| m.weight(a) > 0.0 && !covered[offsets[k] + a]) {
            return Err(SolveError::Infeasible(format!(
                "atom {a} of marginal {k} has no finite-cost tuple"
            )));
        }
    }
    let rhs: Vec<f64> = marginals
        .iter()
        .flat_map(|m| m.weights().iter().copied())
        .collect();

    let priority: Vec<usize> = match opts.column_seed {
        None => (0..costs.len()).collect(),
        Some(seed) => {
            let mut order: Vec<usize> = (0..costs.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut priority = vec![0; costs.len()];
            for (rank, &j) in order.iter().enumerate() {
                priority[j] = rank;
            }
            priority
        }
    };

    let lp = TransportLp {
        rows: &rows,
        n_axes,
        costs: &costs,
        rhs: &rhs,
        priority: &priority,
        pivot_limit: opts.pivot_limit,
    };
    let sol = lp.solve().map_err(|e| match e {
        LpFailure::Infeasible { residual } => SolveError::Infeasible(format!(
            "no coupling avoids the excluded tuples (phase one residual {residual:e})"
        )),
        LpFailure::PivotLimit { pivots } => SolveError::PivotLimit { pivots },
        LpFailure::Unbounded => SolveError::Numerical("unbounded ratio test".into()),
        LpFailure::Singular => SolveError::Numerical("singular basis".into()),
    })?;

    let mut entries: Vec<(Vec<usize>, f64)> = sol
        .x
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 1e-13)
        .map(|(j, &v)| (cost.tuple(flat_of_col[j]), v))
        .collect();
    let total: f64 = entries.iter().map(|(_, v)| v).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SolveError::Numerical(format!(
            "optimal coupling has mass {total}"
        )));
    }
    for e in &mut entries {
        e.1 /= total;
    }
    let coupling = CouplingTensor::new(marginals.to_vec(), entries)
        .map_err(|e| SolveError::Numerical(e.to_string()))?;
    let value = coupling
        .entries()
        .iter()
        .map(|(t, v)| v * cost.get(t))
        .sum();

    let potentials = DualPotentials {
        tables: marginals
            .iter()
            .zip(&offsets)
            .map(|(m, &o)| sol.y[o..o + m.len()].to_vec())
            .collect(),
    };
    let dual_value = potentials.value(marginals);
    Ok(SolveReport {
        value,
        dual_value,
        coupling,
        potentials,
        pivots: sol.pivots,
        status: SolveStatus::Optimal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// `sum_k u_k(t_k) - c(t) > tol` at a finite-cost tuple.
    Feasibility { tuple: Vec<usize>, excess: f64 },
    /// `|sum_k u_k(t_k) - c(t)| > tol` on the coupling's support.
    Equality { tuple: Vec<usize>, gap: f64 },
    /// Primal and dual objective differ by more than the tolerance.
    Value { primal: f64, dual: f64 },
}

/// Outcome of checking that the support of a coupling is a splitting set for
/// the potentials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplittingCertificate {
    pub valid: bool,
    pub max_excess: f64,
    pub max_support_gap: f64,
    pub violation_count: usize,
    /// The first violations found, at most [`SplittingCertificate::LISTED`].
    pub violations: Vec<Violation>,
}

impl SplittingCertificate {
    pub const LISTED: usize = 64;
}

pub fn verify_splitting(report: &SolveReport, cost: &CostTensor, tol: f64) -> SplittingCertificate {
    verify_potentials(&report.potentials, &report.coupling, cost, tol)
}

/// Checks `sum u_k <= c + tol` on all finite tuples, equality on the support of
/// `coupling`, and agreement of primal and dual objectives within `tol * (1 + |primal|)`.
pub fn verify_potentials(
    potentials: &DualPotentials,
    coupling: &CouplingTensor,
    cost: &CostTensor,
    tol: f64,
) -> SplittingCertificate {
    let mut violations = Vec::new();
    let mut count = 0;
    let mut push = |v: Violation, violations: &mut Vec<Violation>| {
        count += 1;
        if violations.len() < SplittingCertificate::LISTED {
            violations.push(v);
        }
    };

    let mut max_excess = f64::NEG_INFINITY;
    let mut tuple = vec![0; cost.num_axes()];
    for (flat, &c) in cost.data().iter().enumerate() {
        if !c.is_finite() {
            continue;
        }
        cost.unravel(flat, &mut tuple);
        let excess = potentials.tuple_sum(&tuple) - c;
        max_excess = max_excess.max(excess);
        if excess > tol {
            push(
                Violation::Feasibility {
                    tuple: tuple.clone(),
                    excess,
                },
                &mut violations,
            );
        }
    }

    let mut max_gap: f64 = 0.0;
    for (t, _) in coupling.entries() {
        let c = cost.get(t);
        let gap = if c.is_finite() {
            (potentials.tuple_sum(t) - c).abs()
        } else {
            f64::INFINITY
        };
        max_gap = max_gap.max(gap);
        if !(gap <= tol) {
            push(
                Violation::Equality {
                    tuple: t.clone(),
                    gap,
                },
                &mut violations,
            );
        }
    }

    let primal: f64 = coupling
        .entries()
        .iter()
        .map(|(t, v)| v * cost.get(t))
        .sum();
    let dual = potentials.value(coupling.axes());
    if !((primal - dual).abs() <= tol * (1.0 + primal.abs())) {
        push(Violation::Value { primal, dual }, &mut violations);
    }

    SplittingCertificate {
        valid: count == 0,
        max_excess,
        max_support_gap: max_gap,
        violation_count: count,
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MongeDiagnostics {
    /// Share of the first marginal's mass sitting on atoms with exactly one partner tuple.
    pub graphical_fraction: f64,
    /// Per atom of the first marginal: the partner indices on axes `2..N` when unique.
    pub maps: Vec<Option<Vec<usize>>>,
    /// Per atom of the first marginal: number of support tuples above `mass_tol`.
    pub partner_counts: Vec<usize>,
    pub max_partners: usize,
    pub unique: Option<bool>,
}

impl MongeDiagnostics {
    pub fn is_graphical(&self, threshold: f64) -> bool {
        self.graphical_fraction >= threshold
    }

    pub fn with_uniqueness(mut self, probe: &UniquenessReport) -> Self {
        self.unique = Some(probe.unique);
        self
    }
}

pub fn monge_diagnostics(coupling: &CouplingTensor, mass_tol: f64) -> MongeDiagnostics {
    let n_first = coupling.axes()[0].len();
    let mut partners: Vec<Vec<Vec<usize>>> = vec![Vec::new(); n_first];
    let mut atom_mass = vec![0.0; n_first];
    for (t, v) in coupling.entries() {
        atom_mass[t[0]] += v;
        if *v > mass_tol {
            partners[t[0]].push(t[1..].to_vec());
        }
    }
    let total: f64 = atom_mass.iter().sum();
    let graphical: f64 = partners
        .iter()
        .zip(&atom_mass)
        .filter(|(p, _)| p.len() == 1)
        .fold(0.0, |acc, (_, m)| acc + m);
    let partner_counts: Vec<usize> = partners.iter().map(|p| p.len()).collect();
    MongeDiagnostics {
        graphical_fraction: if total > 0.0 {
            (graphical / total).min(1.0)
        } else {
            0.0
        },
        maps: partners
            .into_iter()
            .map(|mut p| if p.len() == 1 { p.pop() } else { None })
            .collect(),
        max_partners: partner_counts.iter().copied().max().unwrap_or(0),
        partner_counts,
        unique: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub trials: usize,
    /// Perturbation amplitude relative to the finite cost range.
    pub delta: f64,
    pub seed: u64,
    #[serde(default = "default_mass_tol")]
    pub mass_tol: f64,
}

fn default_mass_tol() -> f64 {
    1e-9
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            trials: 5,
            delta: 1e-7,
            seed: 0,
            mass_tol: default_mass_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeTrial {
    pub support: Vec<Vec<usize>>,
    /// Objective of the trial's optimizer under the unperturbed cost.
    pub value: f64,
    pub pivots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub unique: bool,
    pub supports_identical: bool,
    pub value_spread: f64,
    pub spread_bound: f64,
    pub baseline: ProbeTrial,
    pub trials: Vec<ProbeTrial>,
}

/// Re-solves under small random cost perturbations and shuffled pivot orders.
///
/// An optimum that is unique survives every trial unchanged; a degenerate
/// optimal face shows up as differing supports.
pub fn uniqueness_probe(
    cost: &CostTensor,
    marginals: &[DiscreteMeasure],
    probe: &ProbeOptions,
    solver: &SolverOptions,
) -> Result<UniquenessReport, SolveError> {
    if probe.trials < 2 {
        return Err(SolveError::InvalidInput(format!(
            "uniqueness probe needs at least 2 trials, got {}",
            probe.trials
        )));
    }
    if !(probe.delta >= 0.0) || !probe.delta.is_finite() {
        return Err(SolveError::InvalidInput(format!(
            "perturbation size must be nonnegative, got {}",
            probe.delta
        )));
    }
    let range = cost.finite_range().map(|(lo, hi)| hi - lo).unwrap_or(0.0);
    let amplitude = probe.delta * range;

    let record = |report: &SolveReport| ProbeTrial {
        support: report.support(probe.mass_tol),
        value: report
            .coupling
            .entries()
            .iter()
            .map(|(t, v)| v * cost.get(t))
            .sum(),
        pivots: report.pivots,
    };

    let base_opts = SolverOptions {
        column_seed: None,
        ..solver.clone()
    };
    let baseline = record(&solve_lp_with(cost, marginals, &base_opts)?);

    let trials = (0..probe.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
            rng.set_stream(t as u64 + 1);
            let noise: Vec<f64> = (0..cost.len()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let perturbed = cost.map_finite(|i, c| c + amplitude * noise[i]);
            let opts = SolverOptions {
                column_seed: Some(rng.gen()),
                ..solver.clone()
            };
            solve_lp_with(&perturbed, marginals, &opts).map(|r| record(&r))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let supports_identical = trials.iter().all(|t| t.support == baseline.support);
    let (lo, hi) = trials
        .iter()
        .map(|t| t.value)
        .fold((baseline.value, baseline.value), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let value_spread = hi - lo;
    let spread_bound = 2.0 * amplitude + 1e-9 * (1.0 + baseline.value.abs());
    Ok(UniquenessReport {
        unique: supports_identical && value_spread <= spread_bound,
        supports_identical,
        value_spread,
        spread_bound,
        baseline,
        trials,
    })
}
