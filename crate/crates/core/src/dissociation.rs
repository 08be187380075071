//! Two-molecule dissociation under product plans.
//!
//! Restricted to plans `gamma_alpha (x) gamma_beta`, the rescaled Coulomb
//! energy splits into the SCE energy of each molecule plus an inter-molecular
//! term that only sees `rho_alpha (x) rho_beta`. The SCE parts do not depend
//! on `eta`, so a sweep solves two transport problems and evaluates the
//! inter-molecular double sum once per `eta`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{
    self, cost_tensor, coulomb_total, interaction_exact, interaction_remainder, CostError,
    CostFamily, CostSpec, TaylorOrder,
};
use crate::entropic::{self, EntropicError, EntropicStatus};
use crate::exact::{self, monge_diagnostics, SolveError, SolverOptions};
use crate::measures::{
    coupling::MAX_SYMMETRIZE_AXES, molecule_centers, star, CouplingTensor, DiscreteMeasure,
    MeasureError, MeasureJson, Point,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Residuals at or below this are treated as rounding noise by the slope fit.
pub const RESIDUAL_NOISE_FLOOR: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum DissociationError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Entropic(#[from] EntropicError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("symmetrized plan changes the SCE value from {value} to {symmetrized}")]
    SymmetryCheck { value: f64, symmetrized: f64 },
}

pub type Result<T> = std::result::Result<T, DissociationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Lp,
    Entropic,
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lp" => Ok(Backend::Lp),
            "entropic" => Ok(Backend::Entropic),
            other => Err(format!(
                "unknown backend `{other}` (expected lp or entropic)"
            )),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Lp => "lp",
            Backend::Entropic => "entropic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropicOptions {
    /// Strictly decreasing regularization schedule.
    pub epsilon: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EntropicOptions {
    fn default() -> Self {
        Self {
            epsilon: vec![1.0, 0.1, 0.01],
            tol: 1e-6,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendOptions {
    pub lp: SolverOptions,
    pub entropic: EntropicOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceResult {
    pub value: f64,
    pub backend: Backend,
    /// `optimal`, `converged`, `max_iter` or `trivial` (fewer than two electrons).
    pub status: String,
    /// Value of the symmetrized optimal plan, when it was computed.
    pub symmetrized_value: Option<f64>,
}

/// Minimal Coulomb energy of `n` electrons, each distributed like `rho`.
pub fn sce_functional(
    rho: &DiscreteMeasure,
    n: usize,
    backend: Backend,
    opts: &BackendOptions,
) -> Result<SceResult> {
    if n == 0 {
        return Err(DissociationError::InvalidInput(
            "number of electrons must be positive".into(),
        ));
    }
    if n == 1 {
        return Ok(SceResult {
            value: 0.0,
            backend,
            status: "trivial".into(),
            symmetrized_value: None,
        });
    }
    let marginals = vec![rho.clone(); n];
    let cost = cost_tensor(&CostSpec::coulomb(n, rho.dim()), &marginals)?;
    match backend {
        Backend::Lp => {
            let report = exact::solve_lp_with(&cost, &marginals, &opts.lp)?;
            let symmetrized_value = if n <= MAX_SYMMETRIZE_AXES {
                let sym = report.coupling.symmetrize()?;
                let v = sym.integrate(|z: &[&[f64]]| coulomb_total(z));
                if (v - report.value).abs() > 1e-9 * (1.0 + report.value.abs()) {
                    return Err(DissociationError::SymmetryCheck {
                        value: report.value,
                        symmetrized: v,
                    });
                }
                Some(v)
            } else {
                None
            };
            Ok(SceResult {
                value: report.value,
                backend,
                status: "optimal".into(),
                symmetrized_value,
            })
        }
        Backend::Entropic => {
            let e = &opts.entropic;
            let run =
                entropic::epsilon_schedule_solve(&cost, &marginals, &e.epsilon, e.tol, e.max_iter)?;
            Ok(SceResult {
                value: run.result.value,
                backend,
                status: match run.result.status {
                    EntropicStatus::Converged => "converged".into(),
                    EntropicStatus::MaxIter => "max_iter".into(),
                },
                symmetrized_value: None,
            })
        }
    }
}

/// Puts `gamma_alpha (x) gamma_beta` at separation `1/eta` and symmetrizes it.
///
/// Every marginal of the result is the two-molecule density
/// [`crate::measures::mixture_rho_eta`].
pub fn symmetrized_translated_product(
    gamma_alpha: &CouplingTensor,
    gamma_beta: &CouplingTensor,
    eta: f64,
) -> Result<CouplingTensor> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(MeasureError::InvalidEta(eta).into());
    }
    let d = gamma_alpha.axes()[0].dim();
    let (r_alpha, r_beta) = molecule_centers(d, eta);
    let shifts: Vec<Point> = std::iter::repeat_n(r_alpha, gamma_alpha.num_axes())
        .chain(std::iter::repeat_n(r_beta, gamma_beta.num_axes()))
        .collect();
    Ok(gamma_alpha
        .product(gamma_beta)
        .translate_axes(&shifts)?
        .symmetrize()?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissociationRow {
    pub eta: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub sce_alpha: f64,
    pub sce_beta: f64,
    pub interaction_exact: f64,
    pub total: f64,
    pub u_int: f64,
    pub eta3_term: f64,
    pub residual_order2: f64,
    pub residual_order3: f64,
    pub backend: Backend,
    pub solve_status: String,
}

impl DissociationRow {
    pub const COLUMNS: [&'static str; 12] = [
        "eta",
        "R",
        "sce_alpha",
        "sce_beta",
        "interaction_exact",
        "total",
        "u_int",
        "eta3_term",
        "residual_order2",
        "residual_order3",
        "backend",
        "solve_status",
    ];

    pub fn is_admissible(&self) -> bool {
        self.interaction_exact.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissociationMetadata {
    #[serde(rename = "Na")]
    pub n_alpha: usize,
    #[serde(rename = "Nb")]
    pub n_beta: usize,
    pub d: usize,
    pub rho_alpha: MeasureJson,
    pub rho_beta: MeasureJson,
    pub seeds: Vec<u64>,
    pub sce_alpha_status: String,
    pub sce_beta_status: String,
    /// Largest `eta` such that the third-order residual does not exceed the
    /// second-order one at this and every smaller `eta` of the sweep.
    pub residual_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissociationReport {
    pub schema_version: u32,
    pub metadata: DissociationMetadata,
    /// Sorted by `eta` descending.
    pub rows: Vec<DissociationRow>,
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:e}")
    }
}

impl DissociationReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("# schema_version={}\n", self.schema_version);
        out.push_str(&DissociationRow::COLUMNS.join(","));
        out.push('\n');
        for r in &self.rows {
            let nums = [
                r.eta,
                r.r,
                r.sce_alpha,
                r.sce_beta,
                r.interaction_exact,
                r.total,
                r.u_int,
                r.eta3_term,
                r.residual_order2,
                r.residual_order3,
            ];
            let mut fields: Vec<String> = nums.iter().map(|&v| fmt_num(v)).collect();
            fields.push(r.backend.to_string());
            fields.push(r.solve_status.replace(',', ";"));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// `n` points from `hi` down to `lo`, equally spaced in `log(eta)`.
pub fn geometric_etas(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![hi],
        _ => (0..n)
            .map(|i| match i {
                0 => hi,
                i if i == n - 1 => lo,
                _ => {
                    let t = i as f64 / (n - 1) as f64;
                    (hi.ln() + t * (lo.ln() - hi.ln())).exp()
                }
            })
            .collect(),
    }
}

/// Default fit window: 8 geometric points in `[1e-3, 1e-2]`.
pub fn default_eta_window() -> Vec<f64> {
    geometric_etas(1e-3, 1e-2, 8)
}

#[allow(clippy::too_many_arguments)]
pub fn dissociation_curve(
    rho_alpha: &DiscreteMeasure,
    rho_beta: &DiscreteMeasure,
    n_alpha: usize,
    n_beta: usize,
    etas: &[f64],
    backend: Backend,
    opts: &BackendOptions,
) -> Result<DissociationReport> {
    if etas.is_empty() {
        return Err(DissociationError::InvalidInput("empty eta list".into()));
    }
    if let Some(e) = etas.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
        return Err(DissociationError::InvalidInput(format!(
            "eta must be positive and finite, got {e}"
        )));
    }
    if n_alpha == 0 || n_beta == 0 {
        return Err(MeasureError::InvalidGroupSize.into());
    }
    if rho_alpha.dim() != rho_beta.dim() {
        return Err(CostError::DimensionMismatch {
            expected: rho_alpha.dim(),
            found: rho_beta.dim(),
        }
        .into());
    }

    let same = rho_alpha == rho_beta && n_alpha == n_beta;
    let (sce_a, sce_b) = if same {
        let s = sce_functional(rho_alpha, n_alpha, backend, opts)?;
        (s.clone(), s)
    } else {
        let (a, b) = rayon::join(
            || sce_functional(rho_alpha, n_alpha, backend, opts),
            || sce_functional(rho_beta, n_beta, backend, opts),
        );
        (a?, b?)
    };

    let mut sorted = etas.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.dedup();

    let eta3 = costs::eta3_coefficient(rho_alpha, rho_beta, n_alpha, n_beta);
    let rows: Vec<DissociationRow> = sorted
        .par_iter()
        .map(|&eta| {
            let u = costs::u_int(rho_alpha, rho_beta, n_alpha, n_beta, eta);
            let eta3_term = eta3 * eta.powi(3);
            let base = DissociationRow {
                eta,
                r: 1.0 / eta,
                sce_alpha: sce_a.value,
                sce_beta: sce_b.value,
                interaction_exact: f64::NAN,
                total: f64::NAN,
                u_int: u,
                eta3_term,
                residual_order2: f64::NAN,
                residual_order3: f64::NAN,
                backend,
                solve_status: String::new(),
            };
            let computed =
                interaction_exact(rho_alpha, rho_beta, n_alpha, n_beta, eta).and_then(|w| {
                    let r2 = interaction_remainder(
                        rho_alpha,
                        rho_beta,
                        n_alpha,
                        n_beta,
                        eta,
                        TaylorOrder::Second,
                    )?;
                    let r3 = interaction_remainder(
                        rho_alpha,
                        rho_beta,
                        n_alpha,
                        n_beta,
                        eta,
                        TaylorOrder::Third,
                    )?;
                    Ok((w, r2, r3))
                });
            match computed {
                Ok((w, r2, r3)) => DissociationRow {
                    interaction_exact: w,
                    total: sce_a.value + sce_b.value + w,
                    residual_order2: r2.abs(),
                    residual_order3: r3.abs(),
                    solve_status: format!("{}/{}", sce_a.status, sce_b.status),
                    ..base
                },
                Err(e) => DissociationRow {
                    solve_status: format!("eta_inadmissible: {e}"),
                    ..base
                },
            }
        })
        .collect();

    let mut residual_threshold = None;
    for row in rows.iter().rev() {
        if row.is_admissible() && row.residual_order3 <= row.residual_order2 {
            residual_threshold = Some(row.eta);
        } else {
            break;
        }
    }

    Ok(DissociationReport {
        schema_version: SCHEMA_VERSION,
        metadata: DissociationMetadata {
            n_alpha,
            n_beta,
            d: rho_alpha.dim(),
            rho_alpha: rho_alpha.clone().into(),
            rho_beta: rho_beta.clone().into(),
            seeds: Vec::new(),
            sce_alpha_status: sce_a.status,
            sce_beta_status: sce_b.status,
            residual_threshold,
        },
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SlopeFit {
    Slope {
        slope: f64,
    },
    /// Some residual in the window is at the rounding noise floor.
    Indeterminate,
}

impl SlopeFit {
    pub fn slope(self) -> Option<f64> {
        match self {
            SlopeFit::Slope { slope } => Some(slope),
            SlopeFit::Indeterminate => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeCheck {
    pub slope2: SlopeFit,
    pub slope3: SlopeFit,
    pub points: usize,
    pub window: (f64, f64),
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Log-log slopes of both residual columns over rows with `lo <= eta <= hi`.
pub fn taylor_slope_check(report: &DissociationReport, window: (f64, f64)) -> Result<SlopeCheck> {
    let (lo, hi) = window;
    let rows: Vec<&DissociationRow> = report
        .rows
        .iter()
        .filter(|r| r.is_admissible() && r.eta >= lo && r.eta <= hi)
        .collect();
    let distinct = {
        let mut e: Vec<f64> = rows.iter().map(|r| r.eta).collect();
        e.dedup();
        e.len()
    };
    if distinct < 4 {
        return Err(DissociationError::InvalidInput(format!(
            "slope fit needs at least 4 admissible rows in [{lo}, {hi}], found {distinct}"
        )));
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.eta.ln()).collect();
    let fit = |res: &dyn Fn(&DissociationRow) -> f64| {
        let ys: Vec<f64> = rows.iter().map(|r| res(r)).collect();
        if ys.iter().any(|&y| !(y > RESIDUAL_NOISE_FLOOR)) {
            SlopeFit::Indeterminate
        } else {
            let logs: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
            SlopeFit::Slope {
                slope: least_squares_slope(&xs, &logs),
            }
        }
    };
    Ok(SlopeCheck {
        slope2: fit(&|r| r.residual_order2),
        slope3: fit(&|r| r.residual_order3),
        points: rows.len(),
        window,
    })
}

/// Plot-ready table: `eta R total residual_order2 residual_order3`, one row per
/// admissible `eta`, `eta` descending, behind a `#` header line.
pub fn plot_table(report: &DissociationReport) -> Result<String> {
    let rows: Vec<&DissociationRow> = report.rows.iter().filter(|r| r.is_admissible()).collect();
    if rows.is_empty() {
        return Err(DissociationError::InvalidInput(
            "report has no admissible rows to plot".into(),
        ));
    }
    let mut out = String::from("# eta R total residual_order2 residual_order3\n");
    for r in rows {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            fmt_num(r.eta),
            fmt_num(r.r),
            fmt_num(r.total),
            fmt_num(r.residual_order2),
            fmt_num(r.residual_order3)
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiracDemoReport {
    pub lp_value: f64,
    /// `sum_i sum_j mean(rho_i) . star(y_j)`.
    pub product_value: f64,
    /// The independent coupling's objective, integrated entrywise.
    pub product_plan_value: f64,
    pub random_plan_values: Vec<f64>,
    pub max_deviation: f64,
    pub tol: f64,
    pub all_plans_optimal: bool,
    pub product_graphical_fraction: f64,
    pub product_non_graphical: bool,
    pub certificate_valid: bool,
}

/// Bilinear problem with Dirac `y` marginals: every feasible plan has the same cost.
pub fn dirac_degeneracy_demo(
    x_marginals: &[DiscreteMeasure],
    y_hat: &[Point],
    random_plans: usize,
    seed: u64,
    tol: f64,
    opts: &SolverOptions,
) -> Result<DiracDemoReport> {
    if x_marginals.is_empty() || y_hat.is_empty() {
        return Err(DissociationError::InvalidInput(
            "need at least one x marginal and one Dirac position".into(),
        ));
    }
    let d = x_marginals[0].dim();
    let mut marginals = x_marginals.to_vec();
    for y in y_hat {
        marginals.push(DiscreteMeasure::dirac(y.clone())?);
    }
    let spec = CostSpec::new(CostFamily::Bilinear, x_marginals.len(), y_hat.len(), d);
    let cost = cost_tensor(&spec, &marginals)?;
    let report = exact::solve_lp_with(&cost, &marginals, opts)?;
    let certificate_valid = exact::verify_splitting(&report, &cost, 1e-8).valid;

    let ys = y_hat.iter().fold(vec![0.0; d], |mut acc, y| {
        acc.iter_mut().zip(y).for_each(|(a, b)| *a += b);
        acc
    });
    let ys_star = star(&ys);
    let product_value: f64 = x_marginals
        .iter()
        .map(|m| {
            m.mean()
                .iter()
                .zip(&ys_star)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .sum();

    let plan_value =
        |g: &CouplingTensor| -> f64 { g.entries().iter().map(|(t, v)| v * cost.get(t)).sum() };
    let product = CouplingTensor::independent(&marginals)?;
    let product_plan_value = plan_value(&product);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_plan_values = (0..random_plans)
        .map(|_| CouplingTensor::random_plan(&marginals, 3, &mut rng).map(|g| plan_value(&g)))
        .collect::<std::result::Result<Vec<f64>, _>>()?;

    let max_deviation = std::iter::once(report.value)
        .chain(std::iter::once(product_plan_value))
        .chain(random_plan_values.iter().copied())
        .map(|v| (v - product_value).abs())
        .fold(0.0, f64::max);
    let diag = monge_diagnostics(&product, opts.mass_tol);
    Ok(DiracDemoReport {
        lp_value: report.value,
        product_value,
        product_plan_value,
        random_plan_values,
        max_deviation,
        tol,
        all_plans_optimal: max_deviation <= tol,
        product_graphical_fraction: diag.graphical_fraction,
        product_non_graphical: diag.graphical_fraction < 1.0 - 1e-6,
        certificate_valid,
    })
}
