//! `sce-transport` command-line front end.
//!
//! A run reads one JSON config, executes its `command`, and writes its
//! artifacts plus `manifest.json` (sha256 of every artifact) into `--out`.
//! Exit codes: 0 success, 2 invalid config, 3 solver failure, 1 I/O failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::costs::{cost_tensor, CostSpec};
use crate::dissociation::{
    self, Backend, BackendOptions, DissociationError, DissociationReport, EntropicOptions,
};
use crate::entropic::{epsilon_schedule_solve, EntropicError};
use crate::exact::{
    monge_diagnostics, solve_lp_with, uniqueness_probe, verify_splitting, ProbeOptions, SolveError,
    SolveReport, SolverOptions,
};
use crate::measures::{DiscreteMeasure, GridSpec, MeasureJson, Point};

pub const CONFIG_SCHEMA_VERSION: u64 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "sce-transport",
    version,
    about = "Multi-marginal transport and dissociation curves"
)]
pub struct Args {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory receiving the artifacts and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's backend (`lp` or `entropic`).
    #[arg(long)]
    pub backend: Option<Backend>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Validation { path: String, message: String },
    #[error("solver failure ({status}): {message}")]
    Solver { status: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => EXIT_VALIDATION,
            CliError::Solver { .. } => EXIT_SOLVER,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    fn invalid(path: &str, message: impl Into<String>) -> Self {
        CliError::Validation {
            path: path.to_string(),
            message: message.into(),
        }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        let status = serde_json::to_value(e.status())
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        CliError::Solver {
            status,
            message: e.to_string(),
        }
    }
}

impl From<EntropicError> for CliError {
    fn from(e: EntropicError) -> Self {
        let status = match e {
            EntropicError::Infeasible { .. } => "infeasible",
            EntropicError::InvalidInput(_) => "invalid_input",
        };
        CliError::Solver {
            status: status.into(),
            message: e.to_string(),
        }
    }
}

impl From<DissociationError> for CliError {
    fn from(e: DissociationError) -> Self {
        match e {
            DissociationError::Solve(s) => s.into(),
            DissociationError::Entropic(s) => s.into(),
            other => CliError::Solver {
                status: "failed".into(),
                message: other.to_string(),
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Dissociate,
    TaylorCheck,
    MongeCheck,
    DiracDemo,
}

impl Command {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "solve" => Command::Solve,
            "dissociate" => Command::Dissociate,
            "taylor-check" => Command::TaylorCheck,
            "monge-check" => Command::MongeCheck,
            "dirac-demo" => Command::DiracDemo,
            _ => return None,
        })
    }
}

/// A JSON value together with its path from the config root.
#[derive(Clone, Copy)]
struct Node<'a> {
    value: &'a Value,
    path: &'a str,
}

impl<'a> Node<'a> {
    fn child_path(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn opt(&self, key: &str) -> Option<&'a Value> {
        self.value.get(key).filter(|v| !v.is_null())
    }

    fn req(&self, key: &str) -> CliResult<&'a Value> {
        self.opt(key)
            .ok_or_else(|| CliError::invalid(&self.child_path(key), "required field is missing"))
    }

    fn str_field(&self, key: &str) -> CliResult<&'a str> {
        self.req(key)?
            .as_str()
            .ok_or_else(|| CliError::invalid(&self.child_path(key), "expected a string"))
    }

    fn u64_field(&self, key: &str) -> CliResult<Option<u64>> {
        self.opt(key)
            .map(|v| {
                v.as_u64().ok_or_else(|| {
                    CliError::invalid(&self.child_path(key), "expected an unsigned 64-bit integer")
                })
            })
            .transpose()
    }

    fn usize_field(&self, key: &str) -> CliResult<Option<usize>> {
        Ok(self.u64_field(key)?.map(|v| v as usize))
    }

    fn f64_field(&self, key: &str) -> CliResult<Option<f64>> {
        self.opt(key)
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| CliError::invalid(&self.child_path(key), "expected a number"))
            })
            .transpose()
    }

    fn array(&self, key: &str) -> CliResult<&'a Vec<Value>> {
        self.req(key)?
            .as_array()
            .ok_or_else(|| CliError::invalid(&self.child_path(key), "expected an array"))
    }
}

fn parse_as<T: serde::de::DeserializeOwned>(value: &Value, path: &str) -> CliResult<T> {
    serde_json::from_value(value.clone()).map_err(|e| CliError::invalid(path, e.to_string()))
}

fn f64_list(value: &Value, path: &str) -> CliResult<Vec<f64>> {
    match value {
        Value::Number(n) => Ok(vec![n.as_f64().unwrap_or(f64::NAN)]),
        Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_f64()
                    .ok_or_else(|| CliError::invalid(&format!("{path}[{i}]"), "expected a number"))
            })
            .collect(),
        _ => Err(CliError::invalid(
            path,
            "expected a number or an array of numbers",
        )),
    }
}

/// Where a marginal came from, echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalSource {
    Inline,
    File(String),
    Grid(GridSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedMarginal {
    pub source: MarginalSource,
    pub measure: DiscreteMeasure,
}

/// Builds marginals in config order; grid marginal `k` (counting grids only)
/// draws from stream `k + 1` of the run seed.
struct MarginalResolver<'a> {
    base_dir: &'a Path,
    seed: u64,
    grids: u64,
}

impl MarginalResolver<'_> {
    fn resolve(&mut self, node: Node<'_>) -> CliResult<ResolvedMarginal> {
        let path = node.path;
        if !node.value.is_object() {
            return Err(CliError::invalid(path, "expected an object"));
        }
        if let Some(file) = node.opt("file") {
            let file_path = node.child_path("file");
            let name = file
                .as_str()
                .ok_or_else(|| CliError::invalid(&file_path, "expected a string"))?;
            let full = self.base_dir.join(name);
            let text = fs::read_to_string(&full).map_err(|e| {
                CliError::invalid(&file_path, format!("cannot read {}: {e}", full.display()))
            })?;
            let raw: Value = serde_json::from_str(&text).map_err(|e| {
                CliError::invalid(
                    &file_path,
                    format!("{} is not valid JSON: {e}", full.display()),
                )
            })?;
            let m: MeasureJson = parse_as(&raw, &file_path)?;
            let measure = DiscreteMeasure::try_from(m)
                .map_err(|e| CliError::invalid(&file_path, e.to_string()))?;
            return Ok(ResolvedMarginal {
                source: MarginalSource::File(name.to_string()),
                measure,
            });
        }
        if let Some(grid) = node.opt("grid") {
            let grid_path = node.child_path("grid");
            let g = Node {
                value: grid,
                path: &grid_path,
            };
            for key in ["box", "n", "density"] {
                g.req(key)?;
            }
            let spec: GridSpec = parse_as(grid, &grid_path)?;
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            self.grids += 1;
            rng.set_stream(self.grids);
            let measure = spec
                .build(&mut rng)
                .map_err(|e| CliError::invalid(&grid_path, e.to_string()))?;
            return Ok(ResolvedMarginal {
                source: MarginalSource::Grid(spec),
                measure,
            });
        }
        if node.opt("points").is_some() {
            node.req("weights")?;
            node.req("d")?;
            let m: MeasureJson = parse_as(node.value, path)?;
            let measure =
                DiscreteMeasure::try_from(m).map_err(|e| CliError::invalid(path, e.to_string()))?;
            return Ok(ResolvedMarginal {
                source: MarginalSource::Inline,
                measure,
            });
        }
        Err(CliError::invalid(
            path,
            "marginal needs `points`/`weights`/`d`, `file` or `grid`",
        ))
    }

    fn resolve_list(&mut self, root: Node<'_>, key: &str) -> CliResult<Vec<ResolvedMarginal>> {
        let items = root.array(key)?;
        if items.is_empty() {
            return Err(CliError::invalid(
                &root.child_path(key),
                "at least one marginal is required",
            ));
        }
        let base = root.child_path(key);
        items
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let p = format!("{base}[{i}]");
                self.resolve(Node { value: v, path: &p })
            })
            .collect()
    }

    fn resolve_field(&mut self, root: Node<'_>, key: &str) -> CliResult<ResolvedMarginal> {
        let p = root.child_path(key);
        self.resolve(Node {
            value: root.req(key)?,
            path: &p,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Problem {
    Transport {
        marginals: Vec<ResolvedMarginal>,
        cost: CostSpec,
    },
    Dissociation {
        rho_alpha: ResolvedMarginal,
        rho_beta: ResolvedMarginal,
        n_alpha: usize,
        n_beta: usize,
        etas: Vec<f64>,
        window: (f64, f64),
    },
    DiracDemo {
        x_marginals: Vec<ResolvedMarginal>,
        y_hat: Vec<Point>,
        random_plans: usize,
        tol: f64,
    },
}

/// A validated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub backend: Backend,
    pub out_dir: PathBuf,
    pub solver: SolverOptions,
    pub probe: ProbeOptions,
    pub entropic: EntropicOptions,
    pub problem: Problem,
}

fn parse_solver(root: Node<'_>, seed: u64) -> CliResult<(SolverOptions, ProbeOptions)> {
    let mut solver = SolverOptions::default();
    let mut probe = ProbeOptions {
        seed,
        ..ProbeOptions::default()
    };
    let Some(value) = root.opt("solver") else {
        return Ok((solver, probe));
    };
    let path = root.child_path("solver");
    let node = Node { value, path: &path };
    if let Some(v) = node.usize_field("pivot_limit")? {
        solver.pivot_limit = v;
    }
    if let Some(v) = node.f64_field("mass_tol")? {
        if !(v >= 0.0) {
            return Err(CliError::invalid(
                &node.child_path("mass_tol"),
                "must be nonnegative",
            ));
        }
        solver.mass_tol = v;
        probe.mass_tol = v;
    }
    if let Some(pv) = node.opt("probe") {
        let ppath = node.child_path("probe");
        let p = Node {
            value: pv,
            path: &ppath,
        };
        if let Some(t) = p.usize_field("trials")? {
            if t < 2 {
                return Err(CliError::invalid(
                    &p.child_path("trials"),
                    "must be at least 2",
                ));
            }
            probe.trials = t;
        }
        if let Some(dl) = p.f64_field("delta")? {
            if !(dl >= 0.0) {
                return Err(CliError::invalid(
                    &p.child_path("delta"),
                    "must be nonnegative",
                ));
            }
            probe.delta = dl;
        }
        if let Some(s) = p.u64_field("seed")? {
            probe.seed = s;
        }
    }
    Ok((solver, probe))
}

fn parse_entropic(root: Node<'_>) -> CliResult<EntropicOptions> {
    let mut opts = EntropicOptions::default();
    let Some(value) = root.opt("entropic") else {
        return Ok(opts);
    };
    let path = root.child_path("entropic");
    let node = Node { value, path: &path };
    if let Some(e) = node.opt("epsilon") {
        let p = node.child_path("epsilon");
        let list = f64_list(e, &p)?;
        if list.is_empty() || list.iter().any(|x| !(*x > 0.0)) {
            return Err(CliError::invalid(&p, "epsilon values must be positive"));
        }
        if list.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(CliError::invalid(
                &p,
                "epsilon schedule must be strictly decreasing",
            ));
        }
        opts.epsilon = list;
    }
    if let Some(t) = node.f64_field("tol")? {
        opts.tol = t;
    }
    if let Some(m) = node.usize_field("max_iter")? {
        opts.max_iter = m;
    }
    Ok(opts)
}

fn parse_etas(root: Node<'_>, default: Vec<f64>) -> CliResult<Vec<f64>> {
    let Some(v) = root.opt("eta") else {
        return Ok(default);
    };
    let path = root.child_path("eta");
    let etas = if let Some(g) = v.get("geometric") {
        let gp = format!("{path}.geometric");
        let node = Node {
            value: g,
            path: &gp,
        };
        let lo = node.f64_field("lo")?.ok_or_else(|| {
            CliError::invalid(&node.child_path("lo"), "required field is missing")
        })?;
        let hi = node.f64_field("hi")?.ok_or_else(|| {
            CliError::invalid(&node.child_path("hi"), "required field is missing")
        })?;
        let n = node
            .usize_field("n")?
            .ok_or_else(|| CliError::invalid(&node.child_path("n"), "required field is missing"))?;
        if !(lo > 0.0 && hi >= lo) {
            return Err(CliError::invalid(&gp, "need 0 < lo <= hi"));
        }
        dissociation::geometric_etas(lo, hi, n)
    } else {
        f64_list(v, &path)?
    };
    if etas.is_empty() {
        return Err(CliError::invalid(&path, "at least one eta is required"));
    }
    if let Some(i) = etas.iter().position(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(CliError::invalid(
            &format!("{path}[{i}]"),
            "eta must be positive",
        ));
    }
    Ok(etas)
}

/// Validates a parsed config. CLI overrides take precedence over config values.
pub fn validate_config(
    raw: &Value,
    base_dir: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
    backend_override: Option<Backend>,
) -> CliResult<RunConfig> {
    let root = Node {
        value: raw,
        path: "",
    };
    if !raw.is_object() {
        return Err(CliError::invalid("$", "config must be a JSON object"));
    }
    match root.u64_field("schema_version")? {
        None => {
            return Err(CliError::invalid(
                "schema_version",
                "required field is missing",
            ))
        }
        Some(CONFIG_SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(CliError::invalid(
                "schema_version",
                format!("unsupported version {v}, expected {CONFIG_SCHEMA_VERSION}"),
            ))
        }
    }
    let command_name = root.str_field("command")?;
    let command = Command::parse(command_name).ok_or_else(|| {
        CliError::invalid(
            "command",
            format!("unknown command `{command_name}` (expected solve, dissociate, taylor-check, monge-check or dirac-demo)"),
        )
    })?;
    let seed = match seed_override {
        Some(s) => s,
        None => root.u64_field("seed")?.unwrap_or(0),
    };
    let backend = match backend_override {
        Some(b) => b,
        None => match root.opt("backend") {
            None => Backend::Lp,
            Some(v) => v
                .as_str()
                .ok_or_else(|| CliError::invalid("backend", "expected a string"))?
                .parse()
                .map_err(|e: String| CliError::invalid("backend", e))?,
        },
    };
    let (solver, probe) = parse_solver(root, seed)?;
    let entropic = parse_entropic(root)?;
    let mut resolver = MarginalResolver {
        base_dir,
        seed,
        grids: 0,
    };

    let problem = match command {
        Command::Solve | Command::MongeCheck => {
            if command == Command::MongeCheck && backend != Backend::Lp {
                return Err(CliError::invalid(
                    "backend",
                    "monge-check requires the lp backend",
                ));
            }
            let cost_node = root.req("cost")?;
            let cn = Node {
                value: cost_node,
                path: "cost",
            };
            for key in ["family", "Na", "d"] {
                cn.req(key)?;
            }
            let cost: CostSpec = parse_as(cost_node, "cost")?;
            cost.validate()
                .map_err(|e| CliError::invalid("cost", e.to_string()))?;
            let marginals = resolver.resolve_list(root, "marginals")?;
            if marginals.len() != cost.num_axes() {
                return Err(CliError::invalid(
                    "marginals",
                    format!(
                        "cost needs {} marginals, {} given",
                        cost.num_axes(),
                        marginals.len()
                    ),
                ));
            }
            if let Some(i) = marginals.iter().position(|m| m.measure.dim() != cost.d) {
                return Err(CliError::invalid(
                    &format!("marginals[{i}]"),
                    format!(
                        "dimension {} differs from cost.d = {}",
                        marginals[i].measure.dim(),
                        cost.d
                    ),
                ));
            }
            Problem::Transport { marginals, cost }
        }
        Command::Dissociate | Command::TaylorCheck => {
            let rho_alpha = resolver.resolve_field(root, "rho_alpha")?;
            let rho_beta = resolver.resolve_field(root, "rho_beta")?;
            if rho_alpha.measure.dim() != rho_beta.measure.dim() {
                return Err(CliError::invalid(
                    "rho_beta",
                    "dimension differs from rho_alpha",
                ));
            }
            let n_alpha = root
                .usize_field("Na")?
                .ok_or_else(|| CliError::invalid("Na", "required field is missing"))?;
            let n_beta = root
                .usize_field("Nb")?
                .ok_or_else(|| CliError::invalid("Nb", "required field is missing"))?;
            if n_alpha == 0 {
                return Err(CliError::invalid("Na", "must be at least 1"));
            }
            if n_beta == 0 {
                return Err(CliError::invalid("Nb", "must be at least 1"));
            }
            let window = match root.opt("window") {
                None => (1e-3, 1e-2),
                Some(v) => {
                    let w = f64_list(v, "window")?;
                    if w.len() != 2 || !(w[0] > 0.0 && w[1] >= w[0]) {
                        return Err(CliError::invalid(
                            "window",
                            "expected [lo, hi] with 0 < lo <= hi",
                        ));
                    }
                    (w[0], w[1])
                }
            };
            let default_etas = if command == Command::TaylorCheck {
                dissociation::geometric_etas(window.0, window.1, 8)
            } else {
                dissociation::geometric_etas(1e-3, 0.5, 16)
            };
            let etas = parse_etas(root, default_etas)?;
            Problem::Dissociation {
                rho_alpha,
                rho_beta,
                n_alpha,
                n_beta,
                etas,
                window,
            }
        }
        Command::DiracDemo => {
            if backend != Backend::Lp {
                return Err(CliError::invalid(
                    "backend",
                    "dirac-demo requires the lp backend",
                ));
            }
            let x_marginals = resolver.resolve_list(root, "x_marginals")?;
            let d = x_marginals[0].measure.dim();
            if let Some(i) = x_marginals.iter().position(|m| m.measure.dim() != d) {
                return Err(CliError::invalid(
                    &format!("x_marginals[{i}]"),
                    "dimensions differ",
                ));
            }
            let y_hat: Vec<Point> = parse_as(root.req("y_hat")?, "y_hat")?;
            if y_hat.is_empty() {
                return Err(CliError::invalid(
                    "y_hat",
                    "at least one position is required",
                ));
            }
            if let Some(i) = y_hat.iter().position(|y| y.len() != d) {
                return Err(CliError::invalid(
                    &format!("y_hat[{i}]"),
                    format!("expected {d} coordinates"),
                ));
            }
            let random_plans = root.usize_field("random_plans")?.unwrap_or(20);
            let tol = root.f64_field("tol")?.unwrap_or(1e-12);
            Problem::DiracDemo {
                x_marginals,
                y_hat,
                random_plans,
                tol,
            }
        }
    };

    Ok(RunConfig {
        command,
        seed,
        backend,
        out_dir: out_dir.to_path_buf(),
        solver,
        probe,
        entropic,
        problem,
    })
}

/// Collects artifacts in memory; written out together with the manifest.
#[derive(Default)]
struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }

    fn add_json(&mut self, name: &str, value: &impl Serialize) {
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        self.add(name, text);
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the plot-ready table of a dissociation report.
pub fn emit_plot_data(report: &DissociationReport, path: &Path) -> CliResult<()> {
    let table = dissociation::plot_table(report).map_err(|e| CliError::Solver {
        status: "empty_report".into(),
        message: e.to_string(),
    })?;
    fs::write(path, table).map_err(io_err(path))
}

fn write_all(out_dir: &Path, config: &RunConfig, artifacts: Artifacts) -> CliResult<()> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut listing = Vec::new();
    let mut files = artifacts.files;
    files.sort_by(|a, b| a.0.cmp(&b.0));
    for (name, bytes) in &files {
        let path = out_dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        listing.push(json!({
            "path": name,
            "bytes": bytes.len(),
            "sha256": hex::encode(Sha256::digest(bytes)),
        }));
    }
    let manifest = json!({
        "schema_version": CONFIG_SCHEMA_VERSION,
        "command": config.command,
        "seed": config.seed,
        "backend": config.backend,
        "files": listing,
    });
    let path = out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))
}

fn measures(list: &[ResolvedMarginal]) -> Vec<DiscreteMeasure> {
    list.iter().map(|m| m.measure.clone()).collect()
}

fn sources(list: &[ResolvedMarginal]) -> Vec<&MarginalSource> {
    list.iter().map(|m| &m.source).collect()
}

fn lp_summary(report: &SolveReport, mass_tol: f64) -> Value {
    let support: Vec<Value> = report
        .coupling
        .entries()
        .iter()
        .filter(|(_, m)| *m > mass_tol)
        .map(|(t, m)| json!({ "tuple": t, "mass": m }))
        .collect();
    json!({
        "value": report.value,
        "dual_value": report.dual_value,
        "duality_gap": report.duality_gap(),
        "pivots": report.pivots,
        "support": support,
        "potentials": report.potentials.tables,
    })
}

fn run_transport(
    config: &RunConfig,
    marginals: &[ResolvedMarginal],
    spec: &CostSpec,
) -> CliResult<Artifacts> {
    let ms = measures(marginals);
    let cost = cost_tensor(spec, &ms).map_err(|e| CliError::Solver {
        status: "invalid_cost".into(),
        message: e.to_string(),
    })?;
    let mut out = Artifacts::default();
    let header = json!({
        "schema_version": CONFIG_SCHEMA_VERSION,
        "command": config.command,
        "backend": config.backend,
        "seed": config.seed,
        "cost": spec,
        "marginals": sources(marginals),
    });
    match (config.command, config.backend) {
        (Command::Solve, Backend::Entropic) => {
            let e = &config.entropic;
            let run = epsilon_schedule_solve(&cost, &ms, &e.epsilon, e.tol, e.max_iter)?;
            let mut report = header;
            report["status"] = json!(run.result.status);
            report["value"] = json!(run.result.value);
            report["marginal_error"] = json!(run.result.marginal_error);
            report["trace"] = json!(run.trace);
            report["potentials"] = json!(run.result.state.potentials);
            out.add_json("report.json", &report);
        }
        (Command::Solve, Backend::Lp) => {
            let solved = solve_lp_with(&cost, &ms, &config.solver)?;
            let cert = verify_splitting(&solved, &cost, 1e-8);
            let mut report = header;
            report["status"] = json!(solved.status);
            report["solution"] = lp_summary(&solved, config.solver.mass_tol);
            report["certificate"] = json!({
                "valid": cert.valid,
                "max_excess": cert.max_excess,
                "max_support_gap": cert.max_support_gap,
                "violation_count": cert.violation_count,
            });
            out.add_json("report.json", &report);
        }
        (Command::MongeCheck, _) => {
            let solved = solve_lp_with(&cost, &ms, &config.solver)?;
            let probe = uniqueness_probe(&cost, &ms, &config.probe, &config.solver)?;
            let diag =
                monge_diagnostics(&solved.coupling, config.solver.mass_tol).with_uniqueness(&probe);
            let mut report = header;
            report["status"] = json!(solved.status);
            report["solution"] = lp_summary(&solved, config.solver.mass_tol);
            report["monge"] = json!(diag);
            report["probe"] = json!({
                "unique": probe.unique,
                "supports_identical": probe.supports_identical,
                "value_spread": probe.value_spread,
                "spread_bound": probe.spread_bound,
                "trials": probe.trials.len(),
                "delta": config.probe.delta,
                "seed": config.probe.seed,
            });
            out.add_json("report.json", &report);
        }
        _ => unreachable!("transport problems only back solve and monge-check"),
    }
    Ok(out)
}

fn run_dissociation(config: &RunConfig) -> CliResult<Artifacts> {
    let Problem::Dissociation {
        rho_alpha,
        rho_beta,
        n_alpha,
        n_beta,
        etas,
        window,
    } = &config.problem
    else {
        unreachable!()
    };
    let opts = BackendOptions {
        lp: config.solver.clone(),
        entropic: config.entropic.clone(),
    };
    let mut report = dissociation::dissociation_curve(
        &rho_alpha.measure,
        &rho_beta.measure,
        *n_alpha,
        *n_beta,
        etas,
        config.backend,
        &opts,
    )?;
    report.metadata.seeds = vec![config.seed];
    let mut out = Artifacts::default();
    out.add("dissociation.csv", report.to_csv());
    if let Ok(table) = dissociation::plot_table(&report) {
        out.add("plot.txt", table);
    }
    let sources = json!({ "rho_alpha": rho_alpha.source, "rho_beta": rho_beta.source });
    if config.command == Command::TaylorCheck {
        let slopes = dissociation::taylor_slope_check(&report, *window)?;
        out.add_json(
            "report.json",
            &json!({
                "schema_version": CONFIG_SCHEMA_VERSION,
                "command": config.command,
                "sources": sources,
                "slopes": slopes,
                "expected": { "slope2": 3.0, "slope3": 4.0 },
                "curve": report,
            }),
        );
    } else {
        let mut value = serde_json::to_value(&report).expect("report serializes");
        value["sources"] = sources;
        out.add_json("report.json", &value);
    }
    Ok(out)
}

fn run_dirac(config: &RunConfig) -> CliResult<Artifacts> {
    let Problem::DiracDemo {
        x_marginals,
        y_hat,
        random_plans,
        tol,
    } = &config.problem
    else {
        unreachable!()
    };
    let report = dissociation::dirac_degeneracy_demo(
        &measures(x_marginals),
        y_hat,
        *random_plans,
        config.seed,
        *tol,
        &config.solver,
    )?;
    let mut out = Artifacts::default();
    out.add_json(
        "report.json",
        &json!({
            "schema_version": CONFIG_SCHEMA_VERSION,
            "command": config.command,
            "seed": config.seed,
            "x_marginals": sources(x_marginals),
            "y_hat": y_hat,
            "demo": report,
        }),
    );
    Ok(out)
}

/// Executes a validated config and writes its artifacts.
pub fn run(config: &RunConfig) -> CliResult<()> {
    let artifacts = match (&config.problem, config.command) {
        (Problem::Transport { marginals, cost }, _) => run_transport(config, marginals, cost),
        (Problem::Dissociation { .. }, _) => run_dissociation(config),
        (Problem::DiracDemo { .. }, _) => run_dirac(config),
    };
    match artifacts {
        Ok(a) => write_all(&config.out_dir, config, a),
        Err(CliError::Solver { status, message }) => {
            let mut failure = Artifacts::default();
            failure.add_json(
                "report.json",
                &json!({
                    "schema_version": CONFIG_SCHEMA_VERSION,
                    "command": config.command,
                    "status": status,
                    "error": message,
                }),
            );
            write_all(&config.out_dir, config, failure)?;
            Err(CliError::Solver { status, message })
        }
        Err(e) => Err(e),
    }
}

/// Reads, validates and runs; returns the process exit code.
pub fn run_args(args: &Args) -> i32 {
    let result = (|| {
        let text = fs::read_to_string(&args.config).map_err(|e| {
            CliError::invalid(
                "$",
                format!("cannot read config {}: {e}", args.config.display()),
            )
        })?;
        let raw: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::invalid("$", format!("config is not valid JSON: {e}")))?;
        let base = args.config.parent().unwrap_or_else(|| Path::new("."));
        let config = validate_config(&raw, base, &args.out, args.seed, args.backend)?;
        run(&config)
    })();
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main_from_env() -> i32 {
    run_args(&Args::parse())
}
