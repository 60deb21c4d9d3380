//! Experiment driver: ground truth, measurements, alternating discovery and
//! embedding loops, metrics and report files.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedding::{
    optimize, rollout, AdamConfig, CoefficientMode, DiscoveredEquation, LbfgsConfig, OptimizerConfig,
    TraceEntry, ActiveTerm,
};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid1D, Wavefield};
use crate::library::{build_system, TermDescriptor};
use crate::medium::{BoundaryCondition, BoundarySpec, MediumSpec, SourceSpec};
use crate::regression::{default_gamma_grid, default_tol_grid, pareto_gamma, stridge, ParetoCell};
use crate::sampling::{add_noise, downsample, rel_l2, MeasurementSet};
use crate::simulator::{simulate, SimConfig};

/// Version of the configuration and report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Wave speed `c(x)` of the ground-truth medium.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WaveSpeed {
    Uniform { value: f64 },
    /// Linear from `left` at x = 0 to `right` at x = L.
    Linear { left: f64, right: f64 },
    /// One value per grid node.
    Nodes { values: Vec<f64> },
}

impl WaveSpeed {
    pub fn profile(&self, grid: &Grid1D) -> Result<Field> {
        match self {
            WaveSpeed::Uniform { value } => Field::new(vec![*value; grid.nx()]),
            WaveSpeed::Linear { left, right } => {
                Field::from_fn(grid, |x| left + (right - left) * x / grid.length())
            }
            WaveSpeed::Nodes { values } => {
                let f = Field::new(values.clone())?;
                f.check_len(grid.nx(), "wave_speed.values")?;
                Ok(f)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialTerm {
    pub term: TermDescriptor,
    pub value: f64,
}

/// Starting equation that replaces the first discovery pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialEquation {
    pub terms: Vec<InitialTerm>,
    #[serde(default)]
    pub eta: Option<f64>,
}

fn default_adam_epochs() -> usize {
    200
}
fn default_lbfgs_iters() -> usize {
    100
}
fn default_complexity_weight() -> f64 {
    0.05
}
fn default_learning_rate() -> f64 {
    5e-3
}
fn default_filter_threshold() -> f64 {
    crate::embedding::DEFAULT_FILTER_THRESHOLD
}
fn default_viscous_init() -> f64 {
    -0.1
}
fn default_stride() -> usize {
    1
}

/// One experiment, as read from a JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub length: f64,
    pub nx: usize,
    pub duration: f64,
    pub nt: usize,
    pub wave_speed: WaveSpeed,
    #[serde(default)]
    pub eta: f64,
    pub f0: f64,
    pub left_boundary: BoundaryCondition,
    pub right_boundary: BoundaryCondition,
    #[serde(default = "default_stride")]
    pub stride_x: usize,
    #[serde(default = "default_stride")]
    pub stride_t: usize,
    /// Noise standard deviation as a fraction of the data's.
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default)]
    pub seed: u64,
    pub loops: usize,
    #[serde(default = "default_adam_epochs")]
    pub adam_epochs: usize,
    #[serde(default = "default_lbfgs_iters")]
    pub lbfgs_max_iters: usize,
    #[serde(default)]
    pub coefficient_mode: CoefficientMode,
    #[serde(default)]
    pub eta_mode: CoefficientMode,
    #[serde(default = "default_gamma_grid")]
    pub gamma_grid: Vec<f64>,
    #[serde(default = "default_tol_grid")]
    pub tol_grid: Vec<f64>,
    #[serde(default = "default_complexity_weight")]
    pub complexity_weight: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_filter_threshold")]
    pub filter_threshold: f64,
    /// Gaussian width, in nodes, applied to field-mode coefficient updates.
    #[serde(default)]
    pub field_smoothing: f64,
    /// Starting `u_t` coefficient after the first discovery pass.
    #[serde(default = "default_viscous_init")]
    pub viscous_init: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_equation: Option<InitialEquation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.loops == 0 {
            return bad("loops must be at least 1".into());
        }
        if self.stride_x == 0 || self.stride_t == 0 {
            return bad("strides must be at least 1".into());
        }
        if self.coefficient_mode == CoefficientMode::Field && self.loops != 1 {
            return bad("field coefficient mode runs a single discovery and embedding pass; set loops to 1".into());
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad(format!("noise_level must be non-negative, got {}", self.noise_level));
        }
        if !(self.complexity_weight >= 0.0) {
            return bad("complexity_weight must be non-negative".into());
        }
        if self.gamma_grid.iter().any(|&g| !(g >= 0.0)) || self.tol_grid.iter().any(|&t| !(t >= 0.0)) {
            return bad("regression grids must be non-negative".into());
        }
        if !self.viscous_init.is_finite() {
            return bad("viscous_init must be finite".into());
        }
        if let Some(init) = &self.initial_equation {
            if init.terms.iter().any(|t| t.term.is_viscous()) {
                return bad("give the u_t coefficient as initial_equation.eta".into());
            }
        }
        self.optimizer().validate()?;
        self.sim_config()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.length, self.nx, self.duration, self.nt)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let grid = self.grid()?;
        let c = self.wave_speed.profile(&grid)?;
        let csq = Field::new(c.values().iter().map(|v| v * v).collect())?;
        let medium = MediumSpec::new(csq, Field::constant(grid.nx(), self.eta))?;
        SimConfig::new(
            grid,
            medium,
            SourceSpec::new(self.f0)?,
            BoundarySpec::new(self.left_boundary, self.right_boundary)?,
        )
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            adam: AdamConfig {
                lr: self.learning_rate,
                epochs: self.adam_epochs,
                ..Default::default()
            },
            lbfgs: LbfgsConfig {
                max_iters: self.lbfgs_max_iters,
                ..Default::default()
            },
            coefficient_mode: self.coefficient_mode,
            eta_mode: self.eta_mode,
            filter_threshold: self.filter_threshold,
            field_smoothing: self.field_smoothing,
        }
    }
}

/// Where the regression data of a discovery pass came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Measurements,
    Prediction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermValue {
    pub term: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discovery {
    pub source: DataSource,
    pub gamma: f64,
    pub tol: f64,
    pub train_error: f64,
    /// Better-scoring candidates skipped because their rollout diverged.
    pub rejected: usize,
    pub terms: Vec<TermValue>,
    pub cells: Vec<ParetoCell>,
}

/// Summary of one coefficient field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermSummary {
    pub term: String,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

fn summarize(eq: &DiscoveredEquation) -> Vec<TermSummary> {
    eq.named_fields()
        .into_iter()
        .map(|(term, f)| TermSummary {
            term,
            mean: f.mean(),
            min: f.min(),
            max: f.max(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopReport {
    /// 1-based.
    pub index: usize,
    /// `None` when the starting equation came from the config.
    pub discovery: Option<Discovery>,
    pub initial: DiscoveredEquation,
    pub equation: DiscoveredEquation,
    pub loss: f64,
    pub eps_u: f64,
    pub trace: Vec<TraceEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub loop_index: usize,
    pub stage: String,
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Relative L2 error of the final prediction on the fine grid.
    pub eps_u: Option<f64>,
    /// Relative L2 error of `sqrt(u_xx coefficient)` against the true speed.
    pub eps_c: Option<f64>,
    /// Mean of the final `u_t` coefficient field.
    pub eta_hat: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub loop_seconds: Vec<f64>,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub config: ExperimentConfig,
    pub grid: Grid1D,
    pub measurement_shape: (usize, usize),
    pub loops: Vec<LoopReport>,
    pub failure: Option<StageFailure>,
    pub truth: Wavefield,
    pub prediction: Option<Wavefield>,
    pub metrics: Metrics,
    pub timing: Timing,
}

impl Report {
    pub fn final_equation(&self) -> Option<&DiscoveredEquation> {
        self.loops.last().map(|l| &l.equation)
    }
}

/// Ground truth and the noisy coarse measurements of an experiment.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<(Wavefield, MeasurementSet)> {
    let sim = cfg.sim_config()?;
    let truth = simulate(&sim)?;
    let m = downsample(&truth, cfg.stride_x, cfg.stride_t)?;
    let m = add_noise(&m, cfg.noise_level, cfg.seed)?;
    Ok((truth, m))
}

/// Regression pass. Pareto cells are tried in order of score and the first
/// one whose starting equation can be rolled out without blowing up wins.
fn discover(
    cfg: &ExperimentConfig,
    data: &[f64],
    shape: (usize, usize),
    spacing: (f64, f64),
    source: DataSource,
    eta_override: Option<f64>,
    stable: impl Fn(&DiscoveredEquation) -> bool,
) -> Result<(Discovery, DiscoveredEquation)> {
    let problem = build_system(data, shape.0, shape.1, spacing.0, spacing.1)?;
    let protected = [TermDescriptor::UT.index()];
    let choice = pareto_gamma(&problem, &cfg.gamma_grid, &cfg.tol_grid, cfg.complexity_weight, &protected)?;
    let mut candidates = vec![(choice.gamma, choice.tol)];
    let mut ranked: Vec<&ParetoCell> = choice.cells.iter().collect();
    ranked.sort_by(|a, b| a.score.total_cmp(&b.score));
    candidates.extend(ranked.iter().map(|c| (c.gamma, c.tol)));

    let nx = cfg.nx;
    let mut rejected = 0;
    for (gamma, tol) in candidates {
        let sol = stridge(&problem, gamma, tol, &protected)?;
        let eq = equation_from(&sol.xi, &sol.support, nx, eta_override)?;
        if !stable(&eq) {
            rejected += 1;
            continue;
        }
        if rejected > 0 {
            log::warn!("skipped {rejected} regression candidates whose rollout diverged");
        }
        let terms = crate::library::enumerate_terms();
        let discovery = Discovery {
            source,
            gamma,
            tol,
            train_error: sol.train_error,
            rejected,
            terms: sol
                .support
                .iter()
                .map(|&j| TermValue {
                    term: terms[j].name(),
                    value: sol.xi[j],
                })
                .collect(),
            cells: choice.cells,
        };
        return Ok((discovery, eq));
    }
    Err(Error::InvalidParameter(
        "every regression candidate diverges in rollout".into(),
    ))
}

/// Constant-coefficient equation from a regression result.
fn equation_from(xi: &[f64], support: &[usize], nx: usize, eta_override: Option<f64>) -> Result<DiscoveredEquation> {
    let terms = crate::library::enumerate_terms();
    let mut active = Vec::new();
    let mut eta = None;
    for &j in support {
        let t = terms[j];
        if t.is_viscous() {
            eta = Some(Field::constant(nx, eta_override.unwrap_or(xi[j])));
        } else {
            active.push(ActiveTerm {
                term: t,
                coeff: Field::constant(nx, xi[j]),
            });
        }
    }
    DiscoveredEquation::new(active, eta)
}

fn initial_equation(init: &InitialEquation, nx: usize) -> Result<DiscoveredEquation> {
    let terms: Vec<(TermDescriptor, f64)> = init.terms.iter().map(|t| (t.term, t.value)).collect();
    DiscoveredEquation::uniform(nx, &terms, init.eta)
}

/// Relative error of the recovered wave speed `sqrt(u_xx coefficient)`.
pub fn speed_error(eq: &DiscoveredEquation, c_true: &Field) -> Option<f64> {
    let f = eq.coefficient(&TermDescriptor::UXX)?;
    let c_hat: Vec<f64> = f.values().iter().map(|v| v.max(0.0).sqrt()).collect();
    rel_l2(&c_hat, c_true.values()).ok()
}

fn failure(loop_index: usize, stage: &str, e: &Error) -> StageFailure {
    StageFailure {
        loop_index,
        stage: stage.into(),
        kind: e.kind().into(),
        message: e.to_string(),
    }
}

/// Runs an experiment end to end. Configuration and simulation errors are
/// returned; failures inside a loop are recorded in the report and end the
/// run.
pub fn run_case(cfg: &ExperimentConfig) -> Result<Report> {
    let start = Instant::now();
    cfg.validate()?;
    let sim = cfg.sim_config()?;
    let grid = sim.grid;
    let (truth, m) = generate_data(cfg)?;
    let bc = sim.resolved_boundaries();
    let u0 = sim.initial_field()?;
    let c_true = cfg.wave_speed.profile(&grid)?;
    let opt = cfg.optimizer();
    let coarse = (m.nt(), m.nx());
    let coarse_spacing = (grid.dx() * cfg.stride_x as f64, grid.dt() * cfg.stride_t as f64);

    let mut loops: Vec<LoopReport> = Vec::new();
    let mut timing = Timing::default();
    let mut prediction: Option<Wavefield> = None;
    let mut fail = None;

    for k in 1..=cfg.loops {
        let t0 = Instant::now();
        let seeded = (k == 1).then_some(()).and(cfg.initial_equation.as_ref());
        let start_eq = match seeded {
            Some(init) => initial_equation(init, grid.nx()).map(|e| (e, None)),
            None => {
                let eta = (k == 1).then_some(cfg.viscous_init);
                let stable = |eq: &DiscoveredEquation| rollout(eq, &u0, &bc, &grid).is_ok();
                let found = match (&prediction, cfg.coefficient_mode) {
                    (Some(p), CoefficientMode::Scalar) => discover(
                        cfg,
                        p.as_slice(),
                        (p.nt(), p.nx()),
                        (grid.dx(), grid.dt()),
                        DataSource::Prediction,
                        eta,
                        stable,
                    ),
                    _ => discover(cfg, &m.values, coarse, coarse_spacing, DataSource::Measurements, eta, stable),
                };
                found.map(|(d, e)| (e, Some(d)))
            }
        };
        let (initial, discovery) = match start_eq {
            Ok(v) => v,
            Err(e) => {
                fail = Some(failure(k, "discovery", &e));
                break;
            }
        };
        log::info!(
            "loop {k}: start {}",
            summarize(&initial)
                .iter()
                .map(|s| format!("{}={:.6}", s.term, s.mean))
                .collect::<Vec<_>>()
                .join(" ")
        );

        let fitted = optimize(&initial, &u0, &bc, &grid, &m, &opt).and_then(|o| {
            let p = rollout(&o.equation, &u0, &bc, &grid)?;
            let eps_u = rel_l2(p.as_slice(), truth.as_slice())?;
            Ok((o, p, eps_u))
        });
        let (out, pred, eps_u) = match fitted {
            Ok(v) => v,
            Err(e) => {
                fail = Some(failure(k, "embedding", &e));
                break;
            }
        };
        log::info!(
            "loop {k}: loss {:.3e}, eps_u {:.3e}, {}",
            out.loss,
            eps_u,
            summarize(&out.equation)
                .iter()
                .map(|s| format!("{}={:.6}", s.term, s.mean))
                .collect::<Vec<_>>()
                .join(" ")
        );
        loops.push(LoopReport {
            index: k,
            discovery,
            initial,
            equation: out.equation,
            loss: out.loss,
            eps_u,
            trace: out.trace,
        });
        prediction = Some(pred);
        timing.loop_seconds.push(t0.elapsed().as_secs_f64());
    }

    let metrics = match loops.last() {
        Some(last) => Metrics {
            eps_u: Some(last.eps_u),
            eps_c: speed_error(&last.equation, &c_true),
            eta_hat: last.equation.eta.as_ref().map(Field::mean),
        },
        None => Metrics::default(),
    };
    timing.total_seconds = start.elapsed().as_secs_f64();
    Ok(Report {
        config: cfg.clone(),
        grid,
        measurement_shape: coarse,
        loops,
        failure: fail,
        truth,
        prediction,
        metrics,
        timing,
    })
}

#[derive(Serialize)]
struct LoopMetrics<'a> {
    index: usize,
    discovery: Option<&'a Discovery>,
    initial: Vec<TermSummary>,
    equation: Vec<TermSummary>,
    loss: f64,
    eps_u: f64,
    adam_epochs: usize,
    lbfgs_iterations: usize,
}

#[derive(Serialize)]
struct MetricsDocument<'a> {
    schema_version: u32,
    name: Option<&'a str>,
    noise_level: f64,
    seed: u64,
    coefficient_mode: CoefficientMode,
    measurement_shape: [usize; 2],
    loops_completed: usize,
    failure: Option<&'a StageFailure>,
    eps_u: Option<f64>,
    eps_c: Option<f64>,
    eta_hat: Option<f64>,
    final_equation: Vec<TermSummary>,
    loops: Vec<LoopMetrics<'a>>,
}

fn metrics_json(r: &Report) -> Result<String> {
    let doc = MetricsDocument {
        schema_version: SCHEMA_VERSION,
        name: r.config.name.as_deref(),
        noise_level: r.config.noise_level,
        seed: r.config.seed,
        coefficient_mode: r.config.coefficient_mode,
        measurement_shape: [r.measurement_shape.0, r.measurement_shape.1],
        loops_completed: r.loops.len(),
        failure: r.failure.as_ref(),
        eps_u: r.metrics.eps_u,
        eps_c: r.metrics.eps_c,
        eta_hat: r.metrics.eta_hat,
        final_equation: r.final_equation().map(summarize).unwrap_or_default(),
        loops: r
            .loops
            .iter()
            .map(|l| LoopMetrics {
                index: l.index,
                discovery: l.discovery.as_ref(),
                initial: summarize(&l.initial),
                equation: summarize(&l.equation),
                loss: l.loss,
                eps_u: l.eps_u,
                adam_epochs: l.trace.iter().filter(|e| e.phase == crate::embedding::Phase::Adam).count(),
                lbfgs_iterations: l
                    .trace
                    .iter()
                    .filter(|e| e.phase == crate::embedding::Phase::Lbfgs)
                    .count()
                    .saturating_sub(1),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

fn coefficients_csv(grid: &Grid1D, eq: &DiscoveredEquation) -> String {
    let fields = eq.named_fields();
    let mut s = String::from("x");
    for (name, _) in &fields {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for i in 0..grid.nx() {
        write!(s, "{}", grid.x(i)).unwrap();
        for (_, f) in &fields {
            write!(s, ",{}", f.values()[i]).unwrap();
        }
        s.push('\n');
    }
    s
}

/// `nt` lines of `nx` comma-separated values.
pub fn wavefield_csv(w: &Wavefield) -> String {
    let mut s = String::with_capacity(w.nt() * w.nx() * 22);
    for t in 0..w.nt() {
        for (i, v) in w.row(t).iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn loss_trace_csv(r: &Report) -> String {
    let mut s = String::from("loop,phase,iteration,loss\n");
    for l in &r.loops {
        for e in &l.trace {
            writeln!(s, "{},{},{},{}", l.index, e.phase, e.iteration, e.loss).unwrap();
        }
    }
    s
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory and an atomic rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Writes the report files into `dir`, creating it if needed. Returns the
/// paths written, in order.
pub fn emit_report(r: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(String, String)> = vec![("metrics.json".into(), metrics_json(r)?)];
    if !r.loops.is_empty() {
        for l in &r.loops {
            files.push((format!("coefficients_loop{}.csv", l.index), coefficients_csv(&r.grid, &l.equation)));
        }
        if let Some(p) = &r.prediction {
            files.push(("wavefield_pred.csv".into(), wavefield_csv(p)));
        }
        files.push(("wavefield_true.csv".into(), wavefield_csv(&r.truth)));
        files.push(("loss_trace.csv".into(), loss_trace_csv(r)));
    }
    let mut timing = serde_json::to_string_pretty(&r.timing)?;
    timing.push('\n');
    files.push(("timing.json".into(), timing));

    let mut written = Vec::with_capacity(files.len());
    for (name, contents) in files {
        let path = dir.join(name);
        write_atomic(&path, contents.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
