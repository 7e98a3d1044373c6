//! TOML experiment configuration: parsing with defaults, validation with the
//! offending key and line, and rendering back to text.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::analytic::{BkwSolution, BKW_DEFAULT_T0};
use crate::diagnostics::Metric;
use crate::dynamics::BlobBandwidth;
use crate::error::{Error, Result};
use crate::kernel::CollisionKernel;
use crate::score::TrainMode;

pub const DEFAULT_LEARNING_RATE: f64 = 4e-4;
pub const DEFAULT_TRAIN_STEPS: usize = 25;
pub const DEFAULT_ALPHA: f64 = 0.4;
pub const DEFAULT_INIT_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_INIT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_INIT_MAX_STEPS: usize = 20_000;

/// Relative tolerance for times that must land on the step grid.
const GRID_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Bkw,
    Gaussian { mean: Vec<f64>, variances: Vec<f64> },
}

impl InitialCondition {
    pub fn is_bkw(&self) -> bool {
        matches!(self, InitialCondition::Bkw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainModeConfig {
    /// `steps` optimizer steps per time step.
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbtmConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Optimizer steps per time step in fixed mode.
    pub steps: usize,
    pub alpha: f64,
    pub train_mode: TrainModeConfig,
    /// Relative mean-squared error at which the initial fit stops.
    pub init_threshold: f64,
    pub init_learning_rate: f64,
    pub init_max_steps: usize,
}

impl SbtmConfig {
    /// Defaults, with the deeper network for the BKW start.
    pub fn defaults(bkw: bool) -> Self {
        Self {
            hidden: if bkw { vec![100, 100] } else { vec![100] },
            learning_rate: DEFAULT_LEARNING_RATE,
            steps: DEFAULT_TRAIN_STEPS,
            alpha: DEFAULT_ALPHA,
            train_mode: TrainModeConfig::Fixed,
            init_threshold: DEFAULT_INIT_THRESHOLD,
            init_learning_rate: DEFAULT_INIT_LEARNING_RATE,
            init_max_steps: DEFAULT_INIT_MAX_STEPS,
        }
    }

    pub fn train_mode(&self) -> TrainMode {
        match self.train_mode {
            TrainModeConfig::Fixed => TrainMode::Fixed(self.steps),
            TrainModeConfig::Adaptive => TrainMode::adaptive(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverConfig {
    Sbtm(SbtmConfig),
    Blob { bandwidth: BlobBandwidth },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SolverKind {
    Sbtm,
    Blob,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Sbtm => "sbtm",
            SolverKind::Blob => "blob",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "sbtm" => Some(SolverKind::Sbtm),
            "blob" => Some(SolverKind::Blob),
            _ => None,
        }
    }
}

impl SolverConfig {
    pub fn kind(&self) -> SolverKind {
        match self {
            SolverConfig::Sbtm(_) => SolverKind::Sbtm,
            SolverConfig::Blob { .. } => SolverKind::Blob,
        }
    }

    /// Default settings of `kind` for the given initial condition.
    pub fn default_for(kind: SolverKind, initial: &InitialCondition) -> Self {
        match kind {
            SolverKind::Sbtm => SolverConfig::Sbtm(SbtmConfig::defaults(initial.is_bkw())),
            SolverKind::Blob => SolverConfig::Blob {
                bandwidth: BlobBandwidth::PerStep,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub d: usize,
    pub gamma: f64,
    pub b_const: f64,
    pub n: usize,
    pub seed: u64,
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub initial: InitialCondition,
    pub solver: SolverConfig,
    /// Columns of `metrics.csv` after `time`, in order.
    pub metrics: Vec<Metric>,
    pub snapshots: Vec<f64>,
    pub output: PathBuf,
}

impl ExperimentConfig {
    /// Number of Euler steps from `t0` to `t_end`.
    pub fn steps(&self) -> usize {
        ((self.t_end - self.t0) / self.dt).round() as usize
    }

    /// Step index of time `t` on the grid `t0 + k dt`, if it lies on it.
    pub fn step_of(&self, t: f64) -> Option<usize> {
        let k = ((t - self.t0) / self.dt).round();
        let scale = self.t_end.abs().max(self.t0.abs()).max(1.0);
        if k < 0.0 || k > self.steps() as f64 {
            return None;
        }
        ((self.t0 + k * self.dt - t).abs() <= GRID_TOLERANCE * scale).then_some(k as usize)
    }

    pub fn kernel(&self) -> Result<CollisionKernel> {
        CollisionKernel::new(self.d, self.gamma, self.b_const)
    }

    /// Metrics available for this setup, in canonical order. The density
    /// error is left out because it is costly; it is still reported at the
    /// snapshot times.
    pub fn default_metrics(initial: &InitialCondition) -> Vec<Metric> {
        Metric::ALL
            .into_iter()
            .filter(|m| *m != Metric::L2DensityErr)
            .filter(|m| initial.is_bkw() || !needs_exact_solution(*m))
            .collect()
    }
}

fn needs_exact_solution(m: Metric) -> bool {
    matches!(
        m,
        Metric::ScoreErrNormalized | Metric::L2DensityErr | Metric::WeightedLoss
    )
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    d: usize,
    gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    b_const: Option<f64>,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t0: Option<f64>,
    t_end: f64,
    dt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    snapshots: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<String>,
    initial: RawInitial,
    #[serde(skip_serializing_if = "Option::is_none")]
    solver: Option<RawSolver>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    variances: Option<Vec<f64>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    train_mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_max_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bandwidth: Option<RawBandwidth>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawBandwidth {
    Value(f64),
    Rule(String),
}

const SBTM_KEYS: [&str; 8] = [
    "hidden",
    "learning_rate",
    "steps",
    "alpha",
    "train_mode",
    "init_threshold",
    "init_learning_rate",
    "init_max_steps",
];

/// Maps keys to source lines for error messages.
struct Locator<'a> {
    text: &'a str,
}

impl Locator<'_> {
    /// Line (1-based) of `key` inside `[section]`, or of the section header
    /// when the key is absent.
    fn line(&self, section: Option<&str>, key: &str) -> Option<usize> {
        let mut current: Option<String> = None;
        let mut header = None;
        for (i, raw) in self.text.lines().enumerate() {
            let line = raw.trim();
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = Some(name.trim().to_string());
                if section == current.as_deref() {
                    header = Some(i + 1);
                }
                continue;
            }
            if current.as_deref() != section {
                continue;
            }
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
        header
    }

    /// Line of a byte offset, plus the dotted key written on that line.
    fn at_offset(&self, offset: usize) -> (usize, Option<String>) {
        let before = &self.text[..offset.min(self.text.len())];
        let line_no = before.matches('\n').count() + 1;
        let mut section = None;
        for raw in before.lines() {
            let l = raw.trim();
            if let Some(name) = l.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(name.trim().to_string());
            }
        }
        let line = self.text.lines().nth(line_no - 1).unwrap_or("").trim();
        let key = if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            Some(name.trim().to_string())
        } else {
            line.split_once('=').map(|(k, _)| {
                let k = k.trim();
                match &section {
                    Some(s) => format!("{s}.{k}"),
                    None => k.to_string(),
                }
            })
        };
        (line_no, key)
    }

    fn error(&self, section: Option<&str>, key: &str, message: impl Into<String>) -> Error {
        let path = match section {
            Some(s) => format!("{s}.{key}"),
            None => key.to_string(),
        };
        Error::Config {
            key: path,
            line: self.line(section, key),
            message: message.into(),
        }
    }
}

/// Parse and validate a TOML experiment description, filling in defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let loc = Locator { text };
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, key) = match e.span() {
            Some(span) => {
                let (line, key) = loc.at_offset(span.start);
                (Some(line), key)
            }
            None => (None, None),
        };
        Error::Config {
            key: key.unwrap_or_else(|| "<document>".into()),
            line,
            message: e.message().trim().to_string(),
        }
    })?;
    validate(raw, &loc)
}

fn positive(loc: &Locator, section: Option<&str>, key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(loc.error(section, key, format!("must be positive and finite, got {v}")))
    }
}

fn validate(raw: RawConfig, loc: &Locator) -> Result<ExperimentConfig> {
    let d = raw.d;
    if d == 0 {
        return Err(loc.error(None, "d", "dimension must be at least 1"));
    }
    if raw.n < 2 {
        return Err(loc.error(None, "n", format!("need at least 2 particles, got {}", raw.n)));
    }
    let b_const = positive(loc, None, "b_const", raw.b_const.unwrap_or(1.0))?;
    CollisionKernel::new(d, raw.gamma, b_const).map_err(|e| loc.error(None, "gamma", e.to_string()))?;

    let initial = match raw.initial.kind.as_str() {
        "bkw" => {
            if raw.initial.mean.is_some() || raw.initial.variances.is_some() {
                return Err(loc.error(Some("initial"), "kind", "bkw takes no mean or variances"));
            }
            if raw.gamma != 0.0 {
                return Err(loc.error(None, "gamma", "the bkw solution requires gamma = 0"));
            }
            InitialCondition::Bkw
        }
        "gaussian" => {
            let variances = raw
                .initial
                .variances
                .ok_or_else(|| loc.error(Some("initial"), "variances", "required for a gaussian start"))?;
            if variances.len() != d {
                return Err(loc.error(
                    Some("initial"),
                    "variances",
                    format!("expected {d} entries, got {}", variances.len()),
                ));
            }
            for &v in &variances {
                positive(loc, Some("initial"), "variances", v)?;
            }
            let mean = raw.initial.mean.unwrap_or_else(|| vec![0.0; d]);
            if mean.len() != d || mean.iter().any(|m| !m.is_finite()) {
                return Err(loc.error(Some("initial"), "mean", format!("expected {d} finite entries")));
            }
            InitialCondition::Gaussian { mean, variances }
        }
        other => {
            return Err(loc.error(
                Some("initial"),
                "kind",
                format!("unknown initial condition `{other}` (expected bkw or gaussian)"),
            ))
        }
    };

    let t0 = raw.t0.unwrap_or(if initial.is_bkw() { BKW_DEFAULT_T0 } else { 0.0 });
    if !t0.is_finite() {
        return Err(loc.error(None, "t0", "must be finite"));
    }
    if initial.is_bkw() {
        BkwSolution::new(d, b_const, t0).map_err(|e| loc.error(None, "t0", e.to_string()))?;
    }
    let dt = positive(loc, None, "dt", raw.dt)?;
    if !(raw.t_end.is_finite() && raw.t_end >= t0) {
        return Err(loc.error(None, "t_end", format!("must be at least t0 = {t0}")));
    }
    let span = raw.t_end - t0;
    let steps = (span / dt).round();
    if (steps * dt - span).abs() > GRID_TOLERANCE * raw.t_end.abs().max(t0.abs()).max(1.0) {
        return Err(loc.error(None, "t_end", "t_end - t0 must be a whole number of time steps"));
    }

    let solver = validate_solver(raw.solver, &initial, loc)?;

    let metrics = match raw.metrics {
        None => ExperimentConfig::default_metrics(&initial),
        Some(names) => {
            let mut out = Vec::with_capacity(names.len());
            for name in names {
                let m = Metric::from_name(&name)
                    .ok_or_else(|| loc.error(None, "metrics", format!("unknown metric `{name}`")))?;
                if out.contains(&m) {
                    return Err(loc.error(None, "metrics", format!("metric `{name}` listed twice")));
                }
                if needs_exact_solution(m) && !initial.is_bkw() {
                    return Err(loc.error(
                        None,
                        "metrics",
                        format!("`{name}` needs the exact solution (bkw start)"),
                    ));
                }
                if m == Metric::L2DensityErr && d > 3 {
                    return Err(loc.error(None, "metrics", "l2_density_err supports d <= 3 only"));
                }
                out.push(m);
            }
            out
        }
    };

    let cfg = ExperimentConfig {
        name: raw.name.unwrap_or_else(|| "experiment".into()),
        d,
        gamma: raw.gamma,
        b_const,
        n: raw.n,
        seed: raw.seed.unwrap_or(0),
        t0,
        t_end: raw.t_end,
        dt,
        initial,
        solver,
        metrics,
        snapshots: Vec::new(),
        output: PathBuf::new(),
    };
    let snapshots = raw.snapshots.unwrap_or_else(|| {
        if cfg.t_end > cfg.t0 {
            vec![cfg.t0, cfg.t_end]
        } else {
            vec![cfg.t0]
        }
    });
    for &t in &snapshots {
        if cfg.step_of(t).is_none() {
            return Err(loc.error(
                None,
                "snapshots",
                format!("time {t} is not on the step grid between t0 and t_end"),
            ));
        }
    }
    let output = PathBuf::from(raw.output.unwrap_or_else(|| format!("runs/{}", cfg.name)));
    Ok(ExperimentConfig {
        snapshots,
        output,
        ..cfg
    })
}

fn validate_solver(raw: Option<RawSolver>, initial: &InitialCondition, loc: &Locator) -> Result<SolverConfig> {
    let s = Some("solver");
    let Some(raw) = raw else {
        return Err(loc.error(None, "solver", "solver required"));
    };
    let Some(kind) = raw.kind.as_deref() else {
        return Err(loc.error(s, "kind", "solver required"));
    };
    match kind {
        "sbtm" => {
            if raw.bandwidth.is_some() {
                return Err(loc.error(s, "bandwidth", "only valid for the blob solver"));
            }
            let mut c = SbtmConfig::defaults(initial.is_bkw());
            if let Some(h) = raw.hidden {
                if h.is_empty() || h.contains(&0) {
                    return Err(loc.error(s, "hidden", "need at least one layer, all widths positive"));
                }
                c.hidden = h;
            }
            if let Some(v) = raw.learning_rate {
                c.learning_rate = positive(loc, s, "learning_rate", v)?;
            }
            if let Some(v) = raw.steps {
                if v == 0 {
                    return Err(loc.error(s, "steps", "must be at least 1"));
                }
                c.steps = v;
            }
            if let Some(v) = raw.alpha {
                c.alpha = positive(loc, s, "alpha", v)?;
            }
            if let Some(m) = raw.train_mode {
                c.train_mode = match m.as_str() {
                    "fixed" => TrainModeConfig::Fixed,
                    "adaptive" => TrainModeConfig::Adaptive,
                    other => {
                        return Err(loc.error(
                            s,
                            "train_mode",
                            format!("unknown mode `{other}` (expected fixed or adaptive)"),
                        ))
                    }
                };
            }
            if let Some(v) = raw.init_threshold {
                c.init_threshold = positive(loc, s, "init_threshold", v)?;
            }
            if let Some(v) = raw.init_learning_rate {
                c.init_learning_rate = positive(loc, s, "init_learning_rate", v)?;
            }
            if let Some(v) = raw.init_max_steps {
                c.init_max_steps = v;
            }
            Ok(SolverConfig::Sbtm(c))
        }
        "blob" => {
            let given = [
                raw.hidden.is_some(),
                raw.learning_rate.is_some(),
                raw.steps.is_some(),
                raw.alpha.is_some(),
                raw.train_mode.is_some(),
                raw.init_threshold.is_some(),
                raw.init_learning_rate.is_some(),
                raw.init_max_steps.is_some(),
            ];
            if let Some(i) = given.iter().position(|g| *g) {
                return Err(loc.error(s, SBTM_KEYS[i], "only valid for the sbtm solver"));
            }
            let bandwidth = match raw.bandwidth {
                None => BlobBandwidth::PerStep,
                Some(RawBandwidth::Rule(r)) if r == "silverman" => BlobBandwidth::PerStep,
                Some(RawBandwidth::Rule(r)) => {
                    return Err(loc.error(
                        s,
                        "bandwidth",
                        format!("unknown rule `{r}` (expected \"silverman\" or a number)"),
                    ))
                }
                Some(RawBandwidth::Value(v)) => BlobBandwidth::Fixed(positive(loc, s, "bandwidth", v)?),
            };
            Ok(SolverConfig::Blob { bandwidth })
        }
        other => Err(loc.error(
            s,
            "kind",
            format!("unknown solver `{other}` (expected sbtm or blob)"),
        )),
    }
}

/// Render a configuration as TOML with every field explicit, such that
/// `parse_config(&render_config(c)) == c`.
pub fn render_config(c: &ExperimentConfig) -> String {
    let initial = match &c.initial {
        InitialCondition::Bkw => RawInitial {
            kind: "bkw".into(),
            ..RawInitial::default()
        },
        InitialCondition::Gaussian { mean, variances } => RawInitial {
            kind: "gaussian".into(),
            mean: Some(mean.clone()),
            variances: Some(variances.clone()),
        },
    };
    let solver = match &c.solver {
        SolverConfig::Sbtm(s) => RawSolver {
            kind: Some("sbtm".into()),
            hidden: Some(s.hidden.clone()),
            learning_rate: Some(s.learning_rate),
            steps: Some(s.steps),
            alpha: Some(s.alpha),
            train_mode: Some(
                match s.train_mode {
                    TrainModeConfig::Fixed => "fixed",
                    TrainModeConfig::Adaptive => "adaptive",
                }
                .into(),
            ),
            init_threshold: Some(s.init_threshold),
            init_learning_rate: Some(s.init_learning_rate),
            init_max_steps: Some(s.init_max_steps),
            bandwidth: None,
        },
        SolverConfig::Blob { bandwidth } => RawSolver {
            kind: Some("blob".into()),
            bandwidth: Some(match bandwidth {
                BlobBandwidth::PerStep => RawBandwidth::Rule("silverman".into()),
                BlobBandwidth::Fixed(v) => RawBandwidth::Value(*v),
            }),
            ..RawSolver::default()
        },
    };
    let raw = RawConfig {
        name: Some(c.name.clone()),
        d: c.d,
        gamma: c.gamma,
        b_const: Some(c.b_const),
        n: c.n,
        seed: Some(c.seed),
        t0: Some(c.t0),
        t_end: c.t_end,
        dt: c.dt,
        metrics: Some(c.metrics.iter().map(|m| m.name().to_string()).collect()),
        snapshots: Some(c.snapshots.clone()),
        output: Some(c.output.to_string_lossy().into_owned()),
        initial,
        solver: Some(solver),
    };
    toml::to_string(&raw).expect("configuration is always representable")
}
