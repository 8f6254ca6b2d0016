//! TOML run configuration and its validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use plap_core::implicit_step::InitialGuess;
use plap_core::ldp::{GradientMode, MisfitKind, RateOptions};
use plap_core::{Control, Field, Grid, Model, Multiplier, NoiseModel, PLaplaceOperator, PicardOptions, SolverOptions};

use crate::error::CliError;
use crate::Subcommand;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: Option<GridConfig>,
    pub time: Option<TimeConfig>,
    pub operator: Option<OperatorConfig>,
    #[serde(default)]
    pub initial: InitialConfig,
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub picard: PicardConfig,
    #[serde(default)]
    pub control: ControlConfig,
    pub step_check: Option<StepCheckConfig>,
    pub skeleton: Option<SkeletonConfig>,
    pub simulate: Option<SimulateConfig>,
    pub c1: Option<C1Config>,
    pub c2: Option<C2Config>,
    pub rate: Option<RateConfig>,
    pub rare_event: Option<RareEventConfig>,
    pub tci: Option<TciConfig>,
    pub refine: Option<RefineConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    /// Half-width `L` of the box `[-L, L]^d`.
    pub half_width: f64,
    /// Points per axis, boundary included.
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub p: f64,
    #[serde(default = "default_delta")]
    pub delta_reg: f64,
}

fn default_delta() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    Gaussian,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub kind: InitialKind,
    pub amplitude: f64,
    pub width: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self { kind: InitialKind::Gaussian, amplitude: 1.0, width: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    Additive,
    Bounded,
    Linear,
}

impl From<NoiseFamily> for Multiplier {
    fn from(f: NoiseFamily) -> Self {
        match f {
            NoiseFamily::Additive => Multiplier::Additive,
            NoiseFamily::Bounded => Multiplier::Bounded,
            NoiseFamily::Linear => Multiplier::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub family: NoiseFamily,
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default = "default_decay")]
    pub lambda_decay: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn default_modes() -> usize {
    16
}

fn default_decay() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol_residual: Option<f64>,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub linesearch_shrink: f64,
    pub initial_guess: InitialGuess,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self {
            tol_residual: d.tol_residual,
            rel_tol: d.rel_tol,
            max_iter: d.max_iter,
            linesearch_shrink: d.linesearch_shrink,
            initial_guess: d.initial_guess,
        }
    }
}

impl From<SolverConfig> for SolverOptions {
    fn from(c: SolverConfig) -> Self {
        SolverOptions {
            tol_residual: c.tol_residual,
            rel_tol: c.rel_tol,
            max_iter: c.max_iter,
            linesearch_shrink: c.linesearch_shrink,
            initial_guess: c.initial_guess,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        let d = PicardOptions::default();
        Self { tol: d.tol, max_iter: d.max_iter }
    }
}

impl From<PicardConfig> for PicardOptions {
    fn from(c: PicardConfig) -> Self {
        PicardOptions { tol: c.tol, max_iter: c.max_iter }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlKind {
    Zero,
    Constant,
    File,
}

/// Control `h`: zero, a constant vector in `ℝ^J`, or a `k,j,value` CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub kind: ControlKind,
    pub values: Vec<f64>,
    pub path: Option<PathBuf>,
    /// Radius `M` of the control ball `{‖h‖² ≤ M}`.
    pub bound: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self { kind: ControlKind::Zero, values: Vec::new(), path: None, bound: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepCheckConfig {
    pub samples: usize,
    pub p_values: Vec<f64>,
    pub fd_delta: f64,
}

impl Default for StepCheckConfig {
    fn default() -> Self {
        Self { samples: 20, p_values: vec![1.5, 2.0, 3.0, 4.0], fd_delta: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkeletonConfig {
    /// Time-increment windows as divisors of `T`.
    pub delta_divisors: Vec<usize>,
    /// Truncation levels for unbounded controls; empty solves `h` directly.
    pub clip_levels: Vec<f64>,
}

impl Default for SkeletonConfig {
    fn default() -> Self {
        Self { delta_divisors: vec![8, 16, 32, 64], clip_levels: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub epsilon: f64,
    pub samples: usize,
    /// Apply the configured control as a drift.
    pub controlled: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { epsilon: 1.0, samples: 100, controlled: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct C1Config {
    pub epsilons: Vec<f64>,
    pub samples: usize,
}

impl Default for C1Config {
    fn default() -> Self {
        Self { epsilons: vec![0.4, 0.2, 0.1, 0.05], samples: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct C2Config {
    pub amplitude: f64,
    pub mode: usize,
    pub frequencies: Vec<usize>,
    pub delta_divisors: Vec<usize>,
}

impl Default for C2Config {
    fn default() -> Self {
        Self { amplitude: 1.0, mode: 0, frequencies: vec![2, 4, 8, 16], delta_divisors: vec![8, 16, 32, 64] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateTarget {
    /// The free flow `h = 0`.
    Flow,
    /// The skeleton driven by the configured control.
    Planted,
    /// The free flow started from a different initial state; unreachable.
    Shifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateConfig {
    pub target: RateTarget,
    pub weight: f64,
    pub misfit: MisfitKind,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub misfit_tol: Option<f64>,
    pub gradient: GradientMode,
}

impl Default for RateConfig {
    fn default() -> Self {
        let d = RateOptions::default();
        Self {
            target: RateTarget::Planted,
            weight: 1e3,
            misfit: MisfitKind::Sup,
            max_iter: d.max_iter,
            grad_tol: d.grad_tol,
            misfit_tol: d.misfit_tol,
            gradient: d.gradient,
        }
    }
}

impl RateConfig {
    pub fn options(&self) -> RateOptions {
        RateOptions {
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            misfit_tol: self.misfit_tol,
            gradient: self.gradient,
            ..RateOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RareEventConfig {
    pub epsilons: Vec<f64>,
    pub gammas: Vec<f64>,
    pub samples: usize,
}

impl Default for RareEventConfig {
    fn default() -> Self {
        Self { epsilons: vec![0.4, 0.3, 0.2, 0.15], gammas: vec![0.05, 0.1], samples: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TciConfig {
    pub samples: usize,
    /// Each entry is a constant-in-time `g ∈ ℝ^J` (shorter vectors are zero-padded).
    pub controls: Vec<Vec<f64>>,
}

impl Default for TciConfig {
    fn default() -> Self {
        Self { samples: 200, controls: vec![vec![1.0], vec![0.5, 0.5], vec![0.0, 0.0, 1.0]] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub levels: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { levels: 3 }
    }
}

/// One failed constraint: a dotted field path and what is wrong with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<Diagnostic>,
    /// Advisory findings that do not block a run.
    pub notes: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn diagnostic_count(&self) -> usize {
        self.errors.len() + self.notes.len()
    }
}

/// Parsed config plus the SHA-256 of its exact bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
    pub base_dir: PathBuf,
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let config = parse_config(&text)?;
    Ok(LoadedConfig {
        config,
        hash: config_hash(&text),
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl RunConfig {
    /// Checks every constraint relevant to `sub` without running any solver.
    pub fn validate(&self, sub: Subcommand) -> ValidationReport {
        let mut rep = ValidationReport::default();
        let err = |rep: &mut ValidationReport, f: &str, m: String| rep.errors.push(Diagnostic::new(f, m));
        let needs = sub.required_blocks();
        for (name, present) in [
            ("grid", self.grid.is_some()),
            ("time", self.time.is_some()),
            ("operator", self.operator.is_some()),
            ("noise", self.noise.is_some()),
            ("step_check", self.step_check.is_some()),
            ("c1", self.c1.is_some()),
            ("c2", self.c2.is_some()),
            ("rate", self.rate.is_some()),
            ("rare_event", self.rare_event.is_some()),
            ("tci", self.tci.is_some()),
            ("refine", self.refine.is_some()),
        ] {
            if needs.contains(&name) && !present {
                err(&mut rep, name, format!("missing [{name}] block required by `{}`", sub.name()));
            }
        }
        if let Some(g) = &self.grid {
            if !(g.dim == 1 || g.dim == 2) {
                err(&mut rep, "grid.dim", format!("dimension must be 1 or 2, got {}", g.dim));
            }
            if !positive(g.half_width) {
                err(&mut rep, "grid.half_width", format!("must be positive, got {}", g.half_width));
            }
            if g.n < 3 {
                err(&mut rep, "grid.n", format!("need at least 3 points per axis, got {}", g.n));
            }
        }
        if let Some(t) = &self.time {
            if !positive(t.horizon) {
                err(&mut rep, "time.horizon", format!("T must be positive, got {}", t.horizon));
            }
            if t.steps == 0 {
                err(&mut rep, "time.steps", "K must be at least 1".into());
            }
        }
        if let Some(o) = &self.operator {
            if !(o.p > 1.0 && o.p.is_finite()) {
                err(&mut rep, "operator.p", format!("p must exceed 1, got {}", o.p));
            }
            if !(o.delta_reg >= 0.0 && o.delta_reg.is_finite()) {
                err(&mut rep, "operator.delta_reg", format!("must be nonnegative, got {}", o.delta_reg));
            }
        }
        if self.initial.kind == InitialKind::Gaussian && !positive(self.initial.width) {
            err(&mut rep, "initial.width", format!("must be positive, got {}", self.initial.width));
        }
        if !self.initial.amplitude.is_finite() {
            err(&mut rep, "initial.amplitude", "must be finite".into());
        }
        if let Err(e) = SolverOptions::from(self.solver).validate() {
            err(&mut rep, "solver", e.to_string());
        }
        if !positive(self.picard.tol) || self.picard.max_iter == 0 {
            err(&mut rep, "picard", "tol must be positive and max_iter at least 1".into());
        }
        self.validate_noise(sub, &mut rep);
        self.validate_control(&mut rep);
        self.validate_experiments(sub, &mut rep);
        rep
    }

    fn validate_noise(&self, sub: Subcommand, rep: &mut ValidationReport) {
        let Some(nc) = &self.noise else { return };
        if nc.modes == 0 {
            rep.errors.push(Diagnostic::new("noise.modes", "J must be at least 1"));
        }
        if !(nc.lambda_decay >= 0.0 && nc.lambda_decay.is_finite()) {
            rep.errors.push(Diagnostic::new("noise.lambda_decay", format!("must be nonnegative, got {}", nc.lambda_decay)));
        }
        if !(nc.amplitude >= 0.0 && nc.amplitude.is_finite()) {
            rep.errors.push(Diagnostic::new("noise.amplitude", format!("must be nonnegative, got {}", nc.amplitude)));
        }
        if !rep.errors.is_empty() {
            return;
        }
        let Some(grid) = self.build_grid_opt() else { return };
        let noise = match NoiseModel::geometric(grid, nc.modes, nc.lambda_decay, nc.amplitude, nc.family.into()) {
            Ok(n) => n,
            Err(e) => {
                rep.errors.push(Diagnostic::new("noise", e.to_string()));
                return;
            }
        };
        if let Err(e) = noise.certify_constants(64, self.seed) {
            rep.errors.push(Diagnostic::new("noise", format!("constant certification failed: {e}")));
        }
        if noise.constants().sigma_bar_b.is_none() {
            if sub == Subcommand::Tci {
                rep.errors.push(Diagnostic::new(
                    "noise.family",
                    "the coupling check needs a bounded coefficient (additive or bounded family)",
                ));
            } else {
                rep.notes.push(Diagnostic::new(
                    "noise.family",
                    "linear multiplier: Lipschitz and growth constants hold, the boundedness constant does not",
                ));
            }
        }
        if noise.is_silent() {
            rep.notes.push(Diagnostic::new("noise", "all noise eigenvalues vanish"));
        }
    }

    fn validate_control(&self, rep: &mut ValidationReport) {
        let c = &self.control;
        if !positive(c.bound) {
            rep.errors.push(Diagnostic::new("control.bound", format!("M must be positive, got {}", c.bound)));
        }
        match c.kind {
            ControlKind::Constant => {
                if c.values.is_empty() || c.values.iter().any(|v| !v.is_finite()) {
                    rep.errors.push(Diagnostic::new("control.values", "constant control needs finite values"));
                }
                if let Some(nc) = &self.noise {
                    if c.values.len() > nc.modes {
                        rep.errors.push(Diagnostic::new(
                            "control.values",
                            format!("{} values for {} noise modes", c.values.len(), nc.modes),
                        ));
                    }
                }
            }
            ControlKind::File => {
                if c.path.is_none() {
                    rep.errors.push(Diagnostic::new("control.path", "file control needs a path"));
                }
            }
            ControlKind::Zero => {}
        }
    }

    fn validate_experiments(&self, sub: Subcommand, rep: &mut ValidationReport) {
        let mut err = |f: &str, m: String| rep.errors.push(Diagnostic::new(f, m));
        let steps = self.time.map(|t| t.steps);
        let check_divisors = |err: &mut dyn FnMut(&str, String), f: &str, ds: &[usize]| {
            if ds.is_empty() {
                err(f, "need at least one divisor".into());
            }
            if let Some(k) = steps {
                for d in ds {
                    if *d == 0 || k % d != 0 {
                        err(f, format!("T/{d} is not a multiple of the step T/{k}"));
                    }
                }
            }
        };
        if let Some(s) = &self.step_check {
            if s.samples == 0 {
                err("step_check.samples", "need at least one sample".into());
            }
            for p in &s.p_values {
                if !(*p > 1.0) {
                    err("step_check.p_values", format!("p must exceed 1, got {p}"));
                }
            }
        }
        if sub == Subcommand::Skeleton {
            let s = self.skeleton_or_default();
            check_divisors(&mut err, "skeleton.delta_divisors", &s.delta_divisors);
            if s.clip_levels.iter().any(|l| !positive(*l)) {
                err("skeleton.clip_levels", "levels must be positive".into());
            }
        }
        if sub == Subcommand::Simulate {
            let s = self.simulate.clone().unwrap_or_default();
            if !(s.epsilon >= 0.0 && s.epsilon.is_finite()) {
                err("simulate.epsilon", format!("must be nonnegative, got {}", s.epsilon));
            }
            if s.samples == 0 {
                err("simulate.samples", "need at least one sample".into());
            }
        }
        if let Some(c) = &self.c1 {
            if c.epsilons.is_empty() || c.epsilons.iter().any(|e| !positive(*e)) {
                err("c1.epsilons", "need positive epsilons".into());
            }
            if c.samples == 0 {
                err("c1.samples", "need at least one sample".into());
            }
        }
        if let Some(c) = &self.c2 {
            if let Some(nc) = &self.noise {
                if c.mode >= nc.modes {
                    err("c2.mode", format!("mode {} outside 0..{}", c.mode, nc.modes));
                }
            }
            if let Some(k) = steps {
                for n in &c.frequencies {
                    if *n == 0 || 2 * n > k {
                        err("c2.frequencies", format!("frequency {n} not resolved by {k} steps"));
                    }
                }
            }
            if c.frequencies.is_empty() {
                err("c2.frequencies", "need at least one frequency".into());
            }
            check_divisors(&mut err, "c2.delta_divisors", &c.delta_divisors);
            let m = self.control.bound;
            if let (Some(t), true) = (self.time, c.amplitude.is_finite()) {
                let pert = c.amplitude * c.amplitude * t.horizon;
                if pert > m {
                    err("c2.amplitude", format!("perturbation norm² {pert} exceeds control bound {m}"));
                }
            }
        }
        if let Some(r) = &self.rate {
            if !positive(r.weight) {
                err("rate.weight", format!("must be positive, got {}", r.weight));
            }
            if let (Some(nc), Some(k)) = (&self.noise, steps) {
                if nc.modes * k > plap_core::ldp::MAX_CONTROL_PARAMS {
                    err(
                        "rate",
                        format!("J·K = {} exceeds the limit {}", nc.modes * k, plap_core::ldp::MAX_CONTROL_PARAMS),
                    );
                }
            }
        }
        if let Some(r) = &self.rare_event {
            if r.epsilons.is_empty() || r.epsilons.iter().any(|e| !positive(*e)) {
                err("rare_event.epsilons", "need positive epsilons".into());
            }
            if r.gammas.is_empty() || r.gammas.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
                err("rare_event.gammas", "need nonnegative gammas".into());
            }
            if r.samples == 0 {
                err("rare_event.samples", "need at least one sample".into());
            }
        }
        if let Some(t) = &self.tci {
            if t.samples < 2 {
                err("tci.samples", "need at least 2 coupled pairs".into());
            }
            if t.controls.is_empty() {
                err("tci.controls", "need at least one control".into());
            }
            for g in &t.controls {
                if g.iter().all(|v| *v == 0.0) {
                    err("tci.controls", "zero control has zero entropy".into());
                }
                if let Some(nc) = &self.noise {
                    if g.len() > nc.modes {
                        err("tci.controls", format!("{} values for {} noise modes", g.len(), nc.modes));
                    }
                }
            }
        }
        if let Some(r) = &self.refine {
            if r.levels < 2 {
                err("refine.levels", "need at least 2 levels".into());
            }
        }
    }

    /// The `[skeleton]` block, or defaults whose windows divide the step count.
    pub fn skeleton_or_default(&self) -> SkeletonConfig {
        self.skeleton.clone().unwrap_or_else(|| {
            let k = self.time.map(|t| t.steps).unwrap_or(1);
            let mut d = SkeletonConfig::default();
            d.delta_divisors.retain(|x| k % x == 0);
            if d.delta_divisors.is_empty() {
                d.delta_divisors.push(1);
            }
            d
        })
    }

    fn build_grid_opt(&self) -> Option<Grid> {
        self.grid.and_then(|g| Grid::new(g.dim, g.half_width, g.n).ok())
    }
}

/// A validated config turned into solver objects.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: Model,
    pub control: Control,
    pub picard: PicardOptions,
}

fn missing(block: &str) -> CliError {
    CliError::Config(format!("missing [{block}] block"))
}

impl LoadedConfig {
    pub fn grid(&self) -> Result<Grid, CliError> {
        let g = self.config.grid.ok_or_else(|| missing("grid"))?;
        Ok(Grid::new(g.dim, g.half_width, g.n)?)
    }

    pub fn operator(&self) -> Result<PLaplaceOperator, CliError> {
        let o = self.config.operator.ok_or_else(|| missing("operator"))?;
        Ok(PLaplaceOperator::new(o.p, o.delta_reg)?)
    }

    pub fn initial(&self, grid: &Grid) -> Field {
        let ic = self.config.initial;
        match ic.kind {
            InitialKind::Zero => grid.zeros(),
            InitialKind::Gaussian => {
                let w2 = ic.width * ic.width;
                grid.sample(|x, y| ic.amplitude * (-(x * x + y * y) / w2).exp())
            }
        }
    }

    pub fn noise(&self, grid: Grid) -> Result<NoiseModel, CliError> {
        let nc = self.config.noise.ok_or_else(|| missing("noise"))?;
        Ok(NoiseModel::geometric(grid, nc.modes, nc.lambda_decay, nc.amplitude, nc.family.into())?)
    }

    pub fn model_on(&self, grid: Grid, steps: usize) -> Result<Model, CliError> {
        let t = self.config.time.ok_or_else(|| missing("time"))?;
        let noise = self.noise(grid)?;
        Ok(Model::new(self.operator()?, noise, self.initial(&grid), t.horizon, steps, self.config.solver.into())?)
    }

    pub fn setup(&self) -> Result<Setup, CliError> {
        let t = self.config.time.ok_or_else(|| missing("time"))?;
        let model = self.model_on(self.grid()?, t.steps)?;
        let control = self.control_for(&model)?;
        Ok(Setup { model, control, picard: self.config.picard.into() })
    }

    /// The configured control on the time grid of `model`.
    pub fn control_for(&self, model: &Model) -> Result<Control, CliError> {
        let c = &self.config.control;
        let (k, j, dt) = (model.steps, model.noise.modes(), model.tau());
        let h = match c.kind {
            ControlKind::Zero => Control::zeros(k, j, dt),
            ControlKind::Constant => padded_constant(k, j, dt, &c.values)?,
            ControlKind::File => {
                let rel = c.path.as_ref().ok_or_else(|| CliError::Config("control.path missing".into()))?;
                let path = self.base_dir.join(rel);
                let file = std::fs::File::open(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                Control::read_csv(std::io::BufReader::new(file), k, j, dt)?
            }
        };
        Ok(h)
    }
}

/// Constant control with `values` in the leading modes and zeros after.
pub fn padded_constant(steps: usize, modes: usize, dt: f64, values: &[f64]) -> Result<Control, CliError> {
    if values.len() > modes {
        return Err(CliError::Config(format!("{} control values for {modes} noise modes", values.len())));
    }
    let mut v = values.to_vec();
    v.resize(modes, 0.0);
    Ok(Control::constant(steps, dt, &v))
}
