//! Desk-scale large-deviation experiments.
//!
//! * condition C1: the controlled small-noise solutions `v_ε` approach the
//!   skeleton `ū_ε` driven by the same control, in `E sup_t ‖·‖²`;
//! * condition C2: skeletons driven by weakly converging controls converge
//!   uniformly in time;
//! * rare-event frequencies `P(sup_t ‖u_ε - u_0‖ > γ)` and their normalised
//!   exponents `-ε² ln p̂`;
//! * the rate function `I(f) = inf {½‖h‖² : u_h = f}`, approximated from above
//!   by a penalised control problem.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::implicit_step::SolverOptions;
use crate::mesh::Field;
use crate::model::{Model, Trajectory};
use crate::rng::CounterRng;
use crate::skeleton::{solve_skeleton, solve_skeleton_direct, time_increment_statistic, Control, PicardOptions};
use crate::spde::simulate;
use crate::stats::{loglog_fit, mean_stderr, wilson_interval, LineFit, MeanEstimate};

/// Largest number of control coefficients the rate optimiser accepts.
pub const MAX_CONTROL_PARAMS: usize = 1024;

/// Two-sided 95% normal quantile used for Wilson intervals.
pub const WILSON_Z: f64 = 1.959_963_984_540_054;

fn check_in_ball(h: &Control, bound: f64) -> Result<()> {
    if !h.in_ball(bound * (1.0 + 1e-12)) {
        return Err(Error::ControlOutsideBall { norm_sq: h.norm_sq(), bound });
    }
    Ok(())
}

/// `log-log` fit that is only defined when every value is positive.
fn positive_loglog(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    if xs.len() >= 2 && ys.iter().all(|y| *y > 0.0 && y.is_finite()) {
        Some(loglog_fit(xs, ys))
    } else {
        None
    }
}

fn strictly_decreasing(ys: &[f64]) -> bool {
    ys.windows(2).all(|w| w[1] < w[0])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C1Cell {
    pub epsilon: f64,
    pub control_norm_sq: f64,
    /// `E sup_t ‖v_ε - ū_ε‖²`
    pub statistic: MeanEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C1Report {
    pub bound: f64,
    pub seed: u64,
    pub cells: Vec<C1Cell>,
    /// Fitted exponent of the statistic against `ε`; absent if any cell is zero.
    pub slope: Option<f64>,
    /// Cells ordered by decreasing `ε` have strictly decreasing statistics.
    pub decreasing: bool,
}

/// Monte Carlo estimate of `E sup_t ‖v_ε - ū_ε‖²` for each `ε`, with
/// `h_ε = control_for(ε)`. The same Brownian streams are reused across `ε`.
pub fn condition_c1_experiment<F>(
    model: &Model,
    control_for: F,
    eps_list: &[f64],
    n_samples: usize,
    seed: u64,
    bound: f64,
    picard: &PicardOptions,
) -> Result<C1Report>
where
    F: Fn(f64) -> Control,
{
    if n_samples == 0 || eps_list.is_empty() {
        return Err(Error::InvalidParameter("need at least one epsilon and one sample".into()));
    }
    let mut cells = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
        }
        let h = control_for(eps);
        check_in_ball(&h, bound)?;
        let skeleton = solve_skeleton(model, &h, picard)?.trajectory;
        let distances: Vec<f64> = (0..n_samples as u64)
            .into_par_iter()
            .map(|stream| {
                let path = model.noise.sample_path(model.steps, model.tau(), seed, stream)?;
                simulate(model, eps, Some(&h), &path)?.trajectory.sup_distance_sq(&skeleton)
            })
            .collect::<Result<_>>()?;
        cells.push(C1Cell { epsilon: eps, control_norm_sq: h.norm_sq(), statistic: mean_stderr(&distances) });
    }
    let mut order: Vec<&C1Cell> = cells.iter().collect();
    order.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    let means: Vec<f64> = order.iter().map(|c| c.statistic.mean).collect();
    let eps: Vec<f64> = order.iter().map(|c| c.epsilon).collect();
    Ok(C1Report {
        bound,
        seed,
        slope: positive_loglog(&eps, &means).map(|f| f.slope),
        decreasing: strictly_decreasing(&means),
        cells,
    })
}

/// Perturbations `h_n = h + a·φ_n` where `φ_n` is the cell average of
/// `√2 sin(2πnt/T)` placed in a single noise mode, rescaled so `‖φ_n‖² = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationSchedule {
    pub amplitude: f64,
    pub mode: usize,
    pub frequencies: Vec<usize>,
}

impl OscillationSchedule {
    /// `a·φ_n` on the time grid of `steps` cells of width `dt`.
    pub fn perturbation(&self, steps: usize, modes: usize, dt: f64, frequency: usize) -> Result<Control> {
        if self.mode >= modes {
            return Err(Error::InvalidParameter(format!("oscillation mode {} outside 0..{modes}", self.mode)));
        }
        if frequency == 0 || 2 * frequency > steps {
            return Err(Error::InvalidParameter(format!(
                "frequency {frequency} not resolved by {steps} steps"
            )));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::NonFinite);
        }
        let horizon = steps as f64 * dt;
        let w = 2.0 * PI * frequency as f64 / horizon;
        let avg = |k: usize| {
            let (a, b) = (k as f64 * dt, (k + 1) as f64 * dt);
            2f64.sqrt() * ((w * a).cos() - (w * b).cos()) / (w * dt)
        };
        let raw = Control::from_fn(steps, modes, dt, |k, j| if j == self.mode { avg(k) } else { 0.0 });
        let scale = self.amplitude * (horizon / raw.norm_sq()).sqrt();
        Ok(raw.scaled(scale))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C2Cell {
    pub frequency: usize,
    pub control_norm_sq: f64,
    /// `sup_t ‖ū_n - ū_h‖`
    pub sup_distance: f64,
    /// `∫ ‖ū_n(t) - ū_n(t(δ))‖² dt` for each `δ` of the report.
    pub increments: Vec<f64>,
    /// `max_δ increment(δ)/δ`
    pub increment_constant: f64,
    pub increment_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C2Report {
    pub bound: f64,
    pub amplitude: f64,
    pub deltas: Vec<f64>,
    pub cells: Vec<C2Cell>,
    /// Distances strictly decrease as the frequency increases.
    pub decreasing: bool,
    /// `max_n` of the per-frequency increment constants.
    pub uniform_increment_constant: f64,
}

/// Skeletons for `h` and each `h_n` of the schedule, with distances and
/// time-increment statistics at the given `δ` (multiples of `τ`).
pub fn condition_c2_experiment(
    model: &Model,
    h: &Control,
    schedule: &OscillationSchedule,
    deltas: &[f64],
    bound: f64,
    picard: &PicardOptions,
) -> Result<C2Report> {
    check_in_ball(h, bound)?;
    let controls = schedule
        .frequencies
        .iter()
        .map(|&n| {
            let hn = h.add(&schedule.perturbation(h.steps(), h.modes(), h.dt(), n)?)?;
            check_in_ball(&hn, bound)?;
            Ok(hn)
        })
        .collect::<Result<Vec<_>>>()?;
    let base = solve_skeleton(model, h, picard)?.trajectory;
    let cells = schedule
        .frequencies
        .par_iter()
        .zip(controls.par_iter())
        .map(|(&n, hn)| {
            let traj = solve_skeleton(model, hn, picard)?.trajectory;
            let increments = deltas
                .iter()
                .map(|&d| time_increment_statistic(&traj, d))
                .collect::<Result<Vec<_>>>()?;
            let increment_constant = deltas.iter().zip(&increments).map(|(d, s)| s / d).fold(0.0, f64::max);
            Ok(C2Cell {
                frequency: n,
                control_norm_sq: hn.norm_sq(),
                sup_distance: traj.sup_distance_sq(&base)?.sqrt(),
                increment_slope: positive_loglog(deltas, &increments).map(|f| f.slope),
                increments,
                increment_constant,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<&C2Cell> = cells.iter().collect();
    order.sort_by_key(|c| c.frequency);
    let dists: Vec<f64> = order.iter().map(|c| c.sup_distance).collect();
    Ok(C2Report {
        bound,
        amplitude: schedule.amplitude,
        deltas: deltas.to_vec(),
        decreasing: strictly_decreasing(&dists),
        uniform_increment_constant: cells.iter().map(|c| c.increment_constant).fold(0.0, f64::max),
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RareEventCell {
    pub epsilon: f64,
    pub gamma: f64,
    pub samples: usize,
    pub hits: usize,
    pub p_hat: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// `-ε² ln p̂`; absent when there are no hits.
    pub exponent: Option<f64>,
    /// `-ε² ln` of the Wilson upper limit, a lower bound on the exponent.
    pub exponent_lower_bound: f64,
    /// No hits: only the upper confidence limit on the probability is informative.
    pub upper_bound_only: bool,
}

impl RareEventCell {
    fn from_hits(epsilon: f64, gamma: f64, hits: usize, samples: usize) -> Self {
        let p_hat = hits as f64 / samples as f64;
        let (lo, hi) = wilson_interval(hits, samples, WILSON_Z);
        let normalised = |p: f64| 0.0 - epsilon * epsilon * p.ln();
        Self {
            epsilon,
            gamma,
            samples,
            hits,
            p_hat,
            wilson_low: lo,
            wilson_high: hi,
            exponent: (hits > 0).then(|| normalised(p_hat)),
            exponent_lower_bound: normalised(hi),
            upper_bound_only: hits == 0,
        }
    }
}

/// `sup_t ‖u_ε - u_0‖` for `n_samples` uncontrolled runs, where `u_0` is the
/// noiseless flow.
pub fn rare_event_distances(model: &Model, epsilon: f64, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let zero_path = model.noise.sample_path(model.steps, model.tau(), seed, 0)?;
    let reference = simulate(model, 0.0, None, &zero_path)?.trajectory;
    (0..n_samples as u64)
        .into_par_iter()
        .map(|stream| {
            let path = model.noise.sample_path(model.steps, model.tau(), seed, stream)?;
            Ok(simulate(model, epsilon, None, &path)?.trajectory.sup_distance_sq(&reference)?.sqrt())
        })
        .collect()
}

/// Frequency of `sup_t ‖u_ε - u_0‖ > γ` over precomputed distances, one cell per `γ`.
pub fn rare_event_cells(distances: &[f64], epsilon: f64, gammas: &[f64]) -> Result<Vec<RareEventCell>> {
    gammas
        .iter()
        .map(|&g| {
            if !(g >= 0.0) {
                return Err(Error::InvalidParameter(format!("gamma must be nonnegative, got {g}")));
            }
            let hits = distances.iter().filter(|d| **d > g).count();
            Ok(RareEventCell::from_hits(epsilon, g, hits, distances.len()))
        })
        .collect()
}

pub fn rare_event_probability(model: &Model, epsilon: f64, gamma: f64, n_samples: usize, seed: u64) -> Result<RareEventCell> {
    let d = rare_event_distances(model, epsilon, n_samples, seed)?;
    Ok(rare_event_cells(&d, epsilon, &[gamma])?.remove(0))
}

/// Time-distance used in the misfit term of the rate problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MisfitKind {
    /// `max_k ‖u_k - f_k‖²`
    #[default]
    Sup,
    /// `‖u_K - f_K‖²`
    Terminal,
    /// `dt Σ_{k≥1} ‖u_k - f_k‖²`
    Integrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GradientMode {
    /// Central differences, one coordinate at a time.
    FiniteDifference { step: f64 },
    /// Averaged simultaneous-perturbation estimates with Rademacher directions.
    SimultaneousPerturbation { step: f64, samples: usize, seed: u64 },
}

impl Default for GradientMode {
    fn default() -> Self {
        GradientMode::FiniteDifference { step: 1e-5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Final misfit above this is reported as `NoDescent`; `None` disables the check.
    pub misfit_tol: Option<f64>,
    pub memory: usize,
    pub gradient: GradientMode,
    /// Relative residual tolerance of the forward solves.
    pub solver_rel_tol: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-8,
            misfit_tol: Some(1e-3),
            memory: 8,
            gradient: GradientMode::default(),
            solver_rel_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateProblem {
    /// `f(t_0), …, f(t_K)`.
    pub target: Vec<Field>,
    pub weight: f64,
    pub misfit: MisfitKind,
}

impl RateProblem {
    pub fn new(target: Vec<Field>, weight: f64, misfit: MisfitKind) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidParameter(format!("penalty weight must be positive, got {weight}")));
        }
        if target.is_empty() {
            return Err(Error::InvalidParameter("empty target".into()));
        }
        Ok(Self { target, weight, misfit })
    }

    /// Target taken from an existing trajectory.
    pub fn from_trajectory(traj: &Trajectory, weight: f64, misfit: MisfitKind) -> Result<Self> {
        Self::new(traj.fields.clone(), weight, misfit)
    }

    pub fn misfit_of(&self, traj: &Trajectory) -> f64 {
        let d = |k: usize| traj.fields[k].sub(&self.target[k]).l2_norm_sq();
        let k_max = traj.fields.len() - 1;
        match self.misfit {
            MisfitKind::Sup => (0..=k_max).map(d).fold(0.0, f64::max),
            MisfitKind::Terminal => d(k_max),
            MisfitKind::Integrated => traj.dt * (1..=k_max).map(d).sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEstimate {
    /// Control energy `½‖ĥ‖²`, an upper bound on `I(f)` up to the misfit.
    pub i_hat: f64,
    pub misfit: f64,
    pub total: f64,
    pub weight: f64,
    pub reachable: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    #[serde(skip)]
    pub h_hat: Option<Control>,
}

/// Penalised upper bound on the rate function:
/// minimises `½ dt Σ ‖h_k‖² + w·misfit(u_h, f)` by limited-memory BFGS with
/// numerical gradients, starting from `h = 0`.
pub fn rate_function_estimate(model: &Model, prob: &RateProblem, opts: &RateOptions) -> Result<RateEstimate> {
    let k = model.steps;
    let j = model.noise.modes();
    if j * k > MAX_CONTROL_PARAMS {
        return Err(Error::BudgetExceeded { params: j * k, limit: MAX_CONTROL_PARAMS });
    }
    if prob.target.len() != k + 1 {
        return Err(Error::LengthMismatch { expected: k + 1, got: prob.target.len() });
    }
    for f in &prob.target {
        model.u0.same_grid(f)?;
    }
    let start_gap = prob.target[0].sub(&model.u0).l2_norm();
    if start_gap > 1e-12 * (1.0 + model.u0.l2_norm()) {
        return Ok(RateEstimate {
            i_hat: f64::INFINITY,
            misfit: f64::INFINITY,
            total: f64::INFINITY,
            weight: prob.weight,
            reachable: false,
            iterations: 0,
            evaluations: 0,
            gradient_norm: f64::NAN,
            converged: true,
            h_hat: None,
        });
    }
    let mut tight = model.clone();
    tight.solver = SolverOptions { rel_tol: opts.solver_rel_tol, tol_residual: None, ..model.solver };
    let dt = model.tau();
    let parts = |x: &[f64]| -> Result<(f64, f64)> {
        let h = Control::new(dt, j, x.to_vec())?;
        let traj = solve_skeleton_direct(&tight, &h)?;
        Ok((0.5 * h.norm_sq(), prob.misfit_of(&traj)))
    };
    let objective = |x: &[f64]| -> Result<f64> {
        let (e, m) = parts(x)?;
        Ok(e + prob.weight * m)
    };
    let mut evaluations = 0usize;
    let mut x = vec![0.0; j * k];
    let mut fx = objective(&x)?;
    evaluations += 1;
    let mut g = numerical_gradient(&objective, &x, &opts.gradient, 0, &mut evaluations)?;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let quasi_newton = matches!(opts.gradient, GradientMode::FiniteDifference { .. });
    while iterations < opts.max_iter {
        if norm(&g) <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut d = if quasi_newton { two_loop(&g, &s_hist, &y_hist) } else { g.iter().map(|v| -v).collect() };
        if dot(&d, &g) >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            s_hist.clear();
            y_hist.clear();
        }
        let mut t = if s_hist.is_empty() { (1.0 / norm(&g)).min(1.0) } else { 1.0 };
        let slope = dot(&d, &g);
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let ft = objective(&trial)?;
            evaluations += 1;
            if ft <= fx + 1e-4 * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if s_hist.is_empty() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
            continue;
        };
        let g_new = numerical_gradient(&objective, &x_new, &opts.gradient, iterations as u64, &mut evaluations)?;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-14 * norm(&s) * norm(&y) {
            s_hist.push(s);
            y_hist.push(y);
            if s_hist.len() > opts.memory.max(1) {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        let decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if decrease <= 1e-15 * (1.0 + fx.abs()) {
            converged = norm(&g) <= opts.grad_tol;
            break;
        }
    }
    let (i_hat, misfit) = parts(&x)?;
    evaluations += 1;
    if let Some(tol) = opts.misfit_tol {
        if misfit > tol {
            return Err(Error::NoDescent { misfit, tol });
        }
    }
    Ok(RateEstimate {
        i_hat,
        misfit,
        total: i_hat + prob.weight * misfit,
        weight: prob.weight,
        reachable: true,
        iterations,
        evaluations,
        gradient_norm: norm(&g),
        converged,
        h_hat: Some(Control::new(dt, j, x)?),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// L-BFGS two-loop recursion: returns `-H g`.
fn two_loop(g: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(s_hist.len());
    for (s, y) in s_hist.iter().zip(y_hist).rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push((rho, a));
    }
    if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), (rho, a)) in s_hist.iter().zip(y_hist).zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter().map(|v| -v).collect()
}

fn numerical_gradient<F>(f: &F, x: &[f64], mode: &GradientMode, iteration: u64, evaluations: &mut usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    match *mode {
        GradientMode::FiniteDifference { step } => {
            *evaluations += 2 * x.len();
            (0..x.len())
                .into_par_iter()
                .map(|i| {
                    let hi = step * (1.0 + x[i].abs());
                    let mut probe = x.to_vec();
                    probe[i] = x[i] + hi;
                    let up = f(&probe)?;
                    probe[i] = x[i] - hi;
                    let down = f(&probe)?;
                    Ok((up - down) / (2.0 * hi))
                })
                .collect()
        }
        GradientMode::SimultaneousPerturbation { step, samples, seed } => {
            let rng = CounterRng::new(seed, iteration);
            let estimates = (0..samples.max(1) as u64)
                .into_par_iter()
                .map(|s| {
                    let signs: Vec<f64> =
                        (0..x.len()).map(|i| if rng.bits(s, i as u64, 0) & 1 == 0 { 1.0 } else { -1.0 }).collect();
                    let up: Vec<f64> = x.iter().zip(&signs).map(|(a, b)| a + step * b).collect();
                    let down: Vec<f64> = x.iter().zip(&signs).map(|(a, b)| a - step * b).collect();
                    let diff = (f(&up)? - f(&down)?) / (2.0 * step);
                    Ok(signs.into_iter().map(|b| diff * b).collect::<Vec<f64>>())
                })
                .collect::<Result<Vec<_>>>()?;
            *evaluations += 2 * estimates.len();
            let n = estimates.len() as f64;
            Ok((0..x.len()).map(|i| estimates.iter().map(|e| e[i]).sum::<f64>() / n).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Grid;
    use crate::noise::{Multiplier, NoiseModel};
    use crate::plaplace::PLaplaceOperator;

    fn model(p: f64, delta: f64, noise: NoiseModel, steps: usize) -> Model {
        let grid = *noise.grid();
        let u0 = grid.sample(|x, _| (-x * x).exp());
        Model::new(PLaplaceOperator::new(p, delta).unwrap(), noise, u0, 1.0, steps, SolverOptions::default()).unwrap()
    }

    fn noise(n: usize, modes: usize, decay: f64, mult: Multiplier) -> NoiseModel {
        NoiseModel::geometric(Grid::new(1, 4.0, n).unwrap(), modes, decay, 1.0, mult).unwrap()
    }

    #[test]
    fn c1_vanishes_without_noise() {
        let m = model(3.0, 1e-4, noise(17, 4, 0.0, Multiplier::Bounded), 8);
        let h = Control::constant(8, m.tau(), &[1.0, 0.5, 0.0, 0.0]);
        let rep = condition_c1_experiment(&m, |_| h.clone(), &[0.4, 0.1], 16, 3, 10.0, &PicardOptions::default()).unwrap();
        assert!(rep.cells.iter().all(|c| c.statistic.mean == 0.0));
        assert_eq!(rep.slope, None);
    }

    #[test]
    fn c1_rejects_controls_outside_ball() {
        let m = model(3.0, 1e-4, noise(17, 4, 0.5, Multiplier::Bounded), 8);
        let h = Control::constant(8, m.tau(), &[4.0, 0.0, 0.0, 0.0]);
        let err = condition_c1_experiment(&m, |_| h.clone(), &[0.1], 4, 3, 1.0, &PicardOptions::default()).unwrap_err();
        assert!(matches!(err, Error::ControlOutsideBall { .. }));
    }

    #[test]
    fn c1_statistic_shrinks_quadratically() {
        let m = model(3.0, 1e-4, noise(33, 4, 0.5, Multiplier::Bounded), 16);
        let h = Control::constant(16, m.tau(), &[1.0, 0.0, 0.5, 0.0]);
        let rep =
            condition_c1_experiment(&m, |_| h.clone(), &[0.4, 0.2, 0.1, 0.05], 100, 11, 4.0, &PicardOptions::default()).unwrap();
        assert!(rep.decreasing, "{rep:?}");
        let slope = rep.slope.unwrap();
        assert!((slope - 2.0).abs() <= 0.4, "{slope}");
    }

    #[test]
    fn oscillation_has_fixed_norm() {
        let sched = OscillationSchedule { amplitude: 0.7, mode: 1, frequencies: vec![2, 4, 8, 16] };
        for &n in &sched.frequencies {
            let p = sched.perturbation(64, 4, 1.0 / 64.0, n).unwrap();
            assert!((p.norm_sq() - 0.49).abs() <= 1e-12);
            assert!(p.values().iter().enumerate().all(|(i, v)| i % 4 == 1 || *v == 0.0));
        }
        assert!(sched.perturbation(64, 4, 1.0 / 64.0, 33).is_err());
        assert!(sched.perturbation(64, 1, 1.0 / 64.0, 2).is_err());
    }

    #[test]
    fn c2_zero_amplitude_gives_zero_distance() {
        let m = model(3.0, 1e-4, noise(17, 4, 0.5, Multiplier::Bounded), 16);
        let h = Control::constant(16, m.tau(), &[1.0, 0.0, 0.0, 0.0]);
        let sched = OscillationSchedule { amplitude: 0.0, mode: 0, frequencies: vec![2, 4] };
        let rep = condition_c2_experiment(&m, &h, &sched, &[0.25, 0.125], 4.0, &PicardOptions::default()).unwrap();
        assert!(rep.cells.iter().all(|c| c.sup_distance == 0.0));
    }

    #[test]
    fn c2_distance_decreases_with_frequency() {
        let m = model(3.0, 1e-4, noise(33, 4, 0.5, Multiplier::Bounded), 64);
        let h = Control::constant(64, m.tau(), &[1.0, 0.0, 0.0, 0.0]);
        let sched = OscillationSchedule { amplitude: 1.0, mode: 0, frequencies: vec![2, 4, 8, 16] };
        let deltas: Vec<f64> = [8.0, 16.0, 32.0, 64.0].iter().map(|d| 1.0 / d).collect();
        let rep = condition_c2_experiment(&m, &h, &sched, &deltas, 4.0, &PicardOptions::default()).unwrap();
        assert!(rep.decreasing, "{rep:?}");
        for c in &rep.cells {
            assert!(c.increment_constant <= rep.uniform_increment_constant);
            assert!(c.increment_slope.unwrap() >= 0.8, "{c:?}");
        }
        let again = condition_c2_experiment(&m, &h, &sched, &deltas, 4.0, &PicardOptions::default()).unwrap();
        assert_eq!(rep, again);
    }

    #[test]
    fn c2_rejects_schedules_outside_ball() {
        let m = model(3.0, 1e-4, noise(17, 4, 0.5, Multiplier::Bounded), 16);
        let h = Control::zeros(16, 4, m.tau());
        let sched = OscillationSchedule { amplitude: 3.0, mode: 0, frequencies: vec![2] };
        let err = condition_c2_experiment(&m, &h, &sched, &[0.25], 4.0, &PicardOptions::default()).unwrap_err();
        assert!(matches!(err, Error::ControlOutsideBall { .. }));
    }

    #[test]
    fn rare_event_trivial_thresholds() {
        let m = model(3.0, 1e-4, noise(17, 4, 0.5, Multiplier::Bounded), 8);
        let d = rare_event_distances(&m, 0.3, 200, 5).unwrap();
        let cells = rare_event_cells(&d, 0.3, &[0.0, 1e6]).unwrap();
        assert_eq!(cells[0].p_hat, 1.0);
        assert_eq!(cells[0].exponent, Some(0.0));
        assert_eq!(cells[1].hits, 0);
        assert!(cells[1].upper_bound_only && cells[1].exponent.is_none());
        assert!(cells[1].wilson_high > 0.0 && cells[1].exponent_lower_bound > 0.0);
        assert!(rare_event_cells(&d, 0.3, &[-1.0]).is_err());
    }

    #[test]
    fn rare_event_probability_is_monotone_in_gamma() {
        let m = model(3.0, 1e-4, noise(17, 4, 0.5, Multiplier::Bounded), 8);
        let d = rare_event_distances(&m, 0.5, 400, 9).unwrap();
        let gammas: Vec<f64> = (0..20).map(|i| 0.02 * i as f64).collect();
        let cells = rare_event_cells(&d, 0.5, &gammas).unwrap();
        assert!(cells.windows(2).all(|w| w[1].p_hat <= w[0].p_hat));
        let single = rare_event_probability(&m, 0.5, 0.1, 400, 9).unwrap();
        assert_eq!(single, rare_event_cells(&d, 0.5, &[0.1]).unwrap()[0]);
    }

    #[test]
    fn rare_event_exponent_stabilises() {
        let m = model(2.0, 0.0, noise(17, 4, 0.5, Multiplier::Additive), 16);
        let gamma = 0.5;
        let mut exps = Vec::new();
        for &eps in &[0.4, 0.3, 0.25, 0.2, 0.17] {
            let c = rare_event_probability(&m, eps, gamma, 10_000, 21).unwrap();
            if let Some(e) = c.exponent {
                exps.push(e);
            }
        }
        assert!(exps.len() >= 2, "{exps:?}");
        let (a, b) = (exps[exps.len() - 2], exps[exps.len() - 1]);
        assert!(a.max(b) / a.min(b) <= 2.0, "{exps:?}");
    }

    fn flow_target(m: &Model, h: &Control, misfit: MisfitKind, w: f64) -> RateProblem {
        let traj = solve_skeleton_direct(m, h).unwrap();
        RateProblem::from_trajectory(&traj, w, misfit).unwrap()
    }

    #[test]
    fn rate_of_free_flow_is_zero() {
        let m = model(3.0, 1e-4, noise(17, 4, 0.5, Multiplier::Bounded), 8);
        let prob = flow_target(&m, &Control::zeros(8, 4, m.tau()), MisfitKind::Sup, 100.0);
        let est = rate_function_estimate(&m, &prob, &RateOptions::default()).unwrap();
        assert!(est.i_hat <= 1e-6 && est.misfit <= 1e-6, "{est:?}");
        assert!(est.h_hat.unwrap().values().iter().all(|v| v.abs() <= 1e-3));
    }

    #[test]
    fn rate_budget_and_reachability() {
        let m = model(3.0, 1e-4, noise(17, 8, 0.5, Multiplier::Bounded), 129);
        let prob = RateProblem::new(vec![m.u0.clone(); 130], 1.0, MisfitKind::Sup).unwrap();
        assert!(matches!(
            rate_function_estimate(&m, &prob, &RateOptions::default()),
            Err(Error::BudgetExceeded { params: 1032, limit: 1024 })
        ));
        let m = model(3.0, 1e-4, noise(17, 4, 0.5, Multiplier::Bounded), 8);
        let mut target = vec![m.u0.clone(); 9];
        target[0] = m.u0.scaled(2.0);
        let est = rate_function_estimate(&m, &RateProblem::new(target, 1.0, MisfitKind::Sup).unwrap(), &RateOptions::default())
            .unwrap();
        assert!(!est.reachable && est.i_hat.is_infinite());
        assert!(RateProblem::new(vec![m.u0.clone()], 0.0, MisfitKind::Sup).is_err());
    }

    #[test]
    fn rate_reports_stall_above_misfit_tolerance() {
        let m = model(3.0, 1e-4, noise(17, 4, 0.0, Multiplier::Bounded), 8);
        let mut prob = flow_target(&m, &Control::zeros(8, 4, m.tau()), MisfitKind::Terminal, 1.0);
        let last = prob.target.len() - 1;
        prob.target[last] = prob.target[last].scaled(3.0);
        let err = rate_function_estimate(&m, &prob, &RateOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoDescent { .. }), "{err:?}");
    }

    #[test]
    fn control_energy_is_quadratic() {
        let h = Control::from_fn(16, 4, 1.0 / 16.0, |k, j| (k as f64 * 0.37 + j as f64).sin());
        assert_eq!(h.scaled(2.0).norm_sq(), 4.0 * h.norm_sq());
    }

    #[test]
    fn plant_and_recover_is_an_upper_bound() {
        let m = model(3.0, 1e-4, noise(17, 4, 0.5, Multiplier::Bounded), 8);
        let planted = Control::from_fn(8, 4, m.tau(), |k, j| if j == 0 { 1.0 + 0.1 * k as f64 } else { 0.0 });
        let prob = flow_target(&m, &planted, MisfitKind::Sup, 1e3);
        let opts = RateOptions { misfit_tol: None, ..Default::default() };
        let est = rate_function_estimate(&m, &prob, &opts).unwrap();
        assert!(est.i_hat <= 0.5 * planted.norm_sq() + 1e-3, "{est:?} vs {}", 0.5 * planted.norm_sq());
        assert!(est.i_hat >= 0.0);
    }

    #[test]
    fn spsa_mode_descends() {
        let m = model(3.0, 1e-4, noise(17, 2, 0.5, Multiplier::Bounded), 4);
        let planted = Control::constant(4, m.tau(), &[1.0, 0.0]);
        let prob = flow_target(&m, &planted, MisfitKind::Terminal, 10.0);
        let zero_total = prob.weight * prob.misfit_of(&solve_skeleton_direct(&m, &Control::zeros(4, 2, m.tau())).unwrap());
        let opts = RateOptions {
            misfit_tol: None,
            max_iter: 50,
            gradient: GradientMode::SimultaneousPerturbation { step: 1e-4, samples: 8, seed: 1 },
            ..Default::default()
        };
        let est = rate_function_estimate(&m, &prob, &opts).unwrap();
        assert!(est.total < zero_total);
    }
}
