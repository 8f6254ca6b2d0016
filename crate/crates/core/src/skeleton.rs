//! The controlled deterministic (skeleton) equation
//!
//! ```text
//! du - div(|∇u|^{p-2}∇u) dt = σ(u) h(t) dt,   u(0) = u₀
//! ```
//!
//! solved by Picard iteration on the frozen-coefficient problem
//! `du - Δ_p u dt = σ(ρ) h dt`, each stepped with the semi-implicit scheme.
//! Controls are piecewise constant on the time grid, so the increment
//! `∫_{t_k}^{t_{k+1}} σ(ρ_k) h(s) ds = τ σ(ρ_k) h_k` is exact.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Field;
use crate::model::{Model, Trajectory};
use crate::rng::CounterRng;

/// Piecewise-constant `ℝ^J`-valued control, `K` steps of length `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    dt: f64,
    modes: usize,
    values: Vec<f64>,
}

impl Control {
    pub fn new(dt: f64, modes: usize, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("control dt must be positive, got {dt}")));
        }
        if modes == 0 || values.is_empty() || values.len() % modes != 0 {
            return Err(Error::InvalidParameter(format!(
                "control has {} values for {modes} modes",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { dt, modes, values })
    }

    pub fn zeros(steps: usize, modes: usize, dt: f64) -> Self {
        Self::from_fn(steps, modes, dt, |_, _| 0.0)
    }

    pub fn from_fn<F: Fn(usize, usize) -> f64>(steps: usize, modes: usize, dt: f64, f: F) -> Self {
        let values = (0..steps).flat_map(|k| (0..modes).map(move |j| (k, j))).map(|(k, j)| f(k, j)).collect();
        Self::new(dt, modes, values).expect("control built from a finite generator")
    }

    /// The same vector in every step.
    pub fn constant(steps: usize, dt: f64, value: &[f64]) -> Self {
        Self::from_fn(steps, value.len(), dt, |_, j| value[j])
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn steps(&self) -> usize {
        self.values.len() / self.modes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.modes..(k + 1) * self.modes]
    }

    /// `‖h‖²_{L²(0,T;ℋ)} = dt Σ_{k,j} h_{kj}²`.
    pub fn norm_sq(&self) -> f64 {
        self.dt * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    /// Membership in `S_M = {‖h‖² ≤ M}`.
    pub fn in_ball(&self, m: f64) -> bool {
        self.norm_sq() <= m
    }

    pub fn scaled(&self, alpha: f64) -> Control {
        Control {
            dt: self.dt,
            modes: self.modes,
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    fn zip_with(&self, other: &Control, f: impl Fn(f64, f64) -> f64) -> Result<Control> {
        if self.values.len() != other.values.len() || self.modes != other.modes {
            return Err(Error::LengthMismatch { expected: self.values.len(), got: other.values.len() });
        }
        Ok(Control {
            dt: self.dt,
            modes: self.modes,
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn add(&self, other: &Control) -> Result<Control> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Control) -> Result<Control> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Rescales each step whose `ℋ`-norm exceeds `level` back onto the sphere of radius `level`.
    pub fn clipped(&self, level: f64) -> Control {
        let mut values = self.values.clone();
        for row in values.chunks_mut(self.modes) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > level {
                let s = level / n;
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
        Control { dt: self.dt, modes: self.modes, values }
    }

    pub fn max_step_norm(&self) -> f64 {
        self.values
            .chunks(self.modes)
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// CSV rows `k,j,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,j,value")?;
        for k in 0..self.steps() {
            for (j, v) in self.at(k).iter().enumerate() {
                writeln!(out, "{k},{j},{v}")?;
            }
        }
        Ok(())
    }

    /// Reads `k,j,value` rows (header optional); missing entries are zero.
    pub fn read_csv<R: BufRead>(input: R, steps: usize, modes: usize, dt: f64) -> Result<Control> {
        let mut values = vec![0.0; steps * modes];
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('k') || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::Parse(format!("control csv line {}: expected k,j,value", lineno + 1));
            if parts.len() != 3 {
                return Err(bad());
            }
            let k: usize = parts[0].parse().map_err(|_| bad())?;
            let j: usize = parts[1].parse().map_err(|_| bad())?;
            let v: f64 = parts[2].parse().map_err(|_| bad())?;
            if k >= steps || j >= modes {
                return Err(Error::Parse(format!(
                    "control csv line {}: index ({k},{j}) outside {steps}x{modes}",
                    lineno + 1
                )));
            }
            values[k * modes + j] = v;
        }
        Control::new(dt, modes, values)
    }
}

/// Random controls with `‖h‖² = radius_sq` exactly (the sphere of `S_N`).
pub fn sample_controls_on_sphere(steps: usize, modes: usize, dt: f64, radius_sq: f64, count: usize, seed: u64) -> Vec<Control> {
    (0..count as u64)
        .map(|s| {
            let rng = CounterRng::new(seed, 0xc0de_0000 + s);
            let raw = Control::from_fn(steps, modes, dt, |k, j| rng.normal(k as u64, j as u64));
            let n = raw.norm_sq();
            if radius_sq == 0.0 || n == 0.0 {
                raw.scaled(0.0)
            } else {
                raw.scaled((radius_sq / n).sqrt())
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 60 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSolution {
    pub trajectory: Trajectory,
    /// `max_k ‖ρ^{m+1}_k - ρ^m_k‖` for each outer iteration `m`.
    pub picard_differences: Vec<f64>,
}

impl SkeletonSolution {
    pub fn picard_iterations(&self) -> usize {
        self.picard_differences.len()
    }

    /// Successive ratios `d_{m+1} / d_m` of the Picard differences.
    pub fn picard_ratios(&self) -> Vec<f64> {
        self.picard_differences.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

fn check_control(model: &Model, h: &Control) -> Result<()> {
    if h.steps() != model.steps {
        return Err(Error::LengthMismatch { expected: model.steps, got: h.steps() });
    }
    if h.modes() != model.noise.modes() {
        return Err(Error::LengthMismatch { expected: model.noise.modes(), got: h.modes() });
    }
    Ok(())
}

/// Frozen-coefficient problem: `u_{k+1} = R_τ(u_k + τ σ(ρ_k) h_k)`.
pub fn solve_auxiliary(model: &Model, rho: &[Field], h: &Control) -> Result<Trajectory> {
    check_control(model, h)?;
    if rho.len() != model.steps + 1 {
        return Err(Error::LengthMismatch { expected: model.steps + 1, got: rho.len() });
    }
    let tau = model.tau();
    model.run(|k, _| (rho[k].clone(), h.at(k).iter().map(|v| tau * v).collect()))
}

/// Picard iteration `ρ^{m+1} = aux(ρ^m)` from `ρ⁰ ≡ u₀` until the sup-in-time
/// `L²` change drops below `picard.tol`.
pub fn solve_skeleton(model: &Model, h: &Control, picard: &PicardOptions) -> Result<SkeletonSolution> {
    check_control(model, h)?;
    let mut rho = vec![model.u0.clone(); model.steps + 1];
    let mut differences = Vec::new();
    for _ in 0..picard.max_iter {
        let next = solve_auxiliary(model, &rho, h)?;
        let diff = next
            .fields
            .iter()
            .zip(&rho)
            .map(|(a, b)| a.sub(b).l2_norm())
            .fold(0.0, f64::max);
        differences.push(diff);
        if diff <= picard.tol {
            return Ok(SkeletonSolution { trajectory: next, picard_differences: differences });
        }
        rho = next.fields;
    }
    Err(Error::PicardStall {
        iterations: picard.max_iter,
        last_difference: differences.last().copied().unwrap_or(f64::NAN),
    })
}

/// The coupled scheme `u_{k+1} = R_τ(u_k + τ σ(u_k) h_k)` evaluated by forward
/// recursion. This is the fixed point the Picard loop converges to.
pub fn solve_skeleton_direct(model: &Model, h: &Control) -> Result<Trajectory> {
    check_control(model, h)?;
    let tau = model.tau();
    model.run(|k, u| (u.clone(), h.at(k).iter().map(|v| tau * v).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipLevelRecord {
    pub level: f64,
    pub clipped_norm_sq: f64,
    /// `‖h_n - h_{n-1}‖_{L²(0,T;ℋ)}`, zero for the first level.
    pub control_gap: f64,
    /// `sup_t ‖u_{h_n} - u_{h_{n-1}}‖`, zero for the first level.
    pub sup_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralSkeleton {
    pub solution: SkeletonSolution,
    pub levels: Vec<ClipLevelRecord>,
}

/// Solves with `h` clipped at each level and records the Cauchy behaviour
/// across levels; returns the finest-level solution.
pub fn solve_skeleton_general(model: &Model, h: &Control, clip_levels: &[f64], picard: &PicardOptions) -> Result<GeneralSkeleton> {
    if clip_levels.is_empty() {
        return Err(Error::InvalidParameter("need at least one clip level".into()));
    }
    if clip_levels.windows(2).any(|w| !(w[1] > w[0])) || clip_levels[0] <= 0.0 {
        return Err(Error::InvalidParameter("clip levels must be positive and increasing".into()));
    }
    let mut levels = Vec::with_capacity(clip_levels.len());
    let mut prev: Option<(Control, SkeletonSolution)> = None;
    for &level in clip_levels {
        let hn = h.clipped(level);
        let sol = solve_skeleton(model, &hn, picard)?;
        let (gap, dist) = match &prev {
            Some((hp, sp)) => (
                hn.sub(hp)?.norm_sq().sqrt(),
                sol.trajectory.sup_distance_sq(&sp.trajectory)?.sqrt(),
            ),
            None => (0.0, 0.0),
        };
        levels.push(ClipLevelRecord { level, clipped_norm_sq: hn.norm_sq(), control_gap: gap, sup_distance: dist });
        prev = Some((hn, sol));
    }
    let (_, solution) = prev.expect("at least one level");
    Ok(GeneralSkeleton { solution, levels })
}

/// `∫₀ᵀ ‖u(t) - u(t(δ))‖² dt` with `t(δ) = ⌊t/δ⌋δ`, evaluated on the time grid
/// as `dt Σ_{m=1}^{K} ‖u_m - u_{r⌊(m-1)/r⌋}‖²` where `r = δ/dt`.
pub fn time_increment_statistic(traj: &Trajectory, delta: f64) -> Result<f64> {
    let ratio = delta / traj.dt;
    let r = ratio.round();
    if !(r >= 1.0) || (ratio - r).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta {delta} is not a positive multiple of dt {}",
            traj.dt
        )));
    }
    let r = r as usize;
    let mut acc = 0.0;
    for m in 1..traj.fields.len() {
        let anchor = r * ((m - 1) / r);
        acc += traj.fields[m].sub(&traj.fields[anchor]).l2_norm_sq();
    }
    Ok(traj.dt * acc)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformEstimateReport {
    pub bound: f64,
    pub samples: usize,
    /// Running maximum of `sup_t ‖u_h‖² + ∫ ‖u_h‖_Y^q dt` with `q = min(p, 2)`.
    pub running_max: Vec<f64>,
    pub max_statistic: f64,
    /// Same statistic with `q = max(p, 2)`.
    pub max_statistic_qmax: f64,
}

/// Maximum of the uniform skeleton statistic over a sample of controls from `S_N`.
pub fn uniform_estimate_check(model: &Model, controls: &[Control], bound: f64, picard: &PicardOptions) -> Result<UniformEstimateReport> {
    use rayon::prelude::*;
    for h in controls {
        if !h.in_ball(bound * (1.0 + 1e-12)) {
            return Err(Error::ControlOutsideBall { norm_sq: h.norm_sq(), bound });
        }
    }
    let p = model.op.p();
    let stats: Vec<(f64, f64)> = controls
        .par_iter()
        .map(|h| {
            let sol = solve_skeleton(model, h, picard)?;
            Ok((
                sol.trajectory.uniform_statistic(p.min(2.0)),
                sol.trajectory.uniform_statistic(p.max(2.0)),
            ))
        })
        .collect::<Result<_>>()?;
    let mut running_max = Vec::with_capacity(stats.len());
    let (mut m, mut mq) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (a, b) in &stats {
        m = m.max(*a);
        mq = mq.max(*b);
        running_max.push(m);
    }
    Ok(UniformEstimateReport {
        bound,
        samples: controls.len(),
        running_max,
        max_statistic: m,
        max_statistic_qmax: mq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::implicit_step::SolverOptions;
    use crate::mesh::Grid;
    use crate::noise::{Multiplier, NoiseModel};
    use crate::plaplace::PLaplaceOperator;
    use crate::stats::loglog_fit;

    fn model(p: f64, delta: f64, mult: Multiplier, n: usize, steps: usize) -> Model {
        let grid = Grid::new(1, 4.0, n).unwrap();
        let noise = NoiseModel::geometric(grid, 4, 0.5, 1.0, mult).unwrap();
        let u0 = grid.sample(|x, _| (-x * x).exp());
        Model::new(PLaplaceOperator::new(p, delta).unwrap(), noise, u0, 1.0, steps, SolverOptions::default()).unwrap()
    }

    #[test]
    fn zero_control_flow_dissipates() {
        let m = model(3.0, 1e-4, Multiplier::Bounded, 33, 32);
        let sol = solve_skeleton(&m, &Control::zeros(32, 4, m.tau()), &PicardOptions::default()).unwrap();
        for w in sol.trajectory.records.windows(2) {
            assert!(w[1].l2_sq <= w[0].l2_sq);
            assert!(w[1].energy <= w[0].energy + 1e-12);
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let mut m = model(3.0, 1e-4, Multiplier::Additive, 17, 8);
        m.u0 = m.grid().zeros();
        let sol = solve_skeleton(&m, &Control::zeros(8, 4, m.tau()), &PicardOptions::default()).unwrap();
        assert!(sol.trajectory.fields.iter().all(|f| f.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_case_matches_tridiagonal_theta_scheme() {
        let m = model(2.0, 0.0, Multiplier::Additive, 65, 64);
        let h = Control::from_fn(64, 4, m.tau(), |k, j| ((k + 1) as f64 * 0.1).sin() / (j + 1) as f64);
        let sol = solve_skeleton(&m, &h, &PicardOptions::default()).unwrap();

        let grid = *m.grid();
        let nn = grid.points_per_axis() - 2;
        let kappa = m.tau() / grid.spacing().powi(2);
        let mut u: Vec<f64> = m.u0.values().to_vec();
        for k in 0..64 {
            let forcing = m.noise.apply_sigma(&m.u0, &h.at(k).iter().map(|v| m.tau() * v).collect::<Vec<_>>()).unwrap();
            let rhs: Vec<f64> = (1..=nn).map(|i| u[i] + forcing.values()[i]).collect();
            // Thomas solve of (1+2κ) x_i - κ x_{i±1} = rhs_i
            let (a, b) = (-kappa, 1.0 + 2.0 * kappa);
            let mut c = vec![0.0; nn];
            let mut d = vec![0.0; nn];
            c[0] = a / b;
            d[0] = rhs[0] / b;
            for i in 1..nn {
                let den = b - a * c[i - 1];
                c[i] = a / den;
                d[i] = (rhs[i] - a * d[i - 1]) / den;
            }
            u[nn] = d[nn - 1];
            for i in (1..nn).rev() {
                u[i] = d[i - 1] - c[i - 1] * u[i + 1];
            }
            let got = sol.trajectory.fields[k + 1].values();
            let err: f64 = got.iter().zip(&u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-8, "step {k}: {err}");
        }
    }

    #[test]
    fn additive_picard_converges_in_two() {
        let m = model(3.0, 1e-4, Multiplier::Additive, 33, 32);
        let h = Control::constant(32, m.tau(), &[1.0, -0.5, 0.2, 0.0]);
        let sol = solve_skeleton(&m, &h, &PicardOptions::default()).unwrap();
        assert_eq!(sol.picard_iterations(), 2);
        assert_eq!(sol.picard_differences[1], 0.0);
    }

    #[test]
    fn multiplicative_picard_contracts() {
        let m = model(3.0, 1e-4, Multiplier::Bounded, 33, 32);
        let h = Control::constant(32, m.tau(), &[2.0, 1.0, 0.0, 0.0]);
        let sol = solve_skeleton(&m, &h, &PicardOptions::default()).unwrap();
        let ratios = sol.picard_ratios();
        assert!(sol.picard_iterations() > 3);
        for r in &ratios[1..] {
            assert!(*r <= 0.95, "{ratios:?}");
        }
        let again = solve_skeleton(&m, &h, &PicardOptions::default()).unwrap();
        assert_eq!(sol, again);
    }

    #[test]
    fn picard_fixed_point_matches_direct_recursion() {
        let m = model(3.0, 1e-4, Multiplier::Bounded, 33, 32);
        let h = Control::constant(32, m.tau(), &[2.0, 1.0, 0.0, 0.0]);
        let sol = solve_skeleton(&m, &h, &PicardOptions::default()).unwrap();
        let direct = solve_skeleton_direct(&m, &h).unwrap();
        assert!(sol.trajectory.sup_distance_sq(&direct).unwrap().sqrt() <= 1e-8);
    }

    #[test]
    fn picard_stall_is_reported() {
        let m = model(3.0, 1e-4, Multiplier::Linear, 17, 8);
        let h = Control::constant(8, m.tau(), &[3.0, 0.0, 0.0, 0.0]);
        let res = solve_skeleton(&m, &h, &PicardOptions { tol: 1e-14, max_iter: 2 });
        assert!(matches!(res, Err(Error::PicardStall { iterations: 2, .. })));
    }

    #[test]
    fn clipping_levels() {
        let m = model(3.0, 1e-4, Multiplier::Bounded, 17, 16);
        let small = Control::constant(16, m.tau(), &[0.1, 0.1, 0.0, 0.0]);
        let general = solve_skeleton_general(&m, &small, &[1.0, 2.0, 4.0], &PicardOptions::default()).unwrap();
        for rec in &general.levels {
            assert_eq!(rec.sup_distance, 0.0);
            assert_eq!(rec.control_gap, 0.0);
        }

        // Spike of H-norm 2n in one step: clipping at n halves it.
        let spike = Control::new(0.5, 2, vec![2.0 * 3.0, 0.0, 0.0, 0.0]).unwrap();
        let clipped = spike.clipped(3.0);
        assert_eq!(clipped.max_step_norm(), 3.0);
        assert_eq!(clipped.at(0)[0], 3.0);

        assert!(solve_skeleton_general(&m, &small, &[2.0, 1.0], &PicardOptions::default()).is_err());
    }

    #[test]
    fn clipping_is_cauchy_in_the_control_gap() {
        let m = model(3.0, 1e-4, Multiplier::Bounded, 33, 32);
        let h = Control::from_fn(32, 4, m.tau(), |k, j| if j == 0 { 8.0 * (k as f64 * 0.7).sin() } else { 0.0 });
        let general = solve_skeleton_general(&m, &h, &[1.0, 2.0, 4.0, 8.0], &PicardOptions::default()).unwrap();
        for rec in &general.levels[1..] {
            if rec.control_gap > 0.0 {
                // Gronwall-type constant for bounded σ on [0, 1]
                assert!(rec.sup_distance <= 3.0 * rec.control_gap, "{rec:?}");
            }
        }
    }

    #[test]
    fn time_increment_definitions() {
        let m = model(3.0, 1e-4, Multiplier::Bounded, 17, 16);
        let h = Control::constant(16, m.tau(), &[1.0, 0.0, 0.0, 0.0]);
        let traj = solve_skeleton(&m, &h, &PicardOptions::default()).unwrap().trajectory;
        let stat = time_increment_statistic(&traj, traj.dt).unwrap();
        let direct: f64 = traj.fields.windows(2).map(|w| traj.dt * w[1].sub(&w[0]).l2_norm_sq()).sum();
        assert_eq!(stat, direct);
        assert!(time_increment_statistic(&traj, 1.5 * traj.dt).is_err());

        let mut constant = traj.clone();
        for f in constant.fields.iter_mut() {
            *f = m.u0.clone();
        }
        assert_eq!(time_increment_statistic(&constant, 4.0 * traj.dt).unwrap(), 0.0);
    }

    #[test]
    fn rough_control_increments_scale_linearly() {
        let m = model(3.0, 1e-4, Multiplier::Additive, 33, 64);
        let dt = m.tau();
        let rng = CounterRng::new(5, 5);
        // white-in-time control: ‖h‖² stays O(1) but increments behave like Brownian motion
        let h = Control::from_fn(64, 4, dt, |k, j| rng.normal(k as u64, j as u64) / dt.sqrt() * 0.5);
        let traj = solve_skeleton(&m, &h, &PicardOptions::default()).unwrap().trajectory;
        let deltas = [8.0 * dt, 4.0 * dt, 2.0 * dt];
        let stats: Vec<f64> = deltas.iter().map(|d| time_increment_statistic(&traj, *d).unwrap()).collect();
        for w in stats.windows(2) {
            let ratio = w[1] / w[0];
            assert!((0.3..=0.7).contains(&ratio), "{stats:?}");
        }
        assert!(loglog_fit(&deltas, &stats).slope >= 0.8);
    }

    #[test]
    fn uniform_estimate_behaviour() {
        let m = model(3.0, 1e-4, Multiplier::Bounded, 17, 16);
        let picard = PicardOptions::default();
        let zero = sample_controls_on_sphere(16, 4, m.tau(), 0.0, 3, 1);
        let rep0 = uniform_estimate_check(&m, &zero, 0.0, &picard).unwrap();
        let flow = solve_skeleton(&m, &Control::zeros(16, 4, m.tau()), &picard).unwrap();
        assert_eq!(rep0.max_statistic, flow.trajectory.uniform_statistic(2.0));

        let mut maxima = Vec::new();
        for n in [1.0, 2.0, 4.0] {
            let controls = sample_controls_on_sphere(16, 4, m.tau(), n, 8, 2);
            let rep = uniform_estimate_check(&m, &controls, n, &picard).unwrap();
            for w in rep.running_max.windows(2) {
                assert!(w[1] >= w[0]);
            }
            let half = uniform_estimate_check(&m, &controls[..4], n, &picard).unwrap();
            assert!(rep.max_statistic >= half.max_statistic);
            maxima.push(rep.max_statistic);
        }
        assert!(maxima.iter().all(|x| x.is_finite()));
        // stays within an exp(N)-type envelope of the N=1 value
        for (n, mx) in [1.0, 2.0, 4.0].iter().zip(&maxima) {
            assert!(*mx <= maxima[0] * (n - 1.0f64).exp() * 2.0);
        }
        let outside = sample_controls_on_sphere(16, 4, m.tau(), 2.0, 1, 3);
        assert!(uniform_estimate_check(&m, &outside, 1.0, &picard).is_err());
    }

    #[test]
    fn control_csv_round_trip() {
        let h = Control::from_fn(3, 2, 0.25, |k, j| k as f64 - 0.5 * j as f64);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(Control::read_csv(buf.as_slice(), 3, 2, 0.25).unwrap(), h);
        assert!(Control::read_csv("0,5,1.0\n".as_bytes(), 3, 2, 0.25).is_err());
        assert!((h.scaled(2.0).norm_sq() - 4.0 * h.norm_sq()).abs() < 1e-15);
    }
}
