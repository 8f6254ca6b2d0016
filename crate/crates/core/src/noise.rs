//! Truncated cylindrical Wiener noise and diagonal multiplicative σ families.
//!
//! `σ(u)` maps a coefficient vector `c ∈ ℝ^J` to the field
//! `Σ_j λ_j m(u(x)) e_j(x) c_j`, where `e_j` are `L²`-orthonormal discrete
//! sine modes and `m` is a scalar multiplier. Each family comes with declared
//! Lipschitz (`c_σ`), growth (`σ_b`) and, when available, uniform bound
//! (`σ̄_b`) constants in the Hilbert–Schmidt norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Field, Grid};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Multiplier {
    /// `m(u) = 1`
    Additive,
    /// `m(u) = u / (1 + |u|)`
    Bounded,
    /// `m(u) = u`
    Linear,
}

impl Multiplier {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Multiplier::Additive => 1.0,
            Multiplier::Bounded => u / (1.0 + u.abs()),
            Multiplier::Linear => u,
        }
    }

    pub fn is_bounded(self) -> bool {
        !matches!(self, Multiplier::Linear)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseConstants {
    pub c_sigma: f64,
    pub sigma_b: f64,
    pub sigma_bar_b: Option<f64>,
    /// `Σ_j λ_j²`
    pub hs_trace: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    grid: Grid,
    eigenvalues: Vec<f64>,
    modes: Vec<Field>,
    multiplier: Multiplier,
    constants: NoiseConstants,
}

impl NoiseModel {
    /// `λ_j = amplitude * decay^j` for `j = 1..=modes`.
    pub fn geometric(grid: Grid, modes: usize, decay: f64, amplitude: f64, multiplier: Multiplier) -> Result<Self> {
        if !(decay.is_finite() && decay >= 0.0) || !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eigenvalue decay and amplitude must be nonnegative, got {decay} and {amplitude}"
            )));
        }
        let eigenvalues = (1..=modes).map(|j| amplitude * decay.powi(j as i32)).collect();
        Self::with_eigenvalues(grid, eigenvalues, multiplier)
    }

    pub fn with_eigenvalues(grid: Grid, eigenvalues: Vec<f64>, multiplier: Multiplier) -> Result<Self> {
        let j = eigenvalues.len();
        if j == 0 {
            return Err(Error::InvalidParameter("noise needs at least one mode".into()));
        }
        if j > grid.interior_count() {
            return Err(Error::InvalidParameter(format!(
                "{j} modes exceed the {} interior nodes",
                grid.interior_count()
            )));
        }
        if eigenvalues.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::InvalidParameter("eigenvalues must be finite and nonnegative".into()));
        }
        let modes = sine_modes(grid, j);
        let hs_trace: f64 = eigenvalues.iter().map(|l| l * l).sum();
        let envelope: f64 = eigenvalues
            .iter()
            .zip(&modes)
            .map(|(l, e)| l * l * e.max_abs().powi(2))
            .sum::<f64>()
            .sqrt();
        let bound = hs_trace.sqrt();
        let constants = match multiplier {
            Multiplier::Additive => NoiseConstants { c_sigma: 0.0, sigma_b: bound, sigma_bar_b: Some(bound), hs_trace },
            Multiplier::Bounded => NoiseConstants { c_sigma: envelope, sigma_b: bound, sigma_bar_b: Some(bound), hs_trace },
            Multiplier::Linear => NoiseConstants { c_sigma: envelope, sigma_b: envelope, sigma_bar_b: None, hs_trace },
        };
        Ok(Self { grid, eigenvalues, modes, multiplier, constants })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mode_shapes(&self) -> &[Field] {
        &self.modes
    }

    pub fn multiplier(&self) -> Multiplier {
        self.multiplier
    }

    pub fn constants(&self) -> &NoiseConstants {
        &self.constants
    }

    pub fn is_silent(&self) -> bool {
        self.eigenvalues.iter().all(|&l| l == 0.0)
    }

    /// `σ(u) c = Σ_j λ_j m(u) e_j c_j`.
    pub fn apply_sigma(&self, u: &Field, coeffs: &[f64]) -> Result<Field> {
        if coeffs.len() != self.modes() {
            return Err(Error::LengthMismatch { expected: self.modes(), got: coeffs.len() });
        }
        u.same_grid(&self.modes[0])?;
        let mut combo = vec![0.0; u.values().len()];
        for ((l, c), e) in self.eigenvalues.iter().zip(coeffs).zip(&self.modes) {
            let w = l * c;
            if w == 0.0 {
                continue;
            }
            for (acc, ev) in combo.iter_mut().zip(e.values()) {
                *acc += w * ev;
            }
        }
        let values = u
            .values()
            .iter()
            .zip(&combo)
            .map(|(&uv, &s)| self.multiplier.eval(uv) * s)
            .collect();
        Field::new(self.grid, values)
    }

    /// Hilbert–Schmidt norm `(Σ_j λ_j² ‖m(u) e_j‖²)^{1/2}`.
    pub fn hs_norm(&self, u: &Field) -> f64 {
        let m: Vec<f64> = u.values().iter().map(|&v| self.multiplier.eval(v)).collect();
        self.hs_of_pointwise(&m)
    }

    /// `‖σ(u) - σ(v)‖_HS`.
    pub fn hs_distance(&self, u: &Field, v: &Field) -> f64 {
        let m: Vec<f64> = u
            .values()
            .iter()
            .zip(v.values())
            .map(|(&a, &b)| self.multiplier.eval(a) - self.multiplier.eval(b))
            .collect();
        self.hs_of_pointwise(&m)
    }

    fn hs_of_pointwise(&self, m: &[f64]) -> f64 {
        let w = self.grid.cell_volume();
        self.eigenvalues
            .iter()
            .zip(&self.modes)
            .map(|(l, e)| {
                let s: f64 = m.iter().zip(e.values()).map(|(a, b)| (a * b).powi(2)).sum();
                l * l * w * s
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Empirical maxima of the Lipschitz, growth and bound ratios over random
    /// fields; fails if any exceeds its declared constant.
    pub fn certify_constants(&self, n_samples: usize, seed: u64) -> Result<CertifiedConstants> {
        if n_samples == 0 {
            return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
        }
        let rng = CounterRng::new(seed, 0x5167_6d61);
        let random_field = |s: u64, lane: u64| {
            // scales spread over four decades
            let scale = 10f64.powf(4.0 * rng.uniform(s, 0, 2 + lane) - 2.0);
            let mut f = self.grid.zeros();
            for (i, v) in f.values_mut().iter_mut().enumerate() {
                *v = scale * (2.0 * rng.uniform(s, i as u64 + 1, lane) - 1.0);
            }
            f.zero_boundary();
            f
        };
        let mut out = CertifiedConstants { lipschitz: 0.0, growth: 0.0, bound: 0.0, samples: n_samples };
        for s in 0..n_samples as u64 {
            let u = random_field(s, 0);
            let v = random_field(s, 1);
            let d = u.sub(&v).l2_norm();
            if d > 0.0 {
                out.lipschitz = out.lipschitz.max(self.hs_distance(&u, &v) / d);
            }
            let hs = self.hs_norm(&u);
            out.growth = out.growth.max(hs / (1.0 + u.l2_norm()));
            out.bound = out.bound.max(hs);
        }
        let slack = |x: f64| x * (1.0 + 1e-12) + 1e-15;
        let c = &self.constants;
        if out.lipschitz > slack(c.c_sigma) {
            return Err(Error::CertificationFailure { constant: "c_sigma", empirical: out.lipschitz, declared: c.c_sigma });
        }
        if out.growth > slack(c.sigma_b) {
            return Err(Error::CertificationFailure { constant: "sigma_b", empirical: out.growth, declared: c.sigma_b });
        }
        if let Some(bar) = c.sigma_bar_b {
            if out.bound > slack(bar) {
                return Err(Error::CertificationFailure { constant: "sigma_bar_b", empirical: out.bound, declared: bar });
            }
        }
        Ok(out)
    }

    /// `K × J` Brownian increments, i.i.d. `N(0, τ)`, keyed by `(seed, stream, step, mode)`.
    pub fn sample_path(&self, steps: usize, tau: f64, seed: u64, stream: u64) -> Result<BrownianPath> {
        BrownianPath::sample(steps, self.modes(), tau, seed, stream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertifiedConstants {
    pub lipschitz: f64,
    pub growth: f64,
    pub bound: f64,
    pub samples: usize,
}

/// Discrete sine modes ordered by wavenumber, re-orthonormalised by two
/// passes of modified Gram–Schmidt in the weighted `L²` product.
fn sine_modes(grid: Grid, count: usize) -> Vec<Field> {
    let n = grid.points_per_axis();
    let pi = std::f64::consts::PI;
    let mut waves: Vec<(usize, usize)> = match grid.dim() {
        1 => (1..n - 1).map(|k| (k, 0)).collect(),
        _ => (1..n - 1).flat_map(|a| (1..n - 1).map(move |b| (a, b))).collect(),
    };
    waves.sort_by_key(|&(a, b)| (a * a + b * b, a));
    let mut modes: Vec<Field> = waves
        .into_iter()
        .take(count)
        .map(|(kx, ky)| {
            let mut f = grid.zeros();
            for (idx, v) in f.values_mut().iter_mut().enumerate() {
                let [i, j] = grid.node_indices(idx);
                let sx = (pi * (kx * i) as f64 / (n - 1) as f64).sin();
                let sy = if grid.dim() == 1 { 1.0 } else { (pi * (ky * j) as f64 / (n - 1) as f64).sin() };
                *v = sx * sy;
            }
            f.zero_boundary();
            f
        })
        .collect();
    for _ in 0..2 {
        for i in 0..modes.len() {
            for k in 0..i {
                let c = modes[i].dot(&modes[k]);
                let ek = modes[k].clone();
                modes[i].axpy(-c, &ek);
            }
            let nrm = modes[i].l2_norm();
            modes[i] = modes[i].scaled(1.0 / nrm);
        }
    }
    modes
}

/// Increments of the truncated cylindrical Wiener process.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    steps: usize,
    modes: usize,
    tau: f64,
    seed: u64,
    stream: u64,
    increments: Vec<f64>,
}

impl BrownianPath {
    pub fn sample(steps: usize, modes: usize, tau: f64, seed: u64, stream: u64) -> Result<Self> {
        if steps == 0 || modes == 0 {
            return Err(Error::InvalidParameter("path needs at least one step and one mode".into()));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        let rng = CounterRng::new(seed, stream);
        let sd = tau.sqrt();
        let increments = (0..steps as u64)
            .flat_map(|k| (0..modes as u64).map(move |j| (k, j)))
            .map(|(k, j)| sd * rng.normal(k, j))
            .collect();
        Ok(Self { steps, modes, tau, seed, stream, increments })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn increment(&self, step: usize) -> &[f64] {
        &self.increments[step * self.modes..(step + 1) * self.modes]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }
}
