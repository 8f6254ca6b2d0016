//! Problem setup shared by the deterministic and stochastic solvers, and the
//! trajectory container with its per-step diagnostics.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::implicit_step::{energy_identity_defect, solve_resolvent, ResolventProblem, SolverOptions, StepStats};
use crate::mesh::{Field, Grid};
use crate::noise::NoiseModel;
use crate::plaplace::PLaplaceOperator;

#[derive(Debug, Clone)]
pub struct Model {
    pub op: PLaplaceOperator,
    pub noise: NoiseModel,
    pub u0: Field,
    pub horizon: f64,
    pub steps: usize,
    pub solver: SolverOptions,
}

impl Model {
    pub fn new(op: PLaplaceOperator, noise: NoiseModel, u0: Field, horizon: f64, steps: usize, solver: SolverOptions) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon T must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("need at least one time step".into()));
        }
        u0.same_grid(&noise.mode_shapes()[0])?;
        if !u0.is_finite() {
            return Err(Error::NonFinite);
        }
        solver.validate()?;
        let mut u0 = u0;
        u0.zero_boundary();
        Ok(Self { op, noise, u0, horizon, steps, solver })
    }

    pub fn grid(&self) -> &Grid {
        self.u0.grid()
    }

    pub fn tau(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `q = min(p, 2)`.
    pub fn q(&self) -> f64 {
        self.op.p().min(2.0)
    }

    /// One semi-implicit step `u₊ = (I - τΔ_p)^{-1}(u + σ(ρ) c)`, warm-started from `u`.
    pub fn advance(&self, k: usize, u: &Field, sigma_at: &Field, coeffs: &[f64]) -> Result<(Field, StepRecord)> {
        let forcing = self.noise.apply_sigma(sigma_at, coeffs)?;
        let rhs = u.add(&forcing);
        let prob = ResolventProblem::new(self.op, self.tau(), rhs)?;
        let (next, stats) = solve_resolvent(&prob, &self.solver, u)?;
        let defect = energy_identity_defect(&self.op, self.tau(), u, &next, &forcing);
        let record = StepRecord::new(self, k + 1, &next, Some((&stats, defect)));
        Ok((next, record))
    }

    /// Runs `K` steps, asking `step_data(k, u_k)` for the σ evaluation point and the
    /// noise coefficients of step `k`.
    pub fn run<F>(&self, mut step_data: F) -> Result<Trajectory>
    where
        F: FnMut(usize, &Field) -> (Field, Vec<f64>),
    {
        let mut fields = Vec::with_capacity(self.steps + 1);
        let mut records = Vec::with_capacity(self.steps + 1);
        records.push(StepRecord::new(self, 0, &self.u0, None));
        fields.push(self.u0.clone());
        for k in 0..self.steps {
            let (sigma_at, coeffs) = step_data(k, &fields[k]);
            let (next, rec) = self.advance(k, &fields[k], &sigma_at, &coeffs)?;
            fields.push(next);
            records.push(rec);
        }
        Ok(Trajectory { dt: self.tau(), p: self.op.p(), fields, records })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub l2_sq: f64,
    /// p-Dirichlet energy `E(u_k)` of the (regularised) operator.
    pub energy: f64,
    pub y_norm: f64,
    pub sup_abs: f64,
    pub iterations: usize,
    pub residual: f64,
    pub residual_unregularized: f64,
    pub tol: f64,
    pub identity_defect: f64,
}

impl StepRecord {
    fn new(model: &Model, k: usize, u: &Field, step: Option<(&StepStats, f64)>) -> Self {
        let (iterations, residual, residual_unregularized, tol, identity_defect) = match step {
            Some((s, d)) => (s.iterations, s.residual, s.residual_unregularized, s.tol, d),
            None => (0, 0.0, 0.0, 0.0, 0.0),
        };
        Self {
            k,
            t: k as f64 * model.tau(),
            l2_sq: u.l2_norm_sq(),
            energy: model.op.energy(u),
            y_norm: u.y_norm(model.op.p()).expect("operator exponent already validated"),
            sup_abs: u.max_abs(),
            iterations,
            residual,
            residual_unregularized,
            tol,
            identity_defect,
        }
    }
}

/// Time-indexed fields `u_0, …, u_K` with per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub p: f64,
    pub fields: Vec<Field>,
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.fields.len() - 1
    }

    pub fn last(&self) -> &Field {
        self.fields.last().expect("trajectory holds u_0")
    }

    pub fn sup_l2_sq(&self) -> f64 {
        self.records.iter().fold(0.0, |m, r| m.max(r.l2_sq))
    }

    /// `Σ_{k≥1} dt ‖u_k‖_Y^q`.
    pub fn integral_y_q(&self, q: f64) -> f64 {
        self.records.iter().skip(1).map(|r| self.dt * r.y_norm.powf(q)).sum()
    }

    /// `sup_t ‖u(t)‖² + ∫ ‖u‖_Y^q dt`.
    pub fn uniform_statistic(&self, q: f64) -> f64 {
        self.sup_l2_sq() + self.integral_y_q(q)
    }

    /// `max_k ‖u_k - v_k‖²`.
    pub fn sup_distance_sq(&self, other: &Trajectory) -> Result<f64> {
        if self.fields.len() != other.fields.len() {
            return Err(Error::LengthMismatch { expected: self.fields.len(), got: other.fields.len() });
        }
        let mut m = 0.0_f64;
        for (a, b) in self.fields.iter().zip(&other.fields) {
            a.same_grid(b)?;
            m = m.max(a.sub(b).l2_norm_sq());
        }
        Ok(m)
    }

    pub fn max_residual_ratio(&self) -> f64 {
        self.records
            .iter()
            .skip(1)
            .map(|r| r.residual / r.tol)
            .fold(0.0, f64::max)
    }

    pub fn write_diagnostics_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,t,l2_sq,energy,y_norm,sup_abs,iterations,residual,residual_unregularized,tol,identity_defect")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.k, r.t, r.l2_sq, r.energy, r.y_norm, r.sup_abs, r.iterations, r.residual, r.residual_unregularized, r.tol, r.identity_defect
            )?;
        }
        Ok(())
    }

    /// Row-major binary dump of every `stride`-th field (always including the last).
    pub fn write_snapshots<W: Write>(&self, mut out: W, stride: usize) -> Result<usize> {
        let stride = stride.max(1);
        let mut count = 0;
        for (k, f) in self.fields.iter().enumerate() {
            if k % stride == 0 || k + 1 == self.fields.len() {
                f.write_binary(&mut out)?;
                count += 1;
            }
        }
        Ok(count)
    }
}
