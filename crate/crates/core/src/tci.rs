//! Transportation-cost inequality through the Girsanov coupling.
//!
//! Under the shifted measure the law `ν` of the solution is that of `v_g`,
//! driven by the same Brownian path as the uncontrolled `v` plus the drift
//! `σ(v_g) g`. Any coupling bounds the Wasserstein distance, so
//! `W₂(ν, μ)² ≤ E sup_t ‖v_g - v‖²`, while the relative entropy is
//! `½‖g‖²_{L²(0,T;ℋ)}` for deterministic `g`. The check compares
//! `E sup_t ‖v_g - v‖² / (2 H(ν|μ))` with `C = 2σ̄_b² exp{2T(1 + 33c_σ²)}`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::skeleton::Control;
use crate::spde::coupled_pair;
use crate::stats::{mean_stderr, MeanEstimate};

/// Number of standard errors the estimated ratio may exceed the constant by.
pub const MC_SIGMAS: f64 = 3.0;

/// `2σ̄_b² exp{2T(1 + 33c_σ²)}`.
pub fn tci_constant(sigma_bar: f64, c_sigma: f64, horizon: f64) -> Result<f64> {
    if !(sigma_bar > 0.0 && sigma_bar.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma_bar must be positive, got {sigma_bar}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    if !(c_sigma >= 0.0 && c_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("c_sigma must be nonnegative, got {c_sigma}")));
    }
    Ok(2.0 * sigma_bar * sigma_bar * (2.0 * horizon * (1.0 + 33.0 * c_sigma * c_sigma)).exp())
}

/// `½‖g‖²_{L²(0,T;ℋ)}`.
pub fn entropy(g: &Control) -> f64 {
    0.5 * g.norm_sq()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TciExperiment {
    pub g: Control,
    pub n_samples: usize,
    pub seed: u64,
}

fn check(model: &Model, exp: &TciExperiment) -> Result<f64> {
    let sigma_bar = model.noise.constants().sigma_bar_b.ok_or_else(|| {
        Error::InvalidParameter("coupling check needs a bounded noise coefficient (additive or bounded family)".into())
    })?;
    if exp.n_samples < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 coupled pairs, got {}", exp.n_samples)));
    }
    if exp.g.steps() != model.steps || exp.g.modes() != model.noise.modes() {
        return Err(Error::LengthMismatch {
            expected: model.steps * model.noise.modes(),
            got: exp.g.steps() * exp.g.modes(),
        });
    }
    Ok(sigma_bar)
}

/// Monte Carlo mean of `sup_t ‖v_g - v‖²` over pairs on streams `0..n_samples`.
pub fn coupling_distance(model: &Model, exp: &TciExperiment) -> Result<MeanEstimate> {
    check(model, exp)?;
    let d: Vec<f64> = (0..exp.n_samples as u64)
        .into_par_iter()
        .map(|stream| {
            let path = model.noise.sample_path(model.steps, model.tau(), exp.seed, stream)?;
            let (v, vg) = coupled_pair(model, &exp.g, &path)?;
            vg.trajectory.sup_distance_sq(&v.trajectory)
        })
        .collect::<Result<_>>()?;
    Ok(mean_stderr(&d))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TciReport {
    pub constant: f64,
    pub entropy: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// `estimate / (2·entropy)`
    pub ratio: f64,
    pub ratio_stderr: f64,
    /// `constant - ratio`
    pub margin: f64,
    pub pass: bool,
}

/// Passes when `ratio - 3·stderr(ratio) ≤ C`.
pub fn tci_ratio_check(model: &Model, exp: &TciExperiment) -> Result<TciReport> {
    let sigma_bar = check(model, exp)?;
    let h = entropy(&exp.g);
    if h == 0.0 {
        return Err(Error::ZeroEntropy);
    }
    let constant = tci_constant(sigma_bar, model.noise.constants().c_sigma, model.horizon)?;
    let est = coupling_distance(model, exp)?;
    let ratio = est.mean / (2.0 * h);
    let ratio_stderr = est.stderr / (2.0 * h);
    Ok(TciReport {
        constant,
        entropy: h,
        estimate: est.mean,
        stderr: est.stderr,
        ratio,
        ratio_stderr,
        margin: constant - ratio,
        pass: ratio - MC_SIGMAS * ratio_stderr <= constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::implicit_step::SolverOptions;
    use crate::mesh::Grid;
    use crate::noise::{Multiplier, NoiseModel};
    use crate::plaplace::PLaplaceOperator;
    use approx::assert_relative_eq;

    fn model(p: f64, delta: f64, mult: Multiplier, steps: usize) -> Model {
        let grid = Grid::new(1, 4.0, 33).unwrap();
        let noise = NoiseModel::geometric(grid, 4, 0.5, 1.0, mult).unwrap();
        let u0 = grid.sample(|x, _| (-x * x).exp());
        Model::new(PLaplaceOperator::new(p, delta).unwrap(), noise, u0, 1.0, steps, SolverOptions::default()).unwrap()
    }

    #[test]
    fn constant_formula() {
        let c = tci_constant(1.0, 0.0, 1.0).unwrap();
        assert!((c - 2.0 * std::f64::consts::E.powi(2)).abs() <= 1e-12);
        assert_relative_eq!(c, 14.7781121978613, max_relative = 1e-12);
        assert_relative_eq!(tci_constant(1.5, 0.3, 1e-12).unwrap(), 2.0 * 2.25, max_relative = 1e-9);
        assert_relative_eq!(tci_constant(2.0, 0.3, 0.5).unwrap(), 4.0 * tci_constant(1.0, 0.3, 0.5).unwrap(), max_relative = 1e-15);
        assert!(tci_constant(0.0, 0.0, 1.0).is_err());
        assert!(tci_constant(1.0, 0.0, 0.0).is_err());
        assert!(tci_constant(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&Control::zeros(10, 3, 0.1)), 0.0);
        let g = Control::constant(64, 1.0 / 64.0, &[0.6, 0.8]);
        assert_relative_eq!(entropy(&g), 0.5, max_relative = 1e-14);
        let g = Control::from_fn(16, 3, 1.0 / 16.0, |k, j| (k * 3 + j) as f64 * 0.1 - 1.0);
        assert_eq!(entropy(&g.scaled(2.0)), 4.0 * entropy(&g));
    }

    #[test]
    fn zero_control_coupling_is_exactly_zero() {
        let m = model(3.0, 1e-4, Multiplier::Bounded, 16);
        let exp = TciExperiment { g: Control::zeros(16, 4, m.tau()), n_samples: 8, seed: 4 };
        let d = coupling_distance(&m, &exp).unwrap();
        assert_eq!((d.mean, d.stderr), (0.0, 0.0));
        assert!(matches!(tci_ratio_check(&m, &exp), Err(Error::ZeroEntropy)));
    }

    #[test]
    fn additive_linear_coupling_has_zero_variance_and_scales() {
        let m = model(2.0, 0.0, Multiplier::Additive, 16);
        let g = Control::constant(16, m.tau(), &[0.5, 0.2, 0.0, 0.1]);
        let full = coupling_distance(&m, &TciExperiment { g: g.clone(), n_samples: 20, seed: 1 }).unwrap();
        assert!(full.stderr <= 1e-9 * full.mean, "{full:?}");
        let half = coupling_distance(&m, &TciExperiment { g: g.scaled(0.5), n_samples: 20, seed: 1 }).unwrap();
        assert_relative_eq!(full.mean / half.mean, 4.0, max_relative = 1e-6);
        let r1 = tci_ratio_check(&m, &TciExperiment { g: g.clone(), n_samples: 20, seed: 1 }).unwrap();
        let r2 = tci_ratio_check(&m, &TciExperiment { g: g.scaled(3.0), n_samples: 20, seed: 1 }).unwrap();
        assert_relative_eq!(r1.ratio, r2.ratio, max_relative = 1e-6);
    }

    #[test]
    fn bounded_noise_passes_with_margin() {
        let m = model(3.0, 1e-4, Multiplier::Bounded, 16);
        let c = m.noise.constants();
        for g in [
            Control::constant(16, m.tau(), &[1.0, 0.0, 0.0, 0.0]),
            Control::from_fn(16, 4, m.tau(), |k, j| ((k + j) as f64).cos()),
        ] {
            let rep = tci_ratio_check(&m, &TciExperiment { g, n_samples: 50, seed: 2 }).unwrap();
            assert!(rep.pass && rep.margin > 0.0, "{rep:?}");
            assert_eq!(rep.constant, tci_constant(c.sigma_bar_b.unwrap(), c.c_sigma, 1.0).unwrap());
        }
    }

    #[test]
    fn linear_noise_is_rejected() {
        let m = model(3.0, 1e-4, Multiplier::Linear, 8);
        let exp = TciExperiment { g: Control::zeros(8, 4, m.tau()), n_samples: 4, seed: 0 };
        assert!(coupling_distance(&m, &exp).is_err());
        let m = model(3.0, 1e-4, Multiplier::Bounded, 8);
        assert!(coupling_distance(&m, &TciExperiment { n_samples: 1, ..exp }).is_err());
    }
}
