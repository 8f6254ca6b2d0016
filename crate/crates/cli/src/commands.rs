//! One function per subcommand. Each returns the artifacts it would write;
//! the caller decides where they go.

use rayon::prelude::*;
use serde::Serialize;

use plap_core::implicit_step::{energy_identity_defect, solve_resolvent, ResolventProblem};
use plap_core::ldp::{
    condition_c1_experiment, condition_c2_experiment, rare_event_cells, rare_event_distances, rate_function_estimate,
    OscillationSchedule, RateProblem,
};
use plap_core::mesh::Field;
use plap_core::rng::CounterRng;
use plap_core::skeleton::{solve_skeleton, solve_skeleton_direct, solve_skeleton_general, time_increment_statistic};
use plap_core::spde::{moment_estimates, simulate_ensemble};
use plap_core::stats::loglog_fit;
use plap_core::tci::{tci_constant, tci_ratio_check, TciExperiment, TciReport};
use plap_core::{Grid, PLaplaceOperator, SolverOptions};

use crate::config::{padded_constant, ControlKind, LoadedConfig, RateTarget};
use crate::error::CliError;
use crate::output::Artifacts;
use crate::Subcommand;

type Out = Result<Artifacts, CliError>;

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn run(sub: Subcommand, cfg: &LoadedConfig, seed: u64) -> Out {
    let rep = cfg.config.validate(sub);
    if !rep.is_ok() {
        return Err(CliError::Invalid(rep.errors));
    }
    let mut art = Artifacts::new(sub.name(), &cfg.hash, seed);
    match sub {
        Subcommand::StepCheck => step_check(cfg, seed, &mut art)?,
        Subcommand::Skeleton => skeleton(cfg, &mut art)?,
        Subcommand::Simulate => simulate(cfg, seed, &mut art)?,
        Subcommand::LdpC1 => ldp_c1(cfg, seed, &mut art)?,
        Subcommand::LdpC2 => ldp_c2(cfg, &mut art)?,
        Subcommand::LdpRate => ldp_rate(cfg, &mut art)?,
        Subcommand::RareEvent => rare_event(cfg, seed, &mut art)?,
        Subcommand::Tci => tci(cfg, seed, &mut art)?,
        Subcommand::Refine => refine(cfg, &mut art)?,
    }
    Ok(art)
}

/// Standard normal interior values, zero on the boundary.
fn random_field(grid: Grid, seed: u64, stream: u64) -> Field {
    let rng = CounterRng::new(seed, stream);
    let mut u = Field::new(grid, (0..grid.node_count()).map(|i| rng.normal(0, i as u64)).collect())
        .expect("normal samples are finite");
    u.zero_boundary();
    u
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CheckSummary {
    check: &'static str,
    p: f64,
    samples: usize,
    worst: f64,
    threshold: f64,
    pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct StepCheckReport {
    tau: f64,
    checks: Vec<CheckSummary>,
    pass: bool,
}

/// Directional energy-gradient, monotonicity, nonexpansiveness and
/// energy-identity checks on random fields.
fn step_check(cfg: &LoadedConfig, seed: u64, art: &mut Artifacts) -> Result<(), CliError> {
    let grid = cfg.grid()?;
    let base = cfg.operator()?;
    let t = cfg.config.time.expect("validated");
    let tau = t.horizon / t.steps as f64;
    let sc = cfg.config.step_check.clone().unwrap_or_default();
    let solver: SolverOptions = cfg.config.solver.into();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for &p in &sc.p_values {
        let op_fd = PLaplaceOperator::new(p, sc.fd_delta)?;
        let op = PLaplaceOperator::new(p, base.delta())?;
        let samples: Vec<[f64; 4]> = (0..sc.samples as u64)
            .into_par_iter()
            .map(|s| -> Result<[f64; 4], CliError> {
                let u = random_field(grid, seed, 4 * s);
                let v = random_field(grid, seed, 4 * s + 1);
                let w = random_field(grid, seed, 4 * s + 2);
                let eta = 1e-6;
                let fd = (op_fd.energy(&u.add_scaled(eta, &w)) - op_fd.energy(&u.add_scaled(-eta, &w))) / (2.0 * eta);
                let an = -op_fd.apply(&u).dot(&w);
                let grad_err = (fd - an).abs() / an.abs().max(f64::MIN_POSITIVE);
                let scale = op.apply(&u).sub(&op.apply(&v)).l2_norm() * u.sub(&v).l2_norm();
                let gap = op.monotonicity_gap(&u, &v)? / scale.max(f64::MIN_POSITIVE);
                let p1 = ResolventProblem::new(op, tau, u.clone())?;
                let p2 = ResolventProblem::new(op, tau, v.clone())?;
                let (v1, s1) = solve_resolvent(&p1, &solver, &u)?;
                let (v2, s2) = solve_resolvent(&p2, &solver, &v)?;
                let excess = v1.sub(&v2).l2_norm() - u.sub(&v).l2_norm() - 2.0 * s1.tol.max(s2.tol);
                let forcing = w.scaled(0.1);
                let p3 = ResolventProblem::new(op, tau, u.add(&forcing))?;
                let (v3, s3) = solve_resolvent(&p3, &solver, &u)?;
                let defect = energy_identity_defect(&op, tau, &u, &v3, &forcing).abs() / s3.tol;
                Ok([grad_err, gap, excess, defect])
            })
            .collect::<Result<_, _>>()?;
        let specs: [(&'static str, f64, bool); 4] = [
            ("energy_gradient", 1e-5, true),
            ("monotonicity", -1e-12, false),
            ("nonexpansive", 0.0, true),
            ("energy_identity", 10.0, true),
        ];
        for (c, (name, threshold, upper)) in specs.iter().enumerate() {
            let ok = |x: f64| if *upper { x <= *threshold } else { x >= *threshold };
            for (s, vals) in samples.iter().enumerate() {
                rows.push(format!("{name},{p},{s},{},{threshold},{}", vals[c], ok(vals[c])));
            }
            let worst = samples
                .iter()
                .map(|v| v[c])
                .fold(if *upper { f64::NEG_INFINITY } else { f64::INFINITY }, |a, b| if *upper { a.max(b) } else { a.min(b) });
            checks.push(CheckSummary { check: name, p, samples: samples.len(), worst, threshold: *threshold, pass: ok(worst) });
        }
    }
    art.csv("cells.csv", "check,p,sample,value,threshold,pass", rows);
    let pass = checks.iter().all(|c| c.pass);
    art.json("report.json", &StepCheckReport { tau, checks, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SkeletonReport {
    control_norm_sq: f64,
    picard_iterations: usize,
    picard_differences: Vec<f64>,
    picard_ratios: Vec<f64>,
    deltas: Vec<f64>,
    increments: Vec<f64>,
    increment_slope: Option<f64>,
    sup_l2_sq: f64,
    integral_y_q: f64,
    q: f64,
    final_energy: f64,
    energy_non_increasing: bool,
    max_residual_ratio: f64,
    clip_levels: Vec<plap_core::skeleton::ClipLevelRecord>,
}

fn skeleton(cfg: &LoadedConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let setup = cfg.setup()?;
    let m = &setup.model;
    let sk = cfg.config.skeleton_or_default();
    let (sol, clip_levels) = if sk.clip_levels.is_empty() {
        (solve_skeleton(m, &setup.control, &setup.picard)?, Vec::new())
    } else {
        let g = solve_skeleton_general(m, &setup.control, &sk.clip_levels, &setup.picard)?;
        (g.solution, g.levels)
    };
    let traj = &sol.trajectory;
    let deltas: Vec<f64> = sk.delta_divisors.iter().map(|d| m.horizon / *d as f64).collect();
    let increments = deltas.iter().map(|d| time_increment_statistic(traj, *d)).collect::<Result<Vec<_>, _>>()?;
    let slope = if increments.iter().all(|v| *v > 0.0) && deltas.len() >= 2 {
        Some(loglog_fit(&deltas, &increments).slope)
    } else {
        None
    };
    let mut diag = Vec::new();
    traj.write_diagnostics_csv(&mut diag)?;
    let diag = String::from_utf8(diag).expect("ascii csv");
    let mut lines = diag.lines();
    let header = lines.next().unwrap_or_default().to_string();
    art.csv("trajectory.csv", &header, lines);
    art.csv(
        "cells.csv",
        "delta,increment,increment_over_delta",
        deltas.iter().zip(&increments).map(|(d, s)| format!("{d},{s},{}", s / d)),
    );
    let final_field = traj.last();
    let g = *final_field.grid();
    art.csv(
        "final_field.csv",
        if g.dim() == 1 { "index,x,value" } else { "index,x,y,value" },
        (0..g.node_count()).map(|i| {
            let [x, y] = g.node_coordinates(i);
            let v = final_field.values()[i];
            if g.dim() == 1 {
                format!("{i},{x},{v}")
            } else {
                format!("{i},{x},{y},{v}")
            }
        }),
    );
    let report = SkeletonReport {
        control_norm_sq: setup.control.norm_sq(),
        picard_iterations: sol.picard_iterations(),
        picard_ratios: sol.picard_ratios(),
        picard_differences: sol.picard_differences.clone(),
        deltas,
        increments,
        increment_slope: slope,
        sup_l2_sq: traj.sup_l2_sq(),
        integral_y_q: traj.integral_y_q(m.q()),
        q: m.q(),
        final_energy: traj.records.last().map(|r| r.energy).unwrap_or(0.0),
        energy_non_increasing: traj.records.windows(2).all(|w| w[1].energy <= w[0].energy),
        max_residual_ratio: traj.max_residual_ratio(),
        clip_levels,
    };
    art.json("report.json", &report)
}

fn simulate(cfg: &LoadedConfig, seed: u64, art: &mut Artifacts) -> Result<(), CliError> {
    let setup = cfg.setup()?;
    let s = cfg.config.simulate.clone().unwrap_or_default();
    let control = s.controlled.then_some(&setup.control);
    let runs = simulate_ensemble(&setup.model, s.epsilon, control, s.samples, seed)?;
    let q = setup.model.q();
    art.csv(
        "cells.csv",
        "stream,sup_l2_sq,integral_y_q,final_l2_sq,max_residual_ratio",
        runs.iter().map(|r| {
            let t = &r.trajectory;
            format!(
                "{},{},{},{},{}",
                r.stream,
                t.sup_l2_sq(),
                t.integral_y_q(q),
                t.records.last().map(|x| x.l2_sq).unwrap_or(0.0),
                t.max_residual_ratio()
            )
        }),
    );
    if let Some(first) = runs.first() {
        let mut diag = Vec::new();
        first.trajectory.write_diagnostics_csv(&mut diag)?;
        let diag = String::from_utf8(diag).expect("ascii csv");
        let mut lines = diag.lines();
        let header = lines.next().unwrap_or_default().to_string();
        art.csv("trajectory.csv", &header, lines);
    }
    #[derive(Serialize)]
    struct SimulateReport {
        epsilon: f64,
        controlled: bool,
        moments: plap_core::spde::MomentReport,
    }
    art.json("report.json", &SimulateReport { epsilon: s.epsilon, controlled: s.controlled, moments: moment_estimates(&runs)? })
}

fn ldp_c1(cfg: &LoadedConfig, seed: u64, art: &mut Artifacts) -> Result<(), CliError> {
    let setup = cfg.setup()?;
    let c = cfg.config.c1.clone().expect("validated");
    let h = setup.control.clone();
    let rep = condition_c1_experiment(&setup.model, |_| h.clone(), &c.epsilons, c.samples, seed, cfg.config.control.bound, &setup.picard)?;
    art.csv(
        "cells.csv",
        "epsilon,control_norm_sq,samples,mean,stderr",
        rep.cells.iter().map(|c| {
            format!("{},{},{},{},{}", c.epsilon, c.control_norm_sq, c.statistic.n, c.statistic.mean, c.statistic.stderr)
        }),
    );
    art.json("report.json", &rep)
}

fn ldp_c2(cfg: &LoadedConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let setup = cfg.setup()?;
    let c = cfg.config.c2.clone().expect("validated");
    let sched = OscillationSchedule { amplitude: c.amplitude, mode: c.mode, frequencies: c.frequencies.clone() };
    let deltas: Vec<f64> = c.delta_divisors.iter().map(|d| setup.model.horizon / *d as f64).collect();
    let rep = condition_c2_experiment(&setup.model, &setup.control, &sched, &deltas, cfg.config.control.bound, &setup.picard)?;
    art.csv(
        "cells.csv",
        "frequency,control_norm_sq,sup_distance,increment_constant,increment_slope",
        rep.cells.iter().map(|c| {
            format!("{},{},{},{},{}", c.frequency, c.control_norm_sq, c.sup_distance, c.increment_constant, opt(c.increment_slope))
        }),
    );
    art.json("report.json", &rep)
}

fn ldp_rate(cfg: &LoadedConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let setup = cfg.setup()?;
    let r = cfg.config.rate.clone().expect("validated");
    let m = &setup.model;
    let zero = plap_core::Control::zeros(m.steps, m.noise.modes(), m.tau());
    let (target, planted) = match r.target {
        RateTarget::Flow => (solve_skeleton_direct(m, &zero)?, None),
        RateTarget::Planted => (solve_skeleton_direct(m, &setup.control)?, Some(0.5 * setup.control.norm_sq())),
        RateTarget::Shifted => {
            let mut shifted = m.clone();
            shifted.u0 = m.u0.scaled(0.5);
            (solve_skeleton_direct(&shifted, &zero)?, None)
        }
    };
    let prob = RateProblem::from_trajectory(&target, r.weight, r.misfit)?;
    let est = rate_function_estimate(m, &prob, &r.options())?;
    let h_hat = est.h_hat.clone().unwrap_or(zero);
    art.csv(
        "cells.csv",
        "k,j,value",
        (0..h_hat.steps()).flat_map(|k| h_hat.at(k).iter().enumerate().map(move |(j, v)| format!("{k},{j},{v}")).collect::<Vec<_>>()),
    );
    #[derive(Serialize)]
    struct RateReport {
        upper_bound: bool,
        target: RateTarget,
        planted_energy: Option<f64>,
        estimate: plap_core::ldp::RateEstimate,
    }
    art.json("report.json", &RateReport { upper_bound: true, target: r.target, planted_energy: planted, estimate: est })
}

fn rare_event(cfg: &LoadedConfig, seed: u64, art: &mut Artifacts) -> Result<(), CliError> {
    let setup = cfg.setup()?;
    let r = cfg.config.rare_event.clone().expect("validated");
    let mut cells = Vec::new();
    for &eps in &r.epsilons {
        let d = rare_event_distances(&setup.model, eps, r.samples, seed)?;
        cells.extend(rare_event_cells(&d, eps, &r.gammas)?);
    }
    art.csv(
        "cells.csv",
        "epsilon,gamma,samples,hits,p_hat,wilson_low,wilson_high,exponent,exponent_lower_bound,upper_bound_only",
        cells.iter().map(|c| {
            format!(
                "{},{},{},{},{},{},{},{},{},{}",
                c.epsilon,
                c.gamma,
                c.samples,
                c.hits,
                c.p_hat,
                c.wilson_low,
                c.wilson_high,
                opt(c.exponent),
                c.exponent_lower_bound,
                c.upper_bound_only
            )
        }),
    );
    #[derive(Serialize)]
    struct RareReport<'a> {
        cells: &'a [plap_core::ldp::RareEventCell],
    }
    art.json("report.json", &RareReport { cells: &cells })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct TciSuiteReport {
    constant: f64,
    sigma_bar_b: f64,
    c_sigma: f64,
    horizon: f64,
    samples: usize,
    cells: Vec<TciReport>,
    pass: bool,
}

fn tci(cfg: &LoadedConfig, seed: u64, art: &mut Artifacts) -> Result<(), CliError> {
    let setup = cfg.setup()?;
    let t = cfg.config.tci.clone().expect("validated");
    let m = &setup.model;
    let consts = m.noise.constants();
    let sigma_bar = consts.sigma_bar_b.expect("validated bounded family");
    let cells = t
        .controls
        .iter()
        .map(|g| {
            let g = padded_constant(m.steps, m.noise.modes(), m.tau(), g)?;
            Ok(tci_ratio_check(m, &TciExperiment { g, n_samples: t.samples, seed })?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    art.csv(
        "cells.csv",
        "cell,constant,entropy,estimate,stderr,ratio,ratio_stderr,margin,pass",
        cells.iter().enumerate().map(|(i, c)| {
            format!(
                "{i},{},{},{},{},{},{},{},{}",
                c.constant, c.entropy, c.estimate, c.stderr, c.ratio, c.ratio_stderr, c.margin, c.pass
            )
        }),
    );
    let report = TciSuiteReport {
        constant: tci_constant(sigma_bar, consts.c_sigma, m.horizon)?,
        sigma_bar_b: sigma_bar,
        c_sigma: consts.c_sigma,
        horizon: m.horizon,
        samples: t.samples,
        pass: cells.iter().all(|c| c.pass),
        cells,
    };
    art.json("report.json", &report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct RefineLevel {
    n: usize,
    steps: usize,
    /// `max_k ‖u^l(t_k) - u^{l+1}(t_k)‖` on the coarse nodes; absent on the finest level.
    difference_to_next: Option<f64>,
    ratio: Option<f64>,
    sup_l2_sq: f64,
}

/// Skeleton solves under simultaneous doubling of the space and time resolution.
fn refine(cfg: &LoadedConfig, art: &mut Artifacts) -> Result<(), CliError> {
    if cfg.config.control.kind == ControlKind::File {
        return Err(CliError::Config("refine needs a zero or constant control".into()));
    }
    let levels = cfg.config.refine.clone().expect("validated").levels;
    let base = cfg.grid()?;
    let t = cfg.config.time.expect("validated");
    let picard = cfg.config.picard.into();
    let trajs = (0..levels)
        .map(|l| {
            let n = (base.points_per_axis() - 1) * (1 << l) + 1;
            let grid = Grid::new(base.dim(), base.half_width(), n)?;
            let model = cfg.model_on(grid, t.steps << l)?;
            let h = cfg.control_for(&model)?;
            Ok(solve_skeleton(&model, &h, &picard)?.trajectory)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut out: Vec<RefineLevel> = Vec::new();
    for (l, tr) in trajs.iter().enumerate() {
        let diff = trajs.get(l + 1).map(|fine| {
            (0..tr.fields.len())
                .map(|k| {
                    let coarse = &tr.fields[k];
                    let restricted = restrict(&fine.fields[2 * k], *coarse.grid());
                    coarse.sub(&restricted).l2_norm()
                })
                .fold(0.0, f64::max)
        });
        out.push(RefineLevel {
            n: tr.fields[0].grid().points_per_axis(),
            steps: tr.steps(),
            difference_to_next: diff,
            ratio: None,
            sup_l2_sq: tr.sup_l2_sq(),
        });
    }
    for l in 1..out.len() {
        if let (Some(a), Some(b)) = (out[l - 1].difference_to_next, out[l].difference_to_next) {
            out[l].ratio = Some(b / a);
        }
    }
    art.csv(
        "cells.csv",
        "level,n,steps,difference_to_next,ratio,sup_l2_sq",
        out.iter().enumerate().map(|(l, r)| {
            format!("{l},{},{},{},{},{}", r.n, r.steps, opt(r.difference_to_next), opt(r.ratio), r.sup_l2_sq)
        }),
    );
    #[derive(Serialize)]
    struct RefineReport<'a> {
        levels: &'a [RefineLevel],
    }
    art.json("report.json", &RefineReport { levels: &out })
}

/// Injection of a field on the doubled grid onto the coarse nodes.
fn restrict(fine: &Field, coarse: Grid) -> Field {
    let nf = fine.grid().points_per_axis();
    let values = (0..coarse.node_count())
        .map(|idx| {
            let [i, j] = coarse.node_indices(idx);
            fine.values()[2 * j * nf + 2 * i]
        })
        .collect();
    Field::new(coarse, values).expect("restriction of a finite field")
}
