use plap_core::implicit_step::energy_identity_defect;
use plap_core::ldp::rare_event_cells;
use plap_core::mesh::{divergence, gradient};
use plap_core::skeleton::solve_skeleton;
use plap_core::spde::simulate;
use plap_core::tci::entropy;
use plap_core::{
    solve_resolvent, BrownianPath, Control, Field, Grid, Model, Multiplier, NoiseModel, PLaplaceOperator, PicardOptions,
    ResolventProblem, SolverOptions,
};
use proptest::prelude::*;

fn field(grid: Grid, vals: &[f64]) -> Field {
    let mut u = Field::new(grid, vals.to_vec()).unwrap();
    u.zero_boundary();
    u
}

fn grid_1d() -> Grid {
    Grid::new(1, 2.0, 17).unwrap()
}

fn grid_2d() -> Grid {
    Grid::new(2, 1.0, 7).unwrap()
}

fn small_model(p: f64, family: Multiplier) -> Model {
    let grid = grid_1d();
    let noise = NoiseModel::geometric(grid, 3, 0.5, 1.0, family).unwrap();
    let u0 = grid.sample(|x, _| (-x * x).exp());
    Model::new(PLaplaceOperator::new(p, 1e-4).unwrap(), noise, u0, 0.5, 8, SolverOptions::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_and_divergence_are_adjoint(
        a in prop::collection::vec(-1.0f64..1.0, 49),
        b in prop::collection::vec(-1.0f64..1.0, 49),
    ) {
        let grid = grid_2d();
        let u = field(grid, &a);
        let g = gradient(&field(grid, &b));
        let lhs = gradient(&u).dot(&g) + u.dot(&divergence(&g));
        prop_assert!(lhs.abs() <= 1e-12 * (1.0 + u.l2_norm() * g.norm()));
    }

    #[test]
    fn operator_is_monotone(
        a in prop::collection::vec(-2.0f64..2.0, 17),
        b in prop::collection::vec(-2.0f64..2.0, 17),
        p in 1.05f64..6.0,
        delta in prop_oneof![Just(0.0), 1e-6f64..1e-2],
    ) {
        let (u, v) = (field(grid_1d(), &a), field(grid_1d(), &b));
        let op = PLaplaceOperator::new(p, delta).unwrap();
        let scale = (1.0 + u.l2_norm() + v.l2_norm()).powi(2);
        prop_assert!(op.monotonicity_gap(&u, &v).unwrap() >= -1e-12 * scale);
    }

    #[test]
    fn unregularised_operator_is_odd(a in prop::collection::vec(-2.0f64..2.0, 49), p in 1.2f64..5.0) {
        let u = field(grid_2d(), &a);
        let op = PLaplaceOperator::new(p, 0.0).unwrap();
        let lhs = op.apply(&u.scaled(-1.0));
        let rhs = op.apply(&u).scaled(-1.0);
        prop_assert!(lhs.sub(&rhs).max_abs() <= 1e-12 * (1.0 + rhs.max_abs()));
    }

    #[test]
    fn resolvent_meets_residual_and_is_nonexpansive(
        a in prop::collection::vec(-1.0f64..1.0, 17),
        b in prop::collection::vec(-1.0f64..1.0, 17),
        p in prop_oneof![Just(1.5), Just(2.0), Just(3.0), Just(4.0)],
        tau in 0.01f64..0.2,
    ) {
        let grid = grid_1d();
        let (f1, f2) = (field(grid, &a), field(grid, &b));
        let op = PLaplaceOperator::new(p, 1e-4).unwrap();
        let opts = SolverOptions::default();
        let p1 = ResolventProblem::new(op, tau, f1.clone()).unwrap();
        let p2 = ResolventProblem::new(op, tau, f2.clone()).unwrap();
        let (v1, s1) = solve_resolvent(&p1, &opts, &grid.zeros()).unwrap();
        let (v2, s2) = solve_resolvent(&p2, &opts, &grid.zeros()).unwrap();
        prop_assert!(p1.residual(&v1).l2_norm() <= s1.tol);
        prop_assert!(p2.residual(&v2).l2_norm() <= s2.tol);
        prop_assert!(v1.sub(&v2).l2_norm() <= f1.sub(&f2).l2_norm() + 2.0 * s1.tol.max(s2.tol));
        prop_assert!(s1.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-13 * (1.0 + w[0].abs())));
        prop_assert!(v1.values()[0] == 0.0 && v1.values()[16] == 0.0);
    }

    #[test]
    fn step_satisfies_energy_identity(
        a in prop::collection::vec(-1.0f64..1.0, 17),
        b in prop::collection::vec(-0.5f64..0.5, 17),
        p in prop_oneof![Just(1.5), Just(3.0)],
    ) {
        let grid = grid_1d();
        let (u, g) = (field(grid, &a), field(grid, &b));
        let op = PLaplaceOperator::new(p, 1e-4).unwrap();
        let tau = 0.05;
        let prob = ResolventProblem::new(op, tau, u.add(&g)).unwrap();
        let (v, s) = solve_resolvent(&prob, &SolverOptions::default(), &u).unwrap();
        prop_assert!(energy_identity_defect(&op, tau, &u, &v, &g).abs() <= 10.0 * s.tol);
    }

    #[test]
    fn noise_constants_hold_on_samples(
        a in prop::collection::vec(-3.0f64..3.0, 17),
        b in prop::collection::vec(-3.0f64..3.0, 17),
        family in prop_oneof![Just(Multiplier::Additive), Just(Multiplier::Bounded), Just(Multiplier::Linear)],
    ) {
        let grid = grid_1d();
        let noise = NoiseModel::geometric(grid, 4, 0.5, 1.0, family).unwrap();
        let c = *noise.constants();
        let (u, v) = (field(grid, &a), field(grid, &b));
        let slack = 1e-12;
        prop_assert!(noise.hs_distance(&u, &v) <= c.c_sigma * u.sub(&v).l2_norm() + slack);
        prop_assert!(noise.hs_norm(&u) <= c.sigma_b * (1.0 + u.l2_norm()) + slack);
        if let Some(bar) = c.sigma_bar_b {
            prop_assert!(noise.hs_norm(&u) <= bar + slack);
        }
    }

    #[test]
    fn brownian_paths_are_keyed_by_seed_and_stream(seed in any::<u64>(), stream in 0u64..1000) {
        let a = BrownianPath::sample(6, 3, 0.1, seed, stream).unwrap();
        let b = BrownianPath::sample(6, 3, 0.1, seed, stream).unwrap();
        let c = BrownianPath::sample(6, 3, 0.1, seed, stream + 1).unwrap();
        prop_assert_eq!(a.increments(), b.increments());
        prop_assert_ne!(a.increments(), c.increments());
    }

    #[test]
    fn quadratic_forms_scale_exactly(vals in prop::collection::vec(-3.0f64..3.0, 24)) {
        let h = Control::new(0.125, 3, vals).unwrap();
        let h2 = h.scaled(2.0);
        prop_assert_eq!(h2.norm_sq(), 4.0 * h.norm_sq());
        prop_assert_eq!(entropy(&h2), 4.0 * entropy(&h));
        prop_assert!(h.in_ball(h.norm_sq()));
    }

    #[test]
    fn rare_event_probability_is_monotone_in_threshold(
        d in prop::collection::vec(0.0f64..1.0, 1..60),
        mut gammas in prop::collection::vec(0.0f64..1.2, 2..6),
    ) {
        gammas.sort_by(f64::total_cmp);
        let cells = rare_event_cells(&d, 0.3, &gammas).unwrap();
        prop_assert!(cells.windows(2).all(|w| w[1].p_hat <= w[0].p_hat));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn skeleton_is_deterministic_and_starts_at_initial_field(
        vals in prop::collection::vec(-2.0f64..2.0, 24),
        p in prop_oneof![Just(1.5), Just(2.0), Just(3.0)],
    ) {
        let m = small_model(p, Multiplier::Bounded);
        let h = Control::new(m.tau(), 3, vals).unwrap();
        let a = solve_skeleton(&m, &h, &PicardOptions::default()).unwrap();
        let b = solve_skeleton(&m, &h, &PicardOptions::default()).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a.trajectory.fields[0], &m.u0);
        for r in a.trajectory.records.iter().skip(1) {
            prop_assert!(r.residual <= r.tol);
            prop_assert!(r.identity_defect.abs() <= 10.0 * r.tol);
        }
    }

    #[test]
    fn silent_simulation_is_the_free_skeleton(seed in any::<u64>(), stream in 0u64..100) {
        let m = small_model(3.0, Multiplier::Bounded);
        let path = BrownianPath::sample(m.steps, 3, m.tau(), seed, stream).unwrap();
        let run = simulate(&m, 0.0, None, &path).unwrap();
        let free = solve_skeleton(&m, &Control::zeros(m.steps, 3, m.tau()), &PicardOptions::default()).unwrap();
        prop_assert_eq!(run.trajectory.fields, free.trajectory.fields);
    }
}
