use std::sync::Arc;

use graph_vortex::continuation::{linspace, monotone_family};
use graph_vortex::mountain_pass::{mountain_pass, MountainPassOptions};
use graph_vortex::poisson::poisson_solve;
use graph_vortex::solver::{constant_subsolution, monotone_iterate, solve};
use graph_vortex::{families, Nonlinearity, ProblemInstance, ReducedEquation, SolverOptions, VertexFunction, VortexSet, WeightedGraph};
use proptest::prelude::*;

fn graph_and_vectors(k: usize) -> impl Strategy<Value = (WeightedGraph, Vec<VertexFunction>)> {
    (2usize..14, 0usize..12, any::<bool>(), any::<u64>()).prop_flat_map(move |(n, extra, weighted, seed)| {
        let g = families::random_connected(n, extra, weighted, seed);
        let vecs = prop::collection::vec(prop::collection::vec(-10.0..10.0_f64, n).prop_map(VertexFunction::from), k);
        (Just(g), vecs)
    })
}

fn equation(g: WeightedGraph, vortex_count: usize, lambda: f64) -> ReducedEquation {
    let g = Arc::new(g);
    let n = g.len();
    let m = vortex_count.clamp(1, n);
    let ids: Vec<String> = (0..m).map(|i| g.ids()[i * n / m].clone()).collect();
    let vs = VortexSet::new(&g, &ids).unwrap();
    ReducedEquation::new(ProblemInstance::new(g, vs, lambda).unwrap()).unwrap()
}

fn mu_weighted_abs(g: &WeightedGraph, a: &VertexFunction, b: &VertexFunction) -> f64 {
    g.mu().iter().zip(a.iter().zip(b.iter())).map(|(m, (x, y))| m * (x * y).abs()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn green_identity((g, fs) in graph_and_vectors(2)) {
        let (u, phi) = (&fs[0], &fs[1]);
        let lu = g.laplacian_apply(u).unwrap();
        let lhs = g.gradient_form_integral(u, phi).unwrap();
        let rhs = -g.inner(&lu, phi).unwrap();
        let scale = mu_weighted_abs(&g, &lu, phi).max(1.0);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale, "{lhs} vs {rhs}");
    }

    #[test]
    fn laplacian_integrates_to_zero((g, fs) in graph_and_vectors(1)) {
        let lu = g.laplacian_apply(&fs[0]).unwrap();
        let ones = VertexFunction::constant(g.len(), 1.0);
        let scale = mu_weighted_abs(&g, &lu, &ones).max(1.0);
        prop_assert!(g.integrate(&lu).unwrap().abs() <= 1e-12 * scale);
    }

    #[test]
    fn dirichlet_energy_vanishes_only_on_constants((g, fs) in graph_and_vectors(1), c in -5.0..5.0_f64) {
        let u = &fs[0];
        let e = g.dirichlet_energy(u).unwrap();
        prop_assert!(e >= 0.0);
        if u.max_value() - u.min_value() > 1e-6 {
            prop_assert!(e > 0.0);
        }
        prop_assert!(g.dirichlet_energy(&VertexFunction::constant(g.len(), c)).unwrap() == 0.0);
    }

    #[test]
    fn laplacian_is_linear((g, fs) in graph_and_vectors(2), a in -3.0..3.0_f64, b in -3.0..3.0_f64) {
        let combo = VertexFunction::from(a * &*fs[0] + b * &*fs[1]);
        let lhs = g.laplacian_apply(&combo).unwrap();
        let rhs = VertexFunction::from(a * &*g.laplacian_apply(&fs[0]).unwrap() + b * &*g.laplacian_apply(&fs[1]).unwrap());
        let scale = lhs.norm_inf().max(rhs.norm_inf()).max(1.0);
        prop_assert!((&*lhs - &*rhs).amax() <= 1e-12 * scale);
    }

    #[test]
    fn inversion_residual_and_range(u in -50.0..0.0_f64) {
        let nl = Nonlinearity::default();
        let w = nl.f_of(u).unwrap();
        prop_assert!(w <= 0.0);
        prop_assert!((1.0 + w - w.exp() - u).abs() <= 1e-12);
        let g = nl.vortex_density(u).unwrap();
        prop_assert!((0.0..=4.0 / 27.0 + 1e-15).contains(&g));
    }

    #[test]
    fn inversion_is_monotone(a in -50.0..0.0_f64, b in -50.0..0.0_f64) {
        let nl = Nonlinearity::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(nl.f_of(lo).unwrap() <= nl.f_of(hi).unwrap());
    }

    #[test]
    fn inversion_asymptotics(u in -50.0..-5.0_f64) {
        let w = Nonlinearity::default().f_of(u).unwrap();
        prop_assert!((w - (u - 1.0)).abs() <= 2.0 * (u - 1.0).exp());
    }

    #[test]
    fn poisson_is_linear_and_gauged((g, fs) in graph_and_vectors(2), a in -3.0..3.0_f64, b in -3.0..3.0_f64) {
        let g = Arc::new(g);
        let vol = g.volume();
        let centered: Vec<VertexFunction> = fs
            .iter()
            .map(|f| {
                let mean = g.integrate(f).unwrap() / vol;
                f.map(|x| x - mean)
            })
            .collect();
        let u1 = poisson_solve(&g, &centered[0]).unwrap();
        let u2 = poisson_solve(&g, &centered[1]).unwrap();
        let combo = VertexFunction::from(a * &*centered[0] + b * &*centered[1]);
        let u = poisson_solve(&g, &combo).unwrap();
        let expected = a * &*u1 + b * &*u2;
        prop_assert!((&*u - &expected).amax() <= 1e-10 * u.norm_inf().max(1.0));
        prop_assert!(g.integrate(&u1).unwrap().abs() <= 1e-12 * vol * u1.norm_inf().max(1.0));
        let back = g.laplacian_apply(&u1).unwrap();
        prop_assert!((&*back - &*centered[0]).amax() <= 1e-9 * centered[0].norm_inf().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_is_minus_residual((g, fs) in graph_and_vectors(3), m in 1usize..4, lambda in 20.0..400.0_f64) {
        let eq = equation(g, m, lambda);
        // keep u = u₀ + v strictly negative
        let v = VertexFunction::from(&*fs[0].map(|x| -0.1 - x.abs()) - &**eq.u0());
        let grad = eq.gradient(&v).unwrap();
        let r = eq.residual(&v).unwrap();
        prop_assert!((&*grad + &*r).amax() <= 1e-12 * r.norm_inf().max(1.0));
        let hh = eq.hessian_apply(&v, &fs[1]).unwrap();
        let hphi = eq.hessian_apply(&v, &fs[2]).unwrap();
        let a = eq.graph().inner(&hh, &fs[2]).unwrap();
        let b = eq.graph().inner(&fs[1], &hphi).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
    }

    #[test]
    fn monotone_output_dominates_subsolution(
        (g, _) in graph_and_vectors(0),
        m in 1usize..4,
        factor in 1.0..3.0_f64,
    ) {
        let probe = equation(g.clone(), m, 1.0);
        let lambda = factor * probe.instance().constant_subsolution_lambda();
        let eq = equation(g, m, lambda);
        let sub = constant_subsolution(&eq).unwrap();
        let rep = monotone_iterate(&eq, &sub, &SolverOptions::default()).unwrap();
        prop_assert!(rep.converged, "{:?}", rep.notes);
        prop_assert!((&*rep.v - &*sub).min() >= -1e-12);
        prop_assert!(eq.full(&rep.v).max_value() <= 1e-10);
        let target = 4.0 * std::f64::consts::PI * eq.instance().vortices().count() as f64;
        prop_assert!((eq.density_integral(&rep.v) - target).abs() <= 1e-8 * target);
    }

    #[test]
    fn minimal_branch_increases_with_lambda((g, _) in graph_and_vectors(0), m in 1usize..4, span in 0.2..2.0_f64) {
        let probe = equation(g.clone(), m, 1.0);
        let lo = probe.instance().constant_subsolution_lambda();
        let eq = equation(g, m, lo);
        let fam = monotone_family(&eq, &linspace(lo, lo * (1.0 + span), 6), None, &SolverOptions::default()).unwrap();
        for (pair, lam) in fam.solutions.windows(2).zip(fam.lambdas.windows(2)) {
            let a = eq.with_lambda(lam[0]).unwrap().full(&pair[0].v);
            let b = eq.with_lambda(lam[1]).unwrap().full(&pair[1].v);
            prop_assert!((&*b - &*a).min() >= -1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn mountain_pass_level_dominates_and_descends(lambda in 170.0..320.0_f64) {
        let eq = equation(families::two_node(), 1, lambda);
        let sol = solve(&eq, &SolverOptions::default()).unwrap();
        let mp = mountain_pass(&eq, &sol.v, &MountainPassOptions::default()).unwrap();
        prop_assert!(mp.minimax_value >= mp.j_min.max(mp.j_endpoint) - 1e-12);
        prop_assert!(mp.max_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)));
        if mp.second_solution.converged {
            prop_assert!(mp.distinct_gap >= 1e-3);
            prop_assert!(mp.spectrum_at_second[0] <= 1e-8);
        }
    }
}
