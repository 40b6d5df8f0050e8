use disphyp::fit::logspace;
use disphyp::fresnel::{
    build_surface, chart_consistency, contact_indices, sphere_grid, ContactOptions, ExprPhase, FresnelSurface, Phase,
    ScaledPhase,
};
use disphyp::oscillatory::{
    check_hypotheses, evaluate_model_integral, fit_decay, modulus_bound, Amplitude, ExprField, ModelIntegralSpec,
    OscOptions,
};
use proptest::prelude::*;
use std::sync::Arc;

fn surface(phase: Arc<dyn Phase>, n: usize, per_chart: usize) -> FresnelSurface {
    build_surface(phase, 0.0, &sphere_grid(n, per_chart).unwrap()).unwrap()
}

fn expr(src: &str, n: usize) -> Arc<dyn Phase> {
    Arc::new(ExprPhase::parse(src, n, 0.0).unwrap())
}

fn opts() -> ContactOptions {
    ContactOptions { directions: 16, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn indices_are_dilation_invariant(factor in 0.01f64..100.0, which in 0usize..3) {
        let src = ["sqrt(xi1^2 + 4*xi2^2)", "(xi1^4 + xi2^4)^(1/4)", "(xi1^4 + xi1^2*xi2^2 + xi2^4)^(1/4)"][which];
        let base = expr(src, 2);
        let scaled: Arc<dyn Phase> = Arc::new(ScaledPhase { inner: base.clone(), factor });
        let a = contact_indices(&surface(base, 2, 24), &opts()).unwrap();
        let b = contact_indices(&surface(scaled, 2, 24), &opts()).unwrap();
        prop_assert_eq!(a.gamma, b.gamma);
        prop_assert_eq!(a.gamma0, b.gamma0);
        prop_assert_eq!(a.point_orders, b.point_orders);
    }

    #[test]
    fn spheres_have_contact_order_two(radius in 0.05f64..20.0, n in 2usize..=3) {
        let phase: Arc<dyn Phase> = Arc::new(ScaledPhase { inner: expr("abs_xi", n), factor: 1.0 / radius });
        let r = contact_indices(&surface(phase, n, if n == 2 { 16 } else { 4 }), &opts()).unwrap();
        prop_assert_eq!(r.gamma, Some(2));
        prop_assert_eq!(r.gamma0, Some(2));
        // Curvature of a sphere of radius R is 1/R in every direction.
        prop_assert!((r.kappa * radius - 1.0).abs() < 1e-6, "kappa {}", r.kappa);
        prop_assert!((r.kappa0 * radius - 1.0).abs() < 1e-6, "kappa0 {}", r.kappa0);
    }
}

#[test]
fn charts_agree_where_they_overlap() {
    for src in ["abs_xi", "sqrt(xi1^2 + 4*xi2^2)", "(xi1^4 + xi2^4)^(1/4)"] {
        let s = surface(expr(src, 2), 2, 32);
        let cc = chart_consistency(&s, &opts()).unwrap();
        assert!(cc.compared > 0 && cc.mismatches == 0, "{src}: {cc:?}");
    }
    let s = surface(expr("abs_xi", 3), 3, 6);
    let cc = chart_consistency(&s, &opts()).unwrap();
    assert!(cc.compared > 0 && cc.mismatches == 0);
}

#[test]
fn finite_indices_have_positive_kappa() {
    for src in ["abs_xi", "sqrt(xi1^2 + 4*xi2^2)", "(xi1^4 + xi2^4)^(1/4)", "(xi1^6 + xi2^6)^(1/6)"] {
        let r = contact_indices(&surface(expr(src, 2), 2, 32), &ContactOptions { gamma_max: 6, ..opts() }).unwrap();
        if r.gamma.is_some() {
            assert!(r.kappa > r.tol_contact, "{src}: {}", r.kappa);
        }
        if r.gamma0.is_some() {
            assert!(r.kappa0 > r.tol_contact, "{src}: {}", r.kappa0);
        }
    }
    let flat = contact_indices(&surface(expr("(xi1^6 + xi2^6)^(1/6)", 2), 2, 32), &opts()).unwrap();
    assert!(flat.gamma.is_none() && flat.gamma_max_exceeded);
}

fn unit() -> Amplitude {
    Arc::new(|_: &[f64]| 1.0)
}

fn bundled_specs() -> Vec<(ModelIntegralSpec, usize)> {
    let mk = |src: &str, n: usize, gamma: usize, amp: Amplitude| ModelIntegralSpec {
        phase: Arc::new(ExprField::parse(src, n).unwrap()),
        amplitude: amp,
        delta: 1.0,
        gamma,
        lambdas: logspace(10.0, 1e4, 13),
    };
    let bumpy: Amplitude = Arc::new(|x: &[f64]| 1.0 + 0.5 * x[0]);
    vec![
        (mk("xi1^2", 1, 2, unit()), 1),
        (mk("xi1^4", 1, 4, unit()), 1),
        (mk("xi1^2 + xi1^4", 1, 2, bumpy.clone()), 1),
        (mk("xi1^2 + xi2^2", 2, 2, bumpy), 2),
    ]
}

#[test]
fn hypotheses_carry_witnesses() {
    for (spec, _) in bundled_specs() {
        let h = check_hypotheses(&spec, &OscOptions::default()).unwrap();
        assert!(h.all_pass, "{h:?}");
        for check in [&h.f1, &h.f2, &h.f4] {
            assert!(check.value.is_finite());
            assert!(check.witness.is_some());
        }
        // A witness for the monotonicity check only exists once some decrease was seen.
        assert_eq!(h.f3.witness.is_some(), h.f3.value > 0.0);
    }
    // On the negative ray the radial derivative of xi^2 + xi^3 turns over.
    let bad = ModelIntegralSpec {
        phase: Arc::new(ExprField::parse("xi1^2 + xi1^3", 1).unwrap()),
        amplitude: unit(),
        delta: 1.0,
        gamma: 2,
        lambdas: vec![10.0],
    };
    let h = check_hypotheses(&bad, &OscOptions::default()).unwrap();
    assert!(!h.f3.pass && !h.all_pass);
    assert_eq!(h.f3.witness.as_ref().unwrap().1, vec![-1.0]);
}

#[test]
fn node_doubling_stays_within_error_estimate() {
    let o = OscOptions::default();
    let fine = OscOptions { nodes_per_period: 2.0 * o.nodes_per_period, min_panels: 2 * o.min_panels, min_angles: 2 * o.min_angles, ..o };
    for (spec, _) in bundled_specs() {
        for lambda in [10.0, 300.0, 5000.0] {
            let a = evaluate_model_integral(&spec, lambda, &o).unwrap();
            let b = evaluate_model_integral(&spec, lambda, &fine).unwrap();
            assert!((a.value() - b.value()).norm() <= a.error.max(1e-14), "lambda {lambda}");
        }
    }
}

#[test]
fn one_constant_bounds_the_whole_grid() {
    let o = OscOptions::default();
    for (spec, n) in bundled_specs() {
        let vals: Vec<f64> =
            spec.lambdas.iter().map(|l| evaluate_model_integral(&spec, *l, &o).unwrap().abs()).collect();
        let bound = modulus_bound(&spec.lambdas, &vals, spec.gamma, n).unwrap();
        assert!(bound.holds && bound.worst_ratio <= 1.0, "{bound:?}");
        let fit = fit_decay(&spec.lambdas, &vals, spec.gamma, n).unwrap();
        assert!(fit.slope <= fit.theoretical + 0.1, "{fit:?}");
    }
}
