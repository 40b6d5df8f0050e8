use disphyp::fit::logspace;
use disphyp::linalg::norm_max;
use disphyp::symbol::{
    check_symbol_class, zone_boundary, Budget, ClassGrid, ExprSymbol, FdSymbol, Region, Symbol, ZoneParams,
};
use proptest::prelude::*;

fn scalar(src: &str) -> ExprSymbol {
    ExprSymbol::parse(1, 2, &[src], Budget { xi: 3, t: 3 }).unwrap()
}

fn zone() -> ZoneParams {
    ZoneParams::new(1.0, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zone_boundary_decreases(r in 1e-4f64..10.0, f in 1.001f64..5.0, n in 0.5f64..4.0, nu in 0.0f64..2.0) {
        let zp = ZoneParams::new(n, nu).unwrap();
        let a = zone_boundary(r, &zp, false).unwrap();
        let b = zone_boundary(r * f, &zp, false).unwrap();
        prop_assert!(b <= a);
        if a > 0.0 {
            prop_assert!(b < a, "t_xi not strictly decreasing: {a} -> {b}");
        } else {
            prop_assert_eq!(b, 0.0);
        }
    }

    #[test]
    fn fd_backend_agrees_with_exact(t in 0.0f64..50.0, x in -2.0f64..2.0, y in 0.1f64..2.0) {
        let e = ExprSymbol::parse(
            2,
            2,
            &["(2+cos(log(e+t)))*abs_xi", "xi[1]*xi[2]/(1+t)", "exp(-t/10)*xi[2]^2", "sin(xi[1])*(1+t)^(-1/2)"],
            Budget { xi: 2, t: 2 },
        )
        .unwrap();
        let e2 = e.clone();
        let fd = FdSymbol::new(2, 2, Budget { xi: 2, t: 2 }, move |t, xi| e2.eval(t, xi));
        for k in 0..=2 {
            for alpha in [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]] {
                let a = e.partial(t, &[x, y], k, &alpha).unwrap();
                let b = fd.partial(t, &[x, y], k, &alpha).unwrap();
                let err = norm_max(&(a.clone() - b));
                prop_assert!(err <= 1e-6 * norm_max(&a).max(1.0), "k={} alpha={:?}: {}", k, alpha, err);
            }
        }
    }
}

#[test]
fn products_add_class_orders() {
    let zp = zone();
    // Spans several periods of cos(log(e + t)).
    let grid = ClassGrid::standard(2, 1e7, 1e-6, 10.0, 120, 8);
    let a_src = "abs_xi*(2+cos(log(e+t)))";
    let b_src = "1/((1+t)*abs_xi)";
    let a = scalar(a_src);
    let b = scalar(b_src);
    let ab = scalar(&format!("({a_src})*({b_src})"));
    let ra = check_symbol_class(&a, 1.0, 0.0, &zp, &grid, Region::Hyp, 1, 1).unwrap();
    let rb = check_symbol_class(&b, -1.0, 1.0, &zp, &grid, Region::Hyp, 1, 1).unwrap();
    let rab = check_symbol_class(&ab, 0.0, 1.0, &zp, &grid, Region::Hyp, 1, 1).unwrap();
    assert!(ra.bounded && rb.bounded && rab.bounded);
    // Leibniz with k + |alpha| <= 2 gives at most four terms.
    assert!(rab.max_constant() <= 4.0 * ra.max_constant() * rb.max_constant());
}

#[test]
fn class_minus_one_two_is_integrable_on_the_hyperbolic_zone() {
    let zp = zone();
    let src = "(1+sin(xi[1]))/((1+t)^2*abs_xi)";
    let a = scalar(src);
    let grid = ClassGrid::standard(2, 1e4, 1e-2, 10.0, 30, 6);
    assert!(check_symbol_class(&a, -1.0, 2.0, &zp, &grid, Region::Hyp, 1, 1).unwrap().bounded);
    let horizons = [1e2, 1e3, 1e4];
    let mut sups = [0.0f64; 3];
    for r in logspace(1e-2, 10.0, 7) {
        let xi = [r * 0.6, r * 0.8];
        let tb = zone_boundary(r, &zp, false).unwrap();
        for (h, sup) in horizons.iter().zip(sups.iter_mut()) {
            if *h <= tb {
                continue;
            }
            // Trapezoid rule in log(1 + t).
            let u = logspace(1.0 + tb, 1.0 + h, 4000);
            let mut acc = 0.0;
            for w in u.windows(2) {
                let f = |s: f64| a.eval(s - 1.0, &xi)[(0, 0)].norm() * s;
                acc += 0.5 * (f(w[0]) + f(w[1])) * (w[1] / w[0]).ln();
            }
            *sup = sup.max(acc);
        }
    }
    assert!(sups[2] < 1.1 * sups[1], "{sups:?}");
    assert!(sups[2].is_finite() && sups[2] < 10.0);
}

#[test]
fn class_check_respects_budget() {
    let a = scalar("abs_xi");
    let grid = ClassGrid::standard(2, 10.0, 0.1, 1.0, 4, 2);
    assert!(check_symbol_class(&a, 1.0, 0.0, &zone(), &grid, Region::All, 4, 1).is_err());
}
