use disphyp::bounds::{cocycle_defect, liouville_defect};
use disphyp::diagonalizer::{DiagOptions, Hierarchy, HierarchyPart};
use disphyp::linalg::{norm2, CMat};
use disphyp::propagator::{factorized, phases, q_peano_baker, solve_direct, PropOptions};
use disphyp::symbol::{check_symbol_class, zone_boundary, ClassGrid, Region};
use disphyp::systems::family;
use proptest::prelude::*;
use std::sync::Arc;

fn hierarchy(name: &str, k: usize) -> Hierarchy {
    Hierarchy::new(Arc::new(family(name, 2).unwrap()), k, DiagOptions::default()).unwrap()
}

#[test]
fn remainders_ladder_in_order() {
    // The coefficients oscillate in log(e + t), so the horizon has to span
    // several full periods before the running supremum settles.
    let grid = ClassGrid::standard(2, 1e7, 1e-6, 10.0, 120, 40);
    for k in 1..=2 {
        let h = hierarchy("wave_slow_osc", k);
        let rep = check_symbol_class(&h.symbol(HierarchyPart::Rk), -(k as f64), k as f64 + 1.0, &h.zone_eff(), &grid, Region::Reg, 1, 1)
            .unwrap();
        assert!(rep.bounded, "R_{k}: growth {}", rep.growth);
    }
}

#[test]
fn drift_tail_is_integrable_class() {
    let h = hierarchy("dirac_slow", 2);
    let grid = ClassGrid::standard(2, 1e4, 1e-4, 10.0, 80, 40);
    let rep = check_symbol_class(&h.symbol(HierarchyPart::FTail), -1.0, 2.0, &h.zone_eff(), &grid, Region::Reg, 1, 1)
        .unwrap();
    assert!(rep.bounded, "growth {}", rep.growth);
}

#[test]
fn transformation_stays_invertible_on_the_hyperbolic_zone() {
    for name in ["wave_slow_osc", "dirac_slow", "ho3_log"] {
        let h = hierarchy(name, 2);
        for (t, xi) in h.reg_samples(200, 0.1, 1e4, 3.0, 5) {
            let p = h.point(t, &xi, 0, None).unwrap();
            let m = p.n_k.c[0].nrows();
            let dev = norm2(&(&p.n_k.c[0] - CMat::identity(m, m)));
            assert!(dev <= 0.5, "{name}: |N_k - I| = {dev} at t={t}");
            assert!(p.n_k.c[0].determinant().norm() >= 0.25, "{name}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cocycle_and_liouville(r in 0.01f64..2.0, th in 0.0f64..6.28, s in 0.0f64..20.0, a in 0.5f64..30.0, b in 0.5f64..30.0) {
        let sys = family("wave_damped", 2).unwrap();
        let xi = [r * th.cos(), r * th.sin()];
        let o = PropOptions::default();
        prop_assert!(cocycle_defect(&sys, s + a + b, s + a, s, &xi, &o).unwrap() < 1e-7);
        prop_assert!(liouville_defect(&sys, s + a, s, &xi, &o).unwrap() < 1e-7);
    }

    #[test]
    fn self_adjoint_systems_are_unitary(r in 0.01f64..3.0, th in 0.0f64..6.28, t in 0.0f64..200.0) {
        for name in ["sym_const", "dirac_slow"] {
            let sys = family(name, 2).unwrap();
            let e = solve_direct(&sys, t, 0.0, &[r * th.cos(), r * th.sin()], &PropOptions::default()).unwrap();
            let sv = e.singular_values();
            for v in sv.iter() {
                prop_assert!((v - 1.0).abs() < 1e-8, "{}: {}", name, v);
            }
        }
    }

    #[test]
    fn phases_scale_linearly(r in 0.05f64..2.0, th in 0.0f64..6.28, scale in 0.2f64..8.0, t in 1.0f64..100.0) {
        let sys = family("ho3_log", 2).unwrap();
        let xi = [r * th.cos(), r * th.sin()];
        let xs = [xi[0] * scale, xi[1] * scale];
        let (p, _) = phases(&sys, t, &xi, 1e-13).unwrap();
        let (q, _) = phases(&sys, t, &xs, 1e-13).unwrap();
        for j in 0..p.len() {
            prop_assert!((scale * p[j] - q[j]).abs() <= 1e-10 * q[j].abs().max(1.0));
        }
    }
}

#[test]
fn factorized_matches_direct_across_families() {
    let opts = PropOptions { rtol: 1e-12, atol: 1e-14, ..Default::default() };
    for name in ["wave_damped", "dirac_slow", "ho3_log", "sym_damped"] {
        let h = hierarchy(name, 2);
        for (t, xi) in h.reg_samples(40, 1.0, 1e3, 50.0, 9) {
            let f = factorized(&h, t, 0.0, &xi, &opts).unwrap();
            let d = solve_direct(&h.system, t, 0.0, &xi, &opts).unwrap();
            let diff = norm2(&(&f.e - &d));
            assert!(diff <= 1e-7, "{name}: {diff} at t={t}, xi={xi:?}");
        }
    }
}

#[test]
fn series_truncation_error_bounds_halving() {
    let h = hierarchy("wave_fast_osc", 2);
    for (t, xi) in h.reg_samples(10, 10.0, 1e3, 10.0, 3) {
        let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        let s = (0.5 * t).max(1.001 * zone_boundary(r, &h.zone_eff(), true).unwrap());
        if s >= t {
            continue;
        }
        let coarse = PropOptions { pb_tol: 1e-5, ..Default::default() };
        let fine = PropOptions { pb_tol: 0.5e-5, ..Default::default() };
        let (qc, nc, ec) = q_peano_baker(&h, t, s, &xi, None, &coarse).unwrap();
        let (qf, nf, _) = q_peano_baker(&h, t, s, &xi, None, &fine).unwrap();
        assert!(nf >= nc);
        assert!(norm2(&(&qc - &qf)) <= ec + 1e-14, "{} > {ec}", norm2(&(&qc - &qf)));
    }
}
