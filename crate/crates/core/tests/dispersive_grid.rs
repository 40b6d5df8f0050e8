use disphyp::dispersive::{
    decay_measurement, gaussian_data, gaussian_frequency_radius, gaussian_support_radius, grid_solve, lq_norm,
    max_speed, sobolev_norm, solve_norms, Backend, DecayContext, DecayOptions, GridConfig, GridFft, GridField,
    ModeFilter, RateTarget, SolveOptions,
};
use disphyp::fit::logspace;
use disphyp::linalg::C64;
use disphyp::symbol::chi_reg;
use disphyp::systems::family;
use proptest::prelude::*;
use std::f64::consts::PI;

fn grid(n: usize, points: usize, half_width: f64, times: Vec<f64>) -> GridConfig {
    GridConfig { n, points, half_width, times, pairs: vec![], support_radius: 0.0 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fft_roundtrip_is_identity(n in 1usize..=3, seed in any::<u64>()) {
        let points = [64, 16, 8][n - 1];
        let fft = GridFft::new(n, points);
        let total = points.pow(n as u32);
        let mut state = seed | 1;
        let data: Vec<C64> = (0..total)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                C64::new((state % 2001) as f64 / 1000.0 - 1.0, ((state >> 20) % 2001) as f64 / 1000.0 - 1.0)
            })
            .collect();
        let mut buf = data.clone();
        fft.forward(&mut buf);
        fft.inverse(&mut buf);
        let err = buf.iter().zip(&data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-12, "{}", err);
    }

    #[test]
    fn lq_norms_are_log_convex(vals in prop::collection::vec(-5.0f64..5.0, 2 * 256), q0 in 1.0f64..3.0, q1 in 3.0f64..12.0, th in 0.0f64..1.0) {
        let g = grid(2, 16, 3.0, vec![0.0]);
        let f = GridField { n: 2, points: 16, m: 1, data: vals.chunks(2).map(|c| C64::new(c[0], c[1])).collect() };
        let qt = 1.0 / ((1.0 - th) / q0 + th / q1);
        let lhs = lq_norm(&f, &g, qt);
        let rhs = lq_norm(&f, &g, q0).powf(1.0 - th) * lq_norm(&f, &g, q1).powf(th);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12), "{} > {}", lhs, rhs);
    }
}

#[test]
fn gaussian_sobolev_norms() {
    let sigma = 3.0;
    let g = grid(2, 512, 40.0, vec![0.0]);
    let data = gaussian_data(&g, sigma, &[C64::new(1.0, 0.0)]);
    let l2 = sobolev_norm(&data, &g, 2.0, 0.0, false).unwrap();
    let grad = sobolev_norm(&data, &g, 2.0, 1.0, true).unwrap();
    let h1 = sobolev_norm(&data, &g, 2.0, 1.0, false).unwrap();
    assert!((l2 - (PI * sigma * sigma).sqrt()).abs() <= 1e-4);
    assert!((grad - PI.sqrt()).abs() <= 1e-4);
    assert!((h1 - (PI * sigma * sigma + PI).sqrt()).abs() <= 1e-4);
}

#[test]
fn dilation_scales_l2_by_half_dimension_power() {
    for (n, points, half_width) in [(1usize, 4096usize, 200.0), (2, 512, 100.0), (3, 96, 60.0)] {
        let g = grid(n, points, half_width, vec![0.0]);
        let a = lq_norm(&gaussian_data(&g, 4.0, &[C64::new(1.0, 0.0)]), &g, 2.0);
        let b = lq_norm(&gaussian_data(&g, 8.0, &[C64::new(1.0, 0.0)]), &g, 2.0);
        let want = 2f64.powf(n as f64 / 2.0);
        assert!((b / a - want).abs() <= 1e-9 * want, "n={n}: {}", b / a);
    }
}

/// Constant wave system on one Fourier mode: with `A = [[0, r], [4 r, 0]]`
/// and `w = 2 r`, `exp(i A t) = cos(w t) I + i sin(w t) A / w`.
#[test]
fn plane_wave_matches_closed_form() {
    let sys = family("wave_const", 2).unwrap();
    let l = 16.0 * PI;
    let g = grid(2, 64, l, vec![0.0, 10.0]);
    let k = [24.0, 32.0];
    let xi = [k[0] * PI / l, k[1] * PI / l];
    let r = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
    let v = [C64::new(0.6, 0.1), C64::new(-0.3, 0.5)];
    let data = GridField::from_fn(&g, 2, |x| {
        let ph = C64::from_polar(1.0, xi[0] * x[0] + xi[1] * x[1]);
        v.iter().map(|z| z * ph).collect()
    });
    let (snaps, _) = grid_solve(&sys, &Backend::Direct, &data, &g, &SolveOptions::default()).unwrap();
    let t = 10.0;
    let w = 2.0 * r;
    let (cs, sn) = ((w * t).cos(), (w * t).sin());
    let i = C64::new(0.0, 1.0);
    let u0 = v[0] * cs + i * sn * (r * v[1]) / w;
    let u1 = v[1] * cs + i * sn * (4.0 * r * v[0]) / w;
    let mut worst = 0.0f64;
    for idx in 0..g.total() {
        let x = g.coords(idx);
        let ph = C64::from_polar(1.0, xi[0] * x[0] + xi[1] * x[1]);
        worst = worst.max((snaps.fields[1].component(0)[idx] - u0 * ph).norm());
        worst = worst.max((snaps.fields[1].component(1)[idx] - u1 * ph).norm());
    }
    assert!(worst <= 1e-6, "{worst}");
    assert_eq!(snaps.fields[0], data);

    // Late enough that the mode sits in the regular zone, so the
    // low-frequency filter removes it entirely.
    let late = (1..).map(|k| 10.0 * k as f64).find(|&t| chi_reg(t, r, &sys.zone) == 1.0).unwrap();
    let lf = SolveOptions { filter: ModeFilter::LowFrequency, ..Default::default() };
    let (low, _) = grid_solve(&sys, &Backend::Direct, &data, &grid(2, 64, l, vec![late]), &lf).unwrap();
    assert!(low.fields[0].data.iter().all(|z| z.norm() <= 1e-12));
    let (kept, _) = grid_solve(&sys, &Backend::Direct, &data, &grid(2, 64, l, vec![0.0]), &lf).unwrap();
    let w = 1.0 - chi_reg(0.0, r, &sys.zone);
    let err = kept.fields[0].data.iter().zip(&data.data).map(|(a, b)| (a - b * w).norm()).fold(0.0, f64::max);
    assert!(err <= 1e-12, "{err}");
}

#[test]
fn rates_steepen_with_the_exponent_gap() {
    let sys = family("wave_const", 2).unwrap();
    let sigma = 8.0;
    let mut times = vec![0.0];
    times.extend(logspace(5.0, 80.0, 10));
    let support = gaussian_support_radius(sigma);
    let half_width = (2.0 * (max_speed(&sys, 60.0) * 80.0 + support)).ceil();
    let g = GridConfig {
        n: 2,
        points: 256,
        half_width,
        times,
        pairs: vec![(1.6, 8.0 / 3.0), (4.0 / 3.0, 4.0), (1.2, 6.0)],
        support_radius: support,
    };
    let v = [C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0); 2];
    let data = gaussian_data(&g, sigma, &v);
    let opts = SolveOptions { k_cut: Some(gaussian_frequency_radius(sigma)), ..Default::default() };
    let (norms, stats) = solve_norms(&sys, &Backend::Direct, &data, &g, &opts).unwrap();
    assert!(stats.radial);
    let ctx = DecayContext::for_system(&sys, &data, &g).unwrap();
    let rep = decay_measurement(&norms, &g, RateTarget::Convex { gamma: 2.0 }, &DecayOptions::default(), &ctx).unwrap();
    let rates: Vec<f64> = rep.pairs.iter().map(|p| p.fitted).collect();
    assert!(rates.windows(2).all(|w| w[1] <= w[0] + 0.02), "{rates:?}");
    assert!(rates[2] < rates[0]);
}
