//! Gauss-Legendre rules, adaptive Gauss-Kronrod integration and spectral
//! cumulative integration on panels.

use crate::linalg::{c, CMat, C64};
use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// A Gauss-Legendre panel rule with its cumulative integration matrix.
///
/// `cum[(i, j)]` maps values at the nodes to the integral from the left end
/// of `[-1, 1]` up to node `i`.
pub struct PanelRule {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub cum: Vec<Vec<f64>>,
}

impl PanelRule {
    pub fn new(n: usize) -> PanelRule {
        let (x, w) = gauss_legendre(n);
        // Interpolate with Legendre polynomials and integrate exactly.
        let leg = |k: usize, z: f64| -> f64 {
            let (mut p0, mut p1) = (1.0, z);
            if k == 0 {
                return p0;
            }
            for j in 1..k {
                let p2 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p0) / (j + 1) as f64;
                p0 = p1;
                p1 = p2;
            }
            p1
        };
        // Integral of P_k from -1 to z = (P_{k+1} - P_{k-1}) / (2k+1).
        let int_leg = |k: usize, z: f64| -> f64 {
            if k == 0 {
                z + 1.0
            } else {
                (leg(k + 1, z) - leg(k - 1, z)) / (2 * k + 1) as f64
            }
        };
        let mut cum = vec![vec![0.0; n]; n];
        for (i, row) in cum.iter_mut().enumerate() {
            for (j, r) in row.iter_mut().enumerate() {
                let mut s = 0.0;
                for k in 0..n {
                    // Discrete Legendre coefficient of the cardinal function at node j.
                    let ck = (2 * k + 1) as f64 / 2.0 * w[j] * leg(k, x[j]);
                    s += ck * int_leg(k, x[i]);
                }
                *r = s;
            }
        }
        PanelRule { x, w, cum }
    }

    pub fn shared16() -> &'static PanelRule {
        static R: OnceLock<PanelRule> = OnceLock::new();
        R.get_or_init(|| PanelRule::new(16))
    }
}

/// Partition of `[a, b]` into panels, each no wider than `max_width(left)`.
pub fn panels(a: f64, b: f64, max_width: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let dir = if b >= a { 1.0 } else { -1.0 };
    let len = (b - a).abs();
    if len == 0.0 {
        return out;
    }
    let mut x = a;
    loop {
        let w = max_width(x).max(len * 1e-9);
        let rem = (b - x).abs();
        if rem <= w * 1.0000001 {
            out.push((x, b));
            break;
        }
        let nsteps = (rem / w).ceil();
        let step = if nsteps <= 2.0 { rem / nsteps } else { w };
        out.push((x, x + dir * step));
        x += dir * step;
    }
    out
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: FnMut(f64) -> Vec<C64>>(f: &mut F, a: f64, b: f64) -> (Vec<C64>, f64) {
    let hc = 0.5 * (b - a);
    let ctr = 0.5 * (a + b);
    let fc = f(ctr);
    let dim = fc.len();
    let mut rk: Vec<C64> = fc.iter().map(|v| v * WGK[7]).collect();
    let mut rg: Vec<C64> = fc.iter().map(|v| v * WG[3]).collect();
    for j in 0..7 {
        let dx = hc * XGK[j];
        let f1 = f(ctr - dx);
        let f2 = f(ctr + dx);
        for d in 0..dim {
            let s = f1[d] + f2[d];
            rk[d] += s * WGK[j];
            if j % 2 == 1 {
                rg[d] += s * WG[j / 2];
            }
        }
    }
    let mut err = 0.0f64;
    for d in 0..dim {
        rk[d] *= hc;
        rg[d] *= hc;
        err = err.max((rk[d] - rg[d]).norm());
    }
    (rk, err)
}

/// Adaptive Gauss-Kronrod integration of a vector-valued function with
/// mandatory breakpoints. Returns the integral and an error estimate.
pub fn integrate_vec<F: FnMut(f64) -> Vec<C64>>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> (Vec<C64>, f64) {
    let (lo, hi, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut pts = vec![lo];
    for &p in breaks {
        if p > lo && p < hi {
            pts.push(p);
        }
    }
    pts.push(hi);
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut work: Vec<(f64, f64, Vec<C64>, f64)> = Vec::new();
    for w in pts.windows(2) {
        if w[1] > w[0] {
            let (r, e) = gk15(&mut f, w[0], w[1]);
            work.push((w[0], w[1], r, e));
        }
    }
    if work.is_empty() {
        let d = f(lo).len();
        return (vec![C64::new(0.0, 0.0); d], 0.0);
    }
    loop {
        let dim = work[0].2.len();
        let mut tot = vec![C64::new(0.0, 0.0); dim];
        let mut err = 0.0;
        for (_, _, r, e) in &work {
            for d in 0..dim {
                tot[d] += r[d];
            }
            err += e;
        }
        let scale = tot.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if err <= abs_tol.max(rel_tol * scale) || work.len() >= max_intervals {
            return (tot.into_iter().map(|z| z * sign).collect(), err);
        }
        let (imax, _) = work
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (l, r, _, _) = work.swap_remove(imax);
        let m = 0.5 * (l + r);
        if m <= l || m >= r {
            return (tot.into_iter().map(|z| z * sign).collect(), err);
        }
        let (r1, e1) = gk15(&mut f, l, m);
        let (r2, e2) = gk15(&mut f, m, r);
        work.push((l, m, r1, e1));
        work.push((m, r, r2, e2));
    }
}

pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    integrate_vec(|x| vec![c(f(x))], a, b, breaks, tol, tol, 2000).0[0].re
}

/// Composite Gauss-Legendre integral of matrix-valued data sampled on panels.
pub fn panel_sum(panels: &[(f64, f64)], rule: &PanelRule, vals: &[CMat]) -> CMat {
    let n = rule.x.len();
    let m = vals[0].nrows();
    let mut acc = CMat::zeros(m, m);
    for (p, (a, b)) in panels.iter().enumerate() {
        let h = 0.5 * (b - a);
        for j in 0..n {
            acc += &vals[p * n + j] * c(h * rule.w[j]);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(16);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((s - 2.0 / 31.0).abs() < 1e-14);
    }

    #[test]
    fn cumulative_matrix_integrates() {
        let r = PanelRule::new(16);
        for i in 0..16 {
            let s: f64 = (0..16).map(|j| r.cum[i][j] * r.x[j].cos()).sum();
            let ex = r.x[i].sin() + 1f64.sin();
            assert!((s - ex).abs() < 1e-14);
        }
    }

    #[test]
    fn adaptive_handles_breakpoints() {
        let v = integrate(|x| if x < 0.3 { 1.0 } else { x }, 0.0, 1.0, &[0.3], 1e-13);
        assert!((v - (0.3 + 0.5 * (1.0 - 0.09))).abs() < 1e-12);
        let v = integrate(|x| (1.0 / (x + 1e-3)).sin(), 0.0, 1.0, &[], 1e-10);
        assert!(v.is_finite());
        let v = integrate(|x| x.exp(), 1.0, 0.0, &[], 1e-13);
        assert!((v + (1f64.exp() - 1.0)).abs() < 1e-12);
    }
}
