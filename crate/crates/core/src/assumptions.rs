//! Numerical screening of the structural assumptions (A1)-(A4).

use crate::error::Result;
use crate::fit::logspace;
use crate::jet::MatJet;
use crate::linalg::{eigenvalues, hermitian_eigenvalues, imag_part, CMat};
use crate::spectral::{compute_f0, min_gap, real_roots, SpectralOptions};
use crate::symbol::{check_symbol_class, directions, ell, zone_boundary, ClassGrid, Region, Symbol};
use crate::systems::System;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssumptionConfig {
    /// Largest time of the hyperbolic-zone grids.
    pub t_max: f64,
    /// Number of log-spaced times.
    pub nt: usize,
    /// Radii of the frequency grid in the hyperbolic zone.
    pub radii: Vec<f64>,
    /// Late-time window for the strict hyperbolicity margin.
    pub late_times: (f64, f64),
    /// Radii of the pseudo-differential grid as fractions of the boundary radius.
    pub pd_fractions: Vec<f64>,
    pub ceilings: Ceilings,
}

impl Default for AssumptionConfig {
    fn default() -> Self {
        AssumptionConfig {
            t_max: 1e4,
            nt: 40,
            radii: logspace(1e-2, 10.0, 4),
            late_times: (1e2, 1e4),
            pd_fractions: logspace(1e-4, 1.0, 9),
            ceilings: Ceilings::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ceilings {
    pub strip: f64,
    pub gap_min: f64,
    pub a3_sup: f64,
    /// Largest admissible log-log growth slope of a running supremum.
    pub growth: f64,
    pub a4_tol: f64,
}

impl Default for Ceilings {
    fn default() -> Self {
        Ceilings { strip: 1e6, gap_min: 1e-6, a3_sup: 1e6, growth: 0.05, a4_tol: 1e-8 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct A1Report {
    /// Smallest `c` with all eigenvalues of `A` in `|Im z| <= c` on the grid.
    pub strip_c: f64,
    /// Largest constant of the `S{1,0}` estimate (k, |alpha| <= 1).
    pub class_constant: f64,
    pub class_bounded: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct A2Report {
    /// Minimum root gap on the unit sphere over the late-time window.
    pub margin: f64,
    pub worst_t: f64,
    pub worst_omega: Vec<f64>,
    pub all_real: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct A3Report {
    /// `sup ||int_s^t Im F_0||` over ordered pairs of the time grid.
    pub sup: f64,
    pub horizons: Vec<f64>,
    pub running: Vec<f64>,
    pub growth: f64,
    pub worst_xi: Vec<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct A4Report {
    /// Smallest `c` making the condition hold with the supplied `gamma`.
    pub c: f64,
    /// Running value of `c` as the smallest radius fraction decreases.
    pub c_running: Vec<f64>,
    pub c_growth: f64,
    /// `gamma` needed with `c = 0`, per time of the grid.
    pub fitted_gamma: Vec<(f64, f64)>,
    /// `sup_t int_0^t gamma_fit / (log(e+t))^nu`.
    pub log_bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub system: String,
    pub hash: String,
    pub a1: A1Report,
    pub a2: A2Report,
    pub a3: A3Report,
    pub a4: A4Report,
    pub all_pass: bool,
}

pub fn check_assumptions(sys: &System, cfg: &AssumptionConfig) -> Result<AssumptionReport> {
    let a1 = check_a1(sys, cfg)?;
    let a2 = check_a2(sys, cfg)?;
    let a3 = check_a3(sys, cfg)?;
    let a4 = check_a4(sys, cfg)?;
    let all_pass = a1.pass && a2.pass && a3.pass && a4.pass;
    Ok(AssumptionReport { system: sys.name.clone(), hash: sys.hash.clone(), a1, a2, a3, a4, all_pass })
}

fn hyp_grid(sys: &System, cfg: &AssumptionConfig) -> Vec<(f64, Vec<f64>)> {
    let n = sys.space_dim();
    let mut times = vec![0.0];
    times.extend(logspace(1e-2, cfg.t_max, cfg.nt.max(2) - 1));
    let dirs = directions(n);
    let mut out = Vec::new();
    for &t in &times {
        for &r in &cfg.radii {
            if zone_boundary(r, &sys.zone, false).map(|b| t < b).unwrap_or(true) {
                continue;
            }
            for d in &dirs {
                out.push((t, d.iter().map(|x| x * r).collect()));
            }
        }
    }
    out
}

fn check_a1(sys: &System, cfg: &AssumptionConfig) -> Result<A1Report> {
    let mut strip = 0.0f64;
    for (t, xi) in hyp_grid(sys, cfg) {
        let a = sys.full.eval(t, &xi);
        for z in eigenvalues(&a) {
            strip = strip.max(if z.im.is_finite() { z.im.abs() } else { f64::INFINITY });
        }
    }
    let grid = ClassGrid::standard(sys.space_dim(), cfg.t_max, cfg.radii[0], *cfg.radii.last().unwrap(), 12, 4);
    let rep = check_symbol_class(&*sys.full, 1.0, 0.0, &sys.zone, &grid, Region::Hyp, 1, 1)?;
    let class_constant = rep.max_constant();
    let pass = strip.is_finite() && strip <= cfg.ceilings.strip && rep.bounded;
    Ok(A1Report { strip_c: strip, class_constant, class_bounded: rep.bounded, pass })
}

fn check_a2(sys: &System, cfg: &AssumptionConfig) -> Result<A2Report> {
    let opts = SpectralOptions::default();
    let n = sys.space_dim();
    let dirs = sphere_samples(n);
    let mut margin = f64::INFINITY;
    let mut worst_t = 0.0;
    let mut worst_omega = dirs[0].clone();
    let mut all_real = true;
    for t in logspace(cfg.late_times.0, cfg.late_times.1, 20) {
        for d in &dirs {
            let a1 = sys.principal.eval(t, d);
            let g = match real_roots(&a1, &opts) {
                Ok(r) => min_gap(&r),
                Err(_) => {
                    all_real = false;
                    0.0
                }
            };
            if g < margin {
                margin = g;
                worst_t = t;
                worst_omega = d.clone();
            }
        }
    }
    let pass = all_real && margin > cfg.ceilings.gap_min;
    Ok(A2Report { margin, worst_t, worst_omega, all_real, pass })
}

fn sphere_samples(n: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..32)
            .map(|i| {
                let a = std::f64::consts::TAU * (i as f64 + 0.5) / 32.0;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            // Fibonacci lattice on the 2-sphere, padded with zeros.
            let k = 64;
            let ga = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..k)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / k as f64;
                    let r = (1.0 - z * z).sqrt();
                    let th = ga * i as f64;
                    let mut v = vec![r * th.cos(), r * th.sin(), z];
                    v.resize(n, 0.0);
                    v
                })
                .collect()
        }
    }
}

/// Diagonal of `Im F_0` at `(t, xi)`.
pub fn im_f0(sys: &System, t: f64, xi: &[f64]) -> Result<Vec<f64>> {
    let zero = vec![0; xi.len()];
    let a: MatJet = sys.full.t_jet(t, xi, 1, &zero)?;
    let a1 = sys.principal.t_jet(t, xi, 1, &zero)?;
    let f0 = compute_f0(&a, &a1, &SpectralOptions::default())?;
    Ok((0..f0.nrows()).map(|j| f0[(j, j)].im).collect())
}

fn check_a3(sys: &System, cfg: &AssumptionConfig) -> Result<A3Report> {
    let n = sys.space_dim();
    let m = sys.dim();
    let horizons: Vec<f64> = (0..3).map(|i| cfg.t_max / 10f64.powi(2 - i)).collect();
    let mut running = vec![0.0f64; horizons.len()];
    let mut worst_xi = vec![0.0; n];
    let mut sup = 0.0f64;
    for d in directions(n) {
        for &r in &cfg.radii {
            let xi: Vec<f64> = d.iter().map(|x| x * r).collect();
            let tb = zone_boundary(r, &sys.zone, false)?;
            if tb >= cfg.t_max {
                continue;
            }
            let mut nodes = vec![tb];
            nodes.extend(logspace((tb + 1.0).max(1.0), cfg.t_max + 1.0, 120).into_iter().map(|x| x - 1.0));
            nodes.retain(|&x| x >= tb);
            nodes.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
            let mut g = vec![0.0f64; m];
            let mut lo = vec![0.0f64; m];
            let mut hi = vec![0.0f64; m];
            let mut err = None;
            for w in nodes.windows(2) {
                let f = |s: f64| -> Vec<crate::linalg::C64> {
                    match im_f0(sys, s, &xi) {
                        Ok(v) => v.into_iter().map(crate::linalg::c).collect(),
                        Err(e) => {
                            err.get_or_insert(e);
                            vec![crate::linalg::c(0.0); m]
                        }
                    }
                };
                let (v, _) = crate::quad::integrate_vec(f, w[0], w[1], &[], 1e-12, 1e-10, 200);
                let mut spread = 0.0f64;
                for j in 0..m {
                    g[j] += v[j].re;
                    lo[j] = lo[j].min(g[j]);
                    hi[j] = hi[j].max(g[j]);
                    spread = spread.max(hi[j] - lo[j]);
                }
                for (hidx, h) in horizons.iter().enumerate() {
                    if w[1] <= h * (1.0 + 1e-12) {
                        running[hidx] = running[hidx].max(spread);
                    }
                }
                if spread > sup {
                    sup = spread;
                    worst_xi = xi.clone();
                }
            }
            if let Some(e) = err {
                return Err(e);
            }
        }
    }
    let l = running.len();
    let growth = if running[l - 2] > 1e-14 {
        (running[l - 1] / running[l - 2]).ln() / (horizons[l - 1] / horizons[l - 2]).ln()
    } else if running[l - 1] > 1e-14 {
        f64::INFINITY
    } else {
        0.0
    };
    let pass = sup.is_finite() && sup <= cfg.ceilings.a3_sup && growth < cfg.ceilings.growth;
    Ok(A3Report { sup, horizons, running, growth, worst_xi, pass })
}

fn check_a4(sys: &System, cfg: &AssumptionConfig) -> Result<A4Report> {
    let n = sys.space_dim();
    let zp = sys.zone;
    let mut times = vec![0.0];
    times.extend(logspace(1e-2, cfg.t_max, cfg.nt.max(2) - 1));
    let mut fr = cfg.pd_fractions.clone();
    fr.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut c_running = vec![0.0f64; fr.len()];
    let mut fitted = Vec::with_capacity(times.len());
    for &t in &times {
        let rb = zp.n * ell(t).powf(zp.nu) / (1.0 + t);
        let g = sys.gamma_at(t);
        let mut need = 0.0f64;
        for (fi, &f) in fr.iter().enumerate() {
            for d in directions(n) {
                let r = f * rb;
                let xi: Vec<f64> = d.iter().map(|x| x * r).collect();
                let ia = imag_part(&sys.full.eval(t, &xi));
                let lmin = hermitian_eigenvalues(&ia).into_iter().fold(f64::INFINITY, f64::min);
                need = need.max((-lmin).max(0.0) * 2.0);
                let neg = (-(lmin + 0.5 * g)).max(0.0);
                if neg > cfg.ceilings.a4_tol {
                    let creq = neg / r;
                    for cr in c_running.iter_mut().skip(fi) {
                        *cr = cr.max(creq);
                    }
                }
            }
        }
        fitted.push((t, need));
    }
    let mut integral = 0.0;
    let mut log_bound = 0.0f64;
    for w in fitted.windows(2) {
        integral += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
        log_bound = log_bound.max(integral / ell(w[1].0).powf(zp.nu));
    }
    let l = c_running.len();
    let c = c_running[l - 1];
    let c_growth = if l >= 2 && c_running[l - 2] > 0.0 {
        (c_running[l - 1] / c_running[l - 2]).ln() / (fr[l - 2] / fr[l - 1]).ln()
    } else if c > 0.0 {
        1.0
    } else {
        0.0
    };
    let pass = c.is_finite() && c_growth < cfg.ceilings.growth;
    Ok(A4Report { c, c_running, c_growth, fitted_gamma: fitted, log_bound, pass })
}

/// `Im A` at a point, exposed for reports.
pub fn imag_symbol(sys: &System, t: f64, xi: &[f64]) -> CMat {
    imag_part(&sys.full.eval(t, xi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::family;

    fn quick() -> AssumptionConfig {
        AssumptionConfig { nt: 16, radii: vec![0.1, 1.0], ..Default::default() }
    }

    #[test]
    fn symmetric_constant_passes() {
        let r = check_assumptions(&family("sym_const", 2).unwrap(), &quick()).unwrap();
        assert!(r.all_pass, "{r:?}");
        assert!(r.a3.sup < 1e-12);
        assert_eq!(r.a4.c, 0.0);
    }

    #[test]
    fn drift_violates_energy_conservation() {
        let r = check_assumptions(&family("drift_control", 2).unwrap(), &quick()).unwrap();
        assert!(!r.a3.pass);
        assert!((r.a3.growth - 0.5).abs() < 0.1, "{}", r.a3.growth);
        assert!(r.a4.pass);
    }
}
