//! Empirical bound reports for the propagator: two-sided energy bounds,
//! pseudo-differential zone estimates, frequency derivatives of `Q_k` and
//! of the representation bands.

use crate::diagonalizer::Hierarchy;
use crate::error::{Error, Result};
use crate::fit::loglog_fit;
use crate::linalg::{c, norm2, CMat, C64, I};
use crate::propagator::{hyp_factor, representation_bands, solve_direct, PropOptions};
use crate::quad;
use crate::spectral::{decompose, SpectralPoint};
use crate::symbol::{ell, multi_indices, zone_boundary, Symbol};
use crate::systems::System;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

fn radius(xi: &[f64]) -> f64 {
    xi.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Second-order central difference `d_xi^alpha f` with `|alpha| <= 2`.
pub fn fd_xi<F>(f: &F, xi: &[f64], alpha: &[usize], h: f64) -> Result<CMat>
where
    F: Fn(&[f64]) -> Result<CMat>,
{
    let shift = |d: &[(usize, f64)]| -> Vec<f64> {
        let mut x = xi.to_vec();
        for &(k, s) in d {
            x[k] += s * h;
        }
        x
    };
    let ord: usize = alpha.iter().sum();
    let axes: Vec<usize> = alpha.iter().enumerate().flat_map(|(k, &a)| std::iter::repeat(k).take(a)).collect();
    match ord {
        0 => f(xi),
        1 => {
            let k = axes[0];
            Ok((f(&shift(&[(k, 1.0)]))? - f(&shift(&[(k, -1.0)]))?) * c(0.5 / h))
        }
        2 if axes[0] == axes[1] => {
            let k = axes[0];
            Ok((f(&shift(&[(k, 1.0)]))? - f(xi)? * c(2.0) + f(&shift(&[(k, -1.0)]))?) * c(1.0 / (h * h)))
        }
        2 => {
            let (a, b) = (axes[0], axes[1]);
            let pp = f(&shift(&[(a, 1.0), (b, 1.0)]))?;
            let pm = f(&shift(&[(a, 1.0), (b, -1.0)]))?;
            let mp = f(&shift(&[(a, -1.0), (b, 1.0)]))?;
            let mm = f(&shift(&[(a, -1.0), (b, -1.0)]))?;
            Ok((pp - pm - mp + mm) * c(0.25 / (h * h)))
        }
        _ => Err(Error::DerivativeOrder(format!("frequency differences only up to order 2, got {ord}"))),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub s: f64,
    pub xi: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyReport {
    pub c_low: f64,
    pub c_high: f64,
    /// `max(c_high, 1 / c_low)`.
    pub c_star: f64,
    pub witness_low: Witness,
    pub witness_high: Witness,
    pub horizons: Vec<f64>,
    pub running_high: Vec<f64>,
    pub running_low: Vec<f64>,
    /// Log-log slope of the running `c_star` over the last two horizons.
    pub growth: f64,
    pub monotone_growth: bool,
    pub samples: usize,
}

/// Extremes of `||E(t, s, xi) V|| / ||V||` over ordered pairs of grid
/// times in the hyperbolic zone, via singular values of
/// `E(t_i, t_b) E(t_j, t_b)^{-1}`.
pub fn energy_two_sided(sys: &System, freqs: &[Vec<f64>], times: &[f64], opts: &PropOptions) -> Result<EnergyReport> {
    if sys.zone.nu != 0.0 {
        return Err(Error::Domain("two-sided energy bounds are stated for nu = 0".into()));
    }
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let horizons: Vec<f64> = (0..4).map(|i| t_max / 10f64.powi(3 - i)).collect();
    struct Part {
        hi: Vec<(f64, Witness)>,
        lo: Vec<(f64, Witness)>,
        samples: usize,
    }
    let parts: Vec<Result<Part>> = freqs
        .par_iter()
        .map(|xi| {
            let tb = zone_boundary(radius(xi), &sys.zone, false)?;
            let mut ts: Vec<f64> = vec![tb];
            ts.extend(times.iter().cloned().filter(|&t| t > tb));
            // Chained segment propagators keep relative accuracy when the
            // solution grows or decays by many orders of magnitude.
            let mut snaps = Vec::with_capacity(ts.len());
            let mut acc = CMat::identity(sys.dim(), sys.dim());
            let mut prev = tb;
            for &t in &ts {
                acc = solve_direct(sys, t, prev, xi, opts)? * acc;
                snaps.push(acc.clone());
                prev = t;
            }
            let invs: Vec<CMat> = snaps
                .iter()
                .map(|e| e.clone().try_inverse().ok_or_else(|| Error::Propagation("singular propagator".into())))
                .collect::<Result<_>>()?;
            let w0 = Witness { t: 0.0, s: 0.0, xi: xi.clone(), value: 0.0 };
            let mut hi = vec![(0.0, w0.clone()); horizons.len()];
            let mut lo = vec![(f64::INFINITY, w0); horizons.len()];
            let mut samples = 0;
            for i in 0..ts.len() {
                for j in 0..ts.len() {
                    if i == j {
                        continue;
                    }
                    samples += 1;
                    let e = &snaps[i] * &invs[j];
                    let sv = e.singular_values();
                    let smax = sv.iter().cloned().fold(0.0, f64::max);
                    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
                    let top = ts[i].max(ts[j]);
                    for (hidx, hz) in horizons.iter().enumerate() {
                        if top <= hz * (1.0 + 1e-12) {
                            if smax > hi[hidx].0 {
                                hi[hidx] = (smax, Witness { t: ts[i], s: ts[j], xi: xi.clone(), value: smax });
                            }
                            if smin < lo[hidx].0 {
                                lo[hidx] = (smin, Witness { t: ts[i], s: ts[j], xi: xi.clone(), value: smin });
                            }
                        }
                    }
                }
            }
            Ok(Part { hi, lo, samples })
        })
        .collect();
    let nh = horizons.len();
    let mut hi: Vec<(f64, Option<Witness>)> = vec![(0.0, None); nh];
    let mut lo: Vec<(f64, Option<Witness>)> = vec![(f64::INFINITY, None); nh];
    let mut samples = 0;
    for p in parts {
        let p = p?;
        samples += p.samples;
        for k in 0..nh {
            if p.hi[k].0 > hi[k].0 {
                hi[k] = (p.hi[k].0, Some(p.hi[k].1.clone()));
            }
            if p.lo[k].0 < lo[k].0 {
                lo[k] = (p.lo[k].0, Some(p.lo[k].1.clone()));
            }
        }
    }
    let running_high: Vec<f64> = hi.iter().map(|x| x.0).collect();
    let running_low: Vec<f64> = lo.iter().map(|x| x.0).collect();
    let star: Vec<f64> = running_high.iter().zip(&running_low).map(|(h, l)| h.max(1.0 / l)).collect();
    let growth = if star[nh - 2] > 0.0 && star[nh - 2].is_finite() {
        (star[nh - 1] / star[nh - 2]).ln() / (horizons[nh - 1] / horizons[nh - 2]).ln()
    } else {
        0.0
    };
    let monotone_growth = star.windows(2).all(|w| w[1] > w[0] * (1.0 + 1e-9)) && growth > 0.05;
    let blank = Witness { t: 0.0, s: 0.0, xi: vec![], value: 0.0 };
    Ok(EnergyReport {
        c_low: running_low[nh - 1],
        c_high: running_high[nh - 1],
        c_star: star[nh - 1],
        witness_low: lo[nh - 1].1.clone().unwrap_or_else(|| blank.clone()),
        witness_high: hi[nh - 1].1.clone().unwrap_or(blank),
        horizons,
        running_high,
        running_low,
        growth,
        monotone_growth,
        samples,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PdRow {
    pub xi: Vec<f64>,
    pub t_xi: f64,
    pub norm: f64,
    /// Largest `||D_xi^alpha E||` per order `|alpha| = 1, 2, ...`.
    pub derivatives: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub order: usize,
    /// Constant of the weighted envelope.
    pub constant: f64,
    /// Log-log slope of the derivative norm against `|xi|`.
    pub slope: f64,
    pub slope_halfwidth: f64,
    /// Points above ten times the least-squares envelope.
    pub violations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PdReport {
    pub rows: Vec<PdRow>,
    /// Constants of `||E(t_xi, 0, xi)|| <= C exp(C' (log(e+t_xi))^nu)`.
    pub c: f64,
    pub c_prime: f64,
    pub fits: Vec<EnvelopeFit>,
    pub flagged: bool,
}

fn exp_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    // Upper envelope log y <= log C + C' x with C' >= 0 from a least-squares slope.
    let slope = if xs.len() >= 2 && xs.iter().any(|x| (x - xs[0]).abs() > 1e-12) {
        crate::fit::line_fit(xs, &ys.iter().map(|y| y.max(1e-300).ln()).collect::<Vec<_>>())
            .map(|f| f.slope.max(0.0))
            .unwrap_or(0.0)
    } else {
        0.0
    };
    let c = xs.iter().zip(ys).map(|(x, y)| y / (slope * x).exp()).fold(0.0, f64::max);
    (c, slope)
}

fn envelope(order: usize, radii: &[f64], vals: &[f64], weights: &[f64]) -> EnvelopeFit {
    let ratios: Vec<f64> = vals.iter().zip(weights).map(|(v, w)| v / w).collect();
    let constant = ratios.iter().cloned().fold(0.0, f64::max);
    let (slope, hw) = match loglog_fit(radii, &vals.iter().map(|v| v.max(1e-300)).collect::<Vec<_>>()) {
        Ok(f) => (f.slope, f.slope_halfwidth),
        Err(_) => (0.0, f64::INFINITY),
    };
    let logs: Vec<f64> = ratios.iter().filter(|r| **r > 0.0).map(|r| r.ln()).collect();
    let mean = if logs.is_empty() { 0.0 } else { logs.iter().sum::<f64>() / logs.len() as f64 };
    let violations = ratios.iter().filter(|r| **r > 10.0 * mean.exp()).count();
    EnvelopeFit { order, constant, slope, slope_halfwidth: hw, violations }
}

/// `||E(t_xi, 0, xi)||` and its frequency derivatives (at fixed `t = t_xi`)
/// over frequencies in `|xi| <= N`.
pub fn pd_zone_bounds(sys: &System, freqs: &[Vec<f64>], alpha_max: usize, opts: &PropOptions) -> Result<PdReport> {
    let zp = sys.zone;
    let n = sys.space_dim();
    let alphas: Vec<Vec<usize>> = multi_indices(n, alpha_max).into_iter().filter(|a| a.iter().sum::<usize>() > 0).collect();
    let rows: Vec<Result<PdRow>> = freqs
        .par_iter()
        .map(|xi| {
            let r = radius(xi);
            if r > zp.n {
                return Err(Error::Domain(format!("|xi| = {r} exceeds N = {}", zp.n)));
            }
            let tx = zone_boundary(r, &zp, false)?;
            let f = |x: &[f64]| solve_direct(sys, tx, 0.0, x, opts);
            let norm = norm2(&f(xi)?);
            let mut derivatives = vec![0.0f64; alpha_max];
            for a in &alphas {
                let ord: usize = a.iter().sum();
                let d = norm2(&fd_xi(&f, xi, a, 1e-4 * r)?);
                derivatives[ord - 1] = derivatives[ord - 1].max(d);
            }
            Ok(PdRow { xi: xi.clone(), t_xi: tx, norm, derivatives })
        })
        .collect();
    let rows: Vec<PdRow> = rows.into_iter().collect::<Result<_>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| ell(r.t_xi).powf(zp.nu)).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.norm).collect();
    let (cc, cp) = exp_fit(&xs, &ys);
    let radii: Vec<f64> = rows.iter().map(|r| radius(&r.xi)).collect();
    let mut fits = Vec::new();
    for ord in 1..=alpha_max {
        let vals: Vec<f64> = rows.iter().map(|r| r.derivatives[ord - 1]).collect();
        let w: Vec<f64> = rows
            .iter()
            .map(|r| {
                let rr = radius(&r.xi);
                let l = ell(r.t_xi).powf(zp.nu);
                rr.powi(-(ord as i32)) * l.powi(ord as i32) * (cp * l).exp()
            })
            .collect();
        fits.push(envelope(ord, &radii, &vals, &w));
    }
    let flagged = fits.iter().any(|f| f.violations > 0);
    Ok(PdReport { rows, c: cc, c_prime: cp, fits, flagged })
}

/// Sub-zone for the `Q_k` derivative report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QkZone {
    Reg,
    Osc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QkRow {
    pub xi: Vec<f64>,
    pub s: f64,
    pub t: f64,
    pub norm: f64,
    pub derivatives: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QkReport {
    pub zone: QkZone,
    pub k: usize,
    pub rows: Vec<QkRow>,
    pub c_prime: f64,
    pub fits: Vec<EnvelopeFit>,
}

fn locked_reference(h: &Hierarchy, s: f64, xi: &[f64]) -> Result<SpectralPoint> {
    decompose(&h.system.principal.eval(s, xi), &h.opts.spectral, None)
}

/// Frequency derivatives of `Q_k(t, s, xi)` by central differences with
/// step `1e-4 |xi|` and the eigenbasis locked at the base frequency.
///
/// In the regular sub-zone `s` is just above `t~_xi(N_eff)` and `t` runs
/// over `s * factors`; in the oscillating sub-zone `s = t_xi` and `t` runs
/// over the oscillating interval.
pub fn qk_derivative_bounds(
    h: &Hierarchy,
    freqs: &[Vec<f64>],
    alpha_max: usize,
    zone: QkZone,
    opts: &PropOptions,
) -> Result<QkReport> {
    let zp = h.zone_eff();
    let n = h.system.space_dim();
    match zone {
        QkZone::Reg if alpha_max + 1 > h.k => {
            return Err(Error::DerivativeOrder(format!("alpha_max = {alpha_max} needs level k > {alpha_max}, got {}", h.k)));
        }
        QkZone::Osc if h.k != 1 => {
            return Err(Error::Config(format!("the oscillating sub-zone report uses k = 1, got {}", h.k)));
        }
        _ => {}
    }
    let alphas: Vec<Vec<usize>> = multi_indices(n, alpha_max).into_iter().filter(|a| a.iter().sum::<usize>() > 0).collect();
    let rows: Vec<Result<Vec<QkRow>>> = freqs
        .par_iter()
        .map(|xi| {
            let r = radius(xi);
            let pairs: Vec<(f64, f64)> = match zone {
                QkZone::Reg => {
                    let s = zone_boundary(r, &zp, true)? * (1.0 + 1e-3) + 1e-3;
                    [1.5, 4.0, 20.0].iter().map(|f| (s, s * f + 1.0)).collect()
                }
                QkZone::Osc => {
                    let s = zone_boundary(r, &zp, false)? * (1.0 + 1e-3) + 1e-3;
                    let te = zone_boundary(r, &zp, true)?;
                    if te <= s {
                        return Ok(vec![]);
                    }
                    [0.25, 0.5, 1.0].iter().map(|f| (s, s + f * (te - s))).collect()
                }
            };
            let mut out = Vec::new();
            for (s, t) in pairs {
                let reference = locked_reference(h, s, xi)?;
                let f = |x: &[f64]| -> Result<CMat> {
                    Ok(hyp_factor(h, t, s, x, Some(&reference), opts, false)?.q)
                };
                let norm = norm2(&f(xi)?);
                let mut derivatives = vec![0.0f64; alpha_max];
                for a in &alphas {
                    let ord: usize = a.iter().sum();
                    let d = norm2(&fd_xi(&f, xi, a, 1e-4 * r)?);
                    derivatives[ord - 1] = derivatives[ord - 1].max(d);
                }
                out.push(QkRow { xi: xi.clone(), s, t, norm, derivatives });
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for r in rows {
        all.extend(r?);
    }
    let c_prime = match zone {
        QkZone::Reg => 0.0,
        QkZone::Osc => {
            let xs: Vec<f64> = all.iter().map(|r| ell(r.s).powf(zp.nu)).collect();
            let ys: Vec<f64> = all.iter().map(|r| r.norm).collect();
            exp_fit(&xs, &ys).1
        }
    };
    let radii: Vec<f64> = all.iter().map(|r| radius(&r.xi)).collect();
    let mut fits = Vec::new();
    for ord in 1..=alpha_max {
        let vals: Vec<f64> = all.iter().map(|r| r.derivatives[ord - 1]).collect();
        let w: Vec<f64> = all
            .iter()
            .map(|row| {
                let rr = radius(&row.xi);
                let o = ord as i32;
                match zone {
                    QkZone::Reg => rr.powi(-o) * (std::f64::consts::E + 1.0 / rr).ln().powi(o),
                    QkZone::Osc => {
                        rr.powi(-o) * ell(row.t).powf((1.0 + 2.0 * zp.nu) * ord as f64) * (c_prime * ell(row.s).powf(zp.nu)).exp()
                    }
                }
            })
            .collect();
        fits.push(envelope(ord, &radii, &vals, &w));
    }
    Ok(QkReport { zone, k: h.k, rows: all, c_prime, fits })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BandRow {
    pub t: f64,
    pub xi: Vec<f64>,
    pub norm: f64,
    pub derivatives: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BandReport {
    pub rows: Vec<BandRow>,
    /// Envelope fits per derivative order against
    /// `|xi|^{-|alpha|} (log(e+t))^{(2 nu + 1)|alpha|}`, grouped by time.
    pub fits: Vec<Vec<EnvelopeFit>>,
    pub times: Vec<f64>,
    pub max_reconstruction_error: f64,
}

/// Frequency derivatives of the bands `B_j(t, xi)` (maximum over `j`) at
/// fixed times, with the eigenbasis locked at the base frequency.
pub fn band_envelopes(
    h: &Hierarchy,
    times: &[f64],
    freqs: &[Vec<f64>],
    alpha_max: usize,
    opts: &PropOptions,
) -> Result<BandReport> {
    let zp = h.zone_eff();
    let n = h.system.space_dim();
    let alphas: Vec<Vec<usize>> = multi_indices(n, alpha_max).into_iter().filter(|a| a.iter().sum::<usize>() > 0).collect();
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut max_rec = 0.0f64;
    for &t in times {
        let res: Vec<Result<Option<(BandRow, f64)>>> = freqs
            .par_iter()
            .map(|xi| {
                let r = radius(xi);
                let t0 = zone_boundary(r, &zp, true)?;
                if t <= t0 * (1.0 + 1e-2) + 1e-2 {
                    return Ok(None);
                }
                let reference = locked_reference(h, t0, xi)?;
                let base = representation_bands(h, t, xi, Some(&reference), opts)?;
                let m = base.b.len();
                let mut norm = 0.0f64;
                for j in 0..m {
                    norm = norm.max(norm2(&base.matrix(j)));
                }
                let mut derivatives = vec![0.0f64; alpha_max];
                for j in 0..m {
                    let f = |x: &[f64]| -> Result<CMat> {
                        Ok(representation_bands(h, t, x, Some(&reference), opts)?.matrix(j))
                    };
                    for a in &alphas {
                        let ord: usize = a.iter().sum();
                        let d = norm2(&fd_xi(&f, xi, a, 1e-4 * r)?);
                        derivatives[ord - 1] = derivatives[ord - 1].max(d);
                    }
                }
                Ok(Some((BandRow { t, xi: xi.clone(), norm, derivatives }, base.reconstruction_error)))
            })
            .collect();
        let mut here = Vec::new();
        for r in res {
            if let Some((row, rec)) = r? {
                max_rec = max_rec.max(rec);
                here.push(row);
            }
        }
        let radii: Vec<f64> = here.iter().map(|r| radius(&r.xi)).collect();
        let mut f_t = Vec::new();
        for ord in 1..=alpha_max {
            let vals: Vec<f64> = here.iter().map(|r| r.derivatives[ord - 1]).collect();
            let w: Vec<f64> = here
                .iter()
                .map(|row| radius(&row.xi).powi(-(ord as i32)) * ell(t).powf((2.0 * zp.nu + 1.0) * ord as f64))
                .collect();
            if !vals.is_empty() {
                f_t.push(envelope(ord, &radii, &vals, &w));
            }
        }
        fits.push(f_t);
        rows.extend(here);
    }
    Ok(BandReport { rows, fits, times: times.to_vec(), max_reconstruction_error: max_rec })
}

/// `||E(t,s) E(s,r) - E(t,r)||` for the direct route.
pub fn cocycle_defect(sys: &System, t: f64, s: f64, r: f64, xi: &[f64], opts: &PropOptions) -> Result<f64> {
    let ets = solve_direct(sys, t, s, xi, opts)?;
    let esr = solve_direct(sys, s, r, xi, opts)?;
    let etr = solve_direct(sys, t, r, xi, opts)?;
    Ok(norm2(&(ets * esr - etr)))
}

/// `|det E(t, s) - exp(i int_s^t trace A)|` for the direct route.
pub fn liouville_defect(sys: &System, t: f64, s: f64, xi: &[f64], opts: &PropOptions) -> Result<f64> {
    let e = solve_direct(sys, t, s, xi, opts)?;
    let (tr, _) = quad::integrate_vec(|tau| vec![sys.full.eval(tau, xi).trace()], s, t, &[], 1e-14, 1e-13, 4000);
    let expected: C64 = (I * tr[0]).exp();
    Ok((e.determinant() - expected).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagonalizer::DiagOptions;
    use crate::systems::family;
    use std::sync::Arc;

    #[test]
    fn unitary_energy_is_one() {
        let sys = family("sym_const", 2).unwrap();
        let freqs = vec![vec![0.3, 0.1], vec![2.0, -1.0]];
        let times = crate::fit::logspace(1.0, 100.0, 6);
        let r = energy_two_sided(&sys, &freqs, &times, &PropOptions::default()).unwrap();
        assert!((r.c_high - 1.0).abs() < 1e-9 && (r.c_low - 1.0).abs() < 1e-9);
        assert!(!r.monotone_growth);
    }

    #[test]
    fn pd_bounds_unitary() {
        let sys = family("sym_const", 2).unwrap();
        let freqs = vec![vec![0.01, 0.0], vec![0.1, 0.1], vec![0.5, -0.2]];
        let r = pd_zone_bounds(&sys, &freqs, 1, &PropOptions::default()).unwrap();
        for row in &r.rows {
            assert!((row.norm - 1.0).abs() < 1e-9);
        }
        assert_eq!(r.c_prime, 0.0);
    }

    #[test]
    fn liouville_and_cocycle() {
        let sys = family("wave_damped", 2).unwrap();
        let xi = [0.2, 0.3];
        let o = PropOptions::default();
        assert!(liouville_defect(&sys, 30.0, 2.0, &xi, &o).unwrap() < 1e-7);
        assert!(cocycle_defect(&sys, 30.0, 12.0, 1.0, &xi, &o).unwrap() < 1e-7);
    }

    #[test]
    fn qk_level_preconditions() {
        let sys = Arc::new(family("wave_slow_osc", 2).unwrap());
        let h = Hierarchy::new(sys, 1, DiagOptions::default()).unwrap();
        let o = PropOptions::default();
        assert!(matches!(qk_derivative_bounds(&h, &[vec![0.1, 0.0]], 1, QkZone::Reg, &o), Err(Error::DerivativeOrder(_))));
    }
}
