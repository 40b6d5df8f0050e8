//! Fundamental solution `E(t, s, xi)` of `D_t E = A(t, xi) E`, `E(s, s) = I`.
//!
//! Three routes: direct integration, the factorised form
//! `E(t, s) = M(t) N_k(t) E~_k(t, s) Q_k(t, s) N_k(s)^{-1} M(s)^{-1}` in the
//! hyperbolic zone, and the splice of both at the zone boundary.

use crate::diagonalizer::Hierarchy;
use crate::error::{Error, Result};
use crate::linalg::{c, norm2, CMat, C64, I};
use crate::ode::{self, OdeOptions};
use crate::quad::{self, PanelRule};
use crate::spectral::{decompose, real_roots, SpectralPoint};
use crate::symbol::{ell, zone_boundary, Symbol, Zone, ZoneParams};
use crate::systems::System;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Relative size of the last retained Peano-Baker term.
    pub pb_tol: f64,
    pub pb_cap: usize,
    /// Tolerance of the adaptive phase quadrature.
    pub quad_tol: f64,
}

impl Default for PropOptions {
    fn default() -> Self {
        PropOptions { rtol: 1e-10, atol: 1e-12, pb_tol: 1e-12, pb_cap: 64, quad_tol: 1e-12 }
    }
}

impl PropOptions {
    pub fn ode(&self) -> OdeOptions {
        OdeOptions { rtol: self.rtol, atol: self.atol, ..Default::default() }
    }
}

fn identity(m: usize) -> CMat {
    CMat::identity(m, m)
}

fn unflatten(m: usize, y: &[C64]) -> CMat {
    CMat::from_column_slice(m, m, y)
}

/// `E(t_i, s, xi)` for every `t_i` of a monotone list, by direct integration
/// of `dE/dt = i A E`.
pub fn solve_direct_many(sys: &System, s: f64, times: &[f64], xi: &[f64], opts: &PropOptions) -> Result<Vec<CMat>> {
    let m = sys.dim();
    let y0: Vec<C64> = identity(m).as_slice().to_vec();
    let full = sys.full.clone();
    let rhs = |t: f64, y: &[C64], dy: &mut [C64]| {
        let a = full.eval_flat(t.max(0.0), xi);
        for col in 0..m {
            for row in 0..m {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..m {
                    acc += a[row * m + k] * y[col * m + k];
                }
                dy[col * m + row] = I * acc;
            }
        }
    };
    let (ys, _) = ode::integrate(rhs, s, &y0, times, &opts.ode())?;
    Ok(ys.iter().map(|y| unflatten(m, y)).collect())
}

pub fn solve_direct(sys: &System, t: f64, s: f64, xi: &[f64], opts: &PropOptions) -> Result<CMat> {
    if t < 0.0 || s < 0.0 {
        return Err(Error::Domain(format!("negative time in E({t}, {s})")));
    }
    if t == s {
        return Ok(identity(sys.dim()));
    }
    Ok(solve_direct_many(sys, s, &[t], xi, opts)?.remove(0))
}

/// Data of the hyperbolic factorisation on `[s, t]`.
#[derive(Clone, Debug)]
pub struct HypFactor {
    pub e: CMat,
    pub q: CMat,
    /// `Phi_j(t) = int_s^t (l_j + F_{k-1, jj})`.
    pub phase: Vec<C64>,
    /// `M(t) N_k(t)`.
    pub left: CMat,
    /// `N_k(s)^{-1} M(s)^{-1}`.
    pub right: CMat,
    pub pb_terms: usize,
    pub pb_error: f64,
    pub fallback: bool,
    pub panels: usize,
}

impl HypFactor {
    /// `E~(t, s) = diag exp(i Phi)`.
    pub fn e_tilde(&self) -> CMat {
        CMat::from_diagonal(&crate::linalg::CVec::from_iterator(
            self.phase.len(),
            self.phase.iter().map(|p| (I * p).exp()),
        ))
    }
}

fn panel_width<'a>(sys: &'a System, xi: &'a [f64], zp: &ZoneParams) -> impl Fn(f64) -> f64 + 'a {
    let nu = zp.nu;
    move |tau: f64| {
        let slow = (1.0 + tau) / (4.0 * ell(tau).powf(nu));
        let a1 = sys.principal.eval(tau, xi);
        match real_roots(&a1, &Default::default()) {
            Ok(r) => {
                let spread = r[r.len() - 1] - r[0];
                if spread > 0.0 {
                    slow.min(std::f64::consts::PI / spread)
                } else {
                    slow
                }
            }
            Err(_) => slow,
        }
    }
}

struct NodeData {
    panels: Vec<(f64, f64)>,
    /// Phase at every node, then at the right end.
    phase_nodes: Vec<Vec<C64>>,
    phase_end: Vec<C64>,
    rk: Vec<CMat>,
}

fn node_data(h: &Hierarchy, t: f64, s: f64, xi: &[f64], reference: &SpectralPoint) -> Result<NodeData> {
    let rule = PanelRule::shared16();
    let sys = &*h.system;
    let zp = h.zone_eff();
    let panels = quad::panels(s, t, panel_width(sys, xi, &zp));
    let m = sys.dim();
    let nq = rule.x.len();
    let mut phase_nodes = Vec::with_capacity(panels.len() * nq);
    let mut rk = Vec::with_capacity(panels.len() * nq);
    let mut acc = vec![C64::new(0.0, 0.0); m];
    for &(a, b) in &panels {
        let hw = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut rates = Vec::with_capacity(nq);
        for &x in &rule.x {
            let p = h.point_unchecked(mid + hw * x, xi, 0, Some(reference))?;
            rates.push(p.phase_rates());
            rk.push(p.r_k.c[0].clone());
        }
        for i in 0..nq {
            let mut v = acc.clone();
            for (j, r) in rates.iter().enumerate() {
                let wgt = hw * rule.cum[i][j];
                for q in 0..m {
                    v[q] += r[q] * wgt;
                }
            }
            phase_nodes.push(v);
        }
        for (j, r) in rates.iter().enumerate() {
            for q in 0..m {
                acc[q] += r[q] * (hw * rule.w[j]);
            }
        }
    }
    Ok(NodeData { panels, phase_nodes, phase_end: acc, rk })
}

fn interaction(rk: &CMat, phase: &[C64]) -> CMat {
    let m = rk.nrows();
    let mut out = rk.clone();
    for p in 0..m {
        for q in 0..m {
            out[(p, q)] *= (I * (phase[q] - phase[p])).exp();
        }
    }
    out
}

/// Peano-Baker series for `Q_k` on the node set.
fn peano_baker(nd: &NodeData, m: usize, opts: &PropOptions) -> (CMat, usize, f64, bool) {
    let rule = PanelRule::shared16();
    let nq = rule.x.len();
    let rr: Vec<CMat> = nd.rk.iter().zip(&nd.phase_nodes).map(|(r, p)| interaction(r, p)).collect();
    let mut term: Vec<CMat> = vec![identity(m); rr.len()];
    let mut sum = identity(m);
    let mut last = 0.0;
    for n in 1..=opts.pb_cap {
        let mut next = Vec::with_capacity(rr.len());
        let mut acc = CMat::zeros(m, m);
        let mut sup = 0.0f64;
        for (pi, &(a, b)) in nd.panels.iter().enumerate() {
            let hw = 0.5 * (b - a);
            let prod: Vec<CMat> = (0..nq).map(|j| &rr[pi * nq + j] * &term[pi * nq + j]).collect();
            for i in 0..nq {
                let mut v = acc.clone();
                for (j, pj) in prod.iter().enumerate() {
                    v += pj * c(hw * rule.cum[i][j]);
                }
                v *= I;
                sup = sup.max(norm2(&v));
                next.push(v);
            }
            for (j, pj) in prod.iter().enumerate() {
                acc += pj * c(hw * rule.w[j]);
            }
        }
        let end = acc * I;
        sup = sup.max(norm2(&end));
        sum += &end;
        term = next;
        last = sup;
        if sup <= opts.pb_tol * norm2(&sum) {
            return (sum, n, last, false);
        }
    }
    (sum, opts.pb_cap, last, true)
}

/// `Q_k(t, s)` from `D_t Q = R~_k Q` with the phases carried in the state.
fn q_ode(h: &Hierarchy, t: f64, s: f64, xi: &[f64], reference: &SpectralPoint, opts: &PropOptions) -> Result<CMat> {
    let m = h.system.dim();
    let mut y0: Vec<C64> = identity(m).as_slice().to_vec();
    y0.extend(std::iter::repeat(C64::new(0.0, 0.0)).take(m));
    let mut err: Option<Error> = None;
    let rhs = |tau: f64, y: &[C64], dy: &mut [C64]| {
        let p = match h.point_unchecked(tau, xi, 0, Some(reference)) {
            Ok(p) => p,
            Err(e) => {
                err.get_or_insert(e);
                dy.iter_mut().for_each(|d| *d = C64::new(0.0, 0.0));
                return;
            }
        };
        let rr = interaction(&p.r_k.c[0], &y[m * m..]);
        for col in 0..m {
            for row in 0..m {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..m {
                    acc += rr[(row, k)] * y[col * m + k];
                }
                dy[col * m + row] = I * acc;
            }
        }
        for (j, r) in p.phase_rates().into_iter().enumerate() {
            dy[m * m + j] = r;
        }
    };
    let (ys, _) = ode::integrate(rhs, s, &y0, &[t], &opts.ode())?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(unflatten(m, &ys[0][..m * m]))
}

fn endpoint_factors(h: &Hierarchy, t: f64, s: f64, xi: &[f64], reference: &SpectralPoint) -> Result<(CMat, CMat)> {
    let pt = h.point_unchecked(t, xi, 0, Some(reference))?;
    let ps = h.point_unchecked(s, xi, 0, Some(reference))?;
    let left = &pt.spectral.m.c[0] * &pt.n_k.c[0];
    let right = &ps.n_k_inv.c[0] * &ps.spectral.m_inv.c[0];
    Ok((left, right))
}

fn reference_at(h: &Hierarchy, s: f64, xi: &[f64]) -> Result<SpectralPoint> {
    decompose(&h.system.principal.eval(s, xi), &h.opts.spectral, None)
}

/// Hyperbolic-zone factorisation for `t >= s` with both points in
/// `Z_hyp(N_eff)`. Axes of the eigenbasis are locked at `reference` (at `s`
/// by default).
pub fn hyp_factor(
    h: &Hierarchy,
    t: f64,
    s: f64,
    xi: &[f64],
    reference: Option<&SpectralPoint>,
    opts: &PropOptions,
    force_ode: bool,
) -> Result<HypFactor> {
    if t < s {
        return Err(Error::Domain(format!("hyperbolic factorisation needs t >= s, got t={t}, s={s}")));
    }
    if !h.in_zone(s, xi)? {
        return Err(Error::Zone(format!("s = {s} lies in the pseudo-differential zone for xi = {xi:?}")));
    }
    let owned;
    let reference = match reference {
        Some(r) => r,
        None => {
            owned = reference_at(h, s, xi)?;
            &owned
        }
    };
    let m = h.system.dim();
    let (left, right) = endpoint_factors(h, t, s, xi, reference)?;
    if t == s {
        return Ok(HypFactor {
            e: identity(m),
            q: identity(m),
            phase: vec![C64::new(0.0, 0.0); m],
            left,
            right,
            pb_terms: 0,
            pb_error: 0.0,
            fallback: false,
            panels: 0,
        });
    }
    let nd = node_data(h, t, s, xi, reference)?;
    let (mut q, terms, err, capped) = peano_baker(&nd, m, opts);
    let fallback = capped || force_ode;
    if fallback {
        q = q_ode(h, t, s, xi, reference, opts)?;
    }
    let phase = nd.phase_end.clone();
    let mut out = HypFactor { e: identity(m), q, phase, left, right, pb_terms: terms, pb_error: err, fallback, panels: nd.panels.len() };
    out.e = &out.left * out.e_tilde() * &out.q * &out.right;
    Ok(out)
}

/// `Q_k(t, s)` by Peano-Baker and by the ODE route, with the truncation
/// error estimate of the series.
pub fn q_both(h: &Hierarchy, t: f64, s: f64, xi: &[f64], opts: &PropOptions) -> Result<(CMat, CMat, f64)> {
    let reference = reference_at(h, s, xi)?;
    let nd = node_data(h, t, s, xi, &reference)?;
    let (q, _, err, _) = peano_baker(&nd, h.system.dim(), opts);
    let qo = q_ode(h, t, s, xi, &reference, opts)?;
    Ok((q, qo, err))
}

/// Peano-Baker `Q_k` with an explicit truncation tolerance.
pub fn q_peano_baker(h: &Hierarchy, t: f64, s: f64, xi: &[f64], reference: Option<&SpectralPoint>, opts: &PropOptions) -> Result<(CMat, usize, f64)> {
    let owned;
    let reference = match reference {
        Some(r) => r,
        None => {
            owned = reference_at(h, s, xi)?;
            &owned
        }
    };
    let nd = node_data(h, t, s, xi, reference)?;
    let (q, n, err, _) = peano_baker(&nd, h.system.dim(), opts);
    Ok((q, n, err))
}

/// Result of the combined route.
#[derive(Clone, Debug)]
pub struct Factorized {
    pub e: CMat,
    /// Time at which the direct pseudo-differential piece is spliced in.
    pub splice: Option<f64>,
    pub hyp: Option<HypFactor>,
}

/// `E(t, s, xi)` by the factorised route, splicing a direct solve below the
/// zone boundary `t_xi(N_eff)`.
pub fn factorized(h: &Hierarchy, t: f64, s: f64, xi: &[f64], opts: &PropOptions) -> Result<Factorized> {
    if t < s {
        let f = factorized(h, s, t, xi, opts)?;
        let inv = f.e.clone().try_inverse().ok_or_else(|| Error::Propagation("singular propagator".into()))?;
        return Ok(Factorized { e: inv, splice: f.splice, hyp: f.hyp });
    }
    let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tb = zone_boundary(r, &h.zone_eff(), false)?;
    if t <= tb {
        let e = solve_direct(&h.system, t, s, xi, opts)?;
        return Ok(Factorized { e, splice: Some(t), hyp: None });
    }
    if s >= tb {
        let f = hyp_factor(h, t, s, xi, None, opts, false)?;
        return Ok(Factorized { e: f.e.clone(), splice: None, hyp: Some(f) });
    }
    let pd = solve_direct(&h.system, tb, s, xi, opts)?;
    let f = hyp_factor(h, t, tb, xi, None, opts, false)?;
    Ok(Factorized { e: &f.e * pd, splice: Some(tb), hyp: Some(f) })
}

/// `int_0^t l_j(tau, xi) d tau` for every root, with an error estimate.
pub fn root_integrals(sys: &System, t: f64, xi: &[f64], tol: f64) -> Result<(Vec<f64>, f64)> {
    let m = sys.dim();
    if t == 0.0 {
        return Ok((vec![0.0; m], 0.0));
    }
    let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut breaks = Vec::new();
    if r > 0.0 {
        breaks.push(zone_boundary(r, &sys.zone, false)?);
        breaks.push(zone_boundary(r, &sys.zone, true)?);
    }
    let mut err: Option<Error> = None;
    let f = |tau: f64| -> Vec<C64> {
        match real_roots(&sys.principal.eval(tau, xi), &Default::default()) {
            Ok(v) => v.into_iter().map(c).collect(),
            Err(e) => {
                err.get_or_insert(e);
                vec![c(0.0); m]
            }
        }
    };
    let (v, e) = quad::integrate_vec(f, 0.0, t, &breaks, tol * (1.0 + r * t), tol, 4000);
    if let Some(e) = err {
        return Err(e);
    }
    Ok((v.into_iter().map(|z| z.re).collect(), e))
}

/// Averaged phases `phi_j(t, xi) = (1/t) int_0^t l_j(tau, xi)` and the
/// quadrature error estimate.
pub fn phases(sys: &System, t: f64, xi: &[f64], tol: f64) -> Result<(Vec<f64>, f64)> {
    if t == 0.0 {
        let r = real_roots(&sys.principal.eval(0.0, xi), &Default::default())?;
        return Ok((r, 0.0));
    }
    let (v, e) = root_integrals(sys, t, xi, tol)?;
    Ok((v.into_iter().map(|x| x / t).collect(), e / t))
}

/// Matrices `B_j` with `E(t, 0, xi) = sum_j exp(i t |xi| phi_j(t, xi/|xi|)) B_j`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Bands {
    pub t: f64,
    pub xi: Vec<f64>,
    pub zone: Zone,
    /// `t |xi| phi_j(t, xi/|xi|) = int_0^t l_j`.
    pub phase: Vec<f64>,
    pub b: Vec<Vec<(f64, f64)>>,
    pub reconstruction_error: f64,
}

impl Bands {
    pub fn matrix(&self, j: usize) -> CMat {
        let m = (self.b[j].len() as f64).sqrt() as usize;
        CMat::from_iterator(m, m, self.b[j].iter().map(|&(re, im)| C64::new(re, im)))
    }

    pub fn reconstruct(&self) -> CMat {
        let m = (self.b[0].len() as f64).sqrt() as usize;
        let mut acc = CMat::zeros(m, m);
        for j in 0..self.b.len() {
            acc += self.matrix(j) * (I * self.phase[j]).exp();
        }
        acc
    }
}

fn to_pairs(a: &CMat) -> Vec<(f64, f64)> {
    a.iter().map(|z| (z.re, z.im)).collect()
}

/// Constructive bands: in the regular sub-zone the diagonal split of
/// `E~_k` is inserted into the factorisation; elsewhere every band is
/// `E / m` with the phase factor removed. `reference` locks the eigenbasis
/// axes (used for frequency differences).
pub fn representation_bands(
    h: &Hierarchy,
    t: f64,
    xi: &[f64],
    reference: Option<&SpectralPoint>,
    opts: &PropOptions,
) -> Result<Bands> {
    let sys = &*h.system;
    let m = sys.dim();
    let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let zp = h.zone_eff();
    let t0 = zone_boundary(r, &zp, true)?;
    let (lam, _) = root_integrals(sys, t, xi, opts.quad_tol)?;
    let mut b = Vec::with_capacity(m);
    let (e, zone) = if t >= t0 && (t > t0 || t0 == 0.0) {
        let pre = if t0 > 0.0 { solve_direct(sys, t0, 0.0, xi, opts)? } else { identity(m) };
        let f = hyp_factor(h, t, t0, xi, reference, opts, false)?;
        let (lam0, _) = root_integrals(sys, t0, xi, opts.quad_tol)?;
        let tail = &f.q * &f.right * &pre;
        for j in 0..m {
            let mut pj = CMat::zeros(m, m);
            pj[(j, j)] = c(1.0);
            // exp(i Phi_j(t)) exp(-i int_0^t l_j) = exp(i int_{t0}^t F_jj - i int_0^{t0} l_j)
            let ph = I * (f.phase[j] - (lam[j] - lam0[j])) - I * lam0[j];
            b.push(&f.left * pj * &tail * ph.exp());
        }
        (&f.e * &pre, Zone::Reg)
    } else {
        let e = solve_direct(sys, t, 0.0, xi, opts)?;
        for l in lam.iter().take(m) {
            b.push(&e * ((-I * l).exp() / m as f64));
        }
        let z = if t <= zone_boundary(r, &zp, false)? { Zone::Pd } else { Zone::Osc };
        (e, z)
    };
    let mut bands = Bands { t, xi: xi.to_vec(), zone, phase: lam, b: b.iter().map(to_pairs).collect(), reconstruction_error: 0.0 };
    bands.reconstruction_error = norm2(&(bands.reconstruct() - e));
    Ok(bands)
}
