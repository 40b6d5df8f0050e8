//! Fresnel surfaces `{phi(t, .) = 1}` of positively homogeneous phases: radial
//! map, axis charts, contact indices and convexity diagnostics for the
//! shifted root phases.

use crate::error::{Error, Result};
use crate::expr::{Graph, Program};
use crate::jet::Jet;
use crate::linalg::{c, hermitian_eigenvalues, CMat, C64};
use crate::quad;
use crate::spectral::{decompose, root_jets, SpectralOptions};
use crate::symbol::Symbol;
use crate::systems::System;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Smallest normal-alignment cosine for a point to belong to an axis chart.
pub const CHART_COS: f64 = 0.5;

/// A real phase, positively homogeneous of degree one, evaluated along
/// Taylor-jet curves `rho -> xi(rho)`.
pub trait Phase: Send + Sync {
    fn dim(&self) -> usize;

    /// Jet of `rho -> phi(xi(rho))`; all inputs share one order.
    fn jet(&self, xi: &[Jet]) -> Result<Jet>;

    fn value(&self, xi: &[f64]) -> Result<f64> {
        let x: Vec<Jet> = xi.iter().map(|v| Jet::constant(c(*v), 0)).collect();
        Ok(self.jet(&x)?.value().re)
    }

    fn gradient(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let n = xi.len();
        (0..n)
            .map(|i| {
                let mut d = vec![0.0; n];
                d[i] = 1.0;
                Ok(self.jet(&line(xi, &d, 1))?.derivative(1).re)
            })
            .collect()
    }

    /// `d^k/d rho^k phi(xi + rho dir)` at `rho = 0`, for `k = 0..=order`.
    fn directional(&self, xi: &[f64], dir: &[f64], order: usize) -> Result<Vec<f64>> {
        let j = self.jet(&line(xi, dir, order))?;
        Ok((0..=order).map(|k| j.derivative(k).re).collect())
    }
}

/// Jets of the straight line `base + rho dir`.
pub fn line(base: &[f64], dir: &[f64], order: usize) -> Vec<Jet> {
    base.iter()
        .zip(dir)
        .map(|(b, d)| {
            let mut j = Jet::constant(c(*b), order);
            if order > 0 {
                j.c[1] = c(*d);
            }
            j
        })
        .collect()
}

/// Phase given by an expression in `xi1..xin` (and `t`, fixed).
pub struct ExprPhase {
    n: usize,
    t: f64,
    program: Program,
    pub source: String,
}

impl ExprPhase {
    pub fn parse(src: &str, n: usize, t: f64) -> Result<ExprPhase> {
        let mut g = Graph::new();
        let id = g.parse(src, n)?;
        Ok(ExprPhase { n, t, program: Program::compile(&g, &[id]), source: src.to_string() })
    }
}

impl Phase for ExprPhase {
    fn dim(&self) -> usize {
        self.n
    }

    fn jet(&self, xi: &[Jet]) -> Result<Jet> {
        if xi.len() != self.n {
            return Err(Error::Domain(format!("phase in {} variables got {}", self.n, xi.len())));
        }
        let order = xi.first().map(|j| j.order()).unwrap_or(0);
        let t = Jet::constant(c(self.t), order);
        Ok(self.program.eval_jet(&t, xi).pop().expect("one root"))
    }
}

/// `factor * phi`.
pub struct ScaledPhase {
    pub inner: Arc<dyn Phase>,
    pub factor: f64,
}

impl Phase for ScaledPhase {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn jet(&self, xi: &[Jet]) -> Result<Jet> {
        Ok(self.inner.jet(xi)?.scale(c(self.factor)))
    }
}

/// Shift subtracted from the roots before forming phases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootShift {
    None,
    /// Middle root for odd `m`, mean of the two middle roots for even `m`.
    Middle,
}

/// `sign * (1/t) int_0^t (l_k - alpha)(tau, xi) d tau`, or the integrand at
/// `t` itself when not averaged.
#[derive(Clone)]
pub struct RootPhase {
    sys: Arc<System>,
    pub t: f64,
    pub k: usize,
    pub shift: RootShift,
    pub sign: f64,
    pub averaged: bool,
    pub tol: f64,
}

impl RootPhase {
    pub fn averaged(sys: Arc<System>, t: f64, k: usize) -> Result<RootPhase> {
        if k >= sys.dim() {
            return Err(Error::Domain(format!("root index {k} out of range")));
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!("time {t} outside the domain")));
        }
        Ok(RootPhase { sys, t, k, shift: RootShift::None, sign: 1.0, averaged: true, tol: 1e-12 })
    }

    pub fn instantaneous(sys: Arc<System>, t: f64, k: usize) -> Result<RootPhase> {
        let mut p = RootPhase::averaged(sys, t, k)?;
        p.averaged = false;
        Ok(p)
    }

    pub fn with_shift(mut self, shift: RootShift) -> RootPhase {
        self.shift = shift;
        self
    }

    pub fn with_sign(mut self, sign: f64) -> RootPhase {
        self.sign = sign;
        self
    }

    fn at(&self, tau: f64, xi: &[Jet]) -> Result<Jet> {
        let order = xi.first().map(|j| j.order()).unwrap_or(0);
        let a1 = self.sys.principal.curve_jet(&Jet::constant(c(tau), order), xi)?;
        let pt = decompose(&a1.c[0], &SpectralOptions::default(), None)?;
        let roots = root_jets(&a1, &pt)?;
        let m = roots.len();
        let mut v = roots[self.k].clone();
        if self.shift == RootShift::Middle {
            let alpha = if m % 2 == 1 {
                roots[(m - 1) / 2].clone()
            } else {
                roots[m / 2 - 1].add(&roots[m / 2]).scale(c(0.5))
            };
            v = v.sub(&alpha);
        }
        Ok(v)
    }
}

impl Phase for RootPhase {
    fn dim(&self) -> usize {
        self.sys.space_dim()
    }

    fn jet(&self, xi: &[Jet]) -> Result<Jet> {
        let order = xi.first().map(|j| j.order()).unwrap_or(0);
        if !self.averaged || self.t == 0.0 {
            return Ok(self.at(self.t, xi)?.scale(c(self.sign)));
        }
        let scale = xi.iter().map(|j| j.value().norm()).fold(0.0, f64::max);
        let mut err: Option<Error> = None;
        let f = |tau: f64| -> Vec<C64> {
            match self.at(tau, xi) {
                Ok(j) => j.c,
                Err(e) => {
                    err.get_or_insert(e);
                    vec![c(0.0); order + 1]
                }
            }
        };
        let (v, _) = quad::integrate_vec(f, 0.0, self.t, &[], self.tol * self.t * scale.max(1e-300), self.tol, 4000);
        if let Some(e) = err {
            return Err(e);
        }
        let inv = self.sign / self.t;
        Ok(Jet { c: v.into_iter().map(|z| z * inv).collect() })
    }
}

/// Deterministic unit-sphere grid with `2n * per_chart` points; in `n = 3`
/// the six axis points are appended.
pub fn sphere_grid(n: usize, per_chart: usize) -> Result<Vec<Vec<f64>>> {
    let total = 2 * n * per_chart;
    if total == 0 {
        return Err(Error::Grid("empty sphere grid".into()));
    }
    match n {
        2 => Ok((0..total)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / total as f64;
                vec![a.cos(), a.sin()]
            })
            .collect()),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            let mut out: Vec<Vec<f64>> = (0..total)
                .map(|k| {
                    let z = 1.0 - (2 * k + 1) as f64 / total as f64;
                    let rr = (1.0 - z * z).sqrt();
                    let a = golden * k as f64;
                    vec![rr * a.cos(), rr * a.sin(), z]
                })
                .collect();
            for axis in 0..3 {
                for s in [1.0, -1.0] {
                    let mut e = vec![0.0; 3];
                    e[axis] = s;
                    out.push(e);
                }
            }
            Ok(out)
        }
        _ => Err(Error::Grid(format!("surface grids are available for n = 2, 3, not {n}"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chart {
    pub axis: usize,
    /// `+1` or `-1`: the chart is `xi_axis = sign * h(y)`.
    pub sign: i8,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub omega: Vec<f64>,
    /// `r(omega) = 1 / phi(omega)`.
    pub r: f64,
    pub u: Vec<f64>,
    /// Outward unit normal `grad phi / |grad phi|`.
    pub normal: Vec<f64>,
    pub grad_norm: f64,
    /// Indices into the chart list.
    pub charts: Vec<usize>,
}

pub struct FresnelSurface {
    phase: Arc<dyn Phase>,
    pub t: f64,
    pub n: usize,
    pub charts: Vec<Chart>,
    pub points: Vec<SurfacePoint>,
    /// Largest `|phi(r(omega) omega) - 1|`.
    pub radial_residual: f64,
    pub mean_radius: f64,
}

impl std::fmt::Debug for FresnelSurface {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FresnelSurface(n={}, t={}, points={})", self.n, self.t, self.points.len())
    }
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let nr = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / nr).collect()
}

fn cross(a: &[f64], b: &[f64]) -> Vec<f64> {
    vec![a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Jet of `s(rho)` solving `phi(base + rho dir + s(rho) sdir) = 1`, where
/// `g` is the derivative of `phi` along `sdir` at `base`.
pub fn implicit_jet(phase: &dyn Phase, base: &[f64], dir: &[f64], sdir: &[f64], g: f64, order: usize) -> Result<Jet> {
    let lin = line(base, dir, order);
    let mut s = Jet::zero(order);
    for _ in 0..=order {
        let xi: Vec<Jet> = lin.iter().zip(sdir).map(|(l, d)| l.add(&s.scale(c(*d)))).collect();
        let mut defect = phase.jet(&xi)?;
        defect.c[0] -= c(1.0);
        s = s.sub(&defect.scale(c(1.0 / g)));
    }
    Ok(s)
}

/// Graph function `h(y)` of a chart of `{phi = 1}`, with `y` in `R^(n-1)`.
#[derive(Clone)]
pub struct ChartHeight {
    phase: Arc<dyn Phase>,
    pub chart: Chart,
}

impl ChartHeight {
    pub fn new(phase: Arc<dyn Phase>, chart: Chart) -> ChartHeight {
        ChartHeight { phase, chart }
    }

    fn embed(&self, y: &[f64], h: f64) -> Vec<f64> {
        let mut x = Vec::with_capacity(y.len() + 1);
        x.extend_from_slice(&y[..self.chart.axis]);
        x.push(self.chart.sign as f64 * h);
        x.extend_from_slice(&y[self.chart.axis..]);
        x
    }

    /// `h(y)` by Newton's method along the chart axis, with the normal
    /// alignment cosine at the solution.
    pub fn height(&self, y: &[f64]) -> Result<(f64, f64)> {
        let n = self.phase.dim();
        let sg = self.chart.sign as f64;
        let mut e = vec![0.0; n];
        e[self.chart.axis] = sg;
        let r0 = 1.0 / self.phase.value(&e)?;
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let mut h = (r0 * r0 - yy).max(0.25 * r0 * r0).sqrt();
        for _ in 0..60 {
            let x = self.embed(y, h);
            // Value and axis derivative from one first-order jet.
            let d = self.phase.directional(&x, &e, 1)?;
            let (f, dh) = (d[0] - 1.0, d[1]);
            if !(dh > 0.0) {
                return Err(Error::Geometry(format!("chart {:?} degenerates at y = {y:?}", self.chart)));
            }
            let step = f / dh;
            h -= step;
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Geometry(format!("chart {:?} leaves the domain at y = {y:?}", self.chart)));
            }
            if step.abs() <= 1e-15 * h {
                let x = self.embed(y, h);
                let g = self.phase.gradient(&x)?;
                let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                return Ok((h, sg * g[self.chart.axis] / gn));
            }
        }
        Err(Error::Geometry(format!("chart height did not converge at y = {y:?}")))
    }
}

/// A graph function `h(y)` with directional derivatives.
pub trait GraphHeight: Send + Sync {
    /// Dimension of the parameter space.
    fn dim(&self) -> usize;
    /// `d^k/d rho^k h(y + rho w)` at `rho = 0`, `k = 0..=order`.
    fn derivs(&self, y: &[f64], w: &[f64], order: usize) -> Result<Vec<f64>>;
    /// Whether `y` lies in the usable part of the chart.
    fn contains(&self, _y: &[f64]) -> bool {
        true
    }
}

impl GraphHeight for ChartHeight {
    fn dim(&self) -> usize {
        self.phase.dim() - 1
    }

    fn derivs(&self, y: &[f64], w: &[f64], order: usize) -> Result<Vec<f64>> {
        let (h, cs) = self.height(y)?;
        if cs < CHART_COS {
            return Err(Error::Geometry(format!("y = {y:?} outside chart {:?}", self.chart)));
        }
        let base = self.embed(y, h);
        let dir = {
            let mut d = w.to_vec();
            d.insert(self.chart.axis, 0.0);
            d
        };
        let sg = self.chart.sign as f64;
        let mut e = vec![0.0; base.len()];
        e[self.chart.axis] = sg;
        let g = self.phase.directional(&base, &e, 1)?[1];
        let s = implicit_jet(self.phase.as_ref(), &base, &dir, &e, g, order)?;
        Ok((0..=order).map(|k| if k == 0 { h } else { s.derivative(k).re }).collect())
    }

    fn contains(&self, y: &[f64]) -> bool {
        matches!(self.height(y), Ok((_, cs)) if cs >= CHART_COS)
    }
}

/// Graph function given by an expression in `xi1..xi(n-1)`.
pub struct ExprHeight {
    inner: ExprPhase,
}

impl ExprHeight {
    pub fn parse(src: &str, dim: usize) -> Result<ExprHeight> {
        Ok(ExprHeight { inner: ExprPhase::parse(src, dim, 0.0)? })
    }
}

impl GraphHeight for ExprHeight {
    fn dim(&self) -> usize {
        self.inner.n
    }

    fn derivs(&self, y: &[f64], w: &[f64], order: usize) -> Result<Vec<f64>> {
        self.inner.directional(y, w, order)
    }
}

/// Builds the radial map and chart atlas of `{phi = 1}` over `grid`.
pub fn build_surface(phase: Arc<dyn Phase>, t: f64, grid: &[Vec<f64>]) -> Result<FresnelSurface> {
    let n = phase.dim();
    if !(2..=3).contains(&n) {
        return Err(Error::Geometry(format!("surfaces are supported for n = 2, 3, not {n}")));
    }
    let charts: Vec<Chart> = (0..n).flat_map(|axis| [1i8, -1].map(|sign| Chart { axis, sign })).collect();
    let points: Vec<Result<(SurfacePoint, f64)>> = grid
        .par_iter()
        .map(|w| {
            if w.len() != n {
                return Err(Error::Grid(format!("grid direction has {} components", w.len())));
            }
            let omega = normalize(w);
            let p = phase.value(&omega)?;
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::DegeneratePhase(format!(
                    "phase value {p:e} at {omega:?} is not positive; shift the phase first"
                )));
            }
            let r = 1.0 / p;
            let u: Vec<f64> = omega.iter().map(|x| x * r).collect();
            let res = (phase.value(&u)? - 1.0).abs();
            let grad = phase.gradient(&u)?;
            let gn = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(gn > 0.0 && gn.is_finite()) {
                return Err(Error::Geometry(format!("vanishing phase gradient at {u:?}")));
            }
            let normal: Vec<f64> = grad.iter().map(|x| x / gn).collect();
            let in_charts: Vec<usize> = charts
                .iter()
                .enumerate()
                .filter(|(_, ch)| ch.sign as f64 * normal[ch.axis] >= CHART_COS)
                .map(|(i, _)| i)
                .collect();
            if in_charts.is_empty() {
                return Err(Error::Geometry(format!("point {u:?} lies in no chart")));
            }
            Ok((SurfacePoint { omega, r, u, normal, grad_norm: gn, charts: in_charts }, res))
        })
        .collect();
    let mut pts = Vec::with_capacity(points.len());
    let mut residual: f64 = 0.0;
    for p in points {
        let (sp, res) = p?;
        residual = residual.max(res);
        pts.push(sp);
    }
    if !(residual <= 1e-10) {
        return Err(Error::Geometry(format!("radial map residual {residual:e}; phase is not 1-homogeneous")));
    }
    let mean_radius = pts.iter().map(|p| p.r).sum::<f64>() / pts.len() as f64;
    Ok(FresnelSurface { phase, t, n, charts, points: pts, radial_residual: residual, mean_radius })
}

impl FresnelSurface {
    pub fn phase(&self) -> &Arc<dyn Phase> {
        &self.phase
    }

    fn implicit_jet(&self, base: &[f64], dir: &[f64], sdir: &[f64], g: f64, order: usize) -> Result<Jet> {
        implicit_jet(self.phase.as_ref(), base, dir, sdir, g, order)
    }

    /// Derivatives `d^j/d rho^j` of the height over the tangent plane at
    /// point `i` along the unit tangent `dir`, `j = 0..=order`.
    pub fn tangent_derivatives(&self, i: usize, dir: &[f64], order: usize) -> Result<Vec<f64>> {
        let p = &self.points[i];
        let s = self.implicit_jet(&p.u, dir, &p.normal, p.grad_norm, order)?;
        Ok((0..=order).map(|k| s.derivative(k).re).collect())
    }

    /// Derivatives of `h(y + rho w)` in chart `chart` at point `i`, with `w`
    /// a unit vector of the chart's parameter space embedded in `R^n`
    /// (zero in the chart axis).
    pub fn chart_derivatives(&self, i: usize, chart: usize, w: &[f64], order: usize) -> Result<Vec<f64>> {
        let p = &self.points[i];
        let ch = self.charts[chart];
        let sg = ch.sign as f64;
        let mut e = vec![0.0; self.n];
        e[ch.axis] = sg;
        let g = sg * p.normal[ch.axis] * p.grad_norm;
        let s = self.implicit_jet(&p.u, w, &e, g, order)?;
        // h = sign * xi_axis = |u_axis| + s.
        Ok((0..=order)
            .map(|k| {
                let d = s.derivative(k).re;
                if k == 0 {
                    sg * p.u[ch.axis] + d
                } else {
                    d
                }
            })
            .collect())
    }

    /// Unit tangent directions at point `i`.
    pub fn tangent_directions(&self, i: usize, count: usize) -> Vec<Vec<f64>> {
        let nu = &self.points[i].normal;
        if self.n == 2 {
            return vec![vec![-nu[1], nu[0]], vec![nu[1], -nu[0]]];
        }
        let axis = (0..3)
            .min_by(|&a, &b| nu[a].abs().partial_cmp(&nu[b].abs()).unwrap())
            .unwrap();
        let mut a = vec![0.0; 3];
        a[axis] = 1.0;
        let e1 = normalize(&cross(nu, &a));
        let e2 = cross(nu, &e1);
        (0..count)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                e1.iter().zip(&e2).map(|(x, y)| th.cos() * x + th.sin() * y).collect()
            })
            .collect()
    }

    /// Every sampled point lies in at least one chart.
    pub fn coverage_ok(&self) -> bool {
        self.points.iter().all(|p| !p.charts.is_empty())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactOptions {
    pub gamma_max: usize,
    /// Relative to the largest sampled second derivative.
    pub tol_contact: f64,
    /// Tangent directions per point in `n = 3`.
    pub directions: usize,
}

impl Default for ContactOptions {
    fn default() -> Self {
        ContactOptions { gamma_max: 4, tol_contact: 1e-6, directions: 64 }
    }
}

impl ContactOptions {
    /// `gamma_max = 2 floor(m/2)` for an `m x m` system, at least 2.
    pub fn for_system_size(m: usize) -> ContactOptions {
        ContactOptions { gamma_max: (2 * (m / 2)).max(2), ..Default::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContactWitness {
    pub point: usize,
    pub u: Vec<f64>,
    pub direction: Option<Vec<f64>>,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContactIndexReport {
    /// `None` when some direction shows no contact order up to `gamma_max`.
    pub gamma: Option<usize>,
    pub gamma0: Option<usize>,
    pub kappa: f64,
    pub kappa0: f64,
    pub convex: bool,
    pub gamma_max_exceeded: bool,
    pub gamma_witness: Option<ContactWitness>,
    pub gamma0_witness: Option<ContactWitness>,
    pub kappa_witness: Option<ContactWitness>,
    pub kappa0_witness: Option<ContactWitness>,
    pub gamma_max: usize,
    pub tol_contact: f64,
    /// Largest sampled `|d^2 h|` the tolerance is relative to.
    pub second_derivative_scale: f64,
    pub points: usize,
    pub directions_per_point: usize,
    /// Largest contact order over the directions at each point.
    pub point_orders: Vec<Option<usize>>,
}

/// Thresholds `tol * scale2 * R^(2-j)`, dimensionally consistent so that
/// dilating the phase leaves every decision unchanged.
fn thresholds(tol: f64, scale2: f64, radius: f64, jmax: usize) -> Vec<f64> {
    (0..=jmax).map(|j| tol * scale2 * radius.powi(2 - j as i32)).collect()
}

fn order_of(d: &[f64], thr: &[f64], jmax: usize) -> Option<usize> {
    (2..=jmax).find(|&j| d[j].abs() > thr[j])
}

fn second_scale(all: &[Vec<Vec<f64>>], radius: f64) -> f64 {
    let s2 = all.iter().flatten().map(|d| d[2].abs()).fold(0.0, f64::max);
    if s2 > 0.0 {
        return s2;
    }
    all.iter()
        .flatten()
        .flat_map(|d| (2..d.len()).map(move |j| d[j].abs() * radius.powi(j as i32 - 2)))
        .fold(0.0, f64::max)
}

/// Contact indices `gamma`, `gamma0` and the quantities `kappa`, `kappa0`,
/// computed in the tangent-plane frame of each sampled point.
pub fn contact_indices(surface: &FresnelSurface, opts: &ContactOptions) -> Result<ContactIndexReport> {
    let jmax = opts.gamma_max.max(2);
    let order = jmax + 1;
    let ndir = if surface.n == 2 { 2 } else { opts.directions.max(1) };
    let all: Vec<Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)>> = (0..surface.points.len())
        .into_par_iter()
        .map(|i| {
            let dirs = surface.tangent_directions(i, ndir);
            let ds = dirs
                .iter()
                .map(|d| surface.tangent_derivatives(i, d, order))
                .collect::<Result<Vec<_>>>()?;
            Ok((dirs, ds))
        })
        .collect();
    let mut dirs = Vec::with_capacity(all.len());
    let mut ders = Vec::with_capacity(all.len());
    for a in all {
        let (d, v) = a?;
        dirs.push(d);
        ders.push(v);
    }
    let radius = surface.mean_radius;
    let scale2 = second_scale(&ders, radius);
    let thr = thresholds(opts.tol_contact, scale2, radius, order);

    let mut exceeded = false;
    let mut convex = true;
    let mut gamma: Option<usize> = Some(2);
    let mut gamma_w: Option<ContactWitness> = None;
    let mut gamma0: Option<usize> = Some(2);
    let mut gamma0_w: Option<ContactWitness> = None;
    let mut point_orders = Vec::with_capacity(ders.len());
    let mut gamma_seen = 0usize;
    let mut gamma0_seen = 0usize;
    let mut any_point_unbounded = false;
    for (i, pd) in ders.iter().enumerate() {
        let orders: Vec<Option<usize>> = pd.iter().map(|d| order_of(d, &thr, jmax)).collect();
        let mut pmax: Option<usize> = Some(0);
        let mut pmin: Option<usize> = None;
        for (k, o) in orders.iter().enumerate() {
            match o {
                None => {
                    exceeded = true;
                    convex = false;
                    pmax = None;
                }
                Some(j) => {
                    if j % 2 == 1 || pd[k][*j] > 0.0 {
                        convex = false;
                    }
                    if let Some(pm) = pmax {
                        pmax = Some(pm.max(*j));
                    }
                    pmin = Some(pmin.map_or(*j, |x: usize| x.min(*j)));
                    if *j > gamma_seen {
                        gamma_seen = *j;
                        gamma_w = Some(ContactWitness {
                            point: i,
                            u: surface.points[i].u.clone(),
                            direction: Some(dirs[i][k].clone()),
                            value: *j as f64,
                        });
                    }
                }
            }
        }
        point_orders.push(pmax);
        match pmin {
            None => any_point_unbounded = true,
            Some(j) => {
                if j > gamma0_seen {
                    gamma0_seen = j;
                    gamma0_w = Some(ContactWitness { point: i, u: surface.points[i].u.clone(), direction: None, value: j as f64 });
                }
            }
        }
    }
    if exceeded {
        gamma = None;
    } else {
        gamma = gamma.map(|_| gamma_seen.max(2));
    }
    if any_point_unbounded {
        gamma0 = None;
    } else {
        gamma0 = gamma0.map(|_| gamma0_seen.max(2));
    }

    let gk = gamma.unwrap_or(jmax);
    let g0 = gamma0.unwrap_or(jmax);
    let mut kappa = f64::INFINITY;
    let mut kappa_w = None;
    let mut kappa0 = f64::INFINITY;
    let mut kappa0_w = None;
    for (i, pd) in ders.iter().enumerate() {
        let mut inf = f64::INFINITY;
        let mut inf_dir = 0;
        let mut sup: f64 = 0.0;
        for (k, d) in pd.iter().enumerate() {
            let s: f64 = (2..=gk).map(|j| d[j].abs()).sum();
            if s < inf {
                inf = s;
                inf_dir = k;
            }
            let s0: f64 = (2..=g0).map(|j| d[j].abs()).sum();
            sup = sup.max(s0);
        }
        if inf < kappa {
            kappa = inf;
            kappa_w = Some(ContactWitness {
                point: i,
                u: surface.points[i].u.clone(),
                direction: Some(dirs[i][inf_dir].clone()),
                value: inf,
            });
        }
        if sup < kappa0 {
            kappa0 = sup;
            kappa0_w = Some(ContactWitness { point: i, u: surface.points[i].u.clone(), direction: None, value: sup });
        }
    }

    Ok(ContactIndexReport {
        gamma,
        gamma0,
        kappa,
        kappa0,
        convex,
        gamma_max_exceeded: exceeded,
        gamma_witness: gamma_w,
        gamma0_witness: gamma0_w,
        kappa_witness: kappa_w,
        kappa0_witness: kappa0_w,
        gamma_max: jmax,
        tol_contact: opts.tol_contact,
        second_derivative_scale: scale2,
        points: surface.points.len(),
        directions_per_point: ndir,
        point_orders,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChartConsistency {
    /// Point/direction pairs compared across two or more charts.
    pub compared: usize,
    pub mismatches: usize,
}

/// Contact orders of vertical sections in every chart containing a point,
/// compared across overlapping charts.
pub fn chart_consistency(surface: &FresnelSurface, opts: &ContactOptions) -> Result<ChartConsistency> {
    let jmax = opts.gamma_max.max(2);
    let ndir = if surface.n == 2 { 2 } else { opts.directions.max(1) };
    // (point, chart) -> derivatives per tangent direction.
    let rows: Vec<Result<Vec<(usize, Vec<Vec<f64>>)>>> = (0..surface.points.len())
        .into_par_iter()
        .map(|i| {
            let p = &surface.points[i];
            let dirs = surface.tangent_directions(i, ndir);
            p.charts
                .iter()
                .map(|&ch| {
                    let axis = surface.charts[ch].axis;
                    let ds = dirs
                        .iter()
                        .map(|d| {
                            let mut w = d.clone();
                            w[axis] = 0.0;
                            surface.chart_derivatives(i, ch, &normalize(&w), jmax)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Ok((ch, ds))
                })
                .collect()
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let nch = surface.charts.len();
    let mut scales = vec![0.0f64; nch];
    for r in &rows {
        for (ch, ds) in r {
            for d in ds {
                scales[*ch] = scales[*ch].max(d[2].abs());
            }
        }
    }
    let radius = surface.mean_radius;
    let mut compared = 0;
    let mut mismatches = 0;
    for r in &rows {
        if r.len() < 2 {
            continue;
        }
        for k in 0..ndir {
            let orders: Vec<Option<usize>> = r
                .iter()
                .map(|(ch, ds)| order_of(&ds[k], &thresholds(opts.tol_contact, scales[*ch], radius, jmax), jmax))
                .collect();
            compared += 1;
            if orders.windows(2).any(|w| w[0] != w[1]) {
                mismatches += 1;
            }
        }
    }
    Ok(ChartConsistency { compared, mismatches })
}

/// Point cloud `omega_1..omega_n, r, contact_order` as CSV.
pub fn point_cloud_csv(surface: &FresnelSurface, report: Option<&ContactIndexReport>) -> String {
    let mut out = String::new();
    for j in 0..surface.n {
        out.push_str(&format!("omega_{},", j + 1));
    }
    out.push_str("r,contact_order\n");
    for (i, p) in surface.points.iter().enumerate() {
        for w in &p.omega {
            out.push_str(&format!("{w:.17e},"));
        }
        let ord = report
            .and_then(|r| r.point_orders.get(i).copied().flatten())
            .map(|o| o.to_string())
            .unwrap_or_default();
        out.push_str(&format!("{:.17e},{ord}\n", p.r));
    }
    out
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvexityOptions {
    /// Sphere points per chart for the Hessian sweep.
    pub hessian_points: usize,
    /// Sphere points per chart for the surfaces of the shifted phases.
    pub surface_points: usize,
    pub contact: Option<ContactOptions>,
    pub semidefinite_tol: f64,
}

impl Default for ConvexityOptions {
    fn default() -> Self {
        ConvexityOptions { hessian_points: 32, surface_points: 16, contact: None, semidefinite_tol: 1e-8 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RootHessian {
    pub k: usize,
    pub min_eig: f64,
    pub max_eig: f64,
    pub semidefinite: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SheetReport {
    pub k: usize,
    /// The sheet is `{phi_k - alpha = level}`.
    pub level: f64,
    pub contact: ContactIndexReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub t: f64,
    pub m: usize,
    pub alpha_rule: String,
    pub scale: f64,
    pub roots: Vec<RootHessian>,
    pub all_semidefinite: bool,
    pub sheets: Vec<SheetReport>,
    pub surfaces_convex: bool,
    pub gamma_bound: usize,
    pub gamma_bound_holds: bool,
}

fn hessian(phase: &dyn Phase, xi: &[f64]) -> Result<CMat> {
    let n = xi.len();
    let mut h = CMat::zeros(n, n);
    let d2 = |v: &[f64]| -> Result<f64> { Ok(phase.directional(xi, v, 2)?[2]) };
    let mut diag = vec![0.0; n];
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        diag[i] = d2(&e)?;
        h[(i, i)] = c(diag[i]);
    }
    for i in 0..n {
        for j in i + 1..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e[j] = 1.0;
            let v = 0.5 * (d2(&e)? - diag[i] - diag[j]);
            h[(i, j)] = c(v);
            h[(j, i)] = c(v);
        }
    }
    Ok(h)
}

/// Hessian sweep of the roots `l_k(t, .)` on the unit sphere, the shift
/// `alpha`, and contact indices of the shifted averaged sheets.
pub fn convexity_check(sys: &Arc<System>, t: f64, opts: &ConvexityOptions) -> Result<(ConvexityReport, Vec<RootPhase>)> {
    let m = sys.dim();
    let n = sys.space_dim();
    let grid = sphere_grid(n, opts.hessian_points)?;
    let inst: Vec<RootPhase> = (0..m).map(|k| RootPhase::instantaneous(sys.clone(), t, k)).collect::<Result<_>>()?;
    let mut scale: f64 = 0.0;
    let mut eigs: Vec<(f64, f64)> = vec![(f64::INFINITY, f64::NEG_INFINITY); m];
    for (k, ph) in inst.iter().enumerate() {
        let vals: Vec<Result<(f64, Vec<f64>)>> = grid
            .par_iter()
            .map(|w| Ok((ph.value(w)?, hermitian_eigenvalues(&hessian(ph, w)?))))
            .collect();
        for v in vals {
            let (lam, ev) = v?;
            scale = scale.max(lam.abs());
            for e in ev {
                eigs[k].0 = eigs[k].0.min(e);
                eigs[k].1 = eigs[k].1.max(e);
            }
        }
    }
    let tol = opts.semidefinite_tol * scale.max(f64::MIN_POSITIVE);
    let roots: Vec<RootHessian> = eigs
        .iter()
        .enumerate()
        .map(|(k, &(lo, hi))| RootHessian { k, min_eig: lo, max_eig: hi, semidefinite: lo >= -tol || hi <= tol })
        .collect();
    let all_semidefinite = roots.iter().all(|r| r.semidefinite);

    let copts = opts.contact.unwrap_or_else(|| ContactOptions::for_system_size(m));
    let gamma_bound = 2 * (m / 2);
    let sgrid = sphere_grid(n, opts.surface_points)?;
    let mut sheets = Vec::new();
    let mut shifted = Vec::new();
    for k in 0..m {
        if m % 2 == 1 && k == (m - 1) / 2 {
            continue;
        }
        let above = if m % 2 == 1 { k > (m - 1) / 2 } else { k >= m / 2 };
        let level = if above { 1.0 } else { -1.0 };
        let ph = RootPhase::averaged(sys.clone(), t, k)?.with_shift(RootShift::Middle).with_sign(level);
        let surf = build_surface(Arc::new(ph.clone()), t, &sgrid)?;
        let contact = contact_indices(&surf, &copts)?;
        sheets.push(SheetReport { k, level, contact });
        shifted.push(ph);
    }
    let surfaces_convex = sheets.iter().all(|s| s.contact.convex);
    let gamma_bound_holds = sheets.iter().all(|s| s.contact.gamma.is_some_and(|g| g <= gamma_bound.max(2)));
    let alpha_rule = if m % 2 == 1 { "middle root" } else { "mean of the two middle roots" };
    Ok((
        ConvexityReport {
            t,
            m,
            alpha_rule: alpha_rule.into(),
            scale,
            roots,
            all_semidefinite,
            sheets,
            surfaces_convex,
            gamma_bound,
            gamma_bound_holds,
        },
        shifted,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::family;

    fn surface(src: &str, n: usize, per_chart: usize) -> FresnelSurface {
        let ph: Arc<dyn Phase> = Arc::new(ExprPhase::parse(src, n, 0.0).unwrap());
        build_surface(ph, 0.0, &sphere_grid(n, per_chart).unwrap()).unwrap()
    }

    #[test]
    fn sphere_chart_second_derivative() {
        let s = surface("abs_xi", 2, 8);
        let i = s.points.iter().position(|p| (p.omega[1] - 1.0).abs() < 1e-14).unwrap();
        let ch = s.charts.iter().position(|c| c.axis == 1 && c.sign == 1).unwrap();
        let d = s.chart_derivatives(i, ch, &[1.0, 0.0], 3).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-14);
        assert!((d[2] + 1.0).abs() < 1e-12);
        assert!(s.coverage_ok());
    }

    #[test]
    fn sphere_indices() {
        for n in [2, 3] {
            let s = surface("abs_xi", n, if n == 2 { 64 } else { 8 });
            let r = contact_indices(&s, &ContactOptions { directions: 16, ..Default::default() }).unwrap();
            assert_eq!(r.gamma, Some(2));
            assert_eq!(r.gamma0, Some(2));
            assert!((r.kappa - 1.0).abs() < 1e-9 && (r.kappa0 - 1.0).abs() < 1e-9);
            assert!(r.convex && !r.gamma_max_exceeded);
        }
    }

    #[test]
    fn non_positive_phase_is_rejected() {
        let ph: Arc<dyn Phase> = Arc::new(ExprPhase::parse("xi1", 2, 0.0).unwrap());
        let e = build_surface(ph, 0.0, &sphere_grid(2, 4).unwrap()).unwrap_err();
        assert!(matches!(e, Error::DegeneratePhase(_)));
    }

    #[test]
    fn quartic_axis_contact() {
        let s = surface("(xi1^4 + xi2^4)^(1/4)", 2, 32);
        let r = contact_indices(&s, &ContactOptions::default()).unwrap();
        assert_eq!(r.gamma, Some(4));
        assert_eq!(r.gamma0, Some(4));
        assert!(r.convex);
        let cc = chart_consistency(&s, &ContactOptions::default()).unwrap();
        assert!(cc.compared > 0 && cc.mismatches == 0);
    }

    #[test]
    fn wave_sheets_are_spheres() {
        let sys = Arc::new(family("wave_slow_osc", 2).unwrap());
        let (rep, shifted) = convexity_check(&sys, 10.0, &ConvexityOptions { hessian_points: 4, surface_points: 4, ..Default::default() }).unwrap();
        assert!(rep.all_semidefinite && rep.surfaces_convex && rep.gamma_bound_holds);
        assert_eq!(shifted.len(), 2);
        assert_eq!(rep.gamma_bound, 2);
    }
}
