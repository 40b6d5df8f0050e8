//! Oscillatory integrals `I(lambda) = int e^{i lambda Phi(x)} a(x) chi(x) dx`
//! by oscillation-resolving polar quadrature, the hypotheses of the
//! multi-dimensional van der Corput lemma, decay-rate fits, and surface
//! kernels `J(lambda, z)` over Fresnel-surface charts.

use crate::error::{Error, Result};
use crate::expr::{Graph, Program};
use crate::fit::{loglog_fit, LineFit};
use crate::fresnel::{line, GraphHeight};
use crate::jet::Jet;
use crate::linalg::{c, C64};
use crate::quad::{gauss_legendre, PanelRule};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// `F(rho, omega) = Phi(z + rho omega)` with radial derivatives.
pub trait RadialPhase: Send + Sync {
    /// Dimension `N` of the integration variable.
    fn dim(&self) -> usize;
    /// `d^k/d rho^k F(rho, omega)` for `k = 0..=order`.
    fn derivs(&self, rho: f64, omega: &[f64], order: usize) -> Result<Vec<C64>>;
}

/// Amplitude `a(x)`, `x` relative to the expansion point.
pub type Amplitude = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Phase `Phi(x)` given by an expression in `xi1..xiN`, expanded at `z`.
pub struct ExprField {
    n: usize,
    z: Vec<f64>,
    program: Program,
}

impl ExprField {
    pub fn parse(src: &str, n: usize) -> Result<ExprField> {
        let mut g = Graph::new();
        let id = g.parse(src, n)?;
        Ok(ExprField { n, z: vec![0.0; n], program: Program::compile(&g, &[id]) })
    }

    pub fn at(mut self, z: Vec<f64>) -> ExprField {
        self.z = z;
        self
    }
}

impl RadialPhase for ExprField {
    fn dim(&self) -> usize {
        self.n
    }

    fn derivs(&self, rho: f64, omega: &[f64], order: usize) -> Result<Vec<C64>> {
        let base: Vec<f64> = self.z.iter().zip(omega).map(|(z, w)| z + rho * w).collect();
        let xi = line(&base, omega, order);
        let j = self.program.eval_jet(&Jet::constant(c(0.0), order), &xi).pop().expect("one root");
        Ok((0..=order).map(|k| j.derivative(k)).collect())
    }
}

/// `F(rho, omega) = h(z + rho omega) - h(z) - rho grad h(z) . omega`.
pub struct SurfacePhase {
    height: Arc<dyn GraphHeight>,
    pub z: Vec<f64>,
    h0: f64,
    grad: Vec<f64>,
}

impl SurfacePhase {
    pub fn new(height: Arc<dyn GraphHeight>, z: Vec<f64>) -> Result<SurfacePhase> {
        let d = height.dim();
        if z.len() != d {
            return Err(Error::Domain(format!("chart point has {} components, expected {d}", z.len())));
        }
        let mut grad = vec![0.0; d];
        let mut h0 = 0.0;
        for (i, g) in grad.iter_mut().enumerate() {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            let v = height.derivs(&z, &e, 1)?;
            h0 = v[0];
            *g = v[1];
        }
        Ok(SurfacePhase { height, z, h0, grad })
    }

    pub fn height(&self) -> &Arc<dyn GraphHeight> {
        &self.height
    }
}

impl RadialPhase for SurfacePhase {
    fn dim(&self) -> usize {
        self.z.len()
    }

    fn derivs(&self, rho: f64, omega: &[f64], order: usize) -> Result<Vec<C64>> {
        let y: Vec<f64> = self.z.iter().zip(omega).map(|(z, w)| z + rho * w).collect();
        let hd = self.height.derivs(&y, omega, order)?;
        let gw: f64 = self.grad.iter().zip(omega).map(|(g, w)| g * w).sum();
        Ok(hd
            .iter()
            .enumerate()
            .map(|(k, v)| match k {
                0 => c(v - self.h0 - rho * gw),
                1 => c(v - gw),
                _ => c(*v),
            })
            .collect())
    }
}

/// Smooth radial cutoff equal to 1 at the origin and supported in
/// `|x| < radius`.
pub fn bump(r: f64, radius: f64) -> f64 {
    let s = r / radius;
    if s >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// The integral `int e^{i lambda F} a chi dx`, `chi = bump(|x|, delta/2)`.
#[derive(Clone)]
pub struct ModelIntegralSpec {
    pub phase: Arc<dyn RadialPhase>,
    pub amplitude: Amplitude,
    pub delta: f64,
    pub gamma: usize,
    pub lambdas: Vec<f64>,
}

impl ModelIntegralSpec {
    pub fn dim(&self) -> usize {
        self.phase.dim()
    }

    pub fn support_radius(&self) -> f64 {
        0.5 * self.delta
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OscOptions {
    /// Quadrature nodes per local oscillation period.
    pub nodes_per_period: f64,
    /// Minimum number of radial panels.
    pub min_panels: usize,
    /// Minimum number of angular nodes for `N >= 2`.
    pub min_angles: usize,
    /// Directions per angular variable in hypothesis checks.
    pub check_directions: usize,
    /// Radial samples in hypothesis checks.
    pub check_radii: usize,
}

impl Default for OscOptions {
    fn default() -> Self {
        OscOptions { nodes_per_period: 20.0, min_panels: 8, min_angles: 32, check_directions: 64, check_radii: 200 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IntegralValue {
    pub re: f64,
    pub im: f64,
    /// At least the change under one halving of every quadrature step.
    pub error: f64,
    pub nodes: usize,
    /// Part of the support fell outside the chart.
    pub clipped: bool,
}

impl IntegralValue {
    pub fn value(&self) -> C64 {
        C64::new(self.re, self.im)
    }

    pub fn abs(&self) -> f64 {
        self.value().norm()
    }
}

/// Unit directions with weights for the sphere `S^(N-1)`.
fn sphere_rule(n: usize, m: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    match n {
        1 => Ok(vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)]),
        2 => Ok((0..m)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / m as f64;
                (vec![a.cos(), a.sin()], 2.0 * PI / m as f64)
            })
            .collect()),
        3 => {
            let (x, w) = gauss_legendre((m / 2).max(2));
            let mut out = Vec::new();
            for (ct, wt) in x.iter().zip(&w) {
                let st = (1.0 - ct * ct).sqrt();
                for k in 0..m {
                    let a = 2.0 * PI * k as f64 / m as f64;
                    out.push((vec![st * a.cos(), st * a.sin(), *ct], wt * 2.0 * PI / m as f64));
                }
            }
            Ok(out)
        }
        _ => Err(Error::Oscillatory(format!("polar quadrature supports N = 1, 2, 3, not {n}"))),
    }
}

/// Total variation of `F(r, .)` around the unit circle (`N = 2`) or over a
/// coarse sphere grid (`N = 3`).
fn angular_variation(phase: &dyn RadialPhase, r: f64) -> Result<f64> {
    let n = phase.dim();
    if n == 1 {
        return Ok(0.0);
    }
    let dirs = sphere_rule(n, 64)?;
    let vals = dirs
        .iter()
        .map(|(w, _)| Ok(phase.derivs(r, w, 0)?[0]))
        .collect::<Result<Vec<C64>>>()?;
    let mut var = 0.0;
    for k in 0..vals.len() {
        var += (vals[(k + 1) % vals.len()] - vals[k]).norm();
    }
    Ok(if n == 2 { var } else { var / 8.0 })
}

/// Radial panels on `[0, r]` resolving `e^{i lambda F(., omega)}`.
fn radial_panels(
    phase: &dyn RadialPhase,
    omega: &[f64],
    r: f64,
    lambda: f64,
    refine: f64,
    opts: &OscOptions,
) -> Result<Vec<(f64, f64)>> {
    let npan = PanelRule::shared16().x.len() as f64;
    let wmax = r / opts.min_panels as f64 / refine;
    let mut out = Vec::new();
    let mut a = 0.0;
    while a < r * (1.0 - 1e-14) {
        let mut w = wmax.min(r - a);
        for _ in 0..60 {
            let d = phase.derivs(a + w, omega, 1)?[1].norm();
            let cap = npan * 2.0 * PI / (opts.nodes_per_period * lambda * d) / refine;
            if cap >= w {
                break;
            }
            w = cap.max(w * 0.5);
        }
        out.push((a, (a + w).min(r)));
        a += w;
    }
    Ok(out)
}

/// Polar integral `int_{S^(N-1)} int_0^r e^{i lambda F} beta rho^(N-1)`.
/// `beta` returns `None` outside the admissible domain.
fn polar_integral(
    phase: &dyn RadialPhase,
    beta: &(dyn Fn(f64, &[f64]) -> Option<f64> + Sync),
    r: f64,
    lambda: f64,
    refine: f64,
    opts: &OscOptions,
) -> Result<(C64, usize, bool)> {
    let n = phase.dim();
    let m = if n == 1 {
        0
    } else {
        let var = angular_variation(phase, r)?;
        let need = (opts.nodes_per_period * lambda * var / (2.0 * PI)).ceil() as usize;
        let base = need.max(opts.min_angles);
        ((base as f64 * refine).ceil() as usize + 1) & !1
    };
    let dirs = sphere_rule(n, m)?;
    let rule = PanelRule::shared16();
    let parts: Vec<Result<(C64, usize, bool)>> = dirs
        .par_iter()
        .map(|(w, wt)| {
            let panels = radial_panels(phase, w, r, lambda, refine, opts)?;
            let mut acc = c(0.0);
            let mut nodes = 0;
            let mut clipped = false;
            for (a, b) in panels {
                let half = 0.5 * (b - a);
                let mid = 0.5 * (a + b);
                for (x, wq) in rule.x.iter().zip(&rule.w) {
                    let rho = mid + half * x;
                    nodes += 1;
                    let bv = match beta(rho, w) {
                        Some(v) => v,
                        None => {
                            clipped = true;
                            continue;
                        }
                    };
                    if bv == 0.0 {
                        continue;
                    }
                    let f = match phase.derivs(rho, w, 0) {
                        Ok(v) => v[0],
                        Err(Error::Geometry(_)) => {
                            clipped = true;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    let e = (C64::new(0.0, lambda) * f).exp();
                    acc += e * (bv * rho.powi(n as i32 - 1) * wq * half);
                }
            }
            Ok((acc * *wt, nodes, clipped))
        })
        .collect();
    let mut tot = c(0.0);
    let mut nodes = 0;
    let mut clipped = false;
    for p in parts {
        let (v, k, cl) = p?;
        tot += v;
        nodes += k;
        clipped |= cl;
    }
    Ok((tot, nodes, clipped))
}

fn integral_with_halving(
    phase: &dyn RadialPhase,
    beta: &(dyn Fn(f64, &[f64]) -> Option<f64> + Sync),
    r: f64,
    lambda: f64,
    opts: &OscOptions,
) -> Result<IntegralValue> {
    let (coarse, _, _) = polar_integral(phase, beta, r, lambda, 1.0, opts)?;
    let (fine, nodes, clipped) = polar_integral(phase, beta, r, lambda, 2.0, opts)?;
    let error = (fine - coarse).norm() + 4.0 * f64::EPSILON * fine.norm();
    Ok(IntegralValue { re: fine.re, im: fine.im, error, nodes, clipped })
}

/// Direction grid used by the hypothesis checks.
fn check_dirs(n: usize, opts: &OscOptions) -> Result<Vec<Vec<f64>>> {
    let m = opts.check_directions.max(4);
    Ok(sphere_rule(n, if n == 3 { m / 4 } else { m })?.into_iter().map(|(w, _)| w).collect())
}

fn ensure_nondegenerate(phase: &dyn RadialPhase, r: f64, gamma: usize, opts: &OscOptions) -> Result<()> {
    let dirs = check_dirs(phase.dim(), opts)?;
    let mut sup: f64 = 0.0;
    for w in &dirs {
        for k in 1..=8 {
            let rho = r * k as f64 / 8.0;
            if let Ok(d) = phase.derivs(rho, w, 1) {
                sup = sup.max(d[1].norm());
            }
        }
        if let Ok(d) = phase.derivs(0.0, w, gamma) {
            sup = sup.max(d.iter().skip(1).map(|z| z.norm()).fold(0.0, f64::max));
        }
    }
    if !(sup > 1e-13) {
        return Err(Error::DegeneratePhase("phase is flat on the support; no oscillation period".into()));
    }
    Ok(())
}

/// `I(lambda)` with an error estimate from one halving of every step.
pub fn evaluate_model_integral(spec: &ModelIntegralSpec, lambda: f64, opts: &OscOptions) -> Result<IntegralValue> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda = {lambda}")));
    }
    let r = spec.support_radius();
    ensure_nondegenerate(spec.phase.as_ref(), r, spec.gamma, opts)?;
    let amp = spec.amplitude.clone();
    let beta = move |rho: f64, w: &[f64]| -> Option<f64> {
        let x: Vec<f64> = w.iter().map(|v| v * rho).collect();
        Some(amp(&x) * bump(rho, r))
    };
    integral_with_halving(spec.phase.as_ref(), &beta, r, lambda, opts)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub pass: bool,
    pub value: f64,
    /// `(rho, omega)` where `value` is attained.
    pub witness: Option<(f64, Vec<f64>)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// Largest `|a_0|, |a_1|`.
    pub f1: HypothesisCheck,
    /// Smallest `sum_{j=2}^{gamma} |a_j|`.
    pub f2: HypothesisCheck,
    /// Largest relative decrease of `|d_rho F|` between grid neighbours.
    pub f3: HypothesisCheck,
    /// Largest `|d_rho^k F|`, `k <= gamma + 1`, on `[0, delta)`.
    pub f4: HypothesisCheck,
    /// Smallest `Im F` on the support.
    pub im_nonnegative: HypothesisCheck,
    /// Largest finite-difference derivative of the amplitude times cutoff
    /// up to order `floor(N/gamma) + 1`.
    pub amplitude: HypothesisCheck,
    pub all_pass: bool,
}

fn fd_amplitude_bound(amp: &dyn Fn(&[f64]) -> f64, n: usize, r: f64, order: usize, dirs: &[Vec<f64>]) -> (f64, (f64, Vec<f64>)) {
    let h = 1e-3 * r;
    let mut worst = (0.0, (0.0, vec![0.0; n]));
    for w in dirs {
        for k in 0..16 {
            let rho = r * k as f64 / 16.0;
            for e in 0..n {
                let f = |s: f64| {
                    let x: Vec<f64> = (0..n).map(|i| w[i] * rho + if i == e { s } else { 0.0 }).collect();
                    let rr = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    amp(&x) * bump(rr, r)
                };
                // Central differences of orders 1..=order along the axis e.
                for d in 1..=order.min(3) {
                    let v = match d {
                        1 => (f(h) - f(-h)) / (2.0 * h),
                        2 => (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h),
                        _ => (f(2.0 * h) - 2.0 * f(h) + 2.0 * f(-h) - f(-2.0 * h)) / (2.0 * h * h * h),
                    };
                    if v.abs() > worst.0 {
                        worst = (v.abs(), (rho, w.clone()));
                    }
                }
            }
        }
    }
    worst
}

/// Checks of (F1)-(F4), `Im F >= 0` and amplitude bounds on a grid.
pub fn check_hypotheses(spec: &ModelIntegralSpec, opts: &OscOptions) -> Result<HypothesisReport> {
    let n = spec.dim();
    let g = spec.gamma;
    let dirs = check_dirs(n, opts)?;
    let r = spec.support_radius();
    let nr = opts.check_radii.max(8);
    let mut f1 = (0.0f64, None);
    let mut f2 = (f64::INFINITY, None);
    let mut f3 = (0.0f64, None);
    let mut f4 = (0.0f64, None);
    let mut im = (f64::INFINITY, None);
    let mut scale: f64 = 0.0;
    for w in &dirs {
        let t0 = spec.phase.derivs(0.0, w, g)?;
        let a: Vec<f64> = t0.iter().enumerate().map(|(j, z)| z.norm() / crate::jet::factorial(j)).collect();
        scale = scale.max(a.iter().copied().fold(0.0, f64::max));
        let a01 = a[0].max(a[1]);
        if a01 >= f1.0 {
            f1 = (a01, Some((0.0, w.clone())));
        }
        let s: f64 = a[2..].iter().sum();
        if s < f2.0 {
            f2 = (s, Some((0.0, w.clone())));
        }
        let mut prev: Option<f64> = None;
        for k in 0..nr {
            let rho = spec.delta * k as f64 / nr as f64;
            let d = spec.phase.derivs(rho, w, g + 1)?;
            let sup = d[1..].iter().map(|z| z.norm()).fold(0.0, f64::max);
            if sup > f4.0 || f4.1.is_none() {
                f4 = (sup.max(f4.0), Some((rho, w.clone())));
            }
            if rho <= r && d[0].im < im.0 {
                im = (d[0].im, Some((rho, w.clone())));
            }
            let slope = d[1].norm();
            if let Some(p) = prev {
                if k > 1 && p > 0.0 {
                    let drop = (p - slope) / p;
                    if drop > f3.0 {
                        f3 = (drop, Some((rho, w.clone())));
                    }
                }
            }
            prev = Some(slope);
        }
    }
    let order = n / g + 1;
    let (amp_v, amp_w) = fd_amplitude_bound(spec.amplitude.as_ref(), n, r, order, &dirs);
    let tol = 1e-10 * scale.max(1.0);
    let mk = |v: (f64, Option<(f64, Vec<f64>)>), pass: bool| HypothesisCheck { pass, value: v.0, witness: v.1 };
    let f1c = mk(f1.clone(), f1.0 <= tol);
    let f2c = mk(f2.clone(), f2.0 > 1e-8 * scale.max(1.0));
    let f3c = mk(f3.clone(), f3.0 <= 1e-10);
    let f4c = mk(f4.clone(), f4.0.is_finite());
    let imc = mk(im.clone(), im.0 >= -tol);
    let ampc = HypothesisCheck { pass: amp_v.is_finite(), value: amp_v, witness: Some(amp_w) };
    let all_pass = f1c.pass && f2c.pass && f3c.pass && f4c.pass && imc.pass && ampc.pass;
    Ok(HypothesisReport { f1: f1c, f2: f2c, f3: f3c, f4: f4c, im_nonnegative: imc, amplitude: ampc, all_pass })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub slope_halfwidth: f64,
    /// `-N / gamma`.
    pub theoretical: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub points: usize,
    pub pass: bool,
}

/// Decades at the top of the grid used for the slope.
pub const FIT_WINDOW_DECADES: f64 = 1.5;

/// Log-log slope of `|values|` on the top decade and a half of `lambdas`.
pub fn fit_decay(lambdas: &[f64], values: &[f64], gamma: usize, n: usize) -> Result<DecayFit> {
    if lambdas.len() != values.len() {
        return Err(Error::Fit("lambda and value grids differ in length".into()));
    }
    let lmin = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    let lmax = lambdas.iter().copied().fold(0.0, f64::max);
    if lambdas.len() < 12 || !(lmax / lmin >= 1e3 * (1.0 - 1e-12)) {
        return Err(Error::Fit(format!(
            "need at least 12 samples over 3 decades, got {} over [{lmin}, {lmax}]",
            lambdas.len()
        )));
    }
    let lo = lmax / 10f64.powf(FIT_WINDOW_DECADES) * (1.0 - 1e-12);
    let (x, y): (Vec<f64>, Vec<f64>) = lambdas
        .iter()
        .zip(values)
        .filter(|(l, v)| **l >= lo && v.abs() > 0.0 && v.is_finite())
        .map(|(l, v)| (*l, v.abs()))
        .unzip();
    if x.len() < 6 {
        return Err(Error::Fit(format!("{} usable points in the asymptotic window", x.len())));
    }
    let f: LineFit = loglog_fit(&x, &y)?;
    let residual = (x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b.ln() - f.intercept - f.slope * a.ln()).powi(2))
        .sum::<f64>()
        / x.len() as f64)
        .sqrt();
    let theoretical = -(n as f64) / gamma as f64;
    Ok(DecayFit {
        slope: f.slope,
        slope_halfwidth: f.slope_halfwidth,
        theoretical,
        residual,
        lambda_min: x[0],
        lambda_max: *x.last().unwrap(),
        points: x.len(),
        pass: f.slope <= theoretical + 0.1,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModulusBound {
    pub c_fit: f64,
    /// Largest `|I| (1 + lambda)^{N/gamma} / c_fit` over the whole grid.
    pub worst_ratio: f64,
    pub holds: bool,
}

/// `C_fit` is twice the largest `|I| (1 + lambda)^{N/gamma}` on the
/// asymptotic window; the bound is then tested on every grid point.
pub fn modulus_bound(lambdas: &[f64], values: &[f64], gamma: usize, n: usize) -> Result<ModulusBound> {
    let e = n as f64 / gamma as f64;
    let lmax = lambdas.iter().copied().fold(0.0, f64::max);
    let lo = lmax / 10f64.powf(FIT_WINDOW_DECADES) * (1.0 - 1e-12);
    let scaled: Vec<(f64, f64)> = lambdas.iter().zip(values).map(|(l, v)| (*l, v.abs() * (1.0 + l).powf(e))).collect();
    let c_fit = 2.0 * scaled.iter().filter(|(l, _)| *l >= lo).map(|p| p.1).fold(0.0, f64::max);
    if !(c_fit > 0.0) {
        return Err(Error::Fit("no positive values in the asymptotic window".into()));
    }
    let worst_ratio = scaled.iter().map(|p| p.1 / c_fit).fold(0.0, f64::max);
    Ok(ModulusBound { c_fit, worst_ratio, holds: worst_ratio <= 1.0 })
}

/// `lambda, re, im, abs, error` rows.
pub fn decay_csv(lambdas: &[f64], values: &[IntegralValue]) -> String {
    let mut out = String::from("lambda,re,im,abs,error\n");
    for (l, v) in lambdas.iter().zip(values) {
        out.push_str(&format!("{l:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n", v.re, v.im, v.abs(), v.error));
    }
    out
}

/// Kernel `J(lambda, z) = int e^{i lambda F(rho, omega)} beta rho^(n-2)` in
/// polar coordinates around `z` in a chart, with
/// `beta = a(z + rho omega) bump(rho, delta/2)`. The unimodular factor
/// `e^{i lambda h(z)}` is omitted.
pub fn surface_kernel(
    phase: &SurfacePhase,
    amplitude: &Amplitude,
    delta: f64,
    gamma: usize,
    lambda: f64,
    opts: &OscOptions,
) -> Result<IntegralValue> {
    let r = 0.5 * delta;
    ensure_nondegenerate(phase, r, gamma, opts)?;
    let amp = amplitude.clone();
    // Points outside the chart surface as geometry errors of the phase.
    let beta = move |rho: f64, w: &[f64]| -> Option<f64> {
        let x: Vec<f64> = w.iter().map(|v| v * rho).collect();
        Some(amp(&x) * bump(rho, r))
    };
    integral_with_halving(phase, &beta, r, lambda, opts)
}

/// Model spec for the kernel phase, so that the same hypothesis checks apply.
pub fn kernel_spec(phase: Arc<SurfacePhase>, amplitude: Amplitude, delta: f64, gamma: usize) -> ModelIntegralSpec {
    ModelIntegralSpec { phase, amplitude, delta, gamma, lambdas: Vec::new() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::logspace;
    use crate::fresnel::{Chart, ChartHeight, ExprHeight, ExprPhase, Phase};

    fn unit() -> Amplitude {
        Arc::new(|_: &[f64]| 1.0)
    }

    fn model(src: &str, n: usize, gamma: usize) -> ModelIntegralSpec {
        ModelIntegralSpec {
            phase: Arc::new(ExprField::parse(src, n).unwrap()),
            amplitude: unit(),
            delta: 1.0,
            gamma,
            lambdas: logspace(10.0, 1e4, 16),
        }
    }

    #[test]
    fn zero_amplitude_gives_zero() {
        let mut s = model("xi1^2", 1, 2);
        s.amplitude = Arc::new(|_: &[f64]| 0.0);
        let v = evaluate_model_integral(&s, 100.0, &OscOptions::default()).unwrap();
        assert_eq!(v.value(), c(0.0));
    }

    #[test]
    fn lambda_zero_is_plain_integral() {
        // int_{-1/2}^{1/2} bump(|x|, 1/2) dx by a fine composite rule.
        let s = model("xi1^2", 1, 2);
        let v = evaluate_model_integral(&s, 0.0, &OscOptions::default()).unwrap();
        let m = 20000;
        let h = 1.0 / m as f64;
        let plain: f64 = (0..m).map(|k| bump((-0.5 + (k as f64 + 0.5) * h).abs(), 0.5) * h).sum();
        assert!((v.re - plain).abs() < 1e-9, "{} vs {}", v.re, plain);
    }

    #[test]
    fn halving_error_dominates_refinement() {
        let s = model("xi1^4", 1, 4);
        let opts = OscOptions::default();
        let v = evaluate_model_integral(&s, 3000.0, &opts).unwrap();
        let finer = OscOptions { nodes_per_period: 80.0, min_panels: 32, ..opts };
        let w = evaluate_model_integral(&s, 3000.0, &finer).unwrap();
        assert!((v.value() - w.value()).norm() <= v.error.max(1e-14));
    }

    #[test]
    fn hypotheses_for_quadratic_phase() {
        let s = model("xi1^2 + xi2^2", 2, 2);
        let h = check_hypotheses(&s, &OscOptions::default()).unwrap();
        assert!(h.all_pass, "{h:?}");
        let bad = model("xi1", 1, 2);
        let h = check_hypotheses(&bad, &OscOptions::default()).unwrap();
        assert!(!h.f1.pass);
    }

    #[test]
    fn synthetic_power_law_fit() {
        let l = logspace(10.0, 1e4, 20);
        let v: Vec<f64> = l.iter().map(|x| 2.0 * x.powf(-0.5)).collect();
        let f = fit_decay(&l, &v, 2, 1).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-6 && f.pass);
        assert!(matches!(fit_decay(&l[..8], &v[..8], 2, 1), Err(Error::Fit(_))));
    }

    #[test]
    fn flat_height_is_degenerate() {
        let h: Arc<dyn GraphHeight> = Arc::new(ExprHeight::parse("0.5 + 0.2*xi1", 1).unwrap());
        let ph = SurfacePhase::new(h, vec![0.0]).unwrap();
        let e = surface_kernel(&ph, &unit(), 0.8, 2, 10.0, &OscOptions::default()).unwrap_err();
        assert!(matches!(e, Error::DegeneratePhase(_)));
    }

    #[test]
    fn sphere_kernel_at_zero_frequency() {
        let sphere: Arc<dyn Phase> = Arc::new(ExprPhase::parse("abs_xi", 3, 0.0).unwrap());
        let h: Arc<dyn GraphHeight> = Arc::new(ChartHeight::new(sphere, Chart { axis: 2, sign: 1 }));
        let ph = SurfacePhase::new(h, vec![0.1, 0.0]).unwrap();
        let amp: Amplitude = Arc::new(|x: &[f64]| 1.0 + 0.5 * x[0]);
        let v = surface_kernel(&ph, &amp, 0.6, 2, 0.0, &OscOptions::default()).unwrap();
        // Cartesian midpoint rule for int (1 + x/2) bump(|x|, 0.3) dx.
        let m = 1200;
        let hs = 0.6 / m as f64;
        let mut plain = 0.0;
        for i in 0..m {
            for j in 0..m {
                let x = -0.3 + (i as f64 + 0.5) * hs;
                let y = -0.3 + (j as f64 + 0.5) * hs;
                plain += (1.0 + 0.5 * x) * bump((x * x + y * y).sqrt(), 0.3) * hs * hs;
            }
        }
        assert!((v.re - plain).abs() < 1e-10, "{} vs {}", v.re, plain);
        assert!(!v.clipped);
    }
}
