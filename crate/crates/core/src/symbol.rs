//! Matrix symbols `A(t, xi)`, zone geometry, smooth cutoffs and symbol class
//! checks.

use crate::error::{Error, Result};
use crate::expr::{Graph, Id, Program};
use crate::jet::{factorial, Jet, MatJet};
use crate::linalg::{c, norm2, CMat, C64};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

/// Zone constants `N` and `nu`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneParams {
    #[serde(rename = "N")]
    pub n: f64,
    pub nu: f64,
}

impl ZoneParams {
    pub fn new(n: f64, nu: f64) -> Result<Self> {
        if !(n > 0.0) || !(nu >= 0.0) || !n.is_finite() || !nu.is_finite() {
            return Err(Error::Domain(format!("zone constants N={n}, nu={nu}")));
        }
        Ok(ZoneParams { n, nu })
    }

    pub fn with_n(&self, n: f64) -> Self {
        ZoneParams { n, nu: self.nu }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Pd,
    Osc,
    Reg,
}

/// `log(e + t)`.
pub fn ell(t: f64) -> f64 {
    (std::f64::consts::E + t).ln()
}

/// Time scale `(log(e+t))^nu / (1+t)`.
pub fn time_scale(t: f64, nu: f64) -> f64 {
    ell(t).powf(nu) / (1.0 + t)
}

/// Solves `(1+t)|xi| = N (log(e+t))^p` with `p = nu` or `2 nu`; returns `0`
/// when the frequency is already hyperbolic at `t = 0`.
pub fn zone_boundary(xi_abs: f64, zp: &ZoneParams, doubled: bool) -> Result<f64> {
    if !(xi_abs >= 0.0) || !xi_abs.is_finite() {
        return Err(Error::Domain(format!("|xi| = {xi_abs}")));
    }
    if xi_abs == 0.0 {
        return Err(Error::Domain("zone boundary undefined at xi = 0".into()));
    }
    let p = if doubled { 2.0 * zp.nu } else { zp.nu };
    let g = |t: f64| (1.0 + t) * xi_abs - zp.n * ell(t).powf(p);
    if g(0.0) >= 0.0 {
        return Ok(0.0);
    }
    if p == 0.0 {
        return Ok(zp.n / xi_abs - 1.0);
    }
    let mut hi = (zp.n / xi_abs).max(1.0);
    while g(hi) < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Domain("zone boundary overflow".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..3 {
        let d = xi_abs - zp.n * p * ell(t).powf(p - 1.0) / (std::f64::consts::E + t);
        if d.abs() > 0.0 {
            let tn = t - g(t) / d;
            if tn >= lo && tn <= hi {
                t = tn;
            }
        }
    }
    Ok(t)
}

pub fn zone_of(t: f64, xi_abs: f64, zp: &ZoneParams) -> Result<Zone> {
    let t1 = zone_boundary(xi_abs, zp, false)?;
    if t <= t1 && t1 > 0.0 {
        return Ok(Zone::Pd);
    }
    let t2 = zone_boundary(xi_abs, zp, true)?;
    if t <= t2 && t2 > 0.0 {
        Ok(Zone::Osc)
    } else {
        Ok(Zone::Reg)
    }
}

/// Zone weight `<xi>_t = max(|xi|, N (log(e+t))^nu / (1+t))`.
pub fn zone_weight(t: f64, xi_abs: f64, zp: &ZoneParams) -> f64 {
    xi_abs.max(zp.n * time_scale(t, zp.nu))
}

/// C-infinity monotone transition, `0` for `s <= 0` and `1` for `s >= 1`.
pub fn smoothstep(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / s).exp();
    let b = (-1.0 / (1.0 - s)).exp();
    a / (a + b)
}

/// Scaled zone variable `s = |xi|(1+t) / (N (log(e+t))^p)`.
pub fn zone_variable(t: f64, xi_abs: f64, zp: &ZoneParams, doubled: bool) -> f64 {
    let p = if doubled { 2.0 * zp.nu } else { zp.nu };
    xi_abs * (1.0 + t) / (zp.n * ell(t).powf(p))
}

/// Pseudo-differential zone cutoff: `1` for `s <= 1/2`, `0` for `s >= 1`.
pub fn chi_pd(t: f64, xi_abs: f64, zp: &ZoneParams) -> f64 {
    1.0 - smoothstep(2.0 * zone_variable(t, xi_abs, zp, false) - 1.0)
}

pub fn chi_hyp(t: f64, xi_abs: f64, zp: &ZoneParams) -> f64 {
    1.0 - chi_pd(t, xi_abs, zp)
}

/// Cutoff of the regular sub-zone: `0` for `s <= 1/2`, `1` for `s >= 1`,
/// with `s` the zone variable of the doubled exponent `2 nu`.
pub fn chi_reg(t: f64, xi_abs: f64, zp: &ZoneParams) -> f64 {
    smoothstep(2.0 * zone_variable(t, xi_abs, zp, true) - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    /// Highest admissible total frequency derivative order.
    pub xi: usize,
    /// Highest admissible time derivative order.
    pub t: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Exact,
    Fd,
}

/// A time-dependent matrix symbol with derivative access.
pub trait Symbol: Send + Sync {
    fn dim(&self) -> usize;
    fn space_dim(&self) -> usize;
    fn budget(&self) -> Budget;
    fn backend(&self) -> Backend;

    /// `d_t^k d_xi^alpha A(t, xi)`.
    fn partial(&self, t: f64, xi: &[f64], k: usize, alpha: &[usize]) -> Result<CMat>;

    fn eval(&self, t: f64, xi: &[f64]) -> CMat {
        self.partial(t, xi, 0, &vec![0; xi.len()]).expect("value evaluation")
    }

    /// Taylor jet in `t` of `d_xi^alpha A` at fixed `xi`.
    fn t_jet(&self, t: f64, xi: &[f64], order: usize, alpha: &[usize]) -> Result<MatJet> {
        let m = self.dim();
        let mut out = MatJet::zeros(m, order);
        for k in 0..=order {
            out.c[k] = self.partial(t, xi, k, alpha)? * c(1.0 / factorial(k));
        }
        Ok(out)
    }

    /// Jet of `A` along a curve `(t(s), xi(s))`.
    fn curve_jet(&self, _t: &Jet, _xi: &[Jet]) -> Result<MatJet> {
        Err(Error::DerivativeOrder("curve jets need an exact backend".into()))
    }

    /// Declared homogeneity degree in `xi`, if any.
    fn homogeneity(&self) -> Option<f64> {
        None
    }
}

pub(crate) fn check_budget(b: Budget, k: usize, alpha: &[usize]) -> Result<()> {
    let a: usize = alpha.iter().sum();
    if a > b.xi || k > b.t {
        return Err(Error::DerivativeOrder(format!(
            "requested (k={k}, |alpha|={a}) beyond budget (t={}, xi={})",
            b.t, b.xi
        )));
    }
    Ok(())
}

/// All multi-indices in `n` variables with total order `<= max`.
pub fn multi_indices(n: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; n]];
    for total in 1..=max {
        let mut cur = vec![0; n];
        fn rec(pos: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if pos + 1 == cur.len() {
                cur[pos] = left;
                out.push(cur.clone());
                return;
            }
            for v in (0..=left).rev() {
                cur[pos] = v;
                rec(pos + 1, left - v, cur, out);
            }
        }
        if n > 0 {
            rec(0, total, &mut cur, &mut out);
        }
    }
    out
}

/// Symbol given by closed-form entries; frequency derivatives are symbolic and
/// time derivatives come from Taylor jets.
#[derive(Clone)]
pub struct ExprSymbol {
    m: usize,
    n: usize,
    graph: Arc<Graph>,
    entries: Vec<Id>,
    progs: Arc<HashMap<Vec<usize>, Program>>,
    budget: Budget,
    homogeneity: Option<f64>,
}

impl std::fmt::Debug for ExprSymbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ExprSymbol({}x{}, n={})", self.m, self.m, self.n)
    }
}

impl ExprSymbol {
    /// Row-major entries, each parsed with the expression grammar.
    pub fn parse(m: usize, n: usize, entries: &[&str], budget: Budget) -> Result<Self> {
        if entries.len() != m * m {
            return Err(Error::Parse(format!("expected {} entries, got {}", m * m, entries.len())));
        }
        let mut g = Graph::new();
        let ids = entries.iter().map(|s| g.parse(s, n)).collect::<Result<Vec<_>>>()?;
        Ok(Self::from_graph(m, n, g, ids, budget))
    }

    pub fn from_graph(m: usize, n: usize, mut g: Graph, entries: Vec<Id>, budget: Budget) -> Self {
        let mut progs = HashMap::new();
        for alpha in multi_indices(n, budget.xi) {
            let ids: Vec<Id> = entries.iter().map(|&e| g.diff_multi(e, 0, &alpha)).collect();
            progs.insert(alpha, Program::compile(&g, &ids));
        }
        ExprSymbol {
            m,
            n,
            graph: Arc::new(g),
            entries,
            progs: Arc::new(progs),
            budget,
            homogeneity: None,
        }
    }

    pub fn with_homogeneity(mut self, deg: f64) -> Self {
        self.homogeneity = Some(deg);
        self
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn entries(&self) -> &[Id] {
        &self.entries
    }

    fn prog(&self, alpha: &[usize]) -> Result<&Program> {
        self.progs
            .get(alpha)
            .ok_or_else(|| Error::DerivativeOrder(format!("alpha {alpha:?} beyond budget")))
    }

    fn to_mat(&self, v: &[C64]) -> CMat {
        CMat::from_row_slice(self.m, self.m, v)
    }

    /// Values at one time for a batch of frequencies given as coordinate columns.
    pub fn eval_batch(&self, t: f64, xi_cols: &[Vec<f64>]) -> Vec<crate::expr::BatchValue> {
        self.progs[&vec![0; self.n]].eval_batch(t, xi_cols)
    }

    /// Values of the entries as flat row-major vector.
    pub fn eval_flat(&self, t: f64, xi: &[f64]) -> Vec<C64> {
        self.progs[&vec![0; self.n]].eval(t, xi)
    }
}

impl Symbol for ExprSymbol {
    fn dim(&self) -> usize {
        self.m
    }
    fn space_dim(&self) -> usize {
        self.n
    }
    fn budget(&self) -> Budget {
        self.budget
    }
    fn backend(&self) -> Backend {
        Backend::Exact
    }
    fn homogeneity(&self) -> Option<f64> {
        self.homogeneity
    }

    fn partial(&self, t: f64, xi: &[f64], k: usize, alpha: &[usize]) -> Result<CMat> {
        check_budget(self.budget, k, alpha)?;
        check_point(t, xi, self.n)?;
        let p = self.prog(alpha)?;
        if k == 0 {
            return Ok(self.to_mat(&p.eval(t, xi)));
        }
        let jets = p.eval_t_jet(t, xi, k);
        let v: Vec<C64> = jets.iter().map(|j| j.derivative(k)).collect();
        Ok(self.to_mat(&v))
    }

    fn t_jet(&self, t: f64, xi: &[f64], order: usize, alpha: &[usize]) -> Result<MatJet> {
        check_budget(self.budget, order, alpha)?;
        check_point(t, xi, self.n)?;
        let p = self.prog(alpha)?;
        Ok(MatJet::from_entries(self.m, &p.eval_t_jet(t, xi, order)))
    }

    fn curve_jet(&self, t: &Jet, xi: &[Jet]) -> Result<MatJet> {
        let p = self.prog(&vec![0; self.n])?;
        Ok(MatJet::from_entries(self.m, &p.eval_jet(t, xi)))
    }
}

fn check_point(t: f64, xi: &[f64], n: usize) -> Result<()> {
    if xi.len() != n {
        return Err(Error::Domain(format!("frequency has {} components, expected {n}", xi.len())));
    }
    if !t.is_finite() || t < 0.0 || xi.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("point (t={t}, xi={xi:?}) outside the domain")));
    }
    Ok(())
}

/// Central finite-difference weights on the offsets `-p..=p` for derivative
/// order `d`.
pub fn fd_weights(d: usize, p: usize) -> Vec<f64> {
    let z: Vec<f64> = (-(p as i64)..=(p as i64)).map(|v| v as f64).collect();
    fd_weights_on(d, &z)
}

/// Finite-difference weights at the evaluation point `0` on arbitrary
/// distinct offsets `z`, by Fornberg's recursion.
pub fn fd_weights_on(d: usize, z: &[f64]) -> Vec<f64> {
    let npts = z.len();
    let mut w = vec![vec![0.0; d + 1]; npts];
    let mut c1 = 1.0;
    let mut c4 = z[0];
    w[0][0] = 1.0;
    for i in 1..npts {
        let mn = i.min(d);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = z[i];
        for j in 0..i {
            let c3 = z[i] - z[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    w[i][k] = c1 * (k as f64 * w[i - 1][k - 1] - c5 * w[i - 1][k]) / c2;
                }
                w[i][0] = -c1 * c5 * w[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                w[j][k] = (c4 * w[j][k] - k as f64 * w[j][k - 1]) / c3;
            }
            w[j][0] *= c4 / c3;
        }
        c1 = c2;
    }
    w.iter().map(|r| r[d]).collect()
}

/// Half-width of the sixth-order central stencil for derivative order `d`.
pub fn fd_half_width(d: usize) -> usize {
    d.div_ceil(2) - 1 + 3
}

/// Base step for a derivative of total order `d`, before scaling by `max(1, t)`
/// in time or by `|xi|` in frequency.
pub fn fd_step(d: usize) -> f64 {
    match d {
        0 | 1 => 1e-5,
        2 => 1e-3,
        3 => 5e-3,
        4 => 1.5e-2,
        _ => 4e-2,
    }
}

/// Mixed partial derivative of a matrix-valued function by tensor-product
/// sixth-order central stencils. Variable 0 is time, the rest are frequencies.
pub fn fd_partial<F>(f: &F, t: f64, xi: &[f64], k: usize, alpha: &[usize]) -> CMat
where
    F: Fn(f64, &[f64]) -> CMat + ?Sized,
{
    let mut orders = vec![k];
    orders.extend_from_slice(alpha);
    let mut base = vec![t];
    base.extend_from_slice(xi);
    let active: Vec<usize> = (0..orders.len()).filter(|&i| orders[i] > 0).collect();
    let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let xi_scale = if r > 0.0 { r } else { 1.0 };
    let total: usize = orders.iter().sum();
    let mut stencils = Vec::new();
    for &v in &active {
        let d = orders[v];
        let p = fd_half_width(d);
        let scale = if v == 0 { t.abs().max(1.0) } else { xi_scale };
        let h = fd_step(total) * scale;
        // Near t = 0 the stencil is shifted forward so no node leaves the domain.
        let lowest = if v == 0 { ((t / h).floor() as i64).min(p as i64) } else { p as i64 };
        let offsets: Vec<f64> = (0..=2 * p as i64).map(|j| (j - lowest) as f64).collect();
        let w = fd_weights_on(d, &offsets);
        stencils.push((v, offsets, h, w));
    }
    let eval_at = |pt: &[f64]| f(pt[0], &pt[1..]);
    if stencils.is_empty() {
        return eval_at(&base);
    }
    let mut acc: Option<CMat> = None;
    let mut idx = vec![0usize; stencils.len()];
    loop {
        let mut pt = base.clone();
        let mut wt = 1.0;
        for (s, (v, offsets, h, w)) in stencils.iter().enumerate() {
            pt[*v] += offsets[idx[s]] * h;
            wt *= w[idx[s]] / h.powi(orders[*v] as i32);
        }
        if wt != 0.0 {
            let val = eval_at(&pt) * c(wt);
            acc = Some(match acc {
                Some(a) => a + val,
                None => val,
            });
        }
        let mut s = 0;
        loop {
            idx[s] += 1;
            if idx[s] < stencils[s].3.len() {
                break;
            }
            idx[s] = 0;
            s += 1;
            if s == stencils.len() {
                let m = f(t, xi).nrows();
                return acc.unwrap_or_else(|| CMat::zeros(m, m));
            }
        }
    }
}

type MatFn = dyn Fn(f64, &[f64]) -> CMat + Send + Sync;

/// Symbol given only pointwise; all derivatives by finite differences.
#[derive(Clone)]
pub struct FdSymbol {
    m: usize,
    n: usize,
    f: Arc<MatFn>,
    budget: Budget,
}

impl FdSymbol {
    pub fn new<F>(m: usize, n: usize, budget: Budget, f: F) -> Self
    where
        F: Fn(f64, &[f64]) -> CMat + Send + Sync + 'static,
    {
        FdSymbol { m, n, f: Arc::new(f), budget }
    }
}

impl Symbol for FdSymbol {
    fn dim(&self) -> usize {
        self.m
    }
    fn space_dim(&self) -> usize {
        self.n
    }
    fn budget(&self) -> Budget {
        self.budget
    }
    fn backend(&self) -> Backend {
        Backend::Fd
    }
    fn partial(&self, t: f64, xi: &[f64], k: usize, alpha: &[usize]) -> Result<CMat> {
        check_budget(self.budget, k, alpha)?;
        check_point(t, xi, self.n)?;
        Ok(fd_partial(&*self.f, t, xi, k, alpha))
    }
}

/// Sample grid for class checks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassGrid {
    pub times: Vec<f64>,
    pub freqs: Vec<Vec<f64>>,
}

impl ClassGrid {
    /// Log-spaced times in `[0, t_max]` and radii in `[r_min, r_max]` along a
    /// few fixed directions.
    pub fn standard(n: usize, t_max: f64, r_min: f64, r_max: f64, nt: usize, nr: usize) -> Self {
        let mut times = vec![0.0];
        times.extend(crate::fit::logspace(1e-2, t_max, nt.max(2) - 1));
        let dirs = directions(n);
        let mut freqs = Vec::new();
        for r in crate::fit::logspace(r_min, r_max, nr) {
            for d in &dirs {
                freqs.push(d.iter().map(|x| x * r).collect());
            }
        }
        ClassGrid { times, freqs }
    }
}

/// A few deterministic unit directions in `R^n`.
pub fn directions(n: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..5)
            .map(|k| {
                let a = 0.3 + k as f64 * std::f64::consts::PI * 0.4;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut v = Vec::new();
            for k in 0..6 {
                let th = 0.4 + 0.45 * k as f64;
                let ph = 0.7 + 1.1 * k as f64;
                let mut d = vec![th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
                d.resize(n, 0.0);
                let nr = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.push(d.iter().map(|x| x / nr).collect());
            }
            v
        }
    }
}

/// Region of the extended phase space where a class check is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    All,
    Pd,
    Hyp,
    Reg,
}

impl Region {
    pub fn contains(&self, t: f64, xi_abs: f64, zp: &ZoneParams) -> bool {
        match self {
            Region::All => true,
            Region::Pd => zone_boundary(xi_abs, zp, false).map(|b| t <= b).unwrap_or(false),
            Region::Hyp => zone_boundary(xi_abs, zp, false).map(|b| t >= b).unwrap_or(false),
            Region::Reg => zone_boundary(xi_abs, zp, true).map(|b| t >= b).unwrap_or(false),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassConstant {
    pub k: usize,
    pub alpha: Vec<usize>,
    pub constant: f64,
    pub worst_t: f64,
    pub worst_xi: Vec<f64>,
    /// Running supremum at each horizon of `horizons`.
    pub running: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassReport {
    pub m1: f64,
    pub m2: f64,
    pub constants: Vec<ClassConstant>,
    pub horizons: Vec<f64>,
    /// Log-log slope of the running supremum over the last horizons.
    pub growth: f64,
    pub bounded: bool,
    pub points: usize,
}

impl ClassReport {
    pub fn max_constant(&self) -> f64 {
        self.constants.iter().map(|c| c.constant).fold(0.0, f64::max)
    }
}

/// Estimate the constants `C_{k,alpha}` of the symbol estimate
/// `|d_t^k d_xi^alpha a| <= C <xi>_t^{m1-|alpha|} ((log(e+t))^nu/(1+t))^{m2+k}`.
#[allow(clippy::too_many_arguments)]
pub fn check_symbol_class(
    sym: &dyn Symbol,
    m1: f64,
    m2: f64,
    zp: &ZoneParams,
    grid: &ClassGrid,
    region: Region,
    max_k: usize,
    max_alpha: usize,
) -> Result<ClassReport> {
    let b = sym.budget();
    if max_k > b.t || max_alpha > b.xi {
        return Err(Error::DerivativeOrder(format!(
            "class check up to (k={max_k}, |alpha|={max_alpha}) beyond budget (t={}, xi={})",
            b.t, b.xi
        )));
    }
    let n = sym.space_dim();
    let t_max = grid.times.iter().cloned().fold(0.0, f64::max);
    let horizons: Vec<f64> = (0..4).map(|i| t_max / 10f64.powi(3 - i)).filter(|h| *h > 0.0).collect();
    let alphas = multi_indices(n, max_alpha);
    let mut constants = Vec::new();
    let mut points = 0usize;
    for k in 0..=max_k {
        for alpha in &alphas {
            let mut best = ClassConstant {
                k,
                alpha: alpha.clone(),
                constant: 0.0,
                worst_t: 0.0,
                worst_xi: vec![0.0; n],
                running: vec![0.0; horizons.len()],
            };
            let a: usize = alpha.iter().sum();
            for &t in &grid.times {
                for xi in &grid.freqs {
                    let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if r == 0.0 || !region.contains(t, r, zp) {
                        continue;
                    }
                    points += 1;
                    let v = norm2(&sym.partial(t, xi, k, alpha)?);
                    let w = zone_weight(t, r, zp).powf(m1 - a as f64)
                        * time_scale(t, zp.nu).powf(m2 + k as f64);
                    let ratio = v / w;
                    if !ratio.is_finite() {
                        best.constant = f64::INFINITY;
                        continue;
                    }
                    if ratio > best.constant {
                        best.constant = ratio;
                        best.worst_t = t;
                        best.worst_xi = xi.clone();
                    }
                    for (hi, h) in horizons.iter().enumerate() {
                        if t <= *h {
                            best.running[hi] = best.running[hi].max(ratio);
                        }
                    }
                }
            }
            constants.push(best);
        }
    }
    let growth = growth_slope(&horizons, &constants);
    let bounded = constants.iter().all(|c| c.constant.is_finite()) && growth < 0.05;
    Ok(ClassReport { m1, m2, constants, horizons, growth, bounded, points: points / constants_len(max_k, &alphas) })
}

fn constants_len(max_k: usize, alphas: &[Vec<usize>]) -> usize {
    ((max_k + 1) * alphas.len()).max(1)
}

fn growth_slope(horizons: &[f64], constants: &[ClassConstant]) -> f64 {
    let mut worst = 0.0f64;
    if horizons.len() < 2 {
        return 0.0;
    }
    for cst in constants {
        let l = horizons.len();
        let a = cst.running[l - 2];
        let b = cst.running[l - 1];
        if a > 0.0 && b > 0.0 {
            worst = worst.max((b / a).ln() / (horizons[l - 1] / horizons[l - 2]).ln());
        }
    }
    worst
}

/// Constants `C_k = sup |f^{(k)}(t)| (1+t)^{rho+k} / (log(e+t))^{nu (rho+k)}`
/// of a scalar coefficient, for `k <= max_k`.
pub fn t_class_constants(
    f: &dyn Fn(f64, usize) -> Jet,
    rho: f64,
    nu: f64,
    times: &[f64],
    max_k: usize,
) -> Vec<f64> {
    let mut out = vec![0.0f64; max_k + 1];
    for &t in times {
        let j = f(t, max_k);
        for (k, o) in out.iter_mut().enumerate() {
            let d = j.derivative(k).norm();
            let w = time_scale(t, nu).powf(rho + k as f64);
            *o = o.max(d / w);
        }
    }
    out
}
