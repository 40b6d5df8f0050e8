//! Builders for first-order systems from differential systems, second-order
//! equations and higher-order scalar equations, plus the bundled families.

use crate::error::{Error, Result};
use crate::expr::{Graph, Id, Var};
use crate::jet::Jet;
use crate::linalg::C64;
use crate::quad;
use crate::symbol::{t_class_constants, Budget, ExprSymbol, Symbol, ZoneParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;

/// Derivative budget of bundled symbols.
pub const DEFAULT_BUDGET: Budget = Budget { xi: 3, t: 10 };

/// Frequency monomial of a higher-order coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Monomial {
    /// `xi^alpha`.
    Alpha(Vec<usize>),
    /// `|xi|^k`.
    AbsPower(usize),
}

impl Monomial {
    fn degree(&self) -> usize {
        match self {
            Monomial::Alpha(a) => a.iter().sum(),
            Monomial::AbsPower(k) => *k,
        }
    }

    fn build(&self, g: &mut Graph, n: usize) -> Result<Id> {
        match self {
            Monomial::Alpha(a) => {
                if a.len() != n {
                    return Err(Error::Config(format!("multi-index {a:?} has wrong length")));
                }
                let mut acc = g.real(1.0);
                for (j, &p) in a.iter().enumerate() {
                    for _ in 0..p {
                        let x = g.xi(j);
                        acc = g.mul(acc, x);
                    }
                }
                Ok(acc)
            }
            Monomial::AbsPower(k) => {
                let r = g.abs_xi();
                Ok(g.powf(r, *k as f64))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HigherOrderTerm {
    /// Power of `D_t`.
    pub j: usize,
    pub monomial: Monomial,
    /// Coefficient as an expression in `t`.
    pub coeff: String,
}

/// Declarative description of a system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// `D_t U = sum_j A_j(t) D_{x_j} U + B(t) U`.
    Differential {
        m: usize,
        n: usize,
        /// `n` row-major `m x m` coefficient matrices.
        a: Vec<Vec<String>>,
        #[serde(default)]
        b: Option<Vec<String>>,
        zone: ZoneParams,
        #[serde(default)]
        gamma: Option<String>,
    },
    /// Second-order equation with coefficients `a_ij (i <= j)`, `b_j`, `c`, `d_j`, `e`.
    SecondOrder {
        n: usize,
        /// Row-major `n x n`; only the upper triangle is read.
        a: Vec<String>,
        #[serde(default)]
        b: Option<Vec<String>>,
        #[serde(default)]
        c: Option<String>,
        #[serde(default)]
        d: Option<Vec<String>>,
        #[serde(default)]
        e: Option<String>,
        zone: ZoneParams,
        #[serde(default)]
        gamma: Option<String>,
    },
    /// `D_t^m u + sum a_{j,alpha}(t) D_t^j D_x^alpha u = 0`.
    HigherOrder {
        m: usize,
        n: usize,
        terms: Vec<HigherOrderTerm>,
        zone: ZoneParams,
        #[serde(default)]
        gamma: Option<String>,
    },
    /// Raw symbols given entrywise.
    Symbol {
        m: usize,
        n: usize,
        full: Vec<String>,
        principal: Vec<String>,
        zone: ZoneParams,
        #[serde(default)]
        gamma: Option<String>,
    },
}

impl SystemSpec {
    pub fn zone(&self) -> ZoneParams {
        match self {
            SystemSpec::Differential { zone, .. }
            | SystemSpec::SecondOrder { zone, .. }
            | SystemSpec::HigherOrder { zone, .. }
            | SystemSpec::Symbol { zone, .. } => *zone,
        }
    }

    pub fn set_zone(&mut self, zp: ZoneParams) {
        match self {
            SystemSpec::Differential { zone, .. }
            | SystemSpec::SecondOrder { zone, .. }
            | SystemSpec::HigherOrder { zone, .. }
            | SystemSpec::Symbol { zone, .. } => *zone = zp,
        }
    }

    pub fn hash(&self) -> String {
        let s = serde_json::to_string(self).expect("serialisable");
        hex::encode(Sha256::digest(s.as_bytes()))
    }
}

/// A first-order system `D_t U = A(t, D_x) U` with its principal part.
#[derive(Clone)]
pub struct System {
    pub name: String,
    pub spec: SystemSpec,
    pub full: Arc<ExprSymbol>,
    pub principal: Arc<ExprSymbol>,
    pub zone: ZoneParams,
    /// Weight in the lower-order positivity condition.
    pub gamma: Option<Arc<ExprSymbol>>,
    pub hash: String,
}

impl std::fmt::Debug for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "System({}, m={}, n={})", self.name, self.dim(), self.space_dim())
    }
}

impl System {
    pub fn dim(&self) -> usize {
        self.full.dim()
    }

    pub fn space_dim(&self) -> usize {
        self.full.space_dim()
    }

    pub fn from_spec(name: &str, spec: SystemSpec) -> Result<System> {
        let zone = spec.zone();
        ZoneParams::new(zone.n, zone.nu)?;
        let (full, principal, gamma) = match &spec {
            SystemSpec::Differential { m, n, a, b, gamma, .. } => build_differential(*m, *n, a, b.as_deref(), gamma)?,
            SystemSpec::SecondOrder { n, a, b, c, d, e, gamma, .. } => {
                build_second_order(*n, a, b.as_deref(), c.as_deref(), d.as_deref(), e.as_deref(), &zone, gamma)?
            }
            SystemSpec::HigherOrder { m, n, terms, gamma, .. } => build_higher_order(*m, *n, terms, &zone, gamma)?,
            SystemSpec::Symbol { m, n, full, principal, gamma, .. } => {
                let fr: Vec<&str> = full.iter().map(|s| s.as_str()).collect();
                let pr: Vec<&str> = principal.iter().map(|s| s.as_str()).collect();
                (
                    ExprSymbol::parse(*m, *n, &fr, DEFAULT_BUDGET)?,
                    ExprSymbol::parse(*m, *n, &pr, DEFAULT_BUDGET)?.with_homogeneity(1.0),
                    gamma_symbol(gamma, *n)?,
                )
            }
        };
        let hash = spec.hash();
        Ok(System {
            name: name.to_string(),
            spec,
            full: Arc::new(full),
            principal: Arc::new(principal),
            zone,
            gamma: gamma.map(Arc::new),
            hash,
        })
    }

    pub fn gamma_at(&self, t: f64) -> f64 {
        match &self.gamma {
            Some(g) => g.eval(t, &vec![0.0; self.space_dim()])[(0, 0)].re,
            None => 0.0,
        }
    }
}

fn gamma_symbol(src: &Option<String>, n: usize) -> Result<Option<ExprSymbol>> {
    match src {
        None => Ok(None),
        Some(s) => Ok(Some(ExprSymbol::parse(1, n, &[s.as_str()], Budget { xi: 0, t: 2 })?)),
    }
}

fn build_differential(
    m: usize,
    n: usize,
    a: &[Vec<String>],
    b: Option<&[String]>,
    gamma: &Option<String>,
) -> Result<(ExprSymbol, ExprSymbol, Option<ExprSymbol>)> {
    if a.len() != n || a.iter().any(|r| r.len() != m * m) {
        return Err(Error::Config(format!("differential system needs {n} matrices of {} entries", m * m)));
    }
    let mut g = Graph::new();
    let mut coeff = Vec::new();
    for mat in a {
        coeff.push(mat.iter().map(|s| g.parse(s, n)).collect::<Result<Vec<_>>>()?);
    }
    let mut principal = Vec::with_capacity(m * m);
    for idx in 0..m * m {
        let mut acc = g.real(0.0);
        for (j, mat) in coeff.iter().enumerate() {
            let x = g.xi(j);
            let p = g.mul(mat[idx], x);
            acc = g.add(acc, p);
        }
        principal.push(acc);
    }
    let mut full = principal.clone();
    if let Some(b) = b {
        if b.len() != m * m {
            return Err(Error::Config("lower-order matrix has wrong size".into()));
        }
        for (idx, s) in b.iter().enumerate() {
            let v = g.parse(s, n)?;
            full[idx] = g.add(full[idx], v);
        }
    }
    let gp = g.clone();
    Ok((
        ExprSymbol::from_graph(m, n, g, full, DEFAULT_BUDGET),
        ExprSymbol::from_graph(m, n, gp, principal, DEFAULT_BUDGET).with_homogeneity(1.0),
        gamma_symbol(gamma, n)?,
    ))
}

/// Smooth bridge `h(t, xi)`: equal to `|xi|` on the hyperbolic zone and to
/// `N (log(e+t))^nu / (1+t)` where `|xi|(1+t) <= N (log(e+t))^nu / 2`.
pub fn bridge(g: &mut Graph, zone: &ZoneParams) -> Id {
    let src = format!("{} * log(e+t)^{} / (1+t)", zone.n, zone.nu);
    let w = g.parse(&src, 0).expect("bridge weight");
    let r = g.abs_xi();
    let s = g.div(r, w);
    let two = g.real(2.0);
    let one = g.real(1.0);
    let s2 = g.mul(two, s);
    let arg = g.sub(s2, one);
    let beta = g.smoothstep(arg);
    let sm1 = g.sub(s, one);
    let bs = g.mul(beta, sm1);
    let f = g.add(one, bs);
    g.mul(w, f)
}

#[allow(clippy::too_many_arguments)]
fn build_second_order(
    n: usize,
    a: &[String],
    b: Option<&[String]>,
    c: Option<&str>,
    d: Option<&[String]>,
    e: Option<&str>,
    zone: &ZoneParams,
    gamma: &Option<String>,
) -> Result<(ExprSymbol, ExprSymbol, Option<ExprSymbol>)> {
    if a.len() != n * n {
        return Err(Error::Config(format!("second-order principal part needs {} entries", n * n)));
    }
    let mut terms = Vec::new();
    // D_t^2 u = sum b_j xi_j D_t u + c D_t u + sum a_ij xi_i xi_j u + sum d_j xi_j u + e u
    for i in 0..n {
        for j in i..n {
            let mut alpha = vec![0; n];
            alpha[i] += 1;
            alpha[j] += 1;
            terms.push(HigherOrderTerm { j: 0, monomial: Monomial::Alpha(alpha), coeff: format!("-({})", a[i * n + j]) });
        }
    }
    if let Some(b) = b {
        if b.len() != n {
            return Err(Error::Config("b needs n entries".into()));
        }
        for (j, s) in b.iter().enumerate() {
            let mut alpha = vec![0; n];
            alpha[j] = 1;
            terms.push(HigherOrderTerm { j: 1, monomial: Monomial::Alpha(alpha), coeff: format!("-({s})") });
        }
    }
    if let Some(c) = c {
        terms.push(HigherOrderTerm { j: 1, monomial: Monomial::Alpha(vec![0; n]), coeff: format!("-({c})") });
    }
    if let Some(d) = d {
        if d.len() != n {
            return Err(Error::Config("d needs n entries".into()));
        }
        for (j, s) in d.iter().enumerate() {
            let mut alpha = vec![0; n];
            alpha[j] = 1;
            terms.push(HigherOrderTerm { j: 0, monomial: Monomial::Alpha(alpha), coeff: format!("-({s})") });
        }
    }
    if let Some(e) = e {
        terms.push(HigherOrderTerm { j: 0, monomial: Monomial::Alpha(vec![0; n]), coeff: format!("-({e})") });
    }
    build_higher_order(2, n, &terms, zone, gamma)
}

/// Companion reduction with `U_k = h^{m-1-k} D_t^k u`.
fn build_higher_order(
    m: usize,
    n: usize,
    terms: &[HigherOrderTerm],
    zone: &ZoneParams,
    gamma: &Option<String>,
) -> Result<(ExprSymbol, ExprSymbol, Option<ExprSymbol>)> {
    if m < 2 {
        return Err(Error::Config("order must be at least 2".into()));
    }
    let mut g = Graph::new();
    let zero = g.real(0.0);
    // p_j(t, xi): full and principal parts.
    let mut p_full = vec![zero; m];
    let mut p_prin = vec![zero; m];
    for term in terms {
        if term.j >= m {
            return Err(Error::Config(format!("term with D_t power {} >= order {m}", term.j)));
        }
        let deg = term.monomial.degree();
        if term.j + deg > m {
            return Err(Error::Config(format!("term of total order {} exceeds {m}", term.j + deg)));
        }
        let cf = g.parse(&term.coeff, n)?;
        if g.depends_on_xi(cf) {
            return Err(Error::Config("coefficients must depend on t only".into()));
        }
        let mono = term.monomial.build(&mut g, n)?;
        let v = g.mul(cf, mono);
        p_full[term.j] = g.add(p_full[term.j], v);
        if term.j + deg == m {
            p_prin[term.j] = g.add(p_prin[term.j], v);
        }
    }
    let h = bridge(&mut g, zone);
    let dh = g.diff(h, Var::T);
    let mi = g.constant(C64::new(0.0, -1.0));
    let ratio = g.div(dh, h);
    let dlogh = g.mul(mi, ratio);
    let r = g.abs_xi();
    let mut full = vec![zero; m * m];
    let mut prin = vec![zero; m * m];
    for k in 0..m - 1 {
        let coef = g.real((m - 1 - k) as f64);
        full[k * m + k] = g.mul(coef, dlogh);
        full[k * m + k + 1] = h;
        prin[k * m + k + 1] = r;
    }
    for j in 0..m {
        let e = (m - 1 - j) as f64;
        let hp = g.powf(h, e);
        let rp = g.powf(r, e);
        let nf = g.neg(p_full[j]);
        let np = g.neg(p_prin[j]);
        let fj = g.div(nf, hp);
        let pj = g.div(np, rp);
        full[(m - 1) * m + j] = g.add(full[(m - 1) * m + j], fj);
        prin[(m - 1) * m + j] = g.add(prin[(m - 1) * m + j], pj);
    }
    let gp = g.clone();
    Ok((
        ExprSymbol::from_graph(m, n, g, full, DEFAULT_BUDGET),
        ExprSymbol::from_graph(m, n, gp, prin, DEFAULT_BUDGET).with_homogeneity(1.0),
        gamma_symbol(gamma, n)?,
    ))
}

fn s(x: &str) -> String {
    x.to_string()
}

/// Names of the bundled families.
pub const FAMILIES: [&str; 9] = [
    "wave_const",
    "wave_slow_osc",
    "wave_fast_osc",
    "wave_damped",
    "sym_const",
    "sym_damped",
    "dirac_slow",
    "drift_control",
    "ho3_log",
];

/// Declarative description of a bundled family in `n` space dimensions.
pub fn family_spec(name: &str, n: usize) -> Result<SystemSpec> {
    let zone1 = ZoneParams { n: 1.0, nu: 0.0 };
    let iso = |a2: &str| -> Vec<String> {
        let mut v = vec![s("0"); n * n];
        for i in 0..n {
            v[i * n + i] = s(a2);
        }
        v
    };
    let sym_mats = |a: &str, b: &str| -> Result<Vec<Vec<String>>> {
        if n != 2 {
            return Err(Error::Config(format!("family `{name}` is two-dimensional")));
        }
        Ok(vec![vec![s(a), s("0"), s("0"), format!("-({a})")], vec![s("0"), s(b), s(b), s("0")]])
    };
    Ok(match name {
        "wave_const" => SystemSpec::SecondOrder {
            n,
            a: iso("4"),
            b: None,
            c: None,
            d: None,
            e: None,
            zone: zone1,
            gamma: None,
        },
        "wave_slow_osc" => SystemSpec::SecondOrder {
            n,
            a: iso("(2+cos(log(e+t)))^2"),
            b: None,
            c: None,
            d: None,
            e: None,
            zone: zone1,
            gamma: None,
        },
        "wave_fast_osc" => SystemSpec::SecondOrder {
            n,
            a: iso("(2+cos(log(e+t)^2))^2"),
            b: None,
            c: None,
            d: None,
            e: None,
            zone: ZoneParams { n: 1.0, nu: 1.0 },
            gamma: None,
        },
        "wave_damped" => SystemSpec::SecondOrder {
            n,
            a: iso("(2+cos(log(e+t)))^2"),
            b: None,
            c: Some(s("i/(1+t)^2")),
            d: None,
            e: None,
            zone: zone1,
            gamma: None,
        },
        "sym_const" => SystemSpec::Differential { m: 2, n, a: sym_mats("1", "1")?, b: None, zone: zone1, gamma: None },
        "sym_damped" => SystemSpec::Differential {
            m: 2,
            n,
            a: sym_mats("1", "1")?,
            b: Some(vec![s("i/(1+t)^2"), s("0"), s("0"), s("2*i/(1+t)^2")]),
            zone: zone1,
            gamma: None,
        },
        "dirac_slow" => SystemSpec::Differential {
            m: 2,
            n,
            a: sym_mats("2+cos(log(e+t))", "1+sin(log(e+t))/2")?,
            b: None,
            zone: zone1,
            gamma: None,
        },
        "drift_control" => SystemSpec::Differential {
            m: 2,
            n,
            a: sym_mats("1", "1")?,
            b: Some(vec![s("i/sqrt(1+t)"), s("0"), s("0"), s("i/sqrt(1+t)")]),
            zone: zone1,
            gamma: None,
        },
        "ho3_log" => {
            let c1 = "(1+cos(log(e+t))/4)";
            let c2 = "(2+cos(log(e+t))/4)";
            let c3 = "(3+cos(log(e+t))/4)";
            let e1 = format!("({c1}+{c2}+{c3})");
            let e2 = format!("({c1}*{c2}+{c1}*{c3}+{c2}*{c3})");
            let e3 = format!("({c1}*{c2}*{c3})");
            SystemSpec::HigherOrder {
                m: 3,
                n,
                terms: vec![
                    HigherOrderTerm { j: 2, monomial: Monomial::AbsPower(1), coeff: format!("-{e1}") },
                    HigherOrderTerm { j: 1, monomial: Monomial::AbsPower(2), coeff: e2 },
                    HigherOrderTerm { j: 0, monomial: Monomial::AbsPower(3), coeff: format!("-{e3}") },
                ],
                zone: zone1,
                gamma: None,
            }
        }
        _ => return Err(Error::Config(format!("unknown family `{name}`"))),
    })
}

pub fn family(name: &str, n: usize) -> Result<System> {
    System::from_spec(name, family_spec(name, n)?)
}

/// Constants of the `T_nu{rho}` estimate `|d_t^k f| <= C_k ((log(e+t))^nu/(1+t))^{rho+k}`
/// for a coefficient expression in `t`.
pub fn check_t_class(coeff: &str, rho: f64, nu: f64, times: &[f64], max_k: usize) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let id = g.parse(coeff, 0)?;
    let p = crate::expr::Program::compile(&g, &[id]);
    let f = move |t: f64, k: usize| -> Jet { p.eval_t_jet(t, &[], k).remove(0) };
    Ok(t_class_constants(&f, rho, nu, times, max_k))
}

/// `sup_t max_j |sum_{k != j} int_0^t d_t l_j / (l_j - l_k)|` at a unit frequency
/// for systems with `l_j = c_j(t) |xi|`, together with its values at growing horizons.
pub fn root_separation_integral(sys: &System, omega: &[f64], horizons: &[f64]) -> Result<Vec<f64>> {
    let opts = crate::spectral::SpectralOptions::default();
    let m = sys.dim();
    let integrand = |t: f64| -> Vec<C64> {
        let aj = sys.principal.t_jet(t, omega, 1, &vec![0; omega.len()]).expect("jet");
        let sj = crate::spectral::decompose_jet(&aj, &opts, None).expect("spectral");
        (0..m)
            .map(|j| {
                let mut acc = 0.0;
                for k in 0..m {
                    if k != j {
                        acc += sj.roots[j].c[1].re / (sj.roots[j].c[0].re - sj.roots[k].c[0].re);
                    }
                }
                C64::new(acc, 0.0)
            })
            .collect()
    };
    let mut out = Vec::new();
    let mut acc = vec![C64::new(0.0, 0.0); m];
    let mut sup = 0.0f64;
    let mut t0 = 0.0;
    let mut grid = vec![0.0];
    grid.extend(crate::fit::logspace(1e-2, *horizons.last().unwrap_or(&1.0), 400));
    let mut hi = 0;
    for &t in &grid[1..] {
        let (v, _) = quad::integrate_vec(integrand, t0, t, &[], 1e-12, 1e-10, 200);
        for j in 0..m {
            acc[j] += v[j];
            sup = sup.max(acc[j].norm());
        }
        t0 = t;
        while hi < horizons.len() && t >= horizons[hi] * (1.0 - 1e-12) {
            out.push(sup);
            hi += 1;
        }
    }
    while out.len() < horizons.len() {
        out.push(sup);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm_max;
    use crate::spectral::{real_roots, SpectralOptions};
    use crate::symbol::zone_boundary;

    #[test]
    fn families_build() {
        for name in FAMILIES {
            let sys = family(name, 2).unwrap();
            let a = sys.full.eval(3.0, &[0.3, -0.4]);
            assert!(a.iter().all(|z| z.re.is_finite() && z.im.is_finite()), "{name}");
        }
        assert!(family("nope", 2).is_err());
    }

    #[test]
    fn second_order_roots() {
        let sys = family("wave_slow_osc", 2).unwrap();
        let t = 5.0;
        let a = 2.0 + (std::f64::consts::E + t).ln().cos();
        let xi = [0.6, -0.8];
        let r = real_roots(&sys.principal.eval(t, &xi), &SpectralOptions::default()).unwrap();
        assert!((r[0] + a).abs() < 1e-12 && (r[1] - a).abs() < 1e-12);
    }

    #[test]
    fn hyperbolic_zone_has_principal_part_only() {
        let sys = family("wave_slow_osc", 2).unwrap();
        let xi = [0.05, 0.02];
        let r = (xi[0] * xi[0] + xi[1] * xi[1] as f64).sqrt();
        let tb = zone_boundary(r, &sys.zone, false).unwrap();
        for t in [tb + 0.01, tb * 2.0, tb * 10.0] {
            let d = sys.full.eval(t, &xi) - sys.principal.eval(t, &xi);
            assert!(norm_max(&d) < 1e-13, "t={t}");
        }
        let a = sys.full.eval(0.4 * tb, &xi);
        assert!((a[(0, 1)].re - sys.zone.n / (1.0 + 0.4 * tb)).abs() < 1e-12);
    }

    #[test]
    fn higher_order_companion_roots() {
        let sys = family("ho3_log", 2).unwrap();
        let t = 7.0;
        let cs = (std::f64::consts::E + t).ln().cos() / 4.0;
        let r = real_roots(&sys.principal.eval(t, &[0.0, 2.0]), &SpectralOptions::default()).unwrap();
        for (j, x) in r.iter().enumerate() {
            assert!((x - 2.0 * (j as f64 + 1.0 + cs)).abs() < 1e-10);
        }
    }

    #[test]
    fn t_class_verdicts() {
        let times = crate::fit::logspace(1e-2, 1e4, 400);
        let ok = check_t_class("2+cos(log(e+t))", 0.0, 0.0, &times, 3).unwrap();
        assert!(ok.iter().all(|c| *c < 10.0));
        let bad = check_t_class("2+cos(t)", 0.0, 0.0, &times, 2).unwrap();
        assert!(bad[1] > 1e3);
    }

    #[test]
    fn root_separation_bounded() {
        let sys = family("ho3_log", 2).unwrap();
        let v = root_separation_integral(&sys, &[1.0, 0.0], &[1e2, 1e3, 1e4]).unwrap();
        assert!(v[2] < 2.0 && v[2] < 1.5 * v[1] + 1e-9, "{v:?}");
    }
}
