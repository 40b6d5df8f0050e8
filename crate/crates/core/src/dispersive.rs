//! Cauchy problem on a periodic grid by per-mode multiplication with
//! `E(t, 0, xi)`, `L^q` norm tracking and decay-exponent fits.

use crate::cache::{self, CacheStatus, PropagatorTable, TableKey};
use crate::diagonalizer::Hierarchy;
use crate::error::{Error, Result};
use crate::fit::line_fit;
use crate::fresnel::ConvexityReport;
use crate::linalg::{eigenvalues, CMat, C64};
use crate::propagator::{factorized, solve_direct_many, PropOptions};
use crate::spectral::{compute_f0, SpectralOptions};
use crate::symbol::{chi_reg, ell, Budget, Symbol};
use crate::systems::System;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

/// Norms below this value are treated as underflow and left out of fits.
pub const NORM_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    /// Points per axis, a power of two.
    pub points: usize,
    /// The torus is `[-L, L)^n`.
    pub half_width: f64,
    pub times: Vec<f64>,
    /// Conjugate pairs `(p, q)`.
    pub pairs: Vec<(f64, f64)>,
    /// Radius of a ball around the origin holding the data.
    pub support_radius: f64,
}

pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.n) {
            return Err(Error::Grid(format!("dimension {} not in 1..=3", self.n)));
        }
        if self.points < 4 || !self.points.is_power_of_two() {
            return Err(Error::Grid(format!("{} points per axis is not a power of two >= 4", self.points)));
        }
        if !(self.half_width > 0.0) || !self.half_width.is_finite() {
            return Err(Error::Grid(format!("half-width {}", self.half_width)));
        }
        if self.times.is_empty() || self.times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::Grid("times must be finite and nonnegative".into()));
        }
        if self.times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Grid("times must be nondecreasing".into()));
        }
        for &(p, q) in &self.pairs {
            if !(p > 1.0 && p <= 2.0) {
                return Err(Error::Grid(format!("p = {p} outside (1, 2]")));
            }
            if (1.0 / p + 1.0 / q - 1.0).abs() > 1e-12 {
                return Err(Error::Grid(format!("(p, q) = ({p}, {q}) not conjugate")));
            }
        }
        if !(self.support_radius >= 0.0) {
            return Err(Error::Grid(format!("support radius {}", self.support_radius)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    /// Spacing of the dual lattice.
    pub fn dk(&self) -> f64 {
        std::f64::consts::PI / self.half_width
    }

    pub fn total(&self) -> usize {
        self.points.pow(self.n as u32)
    }

    pub fn t_max(&self) -> f64 {
        self.times.iter().cloned().fold(0.0, f64::max)
    }

    /// Sobolev order `n (1/p - 1/q)`.
    pub fn r_p(&self, p: f64, q: f64) -> f64 {
        self.n as f64 * (1.0 / p - 1.0 / q)
    }

    fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.n];
        for a in (0..self.n).rev() {
            out[a] = idx % self.points;
            idx /= self.points;
        }
        out
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        let dx = self.dx();
        self.multi_index(idx).iter().map(|&i| -self.half_width + i as f64 * dx).collect()
    }

    /// Signed integer wavenumbers of the FFT mode `idx`.
    pub fn wavenumbers(&self, idx: usize) -> Vec<i64> {
        let p = self.points as i64;
        self.multi_index(idx)
            .iter()
            .map(|&i| {
                let i = i as i64;
                if i < p / 2 {
                    i
                } else {
                    i - p
                }
            })
            .collect()
    }

    pub fn frequency(&self, idx: usize) -> Vec<f64> {
        let dk = self.dk();
        self.wavenumbers(idx).iter().map(|&k| k as f64 * dk).collect()
    }

    /// Wraparound guard `L >= 2 (speed T + R_0)`.
    pub fn check_guard(&self, speed: f64) -> Result<()> {
        let need = 2.0 * (speed * self.t_max() + self.support_radius);
        if self.half_width < need {
            return Err(Error::Grid(format!(
                "half-width {} below the wraparound guard {need} (speed {speed}, T {}, R0 {})",
                self.half_width,
                self.t_max(),
                self.support_radius
            )));
        }
        Ok(())
    }

    /// Exponents at which norms are tracked: `2` and every `p`, `q`.
    pub fn tracked_exponents(&self) -> Vec<f64> {
        let mut qs = vec![2.0];
        for &(p, q) in &self.pairs {
            qs.push(p);
            qs.push(q);
        }
        qs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        qs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        qs
    }
}

/// Vector field on the grid, stored component by component in row-major
/// order (axis 0 slowest).
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub n: usize,
    pub points: usize,
    pub m: usize,
    pub data: Vec<C64>,
}

impl GridField {
    pub fn zeros(grid: &GridConfig, m: usize) -> Self {
        GridField { n: grid.n, points: grid.points, m, data: vec![C64::new(0.0, 0.0); m * grid.total()] }
    }

    pub fn from_fn(grid: &GridConfig, m: usize, f: impl Fn(&[f64]) -> Vec<C64>) -> Self {
        let mut out = GridField::zeros(grid, m);
        let total = grid.total();
        for idx in 0..total {
            let v = f(&grid.coords(idx));
            for c in 0..m {
                out.data[c * total + idx] = v[c];
            }
        }
        out
    }

    pub fn size(&self) -> usize {
        self.points.pow(self.n as u32)
    }

    pub fn component(&self, c: usize) -> &[C64] {
        let s = self.size();
        &self.data[c * s..(c + 1) * s]
    }

    /// Euclidean length of the vector at every grid point.
    pub fn pointwise_norms(&self) -> Vec<f64> {
        let s = self.size();
        (0..s)
            .map(|i| (0..self.m).map(|c| self.data[c * s + i].norm_sqr()).sum::<f64>().sqrt())
            .collect()
    }

    fn check_grid(&self, grid: &GridConfig) -> Result<()> {
        if self.n != grid.n || self.points != grid.points || self.data.len() != self.m * grid.total() {
            return Err(Error::Grid("field does not match the grid".into()));
        }
        Ok(())
    }
}

/// Radius beyond which `exp(-|x|^2 / (2 sigma^2))` is below `1e-16`.
pub fn gaussian_support_radius(sigma: f64) -> f64 {
    sigma * (2.0 * 1e16f64.ln()).sqrt()
}

/// Frequency radius beyond which the Gaussian's transform is below `1e-16`
/// of its peak.
pub fn gaussian_frequency_radius(sigma: f64) -> f64 {
    (2.0 * 1e16f64.ln()).sqrt() / sigma
}

/// `exp(-|x|^2 / (2 sigma^2)) v`.
pub fn gaussian_data(grid: &GridConfig, sigma: f64, v: &[C64]) -> GridField {
    GridField::from_fn(grid, v.len(), |x| {
        let r2: f64 = x.iter().map(|a| a * a).sum();
        let g = (-r2 / (2.0 * sigma * sigma)).exp();
        v.iter().map(|z| z * g).collect()
    })
}

/// `(sum_j |U_j|^q dx^n)^(1/q)`, scaled to avoid overflow and underflow.
pub fn lq_norm(field: &GridField, grid: &GridConfig, q: f64) -> f64 {
    let v = field.pointwise_norms();
    let top = v.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0.0;
    }
    let s: f64 = v.iter().map(|x| (x / top).powf(q)).sum();
    top * (s * grid.dx().powi(grid.n as i32)).powf(1.0 / q)
}

pub fn sup_norm(field: &GridField) -> f64 {
    field.pointwise_norms().into_iter().fold(0.0, f64::max)
}

/// n-dimensional FFT with plans built once.
pub struct GridFft {
    n: usize,
    points: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl GridFft {
    pub fn new(n: usize, points: usize) -> Self {
        let mut planner = FftPlanner::new();
        GridFft { n, points, fwd: planner.plan_fft_forward(points), inv: planner.plan_fft_inverse(points) }
    }

    pub fn forward(&self, buf: &mut [C64]) {
        self.run(buf, &self.fwd);
    }

    /// Normalised inverse.
    pub fn inverse(&self, buf: &mut [C64]) {
        self.run(buf, &self.inv);
        let s = 1.0 / buf.len() as f64;
        for z in buf.iter_mut() {
            *z *= s;
        }
    }

    fn run(&self, buf: &mut [C64], fft: &Arc<dyn Fft<f64>>) {
        let p = self.points;
        let total = buf.len();
        debug_assert_eq!(total, p.pow(self.n as u32));
        fft.process(buf);
        for axis in 0..self.n - 1 {
            let stride = p.pow((self.n - 1 - axis) as u32);
            let block = stride * p;
            let mut tmp = vec![C64::new(0.0, 0.0); block];
            for start in (0..total).step_by(block) {
                for i in 0..p {
                    for j in 0..stride {
                        tmp[j * p + i] = buf[start + i * stride + j];
                    }
                }
                fft.process(&mut tmp);
                for i in 0..p {
                    for j in 0..stride {
                        buf[start + i * stride + j] = tmp[j * p + i];
                    }
                }
            }
        }
    }

    pub fn forward_field(&self, field: &GridField) -> Vec<Vec<C64>> {
        (0..field.m)
            .map(|c| {
                let mut b = field.component(c).to_vec();
                self.forward(&mut b);
                b
            })
            .collect()
    }
}

/// How `E(t, 0, xi)` is obtained for each mode.
#[derive(Clone)]
pub enum Backend {
    Direct,
    Factorized(Arc<Hierarchy>),
}

impl Backend {
    pub fn label(&self) -> String {
        match self {
            Backend::Direct => "direct".into(),
            Backend::Factorized(h) => format!("factorized-k{}-N{}", h.k, h.n_eff),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeFilter {
    None,
    /// Multiply by `1 - chi_reg(t, xi)` at each time.
    LowFrequency,
}

impl ModeFilter {
    fn weight(&self, t: f64, r: f64, sys: &System) -> f64 {
        match self {
            ModeFilter::None => 1.0,
            ModeFilter::LowFrequency => 1.0 - chi_reg(t, r, &sys.zone),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub prop: PropOptions,
    /// Modes with `|xi|` above this radius are dropped. Without it the radius
    /// is read off the data spectrum with `skip_rel`.
    pub k_cut: Option<f64>,
    pub skip_rel: f64,
    pub cache_dir: Option<PathBuf>,
    pub filter: ModeFilter,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { prop: PropOptions::default(), k_cut: None, skip_rel: 1e-13, cache_dir: None, filter: ModeFilter::None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveStats {
    pub modes: usize,
    /// Distinct frequencies at which `E` was computed.
    pub table_columns: usize,
    pub dropped_modes: usize,
    /// Largest dropped data coefficient relative to the largest one.
    pub dropped_rel: f64,
    pub radial: bool,
    pub max_speed: f64,
    pub k_cut: f64,
    pub cache: CacheStatus,
    pub table_checksum: String,
}

/// Whether `A(t, xi)` depends on `xi` only through `|xi|`, by random probes.
pub fn is_radial(sys: &System) -> bool {
    let n = sys.space_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..24 {
        let t = rng.gen_range(0.0..50.0);
        let r = 10f64.powf(rng.gen_range(-2.0..0.7));
        let mut xi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let len = xi.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-3);
        xi.iter_mut().for_each(|x| *x *= r / len);
        let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut axis = vec![0.0; n];
        axis[0] = r;
        let a = sys.full.eval_flat(t, &xi);
        let b = sys.full.eval_flat(t, &axis);
        let scale = 1.0 + a.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if a.iter().zip(&b).any(|(x, y)| (x - y).norm() > 1e-12 * scale) {
            return false;
        }
    }
    true
}

fn unit_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let a = golden * i as f64;
                    vec![rho * a.cos(), rho * a.sin(), z]
                })
                .collect()
        }
    }
}

/// Largest `|root|` of `A_1(t, omega)` over `t in [0, t_max]` and unit
/// `omega`, on a sample grid.
pub fn max_speed(sys: &System, t_max: f64) -> f64 {
    let n = sys.space_dim();
    let dirs = unit_directions(n, 32);
    let mut best = 0.0f64;
    for i in 0..=200 {
        let t = t_max * i as f64 / 200.0;
        for d in &dirs {
            let a1 = sys.principal.eval(t, d);
            for z in eigenvalues(&a1) {
                best = best.max(z.norm());
            }
        }
    }
    best
}

const SKIP: u32 = u32::MAX;

struct ModePlan {
    cols: Vec<u32>,
    xis: Vec<Vec<f64>>,
    dropped: usize,
    dropped_rel: f64,
    k_cut: f64,
}

fn plan_modes(sys: &System, grid: &GridConfig, spec_norm: &[f64], radial: bool, opts: &SolveOptions) -> ModePlan {
    let total = grid.total();
    let dk = grid.dk();
    let top = spec_norm.iter().cloned().fold(0.0, f64::max);
    let radius = |idx: usize| -> (f64, u64) {
        let key: u64 = grid.wavenumbers(idx).iter().map(|k| (k * k) as u64).sum();
        ((key as f64).sqrt() * dk, key)
    };
    let k_cut = opts.k_cut.unwrap_or_else(|| {
        (0..total)
            .filter(|&i| spec_norm[i] > opts.skip_rel * top)
            .map(|i| radius(i).0)
            .fold(0.0, f64::max)
    });
    let positive_times: Vec<f64> = grid.times.iter().cloned().filter(|t| *t > 0.0).collect();
    let mut keep = vec![false; total];
    let mut dropped = 0;
    let mut dropped_rel = 0.0f64;
    for (idx, k) in keep.iter_mut().enumerate() {
        let (r, _) = radius(idx);
        if r > k_cut * (1.0 + 1e-12) {
            dropped += 1;
            if top > 0.0 {
                dropped_rel = dropped_rel.max(spec_norm[idx] / top);
            }
            continue;
        }
        *k = opts.filter == ModeFilter::None || positive_times.iter().any(|&t| opts.filter.weight(t, r, sys) > 0.0);
    }
    let mut cols = vec![SKIP; total];
    let mut xis = Vec::new();
    if radial {
        let keys: BTreeSet<u64> = (0..total).filter(|&i| keep[i]).map(|i| radius(i).1).collect();
        let mut col_of = HashMap::new();
        for (c, key) in keys.iter().enumerate() {
            col_of.insert(*key, c as u32);
            let mut xi = vec![0.0; grid.n];
            xi[0] = (*key as f64).sqrt() * dk;
            xis.push(xi);
        }
        for idx in 0..total {
            if keep[idx] {
                cols[idx] = col_of[&radius(idx).1];
            }
        }
    } else {
        for idx in 0..total {
            if keep[idx] {
                cols[idx] = xis.len() as u32;
                xis.push(grid.frequency(idx));
            }
        }
    }
    ModePlan { cols, xis, dropped, dropped_rel, k_cut }
}

/// `E(t_i, 0, xi_j)` for every listed time and frequency.
pub fn build_table(
    sys: &System,
    backend: &Backend,
    times: &[f64],
    xis: &[Vec<f64>],
    prop: &PropOptions,
) -> Result<PropagatorTable> {
    let m = sys.dim();
    let columns: Vec<Result<Vec<CMat>>> = xis
        .par_iter()
        .map(|xi| {
            let zero = xi.iter().all(|x| *x == 0.0);
            match backend {
                Backend::Factorized(h) if !zero => times
                    .iter()
                    .map(|&t| {
                        if t == 0.0 {
                            Ok(CMat::identity(m, m))
                        } else {
                            Ok(factorized(h, t, 0.0, xi, prop)?.e)
                        }
                    })
                    .collect(),
                _ => solve_direct_many(sys, 0.0, times, xi, prop),
            }
        })
        .collect();
    let mut table = PropagatorTable::zeros(m, times.to_vec(), xis.to_vec());
    for (j, col) in columns.into_iter().enumerate() {
        for (i, e) in col?.iter().enumerate() {
            table.set(i, j, e);
        }
    }
    Ok(table)
}

/// Solves `D_t U = A(t, D_x) U`, `U(0) = data` on the torus and hands each
/// snapshot to `visit` in time order.
pub fn grid_solve_with<F>(
    sys: &System,
    backend: &Backend,
    data: &GridField,
    grid: &GridConfig,
    opts: &SolveOptions,
    mut visit: F,
) -> Result<SolveStats>
where
    F: FnMut(usize, f64, &GridField) -> Result<()>,
{
    grid.validate()?;
    data.check_grid(grid)?;
    if data.m != sys.dim() || grid.n != sys.space_dim() {
        return Err(Error::Grid(format!(
            "data has {} components in {} dimensions, system is {}x{} in {}",
            data.m,
            grid.n,
            sys.dim(),
            sys.dim(),
            sys.space_dim()
        )));
    }
    let speed = max_speed(sys, grid.t_max());
    grid.check_guard(speed)?;
    let total = grid.total();
    let m = data.m;
    let fft = GridFft::new(grid.n, grid.points);
    let spec = fft.forward_field(data);
    let spec_norm: Vec<f64> =
        (0..total).map(|i| spec.iter().map(|s| s[i].norm_sqr()).sum::<f64>().sqrt()).collect();
    let radial = is_radial(sys);
    let plan = plan_modes(sys, grid, &spec_norm, radial, opts);
    let key = TableKey {
        system_hash: sys.hash.clone(),
        zone: sys.zone,
        m,
        backend: backend.label(),
        times: grid.times.clone(),
        xis: plan.xis.clone(),
        tolerances: opts.prop,
    };
    let (table, status) = cache::load_or_compute(opts.cache_dir.as_deref(), &key, || {
        build_table(sys, backend, &grid.times, &plan.xis, &opts.prop)
    })?;
    let mode_radius: Vec<f64> = (0..total)
        .map(|i| grid.frequency(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    for (ti, &t) in grid.times.iter().enumerate() {
        if t == 0.0 && opts.filter == ModeFilter::None {
            visit(ti, t, data)?;
            continue;
        }
        let mut out = GridField::zeros(grid, m);
        for (row, buf) in out.data.chunks_mut(total).enumerate() {
            buf.par_iter_mut().enumerate().for_each(|(idx, z)| {
                let col = plan.cols[idx];
                if col == SKIP {
                    return;
                }
                let w = opts.filter.weight(t, mode_radius[idx], sys);
                if w == 0.0 {
                    return;
                }
                let e = table.block(ti, col as usize);
                let mut acc = C64::new(0.0, 0.0);
                for (c, s) in spec.iter().enumerate() {
                    acc += e[row * m + c] * s[idx];
                }
                *z = acc * w;
            });
            fft.inverse(buf);
        }
        visit(ti, t, &out)?;
    }
    Ok(SolveStats {
        modes: total,
        table_columns: plan.xis.len(),
        dropped_modes: plan.dropped,
        dropped_rel: plan.dropped_rel,
        radial,
        max_speed: speed,
        k_cut: plan.k_cut,
        cache: status,
        table_checksum: table.checksum(),
    })
}

#[derive(Clone, Debug)]
pub struct Snapshots {
    pub grid: GridConfig,
    pub times: Vec<f64>,
    pub fields: Vec<GridField>,
}

pub fn grid_solve(
    sys: &System,
    backend: &Backend,
    data: &GridField,
    grid: &GridConfig,
    opts: &SolveOptions,
) -> Result<(Snapshots, SolveStats)> {
    let mut fields = Vec::with_capacity(grid.times.len());
    let stats = grid_solve_with(sys, backend, data, grid, opts, |_, _, f| {
        fields.push(f.clone());
        Ok(())
    })?;
    Ok((Snapshots { grid: grid.clone(), times: grid.times.clone(), fields }, stats))
}

/// Norm history: `norms[i][j]` is `||U(t_i)||_{q_j}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormTable {
    pub times: Vec<f64>,
    pub qs: Vec<f64>,
    pub norms: Vec<Vec<f64>>,
    pub sup: Vec<f64>,
}

impl NormTable {
    pub fn new(qs: Vec<f64>) -> Self {
        NormTable { times: Vec::new(), qs, norms: Vec::new(), sup: Vec::new() }
    }

    pub fn push(&mut self, t: f64, field: &GridField, grid: &GridConfig) {
        self.times.push(t);
        self.norms.push(self.qs.iter().map(|&q| lq_norm(field, grid, q)).collect());
        self.sup.push(sup_norm(field));
    }

    pub fn from_snapshots(snap: &Snapshots) -> Self {
        let mut t = NormTable::new(snap.grid.tracked_exponents());
        for (time, f) in snap.times.iter().zip(&snap.fields) {
            t.push(*time, f, &snap.grid);
        }
        t
    }

    pub fn column(&self, q: f64) -> Option<Vec<f64>> {
        let j = self.qs.iter().position(|x| (x - q).abs() <= 1e-12)?;
        Some(self.norms.iter().map(|r| r[j]).collect())
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("t");
        for q in &self.qs {
            let _ = write!(s, ",L{q}");
        }
        s.push_str(",Linf\n");
        for (i, t) in self.times.iter().enumerate() {
            let _ = write!(s, "{t:.17e}");
            for v in &self.norms[i] {
                let _ = write!(s, ",{v:.17e}");
            }
            let _ = writeln!(s, ",{:.17e}", self.sup[i]);
        }
        s
    }
}

/// Solves and keeps only the norm history, one snapshot in memory at a time.
pub fn solve_norms(
    sys: &System,
    backend: &Backend,
    data: &GridField,
    grid: &GridConfig,
    opts: &SolveOptions,
) -> Result<(NormTable, SolveStats)> {
    let mut table = NormTable::new(grid.tracked_exponents());
    let stats = grid_solve_with(sys, backend, data, grid, opts, |_, t, f| {
        table.push(t, f, grid);
        Ok(())
    })?;
    Ok((table, stats))
}

/// Grid values as CSV, keeping every `stride`-th point along each axis.
pub fn field_csv(grid: &GridConfig, field: &GridField, stride: usize) -> String {
    let stride = stride.max(1);
    let mut s = String::new();
    for a in 0..grid.n {
        let _ = write!(s, "x{},", a + 1);
    }
    let cols: Vec<String> = (0..field.m).map(|c| format!("re{c},im{c}")).collect();
    let _ = writeln!(s, "{}", cols.join(","));
    let total = grid.total();
    for idx in 0..total {
        if grid.multi_index(idx).iter().any(|i| i % stride != 0) {
            continue;
        }
        for x in grid.coords(idx) {
            let _ = write!(s, "{x:.17e},");
        }
        let vals: Vec<String> = (0..field.m)
            .map(|c| {
                let z = field.data[c * total + idx];
                format!("{:.17e},{:.17e}", z.re, z.im)
            })
            .collect();
        let _ = writeln!(s, "{}", vals.join(","));
    }
    s
}

/// `||F^{-1} w(xi) F U||_p` with `w = (1+|xi|^2)^{r/2}`, or `|xi|^r` with the
/// zero mode removed when `homogeneous`.
pub fn sobolev_norm(field: &GridField, grid: &GridConfig, p: f64, r: f64, homogeneous: bool) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("Sobolev order {r}")));
    }
    field.check_grid(grid)?;
    if r == 0.0 && !homogeneous {
        return Ok(lq_norm(field, grid, p));
    }
    let fft = GridFft::new(grid.n, grid.points);
    let total = grid.total();
    let mut out = field.clone();
    for buf in out.data.chunks_mut(total) {
        fft.forward(buf);
        for (idx, z) in buf.iter_mut().enumerate() {
            let k2: f64 = grid.frequency(idx).iter().map(|x| x * x).sum();
            let w = if homogeneous {
                if k2 == 0.0 {
                    0.0
                } else {
                    k2.powf(r / 2.0)
                }
            } else {
                (1.0 + k2).powf(r / 2.0)
            };
            *z *= w;
        }
        fft.inverse(buf);
    }
    Ok(lq_norm(&out, grid, p))
}

/// Theorem rate: contact index `gamma` of convex sheets or `gamma_0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateTarget {
    Convex { gamma: f64 },
    Nonconvex { gamma0: f64 },
}

impl RateTarget {
    pub fn predicted(&self, n: usize, p: f64, q: f64) -> f64 {
        let gap = 1.0 / p - 1.0 / q;
        match *self {
            RateTarget::Convex { gamma } => -((n as f64 - 1.0) / gamma) * gap,
            RateTarget::Nonconvex { gamma0 } => -(1.0 / gamma0) * gap,
        }
    }

    pub fn index(&self) -> f64 {
        match *self {
            RateTarget::Convex { gamma } => gamma,
            RateTarget::Nonconvex { gamma0 } => gamma0,
        }
    }

    /// Largest `gamma` over the sheets if all are convex, else largest `gamma_0`.
    pub fn from_convexity(report: &ConvexityReport) -> Result<Self> {
        let pick = |f: &dyn Fn(&crate::fresnel::SheetReport) -> Option<usize>| -> Result<f64> {
            let mut best = 0usize;
            for s in &report.sheets {
                best = best.max(f(s).ok_or_else(|| Error::Geometry("contact index above gamma_max".into()))?);
            }
            if best == 0 {
                return Err(Error::Geometry("no Fresnel sheets".into()));
            }
            Ok(best as f64)
        };
        if report.surfaces_convex {
            Ok(RateTarget::Convex { gamma: pick(&|s| s.contact.gamma)? })
        } else {
            Ok(RateTarget::Nonconvex { gamma0: pick(&|s| s.contact.gamma0)? })
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayOptions {
    /// Start of the fit window.
    pub t0: f64,
    pub eps_tol: f64,
    /// Allowance when `nu = 0` and `grad_xi F_0 = 0`.
    pub eps_tight: f64,
    pub min_samples: usize,
    pub min_decades: f64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        DecayOptions { t0: 5.0, eps_tol: 0.15, eps_tight: 0.05, min_samples: 8, min_decades: 1.0 }
    }
}

/// System-dependent inputs of a decay measurement.
#[derive(Clone, Debug, Default)]
pub struct DecayContext {
    pub tight_applies: bool,
    pub budget: Option<Budget>,
    /// `||U_0||` in the `W^{p, r_p}` proxy, one per pair.
    pub data_norms: Option<Vec<f64>>,
}

impl DecayContext {
    pub fn for_system(sys: &System, data: &GridField, grid: &GridConfig) -> Result<Self> {
        let tight_applies = sys.zone.nu == 0.0 && f0_gradient_vanishes(sys)?;
        let data_norms = grid
            .pairs
            .iter()
            .map(|&(p, q)| sobolev_norm(data, grid, p, grid.r_p(p, q), false))
            .collect::<Result<Vec<_>>>()?;
        Ok(DecayContext { tight_applies, budget: Some(sys.full.budget()), data_norms: Some(data_norms) })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairDecay {
    pub p: f64,
    pub q: f64,
    pub r_p: f64,
    pub fitted: f64,
    pub fitted_halfwidth: f64,
    pub predicted: f64,
    pub eps_tol: f64,
    pub pass: bool,
    /// Verdict with the tightened allowance, when it applies.
    pub pass_tight: Option<bool>,
    pub samples: usize,
    pub excluded: usize,
    pub data_norm: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayReport {
    pub n: usize,
    pub target: RateTarget,
    pub t0: f64,
    pub pairs: Vec<PairDecay>,
    pub tight_applies: bool,
    pub outside_hypotheses: bool,
    pub all_pass: bool,
}

struct WindowFit {
    slope: f64,
    halfwidth: f64,
    samples: usize,
    excluded: usize,
}

/// Power-law fit of `values` against `shift + t` over `t >= t0`.
fn fit_window(times: &[f64], values: &[f64], shift: f64, opts: &DecayOptions) -> Result<WindowFit> {
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut excluded = 0;
    for (&t, &v) in times.iter().zip(values) {
        if t < opts.t0 || t <= 0.0 {
            continue;
        }
        if !(v >= NORM_FLOOR) || !v.is_finite() {
            excluded += 1;
            continue;
        }
        lx.push((shift + t).ln());
        ly.push(v.ln());
    }
    if lx.len() < opts.min_samples {
        return Err(Error::Fit(format!("{} usable samples past t0 = {}, need {}", lx.len(), opts.t0, opts.min_samples)));
    }
    let lo = lx.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = lx.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let decades = (hi - lo) / std::f64::consts::LN_10;
    if decades < opts.min_decades - 1e-9 {
        return Err(Error::Fit(format!("fit window spans {decades:.3} decades, need {}", opts.min_decades)));
    }
    let f = line_fit(&lx, &ly)?;
    Ok(WindowFit { slope: f.slope, halfwidth: f.slope_halfwidth, samples: lx.len(), excluded })
}

/// Fitted decay exponents of `||U(t)||_q` against the theorem rates.
pub fn decay_measurement(
    table: &NormTable,
    grid: &GridConfig,
    target: RateTarget,
    opts: &DecayOptions,
    ctx: &DecayContext,
) -> Result<DecayReport> {
    let mut pairs = Vec::new();
    for (i, &(p, q)) in grid.pairs.iter().enumerate() {
        let col = table.column(q).ok_or_else(|| Error::Fit(format!("no norms tracked for q = {q}")))?;
        let w = fit_window(&table.times, &col, 0.0, opts)?;
        let predicted = target.predicted(grid.n, p, q);
        pairs.push(PairDecay {
            p,
            q,
            r_p: grid.r_p(p, q),
            fitted: w.slope,
            fitted_halfwidth: w.halfwidth,
            predicted,
            eps_tol: opts.eps_tol,
            pass: w.slope <= predicted + opts.eps_tol,
            pass_tight: ctx.tight_applies.then_some(w.slope <= predicted + opts.eps_tight),
            samples: w.samples,
            excluded: w.excluded,
            data_norm: ctx.data_norms.as_ref().and_then(|d| d.get(i).copied()),
        });
    }
    let outside_hypotheses = match ctx.budget {
        Some(b) => {
            let lhs = ((grid.n as f64 - 1.0) / target.index()).floor();
            let rhs = (b.xi as f64 - 1.0).min(b.t as f64 / 2.0 - 2.0);
            lhs > rhs
        }
        None => false,
    };
    let all_pass = !pairs.is_empty() && pairs.iter().all(|p| p.pass);
    Ok(DecayReport {
        n: grid.n,
        target,
        t0: opts.t0,
        pairs,
        tight_applies: ctx.tight_applies,
        outside_hypotheses,
        all_pass,
    })
}

/// Whether `nabla_xi F_0` vanishes on a sample of the hyperbolic zone.
pub fn f0_gradient_vanishes(sys: &System) -> Result<bool> {
    let n = sys.space_dim();
    let zp = sys.zone;
    let opts = SpectralOptions::default();
    let zero = vec![0; n];
    let f0_diag = |t: f64, xi: &[f64]| -> Result<Vec<C64>> {
        let a = sys.full.t_jet(t, xi, 1, &zero)?;
        let a1 = sys.principal.t_jet(t, xi, 1, &zero)?;
        let f0 = compute_f0(&a, &a1, &opts)?;
        Ok((0..f0.nrows()).map(|j| f0[(j, j)]).collect())
    };
    for &t in &[1.0, 10.0, 100.0] {
        let base = (4.0 * zp.n * ell(t).powf(2.0 * zp.nu) / (1.0 + t)).max(1.0);
        for &scale in &[1.0, 3.0] {
            let r = base * scale;
            for d in unit_directions(n, 8) {
                let xi: Vec<f64> = d.iter().map(|x| x * r).collect();
                let h = 1e-4 * r;
                for axis in 0..n {
                    let mut xp = xi.clone();
                    let mut xm = xi.clone();
                    xp[axis] += h;
                    xm[axis] -= h;
                    let fp = f0_diag(t, &xp)?;
                    let fm = f0_diag(t, &xm)?;
                    for (a, b) in fp.iter().zip(&fm) {
                        if ((a - b) / (2.0 * h)).norm() * r > 1e-6 / (1.0 + t) {
                            return Ok(false);
                        }
                    }
                }
            }
        }
    }
    Ok(true)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LowFrequencyReport {
    pub n: usize,
    pub nu: f64,
    pub times: Vec<f64>,
    /// Sup norm of `F^{-1}[(1 - chi_reg) U^]` at each time; the slope is
    /// fitted against `1 + t`.
    pub sup_norms: Vec<f64>,
    pub data_l1: f64,
    pub slope: f64,
    pub slope_halfwidth: f64,
    pub samples: usize,
    /// Pass iff `slope <= -n + 0.2`; stated for `nu = 0`.
    pub threshold: f64,
    pub pass: bool,
}

/// Decay of the low-frequency piece of the solution.
pub fn low_frequency_decay(
    sys: &System,
    backend: &Backend,
    data: &GridField,
    grid: &GridConfig,
    solve: &SolveOptions,
    opts: &DecayOptions,
) -> Result<(LowFrequencyReport, SolveStats)> {
    let mut o = solve.clone();
    o.filter = ModeFilter::LowFrequency;
    let mut sup = Vec::with_capacity(grid.times.len());
    let stats = grid_solve_with(sys, backend, data, grid, &o, |_, _, f| {
        sup.push(sup_norm(f));
        Ok(())
    })?;
    let w = fit_window(&grid.times, &sup, 1.0, opts)?;
    let threshold = -(grid.n as f64) + 0.2;
    Ok((
        LowFrequencyReport {
            n: grid.n,
            nu: sys.zone.nu,
            times: grid.times.clone(),
            sup_norms: sup,
            data_l1: lq_norm(data, grid, 1.0),
            slope: w.slope,
            slope_halfwidth: w.halfwidth,
            samples: w.samples,
            threshold,
            pass: w.slope <= threshold,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::logspace;
    use crate::systems::family;

    fn grid(n: usize, points: usize, l: f64, times: Vec<f64>) -> GridConfig {
        GridConfig { n, points, half_width: l, times, pairs: vec![(4.0 / 3.0, 4.0)], support_radius: 0.0 }
    }

    #[test]
    fn fft_roundtrip() {
        for n in 1..=3 {
            let g = grid(n, 16, 3.0, vec![0.0]);
            let f = GridField::from_fn(&g, 1, |x| {
                vec![C64::new(x.iter().sum::<f64>().sin(), x.iter().map(|a| a * a).sum::<f64>().cos())]
            });
            let fft = GridFft::new(n, 16);
            let mut b = f.data.clone();
            fft.forward(&mut b);
            fft.inverse(&mut b);
            let err = b.iter().zip(&f.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "n={n}: {err}");
        }
    }

    #[test]
    fn fft_matches_plane_wave() {
        let g = grid(2, 8, std::f64::consts::PI, vec![0.0]);
        let idx = 3 * 8 + 6;
        let f = GridField::from_fn(&g, 1, |x| {
            let k = [3.0, -2.0];
            vec![C64::from_polar(1.0, k[0] * x[0] + k[1] * x[1])]
        });
        let mut b = f.data.clone();
        GridFft::new(2, 8).forward(&mut b);
        assert_eq!(g.wavenumbers(idx), vec![3, -2]);
        let peak = b.iter().enumerate().max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap()).unwrap().0;
        assert_eq!(peak, idx);
    }

    #[test]
    fn guard_and_validation() {
        let sys = family("wave_const", 1).unwrap();
        let mut g = grid(1, 64, 10.0, vec![0.0, 10.0]);
        g.support_radius = 1.0;
        let data = gaussian_data(&g, 0.5, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let e = grid_solve(&sys, &Backend::Direct, &data, &g, &SolveOptions::default());
        assert!(matches!(e, Err(Error::Grid(_))));
        let mut bad = g.clone();
        bad.points = 48;
        assert!(bad.validate().is_err());
        bad.points = 64;
        bad.pairs = vec![(1.5, 4.0)];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn time_zero_is_exact_and_l2_conserved() {
        let sys = family("sym_const", 2).unwrap();
        let g = grid(2, 32, 40.0, vec![0.0, 2.0, 5.0]);
        let data = GridField::from_fn(&g, 2, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            let w = (-r2 / 8.0).exp();
            vec![C64::new(w, 0.0), C64::new(0.3 * w * x[0], 0.1 * w)]
        });
        let (snap, stats) = grid_solve(&sys, &Backend::Direct, &data, &g, &SolveOptions::default()).unwrap();
        assert!(!stats.radial);
        assert_eq!(snap.fields[0], data);
        let l0 = lq_norm(&data, &g, 2.0);
        for f in &snap.fields[1..] {
            assert!((lq_norm(f, &g, 2.0) / l0 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sobolev_basics() {
        let g = grid(2, 64, 8.0, vec![0.0]);
        let data = gaussian_data(&g, 1.0, &[C64::new(1.0, 0.0)]);
        let l2 = sobolev_norm(&data, &g, 2.0, 0.0, false).unwrap();
        assert!((l2 - std::f64::consts::PI.sqrt()).abs() < 1e-10);
        let hom = sobolev_norm(&data, &g, 2.0, 1.0, true).unwrap();
        assert!((hom - std::f64::consts::PI.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn synthetic_fit() {
        let times = logspace(5.0, 100.0, 12);
        let mut t = NormTable::new(vec![4.0 / 3.0, 2.0, 4.0]);
        for &s in &times {
            t.times.push(s);
            t.norms.push(vec![1.0, 1.0, 3.0 * s.powf(-0.5)]);
            t.sup.push(1.0);
        }
        let g = grid(2, 8, 1.0, times);
        let rep = decay_measurement(&t, &g, RateTarget::Convex { gamma: 2.0 }, &DecayOptions::default(), &DecayContext::default())
            .unwrap();
        assert!((rep.pairs[0].fitted + 0.5).abs() < 1e-6);
        assert!((rep.pairs[0].predicted + 0.25).abs() < 1e-15);
        assert!(rep.all_pass);
        let short = grid(2, 8, 1.0, logspace(5.0, 20.0, 12));
        assert!(decay_measurement(&t, &short, RateTarget::Convex { gamma: 2.0 }, &DecayOptions { min_samples: 20, ..Default::default() }, &DecayContext::default()).is_err());
    }

    #[test]
    fn radial_detection() {
        assert!(is_radial(&family("wave_slow_osc", 2).unwrap()));
        assert!(!is_radial(&family("sym_const", 2).unwrap()));
    }

    #[test]
    fn wave_f0_gradient_vanishes() {
        assert!(f0_gradient_vanishes(&family("wave_slow_osc", 2).unwrap()).unwrap());
    }
}
