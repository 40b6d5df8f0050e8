//! Batch pipeline: strict JSON run configs, stage execution in dependency
//! order, `report.json` and per-stage CSV files.

use crate::assumptions::{check_assumptions, AssumptionConfig};
use crate::cache::{self, CacheStatus};
use crate::diagonalizer::{DiagOptions, Hierarchy};
use crate::dispersive::{
    self, decay_measurement, gaussian_data, gaussian_frequency_radius, gaussian_support_radius, low_frequency_decay,
    max_speed, solve_norms, Backend, DecayContext, DecayOptions, DecayReport, GridConfig, LowFrequencyReport,
    RateTarget, SolveOptions, SolveStats,
};
use crate::error::{Error, Result};
use crate::fit::logspace;
use crate::fresnel::{convexity_check, ConvexityOptions, ConvexityReport};
use crate::linalg::{norm2, norm_max, C64};
use crate::oscillatory::{
    check_hypotheses, decay_csv, evaluate_model_integral, fit_decay, modulus_bound, Amplitude, DecayFit, ExprField,
    HypothesisReport, ModelIntegralSpec, ModulusBound, OscOptions,
};
use crate::propagator::{factorized, solve_direct, PropOptions};
use crate::symbol::ZoneParams;
use crate::systems::{family_spec, System, SystemSpec};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Assumptions,
    Diagonalize,
    Propagate,
    Geometry,
    Oscillatory,
    Decay,
}

pub const ALL_STAGES: [Stage; 6] =
    [Stage::Assumptions, Stage::Diagonalize, Stage::Propagate, Stage::Geometry, Stage::Oscillatory, Stage::Decay];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Assumptions => "assumptions",
            Stage::Diagonalize => "diagonalize",
            Stage::Propagate => "propagate",
            Stage::Geometry => "geometry",
            Stage::Oscillatory => "oscillatory",
            Stage::Decay => "decay",
        }
    }

    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Propagate => &[Stage::Diagonalize],
            Stage::Oscillatory => &[Stage::Geometry],
            Stage::Decay => &[Stage::Propagate, Stage::Geometry],
            _ => &[],
        }
    }
}

/// Requested stages plus their prerequisites, in pipeline order. The flag
/// marks stages that were only pulled in as prerequisites.
pub fn resolve_stages(requested: &[Stage]) -> Vec<(Stage, bool)> {
    let mut need = std::collections::BTreeSet::new();
    let mut stack: Vec<Stage> = requested.to_vec();
    while let Some(s) = stack.pop() {
        if need.insert(s) {
            stack.extend_from_slice(s.requires());
        }
    }
    need.into_iter().map(|s| (s, !requested.contains(&s))).collect()
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Name of a bundled family.
    #[serde(default)]
    pub family: Option<String>,
    /// Space dimension of the family.
    #[serde(default)]
    pub n: Option<usize>,
    /// Raw system description instead of a family.
    #[serde(default)]
    pub spec: Option<SystemSpec>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CachePolicy {
    #[default]
    Auto,
    Off,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagStage {
    pub k: usize,
    pub points: usize,
    pub t_min: f64,
    pub t_max: f64,
    /// Radii up to this multiple of the regular-zone boundary.
    pub spread: f64,
    /// Operator-identity residual relative to `max(1, |R_0|)`.
    pub residual_tol: f64,
    pub options: DiagOptions,
}

impl Default for DiagStage {
    fn default() -> Self {
        DiagStage { k: 2, points: 200, t_min: 1.0, t_max: 1e4, spread: 100.0, residual_tol: 1e-8, options: DiagOptions::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropStage {
    pub points: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub spread: f64,
    /// Bound on `|E_factorised - E_direct|`.
    pub tol: f64,
    pub options: PropOptions,
}

impl Default for PropStage {
    fn default() -> Self {
        PropStage {
            points: 50,
            t_min: 1.0,
            t_max: 1e3,
            spread: 100.0,
            tol: 1e-7,
            options: PropOptions { rtol: 1e-12, atol: 1e-14, ..Default::default() },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryStage {
    pub t: f64,
    pub convexity: ConvexityOptions,
}

impl Default for GeometryStage {
    fn default() -> Self {
        GeometryStage { t: 10.0, convexity: ConvexityOptions::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OscStage {
    /// Phase `F` of the model integral; defaults to `xi1^gamma`.
    pub phase: Option<String>,
    pub dim: usize,
    /// Contact order; defaults to the index found by the geometry stage.
    pub gamma: Option<usize>,
    pub delta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub count: usize,
    pub options: OscOptions,
}

impl Default for OscStage {
    fn default() -> Self {
        OscStage {
            phase: None,
            dim: 1,
            gamma: None,
            delta: 1.0,
            lambda_min: 10.0,
            lambda_max: 1e4,
            count: 25,
            options: OscOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Direct,
    Factorized,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LowFrequencyStage {
    pub points: usize,
    pub half_width: f64,
    pub sigma: f64,
}

impl Default for LowFrequencyStage {
    fn default() -> Self {
        LowFrequencyStage { points: 1024, half_width: 2560.0, sigma: 5.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayStage {
    /// Points per axis; defaults to 4096, 512, 128 for n = 1, 2, 3.
    pub points: Option<usize>,
    /// Torus half-width; defaults to the wraparound guard.
    pub half_width: Option<f64>,
    /// Defaults to `0` and 16 log-spaced times in `[5, 100]`.
    pub times: Option<Vec<f64>>,
    pub pairs: Vec<(f64, f64)>,
    /// Width of the Gaussian data.
    pub sigma: f64,
    /// Constant vector multiplying the Gaussian; defaults to the normalised
    /// all-ones vector.
    pub vector: Option<Vec<f64>>,
    pub backend: BackendChoice,
    pub fit: DecayOptions,
    pub low_frequency: Option<LowFrequencyStage>,
    pub options: PropOptions,
}

impl Default for DecayStage {
    fn default() -> Self {
        DecayStage {
            points: None,
            half_width: None,
            times: None,
            pairs: vec![(4.0 / 3.0, 4.0)],
            sigma: 8.0,
            vector: None,
            backend: BackendChoice::Direct,
            fit: DecayOptions::default(),
            low_frequency: Some(LowFrequencyStage::default()),
            options: PropOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    /// Overrides the zone constants of the system.
    #[serde(default)]
    pub zone: Option<ZoneParams>,
    #[serde(default)]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub cache: CachePolicy,
    #[serde(default)]
    pub assumptions: AssumptionConfig,
    #[serde(default)]
    pub diagonalize: DiagStage,
    #[serde(default)]
    pub propagate: PropStage,
    #[serde(default)]
    pub geometry: GeometryStage,
    #[serde(default)]
    pub oscillatory: OscStage,
    #[serde(default)]
    pub decay: DecayStage,
}

pub const DEFAULT_SEED: u64 = 1;

pub fn parse_config(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("run config: {e}")))
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

impl RunConfig {
    pub fn build_system(&self) -> Result<System> {
        let s = &self.system;
        let (name, mut spec) = match (&s.family, &s.spec) {
            (Some(f), None) => (f.clone(), family_spec(f, s.n.unwrap_or(2))?),
            (None, Some(spec)) => {
                if s.n.is_some() {
                    return Err(Error::Config("`n` only applies to named families".into()));
                }
                ("custom".to_string(), spec.clone())
            }
            _ => return Err(Error::Config("give exactly one of `family` and `spec`".into())),
        };
        if let Some(z) = self.zone {
            ZoneParams::new(z.n, z.nu)?;
            spec.set_zone(z);
        }
        System::from_spec(&name, spec)
    }
}

/// Command-line overrides of a config.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Replaces the config's stage list.
    pub stages: Option<Vec<Stage>>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub no_cache: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemEcho {
    pub name: String,
    pub hash: String,
    pub m: usize,
    pub n: usize,
    pub zone: ZoneParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    /// Run only as a prerequisite of a requested stage.
    pub implied: bool,
    pub pass: bool,
    pub error: Option<String>,
    pub report: Option<serde_json::Value>,
    pub csv: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub system: Option<SystemEcho>,
    pub stages: Vec<StageOutcome>,
    pub pass: bool,
}

/// Wall-clock and cache information, kept out of `report.json` so that the
/// report is reproducible byte for byte.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RuntimeInfo {
    pub stages: Vec<StageRuntime>,
    pub total_seconds: f64,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRuntime {
    pub stage: Stage,
    pub seconds: f64,
    pub cache: Vec<CacheStatus>,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub runtime: RuntimeInfo,
    pub out_dir: PathBuf,
    /// 0 when every stage passed, 1 otherwise.
    pub exit_code: i32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagStageReport {
    pub k: usize,
    pub n_eff: f64,
    pub probe_norm: f64,
    pub points: usize,
    pub max_level_residual: f64,
    pub max_operator_residual: f64,
    pub worst_point: (f64, Vec<f64>),
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PropStageReport {
    pub points: usize,
    pub spliced: usize,
    pub max_difference: f64,
    pub worst_point: (f64, Vec<f64>),
    pub tol: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeometryStageReport {
    pub convexity: ConvexityReport,
    pub target: Option<RateTarget>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OscStageReport {
    pub phase: String,
    pub dim: usize,
    pub gamma: usize,
    pub hypotheses: HypothesisReport,
    pub fit: DecayFit,
    pub modulus: ModulusBound,
    pub max_error: f64,
    pub pass: bool,
}

/// Solve statistics without the cache status.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveSummary {
    pub modes: usize,
    pub table_columns: usize,
    pub dropped_modes: usize,
    pub dropped_rel: f64,
    pub radial: bool,
    pub max_speed: f64,
    pub k_cut: f64,
    pub table_checksum: String,
}

impl From<&SolveStats> for SolveSummary {
    fn from(s: &SolveStats) -> Self {
        SolveSummary {
            modes: s.modes,
            table_columns: s.table_columns,
            dropped_modes: s.dropped_modes,
            dropped_rel: s.dropped_rel,
            radial: s.radial,
            max_speed: s.max_speed,
            k_cut: s.k_cut,
            table_checksum: s.table_checksum.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayStageReport {
    pub grid: GridConfig,
    pub sigma: f64,
    pub decay: DecayReport,
    pub solve: SolveSummary,
    pub low_frequency: Option<LowFrequencyReport>,
    pub low_frequency_grid: Option<GridConfig>,
    pub pass: bool,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    sys: Arc<System>,
    seed: u64,
    cache_dir: Option<PathBuf>,
    hierarchy: Option<Arc<Hierarchy>>,
    target: Option<RateTarget>,
    cache: Vec<CacheStatus>,
}

struct StageResult {
    report: serde_json::Value,
    pass: bool,
    csv: Vec<(String, String)>,
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serialisable report")
}

fn point_row(t: f64, xi: &[f64], vals: &[f64]) -> String {
    let mut s = format!("{t:.17e}");
    for x in xi.iter().chain(vals) {
        let _ = write!(s, ",{x:.17e}");
    }
    s.push('\n');
    s
}

fn point_header(n: usize, vals: &[&str]) -> String {
    let mut s = String::from("t");
    for j in 0..n {
        let _ = write!(s, ",xi{}", j + 1);
    }
    for v in vals {
        let _ = write!(s, ",{v}");
    }
    s.push('\n');
    s
}

fn stage_assumptions(ctx: &mut Ctx) -> Result<StageResult> {
    let r = check_assumptions(&ctx.sys, &ctx.cfg.assumptions)?;
    Ok(StageResult { pass: r.all_pass, report: to_value(&r), csv: vec![] })
}

fn stage_diagonalize(ctx: &mut Ctx) -> Result<StageResult> {
    let c = &ctx.cfg.diagonalize;
    let h = Arc::new(Hierarchy::new(ctx.sys.clone(), c.k, c.options.clone())?);
    let n = ctx.sys.space_dim();
    let mut csv = point_header(n, &["level_residual", "operator_residual", "scale"]);
    let mut lvl_max = 0.0f64;
    let mut op_max = 0.0f64;
    let mut worst = (0.0, vec![0.0; n]);
    let mut pass = true;
    for (t, xi) in h.reg_samples(c.points, c.t_min, c.t_max, c.spread, ctx.seed) {
        let p = h.point(t, &xi, 1, None)?;
        let (lvl, op) = h.residuals(&p);
        let scale = norm_max(&p.r0.c[0]).max(1.0);
        csv.push_str(&point_row(t, &xi, &[lvl, op, scale]));
        lvl_max = lvl_max.max(lvl / scale);
        if op / scale > op_max {
            op_max = op / scale;
            worst = (t, xi.clone());
        }
        pass &= op <= c.residual_tol * scale;
    }
    let report = DiagStageReport {
        k: c.k,
        n_eff: h.n_eff,
        probe_norm: h.probe_norm,
        points: c.points,
        max_level_residual: lvl_max,
        max_operator_residual: op_max,
        worst_point: worst,
        pass,
    };
    ctx.hierarchy = Some(h);
    Ok(StageResult { pass, report: to_value(&report), csv: vec![("diagonalize_residuals.csv".into(), csv)] })
}

fn stage_propagate(ctx: &mut Ctx) -> Result<StageResult> {
    let c = &ctx.cfg.propagate;
    let h = ctx.hierarchy.clone().ok_or_else(|| Error::Config("propagate needs the diagonalize stage".into()))?;
    let n = ctx.sys.space_dim();
    let mut csv = point_header(n, &["difference"]);
    let mut max_diff = 0.0f64;
    let mut worst = (0.0, vec![0.0; n]);
    let mut spliced = 0;
    for (t, xi) in h.reg_samples(c.points, c.t_min, c.t_max, c.spread, ctx.seed.wrapping_add(1)) {
        let f = factorized(&h, t, 0.0, &xi, &c.options)?;
        let d = solve_direct(&ctx.sys, t, 0.0, &xi, &c.options)?;
        let diff = norm2(&(&f.e - &d));
        if f.splice.is_some() {
            spliced += 1;
        }
        csv.push_str(&point_row(t, &xi, &[diff]));
        if diff > max_diff || !diff.is_finite() {
            max_diff = if diff.is_finite() { diff } else { f64::INFINITY };
            worst = (t, xi.clone());
        }
    }
    let pass = max_diff <= c.tol;
    let report = PropStageReport { points: c.points, spliced, max_difference: max_diff, worst_point: worst, tol: c.tol, pass };
    Ok(StageResult { pass, report: to_value(&report), csv: vec![("propagate_backends.csv".into(), csv)] })
}

fn stage_geometry(ctx: &mut Ctx) -> Result<StageResult> {
    let c = &ctx.cfg.geometry;
    let (conv, _) = convexity_check(&ctx.sys, c.t, &c.convexity)?;
    let target = RateTarget::from_convexity(&conv).ok();
    let mut csv = String::from("k,level,gamma,gamma0,kappa,kappa0,convex\n");
    for s in &conv.sheets {
        let opt = |v: Option<usize>| v.map(|g| g.to_string()).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{:.17e},{},{},{:.17e},{:.17e},{}",
            s.k,
            s.level,
            opt(s.contact.gamma),
            opt(s.contact.gamma0),
            s.contact.kappa,
            s.contact.kappa0,
            s.contact.convex
        );
    }
    let pass = target.is_some() && conv.gamma_bound_holds;
    ctx.target = target;
    let report = GeometryStageReport { convexity: conv, target, pass };
    Ok(StageResult { pass, report: to_value(&report), csv: vec![("geometry_sheets.csv".into(), csv)] })
}

fn stage_oscillatory(ctx: &mut Ctx) -> Result<StageResult> {
    let c = &ctx.cfg.oscillatory;
    let gamma = match (c.gamma, ctx.target) {
        (Some(g), _) => g,
        (None, Some(t)) => t.index().round() as usize,
        (None, None) => return Err(Error::Config("no contact order: set oscillatory.gamma or fix the geometry stage".into())),
    };
    if gamma < 2 {
        return Err(Error::Config(format!("contact order {gamma} below 2")));
    }
    let phase = c.phase.clone().unwrap_or_else(|| format!("xi1^{gamma}"));
    let unit: Amplitude = Arc::new(|_: &[f64]| 1.0);
    let lambdas = logspace(c.lambda_min, c.lambda_max, c.count);
    let spec = ModelIntegralSpec {
        phase: Arc::new(ExprField::parse(&phase, c.dim)?),
        amplitude: unit,
        delta: c.delta,
        gamma,
        lambdas: lambdas.clone(),
    };
    let hyp = check_hypotheses(&spec, &c.options)?;
    let values = lambdas
        .iter()
        .map(|l| evaluate_model_integral(&spec, *l, &c.options))
        .collect::<Result<Vec<_>>>()?;
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let fit = fit_decay(&lambdas, &abs, gamma, c.dim)?;
    let modulus = modulus_bound(&lambdas, &abs, gamma, c.dim)?;
    let max_error = values.iter().map(|v| v.error).fold(0.0, f64::max);
    let pass = hyp.all_pass && fit.pass && modulus.holds;
    let report = OscStageReport { phase, dim: c.dim, gamma, hypotheses: hyp, fit, modulus, max_error, pass };
    Ok(StageResult { pass, report: to_value(&report), csv: vec![("oscillatory_decay.csv".into(), decay_csv(&lambdas, &values))] })
}

fn data_vector(c: &DecayStage, m: usize) -> Result<Vec<C64>> {
    match &c.vector {
        Some(v) if v.len() != m => Err(Error::Config(format!("decay.vector has {} entries, system has {m}", v.len()))),
        Some(v) => Ok(v.iter().map(|x| C64::new(*x, 0.0)).collect()),
        None => Ok(vec![C64::new(1.0 / (m as f64).sqrt(), 0.0); m]),
    }
}

fn stage_decay(ctx: &mut Ctx) -> Result<StageResult> {
    let c = &ctx.cfg.decay;
    let sys = ctx.sys.clone();
    let n = sys.space_dim();
    let target = ctx.target.ok_or_else(|| Error::Config("decay needs a contact index from the geometry stage".into()))?;
    let backend = match c.backend {
        BackendChoice::Direct => Backend::Direct,
        BackendChoice::Factorized => Backend::Factorized(
            ctx.hierarchy.clone().ok_or_else(|| Error::Config("factorised backend needs the diagonalize stage".into()))?,
        ),
    };
    let times = c.times.clone().unwrap_or_else(|| {
        let mut t = vec![0.0];
        t.extend(logspace(5.0, 100.0, 16));
        t
    });
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let support = gaussian_support_radius(c.sigma);
    let half_width = match c.half_width {
        Some(l) => l,
        None => (2.0 * (max_speed(&sys, t_max) * t_max + support)).ceil(),
    };
    let grid = GridConfig {
        n,
        points: c.points.unwrap_or(match n {
            1 => 4096,
            2 => 512,
            _ => 128,
        }),
        half_width,
        times,
        pairs: c.pairs.clone(),
        support_radius: support,
    };
    let v = data_vector(c, sys.dim())?;
    let data = gaussian_data(&grid, c.sigma, &v);
    let opts = SolveOptions {
        prop: c.options,
        k_cut: Some(gaussian_frequency_radius(c.sigma)),
        cache_dir: ctx.cache_dir.clone(),
        ..Default::default()
    };
    let (norms, stats) = solve_norms(&sys, &backend, &data, &grid, &opts)?;
    ctx.cache.push(stats.cache.clone());
    let dctx = DecayContext::for_system(&sys, &data, &grid)?;
    let decay = decay_measurement(&norms, &grid, target, &c.fit, &dctx)?;
    let mut csv = vec![("decay_norms.csv".to_string(), norms.csv())];
    let mut pass = decay.all_pass;
    let (low, low_grid) = match &c.low_frequency {
        Some(lf) => {
            let lg = GridConfig {
                n,
                points: lf.points,
                half_width: lf.half_width,
                times: grid.times.clone(),
                pairs: vec![],
                support_radius: gaussian_support_radius(lf.sigma),
            };
            let ldata = gaussian_data(&lg, lf.sigma, &v);
            let lopts = SolveOptions { k_cut: Some(gaussian_frequency_radius(lf.sigma)), ..opts.clone() };
            let (rep, st) = low_frequency_decay(&sys, &backend, &ldata, &lg, &lopts, &c.fit)?;
            ctx.cache.push(st.cache.clone());
            let mut s = String::from("t,sup\n");
            for (t, v) in rep.times.iter().zip(&rep.sup_norms) {
                let _ = writeln!(s, "{t:.17e},{v:.17e}");
            }
            csv.push(("decay_low_frequency.csv".into(), s));
            pass &= rep.pass;
            (Some(rep), Some(lg))
        }
        None => (None, None),
    };
    let report = DecayStageReport {
        grid,
        sigma: c.sigma,
        decay,
        solve: SolveSummary::from(&stats),
        low_frequency: low,
        low_frequency_grid: low_grid,
        pass,
    };
    Ok(StageResult { pass, report: to_value(&report), csv })
}

/// Executes a config. Errors are configuration problems (exit code 2);
/// stage failures are recorded in the report.
pub fn run(cfg: RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let started = Instant::now();
    let sys = Arc::new(cfg.build_system()?);
    let seed = opts.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let out_dir = opts.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("disphyp-out"));
    let cache_dir = if opts.no_cache || cfg.cache == CachePolicy::Off { None } else { Some(cache::cache_dir()) };
    let requested = opts.stages.clone().unwrap_or_else(|| cfg.stages.clone());
    let plan = resolve_stages(&requested);
    std::fs::create_dir_all(&out_dir)?;
    let mut ctx = Ctx { cfg: &cfg, sys: sys.clone(), seed, cache_dir: cache_dir.clone(), hierarchy: None, target: None, cache: vec![] };
    let mut outcomes: Vec<StageOutcome> = Vec::new();
    let mut runtimes = Vec::new();
    for (stage, implied) in plan {
        let t0 = Instant::now();
        ctx.cache.clear();
        let blocked = stage
            .requires()
            .iter()
            .find(|d| outcomes.iter().any(|o| o.stage == **d && o.error.is_some()));
        let result = match blocked {
            Some(d) => Err(Error::Config(format!("skipped: prerequisite stage `{}` failed", d.name()))),
            None => match stage {
                Stage::Assumptions => stage_assumptions(&mut ctx),
                Stage::Diagonalize => stage_diagonalize(&mut ctx),
                Stage::Propagate => stage_propagate(&mut ctx),
                Stage::Geometry => stage_geometry(&mut ctx),
                Stage::Oscillatory => stage_oscillatory(&mut ctx),
                Stage::Decay => stage_decay(&mut ctx),
            },
        };
        let outcome = match result {
            Ok(r) => {
                let mut names = Vec::new();
                for (name, body) in &r.csv {
                    std::fs::write(out_dir.join(name), body)?;
                    names.push(name.clone());
                }
                StageOutcome { stage, implied, pass: r.pass, error: None, report: Some(r.report), csv: names }
            }
            Err(e) => StageOutcome { stage, implied, pass: false, error: Some(e.to_string()), report: None, csv: vec![] },
        };
        log::info!("stage {} {}", stage.name(), if outcome.pass { "passed" } else { "failed" });
        outcomes.push(outcome);
        runtimes.push(StageRuntime { stage, seconds: t0.elapsed().as_secs_f64(), cache: ctx.cache.clone() });
        write_reports(&out_dir, &cfg, seed, &sys, &outcomes)?;
    }
    let report = write_reports(&out_dir, &cfg, seed, &sys, &outcomes)?;
    let runtime = RuntimeInfo { stages: runtimes, total_seconds: started.elapsed().as_secs_f64(), cache_dir };
    let text = serde_json::to_string_pretty(&runtime).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out_dir.join("runtime.json"), text + "\n")?;
    let exit_code = if report.pass { 0 } else { 1 };
    Ok(RunOutcome { report, runtime, out_dir, exit_code })
}

fn write_reports(out: &Path, cfg: &RunConfig, seed: u64, sys: &System, stages: &[StageOutcome]) -> Result<RunReport> {
    let report = RunReport {
        tool: "disphyp".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config: cfg.clone(),
        system: Some(SystemEcho {
            name: sys.name.clone(),
            hash: sys.hash.clone(),
            m: sys.dim(),
            n: sys.space_dim(),
            zone: sys.zone,
        }),
        stages: stages.to_vec(),
        pass: stages.iter().all(|s| s.pass),
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out.join("report.json"), text + "\n")?;
    Ok(report)
}

/// Re-exported for callers that build grids by hand.
pub use dispersive::conjugate;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_resolution() {
        let plan = resolve_stages(&[Stage::Decay]);
        let names: Vec<(Stage, bool)> = plan;
        assert_eq!(
            names,
            vec![(Stage::Diagonalize, true), (Stage::Propagate, true), (Stage::Geometry, true), (Stage::Decay, false)]
        );
        assert!(resolve_stages(&[]).is_empty());
    }

    #[test]
    fn strict_parsing() {
        let ok = parse_config(r#"{"system": {"family": "wave_slow_osc", "n": 2}, "stages": ["assumptions"]}"#).unwrap();
        assert_eq!(ok.stages, vec![Stage::Assumptions]);
        assert!(parse_config(r#"{"system": {"family": "wave_slow_osc"}, "bogus": 1}"#).is_err());
        assert!(parse_config(r#"{"system": {"family": "x"}, "decay": {"sigmaa": 3}}"#).is_err());
        assert!(parse_config(r#"{"system": {"family": "x"}, "stages": ["plot"]}"#).is_err());
        let bad = parse_config(r#"{"system": {"family": "nope"}}"#).unwrap();
        assert!(matches!(bad.build_system(), Err(Error::Config(_))));
    }
}
