//! Iterated diagonalisation of `D_t - A` in the hyperbolic zone.
//!
//! With `M` the locked eigenbasis of `A_1` and `D = diag(l_j)`,
//! `R_0 = M^{-1}(A - A_1)M + (D_t M^{-1})M`, `B^(0) = R_0`, and for `j >= 1`
//!
//! ```text
//! F^(j-1) = diag B^(j-1)
//! N^(j)_{pq} = -B^(j-1)_{pq} / (l_p - l_q)          (p != q)
//! B^(j) = -[(D_t - D - R_0) N_j - N_j (D_t - D - F_{j-1})]
//! R_k = N_k^{-1} B^(k)
//! ```
//!
//! so that `(D_t - D - R_0) N_k = N_k (D_t - D - F_{k-1} - R_k)`.

use crate::error::{Error, Result};
use crate::jet::MatJet;
use crate::linalg::{c, norm2, norm_max, CMat};
use crate::spectral::{decompose, decompose_jet_at, SpectralJet, SpectralOptions, SpectralPoint};
use crate::symbol::{directions, fd_partial, zone_boundary, Backend, Budget, Symbol, ZoneParams};
use crate::systems::System;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Levels of the hierarchy evaluated at one point, as Taylor jets in `t`.
#[derive(Clone, Debug)]
pub struct HierarchyPoint {
    pub t: f64,
    pub xi: Vec<f64>,
    pub spectral: SpectralJet,
    pub diag: MatJet,
    pub r0: MatJet,
    /// `N^(1) .. N^(k)`.
    pub n_parts: Vec<MatJet>,
    /// `F^(0) .. F^(k-1)`.
    pub f_parts: Vec<MatJet>,
    /// `B^(0) .. B^(k)`.
    pub b_parts: Vec<MatJet>,
    pub n_k: MatJet,
    pub n_k_inv: MatJet,
    /// `F_{k-1} = sum F^(j)`.
    pub f_acc: MatJet,
    pub r_k: MatJet,
}

impl HierarchyPoint {
    /// Values (order-zero coefficients) of `D + F_{k-1}` diagonal entries.
    pub fn phase_rates(&self) -> Vec<crate::linalg::C64> {
        let m = self.diag.dim();
        (0..m).map(|j| self.diag.c[0][(j, j)] + self.f_acc.c[0][(j, j)]).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagOptions {
    pub spectral: SpectralOptions,
    /// Target bound on `|N_k - I|` on the zone boundary.
    pub n_bound: f64,
    /// Number of boundary probe points.
    pub probes: usize,
    /// Largest admissible ratio `N_eff / N`.
    pub max_doubling: f64,
}

impl Default for DiagOptions {
    fn default() -> Self {
        DiagOptions { spectral: SpectralOptions::default(), n_bound: 0.5, probes: 256, max_doubling: 65536.0 }
    }
}

/// Diagonaliser of a system to level `k`.
#[derive(Clone)]
pub struct Hierarchy {
    pub system: Arc<System>,
    pub k: usize,
    /// Enlarged zone constant on which `N_k` is invertible.
    pub n_eff: f64,
    pub opts: DiagOptions,
    /// Worst `|N_k - I|` seen on the probe set at `n_eff`.
    pub probe_norm: f64,
}

impl std::fmt::Debug for Hierarchy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Hierarchy({}, k={}, N_eff={})", self.system.name, self.k, self.n_eff)
    }
}

impl Hierarchy {
    /// Build the hierarchy, enlarging the zone constant by doubling until
    /// `|N_k - I| <= n_bound` on the probe set.
    pub fn new(system: Arc<System>, k: usize, opts: DiagOptions) -> Result<Hierarchy> {
        if k == 0 {
            return Err(Error::Diagonalization("level must be at least 1".into()));
        }
        let need = k + 1;
        let b = system.full.budget();
        if need > b.t {
            return Err(Error::DerivativeOrder(format!("level {k} needs {need} time derivatives")));
        }
        let n0 = system.zone.n;
        let mut n_eff = n0;
        loop {
            let h = Hierarchy { system: system.clone(), k, n_eff, opts: opts.clone(), probe_norm: 0.0 };
            match h.probe() {
                Ok(worst) if worst <= opts.n_bound => {
                    return Ok(Hierarchy { probe_norm: worst, ..h });
                }
                Ok(_) | Err(Error::Conditioning(_)) | Err(Error::SpectralGap(_)) => {}
                Err(e) => return Err(e),
            }
            n_eff *= 2.0;
            if n_eff > opts.max_doubling * n0 {
                return Err(Error::Diagonalization(format!(
                    "N_k - I not controlled up to N_eff = {}",
                    opts.max_doubling * n0
                )));
            }
        }
    }

    pub fn zone_eff(&self) -> ZoneParams {
        self.system.zone.with_n(self.n_eff)
    }

    /// Probe points on the boundary `t = t_xi(N_eff)`.
    pub fn probe_points(&self) -> Vec<(f64, Vec<f64>)> {
        let n = self.system.space_dim();
        let zp = self.zone_eff();
        let dirs = probe_directions(n, 16);
        let per = (self.opts.probes / dirs.len()).max(1);
        let mut out = Vec::new();
        for tb in crate::fit::logspace(0.1, 1e4, per) {
            let r = zp.n * crate::symbol::ell(tb).powf(zp.nu) / (1.0 + tb);
            for d in &dirs {
                out.push((tb, d.iter().map(|x| x * r).collect()));
            }
        }
        out
    }

    fn probe(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for (t, xi) in self.probe_points() {
            let p = self.point_unchecked(t, &xi, 0, None)?;
            let mut d = p.n_k.c[0].clone();
            d -= CMat::identity(d.nrows(), d.nrows());
            worst = worst.max(norm2(&d));
        }
        Ok(worst)
    }

    pub fn in_zone(&self, t: f64, xi: &[f64]) -> Result<bool> {
        let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        let tb = zone_boundary(r, &self.zone_eff(), false)?;
        Ok(t >= tb * (1.0 - 1e-12))
    }

    /// Hierarchy at `(t, xi)` with `extra` additional time-derivative orders
    /// in every jet. Fails outside the hyperbolic zone of `N_eff`.
    pub fn point(&self, t: f64, xi: &[f64], extra: usize, reference: Option<&SpectralPoint>) -> Result<HierarchyPoint> {
        if !self.in_zone(t, xi)? {
            return Err(Error::Zone(format!("t = {t} lies in the pseudo-differential zone for xi = {xi:?}")));
        }
        self.point_unchecked(t, xi, extra, reference)
    }

    pub fn point_unchecked(
        &self,
        t: f64,
        xi: &[f64],
        extra: usize,
        reference: Option<&SpectralPoint>,
    ) -> Result<HierarchyPoint> {
        let k = self.k;
        let order = k + 1 + extra;
        let zero = vec![0; xi.len()];
        let a1 = self.system.principal.t_jet(t, xi, order, &zero)?;
        let a = self.system.full.t_jet(t, xi, order, &zero)?;
        let point = decompose(&a1.c[0], &self.opts.spectral, reference)?;
        let sj = decompose_jet_at(&a1, &point)?;
        build_levels(t, xi, &a, &a1, sj, k)
    }

    /// Consistency residuals at a point: the level identity
    /// `B^(j-1) - [N^(j), D] - F^(j-1)` for every `j <= k` and the operator
    /// identity `(D_t - D - R_0) N_k - N_k (D_t - D - F_{k-1} - R_k)`.
    pub fn residuals(&self, p: &HierarchyPoint) -> (f64, f64) {
        let mut lvl = 0.0f64;
        for j in 1..=self.k {
            let r = p.b_parts[j - 1]
                .sub(&p.n_parts[j - 1].commutator(&p.diag))
                .sub(&p.f_parts[j - 1]);
            lvl = lvl.max(norm_max(&r.c[0]));
        }
        let lhs = p
            .n_k
            .dt()
            .sub(&p.diag.mul(&p.n_k))
            .sub(&p.r0.mul(&p.n_k))
            .add(&p.n_k.mul(&p.diag))
            .add(&p.n_k.mul(&p.f_acc))
            .add(&p.n_k.mul(&p.r_k));
        (lvl, norm_max(&lhs.c[0]))
    }

    /// Seeded random points of the regular zone of `N_eff`: times
    /// log-uniform in `[t_min, t_max]`, uniform directions, and radii
    /// log-uniform between `1.01` and `spread` times the boundary radius.
    pub fn reg_samples(&self, count: usize, t_min: f64, t_max: f64, spread: f64, seed: u64) -> Vec<(f64, Vec<f64>)> {
        let n = self.system.space_dim();
        let zp = self.zone_eff();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let t = rng.gen_range(t_min.ln()..=t_max.ln()).exp();
                let rb = zp.n * crate::symbol::ell(t).powf(2.0 * zp.nu) / (1.0 + t);
                let r = rb * rng.gen_range(1.01f64.ln()..=spread.ln()).exp();
                let mut d: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let len = d.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
                d.iter_mut().for_each(|x| *x *= r / len);
                (t, d)
            })
            .collect()
    }

    pub fn symbol(&self, kind: HierarchyPart) -> HierarchySymbol {
        HierarchySymbol { h: self.clone(), kind }
    }
}

fn probe_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|i| {
                let a = 0.1 + std::f64::consts::TAU * i as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut d = directions(n);
            d.truncate(count);
            d
        }
    }
}

fn build_levels(t: f64, xi: &[f64], a: &MatJet, a1: &MatJet, sj: SpectralJet, k: usize) -> Result<HierarchyPoint> {
    let m = a.dim();
    let diag = sj.diag();
    let lower = a.sub(a1);
    let r0 = sj.m_inv.mul(&lower).mul(&sj.m).add(&sj.m_inv.dt().mul(&sj.m));
    let mut b_parts = vec![r0.clone()];
    let mut n_parts = Vec::with_capacity(k);
    let mut f_parts = Vec::with_capacity(k);
    let ord0 = r0.order();
    let mut n_acc = MatJet::identity(m, ord0);
    let mut f_acc = MatJet::zeros(m, ord0);
    for j in 1..=k {
        let bprev = b_parts[j - 1].clone();
        let f = bprev.diag_part();
        let mut nj = MatJet::zeros(m, bprev.order());
        for p in 0..m {
            for q in 0..m {
                if p == q {
                    continue;
                }
                let gap = sj.roots[p].sub(&sj.roots[q]).truncate(bprev.order());
                let v = bprev.entry(p, q).div(&gap).neg();
                nj.set_entry(p, q, &v);
            }
        }
        // With the level identity built in:
        // B^(j) = -D_t N^(j) + R_0 N^(j) - N^(j) F_{j-1} - (N_{j-1} - I) F^(j-1).
        let f_new = f_acc.add(&f);
        let mut nprev_minus_i = n_acc.clone();
        for cc in nprev_minus_i.c.iter_mut().take(1) {
            *cc -= CMat::identity(m, m);
        }
        let bj = nj
            .dt()
            .scale(c(-1.0))
            .add(&r0.mul(&nj))
            .sub(&nj.mul(&f_new))
            .sub(&nprev_minus_i.mul(&f));
        n_acc = n_acc.add(&nj);
        f_acc = f_new;
        n_parts.push(nj);
        f_parts.push(f);
        b_parts.push(bj);
    }
    let bk = b_parts[k].clone();
    let n_k = n_acc.truncate(bk.order());
    let n_k_inv = n_k
        .inverse()
        .ok_or_else(|| Error::Diagonalization(format!("N_k singular at t={t}, xi={xi:?}")))?;
    let r_k = n_k_inv.mul(&bk);
    Ok(HierarchyPoint {
        t,
        xi: xi.to_vec(),
        spectral: sj,
        diag,
        r0,
        n_parts,
        f_parts,
        b_parts,
        n_k,
        n_k_inv,
        f_acc,
        r_k,
    })
}

/// Which level of the hierarchy to expose as a symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HierarchyPart {
    R0,
    Rk,
    /// `N^(j)`, one-based.
    NPart(usize),
    /// `B^(j)`.
    BPart(usize),
    NkMinusI,
    /// `F_{k-1} - F_0`.
    FTail,
}

/// A hierarchy level viewed as a symbol; time derivatives are exact and
/// frequency derivatives are central differences with the eigenbasis axes
/// locked at the base point.
#[derive(Clone)]
pub struct HierarchySymbol {
    pub h: Hierarchy,
    pub kind: HierarchyPart,
}

impl HierarchySymbol {
    fn pick(&self, p: &HierarchyPoint) -> MatJet {
        match self.kind {
            HierarchyPart::R0 => p.r0.clone(),
            HierarchyPart::Rk => p.r_k.clone(),
            HierarchyPart::NPart(j) => p.n_parts[j - 1].clone(),
            HierarchyPart::BPart(j) => p.b_parts[j].clone(),
            HierarchyPart::NkMinusI => {
                let mut n = p.n_k.clone();
                let m = n.dim();
                n.c[0] -= CMat::identity(m, m);
                n
            }
            HierarchyPart::FTail => p.f_acc.sub(&p.f_parts[0]),
        }
    }

    fn jet_at(&self, t: f64, xi: &[f64], extra: usize, reference: Option<&SpectralPoint>) -> Result<MatJet> {
        let p = self.h.point_unchecked(t, xi, extra, reference)?;
        Ok(self.pick(&p))
    }
}

impl Symbol for HierarchySymbol {
    fn dim(&self) -> usize {
        self.h.system.dim()
    }
    fn space_dim(&self) -> usize {
        self.h.system.space_dim()
    }
    fn budget(&self) -> Budget {
        let b = self.h.system.full.budget();
        Budget { xi: 2, t: b.t.saturating_sub(self.h.k + 1) }
    }
    fn backend(&self) -> Backend {
        Backend::Fd
    }
    fn partial(&self, t: f64, xi: &[f64], k: usize, alpha: &[usize]) -> Result<CMat> {
        crate::symbol::check_budget(self.budget(), k, alpha)?;
        let a: usize = alpha.iter().sum();
        if a == 0 {
            return Ok(self.jet_at(t, xi, k, None)?.derivative(k));
        }
        let base = self.h.point_unchecked(t, xi, 0, None)?.spectral.point;
        let f = |tt: f64, x: &[f64]| -> CMat {
            self.jet_at(tt, x, k, Some(&base)).map(|j| j.derivative(k)).unwrap_or_else(|_| {
                let m = self.dim();
                CMat::from_element(m, m, c(f64::NAN))
            })
        };
        let zero_k: Vec<usize> = alpha.to_vec();
        Ok(fd_partial(&|tt: f64, x: &[f64]| f(tt, x), t, xi, 0, &zero_k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::Jet;
    use crate::linalg::C64;
    use crate::systems::family;

    #[test]
    fn first_level_matches_closed_form() {
        // D = diag(r, -r), R_0 = [[0, q], [q, 0]] with constant entries.
        let r = 2.0;
        let q = 0.3;
        let m = 2;
        let mut diag = MatJet::zeros(m, 2);
        diag.c[0][(0, 0)] = c(r);
        diag.c[0][(1, 1)] = c(-r);
        let roots = vec![Jet::constant(c(r), 2), Jet::constant(c(-r), 2)];
        let mut b0 = MatJet::zeros(m, 2);
        b0.c[0][(0, 1)] = c(q);
        b0.c[0][(1, 0)] = c(q);
        let mut nj = MatJet::zeros(m, 2);
        for p in 0..m {
            for qq in 0..m {
                if p != qq {
                    let v = b0.entry(p, qq).div(&roots[p].sub(&roots[qq])).neg();
                    nj.set_entry(p, qq, &v);
                }
            }
        }
        assert!((nj.c[0][(0, 1)] - C64::new(-q / (2.0 * r), 0.0)).norm() < 1e-15);
        assert!((nj.c[0][(1, 0)] - C64::new(q / (2.0 * r), 0.0)).norm() < 1e-15);
        let res = b0.sub(&nj.commutator(&diag)).sub(&b0.diag_part());
        assert!(norm_max(&res.c[0]) < 1e-15);
    }

    #[test]
    fn identities_hold_for_wave() {
        let sys = Arc::new(family("wave_slow_osc", 2).unwrap());
        let h = Hierarchy::new(sys, 2, DiagOptions::default()).unwrap();
        assert!(h.n_eff >= 1.0);
        for (t, xi) in [(50.0, vec![0.3, 0.4]), (700.0, vec![-0.02, 0.05]), (3.0, vec![2.0, 1.0])] {
            if !h.in_zone(t, &xi).unwrap() {
                continue;
            }
            let p = h.point(t, &xi, 1, None).unwrap();
            let (lvl, op) = h.residuals(&p);
            let scale = norm_max(&p.r0.c[0]).max(1e-300);
            assert!(lvl <= 1e-12 * scale.max(1.0), "lvl {lvl}");
            assert!(op <= 1e-10 * scale.max(1.0), "op {op}");
        }
        let err = h.point(0.0, &[1e-3, 0.0], 0, None);
        assert!(matches!(err, Err(Error::Zone(_))));
    }

    #[test]
    fn constant_system_is_trivial() {
        let sys = Arc::new(family("sym_const", 2).unwrap());
        let h = Hierarchy::new(sys, 2, DiagOptions::default()).unwrap();
        assert_eq!(h.n_eff, 1.0);
        let p = h.point(10.0, &[0.3, 0.2], 0, None).unwrap();
        assert!(norm_max(&p.r_k.c[0]) < 1e-14);
        assert!(norm_max(&p.r0.c[0]) < 1e-14);
    }
}
