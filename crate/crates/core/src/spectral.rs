//! Eigen-decomposition of the principal symbol: roots, spectral projections,
//! a locked eigenbasis and the symmetriser, pointwise and as Taylor jets in `t`.

use crate::error::{Error, Result};
use crate::jet::{Jet, MatJet};
use crate::linalg::{c, cond2, eigenvalues, CMat, CVec, C64};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralOptions {
    /// Smallest admissible root gap relative to `max(1, ||A_1||)`.
    pub gap_floor: f64,
    /// Largest admissible condition number of the eigenbasis.
    pub cond_max: f64,
    /// Largest admissible imaginary part of a root relative to `max(1, ||A_1||)`.
    pub real_tol: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions { gap_floor: 1e-10, cond_max: 1e8, real_tol: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct SpectralPoint {
    /// Real roots, ascending.
    pub roots: Vec<f64>,
    pub projections: Vec<CMat>,
    /// Columns are the normalised eigenvectors `P_j e / |P_j e|`.
    pub m: CMat,
    pub m_inv: CMat,
    /// Coordinate axis `e` used for each column.
    pub axes: Vec<usize>,
    /// Sign applied to each column.
    pub signs: Vec<f64>,
    pub gap: f64,
    pub cond: f64,
}

impl SpectralPoint {
    pub fn dim(&self) -> usize {
        self.roots.len()
    }

    pub fn diag(&self) -> CMat {
        CMat::from_diagonal(&CVec::from_iterator(self.dim(), self.roots.iter().map(|r| c(*r))))
    }

    /// Symmetriser `H = sum_j P_j^* P_j`.
    pub fn symmetriser(&self) -> CMat {
        let m = self.dim();
        let mut h = CMat::zeros(m, m);
        for p in &self.projections {
            h += p.adjoint() * p;
        }
        h
    }
}

fn scale_of(a: &CMat) -> f64 {
    crate::linalg::norm_fro(a).max(1.0)
}

/// Roots of `a1`, checked to be real and separated, sorted ascending.
pub fn real_roots(a1: &CMat, opts: &SpectralOptions) -> Result<Vec<f64>> {
    let scale = scale_of(a1);
    let ev = eigenvalues(a1);
    let mut roots = Vec::with_capacity(ev.len());
    for z in &ev {
        if z.im.abs() > opts.real_tol * scale {
            return Err(Error::SpectralGap(format!("non-real root {z}")));
        }
        roots.push(z.re);
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let gap = min_gap(&roots);
    if roots.len() > 1 && gap < opts.gap_floor * scale {
        return Err(Error::SpectralGap(format!("root gap {gap:e} below floor")));
    }
    Ok(roots)
}

pub fn min_gap(roots: &[f64]) -> f64 {
    roots.windows(2).map(|w| (w[1] - w[0]).abs()).fold(f64::INFINITY, f64::min)
}

/// `P_j = prod_{i != j} (A - l_i) / (l_j - l_i)`.
pub fn projection(a1: &CMat, roots: &[f64], j: usize) -> CMat {
    let m = a1.nrows();
    let mut p = CMat::identity(m, m);
    for (i, &li) in roots.iter().enumerate() {
        if i == j {
            continue;
        }
        let f = (a1 - CMat::identity(m, m) * c(li)) * c(1.0 / (roots[j] - li));
        p = p * f;
    }
    p
}

/// Pointwise decomposition. Passing a reference point locks the axes and
/// orients the columns to overlap positively with it.
pub fn decompose(a1: &CMat, opts: &SpectralOptions, reference: Option<&SpectralPoint>) -> Result<SpectralPoint> {
    let m = a1.nrows();
    let roots = real_roots(a1, opts)?;
    let projections: Vec<CMat> = (0..m).map(|j| projection(a1, &roots, j)).collect();
    let mut mm = CMat::zeros(m, m);
    let mut axes = Vec::with_capacity(m);
    let mut signs = Vec::with_capacity(m);
    for (j, p) in projections.iter().enumerate() {
        let axis = match reference {
            Some(r) => r.axes[j],
            None => (0..m)
                .max_by(|&a, &b| p.column(a).norm().partial_cmp(&p.column(b).norm()).unwrap())
                .unwrap(),
        };
        let col = p.column(axis).into_owned();
        let nrm = col.norm();
        if nrm < 1e-14 {
            return Err(Error::Conditioning(format!("projection {j} annihilates locked axis {axis}")));
        }
        let mut v = col * c(1.0 / nrm);
        let mut s = 1.0;
        if let Some(r) = reference {
            if r.m.column(j).dotc(&v).re < 0.0 {
                s = -1.0;
                v *= c(-1.0);
            }
        }
        mm.set_column(j, &v);
        axes.push(axis);
        signs.push(s);
    }
    let cond = cond2(&mm);
    if !(cond <= opts.cond_max) {
        return Err(Error::Conditioning(format!("eigenbasis condition number {cond:e}")));
    }
    let m_inv = mm
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Conditioning("singular eigenbasis".into()))?;
    let gap = min_gap(&roots);
    Ok(SpectralPoint { roots, projections, m: mm, m_inv, axes, signs, gap, cond })
}

/// Taylor jets of the spectral data of a matrix jet.
#[derive(Clone, Debug)]
pub struct SpectralJet {
    pub point: SpectralPoint,
    pub roots: Vec<Jet>,
    pub projections: Vec<MatJet>,
    pub m: MatJet,
    pub m_inv: MatJet,
}

impl SpectralJet {
    pub fn diag(&self) -> MatJet {
        let m = self.point.dim();
        let k = self.roots[0].order();
        let mut d = MatJet::zeros(m, k);
        for (j, r) in self.roots.iter().enumerate() {
            d.set_entry(j, j, r);
        }
        d
    }
}

/// Root jets by the bordered recursion
/// `(A_0 - l_0) v_k - l_k v_0 = -sum_{j>=1} A_j v_{k-j} + sum_{1<=j<k} l_j v_{k-j}`.
fn root_jet(a: &MatJet, lambda0: f64, v0: &CVec) -> Result<Jet> {
    let m = a.dim();
    let k = a.order();
    let piv = (0..m)
        .max_by(|&x, &y| v0[x].norm().partial_cmp(&v0[y].norm()).unwrap())
        .unwrap();
    let mut j = DMatrix::<C64>::zeros(m + 1, m + 1);
    for r in 0..m {
        for cc in 0..m {
            j[(r, cc)] = a.c[0][(r, cc)];
        }
        j[(r, r)] -= c(lambda0);
        j[(r, m)] = -v0[r];
    }
    j[(m, piv)] = c(1.0);
    let lu = j.lu();
    let mut lam = vec![c(lambda0)];
    let mut vs = vec![v0.clone()];
    for n in 1..=k {
        let mut rhs = CVec::zeros(m);
        for jj in 1..=n {
            rhs -= &a.c[jj] * &vs[n - jj];
        }
        for jj in 1..n {
            rhs += &vs[n - jj] * lam[jj];
        }
        let mut full = nalgebra::DVector::<C64>::zeros(m + 1);
        full.rows_mut(0, m).copy_from(&rhs);
        let sol = lu
            .solve(&full)
            .ok_or_else(|| Error::SpectralGap("singular bordered system".into()))?;
        lam.push(sol[m]);
        vs.push(sol.rows(0, m).into_owned());
    }
    Ok(Jet { c: lam })
}

/// Root jets only, matched to the roots of `point`.
pub fn root_jets(a1: &MatJet, point: &SpectralPoint) -> Result<Vec<Jet>> {
    (0..a1.dim())
        .map(|j| {
            let v0 = point.m.column(j).into_owned();
            let mut r = root_jet(a1, point.roots[j], &v0)?;
            r.c[0] = c(point.roots[j]);
            Ok(r)
        })
        .collect()
}

/// Spectral jets with axes and signs locked to `point`.
pub fn decompose_jet_at(a1: &MatJet, point: &SpectralPoint) -> Result<SpectralJet> {
    let m = a1.dim();
    let k = a1.order();
    let mut roots = Vec::with_capacity(m);
    for j in 0..m {
        let v0 = point.m.column(j).into_owned();
        let mut r = root_jet(a1, point.roots[j], &v0)?;
        r.c[0] = c(point.roots[j]);
        roots.push(r);
    }
    let ident = MatJet::identity(m, k);
    let mut projections = Vec::with_capacity(m);
    for j in 0..m {
        let mut p = ident.clone();
        for i in 0..m {
            if i == j {
                continue;
            }
            let shifted = a1.sub(&ident.scale_jet(&roots[i]));
            let inv = roots[j].sub(&roots[i]).recip();
            p = p.mul(&shifted.scale_jet(&inv));
        }
        projections.push(p);
    }
    let mut mm = MatJet::zeros(m, k);
    for j in 0..m {
        let ax = point.axes[j];
        let col: Vec<Jet> = (0..m).map(|r| projections[j].entry(r, ax)).collect();
        let mut nsq = Jet::zero(k);
        for x in &col {
            nsq = nsq.add(&x.mul(&x.conj()));
        }
        let inv = nsq.sqrt().recip().scale(c(point.signs[j]));
        for (r, x) in col.iter().enumerate() {
            mm.set_entry(r, j, &x.mul(&inv));
        }
    }
    let m_inv = mm
        .inverse()
        .ok_or_else(|| Error::Conditioning("singular eigenbasis jet".into()))?;
    Ok(SpectralJet { point: point.clone(), roots, projections, m: mm, m_inv })
}

pub fn decompose_jet(a1: &MatJet, opts: &SpectralOptions, reference: Option<&SpectralPoint>) -> Result<SpectralJet> {
    let point = decompose(&a1.c[0], opts, reference)?;
    decompose_jet_at(a1, &point)
}

/// `F_0 = diag(M^{-1} (A - A_1) M - M^{-1} D_t M)` from jets of `A` and `A_1`.
pub fn compute_f0(a: &MatJet, a1: &MatJet, opts: &SpectralOptions) -> Result<CMat> {
    let sj = decompose_jet(&a1.truncate(1.max(a1.order())), opts, None)?;
    let lower = a.sub(a1);
    let term = sj.m_inv.mul(&lower).mul(&sj.m).sub(&sj.m_inv.mul(&sj.m.dt()));
    Ok(CMat::from_diagonal(&term.c[0].diagonal()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm_max, real_matrix};

    #[test]
    fn projections_resolve_identity() {
        let a = real_matrix(3, 3, &[1.0, 2.0, 0.0, 0.5, -1.0, 0.3, 0.0, 0.2, 3.0]);
        let sp = decompose(&a, &SpectralOptions::default(), None).unwrap();
        let mut sum = CMat::zeros(3, 3);
        let mut recon = CMat::zeros(3, 3);
        for (j, p) in sp.projections.iter().enumerate() {
            sum += p;
            recon += p * c(sp.roots[j]);
            assert!(norm_max(&(p * p - p)) < 1e-12);
        }
        assert!(norm_max(&(sum - CMat::identity(3, 3))) < 1e-12);
        assert!(norm_max(&(recon - &a)) < 1e-12);
        let d = &sp.m_inv * &a * &sp.m;
        assert!(norm_max(&(d - sp.diag())) < 1e-12);
        let ha = sp.symmetriser() * &a;
        assert!(norm_max(&(&ha - ha.adjoint())) < 1e-12);
    }

    #[test]
    fn rejects_degenerate_and_complex() {
        let a = real_matrix(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(decompose(&a, &SpectralOptions::default(), None), Err(Error::SpectralGap(_))));
        let a = real_matrix(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(matches!(decompose(&a, &SpectralOptions::default(), None), Err(Error::SpectralGap(_))));
        let a = real_matrix(2, 2, &[1.0, 1e3, 0.0, 1.0 + 1e-6]);
        assert!(matches!(decompose(&a, &SpectralOptions::default(), None), Err(Error::Conditioning(_))));
    }

    #[test]
    fn jets_match_finite_differences() {
        let f = |t: f64| real_matrix(2, 2, &[t.sin(), 2.0 + t, 1.0 + 0.5 * t * t, -1.0]);
        let t0 = 0.4;
        let mut aj = MatJet::zeros(2, 4);
        aj.c[0] = f(t0);
        aj.c[1] = real_matrix(2, 2, &[t0.cos(), 1.0, t0, 0.0]);
        aj.c[2] = real_matrix(2, 2, &[-t0.sin() / 2.0, 0.0, 0.5, 0.0]);
        aj.c[3] = real_matrix(2, 2, &[-t0.cos() / 6.0, 0.0, 0.0, 0.0]);
        aj.c[4] = real_matrix(2, 2, &[t0.sin() / 24.0, 0.0, 0.0, 0.0]);
        let sj = decompose_jet(&aj, &SpectralOptions::default(), None).unwrap();
        let h = 1e-4;
        let p = decompose(&f(t0 + h), &SpectralOptions::default(), Some(&sj.point)).unwrap();
        let mm = decompose(&f(t0 - h), &SpectralOptions::default(), Some(&sj.point)).unwrap();
        for j in 0..2 {
            let d = (p.roots[j] - mm.roots[j]) / (2.0 * h);
            assert!((sj.roots[j].c[1].re - d).abs() < 1e-7);
        }
        let dm = (&p.m - &mm.m) * c(1.0 / (2.0 * h));
        assert!(norm_max(&(dm - &sj.m.c[1])) < 1e-7);
        let mut s = sj.projections[0].add(&sj.projections[1]);
        s.c[0] -= CMat::identity(2, 2);
        for k in 0..=4 {
            assert!(norm_max(&s.c[k]) < 1e-12);
        }
        let id = sj.m.mul(&sj.m_inv);
        assert!(norm_max(&(id.c[3].clone())) < 1e-12);
    }
}
