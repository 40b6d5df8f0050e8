//! Small dense complex linear algebra helpers.

use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64 as C64;

pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Spectral norm.
pub fn norm2(a: &CMat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.clone().singular_values().max()
}

pub fn norm_fro(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn norm_max(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Condition number in the spectral norm.
pub fn cond2(a: &CMat) -> f64 {
    let s = a.clone().singular_values();
    let mx = s.max();
    let mn = s.min();
    if mn <= 0.0 {
        f64::INFINITY
    } else {
        mx / mn
    }
}

/// Eigenvalues of a general complex matrix via the Schur form.
pub fn eigenvalues(a: &CMat) -> Vec<C64> {
    let m = a.nrows();
    if m == 1 {
        return vec![a[(0, 0)]];
    }
    if m == 2 {
        let tr = a[(0, 0)] + a[(1, 1)];
        let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        let disc = (tr * tr * 0.25 - det).sqrt();
        return vec![tr * 0.5 - disc, tr * 0.5 + disc];
    }
    match a.clone().schur().eigenvalues() {
        Some(v) => v.iter().copied().collect(),
        None => nalgebra::Schur::new(a.clone()).eigenvalues().unwrap().iter().copied().collect(),
    }
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let h = (a + a.adjoint()) * c(0.5);
    let mut v: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    v
}

/// Hermitian part of `(A - A^*) / 2i`.
pub fn imag_part(a: &CMat) -> CMat {
    (a - a.adjoint()) * C64::new(0.0, -0.5)
}

/// `exp(A)` by scaling and squaring with a Taylor kernel.
pub fn expm(a: &CMat) -> CMat {
    let m = a.nrows();
    let nrm = norm_fro(a);
    let mut s = 0u32;
    if nrm > 0.5 {
        s = (nrm / 0.5).log2().ceil() as u32;
    }
    let scaled = a * c(1.0 / 2f64.powi(s as i32));
    let mut term = CMat::identity(m, m);
    let mut sum = CMat::identity(m, m);
    for k in 1..30 {
        term = &term * &scaled * c(1.0 / k as f64);
        sum += &term;
        if norm_fro(&term) < 1e-18 * norm_fro(&sum) {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

pub fn real_matrix(rows: usize, cols: usize, data: &[f64]) -> CMat {
    CMat::from_row_iterator(rows, cols, data.iter().map(|x| c(*x)))
}
