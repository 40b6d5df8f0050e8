//! Truncated Taylor arithmetic in one real variable with complex coefficients.
//!
//! A jet of order `K` stores `f(t0 + h) = sum_k c[k] h^k + O(h^{K+1})`, so
//! `c[k] = f^{(k)}(t0) / k!`.

use crate::linalg::{CMat, C64};
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub c: Vec<C64>,
}

impl Jet {
    pub fn constant(v: C64, order: usize) -> Self {
        let mut c = vec![C64::new(0.0, 0.0); order + 1];
        c[0] = v;
        Jet { c }
    }

    pub fn zero(order: usize) -> Self {
        Jet { c: vec![C64::new(0.0, 0.0); order + 1] }
    }

    /// The independent variable expanded at `t0`.
    pub fn variable(t0: f64, order: usize) -> Self {
        let mut j = Jet::constant(C64::new(t0, 0.0), order);
        if order >= 1 {
            j.c[1] = C64::new(1.0, 0.0);
        }
        j
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    pub fn value(&self) -> C64 {
        self.c[0]
    }

    /// `k`-th derivative at the expansion point.
    pub fn derivative(&self, k: usize) -> C64 {
        if k >= self.c.len() {
            return C64::new(0.0, 0.0);
        }
        self.c[k] * factorial(k)
    }

    pub fn truncate(&self, order: usize) -> Self {
        let mut c = self.c.clone();
        c.resize(order + 1, C64::new(0.0, 0.0));
        Jet { c }
    }

    pub fn is_constant(&self) -> bool {
        self.c[1..].iter().all(|z| *z == C64::new(0.0, 0.0))
    }

    pub fn scale(&self, s: C64) -> Self {
        Jet { c: self.c.iter().map(|z| z * s).collect() }
    }

    pub fn conj(&self) -> Self {
        Jet { c: self.c.iter().map(|z| z.conj()).collect() }
    }

    /// `d/dt`, losing one order.
    pub fn diff(&self) -> Self {
        let k = self.order();
        let mut c = vec![C64::new(0.0, 0.0); k.max(1)];
        for (i, ci) in c.iter_mut().enumerate().take(k) {
            *ci = self.c[i + 1] * (i as f64 + 1.0);
        }
        Jet { c }
    }

    /// `D_t = -i d/dt`, losing one order.
    pub fn dt(&self) -> Self {
        self.diff().scale(C64::new(0.0, -1.0))
    }

    pub fn recip(&self) -> Self {
        Jet::constant(C64::new(1.0, 0.0), self.order()).div(self)
    }

    pub fn div(&self, b: &Jet) -> Self {
        let k = self.order().min(b.order());
        let mut c = vec![C64::new(0.0, 0.0); k + 1];
        let b0 = b.c[0];
        for n in 0..=k {
            let mut acc = self.c[n];
            for j in 1..=n {
                acc -= b.c[j] * c[n - j];
            }
            c[n] = acc / b0;
        }
        Jet { c }
    }

    pub fn exp(&self) -> Self {
        let k = self.order();
        let mut e = vec![C64::new(0.0, 0.0); k + 1];
        e[0] = self.c[0].exp();
        for n in 1..=k {
            let mut acc = C64::new(0.0, 0.0);
            for j in 1..=n {
                acc += self.c[j] * e[n - j] * j as f64;
            }
            e[n] = acc / n as f64;
        }
        Jet { c: e }
    }

    pub fn ln(&self) -> Self {
        let k = self.order();
        let a0 = self.c[0];
        let mut l = vec![C64::new(0.0, 0.0); k + 1];
        l[0] = a0.ln();
        for n in 1..=k {
            let mut acc = self.c[n] * n as f64;
            for j in 1..n {
                acc -= l[j] * self.c[n - j] * j as f64;
            }
            l[n] = acc / (a0 * n as f64);
        }
        Jet { c: l }
    }

    pub fn sin_cos(&self) -> (Self, Self) {
        let k = self.order();
        let mut s = vec![C64::new(0.0, 0.0); k + 1];
        let mut c = vec![C64::new(0.0, 0.0); k + 1];
        s[0] = self.c[0].sin();
        c[0] = self.c[0].cos();
        for n in 1..=k {
            let mut accs = C64::new(0.0, 0.0);
            let mut accc = C64::new(0.0, 0.0);
            for j in 1..=n {
                let w = self.c[j] * j as f64;
                accs += w * c[n - j];
                accc -= w * s[n - j];
            }
            s[n] = accs / n as f64;
            c[n] = accc / n as f64;
        }
        (Jet { c: s }, Jet { c })
    }

    pub fn sqrt(&self) -> Self {
        let k = self.order();
        let mut r = vec![C64::new(0.0, 0.0); k + 1];
        r[0] = self.c[0].sqrt();
        for n in 1..=k {
            let mut acc = self.c[n];
            for j in 1..n {
                acc -= r[j] * r[n - j];
            }
            r[n] = acc / (r[0] * 2.0);
        }
        Jet { c: r }
    }

    /// Power with a constant exponent.
    pub fn powc(&self, b: C64) -> Self {
        let k = self.order();
        let a0 = self.c[0];
        let mut p = vec![C64::new(0.0, 0.0); k + 1];
        if a0 == C64::new(0.0, 0.0) {
            if self.is_constant() {
                p[0] = if b == C64::new(0.0, 0.0) { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
                return Jet { c: p };
            }
            return self.ln().mul(&Jet::constant(b, k)).exp();
        }
        p[0] = a0.powc(b);
        for n in 1..=k {
            let mut acc = C64::new(0.0, 0.0);
            for j in 1..=n {
                acc += (b * j as f64 - (n - j) as f64) * self.c[j] * p[n - j];
            }
            p[n] = acc / (a0 * n as f64);
        }
        Jet { c: p }
    }

    pub fn pow(&self, b: &Jet) -> Self {
        if b.is_constant() {
            self.powc(b.c[0])
        } else {
            self.ln().mul(b).exp()
        }
    }

    /// `exp(-1/a)` for `Re a > 0`, zero otherwise.
    pub fn expinv(&self) -> Self {
        if self.c[0].re <= 0.0 {
            return Jet::zero(self.order());
        }
        self.recip().neg().exp()
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, b: &Jet) -> Jet {
        let k = self.order().min(b.order());
        Jet { c: (0..=k).map(|i| self.c[i] + b.c[i]).collect() }
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, b: &Jet) -> Jet {
        let k = self.order().min(b.order());
        Jet { c: (0..=k).map(|i| self.c[i] - b.c[i]).collect() }
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, b: &Jet) -> Jet {
        let k = self.order().min(b.order());
        let mut c = vec![C64::new(0.0, 0.0); k + 1];
        for (i, ai) in self.c.iter().enumerate().take(k + 1) {
            if *ai == C64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..=(k - i) {
                c[i + j] += ai * b.c[j];
            }
        }
        Jet { c }
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet { c: self.c.iter().map(|z| -z).collect() }
    }
}

impl Jet {
    pub fn add(&self, b: &Jet) -> Jet {
        self + b
    }
    pub fn sub(&self, b: &Jet) -> Jet {
        self - b
    }
    pub fn mul(&self, b: &Jet) -> Jet {
        self * b
    }
    pub fn neg(&self) -> Jet {
        -self
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |a, i| a * i as f64)
}

/// Matrix-valued jet: `c[k]` is the `k`-th Taylor coefficient matrix.
#[derive(Clone, Debug)]
pub struct MatJet {
    pub c: Vec<CMat>,
}

impl MatJet {
    pub fn zeros(m: usize, order: usize) -> Self {
        MatJet { c: vec![CMat::zeros(m, m); order + 1] }
    }

    pub fn constant(a: CMat, order: usize) -> Self {
        let m = a.nrows();
        let mut c = vec![CMat::zeros(m, m); order + 1];
        c[0] = a;
        MatJet { c }
    }

    pub fn identity(m: usize, order: usize) -> Self {
        MatJet::constant(CMat::identity(m, m), order)
    }

    pub fn dim(&self) -> usize {
        self.c[0].nrows()
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    pub fn value(&self) -> &CMat {
        &self.c[0]
    }

    pub fn derivative(&self, k: usize) -> CMat {
        if k >= self.c.len() {
            return CMat::zeros(self.dim(), self.dim());
        }
        &self.c[k] * C64::new(factorial(k), 0.0)
    }

    pub fn truncate(&self, order: usize) -> Self {
        let m = self.dim();
        let mut c = self.c.clone();
        c.resize(order + 1, CMat::zeros(m, m));
        MatJet { c }
    }

    pub fn from_entries(m: usize, entries: &[Jet]) -> Self {
        let k = entries.iter().map(|e| e.order()).min().unwrap_or(0);
        let mut out = MatJet::zeros(m, k);
        for i in 0..m {
            for j in 0..m {
                let e = &entries[i * m + j];
                for (o, co) in out.c.iter_mut().enumerate() {
                    co[(i, j)] = e.c[o];
                }
            }
        }
        out
    }

    pub fn entry(&self, i: usize, j: usize) -> Jet {
        Jet { c: self.c.iter().map(|a| a[(i, j)]).collect() }
    }

    pub fn set_entry(&mut self, i: usize, j: usize, v: &Jet) {
        for (o, co) in self.c.iter_mut().enumerate() {
            co[(i, j)] = if o < v.c.len() { v.c[o] } else { C64::new(0.0, 0.0) };
        }
    }

    pub fn add(&self, b: &MatJet) -> MatJet {
        let k = self.order().min(b.order());
        MatJet { c: (0..=k).map(|i| &self.c[i] + &b.c[i]).collect() }
    }

    pub fn sub(&self, b: &MatJet) -> MatJet {
        let k = self.order().min(b.order());
        MatJet { c: (0..=k).map(|i| &self.c[i] - &b.c[i]).collect() }
    }

    pub fn mul(&self, b: &MatJet) -> MatJet {
        let k = self.order().min(b.order());
        let m = self.dim();
        let mut c = vec![CMat::zeros(m, m); k + 1];
        for i in 0..=k {
            for j in 0..=(k - i) {
                c[i + j] += &self.c[i] * &b.c[j];
            }
        }
        MatJet { c }
    }

    pub fn scale_jet(&self, s: &Jet) -> MatJet {
        let k = self.order().min(s.order());
        let m = self.dim();
        let mut c = vec![CMat::zeros(m, m); k + 1];
        for i in 0..=k {
            for j in 0..=(k - i) {
                c[i + j] += &self.c[i] * s.c[j];
            }
        }
        MatJet { c }
    }

    pub fn scale(&self, s: C64) -> MatJet {
        MatJet { c: self.c.iter().map(|a| a * s).collect() }
    }

    pub fn diag_part(&self) -> MatJet {
        MatJet {
            c: self
                .c
                .iter()
                .map(|a| CMat::from_diagonal(&a.diagonal()))
                .collect(),
        }
    }

    pub fn off_diag_part(&self) -> MatJet {
        self.sub(&self.diag_part())
    }

    /// `D_t = -i d/dt`, losing one order.
    pub fn dt(&self) -> MatJet {
        let k = self.order();
        let m = self.dim();
        let mut c = vec![CMat::zeros(m, m); k.max(1)];
        for (i, ci) in c.iter_mut().enumerate().take(k) {
            *ci = &self.c[i + 1] * C64::new(0.0, -(i as f64 + 1.0));
        }
        MatJet { c }
    }

    /// Inverse by the Neumann-type recursion on Taylor coefficients.
    pub fn inverse(&self) -> Option<MatJet> {
        let inv0 = self.c[0].clone().try_inverse()?;
        let k = self.order();
        let m = self.dim();
        let mut c = vec![CMat::zeros(m, m); k + 1];
        c[0] = inv0.clone();
        for n in 1..=k {
            let mut acc = CMat::zeros(m, m);
            for j in 1..=n {
                acc += &self.c[j] * &c[n - j];
            }
            c[n] = -(&inv0 * acc);
        }
        Some(MatJet { c })
    }

    pub fn commutator(&self, b: &MatJet) -> MatJet {
        self.mul(b).sub(&b.mul(self))
    }
}
