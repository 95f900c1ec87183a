//! Complex scalars, polynomials, 2x2 matrices, root finding and quadrature.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::PI;
use num_complex::Complex;
use std::ops::{Add, Mul, Neg, Sub};
use twofloat::TwoFloat;

pub type C = Complex64;

/// Complex number in double-double precision.
pub type Cdd = Complex<TwoFloat>;

pub fn to_dd(z: C) -> Cdd {
    Cdd::new(TwoFloat::from(z.re), TwoFloat::from(z.im))
}

pub fn from_dd(z: Cdd) -> C {
    C::new(f64::from(z.re), f64::from(z.im))
}

pub const I: C = C { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

#[inline]
pub fn re(x: f64) -> C {
    C::new(x, 0.0)
}

/// Principal square root with argument in (-pi, pi].
///
/// A negative zero imaginary part is treated as +0 so that the negative real
/// axis always maps to the positive imaginary axis.
pub fn csqrt(z: C) -> C {
    let z = if z.im == 0.0 { C::new(z.re, 0.0) } else { z };
    z.sqrt()
}

pub fn is_finite(z: C) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

/// Bilinear (not Hermitian) inner product.
pub fn dot(x: &[C], y: &[C]) -> C {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn max_abs(x: &[C]) -> f64 {
    x.iter().fold(0.0, |m, z| m.max(z.norm()))
}

/// Polynomial with coefficients stored lowest degree first.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Poly {
    pub coeffs: Vec<C>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<C>) -> Self {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == C::new(0.0, 0.0) {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(C::new(0.0, 0.0));
        }
        Poly { coeffs }
    }

    pub fn constant(a: C) -> Self {
        Poly::new(vec![a])
    }

    /// Monic polynomial with the given roots.
    pub fn from_roots(roots: &[C]) -> Self {
        let mut p = Poly::constant(re(1.0));
        for &r in roots {
            p = &p * &Poly::new(vec![-r, re(1.0)]);
        }
        p
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0] == C::new(0.0, 0.0)
    }

    pub fn leading(&self) -> C {
        *self.coeffs.last().unwrap()
    }

    pub fn eval(&self, x: C) -> C {
        self.coeffs.iter().rev().fold(C::new(0.0, 0.0), |acc, &a| acc * x + a)
    }

    pub fn derivative(&self) -> Poly {
        if self.coeffs.len() == 1 {
            return Poly::constant(C::new(0.0, 0.0));
        }
        Poly::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &a)| a * k as f64)
                .collect(),
        )
    }

    pub fn scale(&self, s: C) -> Poly {
        Poly::new(self.coeffs.iter().map(|&a| a * s).collect())
    }

    pub fn max_coeff(&self) -> f64 {
        max_abs(&self.coeffs)
    }

    /// Drop leading coefficients that are negligible relative to the largest one.
    pub fn trimmed(&self, rel: f64) -> Poly {
        let cut = rel * self.max_coeff();
        let mut v = self.coeffs.clone();
        while v.len() > 1 && v.last().unwrap().norm() <= cut {
            v.pop();
        }
        Poly::new(v)
    }

    /// All roots with multiplicity.
    pub fn roots(&self) -> Result<Vec<C>> {
        poly_roots(self)
    }
}

impl<'a> Mul<&'a Poly> for &'a Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        let mut out = vec![C::new(0.0, 0.0); self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in rhs.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }
}

impl<'a> Add<&'a Poly> for &'a Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        let get = |p: &Poly, k: usize| p.coeffs.get(k).copied().unwrap_or_default();
        Poly::new((0..n).map(|k| get(self, k) + get(rhs, k)).collect())
    }
}

impl<'a> Sub<&'a Poly> for &'a Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        self + &rhs.scale(re(-1.0))
    }
}

/// Roots of a polynomial by Aberth iteration followed by Newton polishing.
pub fn poly_roots(p: &Poly) -> Result<Vec<C>> {
    if p.is_zero() {
        return Err(Error::Degenerate("zero polynomial has no finite root set".into()));
    }
    let n = p.degree();
    if n == 0 {
        return Err(Error::Degenerate("constant polynomial".into()));
    }
    let lead = p.leading();
    let monic = p.scale(lead.inv());
    if n == 1 {
        return Ok(vec![-monic.coeffs[0]]);
    }
    let dp = monic.derivative();
    // Cauchy bound sets the radius of the initial circle.
    let radius = 1.0 + monic.coeffs[..n].iter().fold(0.0f64, |m, a| m.max(a.norm()));
    let centre = -monic.coeffs[n - 1] / n as f64;
    let mut z: Vec<C> = (0..n)
        .map(|k| {
            let th = 2.0 * PI * k as f64 / n as f64 + 0.4;
            centre + C::from_polar(0.5 * radius, th)
        })
        .collect();
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in 0..n {
            let pv = monic.eval(z[i]);
            if pv == C::new(0.0, 0.0) {
                continue;
            }
            let ratio = pv / dp.eval(z[i]);
            let mut s = C::new(0.0, 0.0);
            for j in 0..n {
                if j != i {
                    s += (z[i] - z[j]).inv();
                }
            }
            let w = ratio / (C::new(1.0, 0.0) - ratio * s);
            if is_finite(w) {
                z[i] -= w;
                moved = moved.max(w.norm() / (1.0 + z[i].norm()));
            }
        }
        if moved < 1e-16 {
            break;
        }
    }
    for r in z.iter_mut() {
        for _ in 0..3 {
            let d = dp.eval(*r);
            if d.norm() == 0.0 {
                break;
            }
            let step = monic.eval(*r) / d;
            let cand = *r - step;
            if is_finite(cand) && monic.eval(cand).norm() <= monic.eval(*r).norm() {
                *r = cand;
            } else {
                break;
            }
        }
    }
    Ok(z)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gl_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { t } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (t * pn - pm) / (t * t - 1.0);
            let dt = pn / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -t;
        x[n - 1 - i] = t;
        w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Fixed-order Gauss-Legendre estimate of the integral of `f` over [0, 1].
pub fn gauss_legendre<F: Fn(f64) -> C>(f: F, n_nodes: usize) -> Result<C> {
    let (x, w) = gl_nodes(n_nodes.max(2));
    let mut s = C::new(0.0, 0.0);
    for (xi, wi) in x.iter().zip(&w) {
        let t = 0.5 * (xi + 1.0);
        let v = f(t);
        if !is_finite(v) {
            return Err(Error::Quadrature { node: t });
        }
        s += v * (0.5 * wi);
    }
    Ok(s)
}

/// Doubles the node count until two successive estimates agree to `tol`
/// relative to `1 + |estimate|`.
pub fn gauss_legendre_adaptive<F: Fn(f64) -> C>(f: F, tol: f64) -> Result<C> {
    let mut n = 16;
    let mut prev = gauss_legendre(&f, n)?;
    let mut diff = f64::INFINITY;
    while n < 4096 {
        n *= 2;
        let cur = gauss_legendre(&f, n)?;
        diff = (cur - prev).norm();
        if diff <= tol * (1.0 + cur.norm()) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::QuadratureNoConvergence { diff })
}

/// 2x2 complex matrix `[[a, b], [c, d]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub a: C,
    pub b: C,
    pub c: C,
    pub d: C,
}

impl Mat2 {
    pub fn new(a: C, b: C, c: C, d: C) -> Self {
        Mat2 { a, b, c, d }
    }

    pub fn identity() -> Self {
        Mat2::new(re(1.0), re(0.0), re(0.0), re(1.0))
    }

    pub fn scalar(s: C) -> Self {
        Mat2::new(s, re(0.0), re(0.0), s)
    }

    pub fn det(&self) -> C {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> C {
        self.a + self.d
    }

    /// Max absolute entry.
    pub fn norm(&self) -> f64 {
        self.a.norm().max(self.b.norm()).max(self.c.norm()).max(self.d.norm())
    }

    pub fn scale(&self, s: C) -> Mat2 {
        Mat2::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }

    pub fn commutator(&self, o: &Mat2) -> Mat2 {
        *self * *o - *o * *self
    }

    pub fn entry(&self, i: usize, j: usize) -> C {
        match (i, j) {
            (0, 0) => self.a,
            (0, 1) => self.b,
            (1, 0) => self.c,
            _ => self.d,
        }
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self.scale(re(-1.0))
    }
}

/// `m` equally spaced points on a circle.
pub fn circle_points(m: usize, centre: C, radius: f64) -> Vec<C> {
    (0..m)
        .map(|j| centre + C::from_polar(radius, 2.0 * PI * j as f64 / m as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: C, b: C, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    fn sorted_re(mut v: Vec<C>) -> Vec<C> {
        v.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        v
    }

    #[test]
    fn quadratic_roots() {
        let r = sorted_re(poly_roots(&Poly::new(vec![re(2.0), re(-3.0), re(1.0)])).unwrap());
        assert!(close(r[0], re(1.0), 1e-12) && close(r[1], re(2.0), 1e-12));
    }

    #[test]
    fn linear_root() {
        let r = poly_roots(&Poly::new(vec![re(1.0), re(1.0)])).unwrap();
        assert!(close(r[0], re(-1.0), 1e-15));
    }

    #[test]
    fn double_root() {
        let p = Poly::from_roots(&[re(1.0), re(1.0), re(2.0)]);
        let r = sorted_re(poly_roots(&p).unwrap());
        assert!(close(r[0], re(1.0), 1e-7));
        assert!(close(r[1], re(1.0), 1e-7));
        assert!(close(r[2], re(2.0), 1e-7));
        for z in r {
            assert!(p.eval(z).norm() <= 1e-9 * p.max_coeff());
        }
    }

    #[test]
    fn zero_poly_rejected() {
        assert!(matches!(poly_roots(&Poly::new(vec![])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn complex_roots_residual() {
        let roots = [c(0.3, 1.2), c(-2.0, 0.1), c(1.5, -0.7), c(0.0, -3.0), c(4.0, 0.0)];
        let p = Poly::from_roots(&roots).scale(c(2.0, -1.0));
        for z in poly_roots(&p).unwrap() {
            assert!(p.eval(z).norm() <= 1e-9 * p.max_coeff());
        }
    }

    #[test]
    fn gl_constant_and_square() {
        assert!(close(gauss_legendre(|_| re(1.0), 2).unwrap(), re(1.0), 1e-15));
        assert!(close(gauss_legendre(|t| re(t * t), 2).unwrap(), re(1.0 / 3.0), 1e-14));
    }

    #[test]
    fn gl_inverse_sqrt() {
        let v = gauss_legendre_adaptive(|t| re(1.0 / (t + 1.0).sqrt()), 1e-13).unwrap();
        assert!(close(v, re(2.0 * (2f64.sqrt() - 1.0)), 1e-10));
    }

    #[test]
    fn gl_polynomial_exactness() {
        for n in [2usize, 3, 5, 8, 13] {
            let deg = 2 * n - 1;
            let v = gauss_legendre(|t| re((deg as f64 + 1.0) * t.powi(deg as i32)), n).unwrap();
            assert!((v - re(1.0)).norm() <= 1e-13);
        }
    }

    #[test]
    fn gl_reports_bad_node() {
        assert!(matches!(gauss_legendre(|_| re(f64::NAN), 4), Err(Error::Quadrature { .. })));
    }

    #[test]
    fn det_identity() {
        assert_eq!(Mat2::identity().det(), re(1.0));
    }

    #[test]
    fn csqrt_cut() {
        assert!(close(csqrt(c(-4.0, -0.0)), c(0.0, 2.0), 1e-15));
        assert!(close(csqrt(c(-4.0, 0.0)), c(0.0, 2.0), 1e-15));
    }

    proptest::proptest! {
        #[test]
        fn det_multiplicative(v in proptest::collection::vec(-1.0f64..1.0, 16)) {
            let a = Mat2::new(c(v[0], v[1]), c(v[2], v[3]), c(v[4], v[5]), c(v[6], v[7]));
            let b = Mat2::new(c(v[8], v[9]), c(v[10], v[11]), c(v[12], v[13]), c(v[14], v[15]));
            let lhs = (a * b).det();
            let rhs = a.det() * b.det();
            proptest::prop_assert!((lhs - rhs).norm() <= 1e-13 * (1.0 + a.det().norm() * b.det().norm()));
        }

        #[test]
        fn roots_have_small_residual(v in proptest::collection::vec(-2.0f64..2.0, 12)) {
            let p = Poly::new((0..6).map(|k| c(v[2 * k], v[2 * k + 1])).chain([re(1.0)]).collect());
            for z in poly_roots(&p).unwrap() {
                proptest::prop_assert!(p.eval(z).norm() <= 1e-9 * p.max_coeff());
            }
        }
    }
}
