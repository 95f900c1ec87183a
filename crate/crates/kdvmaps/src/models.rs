//! Lax matrices, Darboux matrices, generating functions, integrals and the
//! discrete-potential constraints of the three lattice models.

use crate::algebra::{circle_points, csqrt, dot, from_dd, max_abs, re, to_dd, Cdd, Mat2, Poly, C};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Which lattice equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    #[serde(rename = "lpkdv")]
    LpKdV,
    #[serde(rename = "lpmkdv")]
    LpmKdV,
    #[serde(rename = "lskdv")]
    LSKdV,
}

impl ModelId {
    pub const ALL: [ModelId; 3] = [ModelId::LpKdV, ModelId::LpmKdV, ModelId::LSKdV];

    /// True when the Lax matrix depends on the spectral parameter through its square.
    pub fn uses_zeta(self) -> bool {
        !matches!(self, ModelId::LpKdV)
    }

    /// Genus of the spectral curve for `n` degrees of freedom.
    pub fn genus(self, n: usize) -> usize {
        match self {
            ModelId::LpmKdV => n.saturating_sub(1),
            _ => n,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelId::LpKdV => "lpkdv",
            ModelId::LpmKdV => "lpmkdv",
            ModelId::LSKdV => "lskdv",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lpkdv" => Ok(ModelId::LpKdV),
            "lpmkdv" => Ok(ModelId::LpmKdV),
            "lskdv" => Ok(ModelId::LSKdV),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }
}

/// The canonical coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub p: Vec<C>,
    pub q: Vec<C>,
}

impl PhasePoint {
    pub fn new(p: Vec<C>, q: Vec<C>) -> Self {
        assert_eq!(p.len(), q.len(), "p and q must have equal length");
        PhasePoint { p, q }
    }

    pub fn from_real(p: &[f64], q: &[f64]) -> Self {
        PhasePoint::new(p.iter().map(|&x| re(x)).collect(), q.iter().map(|&x| re(x)).collect())
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    /// Max modulus over all coordinates.
    pub fn norm(&self) -> f64 {
        max_abs(&self.p).max(max_abs(&self.q))
    }

    pub fn dist(&self, o: &PhasePoint) -> f64 {
        let dp = self.p.iter().zip(&o.p).fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        self.q.iter().zip(&o.q).fold(dp, |m, (a, b)| m.max((a - b).norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(&self.q).all(|z| crate::algebra::is_finite(*z))
    }

    /// `self + h * d` componentwise.
    pub fn axpy(&self, h: C, d: &PhasePoint) -> PhasePoint {
        PhasePoint::new(
            self.p.iter().zip(&d.p).map(|(a, b)| a + h * b).collect(),
            self.q.iter().zip(&d.q).map(|(a, b)| a + h * b).collect(),
        )
    }

    pub fn neg(&self) -> PhasePoint {
        PhasePoint::new(self.p.iter().map(|z| -z).collect(), self.q.iter().map(|z| -z).collect())
    }

    /// Real coordinates ordered as (Re p, Im p, Re q, Im q).
    pub fn to_real(&self) -> Vec<f64> {
        let n = self.dim();
        let mut v = vec![0.0; 4 * n];
        for j in 0..n {
            v[j] = self.p[j].re;
            v[n + j] = self.p[j].im;
            v[2 * n + j] = self.q[j].re;
            v[3 * n + j] = self.q[j].im;
        }
        v
    }

    pub fn from_real_coords(v: &[f64]) -> PhasePoint {
        let n = v.len() / 4;
        PhasePoint::new(
            (0..n).map(|j| C::new(v[j], v[n + j])).collect(),
            (0..n).map(|j| C::new(v[2 * n + j], v[3 * n + j])).collect(),
        )
    }
}

/// Choice of root in the quadratic potential constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BranchSign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl BranchSign {
    pub fn value(self) -> f64 {
        match self {
            BranchSign::Plus => 1.0,
            BranchSign::Minus => -1.0,
        }
    }

    pub fn from_i32(s: i32) -> Result<Self> {
        match s {
            1 => Ok(BranchSign::Plus),
            -1 => Ok(BranchSign::Minus),
            _ => Err(Error::Config(format!("branch sign must be +1 or -1, got {s}"))),
        }
    }

    pub fn flip(self) -> Self {
        match self {
            BranchSign::Plus => BranchSign::Minus,
            BranchSign::Minus => BranchSign::Plus,
        }
    }
}

/// Discrete potentials of the Darboux matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DarbouxParams {
    LpKdV { a: C, b: C },
    LpmKdV { a: C },
    /// `s` always satisfies `s * (a - 1/a) = beta`.
    LSKdV { a: C, s: C },
}

impl DarbouxParams {
    pub fn lskdv(a: C, beta: C) -> Self {
        DarbouxParams::LSKdV { a, s: beta / (a - a.inv()) }
    }

    /// The potential `a` shared by all three models.
    pub fn a(&self) -> C {
        match *self {
            DarbouxParams::LpKdV { a, .. } | DarbouxParams::LpmKdV { a } | DarbouxParams::LSKdV { a, .. } => a,
        }
    }
}

/// Darboux matrix of the lattice direction with parameter `beta`.
pub fn darboux_matrix(beta: C, params: &DarbouxParams, lambda: C) -> Mat2 {
    match *params {
        DarbouxParams::LpKdV { a, b } => Mat2::new(a, -lambda + beta + a * b, re(1.0), b),
        DarbouxParams::LpmKdV { a } => Mat2::new(lambda * a, beta, beta, lambda / a),
        DarbouxParams::LSKdV { a, s } => Mat2::new(lambda * a, beta * s, beta / s, lambda / a),
    }
}

/// A model together with its spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub id: ModelId,
    pub alpha: Vec<C>,
}

/// Relative size below which a denominator counts as zero.
pub const DEGENERACY_TOL: f64 = 1e-12;

fn nonzero(den: C, num_scale: f64, what: &str) -> Result<()> {
    if den.norm() <= DEGENERACY_TOL * (1.0 + num_scale) {
        Err(Error::Degenerate(format!("{what} vanishes")))
    } else {
        Ok(())
    }
}

fn dot_dd(x: &[C], y: &[C]) -> Cdd {
    x.iter().zip(y).fold(Cdd::default(), |s, (a, b)| s + to_dd(*a) * to_dd(*b))
}

impl Model {
    /// Validates the spectrum: distinct for LpKdV, distinct nonzero squares otherwise.
    pub fn new(id: ModelId, alpha: Vec<C>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Config("spectrum must be non-empty".into()));
        }
        let keys: Vec<C> = if id.uses_zeta() { alpha.iter().map(|a| a * a).collect() } else { alpha.clone() };
        for (i, x) in keys.iter().enumerate() {
            if !crate::algebra::is_finite(*x) {
                return Err(Error::Config("spectrum must be finite".into()));
            }
            if id.uses_zeta() && x.norm() < 1e-14 {
                return Err(Error::Config("spectrum values must be nonzero".into()));
            }
            for y in &keys[..i] {
                if (x - y).norm() <= 1e-12 * (1.0 + x.norm()) {
                    return Err(Error::Config("spectrum values must be pairwise distinct".into()));
                }
            }
        }
        Ok(Model { id, alpha })
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn genus(&self) -> usize {
        self.id.genus(self.n())
    }

    /// Spectral variable in which the curve lives: `lambda` or `lambda^2`.
    pub fn curve_var(&self, lambda: C) -> C {
        if self.id.uses_zeta() {
            lambda * lambda
        } else {
            lambda
        }
    }

    /// Pole locations of the Lax matrix in the curve variable.
    pub fn poles(&self) -> Vec<C> {
        if self.id.uses_zeta() {
            self.alpha.iter().map(|a| a * a).collect()
        } else {
            self.alpha.clone()
        }
    }

    /// `alpha(x) = prod (x - pole_j)` in the curve variable.
    pub fn alpha_poly(&self) -> Poly {
        Poly::from_roots(&self.poles())
    }

    pub fn alpha_at(&self, x: C) -> C {
        self.poles().iter().map(|e| x - e).product()
    }

    fn check_pole(&self, lambda: C) -> Result<()> {
        let x = self.curve_var(lambda);
        for e in self.poles() {
            if (x - e).norm() <= 1e-14 * (1.0 + e.norm()) {
                return Err(Error::Pole(format!("{lambda}")));
            }
        }
        Ok(())
    }

    /// `sum_j alpha_j^k x_j y_j / (lambda - alpha_j)` or, for the squared models,
    /// `sum_j alpha_j^k x_j y_j / (lambda^2 - alpha_j^2)`.
    pub fn qform(&self, lambda: C, k: i32, x: &[C], y: &[C]) -> C {
        let z = self.curve_var(lambda);
        self.alpha
            .iter()
            .zip(self.poles())
            .zip(x.iter().zip(y))
            .map(|((a, e), (xi, yi))| a.powi(k) * xi * yi / (z - e))
            .sum()
    }

    /// `<A^k x, y>`.
    pub fn aform(&self, k: i32, x: &[C], y: &[C]) -> C {
        self.alpha.iter().zip(x.iter().zip(y)).map(|(a, (xi, yi))| a.powi(k) * xi * yi).sum()
    }

    fn v_lpkdv(&self, x: &PhasePoint) -> Result<C> {
        let qq = dot(&x.q, &x.q);
        if qq.norm() <= DEGENERACY_TOL * (1.0 + x.norm().powi(2)) {
            return Err(Error::Degenerate("<q,q>".into()));
        }
        Ok(csqrt(qq))
    }

    fn v_on(&self, x: &PhasePoint, v: Option<C>) -> Result<C> {
        match v {
            Some(v) => Ok(v),
            None => self.v_lpkdv(x),
        }
    }

    /// LpKdV: the root of `<q,q>` nearest to `reference`, for continuation along a flow.
    pub fn continued_v(&self, x: &PhasePoint, reference: C) -> Result<C> {
        let v = self.v_lpkdv(x)?;
        Ok(if (v - reference).norm() <= (v + reference).norm() { v } else { -v })
    }

    pub fn lax_matrix(&self, x: &PhasePoint, lambda: C) -> Result<Mat2> {
        self.lax_matrix_on(x, lambda, None)
    }

    /// Lax matrix with an explicit LpKdV root `v` of `<q,q>`; `None` is the principal root.
    pub fn lax_matrix_on(&self, x: &PhasePoint, lambda: C, v: Option<C>) -> Result<Mat2> {
        self.check_pole(lambda)?;
        let (p, q) = (&x.p, &x.q);
        Ok(match self.id {
            ModelId::LpKdV => {
                let v = self.v_on(x, v)?;
                let a11 = v + self.qform(lambda, 0, p, q);
                Mat2::new(a11, -lambda - self.qform(lambda, 0, p, p), re(1.0) + self.qform(lambda, 0, q, q), -a11)
            }
            ModelId::LpmKdV => {
                let a11 = re(0.5) + self.qform(lambda, 2, p, q);
                Mat2::new(a11, -lambda * self.qform(lambda, 1, p, p), lambda * self.qform(lambda, 1, q, q), -a11)
            }
            ModelId::LSKdV => {
                let a11 = lambda * 0.5 + lambda * self.qform(lambda, 0, p, q);
                Mat2::new(
                    a11,
                    -dot(p, q) - self.qform(lambda, 1, p, p),
                    re(1.0) + self.qform(lambda, 1, q, q),
                    -a11,
                )
            }
        })
    }

    /// The continuous spectral matrix with its potentials replaced by
    /// squared-eigenfunction expressions.
    pub fn continuous_matrix(&self, x: &PhasePoint, lambda: C) -> Result<Mat2> {
        let (p, q) = (&x.p, &x.q);
        Ok(match self.id {
            ModelId::LpKdV => {
                let v = self.v_lpkdv(x)?;
                let w = dot(p, q) / v;
                Mat2::new(v, -lambda + w, re(1.0), -v)
            }
            ModelId::LpmKdV => {
                let v = -self.aform(1, p, p);
                let w = self.aform(1, q, q);
                let h = lambda * lambda * 0.5;
                Mat2::new(h, lambda * v, lambda * w, -h)
            }
            ModelId::LSKdV => {
                let v = dot(p, q);
                let w = self.aform(1, q, q) * 0.5;
                let d = -lambda * lambda * 0.5 + v + w;
                Mat2::new(d, lambda * v, -lambda, -d)
            }
        })
    }

    pub fn generating_function(&self, x: &PhasePoint, lambda: C) -> Result<C> {
        Ok(self.lax_matrix(x, lambda)?.det())
    }

    /// Generating function as a function of the curve variable.
    pub fn generating_in_curve_var(&self, x: &PhasePoint, z: C) -> Result<C> {
        let lambda = if self.id.uses_zeta() { csqrt(z) } else { z };
        self.generating_function(x, lambda)
    }

    /// `sum_j alpha_j^k x_j y_j / (z - e_j)` as a series in `1/z`, indexed as in [`Model::laurent`].
    fn moment_series(&self, k: i32, x: &[C], y: &[C], len: usize) -> Vec<Cdd> {
        let mut s = vec![Cdd::default(); len];
        let poles = self.poles();
        for j in 0..self.n() {
            let e = to_dd(poles[j]);
            let mut w = to_dd(x[j]) * to_dd(y[j]);
            for _ in 0..k {
                w *= to_dd(self.alpha[j]);
            }
            for c in s.iter_mut().skip(3) {
                *c += w;
                w *= e;
            }
        }
        s
    }

    /// Coefficients of `F` at infinity in the curve variable: entry `i` multiplies `z^(2-i)`,
    /// down to `z^(-order)`.
    pub fn laurent(&self, x: &PhasePoint, order: usize) -> Result<Vec<C>> {
        self.laurent_on(x, order, None)
    }

    /// Accumulated in double-double: on large states the terms cancel to several orders.
    fn laurent_on(&self, x: &PhasePoint, order: usize, v: Option<C>) -> Result<Vec<C>> {
        // Two spare terms so that products with a `z` factor are complete.
        let len = order + 5;
        let mul = |a: &[Cdd], b: &[Cdd]| {
            let mut r = vec![Cdd::default(); len];
            for (i, ai) in a.iter().enumerate() {
                for (j, bj) in b.iter().enumerate() {
                    if i + j >= 2 && i + j - 2 < len {
                        r[i + j - 2] += ai * bj;
                    }
                }
            }
            r
        };
        let times_z = |a: Vec<Cdd>| -> Vec<Cdd> { a.into_iter().skip(1).chain(std::iter::once(Cdd::default())).collect() };
        let diff = |a: &[Cdd], b: &[Cdd]| -> Vec<Cdd> { a.iter().zip(b).map(|(x, y)| y - x).collect() };
        let one = to_dd(re(1.0));
        let half = to_dd(re(0.5));
        let (p, q) = (&x.p, &x.q);
        let f = match self.id {
            ModelId::LpKdV => {
                let mut a = self.moment_series(0, p, q, len);
                a[2] += self.v_dd(x, v)?;
                let mut b = self.moment_series(0, p, p, len);
                b[1] += one;
                let mut c = self.moment_series(0, q, q, len);
                c[2] += one;
                diff(&mul(&a, &a), &mul(&b, &c))
            }
            ModelId::LpmKdV => {
                let mut a = self.moment_series(2, p, q, len);
                a[2] += half;
                let bc = times_z(mul(&self.moment_series(1, p, p, len), &self.moment_series(1, q, q, len)));
                diff(&mul(&a, &a), &bc)
            }
            ModelId::LSKdV => {
                let mut a = self.moment_series(0, p, q, len);
                a[2] += half;
                let mut b = self.moment_series(1, p, p, len);
                b[2] += dot_dd(p, q);
                let mut c = self.moment_series(1, q, q, len);
                c[2] += one;
                diff(&times_z(mul(&a, &a)), &mul(&b, &c))
            }
        };
        Ok(f.into_iter().take(order + 3).map(from_dd).collect())
    }

    /// LpKdV: the root `v` of `<q,q>` refined in double-double.
    fn v_dd(&self, x: &PhasePoint, v: Option<C>) -> Result<Cdd> {
        let v = self.v_on(x, v)?;
        let qq = dot_dd(&x.q, &x.q);
        let vd = to_dd(v);
        Ok(if v.norm() > 0.0 { vd + (qq - vd * vd) / (vd + vd) } else { vd })
    }

    /// The polynomial `F * alpha` in the curve variable, from the expansion at infinity.
    /// Samples of `det L * alpha` on a circle guard against an inconsistent expansion.
    pub fn numerator(&self, x: &PhasePoint) -> Result<Poly> {
        self.numerator_on(x, None)
    }

    fn numerator_on(&self, x: &PhasePoint, v: Option<C>) -> Result<Poly> {
        Ok(self.expansion(x, v)?.1)
    }

    /// The expansion at infinity to order `N` and the numerator built from it.
    fn expansion(&self, x: &PhasePoint, v: Option<C>) -> Result<(Vec<C>, Poly)> {
        let n = self.n();
        let deg = match self.id {
            ModelId::LpKdV | ModelId::LSKdV => n + 1,
            ModelId::LpmKdV => n,
        };
        let f = self.laurent_on(x, n, v)?;
        let al = self.alpha_poly();
        let coeff = |m: usize| -> C {
            (0..=n.min(m + n))
                .filter_map(|k| {
                    let i = 2 + k as isize - m as isize;
                    (i >= 0 && (i as usize) < f.len()).then(|| al.coeffs[k] * f[i as usize])
                })
                .sum()
        };
        let num = Poly::new((0..=deg).map(coeff).collect());
        let radius = 1.5 * max_abs(&self.poles()) + 1.0;
        for z in circle_points(4, re(0.0), radius) {
            let z = z * C::from_polar(1.0, 0.3);
            let lambda = if self.id.uses_zeta() { csqrt(z) } else { z };
            let l = self.lax_matrix_on(x, lambda, v)?;
            let alz = self.alpha_at(z);
            let scale = (l.a.norm().powi(2) + (l.b * l.c).norm()) * alz.norm() + num.eval(z).norm();
            let err = (l.det() * alz - num.eval(z)).norm();
            if err.is_nan() || err > 1e-8 * scale {
                return Err(Error::FitFailure(format!(
                    "generating function disagrees with its expansion at infinity (relative {:e})",
                    err / scale
                )));
            }
        }
        Ok((f, num))
    }

    /// Integrals read off from the expansion of the generating function:
    /// `F_1..F_N` for LpKdV and LSKdV, `F_0..F_{N-1}` for LpmKdV.
    pub fn integrals(&self, x: &PhasePoint) -> Result<Vec<C>> {
        self.integrals_on(x, None)
    }

    /// Integrals with an explicit LpKdV root `v` of `<q,q>`.
    pub fn integrals_on(&self, x: &PhasePoint, v: Option<C>) -> Result<Vec<C>> {
        let n = self.n();
        let (f, num) = self.expansion(x, v)?;
        // Entry `2 + k` of the expansion multiplies `z^(-k)`.
        Ok(match self.id {
            ModelId::LpmKdV => {
                let f0 = num.eval(re(0.0)) / self.alpha_poly().eval(re(0.0));
                std::iter::once(f0).chain(f[3..n + 2].iter().copied()).collect()
            }
            _ => f[3..n + 3].to_vec(),
        })
    }

    /// The first Hamiltonian.
    pub fn hamiltonian_h1(&self, x: &PhasePoint) -> Result<C> {
        let (p, q) = (&x.p, &x.q);
        Ok(match self.id {
            ModelId::LpKdV => {
                let v = self.v_lpkdv(x)?;
                0.5 * (self.aform(1, q, q) + dot(p, p)) - v * dot(p, q)
            }
            ModelId::LpmKdV => 0.5 * (self.aform(1, p, p) * self.aform(1, q, q) - self.aform(2, p, q)),
            ModelId::LSKdV => {
                let pq = dot(p, q);
                let f1 = -pq * pq - self.aform(2, p, q) + self.aform(1, p, p) + pq * self.aform(1, q, q);
                -0.5 * f1
            }
        })
    }

    /// Closed-form canonical vector field `(-dH1/dq, dH1/dp)`.
    pub fn h1_vector_field(&self, x: &PhasePoint) -> Result<PhasePoint> {
        self.h1_vector_field_on(x, None)
    }

    /// The first canonical vector field with an explicit LpKdV root `v` of `<q,q>`.
    pub fn h1_vector_field_on(&self, x: &PhasePoint, v: Option<C>) -> Result<PhasePoint> {
        let (p, q) = (&x.p, &x.q);
        let n = self.n();
        let mut dp = vec![C::new(0.0, 0.0); n];
        let mut dq = vec![C::new(0.0, 0.0); n];
        match self.id {
            ModelId::LpKdV => {
                let v = self.v_on(x, v)?;
                let w = dot(p, q) / v;
                for j in 0..n {
                    dp[j] = v * p[j] + (w - self.alpha[j]) * q[j];
                    dq[j] = p[j] - v * q[j];
                }
            }
            ModelId::LpmKdV => {
                let app = self.aform(1, p, p);
                let aqq = self.aform(1, q, q);
                for j in 0..n {
                    let a = self.alpha[j];
                    dp[j] = a * a * 0.5 * p[j] - a * app * q[j];
                    dq[j] = a * aqq * p[j] - a * a * 0.5 * q[j];
                }
            }
            ModelId::LSKdV => {
                let pq = dot(p, q);
                let h = self.aform(1, q, q) * 0.5;
                for j in 0..n {
                    let a = self.alpha[j];
                    let d = a * a * 0.5 + pq - h;
                    dp[j] = -d * p[j] + a * pq * q[j];
                    dq[j] = -a * p[j] + d * q[j];
                }
            }
        }
        Ok(PhasePoint::new(dp, dq))
    }

    /// Solves the quadratic constraint for the discrete potentials.
    ///
    /// The root is taken from whichever of the two algebraically equivalent
    /// expressions avoids cancellation; `sigma` multiplies the principal square root.
    pub fn potential_constraint(&self, beta: C, sigma: BranchSign, x: &PhasePoint) -> Result<DarbouxParams> {
        self.potential_constraint_on(beta, sigma, x, None)
    }

    /// LpKdV: `roots` gives the root `v` of `<q,q>` at `x` and a reference for the root at the
    /// image; `None` takes principal roots. Other models ignore it.
    pub fn potential_constraint_on(
        &self,
        beta: C,
        sigma: BranchSign,
        x: &PhasePoint,
        roots: Option<(C, C)>,
    ) -> Result<DarbouxParams> {
        let l = self.lax_matrix_on(x, beta, roots.map(|r| r.0))?;
        let s = sigma.value();
        let zb = self.curve_var(beta);
        let al = self.alpha_at(zb);
        let f = l.det();
        match self.id {
            ModelId::LpKdV => {
                let r = s * csqrt(-f * al * al) / al;
                let (n1, n2) = (-l.a + r, l.a + r);
                self.collision(r, l.a)?;
                nonzero(l.c, l.a.norm() + r.norm(), "1 + Q(q,q)")?;
                let b = if n1.norm() >= n2.norm() { n1 / l.c } else { l.b / n2 };
                let v = self.v_on(x, roots.map(|r| r.0))?;
                let b = self.lpkdv_polish(beta, v, b, x);
                let qt = self.lpkdv_qtilde(beta, b, x);
                let qq = dot(&qt, &qt);
                if qq.norm() <= DEGENERACY_TOL * (1.0 + max_abs(&qt).powi(2)) {
                    return Err(Error::Degenerate("<q~,q~>".into()));
                }
                // a = b + v + vt; on cancellation use a (vt - b - v) = beta - v^2.
                let vt = match roots {
                    Some((_, r)) if (csqrt(qq) + r).norm() < (csqrt(qq) - r).norm() => -csqrt(qq),
                    _ => csqrt(qq),
                };
                let bv = b + v;
                let a = if (bv + vt).norm() >= (vt - bv).norm() { bv + vt } else { (beta - v * v) / (vt - bv) };
                Ok(DarbouxParams::LpKdV { a, b })
            }
            ModelId::LpmKdV => {
                let r = s * csqrt(-4.0 * f * al * al) / (2.0 * al);
                self.collision(r, l.a)?;
                let (n1, n2) = (l.a + r, l.a - r);
                // Under p -> t p, q -> q / t the entries L12, L21 and `a` scale as t^2, t^-2, t^-2;
                // `kappa` is the invariant size of `a`.
                let g = (l.b * l.c).norm().sqrt();
                if g == 0.0 {
                    return Err(Error::Degenerate("L12 L21 vanishes".into()));
                }
                let a = if n1.norm() >= n2.norm() { n1 / l.b } else { -l.c / n2 };
                let kappa = a.norm() * l.b.norm() / g;
                if !(DEGENERACY_TOL..=1.0 / DEGENERACY_TOL).contains(&kappa) {
                    return Err(Error::Degenerate("a vanishes or diverges".into()));
                }
                Ok(DarbouxParams::LpmKdV { a })
            }
            ModelId::LSKdV => {
                let r = s * csqrt(-4.0 * zb * f * al * al) / (2.0 * al);
                let bl = beta * l.a;
                self.collision(r, bl)?;
                nonzero(l.b, bl.norm() + r.norm(), "<p,q> + Q(Ap,p)")?;
                let (n1, n2) = (bl + r, bl - r);
                let xr = if n1.norm() >= n2.norm() { n1 / l.b } else { -zb * l.c / n2 };
                let a2 = re(1.0) + xr;
                if a2.norm() <= DEGENERACY_TOL || xr.norm() <= DEGENERACY_TOL * (1.0 + a2.norm()) {
                    return Err(Error::Degenerate("a^2 in {0, 1}".into()));
                }
                Ok(DarbouxParams::lskdv(csqrt(a2), beta))
            }
        }
    }

    fn collision(&self, r: C, scale: C) -> Result<()> {
        if r.norm() <= 1e-12 * (1.0 + scale.norm()) {
            Err(Error::BranchCollision)
        } else {
            Ok(())
        }
    }

    /// Normalisation factors `(alpha_j - beta)^(-1/2)` or `(alpha_j^2 - beta^2)^(-1/2)`.
    pub fn normalisation(&self, beta: C) -> Vec<C> {
        let zb = self.curve_var(beta);
        self.poles().iter().map(|e| csqrt(e - zb).inv()).collect()
    }

    /// Newton steps on `b (b + 2v) + beta + sum (p_j + b q_j)^2 / (beta - alpha_j) = 0`,
    /// which avoids the cancellation inside the Lax entries on large states.
    fn lpkdv_polish(&self, beta: C, v: C, mut b: C, x: &PhasePoint) -> C {
        for _ in 0..2 {
            let mut g = b * (b + 2.0 * v) + beta;
            let mut dg = 2.0 * (b + v);
            for j in 0..self.n() {
                let w = x.p[j] + b * x.q[j];
                let d = beta - self.alpha[j];
                g += w * w / d;
                dg += 2.0 * x.q[j] * w / d;
            }
            let db = g / dg;
            if !db.is_finite() || db.norm() > 1e-6 * (1.0 + b.norm()) {
                break;
            }
            b -= db;
        }
        b
    }

    fn lpkdv_qtilde(&self, beta: C, b: C, x: &PhasePoint) -> Vec<C> {
        let c = self.normalisation(beta);
        (0..self.n()).map(|j| c[j] * (x.p[j] + b * x.q[j])).collect()
    }

    /// The linear map of one lattice step with given potentials.
    pub fn linear_step(&self, beta: C, params: &DarbouxParams, x: &PhasePoint) -> PhasePoint {
        let c = self.normalisation(beta);
        let n = self.n();
        let (p, q) = (&x.p, &x.q);
        let mut pt = vec![C::new(0.0, 0.0); n];
        let mut qt = vec![C::new(0.0, 0.0); n];
        for j in 0..n {
            let al = self.alpha[j];
            match *params {
                DarbouxParams::LpKdV { a, b } => {
                    pt[j] = c[j] * (a * (p[j] + b * q[j]) + (beta - al) * q[j]);
                    qt[j] = c[j] * (p[j] + b * q[j]);
                }
                DarbouxParams::LpmKdV { a } => {
                    pt[j] = c[j] * (a * al * p[j] + beta * q[j]);
                    qt[j] = c[j] * (al * q[j] / a + beta * p[j]);
                }
                DarbouxParams::LSKdV { a, s } => {
                    pt[j] = c[j] * (a * al * p[j] + beta * s * q[j]);
                    qt[j] = c[j] * (beta / s * p[j] + al * q[j] / a);
                }
            }
        }
        PhasePoint::new(pt, qt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::c;

    fn fixture(id: ModelId) -> (Model, PhasePoint) {
        (Model::new(id, vec![re(2.0)]).unwrap(), PhasePoint::from_real(&[1.0], &[1.0]))
    }

    fn close(a: C, b: C, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn lpkdv_lax_fixture() {
        let (m, x) = fixture(ModelId::LpKdV);
        let l = m.lax_matrix(&x, re(3.0)).unwrap();
        assert_eq!(l, Mat2::new(re(2.0), re(-4.0), re(2.0), re(-2.0)));
    }

    #[test]
    fn lpmkdv_lax_fixture() {
        let (m, x) = fixture(ModelId::LpmKdV);
        let l = m.lax_matrix(&x, re(3.0)).unwrap();
        assert!(close(l.a, re(0.5 + 0.8), 1e-14));
        assert!(close(l.b, re(-1.2), 1e-14));
        assert!(close(l.c, re(1.2), 1e-14));
        assert!(close(l.d, -l.a, 0.0));
    }

    #[test]
    fn lax_is_traceless() {
        let x = PhasePoint::new(vec![c(0.7, 0.1), c(1.2, -0.3)], vec![c(1.1, 0.2), c(0.6, 0.0)]);
        for id in ModelId::ALL {
            let m = Model::new(id, vec![c(1.5, 0.1), c(2.7, -0.2)]).unwrap();
            for lam in [c(0.3, 0.9), c(-4.0, 1.0), c(7.0, 0.0)] {
                assert_eq!(m.lax_matrix(&x, lam).unwrap().trace(), re(0.0));
            }
        }
    }

    #[test]
    fn lax_pole_and_degenerate() {
        let (m, x) = fixture(ModelId::LpKdV);
        assert!(matches!(m.lax_matrix(&x, re(2.0)), Err(Error::Pole(_))));
        let z = PhasePoint::from_real(&[1.0], &[0.0]);
        assert!(matches!(m.lax_matrix(&z, re(3.0)), Err(Error::Degenerate(_))));
        let (m2, _) = fixture(ModelId::LSKdV);
        assert!(matches!(m2.lax_matrix(&x, re(-2.0)), Err(Error::Pole(_))));
    }

    #[test]
    fn lpkdv_potentials_satisfy_constraints() {
        let m = Model::new(ModelId::LpKdV, vec![c(1.1, 0.1), c(2.2, -0.05)]).unwrap();
        let x = PhasePoint::new(vec![c(0.8, 0.1), c(1.1, 0.2)], vec![c(1.0, -0.1), c(0.7, 0.1)]);
        let beta = c(-1.0, 0.3);
        let v = csqrt(dot(&x.q, &x.q));
        for s in [BranchSign::Plus, BranchSign::Minus] {
            let DarbouxParams::LpKdV { a, b } = m.potential_constraint(beta, s, &x).unwrap() else {
                panic!("LpKdV potentials expected")
            };
            let qt = m.lpkdv_qtilde(beta, b, &x);
            let vt = csqrt(dot(&qt, &qt));
            let quad = b * (b + 2.0 * v) + beta - vt * vt;
            assert!(quad.norm() < 1e-12, "{quad}");
            assert!(close(a, b + v + vt, 1e-12));
            assert!(close(a * (vt - b - v), beta - v * v, 1e-12));
        }
    }

    #[test]
    fn darboux_fixture() {
        let s3 = 3f64.sqrt();
        let d = darboux_matrix(re(-1.0), &DarbouxParams::LpKdV { a: re(1.0 + s3), b: re(-1.0 + s3) }, re(2.0));
        assert!(close(d.a, re(1.0 + s3), 1e-15));
        assert!(close(d.b, re(-1.0), 1e-14));
        assert_eq!(d.c, re(1.0));
        assert!(close(d.d, re(-1.0 + s3), 1e-15));
        let lam = c(0.4, -1.3);
        let e = darboux_matrix(re(0.0), &DarbouxParams::LpmKdV { a: re(1.0) }, lam);
        assert_eq!(e, Mat2::scalar(lam));
    }

    #[test]
    fn darboux_determinants() {
        let (a, b, beta, lam) = (c(0.3, 1.1), c(-0.8, 0.2), c(1.7, -0.4), c(-0.6, 2.2));
        let d1 = darboux_matrix(beta, &DarbouxParams::LpKdV { a, b }, lam).det();
        assert!((d1 - (lam - beta)).norm() <= 1e-13 * (lam - beta).norm());
        let d2 = darboux_matrix(beta, &DarbouxParams::LpmKdV { a }, lam).det();
        assert!((d2 - (lam * lam - beta * beta)).norm() <= 1e-13 * (lam * lam - beta * beta).norm());
        let d3 = darboux_matrix(beta, &DarbouxParams::lskdv(a, beta), lam).det();
        assert!((d3 - (lam * lam - beta * beta)).norm() <= 1e-13 * (lam * lam - beta * beta).norm());
    }

    #[test]
    fn continuous_fixtures() {
        let (m, x) = fixture(ModelId::LpKdV);
        assert_eq!(m.continuous_matrix(&x, re(5.0)).unwrap(), Mat2::new(re(1.0), re(-4.0), re(1.0), re(-1.0)));
        let (m, x) = fixture(ModelId::LSKdV);
        let w = m.continuous_matrix(&x, re(1.0)).unwrap();
        // <Aq,q>/2 = 1 on the fixture.
        assert_eq!(w, Mat2::new(re(1.5), re(1.0), re(-1.0), re(-1.5)));
        for id in ModelId::ALL {
            let (m, x) = fixture(id);
            assert_eq!(m.continuous_matrix(&x, c(0.3, 0.4)).unwrap().trace(), re(0.0));
        }
    }

    #[test]
    fn generating_fixtures() {
        let (m, x) = fixture(ModelId::LpKdV);
        assert!(close(m.generating_function(&x, re(3.0)).unwrap(), re(4.0), 1e-13));
        let (m, x) = fixture(ModelId::LpmKdV);
        for lam in [re(0.3), c(1.0, 1.0), re(5.0)] {
            assert!(close(m.generating_function(&x, lam).unwrap(), re(-0.25), 1e-13));
        }
        let (m, x) = fixture(ModelId::LSKdV);
        assert!(close(m.generating_function(&x, re(1.0)).unwrap(), re(1.0 / 12.0), 1e-14));
    }

    #[test]
    fn integrals_fixture_and_vacuum() {
        let (m, x) = fixture(ModelId::LpKdV);
        let f = m.integrals(&x).unwrap();
        assert!(close(f[0], re(1.0), 1e-12));
        // Partial sums of the expansion at lambda = 3 approach F(3) - 3.
        let tail: C = (1..40).map(|j| re(3f64.powi(-j) * 2f64.powi(j - 1))).sum();
        assert!(close(tail, m.generating_function(&x, re(3.0)).unwrap() - 3.0, 1e-6));
        let zero = PhasePoint::new(vec![re(0.0); 2], vec![re(0.0); 2]);
        let mm = Model::new(ModelId::LpmKdV, vec![re(1.5), re(2.5)]).unwrap();
        let f = mm.integrals(&zero).unwrap();
        assert!(close(f[0], mm.generating_function(&zero, re(0.0)).unwrap(), 1e-13));
        let ms = Model::new(ModelId::LSKdV, vec![re(1.5), re(2.5)]).unwrap();
        for v in ms.integrals(&zero).unwrap() {
            assert!(v.norm() < 1e-12);
        }
    }

    #[test]
    fn lpkdv_integrals_match_closed_form() {
        let m = Model::new(ModelId::LpKdV, vec![c(1.2, 0.1), c(2.3, -0.2), re(3.4)]).unwrap();
        let x = PhasePoint::new(
            vec![c(0.8, 0.1), c(1.1, 0.0), c(0.6, -0.2)],
            vec![c(0.9, 0.2), c(1.3, 0.1), c(0.7, 0.0)],
        );
        let (p, q) = (&x.p, &x.q);
        let v = csqrt(dot(q, q));
        let f1 = m.aform(1, q, q) + dot(p, p) - 2.0 * v * dot(p, q);
        let f2 = m.aform(2, q, q) + m.aform(1, p, p) - 2.0 * v * m.aform(1, p, q) + dot(p, p) * dot(q, q)
            - dot(p, q) * dot(p, q);
        let f = m.integrals(&x).unwrap();
        assert!(close(f[0], f1, 1e-10 * (1.0 + f1.norm())));
        assert!(close(f[1], f2, 1e-10 * (1.0 + f2.norm())));
    }

    #[test]
    fn lskdv_and_lpmkdv_first_integrals_match_closed_form() {
        let alpha = vec![c(1.6, 0.1), c(2.6, -0.1)];
        let x = PhasePoint::new(vec![c(0.8, 0.1), c(1.1, 0.0)], vec![c(0.9, 0.2), c(1.3, 0.1)]);
        let (p, q) = (&x.p, &x.q);
        let ms = Model::new(ModelId::LSKdV, alpha.clone()).unwrap();
        let pq = dot(p, q);
        let f1 = -pq * pq - ms.aform(2, p, q) + ms.aform(1, p, p) + pq * ms.aform(1, q, q);
        assert!(close(ms.integrals(&x).unwrap()[0], f1, 1e-10 * (1.0 + f1.norm())));
        let mm = Model::new(ModelId::LpmKdV, alpha).unwrap();
        let f1 = mm.aform(1, p, p) * mm.aform(1, q, q) - mm.aform(2, p, q);
        let f = mm.integrals(&x).unwrap();
        assert!(close(f[1], f1, 1e-10 * (1.0 + f1.norm())));
        // The constant term is det L at zero, a quarter of the squared form.
        let f0 = -(2.0 * pq - 1.0) * (2.0 * pq - 1.0) / 4.0;
        assert!(close(f[0], f0, 1e-10 * (1.0 + f0.norm())));
    }

    #[test]
    fn h1_fixtures() {
        let (m, x) = fixture(ModelId::LpKdV);
        assert!(close(m.hamiltonian_h1(&x).unwrap(), re(0.5), 1e-15));
        let (m, x) = fixture(ModelId::LpmKdV);
        assert!(close(m.hamiltonian_h1(&x).unwrap(), re(0.0), 1e-15));
        let m = Model::new(ModelId::LSKdV, vec![re(2.0), re(3.0)]).unwrap();
        let z = PhasePoint::from_real(&[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(m.hamiltonian_h1(&z).unwrap(), re(0.0));
    }

    #[test]
    fn h1_vector_field_matches_gradient() {
        let x = PhasePoint::new(
            vec![c(0.8, 0.1), c(1.1, 0.0), c(0.6, -0.2)],
            vec![c(0.9, 0.2), c(1.3, 0.1), c(0.7, 0.0)],
        );
        for id in ModelId::ALL {
            let m = Model::new(id, vec![c(1.6, 0.1), c(2.6, -0.1), re(3.5)]).unwrap();
            let vf = m.h1_vector_field(&x).unwrap();
            let h = 1e-6;
            for j in 0..3 {
                let mut e = PhasePoint::new(vec![re(0.0); 3], vec![re(0.0); 3]);
                e.p[j] = re(1.0);
                let dhdp = (m.hamiltonian_h1(&x.axpy(re(h), &e)).unwrap()
                    - m.hamiltonian_h1(&x.axpy(re(-h), &e)).unwrap())
                    / (2.0 * h);
                let mut e = PhasePoint::new(vec![re(0.0); 3], vec![re(0.0); 3]);
                e.q[j] = re(1.0);
                let dhdq = (m.hamiltonian_h1(&x.axpy(re(h), &e)).unwrap()
                    - m.hamiltonian_h1(&x.axpy(re(-h), &e)).unwrap())
                    / (2.0 * h);
                assert!(close(vf.q[j], dhdp, 1e-6), "{id} dq");
                assert!(close(vf.p[j], -dhdq, 1e-6), "{id} dp");
            }
        }
    }

    #[test]
    fn lpmkdv_vector_field_fixture() {
        let (m, x) = fixture(ModelId::LpmKdV);
        let vf = m.h1_vector_field(&x).unwrap();
        assert_eq!(vf.p[0], re(-2.0));
        assert_eq!(vf.q[0], re(2.0));
    }

    #[test]
    fn constraint_fixtures() {
        let s3 = 3f64.sqrt();
        let (m, x) = fixture(ModelId::LpKdV);
        match m.potential_constraint(re(-1.0), BranchSign::Minus, &x).unwrap() {
            DarbouxParams::LpKdV { a, b } => {
                assert!(close(b, re(-1.0 + s3), 1e-14));
                assert!(close(a, re(1.0 + s3), 1e-14));
            }
            _ => unreachable!(),
        }
        let (m, x) = fixture(ModelId::LpmKdV);
        let a = m.potential_constraint(re(1.0), BranchSign::Plus, &x).unwrap().a();
        assert!(close(a, re(-2.0), 1e-14));
        let a = m.potential_constraint(re(1.0), BranchSign::Minus, &x).unwrap().a();
        assert!(close(a, re(-0.5), 1e-14));
        let (m, x) = fixture(ModelId::LSKdV);
        let a = m.potential_constraint(re(1.0), BranchSign::Plus, &x).unwrap().a();
        assert!(close(a * a, c(0.5, s3 / 2.0), 1e-14));
        let a = m.potential_constraint(re(1.0), BranchSign::Minus, &x).unwrap().a();
        assert!(close(a * a, c(0.5, -s3 / 2.0), 1e-14));
    }

    #[test]
    fn lskdv_s_is_derived() {
        let beta = c(0.7, 0.2);
        if let DarbouxParams::LSKdV { a, s } = DarbouxParams::lskdv(c(1.3, 0.4), beta) {
            assert!(close(s * (a - a.inv()), beta, 1e-15));
        }
    }

    #[test]
    fn spectrum_validation() {
        assert!(Model::new(ModelId::LpKdV, vec![re(1.0), re(1.0)]).is_err());
        assert!(Model::new(ModelId::LpmKdV, vec![re(1.0), re(-1.0)]).is_err());
        assert!(Model::new(ModelId::LSKdV, vec![re(0.0)]).is_err());
        assert!(Model::new(ModelId::LpKdV, vec![re(1.0), re(-1.0)]).is_ok());
    }
}
