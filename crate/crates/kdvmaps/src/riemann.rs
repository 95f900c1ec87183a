//! Period matrices, Abel maps and theta functions of hyperelliptic curves, and the
//! linearisation of the discrete flows on the Jacobian.

use crate::algebra::{csqrt, gl_nodes, is_finite, re, C, I};
use crate::error::{Error, Result};
use crate::maps::{iterate_orbit, FlowConfig};
use crate::models::{Model, PhasePoint};
use crate::spectral::{elliptic_variables, spectral_curve, CurveData};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Curve `xi^2 = lead * prod (z - e_k)` with simple finite branch points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperelliptic {
    pub lead: C,
    /// Sorted by real part, then imaginary part.
    pub branch: Vec<C>,
    pub genus: usize,
}

impl Hyperelliptic {
    pub fn new(lead: C, mut branch: Vec<C>) -> Result<Self> {
        if branch.len() < 3 {
            return Err(Error::Genus(0));
        }
        branch.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        for i in 1..branch.len() {
            for j in 0..i {
                if (branch[i] - branch[j]).norm() <= 1e-6 * (1.0 + branch[i].norm()) {
                    return Err(Error::DegenerateCurve("branch points collide".into()));
                }
            }
        }
        let genus = (branch.len() - 1) / 2;
        Ok(Hyperelliptic { lead, branch, genus })
    }

    pub fn from_curve(curve: &CurveData) -> Result<Self> {
        if curve.degenerate {
            return Err(Error::DegenerateCurve("multiple branch point".into()));
        }
        let lead = match curve.sign {
            crate::spectral::CurveSign::MinusR => -curve.r.leading(),
            crate::spectral::CurveSign::PlusR => curve.r.leading(),
        };
        Hyperelliptic::new(lead, curve.branch_points.clone())
    }

    /// True when infinity is a branch point.
    pub fn odd(&self) -> bool {
        self.branch.len() % 2 == 1
    }

    pub fn xi_sq(&self, z: C) -> C {
        self.branch.iter().fold(self.lead, |acc, e| acc * (z - e))
    }

    fn min_separation(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.branch.len() {
            for j in 0..i {
                m = m.min((self.branch[i] - self.branch[j]).norm());
            }
        }
        m
    }

    fn centre(&self) -> C {
        self.branch.iter().sum::<C>() / self.branch.len() as f64
    }

    fn radius(&self) -> f64 {
        let c = self.centre();
        self.branch.iter().fold(0.0f64, |m, e| m.max((e - c).norm()))
    }

    /// `z^(g-j)` for `j = 1..g`.
    fn monomials(&self, z: C) -> Vec<C> {
        let g = self.genus;
        (1..=g).map(|j| z.powi((g - j) as i32)).collect()
    }
}

/// Adaptive Gauss-Legendre on `[a, b]` for vector integrands: intervals are bisected
/// until the 16-point rule agrees with its two halves.
fn quad_vec(f: &dyn Fn(f64) -> Vec<C>, a: f64, b: f64, tol: f64) -> Result<Vec<C>> {
    let (x, w) = gl_nodes(16);
    let rule = |a: f64, b: f64| -> Result<Vec<C>> {
        let h = 0.5 * (b - a);
        let mut acc: Option<Vec<C>> = None;
        for (xi, wi) in x.iter().zip(&w) {
            let t = a + h * (xi + 1.0);
            let v = f(t);
            if v.iter().any(|z| !is_finite(*z)) {
                return Err(Error::Quadrature { node: t });
            }
            match acc.as_mut() {
                None => acc = Some(v.into_iter().map(|z| z * (h * wi)).collect()),
                Some(s) => s.iter_mut().zip(v).for_each(|(s, z)| *s += z * (h * wi)),
            }
        }
        Ok(acc.unwrap_or_default())
    };
    let whole = rule(a, b)?;
    let scale = whole.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1e-3);
    let floor = 1e-14 * scale;
    let mut total = vec![C::new(0.0, 0.0); whole.len()];
    let mut stack = vec![(a, b, whole, tol * scale)];
    let mut budget = 20_000usize;
    while let Some((lo, hi, est, t)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let l = rule(lo, mid)?;
        let r = rule(mid, hi)?;
        let diff = l.iter().zip(&r).zip(&est).fold(0.0f64, |d, ((x, y), e)| d.max((x + y - e).norm()));
        if diff <= t.max(floor) || hi - lo < 1e-12 {
            total.iter_mut().zip(l.iter().zip(&r)).for_each(|(s, (x, y))| *s += x + y);
            continue;
        }
        budget = budget.checked_sub(1).ok_or(Error::QuadratureNoConvergence { diff })?;
        stack.push((lo, mid, l, 0.5 * t));
        stack.push((mid, hi, r, 0.5 * t));
    }
    Ok(total)
}

const QUAD_TOL: f64 = 1e-13;

/// Integrals of `omega'` along the straight segment from branch point `i` to `w`,
/// with `xi` continued from the branch point. Returns the integrals and `xi(w)`.
fn from_branch(curve: &Hyperelliptic, i: usize, w: C) -> Result<(Vec<C>, C)> {
    let e = curve.branch[i];
    let d = w - e;
    if d.norm() == 0.0 {
        return Ok((vec![C::new(0.0, 0.0); curve.genus], C::new(0.0, 0.0)));
    }
    let sl = csqrt(curve.lead);
    let sd = csqrt(d);
    let others: Vec<(C, C)> =
        curve.branch.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, ek)| (e - ek, csqrt(e - ek))).collect();
    let prod = |z: C| -> C { others.iter().map(|(de, sde)| sde * csqrt(re(1.0) + (z - e) / de)).product() };
    let f = |s: f64| -> Vec<C> {
        let z = e + d * (s * s);
        let den = sl * sd * prod(z);
        curve.monomials(z).into_iter().map(|m| m * d / den).collect()
    };
    let ints = quad_vec(&f, 0.0, 1.0, QUAD_TOL)?;
    Ok((ints, sl * sd * prod(w)))
}

/// Segment between two branch points with `xi` continued from the first.
fn between_branches(curve: &Hyperelliptic, i: usize, j: usize) -> Result<Vec<C>> {
    let (ei, ej) = (curve.branch[i], curve.branch[j]);
    let d = ej - ei;
    let sl = csqrt(curve.lead);
    let (sd, smd) = (csqrt(d), csqrt(-d));
    let others: Vec<(C, C)> = curve
        .branch
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != i && *k != j)
        .map(|(_, ek)| (ei - ek, csqrt(ei - ek)))
        .collect();
    let f = |s: f64| -> Vec<C> {
        let sn = (0.5 * PI * s).sin();
        let z = ei + d * (sn * sn);
        let p: C = others.iter().map(|(de, sde)| sde * csqrt(re(1.0) + (z - ei) / de)).product();
        let den = 2.0 * sl * sd * smd * p;
        curve.monomials(z).into_iter().map(|m| m * d * PI / den).collect()
    };
    quad_vec(&f, 0.0, 1.0, QUAD_TOL)
}

/// Segment between ordinary points, `xi` continued from `xi_a`.
fn generic_segment(curve: &Hyperelliptic, a: C, xi_a: C, b: C) -> Result<(Vec<C>, C)> {
    let d = b - a;
    let ratio: Vec<C> = curve.branch.iter().map(|e| d / (a - e)).collect();
    let xi = |s: f64| -> C { ratio.iter().fold(xi_a, |acc, r| acc * csqrt(re(1.0) + r * s)) };
    let f = |s: f64| -> Vec<C> {
        let z = a + d * s;
        let den = 2.0 * xi(s);
        curve.monomials(z).into_iter().map(|m| m * d / den).collect()
    };
    Ok((quad_vec(&f, 0.0, 1.0, QUAD_TOL)?, xi(1.0)))
}

/// Ray `z = c + (a - c) / u^2` from `a` to infinity. Returns the integrals and,
/// for two-point infinity, the sign `s` with `xi ~ s sqrt(lead) z^(g+1)`.
fn ray_to_infinity(curve: &Hyperelliptic, a: C, xi_a: C) -> Result<(Vec<C>, i32)> {
    let c = curve.centre();
    let d = a - c;
    let ratio: Vec<C> = curve.branch.iter().map(|e| d / (a - e)).collect();
    let f = |u: f64| -> Vec<C> {
        let t = 1.0 / (u * u) - 1.0;
        let z = c + d / (u * u);
        // xi * u^(n_b) stays bounded as u -> 0.
        let xs = ratio.iter().fold(xi_a, |acc, r| acc * csqrt(re(u * u) + r * (1.0 - u * u)));
        let nb = curve.branch.len() as i32;
        let _ = t;
        let dz = 2.0 * d;
        // omega = z^(g-j) dz / (2 xi), dz = -2 d / u^3 du, integrated from u = 1 down to 0.
        curve
            .monomials(z)
            .into_iter()
            .map(|m| m * dz * u.powi(nb - 3) / (2.0 * xs))
            .collect()
    };
    let ints = quad_vec(&f, 0.0, 1.0, QUAD_TOL)?;
    let mut sign = 0;
    if !curve.odd() {
        let lim: C = ratio.iter().fold(xi_a, |acc, r| acc * csqrt(*r));
        let s = lim / (csqrt(curve.lead) * d.powi(curve.genus as i32 + 1));
        sign = if s.re >= 0.0 { 1 } else { -1 };
    }
    Ok((ints, sign))
}

/// Distance from `p` to the segment `[a, b]`.
fn seg_dist(p: C, a: C, b: C) -> f64 {
    let d = b - a;
    let t = if d.norm() == 0.0 { 0.0 } else { ((p - a) * d.conj()).re / d.norm_sqr() };
    (a + d * t.clamp(0.0, 1.0) - p).norm()
}

/// Integrals of `omega'` from the base branch point to `(z, xi)`, along a polyline
/// that keeps clear of the other branch points.
fn abel_raw(curve: &Hyperelliptic, z: C, xi: C) -> Result<Vec<C>> {
    let e0 = curve.branch[0];
    let clearance = 0.1 * curve.min_separation();
    let blocked = |a: C, b: C| -> bool {
        curve.branch.iter().skip(1).any(|e| {
            (*e - a).norm() > clearance && (*e - b).norm() > clearance && seg_dist(*e, a, b) < clearance
        })
    };
    if let Some(k) = curve.branch.iter().position(|e| (e - z).norm() <= 1e-12 * (1.0 + e.norm())) {
        if k == 0 {
            return Ok(vec![C::new(0.0, 0.0); curve.genus]);
        }
        if !blocked(e0, z) {
            return between_branches(curve, 0, k);
        }
    }
    let (ints, xi_end) = if !blocked(e0, z) {
        from_branch(curve, 0, z)?
    } else {
        let mid = 0.5 * (e0 + z);
        let n = (z - e0) * I;
        let mut found = None;
        let offsets = [0.25, -0.25, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0].map(|k| n * k);
        let ring = (1..=4).flat_map(|r| (0..16).map(move |a| C::from_polar(0.5 * r as f64, a as f64 * PI / 8.0)));
        for off in offsets.into_iter().chain(ring.map(|w| w * n)) {
            let m = mid + off;
            if !blocked(e0, m) && !blocked(m, z) {
                found = Some(m);
                break;
            }
        }
        let m = found.ok_or_else(|| Error::Degenerate("no clear integration path".into()))?;
        let (i1, x1) = from_branch(curve, 0, m)?;
        let (i2, x2) = generic_segment(curve, m, x1, z)?;
        (i1.iter().zip(&i2).map(|(a, b)| a + b).collect(), x2)
    };
    let eps = if (xi_end - xi).norm() <= (xi_end + xi).norm() { 1.0 } else { -1.0 };
    let mismatch = (xi_end - eps * xi).norm();
    if mismatch > 1e-6 * (1.0 + xi.norm()) {
        return Err(Error::RootTracking(format!("continued xi misses the target by {mismatch:e}")));
    }
    Ok(ints.into_iter().map(|v| v * eps).collect())
}

/// A point of the curve, finite or at infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CurvePoint {
    Finite { z: C, xi: C },
    /// Infinity; `sheet` is `+1`/`-1` for two-point infinity and ignored otherwise.
    Infinity { sheet: i32 },
}

fn abel_infinity_raw(curve: &Hyperelliptic, sheet: i32) -> Result<Vec<C>> {
    let c = curve.centre();
    let rho = 2.0 * curve.radius() + 1.0;
    let e0 = curve.branch[0];
    let mut best = (f64::NEG_INFINITY, c + rho);
    for k in 0..16 {
        let q = c + C::from_polar(rho, 2.0 * PI * k as f64 / 16.0 + 0.1);
        let clear = curve.branch.iter().skip(1).fold(f64::INFINITY, |m, e| m.min(seg_dist(*e, e0, q)));
        if clear > best.0 {
            best = (clear, q);
        }
    }
    let q = best.1;
    let (i1, x1) = from_branch(curve, 0, q)?;
    let (i2, s) = ray_to_infinity(curve, q, x1)?;
    let eps = if curve.odd() || s == sheet { 1.0 } else { -1.0 };
    Ok(i1.iter().zip(&i2).map(|(a, b)| (a + b) * eps).collect())
}

/// Normalised periods and the data of the chosen homology basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodData {
    pub curve: Hyperelliptic,
    /// `a[j][k]`: integral of `omega'_j` over `a_k`.
    pub a: Vec<Vec<C>>,
    pub b: Vec<Vec<C>>,
    /// Inverse of `a`.
    pub c: Vec<Vec<C>>,
    /// Normalised period matrix.
    pub bmat: Vec<Vec<C>>,
    /// Periods of `omega'` over the chain cycles around consecutive branch points.
    pub chain: Vec<Vec<C>>,
    pub homology: String,
}

fn from_mat(m: &DMatrix<C>) -> Vec<Vec<C>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Leading principal minors of a real symmetric matrix are all positive.
pub fn positive_definite(m: &DMatrix<f64>) -> bool {
    (1..=m.nrows()).all(|k| m.view((0, 0), (k, k)).determinant() > 0.0)
}

pub fn period_matrix(curve: &Hyperelliptic) -> Result<PeriodData> {
    let g = curve.genus;
    if !(1..=2).contains(&g) {
        return Err(Error::Genus(g));
    }
    let chain: Vec<Vec<C>> = (0..2 * g)
        .map(|k| between_branches(curve, k, k + 1).map(|v| v.into_iter().map(|z| 2.0 * z).collect()))
        .collect::<Result<_>>()?;
    let col = |k: usize| DVector::from_fn(g, |j, _| chain[k][j]);
    let n_sign = 1usize << (2 * g);
    for mask in 0..n_sign {
        let sg = |bit: usize| if mask >> bit & 1 == 1 { -1.0 } else { 1.0 };
        let mut am = DMatrix::<C>::zeros(g, g);
        let mut bm = DMatrix::<C>::zeros(g, g);
        for i in 0..g {
            am.set_column(i, &(col(2 * i) * re(sg(i))));
            let mut bcol = DVector::<C>::zeros(g);
            for j in i..g {
                bcol += col(2 * j + 1) * re(sg(g + j));
            }
            bm.set_column(i, &bcol);
        }
        let Some(cm) = am.clone().try_inverse() else { continue };
        let bmat = &cm * &bm;
        let asym = (&bmat - bmat.transpose()).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let scale = bmat.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let im = DMatrix::from_fn(g, g, |i, j| 0.5 * (bmat[(i, j)].im + bmat[(j, i)].im));
        if asym <= 1e-8 * (1.0 + scale) && positive_definite(&im) {
            return Ok(PeriodData {
                curve: curve.clone(),
                a: from_mat(&am),
                b: from_mat(&bm),
                c: from_mat(&cm),
                bmat: from_mat(&bmat),
                chain,
                homology: format!(
                    "branch points sorted by real part; a_i = loop around (e_{{2i-1}}, e_{{2i}}); b_i = sum of loops around (e_{{2j}}, e_{{2j+1}}), j >= i; sign mask {mask:#b}"
                ),
            });
        }
    }
    Err(Error::NotPositiveDefinite)
}

impl PeriodData {
    pub fn genus(&self) -> usize {
        self.curve.genus
    }

    fn normalise(&self, raw: &[C]) -> Vec<C> {
        let g = self.genus();
        (0..g).map(|i| (0..g).map(|j| self.c[i][j] * raw[j]).sum()).collect()
    }

    /// Abel map with base point at the first branch point.
    pub fn abel(&self, point: &CurvePoint) -> Result<Vec<C>> {
        let raw = match *point {
            CurvePoint::Finite { z, xi } => abel_raw(&self.curve, z, xi)?,
            CurvePoint::Infinity { sheet } => abel_infinity_raw(&self.curve, sheet)?,
        };
        Ok(self.normalise(&raw))
    }

    /// Lattice generators `e_k` and columns of `B`.
    pub fn lattice(&self) -> Vec<Vec<C>> {
        let g = self.genus();
        let mut out = Vec::with_capacity(2 * g);
        for k in 0..g {
            out.push((0..g).map(|j| if j == k { re(1.0) } else { re(0.0) }).collect());
        }
        for k in 0..g {
            out.push((0..g).map(|j| self.bmat[j][k]).collect());
        }
        out
    }

    /// Representative of `v` modulo the lattice with locally minimal norm.
    pub fn reduce(&self, v: &[C]) -> Vec<C> {
        reduce_mod_lattice(&self.lattice(), v)
    }
}

fn max_norm(v: &[C]) -> f64 {
    v.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

/// Bounded search: round the real coordinates of `v` in the lattice basis, then test
/// every neighbour within one step, repeating until the origin of the window wins.
pub fn reduce_mod_lattice(gens: &[Vec<C>], v: &[C]) -> Vec<C> {
    let g = v.len();
    let n = gens.len();
    let m = DMatrix::from_fn(2 * g, n, |r, k| if r < g { gens[k][r].re } else { gens[k][r - g].im });
    let lu = m.clone().lu();
    let mut cur = v.to_vec();
    for _ in 0..16 {
        let rhs = DVector::from_fn(2 * g, |r, _| if r < g { cur[r].re } else { cur[r - g].im });
        let base: Vec<f64> = match lu.solve(&rhs) {
            Some(x) => x.iter().map(|c| c.round()).collect(),
            None => vec![0.0; n],
        };
        let mut best = (max_norm(&cur), vec![0.0; n]);
        let total = 3usize.pow(n as u32);
        for idx in 0..total {
            let mut t = idx;
            let k: Vec<f64> = (0..n)
                .map(|i| {
                    let d = (t % 3) as f64 - 1.0;
                    t /= 3;
                    base[i] + d
                })
                .collect();
            if k.iter().all(|x| *x == 0.0) {
                continue;
            }
            let cand: Vec<C> = (0..g).map(|r| cur[r] - (0..n).map(|i| gens[i][r] * k[i]).sum::<C>()).collect();
            let nm = max_norm(&cand);
            if nm < best.0 * (1.0 - 1e-12) {
                best = (nm, k);
            }
        }
        if best.1.iter().all(|x| *x == 0.0) {
            return cur;
        }
        cur = (0..g).map(|r| cur[r] - (0..n).map(|i| gens[i][r] * best.1[i]).sum::<C>()).collect();
    }
    cur
}

/// Period matrix and truncation radius of a theta series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaParams {
    pub b: Vec<Vec<C>>,
    pub radius: usize,
}

impl ThetaParams {
    pub fn new(b: Vec<Vec<C>>) -> Self {
        ThetaParams { b, radius: 3 }
    }
}

/// Largest boundary term allowed, relative to the largest term.
pub const THETA_TAIL: f64 = 1e-12;

fn for_each_index(g: usize, r: i64, mut f: impl FnMut(&[i64])) {
    let mut idx = vec![-r; g];
    loop {
        f(&idx);
        let mut k = 0;
        loop {
            if k == g {
                return;
            }
            idx[k] += 1;
            if idx[k] <= r {
                break;
            }
            idx[k] = -r;
            k += 1;
        }
    }
}

/// `sum_n exp(pi i (<B n, n> + 2 <n, z>))` over a cube raised until the boundary is negligible.
pub fn theta(z: &[C], params: &ThetaParams) -> Result<C> {
    let g = z.len();
    if params.b.len() != g {
        return Err(Error::Config("theta argument and period matrix differ in size".into()));
    }
    let im = DMatrix::from_fn(g, g, |i, j| params.b[i][j].im);
    if !positive_definite(&im) {
        return Err(Error::NotPositiveDefinite);
    }
    let term = |n: &[i64]| -> C {
        let mut e = C::new(0.0, 0.0);
        for i in 0..g {
            for j in 0..g {
                e += params.b[i][j] * (n[i] * n[j]) as f64;
            }
            e += 2.0 * z[i] * n[i] as f64;
        }
        (I * PI * e).exp()
    };
    let mut r = params.radius.max(1) as i64;
    loop {
        let mut sum = C::new(0.0, 0.0);
        let mut biggest = 0.0f64;
        let mut boundary = 0.0f64;
        for_each_index(g, r, |n| {
            let t = term(n);
            sum += t;
            biggest = biggest.max(t.norm());
            if n.iter().any(|x| x.abs() == r) {
                boundary = boundary.max(t.norm());
            }
        });
        if boundary < THETA_TAIL * biggest.max(1.0) {
            return Ok(sum);
        }
        if r > 200 {
            return Err(Error::NotPositiveDefinite);
        }
        r += 2;
    }
}

/// One candidate for the shift vector of the discrete flow.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftCandidate {
    pub label: String,
    pub omega: Vec<C>,
    pub max_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobiReport {
    pub periods: PeriodData,
    /// Lattice-reduced residual for `m = 0..=steps` under the best candidate.
    pub residuals: Vec<f64>,
    pub best: usize,
    pub candidates: Vec<ShiftCandidate>,
}

impl JacobiReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0f64, |m, r| m.max(*r))
    }

    pub fn best_label(&self) -> &str {
        &self.candidates[self.best].label
    }
}

/// Sum of Abel images of the elliptic variables at `x`.
pub fn abel_divisor(model: &Model, periods: &PeriodData, x: &PhasePoint) -> Result<Vec<C>> {
    let ev = elliptic_variables(model, x)?;
    let g = periods.genus();
    let mut acc = vec![C::new(0.0, 0.0); g];
    for (z, xi) in ev.nu.iter().zip(&ev.nu_xi) {
        let a = periods.abel(&CurvePoint::Finite { z: *z, xi: *xi })?;
        acc.iter_mut().zip(a).for_each(|(s, v)| *s += v);
    }
    Ok(acc)
}

/// Linearity of the Abel image of the elliptic variables along the orbit of `flow`.
/// Every orientation, sheet of the point over `beta` and infinity is tried; the
/// candidate with the smallest worst-case residual is reported as best.
pub fn jacobi_linearity_residual(model: &Model, flow: &FlowConfig, x0: &PhasePoint, steps: usize) -> Result<JacobiReport> {
    let curve = spectral_curve(model, x0)?;
    if curve.genus != 1 && curve.genus != 2 {
        return Err(Error::Genus(curve.genus));
    }
    let hyper = Hyperelliptic::from_curve(&curve)?;
    let periods = period_matrix(&hyper)?;
    let orbit = iterate_orbit(model, flow, x0, steps)?;
    let phi: Vec<Vec<C>> = orbit.iter().map(|(x, _)| abel_divisor(model, &periods, x)).collect::<Result<_>>()?;
    let zb = model.curve_var(flow.beta);
    let xb = csqrt(hyper.xi_sq(zb));
    let mut candidates = Vec::new();
    let mut series = Vec::new();
    let mut push = |label: String, omega: Vec<C>, pred: &dyn Fn(usize) -> Vec<C>| {
        let res: Vec<f64> = phi
            .iter()
            .enumerate()
            .map(|(m, ph)| {
                let p = pred(m);
                let d: Vec<C> = (0..ph.len()).map(|k| ph[k] - phi[0][k] - p[k]).collect();
                max_norm(&periods.reduce(&d))
            })
            .collect();
        let worst = res.iter().fold(0.0f64, |m, r| m.max(*r));
        candidates.push(ShiftCandidate { label, omega, max_residual: worst });
        series.push(res);
    };
    let pts = [(1.0, "p(beta)"), (-1.0, "tau p(beta)")];
    let ap: Vec<Vec<C>> =
        pts.iter().map(|(s, _)| periods.abel(&CurvePoint::Finite { z: zb, xi: xb * s })).collect::<Result<_>>()?;
    let scale = |v: &[C], f: f64| -> Vec<C> { v.iter().map(|z| z * f).collect() };
    let sub = |a: &[C], b: &[C]| -> Vec<C> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    if hyper.odd() {
        let ai = periods.abel(&CurvePoint::Infinity { sheet: 0 })?;
        for (k, (_, pname)) in pts.iter().enumerate() {
            let base = sub(&ai, &ap[k]);
            for (o, label) in [(1.0, format!("integral from {pname} to inf")), (-1.0, format!("integral from inf to {pname}"))] {
                let omega = scale(&base, o);
                let om = omega.clone();
                push(label, omega, &|m| scale(&om, m as f64));
            }
        }
    } else {
        // Two-point infinity: the shift alternates with the parity of m.
        let a_plus = periods.abel(&CurvePoint::Infinity { sheet: 1 })?;
        let a_minus = periods.abel(&CurvePoint::Infinity { sheet: -1 })?;
        let z0 = csqrt(hyper.xi_sq(re(0.0)));
        let a0: Vec<Vec<C>> = [1.0, -1.0]
            .iter()
            .map(|s| periods.abel(&CurvePoint::Finite { z: re(0.0), xi: z0 * *s }))
            .collect::<Result<_>>()?;
        for (ip, im, iname) in [(&a_plus, &a_minus, "inf- = inf-"), (&a_minus, &a_plus, "inf- = inf+")] {
            let big = sub(ip, im);
            for (k, (_, pname)) in pts.iter().enumerate() {
                let ob = sub(im, &ap[k]);
                for (j, zname) in ["p(0)", "tau p(0)"].iter().enumerate() {
                    if j == 1 && z0.norm() == 0.0 {
                        continue;
                    }
                    let o0 = sub(im, &a0[j]);
                    for o in [1.0, -1.0] {
                        let label = format!(
                            "{}parity shift with Omega_beta from {pname}, Omega_0 from {zname}, {iname}",
                            if o > 0.0 { "" } else { "negated " }
                        );
                        let (ob, big, o0) = (scale(&ob, o), scale(&big, o), scale(&o0, o));
                        let omega: Vec<C> = (0..ob.len()).map(|q| 2.0 * ob[q] + big[q]).collect();
                        push(label, omega, &|m| {
                            let half = m.div_ceil(2) as f64;
                            let odd = (m % 2) as f64;
                            (0..ob.len()).map(|q| ob[q] * m as f64 + big[q] * half + o0[q] * odd).collect()
                        });
                    }
                }
            }
        }
    }
    let best = (0..candidates.len())
        .min_by(|a, b| candidates[*a].max_residual.total_cmp(&candidates[*b].max_residual))
        .unwrap_or(0);
    Ok(JacobiReport { periods, residuals: series[best].clone(), best, candidates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelId;
    use crate::algebra::c;
    use crate::models::BranchSign;

    fn agm(mut a: f64, mut b: f64) -> f64 {
        for _ in 0..40 {
            (a, b) = (0.5 * (a + b), (a * b).sqrt());
        }
        a
    }

    fn complete_k(k: f64) -> f64 {
        PI / (2.0 * agm(1.0, (1.0 - k * k).sqrt()))
    }

    fn legendre_curve() -> Hyperelliptic {
        // (1 - l^2)(1 - l^2/2) = (1/2)(l - 1)(l + 1)(l - r)(l + r)
        let r = 2f64.sqrt();
        Hyperelliptic::new(re(0.5), vec![re(-r), re(-1.0), re(1.0), re(r)]).unwrap()
    }

    #[test]
    fn elliptic_integral_oracle() {
        let kk = complete_k(1.0 / 2f64.sqrt());
        assert!((kk - 1.8540746773).abs() < 1e-9);
        let pd = period_matrix(&legendre_curve()).unwrap();
        // Loop around the real cut [-1, 1] and around [-sqrt2, -1].
        let real_loop = pd.chain[1][0];
        let imag_loop = pd.chain[0][0];
        assert!((real_loop.norm() - 2.0 * kk).abs() < 1e-8, "{real_loop}");
        assert!(real_loop.im.abs() < 1e-8);
        assert!((imag_loop.norm() - kk).abs() < 1e-8, "{imag_loop}");
        assert!(imag_loop.re.abs() < 1e-8);
        assert!((pd.bmat[0][0] - c(0.0, 2.0)).norm() < 1e-8, "{:?}", pd.bmat);
    }

    #[test]
    fn theta_at_i() {
        let p = ThetaParams::new(vec![vec![I]]);
        let v = theta(&[re(0.0)], &p).unwrap();
        assert!((v - re(1.086434811213)).norm() < 1e-9);
        let direct: f64 = (-30i32..=30).map(|n| (-PI * (n * n) as f64).exp()).sum();
        assert!((v.re - direct).abs() < 1e-14);
    }

    #[test]
    fn theta_rejects_indefinite() {
        assert!(theta(&[re(0.0)], &ThetaParams::new(vec![vec![re(1.0)]])).is_err());
    }

    #[test]
    fn theta_identities_genus_two() {
        let b = vec![vec![c(0.3, 1.2), c(0.1, 0.4)], vec![c(0.1, 0.4), c(-0.2, 0.9)]];
        let p = ThetaParams::new(b.clone());
        let z = vec![c(0.2, -0.1), c(-0.3, 0.25)];
        let t = theta(&z, &p).unwrap();
        let tm = theta(&[-z[0], -z[1]], &p).unwrap();
        assert!((t - tm).norm() < 1e-12 * t.norm().max(1.0));
        for k in 0..2 {
            let mut ze = z.clone();
            ze[k] += 1.0;
            assert!((theta(&ze, &p).unwrap() - t).norm() < 1e-10 * t.norm().max(1.0));
            let zb: Vec<C> = (0..2).map(|j| z[j] + b[j][k]).collect();
            let want = (-I * PI * (b[k][k] + 2.0 * z[k])).exp() * t;
            assert!((theta(&zb, &p).unwrap() - want).norm() < 1e-10 * want.norm().max(1.0));
        }
    }

    #[test]
    fn periods_genus_two_symmetric() {
        let h = Hyperelliptic::new(c(-1.0, 0.2), vec![c(-2.0, 0.3), c(-0.7, -0.4), c(0.4, 0.5), c(1.3, -0.2), c(2.6, 0.1)])
            .unwrap();
        let pd = period_matrix(&h).unwrap();
        let b = &pd.bmat;
        assert!((b[0][1] - b[1][0]).norm() < 1e-8);
        for k in 0..2 {
            let col: Vec<C> = (0..2).map(|j| (0..2).map(|i| pd.c[j][i] * pd.a[i][k]).sum()).collect();
            for (j, v) in col.iter().enumerate() {
                assert!((v - re(if j == k { 1.0 } else { 0.0 })).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn abel_basics() {
        let h = Hyperelliptic::new(c(-1.0, 0.2), vec![c(-2.0, 0.3), c(-0.7, -0.4), c(0.4, 0.5)]).unwrap();
        let pd = period_matrix(&h).unwrap();
        let e0 = h.branch[0];
        let a0 = pd.abel(&CurvePoint::Finite { z: e0, xi: re(0.0) }).unwrap();
        assert!(max_norm(&a0) == 0.0);
        let mut sums = vec![];
        for z in [c(0.3, 1.1), c(-1.2, -0.9)] {
            let xi = csqrt(h.xi_sq(z));
            let p = pd.abel(&CurvePoint::Finite { z, xi }).unwrap();
            let q = pd.abel(&CurvePoint::Finite { z, xi: -xi }).unwrap();
            sums.push(pd.reduce(&[p[0] + q[0]]));
        }
        assert!((sums[0][0] - sums[1][0]).norm() < 1e-7);
        // Twice the image of a branch point lies in the lattice.
        for e in &h.branch {
            let a = pd.abel(&CurvePoint::Finite { z: *e, xi: re(0.0) }).unwrap();
            assert!(max_norm(&pd.reduce(&[2.0 * a[0]])) < 1e-7);
        }
        let inf = pd.abel(&CurvePoint::Infinity { sheet: 0 }).unwrap();
        assert!(max_norm(&pd.reduce(&[2.0 * inf[0]])) < 1e-7);
    }

    #[test]
    fn path_independence_mod_lattice() {
        let h = Hyperelliptic::new(c(-1.0, 0.2), vec![c(-2.0, 0.3), c(-0.7, -0.4), c(0.4, 0.5)]).unwrap();
        let pd = period_matrix(&h).unwrap();
        let z = c(-0.3, -1.5);
        let xi = csqrt(h.xi_sq(z));
        let direct = abel_raw(&h, z, xi).unwrap();
        let m = c(1.5, -1.0);
        let (i1, x1) = from_branch(&h, 0, m).unwrap();
        let (i2, x2) = generic_segment(&h, m, x1, z).unwrap();
        let eps = if (x2 - xi).norm() < (x2 + xi).norm() { 1.0 } else { -1.0 };
        let detour = (i1[0] + i2[0]) * eps;
        let d = pd.normalise(&[direct[0] - detour]);
        assert!(max_norm(&pd.reduce(&d)) < 1e-8);
    }

    #[test]
    fn reduction_is_idempotent() {
        let h = Hyperelliptic::new(c(-1.0, 0.2), vec![c(-2.0, 0.3), c(-0.7, -0.4), c(0.4, 0.5), c(1.3, -0.2), c(2.6, 0.1)])
            .unwrap();
        let pd = period_matrix(&h).unwrap();
        let v = vec![c(3.7, -2.2), c(-5.1, 4.4)];
        let r1 = pd.reduce(&v);
        let r2 = pd.reduce(&r1);
        assert_eq!(r1, r2);
        assert!(max_norm(&r1) < 1.5);
    }

    #[test]
    fn lpkdv_linearity() {
        let m = Model::new(ModelId::LpKdV, vec![c(1.2, 0.1)]).unwrap();
        let x = PhasePoint::new(vec![c(0.8, 0.1)], vec![c(1.0, -0.1)]);
        let f = FlowConfig::new(c(-1.0, 0.3), BranchSign::Plus);
        let rep = jacobi_linearity_residual(&m, &f, &x, 10).unwrap();
        assert_eq!(rep.residuals[0], 0.0);
        assert!(rep.max_residual() <= 1e-6, "{:?}", rep.candidates);
    }

    #[test]
    fn two_infinity_linearity_alternates() {
        let cases = [
            (ModelId::LpmKdV, vec![c(1.6, 0.1), c(2.7, -0.1)], c(2.0, 0.3)),
            (ModelId::LSKdV, vec![c(1.6, 0.1)], c(0.5, 0.2)),
        ];
        for (id, al, beta) in cases {
            let n = al.len();
            let m = Model::new(id, al).unwrap();
            let x = PhasePoint::new(vec![c(0.8, 0.1), c(1.1, 0.2)][..n].to_vec(), vec![c(1.0, -0.1), c(0.7, 0.1)][..n].to_vec());
            for sg in [BranchSign::Plus, BranchSign::Minus] {
                let rep = jacobi_linearity_residual(&m, &FlowConfig::new(beta, sg), &x, 8).unwrap();
                assert!(rep.max_residual() <= 1e-6, "{id} {sg:?} {}", rep.max_residual());
                assert!(rep.best_label().contains("parity"));
            }
        }
    }
}
