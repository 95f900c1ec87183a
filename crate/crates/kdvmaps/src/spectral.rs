//! Spectral curves, elliptic variables and their evolution along the generating flows.

use crate::algebra::{dot, re, Poly, C};
use crate::error::{Error, Result};
use crate::hamiltonian::integrate_field;
use crate::models::{Model, ModelId, PhasePoint};
use serde::{Deserialize, Serialize};

/// Which side of the curve equation carries `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveSign {
    /// `xi^2 = -R(lambda)`.
    MinusR,
    /// `xi^2 = R(zeta)`.
    PlusR,
}

/// Relative separation below which two branch points count as one.
pub const COLLISION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveData {
    pub model: ModelId,
    /// `R` in the curve variable, ascending coefficients.
    pub r: Poly,
    pub genus: usize,
    /// Finite branch points in the curve variable.
    pub branch_points: Vec<C>,
    /// True when infinity is a branch point.
    pub infinity_branch: bool,
    pub sign: CurveSign,
    pub degenerate: bool,
    /// Smallest relative distance between finite branch points.
    pub min_separation: f64,
}

impl CurveData {
    /// `xi^2` at a point of the curve variable.
    pub fn xi_sq(&self, z: C) -> C {
        match self.sign {
            CurveSign::MinusR => -self.r.eval(z),
            CurveSign::PlusR => self.r.eval(z),
        }
    }
}

/// Reconstructs the curve from samples of the generating function.
pub fn spectral_curve(model: &Model, x: &PhasePoint) -> Result<CurveData> {
    let num = model.numerator(x)?;
    let alpha = model.alpha_poly();
    let n = model.n();
    let expected = match model.id {
        ModelId::LpKdV | ModelId::LSKdV => n + 1,
        ModelId::LpmKdV => n,
    };
    let (r, sign) = match model.id {
        ModelId::LpKdV => (&num * &alpha, CurveSign::MinusR),
        ModelId::LpmKdV => ((&num * &alpha).scale(re(-4.0)), CurveSign::PlusR),
        ModelId::LSKdV => {
            let z = Poly::new(vec![re(0.0), re(1.0)]);
            (&(&num * &alpha) * &z.scale(re(-4.0)), CurveSign::PlusR)
        }
    };
    let mut degenerate = false;
    let scale = num.max_coeff();
    let top = num.coeffs.get(expected).copied().unwrap_or_default();
    if top.norm() <= 1e-10 * scale {
        degenerate = true;
    }
    let mut branch = model.poles();
    if !num.is_zero() && num.degree() > 0 {
        branch.extend(num.trimmed(1e-13).roots()?);
    } else if num.is_zero() {
        return Err(Error::DegenerateCurve("generating function vanishes identically".into()));
    }
    if model.id == ModelId::LSKdV {
        branch.push(re(0.0));
    }
    let mut min_sep = f64::INFINITY;
    for i in 0..branch.len() {
        for j in 0..i {
            let d = (branch[i] - branch[j]).norm() / (1.0 + branch[i].norm().max(branch[j].norm()));
            min_sep = min_sep.min(d);
        }
    }
    if min_sep <= COLLISION_TOL {
        degenerate = true;
    }
    branch.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(CurveData {
        model: model.id,
        r,
        genus: model.genus(),
        branch_points: branch,
        infinity_branch: model.id == ModelId::LpKdV,
        sign,
        degenerate,
        min_separation: min_sep,
    })
}

/// Zeros of the off-diagonal Lax entries and their lifts to the curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipticVars {
    /// Zeros of the lower-left entry, in the curve variable.
    pub nu: Vec<C>,
    pub nu_xi: Vec<C>,
    /// Zeros of the upper-right entry (squared models only).
    pub mu: Vec<C>,
    pub mu_xi: Vec<C>,
    /// Numerators of the lower-left and upper-right entries.
    pub n_poly: Poly,
    pub m_poly: Option<Poly>,
}

/// `c0 * alpha(z) + sum_j w_j prod_{k != j} (z - e_k)`.
fn clear_denominators(poles: &[C], c0: C, w: &[C]) -> Poly {
    let mut out = Poly::from_roots(poles).scale(c0);
    for (j, wj) in w.iter().enumerate().take(poles.len()) {
        let others: Vec<C> = poles.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, e)| *e).collect();
        out = &out + &Poly::from_roots(&others).scale(*wj);
    }
    out
}

fn roots_with_degree(p: &Poly, deg: usize, what: &str) -> Result<Vec<C>> {
    let scale = p.max_coeff();
    let lead = p.coeffs.get(deg).copied().unwrap_or_default();
    if lead.norm() <= 1e-12 * scale.max(1e-300) {
        return Err(Error::Degenerate(format!("leading coefficient of {what} vanishes")));
    }
    if deg == 0 {
        return Ok(vec![]);
    }
    Poly::new(p.coeffs[..=deg].to_vec()).roots()
}

/// Diagonal entry as a function of the curve variable (divided by `lambda` for LSKdV).
fn diag_in_curve_var(model: &Model, x: &PhasePoint, z: C) -> C {
    let poles = model.poles();
    let sum = |k: i32| -> C {
        model.alpha.iter().zip(&poles).zip(x.p.iter().zip(&x.q)).map(|((a, e), (p, q))| a.powi(k) * p * q / (z - e)).sum()
    };
    match model.id {
        ModelId::LpKdV => crate::algebra::csqrt(dot(&x.q, &x.q)) + sum(0),
        ModelId::LpmKdV => re(0.5) + sum(2),
        ModelId::LSKdV => re(0.5) + sum(0),
    }
}

/// Lift of a zero of an off-diagonal entry: `xi` with `xi^2 = -+R`.
pub fn lift(model: &Model, x: &PhasePoint, z: C) -> C {
    let d = diag_in_curve_var(model, x, z);
    let al = model.alpha_at(z);
    match model.id {
        ModelId::LpKdV => al * d,
        ModelId::LpmKdV => 2.0 * al * d,
        ModelId::LSKdV => 2.0 * z * al * d,
    }
}

pub fn elliptic_variables(model: &Model, x: &PhasePoint) -> Result<EllipticVars> {
    let poles = model.poles();
    let n = model.n();
    let (p, q) = (&x.p, &x.q);
    let sq = |v: &[C], k: i32| -> Vec<C> { model.alpha.iter().zip(v).map(|(a, y)| a.powi(k) * y * y).collect() };
    let (n_poly, n_deg, m_poly) = match model.id {
        ModelId::LpKdV => (clear_denominators(&poles, re(1.0), &sq(q, 0)), n, None),
        ModelId::LpmKdV => {
            let np = clear_denominators(&poles, re(0.0), &sq(q, 1));
            let mp = clear_denominators(&poles, re(0.0), &sq(p, 1));
            (np, n - 1, Some((mp, n - 1)))
        }
        ModelId::LSKdV => {
            let np = clear_denominators(&poles, re(1.0), &sq(q, 1));
            let mp = clear_denominators(&poles, -dot(p, q), &sq(p, 1).iter().map(|v| -v).collect::<Vec<_>>());
            (np, n, Some((mp, n)))
        }
    };
    let nu = roots_with_degree(&n_poly, n_deg, "the lower-left numerator")?;
    let nu_xi = nu.iter().map(|z| lift(model, x, *z)).collect();
    let (mu, mu_xi, m_out) = match m_poly {
        Some((mp, deg)) => {
            let mu = roots_with_degree(&mp, deg, "the upper-right numerator")?;
            let xi = mu.iter().map(|z| lift(model, x, *z)).collect();
            (mu, xi, Some(Poly::new(mp.coeffs[..=deg].to_vec())))
        }
        None => (vec![], vec![], None),
    };
    Ok(EllipticVars { nu, nu_xi, mu, mu_xi, n_poly: Poly::new(n_poly.coeffs[..=n_deg].to_vec()), m_poly: m_out })
}

/// Canonical vector field of `F_lambda` by central differences with step `eps`.
pub fn generating_vector_field(model: &Model, lambda: C, x: &PhasePoint, eps: f64) -> Result<PhasePoint> {
    let n = model.n();
    let f = |y: &PhasePoint| model.generating_function(y, lambda);
    let mut dp = vec![C::new(0.0, 0.0); n];
    let mut dq = vec![C::new(0.0, 0.0); n];
    for j in 0..n {
        let mut e = PhasePoint::new(vec![C::new(0.0, 0.0); n], vec![C::new(0.0, 0.0); n]);
        e.p[j] = re(1.0);
        let gp = (f(&x.axpy(re(eps), &e))? - f(&x.axpy(re(-eps), &e))?) / (2.0 * eps);
        e.p[j] = re(0.0);
        e.q[j] = re(1.0);
        let gq = (f(&x.axpy(re(eps), &e))? - f(&x.axpy(re(-eps), &e))?) / (2.0 * eps);
        dp[j] = -gq;
        dq[j] = gp;
    }
    Ok(PhasePoint::new(dp, dq))
}

/// Pairs `new` with `old` by nearest neighbour; fails when a move exceeds half the smallest gap.
pub fn track_roots(old: &[C], new: &[C]) -> Result<Vec<C>> {
    if old.len() != new.len() {
        return Err(Error::RootTracking("root count changed".into()));
    }
    let mut gap = f64::INFINITY;
    for i in 0..old.len() {
        for j in 0..i {
            gap = gap.min((old[i] - old[j]).norm());
        }
    }
    let mut used = vec![false; new.len()];
    let mut out = Vec::with_capacity(old.len());
    for o in old {
        let (k, d) = new
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, z)| (k, (z - o).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::RootTracking("no candidate".into()))?;
        if d > 0.5 * gap {
            return Err(Error::RootTracking(format!("root moved {d:e}, half gap {:e}", 0.5 * gap)));
        }
        used[k] = true;
        out.push(new[k]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DubrovinCheck {
    pub residual: f64,
    pub residual_half: f64,
}

fn dubrovin_at(model: &Model, x: &PhasePoint, lambda: C, h: f64) -> Result<f64> {
    let field = |y: &PhasePoint| generating_vector_field(model, lambda, y, 1e-7);
    let xp = integrate_field(field, x, h, 1e-12)?.0;
    let xm = integrate_field(field, x, -h, 1e-12)?.0;
    let ev = elliptic_variables(model, x)?;
    let pick = |e: &EllipticVars| -> (Vec<C>, Vec<C>) {
        match model.id {
            ModelId::LSKdV => (e.mu.clone(), e.mu_xi.clone()),
            _ => (e.nu.clone(), e.nu_xi.clone()),
        }
    };
    let (z0, xi0) = pick(&ev);
    let zp = track_roots(&z0, &pick(&elliptic_variables(model, &xp)?).0)?;
    let zm = track_roots(&z0, &pick(&elliptic_variables(model, &xm)?).0)?;
    let poly = match model.id {
        ModelId::LSKdV => ev.m_poly.clone().expect("upper-right numerator"),
        _ => ev.n_poly.clone(),
    };
    let dpoly = poly.derivative();
    let zl = model.curve_var(lambda);
    let al = model.alpha_at(zl);
    let mut worst = 0.0f64;
    for k in 0..z0.len() {
        let lhs = (zp[k] - zm[k]) / (2.0 * h);
        let frac = poly.eval(zl) / ((zl - z0[k]) * dpoly.eval(z0[k]));
        let rhs = match model.id {
            ModelId::LpKdV => 2.0 * xi0[k] * (-2.0 / al) * frac,
            _ => 2.0 * xi0[k] / al * frac,
        };
        worst = worst.max((lhs - rhs).norm() / (1.0 + rhs.norm()));
    }
    Ok(worst)
}

/// Central difference of the elliptic variables along the `F_lambda` flow against
/// the Dubrovin right-hand side, at `h` and `h/2`.
pub fn dubrovin_residual(model: &Model, x: &PhasePoint, lambda: C, h: f64) -> Result<DubrovinCheck> {
    if model.id == ModelId::LpmKdV {
        return Err(Error::Config("Dubrovin equations are provided for LpKdV and LSKdV".into()));
    }
    Ok(DubrovinCheck { residual: dubrovin_at(model, x, lambda, h)?, residual_half: dubrovin_at(model, x, lambda, 0.5 * h)? })
}
