//! Finite-difference structure checks, random admissible data and the suite runner.

use crate::algebra::{c, csqrt, dot, re, Mat2, Poly, C};
use crate::error::{Error, Result};
use crate::hamiltonian::{flow, flow_map_commutator, flow_path, relative_drift, z_evolution_residual};
use crate::maps::{apply_map, extract_u, lattice_evolve, lattice_residual, FlowConfig};
use crate::models::{darboux_matrix, BranchSign, DarbouxParams, Model, ModelId, PhasePoint};
use crate::riemann::jacobi_linearity_residual;
use crate::spectral::{dubrovin_residual, spectral_curve};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-6;

type M4 = [[C; 4]; 4];

/// Central-difference gradient `(df/dp, df/dq)`.
pub fn gradient<F>(f: &F, x: &PhasePoint, h: f64) -> Result<(Vec<C>, Vec<C>)>
where
    F: Fn(&PhasePoint) -> Result<C>,
{
    let n = x.dim();
    let mut gp = vec![C::new(0.0, 0.0); n];
    let mut gq = vec![C::new(0.0, 0.0); n];
    for j in 0..n {
        for (g, in_p) in [(&mut gp, true), (&mut gq, false)] {
            let shifted = |s: f64| {
                let mut y = x.clone();
                if in_p {
                    y.p[j] += s;
                } else {
                    y.q[j] += s;
                }
                f(&y)
            };
            g[j] = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        }
    }
    Ok((gp, gq))
}

/// `sum_j df/dp_j dg/dq_j - df/dq_j dg/dp_j` by central differences.
pub fn poisson_bracket<F, G>(f: &F, g: &G, x: &PhasePoint, h: f64) -> Result<C>
where
    F: Fn(&PhasePoint) -> Result<C>,
    G: Fn(&PhasePoint) -> Result<C>,
{
    let (fp, fq) = gradient(f, x, h)?;
    let (gp, gq) = gradient(g, x, h)?;
    Ok(dot(&fp, &gq) - dot(&fq, &gp))
}

/// Max of `|{F_j, F_k}| / (1 + |grad F_j| |grad F_k|)` over all pairs of integrals.
pub fn involution_residual(model: &Model, x: &PhasePoint, h: f64) -> Result<f64> {
    let m = model.integrals(x)?.len();
    let fs: Vec<_> = (0..m).map(|k| move |y: &PhasePoint| Ok(model.integrals(y)?[k])).collect();
    let grads: Vec<(Vec<C>, Vec<C>)> = fs.iter().map(|f| gradient(f, x, h)).collect::<Result<_>>()?;
    let size = |g: &(Vec<C>, Vec<C>)| g.0.iter().chain(&g.1).fold(0.0f64, |m, z| m.max(z.norm()));
    let mut worst = 0.0f64;
    for j in 0..m {
        for k in j + 1..m {
            let (fp, fq) = &grads[j];
            let (gp, gq) = &grads[k];
            let b = dot(fp, gq) - dot(fq, gp);
            worst = worst.max(b.norm() / (1.0 + size(&grads[j]) * size(&grads[k])));
        }
    }
    Ok(worst)
}

/// Real and imaginary parts of `sum dp ^ dq` on the coordinates (Re p, Im p, Re q, Im q).
fn symplectic_forms(n: usize) -> [Vec<Vec<f64>>; 2] {
    let mut wr = vec![vec![0.0; 4 * n]; 4 * n];
    let mut wi = vec![vec![0.0; 4 * n]; 4 * n];
    let (pr, pi, qr, qi) = (0, n, 2 * n, 3 * n);
    for j in 0..n {
        let put = |w: &mut Vec<Vec<f64>>, a: usize, b: usize, s: f64| {
            w[a + j][b + j] += s;
            w[b + j][a + j] -= s;
        };
        put(&mut wr, pr, qr, 1.0);
        put(&mut wr, pi, qi, -1.0);
        put(&mut wi, pr, qi, 1.0);
        put(&mut wi, pi, qr, 1.0);
    }
    [wr, wi]
}

/// `max |J^T W J - W|` over both real forms, with `J` the central-difference Jacobian of `map`.
pub fn symplecticity_of<F>(map: F, x: &PhasePoint, h: f64) -> Result<f64>
where
    F: Fn(&PhasePoint) -> Result<PhasePoint>,
{
    let n = x.dim();
    let d = 4 * n;
    let x0 = x.to_real();
    let mut jac = vec![vec![0.0; d]; d];
    for k in 0..d {
        let eval = |s: f64| {
            let mut v = x0.clone();
            v[k] += s;
            map(&PhasePoint::from_real_coords(&v)).map(|y| y.to_real())
        };
        let (yp, ym) = (eval(h)?, eval(-h)?);
        for i in 0..d {
            jac[i][k] = (yp[i] - ym[i]) / (2.0 * h);
        }
    }
    let mut worst = 0.0f64;
    for w in symplectic_forms(n) {
        for a in 0..d {
            for b in 0..d {
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        s += jac[i][a] * w[i][j] * jac[j][b];
                    }
                }
                worst = worst.max((s - w[a][b]).abs());
            }
        }
    }
    Ok(worst)
}

/// Symplecticity of `S_beta` at `x`.
pub fn symplecticity_residual(model: &Model, flow: &FlowConfig, x: &PhasePoint, h: f64) -> Result<f64> {
    symplecticity_of(|y| Ok(apply_map(model, flow, y)?.0), x, h)
}

fn m4_zero() -> M4 {
    [[C::new(0.0, 0.0); 4]; 4]
}

fn m4_mul(a: &M4, b: &M4) -> M4 {
    let mut r = m4_zero();
    for i in 0..4 {
        for j in 0..4 {
            r[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    r
}

fn m4_comm(a: &M4, b: &M4) -> M4 {
    let (x, y) = (m4_mul(a, b), m4_mul(b, a));
    let mut r = m4_zero();
    for i in 0..4 {
        for j in 0..4 {
            r[i][j] = x[i][j] - y[i][j];
        }
    }
    r
}

fn m4_lin(a: C, x: &M4, b: C, y: &M4) -> M4 {
    let mut r = m4_zero();
    for i in 0..4 {
        for j in 0..4 {
            r[i][j] = a * x[i][j] + b * y[i][j];
        }
    }
    r
}

/// `A (x) B` with row `2i+k`, column `2j+l`.
fn kron(a: &Mat2, b: &Mat2) -> M4 {
    let mut r = m4_zero();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    r[2 * i + k][2 * j + l] = a.entry(i, j) * b.entry(k, l);
                }
            }
        }
    }
    r
}

/// The array `{L(lambda) (x) L(mu)}` of brackets of Lax entries.
pub fn lax_bracket(model: &Model, x: &PhasePoint, lambda: C, mu: C, h: f64) -> Result<M4> {
    let entries = |z: C| -> Result<Vec<(Vec<C>, Vec<C>)>> {
        (0..4).map(|e| gradient(&|y: &PhasePoint| Ok(model.lax_matrix(y, z)?.entry(e / 2, e % 2)), x, h)).collect()
    };
    let (gl, gm) = (entries(lambda)?, entries(mu)?);
    let mut b = m4_zero();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    let (fp, fq) = &gl[2 * i + j];
                    let (gp, gq) = &gm[2 * k + l];
                    b[2 * i + k][2 * j + l] = dot(fp, gq) - dot(fq, gp);
                }
            }
        }
    }
    Ok(b)
}

fn pmat(l: C, u: C) -> M4 {
    let mut r = m4_zero();
    r[0][0] = l;
    r[3][3] = l;
    r[1][2] = u;
    r[2][1] = u;
    r
}

/// The classical r-matrix side of the fundamental bracket.
pub fn rmatrix_rhs(model: &Model, x: &PhasePoint, lambda: C, mu: C) -> Result<M4> {
    let l1 = kron(&model.lax_matrix(x, lambda)?, &Mat2::identity());
    let l2 = kron(&Mat2::identity(), &model.lax_matrix(x, mu)?);
    let one = re(1.0);
    Ok(match model.id {
        ModelId::LpKdV => {
            let v = csqrt(dot(&x.q, &x.q));
            let (d, w) = (2.0 / (lambda - mu), v.inv());
            let mut r12 = pmat(d, d);
            r12[0][2] = -w;
            r12[1][3] = w;
            let mut r21 = pmat(-d, -d);
            r21[0][1] = -w;
            r21[2][3] = w;
            m4_lin(one, &m4_comm(&r12, &l1), -one, &m4_comm(&r21, &l2))
        }
        ModelId::LpmKdV => {
            let r = |l: C, u: C| {
                let p = pmat(l, u);
                m4_lin(2.0 * l / (l * l - u * u), &p, re(0.0), &p)
            };
            m4_lin(one, &m4_comm(&r(lambda, mu), &l1), -one, &m4_comm(&r(mu, lambda), &l2))
        }
        ModelId::LSKdV => {
            let k = 2.0 / (lambda * lambda - mu * mu);
            let mut s3sp = m4_zero();
            s3sp[0][1] = one;
            s3sp[2][3] = -one;
            let mut sps3 = m4_zero();
            sps3[0][2] = one;
            sps3[1][3] = -one;
            let r = m4_lin(k, &pmat(mu, lambda), one, &s3sp);
            let rp = m4_lin(k, &pmat(lambda, mu), -one, &sps3);
            m4_lin(one, &m4_comm(&r, &l1), one, &m4_comm(&rp, &l2))
        }
    })
}

/// `max |(-{L (x) L}) - rhs| / max(|{L (x) L}|, |rhs|)`.
pub fn rmatrix_residual(model: &Model, x: &PhasePoint, lambda: C, mu: C, h: f64) -> Result<f64> {
    let (zl, zm) = (model.curve_var(lambda), model.curve_var(mu));
    if (zl - zm).norm() <= 1e-8 * (1.0 + zl.norm()) {
        return Err(Error::Config("spectral parameters coincide".into()));
    }
    let b = lax_bracket(model, x, lambda, mu, h)?;
    let r = rmatrix_rhs(model, x, lambda, mu)?;
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for i in 0..4 {
        for j in 0..4 {
            diff = diff.max((b[i][j] + r[i][j]).norm());
            scale = scale.max(b[i][j].norm()).max(r[i][j].norm());
        }
    }
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// `|L(S x) D - D L(x)| / (|L(S x)| |D| + |D| |L(x)|)` at one `lambda`.
pub fn lax_residual(model: &Model, beta: C, params: &DarbouxParams, x: &PhasePoint, y: &PhasePoint, lambda: C) -> Result<f64> {
    let d = darboux_matrix(beta, params, lambda);
    let (l0, l1) = (model.lax_matrix(x, lambda)?, model.lax_matrix(y, lambda)?);
    let lhs = l1 * d;
    let rhs = d * l0;
    let diff = Mat2::new(lhs.a - rhs.a, lhs.b - rhs.b, lhs.c - rhs.c, lhs.d - rhs.d);
    Ok(diff.norm() / (d.norm() * (l0.norm() + l1.norm())))
}

/// `|det D - target| / scale` with target `lambda - beta` or `lambda^2 - beta^2`.
pub fn determinant_residual(model: &Model, beta: C, params: &DarbouxParams, lambda: C) -> f64 {
    let d = darboux_matrix(beta, params, lambda);
    let target = match model.id {
        ModelId::LpKdV => lambda - beta,
        _ => lambda * lambda - beta * beta,
    };
    let scale = target.norm().max((d.a * d.d).norm()).max((d.b * d.c).norm());
    (d.det() - target).norm() / scale
}

/// One lattice step; the checks below take it as a parameter so a test hook can replace it.
pub type StepFn<'a> = dyn Fn(&FlowConfig, &PhasePoint) -> Result<(PhasePoint, DarbouxParams)> + 'a;

/// `|S_1 S_2 x - S_2 S_1 x| / (1 + |x|)`.
pub fn commutativity_with(step: &StepFn, f1: &FlowConfig, f2: &FlowConfig, x: &PhasePoint) -> Result<f64> {
    let a = step(f1, &step(f2, x)?.0)?.0;
    let b = step(f2, &step(f1, x)?.0)?.0;
    Ok(a.dist(&b) / (1.0 + x.norm()))
}

pub fn commutativity_residual(model: &Model, f1: &FlowConfig, f2: &FlowConfig, x: &PhasePoint) -> Result<f64> {
    commutativity_with(&|f, y| apply_map(model, f, y), f1, f2, x)
}

/// Max relative drift of every integral over `steps` iterations.
pub fn conservation_with(step: &StepFn, model: &Model, flow: &FlowConfig, x: &PhasePoint, steps: usize) -> Result<f64> {
    let f0 = model.integrals(x)?;
    let mut y = x.clone();
    let mut worst = 0.0f64;
    for k in 0..steps {
        y = step(flow, &y).map_err(|e| e.at_step(k))?.0;
        let f = model.integrals(&y)?;
        worst = f0.iter().zip(&f).fold(worst, |m, (a, b)| m.max(relative_drift(*a, *b)));
    }
    Ok(worst)
}

pub fn conservation_drift(model: &Model, flow: &FlowConfig, x: &PhasePoint, steps: usize) -> Result<f64> {
    conservation_with(&|f, y| apply_map(model, f, y), model, flow, x, steps)
}

/// Relative change of the curve polynomial across one step.
pub fn curve_invariance_with(step: &StepFn, model: &Model, flow: &FlowConfig, x: &PhasePoint) -> Result<f64> {
    let r0 = model.numerator(x)?;
    let r1 = model.numerator(&step(flow, x)?.0)?;
    let scale = r0.max_coeff().max(1e-300);
    let n = r0.coeffs.len().max(r1.coeffs.len());
    let get = |p: &Poly, k: usize| p.coeffs.get(k).copied().unwrap_or_default();
    Ok((0..n).fold(0.0f64, |m, k| m.max((get(&r0, k) - get(&r1, k)).norm())) / scale)
}

pub fn curve_invariance(model: &Model, flow: &FlowConfig, x: &PhasePoint) -> Result<f64> {
    curve_invariance_with(&|f, y| apply_map(model, f, y), model, flow, x)
}

/// A model with a phase point and two lattice directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub model: Model,
    pub x: PhasePoint,
    pub flow1: FlowConfig,
    pub flow2: FlowConfig,
}

fn uniform_c(rng: &mut ChaCha8Rng, lo: f64, hi: f64, im: f64) -> C {
    c(rng.gen_range(lo..hi), rng.gen_range(-im..im))
}

fn draw(id: ModelId, n: usize, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let shift = if id.uses_zeta() { 0.5 } else { 0.0 };
    let alpha: Vec<C> =
        (1..=n).map(|j| c(j as f64 + shift + rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.2))).collect();
    let model = Model::new(id, alpha)?;
    let p = (0..n).map(|_| uniform_c(rng, 0.5, 1.5, 0.3)).collect();
    let q = (0..n).map(|_| uniform_c(rng, 0.5, 1.5, 0.3)).collect();
    let jitter = |rng: &mut ChaCha8Rng| c(rng.gen_range(-0.1..0.1), rng.gen_range(-0.05..0.05));
    let (b1, b2) = match id {
        ModelId::LpKdV => (c(-1.0, 0.3), c(-2.5, -0.2)),
        ModelId::LSKdV => (c(0.5, 0.2), c(0.7, -0.1)),
        ModelId::LpmKdV => {
            let mid = 0.5 * (model.alpha[0].norm() + model.alpha[n - 1].norm());
            let phase = model.alpha.iter().map(|a| a.arg()).sum::<f64>() / n as f64;
            (C::from_polar(mid + 0.25, phase), C::from_polar(mid - 0.25, phase))
        }
    };
    let sign = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { BranchSign::Plus } else { BranchSign::Minus };
    let flow1 = FlowConfig::new(b1 + jitter(rng), sign(rng));
    let flow2 = FlowConfig::new(b2 + jitter(rng), sign(rng));
    Ok(Instance { model, x: PhasePoint::new(p, q), flow1, flow2 })
}

/// The first step may enlarge the state by at most this factor of `1 + |x0|`.
pub const MAX_STEP_GROWTH: f64 = 10.0;

/// Orbit states stay within this factor of `1 + |x0|`.
pub const MAX_EXCURSION: f64 = 100.0;

/// State size, invariant under the LpmKdV rescaling `p -> t p, q -> q / t`.
pub fn orbit_size(model: &Model, x: &PhasePoint) -> f64 {
    match model.id {
        ModelId::LpmKdV => {
            let n2 = |v: &[C]| v.iter().map(|z| z.norm_sqr()).sum::<f64>();
            (n2(&x.p) * n2(&x.q)).sqrt().sqrt() * std::f64::consts::SQRT_2
        }
        _ => x.norm(),
    }
}

/// Sample points of the first canonical flow over `[0, 1]` checked against the excursion bound.
pub const FLOW_SEGMENTS: usize = 20;

/// Orbits of both lattice directions and the first canonical flow stay finite and away
/// from poles, the first step is well conditioned and the curve is non-degenerate.
pub fn admissible(inst: &Instance, steps: usize) -> bool {
    let m = &inst.model;
    let size0 = orbit_size(m, &inst.x);
    let ok = |f: &FlowConfig| match crate::maps::iterate_orbit(m, f, &inst.x, steps) {
        Ok(orbit) => {
            orbit[1..].iter().all(|(y, _)| orbit_size(m, y) <= MAX_EXCURSION * (1.0 + size0))
                && orbit_size(m, &orbit[1].0) <= MAX_STEP_GROWTH * (1.0 + size0)
        }
        Err(_) => false,
    };
    let bounded = |path: Vec<PhasePoint>| path.iter().all(|y| orbit_size(m, y) <= MAX_EXCURSION * (1.0 + size0));
    let flow_ok = || flow_path(m, &inst.x, 1.0, FLOW_SEGMENTS, 1e-6).is_ok_and(bounded);
    let curve = spectral_curve(m, &inst.x);
    ok(&inst.flow1) && ok(&inst.flow2) && matches!(curve, Ok(ref c) if !c.degenerate) && flow_ok()
}

/// Maximum number of rejected draws per seed.
pub const MAX_RETRIES: usize = 100;

/// Orbit length over which a draw must stay inside the growth guard.
pub const ADMISSIBLE_STEPS: usize = 100;

/// Random admissible instance: real parts in [0.5, 1.5], small imaginary parts.
pub fn random_instance(id: ModelId, n: usize, seed: u64) -> Result<Instance> {
    if n == 0 {
        return Err(Error::Config("N must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_RETRIES {
        let inst = draw(id, n, &mut rng)?;
        if admissible(&inst, ADMISSIBLE_STEPS) {
            return Ok(inst);
        }
    }
    Err(Error::Degenerate(format!("no admissible sample for seed {seed} after {MAX_RETRIES} draws")))
}

/// Spectral parameters on a circle well outside the spectrum.
pub fn random_spectral_points(model: &Model, count: usize, rng: &mut ChaCha8Rng) -> Vec<C> {
    let r0 = 2.0 + model.alpha.iter().fold(0.0f64, |m, a| m.max(a.norm()));
    (0..count)
        .map(|_| C::from_polar(r0 * rng.gen_range(1.0..2.0), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect()
}

/// The checks the suite can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Commutativity,
    Conservation,
    CurveInvariance,
    Determinant,
    Dubrovin,
    FlowMap,
    HamiltonianDrift,
    Involution,
    JacobiLinearity,
    Lattice,
    LaxResidual,
    RMatrix,
    Symplecticity,
    ZEvolution,
}

impl Check {
    pub const ALL: [Check; 14] = [
        Check::Commutativity,
        Check::Conservation,
        Check::CurveInvariance,
        Check::Determinant,
        Check::Dubrovin,
        Check::FlowMap,
        Check::HamiltonianDrift,
        Check::Involution,
        Check::JacobiLinearity,
        Check::Lattice,
        Check::LaxResidual,
        Check::RMatrix,
        Check::Symplecticity,
        Check::ZEvolution,
    ];

    pub fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
    }

    pub fn default_tolerance(self) -> f64 {
        match self {
            Check::Determinant => 1e-13,
            Check::LaxResidual => 1e-11,
            Check::Commutativity | Check::Conservation | Check::CurveInvariance => 1e-9,
            Check::Lattice => 1e-8,
            Check::HamiltonianDrift => 1e-8,
            Check::Symplecticity | Check::Involution | Check::FlowMap | Check::ZEvolution | Check::JacobiLinearity => 1e-6,
            Check::RMatrix | Check::Dubrovin => 1e-5,
        }
    }

    /// Whether the check is defined for the instance.
    pub fn applies(self, model: &Model) -> bool {
        match self {
            Check::ZEvolution => model.id == ModelId::LpKdV,
            Check::Dubrovin => model.id != ModelId::LpmKdV,
            Check::JacobiLinearity => matches!(model.genus(), 1 | 2),
            _ => true,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Identifies the inputs of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub model: ModelId,
    pub n: usize,
    pub alpha: Vec<C>,
    pub beta1: C,
    pub beta2: C,
    pub sigma1: BranchSign,
    pub sigma2: BranchSign,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    /// `None` when the check aborted.
    pub residual: Option<f64>,
    /// Residual at half the step, for finite-difference checks.
    pub residual_half: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
    pub error: Option<String>,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub fingerprint: Fingerprint,
    /// Sorted by name.
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

/// Suite settings; `instance` overrides the random draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub model: ModelId,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub instance: Option<Instance>,
    /// Empty means every applicable check.
    #[serde(default)]
    pub checks: Option<Vec<Check>>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Test hook: rescale `p` after every map step.
    #[serde(default)]
    pub corrupt_map: bool,
}

fn default_steps() -> usize {
    100
}

fn default_grid() -> usize {
    20
}

impl SuiteConfig {
    pub fn new(model: ModelId, n: usize, seed: u64) -> Self {
        SuiteConfig {
            model,
            n,
            seed,
            instance: None,
            checks: None,
            tolerances: BTreeMap::new(),
            steps: default_steps(),
            grid: default_grid(),
            corrupt_map: false,
        }
    }

    pub fn tolerance(&self, check: Check) -> f64 {
        self.tolerances.get(&check.name()).copied().unwrap_or_else(|| check.default_tolerance())
    }

    pub fn resolve_instance(&self) -> Result<Instance> {
        match &self.instance {
            Some(i) => Ok(i.clone()),
            None => random_instance(self.model, self.n, self.seed),
        }
    }
}

struct Outcome {
    residual: f64,
    half: Option<f64>,
    detail: Option<String>,
}

impl Outcome {
    fn plain(residual: f64) -> Self {
        Outcome { residual, half: None, detail: None }
    }
}

struct Runner<'a> {
    cfg: &'a SuiteConfig,
    inst: Instance,
}

impl Runner<'_> {
    fn step(&self, f: &FlowConfig, x: &PhasePoint) -> Result<(PhasePoint, DarbouxParams)> {
        let (mut y, prm) = apply_map(&self.inst.model, f, x)?;
        if self.cfg.corrupt_map {
            y.p.iter_mut().for_each(|z| *z *= 1.0 + 1e-4);
        }
        Ok((y, prm))
    }

    fn flows(&self) -> [FlowConfig; 2] {
        [self.inst.flow1, self.inst.flow2]
    }

    fn run(&self, check: Check) -> Result<Outcome> {
        let m = &self.inst.model;
        let x = &self.inst.x;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x5eed);
        let step = |f: &FlowConfig, y: &PhasePoint| self.step(f, y);
        match check {
            Check::Conservation => {
                let mut worst = 0.0f64;
                for f in self.flows() {
                    worst = worst.max(conservation_with(&step, m, &f, x, self.cfg.steps)?);
                }
                Ok(Outcome::plain(worst))
            }
            Check::Involution => {
                let r = involution_residual(m, x, FD_STEP)?;
                let r2 = involution_residual(m, x, 0.5 * FD_STEP)?;
                Ok(Outcome { residual: r, half: Some(r2), detail: None })
            }
            Check::Symplecticity => {
                let (mut r, mut r2) = (0.0f64, 0.0f64);
                for f in self.flows() {
                    let map = |y: &PhasePoint| Ok(self.step(&f, y)?.0);
                    r = r.max(symplecticity_of(map, x, FD_STEP)?);
                    r2 = r2.max(symplecticity_of(map, x, 0.5 * FD_STEP)?);
                }
                Ok(Outcome { residual: r, half: Some(r2), detail: None })
            }
            Check::LaxResidual => {
                let mut worst = 0.0f64;
                for f in self.flows() {
                    let mut y = x.clone();
                    for k in 0..10 {
                        let (z, prm) = self.step(&f, &y).map_err(|e| e.at_step(k))?;
                        for l in random_spectral_points(m, 10, &mut rng) {
                            worst = worst.max(lax_residual(m, f.beta, &prm, &y, &z, l)?);
                        }
                        y = z;
                    }
                }
                Ok(Outcome::plain(worst))
            }
            Check::Determinant => {
                let mut worst = 0.0f64;
                for f in self.flows() {
                    let prm = self.step(&f, x)?.1;
                    for l in random_spectral_points(m, 100, &mut rng) {
                        worst = worst.max(determinant_residual(m, f.beta, &prm, l));
                    }
                }
                Ok(Outcome::plain(worst))
            }
            Check::Commutativity => {
                let [f1, f2] = self.flows();
                Ok(Outcome::plain(commutativity_with(&step, &f1, &f2, x)?))
            }
            Check::CurveInvariance => {
                let mut worst = 0.0f64;
                for f in self.flows() {
                    worst = worst.max(curve_invariance_with(&step, m, &f, x)?);
                }
                Ok(Outcome::plain(worst))
            }
            Check::Lattice => {
                let [f1, f2] = self.flows();
                let g = self.cfg.grid;
                let grid = lattice_evolve(m, &f1, &f2, x, g, g)?;
                let u = extract_u(&grid)?;
                let st = lattice_residual(m.id, &u, f1.beta, f2.beta);
                let detail = format!("mean {:e}, commutativity {:e}", st.mean, grid.commutativity);
                Ok(Outcome { residual: st.max, half: None, detail: Some(detail) })
            }
            Check::HamiltonianDrift => {
                let r = flow(m, x, 1.0, 1e-10)?;
                Ok(Outcome::plain(r.drift.iter().fold(0.0f64, |w, d| w.max(*d))))
            }
            Check::FlowMap => {
                let mut worst = 0.0f64;
                for f in self.flows() {
                    worst = worst.max(flow_map_commutator(m, &f, x, 0.1, 1e-12)?);
                }
                Ok(Outcome::plain(worst))
            }
            Check::ZEvolution => {
                let f = self.inst.flow1;
                let z = z_evolution_residual(m, f.beta, f.sigma, x, 1e-4)?;
                Ok(Outcome { residual: z.residual, half: Some(z.residual_half), detail: Some(format!("ratio {:.3}", z.ratio)) })
            }
            Check::Dubrovin => {
                let l = random_spectral_points(m, 1, &mut rng)[0];
                let d = dubrovin_residual(m, x, l, 1e-3)?;
                Ok(Outcome { residual: d.residual, half: Some(d.residual_half), detail: None })
            }
            Check::RMatrix => {
                let mut worst = 0.0f64;
                let mut worst_half = 0.0f64;
                for _ in 0..5 {
                    let pts = random_spectral_points(m, 2, &mut rng);
                    worst = worst.max(rmatrix_residual(m, x, pts[0], pts[1], FD_STEP)?);
                    worst_half = worst_half.max(rmatrix_residual(m, x, pts[0], pts[1], 0.5 * FD_STEP)?);
                }
                Ok(Outcome { residual: worst, half: Some(worst_half), detail: None })
            }
            Check::JacobiLinearity => {
                let rep = jacobi_linearity_residual(m, &self.inst.flow1, x, 10)?;
                Ok(Outcome { residual: rep.max_residual(), half: None, detail: Some(rep.best_label().to_owned()) })
            }
        }
    }
}

/// Runs the configured checks; failures of individual checks are recorded, not raised.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    for name in cfg.tolerances.keys() {
        if !Check::ALL.iter().any(|c| c.name() == *name) {
            return Err(Error::Config(format!("unknown check '{name}' in tolerances")));
        }
    }
    let inst = cfg.resolve_instance()?;
    if inst.model.id != cfg.model || inst.model.n() != cfg.n {
        return Err(Error::Config("instance does not match model and N".into()));
    }
    let checks: Vec<Check> = match &cfg.checks {
        Some(list) => {
            if let Some(c) = list.iter().find(|c| !c.applies(&inst.model)) {
                return Err(Error::Config(format!("check '{c}' does not apply to {} with N = {}", cfg.model, cfg.n)));
            }
            list.clone()
        }
        None => Check::ALL.iter().copied().filter(|c| c.applies(&inst.model)).collect(),
    };
    let fingerprint = Fingerprint {
        model: inst.model.id,
        n: inst.model.n(),
        alpha: inst.model.alpha.clone(),
        beta1: inst.flow1.beta,
        beta2: inst.flow2.beta,
        sigma1: inst.flow1.sigma,
        sigma2: inst.flow2.sigma,
        seed: cfg.seed,
    };
    let runner = Runner { cfg, inst };
    let mut results: Vec<CheckResult> = checks
        .iter()
        .map(|&c| {
            let tolerance = cfg.tolerance(c);
            match runner.run(c) {
                Ok(o) => CheckResult {
                    name: c.name(),
                    residual: Some(o.residual),
                    residual_half: o.half,
                    tolerance,
                    passed: o.residual.is_finite() && o.residual <= tolerance,
                    error: None,
                    detail: o.detail,
                },
                Err(e) => CheckResult {
                    name: c.name(),
                    residual: None,
                    residual_half: None,
                    tolerance,
                    passed: false,
                    error: Some(e.to_string()),
                    detail: None,
                },
            }
        })
        .collect();
    results.sort_by(|a, b| a.name.cmp(&b.name));
    results.dedup_by(|a, b| a.name == b.name);
    let passed = results.iter().all(|r| r.passed);
    Ok(SuiteReport { fingerprint, checks: results, passed })
}
