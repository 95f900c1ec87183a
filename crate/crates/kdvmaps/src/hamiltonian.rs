//! Continuous canonical systems, adaptive integration and flow/map compatibility.

use crate::algebra::{csqrt, dot, C};
use crate::error::{Error, Result};
use crate::maps::{apply_map, apply_map_on, FlowConfig};
use crate::models::{BranchSign, DarbouxParams, Model, ModelId, PhasePoint};
use serde::{Deserialize, Serialize};
use std::cell::Cell;

/// Step statistics of one integration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub min_step: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowResult {
    pub state: PhasePoint,
    pub t: f64,
    /// Relative drift of every integral.
    pub drift: Vec<f64>,
    pub stats: StepStats,
    /// False when some drift exceeds ten times the tolerance.
    pub accurate: bool,
    /// LpKdV: the root of `<q,q>` continued to the final state.
    pub root: Option<C>,
}

/// `|b - a| / |a|`, absolute when `a` vanishes.
pub fn relative_drift(a: C, b: C) -> f64 {
    let d = (b - a).norm();
    if a.norm() > 0.0 {
        d / a.norm()
    } else {
        d
    }
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `y' = f(y)` from 0 to `t` (either sign) with mixed error control at `tol`.
pub fn dopri5<F>(f: F, y0: &[f64], t: f64, tol: f64) -> Result<(Vec<f64>, StepStats)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    dopri5_floor(f, y0, t, tol, |y| vec![1.0; y.len()])
}

/// As [`dopri5`], with the absolute part of the error scale of each component given by `floor(y)`.
pub fn dopri5_floor<F, G>(f: F, y0: &[f64], t: f64, tol: f64, floor: G) -> Result<(Vec<f64>, StepStats)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let mut stats = StepStats { min_step: f64::INFINITY, ..Default::default() };
    let mut y = y0.to_vec();
    if t == 0.0 {
        stats.min_step = 0.0;
        return Ok((y, stats));
    }
    let dir = t.signum();
    let span = t.abs();
    let n = y.len();
    let eval = |y: &[f64], s: f64| -> Result<Vec<f64>> {
        let k = f(y).map_err(|_| Error::Singularity { t: s * dir })?;
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singularity { t: s * dir });
        }
        Ok(k.into_iter().map(|v| v * dir).collect())
    };
    let mut s = 0.0;
    let mut k1 = eval(&y, s)?;
    let scale0 = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let d1 = k1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut h = (0.01 * scale0 / d1.max(1e-12)).min(span).min(0.1 * span.max(1e-3));
    let mut ks: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    loop {
        if s >= span {
            break;
        }
        let last = s + h >= span;
        if last {
            h = span - s;
        }
        if h < 1e-14 * span.max(1.0) {
            return Err(Error::Tolerance { t: s * dir });
        }
        ks[0] = k1.clone();
        let mut stage_failed = None;
        for i in 1..7 {
            let yi: Vec<f64> = (0..n).map(|c| y[c] + h * (0..i).map(|j| A[i][j] * ks[j][c]).sum::<f64>()).collect();
            match eval(&yi, s) {
                Ok(k) => ks[i] = k,
                Err(e) => {
                    stage_failed = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = stage_failed {
            stats.rejected += 1;
            h *= 0.25;
            if h < 1e-14 * span.max(1.0) {
                return Err(e);
            }
            continue;
        }
        let y5: Vec<f64> = (0..n).map(|c| y[c] + h * (0..7).map(|j| B5[j] * ks[j][c]).sum::<f64>()).collect();
        let fl = floor(&y);
        let err = (0..n)
            .map(|c| {
                let e = h * (0..7).map(|j| (B5[j] - B4[j]) * ks[j][c]).sum::<f64>();
                let sc = tol * (fl[c] + y[c].abs().max(y5[c].abs()));
                (e / sc).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        let err = err.sqrt();
        if err <= 1.0 {
            s = if last { span } else { s + h };
            y = y5;
            k1 = ks[6].clone();
            stats.accepted += 1;
            stats.min_step = stats.min_step.min(h);
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }
    Ok((y, stats))
}

/// RMS size of the `p` block for `p` components and of the `q` block for `q` components.
fn block_floor(y: &[f64]) -> Vec<f64> {
    let half = y.len() / 2;
    let rms = |b: &[f64]| (b.iter().map(|v| v * v).sum::<f64>() / b.len().max(1) as f64).sqrt().max(f64::MIN_POSITIVE);
    let (fp, fq) = (rms(&y[..half]), rms(&y[half..]));
    (0..y.len()).map(|c| if c < half { fp } else { fq }).collect()
}

/// Integrates a holomorphic vector field on phase space through its real coordinates,
/// measuring errors against the sizes of the `p` and `q` blocks.
pub fn integrate_field<F>(field: F, x0: &PhasePoint, t: f64, tol: f64) -> Result<(PhasePoint, StepStats)>
where
    F: Fn(&PhasePoint) -> Result<PhasePoint>,
{
    let f = |y: &[f64]| field(&PhasePoint::from_real_coords(y)).map(|v| v.to_real());
    let (y, stats) = dopri5_floor(f, &x0.to_real(), t, tol, block_floor)?;
    Ok((PhasePoint::from_real_coords(&y), stats))
}

/// Local error target relative to the requested global accuracy.
pub const LOCAL_FACTOR: f64 = 1e-3;

/// Integrates the first canonical flow from `x0`; for LpKdV the root `v0` of `<q,q>` is
/// continued along the trajectory and its final value returned.
fn flow_on(model: &Model, x0: &PhasePoint, v0: Option<C>, t: f64, tol: f64) -> Result<(PhasePoint, Option<C>, StepStats)> {
    let branch = Cell::new(v0);
    let field = |x: &PhasePoint| {
        let v = match branch.get() {
            Some(r) => Some(model.continued_v(x, r)?),
            None => None,
        };
        branch.set(v);
        model.h1_vector_field_on(x, v)
    };
    let (state, stats) = integrate_field(field, x0, t, tol)?;
    let v1 = match branch.get() {
        Some(r) => Some(model.continued_v(&state, r)?),
        None => None,
    };
    Ok((state, v1, stats))
}

fn principal_root(model: &Model, x: &PhasePoint) -> Option<C> {
    (model.id == ModelId::LpKdV).then(|| csqrt(dot(&x.q, &x.q)))
}

/// `x(t)` under the first canonical flow.
///
/// For LpKdV the root of `<q,q>` starts principal and is continued along the trajectory.
pub fn flow(model: &Model, x0: &PhasePoint, t: f64, tol: f64) -> Result<FlowResult> {
    let v0 = principal_root(model, x0);
    let f0 = model.integrals_on(x0, v0)?;
    let (state, root, stats) = flow_on(model, x0, v0, t, LOCAL_FACTOR * tol)?;
    let f1 = model.integrals_on(&state, root)?;
    let drift: Vec<f64> = f0.iter().zip(&f1).map(|(a, b)| relative_drift(*a, *b)).collect();
    let accurate = drift.iter().all(|d| *d <= 10.0 * tol.max(1e-12));
    Ok(FlowResult { state, t, drift, stats, accurate, root })
}

/// States at `t k / segments`, `k = 0..=segments`, along one trajectory.
pub fn flow_path(model: &Model, x0: &PhasePoint, t: f64, segments: usize, tol: f64) -> Result<Vec<PhasePoint>> {
    let mut out = vec![x0.clone()];
    let mut v = principal_root(model, x0);
    let dt = t / segments.max(1) as f64;
    for _ in 0..segments.max(1) {
        let (y, v1, _) = flow_on(model, out.last().unwrap_or(x0), v, dt, LOCAL_FACTOR * tol)?;
        out.push(y);
        v = v1;
    }
    Ok(out)
}

/// `|S(flow_t x) - flow_t(S x)| / (1 + |flow_t(S x)|)`, with the map on the continued roots.
pub fn flow_map_commutator(model: &Model, flow_cfg: &FlowConfig, x0: &PhasePoint, t: f64, tol: f64) -> Result<f64> {
    let fa = flow(model, x0, t, tol)?;
    let fb = flow(model, &apply_map(model, flow_cfg, x0)?.0, t, tol)?;
    let roots = fa.root.zip(fb.root);
    let a = apply_map_on(model, flow_cfg, &fa.state, roots)?.0;
    Ok(a.dist(&fb.state) / (1.0 + fb.state.norm()))
}

/// `z = b + sqrt(<q,q>)` on the edge leaving `x`, and the image point.
fn lpkdv_z(model: &Model, beta: C, sigma: BranchSign, x: &PhasePoint) -> Result<(C, PhasePoint)> {
    let (y, prm) = apply_map(model, &FlowConfig::new(beta, sigma), x)?;
    let DarbouxParams::LpKdV { b, .. } = prm else { unreachable!() };
    Ok((b + csqrt(dot(&x.q, &x.q)), y))
}

/// `(z_1 + z_0)' - (z_1^2 - z_0^2)` along the first flow, by central differences at step `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZEvolution {
    pub residual: f64,
    pub residual_half: f64,
    /// `residual / residual_half`, near 4 for a second-order difference error.
    pub ratio: f64,
}

fn z_pair(model: &Model, beta: C, sigma: BranchSign, x: &PhasePoint) -> Result<(C, C)> {
    let (z0, x1) = lpkdv_z(model, beta, sigma, x)?;
    let (z1, _) = lpkdv_z(model, beta, sigma, &x1)?;
    Ok((z0, z1))
}

fn z_residual_at(model: &Model, beta: C, sigma: BranchSign, x0: &PhasePoint, h: f64) -> Result<f64> {
    let tol = 1e-13;
    let field = |x: &PhasePoint| model.h1_vector_field(x);
    let xp = integrate_field(field, x0, h, tol)?.0;
    let xm = integrate_field(field, x0, -h, tol)?.0;
    let (zp0, zp1) = z_pair(model, beta, sigma, &xp)?;
    let (zm0, zm1) = z_pair(model, beta, sigma, &xm)?;
    let (z0, z1) = z_pair(model, beta, sigma, x0)?;
    let lhs = ((zp1 + zp0) - (zm1 + zm0)) / (2.0 * h);
    let rhs = z1 * z1 - z0 * z0;
    Ok((lhs - rhs).norm() / (1.0 + rhs.norm()))
}

/// LpKdV only: the identity relating consecutive `z` along the flow.
pub fn z_evolution_residual(model: &Model, beta: C, sigma: BranchSign, x0: &PhasePoint, h: f64) -> Result<ZEvolution> {
    if model.id != ModelId::LpKdV {
        return Err(Error::Config("z-evolution applies to LpKdV only".into()));
    }
    let residual = z_residual_at(model, beta, sigma, x0, h)?;
    let residual_half = z_residual_at(model, beta, sigma, x0, 0.5 * h)?;
    let ratio = if residual_half > 0.0 { residual / residual_half } else { f64::INFINITY };
    Ok(ZEvolution { residual, residual_half, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{c, re};

    fn sample(id: ModelId) -> (Model, PhasePoint) {
        let off = if id.uses_zeta() { 0.5 } else { 0.0 };
        let m = Model::new(id, vec![c(1.1 + off, 0.1), c(2.2 + off, -0.05)]).unwrap();
        let x = PhasePoint::new(vec![c(0.8, 0.1), c(1.1, 0.2)], vec![c(1.0, -0.1), c(0.7, 0.1)]);
        (m, x)
    }

    #[test]
    fn harmonic_oscillator() {
        let (y, st) = dopri5(|y| Ok(vec![y[1], -y[0]]), &[1.0, 0.0], 2.0, 1e-12).unwrap();
        assert!((y[0] - 2f64.cos()).abs() < 1e-10);
        assert!((y[1] + 2f64.sin()).abs() < 1e-10);
        assert!(st.accepted > 0);
        let (y, _) = dopri5(|y| Ok(vec![y[1], -y[0]]), &[1.0, 0.0], -2.0, 1e-12).unwrap();
        assert!((y[1] - 2f64.sin()).abs() < 1e-10);
    }

    #[test]
    fn zero_time_is_identity() {
        let (m, x) = sample(ModelId::LpKdV);
        let r = flow(&m, &x, 0.0, 1e-10).unwrap();
        assert_eq!(r.state, x);
        assert!(r.drift.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn blow_up_is_reported() {
        let err = dopri5(|y| Ok(vec![y[0] * y[0]]), &[1.0], 2.0, 1e-10).unwrap_err();
        assert!(matches!(err, Error::Tolerance { .. } | Error::Singularity { .. }));
    }

    #[test]
    fn integrals_conserved() {
        for id in ModelId::ALL {
            let (m, x) = sample(id);
            let r = flow(&m, &x, 1.0, 1e-10).unwrap();
            assert!(r.accurate, "{id}: {:?}", r.drift);
            assert!(r.drift.iter().all(|d| *d <= 1e-8));
        }
    }

    #[test]
    fn fixed_point_commutes() {
        let m = Model::new(ModelId::LpKdV, vec![re(2.0)]).unwrap();
        let x = PhasePoint::from_real(&[1.0], &[1.0]);
        let f = FlowConfig::new(re(-1.0), BranchSign::Minus);
        assert_eq!(flow_map_commutator(&m, &f, &x, 0.0, 1e-10).unwrap(), 0.0);
        assert!(flow_map_commutator(&m, &f, &x, 0.3, 1e-10).unwrap() < 1e-12);
    }

    #[test]
    fn flows_commute_with_maps() {
        for id in ModelId::ALL {
            let (m, x) = sample(id);
            let beta = match id {
                ModelId::LpKdV => c(-1.0, 0.3),
                ModelId::LpmKdV => c(2.0, 0.3),
                ModelId::LSKdV => c(0.5, 0.2),
            };
            let f = FlowConfig::new(beta, BranchSign::Plus);
            let r = flow_map_commutator(&m, &f, &x, 0.1, 1e-12).unwrap();
            assert!(r <= 1e-6, "{id}: {r:e}");
        }
    }

    #[test]
    fn commutes_across_the_cut() {
        let flipped = |x: &PhasePoint, v: C| {
            let principal = csqrt(dot(&x.q, &x.q));
            (v + principal).norm() < (v - principal).norm()
        };
        let mut crossings = 0;
        for n in 1..=4 {
            for seed in 0..20 {
                let inst = crate::verify::random_instance(ModelId::LpKdV, n, seed).unwrap();
                let (m, x) = (&inst.model, &inst.x);
                for f in [inst.flow1, inst.flow2] {
                    let y = apply_map(m, &f, x).unwrap().0;
                    let (ra, rb) = (flow(m, x, 0.1, 1e-12).unwrap(), flow(m, &y, 0.1, 1e-12).unwrap());
                    if flipped(&ra.state, ra.root.unwrap()) || flipped(&rb.state, rb.root.unwrap()) {
                        crossings += 1;
                        let res = flow_map_commutator(m, &f, x, 0.1, 1e-12).unwrap();
                        assert!(res <= 1e-6, "N={n} seed {seed}: {res:e}");
                    }
                }
            }
        }
        assert!(crossings > 0);
    }

    #[test]
    fn z_identity() {
        let (m, x) = sample(ModelId::LpKdV);
        let z = z_evolution_residual(&m, c(-1.0, 0.3), BranchSign::Plus, &x, 1e-4).unwrap();
        assert!(z.residual <= 1e-6, "{z:?}");
        assert!(z.ratio > 3.0 && z.ratio < 5.0, "{z:?}");
    }
}
