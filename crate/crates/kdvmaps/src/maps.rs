//! Discrete flows, commuting lattices and extraction of the solution fields.

use crate::algebra::{csqrt, dot, re, C};
use crate::error::{Error, Result};
use crate::models::{BranchSign, DarbouxParams, Model, ModelId, PhasePoint};
use serde::{Deserialize, Serialize};

/// Iteration aborts once the state norm exceeds this.
pub const GROWTH_GUARD: f64 = 1e12;

/// One lattice direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub beta: C,
    pub sigma: BranchSign,
    /// LSKdV only: use `-a` instead of the principal root.
    #[serde(default)]
    pub negate_a: bool,
}

impl FlowConfig {
    pub fn new(beta: C, sigma: BranchSign) -> Self {
        FlowConfig { beta, sigma, negate_a: false }
    }
}

/// `S_beta(x)` together with the potentials used.
pub fn apply_map(model: &Model, flow: &FlowConfig, x: &PhasePoint) -> Result<(PhasePoint, DarbouxParams)> {
    apply_map_on(model, flow, x, None)
}

/// `S_beta(x)` on given LpKdV roots, see [`Model::potential_constraint_on`].
pub fn apply_map_on(
    model: &Model,
    flow: &FlowConfig,
    x: &PhasePoint,
    roots: Option<(C, C)>,
) -> Result<(PhasePoint, DarbouxParams)> {
    let mut params = model.potential_constraint_on(flow.beta, flow.sigma, x, roots)?;
    if flow.negate_a {
        if let DarbouxParams::LSKdV { a, .. } = params {
            params = DarbouxParams::lskdv(-a, flow.beta);
        }
    }
    let y = model.linear_step(flow.beta, &params, x);
    let norm = y.norm();
    if !y.is_finite() || norm > GROWTH_GUARD {
        return Err(Error::Range { norm });
    }
    Ok((y, params))
}

/// Orbit `x0, S x0, ..., S^steps x0`; entry `k` carries the potentials of the step leaving it.
pub fn iterate_orbit(
    model: &Model,
    flow: &FlowConfig,
    x0: &PhasePoint,
    steps: usize,
) -> Result<Vec<(PhasePoint, Option<DarbouxParams>)>> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    for k in 0..steps {
        let (y, params) = apply_map(model, flow, &x).map_err(|e| e.at_step(k))?;
        out.push((x, Some(params)));
        x = y;
    }
    out.push((x, None));
    Ok(out)
}

/// States `S_1^m S_2^n x0` with the potentials on every edge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeGrid {
    pub model: ModelId,
    pub flow1: FlowConfig,
    pub flow2: FlowConfig,
    pub m_len: usize,
    pub n_len: usize,
    /// `states[m][n]`.
    pub states: Vec<Vec<PhasePoint>>,
    /// Potentials on the edge `(m,n) -> (m+1,n)`.
    pub m_edges: Vec<Vec<DarbouxParams>>,
    /// Potentials on the edge `(m,n) -> (m,n+1)`.
    pub n_edges: Vec<Vec<DarbouxParams>>,
    /// Max over interior sites of `|S_2 S_1 x - S_1 S_2 x| / (1 + |x|)`.
    pub commutativity: f64,
}

/// Builds the grid along `n` at `m = 0`, then along `m` for every `n`.
pub fn lattice_evolve(
    model: &Model,
    flow1: &FlowConfig,
    flow2: &FlowConfig,
    x0: &PhasePoint,
    m_len: usize,
    n_len: usize,
) -> Result<LatticeGrid> {
    let mut states: Vec<Vec<PhasePoint>> = vec![Vec::with_capacity(n_len + 1); m_len + 1];
    let mut n_edges: Vec<Vec<DarbouxParams>> = vec![Vec::with_capacity(n_len); m_len + 1];
    let mut m_edges: Vec<Vec<DarbouxParams>> = vec![Vec::with_capacity(n_len + 1); m_len];
    states[0].push(x0.clone());
    for n in 0..n_len {
        let (y, prm) = apply_map(model, flow2, &states[0][n]).map_err(|e| e.at_site(0, n))?;
        n_edges[0].push(prm);
        states[0].push(y);
    }
    for n in 0..=n_len {
        for m in 0..m_len {
            let (y, prm) = apply_map(model, flow1, &states[m][n]).map_err(|e| e.at_site(m, n))?;
            m_edges[m].push(prm);
            states[m + 1].push(y);
        }
    }
    let mut commutativity = 0.0f64;
    for m in 1..=m_len {
        for n in 0..n_len {
            let (y, prm) = apply_map(model, flow2, &states[m][n]).map_err(|e| e.at_site(m, n))?;
            n_edges[m].push(prm);
            let target = &states[m][n + 1];
            commutativity = commutativity.max(y.dist(target) / (1.0 + target.norm()));
        }
    }
    Ok(LatticeGrid {
        model: model.id,
        flow1: *flow1,
        flow2: *flow2,
        m_len,
        n_len,
        states,
        m_edges,
        n_edges,
        commutativity,
    })
}

/// A solution field on the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UField {
    /// `u[m][n]`.
    pub u: Vec<Vec<C>>,
    /// Value fixed at the origin.
    pub gauge: C,
    /// Max plaquette mismatch of the edge data that `u` integrates.
    pub path_residual: f64,
}

impl UField {
    pub fn at(&self, m: usize, n: usize) -> C {
        self.u[m][n]
    }
}

fn integrate_additive(grid: &LatticeGrid, dm: &dyn Fn(usize, usize) -> C, dn: &dyn Fn(usize, usize) -> C) -> UField {
    let (mm, nn) = (grid.m_len, grid.n_len);
    let mut u = vec![vec![C::new(0.0, 0.0); nn + 1]; mm + 1];
    for n in 0..nn {
        u[0][n + 1] = u[0][n] + dn(0, n);
    }
    for m in 0..mm {
        let next: Vec<C> = (0..=nn).map(|n| u[m][n] + dm(m, n)).collect();
        u[m + 1] = next;
    }
    let mut path = 0.0f64;
    for m in 0..mm {
        for n in 0..nn {
            let a = dm(m, n) + dn(m + 1, n);
            let b = dn(m, n) + dm(m, n + 1);
            path = path.max((a - b).norm() / (1.0 + a.norm().max(b.norm())));
        }
    }
    UField { u, gauge: C::new(0.0, 0.0), path_residual: path }
}

fn integrate_multiplicative(
    grid: &LatticeGrid,
    fm: &dyn Fn(usize, usize) -> C,
    fn_: &dyn Fn(usize, usize) -> C,
) -> Result<UField> {
    let (mm, nn) = (grid.m_len, grid.n_len);
    for row in grid.m_edges.iter().chain(&grid.n_edges) {
        for prm in row {
            let a = prm.a();
            if a.norm() == 0.0 || !crate::algebra::is_finite(a) {
                return Err(Error::Degenerate("edge potential a is zero or infinite".into()));
            }
        }
    }
    let mut u = vec![vec![re(1.0); nn + 1]; mm + 1];
    for n in 0..nn {
        u[0][n + 1] = u[0][n] * fn_(0, n);
    }
    for m in 0..mm {
        let next: Vec<C> = (0..=nn).map(|n| u[m][n] * fm(m, n)).collect();
        u[m + 1] = next;
    }
    let mut path = 0.0f64;
    for m in 0..mm {
        for n in 0..nn {
            let a = fm(m, n) * fn_(m + 1, n);
            let b = fn_(m, n) * fm(m, n + 1);
            path = path.max((a - b).norm() / a.norm().max(b.norm()));
        }
    }
    Ok(UField { u, gauge: re(1.0), path_residual: path })
}

/// `u(m+1,n) - u(m,n) = -(b + v)` on `m`-edges, likewise on `n`-edges, `u(0,0) = 0`.
pub fn extract_u_lpkdv(grid: &LatticeGrid) -> Result<UField> {
    if grid.model != ModelId::LpKdV {
        return Err(Error::Config("LpKdV grid expected".into()));
    }
    let v: Vec<Vec<C>> = grid
        .states
        .iter()
        .map(|row| row.iter().map(|x| csqrt(dot(&x.q, &x.q))).collect())
        .collect();
    if v.iter().flatten().any(|z| z.norm() == 0.0) {
        return Err(Error::Degenerate("<q,q>".into()));
    }
    let b = |p: &DarbouxParams| match *p {
        DarbouxParams::LpKdV { b, .. } => b,
        _ => unreachable!(),
    };
    let dm = |m: usize, n: usize| -(b(&grid.m_edges[m][n]) + v[m][n]);
    let dn = |m: usize, n: usize| -(b(&grid.n_edges[m][n]) + v[m][n]);
    Ok(integrate_additive(grid, &dm, &dn))
}

/// `u` multiplies by the edge potential `a`, `u(0,0) = 1`.
pub fn extract_u_lpmkdv(grid: &LatticeGrid) -> Result<UField> {
    if grid.model != ModelId::LpmKdV {
        return Err(Error::Config("LpmKdV grid expected".into()));
    }
    let fm = |m: usize, n: usize| grid.m_edges[m][n].a();
    let fn_ = |m: usize, n: usize| grid.n_edges[m][n].a();
    integrate_multiplicative(grid, &fm, &fn_)
}

/// `z` multiplies by the edge potential `a`, `z(0,0) = 1`, `u = z^2`.
pub fn extract_u_lskdv(grid: &LatticeGrid) -> Result<UField> {
    if grid.model != ModelId::LSKdV {
        return Err(Error::Config("LSKdV grid expected".into()));
    }
    let fm = |m: usize, n: usize| grid.m_edges[m][n].a();
    let fn_ = |m: usize, n: usize| grid.n_edges[m][n].a();
    let mut z = integrate_multiplicative(grid, &fm, &fn_)?;
    for row in z.u.iter_mut() {
        for v in row.iter_mut() {
            *v = *v * *v;
        }
    }
    Ok(z)
}

pub fn extract_u(grid: &LatticeGrid) -> Result<UField> {
    match grid.model {
        ModelId::LpKdV => extract_u_lpkdv(grid),
        ModelId::LpmKdV => extract_u_lpmkdv(grid),
        ModelId::LSKdV => extract_u_lskdv(grid),
    }
}

/// Max and mean of normalised plaquette residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub max: f64,
    pub mean: f64,
}

/// Residual of one plaquette with corners `u, u~ (m+1), u- (n+1), u~-`.
pub fn plaquette_residual(model: ModelId, corners: [C; 4], beta1: C, beta2: C) -> f64 {
    let [u, ut, ub, uh] = corners;
    let e = match model {
        ModelId::LpKdV => (uh - u) * (ut - ub) - (beta2 - beta1),
        ModelId::LpmKdV => beta1 * (ub * uh - u * ut) - beta2 * (ut * uh - u * ub),
        ModelId::LSKdV => beta1 * beta1 * (uh - ut) * (ub - u) - beta2 * beta2 * (uh - ub) * (ut - u),
    };
    let scale = corners.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    e.norm() / (1.0 + scale).powi(2)
}

pub fn lattice_residual(model: ModelId, field: &UField, beta1: C, beta2: C) -> ResidualStats {
    let u = &field.u;
    let mut max = 0.0f64;
    let mut sum = 0.0;
    let mut count = 0usize;
    for m in 0..u.len().saturating_sub(1) {
        for n in 0..u[m].len().saturating_sub(1) {
            let r = plaquette_residual(model, [u[m][n], u[m + 1][n], u[m][n + 1], u[m + 1][n + 1]], beta1, beta2);
            max = max.max(r);
            sum += r;
            count += 1;
        }
    }
    ResidualStats { max, mean: if count > 0 { sum / count as f64 } else { 0.0 } }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::c;

    fn fixture(id: ModelId) -> (Model, PhasePoint) {
        (Model::new(id, vec![re(2.0)]).unwrap(), PhasePoint::from_real(&[1.0], &[1.0]))
    }

    #[test]
    fn fixed_point() {
        let (m, x) = fixture(ModelId::LpKdV);
        let (y, _) = apply_map(&m, &FlowConfig::new(re(-1.0), BranchSign::Minus), &x).unwrap();
        assert!(y.dist(&x) < 1e-12);
        let (y, _) = apply_map(&m, &FlowConfig::new(re(-1.0), BranchSign::Plus), &x).unwrap();
        assert!(y.dist(&x.neg()) < 1e-12);
    }

    #[test]
    fn lpmkdv_step_fixture() {
        let (m, x) = fixture(ModelId::LpmKdV);
        let (y, prm) = apply_map(&m, &FlowConfig::new(re(1.0), BranchSign::Plus), &x).unwrap();
        assert!((prm.a() - re(-2.0)).norm() < 1e-14);
        assert!((y.p[0] + re(3f64.sqrt())).norm() < 1e-14);
        assert!(y.q[0].norm() < 1e-14);
        assert!((dot(&y.p, &y.q) + dot(&x.p, &x.q) - 1.0).norm() < 1e-14);
    }

    #[test]
    fn orbit_lengths() {
        let (m, x) = fixture(ModelId::LpKdV);
        let f = FlowConfig::new(re(-1.0), BranchSign::Minus);
        assert_eq!(iterate_orbit(&m, &f, &x, 0).unwrap().len(), 1);
        let orbit = iterate_orbit(&m, &f, &x, 5).unwrap();
        assert_eq!(orbit.len(), 6);
        for (y, _) in &orbit {
            assert!(y.dist(&x) < 1e-12);
        }
    }

    #[test]
    fn trivial_grid_and_equal_flows() {
        let (m, x) = fixture(ModelId::LpKdV);
        let f = FlowConfig::new(re(-1.0), BranchSign::Minus);
        let g = lattice_evolve(&m, &f, &f, &x, 0, 0).unwrap();
        assert_eq!(g.states.len(), 1);
        assert_eq!(g.states[0].len(), 1);
        let m2 = Model::new(ModelId::LpKdV, vec![c(1.2, 0.1), c(2.1, -0.1)]).unwrap();
        let x2 = PhasePoint::new(vec![c(0.8, 0.1), c(1.1, 0.2)], vec![c(1.0, -0.1), c(0.7, 0.1)]);
        let f2 = FlowConfig::new(c(-1.0, 0.3), BranchSign::Plus);
        let g = lattice_evolve(&m2, &f2, &f2, &x2, 1, 1).unwrap();
        assert!(g.states[1][0].dist(&g.states[0][1]) == 0.0);
    }

    #[test]
    fn fixed_point_field() {
        let (m, x) = fixture(ModelId::LpKdV);
        let f = FlowConfig::new(re(-1.0), BranchSign::Minus);
        let g = lattice_evolve(&m, &f, &f, &x, 4, 3).unwrap();
        let u = extract_u_lpkdv(&g).unwrap();
        let s3 = 3f64.sqrt();
        for mm in 0..=4 {
            for nn in 0..=3 {
                assert!((u.at(mm, nn) + re(s3 * (mm + nn) as f64)).norm() < 1e-12);
            }
        }
        let r = lattice_residual(ModelId::LpKdV, &u, re(-1.0), re(-1.0));
        assert!(r.max < 1e-14);
    }

    #[test]
    fn lpkdv_edge_identity() {
        let m = Model::new(ModelId::LpKdV, vec![c(1.2, 0.1), c(2.1, -0.1)]).unwrap();
        let x = PhasePoint::new(vec![c(0.8, 0.1), c(1.1, 0.2)], vec![c(1.0, -0.1), c(0.7, 0.1)]);
        let beta = c(-1.0, 0.3);
        let (y, prm) = apply_map(&m, &FlowConfig::new(beta, BranchSign::Plus), &x).unwrap();
        let DarbouxParams::LpKdV { b, .. } = prm else { unreachable!() };
        let v2 = dot(&x.q, &x.q);
        let vt2 = dot(&y.q, &y.q);
        let z = b + csqrt(v2);
        assert!((z * z - (vt2 + v2 - beta)).norm() < 1e-12);
    }

    #[test]
    fn multiplicative_fields() {
        let m = Model::new(ModelId::LSKdV, vec![re(2.0)]).unwrap();
        let x = PhasePoint::from_real(&[1.0], &[1.0]);
        let f = FlowConfig::new(re(1.0), BranchSign::Plus);
        let g = lattice_evolve(&m, &f, &f, &x, 1, 0).unwrap();
        let a = g.m_edges[0][0].a();
        let u = extract_u_lskdv(&g).unwrap();
        assert!((u.at(1, 0) - a * a).norm() < 1e-15);
        let mm = Model::new(ModelId::LpmKdV, vec![re(2.0)]).unwrap();
        let g = lattice_evolve(&mm, &f, &f, &x, 1, 0).unwrap();
        let u = extract_u_lpmkdv(&g).unwrap();
        assert!((u.at(1, 0) - re(-2.0)).norm() < 1e-14);
    }

    #[test]
    fn residual_trivia() {
        let field = UField { u: vec![vec![re(3.0); 3]; 3], gauge: re(0.0), path_residual: 0.0 };
        assert_eq!(lattice_residual(ModelId::LpKdV, &field, re(2.0), re(2.0)).max, 0.0);
        let s = 2.0 * 3f64.sqrt();
        let corners = [re(0.0), re(-s), re(-s), re(-2.0 * s)];
        assert!(plaquette_residual(ModelId::LpKdV, corners, re(-1.0), re(-1.0)) < 1e-15);
    }

    #[test]
    fn growth_guard_reports_range() {
        let m = Model::new(ModelId::LpmKdV, vec![c(1.6, 0.1), c(2.6, -0.1)]).unwrap();
        let x = PhasePoint::new(vec![c(0.8, 0.1), c(1.1, 0.2)], vec![c(1.0, -0.1), c(0.7, 0.1)]);
        let f = FlowConfig::new(c(0.05, 0.01), BranchSign::Plus);
        let err = iterate_orbit(&m, &f, &x, 200).unwrap_err();
        assert!(matches!(err, Error::Step { .. }));
    }
}
