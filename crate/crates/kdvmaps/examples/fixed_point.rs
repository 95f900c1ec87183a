//! The LpKdV fixed point: S(1, 1) = (1, 1) for beta = -1, sigma = -1.

use kdvmaps::algebra::re;
use kdvmaps::maps::{apply_map, FlowConfig};
use kdvmaps::models::{BranchSign, Model, ModelId, PhasePoint};

fn main() -> Result<(), kdvmaps::error::Error> {
    let model = Model::new(ModelId::LpKdV, vec![re(2.0)])?;
    let x = PhasePoint::from_real(&[1.0], &[1.0]);
    for sigma in [BranchSign::Minus, BranchSign::Plus] {
        let (y, prm) = apply_map(&model, &FlowConfig::new(re(-1.0), sigma), &x)?;
        println!("sigma {:+}: p = {}, q = {}, a = {}", sigma.value(), y.p[0], y.q[0], prm.a());
    }
    println!("F1 = {}", model.integrals(&x)?[0]);
    Ok(())
}
