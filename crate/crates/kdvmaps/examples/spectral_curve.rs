//! Spectral curves of the unit fixtures and of a random point.

use kdvmaps::algebra::{re, C};
use kdvmaps::models::{Model, ModelId, PhasePoint};
use kdvmaps::spectral::spectral_curve;
use kdvmaps::verify::random_instance;

fn list(zs: &[C]) -> String {
    zs.iter().map(|z| format!("{z:.4}")).collect::<Vec<_>>().join(", ")
}

fn main() -> Result<(), kdvmaps::error::Error> {
    let x = PhasePoint::from_real(&[1.0], &[1.0]);
    for id in ModelId::ALL {
        let curve = spectral_curve(&Model::new(id, vec![re(2.0)])?, &x)?;
        println!("{id} unit: R coefficients [{}], degenerate {}", list(&curve.r.coeffs), curve.degenerate);
    }
    for id in ModelId::ALL {
        let inst = random_instance(id, 2, 5)?;
        let curve = spectral_curve(&inst.model, &inst.x)?;
        println!("{id} N=2: genus {}, branch points [{}]", curve.genus, list(&curve.branch_points));
    }
    Ok(())
}
