//! Linearity of the Abel image along a genus-one orbit.

use kdvmaps::models::ModelId;
use kdvmaps::riemann::jacobi_linearity_residual;
use kdvmaps::verify::random_instance;

fn main() -> Result<(), kdvmaps::error::Error> {
    for (id, n) in [(ModelId::LpKdV, 1), (ModelId::LpmKdV, 2), (ModelId::LSKdV, 1)] {
        let inst = random_instance(id, n, 0)?;
        let rep = jacobi_linearity_residual(&inst.model, &inst.flow1, &inst.x, 10)?;
        println!("{id}: max residual {:.2e} ({})", rep.max_residual(), rep.best_label());
    }
    Ok(())
}
