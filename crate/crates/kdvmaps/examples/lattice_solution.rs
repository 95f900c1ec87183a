//! A 20x20 lattice solution and its plaquette residual.

use kdvmaps::maps::{extract_u, lattice_evolve, lattice_residual};
use kdvmaps::models::ModelId;
use kdvmaps::verify::random_instance;

fn main() -> Result<(), kdvmaps::error::Error> {
    for id in ModelId::ALL {
        let inst = random_instance(id, 3, 11)?;
        let grid = lattice_evolve(&inst.model, &inst.flow1, &inst.flow2, &inst.x, 20, 20)?;
        let u = extract_u(&grid)?;
        let st = lattice_residual(id, &u, inst.flow1.beta, inst.flow2.beta);
        println!("{id}: u(20,20) = {:.6}, residual max {:.2e} mean {:.2e}", u.at(20, 20), st.max, st.mean);
    }
    Ok(())
}
