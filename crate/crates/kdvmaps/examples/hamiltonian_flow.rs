//! The first canonical flow: integral drift and commutation with the map.

use kdvmaps::hamiltonian::{flow, flow_map_commutator};
use kdvmaps::models::ModelId;
use kdvmaps::verify::random_instance;

fn main() -> Result<(), kdvmaps::error::Error> {
    for id in ModelId::ALL {
        let inst = random_instance(id, 2, 3)?;
        let r = flow(&inst.model, &inst.x, 1.0, 1e-10)?;
        let drift = r.drift.iter().fold(0.0f64, |m, d| m.max(*d));
        let comm = flow_map_commutator(&inst.model, &inst.flow1, &inst.x, 0.1, 1e-12)?;
        println!("{id}: drift {drift:.2e} over t in [0, 1], flow/map {comm:.2e}");
    }
    Ok(())
}
