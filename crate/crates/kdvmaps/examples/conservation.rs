//! Drift of the integrals along a 100-step orbit of each model.

use kdvmaps::models::ModelId;
use kdvmaps::verify::{conservation_drift, random_instance};

fn main() -> Result<(), kdvmaps::error::Error> {
    for id in ModelId::ALL {
        for n in 1..=4 {
            let inst = random_instance(id, n, 7)?;
            let drift = conservation_drift(&inst.model, &inst.flow1, &inst.x, 100)?;
            println!("{id} N={n}: max relative drift {drift:.2e}");
        }
    }
    Ok(())
}
