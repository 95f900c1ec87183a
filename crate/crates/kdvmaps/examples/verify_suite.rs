//! The full verification suite for one random instance per model.

use kdvmaps::models::ModelId;
use kdvmaps::verify::{run_suite, SuiteConfig};

fn main() -> Result<(), kdvmaps::error::Error> {
    for id in ModelId::ALL {
        let report = run_suite(&SuiteConfig::new(id, 2, 42))?;
        println!("{id}: passed {}", report.passed);
        for c in &report.checks {
            println!("  {:<18} {:>10.3e} <= {:.0e}", c.name, c.residual.unwrap_or(f64::NAN), c.tolerance);
        }
    }
    Ok(())
}
