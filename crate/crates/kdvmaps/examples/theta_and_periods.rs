//! Periods of a genus-one curve and the Riemann theta function.

use kdvmaps::algebra::{re, I};
use kdvmaps::riemann::{period_matrix, theta, Hyperelliptic, ThetaParams};

fn main() -> Result<(), kdvmaps::error::Error> {
    let r = 2f64.sqrt();
    let curve = Hyperelliptic::new(re(0.5), vec![re(-r), re(-1.0), re(1.0), re(r)])?;
    let pd = period_matrix(&curve)?;
    println!("a-period {:.12}, B = {:.12}", pd.a[0][0], pd.bmat[0][0]);
    let t = theta(&[re(0.0)], &ThetaParams::new(vec![vec![I]]))?;
    println!("theta(0; i) = {:.12}", t.re);
    Ok(())
}
