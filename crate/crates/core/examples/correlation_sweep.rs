//! Plateau presence as the late-time correlations are lowered.

use echolab::echo::{correlation_sweep, default_tau_grid, EchoOptions, PlateauConfig};
use echolab::SkewNormalParams;

pub fn run() -> echolab::Result<()> {
    let params = SkewNormalParams::reference_fit();
    let opts = EchoOptions { nodes_per_axis: 24, check_convergence: false, ..EchoOptions::default() };
    let sweep = correlation_sweep(&params, &[0.82, 0.6], &[0.8, 0.3], &default_tau_grid(), &opts, &PlateauConfig::default())?;
    for c in &sweep.cells {
        match &c.report {
            Some(r) => println!("ρ25 {:.2} ρ05 {:.2}: plateau {} (flat {:.2} ms)", c.rho25, c.rho05, r.detected, r.flat_length_ms),
            None => println!("ρ25 {:.2} ρ05 {:.2}: infeasible", c.rho25, c.rho05),
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> echolab::Result<()> {
    run()
}
