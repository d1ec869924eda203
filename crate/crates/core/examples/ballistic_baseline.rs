//! Ballistic counter-model: lattice frequencies, echo and increment census.

use echolab::baseline::{baseline_echo, baseline_trajectory_census, ballistic_ensemble, depth_to_frequency, FrequencyMode, LatticeConfig};
use echolab::echo::{default_tau_grid, PlateauConfig};

pub fn run() -> echolab::Result<()> {
    let lattice = LatticeConfig::default();
    println!("E_R/h = {:.1} Hz", lattice.recoil_hz());
    for mode in [FrequencyMode::Harmonic, FrequencyMode::Numeric] {
        println!("ν01 at 24 E_R ({mode:?}): {:.3} kHz", depth_to_frequency(&lattice, 24.0, mode)?);
    }

    let ensemble = ballistic_ensemble(&lattice, 5_000, 3)?;
    let census = baseline_trajectory_census(&ensemble.node_triples);
    println!(
        "increment correlation {:.3}, falling-then-rising fraction {:.4}",
        census.increment_correlation,
        census.down_up_fraction()
    );
    let echo = baseline_echo(&ensemble, &default_tau_grid(), &PlateauConfig::default())?;
    println!(
        "echo: initial decay {:.2} ms, plateau detected {}",
        echo.plateau.initial_decay_ms.unwrap_or(f64::NAN),
        echo.plateau.detected
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> echolab::Result<()> {
    run()
}
