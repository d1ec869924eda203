//! Echo amplitude from the trajectory distribution and its plateau analysis.

use echolab::echo::{default_tau_grid, detect_plateau, echo_amplitude, EchoOptions, PlateauConfig};
use echolab::trajectories::Interpolation;
use echolab::SkewNormalParams;

pub fn run() -> echolab::Result<()> {
    let params = SkewNormalParams::reference_fit();
    let taus = default_tau_grid();
    for method in [Interpolation::MonotoneCubic, Interpolation::Linear] {
        let opts = EchoOptions { nodes_per_axis: 32, check_convergence: false, ..EchoOptions::with_interpolation(method) };
        let curve = echo_amplitude(&params, &taus, &opts)?;
        let report = detect_plateau(&curve, &PlateauConfig::default())?;
        let at = |t: f64| curve.epsilon[(t / 0.05).round() as usize];
        println!(
            "{method:?}: ε(1) = {:.3}, ε(2) = {:.3}, ε(4) = {:.3}; initial decay {:.2} ms; longest flat stretch {:.2} ms",
            at(1.0),
            at(2.0),
            at(4.0),
            report.initial_decay_ms.unwrap_or(f64::NAN),
            report.flat_length_ms
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> echolab::Result<()> {
    run()
}
