//! Convolved joint spectra and the growth of the burnt hole with delay.

use echolab::distributions::{Node, SkewNormalParams};
use echolab::forward::{convolved_marginal, default_model_axis, hole_width_curve};
use echolab::pulses::PulseSpec;

pub fn run() -> echolab::Result<()> {
    let params = SkewNormalParams::reference_fit();
    let pulse = PulseSpec::default();
    let axis = default_model_axis();

    let g = convolved_marginal(&params, (Node::T0, Node::T5), &pulse, &pulse, &axis)?;
    println!("g(ω0, ω5): {} x {} grid, mass {:.5}, peak {:.4}", g.pump_khz.len(), g.probe_khz.len(), g.mass(), g.peak());

    let curve = hole_width_curve(&params, 6.45, &pulse, &pulse, &axis)?;
    println!("instrumental width {:.1} Hz", curve.instrumental_hz);
    for p in &curve.points {
        println!("  delay {} ms: hole width {:.1} Hz", p.delay_ms, p.width_hz);
    }
    println!("monotone growth: {}", curve.is_increasing());
    Ok(())
}

#[allow(dead_code)]
fn main() -> echolab::Result<()> {
    run()
}
