//! Density, marginals and sampling of the trivariate skew-normal.

use echolab::distributions::{FrequencyTriple, Node, SkewNormal, SkewNormalParams};
use echolab::grid::FrequencyAxis;

pub fn run() -> echolab::Result<()> {
    let sn = SkewNormal::new(SkewNormalParams::reference_fit())?;
    let peak = FrequencyTriple::new(6.3, 6.3, 6.4);
    println!("SN density at {peak:?}: {:.5}", sn.density(&peak));
    println!("mean (kHz): {:?}", sn.mean().map(|m| (m * 1e3).round() / 1e3));

    let m02 = sn.marginal_2d(Node::T0, Node::T2)?;
    let axis = FrequencyAxis::span(4.0, 9.0, 0.25)?;
    let grid = m02.on_grid(&axis, &axis)?;
    let mass: f64 = grid.iter().flatten().sum::<f64>() * axis.step * axis.step;
    println!("M(ω0, ω2) mass on a coarse 4–9 kHz grid: {mass:.4}");

    let draws = sn.sample(20_000, 7);
    let mean0 = draws.iter().map(|w| w.w0).sum::<f64>() / draws.len() as f64;
    println!("sample mean of ω0 over 20k draws: {mean0:.3} kHz");
    Ok(())
}

#[allow(dead_code)]
fn main() -> echolab::Result<()> {
    run()
}
