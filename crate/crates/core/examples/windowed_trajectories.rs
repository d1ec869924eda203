//! Trajectories constrained to start and mid-point windows, with the
//! probability of where they end up.

use echolab::distributions::{Node, SkewNormalParams};
use echolab::grid::FrequencyAxis;
use echolab::trajectories::{sample_trajectories, windowed_final_probability, Interpolation, WindowSpec};

pub fn run() -> echolab::Result<()> {
    let params = SkewNormalParams::reference_fit();
    let start = WindowSpec::new(6.5, 0.5, Node::T0);
    let axis = FrequencyAxis::span(3.5, 9.5, 0.1)?;
    for mid in [6.5, 7.07, 5.93] {
        let second = WindowSpec::new(mid, 0.52, Node::T2);
        let sample = sample_trajectories(&params, &start, &second, 200, 1, Interpolation::MonotoneCubic)?;
        let pf = windowed_final_probability(&params, &start, &second, &axis)?;
        let (mean, _) = sample.node_moments();
        println!(
            "ω2 window at {mid} kHz: acceptance {:.4}, mean ω5 {:.3} kHz, P_f peak at {:.2} kHz",
            sample.acceptance_rate,
            mean[2],
            pf.peak().0
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> echolab::Result<()> {
    run()
}
