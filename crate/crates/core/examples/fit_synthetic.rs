//! Synthesize a noisy dataset and recover the distribution with a short GA.

use echolab::forward::{synth_dataset, GridSpec};
use echolab::inference::{multi_fit, FitConfig};
use echolab::pulses::PulseSpec;
use echolab::SkewNormalParams;

pub fn run() -> echolab::Result<()> {
    let truth = SkewNormalParams::reference_fit();
    let pulse = PulseSpec::default();
    let data = synth_dataset(&truth, &pulse, &pulse, &GridSpec::default(), 0.02, 11)?;
    println!("dataset: {} points", data.point_count());

    // Small budget for a quick demonstration; the defaults are much larger.
    let config = FitConfig { population: 40, generations: 40, polish_evaluations: 400, ..FitConfig::default() };
    let fit = multi_fit(&data, &config, 2, 100)?;
    let s = &fit.summary;
    println!("rho   truth {:?}  fit {:?}", truth.rho, s.rho.mean.map(|v| (v * 1e3).round() / 1e3));
    println!("sigma truth {:?}  fit {:?}", truth.sigma, s.sigma_khz.mean.map(|v| (v * 1e3).round() / 1e3));
    for r in &fit.runs {
        println!("  seed {}: SSR {:.4e} after {} generations", r.seed, r.ssr, r.generations_run);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> echolab::Result<()> {
    run()
}
