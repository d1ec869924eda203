//! Free-induction decay of the initial-frequency marginal.

use echolab::echo::{free_dephasing, tau_grid};
use echolab::SkewNormalParams;

pub fn run() -> echolab::Result<()> {
    let t = tau_grid(2.0, 0.005);
    let skewed = SkewNormalParams::reference_fit();
    for (label, p) in [("symmetric", skewed.with_alpha([0.0; 3])), ("skewed", skewed)] {
        let fd = free_dephasing(&p, &t)?;
        println!("{label}: 1/e time {:.3} ms", fd.t_1e_ms.unwrap_or(f64::NAN));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> echolab::Result<()> {
    run()
}
