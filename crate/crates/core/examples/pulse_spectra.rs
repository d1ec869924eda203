//! Pulse power spectra and the instrumental pump ⊛ probe width.

use echolab::pulses::{instrumental_width, PulseSpec};

pub fn run() -> echolab::Result<()> {
    let pulse = PulseSpec::default();
    let spectrum = pulse.power_spectrum(&pulse.default_axis())?;
    println!(
        "{}-cycle pulse at {} kHz: duration {:.3} ms, captured mass {:.4}",
        pulse.cycles,
        pulse.frequency_khz,
        pulse.duration_ms(),
        spectrum.captured
    );
    println!("single-pulse r.m.s. width: {:.1} Hz", pulse.spectral_width_hz()?);
    for cycles in [8, 16] {
        let p = PulseSpec::new(6.0, cycles);
        println!("pump ⊛ probe width, {cycles} cycles: {:.1} Hz", instrumental_width(&p, &p)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> echolab::Result<()> {
    run()
}
