//! Frequency-trajectory inference from two-dimensional pump-probe spectra.
//!
//! The crate models the joint distribution of an ensemble's transition
//! frequencies at three times (0, 2 and 5 ms) as a trivariate skew-normal,
//! fits it to pump-probe spectra with a genetic algorithm, and predicts the
//! pulse-echo amplitude ε(τ) by integrating the accumulated phase along
//! interpolated frequency trajectories.
//!
//! Module map:
//! - [`distributions`]: the skew-normal density, marginals, sampling, increment projection
//! - [`pulses`]: phase-modulation pulses and their power spectra
//! - [`forward`]: convolved marginals, hole spectra and synthetic datasets
//! - [`inference`]: SSR objective and the genetic-algorithm fitter
//! - [`trajectories`]: interpolated trajectories and windowed statistics
//! - [`echo`]: echo amplitude, free dephasing, plateau detection
//! - [`baseline`]: ballistic expansion through a Gaussian beam as a counter-model
//! - [`cli`]: the `echolab` batch front-end

pub mod baseline;
pub mod cli;
pub mod distributions;
pub mod echo;
pub mod error;
pub mod fit;
pub mod forward;
pub mod grid;
pub mod inference;
pub mod pulses;
pub mod quadrature;
pub mod special;
pub mod trajectories;

pub use distributions::{FrequencyTriple, Node, SkewNormal, SkewNormalParams};
pub use error::{Error, Result};
pub use grid::{FrequencyAxis, Spectrum1D, SpectrumGrid2D, SpectrumKind};
