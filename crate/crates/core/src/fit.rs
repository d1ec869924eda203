//! Least-squares Gaussian fits used for every "r.m.s. width" in the crate.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub center: f64,
    /// r.m.s. width (standard deviation) of the fitted Gaussian.
    pub sigma: f64,
}

impl GaussianFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (-0.5 * ((x - self.center) / self.sigma).powi(2)).exp()
    }
}

/// Contiguous run of points around the maximum whose value exceeds `frac` of the peak.
pub fn main_lobe(x: &[f64], y: &[f64], frac: f64) -> (Vec<f64>, Vec<f64>) {
    let Some((imax, &peak)) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
        return (Vec::new(), Vec::new());
    };
    let cut = frac * peak;
    let mut lo = imax;
    while lo > 0 && y[lo - 1] > cut {
        lo -= 1;
    }
    let mut hi = imax;
    while hi + 1 < y.len() && y[hi + 1] > cut {
        hi += 1;
    }
    (x[lo..=hi].to_vec(), y[lo..=hi].to_vec())
}

fn raw_moments(x: &[f64], y: &[f64]) -> (f64, f64) {
    let m0: f64 = y.iter().sum();
    let mean = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / m0;
    let var = x.iter().zip(y).map(|(a, b)| (a - mean).powi(2) * b).sum::<f64>() / m0;
    (mean, var.max(0.0).sqrt())
}

/// Fits `a·exp(-(x-c)²/2s²)` by Levenberg-Marquardt, starting from the raw moments.
///
/// On failure the error carries the raw second-moment width as a fallback.
pub fn fit_gaussian(x: &[f64], y: &[f64]) -> Result<GaussianFit> {
    if x.len() != y.len() {
        return Err(Error::input("x and y lengths differ"));
    }
    let (mean, raw_sd) = raw_moments(x, y);
    let fail = |reason: &str| Error::GaussianFit { reason: reason.to_string(), fallback_width: raw_sd };
    if x.len() < 3 {
        return Err(fail("fewer than 3 points"));
    }
    let peak = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) || !raw_sd.is_finite() || raw_sd == 0.0 {
        return Err(fail("degenerate data"));
    }

    let mut p = [peak, mean, raw_sd];
    let ssr = |p: &[f64; 3]| -> f64 {
        x.iter()
            .zip(y)
            .map(|(&xi, &yi)| {
                let r = yi - p[0] * (-0.5 * ((xi - p[1]) / p[2]).powi(2)).exp();
                r * r
            })
            .sum()
    };
    let mut cost = ssr(&p);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        // Normal equations JᵀJ δ = Jᵀr
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&xi, &yi) in x.iter().zip(y) {
            let u = (xi - p[1]) / p[2];
            let e = (-0.5 * u * u).exp();
            let f = p[0] * e;
            let j = [e, f * u / p[2], f * u * u / p[2]];
            let r = yi - f;
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] *= 1.0 + lambda;
            }
            let Some(step) = solve3(m, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], (p[2] + step[2]).abs()];
            let c = ssr(&trial);
            if c.is_finite() && c <= cost {
                let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                p = trial;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = rel > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !(p[2] > 0.0) || !p.iter().all(|v| v.is_finite()) {
        return Err(fail("non-finite parameters"));
    }
    Ok(GaussianFit { amplitude: p[0], center: p[1], sigma: p[2] })
}

/// Gaussian fit restricted to the main lobe (points above `frac` of the peak).
pub fn fit_main_lobe(x: &[f64], y: &[f64], frac: f64) -> Result<GaussianFit> {
    let (lx, ly) = main_lobe(x, y, frac);
    fit_gaussian(&lx, &ly)
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let a = nalgebra::Matrix3::from_fn(|i, j| m[i][j]);
    let v = a.lu().solve(&nalgebra::Vector3::from(b))?;
    Some([v[0], v[1], v[2]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_gaussian() {
        let x: Vec<f64> = (0..200).map(|i| 4.0 + i as f64 * 0.025).collect();
        let y: Vec<f64> = x.iter().map(|&v| 3.0 * (-0.5 * ((v - 6.3) / 0.41).powi(2)).exp()).collect();
        let g = fit_gaussian(&x, &y).unwrap();
        assert!((g.amplitude - 3.0).abs() < 1e-9);
        assert!((g.center - 6.3).abs() < 1e-9);
        assert!((g.sigma - 0.41).abs() < 1e-9);
    }

    #[test]
    fn main_lobe_stops_at_threshold() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = [0.5, 0.01, 0.2, 1.0, 0.3, 0.02, 0.9];
        let (lx, ly) = main_lobe(&x, &y, 0.05);
        assert_eq!(lx, vec![2.0, 3.0, 4.0]);
        assert_eq!(ly.len(), 3);
    }

    #[test]
    fn degenerate_input_reports_fallback() {
        match fit_gaussian(&[1.0, 2.0], &[1.0, 1.0]) {
            Err(Error::GaussianFit { fallback_width, .. }) => assert!((fallback_width - 0.5).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }
}
