//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

/// Composite Simpson on [a, b] with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Trapezoid rule on tabulated samples.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..120 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Contiguous points around the maximum above `frac` of the peak.
pub fn lobe(x: &[f64], y: &[f64], frac: f64) -> (Vec<f64>, Vec<f64>) {
    let imax = (0..y.len()).max_by(|&i, &j| y[i].total_cmp(&y[j])).unwrap();
    let cut = frac * y[imax];
    let (mut lo, mut hi) = (imax, imax);
    while lo > 0 && y[lo - 1] > cut {
        lo -= 1;
    }
    while hi + 1 < y.len() && y[hi + 1] > cut {
        hi += 1;
    }
    (x[lo..=hi].to_vec(), y[lo..=hi].to_vec())
}

/// Least-squares Gaussian σ by profiling out the amplitude and golden-section
/// searching centre and width.
pub fn gaussian_sigma(x: &[f64], y: &[f64]) -> f64 {
    let ssr = |c: f64, s: f64| {
        let g: Vec<f64> = x.iter().map(|xi| (-0.5 * ((xi - c) / s).powi(2)).exp()).collect();
        let a = g.iter().zip(y).map(|(g, y)| g * y).sum::<f64>() / g.iter().map(|g| g * g).sum::<f64>();
        g.iter().zip(y).map(|(g, y)| (a * g - y).powi(2)).sum::<f64>()
    };
    let span = x[x.len() - 1] - x[0];
    let best_s = |c: f64| golden(|s| ssr(c, s), 1e-3 * span, 2.0 * span);
    let c = golden(|c| ssr(c, best_s(c)), x[0], x[x.len() - 1]);
    best_s(c)
}

/// Gaussian-fit σ of the main lobe (points above 5% of the peak).
pub fn lobe_sigma(x: &[f64], y: &[f64]) -> f64 {
    let (lx, ly) = lobe(x, y, 0.05);
    gaussian_sigma(&lx, &ly)
}

pub fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}
