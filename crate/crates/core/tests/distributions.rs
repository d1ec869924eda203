use echolab::distributions::{IncrementGrid, Node, SkewNormal, SkewNormalParams};
use echolab::grid::FrequencyAxis;
use echolab::FrequencyTriple;
use proptest::prelude::*;

const PI: f64 = std::f64::consts::PI;

fn reference() -> SkewNormalParams {
    SkewNormalParams::reference_fit()
}

fn cov(p: &SkewNormalParams) -> [[f64; 3]; 3] {
    let s = p.sigma;
    let [r02, r25, r05] = p.rho;
    [
        [s[0] * s[0], r02 * s[0] * s[1], r05 * s[0] * s[2]],
        [r02 * s[0] * s[1], s[1] * s[1], r25 * s[1] * s[2]],
        [r05 * s[0] * s[2], r25 * s[1] * s[2], s[2] * s[2]],
    ]
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inv3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let d = det3(m);
    let c = |i: usize, j: usize| {
        let (a, b) = ((i + 1) % 3, (i + 2) % 3);
        let (x, y) = ((j + 1) % 3, (j + 2) % 3);
        m[a][x] * m[b][y] - m[a][y] * m[b][x]
    };
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[j][i] = c(i, j) / d;
        }
    }
    out
}

/// Trivariate normal density, written out by cofactors.
fn mvn3(p: &SkewNormalParams, w: [f64; 3]) -> f64 {
    let m = cov(p);
    let inv = inv3(&m);
    let x: Vec<f64> = (0..3).map(|i| w[i] - p.mu[i]).collect();
    let mut q = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            q += x[i] * inv[i][j] * x[j];
        }
    }
    (-0.5 * q).exp() / ((2.0 * PI).powf(1.5) * det3(&m).sqrt())
}

fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// 2 ψ(ω; Ω) Φ(αᵀ(ω − μ)) from first principles.
fn sn_oracle(p: &SkewNormalParams, w: [f64; 3]) -> f64 {
    let a: f64 = (0..3).map(|i| p.alpha[i] * (w[i] - p.mu[i])).sum();
    2.0 * mvn3(p, w) * phi_cdf(a)
}

/// Composite Simpson on [a, b] with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn density_matches_first_principles() {
    let p = reference();
    let sn = SkewNormal::new(p).unwrap();
    for w in [[5.0, 6.0, 7.0], [6.3, 6.3, 6.4], [7.5, 5.2, 6.1], [4.5, 4.6, 4.4]] {
        let want = sn_oracle(&p, w);
        let got = sn.density(&FrequencyTriple::from_array(w));
        assert!((got - want).abs() <= 1e-12 * want.max(1e-300) + 1e-300, "{w:?}: {got} vs {want}");
    }
}

#[test]
fn zero_shape_is_plain_normal() {
    let p = reference().with_alpha([0.0; 3]);
    let sn = SkewNormal::new(p).unwrap();
    for w in [[5.0, 6.0, 7.0], [6.3, 6.3, 6.4], [7.5, 5.2, 6.1]] {
        let want = mvn3(&p, w);
        assert!((sn.density_at(w) / want - 1.0).abs() < 1e-12);
    }
}

#[test]
fn density_at_mean_location_is_normal_peak() {
    let p = reference();
    let sn = SkewNormal::new(p).unwrap();
    let want = 1.0 / ((2.0 * PI).powf(1.5) * det3(&cov(&p)).sqrt());
    assert!((sn.density_at(p.mu) / want - 1.0).abs() < 1e-12);
}

#[test]
fn density_integrates_to_one_over_box() {
    let p = reference();
    let sn = SkewNormal::new(p).unwrap();
    let n = 96;
    let lo: Vec<f64> = (0..3).map(|i| p.mu[i] - 6.0 * p.sigma[i]).collect();
    let hi: Vec<f64> = (0..3).map(|i| p.mu[i] + 6.0 * p.sigma[i]).collect();
    let total = simpson(
        |x| simpson(|y| simpson(|z| sn.density_at([x, y, z]), lo[2], hi[2], n), lo[1], hi[1], n),
        lo[0],
        hi[0],
        n,
    );
    assert!((total - 1.0).abs() < 1e-4, "{total}");
}

#[test]
fn bivariate_marginal_matches_dense_quadrature() {
    let p = reference();
    let sn = SkewNormal::new(p).unwrap();
    let m = sn.marginal_2d(Node::T0, Node::T2).unwrap();
    let (mu5, s5) = (p.mu[2], p.sigma[2]);
    let axis: Vec<f64> = (0..64).map(|i| 4.0 + 5.0 * i as f64 / 63.0).collect();
    let mut peak: f64 = 0.0;
    let mut pairs = Vec::new();
    for &a in &axis {
        for &b in &axis {
            let want = simpson(|z| sn_oracle(&p, [a, b, z]), mu5 - 10.0 * s5, mu5 + 10.0 * s5, 2000);
            let got = m.density(a, b).unwrap();
            peak = peak.max(want);
            pairs.push((got, want));
        }
    }
    for (got, want) in pairs {
        if want > 1e-8 * peak {
            assert!((got / want - 1.0).abs() < 1e-6, "{got} vs {want}");
        } else {
            assert!((got - want).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_shape_bivariate_marginal_is_sub_covariance_normal() {
    let p = reference().with_alpha([0.0; 3]);
    let sn = SkewNormal::new(p).unwrap();
    let m = sn.marginal_2d(Node::T2, Node::T5).unwrap();
    let (s2, s5, r) = (p.sigma[1], p.sigma[2], p.rho[1]);
    for (a, b) in [(5.0, 6.0), (6.5, 6.2), (7.2, 7.9)] {
        let (x, y) = ((a - p.mu[1]) / s2, (b - p.mu[2]) / s5);
        let q = (x * x - 2.0 * r * x * y + y * y) / (1.0 - r * r);
        let want = (-0.5 * q).exp() / (2.0 * PI * s2 * s5 * (1.0 - r * r).sqrt());
        assert!((m.density(a, b).unwrap() / want - 1.0).abs() < 1e-7);
    }
}

#[test]
fn univariate_marginal_mean_and_normalization() {
    let p = reference();
    let sn = SkewNormal::new(p).unwrap();
    let m = sn.marginal_1d(Node::T0);
    // Mean of the skew-normal: μ + √(2/π) Ωα / √(1 + αᵀΩα).
    let c = cov(&p);
    let oa: Vec<f64> = (0..3).map(|i| (0..3).map(|j| c[i][j] * p.alpha[j]).sum()).collect();
    let aoa: f64 = (0..3).map(|i| p.alpha[i] * oa[i]).sum();
    let want = p.mu[0] + (2.0 / PI).sqrt() * oa[0] / (1.0 + aoa).sqrt();
    let got = m.mean().unwrap();
    assert!(got > p.mu[0]);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");

    let ax = FrequencyAxis::span(1.0, 11.0, 0.01).unwrap();
    let mass: f64 = m.on_axis(&ax).unwrap().iter().sum::<f64>() * ax.step;
    assert!((mass - 1.0).abs() < 1e-4);
}

#[test]
fn marginalization_commutes() {
    let p = reference();
    let sn = SkewNormal::new(p).unwrap();
    let m2 = sn.marginal_2d(Node::T0, Node::T2).unwrap();
    let m1 = sn.marginal_1d(Node::T0);
    for w0 in [5.5, 6.2, 7.0] {
        let via2 = simpson(|w2| m2.density(w0, w2).unwrap(), p.mu[1] - 8.0 * p.sigma[1], p.mu[1] + 8.0 * p.sigma[1], 400);
        let direct = m1.density(w0).unwrap();
        assert!((via2 / direct - 1.0).abs() < 1e-6, "{via2} {direct}");
    }
}

#[test]
fn zero_shape_samples_reproduce_covariance() {
    let p = reference().with_alpha([0.0; 3]);
    let n = 1_000_000;
    let draws = SkewNormal::new(p).unwrap().sample(n, 5);
    let c = cov(&p);
    let x: Vec<[f64; 3]> = draws.iter().map(|w| w.to_array()).collect();
    let mean: Vec<f64> = (0..3).map(|i| x.iter().map(|v| v[i]).sum::<f64>() / n as f64).collect();
    for i in 0..3 {
        for j in 0..3 {
            let s = x.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum::<f64>() / (n - 1) as f64;
            let se = ((c[i][i] * c[j][j] + c[i][j] * c[i][j]) / n as f64).sqrt();
            assert!((s - c[i][j]).abs() < 3.0 * se, "cov[{i}][{j}] {s} vs {}", c[i][j]);
        }
    }
}

#[test]
fn skewed_sample_mean_matches_quadrature() {
    let p = reference();
    let sn = SkewNormal::new(p).unwrap();
    let n = 1_000_000;
    let draws = sn.sample(n, 9);
    let m: f64 = draws.iter().map(|w| w.w0).sum::<f64>() / n as f64;
    let sd = (draws.iter().map(|w| (w.w0 - m).powi(2)).sum::<f64>() / n as f64).sqrt();
    let want = sn.marginal_1d(Node::T0).mean().unwrap();
    assert!((m - want).abs() < 3.0 * sd / (n as f64).sqrt(), "{m} vs {want}");
}

#[test]
fn sampling_is_deterministic() {
    let sn = SkewNormal::new(reference()).unwrap();
    assert_eq!(sn.sample(1, 42), sn.sample(1, 42));
    assert_ne!(sn.sample(1, 42), sn.sample(1, 43));
}

#[test]
fn zero_shape_increment_covariance_is_analytic() {
    let p = reference().with_alpha([0.0; 3]);
    let sn = SkewNormal::new(p).unwrap();
    let proj = sn.increment_projection(&IncrementGrid::covering(&sn, 41).unwrap()).unwrap();
    let (s, [r02, r25, r05]) = (p.sigma, p.rho);
    let v1 = s[0] * s[0] + s[1] * s[1] - 2.0 * r02 * s[0] * s[1];
    let v2 = s[1] * s[1] + s[2] * s[2] - 2.0 * r25 * s[1] * s[2];
    let c12 = s[0] * s[1] * r02 + s[1] * s[2] * r25 - s[1] * s[1] - s[0] * s[2] * r05;
    assert!((proj.covariance[0][0] - v1).abs() < 1e-10);
    assert!((proj.covariance[1][1] - v2).abs() < 1e-10);
    assert!((proj.covariance[0][1] - c12).abs() < 1e-10);
}

#[test]
fn reference_increments_anticorrelate() {
    let p = reference();
    let sn = SkewNormal::new(p).unwrap();
    let proj = sn.increment_projection(&IncrementGrid::covering(&sn, 81).unwrap()).unwrap();
    assert!(proj.correlation < 0.0);
    assert!((proj.grid_correlation() - proj.correlation).abs() < 0.01);

    let n = 1_000_000;
    let inc: Vec<(f64, f64)> = sn.sample(n, 21).iter().map(|w| (w.w2 - w.w0, w.w5 - w.w2)).collect();
    let (ma, mb) = inc.iter().fold((0.0, 0.0), |(x, y), (a, b)| (x + a / n as f64, y + b / n as f64));
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (a, b) in &inc {
        saa += (a - ma).powi(2);
        sbb += (b - mb).powi(2);
        sab += (a - ma) * (b - mb);
    }
    let mc = sab / (saa * sbb).sqrt();
    assert!((mc - proj.correlation).abs() < 0.02, "{mc} vs {}", proj.correlation);
}

#[test]
fn invalid_parameters_are_rejected() {
    let p = reference();
    assert!(SkewNormal::new(p.with_rho([0.9, 0.9, -0.9])).is_err());
    assert!(SkewNormal::new(p.with_rho([1.0, 0.5, 0.5])).is_err());
    let mut bad = p;
    bad.sigma[1] = 0.0;
    assert!(SkewNormal::new(bad).is_err());
}

#[test]
fn params_json_keys() {
    let v = serde_json::to_value(reference()).unwrap();
    for key in ["mu_khz", "sigma_khz", "rho", "alpha", "node_times_ms"] {
        assert_eq!(v[key].as_array().map(|a| a.len()), Some(3), "{key}");
    }
    let back: SkewNormalParams = serde_json::from_value(v).unwrap();
    assert_eq!(back, reference());
}

fn valid_params() -> impl Strategy<Value = SkewNormalParams> {
    (
        prop::array::uniform3(5.0..7.0f64),
        prop::array::uniform3(0.3..1.5f64),
        prop::array::uniform3(-0.9..0.95f64),
        prop::array::uniform3(-6.0..6.0f64),
    )
        .prop_map(|(mu, sigma, rho, alpha)| SkewNormalParams::new(mu, sigma, rho, alpha))
        .prop_filter("positive definite", |p| p.is_valid())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn density_is_nonnegative_and_matches_oracle(p in valid_params(), w in prop::array::uniform3(3.0..9.0f64)) {
        let d = SkewNormal::new(p).unwrap().density_at(w);
        prop_assert!(d >= 0.0 && d.is_finite());
        let want = sn_oracle(&p, w);
        prop_assert!((d - want).abs() <= 1e-10 * want + 1e-300);
    }

    #[test]
    fn density_is_translation_invariant(p in valid_params(), w in prop::array::uniform3(4.0..8.0f64), c in -2.0..2.0f64) {
        let a = SkewNormal::new(p).unwrap().density_at(w);
        let shifted = SkewNormalParams::new(p.mu.map(|m| m + c), p.sigma, p.rho, p.alpha);
        let b = SkewNormal::new(shifted).unwrap().density_at(w.map(|x| x + c));
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-12));
    }

    #[test]
    fn bivariate_marginal_is_symmetric_in_argument_order(p in valid_params(), a in 5.0..7.0f64, b in 5.0..7.0f64) {
        let sn = SkewNormal::new(p).unwrap();
        let ab = sn.marginal_2d(Node::T0, Node::T5).unwrap().density(a, b).unwrap();
        let ba = sn.marginal_2d(Node::T5, Node::T0).unwrap().density(b, a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1e-12));
    }
}
