mod common;

use common::lobe_sigma;
use echolab::distributions::{Node, SkewNormal, SkewNormalParams};
use echolab::forward::{
    bare_marginal, convolved_marginal, hole_spectrum, hole_width, hole_width_curve, probe_alone_spectrum, synth_dataset,
    Convolver, Dataset, ForwardModel, GridSpec, MarginalRoute,
};
use echolab::grid::FrequencyAxis;
use echolab::pulses::{instrumental_width, PulseSpec};

fn reference() -> SkewNormalParams {
    SkewNormalParams::reference_fit()
}

fn pulses() -> (PulseSpec, PulseSpec) {
    (PulseSpec::new(6.0, 8), PulseSpec::new(6.0, 8))
}

fn axis() -> FrequencyAxis {
    FrequencyAxis { start: 3.5, step: 0.05, len: 131 }
}

fn small_axis() -> FrequencyAxis {
    FrequencyAxis { start: 3.5, step: 0.1, len: 66 }
}

fn flat(g: &echolab::grid::SpectrumGrid2D) -> Vec<f64> {
    g.values.iter().flatten().copied().collect()
}

/// Sinc² kernel sampled at the grid step out to ±16/T; unnormalized.
fn raw_kernel(p: &PulseSpec, step: f64) -> (Vec<f64>, isize) {
    let t = p.duration_ms();
    let half = ((16.0 / t) / step).floor() as isize;
    let w = (-half..=half)
        .map(|k| {
            let x = std::f64::consts::PI * k as f64 * step * t;
            if k == 0 { 1.0 } else { (x.sin() / x).powi(2) }
        })
        .collect();
    (w, half)
}

/// g(i, j) = Σ_{x,y} M(x, y) K_p(i − x) K_q(j − y), each source's kernel
/// renormalized over the grid.
fn brute_force(m: &[f64], n: usize, pump: &PulseSpec, probe: &PulseSpec, step: f64) -> Vec<f64> {
    let (kp, hp) = raw_kernel(pump, step);
    let (kq, hq) = raw_kernel(probe, step);
    let weight = |k: &[f64], h: isize, to: usize, from: usize| {
        let d = to as isize - from as isize;
        if d.abs() > h { 0.0 } else { k[(d + h) as usize] }
    };
    let norm = |k: &[f64], h: isize, from: usize| (0..n).map(|to| weight(k, h, to, from)).sum::<f64>();
    let np: Vec<f64> = (0..n).map(|x| norm(&kp, hp, x)).collect();
    let nq: Vec<f64> = (0..n).map(|y| norm(&kq, hq, y)).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for x in 0..n {
                let wx = weight(&kp, hp, i, x) / np[x];
                if wx == 0.0 {
                    continue;
                }
                for y in 0..n {
                    s += m[x * n + y] * wx * weight(&kq, hq, j, y) / nq[y];
                }
            }
            out[i * n + j] = s;
        }
    }
    out
}

#[test]
fn convolution_matches_brute_force_double_sum() {
    let (pump, probe) = (PulseSpec::new(6.45, 8), PulseSpec::new(6.0, 10));
    let ax = small_axis();
    let bare = flat(&bare_marginal(&reference(), (Node::T0, Node::T5), &ax).unwrap());
    let got = flat(&convolved_marginal(&reference(), (Node::T0, Node::T5), &pump, &probe, &ax).unwrap());
    let want = brute_force(&bare, ax.len, &pump, &probe, ax.step);
    let peak = want.iter().cloned().fold(0.0, f64::max);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-10 * peak, "{g} vs {w}");
    }
}

#[test]
fn sparse_convolution_agrees_with_full() {
    let (pump, probe) = pulses();
    let ax = axis();
    let bare = flat(&bare_marginal(&reference(), (Node::T2, Node::T5), &ax).unwrap());
    let conv = Convolver::new(ax, &pump, &probe).unwrap();
    let full = conv.convolve_2d(&bare);
    let idx: Vec<usize> = (0..ax.len).step_by(5).collect();
    let mut scratch = vec![0.0; idx.len() * ax.len];
    let mut out = vec![0.0; idx.len() * idx.len()];
    conv.convolve_2d_at(&bare, &idx, &idx, &mut scratch, &mut out);
    let peak = full.iter().cloned().fold(0.0, f64::max);
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            assert!((out[r * idx.len() + c] - full[i * ax.len + j]).abs() < 1e-12 * peak);
        }
    }
}

#[test]
fn long_pulses_act_as_identity() {
    let long = PulseSpec::new(6.0, 512);
    let ax = axis();
    let m = bare_marginal(&reference(), (Node::T0, Node::T2), &ax).unwrap();
    let g = convolved_marginal(&reference(), (Node::T0, Node::T2), &long, &long, &ax).unwrap();
    let peak = m.peak();
    for (a, b) in flat(&m).iter().zip(flat(&g)) {
        assert!((a - b).abs() < 0.01 * peak);
    }
}

#[test]
fn convolution_conserves_mass() {
    let (pump, probe) = pulses();
    let ax = axis();
    for keep in [(Node::T0, Node::T2), (Node::T2, Node::T5), (Node::T0, Node::T5)] {
        let m = bare_marginal(&reference(), keep, &ax).unwrap();
        let g = convolved_marginal(&reference(), keep, &pump, &probe, &ax).unwrap();
        assert!((g.mass() - m.mass()).abs() < 1e-6);
        assert!((g.mass() - 1.0).abs() < 1e-4);
        assert!(g.values.iter().flatten().all(|&v| v >= 0.0));
    }
}

#[test]
fn convolved_marginal_is_wider_than_bare() {
    let (pump, probe) = pulses();
    let ax = axis();
    let x = ax.values();
    let m = bare_marginal(&reference(), (Node::T0, Node::T5), &ax).unwrap();
    let g = convolved_marginal(&reference(), (Node::T0, Node::T5), &pump, &probe, &ax).unwrap();
    let sd = |w: &[f64]| {
        let s: f64 = w.iter().sum();
        let mean = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / s;
        (x.iter().zip(w).map(|(a, b)| (a - mean).powi(2) * b).sum::<f64>() / s).sqrt()
    };
    let rows = |g: &echolab::grid::SpectrumGrid2D| g.values.iter().map(|r| r.iter().sum()).collect::<Vec<f64>>();
    let cols = |g: &echolab::grid::SpectrumGrid2D| (0..ax.len).map(|j| g.values.iter().map(|r| r[j]).sum()).collect::<Vec<f64>>();
    assert!(sd(&rows(&g)) > sd(&rows(&m)));
    assert!(sd(&cols(&g)) > sd(&cols(&m)));
}

#[test]
fn convolution_is_linear() {
    let (pump, probe) = pulses();
    let ax = axis();
    let other = SkewNormalParams::new([6.2, 6.1, 6.4], [0.6, 0.7, 0.9], [0.5, 0.4, 0.3], [-1.0, 0.5, 2.0]);
    let keep = (Node::T0, Node::T2);
    let m1 = flat(&bare_marginal(&reference(), keep, &ax).unwrap());
    let m2 = flat(&bare_marginal(&other, keep, &ax).unwrap());
    let conv = Convolver::new(ax, &pump, &probe).unwrap();
    let mix: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| 0.3 * a + 0.7 * b).collect();
    let lhs = conv.convolve_2d(&mix);
    let (g1, g2) = (conv.convolve_2d(&m1), conv.convolve_2d(&m2));
    for k in 0..lhs.len() {
        assert!((lhs[k] - (0.3 * g1[k] + 0.7 * g2[k])).abs() < 1e-8);
    }
}

#[test]
fn probe_alone_long_pulse_is_marginal() {
    let ax = axis();
    let s = probe_alone_spectrum(&reference(), Node::T0, &PulseSpec::new(6.0, 512), &ax).unwrap();
    let m = SkewNormal::new(reference()).unwrap().marginal_1d(Node::T0).on_axis(&ax).unwrap();
    let peak = m.iter().cloned().fold(0.0, f64::max);
    for (a, b) in s.values.iter().zip(&m) {
        assert!((a - b).abs() < 0.01 * peak);
    }
    assert!((s.mass() - 1.0).abs() < 1e-4);
}

#[test]
fn probe_alone_width() {
    let ax = FrequencyAxis { start: 2.0, step: 0.02, len: 501 };
    let probe = PulseSpec::new(6.0, 8);
    let s = probe_alone_spectrum(&reference(), Node::T0, &probe, &ax).unwrap();
    let fit = 1000.0 * lobe_sigma(&s.freq_khz, &s.values);
    let bare = SkewNormal::new(reference()).unwrap().marginal_1d(Node::T0).on_axis(&ax).unwrap();
    let bare_fit = 1000.0 * lobe_sigma(&ax.values(), &bare);
    let inst = probe.spectral_width_hz().unwrap();
    let combined = (bare_fit * bare_fit + inst * inst).sqrt();
    assert!((fit / combined - 1.0).abs() < 0.05, "{fit} vs {combined}");
    // Deconvolving the probe's own spectral width gives the inhomogeneous width.
    let inhomogeneous = (fit * fit - inst * inst).sqrt();
    assert!((inhomogeneous / 600.0 - 1.0).abs() < 0.15, "{inhomogeneous}");
}

#[test]
fn hole_is_centred_near_pump() {
    let (pump, probe) = (PulseSpec::new(6.45, 8), PulseSpec::new(6.0, 8));
    let h = hole_spectrum(&reference(), 6.45, 2.0, &pump, &probe, &axis()).unwrap();
    assert!(!h.empty);
    let peak = h.values.iter().cloned().fold(0.0, f64::max);
    assert!((peak - 1.0).abs() < 1e-12);
    let (x, y) = common::lobe(&h.probe_khz, &h.values, 0.05);
    let centre = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / y.iter().sum::<f64>();
    assert!((centre - 6.45).abs() < 0.15, "{centre}");
}

#[test]
fn perfect_memory_hole_is_instrumental() {
    // A narrow population envelope trims the kernel tails, so the limit needs a broad one.
    const SIGMA: f64 = 1.5;
    let p = SkewNormalParams::new([10.0; 3], [SIGMA; 3], [0.999; 3], [0.0; 3]);
    let ax = FrequencyAxis { start: 10.0 - 7.0 * SIGMA, step: 0.04, len: (14.0 * SIGMA / 0.04) as usize + 1 };
    let (pump, probe) = pulses();
    let h = hole_spectrum(&p, 10.0, 2.0, &pump, &probe, &ax).unwrap();
    let (w, fallback) = hole_width(&h).unwrap();
    assert!(!fallback);
    let inst = instrumental_width(&pump, &probe).unwrap();
    assert!((w / inst - 1.0).abs() < 0.02, "{w} vs {inst}");
}

#[test]
fn reference_hole_widths_grow() {
    let (pump, probe) = pulses();
    let curve = hole_width_curve(&reference(), 6.45, &pump, &probe, &axis()).unwrap();
    assert!(curve.is_increasing());
    let frozen = [502.7, 553.9, 566.5];
    for (p, want) in curve.points.iter().zip(frozen) {
        assert!(!p.fallback);
        assert!((p.width_hz - want).abs() < 1.0, "{} ms: {}", p.delay_ms, p.width_hz);
        assert!(p.width_hz > curve.instrumental_hz);
        let h = hole_spectrum(&reference(), 6.45, p.delay_ms, &pump, &probe, &axis()).unwrap();
        let oracle = 1000.0 * lobe_sigma(&h.probe_khz, &h.values);
        assert!((p.width_hz / oracle - 1.0).abs() < 2e-3, "{} vs {oracle}", p.width_hz);
    }
}

#[test]
fn hole_widths_are_stable_under_refinement() {
    let (pump, probe) = pulses();
    let coarse = hole_width_curve(&reference(), 6.45, &pump, &probe, &axis()).unwrap();
    let fine_axis = FrequencyAxis { start: 3.5, step: 0.025, len: 261 };
    let fine = hole_width_curve(&reference(), 6.45, &pump, &probe, &fine_axis).unwrap();
    for (a, b) in coarse.points.iter().zip(&fine.points) {
        assert!((a.width_hz / b.width_hz - 1.0).abs() < 0.01);
    }
}

#[test]
fn pump_outside_support_gives_empty_hole() {
    let (pump, probe) = pulses();
    let h = hole_spectrum(&reference(), 20.0, 2.0, &pump, &probe, &axis()).unwrap();
    assert!(h.empty);
    assert!(h.values.iter().all(|&v| v == 0.0));
    assert!(hole_width(&h).is_err());
    assert!(hole_spectrum(&reference(), 6.45, 4.0, &pump, &probe, &axis()).is_err());
}

#[test]
fn noise_free_dataset_equals_convolved_marginals() {
    let (pump, probe) = pulses();
    let grid = GridSpec::default();
    let d = synth_dataset(&reference(), &pump, &probe, &grid, 0.0, 1).unwrap();
    let idx = grid.data_indices().unwrap();
    let pairs = [(Node::T0, Node::T2), (Node::T2, Node::T5), (Node::T0, Node::T5)];
    for (k, keep) in pairs.into_iter().enumerate() {
        let g = convolved_marginal(&reference(), keep, &pump, &probe, &grid.model).unwrap();
        assert_eq!(d.joint[k].delay_ms, [2.0, 3.0, 5.0][k]);
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                let want = g.values[i][j];
                assert!((d.joint[k].values[r][c] - want).abs() <= 1e-12 * g.peak());
            }
        }
    }
    for (k, node) in Node::ALL.into_iter().enumerate() {
        let s = probe_alone_spectrum(&reference(), node, &probe, &grid.model).unwrap();
        for (c, &j) in idx.iter().enumerate() {
            assert!((d.probe_alone[k].values[c] - s.values[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn datasets_are_reproducible() {
    let (pump, probe) = pulses();
    let grid = GridSpec::default();
    let a = synth_dataset(&reference(), &pump, &probe, &grid, 0.05, 7).unwrap();
    let b = synth_dataset(&reference(), &pump, &probe, &grid, 0.05, 7).unwrap();
    let c = synth_dataset(&reference(), &pump, &probe, &grid, 0.05, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.joint, c.joint);
    assert!(synth_dataset(&reference(), &pump, &probe, &grid, -0.1, 7).is_err());
}

#[test]
fn noisy_dataset_residuals_are_chi_square() {
    let (pump, probe) = pulses();
    let grid = GridSpec::default();
    let model = ForwardModel::new(grid, &pump, &probe).unwrap();
    let truth = model.evaluate(&SkewNormal::new(reference()).unwrap(), MarginalRoute::Quadrature).unwrap();
    let noise = 0.05;
    let mut chi2 = 0.0;
    let mut n = 0usize;
    for seed in 0..4 {
        let d = synth_dataset(&reference(), &pump, &probe, &grid, noise, seed).unwrap();
        let obs = d.observed();
        let blocks = truth.grids.iter().zip(&obs.grids).chain(truth.spectra.iter().zip(&obs.spectra));
        for (t, o) in blocks {
            let sd = noise * t.iter().cloned().fold(0.0, f64::max);
            chi2 += t.iter().zip(o).map(|(a, b)| ((a - b) / sd).powi(2)).sum::<f64>();
            n += t.len();
        }
    }
    let n = n as f64;
    assert!((chi2 - n).abs() < 3.0 * (2.0 * n).sqrt(), "{chi2} vs {n}");
}

#[test]
fn closed_form_route_matches_quadrature() {
    let (pump, probe) = pulses();
    let model = ForwardModel::new(GridSpec::default(), &pump, &probe).unwrap();
    let sn = SkewNormal::new(reference()).unwrap();
    let a = model.evaluate(&sn, MarginalRoute::Quadrature).unwrap();
    let b = model.evaluate(&sn, MarginalRoute::ClosedForm).unwrap();
    for (x, y) in a.grids.iter().flatten().chain(a.spectra.iter().flatten()).zip(b.grids.iter().flatten().chain(b.spectra.iter().flatten())) {
        assert!((x - y).abs() < 1e-7, "{x} vs {y}");
    }
}

#[test]
fn dataset_json_round_trip() {
    let (pump, probe) = pulses();
    let d = synth_dataset(&reference(), &pump, &probe, &GridSpec::default(), 0.02, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    d.write_json(&path).unwrap();
    let back = Dataset::read_json(&path).unwrap();
    assert_eq!(back.meta.seed, 3);
    assert_eq!(back.meta.noise_sigma, 0.02);
    assert_eq!(back.meta.truth, Some(reference()));
    for (a, b) in d.joint.iter().zip(&back.joint) {
        for (x, y) in a.values.iter().flatten().zip(b.values.iter().flatten()) {
            assert!((x - y).abs() <= 1e-8 * x.abs().max(1e-12));
        }
    }
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["delays_ms"], serde_json::json!([2.0, 3.0, 5.0]));
    assert!(v["joint"][0]["values"].is_array());
}
