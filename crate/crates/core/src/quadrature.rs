//! Gauss-Legendre rules and panel-doubling integration.

use crate::error::{Error, Result};

/// Points per panel for the adaptive integrators.
pub const PANEL_ORDER: usize = 16;
const MAX_PANELS: usize = 1024;

#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// n-point rule on [-1, 1]; Newton iteration on P_n from the Tricomi initial guesses.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        let nf = n as f64;
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    /// Composite rule: `panels` equal panels over [a, b].
    pub fn composite(&self, a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
        let h = (b - a) / panels as f64;
        let mut out = Vec::with_capacity(panels * self.len());
        for p in 0..panels {
            let lo = a + p as f64 * h;
            out.extend(self.mapped(lo, lo + h));
        }
        out
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn converged(prev: f64, next: f64, rel_tol: f64) -> bool {
    let diff = (next - prev).abs();
    diff <= rel_tol * next.abs() || diff == 0.0 || (next.abs() < 1e-300 && prev.abs() < 1e-300)
}

/// Integrates `f` over [a, b] with 16-point panels, doubling the panel count
/// until two successive estimates agree to `rel_tol`.
pub fn integrate<F: FnMut(f64) -> f64>(
    what: &'static str,
    mut f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
) -> Result<f64> {
    let rule = GaussLegendre::new(PANEL_ORDER);
    let mut panels = 2;
    let mut prev = rule.composite(a, b, panels).into_iter().map(|(x, w)| w * f(x)).sum::<f64>();
    while panels < MAX_PANELS {
        panels *= 2;
        let next = rule.composite(a, b, panels).into_iter().map(|(x, w)| w * f(x)).sum::<f64>();
        if converged(prev, next, rel_tol) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::NumericalTolerance { what, estimate: prev })
}

/// Tensor-product version of [`integrate`] over a rectangle.
pub fn integrate_2d<F: FnMut(f64, f64) -> f64>(
    what: &'static str,
    mut f: F,
    x: (f64, f64),
    y: (f64, f64),
    rel_tol: f64,
) -> Result<f64> {
    let rule = GaussLegendre::new(PANEL_ORDER);
    let mut eval = |panels: usize| {
        let xs = rule.composite(x.0, x.1, panels);
        let ys = rule.composite(y.0, y.1, panels);
        let mut s = 0.0;
        for &(xi, wx) in &xs {
            let mut row = 0.0;
            for &(yj, wy) in &ys {
                row += wy * f(xi, yj);
            }
            s += wx * row;
        }
        s
    };
    let mut panels = 2;
    let mut prev = eval(panels);
    while panels < MAX_PANELS / 4 {
        panels *= 2;
        let next = eval(panels);
        if converged(prev, next, rel_tol) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::NumericalTolerance { what, estimate: prev })
}
