//! Quadrature rules shared by the solvers.
//!
//! Two rules cover every integral in the crate: plain Gauss-Legendre on a
//! finite interval, and a weighted rule for integrals against the division
//! age density `k(a)` on `[tau_lower, tau_upper]`.

use crate::model::ValidatedModel;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
///
/// Nodes are computed by Newton iteration on the Legendre recurrence, which
/// is accurate to machine precision for the orders used here (<= 64).
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 2, "quadrature order must be at least 2");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess for the i-th root.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Integrate `f` over `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| (mid + half * x, w * half))
            .collect()
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
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature for integrals weighted by the division age density:
/// `integral of f(a) k(a) da` over `[tau_lower, tau_upper]`.
///
/// For shape `c < 1` the density has an integrable endpoint singularity at
/// `tau_upper`; the substitution `w = ((tau_upper - a)/(tau_upper -
/// tau_lower))^c` absorbs the weight exactly and leaves the smooth map
/// `a(w) = tau_upper - (tau_upper - tau_lower) w^(1/c)` (polynomial in `w`
/// when `1/c` is an integer). For `c >= 1` the density itself is bounded, and
/// the same substitution would introduce a `w^(1/c)` kink at `w = 0`, so the
/// rule integrates `f * k` directly in the age variable instead.
#[derive(Debug, Clone)]
pub struct KernelQuad {
    /// Quadrature nodes in the age variable, inside `(tau_lower, tau_upper)`.
    nodes: Vec<f64>,
    /// Weights incorporating the density `k`; `sum(weights) ~ 1`.
    weights: Vec<f64>,
}

impl KernelQuad {
    pub fn new(model: &ValidatedModel, order: usize) -> Self {
        let lo = model.tau_lower();
        let hi = model.tau_upper();
        let c = model.kernel_shape();
        let gl = GaussLegendre::new(order);
        let mut nodes = Vec::with_capacity(order);
        let mut weights = Vec::with_capacity(order);
        if c < 1.0 {
            for (w, wq) in gl.mapped(0.0, 1.0) {
                nodes.push(hi - (hi - lo) * w.powf(1.0 / c));
                weights.push(wq);
            }
        } else {
            for (a, wq) in gl.mapped(lo, hi) {
                nodes.push(a);
                weights.push(wq * crate::kernels::division_density_unchecked(model, a));
            }
            // the rule represents a probability density; pin its mass at 1
            // (a no-op up to rounding for integer shapes, and it removes the
            // endpoint-kink bias for real shapes)
            let mass: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= mass;
            }
        }
        KernelQuad { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrate `f(a) k(a) da` over the kernel support.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&a, &w)| w * f(a))
            .sum()
    }
}

/// Composite Simpson weights for a window of `n` uniform intervals.
///
/// Even `n` uses classic Simpson pairs; `n = 1` falls back to the trapezoid
/// rule; odd `n > 1` closes with a 3/8 rule on the last three intervals.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 1);
    let mut w = vec![0.0; n + 1];
    if n == 1 {
        w[0] = 0.5 * h;
        w[1] = 0.5 * h;
        return w;
    }
    let pairs = if n.is_multiple_of(2) {
        n / 2
    } else {
        (n - 3) / 2
    };
    for p in 0..pairs {
        let base = 2 * p;
        w[base] += h / 3.0;
        w[base + 1] += 4.0 * h / 3.0;
        w[base + 2] += h / 3.0;
    }
    if !n.is_multiple_of(2) {
        let base = n - 3;
        w[base] += 3.0 * h / 8.0;
        w[base + 1] += 9.0 * h / 8.0;
        w[base + 2] += 9.0 * h / 8.0;
        w[base + 3] += 3.0 * h / 8.0;
    }
    w
}
