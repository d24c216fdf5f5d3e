//! Deterministic expectation machinery over independent base variables.
//!
//! Expectations over exponential variables are computed by mapping each
//! variable through its inverse CDF and integrating over the unit cube with
//! a tensor Gauss–Legendre rule. Known kink locations (power-policy
//! saturation thresholds) are passed in as cut points so each smooth piece
//! is integrated separately.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Nodes per dimension of the tensor rule.
pub const GL_NODES: usize = 64;

/// Sample count of the Monte Carlo fallback used above 3 dimensions.
pub const MC_FALLBACK_SAMPLES: usize = 1_000_000;

/// Fixed seed of the Monte Carlo fallback, for reproducible artifacts.
pub const MC_FALLBACK_SEED: u64 = 0x5eed_cafe_f00d_0001;

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = if n == 1 {
                1.0
            } else {
                n as f64 * (x * p1 - p0) / (x * x - 1.0)
            };
            let dx = p1 / dp;
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
    (nodes, weights)
}

/// One integration dimension: an exponential base variable with optional cut
/// points (in variable space) where the integrand has kinks.
#[derive(Debug, Clone)]
pub struct ExpDim {
    pub mean: f64,
    pub cuts: Vec<f64>,
}

fn inv_cdf(mean: f64, u: f64) -> f64 {
    -mean * (1.0 - u).ln()
}

fn cdf(mean: f64, x: f64) -> f64 {
    1.0 - (-x / mean).exp()
}

/// Start of the geometrically graded tail partition.
const TAIL_START: f64 = 0.99;

/// Per-dimension segments in the unit interval after the inverse CDF map,
/// split at the supplied cuts.
///
/// The map has a logarithmic singularity at u = 1, so the tail is graded
/// geometrically (boundaries 1 − 10^{-k}); each tail segment is nearly
/// analytic and needs only a short rule.
fn segments(dim: &ExpDim) -> Vec<(f64, f64, bool)> {
    let mut bounds = vec![0.0, TAIL_START, 1.0];
    for k in 3..=13 {
        bounds.push(1.0 - 10f64.powi(-k));
    }
    for &c in &dim.cuts {
        if c > 0.0 && c.is_finite() {
            let u = cdf(dim.mean, c);
            if u > 1e-14 && u < 1.0 - 1e-14 {
                bounds.push(u);
            }
        }
    }
    bounds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bounds.dedup();
    bounds
        .windows(2)
        .map(|w| (w[0], w[1], w[0] >= TAIL_START))
        .collect()
}

/// E{f(X)} for independent exponential variables by tensor quadrature.
///
/// `f` receives one value per dimension, in order.
pub fn expectation(dims: &[ExpDim], f: &dyn Fn(&[f64]) -> f64, nodes_per_dim: usize) -> f64 {
    if dims.is_empty() {
        return f(&[]);
    }
    let (gl_x, gl_w) = gauss_legendre(nodes_per_dim);
    let tail_nodes = (nodes_per_dim / 4).max(8);
    let (tail_x, tail_w) = gauss_legendre(tail_nodes);

    // Precompute per-dimension evaluation points for every segment.
    let per_dim: Vec<Vec<(f64, f64)>> = dims
        .iter()
        .map(|dim| {
            let mut pts = Vec::new();
            for (a, b, in_tail) in segments(dim) {
                let (xs, ws) = if in_tail { (&tail_x, &tail_w) } else { (&gl_x, &gl_w) };
                let half = (b - a) / 2.0;
                let mid = (a + b) / 2.0;
                for (&x, &w) in xs.iter().zip(ws.iter()) {
                    let u = mid + half * x;
                    pts.push((inv_cdf(dim.mean, u), w * half));
                }
            }
            pts
        })
        .collect();

    let mut value = vec![0.0; dims.len()];
    fn recurse(
        per_dim: &[Vec<(f64, f64)>],
        dim: usize,
        weight: f64,
        value: &mut Vec<f64>,
        f: &dyn Fn(&[f64]) -> f64,
    ) -> f64 {
        if dim == per_dim.len() {
            return weight * f(value);
        }
        let mut total = 0.0;
        for &(x, w) in &per_dim[dim] {
            value[dim] = x;
            total += recurse(per_dim, dim + 1, weight * w, value, f);
        }
        total
    }
    recurse(&per_dim, 0, 1.0, &mut value, f)
}

/// Monte Carlo fallback for high-dimensional expectations; fixed seed and
/// sample count keep results bit-reproducible.
pub fn mc_expectation(dims: &[ExpDim], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(MC_FALLBACK_SEED);
    let mut value = vec![0.0; dims.len()];
    let mut total = 0.0;
    for _ in 0..MC_FALLBACK_SAMPLES {
        for (slot, dim) in value.iter_mut().zip(dims) {
            let u: f64 = rng.random();
            *slot = inv_cdf(dim.mean, u.min(1.0 - 1e-16));
        }
        total += f(&value);
    }
    total / MC_FALLBACK_SAMPLES as f64
}
