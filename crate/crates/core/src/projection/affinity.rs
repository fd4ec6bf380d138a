use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

const PERPLEXITY_TOL: f64 = 1e-4;
const MAX_BISECTION: usize = 200;
const JITTER_SEED: u64 = 0x6a69_7474_6572;

/// Symmetric joint probabilities over point pairs, row-major N×N.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    perplexity: f64,
    jittered: bool,
    precisions: Vec<f64>,
    p: Vec<f64>,
}

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn perplexity(&self) -> f64 {
        self.perplexity
    }

    /// True when duplicate points forced a small random perturbation before
    /// the bandwidth search could converge.
    pub fn jittered(&self) -> bool {
        self.jittered
    }

    /// Per-row Gaussian precision `1/(2σ²)` applied to squared distances.
    pub fn precisions(&self) -> &[f64] {
        &self.precisions
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }
}

pub(crate) fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional distribution of row `i` at precision `beta`; returns the
/// entropy in nats.
fn row_conditional(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&dj, o)) in dist.iter().zip(out.iter_mut()).enumerate() {
        if j == i {
            *o = 0.0;
            continue;
        }
        let e = (-beta * (dj - dmin)).exp();
        *o = e;
        sum += e;
        weighted += e * (dj - dmin);
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    sum.ln() + beta * weighted / sum
}

/// Bisection on the row precision until `exp(entropy)` matches the target.
/// Returns `None` when the target cannot be reached.
fn solve_row(dist: &[f64], i: usize, perplexity: f64, out: &mut [f64]) -> Option<f64> {
    let target = perplexity.ln();
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let scale = {
        let (s, c) = dist
            .iter()
            .enumerate()
            .filter(|&(j, &v)| j != i && v > 0.0)
            .fold((0.0, 0usize), |(s, c), (_, &v)| (s + v, c + 1));
        if c == 0 {
            return None;
        }
        s / c as f64
    };
    let mut beta = 1.0 / scale;
    for _ in 0..MAX_BISECTION {
        let h = row_conditional(dist, i, beta, out);
        if !h.is_finite() {
            return None;
        }
        if (h.exp() - perplexity).abs() <= PERPLEXITY_TOL {
            return Some(beta);
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (lo + hi);
        }
    }
    let h = row_conditional(dist, i, beta, out);
    ((h.exp() - perplexity).abs() <= PERPLEXITY_TOL).then_some(beta)
}

fn conditionals(dist: &[f64], n: usize, perplexity: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut cond = vec![0.0; n * n];
    let mut betas = Vec::with_capacity(n);
    for i in 0..n {
        betas.push(solve_row(&dist[i * n..(i + 1) * n], i, perplexity, &mut cond[i * n..(i + 1) * n])?);
    }
    Some((cond, betas))
}

/// Gaussian input-space affinities with a per-point bandwidth matched to
/// `perplexity`, symmetrized as `(p_j|i + p_i|j) / 2N`.
///
/// Duplicate points can make a row's target unreachable; in that case the
/// points are perturbed by a tiny deterministic jitter and the search is
/// repeated, which is recorded in [`AffinityMatrix::jittered`].
pub fn perplexity_affinities(x: &[Vec<f64>], perplexity: f64) -> Result<AffinityMatrix> {
    let n = x.len();
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(Error::InvalidArgument(format!(
            "perplexity {perplexity} must lie strictly between 1 and the point count {n}"
        )));
    }
    let dim = x[0].len();
    if x.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape("points have differing dimensionality".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("points contain non-finite values".into()));
    }
    let mut dist = squared_distances(x);
    let mut jittered = false;
    let mut cond = conditionals(&dist, n, perplexity);
    if cond.is_none() {
        let spread = x.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(JITTER_SEED);
        for attempt in 0..4 {
            let noise = Normal::new(0.0, spread * 1e-6 * 10f64.powi(attempt)).expect("positive sd");
            let moved: Vec<Vec<f64>> =
                x.iter().map(|r| r.iter().map(|&v| v + noise.sample(&mut rng)).collect()).collect();
            dist = squared_distances(&moved);
            cond = conditionals(&dist, n, perplexity);
            if cond.is_some() {
                jittered = true;
                break;
            }
        }
    }
    let (cond, precisions) = cond.ok_or_else(|| {
        Error::InvalidArgument(format!("bandwidth search did not reach perplexity {perplexity}"))
    })?;
    let mut p = vec![0.0; n * n];
    let norm = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / norm;
        }
    }
    Ok(AffinityMatrix { n, perplexity, jittered, precisions, p })
}
