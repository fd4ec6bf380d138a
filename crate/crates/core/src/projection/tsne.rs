use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::AffinityMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TsneOptions {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub seed: u64,
    /// Objective is recorded every this many iterations (and at the end).
    pub log_every: usize,
}

impl Default for TsneOptions {
    fn default() -> Self {
        TsneOptions {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            seed: 0,
            log_every: 50,
        }
    }
}

impl TsneOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.perplexity > 1.0) || !self.perplexity.is_finite() {
            return bad("tsne perplexity must be > 1");
        }
        if self.iterations == 0 {
            return bad("tsne iterations must be positive");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("tsne learning rate must be positive");
        }
        if !(self.exaggeration >= 1.0) || !self.exaggeration.is_finite() {
            return bad("tsne exaggeration must be >= 1");
        }
        if self.log_every == 0 {
            return bad("tsne log interval must be positive");
        }
        Ok(())
    }
}

/// Low-dimensional layout and the KL(P‖Q) trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TsneLayout {
    pub coords: Vec<[f64; 2]>,
    pub initial_objective: f64,
    pub objective: f64,
    /// `(iteration, KL)` pairs; iteration 0 is the initialization.
    pub trace: Vec<(usize, f64)>,
}

/// Student-t kernel values `1/(1+|yi-yj|²)` (zero diagonal) and their sum.
fn kernel(y: &[[f64; 2]], num: &mut [f64]) -> f64 {
    let n = y.len();
    let mut total = 0.0;
    for i in 0..n {
        num[i * n + i] = 0.0;
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            total += 2.0 * v;
        }
    }
    total
}

fn kl_divergence(p: &[f64], num: &[f64], total: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &nij)| pij * (pij / (nij / total).max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// Exact gradient descent on KL(P‖Q) with a Student-t output kernel, early
/// exaggeration during the first quarter of the run, momentum 0.5 then 0.8
/// and per-coordinate adaptive gains.
pub fn tsne_embed(p: &AffinityMatrix, opts: &TsneOptions) -> Result<TsneLayout> {
    opts.validate()?;
    let n = p.n();
    if n < 2 {
        return Err(Error::InvalidArgument("t-SNE needs at least two points".into()));
    }
    let pv = p.values();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let init = Normal::new(0.0, 1e-4f64.sqrt()).expect("positive sd");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let stop_lying = opts.iterations / 4;

    let total = kernel(&y, &mut num);
    let initial = kl_divergence(pv, &num, total);
    if !initial.is_finite() {
        return Err(Error::NonFiniteObjective(0));
    }
    let mut trace = vec![(0, initial)];

    for it in 0..opts.iterations {
        let total = if it == 0 { total } else { kernel(&y, &mut num) };
        let exag = if it < stop_lying { opts.exaggeration } else { 1.0 };
        let momentum = if it < stop_lying { 0.5 } else { 0.8 };
        for i in 0..n {
            let mut g = [0.0f64; 2];
            let row = i * n;
            for j in 0..n {
                let nij = num[row + j];
                let mult = (exag * pv[row + j] - nij / total) * nij;
                g[0] += mult * (y[i][0] - y[j][0]);
                g[1] += mult * (y[i][1] - y[j][1]);
            }
            for d in 0..2 {
                let grad = 4.0 * g[d];
                gains[i][d] = if (grad > 0.0) != (update[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(0.01)
                };
                update[i][d] = momentum * update[i][d] - opts.learning_rate * gains[i][d] * grad;
            }
        }
        let mut mean = [0.0f64; 2];
        for (yi, ui) in y.iter_mut().zip(&update) {
            yi[0] += ui[0];
            yi[1] += ui[1];
            mean[0] += yi[0];
            mean[1] += yi[1];
        }
        for yi in &mut y {
            yi[0] -= mean[0] / n as f64;
            yi[1] -= mean[1] / n as f64;
        }
        let done = it + 1;
        if done % opts.log_every == 0 || done == opts.iterations {
            let total = kernel(&y, &mut num);
            let kl = kl_divergence(pv, &num, total);
            if !kl.is_finite() || y.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteObjective(done));
            }
            trace.push((done, kl));
        }
    }
    let objective = trace.last().map(|t| t.1).unwrap_or(initial);
    Ok(TsneLayout { coords: y, initial_objective: initial, objective, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::perplexity_affinities;

    fn line(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64, (i * i % 7) as f64]).collect()
    }

    #[test]
    fn descends_and_is_deterministic() {
        let p = perplexity_affinities(&line(30), 5.0).unwrap();
        let opts = TsneOptions { iterations: 300, ..TsneOptions::default() };
        let a = tsne_embed(&p, &opts).unwrap();
        let b = tsne_embed(&p, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.objective < a.initial_objective);
        assert!(a.trace.iter().all(|&(_, kl)| kl >= 0.0));
        let c = tsne_embed(&p, &TsneOptions { seed: 1, ..opts }).unwrap();
        assert_ne!(a.coords, c.coords);
    }

    #[test]
    fn rejects_bad_options() {
        let p = perplexity_affinities(&line(10), 3.0).unwrap();
        assert!(tsne_embed(&p, &TsneOptions { learning_rate: 0.0, ..TsneOptions::default() }).is_err());
        assert!(tsne_embed(&p, &TsneOptions { iterations: 0, ..TsneOptions::default() }).is_err());
    }
}
