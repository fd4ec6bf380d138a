use crate::error::{Error, Result};

/// Linear classifier `score = w·x + b`, positive scores predicting label 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    /// Value of the normalised objective at the returned solution.
    pub objective: f64,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvmOptions {
    pub c: f64,
    pub iterations: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self { c: 1.0, iterations: 4000 }
    }
}

/// `λ/2‖w‖² + mean hinge` with `λ = 1/(C·n)`, i.e. the usual
/// `½‖w‖² + C Σ hinge` divided by `C·n`.
pub fn svm_objective(x: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, c: f64) -> f64 {
    let n = x.len() as f64;
    let lambda = 1.0 / (c * n);
    let reg = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| (1.0 - yi * (dot(w, xi) + b)).max(0.0))
        .sum();
    reg + hinge / n
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Exact minimiser of `Σ hinge` over the bias for fixed projections `s`.
///
/// The sum is piecewise linear in `b` with slope `−n₊` far left, rising by
/// one at every breakpoint `yᵢ − sᵢ`; it is flat between the `n₊`-th and
/// `(n₊+1)`-th sorted breakpoints, and the midpoint is returned.
fn optimal_bias(s: &[f64], y: &[f64]) -> f64 {
    let mut breaks: Vec<f64> = s.iter().zip(y).map(|(si, yi)| yi - si).collect();
    breaks.sort_by(f64::total_cmp);
    let n_pos = y.iter().filter(|&&v| v > 0.0).count();
    0.5 * (breaks[n_pos - 1] + breaks[n_pos])
}

/// Full-batch projected subgradient descent (step `1/(λt)`) on the weights,
/// with the bias minimised exactly at every iterate. Returns whichever of
/// the last iterate, the suffix average and the best visited iterate has
/// the lowest objective.
pub fn train_linear_svm(x: &[Vec<f64>], labels: &[u8], opts: &SvmOptions) -> Result<SvmModel> {
    let n = x.len();
    if n == 0 || labels.len() != n {
        return Err(Error::Shape(format!("{n} rows for {} labels", labels.len())));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("feature rows have different lengths".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("features must be finite".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::InvalidArgument("SVM training needs both classes".into()));
    }
    if !(opts.c > 0.0) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {}", opts.c)));
    }
    let y: Vec<f64> = labels.iter().map(|&l| if l != 0 { 1.0 } else { -1.0 }).collect();
    let lambda = 1.0 / (opts.c * n as f64);
    let radius = 1.0 / lambda.sqrt();

    let solve_bias = |w: &[f64]| -> f64 {
        let s: Vec<f64> = x.iter().map(|xi| dot(w, xi)).collect();
        optimal_bias(&s, &y)
    };
    let eval = |w: &[f64]| -> (f64, f64) {
        let b = solve_bias(w);
        (svm_objective(x, &y, w, b, opts.c), b)
    };

    let mut w = vec![0.0; d];
    let (obj0, b0) = eval(&w);
    let mut best = (obj0, w.clone(), b0);
    let mut avg = vec![0.0; d];
    let mut avg_count = 0usize;
    let tail_start = opts.iterations / 2;
    for t in 1..=opts.iterations {
        let b = solve_bias(&w);
        let mut grad: Vec<f64> = w.iter().map(|v| lambda * v).collect();
        for (xi, &yi) in x.iter().zip(&y) {
            if yi * (dot(&w, xi) + b) < 1.0 {
                for (g, v) in grad.iter_mut().zip(xi) {
                    *g -= yi * v / n as f64;
                }
            }
        }
        let eta = 1.0 / (lambda * t as f64);
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= eta * g;
        }
        let norm = dot(&w, &w).sqrt();
        if norm > radius {
            w.iter_mut().for_each(|v| *v *= radius / norm);
        }
        if t > tail_start {
            avg_count += 1;
            let k = avg_count as f64;
            avg.iter_mut().zip(&w).for_each(|(a, v)| *a += (v - *a) / k);
        }
        if t % 16 == 0 || t == opts.iterations {
            let (obj, b) = eval(&w);
            if obj < best.0 {
                best = (obj, w.clone(), b);
            }
        }
    }
    if avg_count > 0 {
        let (obj, b) = eval(&avg);
        if obj < best.0 {
            best = (obj, avg, b);
        }
    }
    let (objective, weights, bias) = best;
    Ok(SvmModel { weights, bias, c: opts.c, objective })
}
