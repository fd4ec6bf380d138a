//! Shared property checks used by both the unit-level integration tests and
//! the acceptance suite.

use mmvae_core::tensor::Tensor;
use mmvae_core::vae::{kl_to_standard_normal, ArchitectureConfig, LatentCode, VaeParameters};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug)]
pub struct KlSample {
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub std_error: f64,
}

impl KlSample {
    pub fn z_score(&self) -> f64 {
        (self.closed_form - self.monte_carlo).abs() / self.std_error
    }
}

/// Closed-form KL against `E_q[log q(z) − log p(z)]` estimated from
/// `samples` draws, for `pairs` random posteriors.
pub fn kl_monte_carlo(pairs: usize, samples: usize, seed: u64) -> Vec<KlSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|_| {
            let dim = rng.gen_range(1..=4);
            let code = LatentCode {
                mu: (0..dim).map(|_| rng.gen_range(-2.0f32..2.0)).collect(),
                logvar: (0..dim).map(|_| rng.gen_range(-2.0f32..1.5)).collect(),
            };
            let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
            for _ in 0..samples {
                let mut v = 0.0;
                for (&m, &lv) in code.mu.iter().zip(&code.logvar) {
                    let (m, lv) = (m as f64, lv as f64);
                    let e: f64 = rng.sample(StandardNormal);
                    let z = m + (0.5 * lv).exp() * e;
                    // log N(z; m, σ²) − log N(z; 0, 1)
                    v += -0.5 * lv - 0.5 * e * e + 0.5 * z * z;
                }
                sum += v;
                sum_sq += v * v;
            }
            let n = samples as f64;
            let mean = sum / n;
            let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
            KlSample { closed_form: kl_to_standard_normal(&code), monte_carlo: mean, std_error: (var / n).sqrt() }
        })
        .collect()
}

pub fn kl_at_origin() -> f64 {
    kl_to_standard_normal(&LatentCode { mu: vec![0.0; 8], logvar: vec![0.0; 8] })
}

#[derive(Debug)]
pub struct ShapeReport {
    pub bottleneck: [usize; 3],
    pub encoder_output: Vec<usize>,
    pub decoded: Vec<usize>,
}

/// Full-size extents with four stride-2 stages; channel widths are narrowed
/// so a real forward pass stays cheap (extents do not depend on width).
pub fn full_size_shapes() -> ShapeReport {
    let full = ArchitectureConfig::full_size(128);
    let bottleneck = full.bottleneck_extents().expect("valid layout");
    let arch = ArchitectureConfig {
        encoder_channels: vec![1, 2, 2, 2, 2],
        decoder_channels: vec![2, 2, 2, 2, 2, 2, 1],
        latent_dim: 4,
        ..full
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = VaeParameters::init(&arch, &mut rng).expect("valid layout");
    let [d, h, w] = arch.input_extents;
    let x = Tensor::zeros(&[d, h, w]);

    let mut tape = mmvae_core::tensor::Tape::new();
    let vars = params.bind(&mut tape, false);
    let xv = tape.leaf(x.reshape(&[1, d, h, w]).unwrap());
    let mut hvar = xv;
    for s in 0..arch.encoder_stages() {
        let wi = 2 * s;
        let conv = tape.conv3d(hvar, vars[wi], Some(vars[wi + 1]), arch.encoder_spec(s)).unwrap();
        hvar = tape.relu(conv);
    }
    let encoder_output = tape.value(hvar).shape().to_vec();
    let code = params.encode(&x).unwrap();
    let decoded = params.decode(&code.mu).unwrap().shape().to_vec();
    ShapeReport { bottleneck, encoder_output, decoded }
}
