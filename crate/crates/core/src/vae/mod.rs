//! Shared single encoder-decoder variational autoencoder.
//!
//! One encoder `q(z|x)` and one decoder `p(x|z)` serve every modality. The
//! encoder emits the mean and log-variance of a diagonal Gaussian; training
//! draws `z = μ + exp(½ log σ²) ⊙ ε` and minimises
//! `½‖x − x̂‖² + β·KL(q(z|x) ‖ N(0, I))`, the negative single-sample ELBO
//! with a unit-variance Gaussian likelihood (β = 1 gives the plain bound).

mod arch;
mod checkpoint;

pub use arch::ArchitectureConfig;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use rand::Rng;

/// Posterior parameters for one volume.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f32>,
    pub logvar: Vec<f32>,
}

impl LatentCode {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// `recon + β·kl`
    pub total: f64,
    /// KL divergence to the standard normal prior, in nats.
    pub kl: f64,
    /// `½ Σ (x − x̂)²`
    pub recon: f64,
}

impl LossBreakdown {
    pub fn new(recon: f64, kl: f64, kl_weight: f64) -> Self {
        Self { total: recon + kl_weight * kl, kl, recon }
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> Self {
        let n = items.len().max(1) as f64;
        let mut acc = Self::default();
        for it in items {
            acc.total += it.total;
            acc.kl += it.kl;
            acc.recon += it.recon;
        }
        Self { total: acc.total / n, kl: acc.kl / n, recon: acc.recon / n }
    }
}

/// `z = μ + exp(½ log σ²) ⊙ ε` with caller-supplied standard-normal noise.
pub fn reparameterize(code: &LatentCode, noise: &[f32]) -> Result<Vec<f32>> {
    if noise.len() != code.len() {
        return Err(Error::Shape(format!(
            "noise has length {}, latent code has length {}",
            noise.len(),
            code.len()
        )));
    }
    Ok(code
        .mu
        .iter()
        .zip(&code.logvar)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// `½ Σ_d (μ_d² + σ_d² − 1 − log σ_d²)`; each term is non-negative.
pub fn kl_to_standard_normal(code: &LatentCode) -> f64 {
    code.mu
        .iter()
        .zip(&code.logvar)
        .map(|(&m, &lv)| {
            let (m, lv) = (m as f64, lv as f64);
            0.5 * (m * m + (lv.exp_m1() - lv))
        })
        .sum()
}

/// `½ Σ_voxels (x − x̂)²`, accumulated in `f64`.
pub fn reconstruction_loss(x: &Tensor, xhat: &Tensor) -> Result<f64> {
    // Leading or trailing singleton axes are ignored.
    let strip = |s: &[usize]| s.iter().copied().filter(|&e| e != 1).collect::<Vec<_>>();
    if strip(x.shape()) != strip(xhat.shape()) {
        return Err(Error::Shape(format!(
            "reconstruction_loss: shapes {:?} and {:?} differ",
            x.shape(),
            xhat.shape()
        )));
    }
    Ok(0.5
        * x.data()
            .iter()
            .zip(xhat.data())
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum::<f64>())
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    encoder: Vec<(usize, usize)>,
    mu: (usize, usize),
    logvar: (usize, usize),
    stem: (usize, usize),
    upsample: Vec<(usize, usize)>,
    refine: Vec<(usize, Option<usize>)>,
}

struct Slot {
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
    /// Biases and the decoder's output layer start at zero.
    zero: bool,
}

fn plan(arch: &ArchitectureConfig) -> Result<(Layout, Vec<Slot>)> {
    arch.validate()?;
    let mut slots: Vec<Slot> = Vec::new();
    let pair = |slots: &mut Vec<Slot>, name: &str, shape: Vec<usize>, fan_in: usize, out: usize| {
        slots.push(Slot { name: format!("{name}.weight"), shape, fan_in, zero: false });
        slots.push(Slot { name: format!("{name}.bias"), shape: vec![out], fan_in, zero: true });
        (slots.len() - 2, slots.len() - 1)
    };
    let kvol = arch.kernel.pow(3);
    let encoder = (0..arch.encoder_stages())
        .map(|s| {
            let spec = arch.encoder_spec(s);
            pair(&mut slots, &format!("enc.conv{s}"), spec.conv_weight_shape(), spec.in_channels * kvol, spec.out_channels)
        })
        .collect();
    let flat = arch.flat_size()?;
    let l = arch.latent_dim;
    let mu = pair(&mut slots, "enc.mu", vec![l, flat], flat, l);
    let logvar = pair(&mut slots, "enc.logvar", vec![l, flat], flat, l);
    let stem_out = arch.stem_size()?;
    let stem = pair(&mut slots, "dec.stem", vec![stem_out, l], l, stem_out);
    let upsample = (0..arch.encoder_stages())
        .map(|s| {
            let spec = arch.upsample_spec(s);
            pair(
                &mut slots,
                &format!("dec.up{s}"),
                spec.transpose_weight_shape(),
                // Each output voxel of a strided transposed conv sees only
                // about 1/stride³ of the kernel taps.
                (spec.in_channels * kvol / arch.stride.pow(3)).max(1),
                spec.out_channels,
            )
        })
        .collect();
    let refine = (0..arch.refine_layers())
        .map(|j| {
            let spec = arch.refine_spec(j);
            if spec.bias {
                let (w, b) = pair(
                    &mut slots,
                    &format!("dec.refine{j}"),
                    spec.conv_weight_shape(),
                    spec.in_channels * kvol,
                    spec.out_channels,
                );
                (w, Some(b))
            } else {
                slots.push(Slot {
                    name: format!("dec.refine{j}.weight"),
                    shape: spec.conv_weight_shape(),
                    fan_in: spec.in_channels * kvol,
                    zero: true,
                });
                (slots.len() - 1, None)
            }
        })
        .collect();
    Ok((Layout { encoder, mu, logvar, stem, upsample, refine }, slots))
}

/// Encoder (φ) and decoder (θ) weights plus the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeParameters {
    arch: ArchitectureConfig,
    layout: Layout,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl VaeParameters {
    /// Kaiming-uniform (fan-in) weights and zero biases. The output layer
    /// starts at zero so the untrained decoder emits an all-zero volume
    /// rather than saturated noise.
    pub fn init<R: Rng + ?Sized>(arch: &ArchitectureConfig, rng: &mut R) -> Result<Self> {
        let (layout, slots) = plan(arch)?;
        let mut names = Vec::with_capacity(slots.len());
        let mut tensors = Vec::with_capacity(slots.len());
        for slot in slots {
            let numel: usize = slot.shape.iter().product();
            let data = if slot.zero {
                vec![0.0; numel]
            } else {
                let bound = (6.0 / slot.fan_in as f64).sqrt() as f32;
                (0..numel).map(|_| rng.gen_range(-bound..=bound)).collect()
            };
            names.push(slot.name);
            tensors.push(Tensor::new(slot.shape, data)?);
        }
        Ok(Self { arch: arch.clone(), layout, names, tensors })
    }

    pub fn zeros(arch: &ArchitectureConfig) -> Result<Self> {
        let (layout, slots) = plan(arch)?;
        let names = slots.iter().map(|s| s.name.clone()).collect();
        let tensors = slots.iter().map(|s| Tensor::zeros(&s.shape)).collect();
        Ok(Self { arch: arch.clone(), layout, names, tensors })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the layout implied by `arch`.
    pub fn from_named(arch: &ArchitectureConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let (layout, slots) = plan(arch)?;
        if named.len() != slots.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                slots.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(slots.len());
        let mut tensors = Vec::with_capacity(slots.len());
        for (slot, (name, t)) in slots.iter().zip(named) {
            if slot.name != name || slot.shape != t.shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` {:?} does not match expected `{}` {:?}",
                    t.shape(),
                    slot.name,
                    slot.shape
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self { arch: arch.clone(), layout, names, tensors })
    }

    pub fn arch(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a tape leaf, in layout order.
    pub fn bind(&self, tape: &mut Tape, track: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone().with_requires_grad(track))).collect()
    }

    fn check_volume(&self, x: &Tensor) -> Result<Tensor> {
        let [d, h, w] = self.arch.input_extents;
        let ok = match x.shape() {
            [a, b, c] => [*a, *b, *c] == [d, h, w],
            [1, a, b, c] => [*a, *b, *c] == [d, h, w],
            _ => false,
        };
        if !ok {
            return Err(Error::Shape(format!(
                "volume shape {:?} does not match architecture extents {:?}",
                x.shape(),
                self.arch.input_extents
            )));
        }
        x.reshape(&[1, d, h, w])
    }

    /// Encoder forward pass on the tape; returns `(μ, log σ²)`.
    pub fn encode_on(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let mut h = x;
        for (s, &(w, b)) in self.layout.encoder.iter().enumerate() {
            let conv = tape.conv3d(h, vars[w], Some(vars[b]), self.arch.encoder_spec(s))?;
            h = tape.relu(conv);
        }
        let flat = tape.reshape(h, &[self.arch.flat_size()?])?;
        let mu = tape.affine(flat, vars[self.layout.mu.0], vars[self.layout.mu.1])?;
        let logvar = tape.affine(flat, vars[self.layout.logvar.0], vars[self.layout.logvar.1])?;
        Ok((mu, logvar))
    }

    /// Decoder forward pass on the tape; output shape `[1, D, H, W]`.
    pub fn decode_on(&self, tape: &mut Tape, vars: &[Var], z: Var) -> Result<Var> {
        let l = self.arch.latent_dim;
        if tape.value(z).numel() != l {
            return Err(Error::Shape(format!(
                "latent vector has length {}, decoder expects {l}",
                tape.value(z).numel()
            )));
        }
        let stages = self.arch.stage_extents()?;
        let bottleneck = *stages.last().unwrap();
        let stem = tape.affine(z, vars[self.layout.stem.0], vars[self.layout.stem.1])?;
        let stem = tape.relu(stem);
        let mut h = tape.reshape(
            stem,
            &[self.arch.decoder_channels[0], bottleneck[0], bottleneck[1], bottleneck[2]],
        )?;
        for (s, &(w, b)) in self.layout.upsample.iter().enumerate() {
            let target = stages[stages.len() - 2 - s];
            let up = tape.conv3d_transpose(h, vars[w], Some(vars[b]), self.arch.upsample_spec(s), target)?;
            h = tape.relu(up);
        }
        let last = self.layout.refine.len() - 1;
        for (j, &(w, b)) in self.layout.refine.iter().enumerate() {
            let conv = tape.conv3d(h, vars[w], b.map(|b| vars[b]), self.arch.refine_spec(j))?;
            h = if j == last { tape.tanh(conv) } else { tape.relu(conv) };
        }
        Ok(h)
    }

    /// Deterministic encoding of one volume (`[D,H,W]` or `[1,D,H,W]`).
    pub fn encode(&self, x: &Tensor) -> Result<LatentCode> {
        let x = self.check_volume(x)?;
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let xv = tape.leaf(x);
        let (mu, logvar) = self.encode_on(&mut tape, &vars, xv)?;
        Ok(LatentCode {
            mu: tape.value(mu).data().to_vec(),
            logvar: tape.value(logvar).data().to_vec(),
        })
    }

    /// Decodes a latent vector to a `[1, D, H, W]` volume in (−1, 1).
    pub fn decode(&self, z: &[f32]) -> Result<Tensor> {
        if z.len() != self.arch.latent_dim {
            return Err(Error::Shape(format!(
                "latent vector has length {}, decoder expects {}",
                z.len(),
                self.arch.latent_dim
            )));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let zv = tape.leaf(Tensor::vector(z.to_vec()));
        let out = self.decode_on(&mut tape, &vars, zv)?;
        Ok(tape.value(out).clone())
    }

    /// Single-sample negative ELBO (β = 1).
    pub fn elbo_loss(&self, x: &Tensor, noise: &[f32]) -> Result<LossBreakdown> {
        self.weighted_loss(x, noise, 1.0)
    }

    pub fn weighted_loss(&self, x: &Tensor, noise: &[f32], kl_weight: f64) -> Result<LossBreakdown> {
        let code = self.encode(x)?;
        let z = reparameterize(&code, noise)?;
        let xhat = self.decode(&z)?;
        let recon = reconstruction_loss(&self.check_volume(x)?, &xhat)?;
        Ok(LossBreakdown::new(recon, kl_to_standard_normal(&code), kl_weight))
    }

    /// Mean loss over a batch of independent volumes and its gradient with
    /// respect to every parameter (layout order).
    pub fn batch_gradients(
        &self,
        volumes: &[Tensor],
        noises: &[Vec<f32>],
        kl_weight: f64,
    ) -> Result<(LossBreakdown, Vec<Tensor>)> {
        if volumes.is_empty() || volumes.len() != noises.len() {
            return Err(Error::InvalidArgument(format!(
                "batch of {} volumes with {} noise vectors",
                volumes.len(),
                noises.len()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, true);
        let mut per_volume = Vec::with_capacity(volumes.len());
        let mut total: Option<Var> = None;
        for (x, noise) in volumes.iter().zip(noises) {
            let x = self.check_volume(x)?;
            if noise.len() != self.arch.latent_dim {
                return Err(Error::Shape(format!(
                    "noise has length {}, latent dim is {}",
                    noise.len(),
                    self.arch.latent_dim
                )));
            }
            let xv = tape.leaf(x);
            let (mu, logvar) = self.encode_on(&mut tape, &vars, xv)?;
            let eps = tape.leaf(Tensor::vector(noise.clone()));
            let half = tape.scale(logvar, 0.5);
            let std = tape.exp(half);
            let spread = tape.mul(std, eps)?;
            let z = tape.add(mu, spread)?;
            let xhat = self.decode_on(&mut tape, &vars, z)?;

            let diff = tape.sub(xv, xhat)?;
            let sq = tape.sum_squares(diff);
            let recon = tape.scale(sq, 0.5);
            let var = tape.exp(logvar);
            let gap = tape.sub(var, logvar)?;
            let gap = tape.add_scalar(gap, -1.0);
            let gap = tape.sum(gap);
            let mu_sq = tape.sum_squares(mu);
            let kl = tape.add(gap, mu_sq)?;
            let kl = tape.scale(kl, 0.5);
            let weighted = tape.scale(kl, kl_weight as f32);
            let loss = tape.add(recon, weighted)?;
            total = Some(match total {
                Some(t) => tape.add(t, loss)?,
                None => loss,
            });

            let code = LatentCode {
                mu: tape.value(mu).data().to_vec(),
                logvar: tape.value(logvar).data().to_vec(),
            };
            let recon = reconstruction_loss(tape.value(xv), tape.value(xhat))?;
            per_volume.push(LossBreakdown::new(recon, kl_to_standard_normal(&code), kl_weight));
        }
        let mean = tape.scale(total.expect("non-empty batch"), 1.0 / volumes.len() as f32);
        let mut grads = tape.backward(mean)?;
        let grads = vars
            .iter()
            .map(|&v| grads.take(v).expect("parameters are tracked leaves"))
            .collect();
        Ok((LossBreakdown::mean(&per_volume), grads))
    }
}
