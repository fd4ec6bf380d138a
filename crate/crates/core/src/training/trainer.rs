use super::{adam_step, AdamState, TrainingConfig};
use crate::data::{subject_batch, Subject, SubjectBatch};
use crate::error::{Error, Result};
use crate::vae::{ArchitectureConfig, LossBreakdown, VaeParameters};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt::Write as _;
use std::path::Path;

/// Row `0` evaluates the freshly initialised model; row `e ≥ 1` holds the
/// mean training loss over the optimiser steps of epoch `e` and the
/// validation loss after it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub validation: Option<LossBreakdown>,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    /// Parameters with the lowest validation loss (final ones without a
    /// validation set).
    pub params: VaeParameters,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
}

/// Deterministic evaluation with zero noise, averaged over subjects.
fn evaluate(params: &VaeParameters, batches: &[SubjectBatch], kl_weight: f64) -> Result<LossBreakdown> {
    let zero = vec![0.0f32; params.arch().latent_dim];
    let mut per_subject = Vec::with_capacity(batches.len());
    for b in batches {
        let losses = b
            .volumes
            .iter()
            .map(|x| params.weighted_loss(x, &zero, kl_weight))
            .collect::<Result<Vec<_>>>()?;
        per_subject.push(LossBreakdown::mean(&losses));
    }
    Ok(LossBreakdown::mean(&per_subject))
}

fn finite(l: &LossBreakdown) -> bool {
    l.total.is_finite() && l.kl.is_finite() && l.recon.is_finite()
}

/// Trains one VAE with one subject (all of its modalities) per Adam step.
///
/// Subjects are sorted by id before the seeded per-epoch shuffle, so the
/// result does not depend on the order they are passed in.
pub fn train_vae(
    train: &[&Subject],
    validation: &[&Subject],
    n_modalities: usize,
    arch: &ArchitectureConfig,
    cfg: &TrainingConfig,
) -> Result<TrainingOutcome> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    arch.validate()?;
    let mut train: Vec<&Subject> = train.to_vec();
    train.sort_by(|a, b| a.id.cmp(&b.id));
    let mut validation: Vec<&Subject> = validation.to_vec();
    validation.sort_by(|a, b| a.id.cmp(&b.id));

    let train_batches = train.iter().map(|s| subject_batch(s, n_modalities)).collect::<Result<Vec<_>>>()?;
    let val_batches = validation.iter().map(|s| subject_batch(s, n_modalities)).collect::<Result<Vec<_>>>()?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = VaeParameters::init(arch, &mut init_rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut state = AdamState::new(params.tensors());

    let initial_val = if val_batches.is_empty() { None } else { Some(evaluate(&params, &val_batches, cfg.kl_weight)?) };
    let mut history = vec![EpochRecord {
        epoch: 0,
        train: evaluate(&params, &train_batches, cfg.kl_weight)?,
        validation: initial_val,
    }];
    if !finite(&history[0].train) {
        return Err(Error::NonFiniteLoss { epoch: 0, subject: "initial evaluation".into() });
    }
    let mut best = (initial_val.map_or(f64::INFINITY, |l| l.total), 0usize, params.clone());

    let l = arch.latent_dim;
    let mut order: Vec<usize> = (0..train_batches.len()).collect();
    let mut steps = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(order.len());
        for &i in &order {
            let batch = &train_batches[i];
            let noises: Vec<Vec<f32>> = (0..batch.len())
                .map(|_| (0..l).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            let (loss, grads) = params.batch_gradients(&batch.volumes, &noises, cfg.kl_weight)?;
            if !finite(&loss) || grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::NonFiniteLoss { epoch, subject: train[i].id.clone() });
            }
            adam_step(params.tensors_mut(), &grads, &mut state, cfg)?;
            steps += 1;
            losses.push(loss);
        }
        let validation = if val_batches.is_empty() {
            None
        } else {
            let v = evaluate(&params, &val_batches, cfg.kl_weight)?;
            if !finite(&v) {
                return Err(Error::NonFiniteLoss { epoch, subject: "validation".into() });
            }
            if v.total < best.0 {
                best = (v.total, epoch, params.clone());
            }
            Some(v)
        };
        history.push(EpochRecord { epoch, train: LossBreakdown::mean(&losses), validation });
    }

    let (params, best_epoch) = if val_batches.is_empty() { (params, cfg.epochs) } else { (best.2, best.1) };
    Ok(TrainingOutcome { params, best_epoch, history, steps })
}

const HEADER: &str = "epoch\ttrain_total\ttrain_kl\ttrain_recon\tval_total\tval_kl\tval_recon";

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in history {
        let _ = write!(out, "{}\t{}\t{}\t{}", r.epoch, r.train.total, r.train.kl, r.train.recon);
        match r.validation {
            Some(v) => {
                let _ = writeln!(out, "\t{}\t{}\t{}", v.total, v.kl, v.recon);
            }
            None => out.push_str("\tNA\tNA\tNA\n"),
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::Format(format!("{}: unexpected history header", path.display())));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(Error::Format(format!("history row `{line}` needs 7 columns")));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Format(format!("bad number `{s}` in history")))
            };
            let validation = if f[4] == "NA" {
                None
            } else {
                Some(LossBreakdown { total: num(f[4])?, kl: num(f[5])?, recon: num(f[6])? })
            };
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| Error::Format(format!("bad epoch `{}`", f[0])))?,
                train: LossBreakdown { total: num(f[1])?, kl: num(f[2])?, recon: num(f[3])? },
                validation,
            })
        })
        .collect()
}
