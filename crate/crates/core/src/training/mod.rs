//! Adam, stratified cross-validation splits and the VAE training loop.

mod adam;
mod folds;
mod sweep;
mod trainer;

pub use adam::{adam_step, AdamState};
pub use folds::{stratified_kfold, Fold, FoldSplit};
pub use sweep::{cross_validate, fold_seed, run_seed_sweep, summarize_sweep, train_fold, CvOutcome, FoldOutcome, SweepReport};
pub use trainer::{read_history, train_vae, write_history, EpochRecord, TrainingOutcome};

use crate::error::{Error, Result};
use crate::kv::KvDocument;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub seed: u64,
    pub kl_weight: f64,
    pub folds: usize,
    pub validation_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 30,
            seed: 0,
            kl_weight: 1.0,
            folds: 10,
            validation_fraction: 0.10,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if !(self.kl_weight >= 0.0) || !self.kl_weight.is_finite() {
            return bad(format!("kl_weight must be non-negative, got {}", self.kl_weight));
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation_fraction must lie in (0, 1), got {}", self.validation_fraction));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        doc.push("learning_rate", self.learning_rate);
        doc.push("adam_beta1", self.adam_beta1);
        doc.push("adam_beta2", self.adam_beta2);
        doc.push("adam_eps", self.adam_eps);
        doc.push("epochs", self.epochs);
        doc.push("seed", self.seed);
        doc.push("kl_weight", self.kl_weight);
        doc.push("folds", self.folds);
        doc.push("validation_fraction", self.validation_fraction);
        doc
    }
}
