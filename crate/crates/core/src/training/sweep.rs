use super::{stratified_kfold, train_vae, Fold, FoldSplit, TrainingConfig, TrainingOutcome};
use crate::analysis::{
    cv_classification_embedded, embed_dataset, mean_std, CvClassification, EmbeddingMatrix, SvmOptions,
};
use crate::data::{Cohort, Subject};
use crate::error::{Error, Result};
use crate::vae::ArchitectureConfig;

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub training: TrainingOutcome,
    pub embedding: EmbeddingMatrix,
}

#[derive(Clone, Debug)]
pub struct CvOutcome {
    pub split: FoldSplit,
    pub folds: Vec<FoldOutcome>,
    pub classification: CvClassification,
}

/// Seed used for the VAE of fold `k`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(fold as u64)
}

/// Trains the VAE of fold `k` on its train rows, validating on its
/// validation rows, with the seed derived by [`fold_seed`].
pub fn train_fold(
    cohort: &Cohort,
    fold: &Fold,
    k: usize,
    arch: &ArchitectureConfig,
    cfg: &TrainingConfig,
) -> Result<TrainingOutcome> {
    let pick = |idx: &[usize]| -> Result<Vec<&Subject>> {
        idx.iter()
            .map(|&i| {
                cohort.subjects.get(i).ok_or_else(|| {
                    Error::InvalidArgument(format!("fold {k} refers to subject {i} of {}", cohort.subjects.len()))
                })
            })
            .collect()
    };
    let fold_cfg = TrainingConfig { seed: fold_seed(cfg.seed, k), ..cfg.clone() };
    train_vae(&pick(&fold.train)?, &pick(&fold.validation)?, cohort.n_modalities(), arch, &fold_cfg)
}

/// Trains one VAE per fold, embeds the whole cohort with each and
/// classifies the test rows with a linear SVM.
pub fn cross_validate(
    cohort: &Cohort,
    arch: &ArchitectureConfig,
    cfg: &TrainingConfig,
    svm: &SvmOptions,
) -> Result<CvOutcome> {
    cfg.validate()?;
    let labels = cohort.labels();
    let split = stratified_kfold(&labels, cfg.folds, cfg.validation_fraction, cfg.seed)?;
    let mut folds = Vec::with_capacity(split.len());
    for (k, fold) in split.folds.iter().enumerate() {
        let training = train_fold(cohort, fold, k, arch, cfg)?;
        let embedding = embed_dataset(&cohort.subjects, &training.params)?;
        folds.push(FoldOutcome { training, embedding });
    }
    let embeddings: Vec<EmbeddingMatrix> = folds.iter().map(|f| f.embedding.clone()).collect();
    let classification = cv_classification_embedded(&embeddings, &labels, &split, svm)?;
    Ok(CvOutcome { split, folds, classification })
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub seeds: Vec<u64>,
    pub mean_auc: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Full train + classify pipeline once per seed.
pub fn run_seed_sweep(
    cohort: &Cohort,
    seeds: &[u64],
    arch: &ArchitectureConfig,
    cfg: &TrainingConfig,
    svm: &SvmOptions,
) -> Result<SweepReport> {
    check_seed_count(seeds.len())?;
    let mut mean_auc = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let run = cross_validate(cohort, arch, &TrainingConfig { seed, ..cfg.clone() }, svm)?;
        mean_auc.push(run.classification.mean_auc);
    }
    summarize_sweep(seeds, mean_auc)
}

fn check_seed_count(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "a seed sweep needs at least two seeds for a standard deviation, got {n}"
        )));
    }
    Ok(())
}

/// Builds a report from per-seed mean AUCs computed elsewhere.
pub fn summarize_sweep(seeds: &[u64], mean_auc: Vec<f64>) -> Result<SweepReport> {
    check_seed_count(seeds.len())?;
    if mean_auc.len() != seeds.len() {
        return Err(Error::InvalidArgument(format!("{} AUC values for {} seeds", mean_auc.len(), seeds.len())));
    }
    let (mean, std) = mean_std(&mean_auc);
    Ok(SweepReport { seeds: seeds.to_vec(), mean_auc, mean, std })
}
