use super::auc::roc_auc;
use super::embed::{embed_dataset, EmbeddingMatrix};
use super::mean_std;
use super::svm::{train_linear_svm, SvmModel, SvmOptions};
use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::training::FoldSplit;
use crate::vae::VaeParameters;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Share of absolute SVM weight mass falling in each modality block.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceReport {
    pub values: Vec<f64>,
}

impl ImportanceReport {
    /// Modality indices ordered from most to least important (ties by index).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        idx
    }

    pub fn top(&self, k: usize) -> Vec<usize> {
        self.ranking().into_iter().take(k).collect()
    }
}

pub fn modality_importance(model: &SvmModel, n_modalities: usize, latent_dim: usize) -> Result<ImportanceReport> {
    if n_modalities * latent_dim != model.weights.len() || n_modalities == 0 {
        return Err(Error::Shape(format!(
            "{} weights cannot split into {n_modalities} blocks of {latent_dim}",
            model.weights.len()
        )));
    }
    let mass: Vec<f64> = model
        .weights
        .chunks(latent_dim)
        .map(|c| c.iter().map(|w| w.abs()).sum())
        .collect();
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("all SVM weights are zero; importance undefined".into()));
    }
    Ok(ImportanceReport { values: mass.iter().map(|m| m / total).collect() })
}

#[derive(Clone, Debug)]
pub struct CvClassification {
    pub fold_auc: Vec<f64>,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub models: Vec<SvmModel>,
    pub importance: Vec<ImportanceReport>,
}

/// Fits the SVM on each fold's train+validation rows of that fold's
/// embedding and scores the test rows.
pub fn cv_classification_embedded(
    embeddings: &[EmbeddingMatrix],
    labels: &[u8],
    folds: &FoldSplit,
    svm: &SvmOptions,
) -> Result<CvClassification> {
    if embeddings.len() != folds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} embeddings for {} folds",
            embeddings.len(),
            folds.len()
        )));
    }
    let mut fold_auc = Vec::new();
    let mut models = Vec::new();
    let mut importance = Vec::new();
    for (k, (emb, fold)) in embeddings.iter().zip(&folds.folds).enumerate() {
        if emb.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "fold {k}: embedding has {} rows for {} labels",
                emb.rows(),
                labels.len()
            )));
        }
        let fit_idx: Vec<usize> = fold.train.iter().chain(&fold.validation).copied().collect();
        let fit_y: Vec<u8> = fit_idx.iter().map(|&i| labels[i]).collect();
        let model = train_linear_svm(&emb.rows_f64(&fit_idx), &fit_y, svm)?;
        let scores: Vec<f64> = emb.rows_f64(&fold.test).iter().map(|r| model.decision(r)).collect();
        let test_y: Vec<u8> = fold.test.iter().map(|&i| labels[i]).collect();
        fold_auc.push(roc_auc(&scores, &test_y).map_err(|e| Error::InvalidArgument(format!("fold {k}: {e}")))?);
        importance.push(modality_importance(&model, emb.n_modalities, emb.latent_dim)?);
        models.push(model);
    }
    let (mean_auc, std_auc) = mean_std(&fold_auc);
    Ok(CvClassification { fold_auc, mean_auc, std_auc, models, importance })
}

/// Embeds the whole cohort with each fold's encoder, then classifies.
pub fn cv_classification(
    cohort: &Cohort,
    params: &[VaeParameters],
    folds: &FoldSplit,
    svm: &SvmOptions,
) -> Result<CvClassification> {
    if params.len() != folds.len() {
        return Err(Error::InvalidArgument(format!("{} parameter sets for {} folds", params.len(), folds.len())));
    }
    let embeddings = params
        .iter()
        .map(|p| embed_dataset(&cohort.subjects, p))
        .collect::<Result<Vec<_>>>()?;
    cv_classification_embedded(&embeddings, &cohort.labels(), folds, svm)
}

/// Random relabelling that shuffles labels among the members of each test
/// fold, so every fold keeps its class counts.
pub fn permute_within_folds(labels: &[u8], folds: &FoldSplit, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = labels.to_vec();
    for fold in &folds.folds {
        let mut vals: Vec<u8> = fold.test.iter().map(|&i| labels[i]).collect();
        vals.shuffle(&mut rng);
        for (&i, v) in fold.test.iter().zip(vals) {
            out[i] = v;
        }
    }
    out
}
