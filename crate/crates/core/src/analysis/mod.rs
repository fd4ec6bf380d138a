//! Latent embeddings, linear SVM classification, modality importance and
//! decoded group-difference maps.

mod auc;
mod classify;
mod diffmap;
mod embed;
mod svm;

pub use auc::{roc_auc, roc_auc_pairwise};
pub use classify::{
    cv_classification, cv_classification_embedded, modality_importance, permute_within_folds,
    CvClassification, ImportanceReport,
};
pub use diffmap::{
    cosine_similarity, dice, group_difference_map, threshold_upper_quantile, voxelwise_group_difference,
    DifferenceMap,
};
pub use embed::{embed_dataset, EmbeddingMatrix};
pub use svm::{svm_objective, train_linear_svm, SvmModel, SvmOptions};

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
