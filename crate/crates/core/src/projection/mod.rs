//! Exact t-SNE of latent codes and a silhouette score of the modality
//! grouping.

mod affinity;
mod silhouette;
mod tsne;

pub use affinity::{perplexity_affinities, AffinityMatrix};
pub use silhouette::{cluster_score_null, modality_cluster_score, ClusterScore};
pub use tsne::{tsne_embed, TsneLayout, TsneOptions};

use crate::analysis::EmbeddingMatrix;
use crate::error::Result;

/// Which subject and modality a projected point came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointLabel {
    pub subject: String,
    pub modality: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionResult {
    pub layout: TsneLayout,
    pub points: Vec<PointLabel>,
    pub jittered: bool,
}

impl ProjectionResult {
    pub fn coordinates(&self) -> Vec<Vec<f64>> {
        self.layout.coords.iter().map(|c| c.to_vec()).collect()
    }

    pub fn modalities(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.modality).collect()
    }
}

/// One point per (subject, modality) latent mean, subject-major.
pub fn latent_points(emb: &EmbeddingMatrix) -> (Vec<Vec<f64>>, Vec<PointLabel>) {
    let mut points = Vec::with_capacity(emb.rows() * emb.n_modalities);
    let mut labels = Vec::with_capacity(points.capacity());
    for i in 0..emb.rows() {
        for m in 0..emb.n_modalities {
            points.push(emb.block(i, m).iter().map(|&v| v as f64).collect());
            labels.push(PointLabel { subject: emb.ids[i].clone(), modality: m });
        }
    }
    (points, labels)
}

/// t-SNE of every latent mean in `emb`.
pub fn project_embeddings(emb: &EmbeddingMatrix, opts: &TsneOptions) -> Result<ProjectionResult> {
    opts.validate()?;
    let (points, labels) = latent_points(emb);
    let p = perplexity_affinities(&points, opts.perplexity)?;
    let layout = tsne_embed(&p, opts)?;
    Ok(ProjectionResult { layout, points: labels, jittered: p.jittered() })
}
