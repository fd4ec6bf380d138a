use crate::data::{maxabs_scale, Subject};
use crate::error::{Error, Result};
use crate::vae::VaeParameters;

/// Subjects × (modalities · latent_dim) matrix of posterior means, laid out
/// modality-major within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub ids: Vec<String>,
    pub labels: Vec<u8>,
    pub n_modalities: usize,
    pub latent_dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn cols(&self) -> usize {
        self.n_modalities * self.latent_dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols()..(i + 1) * self.cols()]
    }

    /// Latent mean of subject `i`, modality `m`.
    pub fn block(&self, i: usize, m: usize) -> &[f32] {
        let l = self.latent_dim;
        &self.row(i)[m * l..(m + 1) * l]
    }

    pub fn rows_f64(&self, idx: &[usize]) -> Vec<Vec<f64>> {
        idx.iter().map(|&i| self.row(i).iter().map(|&v| v as f64).collect()).collect()
    }
}

/// Encodes every scaled volume with the frozen encoder and keeps μ only.
pub fn embed_dataset(subjects: &[Subject], params: &VaeParameters) -> Result<EmbeddingMatrix> {
    let n_modalities = subjects.first().map_or(0, |s| s.volumes.len());
    let latent_dim = params.arch().latent_dim;
    let extents = params.arch().input_extents;
    let mut data = Vec::with_capacity(subjects.len() * n_modalities * latent_dim);
    for s in subjects {
        if s.volumes.len() != n_modalities {
            return Err(Error::Shape(format!(
                "subject {} has {} modalities, expected {n_modalities}",
                s.id,
                s.volumes.len()
            )));
        }
        for (m, v) in s.volumes.iter().enumerate() {
            if v.extents() != extents {
                return Err(Error::Shape(format!(
                    "subject {} modality {m}: extents {:?} differ from the model's {:?}",
                    s.id,
                    v.extents(),
                    extents
                )));
            }
            data.extend(params.encode(&maxabs_scale(v).to_tensor())?.mu);
        }
    }
    Ok(EmbeddingMatrix {
        ids: subjects.iter().map(|s| s.id.clone()).collect(),
        labels: subjects.iter().map(|s| s.group.label()).collect(),
        n_modalities,
        latent_dim,
        data,
    })
}
