use super::embed::EmbeddingMatrix;
use crate::data::{maxabs_scale, Cohort, Volume};
use crate::error::{Error, Result};
use crate::vae::VaeParameters;

/// Sum over modalities of upper-tail-thresholded HC − SZ difference volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceMap {
    pub volume: Volume,
    pub quantile: f64,
    pub modalities: Vec<usize>,
    /// Unthresholded per-modality differences, in `modalities` order.
    pub raw: Vec<Volume>,
}

impl DifferenceMap {
    pub fn support(&self) -> Vec<bool> {
        self.volume.values().iter().map(|&v| v != 0.0).collect()
    }
}

/// Keeps the values at or above the `q` quantile, taken as the sorted value
/// at 0-based position `floor(q·N)`, and zeroes the rest. Exactly
/// `ceil((1 − q)·N)` positions are kept; among equal values the lower index
/// wins.
pub fn threshold_upper_quantile(values: &[f32], q: f64) -> Result<Vec<f32>> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile must lie in [0, 1), got {q}")));
    }
    let n = values.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let below = ((q * n as f64) + 1e-9).floor() as usize;
    let keep = n - below.min(n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    for &i in &order[..keep] {
        out[i] = values[i];
    }
    Ok(out)
}

fn group_rows(labels: &[u8]) -> Result<(Vec<usize>, Vec<usize>)> {
    let hc: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    let sz: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 0).collect();
    if hc.is_empty() || sz.is_empty() {
        return Err(Error::InvalidArgument("group difference needs both HC and SZ subjects".into()));
    }
    Ok((hc, sz))
}

fn combine(raw: Vec<Volume>, modalities: &[usize], quantile: f64) -> Result<DifferenceMap> {
    let extents = raw[0].extents();
    let mut sum = vec![0.0f32; raw[0].len()];
    for v in &raw {
        for (s, t) in sum.iter_mut().zip(threshold_upper_quantile(v.values(), quantile)?) {
            *s += t;
        }
    }
    Ok(DifferenceMap { volume: Volume::new(extents, sum)?, quantile, modalities: modalities.to_vec(), raw })
}

fn check_modalities(modalities: &[usize], n: usize) -> Result<()> {
    if modalities.is_empty() {
        return Err(Error::InvalidArgument("no modalities selected".into()));
    }
    if let Some(m) = modalities.iter().find(|&&m| m >= n) {
        return Err(Error::InvalidArgument(format!("modality {m} is outside 0..{n}")));
    }
    Ok(())
}

/// Decodes the HC and SZ latent centroids of each listed modality and
/// thresholds `decode(HC) − decode(SZ)`.
pub fn group_difference_map(
    params: &VaeParameters,
    embedding: &EmbeddingMatrix,
    labels: &[u8],
    modalities: &[usize],
    quantile: f64,
) -> Result<DifferenceMap> {
    if labels.len() != embedding.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), embedding.rows())));
    }
    check_modalities(modalities, embedding.n_modalities)?;
    let (hc, sz) = group_rows(labels)?;
    let l = embedding.latent_dim;
    let center = |rows: &[usize], m: usize| -> Vec<f32> {
        let mut acc = vec![0.0f64; l];
        for &i in rows {
            for (a, &v) in acc.iter_mut().zip(embedding.block(i, m)) {
                *a += v as f64;
            }
        }
        acc.iter().map(|a| (a / rows.len() as f64) as f32).collect()
    };
    let raw = modalities
        .iter()
        .map(|&m| {
            let a = params.decode(&center(&hc, m))?;
            let b = params.decode(&center(&sz, m))?;
            let diff = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
            Volume::new(params.arch().input_extents, diff)
        })
        .collect::<Result<Vec<_>>>()?;
    combine(raw, modalities, quantile)
}

/// The same thresholding applied to group means of the scaled input volumes.
pub fn voxelwise_group_difference(
    cohort: &Cohort,
    labels: &[u8],
    modalities: &[usize],
    quantile: f64,
) -> Result<DifferenceMap> {
    if labels.len() != cohort.subjects.len() {
        return Err(Error::Shape(format!("{} labels for {} subjects", labels.len(), cohort.subjects.len())));
    }
    check_modalities(modalities, cohort.n_modalities())?;
    let (hc, sz) = group_rows(labels)?;
    let extents = cohort.extents();
    let voxels: usize = extents.iter().product();
    let mean = |rows: &[usize], m: usize| -> Vec<f64> {
        let mut acc = vec![0.0f64; voxels];
        for &i in rows {
            for (a, &v) in acc.iter_mut().zip(maxabs_scale(&cohort.subjects[i].volumes[m]).values()) {
                *a += v as f64;
            }
        }
        acc.iter_mut().for_each(|a| *a /= rows.len() as f64);
        acc
    };
    let raw = modalities
        .iter()
        .map(|&m| {
            let diff = mean(&hc, m).iter().zip(mean(&sz, m)).map(|(a, b)| (a - b) as f32).collect();
            Volume::new(extents, diff)
        })
        .collect::<Result<Vec<_>>>()?;
    combine(raw, modalities, quantile)
}

pub fn dice(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    if total == 0 {
        return 0.0;
    }
    2.0 * inter as f64 / total as f64
}

/// Cosine of the angle between two value arrays; 0 when either is all zero.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        ab += x as f64 * y as f64;
        aa += x as f64 * x as f64;
        bb += y as f64 * y as f64;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    ab / (aa.sqrt() * bb.sqrt())
}
