use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::affinity::squared_distances;
use crate::error::{Error, Result};

/// Mean silhouette of points grouped by label.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterScore {
    pub score: f64,
    /// Labels left out because they have a single point.
    pub excluded: Vec<usize>,
}

fn silhouette(dist: &[f64], n: usize, labels: &[usize]) -> Result<ClusterScore> {
    let n_labels = labels.iter().max().map_or(0, |&m| m + 1);
    let mut counts = vec![0usize; n_labels];
    for &l in labels {
        counts[l] += 1;
    }
    let excluded: Vec<usize> = (0..n_labels).filter(|&l| counts[l] == 1).collect();
    let kept: Vec<usize> = (0..n_labels).filter(|&l| counts[l] >= 2).collect();
    if kept.len() < 2 {
        return Err(Error::InvalidArgument(
            "silhouette needs at least two labels with two or more points".into(),
        ));
    }
    let mut sums = vec![0.0f64; n_labels];
    let mut total = 0.0;
    let mut used = 0usize;
    for i in 0..n {
        let li = labels[i];
        if counts[li] < 2 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist[i * n + j];
            }
        }
        let a = sums[li] / (counts[li] - 1) as f64;
        let b = kept
            .iter()
            .filter(|&&l| l != li)
            .map(|&l| sums[l] / counts[l] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        total += if denom > 0.0 { (b - a) / denom } else { 0.0 };
        used += 1;
    }
    Ok(ClusterScore { score: total / used as f64, excluded })
}

fn euclidean(points: &[Vec<f64>]) -> Vec<f64> {
    squared_distances(points).into_iter().map(f64::sqrt).collect()
}

fn check(points: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if points.len() != labels.len() {
        return Err(Error::Shape(format!("{} points but {} labels", points.len(), labels.len())));
    }
    Ok(())
}

/// Mean silhouette coefficient (Euclidean) of `points` grouped by modality.
/// Modalities with a single point are dropped and listed in the result.
pub fn modality_cluster_score(points: &[Vec<f64>], labels: &[usize]) -> Result<ClusterScore> {
    check(points, labels)?;
    silhouette(&euclidean(points), points.len(), labels)
}

/// Silhouette scores under `n_perm` random relabelings of the same points.
pub fn cluster_score_null(points: &[Vec<f64>], labels: &[usize], n_perm: usize, seed: u64) -> Result<Vec<f64>> {
    check(points, labels)?;
    let dist = euclidean(points);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = labels.to_vec();
    (0..n_perm)
        .map(|_| {
            shuffled.shuffle(&mut rng);
            silhouette(&dist, points.len(), &shuffled).map(|s| s.score)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_silhouette() {
        // Clusters {0,1} and {4}, {5}: points on a line.
        let pts = vec![vec![0.0], vec![1.0], vec![4.0], vec![5.0]];
        let s = modality_cluster_score(&pts, &[0, 0, 1, 1]).unwrap();
        // a = 1 for all; b = 4.5, 3.5, 3.5, 4.5
        let want = ((3.5 / 4.5) + (2.5 / 3.5)) / 2.0;
        assert!((s.score - want).abs() < 1e-12);
        assert!(s.excluded.is_empty());
    }

    #[test]
    fn singleton_labels_are_excluded() {
        let pts = vec![vec![0.0], vec![1.0], vec![4.0], vec![5.0], vec![9.0]];
        let s = modality_cluster_score(&pts, &[0, 0, 1, 1, 2]).unwrap();
        assert_eq!(s.excluded, vec![2]);
        assert!(modality_cluster_score(&pts[..3], &[0, 0, 1]).is_err());
    }
}
