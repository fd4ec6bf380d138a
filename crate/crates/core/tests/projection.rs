use mmvae_core::projection::{
    cluster_score_null, modality_cluster_score, perplexity_affinities, tsne_embed, TsneOptions,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gaussian_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, center: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    // Box-Muller, kept local so the oracle does not share the library sampler.
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen();
                    center + (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect()
        })
        .collect()
}

#[test]
fn row_perplexities_match_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = gaussian_points(&mut rng, 80, 5, 0.0);
    for &perp in &[5.0, 15.0, 30.0] {
        let p = perplexity_affinities(&x, perp).unwrap();
        for (i, &beta) in p.precisions().iter().enumerate() {
            let w: Vec<f64> = (0..x.len())
                .map(|j| {
                    if j == i {
                        return 0.0;
                    }
                    let d2: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum();
                    (-beta * d2).exp()
                })
                .collect();
            let z: f64 = w.iter().sum();
            let h2: f64 = w.iter().filter(|&&v| v > 0.0).map(|&v| -(v / z) * (v / z).log2()).sum();
            assert!((2f64.powf(h2) - perp).abs() < 1e-3, "row {i}: {}", 2f64.powf(h2));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn affinities_are_a_symmetric_distribution(seed in 0u64..1000, n in 6usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian_points(&mut rng, n, 3, 0.0);
        let p = perplexity_affinities(&x, (n as f64 / 3.0).max(1.5)).unwrap();
        let total: f64 = p.values().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for i in 0..n {
            prop_assert_eq!(p.get(i, i), 0.0);
            for j in 0..n {
                prop_assert!(p.get(i, j) >= 0.0);
                prop_assert_eq!(p.get(i, j), p.get(j, i));
            }
        }
    }

    #[test]
    fn affinities_ignore_rigid_motion(seed in 0u64..1000, angle in 0.0f64..6.28, shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian_points(&mut rng, 20, 2, 0.0);
        let (s, c) = angle.sin_cos();
        let moved: Vec<Vec<f64>> = x
            .iter()
            .map(|r| vec![c * r[0] - s * r[1] + shift, s * r[0] + c * r[1] - shift])
            .collect();
        let a = perplexity_affinities(&x, 6.0).unwrap();
        let b = perplexity_affinities(&moved, 6.0).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            prop_assert!((u - v).abs() < 1e-6);
        }
    }
}

fn two_blobs() -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut x = gaussian_points(&mut rng, 40, 16, 0.0);
    x.extend(gaussian_points(&mut rng, 40, 16, 4.0));
    let labels = (0..80).map(|i| i / 40).collect();
    (x, labels)
}

#[test]
fn separated_blobs_stay_separated() {
    let (x, labels) = two_blobs();
    let p = perplexity_affinities(&x, 15.0).unwrap();
    let opts = TsneOptions { perplexity: 15.0, iterations: 500, ..TsneOptions::default() };
    let r = tsne_embed(&p, &opts).unwrap();
    assert!(r.objective < r.initial_objective);
    assert!(r.trace.iter().all(|&(_, kl)| kl >= 0.0));
    let y = &r.coords;
    let mut agree = 0;
    for i in 0..y.len() {
        let mut d: Vec<(f64, usize)> = (0..y.len())
            .filter(|&j| j != i)
            .map(|j| ((y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2), j))
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        agree += d[..2].iter().filter(|&&(_, j)| labels[j] == labels[i]).count();
    }
    let rate = agree as f64 / (2 * y.len()) as f64;
    assert!(rate >= 0.9, "2-NN agreement {rate}");
    assert_eq!(tsne_embed(&p, &opts).unwrap(), r);
}

#[test]
fn silhouette_of_separated_and_shuffled_labels() {
    let (x, labels) = two_blobs();
    let s = modality_cluster_score(&x, &labels).unwrap().score;
    assert!(s > 0.5, "{s}");
    let null = cluster_score_null(&x, &labels, 50, 1).unwrap();
    let mean = null.iter().sum::<f64>() / null.len() as f64;
    assert!(mean.abs() < 0.1, "{mean}");
    assert!(null.iter().all(|&v| v < s));
}

#[test]
fn silhouette_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = gaussian_points(&mut rng, 25, 3, 0.0);
    let labels: Vec<usize> = (0..25).map(|i| i % 4).collect();
    let dist = |i: usize, j: usize| -> f64 {
        x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let mut total = 0.0;
    for i in 0..25 {
        let mean_to = |l: usize| {
            let members: Vec<usize> = (0..25).filter(|&j| j != i && labels[j] == l).collect();
            members.iter().map(|&j| dist(i, j)).sum::<f64>() / members.len() as f64
        };
        let a = mean_to(labels[i]);
        let b = (0..4).filter(|&l| l != labels[i]).map(mean_to).fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    let got = modality_cluster_score(&x, &labels).unwrap().score;
    assert!((got - total / 25.0).abs() < 1e-12);
}
