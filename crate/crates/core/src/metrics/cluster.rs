use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const ZSCORE_EPS: f64 = 1e-8;
const MAX_LLOYD_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// Within-sequence z-normalization `(x − μ) / (σ + ε)` with the population
/// standard deviation.
pub fn zscore_columns(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    let sigma = (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n).sqrt();
    xs.iter().map(|x| (x - mu) / (sigma + ZSCORE_EPS)).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means with seeded k-means++ seeding and Lloyd iterations until the
/// assignment stops changing or 100 iterations. An empty cluster keeps its
/// previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    if k == 0 || points.len() < k {
        return Err(Error::Config(format!(
            "k-means needs at least k={k} points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Config("k-means points have mixed dimensions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
    }

    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERS {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(Clustering {
        labels,
        centroids,
        iterations,
    })
}

/// Z-normalizes each agent's rating sequence, then clusters with k-means.
pub fn cluster_trajectories(ratings: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    if ratings.len() < k {
        return Err(Error::Config(format!(
            "cannot form {k} clusters from {} agents",
            ratings.len()
        )));
    }
    let normalized: Vec<Vec<f64>> = ratings.iter().map(|r| zscore_columns(r)).collect();
    kmeans(&normalized, k, seed)
}

fn choose2(n: usize) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&n| choose2(n)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|c| choose2(table.iter().map(|r| r[c]).sum())).sum();
    let total = choose2(a.len());
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn zscore_examples() {
        let z = zscore_columns(&[1.0, 3.0, 5.0]);
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in z.iter().zip(expected) {
            assert!((a - b).abs() < 1e-4);
        }
        assert_eq!(zscore_columns(&[5.0, 5.0, 5.0]), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let r = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!((r - (-0.5)).abs() < 1e-12, "{r}");
    }

    // Integer ratings, as in the survey. A flat sequence with continuous noise
    // would z-normalize to a random direction, so the noise is rounded away
    // except for occasional one-point deviations.
    fn planted_shapes(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let shapes = [[1.0, 3.0, 5.0], [1.0, 5.0, 1.0], [3.0, 3.0, 3.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.2).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (s, shape) in shapes.iter().enumerate() {
            for _ in 0..30 {
                pts.push(
                    shape
                        .iter()
                        .map(|v: &f64| (v + noise.sample(&mut rng)).round().clamp(1.0, 5.0))
                        .collect(),
                );
                truth.push(s);
            }
        }
        (pts, truth)
    }

    #[test]
    fn recovers_planted_shapes() {
        let (pts, truth) = planted_shapes(11);
        let c = cluster_trajectories(&pts, 3, 0).unwrap();
        assert!(adjusted_rand_index(&truth, &c.labels) >= 0.9);
    }

    #[test]
    fn fewer_agents_than_clusters() {
        assert!(matches!(cluster_trajectories(&[vec![1.0, 2.0, 3.0]], 3, 0), Err(Error::Config(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn affine_rescaling_preserves_partition(scale in 0.5f64..4.0, shift in -3.0f64..3.0, seed in 0u64..50) {
            let (pts, _) = planted_shapes(seed);
            let scaled: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|v| scale * v + shift).collect()).collect();
            let a = cluster_trajectories(&pts, 3, 4).unwrap();
            let b = cluster_trajectories(&scaled, 3, 4).unwrap();
            prop_assert!((adjusted_rand_index(&a.labels, &b.labels) - 1.0).abs() < 1e-12);
        }
    }
}
