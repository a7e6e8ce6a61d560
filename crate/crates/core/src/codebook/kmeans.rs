//! Lloyd's k-means with k-means++ seeding.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Codebook, Family};
use crate::error::{Error, Result};

/// Objective after each assignment step, starting with the seeded centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansReport {
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub reseeded: usize,
}

pub fn train_kmeans<S: AsRef<[f32]> + Sync>(
    samples: &[S],
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<Codebook> {
    train_kmeans_with_report(samples, k, iters, seed).map(|(b, _)| b)
}

fn dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

fn assign(samples: &[&[f32]], centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    samples
        .par_iter()
        .map(|s| {
            let mut best = (0, f64::INFINITY);
            for (i, c) in centroids.iter().enumerate() {
                let d = dist(s, c);
                if d < best.1 {
                    best = (i, d);
                }
            }
            best
        })
        .collect()
}

fn seed_plus_plus(samples: &[&[f32]], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let to_f64 = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let first = rng.random_range(0..samples.len());
    let mut centroids = vec![to_f64(samples[first])];
    let mut nearest: Vec<f64> = samples.par_iter().map(|s| dist(s, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::Training(
                "ran out of distinct samples while seeding".into(),
            ));
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in nearest.iter().enumerate() {
            if d > 0.0 {
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        let c = to_f64(samples[pick.expect("total > 0 implies a positive weight")]);
        nearest
            .par_iter_mut()
            .zip(samples.par_iter())
            .for_each(|(n, s)| {
                let d = dist(s, &c);
                if d < *n {
                    *n = d;
                }
            });
        centroids.push(c);
    }
    Ok(centroids)
}

/// Trains `k` centroids. Empty clusters are re-seeded from the samples farthest
/// from their current centroid. Deterministic for a fixed seed.
pub fn train_kmeans_with_report<S: AsRef<[f32]> + Sync>(
    samples: &[S],
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<(Codebook, KMeansReport)> {
    let samples: Vec<&[f32]> = samples.iter().map(|s| s.as_ref()).collect();
    let dim = match samples.first() {
        Some(s) => s.len(),
        None => return Err(Error::Training("no training samples".into())),
    };
    if dim == 0 {
        return Err(Error::Training("zero-dimensional samples".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: s.len(),
        });
    }
    if samples.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::Training("non-finite sample".into()));
    }
    if k == 0 || iters == 0 {
        return Err(Error::Training("k and iters must be positive".into()));
    }
    // +0.0 folds -0.0 into 0.0 so equal vectors hash equally.
    let distinct: HashSet<Vec<u32>> = samples
        .iter()
        .map(|s| s.iter().map(|&v| (v + 0.0).to_bits()).collect())
        .collect();
    if k > distinct.len() {
        return Err(Error::Training(format!(
            "k = {k} exceeds {} distinct samples",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(&samples, k, &mut rng)?;
    let mut labels = assign(&samples, &centroids);
    let mut report = KMeansReport {
        objective: vec![labels.iter().map(|l| l.1).sum()],
        iterations: 0,
        reseeded: 0,
    };

    for _ in 0..iters {
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (s, &(c, _)) in samples.iter().zip(&labels) {
            counts[c] += 1;
            for (acc, &v) in sums[c].iter_mut().zip(s.iter()) {
                *acc += v as f64;
            }
        }
        let mut far: Vec<usize> = Vec::new();
        if counts.contains(&0) {
            far = (0..samples.len()).collect();
            far.sort_by(|&a, &b| labels[b].1.total_cmp(&labels[a].1).then(a.cmp(&b)));
        }
        let mut far = far.into_iter();
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                for (dst, s) in centroids[c].iter_mut().zip(&sums[c]) {
                    *dst = s / n;
                }
            } else if let Some(i) = far.next() {
                centroids[c] = samples[i].iter().map(|&v| v as f64).collect();
                report.reseeded += 1;
            }
        }

        let next = assign(&samples, &centroids);
        let changed = next.iter().zip(&labels).any(|(a, b)| a.0 != b.0);
        labels = next;
        report.objective.push(labels.iter().map(|l| l.1).sum());
        report.iterations += 1;
        if !changed {
            break;
        }
    }

    let flat: Vec<f32> = centroids.iter().flatten().map(|&v| v as f32).collect();
    let book = Codebook::from_flat(Family::for_dim(dim), dim, flat)?;
    Ok((book, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::squared_distance;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_blobs() {
        let mut samples = vec![vec![0.0f32, 0.0]; 10];
        samples.extend(vec![vec![10.0f32, 10.0]; 10]);
        let (book, report) = train_kmeans_with_report(&samples, 2, 10, 5).unwrap();
        let mut cents: Vec<Vec<f32>> = book.centroids().map(|c| c.to_vec()).collect();
        cents.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(cents, vec![vec![0.0, 0.0], vec![10.0, 10.0]]);
        assert_eq!(*report.objective.last().unwrap(), 0.0);
    }

    #[test]
    fn saturation_hits_every_sample() {
        let distinct: Vec<Vec<f32>> = (0..12)
            .map(|i| vec![(i % 4) as f32, (i / 4) as f32 * 3.0])
            .collect();
        let mut samples = distinct.clone();
        samples.extend(distinct.iter().take(5).cloned());
        let (book, report) = train_kmeans_with_report(&samples, 12, 5, 9).unwrap();
        assert_eq!(*report.objective.last().unwrap(), 0.0);
        for s in &distinct {
            assert!(book.centroids().any(|c| c == s.as_slice()));
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<Vec<f32>> = (0..300)
            .map(|_| (0..6).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let a = train_kmeans(&samples, 9, 15, 77).unwrap();
        let b = train_kmeans(&samples, 9, 15, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        let samples = vec![vec![1.0f32, 2.0]; 5];
        assert!(matches!(
            train_kmeans(&samples, 2, 3, 0),
            Err(Error::Training(_))
        ));
        let ragged = vec![vec![1.0f32, 2.0], vec![1.0]];
        assert!(matches!(
            train_kmeans(&ragged, 1, 3, 0),
            Err(Error::DimensionMismatch { .. })
        ));
        let empty: Vec<Vec<f32>> = Vec::new();
        assert!(train_kmeans(&empty, 1, 3, 0).is_err());
    }

    #[test]
    fn objective_never_increases() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<Vec<f32>> = (0..500)
                .map(|i| {
                    let c = (i % 7) as f32;
                    (0..4)
                        .map(|_| {
                            c + {
                                let z: f32 = StandardNormal.sample(&mut rng);
                                z
                            } * 0.8
                        })
                        .collect()
                })
                .collect();
            let (book, report) = train_kmeans_with_report(&samples, 16, 40, seed).unwrap();
            for w in report.objective.windows(2) {
                assert!(
                    w[1] <= w[0] * (1.0 + 1e-12),
                    "objective rose: {} -> {}",
                    w[0],
                    w[1]
                );
            }
            // The final trace value is the objective of the trained book, up to f32 storage.
            let recomputed: f64 = samples
                .iter()
                .map(|s| {
                    book.centroids()
                        .map(|c| squared_distance(s, c))
                        .fold(f64::INFINITY, f64::min)
                })
                .sum();
            let last = *report.objective.last().unwrap();
            assert!((recomputed - last).abs() <= 1e-4 * last.max(1.0));
        }
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // Heavy duplication of one point starves clusters on the first update.
        let mut samples = vec![vec![0.0f32]; 50];
        samples.extend((1..=6).map(|i| vec![i as f32 * 100.0]));
        let (book, _) = train_kmeans_with_report(&samples, 7, 20, 3).unwrap();
        assert_eq!(book.len(), 7);
    }
}
