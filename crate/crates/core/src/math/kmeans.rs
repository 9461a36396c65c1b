//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

use super::rng;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Clone, Debug)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Objective after each assignment step.
    pub objective: Vec<f64>,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters `points` into `k` groups. Deterministic for a fixed seed.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    kmeans_with_limit(points, k, seed, DEFAULT_MAX_ITER)
}

pub fn kmeans_with_limit(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if k > points.len() {
        return Err(Error::invalid(format!(
            "k-means with k = {k} but only {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("k-means points have mixed dimensions"));
    }

    let mut rng = rng::seeded(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut objective = Vec::new();
    let mut converged = false;

    for _ in 0..max_iter {
        let mut changed = false;
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (best, d) = nearest_centroid(&centroids, p);
            total += d;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        objective.push(total);
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            // empty clusters keep their previous centroid
            if counts[c] > 0 {
                for (dst, s) in centroids[c].iter_mut().zip(&sums[c]) {
                    *dst = s / counts[c] as f64;
                }
            }
        }
    }

    Ok(KMeans {
        centroids,
        assignments,
        objective,
        converged,
    })
}

/// Index of the nearest centroid (lowest index on ties) and its squared distance.
pub fn nearest_centroid(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(centroid, p);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[[f64; 2]], per: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng::seeded(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut pts = Vec::new();
        for c in centers {
            for _ in 0..per {
                pts.push(vec![c[0] + n.sample(&mut rng), c[1] + n.sample(&mut rng)]);
            }
        }
        pts
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = blobs(&[[3.0, -1.0]], 50, 1);
        let km = kmeans(&pts, 1, 9).unwrap();
        let mx = pts.iter().map(|p| p[0]).sum::<f64>() / 50.0;
        let my = pts.iter().map(|p| p[1]).sum::<f64>() / 50.0;
        assert!((km.centroids[0][0] - mx).abs() < 1e-12);
        assert!((km.centroids[0][1] - my).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs_have_pure_assignment() {
        let pts = blobs(&[[0.0, 0.0], [100.0, 0.0]], 40, 2);
        let km = kmeans(&pts, 2, 3).unwrap();
        let first = km.assignments[0];
        assert!(km.assignments[..40].iter().all(|&a| a == first));
        assert!(km.assignments[40..].iter().all(|&a| a != first));
    }

    #[test]
    fn deterministic_per_seed() {
        let pts = blobs(&[[0.0, 0.0], [5.0, 5.0], [9.0, 0.0]], 30, 4);
        let a = kmeans(&pts, 3, 11).unwrap();
        let b = kmeans(&pts, 3, 11).unwrap();
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn objective_non_increasing_and_centroids_are_means() {
        let pts = blobs(&[[0.0, 0.0], [3.0, 1.0], [1.0, 4.0], [6.0, 6.0]], 25, 5);
        let km = kmeans(&pts, 4, 6).unwrap();
        assert!(km.converged);
        for w in km.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        for c in 0..4 {
            let members: Vec<_> = pts
                .iter()
                .zip(&km.assignments)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            let m = members.len() as f64;
            let mx = members.iter().map(|p| p[0]).sum::<f64>() / m;
            assert!((km.centroids[c][0] - mx).abs() < 1e-9);
        }
    }

    #[test]
    fn too_many_clusters_rejected() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(kmeans(&pts, 3, 0).is_err());
        assert!(kmeans(&pts, 0, 0).is_err());
    }
}
