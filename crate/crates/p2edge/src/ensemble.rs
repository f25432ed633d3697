//! Clustering-based ensemble pruning.
//!
//! For every pruning-set sample the pool produces an `m x n` prediction
//! matrix (model rows, class columns). Each sample contributes one feature
//! per model: the probability that model assigns to the class picked by the
//! sample's most confident model. Stacking those columns gives an
//! `m x |S|` clustering matrix whose rows describe each model's prediction
//! behaviour; k-means over the rows groups behaviourally similar models,
//! and representatives are selected accuracy-first (top members of the best
//! cluster) or diversity-first (best member of every cluster).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::Tensor;
use crate::vote::argmax;

pub const KMEANS_MAX_ITERS: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;

/// Pool outputs for one sample: row i is model i's probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub sample_id: usize,
    pub rows: Vec<Vec<f32>>,
}

/// Pool outputs for every sample, with the model order pinned.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolPredictions {
    pub model_ids: Vec<String>,
    pub n_classes: usize,
    pub matrices: Vec<PredictionMatrix>,
}

/// Runs every pool model on the pruning set. Rows follow the given model
/// order; one matrix per sample.
pub fn predict_pool(models: &[(String, Model)], features: &Tensor) -> Result<PoolPredictions> {
    if models.is_empty() {
        return Err(Error::Parameter("empty pool".into()));
    }
    let n_classes = models[0].1.n_classes();
    for (id, m) in models {
        if m.n_classes() != n_classes {
            return Err(Error::Shape(format!(
                "model {id} has {} classes, expected {n_classes}",
                m.n_classes()
            )));
        }
    }
    let (n_samples, _) = features.dims2()?;

    let outputs: Vec<Tensor> = models
        .par_iter()
        .map(|(_, m)| m.forward(features))
        .collect::<Result<Vec<_>>>()?;

    let matrices = (0..n_samples)
        .map(|s| PredictionMatrix {
            sample_id: s,
            rows: outputs.iter().map(|o| o.row(s).to_vec()).collect(),
        })
        .collect();

    Ok(PoolPredictions {
        model_ids: models.iter().map(|(id, _)| id.clone()).collect(),
        n_classes,
        matrices,
    })
}

/// `m x |S|` matrix; row i is model i's feature vector across samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMatrix {
    pub n_models: usize,
    pub n_samples: usize,
    /// Row-major, `n_models x n_samples`.
    pub data: Vec<f32>,
}

impl ClusterMatrix {
    pub fn row(&self, model: usize) -> &[f32] {
        &self.data[model * self.n_samples..(model + 1) * self.n_samples]
    }
}

/// Column construction: for sample j, find the most confident model
/// `b = argmax_i max_c A_j[i, c]` (ties: lowest model, then lowest class),
/// take that model's argmax class `c*`, and emit `x_j = A_j[:, c*]`.
pub fn build_cluster_matrix(matrices: &[PredictionMatrix]) -> Result<ClusterMatrix> {
    if matrices.is_empty() {
        return Err(Error::Parameter("no prediction matrices".into()));
    }
    let n_models = matrices[0].rows.len();
    let n_samples = matrices.len();
    let mut data = vec![0.0f32; n_models * n_samples];

    for (j, matrix) in matrices.iter().enumerate() {
        if matrix.rows.len() != n_models {
            return Err(Error::Shape(format!(
                "sample {j} has {} model rows, expected {n_models}",
                matrix.rows.len()
            )));
        }
        // Strict > keeps the lowest model index on confidence ties; argmax
        // breaks class ties toward the lowest class.
        let mut best_class = argmax(&matrix.rows[0]);
        let mut best_conf = matrix.rows[0][best_class];
        for row in matrix.rows.iter().skip(1) {
            let c = argmax(row);
            if row[c] > best_conf {
                best_class = c;
                best_conf = row[c];
            }
        }
        for i in 0..n_models {
            data[i * n_samples + j] = matrix.rows[i][best_class];
        }
    }

    Ok(ClusterMatrix {
        n_models,
        n_samples,
        data,
    })
}

/// K-means result plus the accuracy ranking used by selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub model_ids: Vec<String>,
    /// Pruning-set accuracy per model, aligned with `model_ids`.
    pub accuracies: Vec<f32>,
    /// Cluster id per model, aligned with `model_ids`.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Mean member accuracy per cluster.
    pub cluster_mean_accuracy: Vec<f64>,
    /// Member indices per cluster, ranked by accuracy descending
    /// (ties: lowest model index first).
    pub cluster_members_ranked: Vec<Vec<usize>>,
    /// Within-cluster sum of squared distances after each Lloyd iteration.
    pub sse_history: Vec<f64>,
}

impl ClusterAssignment {
    /// Cluster ids ordered by mean member accuracy descending
    /// (ties: lowest cluster id).
    pub fn clusters_by_accuracy(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.k).collect();
        order.sort_by(|&a, &b| {
            self.cluster_mean_accuracy[b]
                .partial_cmp(&self.cluster_mean_accuracy[a])
                .expect("accuracies are finite")
                .then(a.cmp(&b))
        });
        order
    }
}

/// Lloyd's algorithm with k-means++ seeding over the rows of `matrix`
/// (one point per model). Deterministic for a fixed seed; empty clusters
/// are repaired by promoting the point farthest from its centroid.
pub fn kmeans(
    matrix: &ClusterMatrix,
    k: usize,
    seed: u64,
    scores: &[(String, f32)],
) -> Result<ClusterAssignment> {
    kmeans_with(matrix, k, seed, scores, KMEANS_MAX_ITERS, KMEANS_TOL)
}

pub fn kmeans_with(
    matrix: &ClusterMatrix,
    k: usize,
    seed: u64,
    scores: &[(String, f32)],
    max_iters: usize,
    tol: f64,
) -> Result<ClusterAssignment> {
    let m = matrix.n_models;
    if k == 0 || k > m {
        return Err(Error::Parameter(format!("k={k} outside [1, {m}]")));
    }
    if scores.len() != m {
        return Err(Error::Parameter(format!(
            "{} scores for {m} models",
            scores.len()
        )));
    }
    let dim = matrix.n_samples;
    let points: Vec<Vec<f64>> = (0..m)
        .map(|i| matrix.row(i).iter().map(|v| *v as f64).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeding(&points, k, &mut rng);
    let mut assignments = vec![0usize; m];
    let mut sse_history = Vec::new();

    for _iter in 0..max_iters {
        // Assignment step (ties go to the lowest cluster id).
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = dist_sq(p, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = dist_sq(p, centroid);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            assignments[i] = best;
        }

        // Repair empty clusters with the globally farthest point.
        loop {
            let mut counts = vec![0usize; k];
            for &a in &assignments {
                counts[a] += 1;
            }
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let farthest = (0..m)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| {
                    let da = dist_sq(&points[a], &centroids[assignments[a]]);
                    let db = dist_sq(&points[b], &centroids[assignments[b]]);
                    da.partial_cmp(&db)
                        .expect("distances are finite")
                        .then(b.cmp(&a))
                })
                .expect("k <= m guarantees a donor point");
            centroids[empty] = points[farthest].clone();
            assignments[farthest] = empty;
        }

        sse_history.push(
            points
                .iter()
                .zip(&assignments)
                .map(|(p, &a)| dist_sq(p, &centroids[a]))
                .sum(),
        );

        // Update step.
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            for s in sums[c].iter_mut() {
                *s /= counts[c] as f64;
            }
            shift = shift.max(dist_sq(&sums[c], &centroids[c]).sqrt());
        }
        centroids = sums;
        if shift < tol {
            break;
        }
    }

    let model_ids: Vec<String> = scores.iter().map(|(id, _)| id.clone()).collect();
    let accuracies: Vec<f32> = scores.iter().map(|(_, a)| *a).collect();

    let mut cluster_members_ranked: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        cluster_members_ranked[a].push(i);
    }
    for members in &mut cluster_members_ranked {
        members.sort_by(|&a, &b| {
            accuracies[b]
                .partial_cmp(&accuracies[a])
                .expect("accuracies are finite")
                .then(a.cmp(&b))
        });
    }
    let cluster_mean_accuracy = cluster_members_ranked
        .iter()
        .map(|members| {
            members.iter().map(|&i| accuracies[i] as f64).sum::<f64>() / members.len().max(1) as f64
        })
        .collect();

    Ok(ClusterAssignment {
        k,
        model_ids,
        accuracies,
        assignments,
        centroids,
        cluster_mean_accuracy,
        cluster_members_ranked,
        sse_history,
    })
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// k-means++: first centroid uniform, the rest sampled with probability
/// proportional to squared distance from the nearest chosen centroid.
fn plus_plus_seeding(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let m = points.len();
    let mut centroids = Vec::with_capacity(k);
    let mut chosen = vec![false; m];
    let first = rng.gen_range(0..m);
    centroids.push(points[first].clone());
    chosen[first] = true;

    let mut min_d: Vec<f64> = points
        .iter()
        .map(|p| dist_sq(p, &centroids[0]))
        .collect();

    while centroids.len() < k {
        let total: f64 = min_d.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen_range(0.0..1.0) * total;
            let mut pick = m - 1;
            for (i, &d) in min_d.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            // All remaining points coincide with a centroid.
            chosen
                .iter()
                .position(|&c| !c)
                .expect("k <= m leaves an unchosen point")
        };
        chosen[next] = true;
        centroids.push(points[next].clone());
        for (d, p) in min_d.iter_mut().zip(points) {
            *d = d.min(dist_sq(p, centroids.last().expect("just pushed")));
        }
    }
    centroids
}

/// Top `ensemble_size` members of the best cluster, overflowing into the
/// next-ranked clusters if the best one is too small.
pub fn select_accuracy_first(
    assignment: &ClusterAssignment,
    ensemble_size: usize,
) -> Result<Vec<String>> {
    let m = assignment.model_ids.len();
    if ensemble_size == 0 || ensemble_size > m {
        return Err(Error::Parameter(format!(
            "ensemble size {ensemble_size} outside [1, {m}]"
        )));
    }
    let mut selected = Vec::with_capacity(ensemble_size);
    for cluster in assignment.clusters_by_accuracy() {
        for &member in &assignment.cluster_members_ranked[cluster] {
            selected.push(assignment.model_ids[member].clone());
            if selected.len() == ensemble_size {
                return Ok(selected);
            }
        }
    }
    Ok(selected)
}

/// The accuracy-best member of every cluster, in cluster-accuracy order.
pub fn select_diversity_first(assignment: &ClusterAssignment) -> Vec<String> {
    assignment
        .clusters_by_accuracy()
        .into_iter()
        .map(|cluster| {
            let best = assignment.cluster_members_ranked[cluster][0];
            assignment.model_ids[best].clone()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix_from_points(points: &[&[f32]]) -> ClusterMatrix {
        ClusterMatrix {
            n_models: points.len(),
            n_samples: points[0].len(),
            data: points.iter().flat_map(|p| p.iter().copied()).collect(),
        }
    }

    fn uniform_scores(m: usize) -> Vec<(String, f32)> {
        (0..m).map(|i| (format!("m{i:03}"), 0.5)).collect()
    }

    #[test]
    fn cluster_matrix_hand_trace() {
        // One sample, two models: model 0 is most confident (0.9 on class 0),
        // so the column is everyone's probability for class 0.
        let matrices = [PredictionMatrix {
            sample_id: 0,
            rows: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        }];
        let c = build_cluster_matrix(&matrices).unwrap();
        assert_eq!(c.row(0), &[0.9]);
        assert_eq!(c.row(1), &[0.2]);
    }

    #[test]
    fn cluster_matrix_confidence_ties_use_lowest_model_then_class() {
        // Both models peak at 0.8: model 0 wins, and within model 0 the
        // argmax tie (none here) would take the lowest class.
        let matrices = [PredictionMatrix {
            sample_id: 0,
            rows: vec![vec![0.2, 0.8], vec![0.8, 0.2]],
        }];
        let c = build_cluster_matrix(&matrices).unwrap();
        // Most confident: model 0 at class 1 -> column = P(class 1).
        assert_eq!(c.row(0), &[0.8]);
        assert_eq!(c.row(1), &[0.2]);
    }

    #[test]
    fn cluster_matrix_is_permutation_equivariant() {
        let a = PredictionMatrix {
            sample_id: 0,
            rows: vec![vec![0.7, 0.3], vec![0.4, 0.6], vec![0.1, 0.9]],
        };
        let swapped = PredictionMatrix {
            sample_id: 0,
            rows: vec![a.rows[2].clone(), a.rows[1].clone(), a.rows[0].clone()],
        };
        let c = build_cluster_matrix(std::slice::from_ref(&a)).unwrap();
        let cs = build_cluster_matrix(std::slice::from_ref(&swapped)).unwrap();
        assert_eq!(c.row(0), cs.row(2));
        assert_eq!(c.row(2), cs.row(0));
    }

    #[test]
    fn kmeans_k1_centroid_is_the_mean() {
        let m = matrix_from_points(&[&[0.0, 0.0], &[1.0, 0.0], &[0.5, 3.0]]);
        let a = kmeans(&m, 1, 0, &uniform_scores(3)).unwrap();
        assert_eq!(a.assignments, vec![0, 0, 0]);
        assert!((a.centroids[0][0] - 0.5).abs() < 1e-12);
        assert!((a.centroids[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_k_equals_m_gives_singletons() {
        let m = matrix_from_points(&[&[0.0, 0.0], &[5.0, 0.0], &[0.0, 5.0]]);
        let a = kmeans(&m, 3, 9, &uniform_scores(3)).unwrap();
        let mut clusters = a.assignments.clone();
        clusters.sort_unstable();
        clusters.dedup();
        assert_eq!(clusters.len(), 3);
    }

    #[test]
    fn kmeans_recovers_two_obvious_groups() {
        let m = matrix_from_points(&[&[0.0, 0.0], &[0.0, 1.0], &[10.0, 10.0], &[10.0, 11.0]]);
        for seed in 0..20 {
            let a = kmeans(&m, 2, seed, &uniform_scores(4)).unwrap();
            assert_eq!(a.assignments[0], a.assignments[1], "seed {seed}");
            assert_eq!(a.assignments[2], a.assignments[3], "seed {seed}");
            assert_ne!(a.assignments[0], a.assignments[2], "seed {seed}");
        }
    }

    #[test]
    fn kmeans_rejects_k_above_m() {
        let m = matrix_from_points(&[&[0.0], &[1.0]]);
        assert!(kmeans(&m, 3, 0, &uniform_scores(2)).is_err());
    }

    #[test]
    fn kmeans_sse_is_monotone_nonincreasing() {
        let m = matrix_from_points(&[
            &[0.0, 0.1],
            &[0.2, 0.0],
            &[1.0, 1.1],
            &[1.2, 0.9],
            &[5.0, 5.0],
            &[5.1, 4.9],
        ]);
        let a = kmeans(&m, 2, 4, &uniform_scores(6)).unwrap();
        for w in a.sse_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "sse went up: {:?}", a.sse_history);
        }
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let m = matrix_from_points(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let a = kmeans(&m, 3, 5, &uniform_scores(3)).unwrap();
        let mut clusters = a.assignments.clone();
        clusters.sort_unstable();
        assert_eq!(clusters, vec![0, 1, 2]);
    }

    fn two_cluster_assignment() -> ClusterAssignment {
        // Cluster A: accuracies [0.8, 0.6]; cluster B: [0.7, 0.5].
        let m = matrix_from_points(&[&[0.0, 0.0], &[0.0, 0.2], &[9.0, 9.0], &[9.0, 9.2]]);
        let scores = vec![
            ("m000".into(), 0.8),
            ("m001".into(), 0.6),
            ("m002".into(), 0.7),
            ("m003".into(), 0.5),
        ];
        kmeans(&m, 2, 1, &scores).unwrap()
    }

    #[test]
    fn accuracy_first_takes_top_of_best_cluster() {
        let a = two_cluster_assignment();
        assert_eq!(select_accuracy_first(&a, 2).unwrap(), vec!["m000", "m001"]);
        assert_eq!(select_accuracy_first(&a, 1).unwrap(), vec!["m000"]);
        // Overflow continues into the next cluster by rank.
        assert_eq!(
            select_accuracy_first(&a, 3).unwrap(),
            vec!["m000", "m001", "m002"]
        );
        // Full-pool selection returns every model.
        assert_eq!(select_accuracy_first(&a, 4).unwrap().len(), 4);
        assert!(select_accuracy_first(&a, 5).is_err());
    }

    #[test]
    fn diversity_first_takes_best_of_each_cluster() {
        let a = two_cluster_assignment();
        assert_eq!(select_diversity_first(&a), vec!["m000", "m002"]);
    }

    #[test]
    fn accuracy_ties_break_toward_lowest_model_id() {
        let m = matrix_from_points(&[&[0.0], &[0.1]]);
        let scores = vec![("m000".into(), 0.9), ("m001".into(), 0.9)];
        let a = kmeans(&m, 1, 0, &scores).unwrap();
        assert_eq!(select_accuracy_first(&a, 1).unwrap(), vec!["m000"]);
        assert_eq!(select_diversity_first(&a), vec!["m000"]);
    }
}
