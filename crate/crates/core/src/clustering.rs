//! K-means over topic vectors, cluster-to-feature mapping, tf-idf top
//! words, and purity scoring.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{is_stopword, Report};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;

/// Minimum cluster/feature co-occurrence before an edge is drawn;
/// strictly more than this many reports are required.
pub const EDGE_SUPPORT_THRESHOLD: usize = 10;

/// Result of one k-means run. `assignments[i]` is the cluster of input
/// row `i`; the caller keeps whatever row-to-report mapping it used.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub assignments: Vec<usize>,
    /// (K, dim), row per cluster.
    pub centroids: Tensor,
    pub iterations: usize,
    /// Within-cluster sum of squared distances after each assignment
    /// step; non-increasing.
    pub objective_trace: Vec<f64>,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("at least one iteration")
    }

    /// Row indices grouped by cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

/// Bipartite edge between a learned cluster and a gold feature label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterFeatureEdge {
    pub cluster: usize,
    pub feature: String,
    pub support: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: first centroid uniform, the rest sampled with
/// probability proportional to squared distance from the chosen set.
fn plus_plus_init(points: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let n = points.rows();
    let dim = points.cols();
    let mut centroids = Tensor::zeros(&[k, dim]);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));

    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // all mass at the chosen set (duplicated points); fall back
            // to a uniform draw
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for i in 0..n {
            let d = sq_dist(points.row(i), centroids.row(c));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids.
fn lloyd(points: &Tensor, mut centroids: Tensor, max_iter: usize, tol: f64) -> ClusterAssignment {
    let n = points.rows();
    let k = centroids.rows();
    let dim = points.cols();
    let mut assignments = vec![0usize; n];
    let mut objective_trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;

        let mut objective = 0.0;
        for i in 0..n {
            let (c, d) = nearest(points.row(i), &centroids);
            assignments[i] = c;
            objective += d;
        }
        objective_trace.push(objective);

        let mut sums = Tensor::zeros(&[k, dim]);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i];
            counts[c] += 1;
            for (s, x) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }

        let mut next = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in next.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / counts[c] as f64;
                }
            }
        }

        // an empty cluster is re-seeded to the point farthest from its
        // current centroid; each donor point is used once
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| {
                    let da = sq_dist(points.row(a), centroids.row(assignments[a]));
                    let db = sq_dist(points.row(b), centroids.row(assignments[b]));
                    da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                })
                .expect("n >= k guarantees a donor point");
            taken[far] = true;
            next.row_mut(c).copy_from_slice(points.row(far));
        }

        let shift = (0..k)
            .map(|c| sq_dist(centroids.row(c), next.row(c)).sqrt())
            .fold(0.0f64, f64::max);
        centroids = next;
        if shift < tol {
            break;
        }
    }

    // final assignment against the converged centroids
    let mut objective = 0.0;
    for i in 0..n {
        let (c, d) = nearest(points.row(i), &centroids);
        assignments[i] = c;
        objective += d;
    }
    objective_trace.push(objective);

    ClusterAssignment { assignments, centroids, iterations, objective_trace }
}

pub fn kmeans(points: &Tensor, k: usize, seed: u64) -> Result<ClusterAssignment> {
    kmeans_with(points, k, seed, KMEANS_MAX_ITER, KMEANS_TOL)
}

pub fn kmeans_with(
    points: &Tensor,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterAssignment> {
    let n = points.rows();
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if n < k {
        return Err(Error::Data(format!("cannot split {n} points into {k} clusters")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids = plus_plus_init(points, k, &mut rng);
    Ok(lloyd(points, centroids, max_iter, tol))
}

/// Edges between clusters and gold feature labels with support
/// strictly above [`EDGE_SUPPORT_THRESHOLD`]. `labels` is row-aligned
/// with the clustered points; unlabeled rows are skipped.
pub fn cluster_feature_map(
    assignment: &ClusterAssignment,
    labels: &[Option<String>],
) -> Result<Vec<ClusterFeatureEdge>> {
    if labels.len() != assignment.assignments.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} clustered rows",
            labels.len(),
            assignment.assignments.len()
        )));
    }
    if labels.iter().all(|l| l.is_none()) {
        return Err(Error::Data("no gold feature labels; nothing to map".into()));
    }
    let mut counts: HashMap<(usize, &str), usize> = HashMap::new();
    for (&c, label) in assignment.assignments.iter().zip(labels) {
        if let Some(f) = label {
            *counts.entry((c, f.as_str())).or_default() += 1;
        }
    }
    let mut edges: Vec<ClusterFeatureEdge> = counts
        .into_iter()
        .filter(|&(_, n)| n > EDGE_SUPPORT_THRESHOLD)
        .map(|((cluster, feature), support)| ClusterFeatureEdge {
            cluster,
            feature: feature.to_string(),
            support,
        })
        .collect();
    edges.sort_by(|a, b| (a.cluster, &a.feature).cmp(&(b.cluster, &b.feature)));
    Ok(edges)
}

/// Top words per cluster by tf-idf, each cluster's reports concatenated
/// into one document. Stopwords never appear; ties break
/// lexicographically. idf is smoothed: ln((1+K)/(1+df)) + 1.
pub fn top_words_tfidf(clusters: &[Vec<&Report>], n: usize) -> Vec<Vec<String>> {
    let k = clusters.len();
    let mut tf: Vec<HashMap<&str, usize>> = Vec::with_capacity(k);
    for cluster in clusters {
        let mut counts = HashMap::new();
        for report in cluster {
            for w in &report.words {
                if !is_stopword(w) {
                    *counts.entry(w.as_str()).or_insert(0) += 1;
                }
            }
        }
        tf.push(counts);
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for counts in &tf {
        for &w in counts.keys() {
            *df.entry(w).or_default() += 1;
        }
    }
    tf.iter()
        .map(|counts| {
            let mut scored: Vec<(&str, f64)> = counts
                .iter()
                .map(|(&w, &c)| {
                    let idf = ((1 + k) as f64 / (1 + df[w]) as f64).ln() + 1.0;
                    (w, c as f64 * idf)
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(b.0)));
            scored.into_iter().take(n).map(|(w, _)| w.to_string()).collect()
        })
        .collect()
}

/// Fraction of reports whose cluster's majority feature matches their
/// own: (1/N) sum over clusters of the largest feature count inside.
pub fn purity(assignment: &ClusterAssignment, gold: &[Option<String>]) -> Result<f64> {
    if gold.len() != assignment.assignments.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} clustered rows",
            gold.len(),
            assignment.assignments.len()
        )));
    }
    let n = assignment.assignments.len();
    if n == 0 {
        return Err(Error::Data("cannot score an empty assignment".into()));
    }
    let mut counts: HashMap<(usize, &str), usize> = HashMap::new();
    for (&c, label) in assignment.assignments.iter().zip(gold) {
        match label {
            Some(f) => *counts.entry((c, f.as_str())).or_default() += 1,
            None => {
                return Err(Error::Data(
                    "purity needs a gold feature label for every clustered report".into(),
                ))
            }
        }
    }
    let mut best: HashMap<usize, usize> = HashMap::new();
    for (&(c, _), &count) in &counts {
        let entry = best.entry(c).or_default();
        *entry = (*entry).max(count);
    }
    Ok(best.values().sum::<usize>() as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> Tensor {
        let dim = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_vec(&[rows.len(), dim], data).unwrap()
    }

    fn blob(center: &[f64], count: usize, spread: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                center
                    .iter()
                    .map(|&c| c + (rng.random::<f64>() - 0.5) * 2.0 * spread)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_cluster_centroid_is_the_mean() {
        let points = matrix(&[&[1.0, 0.0], &[3.0, 2.0], &[5.0, 4.0]]);
        let a = kmeans(&points, 1, 0).unwrap();
        assert_eq!(a.assignments, vec![0, 0, 0]);
        assert_eq!(a.centroids.row(0), &[3.0, 2.0]);
    }

    #[test]
    fn two_separated_blobs_recovered_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rows = blob(&[0.0, 0.0, 0.0], 20, 0.3, &mut rng);
        rows.extend(blob(&[8.0, 8.0, 8.0], 20, 0.3, &mut rng));
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let points = matrix(&refs);
        let a = kmeans(&points, 2, 11).unwrap();
        let first = a.assignments[0];
        assert!(a.assignments[..20].iter().all(|&c| c == first));
        assert!(a.assignments[20..].iter().all(|&c| c == 1 - first));
    }

    #[test]
    fn more_clusters_than_points_rejected() {
        let points = matrix(&[&[0.0], &[1.0]]);
        assert!(matches!(kmeans(&points, 3, 0), Err(Error::Data(_))));
        assert!(matches!(kmeans(&points, 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows = blob(&[0.0; 4], 40, 3.0, &mut rng);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let points = matrix(&refs);
        let a = kmeans(&points, 5, 9).unwrap();
        let b = kmeans(&points, 5, 9).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centroids.data(), b.centroids.data());
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = blob(&[0.0; 6], 60, 5.0, &mut rng);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let points = matrix(&refs);
        let a = kmeans(&points, 6, 1).unwrap();
        for pair in a.objective_trace.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9,
                "objective rose: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn twenty_clusters_all_non_empty_on_spread_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rows = Vec::new();
        for c in 0..20 {
            rows.extend(blob(&[(c * 3) as f64, (c % 5) as f64], 20, 0.4, &mut rng));
        }
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let points = matrix(&refs);
        let a = kmeans(&points, 20, 7).unwrap();
        let members = a.members();
        assert_eq!(members.len(), 20);
        assert!(members.iter().all(|m| !m.is_empty()));
    }

    #[test]
    fn empty_cluster_reseeded_to_farthest_point() {
        // a centroid planted far from every point empties on the first
        // assignment; re-seeding must give it a real member
        let points = matrix(&[&[0.0], &[0.2], &[8.0], &[8.2]]);
        let centroids = matrix(&[&[0.1], &[8.1], &[500.0]]);
        let a = lloyd(&points, centroids, 50, 1e-9);
        let members = a.members();
        assert!(members.iter().all(|m| !m.is_empty()), "{members:?}");
    }

    #[test]
    fn purity_closed_forms() {
        let label = |s: &str| Some(s.to_string());
        let perfect = ClusterAssignment {
            assignments: vec![0, 0, 1, 1],
            centroids: Tensor::zeros(&[2, 1]),
            iterations: 1,
            objective_trace: vec![0.0],
        };
        let gold = vec![label("a"), label("a"), label("b"), label("b")];
        assert_eq!(purity(&perfect, &gold).unwrap(), 1.0);

        let merged = ClusterAssignment {
            assignments: vec![0, 0, 0, 0],
            centroids: Tensor::zeros(&[1, 1]),
            iterations: 1,
            objective_trace: vec![0.0],
        };
        assert_eq!(purity(&merged, &gold).unwrap(), 0.5);
    }

    #[test]
    fn purity_matches_brute_force_on_random_toy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 30;
        let assignments: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let features = ["x", "y", "z"];
        let gold: Vec<Option<String>> = (0..n)
            .map(|_| Some(features[rng.random_range(0..3)].to_string()))
            .collect();
        let a = ClusterAssignment {
            assignments: assignments.clone(),
            centroids: Tensor::zeros(&[4, 1]),
            iterations: 1,
            objective_trace: vec![0.0],
        };
        let mut total = 0usize;
        for c in 0..4 {
            let best = features
                .iter()
                .map(|f| {
                    (0..n)
                        .filter(|&i| assignments[i] == c && gold[i].as_deref() == Some(*f))
                        .count()
                })
                .max()
                .unwrap();
            total += best;
        }
        let expect = total as f64 / n as f64;
        assert!((purity(&a, &gold).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn purity_requires_labels_everywhere() {
        let a = ClusterAssignment {
            assignments: vec![0, 1],
            centroids: Tensor::zeros(&[2, 1]),
            iterations: 1,
            objective_trace: vec![0.0],
        };
        let gold = vec![Some("a".to_string()), None];
        assert!(matches!(purity(&a, &gold), Err(Error::Data(_))));
    }

    fn assignment_of(assignments: Vec<usize>, k: usize) -> ClusterAssignment {
        ClusterAssignment {
            assignments,
            centroids: Tensor::zeros(&[k, 1]),
            iterations: 1,
            objective_trace: vec![0.0],
        }
    }

    #[test]
    fn feature_edge_threshold_is_strict() {
        let eleven = assignment_of(vec![0; 11], 1);
        let labels: Vec<Option<String>> = vec![Some("camera".to_string()); 11];
        let edges = cluster_feature_map(&eleven, &labels).unwrap();
        assert_eq!(
            edges,
            vec![ClusterFeatureEdge { cluster: 0, feature: "camera".into(), support: 11 }]
        );

        let ten = assignment_of(vec![0; 10], 1);
        let labels: Vec<Option<String>> = vec![Some("camera".to_string()); 10];
        assert!(cluster_feature_map(&ten, &labels).unwrap().is_empty());
    }

    #[test]
    fn feature_map_requires_some_labels() {
        let a = assignment_of(vec![0, 0], 1);
        let labels: Vec<Option<String>> = vec![None, None];
        assert!(matches!(cluster_feature_map(&a, &labels), Err(Error::Data(_))));
    }

    #[test]
    fn clean_clusters_give_disjoint_edges() {
        let mut assignments = Vec::new();
        let mut labels = Vec::new();
        for (c, f) in ["a", "b", "c", "d", "e"].iter().enumerate() {
            for _ in 0..12 {
                assignments.push(c);
                labels.push(Some(f.to_string()));
            }
        }
        let a = assignment_of(assignments, 5);
        let edges = cluster_feature_map(&a, &labels).unwrap();
        assert_eq!(edges.len(), 5);
        for (c, edge) in edges.iter().enumerate() {
            assert_eq!(edge.cluster, c);
            assert_eq!(edge.support, 12);
        }
        let mut features: Vec<&str> = edges.iter().map(|e| e.feature.as_str()).collect();
        features.dedup();
        assert_eq!(features.len(), 5);
    }

    fn report_of(words: &[&str]) -> Report {
        Report {
            id: "r".into(),
            title_text: words.join(" "),
            words: words.iter().map(|w| w.to_string()).collect(),
            tokens: vec![],
            feature_label: None,
        }
    }

    #[test]
    fn single_cluster_ranking_is_term_frequency() {
        let r = report_of(&["crash", "crash", "crash", "camera", "camera", "opening"]);
        let tops = top_words_tfidf(&[vec![&r]], 3);
        assert_eq!(tops, vec![vec!["crash", "camera", "opening"]]);
    }

    #[test]
    fn cluster_exclusive_word_outranks_shared_word_at_equal_tf() {
        let a = report_of(&["alpha", "alpha", "alpha", "shared", "shared", "shared"]);
        let b = report_of(&["beta", "beta", "beta", "shared", "shared", "shared"]);
        let tops = top_words_tfidf(&[vec![&a], vec![&b]], 2);
        assert_eq!(tops[0], vec!["alpha", "shared"]);
        assert_eq!(tops[1], vec!["beta", "shared"]);
    }

    #[test]
    fn stopwords_never_surface() {
        let r = report_of(&["the", "the", "the", "when", "crash"]);
        let tops = top_words_tfidf(&[vec![&r]], 5);
        assert_eq!(tops, vec![vec!["crash"]]);
    }

    #[test]
    fn tfidf_ties_break_alphabetically() {
        let r = report_of(&["zebra", "apple", "zebra", "apple"]);
        let tops = top_words_tfidf(&[vec![&r]], 2);
        assert_eq!(tops, vec![vec!["apple", "zebra"]]);
    }
}
