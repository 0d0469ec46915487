//! Logistic-regression duplicate classifier over 1-3-gram tf-idf
//! features; the classical reference point for the neural model.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PairExample, Report};
use crate::error::{Error, Result};
use crate::trainer::Metrics;

/// Sparse vector as sorted (column, value) pairs.
pub type SparseVec = Vec<(usize, f64)>;

/// Word n-grams (n = 1..3) to tf-idf columns. The feature space is
/// frozen at fit time; n-grams never seen in training are dropped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NgramFeaturizer {
    index: HashMap<String, usize>,
    idf: Vec<f64>,
}

fn ngrams(words: &[String]) -> impl Iterator<Item = String> + '_ {
    (1..=3usize).flat_map(move |n| words.windows(n).map(|w| w.join(" ")))
}

impl NgramFeaturizer {
    /// Builds the vocabulary and idf table from training reports only.
    /// idf is smoothed: ln((1+N)/(1+df)) + 1.
    pub fn fit<'a>(reports: impl IntoIterator<Item = &'a Report>) -> NgramFeaturizer {
        let mut index = HashMap::new();
        let mut df: Vec<usize> = Vec::new();
        let mut n_docs = 0usize;
        for report in reports {
            n_docs += 1;
            let mut seen = HashSet::new();
            for gram in ngrams(&report.words) {
                if seen.insert(gram.clone()) {
                    let next = index.len();
                    let col = *index.entry(gram).or_insert(next);
                    if col == df.len() {
                        df.push(0);
                    }
                    df[col] += 1;
                }
            }
        }
        let idf = df
            .iter()
            .map(|&d| ((1 + n_docs) as f64 / (1 + d) as f64).ln() + 1.0)
            .collect();
        NgramFeaturizer { index, idf }
    }

    pub fn num_features(&self) -> usize {
        self.index.len()
    }

    /// L2-normalized tf-idf vector of one report, sorted by column.
    /// Empty or fully-unseen reports give the zero vector.
    pub fn transform(&self, report: &Report) -> SparseVec {
        let mut tf: HashMap<usize, f64> = HashMap::new();
        for gram in ngrams(&report.words) {
            if let Some(&col) = self.index.get(&gram) {
                *tf.entry(col).or_default() += 1.0;
            }
        }
        let mut vec: SparseVec =
            tf.into_iter().map(|(col, count)| (col, count * self.idf[col])).collect();
        vec.sort_by_key(|&(col, _)| col);
        let norm = vec.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut vec {
                *v /= norm;
            }
        }
        vec
    }
}

/// Unordered pair features: |u - v| in columns [0, F), u * v
/// elementwise in [F, 2F). Symmetric in (P, Q) by construction; zero
/// entries are dropped.
pub fn featurize_pair(f: &NgramFeaturizer, p: &Report, q: &Report) -> SparseVec {
    let u = f.transform(p);
    let v = f.transform(q);
    let offset = f.num_features();
    let mut out = SparseVec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < u.len() || j < v.len() {
        let (col, a, b) = match (u.get(i), v.get(j)) {
            (Some(&(cu, a)), Some(&(cv, b))) if cu == cv => {
                i += 1;
                j += 1;
                (cu, a, b)
            }
            (Some(&(cu, a)), Some(&(cv, _))) if cu < cv => {
                i += 1;
                (cu, a, 0.0)
            }
            (Some(_), Some(&(cv, b))) => {
                j += 1;
                (cv, 0.0, b)
            }
            (Some(&(cu, a)), None) => {
                i += 1;
                (cu, a, 0.0)
            }
            (None, Some(&(cv, b))) => {
                j += 1;
                (cv, 0.0, b)
            }
            (None, None) => unreachable!(),
        };
        let diff = (a - b).abs();
        if diff != 0.0 {
            out.push((col, diff));
        }
        let prod = a * b;
        if prod != 0.0 {
            out.push((offset + col, prod));
        }
    }
    out.sort_by_key(|&(col, _)| col);
    out
}

/// Pair features plus labels for every example, in order.
pub fn features_for_pairs(
    f: &NgramFeaturizer,
    corpus: &Corpus,
    pairs: &[PairExample],
) -> (Vec<SparseVec>, Vec<bool>) {
    let feats = pairs
        .iter()
        .map(|p| featurize_pair(f, &corpus.reports[p.p], &corpus.reports[p.q]))
        .collect();
    let labels = pairs.iter().map(|p| p.duplicate).collect();
    (feats, labels)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrConfig {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Weight examples inversely to class frequency.
    pub class_weighted: bool,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig { l2: 1e-4, epochs: 300, lr: 1.0, class_weighted: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LrModel {
    pub fn score(&self, features: &SparseVec) -> f64 {
        let z: f64 =
            features.iter().map(|&(col, v)| self.weights[col] * v).sum::<f64>() + self.bias;
        sigmoid(z)
    }

    pub fn predict(&self, features: &SparseVec) -> bool {
        self.score(features) >= 0.5
    }
}

/// Full-batch gradient descent on L2-penalized logistic loss.
/// Deterministic: weights start at zero and no sampling is involved.
pub fn train_lr(
    features: &[SparseVec],
    labels: &[bool],
    num_features: usize,
    config: &LrConfig,
) -> Result<LrModel> {
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let n = labels.len();
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!(
            "logistic regression needs both classes; got {n_pos} positives / {n_neg} negatives"
        )));
    }
    let (w_pos, w_neg) = if config.class_weighted {
        (n as f64 / (2.0 * n_pos as f64), n as f64 / (2.0 * n_neg as f64))
    } else {
        (1.0, 1.0)
    };

    let mut model = LrModel { weights: vec![0.0; num_features], bias: 0.0 };
    for epoch in 0..config.epochs {
        let mut grad_w = vec![0.0; num_features];
        let mut grad_b = 0.0;
        let mut loss = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let p = model.score(x);
            let (target, weight) = if y { (1.0, w_pos) } else { (0.0, w_neg) };
            loss -= weight * if y { p.ln() } else { (1.0 - p).ln() };
            let err = weight * (p - target);
            for &(col, v) in x {
                grad_w[col] += err * v;
            }
            grad_b += err;
        }
        loss /= n as f64;
        for (g, w) in grad_w.iter_mut().zip(&model.weights) {
            *g = *g / n as f64 + config.l2 * w;
        }
        grad_b /= n as f64;
        loss += 0.5 * config.l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, batch: 0 });
        }
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= config.lr * g;
        }
        model.bias -= config.lr * grad_b;
    }
    Ok(model)
}

/// Positive-class metrics at the 0.5 threshold.
pub fn evaluate_lr(model: &LrModel, features: &[SparseVec], labels: &[bool]) -> Result<Metrics> {
    if !labels.iter().any(|&l| l) {
        return Err(Error::Data(
            "evaluation set has no gold duplicate pairs; positive-class metrics are undefined"
                .into(),
        ));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (x, &y) in features.iter().zip(labels) {
        match (model.predict(x), y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_))
}
