//! Adam optimization loop, early stopping on validation F1, and
//! multi-seed trial averaging.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::HyperConfig;
use crate::corpus::{class_weights, split_pairs, Corpus, PairExample};
use crate::error::{Error, Result};
use crate::model::{pair_forward, predict_pair, ModelParams};
use crate::tape::{GradientStore, ParamRef, ParamSet, Tape};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates, one pair of tensors per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    /// Completed steps; bias correction uses `t + 1` on the next call.
    pub t: usize,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.refs().map(|r| Tensor::zeros_like(params.get(r))).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update over every parameter.
///
/// Parameters listed in `frozen` keep their values and moments. A zero
/// gradient on a fresh state leaves the parameter unchanged; once
/// moments are non-zero the momentum term keeps moving it.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &GradientStore,
    state: &mut AdamState,
    lr: f64,
    frozen: &[ParamRef],
) -> Result<()> {
    let refs: Vec<ParamRef> = params.refs().collect();
    if refs.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam state holds {} parameters, set has {}",
            state.m.len(),
            refs.len()
        )));
    }
    for (i, r) in refs.iter().enumerate() {
        if grads.get(*r).shape() != params.get(*r).shape() {
            return Err(Error::Shape(format!(
                "gradient shape {:?} does not match parameter {} {:?}",
                grads.get(*r).shape(),
                params.name(*r),
                params.get(*r).shape()
            )));
        }
        if state.m[i].shape() != params.get(*r).shape() {
            return Err(Error::Shape(format!(
                "adam state shape {:?} does not match parameter {} {:?}",
                state.m[i].shape(),
                params.name(*r),
                params.get(*r).shape()
            )));
        }
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for (i, r) in refs.iter().enumerate() {
        if frozen.contains(r) {
            continue;
        }
        let g = grads.get(*r).data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params.get_mut(*r).data_mut();
        for j in 0..p.len() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Positive-class precision, recall and F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    /// Metrics from confusion counts; undefined ratios collapse to 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Metrics {
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics { precision, recall, f1 }
    }

    pub fn mean(all: &[Metrics]) -> Metrics {
        let n = all.len().max(1) as f64;
        Metrics {
            precision: all.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: all.iter().map(|m| m.recall).sum::<f64>() / n,
            f1: all.iter().map(|m| m.f1).sum::<f64>() / n,
        }
    }
}

/// Thresholds r-hat at 0.5 and scores the positive class.
///
/// Errors when `pairs` holds no gold positives; precision and recall
/// are undefined there.
pub fn evaluate(model: &ModelParams, corpus: &Corpus, pairs: &[PairExample]) -> Result<Metrics> {
    if !pairs.iter().any(|p| p.duplicate) {
        return Err(Error::Data(
            "evaluation set has no gold duplicate pairs; positive-class metrics are undefined"
                .into(),
        ));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for pair in pairs {
        let rhat = predict_pair(
            model,
            &corpus.reports[pair.p].tokens,
            &corpus.reports[pair.q].tokens,
        )?;
        let predicted = rhat >= 0.5;
        match (predicted, pair.duplicate) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_))
}

/// How a training run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TrainStatus {
    /// Ran the full epoch budget.
    Completed,
    /// Validation F1 stalled for `patience` epochs.
    EarlyStopped { at_epoch: usize },
    /// Loss went non-finite; the returned model is the best finite
    /// checkpoint observed before the blow-up.
    Diverged { epoch: usize, batch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
}

/// Record of a single seeded training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs: Vec<EpochStats>,
    pub batches_per_epoch: usize,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub status: TrainStatus,
    /// Test-set metrics; filled by the multi-seed driver.
    pub test: Option<Metrics>,
}

/// Aggregate over seeds; `model` is the run with the best validation F1.
#[derive(Debug, Clone)]
pub struct MultiSeedOutcome {
    pub per_seed: Vec<TrainReport>,
    pub mean_test: Metrics,
    pub model: ModelParams,
    pub best_seed: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for one pair's dropout noise. Keyed by the pair's index
/// in the split, not its shuffle position, so thread fan-out and
/// shuffling cannot change the masks a pair sees.
fn dropout_seed(seed: u64, epoch: usize, pair_idx: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ epoch as u64) ^ pair_idx as u64)
}

fn worker_count() -> usize {
    std::env::var("DUPDIST_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(1)
}

struct BatchResult {
    loss_sum: f64,
    grads: GradientStore,
}

/// Forward + backward over `idxs`, summing losses and gradients.
/// `epoch` is `None` for loss-only evaluation passes (no dropout, no
/// backward).
fn run_chunk(
    model: &ModelParams,
    corpus: &Corpus,
    pairs: &[PairExample],
    idxs: &[usize],
    weights: (f64, f64),
    seed: u64,
    epoch: Option<usize>,
) -> Result<BatchResult> {
    let (w_pos, w_neg) = weights;
    let mut grads = GradientStore::new(&model.params);
    let mut loss_sum = 0.0;
    for &i in idxs {
        let pair = &pairs[i];
        let mut tape = Tape::new(&model.params);
        let training = epoch.is_some();
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed(seed, epoch.unwrap_or(0), i));
        let out = pair_forward(
            &mut tape,
            model,
            &corpus.reports[pair.p].tokens,
            &corpus.reports[pair.q].tokens,
            pair.duplicate,
            pair.no_content_overlap,
            w_pos,
            w_neg,
            training,
            &mut rng,
        )?;
        let loss = tape.value(out.loss).item();
        loss_sum += loss;
        if training && loss.is_finite() {
            tape.backward(out.loss, &mut grads);
        }
    }
    Ok(BatchResult { loss_sum, grads })
}

/// Batch loss and summed gradients, fanned out over `DUPDIST_THREADS`
/// workers. Chunks merge in index order so the reduction is a fixed
/// tree for a given thread count.
fn batch_pass(
    model: &ModelParams,
    corpus: &Corpus,
    pairs: &[PairExample],
    idxs: &[usize],
    weights: (f64, f64),
    seed: u64,
    epoch: Option<usize>,
) -> Result<BatchResult> {
    let workers = worker_count().min(idxs.len().max(1));
    if workers <= 1 {
        return run_chunk(model, corpus, pairs, idxs, weights, seed, epoch);
    }
    let chunk_len = idxs.len().div_ceil(workers);
    let results: Vec<Result<BatchResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = idxs
            .chunks(chunk_len)
            .map(|chunk| {
                scope.spawn(move || run_chunk(model, corpus, pairs, chunk, weights, seed, epoch))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut merged: Option<BatchResult> = None;
    for r in results {
        let r = r?;
        match &mut merged {
            None => merged = Some(r),
            Some(m) => {
                m.loss_sum += r.loss_sum;
                m.grads.merge(&r.grads);
            }
        }
    }
    Ok(merged.expect("at least one chunk"))
}

/// Mean loss over `pairs` with dropout off.
fn mean_loss(
    model: &ModelParams,
    corpus: &Corpus,
    pairs: &[PairExample],
    weights: (f64, f64),
    seed: u64,
) -> Result<f64> {
    let idxs: Vec<usize> = (0..pairs.len()).collect();
    let res = batch_pass(model, corpus, pairs, &idxs, weights, seed, None)?;
    Ok(res.loss_sum / pairs.len() as f64)
}

/// Trains `model` in place from its current parameters.
///
/// Pairs are shuffled each epoch, consumed in `ceil(N / batch)`
/// mini-batches, and the batch gradient is the mean over its pairs.
/// Similarity-loss class weights come from the train split. Returns
/// the parameters from the best validation-F1 epoch.
pub fn train_model(
    mut model: ModelParams,
    corpus: &Corpus,
    train_pairs: &[PairExample],
    val_pairs: &[PairExample],
    seed: u64,
) -> Result<(ModelParams, TrainReport)> {
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::Data(format!(
            "train and validation splits must be non-empty; got {} / {}",
            train_pairs.len(),
            val_pairs.len()
        )));
    }
    let weights = class_weights(train_pairs)?;
    let config = model.config.clone();
    config.validate()?;

    let frozen: Vec<ParamRef> = if model.embedding.trainable {
        vec![]
    } else {
        vec![model.embedding.param]
    };

    let mut adam = AdamState::new(&model.params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    let batches_per_epoch = train_pairs.len().div_ceil(config.batch_size);

    let mut best_params = model.params.clone();
    let mut best_val_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale_epochs = 0;
    let mut epochs = Vec::new();
    let mut status = TrainStatus::Completed;

    'epochs: for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss_sum = 0.0;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let res = batch_pass(&model, corpus, train_pairs, batch, weights, seed, Some(epoch))?;
            let batch_loss = res.loss_sum / batch.len() as f64;
            if !batch_loss.is_finite() {
                status = TrainStatus::Diverged { epoch, batch: batch_no };
                log::error!(
                    "loss went non-finite at epoch {epoch}, batch {batch_no}; \
                     keeping best checkpoint from epoch {best_epoch}"
                );
                break 'epochs;
            }
            epoch_loss_sum += res.loss_sum;
            let mut grads = res.grads;
            grads.scale(1.0 / batch.len() as f64);
            if let Some(clip) = config.grad_clip {
                let norm = grads.global_norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            adam_step(&mut model.params, &grads, &mut adam, config.learning_rate, &frozen)?;
        }

        let train_loss = epoch_loss_sum / train_pairs.len() as f64;
        let val_loss = mean_loss(&model, corpus, val_pairs, weights, seed)?;
        let val_f1 = evaluate(&model, corpus, val_pairs)?.f1;
        epochs.push(EpochStats { epoch, train_loss, val_loss, val_f1 });

        if val_f1 > best_val_f1 {
            best_val_f1 = val_f1;
            best_epoch = epoch;
            best_params = model.params.clone();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.patience {
                status = TrainStatus::EarlyStopped { at_epoch: epoch };
                break;
            }
        }
    }

    if best_val_f1 == f64::NEG_INFINITY {
        // diverged inside the first epoch; score the initial parameters
        // so the report is complete
        model.params = best_params.clone();
        best_val_f1 = evaluate(&model, corpus, val_pairs)?.f1;
    }
    model.params = best_params;
    let report = TrainReport {
        seed,
        epochs,
        batches_per_epoch,
        best_epoch,
        best_val_f1,
        status,
        test: None,
    };
    Ok((model, report))
}

/// Initializes a fresh model from `config` and trains it.
pub fn train(
    config: &HyperConfig,
    corpus: &Corpus,
    train_pairs: &[PairExample],
    val_pairs: &[PairExample],
    seed: u64,
) -> Result<(ModelParams, TrainReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ModelParams::init(config, corpus.vocab.size(), &mut rng)?;
    train_model(model, corpus, train_pairs, val_pairs, seed)
}

/// One independent trial per seed in `config.seeds`, resampling the
/// 80/10/10 split with each seed, then mean test metrics over trials.
/// The returned model is the trial with the best validation F1 (first
/// seed wins ties).
pub fn train_multi_seed(
    config: &HyperConfig,
    corpus: &Corpus,
    pairs: &[PairExample],
) -> Result<MultiSeedOutcome> {
    train_multi_seed_with(config, corpus, pairs, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(config, corpus.vocab.size(), &mut rng)
    })
}

/// [`train_multi_seed`] with a caller-supplied per-seed model
/// initializer (pretrained or frozen embeddings, warm starts).
pub fn train_multi_seed_with(
    config: &HyperConfig,
    corpus: &Corpus,
    pairs: &[PairExample],
    mut init: impl FnMut(u64) -> Result<ModelParams>,
) -> Result<MultiSeedOutcome> {
    config.validate()?;
    let mut per_seed = Vec::new();
    let mut best: Option<(f64, u64, ModelParams)> = None;
    for &seed in &config.seeds {
        let (tr, va, te) = split_pairs(pairs, (0.8, 0.1, 0.1), seed)?;
        let (model, mut report) = train_model(init(seed)?, corpus, &tr, &va, seed)?;
        report.test = Some(evaluate(&model, corpus, &te)?);
        let better = match &best {
            None => true,
            Some((f1, _, _)) => report.best_val_f1 > *f1,
        };
        if better {
            best = Some((report.best_val_f1, seed, model));
        }
        per_seed.push(report);
    }
    let tests: Vec<Metrics> = per_seed.iter().filter_map(|r| r.test).collect();
    let mean_test = Metrics::mean(&tests);
    let (_, best_seed, model) = best.expect("seeds validated non-empty");
    Ok(MultiSeedOutcome { per_seed, mean_test, model, best_seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_pairs;
    use crate::corpus::synth::generate_synthetic;

    fn tiny_param_set() -> ParamSet {
        let mut params = ParamSet::new();
        params.add("a", Tensor::vector(vec![1.0, -2.0, 3.0]));
        params.add("b", Tensor::from_vec(&[2, 2], vec![0.5, -0.5, 1.5, -1.5]).unwrap());
        params
    }

    fn grads_like(params: &ParamSet, value: f64) -> GradientStore {
        let mut g = GradientStore::new(params);
        let refs: Vec<ParamRef> = params.refs().collect();
        for r in refs {
            g.get_mut(r).fill(value);
        }
        g
    }

    #[test]
    fn zero_gradients_leave_fresh_params_unchanged() {
        let mut params = tiny_param_set();
        let before: Vec<Vec<f64>> = params.refs().map(|r| params.get(r).data().to_vec()).collect();
        let grads = GradientStore::new(&params);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.01, &[]).unwrap();
        let after: Vec<Vec<f64>> = params.refs().map(|r| params.get(r).data().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        // m-hat = v-hat = 1 at t=1, so the update is lr / (1 + eps)
        let mut params = tiny_param_set();
        let before: Vec<f64> = params.get(params.by_name("a").unwrap()).data().to_vec();
        let grads = grads_like(&params, 1.0);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.003, &[]).unwrap();
        let after = params.get(params.by_name("a").unwrap()).data().to_vec();
        for (b, a) in before.iter().zip(&after) {
            let delta = b - a;
            assert!((delta - 0.003).abs() < 1e-8, "step {delta} should be close to lr");
        }
    }

    #[test]
    fn momentum_carries_past_a_zero_gradient() {
        let mut params = tiny_param_set();
        let mut state = AdamState::new(&params);
        let ones = grads_like(&params, 1.0);
        adam_step(&mut params, &ones, &mut state, 0.01, &[]).unwrap();
        let mid: Vec<f64> = params.get(params.by_name("a").unwrap()).data().to_vec();
        let zeros = GradientStore::new(&params);
        adam_step(&mut params, &zeros, &mut state, 0.01, &[]).unwrap();
        let after = params.get(params.by_name("a").unwrap()).data().to_vec();
        assert_ne!(mid, after, "non-zero first moment should keep moving the weights");
    }

    #[test]
    fn identical_runs_produce_identical_parameters() {
        let run = || {
            let mut params = tiny_param_set();
            let mut state = AdamState::new(&params);
            for step in 0..10 {
                let g = grads_like(&params, (step as f64 * 0.7).sin());
                adam_step(&mut params, &g, &mut state, 0.01, &[]).unwrap();
            }
            params.refs().map(|r| params.get(r).data().to_vec()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_state_rejected() {
        let mut params = tiny_param_set();
        let grads = GradientStore::new(&params);
        let mut other = ParamSet::new();
        other.add("solo", Tensor::vector(vec![0.0]));
        let mut state = AdamState::new(&other);
        let err = adam_step(&mut params, &grads, &mut state, 0.01, &[]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "got {err}");
    }

    #[test]
    fn frozen_parameter_stays_put() {
        let mut params = tiny_param_set();
        let a = params.by_name("a").unwrap();
        let b = params.by_name("b").unwrap();
        let before_a = params.get(a).data().to_vec();
        let before_b = params.get(b).data().to_vec();
        let grads = grads_like(&params, 1.0);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.01, &[a]).unwrap();
        assert_eq!(params.get(a).data(), before_a.as_slice());
        assert_ne!(params.get(b).data(), before_b.as_slice());
    }

    #[test]
    fn metric_formulas_match_closed_forms() {
        let m = Metrics::from_counts(6, 2, 4);
        assert!((m.precision - 0.75).abs() < 1e-12);
        assert!((m.recall - 0.6).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);

        let perfect = Metrics::from_counts(10, 0, 0);
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));

        let silent = Metrics::from_counts(0, 0, 7);
        assert_eq!((silent.precision, silent.recall, silent.f1), (0.0, 0.0, 0.0));
    }

    fn small_setup(seed: u64) -> (Corpus, Vec<PairExample>) {
        let synth = generate_synthetic(4, 12, 0.25, 3, seed).unwrap();
        let corpus = Corpus::build(synth.reports, 1).unwrap();
        let pairs = generate_pairs(&corpus, 0.3, seed).unwrap();
        (corpus, pairs)
    }

    fn tiny_config() -> HyperConfig {
        HyperConfig {
            epochs: 3,
            patience: 5,
            batch_size: 8,
            ..HyperConfig::tiny()
        }
    }

    #[test]
    fn evaluate_rejects_all_negative_gold() {
        let (corpus, pairs) = small_setup(3);
        let negatives: Vec<PairExample> =
            pairs.iter().filter(|p| !p.duplicate).copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = ModelParams::init(&tiny_config(), corpus.vocab.size(), &mut rng).unwrap();
        let err = evaluate(&model, &corpus, &negatives).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "got {err}");
    }

    #[test]
    fn evaluate_ignores_pair_order() {
        let (corpus, pairs) = small_setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = ModelParams::init(&tiny_config(), corpus.vocab.size(), &mut rng).unwrap();
        let forward = evaluate(&model, &corpus, &pairs).unwrap();
        let mut reversed = pairs.clone();
        reversed.reverse();
        let backward = evaluate(&model, &corpus, &reversed).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn training_descends_and_reports_batches() {
        let (corpus, pairs) = small_setup(7);
        let (tr, va, _) = split_pairs(&pairs, (0.8, 0.1, 0.1), 7).unwrap();
        let config = tiny_config();
        let (_, report) = train(&config, &corpus, &tr, &va, 7).unwrap();
        assert_eq!(report.batches_per_epoch, tr.len().div_ceil(config.batch_size));
        assert_eq!(report.epochs.len(), 3);
        assert!(report.epochs.iter().all(|e| e.train_loss.is_finite()));
        let first = report.epochs[0].train_loss;
        let last = report.epochs[2].train_loss;
        assert!(
            last < first,
            "train loss should fall over three epochs: {first} -> {last}"
        );
    }

    #[test]
    fn fixed_seed_reproduces_report_and_parameters() {
        let run = || {
            let (corpus, pairs) = small_setup(9);
            let (tr, va, _) = split_pairs(&pairs, (0.8, 0.1, 0.1), 9).unwrap();
            let (model, report) = train(&tiny_config(), &corpus, &tr, &va, 9).unwrap();
            let bits: Vec<u64> = model
                .params
                .refs()
                .flat_map(|r| model.params.get(r).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect();
            (serde_json::to_string(&report).unwrap(), bits)
        };
        let (ra, pa) = run();
        let (rb, pb) = run();
        assert_eq!(ra, rb);
        assert_eq!(pa, pb);
    }

    #[test]
    fn returned_model_scores_the_best_recorded_val_f1() {
        let (corpus, pairs) = small_setup(11);
        let (tr, va, _) = split_pairs(&pairs, (0.8, 0.1, 0.1), 11).unwrap();
        let config = HyperConfig { epochs: 5, patience: 2, ..tiny_config() };
        let (model, report) = train(&config, &corpus, &tr, &va, 11).unwrap();
        let best_seen = report
            .epochs
            .iter()
            .map(|e| e.val_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(report.best_val_f1, best_seen);
        let returned = evaluate(&model, &corpus, &va).unwrap();
        assert_eq!(returned.f1, report.best_val_f1);
    }

    #[test]
    fn early_stopping_cuts_the_epoch_budget() {
        let (corpus, pairs) = small_setup(13);
        let (tr, va, _) = split_pairs(&pairs, (0.8, 0.1, 0.1), 13).unwrap();
        // patience 1 on a stale metric should stop well before 50 epochs
        let config = HyperConfig { epochs: 50, patience: 1, ..tiny_config() };
        let (_, report) = train(&config, &corpus, &tr, &va, 13).unwrap();
        match report.status {
            TrainStatus::EarlyStopped { at_epoch } => {
                assert!(at_epoch < 49);
                assert_eq!(report.epochs.len(), at_epoch + 1);
            }
            other => panic!("expected early stop, got {other:?} after {} epochs", report.epochs.len()),
        }
    }

    #[test]
    fn divergence_reports_and_keeps_finite_checkpoint() {
        let (corpus, pairs) = small_setup(17);
        let (tr, va, _) = split_pairs(&pairs, (0.8, 0.1, 0.1), 17).unwrap();
        // bounded activations and the clamped BCE shrug off merely huge
        // steps; it takes an overflow-scale rate to push the MLP matvec
        // to inf and the logit to inf - inf = NaN
        let config = HyperConfig { learning_rate: 1e200, epochs: 10, ..tiny_config() };
        let (model, report) = train(&config, &corpus, &tr, &va, 17).unwrap();
        assert!(matches!(report.status, TrainStatus::Diverged { .. }), "{:?}", report.status);
        for r in model.params.refs() {
            assert!(model.params.get(r).all_finite(), "checkpoint must stay finite");
        }
    }

    #[test]
    fn empty_split_rejected() {
        let (corpus, pairs) = small_setup(19);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = ModelParams::init(&tiny_config(), corpus.vocab.size(), &mut rng).unwrap();
        let err = train_model(model, &corpus, &pairs, &[], 19).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "got {err}");
    }

    #[test]
    fn single_class_train_split_rejected() {
        let (corpus, pairs) = small_setup(21);
        let positives: Vec<PairExample> = pairs.iter().filter(|p| p.duplicate).copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = ModelParams::init(&tiny_config(), corpus.vocab.size(), &mut rng).unwrap();
        let err = train_model(model, &corpus, &positives, &positives, 21).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "got {err}");
    }

    #[test]
    fn multi_seed_averages_and_returns_best_trial() {
        let (corpus, pairs) = small_setup(23);
        let config = HyperConfig { seeds: vec![1, 2], epochs: 2, ..tiny_config() };
        let outcome = train_multi_seed(&config, &corpus, &pairs).unwrap();
        assert_eq!(outcome.per_seed.len(), 2);
        assert!(outcome.per_seed.iter().all(|r| r.test.is_some()));
        let expect = Metrics::mean(
            &outcome.per_seed.iter().map(|r| r.test.unwrap()).collect::<Vec<_>>(),
        );
        assert_eq!(outcome.mean_test, expect);
        assert!(config.seeds.contains(&outcome.best_seed));
        let best_report = outcome
            .per_seed
            .iter()
            .find(|r| r.seed == outcome.best_seed)
            .unwrap();
        let top = outcome
            .per_seed
            .iter()
            .map(|r| r.best_val_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best_report.best_val_f1, top);
    }

    #[test]
    fn frozen_embeddings_do_not_move_during_training() {
        let (corpus, pairs) = small_setup(25);
        let (tr, va, _) = split_pairs(&pairs, (0.8, 0.1, 0.1), 25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut model = ModelParams::init(&tiny_config(), corpus.vocab.size(), &mut rng).unwrap();
        model.embedding.trainable = false;
        let table_before = model.params.get(model.embedding.param).data().to_vec();
        let gru_ref = model.gru.forward.wz;
        let gru_before = model.params.get(gru_ref).data().to_vec();
        let (trained, _) = train_model(model, &corpus, &tr, &va, 25).unwrap();
        assert_eq!(trained.params.get(trained.embedding.param).data(), table_before.as_slice());
        assert_ne!(trained.params.get(gru_ref).data(), gru_before.as_slice());
    }
}
