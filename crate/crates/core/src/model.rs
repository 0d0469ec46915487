//! Full pair model: wiring of embedding, encoder, topic head and
//! duplicate head, plus checkpointing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::config::HyperConfig;
use crate::corpus::Vocabulary;
use crate::duplicate::{
    bce_loss, classify, conditional_attention, conditional_rep, memory_vector, report_summary,
    total_loss, CondAttentionParams, MlpParams,
};
use crate::embeddings::EmbeddingTable;
use crate::encoder::{encode, EncodedReport, GruParams};
use crate::error::{Error, Result};
use crate::tape::{NodeId, ParamSet, Tape};
use crate::tensor::Tensor;
use crate::topic::{self_attention, similarity_loss, topic_vector, TopicAttentionParams};

const CHECKPOINT_MAGIC: &[u8; 4] = b"DUPD";
const CHECKPOINT_VERSION: u32 = 1;

/// All trainable state plus the hyperparameters that shaped it.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub params: ParamSet,
    pub embedding: EmbeddingTable,
    pub gru: GruParams,
    pub topic_attn: TopicAttentionParams,
    pub cond: CondAttentionParams,
    pub mlp: MlpParams,
    pub config: HyperConfig,
}

impl ModelParams {
    pub fn init(config: &HyperConfig, vocab_size: usize, rng: &mut impl Rng) -> Result<ModelParams> {
        config.validate()?;
        let mut params = ParamSet::new();
        let embedding =
            EmbeddingTable::init_random(&mut params, vocab_size, config.embed_dim, rng);
        Self::wire(params, embedding, config, rng)
    }

    /// Same wiring, embedding rows taken from a pretrained vector file.
    pub fn init_pretrained(
        config: &HyperConfig,
        vocab: &Vocabulary,
        vectors: &Path,
        rng: &mut impl Rng,
    ) -> Result<ModelParams> {
        config.validate()?;
        let mut params = ParamSet::new();
        let embedding =
            EmbeddingTable::init_pretrained(&mut params, vectors, vocab, config.embed_dim, rng)?;
        Self::wire(params, embedding, config, rng)
    }

    fn wire(
        mut params: ParamSet,
        embedding: EmbeddingTable,
        config: &HyperConfig,
        rng: &mut impl Rng,
    ) -> Result<ModelParams> {
        let gru = GruParams::init(
            &mut params,
            config.embed_dim,
            config.hidden_dim,
            config.topic_dims,
            rng,
        )?;
        let g2 = 2 * config.hidden_dim;
        let topic_attn = TopicAttentionParams::init(&mut params, g2, rng);
        let cond = CondAttentionParams::init(&mut params, g2, config.attn_dim, rng);
        let mlp = MlpParams::init(&mut params, config.attn_dim, config.mlp_hidden, rng);
        Ok(ModelParams {
            params,
            embedding,
            gru,
            topic_attn,
            cond,
            mlp,
            config: config.clone(),
        })
    }
}

/// One report's nodes on a live tape.
struct SideNodes {
    encoded: EncodedReport,
    alpha: NodeId,
    theta: NodeId,
    phi: NodeId,
    summary: NodeId,
}

fn encode_side(tape: &mut Tape, model: &ModelParams, tokens: &[u32]) -> Result<SideNodes> {
    let rows = model.embedding.lookup(tape, tokens)?;
    let encoded = encode(tape, &model.gru, &rows)?;
    let alpha = self_attention(tape, &model.topic_attn, &encoded);
    let theta = topic_vector(tape, alpha, &encoded);
    let phi = memory_vector(tape, alpha, &encoded.hidden, model.config.normalize_memory);
    let summary = report_summary(tape, &encoded.hidden);
    Ok(SideNodes {
        encoded,
        alpha,
        theta,
        phi,
        summary,
    })
}

/// Everything the trainer and the inspection tools need from one pair.
#[derive(Debug, Clone)]
pub struct PairOutput {
    /// Scalar node of the combined loss, ready for `backward`.
    pub loss: NodeId,
    pub rhat: f64,
    pub l_sim: f64,
    pub l_dup: f64,
    pub alpha_p: Vec<f64>,
    pub alpha_q: Vec<f64>,
    /// Conditional position weights, (n, a) or (n, 1) by mode.
    pub beta_p: Tensor,
    pub beta_q: Tensor,
    pub theta_p: Vec<f64>,
    pub theta_q: Vec<f64>,
    pub c_p: Vec<f64>,
    pub c_q: Vec<f64>,
}

/// Forward one ordered pair and assemble the combined loss.
#[allow(clippy::too_many_arguments)]
pub fn pair_forward(
    tape: &mut Tape,
    model: &ModelParams,
    p_tokens: &[u32],
    q_tokens: &[u32],
    duplicate: bool,
    no_content_overlap: bool,
    w_pos: f64,
    w_neg: f64,
    training: bool,
    dropout_rng: &mut impl Rng,
) -> Result<PairOutput> {
    let p = encode_side(tape, model, p_tokens)?;
    let q = encode_side(tape, model, q_tokens)?;

    let gamma_p = conditional_rep(tape, &p.encoded.hidden, q.summary);
    let gamma_q = conditional_rep(tape, &q.encoded.hidden, p.summary);
    let mode = model.config.cond_attn;
    let (c_p, beta_p) = conditional_attention(tape, &model.cond, &gamma_p, p.phi, mode);
    let (c_q, beta_q) = conditional_attention(tape, &model.cond, &gamma_q, q.phi, mode);

    let rhat = classify(
        tape,
        &model.mlp,
        c_p,
        c_q,
        model.config.dropout,
        training,
        dropout_rng,
    );
    let l_dup = bce_loss(tape, rhat, duplicate);
    let l_sim = similarity_loss(
        tape,
        p.theta,
        q.theta,
        duplicate,
        no_content_overlap,
        w_pos,
        w_neg,
        model.config.sim_sign,
    )?;
    let loss = total_loss(tape, l_sim, l_dup, model.config.lambda)?;

    Ok(PairOutput {
        loss,
        rhat: tape.value(rhat).item(),
        l_sim: tape.value(l_sim).item(),
        l_dup: tape.value(l_dup).item(),
        alpha_p: tape.value(p.alpha).data().to_vec(),
        alpha_q: tape.value(q.alpha).data().to_vec(),
        beta_p,
        beta_q,
        theta_p: tape.value(p.theta).data().to_vec(),
        theta_q: tape.value(q.theta).data().to_vec(),
        c_p: tape.value(c_p).data().to_vec(),
        c_q: tape.value(c_q).data().to_vec(),
    })
}

/// Duplicate probability for an ordered pair, dropout off.
pub fn predict_pair(model: &ModelParams, p_tokens: &[u32], q_tokens: &[u32]) -> Result<f64> {
    Ok(inspect_pair(model, p_tokens, q_tokens)?.rhat)
}

/// Full forward pass at inference time: r-hat plus both attention
/// distributions and intermediate vectors. Labels only shape the loss,
/// so placeholders are fine here.
pub fn inspect_pair(
    model: &ModelParams,
    p_tokens: &[u32],
    q_tokens: &[u32],
) -> Result<PairOutput> {
    let mut tape = Tape::new(&model.params);
    // dropout is off; the rng is never drawn from
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    pair_forward(&mut tape, model, p_tokens, q_tokens, false, true, 1.0, 1.0, false, &mut rng)
}

/// Topic vector and attention of a single report, dropout off.
pub fn infer_report(model: &ModelParams, tokens: &[u32]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new(&model.params);
    let side = encode_side(&mut tape, model, tokens)?;
    Ok((
        tape.value(side.theta).data().to_vec(),
        tape.value(side.alpha).data().to_vec(),
    ))
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: HyperConfig,
    manifest_hash: String,
    vocab: Vec<String>,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

/// Write a versioned checkpoint: JSON header (config, manifest hash,
/// vocabulary, tensor directory) followed by raw little-endian f64
/// payloads in directory order. Round-trips bit-exactly.
pub fn save_checkpoint(
    path: &Path,
    model: &ModelParams,
    vocab: &Vocabulary,
    manifest_hash: &str,
) -> Result<()> {
    let header = CheckpointHeader {
        config: model.config.clone(),
        manifest_hash: manifest_hash.to_string(),
        vocab: vocab.id_ordered_words().to_vec(),
        tensors: model
            .params
            .iter()
            .map(|(name, t)| TensorMeta {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, t) in model.params.iter() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub struct LoadedModel {
    pub model: ModelParams,
    pub vocab: Vocabulary,
    pub manifest_hash: String,
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedModel> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)?;
    let header_len = u64::from_le_bytes(len8) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

    let vocab = Vocabulary::from_id_ordered(header.vocab)?;
    // seed irrelevant: every tensor is overwritten below
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model = ModelParams::init(&header.config, vocab.size(), &mut rng)?;

    if model.params.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "tensor count {} does not match architecture ({})",
            header.tensors.len(),
            model.params.len()
        )));
    }
    for (meta, r_param) in header.tensors.iter().zip(model.params.refs().collect::<Vec<_>>()) {
        if model.params.name(r_param) != meta.name {
            return Err(Error::Checkpoint(format!(
                "tensor {:?} out of order (expected {:?})",
                meta.name,
                model.params.name(r_param)
            )));
        }
        let t = model.params.get_mut(r_param);
        if t.shape() != meta.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor {:?} has shape {:?}, expected {:?}",
                meta.name,
                meta.shape,
                t.shape()
            )));
        }
        let mut buf = [0u8; 8];
        for v in t.data_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint("truncated tensor payload".into()))?;
            *v = f64::from_le_bytes(buf);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(LoadedModel {
        model,
        vocab,
        manifest_hash: header.manifest_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CondAttnMode;
    use crate::corpus::build_vocab;
    use crate::tape::{compare_gradients, finite_diff_gradient, GradientStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(&HyperConfig::tiny(), 12, &mut rng).unwrap()
    }

    #[test]
    fn forward_shapes_and_ranges() {
        let model = tiny_model(1);
        let mut tape = Tape::new(&model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = pair_forward(
            &mut tape, &model, &[2, 5, 7], &[3, 4], true, false, 1.0, 1.0, false, &mut rng,
        )
        .unwrap();

        assert!(out.rhat > 0.0 && out.rhat < 1.0);
        assert_eq!(out.alpha_p.len(), 3);
        assert_eq!(out.alpha_q.len(), 2);
        assert!((out.alpha_p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((out.alpha_q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(out.theta_p.len(), 2 * model.config.topic_dims);
        assert_eq!(out.c_p.len(), model.config.attn_dim);
        assert_eq!(out.beta_p.shape(), &[3, model.config.attn_dim]);
        for j in 0..model.config.attn_dim {
            let s: f64 = (0..3).map(|i| out.beta_p.row(i)[j]).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        // combined loss matches its parts
        let expect = 0.5 * out.l_sim + 0.5 * out.l_dup;
        assert!((tape.value(out.loss).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn forward_deterministic_without_dropout() {
        let model = tiny_model(2);
        let run = || {
            let mut tape = Tape::new(&model.params);
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            pair_forward(
                &mut tape, &model, &[2, 5, 7], &[3, 4], false, true, 2.0, 0.7, false, &mut rng,
            )
            .unwrap()
            .rhat
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn swap_exchanges_conditional_vectors_not_rhat() {
        let model = tiny_model(3);
        let mut tape = Tape::new(&model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ab = pair_forward(
            &mut tape, &model, &[2, 5, 7], &[3, 4, 8, 9], true, false, 1.0, 1.0, false, &mut rng,
        )
        .unwrap();
        let ba = pair_forward(
            &mut tape, &model, &[3, 4, 8, 9], &[2, 5, 7], true, false, 1.0, 1.0, false, &mut rng,
        )
        .unwrap();
        assert_eq!(ab.c_p, ba.c_q);
        assert_eq!(ab.c_q, ba.c_p);
        // ordered concatenation: the classifier sees different inputs
        assert_ne!(ab.rhat, ba.rhat);
    }

    #[test]
    fn scalar_dot_mode_runs() {
        let mut config = HyperConfig::tiny();
        config.cond_attn = CondAttnMode::ScalarDot;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = ModelParams::init(&config, 12, &mut rng).unwrap();
        let mut tape = Tape::new(&model.params);
        let mut drng = ChaCha8Rng::seed_from_u64(0);
        let out = pair_forward(
            &mut tape, &model, &[2, 5], &[3, 4, 6], false, false, 1.0, 1.0, false, &mut drng,
        )
        .unwrap();
        assert_eq!(out.beta_p.shape(), &[2, 1]);
        assert!(out.rhat > 0.0 && out.rhat < 1.0);
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let mut model = tiny_model(5);
        // Default init leaves the conditional representations near 1e-7, which
        // parks every relu pre-activation within the finite-difference step of
        // its kink. Check at a generic point instead: O(1) values everywhere.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let refs: Vec<_> = model.params.refs().collect();
        for r in refs {
            let t = model.params.get_mut(r);
            let shape = t.shape().to_vec();
            *t = Tensor::uniform(&shape, 0.8, &mut rng);
        }
        let pairs: [(&[u32], &[u32], bool, bool); 2] =
            [(&[2, 5, 7], &[3, 4], true, false), (&[6, 8], &[9, 10, 11], false, true)];

        let build = |tape: &mut Tape, model: &ModelParams| -> NodeId {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let outs: Vec<NodeId> = pairs
                .iter()
                .map(|(p, q, dup, gate)| {
                    pair_forward(tape, model, p, q, *dup, *gate, 2.0, 0.6, false, &mut rng)
                        .unwrap()
                        .loss
                })
                .collect();
            let both = tape.add(outs[0], outs[1]);
            tape.scale(both, 0.5)
        };

        let mut tape = Tape::new(&model.params);
        let out = build(&mut tape, &model);
        let mut backprop = GradientStore::new(&model.params);
        tape.backward(out, &mut backprop);
        drop(tape);

        let template = model.clone();
        let mut loss_fn = move |ps: &ParamSet| {
            let mut m = template.clone();
            m.params = ps.clone();
            let mut tape = Tape::new(&m.params);
            let out = build(&mut tape, &m);
            Ok(tape.value(out).item())
        };
        let mut probe = model.params.clone();
        let oracle = finite_diff_gradient(&mut loss_fn, &mut probe, 1e-5).unwrap();
        compare_gradients(&probe, &backprop, &oracle, 1e-6, 1e-3).unwrap();
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let vocab = build_vocab(std::iter::once(words.as_slice()), 1).unwrap();
        let model = {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            ModelParams::init(&HyperConfig::tiny(), vocab.size(), &mut rng).unwrap()
        };

        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(f.path(), &model, &vocab, "abc123").unwrap();
        let loaded = load_checkpoint(f.path()).unwrap();

        assert_eq!(loaded.manifest_hash, "abc123");
        assert_eq!(loaded.model.config, model.config);
        assert_eq!(loaded.vocab.id_ordered_words(), vocab.id_ordered_words());
        for (a, b) in model.params.iter().zip(loaded.model.params.iter()) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1, "tensor {} differs", a.0);
        }

        // saved-loaded-saved files are byte-identical
        let f2 = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(f2.path(), &loaded.model, &loaded.vocab, "abc123").unwrap();
        assert_eq!(
            std::fs::read(f.path()).unwrap(),
            std::fs::read(f2.path()).unwrap()
        );

        // behavior identical
        let a = predict_pair(&model, &[2, 5, 7], &[3, 4]).unwrap();
        let b = predict_pair(&loaded.model, &[2, 5, 7], &[3, 4]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), b"not a checkpoint").unwrap();
        assert!(load_checkpoint(f.path()).is_err());

        std::fs::write(f.path(), b"DU").unwrap();
        assert!(load_checkpoint(f.path()).is_err());
    }

    #[test]
    fn checkpoint_rejects_truncation() {
        let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let vocab = build_vocab(std::iter::once(words.as_slice()), 1).unwrap();
        let model = {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            ModelParams::init(&HyperConfig::tiny(), vocab.size(), &mut rng).unwrap()
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(f.path(), &model, &vocab, "h").unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        std::fs::write(f.path(), &bytes[..bytes.len() - 9]).unwrap();
        assert!(load_checkpoint(f.path()).is_err());
    }

    #[test]
    fn infer_report_matches_pair_side() {
        let model = tiny_model(8);
        let (theta, alpha) = infer_report(&model, &[2, 5, 7]).unwrap();
        let mut tape = Tape::new(&model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = pair_forward(
            &mut tape, &model, &[2, 5, 7], &[3, 4], false, true, 1.0, 1.0, false, &mut rng,
        )
        .unwrap();
        assert_eq!(theta, out.theta_p);
        assert_eq!(alpha, out.alpha_p);
    }
}
