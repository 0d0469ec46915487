//! Duplicate head: memory vector, conditional attention of one report
//! on the other's summary, MLP classifier and the combined loss.

use rand::Rng;

use crate::config::CondAttnMode;
use crate::error::{Error, Result};
use crate::tape::{NodeId, ParamRef, ParamSet, Tape};
use crate::tensor::Tensor;

/// Shared (Siamese) conditional-attention maps, both 2g -> a.
#[derive(Debug, Clone, Copy)]
pub struct CondAttentionParams {
    pub w1: ParamRef,
    pub w2: ParamRef,
    pub attn_dim: usize,
}

impl CondAttentionParams {
    pub fn init(
        params: &mut ParamSet,
        g2: usize,
        a: usize,
        rng: &mut impl Rng,
    ) -> CondAttentionParams {
        let bound = (1.0 / g2 as f64).sqrt();
        CondAttentionParams {
            w1: params.add("cond.w1", Tensor::uniform(&[a, g2], bound, rng)),
            w2: params.add("cond.w2", Tensor::uniform(&[a, g2], bound, rng)),
            attn_dim: a,
        }
    }
}

/// Classifier over the ordered pair representation cP ⊕ cQ.
#[derive(Debug, Clone, Copy)]
pub struct MlpParams {
    pub w1: ParamRef,
    pub b1: ParamRef,
    pub w2: ParamRef,
    pub b2: ParamRef,
    pub w_out: ParamRef,
    pub b_out: ParamRef,
}

impl MlpParams {
    pub fn init(
        params: &mut ParamSet,
        a: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> MlpParams {
        fn layer<R: Rng>(
            params: &mut ParamSet,
            name: &str,
            rows: usize,
            cols: usize,
            rng: &mut R,
        ) -> ParamRef {
            let bound = (1.0 / cols as f64).sqrt();
            params.add(format!("mlp.{name}"), Tensor::uniform(&[rows, cols], bound, rng))
        }
        let w1 = layer(params, "w1", hidden, 2 * a, rng);
        let b1 = params.add("mlp.b1", Tensor::zeros(&[hidden]));
        let w2 = layer(params, "w2", hidden, hidden, rng);
        let b2 = params.add("mlp.b2", Tensor::zeros(&[hidden]));
        let w_out = layer(params, "w_out", 1, hidden, rng);
        let b_out = params.add("mlp.b_out", Tensor::zeros(&[1]));
        MlpParams {
            w1,
            b1,
            w2,
            b2,
            w_out,
            b_out,
        }
    }
}

/// phi = sum_i alpha_i h_i + sum_i h_i. The second term is deliberately
/// unnormalized; `normalize` swaps it for the mean (ablation).
pub fn memory_vector(
    tape: &mut Tape,
    alpha: NodeId,
    hidden: &[NodeId],
    normalize: bool,
) -> NodeId {
    let attended = tape.weighted_sum(alpha, hidden);
    let pooled = if normalize {
        tape.mean_rows(hidden)
    } else {
        tape.sum_rows(hidden)
    };
    tape.add(attended, pooled)
}

/// Mean of the other report's hidden states.
pub fn report_summary(tape: &mut Tape, hidden: &[NodeId]) -> NodeId {
    tape.mean_rows(hidden)
}

/// Row i: h_i elementwise-scaled by the other report's summary.
pub fn conditional_rep(tape: &mut Tape, hidden: &[NodeId], summary: NodeId) -> Vec<NodeId> {
    hidden.iter().map(|&h| tape.mul(h, summary)).collect()
}

/// Position weights and the attended vector over the conditional rows.
///
/// Per-dim mode: c_i = tanh(W1 Γ_i) ⊙ tanh(W2 φ), each output dimension
/// softmaxed over positions independently (β is n×a). Scalar mode:
/// one softmax over s_i = ⟨tanh(W1 Γ_i), tanh(W2 φ)⟩ (β is n×1) and
/// c = Σ β_i tanh(W1 Γ_i).
pub fn conditional_attention(
    tape: &mut Tape,
    cond: &CondAttentionParams,
    gamma: &[NodeId],
    phi: NodeId,
    mode: CondAttnMode,
) -> (NodeId, Tensor) {
    let w1 = tape.param(cond.w1);
    let w2 = tape.param(cond.w2);
    let w2phi = tape.matvec(w2, phi);
    let guide = tape.tanh(w2phi);

    let projected: Vec<NodeId> = gamma
        .iter()
        .map(|&g| {
            let p = tape.matvec(w1, g);
            tape.tanh(p)
        })
        .collect();

    match mode {
        CondAttnMode::PerDim => {
            let rows: Vec<NodeId> = projected.iter().map(|&t| tape.mul(t, guide)).collect();
            tape.col_softmax_weighted(&rows)
        }
        CondAttnMode::ScalarDot => {
            let scores: Vec<NodeId> = projected.iter().map(|&t| tape.dot(t, guide)).collect();
            let z = tape.stack_scalars(&scores);
            let beta = tape.softmax(z);
            let c = tape.weighted_sum(beta, &projected);
            let beta_matrix = {
                let b = tape.value(beta);
                let mut m = Tensor::zeros(&[gamma.len(), 1]);
                for i in 0..gamma.len() {
                    m.row_mut(i)[0] = b.data()[i];
                }
                m
            };
            (c, beta_matrix)
        }
    }
}

/// r̂ for the ordered pair. Dropout applies after each hidden relu,
/// training only, with inverted scaling baked into the mask.
pub fn classify(
    tape: &mut Tape,
    mlp: &MlpParams,
    c_p: NodeId,
    c_q: NodeId,
    dropout: f64,
    training: bool,
    rng: &mut impl Rng,
) -> NodeId {
    let x = tape.concat(c_p, c_q);
    let h1 = dense_relu(tape, mlp.w1, mlp.b1, x);
    let h1 = maybe_dropout(tape, h1, dropout, training, rng);
    let h2 = dense_relu(tape, mlp.w2, mlp.b2, h1);
    let h2 = maybe_dropout(tape, h2, dropout, training, rng);
    let wo = tape.param(mlp.w_out);
    let bo = tape.param(mlp.b_out);
    let logit = tape.matvec(wo, h2);
    let logit = tape.add(logit, bo);
    tape.sigmoid(logit)
}

fn dense_relu(tape: &mut Tape, w: ParamRef, b: ParamRef, x: NodeId) -> NodeId {
    let wn = tape.param(w);
    let bn = tape.param(b);
    let wx = tape.matvec(wn, x);
    let pre = tape.add(wx, bn);
    tape.relu(pre)
}

fn maybe_dropout(
    tape: &mut Tape,
    x: NodeId,
    rate: f64,
    training: bool,
    rng: &mut impl Rng,
) -> NodeId {
    if !training || rate <= 0.0 {
        return x;
    }
    let keep = 1.0 - rate;
    let len = tape.value(x).len();
    let mask: Vec<f64> = (0..len)
        .map(|_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    tape.dropout(x, Tensor::vector(mask))
}

/// Binary cross-entropy against a hard label.
pub fn bce_loss(tape: &mut Tape, rhat: NodeId, duplicate: bool) -> NodeId {
    tape.binary_cross_entropy(rhat, if duplicate { 1.0 } else { 0.0 })
}

/// L = λ L_sim + (1−λ) L_dup.
pub fn total_loss(tape: &mut Tape, l_sim: NodeId, l_dup: NodeId, lambda: f64) -> Result<NodeId> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    let a = tape.scale(l_sim, lambda);
    let b = tape.scale(l_dup, 1.0 - lambda);
    Ok(tape.add(a, b))
}
