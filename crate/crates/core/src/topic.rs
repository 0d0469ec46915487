//! Topic head: scalar self-attention over word states, the attended
//! topic vector, and the similarity loss that trains the topic space
//! from duplicate labels alone.

use rand::Rng;

use crate::config::SimSign;
use crate::encoder::EncodedReport;
use crate::error::Result;
use crate::tape::{NodeId, ParamRef, ParamSet, Tape};
use crate::tensor::Tensor;

/// Scalar attention: one weight vector over the 2g state plus a shared
/// bias (a per-position bias cannot exist for variable-length input).
#[derive(Debug, Clone, Copy)]
pub struct TopicAttentionParams {
    pub w: ParamRef,
    pub b: ParamRef,
}

impl TopicAttentionParams {
    pub fn init(params: &mut ParamSet, g2: usize, rng: &mut impl Rng) -> TopicAttentionParams {
        let bound = (1.0 / g2 as f64).sqrt();
        TopicAttentionParams {
            w: params.add("topic.w", Tensor::uniform(&[g2], bound, rng)),
            b: params.add("topic.b", Tensor::zeros(&[1])),
        }
    }
}

/// Attention weights over word positions: z_i = tanh(w·h_i + b),
/// alpha = softmax(z). Returns the alpha node (length n).
pub fn self_attention(
    tape: &mut Tape,
    attn: &TopicAttentionParams,
    encoded: &EncodedReport,
) -> NodeId {
    let w = tape.param(attn.w);
    let b = tape.param(attn.b);
    let scores: Vec<NodeId> = encoded
        .hidden
        .iter()
        .map(|&h| {
            let wh = tape.dot(w, h);
            let shifted = tape.add(wh, b);
            tape.tanh(shifted)
        })
        .collect();
    let z = tape.stack_scalars(&scores);
    tape.softmax(z)
}

/// theta = sum_i alpha_i * topic_i, a convex combination of rows.
pub fn topic_vector(tape: &mut Tape, alpha: NodeId, encoded: &EncodedReport) -> NodeId {
    tape.weighted_sum(alpha, &encoded.topic)
}

/// Pair loss on the topic space. Duplicates are pulled together;
/// non-duplicates are pushed apart only when they share no non-stopword
/// (otherwise the pair is ambiguous and contributes nothing).
///
/// `sign` selects the corrected reading (default) or the literal
/// printed form whose positive-pair term has the opposite sign.
#[allow(clippy::too_many_arguments)]
pub fn similarity_loss(
    tape: &mut Tape,
    theta_p: NodeId,
    theta_q: NodeId,
    duplicate: bool,
    no_content_overlap: bool,
    w_pos: f64,
    w_neg: f64,
    sign: SimSign,
) -> Result<NodeId> {
    if !duplicate && !no_content_overlap {
        // ambiguous pair: constant zero, no gradient path to the head
        return Ok(tape.input(Tensor::scalar(0.0)));
    }
    let cos = tape.cosine(theta_p, theta_q);
    let factor = match (duplicate, sign) {
        (true, SimSign::Corrected) => -w_pos,
        (true, SimSign::Literal) => w_pos,
        (false, SimSign::Corrected) => w_neg,
        (false, SimSign::Literal) => -w_neg,
    };
    Ok(tape.scale(cos, factor))
}
