//! Bidirectional GRU over embedded words. Each word's state is the
//! concatenation of the forward and backward states; the first k
//! dimensions of each direction form the word's topic slice.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{NodeId, ParamRef, ParamSet, Tape};
use crate::tensor::Tensor;

/// Gate parameters for one direction.
#[derive(Debug, Clone, Copy)]
pub struct GruDirection {
    pub wz: ParamRef,
    pub uz: ParamRef,
    pub bz: ParamRef,
    pub wr: ParamRef,
    pub ur: ParamRef,
    pub br: ParamRef,
    pub wh: ParamRef,
    pub uh: ParamRef,
    pub bh: ParamRef,
}

impl GruDirection {
    /// Input maps uniform `±sqrt(1/d)`, recurrent maps `±sqrt(1/g)`,
    /// zero biases.
    pub fn init(
        params: &mut ParamSet,
        prefix: &str,
        d: usize,
        g: usize,
        rng: &mut impl Rng,
    ) -> GruDirection {
        fn map<R: Rng>(
            params: &mut ParamSet,
            prefix: &str,
            name: &str,
            rows: usize,
            cols: usize,
            rng: &mut R,
        ) -> ParamRef {
            let bound = (1.0 / cols as f64).sqrt();
            params.add(
                format!("{prefix}.{name}"),
                Tensor::uniform(&[rows, cols], bound, rng),
            )
        }
        let wz = map(params, prefix, "wz", g, d, rng);
        let wr = map(params, prefix, "wr", g, d, rng);
        let wh = map(params, prefix, "wh", g, d, rng);
        let uz = map(params, prefix, "uz", g, g, rng);
        let ur = map(params, prefix, "ur", g, g, rng);
        let uh = map(params, prefix, "uh", g, g, rng);
        let bz = params.add(format!("{prefix}.bz"), Tensor::zeros(&[g]));
        let br = params.add(format!("{prefix}.br"), Tensor::zeros(&[g]));
        let bh = params.add(format!("{prefix}.bh"), Tensor::zeros(&[g]));
        GruDirection {
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wh,
            uh,
            bh,
        }
    }
}

/// Both directions of the shared (Siamese) encoder.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub forward: GruDirection,
    pub backward: GruDirection,
    pub hidden_dim: usize,
    pub topic_dims: usize,
}

impl GruParams {
    pub fn init(
        params: &mut ParamSet,
        d: usize,
        g: usize,
        k: usize,
        rng: &mut impl Rng,
    ) -> Result<GruParams> {
        if k == 0 || k > g {
            return Err(Error::Config(format!(
                "topic dims must satisfy 0 < k <= g, got k={k}, g={g}"
            )));
        }
        Ok(GruParams {
            forward: GruDirection::init(params, "gru.fwd", d, g, rng),
            backward: GruDirection::init(params, "gru.bwd", d, g, rng),
            hidden_dim: g,
            topic_dims: k,
        })
    }
}

/// One recurrence step:
/// z = sigmoid(Wz x + Uz h + bz), r = sigmoid(Wr x + Ur h + br),
/// cand = tanh(Wh x + Uh (r*h) + bh), h' = h + z*(cand - h).
pub fn gru_cell(tape: &mut Tape, dir: &GruDirection, x: NodeId, h_prev: NodeId) -> NodeId {
    let gate = |tape: &mut Tape, w: ParamRef, u: ParamRef, b: ParamRef, hin: NodeId| {
        let wn = tape.param(w);
        let un = tape.param(u);
        let bn = tape.param(b);
        let wx = tape.matvec(wn, x);
        let uh = tape.matvec(un, hin);
        let s = tape.add(wx, uh);
        tape.add(s, bn)
    };
    let z_pre = gate(tape, dir.wz, dir.uz, dir.bz, h_prev);
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, dir.wr, dir.ur, dir.br, h_prev);
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h_prev);
    let cand_pre = gate(tape, dir.wh, dir.uh, dir.bh, rh);
    let cand = tape.tanh(cand_pre);
    // h' = (1-z)*h + z*cand, written without a constant-ones node
    let delta = tape.sub(cand, h_prev);
    let step = tape.mul(z, delta);
    tape.add(h_prev, step)
}

/// Per-word states of one encoded report.
#[derive(Debug, Clone)]
pub struct EncodedReport {
    /// Row i: forward state ⊕ backward state of word i, length 2g.
    pub hidden: Vec<NodeId>,
    /// Row i: first k forward dims ⊕ first k backward dims, length 2k.
    pub topic: Vec<NodeId>,
}

impl EncodedReport {
    pub fn len(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.is_empty()
    }
}

/// Run both directions over the embedded words (zero initial states)
/// and assemble per-word hidden and topic rows.
pub fn encode(tape: &mut Tape, gru: &GruParams, embedded: &[NodeId]) -> Result<EncodedReport> {
    if embedded.is_empty() {
        return Err(Error::EmptySequence);
    }
    let n = embedded.len();
    let g = gru.hidden_dim;
    let k = gru.topic_dims;

    let mut fwd = Vec::with_capacity(n);
    let mut state = tape.input(Tensor::zeros(&[g]));
    for &x in embedded {
        state = gru_cell(tape, &gru.forward, x, state);
        fwd.push(state);
    }

    let mut bwd = Vec::with_capacity(n);
    state = tape.input(Tensor::zeros(&[g]));
    for &x in embedded.iter().rev() {
        state = gru_cell(tape, &gru.backward, x, state);
        bwd.push(state);
    }
    bwd.reverse();

    let mut hidden = Vec::with_capacity(n);
    let mut topic = Vec::with_capacity(n);
    for i in 0..n {
        hidden.push(tape.concat(fwd[i], bwd[i]));
        let tf = tape.slice(fwd[i], 0, k);
        let tb = tape.slice(bwd[i], 0, k);
        topic.push(tape.concat(tf, tb));
    }
    Ok(EncodedReport { hidden, topic })
}
