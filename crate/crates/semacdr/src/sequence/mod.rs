//! Causal Transformer sequence encoders and cross-domain attention fusion.
//!
//! Each encoder is a single-head, two-block stack over graph-enriched item
//! embeddings with learned positions, post-residual layer norm, and a d→d→d
//! feed-forward. The fuser lets every target position attend over all source
//! positions (no causal mask across domains) with a residual connection.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::linalg::Matrix;
use crate::params::{Bound, LrGroup, ParamId, ParamStore};
use crate::scalar::Scalar;

pub const NUM_BLOCKS: usize = 2;
const LAYER_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

impl TransformerBlock {
    fn register<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        let mut u = |suffix: &str, rows, cols| {
            store.register_uniform(format!("{name}.{suffix}"), rows, cols, LrGroup::General, rng)
        };
        let wq = u("wq", d, d);
        let wk = u("wk", d, d);
        let wv = u("wv", d, d);
        let wo = u("wo", d, d);
        let ffn_w1 = u("ffn_w1", d, d);
        let ffn_w2 = u("ffn_w2", d, d);
        let ffn_b1 = u("ffn_b1", 1, d);
        let ffn_b2 = u("ffn_b2", 1, d);
        // layer norms start at identity
        let ones = Matrix::from_rows(1, d, vec![T::one(); d]);
        let ln1_gain = store.register(format!("{name}.ln1_gain"), ones.clone(), LrGroup::General);
        let ln1_bias = store.register(format!("{name}.ln1_bias"), Matrix::zeros(1, d), LrGroup::General);
        let ln2_gain = store.register(format!("{name}.ln2_gain"), ones, LrGroup::General);
        let ln2_bias = store.register(format!("{name}.ln2_bias"), Matrix::zeros(1, d), LrGroup::General);
        Self { wq, wk, wv, wo, ffn_w1, ffn_b1, ffn_w2, ffn_b2, ln1_gain, ln1_bias, ln2_gain, ln2_bias }
    }
}

/// Single-head, two-block causal encoder with learned positional embeddings.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub positions: ParamId,
    pub blocks: [TransformerBlock; NUM_BLOCKS],
    pub d: usize,
    pub max_seq_len: usize,
}

impl TransformerEncoder {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        max_seq_len: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let positions =
            store.register_uniform(format!("{name}.positions"), max_seq_len, d, LrGroup::General, rng);
        let blocks = [
            TransformerBlock::register(store, &format!("{name}.block0"), d, rng),
            TransformerBlock::register(store, &format!("{name}.block1"), d, rng),
        ];
        Self { positions, blocks, d, max_seq_len }
    }
}

/// Dropout is active only while training; masks come from a dedicated seeded
/// stream so runs are reproducible.
pub struct DropoutCtx<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl<T: Scalar> Bound<T> {
    fn maybe_dropout(&mut self, x: Var, ctx: &mut Option<DropoutCtx<'_>>) -> Var {
        match ctx {
            None => x,
            Some(c) => {
                let v = self.tape.value(x);
                let keep = 1.0 - c.rate;
                let mask = Matrix::from_fn(v.rows, v.cols, |_, _| {
                    if c.rng.random_range(0.0..1.0) < c.rate {
                        T::zero()
                    } else {
                        T::of(1.0 / keep)
                    }
                });
                self.tape.mul_const(x, Rc::new(mask))
            }
        }
    }
}

/// Encode one sequence. `seq_rows` index rows of `item_states` and must
/// already be truncated to the most recent `max_seq_len` items; the caller
/// guarantees nonemptiness. Returns the per-position state matrix; the
/// sequence representation is its last row.
pub fn encode_sequence<T: Scalar>(
    bound: &mut Bound<T>,
    encoder: &TransformerEncoder,
    item_states: Var,
    seq_rows: &[usize],
    dropout: &mut Option<DropoutCtx<'_>>,
) -> Var {
    assert!(!seq_rows.is_empty(), "cannot encode an empty sequence");
    assert!(seq_rows.len() <= encoder.max_seq_len, "sequence exceeds maximum length");
    let len = seq_rows.len();
    let d = encoder.d;
    let scale = T::of(1.0 / (d as f64).sqrt());

    let items = bound.tape.gather_rows(item_states, Rc::new(seq_rows.to_vec()));
    let pos_table = bound.var(encoder.positions);
    let positions = bound.tape.gather_rows(pos_table, Rc::new((0..len).collect()));
    let mut x = bound.tape.add(items, positions);
    x = bound.maybe_dropout(x, dropout);

    for block in &encoder.blocks {
        // causal single-head self-attention with residual + post layer norm
        let wq = bound.var(block.wq);
        let wk = bound.var(block.wk);
        let wv = bound.var(block.wv);
        let wo = bound.var(block.wo);
        let q = bound.tape.matmul(x, wq);
        let k = bound.tape.matmul(x, wk);
        let v = bound.tape.matmul(x, wv);
        let scores = bound.tape.matmul_transpose_b(q, k);
        let scores = bound.tape.scale_const(scores, scale);
        let attn = bound.tape.causal_softmax_rows(scores);
        let readout = bound.tape.matmul(attn, v);
        let mut out = bound.tape.matmul(readout, wo);
        out = bound.maybe_dropout(out, dropout);
        let residual = bound.tape.add(x, out);
        let g1 = bound.var(block.ln1_gain);
        let b1 = bound.var(block.ln1_bias);
        x = bound.tape.layer_norm_rows(residual, g1, b1, T::of(LAYER_NORM_EPS));

        // position-wise feed-forward with residual + post layer norm
        let w1 = bound.var(block.ffn_w1);
        let bias1 = bound.var(block.ffn_b1);
        let w2 = bound.var(block.ffn_w2);
        let bias2 = bound.var(block.ffn_b2);
        let h = bound.tape.matmul(x, w1);
        let h = bound.tape.add_row_vec(h, bias1);
        let h = bound.tape.relu(h);
        let h = bound.tape.matmul(h, w2);
        let mut h = bound.tape.add_row_vec(h, bias2);
        h = bound.maybe_dropout(h, dropout);
        let residual = bound.tape.add(x, h);
        let g2 = bound.var(block.ln2_gain);
        let b2 = bound.var(block.ln2_bias);
        x = bound.tape.layer_norm_rows(residual, g2, b2, T::of(LAYER_NORM_EPS));
    }
    x
}

/// Truncate a sequence of row indices to the most recent `max_seq_len`.
pub fn truncate_rows(rows: &[usize], max_seq_len: usize) -> &[usize] {
    &rows[rows.len().saturating_sub(max_seq_len)..]
}

/// Query/key/value/output projections of the cross-domain fuser.
#[derive(Debug, Clone)]
pub struct CrossAttentionFuser {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub d: usize,
}

impl CrossAttentionFuser {
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        let mut u = |suffix: &str| {
            store.register_uniform(format!("{name}.{suffix}"), d, d, LrGroup::General, rng)
        };
        Self { wq: u("wq"), wk: u("wk"), wv: u("wv"), wo: u("wo"), d }
    }
}

/// Fusion output: per-position fused target states plus the attention weights
/// (rows sum to 1) for diagnostics.
pub struct CrossFusion {
    pub fused: Var,
    pub weights: Var,
}

/// Every target position attends over all source positions (scaled
/// dot-product, no causal mask across domains); the output projection of the
/// readout is added residually to the target states.
pub fn cross_attention_fuse<T: Scalar>(
    bound: &mut Bound<T>,
    fuser: &CrossAttentionFuser,
    target_states: Var,
    source_states: Var,
    dropout: &mut Option<DropoutCtx<'_>>,
) -> CrossFusion {
    assert!(bound.tape.value(target_states).rows > 0, "empty target states");
    assert!(bound.tape.value(source_states).rows > 0, "empty source states");
    let scale = T::of(1.0 / (fuser.d as f64).sqrt());
    let wq = bound.var(fuser.wq);
    let wk = bound.var(fuser.wk);
    let wv = bound.var(fuser.wv);
    let wo = bound.var(fuser.wo);
    let q = bound.tape.matmul(target_states, wq);
    let k = bound.tape.matmul(source_states, wk);
    let v = bound.tape.matmul(source_states, wv);
    let scores = bound.tape.matmul_transpose_b(q, k);
    let scores = bound.tape.scale_const(scores, scale);
    let weights = bound.tape.softmax_rows(scores);
    let dropped = bound.maybe_dropout(weights, dropout);
    let readout = bound.tape.matmul(dropped, v);
    let projected = bound.tape.matmul(readout, wo);
    let fused = bound.tape.add(target_states, projected);
    CrossFusion { fused, weights }
}
