//! Caption generator: soft temporal mask, masked mean pooling and a GRU
//! decoder seeded with the video hidden state at the segment's end.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::{BOS, EOS};
use crate::encoders::{embed, EncodedSequence, EncoderParams, GruCell, Linear};
use crate::error::{Error, Result};
use crate::graph::{self, Graph, NodeId, Pooled};
use crate::math;
use crate::params::ParamStore;
use crate::segment::TemporalSegment;
use crate::tensor::{axpy, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    pub k: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig { k: 50.0 }
    }
}

impl MaskConfig {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::invalid("mask sharpness", alloc::format!("K must be positive, got {k}")));
        }
        Ok(MaskConfig { k })
    }
}

/// Mask weight at normalized time `t`: near 1 inside `[m − w/2, m + w/2]`,
/// near 0 outside.
pub fn soft_mask(t: f64, segment: TemporalSegment, cfg: MaskConfig) -> f64 {
    graph::soft_mask_value(t, segment.m, segment.w, cfg.k)
}

/// Mask-weighted mean of the feature rows, where row `t` (0-based) sits at
/// time `(t + 1)/T`. Returns the context and whether the mask was empty and
/// the plain mean was used.
pub fn masked_pool(features: &Tensor, segment: TemporalSegment, cfg: MaskConfig) -> (Vec<f64>, bool) {
    let steps = features.rows();
    let mask: Vec<f64> = (1..=steps)
        .map(|t| soft_mask(t as f64 / steps as f64, segment, cfg))
        .collect();
    let sum: f64 = mask.iter().sum();
    let mut ctx = vec![0.0; features.cols()];
    if !(sum >= graph::MASK_SUM_FLOOR) {
        for t in 0..steps {
            axpy(1.0 / steps as f64, features.row(t), &mut ctx);
        }
        return (ctx, true);
    }
    for (t, &mt) in mask.iter().enumerate() {
        axpy(mt / sum, features.row(t), &mut ctx);
    }
    (ctx, false)
}

/// [`masked_pool`] on the graph, differentiable in the segment.
pub fn masked_pool_node(g: &mut Graph, features: NodeId, m: NodeId, w: NodeId, cfg: MaskConfig) -> Pooled {
    g.masked_pool(features, m, w, cfg.k)
}

/// Row index (0-based) of the video hidden state at the segment's end:
/// `round(clamp(m + w/2, 0, 1) · T)` clamped to `[1, T]`, minus one.
pub fn init_hidden_index(segment: TemporalSegment, steps: usize) -> usize {
    let end = (segment.m + 0.5 * segment.w).clamp(0.0, 1.0);
    let idx = (math::round(end * steps as f64) as usize).clamp(1, steps);
    idx - 1
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderParams {
    pub gru: GruCell,
    pub context: Linear,
    pub output: Linear,
    pub feature_dim: usize,
    pub hidden: usize,
    pub vocab_size: usize,
}

impl DecoderParams {
    pub fn new<R: Rng>(store: &mut ParamStore, feature_dim: usize, hidden: usize, vocab_size: usize, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrt(hidden as f64);
        DecoderParams {
            gru: GruCell::new(store, "dec.gru", 2 * hidden, hidden, rng),
            context: Linear::new(store, "dec.context", feature_dim, hidden, bound, true, rng),
            output: Linear::new(store, "dec.output", hidden, vocab_size, bound, true, rng),
            feature_dim,
            hidden,
            vocab_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode<'a> {
    /// Feed `tokens[..n−1]`, predict `tokens[1..]`.
    TeacherForced(&'a [usize]),
    Greedy,
    /// Sample from `softmax(logits / temperature)`.
    Sampled { temperature: f64, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct Decoded {
    /// One logits node per predicted position.
    pub logits: Vec<NodeId>,
    /// Teacher-forced: the targets. Otherwise `BOS … EOS`.
    pub tokens: Vec<usize>,
    /// Free-running decode stopped at the length limit without EOS.
    pub truncated: bool,
}

impl Decoded {
    /// No tokens between the sentinels.
    pub fn is_empty_caption(&self) -> bool {
        self.tokens.len() <= 2
    }
}

/// Runs the decoder from `init_hidden`, concatenating the projected context
/// to every input embedding. Free-running modes stop at EOS or after
/// `max_len` tokens including the sentinels.
pub fn decode(
    g: &mut Graph,
    context: NodeId,
    init_hidden: NodeId,
    mode: DecodeMode<'_>,
    enc: &EncoderParams,
    dec: &DecoderParams,
    max_len: usize,
) -> Result<Decoded> {
    let ctx_len = g.value(context).len();
    if ctx_len != dec.feature_dim {
        return Err(Error::shape("decode", alloc::format!("context {}", dec.feature_dim), alloc::format!("{ctx_len}")));
    }
    let c = dec.context.forward(g, context);
    let mut h = init_hidden;
    let mut logits = Vec::new();
    match mode {
        DecodeMode::TeacherForced(tokens) => {
            if tokens.len() < 2 {
                return Err(Error::EmptyTarget);
            }
            for &tok in &tokens[..tokens.len() - 1] {
                let x = embed(g, enc, tok);
                let input = g.concat(&[x, c]);
                h = dec.gru.step(g, input, h);
                logits.push(dec.output.forward(g, h));
            }
            Ok(Decoded {
                logits,
                tokens: tokens[1..].to_vec(),
                truncated: false,
            })
        }
        DecodeMode::Greedy | DecodeMode::Sampled { .. } => {
            let mut rng = match mode {
                DecodeMode::Sampled { seed, .. } => Some(<rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed)),
                _ => None,
            };
            let mut tokens = vec![BOS];
            let mut tok = BOS;
            let limit = max_len.max(2) - 1;
            while tokens.len() < limit {
                let x = embed(g, enc, tok);
                let input = g.concat(&[x, c]);
                h = dec.gru.step(g, input, h);
                let l = dec.output.forward(g, h);
                logits.push(l);
                let values = g.value(l).data();
                tok = match (&mode, rng.as_mut()) {
                    (DecodeMode::Sampled { temperature, .. }, Some(r)) => sample(values, *temperature, r),
                    _ => math::argmax(values),
                };
                tokens.push(tok);
                if tok == EOS {
                    break;
                }
            }
            let truncated = tok != EOS;
            if truncated {
                tokens.push(EOS);
            }
            // Sentinels other than the final EOS never appear in a caption body.
            let n = tokens.len();
            for t in &mut tokens[1..n - 1] {
                if *t < crate::data::NUM_SPECIALS {
                    *t = crate::data::UNK;
                }
            }
            Ok(Decoded {
                logits,
                tokens,
                truncated,
            })
        }
    }
}

fn sample<R: Rng>(logits: &[f64], temperature: f64, rng: &mut R) -> usize {
    let t = temperature.max(1e-6);
    let scaled: Vec<f64> = logits.iter().map(|x| x / t).collect();
    let lse = math::log_sum_exp(&scaled);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, s) in scaled.iter().enumerate() {
        acc += math::exp(s - lse);
        if u < acc {
            return i;
        }
    }
    scaled.len() - 1
}

/// Pools the segment and decodes: the whole generator `g(V, S)` with the
/// segment given as graph nodes.
#[allow(clippy::too_many_arguments)]
pub fn caption_segment(
    g: &mut Graph,
    features: NodeId,
    venc: &EncodedSequence,
    m: NodeId,
    w: NodeId,
    mode: DecodeMode<'_>,
    enc: &EncoderParams,
    dec: &DecoderParams,
    cfg: MaskConfig,
    max_len: usize,
) -> Result<(Decoded, Pooled)> {
    let pooled = masked_pool_node(g, features, m, w, cfg);
    let seg = TemporalSegment::new(g.scalar(m), g.scalar(w));
    let h0 = venc.hiddens[init_hidden_index(seg, venc.steps())];
    let decoded = decode(g, pooled.node, h0, mode, enc, dec, max_len)?;
    Ok((decoded, pooled))
}
