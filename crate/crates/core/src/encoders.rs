//! Gated recurrent encoders for videos and captions.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::{VideoFeatures, PAD};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Affine map `W x + b`; the bias is optional.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    /// Weights uniform in `±bound`, bias zero.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bound: f64,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), output, input, bound, rng);
        let bias = bias.then(|| store.add_zeros(format!("{name}.bias"), output, 1));
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let w = g.param(self.weight);
        let y = g.matvec(w, x);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add(y, b)
            }
            None => y,
        }
    }
}

/// Single-layer GRU cell:
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrt(hidden as f64);
        GruCell {
            w_ih: store.add_uniform(format!("{name}.w_ih"), 3 * hidden, input, bound, rng),
            w_hh: store.add_uniform(format!("{name}.w_hh"), 3 * hidden, hidden, bound, rng),
            b_ih: store.add_zeros(format!("{name}.b_ih"), 3 * hidden, 1),
            b_hh: store.add_zeros(format!("{name}.b_hh"), 3 * hidden, 1),
            input,
            hidden,
        }
    }

    pub fn step(&self, g: &mut Graph, x: NodeId, h: NodeId) -> NodeId {
        let d = self.hidden;
        let gi = g.linear(self.w_ih, self.b_ih, x);
        let gh = g.linear(self.w_hh, self.b_hh, h);
        let (ir, iz, inn) = (g.slice(gi, 0, d), g.slice(gi, d, d), g.slice(gi, 2 * d, d));
        let (hr, hz, hn) = (g.slice(gh, 0, d), g.slice(gh, d, d), g.slice(gh, 2 * d, d));
        let r = g.add(ir, hr);
        let r = g.sigmoid(r);
        let z = g.add(iz, hz);
        let z = g.sigmoid(z);
        let rh = g.mul(r, hn);
        let n = g.add(inn, rh);
        let n = g.tanh(n);
        let keep = g.mul(z, h);
        let one_minus_z = g.one_minus(z);
        let new = g.mul(one_minus_z, n);
        g.add(new, keep)
    }
}

/// Per-step outputs and hidden states of one sequence. `outputs` is a
/// `T × d` matrix node; `hiddens[t]` is the state after step `t + 1`.
#[derive(Debug, Clone)]
pub struct EncodedSequence {
    pub outputs: NodeId,
    pub hiddens: Vec<NodeId>,
    pub final_hidden: NodeId,
}

impl EncodedSequence {
    pub fn steps(&self) -> usize {
        self.hiddens.len()
    }

    /// Hidden states as a `T × d` matrix.
    pub fn hidden_matrix(&self, g: &Graph) -> Tensor {
        let d = g.value(self.final_hidden).len();
        let mut data = Vec::with_capacity(self.hiddens.len() * d);
        for &h in &self.hiddens {
            data.extend_from_slice(g.value(h).data());
        }
        Tensor::from_vec(self.hiddens.len(), d, data)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderParams {
    pub video_proj: Linear,
    pub video_gru: GruCell,
    /// `V × d`, shared with the decoder.
    pub embedding: ParamId,
    pub caption_gru: GruCell,
    pub feature_dim: usize,
    pub hidden: usize,
    pub vocab_size: usize,
}

impl EncoderParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        feature_dim: usize,
        hidden: usize,
        vocab_size: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / libm::sqrt(hidden as f64);
        EncoderParams {
            video_proj: Linear::new(store, "enc.video_proj", feature_dim, hidden, bound, true, rng),
            video_gru: GruCell::new(store, "enc.video_gru", hidden, hidden, rng),
            embedding: store.add_normal("enc.embedding", vocab_size, hidden, rng),
            caption_gru: GruCell::new(store, "enc.caption_gru", hidden, hidden, rng),
            feature_dim,
            hidden,
            vocab_size,
        }
    }
}

/// Projects each feature row to `d` and runs the video GRU. The outputs are
/// the projected rows.
pub fn encode_video(g: &mut Graph, features: &VideoFeatures, p: &EncoderParams) -> Result<EncodedSequence> {
    if features.dim() != p.feature_dim {
        return Err(Error::shape(
            "encode_video",
            format!("T x {}", p.feature_dim),
            format!("{} x {}", features.steps(), features.dim()),
        ));
    }
    let f = g.input(features.values().clone());
    encode_video_node(g, f, p)
}

/// As [`encode_video`], for a feature matrix already on the graph.
pub fn encode_video_node(g: &mut Graph, features: NodeId, p: &EncoderParams) -> Result<EncodedSequence> {
    let (steps, dim) = g.value(features).shape();
    if dim != p.feature_dim || steps < 2 {
        return Err(Error::shape(
            "encode_video",
            format!("T>=2 x {}", p.feature_dim),
            format!("{steps} x {dim}"),
        ));
    }
    let mut h = g.constant_vec(alloc::vec![0.0; p.hidden]);
    let mut xs = Vec::with_capacity(steps);
    let mut hiddens = Vec::with_capacity(steps);
    for t in 0..steps {
        let row = g.row(features, t);
        let x = p.video_proj.forward(g, row);
        h = p.video_gru.step(g, x, h);
        xs.push(x);
        hiddens.push(h);
    }
    let outputs = g.stack(&xs);
    Ok(EncodedSequence {
        outputs,
        hiddens,
        final_hidden: h,
    })
}

/// Embedding lookup.
pub fn embed(g: &mut Graph, p: &EncoderParams, token: usize) -> NodeId {
    let e = g.param(p.embedding);
    g.row(e, token)
}

/// Embeds the tokens and runs the caption GRU. Trailing `PAD`s are allowed:
/// the state is carried through them unchanged, so `final_hidden` is the
/// state at the last non-`PAD` step. Outputs are the token embeddings.
pub fn encode_caption(g: &mut Graph, tokens: &[usize], p: &EncoderParams) -> Result<EncodedSequence> {
    let len = tokens.iter().rposition(|&t| t != PAD).map_or(0, |i| i + 1);
    if len == 0 {
        return Err(Error::EmptyTarget);
    }
    if tokens[..len].contains(&PAD) {
        return Err(Error::invalid("caption", "PAD before the last token"));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= p.vocab_size) {
        return Err(Error::invalid(
            "caption",
            format!("token id {bad} outside vocabulary of {}", p.vocab_size),
        ));
    }
    let mut h = g.constant_vec(alloc::vec![0.0; p.hidden]);
    let mut xs = Vec::with_capacity(tokens.len());
    let mut hiddens = Vec::with_capacity(tokens.len());
    let mut final_hidden = h;
    for (t, &tok) in tokens.iter().enumerate() {
        let x = embed(g, p, tok);
        if t < len {
            h = p.caption_gru.step(g, x, h);
            final_hidden = h;
        }
        xs.push(x);
        hiddens.push(h);
    }
    let outputs = g.stack(&xs[..len]);
    Ok(EncodedSequence {
        outputs,
        hiddens,
        final_hidden,
    })
}

/// Encodes a batch of captions padded to a common length.
pub fn encode_caption_batch(
    g: &mut Graph,
    batch: &[&[usize]],
    p: &EncoderParams,
) -> Result<Vec<EncodedSequence>> {
    let width = batch.iter().map(|b| b.len()).max().unwrap_or(0);
    batch
        .iter()
        .map(|b| {
            let mut padded = b.to_vec();
            padded.resize(width, PAD);
            encode_caption(g, &padded, p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BOS, EOS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(k: usize, d: usize, v: usize) -> (ParamStore, EncoderParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let p = EncoderParams::new(&mut store, k, d, v, &mut rng);
        // Non-zero biases so the gradient check covers them.
        for id in store.ids().collect::<Vec<_>>() {
            if store.name(id).contains("b_") || store.name(id).ends_with("bias") {
                for (i, x) in store.get_mut(id).data_mut().iter_mut().enumerate() {
                    *x = 0.01 * (i % 7) as f64 - 0.03;
                }
            }
        }
        (store, p)
    }

    #[test]
    fn video_shapes_at_paper_width() {
        let (store, p) = setup(32, 512, 8);
        let mut g = Graph::new(&store);
        let feats = VideoFeatures::new(Tensor::from_vec(64, 32, (0..64 * 32).map(|i| (i % 13) as f64 * 0.1).collect()), 64.0).unwrap();
        let enc = encode_video(&mut g, &feats, &p).unwrap();
        assert_eq!(g.value(enc.outputs).shape(), (64, 512));
        assert_eq!(enc.hidden_matrix(&g).shape(), (64, 512));
        assert_eq!(g.value(enc.final_hidden), g.value(enc.hiddens[63]));
    }

    #[test]
    fn dimension_mismatch_names_shapes() {
        let (store, p) = setup(32, 8, 8);
        let mut g = Graph::new(&store);
        let feats = VideoFeatures::new(Tensor::zeros(5, 7), 5.0).unwrap();
        let err = encode_video(&mut g, &feats, &p).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn padding_does_not_change_final_hidden() {
        let (store, p) = setup(4, 6, 10);
        let mut g = Graph::new(&store);
        let short = encode_caption(&mut g, &[BOS, 5, EOS], &p).unwrap();
        let padded = encode_caption(&mut g, &[BOS, 5, EOS, PAD, PAD], &p).unwrap();
        assert_eq!(g.value(short.final_hidden).data(), g.value(padded.final_hidden).data());
        let batch = encode_caption_batch(&mut g, &[&[BOS, 5, 6, EOS], &[BOS, 5, 6, 7, 8, EOS]], &p).unwrap();
        assert_eq!(batch[0].hiddens.len(), 6);
        assert_eq!(g.value(batch[0].final_hidden), g.value(batch[0].hiddens[3]));
        assert_ne!(g.value(batch[1].final_hidden), g.value(batch[1].hiddens[3]));
    }

    #[test]
    fn final_hidden_gradient_matches_finite_difference() {
        let (store, p) = setup(3, 5, 9);
        let proj = [0.3, -0.7, 0.2, 0.9, -0.4];
        let feats = VideoFeatures::new(Tensor::from_vec(4, 3, (0..12).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.6).collect()), 4.0).unwrap();
        let loss = |store: &ParamStore| {
            let mut g = Graph::new(store);
            let v = encode_video(&mut g, &feats, &p).unwrap();
            let c = encode_caption(&mut g, &[BOS, 4, 7, EOS], &p).unwrap();
            let s = g.add(v.final_hidden, c.final_hidden);
            let w = g.constant_vec(proj.to_vec());
            let l = g.dot(s, w);
            let grads = g.param_grads(&g.backward(l));
            (g.scalar(l), grads)
        };
        let (_, grads) = loss(&store);
        let eps = 1e-4;
        for id in store.ids() {
            let n = store.get(id).len();
            for idx in [0, n / 2, n - 1] {
                let mut plus = store.clone();
                plus.get_mut(id).data_mut()[idx] += eps;
                let mut minus = store.clone();
                minus.get_mut(id).data_mut()[idx] -= eps;
                let num = (loss(&plus).0 - loss(&minus).0) / (2.0 * eps);
                let ana = grads.get(id).map_or(0.0, |t| t.data()[idx]);
                let denom = num.abs().max(ana.abs()).max(1e-8);
                assert!(
                    (num - ana).abs() / denom < 1e-3 || (num - ana).abs() < 1e-9,
                    "{} [{idx}]: {ana} vs {num}",
                    store.name(id)
                );
            }
        }
    }
}
