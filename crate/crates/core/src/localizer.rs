//! Sentence localizer: crossing attention between a video and a caption,
//! feature fusion, anchor classification and bounded offset regression.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::encoders::{EncodedSequence, Linear};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::math;
use crate::params::{ParamId, ParamStore};
use crate::segment::{TemporalSegment, MIN_WIDTH};
use crate::tensor::Tensor;

/// Anchor segments over several scales, coarse to fine, centers ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    scales: Vec<f64>,
    anchors: Vec<TemporalSegment>,
}

pub const DEFAULT_SCALES: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

impl AnchorSet {
    /// For each width `w` the centers run from `w/2` to `1 − w/2` in steps of
    /// `w/2`.
    pub fn new(scales: &[f64]) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::invalid("anchor scales", "empty"));
        }
        for pair in scales.windows(2) {
            if pair[1] >= pair[0] {
                return Err(Error::invalid("anchor scales", "must be strictly descending"));
            }
        }
        let mut anchors = Vec::new();
        for &w in scales {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::invalid("anchor scales", format!("{w} is outside (0, 1]")));
            }
            let stride = 0.5 * w;
            let count = math::floor((1.0 - w) / stride + 1e-9) as usize + 1;
            for i in 0..count {
                anchors.push(TemporalSegment::new(stride + i as f64 * stride, w));
            }
        }
        Ok(AnchorSet {
            scales: scales.to_vec(),
            anchors,
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn anchors(&self) -> &[TemporalSegment] {
        &self.anchors
    }

    pub fn get(&self, i: usize) -> TemporalSegment {
        self.anchors[i]
    }
}

/// Parameters of the localizer head.
///
/// Video attention scores compare the caption's final hidden state with the
/// projected frame features; the attended value of frame `t` is a learned
/// embedding of its position `t / T`, expanded in a basis of Gaussian bumps.
#[derive(Debug, Clone, Copy)]
pub struct LocalizerHead {
    pub a_c: ParamId,
    pub a_v: ParamId,
    pub position: ParamId,
    pub fuse: Linear,
    pub classifier: Linear,
    pub regressor: Linear,
    pub hidden: usize,
    pub num_anchors: usize,
    pub position_basis: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadInit {
    /// Scale applied to the default `±1/√d` bound of the attention matrices.
    pub attention_scale: f64,
    /// Start the anchor classifier at zero, so every anchor ties.
    pub zero_classifier: bool,
    pub position_basis: usize,
}

impl Default for HeadInit {
    fn default() -> Self {
        HeadInit {
            attention_scale: 0.05,
            zero_classifier: true,
            position_basis: 16,
        }
    }
}

impl LocalizerHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        hidden: usize,
        num_anchors: usize,
        init: HeadInit,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / libm::sqrt(hidden as f64);
        let a_c = store.add_uniform("loc.a_c", hidden, hidden, bound * init.attention_scale, rng);
        let a_v = store.add_uniform("loc.a_v", hidden, hidden, bound * init.attention_scale, rng);
        let position = store.add_uniform(
            "loc.position",
            hidden,
            init.position_basis,
            1.0 / libm::sqrt(init.position_basis as f64),
            rng,
        );
        let fuse = Linear::new(store, "loc.fuse", 2 * hidden, hidden, bound, true, rng);
        let cls_bound = if init.zero_classifier { 0.0 } else { bound };
        let classifier = Linear::new(store, "loc.classifier", 3 * hidden, num_anchors, cls_bound, true, rng);
        let regressor = Linear::new(store, "loc.regressor", 3 * hidden, 2, bound, true, rng);
        LocalizerHead {
            a_c,
            a_v,
            position,
            fuse,
            classifier,
            regressor,
            hidden,
            num_anchors,
            position_basis: init.position_basis,
        }
    }
}

/// `T × P` matrix of Gaussian bumps centred at `(j + ½)/P` with width `1/P`,
/// evaluated at `t / T` for `t = 1..T`.
pub fn position_basis(steps: usize, size: usize) -> Tensor {
    let mut out = Tensor::zeros(steps, size);
    for t in 0..steps {
        let x = (t + 1) as f64 / steps as f64;
        for j in 0..size {
            let c = (j as f64 + 0.5) / size as f64;
            let z = (x - c) * size as f64;
            out.set(t, j, math::exp(-0.5 * z * z));
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub f_c: NodeId,
    pub f_v: NodeId,
    /// Softmax weights over caption steps.
    pub caption_weights: NodeId,
    /// Softmax weights over video steps.
    pub video_weights: NodeId,
}

/// `f_c = softmax(h_vᵀ A_c Cᵀ) C` and `f_v = softmax(h_cᵀ A_v Vᵀ) P(t)`.
pub fn crossing_attention(
    g: &mut Graph,
    venc: &EncodedSequence,
    cenc: &EncodedSequence,
    head: &LocalizerHead,
) -> Result<Attention> {
    let d = head.hidden;
    for (what, node) in [("video", venc.outputs), ("caption", cenc.outputs)] {
        let cols = g.value(node).cols();
        if cols != d {
            return Err(Error::shape(
                "crossing_attention",
                format!("{what} width {d}"),
                format!("{cols}"),
            ));
        }
    }
    let a_c = g.param(head.a_c);
    let u = g.matvec_t(a_c, venc.final_hidden);
    let scores = g.matvec(cenc.outputs, u);
    let caption_weights = g.softmax(scores);
    let f_c = g.matvec_t(cenc.outputs, caption_weights);

    let a_v = g.param(head.a_v);
    let u = g.matvec_t(a_v, cenc.final_hidden);
    let scores = g.matvec(venc.outputs, u);
    let video_weights = g.softmax(scores);
    let steps = g.value(venc.outputs).rows();
    let basis = g.input(position_basis(steps, head.position_basis));
    let mix = g.matvec_t(basis, video_weights);
    let pos = g.param(head.position);
    let f_v = g.matvec(pos, mix);
    Ok(Attention {
        f_c,
        f_v,
        caption_weights,
        video_weights,
    })
}

/// `(f_c + f_v) ∥ (f_c ⊙ f_v) ∥ FC(f_c ∥ f_v)`.
pub fn fuse_features(g: &mut Graph, f_c: NodeId, f_v: NodeId, head: &LocalizerHead) -> NodeId {
    let sum = g.add(f_c, f_v);
    let prod = g.mul(f_c, f_v);
    let pair = g.concat(&[f_c, f_v]);
    let proj = head.fuse.forward(g, pair);
    g.concat(&[sum, prod, proj])
}

#[derive(Debug, Clone, Copy)]
pub struct Localization {
    /// Scalar nodes of the clamped center and width.
    pub m: NodeId,
    pub w: NodeId,
    pub anchor_logits: NodeId,
    pub anchor: usize,
    pub delta_m: NodeId,
    pub delta_w: NodeId,
}

impl Localization {
    pub fn segment(&self, g: &Graph) -> TemporalSegment {
        TemporalSegment::new(g.scalar(self.m), g.scalar(self.w))
    }
}

/// Adds the bounded regression offset to the best-scoring anchor and clamps
/// the result to a valid segment. `anchor` overrides the argmax choice.
pub fn localize_with(
    g: &mut Graph,
    venc: &EncodedSequence,
    cenc: &EncodedSequence,
    head: &LocalizerHead,
    anchors: &AnchorSet,
    anchor: Option<usize>,
) -> Result<Localization> {
    if anchors.len() != head.num_anchors {
        return Err(Error::shape(
            "localize",
            format!("{} anchors", head.num_anchors),
            format!("{}", anchors.len()),
        ));
    }
    let att = crossing_attention(g, venc, cenc, head)?;
    let fused = fuse_features(g, att.f_c, att.f_v, head);
    let anchor_logits = head.classifier.forward(g, fused);
    let idx = match anchor {
        Some(i) => i,
        None => math::argmax(g.value(anchor_logits).data()),
    };
    let a = anchors.get(idx);
    let raw = head.regressor.forward(g, fused);
    let bounded = g.softsign(raw);
    let delta = g.scale(bounded, 0.5 * a.w);
    let delta_m = g.slice(delta, 0, 1);
    let delta_w = g.slice(delta, 1, 1);
    let m = g.add_const(delta_m, a.m);
    let m = g.clamp(m, 0.0, 1.0);
    let w = g.add_const(delta_w, a.w);
    let w = g.clamp(w, MIN_WIDTH, 1.0);
    Ok(Localization {
        m,
        w,
        anchor_logits,
        anchor: idx,
        delta_m,
        delta_w,
    })
}

pub fn localize(
    g: &mut Graph,
    venc: &EncodedSequence,
    cenc: &EncodedSequence,
    head: &LocalizerHead,
    anchors: &AnchorSet,
) -> Result<Localization> {
    localize_with(g, venc, cenc, head, anchors, None)
}
