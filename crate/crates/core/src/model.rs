//! The full model: shared encoders, the localizer head and the decoder.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::captioner::{caption_segment, DecodeMode, Decoded, DecoderParams, MaskConfig};
use crate::data::{VideoFeatures, DEFAULT_MAX_CAPTION_LEN};
use crate::encoders::{encode_caption, encode_video_node, EncodedSequence, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Pooled};
use crate::localizer::{localize_with, AnchorSet, HeadInit, Localization, LocalizerHead, DEFAULT_SCALES};
use crate::params::ParamStore;
use crate::segment::TemporalSegment;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub vocab_size: usize,
    pub anchor_scales: Vec<f64>,
    pub mask_k: f64,
    pub max_caption_len: usize,
    pub attention_init_scale: f64,
    pub zero_classifier: bool,
    pub position_basis: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 32,
            hidden: 512,
            vocab_size: 6000,
            anchor_scales: DEFAULT_SCALES.to_vec(),
            mask_k: 50.0,
            max_caption_len: DEFAULT_MAX_CAPTION_LEN,
            attention_init_scale: 0.05,
            zero_classifier: true,
            position_basis: 16,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: alloc::string::String| Err(Error::invalid("model config", reason));
        if self.feature_dim == 0 || self.hidden == 0 || self.position_basis == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.vocab_size < crate::data::NUM_SPECIALS + 1 {
            return bad(format!("vocab_size must be at least 5, got {}", self.vocab_size));
        }
        if self.max_caption_len < 2 {
            return bad("max_caption_len must be at least 2".into());
        }
        if !(self.attention_init_scale >= 0.0 && self.attention_init_scale.is_finite()) {
            return bad("attention_init_scale must be finite and non-negative".into());
        }
        MaskConfig::new(self.mask_k)?;
        AnchorSet::new(&self.anchor_scales)?;
        Ok(())
    }

    pub fn mask(&self) -> MaskConfig {
        MaskConfig { k: self.mask_k }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoders: EncoderParams,
    pub head: LocalizerHead,
    pub decoder: DecoderParams,
    pub anchors: AnchorSet,
}

/// A video on the graph: its feature matrix node and its encoding.
#[derive(Debug, Clone)]
pub struct VideoGraph {
    pub features: NodeId,
    pub encoded: EncodedSequence,
}

impl Model {
    /// Parameters are drawn in a fixed order from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let anchors = AnchorSet::new(&config.anchor_scales)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let (k, d, v) = (config.feature_dim, config.hidden, config.vocab_size);
        let encoders = EncoderParams::new(&mut params, k, d, v, &mut rng);
        let init = HeadInit {
            attention_scale: config.attention_init_scale,
            zero_classifier: config.zero_classifier,
            position_basis: config.position_basis,
        };
        let head = LocalizerHead::new(&mut params, d, anchors.len(), init, &mut rng);
        let decoder = DecoderParams::new(&mut params, k, d, v, &mut rng);
        Ok(Model {
            config,
            params,
            encoders,
            head,
            decoder,
            anchors,
        })
    }

    pub fn encode_video(&self, g: &mut Graph, features: &VideoFeatures) -> Result<VideoGraph> {
        self.check_inputs(features, &[])?;
        let f = g.input(features.values().clone());
        let encoded = encode_video_node(g, f, &self.encoders)?;
        Ok(VideoGraph { features: f, encoded })
    }

    pub fn encode_caption(&self, g: &mut Graph, tokens: &[usize]) -> Result<EncodedSequence> {
        encode_caption(g, tokens, &self.encoders)
    }

    /// `l(V, C)`.
    pub fn localize(&self, g: &mut Graph, video: &VideoGraph, tokens: &[usize]) -> Result<Localization> {
        let cenc = self.encode_caption(g, tokens)?;
        localize_with(g, &video.encoded, &cenc, &self.head, &self.anchors, None)
    }

    /// `g(V, S)` with the segment as graph nodes.
    pub fn caption(
        &self,
        g: &mut Graph,
        video: &VideoGraph,
        m: NodeId,
        w: NodeId,
        mode: DecodeMode<'_>,
    ) -> Result<(Decoded, Pooled)> {
        caption_segment(
            g,
            video.features,
            &video.encoded,
            m,
            w,
            mode,
            &self.encoders,
            &self.decoder,
            self.config.mask(),
            self.config.max_caption_len,
        )
    }

    /// `g(V, S)` for a constant segment.
    pub fn caption_at(
        &self,
        g: &mut Graph,
        video: &VideoGraph,
        segment: TemporalSegment,
        mode: DecodeMode<'_>,
    ) -> Result<(Decoded, Pooled)> {
        let m = g.constant_scalar(segment.m);
        let w = g.constant_scalar(segment.w);
        self.caption(g, video, m, w, mode)
    }

    /// Checks that a feature matrix and a token sequence fit this model.
    pub fn check_inputs(&self, features: &VideoFeatures, tokens: &[usize]) -> Result<()> {
        if features.dim() != self.config.feature_dim {
            return Err(Error::shape(
                "model input",
                format!("feature dim {}", self.config.feature_dim),
                format!("{}", features.dim()),
            ));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::invalid("caption", format!("token {t} outside vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }
}
