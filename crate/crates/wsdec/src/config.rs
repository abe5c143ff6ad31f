//! Run configuration as flat `key = value` text with dotted keys. Blank lines
//! and lines starting with `#` are ignored; unknown keys are rejected.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use wsdec_core::inference::InferenceConfig;
use wsdec_core::metrics::{default_recall_grid, CAPTION_THRESHOLDS, LOCALIZATION_SIGMAS};
use wsdec_core::model::ModelConfig;
use wsdec_core::synth::SynthSpec;
use wsdec_core::training::TrainConfig;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub caption_thresholds: Vec<f64>,
    pub localization_sigmas: Vec<f64>,
    pub recall_grid: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            caption_thresholds: CAPTION_THRESHOLDS.to_vec(),
            localization_sigmas: LOCALIZATION_SIGMAS.to_vec(),
            recall_grid: default_recall_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub synth: SynthSpec,
    /// Held-out videos written next to the training split.
    pub num_test: usize,
    pub vocab_cap: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub infer: InferenceConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            synth: SynthSpec::default(),
            num_test: 100,
            vocab_cap: 6000,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            infer: InferenceConfig::default(),
            eval: EvalConfig::default(),
            paths: Paths::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

/// Model settings as `key = value` pairs. `model.vocab_size` is derived
/// from the vocabulary file, so it only appears in checkpoints.
pub fn model_entries(m: &ModelConfig) -> Vec<(&'static str, String)> {
    vec![
        ("model.feature_dim", m.feature_dim.to_string()),
        ("model.hidden", m.hidden.to_string()),
        ("model.anchor_scales", list(&m.anchor_scales)),
        ("model.mask_k", m.mask_k.to_string()),
        ("model.max_caption_len", m.max_caption_len.to_string()),
        ("model.attention_init_scale", m.attention_init_scale.to_string()),
        ("model.zero_classifier", m.zero_classifier.to_string()),
        ("model.position_basis", m.position_basis.to_string()),
        ("model.init_seed", m.init_seed.to_string()),
    ]
}

pub fn set_model(m: &mut ModelConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "model.feature_dim" => m.feature_dim = parse(key, value)?,
        "model.hidden" => m.hidden = parse(key, value)?,
        "model.vocab_size" => m.vocab_size = parse(key, value)?,
        "model.anchor_scales" => m.anchor_scales = parse_list(key, value)?,
        "model.mask_k" => m.mask_k = parse(key, value)?,
        "model.max_caption_len" => m.max_caption_len = parse(key, value)?,
        "model.attention_init_scale" => m.attention_init_scale = parse(key, value)?,
        "model.zero_classifier" => m.zero_classifier = parse(key, value)?,
        "model.position_basis" => m.position_basis = parse(key, value)?,
        "model.init_seed" => m.init_seed = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Hex SHA-256 of the model settings including the vocabulary size.
pub fn model_hash(m: &ModelConfig) -> String {
    let mut h = Sha256::new();
    for (k, v) in model_entries(m) {
        h.update(format!("{k}={v}\n"));
    }
    h.update(format!("model.vocab_size={}\n", m.vocab_size));
    hex::encode(h.finalize())
}

impl RunConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        let t = &self.train;
        let i = &self.infer;
        let mut out = vec![
            ("synth.num_videos", s.num_videos.to_string()),
            ("synth.num_test", self.num_test.to_string()),
            ("synth.steps", s.steps.to_string()),
            ("synth.dim", s.dim.to_string()),
            ("synth.event_types", s.num_event_types.to_string()),
            ("synth.events_min", s.events_per_video.0.to_string()),
            ("synth.events_max", s.events_per_video.1.to_string()),
            ("synth.noise_std", s.background_noise_std.to_string()),
            ("synth.signature_scale", s.signature_scale.to_string()),
            ("synth.seconds_per_step", s.seconds_per_step.to_string()),
            ("synth.seed", s.seed.to_string()),
            ("data.vocab_cap", self.vocab_cap.to_string()),
        ];
        out.extend(model_entries(&self.model));
        out.extend([
            ("train.lr", t.lr.to_string()),
            ("train.momentum", t.momentum.to_string()),
            ("train.clip_norm", t.clip_norm.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lambda_s", t.weights.lambda_s.to_string()),
            ("train.lambda_a", t.weights.lambda_a.to_string()),
            ("train.sigma", t.weights.sigma.to_string()),
            ("train.pretrain_epochs", t.pretrain_epochs.to_string()),
            ("train.stage1_epochs", t.stage1_epochs.to_string()),
            ("train.stage2_epochs", t.stage2_epochs.to_string()),
            ("train.seed", t.seed.to_string()),
            ("infer.num_proposals", i.num_proposals.to_string()),
            ("infer.keep_threshold", i.iou_keep_threshold.to_string()),
            ("infer.max_rounds", i.max_rounds.to_string()),
            ("infer.merge_threshold", i.merge_threshold.to_string()),
            ("infer.min_width", i.min_width.to_string()),
            ("infer.seed", i.seed.to_string()),
            ("eval.caption_thresholds", list(&self.eval.caption_thresholds)),
            ("eval.localization_sigmas", list(&self.eval.localization_sigmas)),
            ("eval.recall_grid", list(&self.eval.recall_grid)),
            ("paths.data", show_path(&self.paths.data)),
            ("paths.checkpoint", show_path(&self.paths.checkpoint)),
            ("paths.predictions", show_path(&self.paths.predictions)),
            ("paths.annotations", show_path(&self.paths.annotations)),
        ]);
        out
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "model.vocab_size" {
            return Err(Error::Config("model.vocab_size is taken from the vocabulary file".into()));
        }
        if set_model(&mut self.model, key, value)? {
            return Ok(());
        }
        let s = &mut self.synth;
        let t = &mut self.train;
        let i = &mut self.infer;
        match key {
            "synth.num_videos" => s.num_videos = parse(key, value)?,
            "synth.num_test" => self.num_test = parse(key, value)?,
            "synth.steps" => s.steps = parse(key, value)?,
            "synth.dim" => s.dim = parse(key, value)?,
            "synth.event_types" => s.num_event_types = parse(key, value)?,
            "synth.events_min" => s.events_per_video.0 = parse(key, value)?,
            "synth.events_max" => s.events_per_video.1 = parse(key, value)?,
            "synth.noise_std" => s.background_noise_std = parse(key, value)?,
            "synth.signature_scale" => s.signature_scale = parse(key, value)?,
            "synth.seconds_per_step" => s.seconds_per_step = parse(key, value)?,
            "synth.seed" => s.seed = parse(key, value)?,
            "data.vocab_cap" => self.vocab_cap = parse(key, value)?,
            "train.lr" => t.lr = parse(key, value)?,
            "train.momentum" => t.momentum = parse(key, value)?,
            "train.clip_norm" => t.clip_norm = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.lambda_s" => t.weights.lambda_s = parse(key, value)?,
            "train.lambda_a" => t.weights.lambda_a = parse(key, value)?,
            "train.sigma" => t.weights.sigma = parse(key, value)?,
            "train.pretrain_epochs" => t.pretrain_epochs = parse(key, value)?,
            "train.stage1_epochs" => t.stage1_epochs = parse(key, value)?,
            "train.stage2_epochs" => t.stage2_epochs = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "infer.num_proposals" => i.num_proposals = parse(key, value)?,
            "infer.keep_threshold" => i.iou_keep_threshold = parse(key, value)?,
            "infer.max_rounds" => i.max_rounds = parse(key, value)?,
            "infer.merge_threshold" => i.merge_threshold = parse(key, value)?,
            "infer.min_width" => i.min_width = parse(key, value)?,
            "infer.seed" => i.seed = parse(key, value)?,
            "eval.caption_thresholds" => self.eval.caption_thresholds = parse_list(key, value)?,
            "eval.localization_sigmas" => self.eval.localization_sigmas = parse_list(key, value)?,
            "eval.recall_grid" => self.eval.recall_grid = parse_list(key, value)?,
            "paths.data" => self.paths.data = path(value),
            "paths.checkpoint" => self.paths.checkpoint = path(value),
            "paths.predictions" => self.paths.predictions = path(value),
            "paths.annotations" => self.paths.annotations = path(value),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_text(&text)
    }

    /// Sets every seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.model.init_seed = seed;
        self.train.seed = seed;
        self.infer.seed = seed;
    }

    /// The fully resolved configuration; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        self.infer.validate()?;
        let mut model = self.model.clone();
        model.vocab_size = model.vocab_size.max(5);
        model.validate()?;
        if self.vocab_cap < 5 {
            return Err(Error::Config("data.vocab_cap must be at least 5".into()));
        }
        if self.synth.dim != self.model.feature_dim {
            return Err(Error::Config(format!(
                "synth.dim = {} but model.feature_dim = {}",
                self.synth.dim, self.model.feature_dim
            )));
        }
        for (k, xs) in [
            ("eval.caption_thresholds", &self.eval.caption_thresholds),
            ("eval.localization_sigmas", &self.eval.localization_sigmas),
            ("eval.recall_grid", &self.eval.recall_grid),
        ] {
            if xs.is_empty() || xs.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Config(format!("{k} must be a non-empty list in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        let mut c = RunConfig::default();
        c.set("train.lambda_s", "0.25").unwrap();
        c.set("model.anchor_scales", "1,0.5").unwrap();
        c.set("paths.data", "/tmp/x").unwrap();
        c.set_seed(11);
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected() {
        let err = RunConfig::from_text("# c\n\ntrain.lamda_s = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 3") && err.to_string().contains("lamda_s"), "{err}");
        assert!(RunConfig::from_text("train.lr 0.1").is_err());
        assert!(RunConfig::from_text("train.lr = fast").is_err());
        assert!(RunConfig::from_text("model.vocab_size = 10").is_err());
    }

    #[test]
    fn model_hash_tracks_every_model_setting() {
        let a = ModelConfig::default();
        let mut b = a.clone();
        assert_eq!(model_hash(&a), model_hash(&b));
        b.vocab_size += 1;
        assert_ne!(model_hash(&a), model_hash(&b));
    }
}
