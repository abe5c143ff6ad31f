//! Checkpoints: the magic bytes `WSDCKPT1`, a little-endian `u64` header
//! length, a JSON header (model settings and their hash, parameter shapes,
//! stage, epoch, step and seed), then every parameter followed by every
//! momentum buffer as little-endian `f32` in declaration order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wsdec_core::model::{Model, ModelConfig};
use wsdec_core::params::ParamStore;
use wsdec_core::training::{Stage, TrainConfig, TrainState};

use crate::config::{model_entries, model_hash, set_model};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"WSDCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub stage: String,
    /// Completed epochs within `stage`.
    pub epoch: usize,
    pub step: u64,
    pub seed: u64,
    pub config_hash: String,
    pub model: BTreeMap<String, String>,
    pub params: Vec<ParamShape>,
}

impl Header {
    pub fn model_config(&self, path: &Path) -> Result<ModelConfig> {
        let mut m = ModelConfig::default();
        for (k, v) in &self.model {
            if !set_model(&mut m, k, v)? {
                return Err(Error::format(path, format!("unknown model key {k:?}")));
            }
        }
        if model_hash(&m) != self.config_hash {
            return Err(Error::format(path, "model settings do not match the recorded hash"));
        }
        Ok(m)
    }
}

fn header_for(state: &TrainState) -> Header {
    let m = &state.model.config;
    let mut model: BTreeMap<String, String> = model_entries(m).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    model.insert("model.vocab_size".into(), m.vocab_size.to_string());
    Header {
        stage: state.stage.name().into(),
        epoch: state.epoch,
        step: state.step,
        seed: state.seed,
        config_hash: model_hash(m),
        model,
        params: state
            .model
            .params
            .iter()
            .map(|(name, t)| ParamShape {
                name: name.into(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
    }
}

fn push_f32(out: &mut Vec<u8>, store: &ParamStore) {
    for (_, t) in store.iter() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

pub fn encode(state: &TrainState) -> Vec<u8> {
    let header = serde_json::to_vec(&header_for(state)).expect("header always serializes");
    let mut out = Vec::with_capacity(16 + header.len() + 8 * state.model.params.total_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    push_f32(&mut out, &state.model.params);
    push_f32(&mut out, state.optimizer.velocity());
    out
}

/// Writes to a temporary file next to `path` and renames it into place.
pub fn save(path: &Path, state: &TrainState) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let bytes = encode(state);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn split_header<'a>(bytes: &'a [u8], path: &Path) -> Result<(Header, &'a [u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a checkpoint"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < len {
        return Err(Error::format(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..len]).map_err(|e| Error::format(path, format!("header: {e}")))?;
    Ok((header, &body[len..]))
}

fn fill(store: &mut ParamStore, payload: &mut &[u8]) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let t = store.get_mut(id);
        let n = t.data().len();
        for (dst, c) in t.data_mut().iter_mut().zip(payload[..4 * n].chunks_exact(4)) {
            *dst = f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64;
        }
        *payload = &payload[4 * n..];
    }
}

/// Restores a training state. The optimizer takes its settings from `cfg`.
pub fn decode(bytes: &[u8], path: &Path, cfg: &TrainConfig) -> Result<TrainState> {
    let (header, mut payload) = split_header(bytes, path)?;
    let model_cfg = header.model_config(path)?;
    let stage = Stage::from_name(&header.stage).ok_or_else(|| Error::format(path, format!("unknown stage {:?}", header.stage)))?;
    let model = Model::new(model_cfg)?;
    let expected: Vec<ParamShape> = model
        .params
        .iter()
        .map(|(name, t)| ParamShape {
            name: name.into(),
            rows: t.rows(),
            cols: t.cols(),
        })
        .collect();
    if expected != header.params {
        return Err(Error::format(path, "parameter shapes do not match the model settings"));
    }
    let total = model.params.total_len();
    if payload.len() != 8 * total {
        return Err(Error::format(
            path,
            format!("payload holds {} bytes, expected {}", payload.len(), 8 * total),
        ));
    }
    let mut state = TrainState::new(model, cfg);
    fill(&mut state.model.params, &mut payload);
    fill(state.optimizer.velocity_mut(), &mut payload);
    state.stage = stage;
    state.epoch = header.epoch;
    state.step = header.step;
    state.seed = header.seed;
    Ok(state)
}

pub fn load(path: &Path, cfg: &TrainConfig) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path, cfg)
}

/// Fails with both descriptions when the checkpoint was trained with model
/// settings other than `expected`.
pub fn check_model(path: &Path, state: &TrainState, expected: &ModelConfig) -> Result<()> {
    let have = &state.model.config;
    if model_hash(have) == model_hash(expected) {
        return Ok(());
    }
    let mut diffs = Vec::new();
    let mut a = model_entries(have);
    a.push(("model.vocab_size", have.vocab_size.to_string()));
    let mut b = model_entries(expected);
    b.push(("model.vocab_size", expected.vocab_size.to_string()));
    for ((k, x), (_, y)) in a.iter().zip(&b) {
        if x != y {
            diffs.push(format!("{k}: checkpoint {x}, config {y}"));
        }
    }
    Err(Error::CheckpointMismatch {
        path: path.to_path_buf(),
        reason: diffs.join("; "),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainState {
        let cfg = ModelConfig {
            hidden: 6,
            vocab_size: 9,
            feature_dim: 3,
            ..ModelConfig::default()
        };
        let mut s = TrainState::new(Model::new(cfg).unwrap(), &TrainConfig::default());
        s.round_to_f32();
        s.step = 17;
        s.epoch = 2;
        s.stage = Stage::Stage1;
        s
    }

    #[test]
    fn round_trip_restores_everything() {
        let s = small();
        let bytes = encode(&s);
        let back = decode(&bytes, Path::new("c"), &TrainConfig::default()).unwrap();
        assert_eq!(back.model.params, s.model.params);
        assert_eq!(back.optimizer.velocity(), s.optimizer.velocity());
        assert_eq!((back.step, back.epoch, back.stage, back.seed), (17, 2, Stage::Stage1, s.seed));
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode(&small());
        assert!(decode(&bytes[..bytes.len() - 4], Path::new("c"), &TrainConfig::default()).is_err());
        assert!(decode(b"WSDCKPT0", Path::new("c"), &TrainConfig::default()).is_err());
    }

    #[test]
    fn mismatch_names_both_values() {
        let s = small();
        let mut other = s.model.config.clone();
        other.hidden = 8;
        let msg = check_model(Path::new("c"), &s, &other).unwrap_err().to_string();
        assert!(msg.contains("model.hidden: checkpoint 6, config 8"), "{msg}");
    }
}
