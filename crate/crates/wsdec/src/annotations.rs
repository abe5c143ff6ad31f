//! Annotation files: a JSON object mapping each video id to its duration in
//! seconds, its sentences and optionally one `[start, end]` pair in seconds
//! per sentence.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wsdec_core::data::{Corpus, CorpusEntry, SupervisionMode, Vocabulary};
use wsdec_core::TemporalSegment;

use crate::error::{Error, Result};
use crate::features;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationEntry {
    pub duration: f64,
    pub sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Vec<[f64; 2]>>,
}

pub type Annotations = BTreeMap<String, AnnotationEntry>;

/// Parses annotations, naming the video whose entry is malformed.
pub fn parse(text: &str, path: &Path) -> Result<Annotations> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
    let serde_json::Value::Object(map) = value else {
        return Err(Error::format(path, "top level must be an object keyed by video id"));
    };
    let mut out = BTreeMap::new();
    for (vid, v) in map {
        let entry: AnnotationEntry = serde_json::from_value(v).map_err(|e| Error::format(path, format!("{vid:?}: {e}")))?;
        if !(entry.duration > 0.0 && entry.duration.is_finite()) {
            return Err(Error::format(path, format!("{vid:?}: duration must be positive")));
        }
        if let Some(ts) = &entry.timestamps {
            if ts.len() != entry.sentences.len() {
                return Err(Error::format(
                    path,
                    format!("{vid:?}: {} timestamps for {} sentences", ts.len(), entry.sentences.len()),
                ));
            }
        }
        out.insert(vid, entry);
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Annotations> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

pub fn to_text(annotations: &Annotations) -> String {
    let mut s = serde_json::to_string_pretty(annotations).expect("annotations always serialize");
    s.push('\n');
    s
}

pub fn write(path: &Path, annotations: &Annotations) -> Result<()> {
    fs::write(path, to_text(annotations)).map_err(|e| Error::io(path, e))
}

/// Segments of an entry in normalized form, with events whose end does not
/// come after their start marked `None`.
pub fn segments(entry: &AnnotationEntry) -> Option<Vec<Option<TemporalSegment>>> {
    entry.timestamps.as_ref().map(|ts| {
        ts.iter()
            .map(|&[s, e]| (e > s).then(|| TemporalSegment::from_seconds(s, e, entry.duration)))
            .collect()
    })
}

#[derive(Debug)]
pub struct LoadedCorpus {
    pub corpus: Corpus,
    /// Videos skipped because their feature file is missing.
    pub missing_features: Vec<String>,
    /// Events dropped because their end does not come after their start.
    pub dropped_events: usize,
}

/// Builds a corpus from annotations and a directory of feature files.
/// Evaluation mode requires timestamps on every video.
pub fn load_corpus(
    annotations: &Annotations,
    path: &Path,
    features_dir: &Path,
    vocab: &Vocabulary,
    max_caption_len: usize,
    mode: SupervisionMode,
) -> Result<LoadedCorpus> {
    let mut entries = Vec::new();
    let mut missing = Vec::new();
    let mut dropped = 0;
    for (vid, entry) in annotations {
        let feature_path = features_dir.join(features::file_name(vid));
        if !feature_path.exists() {
            missing.push(vid.clone());
            continue;
        }
        let feats = features::read(&feature_path, entry.duration)?;
        let segs = segments(entry);
        if segs.is_none() && mode == SupervisionMode::Evaluation {
            return Err(Error::format(path, format!("{vid:?}: timestamps are required for evaluation")));
        }
        let mut captions = Vec::new();
        let mut gt = Vec::new();
        for (j, sentence) in entry.sentences.iter().enumerate() {
            match segs.as_ref().map(|s| s[j]) {
                Some(None) => dropped += 1,
                Some(Some(seg)) => {
                    captions.push(vocab.encode(sentence, max_caption_len));
                    gt.push(seg);
                }
                None => captions.push(vocab.encode(sentence, max_caption_len)),
            }
        }
        entries.push(CorpusEntry::new(vid.clone(), feats, captions, segs.map(|_| gt))?);
    }
    Ok(LoadedCorpus {
        corpus: Corpus::new(entries, mode),
        missing_features: missing,
        dropped_events: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seconds_become_normalized_segments() {
        let a = parse(
            r#"{"v": {"duration": 48.0, "sentences": ["a b", "c"], "timestamps": [[12.0, 24.0], [0.0, 48.0]]}}"#,
            Path::new("a.json"),
        )
        .unwrap();
        let segs = segments(&a["v"]).unwrap();
        assert_eq!(segs[0], Some(TemporalSegment::new(0.375, 0.25)));
        assert_eq!(segs[1], Some(TemporalSegment::new(0.5, 1.0)));
    }

    #[test]
    fn malformed_entries_name_the_video() {
        let err = parse(r#"{"vid_9": {"sentences": []}}"#, Path::new("a.json")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("vid_9") && msg.contains("duration"), "{msg}");
        let err = parse(r#"{"v": {"duration": 1.0, "sentences": ["x"], "timestamps": []}}"#, Path::new("a.json")).unwrap_err();
        assert!(err.to_string().contains("\"v\""));
        assert!(parse("[1]", Path::new("a.json")).is_err());
    }

    #[test]
    fn reversed_timestamps_are_dropped() {
        let a = parse(
            r#"{"v": {"duration": 10.0, "sentences": ["x", "y"], "timestamps": [[5.0, 5.0], [1.0, 2.0]]}}"#,
            Path::new("a.json"),
        )
        .unwrap();
        let segs = segments(&a["v"]).unwrap();
        assert_eq!(segs[0], None);
        assert!(segs[1].is_some());
    }
}
