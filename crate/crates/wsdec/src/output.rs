//! Prediction files and evaluation reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use wsdec_core::data::Vocabulary;
use wsdec_core::inference::DenseCaptionResult;
use wsdec_core::metrics::{CaptionScoreReport, LocalizationReport};

use crate::error::{Error, Result};
use crate::json::{array, num, num_array, Object};

/// Per-video extras written with `--dump-diagnostics`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VideoDiagnostics {
    pub contraction_ratios: Vec<f64>,
}

/// `{"results": {video: [{"sentence", "timestamp", "self_iou"}]}}`, plus the
/// initial and refined proposal of each event and a per-video
/// `"diagnostics"` map when diagnostics are given.
pub fn predictions_json(
    dense: &BTreeMap<String, DenseCaptionResult>,
    vocab: &Vocabulary,
    durations: &BTreeMap<String, f64>,
    diagnostics: Option<&BTreeMap<String, VideoDiagnostics>>,
) -> String {
    let mut results = Object::new();
    for (vid, r) in dense {
        let duration = durations.get(vid).copied().unwrap_or(1.0);
        let events: Vec<String> = r
            .events
            .iter()
            .map(|e| {
                let mut o = Object::new()
                    .str("sentence", &vocab.decode(&e.tokens))
                    .raw("timestamp", num_array(&[e.timestamp.0, e.timestamp.1]))
                    .num("self_iou", e.self_iou);
                if diagnostics.is_some() {
                    let (a, b) = e.initial.to_seconds(duration);
                    o.push_raw("initial", num_array(&[a, b]));
                }
                o.render(3)
            })
            .collect();
        results.push_raw(vid, array(&events, 2));
    }
    let mut top = Object::new().raw("results", results.render(1));
    if let Some(diag) = diagnostics {
        let mut d = Object::new();
        for (vid, r) in dense {
            let ratios = diag.get(vid).map(|x| x.contraction_ratios.clone()).unwrap_or_default();
            let o = Object::new()
                .raw("proposals", r.proposals.len().to_string())
                .raw("empty_captions", r.empty_captions.to_string())
                .raw("all_filtered", r.all_filtered.to_string())
                .raw("contraction_ratios", num_array(&ratios));
            d.push_raw(vid, o.render(2));
        }
        top.push_raw("diagnostics", d.render(1));
    }
    let mut s = top.render(0);
    s.push('\n');
    s
}

/// Top-1 localization of every sentence of every video, in sentence order:
/// `{"results": {video: [{"sentence", "timestamp"}]}}`.
pub fn localization_json(results: &BTreeMap<String, Vec<(String, (f64, f64))>>) -> String {
    let mut o = Object::new();
    for (vid, items) in results {
        let rows: Vec<String> = items
            .iter()
            .map(|(s, (a, b))| Object::new().str("sentence", s).raw("timestamp", num_array(&[*a, *b])).render(3))
            .collect();
        o.push_raw(vid, array(&rows, 2));
    }
    let mut s = Object::new().raw("results", o.render(1)).render(0);
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PredictedEvent {
    pub sentence: String,
    pub timestamp: [f64; 2],
    #[serde(default)]
    pub self_iou: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct PredictionFile {
    results: BTreeMap<String, Vec<PredictedEvent>>,
}

pub fn parse_predictions(text: &str, path: &Path) -> Result<BTreeMap<String, Vec<PredictedEvent>>> {
    let f: PredictionFile = serde_json::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(f.results)
}

pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, Vec<PredictedEvent>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, path)
}

fn threshold_key(t: f64) -> String {
    format!("{t}")
}

/// Caption metrics averaged over thresholds, with a `"per_threshold"` map.
pub fn caption_report_json(r: &CaptionScoreReport) -> String {
    let mut o = Object::new();
    for (k, v) in r.mean.named() {
        o.push_raw(k, num(v));
    }
    o.push_raw("videos", r.videos.to_string());
    let mut per = Object::new();
    for (t, s) in r.thresholds.iter().zip(&r.per_threshold) {
        let mut inner = Object::new();
        for (k, v) in s.named() {
            inner.push_raw(k, num(v));
        }
        per.push_raw(&threshold_key(*t), inner.render(2));
    }
    o.push_raw("per_threshold", per.render(1));
    let mut s = o.render(0);
    s.push('\n');
    s
}

pub fn localization_report_json(r: &LocalizationReport) -> String {
    let mut o = Object::new();
    for (sigma, v) in &r.recall_at_1 {
        o.push_raw(&format!("R@1,IoU={sigma}"), num(*v));
    }
    o.push_raw("mIoU", num(r.miou));
    let mut s = o.render(0);
    s.push('\n');
    s
}

/// Recall at each threshold, or `{}` when there are no references.
pub fn recall_report_json(curve: Option<&[(f64, f64)]>) -> String {
    let mut o = Object::new();
    if let Some(c) = curve {
        for (t, r) in c {
            o.push_raw(&format!("recall@{t}"), num(*r));
        }
    }
    let mut s = o.render(0);
    s.push('\n');
    s
}

pub fn recall_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("threshold,recall\n");
    for (t, r) in curve {
        s.push_str(&format!("{t},{}\n", num(*r)));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use wsdec_core::metrics::MetricScores;

    #[test]
    fn caption_report_shape() {
        let r = CaptionScoreReport {
            thresholds: vec![0.3, 0.5],
            per_threshold: vec![MetricScores::default(); 2],
            mean: MetricScores::default(),
            videos: 2,
        };
        let text = caption_report_json(&r);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["Bleu_1"], 0.0);
        assert!(v["per_threshold"]["0.3"]["CIDEr"].is_number());
        assert!(text.contains("\"METEOR_proxy\": 0.000000"));
    }

    #[test]
    fn localization_report_has_four_fields() {
        let r = LocalizationReport {
            recall_at_1: vec![(0.1, 1.0), (0.3, 0.5), (0.5, 0.5)],
            miou: 0.4,
        };
        let v: serde_json::Value = serde_json::from_str(&localization_report_json(&r)).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 4);
        assert_eq!(v["R@1,IoU=0.3"], 0.5);
    }

    #[test]
    fn predictions_parse_back() {
        let mut m = BTreeMap::new();
        m.insert("v".to_string(), vec![("a b".to_string(), (1.0, 2.5))]);
        m.insert("w".to_string(), vec![]);
        let text = localization_json(&m);
        let back = parse_predictions(&text, Path::new("p")).unwrap();
        assert_eq!(back["v"][0].timestamp, [1.0, 2.5]);
        assert!(back["w"].is_empty());
    }
}
