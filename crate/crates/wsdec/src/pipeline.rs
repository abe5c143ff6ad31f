//! Evaluation of a trained model on a corpus with ground truth: sentence
//! localization, dense captioning, detection recall and the fixed-point
//! refinement gain.

use std::collections::BTreeMap;

use wsdec_core::data::{tokenize, Corpus, Vocabulary};
use wsdec_core::graph::Graph;
use wsdec_core::inference::{
    contraction_ratios, dense_caption, probe_pairs, sample_random_segments, stream_id, DenseCaptionResult, InferenceConfig,
};
use wsdec_core::metrics::{
    caption_scores, default_recall_grid, localization_scores, recall_curve, CaptionScoreReport, Event, LocalizationReport,
    CAPTION_THRESHOLDS, LOCALIZATION_SIGMAS,
};
use wsdec_core::model::Model;
use wsdec_core::TemporalSegment;

use crate::error::Result;

/// Offset added to a video's stream id for the random localization baseline,
/// keeping it apart from the inference proposals.
const BASELINE_STREAM: u64 = 0x5eed_0000_0000_0001;

/// Probe radius for the contraction diagnostic, in normalized units.
pub const PROBE_RADIUS: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementGain {
    pub proposals: usize,
    /// Mean over proposals of the best tIoU with any reference, before refinement.
    pub initial_mean_tiou: f64,
    pub refined_mean_tiou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contraction {
    pub ratios: Vec<f64>,
}

impl Contraction {
    pub fn mean(&self) -> Option<f64> {
        (!self.ratios.is_empty()).then(|| self.ratios.iter().sum::<f64>() / self.ratios.len() as f64)
    }

    pub fn median(&self) -> Option<f64> {
        if self.ratios.is_empty() {
            return None;
        }
        let mut r = self.ratios.clone();
        r.sort_by(f64::total_cmp);
        let n = r.len();
        Some(if n % 2 == 1 { r[n / 2] } else { 0.5 * (r[n / 2 - 1] + r[n / 2]) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Top-1 localization of every reference sentence.
    pub localization: LocalizationReport,
    /// One random segment per reference sentence, drawn like the proposals.
    pub random_localization: LocalizationReport,
    pub dense: BTreeMap<String, DenseCaptionResult>,
    pub recall: Vec<(f64, f64)>,
    pub captions: CaptionScoreReport,
    pub refinement: RefinementGain,
}

impl Evaluation {
    pub fn mean_events_per_video(&self) -> f64 {
        let n: usize = self.dense.values().map(|r| r.events.len()).sum();
        n as f64 / self.dense.len().max(1) as f64
    }

    pub fn recall_at(&self, threshold: f64) -> Option<f64> {
        self.recall.iter().find(|(t, _)| (t - threshold).abs() < 1e-9).map(|&(_, r)| r)
    }
}

fn words(vocab: &Vocabulary, ids: &[usize]) -> Vec<String> {
    tokenize(&vocab.decode(ids))
}

/// Dense captions for every video of the corpus.
pub fn dense_caption_corpus(model: &Model, corpus: &Corpus, cfg: &InferenceConfig) -> Result<BTreeMap<String, DenseCaptionResult>> {
    let mut out = BTreeMap::new();
    for e in corpus.entries() {
        let r = dense_caption(model, &e.features, stream_id(&e.video_id), cfg)?;
        out.insert(e.video_id.clone(), r);
    }
    Ok(out)
}

/// Reference events per video. The corpus must be in evaluation mode.
pub fn references(corpus: &Corpus, vocab: &Vocabulary) -> Result<BTreeMap<String, Vec<Event>>> {
    let mut out = BTreeMap::new();
    for (i, e) in corpus.entries().iter().enumerate() {
        let Some(gt) = corpus.ground_truth(i)? else {
            continue;
        };
        let events = gt
            .iter()
            .zip(&e.captions)
            .map(|(s, c)| Event {
                segment: *s,
                words: words(vocab, c.ids()),
            })
            .collect();
        out.insert(e.video_id.clone(), events);
    }
    Ok(out)
}

/// Predicted events per video in metric form.
pub fn predicted_events(dense: &BTreeMap<String, DenseCaptionResult>, vocab: &Vocabulary) -> BTreeMap<String, Vec<Event>> {
    dense
        .iter()
        .map(|(vid, r)| {
            let events = r
                .events
                .iter()
                .map(|e| Event {
                    segment: e.segment,
                    words: words(vocab, &e.tokens),
                })
                .collect();
            (vid.clone(), events)
        })
        .collect()
}

fn best_tiou(s: &TemporalSegment, refs: &[Event]) -> f64 {
    refs.iter().map(|r| s.tiou(&r.segment)).fold(0.0, f64::max)
}

/// Runs every evaluation protocol on a corpus in evaluation mode.
pub fn evaluate(model: &Model, corpus: &Corpus, vocab: &Vocabulary, cfg: &InferenceConfig) -> Result<Evaluation> {
    let refs = references(corpus, vocab)?;

    let mut loc_pairs = Vec::new();
    let mut random_pairs = Vec::new();
    for (i, e) in corpus.entries().iter().enumerate() {
        let Some(gt) = corpus.ground_truth(i)? else {
            continue;
        };
        let mut g = Graph::new(&model.params);
        let video = model.encode_video(&mut g, &e.features)?;
        let baseline_cfg = InferenceConfig {
            num_proposals: e.captions.len().max(1),
            ..*cfg
        };
        let random = sample_random_segments(&baseline_cfg, stream_id(&e.video_id).wrapping_add(BASELINE_STREAM));
        for ((c, s), r) in e.captions.iter().zip(gt).zip(random) {
            let loc = model.localize(&mut g, &video, c.ids())?;
            loc_pairs.push((loc.segment(&g), *s));
            random_pairs.push((r, *s));
        }
    }

    let dense = dense_caption_corpus(model, corpus, cfg)?;
    let preds = predicted_events(&dense, vocab);
    let captions = caption_scores(&preds, &refs, &CAPTION_THRESHOLDS);

    let pred_segments: BTreeMap<String, Vec<TemporalSegment>> =
        preds.iter().map(|(k, v)| (k.clone(), v.iter().map(|e| e.segment).collect())).collect();
    let ref_segments: BTreeMap<String, Vec<TemporalSegment>> =
        refs.iter().map(|(k, v)| (k.clone(), v.iter().map(|e| e.segment).collect())).collect();
    let recall = recall_curve(&pred_segments, &ref_segments, &default_recall_grid()).unwrap_or_default();

    let mut n = 0usize;
    let (mut before, mut after) = (0.0, 0.0);
    for (vid, r) in &dense {
        let Some(video_refs) = refs.get(vid) else {
            continue;
        };
        for (s0, refined) in &r.proposals {
            before += best_tiou(s0, video_refs);
            after += best_tiou(&refined.segment, video_refs);
            n += 1;
        }
    }
    let denom = n.max(1) as f64;

    Ok(Evaluation {
        localization: localization_scores(&loc_pairs, &LOCALIZATION_SIGMAS),
        random_localization: localization_scores(&random_pairs, &LOCALIZATION_SIGMAS),
        dense,
        recall,
        captions,
        refinement: RefinementGain {
            proposals: n,
            initial_mean_tiou: before / denom,
            refined_mean_tiou: after / denom,
        },
    })
}

/// Contraction ratios of the caption-then-localize map on probe pairs
/// around each emitted event of each video.
pub fn contraction(model: &Model, corpus: &Corpus, dense: &BTreeMap<String, DenseCaptionResult>, seed: u64) -> Result<BTreeMap<String, Contraction>> {
    let mut out = BTreeMap::new();
    for e in corpus.entries() {
        let Some(r) = dense.get(&e.video_id) else {
            continue;
        };
        let centers: Vec<TemporalSegment> = r.events.iter().map(|ev| ev.segment).collect();
        let probes = probe_pairs(&centers, PROBE_RADIUS, seed ^ stream_id(&e.video_id));
        let ratios = contraction_ratios(model, &e.features, &probes)?;
        out.insert(e.video_id.clone(), Contraction { ratios });
    }
    Ok(out)
}
