//! Corpus types: feature matrices, caption token sequences, the vocabulary,
//! and a corpus whose ground-truth segments are sealed during weakly
//! supervised training.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::segment::TemporalSegment;
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<bos>", "<eos>", "<unk>"];

pub const DEFAULT_MAX_CAPTION_LEN: usize = 30;

/// A `T × k` feature matrix for one video plus its duration in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures {
    values: Tensor,
    duration: f64,
}

impl VideoFeatures {
    pub fn new(values: Tensor, duration: f64) -> Result<Self> {
        if values.rows() < 2 {
            return Err(Error::invalid(
                "video features",
                format!("need at least 2 steps, got {}", values.rows()),
            ));
        }
        if values.cols() < 1 {
            return Err(Error::invalid("video features", "feature dimension is 0"));
        }
        if !values.is_finite() {
            return Err(Error::invalid("video features", "non-finite value"));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::invalid(
                "video features",
                format!("duration must be positive, got {duration}"),
            ));
        }
        Ok(VideoFeatures { values, duration })
    }

    pub fn steps(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }
}

/// `BOS body… EOS`, with no EOS inside the body.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CaptionTokens {
    ids: Vec<usize>,
}

impl CaptionTokens {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        let n = ids.len();
        if n < 2 || ids[0] != BOS || ids[n - 1] != EOS {
            return Err(Error::invalid("caption", "must start with BOS and end with EOS"));
        }
        if ids[1..n - 1].iter().any(|&t| t == EOS || t == BOS || t == PAD) {
            return Err(Error::invalid("caption", "sentinel or PAD inside the body"));
        }
        Ok(CaptionTokens { ids })
    }

    /// Wraps `body` in sentinels, truncating it so the result has at most
    /// `max_len` tokens.
    pub fn from_body(body: &[usize], max_len: usize) -> Self {
        let keep = body.len().min(max_len.saturating_sub(2));
        let mut ids = Vec::with_capacity(keep + 2);
        ids.push(BOS);
        ids.extend(body[..keep].iter().map(|&t| if t < NUM_SPECIALS { UNK } else { t }));
        ids.push(EOS);
        CaptionTokens { ids }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Tokens between the sentinels.
    pub fn body(&self) -> &[usize] {
        &self.ids[1..self.ids.len() - 1]
    }
}

/// Lowercases, removes punctuation and splits on whitespace.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let cleaned: String = sentence
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(String::from).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from its non-special tokens in id order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id = BTreeMap::new();
        for tok in tokens {
            let tok = tok.into();
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::invalid("vocabulary", format!("bad token {tok:?}")));
            }
            if SPECIAL_TOKENS.contains(&tok.as_str()) || token_to_id.contains_key(&tok) {
                return Err(Error::invalid("vocabulary", format!("duplicate token {tok:?}")));
            }
            token_to_id.insert(tok.clone(), id_to_token.len());
            id_to_token.push(tok);
        }
        Ok(Vocabulary {
            id_to_token,
            token_to_id,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Non-special tokens in id order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.id_to_token[NUM_SPECIALS..].iter().map(String::as_str)
    }

    pub fn encode(&self, sentence: &str, max_len: usize) -> CaptionTokens {
        let body: Vec<usize> = tokenize(sentence).iter().map(|t| self.id(t)).collect();
        CaptionTokens::from_body(&body, max_len)
    }

    /// Joins body tokens with single spaces, skipping specials other than UNK.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == PAD || id == BOS || id == EOS {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(self.token(id).unwrap_or("<unk>"));
        }
        out
    }
}

/// Keeps the `cap − 4` most frequent tokens; ties go to the lexicographically
/// smaller token.
pub fn build_vocabulary<S: AsRef<str>>(sentences: &[S], cap: usize) -> Result<Vocabulary> {
    if cap < NUM_SPECIALS + 1 {
        return Err(Error::invalid("vocabulary cap", format!("must be at least 5, got {cap}")));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in sentences {
        for tok in tokenize(s.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, _)| !SPECIAL_TOKENS.contains(&t.as_str()))
        .collect();
    // BTreeMap order is lexicographic and the sort is stable.
    ranked.sort_by_key(|r| core::cmp::Reverse(r.1));
    ranked.truncate(cap - NUM_SPECIALS);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub video_id: String,
    pub features: VideoFeatures,
    pub captions: Vec<CaptionTokens>,
    gt_segments: Option<Vec<TemporalSegment>>,
}

impl CorpusEntry {
    pub fn new(
        video_id: impl Into<String>,
        features: VideoFeatures,
        captions: Vec<CaptionTokens>,
        gt_segments: Option<Vec<TemporalSegment>>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if let Some(gt) = &gt_segments {
            if gt.len() != captions.len() {
                return Err(Error::invalid(
                    "corpus entry",
                    format!(
                        "{video_id}: {} segments for {} captions",
                        gt.len(),
                        captions.len()
                    ),
                ));
            }
        }
        Ok(CorpusEntry {
            video_id,
            features,
            captions,
            gt_segments,
        })
    }

    pub fn has_ground_truth(&self) -> bool {
        self.gt_segments.is_some()
    }
}

/// Who may read ground-truth segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupervisionMode {
    /// Training: segment labels are sealed.
    Weak,
    /// Evaluation: segment labels are readable.
    Evaluation,
}

#[derive(Debug)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
    mode: SupervisionMode,
    gt_reads: AtomicUsize,
}

impl Clone for Corpus {
    fn clone(&self) -> Self {
        Corpus {
            entries: self.entries.clone(),
            mode: self.mode,
            gt_reads: AtomicUsize::new(self.gt_reads()),
        }
    }
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.mode == other.mode
    }
}

impl Corpus {
    pub fn new(entries: Vec<CorpusEntry>, mode: SupervisionMode) -> Self {
        Corpus {
            entries,
            mode,
            gt_reads: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mode(&self) -> SupervisionMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: SupervisionMode) {
        self.mode = mode;
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &CorpusEntry {
        &self.entries[i]
    }

    pub fn into_entries(self) -> Vec<CorpusEntry> {
        self.entries
    }

    /// Ground-truth segments of entry `i`. Fails while the corpus is in
    /// weak mode; every successful read is counted.
    pub fn ground_truth(&self, i: usize) -> Result<Option<&[TemporalSegment]>> {
        if self.mode == SupervisionMode::Weak {
            return Err(Error::GroundTruthSealed);
        }
        self.gt_reads.fetch_add(1, Ordering::Relaxed);
        Ok(self.entries[i].gt_segments.as_deref())
    }

    /// Number of successful ground-truth reads so far.
    pub fn gt_reads(&self) -> usize {
        self.gt_reads.load(Ordering::Relaxed)
    }

    /// Captions and features only; the view has no path to segment labels.
    pub fn weak_view(&self) -> WeakView<'_> {
        WeakView {
            entries: &self.entries,
        }
    }

    /// Number of (video, caption) pairs.
    pub fn num_pairs(&self) -> usize {
        self.entries.iter().map(|e| e.captions.len()).sum()
    }

    pub fn mean_events_per_video(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.num_pairs() as f64 / self.entries.len() as f64
    }
}

/// The training-side view of a corpus.
#[derive(Debug, Clone, Copy)]
pub struct WeakView<'a> {
    entries: &'a [CorpusEntry],
}

impl<'a> WeakView<'a> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn features(&self, i: usize) -> &'a VideoFeatures {
        &self.entries[i].features
    }

    pub fn captions(&self, i: usize) -> &'a [CaptionTokens] {
        &self.entries[i].captions
    }

    pub fn video_id(&self, i: usize) -> &'a str {
        &self.entries[i].video_id
    }

    /// All (video index, caption index) pairs in corpus order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (v, e) in self.entries.iter().enumerate() {
            for c in 0..e.captions.len() {
                out.push((v, c));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn vocabulary_orders_by_frequency_then_lexicographically() {
        let v = build_vocabulary(&["a b", "a c"], 10).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.id("c"), 6);
        let v = build_vocabulary(&["a b", "a c"], 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("b"), UNK);
        let empty: [&str; 0] = [];
        assert_eq!(build_vocabulary(&empty, 6000).unwrap().len(), 4);
        assert!(build_vocabulary(&empty, 4).is_err());
    }

    #[test]
    fn tokenizer_lowercases_and_strips_punctuation() {
        assert_eq!(tokenize("The man, then... OPENS it!"), vec!["the", "man", "then", "opens", "it"]);
    }

    #[test]
    fn unknown_sentence_is_all_unk() {
        let v = build_vocabulary(&["a b"], 10).unwrap();
        let c = v.encode("x y z", 30);
        assert_eq!(c.ids(), &[BOS, UNK, UNK, UNK, EOS]);
    }

    #[test]
    fn long_caption_truncated_before_eos() {
        let body: Vec<usize> = (4..50).collect();
        let c = CaptionTokens::from_body(&body, 30);
        assert_eq!(c.len(), 30);
        assert_eq!(c.ids()[29], EOS);
        assert_eq!(c.ids()[28], 31);
    }

    #[test]
    fn caption_invariants_checked() {
        assert!(CaptionTokens::new(vec![BOS, 5, EOS]).is_ok());
        assert!(CaptionTokens::new(vec![BOS, EOS, 5, EOS]).is_err());
        assert!(CaptionTokens::new(vec![5, EOS]).is_err());
    }

    #[test]
    fn ground_truth_sealed_in_weak_mode() {
        let f = VideoFeatures::new(Tensor::zeros(4, 2), 10.0).unwrap();
        let cap = CaptionTokens::from_body(&[4], 30);
        let e = CorpusEntry::new("v", f, vec![cap], Some(vec![TemporalSegment::WHOLE])).unwrap();
        let mut c = Corpus::new(vec![e], SupervisionMode::Weak);
        assert_eq!(c.ground_truth(0), Err(Error::GroundTruthSealed));
        assert_eq!(c.gt_reads(), 0);
        c.set_mode(SupervisionMode::Evaluation);
        assert_eq!(c.ground_truth(0).unwrap().unwrap().len(), 1);
        assert_eq!(c.gt_reads(), 1);
    }
}
