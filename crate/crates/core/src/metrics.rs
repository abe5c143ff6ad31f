//! Evaluation: tIoU, tIoU-gated caption scores (BLEU, ROUGE-L, CIDEr and a
//! unigram F-mean stand-in for METEOR), event recall curves and sentence
//! localization R@1 / mIoU.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::math;
use crate::segment::TemporalSegment;

pub const CAPTION_THRESHOLDS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];
pub const LOCALIZATION_SIGMAS: [f64; 3] = [0.1, 0.3, 0.5];
pub const ROUGE_BETA: f64 = 1.2;

/// Temporal IoU of two segments after clamping to `[0, 1]`.
pub fn tiou(a: &TemporalSegment, b: &TemporalSegment) -> f64 {
    a.tiou(b)
}

/// Thresholds `0.1, 0.2, …, 0.9`.
pub fn default_recall_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

fn ngram_counts(words: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut m = BTreeMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn clipped_matches(cand: &BTreeMap<&[String], usize>, reference: &BTreeMap<&[String], usize>) -> usize {
    cand.iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

/// Sentence BLEU with uniform weights over orders `1..=n`, clipped n-gram
/// precision and the brevity penalty. An order for which neither sentence
/// has any n-gram counts as a perfect match; an empty candidate scores 0.
pub fn bleu(candidate: &[String], reference: &[String], n: usize) -> f64 {
    let c = candidate.len();
    if c == 0 || n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let cand = ngram_counts(candidate, order);
        let refc = ngram_counts(reference, order);
        let total: usize = cand.values().sum();
        let p = if total == 0 {
            if refc.is_empty() {
                1.0
            } else {
                0.0
            }
        } else {
            clipped_matches(&cand, &refc) as f64 / total as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += math::ln(p);
    }
    let r = reference.len() as f64;
    let bp = if c as f64 > r { 1.0 } else { math::exp(1.0 - r / c as f64) };
    bp * math::exp(log_sum / n as f64)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = alloc::vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure with `β = 1.2`.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(candidate, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Unigram F-mean `10PR / (R + 9P)` on exact matches. A stand-in for METEOR
/// without stemming, synonyms or the fragmentation penalty.
pub fn meteor_proxy(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let m = clipped_matches(&ngram_counts(candidate, 1), &ngram_counts(reference, 1)) as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    10.0 * p * r / (r + 9.0 * p)
}

/// Document frequencies of n-grams (orders 1..=4) over a reference corpus,
/// one document per reference sentence.
#[derive(Debug, Clone, Default)]
pub struct CiderIdf {
    df: [BTreeMap<Vec<String>, usize>; 4],
    docs: usize,
}

impl CiderIdf {
    pub fn new<'a, I>(references: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut idf = CiderIdf::default();
        for sentence in references {
            idf.docs += 1;
            for n in 1..=4 {
                for g in ngram_counts(sentence, n).into_keys() {
                    *idf.df[n - 1].entry(g.to_vec()).or_insert(0) += 1;
                }
            }
        }
        idf
    }

    fn idf(&self, n: usize, g: &[String]) -> f64 {
        let df = self.df[n - 1].get(g).copied().unwrap_or(0).max(1);
        math::ln(self.docs.max(1) as f64 / df as f64)
    }

    fn vector<'s>(&self, words: &'s [String], n: usize) -> (BTreeMap<&'s [String], usize>, BTreeMap<&'s [String], f64>) {
        let counts = ngram_counts(words, n);
        let total: usize = counts.values().sum();
        let vec = counts
            .iter()
            .map(|(&g, &c)| (g, c as f64 / total as f64 * self.idf(n, g)))
            .collect();
        (counts, vec)
    }

    /// `10 ×` the mean over orders 1–4 of the TF-IDF cosine similarity. An
    /// order at which both sentences have identical n-gram counts but a zero
    /// vector (no n-grams, or all with zero idf) counts as similarity 1.
    pub fn score(&self, candidate: &[String], reference: &[String]) -> f64 {
        let mut sum = 0.0;
        for n in 1..=4 {
            let (cc, cv) = self.vector(candidate, n);
            let (rc, rv) = self.vector(reference, n);
            let cn = math::sqrt(cv.values().map(|x| x * x).sum());
            let rn = math::sqrt(rv.values().map(|x| x * x).sum());
            sum += if cn == 0.0 || rn == 0.0 {
                if cc == rc {
                    1.0
                } else {
                    0.0
                }
            } else {
                let dot: f64 = cv.iter().map(|(g, x)| x * rv.get(g).copied().unwrap_or(0.0)).sum();
                dot / (cn * rn)
            };
        }
        10.0 * sum / 4.0
    }
}

/// One captioned event: a segment and its sentence as words.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub segment: TemporalSegment,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricScores {
    /// BLEU@1 to BLEU@4.
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub cider: f64,
    pub meteor_proxy: f64,
}

impl MetricScores {
    fn add_scaled(&mut self, o: &MetricScores, s: f64) {
        for i in 0..4 {
            self.bleu[i] += s * o.bleu[i];
        }
        self.rouge_l += s * o.rouge_l;
        self.cider += s * o.cider;
        self.meteor_proxy += s * o.meteor_proxy;
    }

    /// `(name, value)` pairs in report order.
    pub fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("Bleu_1", self.bleu[0]),
            ("Bleu_2", self.bleu[1]),
            ("Bleu_3", self.bleu[2]),
            ("Bleu_4", self.bleu[3]),
            ("ROUGE_L", self.rouge_l),
            ("CIDEr", self.cider),
            ("METEOR_proxy", self.meteor_proxy),
        ]
    }
}

/// Scores one candidate against one reference with every metric.
pub fn sentence_scores(candidate: &[String], reference: &[String], idf: &CiderIdf) -> MetricScores {
    MetricScores {
        bleu: [1, 2, 3, 4].map(|n| bleu(candidate, reference, n)),
        rouge_l: rouge_l(candidate, reference),
        cider: idf.score(candidate, reference),
        meteor_proxy: meteor_proxy(candidate, reference),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionScoreReport {
    pub thresholds: Vec<f64>,
    pub per_threshold: Vec<MetricScores>,
    /// Mean over thresholds.
    pub mean: MetricScores,
    /// Videos with at least one reference event.
    pub videos: usize,
}

/// The reference with the highest tIoU to `segment` among those at or above
/// `threshold`; ties go to the earlier reference.
fn best_reference<'r>(segment: &TemporalSegment, references: &'r [Event], threshold: f64) -> Option<&'r Event> {
    let mut best: Option<(&Event, f64)> = None;
    for r in references {
        let iou = segment.tiou(&r.segment);
        if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
            best = Some((r, iou));
        }
    }
    best.map(|(r, _)| r)
}

/// tIoU-gated caption scores. At each threshold every prediction is scored
/// against its best-overlapping reference (0 if none clears the threshold);
/// scores are averaged over a video's predictions, then over the videos
/// that have references (a video without predictions scores 0), then over
/// thresholds. Predictions for videos without references are ignored.
pub fn caption_scores(
    predictions: &BTreeMap<String, Vec<Event>>,
    references: &BTreeMap<String, Vec<Event>>,
    thresholds: &[f64],
) -> CaptionScoreReport {
    let idf = CiderIdf::new(references.values().flatten().map(|e| e.words.as_slice()));
    let gt_videos: Vec<(&String, &Vec<Event>)> = references.iter().filter(|(_, r)| !r.is_empty()).collect();
    let mut per_threshold = Vec::with_capacity(thresholds.len());
    for &th in thresholds {
        let mut acc = MetricScores::default();
        for (vid, refs) in &gt_videos {
            let Some(preds) = predictions.get(*vid).filter(|p| !p.is_empty()) else {
                continue;
            };
            let mut video = MetricScores::default();
            for p in preds {
                if let Some(r) = best_reference(&p.segment, refs, th) {
                    video.add_scaled(&sentence_scores(&p.words, &r.words, &idf), 1.0);
                }
            }
            acc.add_scaled(&video, 1.0 / preds.len() as f64);
        }
        if !gt_videos.is_empty() {
            let mut mean = MetricScores::default();
            mean.add_scaled(&acc, 1.0 / gt_videos.len() as f64);
            acc = mean;
        }
        per_threshold.push(acc);
    }
    let mut mean = MetricScores::default();
    for s in &per_threshold {
        mean.add_scaled(s, 1.0 / thresholds.len().max(1) as f64);
    }
    CaptionScoreReport {
        thresholds: thresholds.to_vec(),
        per_threshold,
        mean,
        videos: gt_videos.len(),
    }
}

/// Fraction of reference segments that some prediction of the same video
/// overlaps with tIoU at or above each threshold. `None` without references.
pub fn recall_curve(
    predictions: &BTreeMap<String, Vec<TemporalSegment>>,
    references: &BTreeMap<String, Vec<TemporalSegment>>,
    grid: &[f64],
) -> Option<Vec<(f64, f64)>> {
    let best: Vec<f64> = references
        .iter()
        .flat_map(|(vid, gts)| {
            let preds = predictions.get(vid).map(Vec::as_slice).unwrap_or(&[]);
            gts.iter()
                .map(move |g| preds.iter().map(|p| p.tiou(g)).fold(0.0, f64::max))
        })
        .collect();
    if best.is_empty() {
        return None;
    }
    let n = best.len() as f64;
    Some(
        grid.iter()
            .map(|&th| (th, best.iter().filter(|&&b| b >= th).count() as f64 / n))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    /// `(σ, R@1 at IoU σ)`.
    pub recall_at_1: Vec<(f64, f64)>,
    pub miou: f64,
}

/// R@1 at each σ and mean IoU over `(top-1 prediction, reference)` pairs.
pub fn localization_scores(pairs: &[(TemporalSegment, TemporalSegment)], sigmas: &[f64]) -> LocalizationReport {
    let ious: Vec<f64> = pairs.iter().map(|(p, g)| p.tiou(g)).collect();
    let n = ious.len().max(1) as f64;
    LocalizationReport {
        recall_at_1: sigmas
            .iter()
            .map(|&s| (s, ious.iter().filter(|&&x| x >= s).count() as f64 / n))
            .collect(),
        miou: ious.iter().sum::<f64>() / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn w(s: &str) -> Vec<String> {
        s.split_whitespace().map(|x| x.to_string()).collect()
    }

    #[test]
    fn bleu_worked_example() {
        assert!((bleu(&w("a b c"), &w("a b d"), 1) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(bleu(&w("a b c"), &w("a b c"), 4), 1.0);
        assert_eq!(bleu(&[], &w("a"), 1), 0.0);
    }

    #[test]
    fn rouge_and_meteor_proxy() {
        // LCS 2 of 3 each side: P = R = 2/3.
        assert!((rouge_l(&w("a b c"), &w("a b d")) - 2.0 / 3.0).abs() < 1e-12);
        assert!((meteor_proxy(&w("a b c"), &w("a b d")) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_l(&w("x"), &w("y")), 0.0);
    }

    #[test]
    fn cider_self_match_is_ten() {
        let refs = [w("a man opens the door"), w("a dog eats the apple")];
        let idf = CiderIdf::new(refs.iter().map(Vec::as_slice));
        assert!((idf.score(&refs[0], &refs[0]) - 10.0).abs() < 1e-12);
        assert!(idf.score(&refs[0], &refs[1]) < 10.0);
    }

    #[test]
    fn recall_single_gt() {
        let mut p = BTreeMap::new();
        let mut g = BTreeMap::new();
        let gt = TemporalSegment::from_bounds(0.0, 1.0);
        p.insert("v".to_string(), vec![TemporalSegment::from_bounds(0.0, 0.6)]);
        g.insert("v".to_string(), vec![gt]);
        let curve = recall_curve(&p, &g, &default_recall_grid()).unwrap();
        for (th, r) in curve {
            assert_eq!(r, if th <= 0.6 + 1e-12 { 1.0 } else { 0.0 }, "{th}");
        }
        assert!(recall_curve(&p, &BTreeMap::new(), &[0.5]).is_none());
    }

    #[test]
    fn localization_worked_example() {
        let g = TemporalSegment::from_bounds(0.0, 1.0);
        let pairs = [(TemporalSegment::from_bounds(0.0, 0.2), g), (TemporalSegment::from_bounds(0.0, 0.6), g)];
        let r = localization_scores(&pairs, &LOCALIZATION_SIGMAS);
        let vals: Vec<f64> = r.recall_at_1.iter().map(|x| x.1).collect();
        assert_eq!(vals, vec![1.0, 0.5, 0.5]);
        assert!((r.miou - 0.4).abs() < 1e-12);
    }
}
