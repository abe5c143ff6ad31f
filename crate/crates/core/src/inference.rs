//! Dense captioning at test time: random proposals, one round of
//! caption-then-localize refinement, self-consistency filtering and caption
//! emission.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::captioner::DecodeMode;
use crate::data::VideoFeatures;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::math;
use crate::model::{Model, VideoGraph};
use crate::segment::TemporalSegment;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub num_proposals: usize,
    pub iou_keep_threshold: f64,
    pub max_rounds: usize,
    pub merge_threshold: f64,
    pub min_width: f64,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            num_proposals: 15,
            iou_keep_threshold: 0.5,
            max_rounds: 1,
            merge_threshold: 0.7,
            min_width: 0.05,
            seed: 7,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_proposals == 0 {
            return Err(Error::invalid("inference config", "num_proposals must be at least 1"));
        }
        for (name, v) in [
            ("iou_keep_threshold", self.iou_keep_threshold),
            ("merge_threshold", self.merge_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid("inference config", format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.min_width > 0.0 && self.min_width <= 1.0) {
            return Err(Error::invalid("inference config", format!("min_width must be in (0, 1], got {}", self.min_width)));
        }
        Ok(())
    }
}

/// Stable 64-bit FNV-1a hash, used to give every video its own random stream.
pub fn stream_id(video_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in video_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// `num_proposals` segments with `m ~ U(0, 1)` and `w ~ U(min_width, 1)`,
/// clamped. Deterministic in `(cfg.seed, stream)`.
pub fn sample_random_segments(cfg: &InferenceConfig, stream: u64) -> Vec<TemporalSegment> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    (0..cfg.num_proposals)
        .map(|_| {
            let m: f64 = rng.random();
            let w = cfg.min_width + (1.0 - cfg.min_width) * rng.random::<f64>();
            TemporalSegment::new(m, w).clamped()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refined {
    pub segment: TemporalSegment,
    /// Some round produced an empty caption; `segment` is the input unchanged.
    pub empty_caption: bool,
}

/// Applies `S ← l(V, g(V, S))` `rounds` times with greedy captions.
pub fn refine_segment(model: &Model, features: &VideoFeatures, s0: TemporalSegment, rounds: usize) -> Result<Refined> {
    let mut g = Graph::new(&model.params);
    let video = model.encode_video(&mut g, features)?;
    refine_on(model, &mut g, &video, s0, rounds)
}

fn refine_on(model: &Model, g: &mut Graph, video: &VideoGraph, s0: TemporalSegment, rounds: usize) -> Result<Refined> {
    let mut s = s0;
    for _ in 0..rounds {
        let (dec, _) = model.caption_at(g, video, s, DecodeMode::Greedy)?;
        if dec.is_empty_caption() {
            return Ok(Refined {
                segment: s0,
                empty_caption: true,
            });
        }
        let loc = model.localize(g, video, &dec.tokens)?;
        s = loc.segment(g);
    }
    Ok(Refined {
        segment: s,
        empty_caption: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub initial: TemporalSegment,
    pub refined: TemporalSegment,
    pub self_iou: f64,
}

/// Keeps refined segments that overlap their initial guess by at least the
/// keep threshold, then drops near-duplicates greedily in order of
/// decreasing self-IoU.
pub fn filter_and_dedup(initials: &[TemporalSegment], refineds: &[TemporalSegment], cfg: &InferenceConfig) -> Result<Vec<Proposal>> {
    if initials.len() != refineds.len() {
        return Err(Error::shape(
            "filter_and_dedup",
            format!("{} refined segments", initials.len()),
            format!("{}", refineds.len()),
        ));
    }
    let mut survivors: Vec<Proposal> = initials
        .iter()
        .zip(refineds)
        .map(|(&initial, &refined)| Proposal {
            initial,
            refined,
            self_iou: initial.tiou(&refined),
        })
        .filter(|p| p.self_iou >= cfg.iou_keep_threshold)
        .collect();
    // Stable sort keeps proposal order among equal self-IoU.
    survivors.sort_by(|a, b| b.self_iou.total_cmp(&a.self_iou));
    let mut kept: Vec<Proposal> = Vec::new();
    for p in survivors {
        if kept.iter().all(|k| k.refined.tiou(&p.refined) < cfg.merge_threshold) {
            kept.push(p);
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseEvent {
    pub segment: TemporalSegment,
    /// Clamped endpoints in seconds.
    pub timestamp: (f64, f64),
    /// `BOS … EOS`.
    pub tokens: Vec<usize>,
    pub initial: TemporalSegment,
    pub refined: TemporalSegment,
    pub self_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseCaptionResult {
    pub events: Vec<DenseEvent>,
    /// Proposals whose refinement produced an empty caption; they are not
    /// eligible for filtering.
    pub empty_captions: usize,
    /// Every proposal was filtered out.
    pub all_filtered: bool,
    /// Every random proposal with its refinement, in sampling order.
    pub proposals: Vec<(TemporalSegment, Refined)>,
}

/// Sample, refine, filter, caption and denormalize.
pub fn dense_caption(model: &Model, features: &VideoFeatures, stream: u64, cfg: &InferenceConfig) -> Result<DenseCaptionResult> {
    cfg.validate()?;
    let mut g = Graph::new(&model.params);
    let video = model.encode_video(&mut g, features)?;
    let mut initials = Vec::new();
    let mut refineds = Vec::new();
    let mut empty = 0;
    let mut proposals = Vec::with_capacity(cfg.num_proposals);
    for s0 in sample_random_segments(cfg, stream) {
        let r = refine_on(model, &mut g, &video, s0, cfg.max_rounds)?;
        proposals.push((s0, r));
        if r.empty_caption {
            empty += 1;
            continue;
        }
        initials.push(s0);
        refineds.push(r.segment);
    }
    let kept = filter_and_dedup(&initials, &refineds, cfg)?;
    let mut events = Vec::with_capacity(kept.len());
    for p in &kept {
        let (dec, _) = model.caption_at(&mut g, &video, p.refined, DecodeMode::Greedy)?;
        if dec.is_empty_caption() {
            continue;
        }
        events.push(DenseEvent {
            segment: p.refined,
            timestamp: p.refined.to_seconds(features.duration()),
            tokens: dec.tokens,
            initial: p.initial,
            refined: p.refined,
            self_iou: p.self_iou,
        });
    }
    Ok(DenseCaptionResult {
        all_filtered: events.is_empty(),
        events,
        empty_captions: empty,
        proposals,
    })
}

/// `F(s) = l(V, g(V, s))` as used by the contraction diagnostic. An empty
/// caption maps `s` to itself.
pub fn cycle_map(model: &Model, g: &mut Graph, video: &VideoGraph, s: TemporalSegment) -> Result<TemporalSegment> {
    Ok(refine_on(model, g, video, s, 1)?.segment)
}

/// Empirical Lipschitz ratios `‖F(a) − F(b)‖ / ‖a − b‖` over probe pairs.
/// Pairs closer than `1e-12` are skipped.
pub fn contraction_ratios(model: &Model, features: &VideoFeatures, probes: &[(TemporalSegment, TemporalSegment)]) -> Result<Vec<f64>> {
    let mut g = Graph::new(&model.params);
    let video = model.encode_video(&mut g, features)?;
    let mut out = Vec::with_capacity(probes.len());
    for &(a, b) in probes {
        let d_in = math::sqrt((a.m - b.m) * (a.m - b.m) + (a.w - b.w) * (a.w - b.w));
        if d_in < 1e-12 {
            continue;
        }
        let fa = cycle_map(model, &mut g, &video, a)?;
        let fb = cycle_map(model, &mut g, &video, b)?;
        let d_out = math::sqrt((fa.m - fb.m) * (fa.m - fb.m) + (fa.w - fb.w) * (fa.w - fb.w));
        out.push(d_out / d_in);
    }
    Ok(out)
}

/// Probe pairs around `centers`: each center paired with a copy shifted by
/// `radius` in a seeded random direction.
pub fn probe_pairs(centers: &[TemporalSegment], radius: f64, seed: u64) -> Vec<(TemporalSegment, TemporalSegment)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    centers
        .iter()
        .map(|&c| {
            let angle = core::f64::consts::TAU * rng.random::<f64>();
            let b = TemporalSegment::new(c.m + radius * libm::cos(angle), c.w + radius * libm::sin(angle)).clamped();
            (c.clamped(), b)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(a: f64, b: f64) -> TemporalSegment {
        TemporalSegment::from_bounds(a, b)
    }

    #[test]
    fn sampling_is_seeded_and_valid() {
        let cfg = InferenceConfig::default();
        let a = sample_random_segments(&cfg, 3);
        assert_eq!(a.len(), 15);
        assert_eq!(a, sample_random_segments(&cfg, 3));
        assert_ne!(a, sample_random_segments(&cfg, 4));
        let big = InferenceConfig {
            num_proposals: 10_000,
            ..cfg
        };
        for s in sample_random_segments(&big, 0) {
            assert!(s.is_valid());
            assert!(s.w >= 0.05 && s.w <= 1.0 && (0.0..=1.0).contains(&s.m));
        }
    }

    #[test]
    fn filtering_rules() {
        let cfg = InferenceConfig::default();
        let init = [seg(0.1, 0.3), seg(0.5, 0.9)];
        let kept = filter_and_dedup(&init, &init, &cfg).unwrap();
        assert_eq!(kept.len(), 2);
        let kept = filter_and_dedup(&[seg(0.0, 0.2)], &[seg(0.8, 1.0)], &cfg).unwrap();
        assert!(kept.is_empty());
        let same = [seg(0.2, 0.6), seg(0.2, 0.6)];
        assert_eq!(filter_and_dedup(&same, &same, &cfg).unwrap().len(), 1);
        assert!(filter_and_dedup(&same, &same[..1], &cfg).is_err());
    }

    #[test]
    fn dedup_prefers_higher_self_iou() {
        let cfg = InferenceConfig::default();
        let init = [seg(0.2, 0.6), seg(0.2, 0.6)];
        let refined = [seg(0.25, 0.6), seg(0.2, 0.6)];
        let kept = filter_and_dedup(&init, &refined, &cfg).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].refined, seg(0.2, 0.6));
    }

    #[test]
    fn stream_ids_differ() {
        assert_ne!(stream_id("v_0001"), stream_id("v_0002"));
        assert_eq!(stream_id(""), 0xcbf2_9ce4_8422_2325);
    }
}
