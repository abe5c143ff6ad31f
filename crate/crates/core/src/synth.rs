//! Seeded synthetic event videos with template captions.
//!
//! Each event type has a feature signature and a caption template. An event
//! occupies a contiguous run of frames; the type signature is added over the
//! whole run, the signature of the chosen action word over its first half and
//! that of the chosen object word over its second half. Captions name the
//! type's subject, the action, filler words and the object.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::data::{
    build_vocabulary, Corpus, CorpusEntry, SupervisionMode, VideoFeatures, Vocabulary,
    DEFAULT_MAX_CAPTION_LEN,
};
use crate::error::{Error, Result};
use crate::segment::TemporalSegment;
use crate::tensor::Tensor;

const SUBJECTS: [&str; 6] = ["man", "woman", "dog", "child", "cat", "player"];
const ACTIONS: [[&str; 3]; 6] = [
    ["opens", "closes", "paints"],
    ["throws", "catches", "kicks"],
    ["eats", "drops", "washes"],
    ["lifts", "pushes", "pulls"],
    ["chases", "bites", "licks"],
    ["hits", "serves", "misses"],
];
const OBJECTS: [[&str; 3]; 6] = [
    ["door", "window", "box"],
    ["ball", "frisbee", "stick"],
    ["apple", "bowl", "plate"],
    ["chair", "table", "cart"],
    ["mouse", "toy", "rope"],
    ["shot", "net", "racket"],
];
const FILLERS: [&str; 3] = ["the", "a", "then"];

/// Number of action and object choices per event type.
pub const SLOT_CHOICES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_videos: usize,
    pub steps: usize,
    pub dim: usize,
    pub num_event_types: usize,
    /// Inclusive range of events per video.
    pub events_per_video: (usize, usize),
    pub background_noise_std: f64,
    /// Signature magnitude in units of the background std.
    pub signature_scale: f64,
    pub seconds_per_step: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_videos: 200,
            steps: 64,
            dim: 32,
            num_event_types: 3,
            events_per_video: (1, 4),
            background_noise_std: 0.5,
            signature_scale: 3.0,
            seconds_per_step: 1.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("synth spec", reason));
        if self.num_videos == 0 || self.dim == 0 || self.num_event_types == 0 {
            return bad("counts must be positive".into());
        }
        if self.steps < 2 {
            return bad(format!("steps must be at least 2, got {}", self.steps));
        }
        let (lo, hi) = self.events_per_video;
        if lo == 0 || hi < lo {
            return bad(format!("bad events_per_video range ({lo}, {hi})"));
        }
        if self.num_event_types > SUBJECTS.len() {
            return bad(format!(
                "at most {} event types are supported, got {}",
                SUBJECTS.len(),
                self.num_event_types
            ));
        }
        if !(self.background_noise_std >= 0.0 && self.background_noise_std.is_finite()) {
            return bad("background_noise_std must be finite and non-negative".into());
        }
        if !(self.signature_scale >= 0.0 && self.signature_scale.is_finite()) {
            return bad("signature_scale must be finite and non-negative".into());
        }
        if !(self.seconds_per_step > 0.0 && self.seconds_per_step.is_finite()) {
            return bad("seconds_per_step must be positive".into());
        }
        Ok(())
    }

    /// Event length range in frames, `[T/8, 5T/16]` rounded.
    fn width_range(&self) -> (usize, usize) {
        let t = self.steps as f64;
        let lo = (libm::round(t / 8.0) as usize).clamp(1, self.steps);
        let hi = (libm::round(t * 5.0 / 16.0) as usize).clamp(lo, self.steps);
        (lo, hi)
    }
}

/// The words of the caption for type `e`, action `a` and object `o`:
/// `3 + e mod 4` tokens.
pub fn template(e: usize, a: usize, o: usize) -> Vec<&'static str> {
    let fillers = e % 4;
    let mut words = Vec::with_capacity(3 + fillers);
    words.push(SUBJECTS[e]);
    words.push(ACTIONS[e][a]);
    words.extend_from_slice(&FILLERS[..fillers]);
    words.push(OBJECTS[e][o]);
    words
}

/// One generated video before tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub video_id: String,
    pub features: VideoFeatures,
    pub sentences: Vec<String>,
    pub segments: Vec<TemporalSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub videos: Vec<SynthVideo>,
    pub vocabulary: Vocabulary,
}

impl SynthCorpus {
    pub fn corpus(&self, mode: SupervisionMode) -> Corpus {
        let entries = self
            .videos
            .iter()
            .map(|v| {
                let caps = v
                    .sentences
                    .iter()
                    .map(|s| self.vocabulary.encode(s, DEFAULT_MAX_CAPTION_LEN))
                    .collect();
                CorpusEntry::new(
                    v.video_id.clone(),
                    v.features.clone(),
                    caps,
                    Some(v.segments.clone()),
                )
                .expect("one segment per sentence")
            })
            .collect();
        Corpus::new(entries, mode)
    }

    pub fn mean_events_per_video(&self) -> f64 {
        let n: usize = self.videos.iter().map(|v| v.segments.len()).sum();
        n as f64 / self.videos.len().max(1) as f64
    }
}

struct World {
    type_sig: Vec<Vec<f64>>,
    action_sig: Vec<Vec<Vec<f64>>>,
    object_sig: Vec<Vec<Vec<f64>>>,
}

impl World {
    fn new(spec: &SynthSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(0);
        let amp = spec.signature_scale * spec.background_noise_std;
        let sig = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..spec.dim)
                .map(|_| amp * Distribution::<f64>::sample(&StandardNormal, rng))
                .collect()
        };
        let type_sig = (0..spec.num_event_types).map(|_| sig(&mut rng)).collect();
        let action_sig = (0..spec.num_event_types)
            .map(|_| (0..SLOT_CHOICES).map(|_| sig(&mut rng)).collect())
            .collect();
        let object_sig = (0..spec.num_event_types)
            .map(|_| (0..SLOT_CHOICES).map(|_| sig(&mut rng)).collect())
            .collect();
        World {
            type_sig,
            action_sig,
            object_sig,
        }
    }
}

fn add_rows(values: &mut Tensor, rows: core::ops::Range<usize>, sig: &[f64]) {
    for r in rows {
        for (x, s) in values.row_mut(r).iter_mut().zip(sig) {
            *x += s;
        }
    }
}

fn generate_video(spec: &SynthSpec, world: &World, rng: &mut ChaCha8Rng, id: String) -> SynthVideo {
    let steps = spec.steps;
    let (wlo, whi) = spec.width_range();
    let (elo, ehi) = spec.events_per_video;
    let mut n = rng.random_range(elo..=ehi);
    let mut widths: Vec<usize> = (0..n).map(|_| rng.random_range(wlo..=whi)).collect();
    // Drop events until they fit without overlap.
    while n > 1 && widths.iter().sum::<usize>() > steps.saturating_sub(2) {
        n -= 1;
        widths.truncate(n);
    }
    widths[0] = widths[0].min(steps);
    let free = steps - widths.iter().sum::<usize>();
    let raw: Vec<f64> = (0..=n).map(|_| Distribution::<f64>::sample(&Exp1, rng)).collect();
    let total: f64 = raw.iter().sum();
    let gaps: Vec<usize> = raw
        .iter()
        .map(|g| libm::floor(g / total * free as f64) as usize)
        .collect();

    let std = spec.background_noise_std;
    let noise: Vec<f64> = (0..steps * spec.dim)
        .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>();
    let mut values = Tensor::from_vec(steps, spec.dim, noise);
    let mut sentences = Vec::with_capacity(n);
    let mut segments = Vec::with_capacity(n);
    let mut t = gaps[0];
    for i in 0..n {
        let e = rng.random_range(0..spec.num_event_types);
        let a = rng.random_range(0..SLOT_CHOICES);
        let o = rng.random_range(0..SLOT_CHOICES);
        let (s, w) = (t, widths[i]);
        let half = w / 2;
        add_rows(&mut values, s..s + w, &world.type_sig[e]);
        add_rows(&mut values, s..s + half, &world.action_sig[e][a]);
        add_rows(&mut values, s + half..s + w, &world.object_sig[e][o]);
        segments.push(TemporalSegment::new(
            (s as f64 + 0.5 * w as f64) / steps as f64,
            w as f64 / steps as f64,
        ));
        sentences.push(template(e, a, o).join(" "));
        t = s + w + gaps[i + 1];
    }
    let duration = steps as f64 * spec.seconds_per_step;
    SynthVideo {
        video_id: id,
        features: VideoFeatures::new(values, duration).expect("finite synthetic features"),
        sentences,
        segments,
    }
}

fn generate_videos(spec: &SynthSpec, world: &World, stream: u64, count: usize, prefix: &str) -> Vec<SynthVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    (0..count)
        .map(|i| generate_video(spec, world, &mut rng, format!("{prefix}{i:04}")))
        .collect()
}

fn vocabulary_for(spec: &SynthSpec) -> Result<Vocabulary> {
    let mut sentences = Vec::new();
    for e in 0..spec.num_event_types {
        for a in 0..SLOT_CHOICES {
            for o in 0..SLOT_CHOICES {
                sentences.push(template(e, a, o).join(" "));
            }
        }
    }
    build_vocabulary(&sentences, 6000)
}

/// Generates `spec.num_videos` training videos. Pure in `spec`.
pub fn generate_synthetic_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    Ok(generate_synthetic_split(spec, 0)?.0)
}

/// Training videos plus `num_test` held-out videos drawn from the same event
/// types, signatures and templates.
pub fn generate_synthetic_split(spec: &SynthSpec, num_test: usize) -> Result<(SynthCorpus, SynthCorpus)> {
    spec.validate()?;
    let world = World::new(spec);
    let vocabulary = vocabulary_for(spec)?;
    let train = generate_videos(spec, &world, 1, spec.num_videos, "v_");
    let test = generate_videos(spec, &world, 2, num_test, "t_");
    Ok((
        SynthCorpus {
            videos: train,
            vocabulary: vocabulary.clone(),
        },
        SynthCorpus {
            videos: test,
            vocabulary,
        },
    ))
}
