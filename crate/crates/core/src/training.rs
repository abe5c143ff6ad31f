//! Cycle training: caption loss, segment reconstruction loss, anchor loss,
//! pretraining on the whole video and the two-stage schedule.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::captioner::DecodeMode;
use crate::data::{VideoFeatures, WeakView, PAD};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::localizer::AnchorSet;
use crate::math;
use crate::model::{Model, VideoGraph};
use crate::params::{Gradients, Sgd};
use crate::segment::TemporalSegment;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_a: f64,
    /// Std of the Gaussian noise added to `(m, w)` in the cycle.
    pub sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_s: 0.1,
            lambda_a: 0.1,
            sigma: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_s", self.lambda_s), ("lambda_a", self.lambda_a), ("sigma", self.sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid("loss weights", format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Pretrain,
    Stage1,
    Stage2,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Pretrain, Stage::Stage1, Stage::Stage2];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }

    pub fn index(self) -> u64 {
        self as u64
    }

    pub fn from_name(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }
}

/// Mean negative log-likelihood of the non-`PAD` targets.
pub fn caption_loss(g: &mut Graph, logits: &[NodeId], targets: &[usize]) -> Result<NodeId> {
    if logits.len() != targets.len() {
        return Err(Error::shape("caption_loss", format!("{} logits rows", targets.len()), format!("{}", logits.len())));
    }
    let terms: Vec<NodeId> = logits
        .iter()
        .zip(targets)
        .filter(|(_, &t)| t != PAD)
        .map(|(&l, &t)| g.cross_entropy(l, t))
        .collect();
    if terms.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let n = terms.len() as f64;
    let stacked = g.concat(&terms);
    let total = g.sum(stacked);
    Ok(g.scale(total, 1.0 / n))
}

/// [`caption_loss`] on a plain `T × V` logits matrix.
pub fn caption_loss_value(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    if logits.rows() != targets.len() {
        return Err(Error::shape("caption_loss", format!("{} rows", targets.len()), format!("{}", logits.rows())));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (r, &t) in targets.iter().enumerate() {
        if t == PAD {
            continue;
        }
        let row = logits.row(r);
        sum += math::log_sum_exp(row) - row[t];
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyTarget);
    }
    Ok(sum / n as f64)
}

/// `(m − m')² + (w − w')²`.
pub fn reconstruction_loss(s: TemporalSegment, s_rec: TemporalSegment) -> f64 {
    let dm = s.m - s_rec.m;
    let dw = s.w - s_rec.w;
    dm * dm + dw * dw
}

fn reconstruction_loss_node(g: &mut Graph, target: TemporalSegment, m: NodeId, w: NodeId) -> NodeId {
    let tm = g.constant_scalar(target.m);
    let tw = g.constant_scalar(target.w);
    let dm = g.sub(tm, m);
    let dw = g.sub(tw, w);
    let dm2 = g.mul(dm, dm);
    let dw2 = g.mul(dw, dw);
    g.add(dm2, dw2)
}

/// Cross-entropy of the anchor logits against the chosen anchor.
pub fn anchor_loss(g: &mut Graph, anchor_logits: NodeId, best: usize) -> Result<NodeId> {
    let n = g.value(anchor_logits).len();
    if best >= n {
        return Err(Error::invalid("anchor label", format!("{best} out of {n} anchors")));
    }
    Ok(g.cross_entropy(anchor_logits, best))
}

/// Index of the anchor with the highest score; ties go to the lowest index.
pub fn label_best_anchor_by<F>(anchors: &AnchorSet, mut score: F) -> Result<usize>
where
    F: FnMut(TemporalSegment) -> Result<f64>,
{
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, &a) in anchors.anchors().iter().enumerate() {
        let s = score(a)?;
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    Ok(best)
}

/// Scores every anchor by the mean per-token log-likelihood of `tokens`
/// under the captioner given that anchor, teacher-forced, and returns the
/// best. Nothing here is differentiated.
pub fn label_best_anchor(model: &Model, features: &VideoFeatures, tokens: &[usize]) -> Result<usize> {
    let mut g = Graph::new(&model.params);
    let video = model.encode_video(&mut g, features)?;
    label_best_anchor_on(model, &mut g, &video, tokens)
}

fn label_best_anchor_on(model: &Model, g: &mut Graph, video: &VideoGraph, tokens: &[usize]) -> Result<usize> {
    label_best_anchor_by(&model.anchors, |a| {
        let (dec, _) = model.caption_at(g, video, a, DecodeMode::TeacherForced(tokens))?;
        let loss = caption_loss(g, &dec.logits, &dec.tokens)?;
        Ok(-g.scalar(loss))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub l_c: f64,
    pub l_s: f64,
    pub l_a: f64,
    pub total: f64,
}

impl StepLosses {
    fn is_finite(&self) -> bool {
        self.l_c.is_finite() && self.l_s.is_finite() && self.l_a.is_finite() && self.total.is_finite()
    }

    fn add_scaled(&mut self, other: &StepLosses, s: f64) {
        self.l_c += s * other.l_c;
        self.l_s += s * other.l_s;
        self.l_a += s * other.l_a;
        self.total += s * other.total;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub pretrain_epochs: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            clip_norm: 5.0,
            batch_size: 1,
            weights: LossWeights::default(),
            pretrain_epochs: 3,
            stage1_epochs: 3,
            stage2_epochs: 60,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("train config", format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("train config", format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("train config", "clip_norm must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("train config", "batch_size must be positive"));
        }
        Ok(())
    }

    pub fn epochs(&self, stage: Stage) -> usize {
        match stage {
            Stage::Pretrain => self.pretrain_epochs,
            Stage::Stage1 => self.stage1_epochs,
            Stage::Stage2 => self.stage2_epochs,
        }
    }
}

/// Everything needed to continue training: the model, optimizer slots and
/// the position in the schedule.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: Sgd,
    pub stage: Stage,
    /// Completed epochs within `stage`.
    pub epoch: usize,
    /// Optimizer updates so far.
    pub step: u64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(model: Model, cfg: &TrainConfig) -> Self {
        let optimizer = Sgd::new(&model.params, cfg.lr, cfg.momentum, Some(cfg.clip_norm));
        TrainState {
            model,
            optimizer,
            stage: Stage::Pretrain,
            epoch: 0,
            step: 0,
            seed: cfg.seed,
        }
    }

    /// Moves to `stage`, which may not be earlier than the current one.
    pub fn advance_to(&mut self, stage: Stage) -> Result<()> {
        if stage < self.stage {
            return Err(Error::Stage {
                current: self.stage.name(),
                requested: stage.name(),
            });
        }
        if stage != self.stage {
            self.stage = stage;
            self.epoch = 0;
        }
        Ok(())
    }

    /// Rounds parameters and momentum to `f32`, matching what a checkpoint
    /// stores.
    pub fn round_to_f32(&mut self) {
        self.model.params.round_to_f32();
        self.optimizer.velocity_mut().round_to_f32();
    }

    fn require(&self, allowed: &[Stage], requested: Stage) -> Result<()> {
        if allowed.contains(&self.stage) {
            Ok(())
        } else {
            Err(Error::Stage {
                current: self.stage.name(),
                requested: requested.name(),
            })
        }
    }

    fn step_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1 << 32 | self.step);
        rng
    }
}

/// Forward and backward for one (video, caption) pair at the current stage.
fn sample_gradients(
    model: &Model,
    stage: Stage,
    features: &VideoFeatures,
    tokens: &[usize],
    weights: &LossWeights,
    noise: (f64, f64),
) -> Result<(StepLosses, Gradients)> {
    model.check_inputs(features, tokens)?;
    let mut g = Graph::new(&model.params);
    let video = model.encode_video(&mut g, features)?;
    if stage == Stage::Pretrain {
        let (dec, _) = model.caption_at(&mut g, &video, TemporalSegment::WHOLE, DecodeMode::TeacherForced(tokens))?;
        let l_c = caption_loss(&mut g, &dec.logits, &dec.tokens)?;
        let losses = StepLosses {
            l_c: g.scalar(l_c),
            total: g.scalar(l_c),
            ..StepLosses::default()
        };
        let grads = g.param_grads(&g.backward(l_c));
        return Ok((losses, grads));
    }

    let loc = model.localize(&mut g, &video, tokens)?;
    let (dec, _) = model.caption(&mut g, &video, loc.m, loc.w, DecodeMode::TeacherForced(tokens))?;
    let l_c = caption_loss(&mut g, &dec.logits, &dec.tokens)?;
    let mut total = l_c;

    let s = loc.segment(&g);
    let noisy = TemporalSegment::new(s.m + noise.0, s.w + noise.1).clamped();
    let (cycled, _) = model.caption_at(&mut g, &video, noisy, DecodeMode::Greedy)?;
    let relocated = model.localize(&mut g, &video, &cycled.tokens)?;
    let l_s = reconstruction_loss_node(&mut g, s, relocated.m, relocated.w);
    if weights.lambda_s != 0.0 {
        let term = g.scale(l_s, weights.lambda_s);
        total = g.add(total, term);
    }

    let mut l_a_value = 0.0;
    if stage == Stage::Stage2 {
        let best = label_best_anchor_on(model, &mut g, &video, tokens)?;
        let l_a = anchor_loss(&mut g, loc.anchor_logits, best)?;
        l_a_value = g.scalar(l_a);
        if weights.lambda_a != 0.0 {
            let term = g.scale(l_a, weights.lambda_a);
            total = g.add(total, term);
        }
    }
    let losses = StepLosses {
        l_c: g.scalar(l_c),
        l_s: g.scalar(l_s),
        l_a: l_a_value,
        total: g.scalar(total),
    };
    let grads = g.param_grads(&g.backward(total));
    Ok((losses, grads))
}

/// One optimizer update on a batch of (video, caption) pairs at the current
/// stage. Losses and gradients are averaged over the batch. A non-finite
/// loss or gradient aborts the step without touching the parameters.
pub fn train_step(
    state: &mut TrainState,
    batch: &[(&VideoFeatures, &[usize])],
    weights: &LossWeights,
) -> Result<StepLosses> {
    if batch.is_empty() {
        return Err(Error::invalid("batch", "empty"));
    }
    let stage = state.stage;
    let mut rng = state.step_rng();
    let normal = if weights.sigma > 0.0 {
        Some(Normal::new(0.0, weights.sigma).map_err(|_| Error::invalid("sigma", "bad noise std"))?)
    } else {
        None
    };
    let scale = 1.0 / batch.len() as f64;
    let mut mean = StepLosses::default();
    let mut grads = Gradients::new(state.model.params.len());
    for &(features, tokens) in batch {
        let noise = match &normal {
            Some(n) => (n.sample(&mut rng), n.sample(&mut rng)),
            None => (0.0, 0.0),
        };
        let (losses, g) = sample_gradients(&state.model, stage, features, tokens, weights, noise)?;
        if !losses.is_finite() {
            return Err(Error::NonFinite {
                step: state.step,
                detail: format!("{losses:?}"),
            });
        }
        mean.add_scaled(&losses, scale);
        grads.accumulate(&g);
    }
    grads.scale(scale);
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            step: state.step,
            detail: "gradient".into(),
        });
    }
    state.optimizer.step(&mut state.model.params, &mut grads);
    state.step += 1;
    Ok(mean)
}

/// One cycle update (stage 1 or 2) on a single pair.
pub fn cycle_step(
    state: &mut TrainState,
    features: &VideoFeatures,
    tokens: &[usize],
    weights: &LossWeights,
) -> Result<StepLosses> {
    state.require(&[Stage::Stage1, Stage::Stage2], Stage::Stage1)?;
    train_step(state, &[(features, tokens)], weights)
}

/// One captioner update on the whole-video segment; returns `L_c`.
pub fn pretrain_step(state: &mut TrainState, features: &VideoFeatures, tokens: &[usize]) -> Result<f64> {
    state.require(&[Stage::Pretrain], Stage::Pretrain)?;
    Ok(train_step(state, &[(features, tokens)], &LossWeights::default())?.l_c)
}

/// Losses of a pair at the current parameters, without an update.
pub fn evaluate_losses(
    state: &TrainState,
    features: &VideoFeatures,
    tokens: &[usize],
    weights: &LossWeights,
    noise: (f64, f64),
) -> Result<StepLosses> {
    Ok(sample_gradients(&state.model, state.stage, features, tokens, weights, noise)?.0)
}

/// (video, caption) pairs in a seeded order for one epoch.
pub fn epoch_order(view: &WeakView<'_>, seed: u64, stage: Stage, epoch: usize) -> Vec<(usize, usize)> {
    let mut pairs = view.pairs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 << 32 | stage.index() << 24 | epoch as u64);
    pairs.shuffle(&mut rng);
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub stage: Stage,
    pub losses: StepLosses,
}

/// Progress reported by [`train`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainEvent {
    Step(StepRecord),
    EpochEnd { stage: Stage, epoch: usize },
    StageEnd(Stage),
}

/// Runs the remaining schedule from the state's position. The observer sees
/// every step and every epoch and stage boundary; at those boundaries the
/// state has been rounded to `f32` so a checkpoint taken there resumes
/// exactly. An observer error stops training.
pub fn train<F>(state: &mut TrainState, view: &WeakView<'_>, cfg: &TrainConfig, mut observe: F) -> Result<()>
where
    F: FnMut(&TrainState, TrainEvent) -> Result<()>,
{
    cfg.validate()?;
    for stage in Stage::ALL {
        if stage < state.stage {
            continue;
        }
        state.advance_to(stage)?;
        while state.epoch < cfg.epochs(stage) {
            let order = epoch_order(view, state.seed, stage, state.epoch);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<(&VideoFeatures, &[usize])> = chunk
                    .iter()
                    .map(|&(v, c)| (view.features(v), view.captions(v)[c].ids()))
                    .collect();
                let losses = train_step(state, &batch, &cfg.weights)?;
                observe(
                    state,
                    TrainEvent::Step(StepRecord {
                        step: state.step,
                        stage,
                        losses,
                    }),
                )?;
            }
            state.epoch += 1;
            state.round_to_f32();
            observe(state, TrainEvent::EpochEnd { stage, epoch: state.epoch })?;
        }
        observe(state, TrainEvent::StageEnd(stage))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BOS, EOS};
    use crate::model::ModelConfig;
    use alloc::vec;

    #[test]
    fn caption_loss_worked_values() {
        let v = 6000;
        let uniform = Tensor::zeros(3, v);
        let l = caption_loss_value(&uniform, &[5, 6, 7]).unwrap();
        assert!((l - libm::log(6000.0)).abs() < 1e-12);
        assert!((l - 8.6995).abs() < 5e-5);

        let mut probs = Tensor::zeros(2, 4);
        // Log-probabilities so that softmax gives exactly 0.5 and 0.25.
        probs.row_mut(0).copy_from_slice(&[libm::log(0.5), libm::log(0.5), f64::NEG_INFINITY, f64::NEG_INFINITY]);
        probs.row_mut(1).copy_from_slice(&[libm::log(0.25); 4]);
        let l = caption_loss_value(&probs, &[1, 3]).unwrap();
        assert!((l - 1.039_720_770_839_917_9).abs() < 1e-12, "{l}");

        assert_eq!(caption_loss_value(&Tensor::zeros(2, 4), &[PAD, PAD]), Err(Error::EmptyTarget));
        let mut sharp = Tensor::zeros(1, 4);
        sharp.set(0, 2, 1e3);
        assert!(caption_loss_value(&sharp, &[2]).unwrap() < 1e-12);
    }

    #[test]
    fn reconstruction_worked_values() {
        let a = TemporalSegment::new(0.5, 0.4);
        let b = TemporalSegment::new(0.6, 0.2);
        assert!((reconstruction_loss(a, b) - 0.05).abs() < 1e-12);
        assert_eq!(reconstruction_loss(a, b), reconstruction_loss(b, a));
        assert_eq!(reconstruction_loss(a, a), 0.0);
    }

    #[test]
    fn anchor_loss_uniform_is_log_count() {
        let store = crate::params::ParamStore::new();
        let mut g = Graph::new(&store);
        let logits = g.constant_vec(vec![0.0; 26]);
        let l = anchor_loss(&mut g, logits, 4).unwrap();
        assert!((g.scalar(l) - 3.2581).abs() < 5e-5);
        assert!(anchor_loss(&mut g, logits, 26).is_err());
    }

    #[test]
    fn label_ties_go_to_lowest_index() {
        let anchors = AnchorSet::new(&[1.0, 0.5]).unwrap();
        assert_eq!(label_best_anchor_by(&anchors, |_| Ok(1.0)).unwrap(), 0);
        let single = AnchorSet::new(&[1.0]).unwrap();
        assert_eq!(label_best_anchor_by(&single, |a| Ok(a.m)).unwrap(), 0);
    }

    #[test]
    fn stage_transitions_only_forward() {
        let cfg = ModelConfig {
            hidden: 4,
            feature_dim: 2,
            vocab_size: 8,
            ..ModelConfig::default()
        };
        let mut st = TrainState::new(Model::new(cfg).unwrap(), &TrainConfig::default());
        st.advance_to(Stage::Stage2).unwrap();
        assert!(matches!(st.advance_to(Stage::Stage1), Err(Error::Stage { .. })));
        let f = VideoFeatures::new(Tensor::zeros(4, 2), 4.0).unwrap();
        assert!(pretrain_step(&mut st, &f, &[BOS, 4, EOS]).is_err());
    }
}
