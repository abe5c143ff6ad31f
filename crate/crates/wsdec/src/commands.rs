//! The `synth`, `train`, `infer` and `eval` commands.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use wsdec_core::data::{tokenize, SupervisionMode, Vocabulary};
use wsdec_core::graph::Graph;
use wsdec_core::metrics::{caption_scores, localization_scores, recall_curve, Event};
use wsdec_core::model::{Model, ModelConfig};
use wsdec_core::synth::{generate_synthetic_split, SynthCorpus};
use wsdec_core::training::{train, TrainEvent, TrainState};
use wsdec_core::TemporalSegment;

use crate::annotations::{self, AnnotationEntry, Annotations, LoadedCorpus};
use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features;
use crate::output::{self, VideoDiagnostics};
use crate::pipeline;
use crate::vocab;

pub const TRAIN_SPLIT: &str = "train";
pub const TEST_SPLIT: &str = "test";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const FEATURES_DIR: &str = "features";
pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_CSV: &str = "losses.csv";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const LOCALIZATION_FILE: &str = "localization.json";
pub const REPORT_FILE: &str = "report.json";
pub const RECALL_CSV: &str = "recall.csv";

pub fn split_file(split: &str) -> String {
    format!("{split}.json")
}

pub fn stage_checkpoint(stage: &str) -> String {
    format!("{stage}.ckpt")
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Creates `dir`, refusing when `marker` already exists inside it unless
/// `force` is set.
fn prepare_out(dir: &Path, marker: &str, force: bool) -> Result<()> {
    let m = dir.join(marker);
    if m.exists() && !force {
        return Err(Error::OutputExists(m));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn synth_annotations(c: &SynthCorpus, seconds_per_step: f64) -> Annotations {
    c.videos
        .iter()
        .map(|v| {
            let duration = v.features.steps() as f64 * seconds_per_step;
            let timestamps = v
                .segments
                .iter()
                .map(|s| {
                    let (a, b) = s.to_seconds(duration);
                    [a, b]
                })
                .collect();
            (
                v.video_id.clone(),
                AnnotationEntry {
                    duration,
                    sentences: v.sentences.clone(),
                    timestamps: Some(timestamps),
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthStats {
    pub train_videos: usize,
    pub test_videos: usize,
    pub events_per_video: f64,
    pub vocab_size: usize,
}

/// Writes features, train and test annotations, the vocabulary and the
/// resolved configuration into `out`.
pub fn synth(cfg: &RunConfig, out: &Path, force: bool) -> Result<SynthStats> {
    cfg.validate()?;
    prepare_out(out, &split_file(TRAIN_SPLIT), force)?;
    let (train_set, test_set) = generate_synthetic_split(&cfg.synth, cfg.num_test)?;
    let feat_dir = out.join(FEATURES_DIR);
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    for v in train_set.videos.iter().chain(&test_set.videos) {
        features::write(&feat_dir.join(features::file_name(&v.video_id)), v.features.values())?;
    }
    let sentences: Vec<&str> = train_set
        .videos
        .iter()
        .flat_map(|v| v.sentences.iter().map(String::as_str))
        .collect();
    let vocabulary = wsdec_core::data::build_vocabulary(&sentences, cfg.vocab_cap)?;
    vocab::write(&out.join(VOCAB_FILE), &vocabulary)?;
    annotations::write(
        &out.join(split_file(TRAIN_SPLIT)),
        &synth_annotations(&train_set, cfg.synth.seconds_per_step),
    )?;
    annotations::write(
        &out.join(split_file(TEST_SPLIT)),
        &synth_annotations(&test_set, cfg.synth.seconds_per_step),
    )?;
    write(&out.join(CONFIG_FILE), cfg.to_text())?;
    Ok(SynthStats {
        train_videos: train_set.videos.len(),
        test_videos: test_set.videos.len(),
        events_per_video: train_set.mean_events_per_video(),
        vocab_size: vocabulary.len(),
    })
}

/// A split of a data directory with its vocabulary.
pub struct Dataset {
    pub vocab: Vocabulary,
    pub annotations: Annotations,
    pub loaded: LoadedCorpus,
}

pub fn load_split(data: &Path, split: &str, cfg: &RunConfig, mode: SupervisionMode) -> Result<Dataset> {
    let vocab = vocab::read(&data.join(VOCAB_FILE))?;
    let path = data.join(split_file(split));
    let ann = annotations::read(&path)?;
    let loaded = annotations::load_corpus(&ann, &path, &data.join(FEATURES_DIR), &vocab, cfg.model.max_caption_len, mode)?;
    if !loaded.missing_features.is_empty() {
        eprintln!(
            "warning: {} videos without feature files skipped: {}",
            loaded.missing_features.len(),
            loaded.missing_features.join(", ")
        );
    }
    if loaded.dropped_events > 0 {
        eprintln!("warning: {} events with end <= start dropped", loaded.dropped_events);
    }
    Ok(Dataset {
        vocab,
        annotations: ann,
        loaded,
    })
}

fn model_config(cfg: &RunConfig, vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        ..cfg.model.clone()
    }
}

pub const LOSS_HEADER: &str = "step,stage,L_c,L_s,L_a,total";

/// Trains on the train split of `data`, writing the loss log, a checkpoint
/// after every epoch and one per finished stage. A resumed run appends to
/// an existing loss log. Returns the final state.
pub fn train_cmd(cfg: &RunConfig, data: &Path, out: &Path, resume: Option<&Path>, force: bool) -> Result<TrainState> {
    cfg.validate()?;
    let ds = load_split(data, TRAIN_SPLIT, cfg, SupervisionMode::Weak)?;
    let mcfg = model_config(cfg, &ds.vocab);
    let mut state = match resume {
        Some(p) => {
            let s = checkpoint::load(p, &cfg.train)?;
            checkpoint::check_model(p, &s, &mcfg)?;
            s
        }
        None => {
            prepare_out(out, LOSS_CSV, force)?;
            TrainState::new(Model::new(mcfg)?, &cfg.train)
        }
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join(CONFIG_FILE), cfg.to_text())?;
    let csv_path = out.join(LOSS_CSV);
    let appending = resume.is_some() && csv_path.exists();
    let mut csv = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(appending)
        .truncate(!appending)
        .open(&csv_path)
        .map_err(|e| Error::io(&csv_path, e))?;
    if !appending {
        writeln!(csv, "{LOSS_HEADER}").map_err(|e| Error::io(&csv_path, e))?;
    }

    let view = ds.loaded.corpus.weak_view();
    let mut io_error: Option<Error> = None;
    let result = train(&mut state, &view, &cfg.train, |st, ev| {
        let r = match ev {
            TrainEvent::Step(r) => writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.step,
                r.stage.name(),
                r.losses.l_c,
                r.losses.l_s,
                r.losses.l_a,
                r.losses.total
            )
            .map_err(|e| Error::io(&csv_path, e)),
            TrainEvent::EpochEnd { .. } => csv
                .flush()
                .map_err(|e| Error::io(&csv_path, e))
                .and_then(|_| checkpoint::save(&out.join(LAST_CHECKPOINT), st)),
            TrainEvent::StageEnd(stage) => checkpoint::save(&out.join(stage_checkpoint(stage.name())), st),
        };
        r.map_err(|e| {
            let msg = e.to_string();
            io_error = Some(e);
            wsdec_core::Error::Invalid {
                what: "output",
                reason: msg,
            }
        })
    });
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    match (result, io_error) {
        (_, Some(e)) => Err(e),
        (Err(e), None) => Err(e.into()),
        (Ok(()), None) => Ok(state),
    }
}

fn durations(ann: &Annotations) -> BTreeMap<String, f64> {
    ann.iter().map(|(k, v)| (k.clone(), v.duration)).collect()
}

/// Dense captions and top-1 sentence localizations for a split, written as
/// prediction files into `out`.
pub fn infer_cmd(
    cfg: &RunConfig,
    data: &Path,
    split: &str,
    ckpt: &Path,
    out: &Path,
    dump_diagnostics: bool,
    force: bool,
) -> Result<()> {
    cfg.validate()?;
    prepare_out(out, PREDICTIONS_FILE, force)?;
    let ds = load_split(data, split, cfg, SupervisionMode::Weak)?;
    let state = checkpoint::load(ckpt, &cfg.train)?;
    checkpoint::check_model(ckpt, &state, &model_config(cfg, &ds.vocab))?;
    let model = &state.model;
    let corpus = &ds.loaded.corpus;

    let dense = pipeline::dense_caption_corpus(model, corpus, &cfg.infer)?;
    let diagnostics = if dump_diagnostics {
        Some(
            pipeline::contraction(model, corpus, &dense, cfg.infer.seed)?
                .into_iter()
                .map(|(k, c)| {
                    (
                        k,
                        VideoDiagnostics {
                            contraction_ratios: c.ratios,
                        },
                    )
                })
                .collect(),
        )
    } else {
        None
    };
    let durs = durations(&ds.annotations);
    write(
        &out.join(PREDICTIONS_FILE),
        output::predictions_json(&dense, &ds.vocab, &durs, diagnostics.as_ref()),
    )?;

    let mut loc = BTreeMap::new();
    for e in corpus.entries() {
        let mut g = Graph::new(&model.params);
        let video = model.encode_video(&mut g, &e.features)?;
        let mut rows = Vec::new();
        for c in &e.captions {
            let s = model.localize(&mut g, &video, c.ids())?.segment(&g);
            rows.push((ds.vocab.decode(c.ids()), s.to_seconds(e.features.duration())));
        }
        loc.insert(e.video_id.clone(), rows);
    }
    write(&out.join(LOCALIZATION_FILE), output::localization_json(&loc))?;
    write(&out.join(CONFIG_FILE), cfg.to_text())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Captioning,
    Localization,
    Recall,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Captioning => "captioning",
            EvalMode::Localization => "localization",
            EvalMode::Recall => "recall",
        }
    }
}

fn segment_of(ts: [f64; 2], duration: f64) -> TemporalSegment {
    TemporalSegment::from_seconds(ts[0], ts[1], duration)
}

/// Scores a prediction file against annotations with timestamps. Videos
/// present in only one of the files are reported and left out.
pub fn eval_cmd(cfg: &RunConfig, predictions: &Path, annotations_path: &Path, mode: EvalMode, out: &Path, force: bool) -> Result<String> {
    cfg.validate()?;
    prepare_out(out, REPORT_FILE, force)?;
    let ann = annotations::read(annotations_path)?;
    let preds = output::read_predictions(predictions)?;

    let pred_ids: BTreeSet<&String> = preds.keys().collect();
    let ref_ids: BTreeSet<&String> = ann.keys().collect();
    let only_pred: Vec<&str> = pred_ids.difference(&ref_ids).map(|s| s.as_str()).collect();
    let only_ref: Vec<&str> = ref_ids.difference(&pred_ids).map(|s| s.as_str()).collect();
    if !only_pred.is_empty() {
        eprintln!("warning: predictions without annotations: {}", only_pred.join(", "));
    }
    if !only_ref.is_empty() {
        eprintln!("warning: annotations without predictions: {}", only_ref.join(", "));
    }
    let common: Vec<&String> = pred_ids.intersection(&ref_ids).copied().collect();

    let mut refs: BTreeMap<String, Vec<Event>> = BTreeMap::new();
    let mut pred_events: BTreeMap<String, Vec<Event>> = BTreeMap::new();
    let mut loc_pairs = Vec::new();
    for vid in common {
        let entry = &ann[vid];
        let segs = annotations::segments(entry)
            .ok_or_else(|| Error::format(annotations_path, format!("{vid:?}: timestamps are required for evaluation")))?;
        let mut r = Vec::new();
        for (j, (sentence, seg)) in entry.sentences.iter().zip(&segs).enumerate() {
            let Some(seg) = seg else {
                continue;
            };
            r.push(Event {
                segment: *seg,
                words: tokenize(sentence),
            });
            if mode == EvalMode::Localization {
                if let Some(p) = preds[vid].get(j) {
                    loc_pairs.push((segment_of(p.timestamp, entry.duration), *seg));
                }
            }
        }
        refs.insert(vid.clone(), r);
        let p = preds[vid]
            .iter()
            .map(|p| Event {
                segment: segment_of(p.timestamp, entry.duration),
                words: tokenize(&p.sentence),
            })
            .collect();
        pred_events.insert(vid.clone(), p);
    }

    let report = match mode {
        EvalMode::Captioning => output::caption_report_json(&caption_scores(&pred_events, &refs, &cfg.eval.caption_thresholds)),
        EvalMode::Localization => output::localization_report_json(&localization_scores(&loc_pairs, &cfg.eval.localization_sigmas)),
        EvalMode::Recall => {
            let seg_map = |m: &BTreeMap<String, Vec<Event>>| -> BTreeMap<String, Vec<TemporalSegment>> {
                m.iter().map(|(k, v)| (k.clone(), v.iter().map(|e| e.segment).collect())).collect()
            };
            let curve = recall_curve(&seg_map(&pred_events), &seg_map(&refs), &cfg.eval.recall_grid);
            if let Some(c) = &curve {
                write(&out.join(RECALL_CSV), output::recall_csv(c))?;
            }
            output::recall_report_json(curve.as_deref())
        }
    };
    write(&out.join(REPORT_FILE), &report)?;
    write(&out.join(CONFIG_FILE), cfg.to_text())?;
    Ok(report)
}

/// Paths resolved from flags first, then the configuration.
pub fn require(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| Error::Config(format!("missing {name}: pass --{name} or set paths.{name}")))
}
