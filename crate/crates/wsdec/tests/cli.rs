use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TINY: &str = "\
synth.num_videos = 6
synth.num_test = 3
synth.steps = 16
synth.dim = 8
model.feature_dim = 8
model.hidden = 8
train.pretrain_epochs = 1
train.stage1_epochs = 1
train.stage2_epochs = 1
";

fn wsdec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsdec")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = wsdec(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Run {
    dir: TempDir,
}

impl Run {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("tiny.txt"), TINY).unwrap();
        Run { dir }
    }

    fn p(&self, name: &str) -> std::path::PathBuf {
        self.dir.path().join(name)
    }

    fn cfg(&self) -> String {
        s(&self.p("tiny.txt")).to_string()
    }

    fn synth(&self) {
        ok(&["--config", &self.cfg(), "synth", "--out", s(&self.p("data"))]);
    }

    fn train(&self, out: &str) {
        ok(&["--config", &self.cfg(), "train", "--data", s(&self.p("data")), "--out", s(&self.p(out))]);
    }

    fn infer(&self, run: &str, out: &str, extra: &[&str]) {
        let ckpt = self.p(run).join("last.ckpt");
        let mut args = vec![
            "--config",
            &self.cfg(),
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        for a in ["infer", "--data", s(&self.p("data")), "--checkpoint", s(&ckpt), "--out", s(&self.p(out))] {
            args.push(a.to_string());
        }
        args.extend(extra.iter().map(|x| x.to_string()));
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    }
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn synth_is_reproducible_and_guarded() {
    let r = Run::new();
    r.synth();
    let a = fs::read(r.p("data/train.json")).unwrap();
    let fa = fs::read(r.p("data/features/v_0000.wsdc")).unwrap();

    let out = wsdec(&["--config", &r.cfg(), "synth", "--out", s(&r.p("data"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));

    ok(&["--config", &r.cfg(), "--force", "synth", "--out", s(&r.p("data"))]);
    assert_eq!(a, fs::read(r.p("data/train.json")).unwrap());
    assert_eq!(fa, fs::read(r.p("data/features/v_0000.wsdc")).unwrap());

    ok(&["--config", &r.cfg(), "synth", "--out", s(&r.p("other"))]);
    for entry in fs::read_dir(r.p("data")).unwrap() {
        let name = entry.unwrap().file_name();
        let (x, y) = (r.p("data").join(&name), r.p("other").join(&name));
        if x.is_file() {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{name:?}");
        }
    }
    let v: Value = json(&r.p("data/train.json"));
    assert_eq!(v.as_object().unwrap().len(), 6);
}

#[test]
fn bad_inputs_exit_with_code_two() {
    let r = Run::new();
    let out = wsdec(&["--set", "train.lr=-1", "synth", "--out", s(&r.p("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = wsdec(&["--set", "nonsense.key=1", "synth", "--out", s(&r.p("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = wsdec(&["--config", &r.cfg(), "train", "--data", s(&r.p("missing")), "--out", s(&r.p("run"))]);
    assert_eq!(out.status.code(), Some(2));
    fs::create_dir_all(r.p("bad")).unwrap();
    fs::write(r.p("bad/preds.json"), "{ not json").unwrap();
    fs::write(r.p("bad/ann.json"), "{}").unwrap();
    let out = wsdec(&[
        "eval",
        "--predictions",
        s(&r.p("bad/preds.json")),
        "--annotations",
        s(&r.p("bad/ann.json")),
        "--out",
        s(&r.p("bad/out")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_infer_eval_round_trip() {
    let r = Run::new();
    r.synth();
    r.train("run");

    let csv = fs::read_to_string(r.p("run/losses.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,stage,L_c,L_s,L_a,total"));
    let order = ["pretrain", "stage1", "stage2"];
    let mut last_stage = 0;
    let mut steps = 0;
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 6);
        assert_eq!(f[0].parse::<usize>().unwrap(), i + 1);
        let st = order.iter().position(|x| *x == f[1]).unwrap();
        assert!(st >= last_stage);
        last_stage = st;
        assert!(f[2..].iter().all(|x| x.parse::<f64>().unwrap().is_finite()));
        steps += 1;
    }
    assert_eq!(last_stage, 2);
    assert!(steps > 0);
    for f in ["pretrain.ckpt", "stage1.ckpt", "stage2.ckpt", "last.ckpt", "config.txt"] {
        assert!(r.p("run").join(f).exists(), "{f}");
    }

    r.infer("run", "pred", &["--dump-diagnostics"]);
    let preds = json(&r.p("pred/predictions.json"));
    let results = preds["results"].as_object().unwrap();
    assert_eq!(results.len(), 3);
    let ann = json(&r.p("data/test.json"));
    for (vid, events) in results {
        let events = events.as_array().unwrap();
        assert!(events.len() <= 15);
        let duration = ann[vid]["duration"].as_f64().unwrap();
        for e in events {
            let t = e["timestamp"].as_array().unwrap();
            let (a, b) = (t[0].as_f64().unwrap(), t[1].as_f64().unwrap());
            assert!(0.0 <= a && a < b && b <= duration);
            assert!(e["self_iou"].as_f64().unwrap() >= 0.5);
        }
        assert_eq!(preds["diagnostics"][vid]["proposals"], 15);
    }

    let report = ok(&[
        "--config",
        &r.cfg(),
        "eval",
        "--predictions",
        s(&r.p("pred/predictions.json")),
        "--annotations",
        s(&r.p("data/test.json")),
        "--out",
        s(&r.p("eval")),
    ]);
    let v: Value = serde_json::from_str(&report).unwrap();
    for k in ["Bleu_1", "Bleu_2", "Bleu_3", "Bleu_4", "ROUGE_L", "CIDEr", "METEOR_proxy"] {
        assert!(v[k].is_number(), "{k}");
    }
    assert_eq!(json(&r.p("eval/report.json")), v);

    ok(&[
        "--config",
        &r.cfg(),
        "eval",
        "--mode",
        "localization",
        "--predictions",
        s(&r.p("pred/localization.json")),
        "--annotations",
        s(&r.p("data/test.json")),
        "--out",
        s(&r.p("loc")),
    ]);
    let loc = json(&r.p("loc/report.json"));
    assert_eq!(loc.as_object().unwrap().len(), 4);
    assert!(loc["mIoU"].is_number() && loc["R@1,IoU=0.5"].is_number());

    ok(&[
        "--config",
        &r.cfg(),
        "eval",
        "--mode",
        "recall",
        "--predictions",
        s(&r.p("pred/predictions.json")),
        "--annotations",
        s(&r.p("data/test.json")),
        "--out",
        s(&r.p("recall")),
    ]);
    let csv = fs::read_to_string(r.p("recall/recall.csv")).unwrap();
    assert!(csv.starts_with("threshold,recall\n"));
    assert_eq!(csv.lines().count(), 10);
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let r = Run::new();
    r.synth();
    r.train("full");
    ok(&[
        "--config",
        &r.cfg(),
        "--set",
        "train.stage2_epochs=0",
        "train",
        "--data",
        s(&r.p("data")),
        "--out",
        s(&r.p("part")),
    ]);
    ok(&[
        "--config",
        &r.cfg(),
        "train",
        "--data",
        s(&r.p("data")),
        "--out",
        s(&r.p("part")),
        "--resume",
        s(&r.p("part/stage1.ckpt")),
    ]);
    assert_eq!(
        fs::read(r.p("full/stage2.ckpt")).unwrap(),
        fs::read(r.p("part/stage2.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(r.p("full/losses.csv")).unwrap(),
        fs::read_to_string(r.p("part/losses.csv")).unwrap()
    );

    let out = wsdec(&[
        "--config",
        &r.cfg(),
        "--set",
        "model.hidden=12",
        "train",
        "--data",
        s(&r.p("data")),
        "--out",
        s(&r.p("part")),
        "--resume",
        s(&r.p("part/stage1.ckpt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.hidden"));
}

#[test]
fn self_match_and_empty_predictions() {
    let r = Run::new();
    r.synth();
    let ann = json(&r.p("data/test.json"));
    let mut results = serde_json::Map::new();
    let mut empty = serde_json::Map::new();
    for (vid, e) in ann.as_object().unwrap() {
        let events: Vec<Value> = e["sentences"]
            .as_array()
            .unwrap()
            .iter()
            .zip(e["timestamps"].as_array().unwrap())
            .map(|(s, t)| serde_json::json!({"sentence": s, "timestamp": t}))
            .collect();
        results.insert(vid.clone(), Value::Array(events));
        empty.insert(vid.clone(), Value::Array(vec![]));
    }
    fs::write(r.p("self.json"), serde_json::json!({ "results": results }).to_string()).unwrap();
    fs::write(r.p("empty.json"), serde_json::json!({ "results": empty }).to_string()).unwrap();

    let rep: Value = serde_json::from_str(&ok(&[
        "eval",
        "--predictions",
        s(&r.p("self.json")),
        "--annotations",
        s(&r.p("data/test.json")),
        "--out",
        s(&r.p("e1")),
    ]))
    .unwrap();
    assert!((rep["Bleu_1"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!((rep["METEOR_proxy"].as_f64().unwrap() - 1.0).abs() < 1e-6);

    let rep: Value = serde_json::from_str(&ok(&[
        "eval",
        "--predictions",
        s(&r.p("empty.json")),
        "--annotations",
        s(&r.p("data/test.json")),
        "--out",
        s(&r.p("e2")),
    ]))
    .unwrap();
    for k in ["Bleu_1", "Bleu_4", "ROUGE_L", "CIDEr", "METEOR_proxy"] {
        assert_eq!(rep[k].as_f64().unwrap(), 0.0, "{k}");
    }
}
