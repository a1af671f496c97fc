use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use venus_core::action::ActionKind;
use venus_core::trajectory::{load_dataset, Status};

fn venus(args: &[&str], dir: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_venus"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "venus {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn offline_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    venus(&["synth", "--out", "raw.jsonl", "--traces", "120", "--seed", "5"], d);
    let stage = |args: &[&str]| venus(args, d);
    stage(&[
        "pipeline", "filter", "--in", "raw.jsonl", "--out", "f.jsonl", "--report", "f.json",
        "--content-motion-source", "synthetic-content",
    ]);
    stage(&[
        "pipeline", "resample", "--in", "f.jsonl", "--out", "s.jsonl", "--report", "s.json", "--default-cap", "8",
        "--cap", "shopping=2",
    ]);
    stage(&["pipeline", "reconstruct", "--in", "s.jsonl", "--out", "r.jsonl", "--report", "r.json"]);
    stage(&[
        "pipeline", "qc", "--in", "r.jsonl", "--out", "q.jsonl", "--report", "q.json", "--rejected-out", "x.jsonl",
    ]);
    let mut prev = 120;
    for (data, report) in [("f.jsonl", "f.json"), ("s.jsonl", "s.json"), ("r.jsonl", "r.json")] {
        let r = json(&d.join(report));
        let dropped: u64 = r["drops"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
        assert_eq!(r["input"].as_u64().unwrap(), prev);
        assert_eq!(r["kept"].as_u64().unwrap() + dropped, prev);
        prev = r["kept"].as_u64().unwrap();
        assert_eq!(load_dataset(d.join(data)).unwrap().trajectories.len() as u64, prev);
    }
    let q = json(&d.join("q.json"));
    let survivors = load_dataset(d.join("q.jsonl")).unwrap().trajectories.len() as u64;
    let rejected = load_dataset(d.join("x.jsonl")).unwrap().trajectories.len() as u64;
    assert_eq!(q["input"].as_u64().unwrap(), prev);
    assert_eq!(survivors + rejected, prev);
    assert_eq!(q["kept"].as_u64().unwrap(), survivors);

    // same seed, same bytes
    let again = tempfile::tempdir().unwrap();
    venus(&["synth", "--out", "raw.jsonl", "--traces", "120", "--seed", "5"], again.path());
    assert_eq!(
        std::fs::read(d.join("raw.jsonl")).unwrap(),
        std::fs::read(again.path().join("raw.jsonl")).unwrap()
    );
}

#[test]
fn align_then_enhance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    venus(&["synth", "--out", "raw.jsonl", "--traces", "300"], d);
    venus(
        &[
            "align", "--in", "raw.jsonl", "--out", "a.jsonl", "--mock", "seeded", "--seed", "3", "--rollouts", "4",
            "--target-len", "40", "--pools-out", "pools.json",
        ],
        d,
    );
    let aligned = load_dataset(d.join("a.jsonl")).unwrap().trajectories;
    assert!(aligned.iter().all(|t| t.status == Status::Aligned));
    venus(
        &[
            "enhance", "--in", "a.jsonl", "--pools", "pools.json", "--sparse", "LongPress,Drag", "--max-variants", "3",
            "--out", "v.jsonl", "--variants-only",
        ],
        d,
    );
    let variants = load_dataset(d.join("v.jsonl")).unwrap().trajectories;
    assert!(!variants.is_empty());
    for v in &variants {
        let k = v.last_action().unwrap().kind();
        assert!(matches!(k, ActionKind::LongPress | ActionKind::Drag));
        assert!(v.augmentation.is_some());
    }
    venus(&["enhance", "--in", "a.jsonl", "--pools", "pools.json", "--out", "all.jsonl"], d);
    let all = load_dataset(d.join("all.jsonl")).unwrap().trajectories;
    assert!(all.len() > aligned.len());

    let bad = Command::new(env!("CARGO_BIN_EXE_venus"))
        .args(["enhance", "--in", "a.jsonl", "--pools", "pools.json", "--sparse", "Jump", "--out", "z.jsonl"])
        .current_dir(d)
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown action kind"));
}

#[test]
fn shipped_reward_config_is_the_default() {
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/reward.json");
    let cfg = venus_cli::load_reward_config(Some(&p)).unwrap();
    assert_eq!(cfg, venus_core::RewardConfig64::default());
}

#[test]
fn reward_and_eval_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = venus(
        &[
            "reward", "nav", "--response", "<think>t</think><action>Click(box=(100, 200))</action>", "--gt-action",
            "Click(box=(100, 200))", "--screen", "1080x2400",
        ],
        d,
    );
    let b: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(b["total"].as_f64().unwrap(), 0.1 + 2.0);

    std::fs::write(d.join("reward.json"), r#"{"w1": 0.5}"#).unwrap();
    let out = venus(
        &["reward", "grounding", "--response", "[0,0,10,10]", "--gt-box", "0,0,10,10", "--reward-config", "reward.json"],
        d,
    );
    let b: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(b["total"].as_f64().unwrap(), 1.5);

    std::fs::write(
        d.join("samples.jsonl"),
        concat!(
            r#"{"sample_id":"a","instruction":"x","screenshot_ref":"a.png","gt_box":[0,0,10,10],"platform":"mobile","element":"text"}"#,
            "\n",
            r#"{"sample_id":"b","instruction":"x","screenshot_ref":"b.png","gt_box":[0,0,10,10],"platform":"web","element":"icon"}"#,
            "\n"
        ),
    )
    .unwrap();
    std::fs::write(d.join("preds.jsonl"), "{\"sample_id\":\"a\",\"response\":\"[4,4,6,6]\"}\n").unwrap();
    venus(
        &["eval", "grounding", "--preds", "preds.jsonl", "--samples", "samples.jsonl", "--report", "g.json"],
        d,
    );
    let r = json(&d.join("g.json"));
    assert_eq!(r["schema"], "venus-eval/1");
    assert_eq!(r["accuracy"].as_f64().unwrap(), 0.5);
    assert_eq!(r["missing"], serde_json::json!(["b"]));

    std::fs::write(
        d.join("nav.jsonl"),
        concat!(
            r#"{"sample_id":"n1","task":"t","screenshot_ref":"1.png","gt_action":"Click(box=(100, 100))","screen":{"width":1080,"height":2400}}"#,
            "\n",
            r#"{"sample_id":"n2","task":"t","screenshot_ref":"2.png","gt_action":"Scroll(direction='up')","screen":{"width":1080,"height":2400}}"#,
            "\n"
        ),
    )
    .unwrap();
    std::fs::write(
        d.join("navp.jsonl"),
        concat!(
            r#"{"sample_id":"n1","response":"<think>x</think><action>Click(box=(300, 100))</action>"}"#,
            "\n",
            r#"{"sample_id":"n2","response":"Scroll(direction='up')"}"#,
            "\n"
        ),
    )
    .unwrap();
    venus(
        &["eval", "nav", "--preds", "navp.jsonl", "--samples", "nav.jsonl", "--report", "n.json", "--reward-config", "reward.json"],
        d,
    );
    let r = json(&d.join("n.json"));
    assert_eq!(r["type_accuracy"].as_f64().unwrap(), 1.0);
    assert_eq!(r["step_success_rate"].as_f64().unwrap(), 0.5);
}

#[test]
fn review_export_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    venus(&["synth", "--out", "queue.jsonl", "--traces", "4"], d);
    let ids: Vec<String> = load_dataset(d.join("queue.jsonl"))
        .unwrap()
        .trajectories
        .iter()
        .map(|t| t.trace_id.clone())
        .collect();
    std::fs::create_dir(d.join("store")).unwrap();
    let log = format!(
        "{{\"trace_id\":\"{}\",\"verdict\":\"accept\",\"timestamp\":1}}\n{{\"trace_id\":\"{}\",\"verdict\":\"reject\",\"timestamp\":2}}\n",
        ids[0], ids[1]
    );
    std::fs::write(d.join("store/decisions.jsonl"), log).unwrap();
    venus(
        &["review", "export", "--review-dataset", "queue.jsonl", "--store", "store", "--out", "export.jsonl"],
        d,
    );
    let exported = load_dataset(d.join("export.jsonl")).unwrap().trajectories;
    assert_eq!(exported.len(), 1);
    assert_eq!(exported[0].trace_id, ids[0]);
    assert_eq!(exported[0].status, Status::Accepted);
}
