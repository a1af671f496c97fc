mod common;

use proptest::prelude::*;
use venus_core::action::{Action, ActionKind};
use venus_core::geometry::Point;
use venus_core::trajectory::{
    action_distribution, dataset_to_string, history_context, load_dataset, parse_dataset, render_history,
    write_dataset, Trajectory,
};

fn unique_ids(mut ts: Vec<Trajectory>) -> Vec<Trajectory> {
    for (i, t) in ts.iter_mut().enumerate() {
        t.trace_id = format!("{}-{i}", t.trace_id);
    }
    ts
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn history_length(t in common::trajectory_strategy()) {
        for n in 1..=t.len() {
            let h = history_context(&t, n).unwrap();
            prop_assert_eq!(h.len(), n - 1);
            for (k, (thought, action)) in h.pairs.iter().enumerate() {
                prop_assert_eq!(thought, &t.steps[k].thought);
                prop_assert_eq!(action, &t.steps[k].action);
            }
            prop_assert_eq!(render_history(&h), render_history(&h));
        }
        prop_assert!(history_context(&t, t.len() + 1).is_err());
        prop_assert!(history_context(&t, 0).is_err());
    }

    #[test]
    fn load_serialize_load(ts in prop::collection::vec(common::trajectory_strategy(), 0..6)) {
        let ts = unique_ids(ts);
        let text = dataset_to_string(&ts);
        let loaded = parse_dataset(&text);
        prop_assert!(loaded.report.is_clean(), "{:?}", loaded.report.rejected);
        prop_assert_eq!(&loaded.trajectories, &ts);
        prop_assert_eq!(dataset_to_string(&loaded.trajectories), text);
    }

    #[test]
    fn distribution_additive_and_permutation_invariant(
        a in prop::collection::vec(common::trajectory_strategy(), 0..5),
        b in prop::collection::vec(common::trajectory_strategy(), 0..5),
    ) {
        let mut sa = action_distribution(&a);
        let sb = action_distribution(&b);
        let joined: Vec<Trajectory> = a.iter().chain(&b).cloned().collect();
        let reversed: Vec<Trajectory> = joined.iter().rev().cloned().collect();
        let sj = action_distribution(&joined);
        prop_assert_eq!(&sj, &action_distribution(&reversed));
        sa.merge(&sb);
        prop_assert_eq!(&sa, &sj);
        if sj.total() > 0 {
            let sum: f64 = sj.frequencies().values().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn figure_shaped_distribution() {
    let mut actions = vec![Action::Click(Point::new(1, 1)); 9];
    actions.push(Action::LongPress(Point::new(1, 1)));
    let t = common::trajectory("x", "t", actions);
    let s = action_distribution([&t]);
    assert_eq!(s.frequency(ActionKind::Click), 0.9);
    assert_eq!(s.frequency(ActionKind::LongPress), 0.1);
    let empty = action_distribution(&[]);
    assert_eq!(empty.total(), 0);
    assert!(empty.frequencies().values().all(|&f| f == 0.0));
}

#[test]
fn file_round_trip_and_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let t = common::trajectory("a", "open settings", vec![Action::PressHome, Action::Wait]);
    let path = dir.path().join("d.jsonl");
    write_dataset(&path, std::slice::from_ref(&t)).unwrap();
    let loaded = load_dataset(&path).unwrap();
    assert_eq!(loaded.trajectories, vec![t.clone()]);
    // screenshots do not exist next to the file
    assert_eq!(loaded.report.warnings.len(), 2);
    std::fs::create_dir(dir.path().join("shots")).unwrap();
    for s in ["1", "2"] {
        std::fs::write(dir.path().join(format!("shots/{s}.png")), b"").unwrap();
    }
    assert!(load_dataset(&path).unwrap().report.warnings.is_empty());
    assert!(load_dataset(dir.path().join("missing.jsonl")).is_err());
}

#[test]
fn invalid_records_are_reported_with_lines() {
    let t = common::trajectory("a", "open settings", vec![Action::PressHome]);
    let good = t.to_json_line();
    let no_task = {
        let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
        v.as_object_mut().unwrap().remove("task");
        v["trace_id"] = "b".into();
        v.to_string()
    };
    let jump = good.replace("\"raw_action\":\"PressHome()\"", "\"raw_action\":\"Jump()\"").replace("\"a\"", "\"c\"");
    let text = format!("{good}\n{no_task}\n\n{jump}\nnot json\n{good}\n");
    let loaded = parse_dataset(&text);
    assert_eq!(loaded.trajectories.len(), 1);
    let lines: Vec<usize> = loaded.report.rejected.iter().map(|i| i.line).collect();
    assert_eq!(lines, vec![2, 4, 5, 6]);
    assert!(loaded.report.rejected[0].message.contains("task"));
    assert!(loaded.report.rejected[1].message.contains("Jump"));
    assert!(loaded.report.rejected[3].message.contains("duplicate"));
}
