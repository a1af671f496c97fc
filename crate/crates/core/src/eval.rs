//! Offline benchmark scoring.
//!
//! Grounding: a prediction is correct when the center of the predicted box
//! lies inside the ground-truth box (edges inclusive), the same predicate
//! the grounding reward uses.
//!
//! Navigation: per step, `type_correct` is an action-kind match and
//! `step_correct` additionally requires correct parameters (see
//! [`NAV_RULES`]). Missing predictions count as incorrect.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{parse_action, parse_model_output, Action, ParseError};
use crate::geometry::{center_in_box, BBox, ScreenSize};
use crate::reward::{parse_box_response, token_f1, RewardConfig};

pub const REPORT_SCHEMA: &str = "venus-eval/1";

pub const GROUNDING_RULES: &[&str] =
    &["correct iff the predicted box center (xc, yc) satisfies x1 <= xc <= x2 and y1 <= yc <= y2 against the ground-truth box; unparseable or missing predictions are incorrect"];

pub const NAV_RULES: &[&str] = &[
    "type_correct iff the predicted action kind equals the ground-truth kind",
    "Click/LongPress: point inside the ground-truth element box when one is given, else Euclidean distance < delta1 (scaled to the screen width)",
    "Drag: start and end each within delta3 (scaled) of ground truth",
    "Scroll: direction matches",
    "Type/Launch/Finished/CallUser: token F1 >= f1_threshold",
    "Wait/PressBack/PressHome/PressEnter/PressRecent: kind match suffices",
    "missing or unparseable predictions are incorrect",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("prediction references unknown sample `{0}`")]
    UnknownSampleId(String),
    #[error("more than one prediction for sample `{0}`")]
    DuplicatePrediction(String),
    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Mobile,
    Desktop,
    Web,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Text,
    Icon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingSample {
    pub sample_id: String,
    pub instruction: String,
    pub screenshot_ref: String,
    pub gt_box: BBox,
    pub platform: Platform,
    pub element: ElementKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavStepSample {
    pub sample_id: String,
    pub task: String,
    #[serde(default)]
    pub history: String,
    pub screenshot_ref: String,
    pub gt_action: Action,
    pub screen: ScreenSize,
    /// Bounding box of the target element, when the benchmark provides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_box: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TagRow {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl TagRow {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
    }

    fn close(&mut self) {
        self.accuracy = ratio(self.correct, self.total);
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub sample_id: String,
    pub correct: bool,
    /// Navigation only: action kind matched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_correct: Option<bool>,
    pub missing: bool,
    pub parsed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub benchmark: String,
    pub total: usize,
    pub correct: usize,
    /// Grounding accuracy, or Step SR for navigation.
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_success_rate: Option<f64>,
    pub breakdown: BTreeMap<String, BTreeMap<String, TagRow>>,
    pub missing: Vec<String>,
    pub verdicts: Vec<Verdict>,
    pub rules: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RewardConfig<f64>>,
}

impl EvalReport {
    /// Canonical pretty JSON; identical inputs give identical bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn index_predictions<'a, S>(
    preds: &'a [Prediction],
    ids: &HashMap<&str, S>,
) -> Result<HashMap<&'a str, &'a str>, EvalError> {
    let mut out = HashMap::new();
    for p in preds {
        if !ids.contains_key(p.sample_id.as_str()) {
            return Err(EvalError::UnknownSampleId(p.sample_id.clone()));
        }
        if out.insert(p.sample_id.as_str(), p.response.as_str()).is_some() {
            return Err(EvalError::DuplicatePrediction(p.sample_id.clone()));
        }
    }
    Ok(out)
}

fn sample_ids<'a, I>(ids: I) -> Result<HashMap<&'a str, ()>, EvalError>
where
    I: Iterator<Item = &'a str>,
{
    let mut seen = HashSet::new();
    let mut out = HashMap::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(EvalError::DuplicateSample(id.to_string()));
        }
        out.insert(id, ());
    }
    Ok(out)
}

fn finish_breakdown(b: &mut BTreeMap<String, BTreeMap<String, TagRow>>) {
    for rows in b.values_mut() {
        for row in rows.values_mut() {
            row.close();
        }
    }
}

fn tag_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Grounding verdict for one response.
pub fn grounding_correct(response: &str, gt: &BBox) -> (bool, bool) {
    match parse_box_response(response) {
        Some(pred) => (true, center_in_box(pred, gt)),
        None => (false, false),
    }
}

pub fn eval_grounding(preds: &[Prediction], samples: &[GroundingSample]) -> Result<EvalReport, EvalError> {
    let ids = sample_ids(samples.iter().map(|s| s.sample_id.as_str()))?;
    let by_id = index_predictions(preds, &ids)?;
    let mut breakdown: BTreeMap<String, BTreeMap<String, TagRow>> = BTreeMap::new();
    let mut verdicts = Vec::with_capacity(samples.len());
    let mut missing = Vec::new();
    for s in samples {
        let (parsed, correct, is_missing) = match by_id.get(s.sample_id.as_str()) {
            Some(resp) => {
                let (parsed, correct) = grounding_correct(resp, &s.gt_box);
                (parsed, correct, false)
            }
            None => {
                missing.push(s.sample_id.clone());
                (false, false, true)
            }
        };
        let platform = tag_name(&s.platform);
        let element = tag_name(&s.element);
        for (group, key) in [
            ("platform", platform.clone()),
            ("element", element.clone()),
            ("platform_element", format!("{platform}/{element}")),
        ] {
            breakdown
                .entry(group.to_string())
                .or_default()
                .entry(key)
                .or_default()
                .add(correct);
        }
        verdicts.push(Verdict {
            sample_id: s.sample_id.clone(),
            correct,
            type_correct: None,
            missing: is_missing,
            parsed,
            detail: (!parsed && !is_missing).then(|| "unparseable response".to_string()),
        });
    }
    finish_breakdown(&mut breakdown);
    let correct = verdicts.iter().filter(|v| v.correct).count();
    Ok(EvalReport {
        schema: REPORT_SCHEMA.to_string(),
        benchmark: "grounding".to_string(),
        total: samples.len(),
        correct,
        accuracy: ratio(correct, samples.len()),
        type_accuracy: None,
        step_success_rate: None,
        breakdown,
        missing,
        verdicts,
        rules: GROUNDING_RULES.iter().map(|s| s.to_string()).collect(),
        config: None,
    })
}

/// Extracts the action from either a tagged response or a bare action.
pub fn response_action(response: &str) -> Result<Action, ParseError> {
    if response.contains("<action>") {
        parse_model_output(response).action
    } else {
        parse_action(response)
    }
}

/// Whether `pred` has the right parameters for `sample` (kinds assumed equal).
pub fn step_params_correct(pred: &Action, sample: &NavStepSample, cfg: &RewardConfig<f64>) -> bool {
    let cfg = cfg.for_screen(sample.screen);
    match (pred, &sample.gt_action) {
        (Action::Click(p), Action::Click(g)) | (Action::LongPress(p), Action::LongPress(g)) => {
            match &sample.gt_box {
                Some(b) => b.contains(f64::from(p.x), f64::from(p.y)),
                None => p.distance(g) < cfg.delta1,
            }
        }
        (Action::Drag(p), Action::Drag(g)) => {
            p.start.distance(&g.start) < cfg.delta3 && p.end.distance(&g.end) < cfg.delta3
        }
        (Action::Scroll { direction: p, .. }, Action::Scroll { direction: g, .. }) => p == g,
        (p, g) => match (p.text(), g.text()) {
            (Some(pt), Some(gt)) => token_f1(pt, gt) >= cfg.f1_threshold,
            _ => p.kind() == g.kind(),
        },
    }
}

pub fn eval_nav_steps(
    preds: &[Prediction],
    samples: &[NavStepSample],
    cfg: &RewardConfig<f64>,
) -> Result<EvalReport, EvalError> {
    let ids = sample_ids(samples.iter().map(|s| s.sample_id.as_str()))?;
    let by_id = index_predictions(preds, &ids)?;
    let mut breakdown: BTreeMap<String, BTreeMap<String, TagRow>> = BTreeMap::new();
    let mut verdicts = Vec::with_capacity(samples.len());
    let mut missing = Vec::new();
    let mut type_hits = 0usize;
    for s in samples {
        let (type_ok, step_ok, parsed, is_missing, detail) = match by_id.get(s.sample_id.as_str()) {
            None => {
                missing.push(s.sample_id.clone());
                (false, false, false, true, None)
            }
            Some(resp) => match response_action(resp) {
                Err(e) => (false, false, false, false, Some(e.to_string())),
                Ok(a) => {
                    let type_ok = a.kind() == s.gt_action.kind();
                    let step_ok = type_ok && step_params_correct(&a, s, cfg);
                    (type_ok, step_ok, true, false, None)
                }
            },
        };
        type_hits += usize::from(type_ok);
        let kind = s.gt_action.kind().name().to_string();
        breakdown
            .entry("gt_kind".into())
            .or_default()
            .entry(kind)
            .or_default()
            .add(step_ok);
        verdicts.push(Verdict {
            sample_id: s.sample_id.clone(),
            correct: step_ok,
            type_correct: Some(type_ok),
            missing: is_missing,
            parsed,
            detail,
        });
    }
    finish_breakdown(&mut breakdown);
    let correct = verdicts.iter().filter(|v| v.correct).count();
    let step_sr = ratio(correct, samples.len());
    Ok(EvalReport {
        schema: REPORT_SCHEMA.to_string(),
        benchmark: "navigation".to_string(),
        total: samples.len(),
        correct,
        accuracy: step_sr,
        type_accuracy: Some(ratio(type_hits, samples.len())),
        step_success_rate: Some(step_sr),
        breakdown,
        missing,
        verdicts,
        rules: NAV_RULES.iter().map(|s| s.to_string()).collect(),
        config: Some(*cfg),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Direction;
    use crate::geometry::Point;

    fn gsample(id: &str, platform: Platform, element: ElementKind) -> GroundingSample {
        GroundingSample {
            sample_id: id.into(),
            instruction: "press ok".into(),
            screenshot_ref: "s.png".into(),
            gt_box: BBox::new(10.0, 10.0, 50.0, 30.0).unwrap(),
            platform,
            element,
        }
    }

    fn pred(id: &str, r: &str) -> Prediction {
        Prediction {
            sample_id: id.into(),
            response: r.into(),
        }
    }

    #[test]
    fn grounding_accuracy_and_tags() {
        let samples = vec![
            gsample("a", Platform::Mobile, ElementKind::Text),
            gsample("b", Platform::Mobile, ElementKind::Icon),
            gsample("c", Platform::Web, ElementKind::Icon),
            gsample("d", Platform::Desktop, ElementKind::Text),
        ];
        let preds = vec![
            pred("a", "[10,10,50,30]"),
            pred("b", "[0,0,20,20]"),
            pred("c", "[40,20,60,40]"),
            pred("d", "n/a"),
        ];
        let r = eval_grounding(&preds, &samples).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.verdicts[3].detail.as_deref(), Some("unparseable response"));
        for rows in r.breakdown.values() {
            assert_eq!(rows.values().map(|t| t.total).sum::<usize>(), 4);
        }
        assert_eq!(r.breakdown["platform"]["mobile"].correct, 2);
        assert_eq!(r.to_json(), eval_grounding(&preds, &samples).unwrap().to_json());
    }

    #[test]
    fn grounding_errors_and_missing() {
        let samples = vec![gsample("a", Platform::Mobile, ElementKind::Text), gsample("b", Platform::Web, ElementKind::Text)];
        assert_eq!(
            eval_grounding(&[pred("z", "[1,1,1,1]")], &samples),
            Err(EvalError::UnknownSampleId("z".into()))
        );
        assert_eq!(
            eval_grounding(&[pred("a", "[1,1,1,1]"), pred("a", "[1,1,1,1]")], &samples),
            Err(EvalError::DuplicatePrediction("a".into()))
        );
        let r = eval_grounding(&[pred("a", "[10,10,50,30]")], &samples).unwrap();
        assert_eq!(r.missing, vec!["b".to_string()]);
        assert_eq!(r.accuracy, 0.5);
    }

    fn nsample(id: &str, gt: Action) -> NavStepSample {
        NavStepSample {
            sample_id: id.into(),
            task: "t".into(),
            history: "None".into(),
            screenshot_ref: "s.png".into(),
            gt_action: gt,
            screen: ScreenSize::new(1080, 2400).unwrap(),
            gt_box: None,
        }
    }

    #[test]
    fn nav_metrics() {
        let cfg = RewardConfig::default();
        let samples = vec![
            nsample("1", Action::Click(Point::new(100, 100))),
            nsample("2", Action::Click(Point::new(100, 100))),
            nsample("3", Action::scroll(Point::new(1, 900), Point::new(1, 100), Direction::Up)),
        ];
        let preds = vec![
            pred("1", "<think>x</think><action>Click(box=(105, 100))</action>"),
            pred("2", "Click(box=(500, 500))"),
            pred("3", "Type(content='x')"),
        ];
        let r = eval_nav_steps(&preds, &samples, &cfg).unwrap();
        assert!((r.type_accuracy.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.step_success_rate.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.verdicts[1].type_correct, Some(true));
        assert!(!r.verdicts[1].correct);
        assert_eq!(r.to_json(), eval_nav_steps(&preds, &samples, &cfg).unwrap().to_json());
    }

    #[test]
    fn nav_box_and_text_rules() {
        let cfg = RewardConfig::default();
        let mut boxed = nsample("b", Action::Click(Point::new(100, 100)));
        boxed.gt_box = Some(BBox::new(0.0, 0.0, 400.0, 400.0).unwrap());
        assert!(step_params_correct(&Action::Click(Point::new(350, 350)), &boxed, &cfg));
        let typed = nsample("t", Action::Type("turn off wifi".into()));
        assert!(step_params_correct(&Action::Type("turn on wifi".into()), &typed, &cfg));
        assert!(!step_params_correct(&Action::Type("hello".into()), &typed, &cfg));
        let press = nsample("p", Action::PressBack);
        assert!(step_params_correct(&Action::PressBack, &press, &cfg));
    }
}
