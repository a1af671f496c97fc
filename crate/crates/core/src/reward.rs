//! Rule-based rewards for grounding and navigation.
//!
//! Grounding: `total = format * w1 + point_in_box * w2`.
//!
//! Navigation: `total = format * w1 + (type + coord + content) * w2`, where
//! `coord` is the stepwise distance reward for `Click`/`LongPress`, the
//! scroll reward for `Scroll` and a direction-free variant of it for `Drag`,
//! and `content` is a thresholded token-F1 reward for text-bearing kinds.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, Endpoints, ModelOutput};
use crate::geometry::{center_in_box, BBox, Point, ScreenSize};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field} must be >= 0, got {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("thresholds must satisfy 0 < delta2 < delta1, got delta2={delta2}, delta1={delta1}")]
    DeltaOrder { delta1: f64, delta2: f64 },
    #[error("delta3 must be > 0, got {0}")]
    Delta3(f64),
    #[error("f1_threshold must lie in [0, 1], got {0}")]
    F1Threshold(f64),
    #[error("reference_width must be > 0, got {0}")]
    ReferenceWidth(f64),
}

/// Every weight, scale and threshold of the reward functions.
///
/// Pixel thresholds are expressed at `reference_width`; when a navigation
/// target carries a screen size they are scaled by
/// `screen.width / reference_width`. A `reference_width` of `null` disables
/// scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    deny_unknown_fields,
    default,
    bound(deserialize = "F: Scalar + Deserialize<'de>")
)]
pub struct RewardConfig<F> {
    /// Weight of the format component.
    pub w1: F,
    /// Weight of the task components.
    pub w2: F,
    /// Point reward scale.
    pub alpha: F,
    /// Scroll reward scale. Distinct from the KL coefficient in the policy
    /// objective.
    pub beta_scroll: F,
    /// Content reward scale.
    pub gamma: F,
    /// Outer point-distance threshold in pixels.
    pub delta1: F,
    /// Inner point-distance threshold in pixels.
    pub delta2: F,
    /// Scroll endpoint threshold in pixels.
    pub delta3: F,
    pub f1_threshold: F,
    pub reference_width: Option<F>,
}

impl<F: Scalar> Default for RewardConfig<F> {
    fn default() -> Self {
        Self {
            w1: lit(0.1),
            w2: lit(1.0),
            alpha: lit(1.0),
            beta_scroll: lit(1.0),
            gamma: lit(1.0),
            delta1: lit(70.0),
            delta2: lit(14.0),
            delta3: lit(140.0),
            f1_threshold: lit(0.5),
            reference_width: Some(lit(1080.0)),
        }
    }
}

impl<F: Scalar> RewardConfig<F> {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let f = |v: F| v.to_f64().unwrap_or(f64::NAN);
        for (field, value) in [
            ("w1", self.w1),
            ("w2", self.w2),
            ("alpha", self.alpha),
            ("beta_scroll", self.beta_scroll),
            ("gamma", self.gamma),
        ] {
            if !(value >= F::zero()) {
                return Err(ConfigError::Negative {
                    field,
                    value: f(value),
                });
            }
        }
        if !(self.delta2 > F::zero() && self.delta2 < self.delta1) {
            return Err(ConfigError::DeltaOrder {
                delta1: f(self.delta1),
                delta2: f(self.delta2),
            });
        }
        if !(self.delta3 > F::zero()) {
            return Err(ConfigError::Delta3(f(self.delta3)));
        }
        if !(self.f1_threshold >= F::zero() && self.f1_threshold <= F::one()) {
            return Err(ConfigError::F1Threshold(f(self.f1_threshold)));
        }
        if let Some(w) = self.reference_width {
            if !(w > F::zero()) {
                return Err(ConfigError::ReferenceWidth(f(w)));
            }
        }
        Ok(())
    }

    /// Pixel thresholds rescaled to `screen`.
    pub fn for_screen(&self, screen: ScreenSize) -> Self {
        match self.reference_width {
            None => *self,
            Some(reference) => {
                let k = lit::<F>(f64::from(screen.width)) / reference;
                Self {
                    delta1: self.delta1 * k,
                    delta2: self.delta2 * k,
                    delta3: self.delta3 * k,
                    ..*self
                }
            }
        }
    }

    /// Upper bound of the navigation total.
    pub fn navigation_max(&self) -> F {
        let geometry = self
            .alpha
            .max(lit::<F>(1.5) * self.beta_scroll)
            .max(self.gamma);
        self.w1 + (F::one() + geometry) * self.w2
    }
}

/// Per-component reward values.
///
/// For grounding, `coord` holds the point-in-box value and `type`/`content`
/// are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown<F> {
    pub format: F,
    #[serde(rename = "type")]
    pub type_: F,
    pub coord: F,
    pub content: F,
    pub total: F,
}

impl<F: Scalar> RewardBreakdown<F> {
    fn navigation(format: F, type_: F, coord: F, content: F, cfg: &RewardConfig<F>) -> Self {
        Self {
            format,
            type_,
            coord,
            content,
            total: format * cfg.w1 + (type_ + coord + content) * cfg.w2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingTarget {
    pub gt_box: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigationTarget {
    pub gt_action: Action,
    pub screen: ScreenSize,
}

// ---------------------------------------------------------------------------
// Grounding

/// Parses a grounding answer that must be exactly `[x1,y1,x2,y2]`
/// (surrounding whitespace allowed).
pub fn parse_box_response(response: &str) -> Option<[f64; 4]> {
    let inner = response.trim().strip_prefix('[')?.strip_suffix(']')?;
    let mut out = [0.0; 4];
    let mut parts = inner.split(',');
    for slot in &mut out {
        let v: f64 = parts.next()?.trim().parse().ok()?;
        if !v.is_finite() {
            return None;
        }
        *slot = v;
    }
    if parts.next().is_some() {
        return None;
    }
    Some(out)
}

pub fn grounding_reward<F: Scalar>(
    response: &str,
    target: &GroundingTarget,
    cfg: &RewardConfig<F>,
) -> RewardBreakdown<F> {
    let (format, hit) = match parse_box_response(response) {
        Some(pred) => (F::one(), center_in_box(pred, &target.gt_box)),
        None => (F::zero(), false),
    };
    let coord = if hit { F::one() } else { F::zero() };
    RewardBreakdown {
        format,
        type_: F::zero(),
        coord,
        content: F::zero(),
        total: format * cfg.w1 + coord * cfg.w2,
    }
}

// ---------------------------------------------------------------------------
// Coordinates

/// Stepwise point reward on Euclidean distance `d` (pixels).
pub fn point_reward_at<F: Scalar>(d: F, cfg: &RewardConfig<F>) -> F {
    if d < cfg.delta2 {
        cfg.alpha
    } else if d < cfg.delta1 {
        lit::<F>(0.5) * cfg.alpha
    } else {
        F::zero()
    }
}

pub fn coordinate_reward<F: Scalar>(pred: Point, gt: Point, cfg: &RewardConfig<F>) -> F {
    point_reward_at(lit(pred.distance(&gt)), cfg)
}

/// Scroll reward from the start/end distances and direction agreement.
/// Clauses are tried top-down and the first that holds wins.
pub fn scroll_reward_at<F: Scalar>(
    d_start: F,
    d_end: F,
    direction_match: bool,
    cfg: &RewardConfig<F>,
) -> F {
    let start_ok = d_start < cfg.delta3;
    let end_ok = d_end < cfg.delta3;
    if start_ok && end_ok && direction_match {
        lit::<F>(1.5) * cfg.beta_scroll
    } else if start_ok && direction_match {
        cfg.beta_scroll
    } else if start_ok || direction_match {
        lit::<F>(0.5) * cfg.beta_scroll
    } else {
        F::zero()
    }
}

fn endpoint_distances<F: Scalar>(pred: Option<Endpoints>, gt: Option<Endpoints>) -> (F, F) {
    match (pred, gt) {
        (Some(p), Some(g)) => (
            lit(p.start.distance(&g.start)),
            lit(p.end.distance(&g.end)),
        ),
        // missing endpoints earn no spatial credit
        _ => (F::infinity(), F::infinity()),
    }
}

/// Scroll reward for two `Scroll` actions; any other pair scores zero.
pub fn scroll_reward<F: Scalar>(pred: &Action, gt: &Action, cfg: &RewardConfig<F>) -> F {
    match (pred, gt) {
        (
            Action::Scroll {
                endpoints: pe,
                direction: pd,
            },
            Action::Scroll {
                endpoints: ge,
                direction: gd,
            },
        ) => {
            let (ds, de) = endpoint_distances::<F>(*pe, *ge);
            scroll_reward_at(ds, de, pd == gd, cfg)
        }
        _ => F::zero(),
    }
}

/// Drag reward: the scroll formula without its direction term.
pub fn drag_reward<F: Scalar>(pred: &Endpoints, gt: &Endpoints, cfg: &RewardConfig<F>) -> F {
    let (ds, de) = endpoint_distances::<F>(Some(*pred), Some(*gt));
    if ds < cfg.delta3 && de < cfg.delta3 {
        lit::<F>(1.5) * cfg.beta_scroll
    } else if ds < cfg.delta3 {
        cfg.beta_scroll
    } else {
        F::zero()
    }
}

// ---------------------------------------------------------------------------
// Content

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // Hiragana, Katakana
        | 0x3400..=0x4DBF    // CJK Extension A
        | 0x4E00..=0x9FFF    // CJK Unified Ideographs
        | 0xF900..=0xFAFF    // CJK Compatibility Ideographs
        | 0x20000..=0x2FA1F) // Extensions B+ and compatibility supplement
}

/// Case-folded tokens: runs of letters/digits, with every CJK character a
/// token of its own. Whitespace, punctuation and symbols separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let folded = caseless::default_case_fold_str(text);
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in folded.chars() {
        if is_cjk(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Count-aware token F1. Two empty texts score 1.
pub fn token_f1(pred: &str, gt: &str) -> f64 {
    let p = tokenize(pred);
    let g = tokenize(gt);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    // same value as 2PR/(P+R), with a single rounding
    (2 * overlap) as f64 / (p.len() + g.len()) as f64
}

pub fn content_reward<F: Scalar>(pred_text: &str, gt_text: &str, cfg: &RewardConfig<F>) -> F {
    if lit::<F>(token_f1(pred_text, gt_text)) >= cfg.f1_threshold {
        cfg.gamma
    } else {
        F::zero()
    }
}

// ---------------------------------------------------------------------------
// Navigation

/// Geometry component of the navigation reward for a kind-matched pair.
fn geometry_component<F: Scalar>(pred: &Action, gt: &Action, cfg: &RewardConfig<F>) -> F {
    match (pred, gt) {
        (Action::Click(p), Action::Click(g)) | (Action::LongPress(p), Action::LongPress(g)) => {
            coordinate_reward(*p, *g, cfg)
        }
        (Action::Scroll { .. }, Action::Scroll { .. }) => scroll_reward(pred, gt, cfg),
        (Action::Drag(p), Action::Drag(g)) => drag_reward(p, g, cfg),
        _ => F::zero(),
    }
}

pub fn navigation_reward<F: Scalar>(
    output: &ModelOutput,
    target: &NavigationTarget,
    cfg: &RewardConfig<F>,
) -> RewardBreakdown<F> {
    let format = if output.format_ok { F::one() } else { F::zero() };
    let pred = match &output.action {
        Ok(a) if a.kind() == target.gt_action.kind() => a,
        _ => return RewardBreakdown::navigation(format, F::zero(), F::zero(), F::zero(), cfg),
    };
    let cfg = cfg.for_screen(target.screen);
    let gt = &target.gt_action;
    let coord = geometry_component(pred, gt, &cfg);
    let content = match (pred.text(), gt.text()) {
        (Some(p), Some(g)) => content_reward(p, g, &cfg),
        _ => F::zero(),
    };
    RewardBreakdown::navigation(format, F::one(), coord, content, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{parse_model_output, Direction};

    fn cfg() -> RewardConfig<f64> {
        RewardConfig::default()
    }

    fn gt_box() -> GroundingTarget {
        GroundingTarget {
            gt_box: BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
        }
    }

    #[test]
    fn defaults_validate() {
        cfg().validate().unwrap();
        RewardConfig::<f32>::default().validate().unwrap();
        let bad = RewardConfig {
            delta2: 80.0,
            ..cfg()
        };
        assert!(matches!(bad.validate(), Err(ConfigError::DeltaOrder { .. })));
        let bad = RewardConfig {
            gamma: -1.0,
            ..cfg()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn grounding_examples() {
        let r = grounding_reward("[0,0,10,10]", &gt_box(), &cfg());
        assert_eq!((r.format, r.coord), (1.0, 1.0));
        assert!((r.total - 1.1).abs() < 1e-12);

        let r = grounding_reward("[8,8,12,12]", &gt_box(), &cfg());
        assert_eq!((r.format, r.coord), (1.0, 1.0));

        let r = grounding_reward("click there", &gt_box(), &cfg());
        assert_eq!((r.format, r.coord, r.total), (0.0, 0.0, 0.0));

        let r = grounding_reward("[20, 20, 30, 30]", &gt_box(), &cfg());
        assert_eq!((r.format, r.coord), (1.0, 0.0));
        assert!(parse_box_response("[1,2,3]").is_none());
        assert!(parse_box_response("box: [1,2,3,4]").is_none());
    }

    #[test]
    fn coordinate_bands() {
        let c = cfg();
        assert_eq!(point_reward_at(0.0, &c), 1.0);
        assert_eq!(point_reward_at(13.99, &c), 1.0);
        assert_eq!(point_reward_at(14.0, &c), 0.5);
        assert_eq!(point_reward_at(69.99, &c), 0.5);
        assert_eq!(point_reward_at(70.0, &c), 0.0);
        assert_eq!(coordinate_reward(Point::new(0, 0), Point::new(30, 40), &c), 0.5);
    }

    #[test]
    fn scroll_clauses() {
        let c = cfg();
        let gt = Action::scroll(Point::new(100, 800), Point::new(100, 200), Direction::Up);
        assert_eq!(scroll_reward(&gt, &gt, &c), 1.5);
        let far_end = Action::scroll(Point::new(100, 800), Point::new(900, 900), Direction::Up);
        assert_eq!(scroll_reward(&far_end, &gt, &c), 1.0);
        let far = Action::scroll(Point::new(900, 0), Point::new(900, 900), Direction::Up);
        assert_eq!(scroll_reward(&far, &gt, &c), 0.5);
        let wrong_dir = Action::scroll(Point::new(100, 800), Point::new(100, 200), Direction::Down);
        assert_eq!(scroll_reward(&wrong_dir, &gt, &c), 0.5);
        let nothing = Action::scroll(Point::new(900, 0), Point::new(900, 900), Direction::Left);
        assert_eq!(scroll_reward(&nothing, &gt, &c), 0.0);
    }

    #[test]
    fn drag_ignores_direction() {
        let c = cfg();
        let gt = Endpoints {
            start: Point::new(0, 0),
            end: Point::new(500, 0),
        };
        assert_eq!(drag_reward(&gt, &gt, &c), 1.5);
        let half = Endpoints {
            start: Point::new(0, 0),
            end: Point::new(0, 900),
        };
        assert_eq!(drag_reward(&half, &gt, &c), 1.0);
        let none = Endpoints {
            start: Point::new(900, 900),
            end: Point::new(500, 0),
        };
        assert_eq!(drag_reward(&none, &gt, &c), 0.0);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(token_f1("hello world", "hello world"), 1.0);
        assert!((token_f1("turn on wifi", "turn off wifi") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(token_f1("hello", "goodbye world"), 0.0);
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("", "x"), 0.0);
        assert_eq!(tokenize("打开微信 App!"), vec!["打", "开", "微", "信", "app"]);
        assert_eq!(content_reward("turn on wifi", "turn off wifi", &cfg()), 1.0);
        assert_eq!(content_reward("hello", "goodbye world", &cfg()), 0.0);
    }

    #[test]
    fn navigation_examples() {
        let c = cfg();
        let screen = ScreenSize::new(1080, 2400).unwrap();
        let click = NavigationTarget {
            gt_action: Action::Click(Point::new(500, 600)),
            screen,
        };
        let out = parse_model_output("<think>t</think><action>Click(box=(500, 600))</action>");
        let r = navigation_reward(&out, &click, &c);
        assert!((r.total - (c.w1 + (1.0 + c.alpha) * c.w2)).abs() < 1e-12);

        let ty = NavigationTarget {
            gt_action: Action::Type("Hello World".into()),
            screen,
        };
        let out = parse_model_output("<think>t</think><action>Type(content='hello world')</action>");
        let r = navigation_reward(&out, &ty, &c);
        assert!((r.total - (c.w1 + (1.0 + c.gamma) * c.w2)).abs() < 1e-12);

        let out = parse_model_output("<think>t</think><action>PressBack()</action>");
        let r = navigation_reward(&out, &click, &c);
        assert_eq!(r.total, c.w1);

        let out = parse_model_output("garbage");
        let r = navigation_reward(&out, &click, &c);
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn thresholds_scale_with_screen() {
        let c = cfg();
        let narrow = c.for_screen(ScreenSize::new(540, 960).unwrap());
        assert_eq!(narrow.delta2, 7.0);
        assert_eq!(narrow.delta1, 35.0);
        assert_eq!(narrow.delta3, 70.0);
        let unscaled = RewardConfig {
            reference_width: None,
            ..c
        };
        assert_eq!(unscaled.for_screen(ScreenSize::new(540, 960).unwrap()), unscaled);
    }

    #[test]
    fn generic_over_f32() {
        let c = RewardConfig::<f32>::default();
        let r = grounding_reward("[0,0,10,10]", &gt_box(), &c);
        assert!((r.total - 1.1f32).abs() < 1e-6);
    }

    #[test]
    fn config_json_roundtrip() {
        let json = serde_json::to_string(&cfg()).unwrap();
        let back: RewardConfig<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg());
        let partial: RewardConfig<f64> = serde_json::from_str(r#"{"alpha": 2.0}"#).unwrap();
        assert_eq!(partial.alpha, 2.0);
        assert_eq!(partial.w1, 0.1);
        assert!(serde_json::from_str::<RewardConfig<f64>>(r#"{"alfa": 2.0}"#).is_err());
    }
}
