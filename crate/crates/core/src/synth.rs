//! Seeded synthetic trajectories for demos and tests.
//!
//! The action mix is long-tailed: mostly clicks, then scrolls, typing and
//! navigation keys, with long presses around half a percent of steps.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::action::{Action, Direction};
use crate::geometry::{Point, ScreenSize};
use crate::trajectory::{Language, Status, Step, Trajectory, SCHEMA};

/// Source name whose scroll directions follow the content-motion convention.
pub const CONTENT_MOTION_SOURCE: &str = "synthetic-content";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub traces: usize,
    pub seed: u64,
    pub screen: ScreenSize,
    /// Fraction of traces whose task is a question.
    pub question_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            traces: 200,
            seed: 0,
            screen: ScreenSize {
                width: 1080,
                height: 2400,
            },
            question_rate: 0.3,
            min_len: 1,
            max_len: 12,
        }
    }
}

const APPS: &[&str] = &["settings", "maps", "mail", "shop", "music", "notes"];

const TASKS: &[&str] = &[
    "Turn on dark mode",
    "Add milk to the shopping list",
    "Open the alarm page",
    "Send the report to Alice",
    "Play the latest album",
];

const QUESTIONS: &[&str] = &[
    "What is the weather today?",
    "How much does the blue jacket cost?",
    "Check when my next meeting starts",
    "今天的天气怎么样",
    "这件外套多少钱",
];

const WEIGHTS: &[(u32, &str)] = &[
    (640, "click"),
    (120, "scroll"),
    (80, "type"),
    (50, "back"),
    (40, "wait"),
    (25, "home"),
    (20, "launch"),
    (10, "enter"),
    (5, "drag"),
    (5, "longpress"),
    (5, "recent"),
];

fn pick_kind(rng: &mut ChaCha8Rng) -> &'static str {
    let total: u32 = WEIGHTS.iter().map(|w| w.0).sum();
    let mut x = rng.gen_range(0..total);
    for &(w, k) in WEIGHTS {
        if x < w {
            return k;
        }
        x -= w;
    }
    unreachable!("weights cover the range")
}

fn point(rng: &mut ChaCha8Rng, s: ScreenSize) -> Point {
    Point::new(rng.gen_range(0..s.width), rng.gen_range(0..s.height))
}

fn scroll(rng: &mut ChaCha8Rng, s: ScreenSize) -> Action {
    let x = rng.gen_range(100..s.width - 100);
    let (a, b) = (rng.gen_range(s.height / 2..s.height - 100), rng.gen_range(100..s.height / 3));
    if rng.gen_bool(0.5) {
        Action::scroll(Point::new(x, a), Point::new(x, b), Direction::Up)
    } else {
        Action::scroll(Point::new(x, b), Point::new(x, a), Direction::Down)
    }
}

fn body_action(rng: &mut ChaCha8Rng, s: ScreenSize) -> Action {
    match pick_kind(rng) {
        "click" => Action::Click(point(rng, s)),
        "scroll" => scroll(rng, s),
        "type" => Action::Type(["wifi", "milk", "hello there", "蓝色外套"].choose(rng).unwrap().to_string()),
        "back" => Action::PressBack,
        "wait" => Action::Wait,
        "home" => Action::PressHome,
        "launch" => Action::Launch(APPS.choose(rng).unwrap().to_string()),
        "enter" => Action::PressEnter,
        "drag" => Action::drag(point(rng, s), point(rng, s)),
        "longpress" => Action::LongPress(point(rng, s)),
        _ => Action::PressRecent,
    }
}

/// Generates `cfg.traces` trajectories with ids `syn-0000`, `syn-0001`, ...
pub fn synthetic_dataset(cfg: &SynthConfig) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.traces)
        .map(|i| {
            let question = rng.gen_bool(cfg.question_rate);
            let task = if question {
                QUESTIONS.choose(&mut rng).unwrap()
            } else {
                TASKS.choose(&mut rng).unwrap()
            };
            let n = rng.gen_range(cfg.min_len..=cfg.max_len.max(cfg.min_len));
            let mut actions: Vec<Action> = (1..n).map(|_| body_action(&mut rng, cfg.screen)).collect();
            actions.push(Action::Finished(String::new()));
            let content_motion = rng.gen_bool(0.25);
            let source = if content_motion {
                // this source reports the direction the content moves
                for a in &mut actions {
                    if let Action::Scroll { direction, .. } = a {
                        *direction = direction.inverse();
                    }
                }
                CONTENT_MOTION_SOURCE
            } else {
                "synthetic"
            };
            let language = if task.is_ascii() { Language::En } else { Language::Zh };
            let steps = actions
                .into_iter()
                .enumerate()
                .map(|(k, a)| Step {
                    index: k as u32 + 1,
                    screenshot_ref: format!("shots/syn-{i:04}/{}.png", k + 1),
                    screen: cfg.screen,
                    thought: format!("Step {} toward: {task}", k + 1),
                    raw_action: a.to_string(),
                    action: a,
                })
                .collect();
            Trajectory {
                schema: SCHEMA.to_string(),
                trace_id: format!("syn-{i:04}"),
                task: task.to_string(),
                language,
                source: source.to_string(),
                category: APPS[i % APPS.len()].to_string(),
                status: Status::Raw,
                info_retrieval: None,
                fixed_by_annotator: false,
                augmentation: None,
                steps,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::ActionKind;
    use crate::trajectory::action_distribution;

    #[test]
    fn deterministic_and_valid() {
        let cfg = SynthConfig::default();
        let a = synthetic_dataset(&cfg);
        assert_eq!(a, synthetic_dataset(&cfg));
        assert_eq!(a.len(), 200);
        for t in &a {
            t.validate().unwrap();
        }
    }

    #[test]
    fn long_tailed() {
        let ts = synthetic_dataset(&SynthConfig {
            traces: 2000,
            ..SynthConfig::default()
        });
        let s = action_distribution(&ts);
        assert!(s.frequency(ActionKind::LongPress) <= 0.01);
        assert!(s.frequency(ActionKind::Click) > 0.4);
    }
}
