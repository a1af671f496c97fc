#![allow(dead_code)]

use proptest::prelude::*;
use venus_core::action::{Action, Direction, Endpoints};
use venus_core::geometry::{Point, ScreenSize};
use venus_core::trajectory::{Language, Status, Step, Trajectory, SCHEMA};

pub fn point() -> impl Strategy<Value = Point> {
    prop_oneof![
        4 => (0u32..4000, 0u32..4000).prop_map(|(x, y)| Point::new(x, y)),
        1 => (any::<u32>(), any::<u32>()).prop_map(|(x, y)| Point::new(x, y)),
    ]
}

pub fn direction() -> impl Strategy<Value = Direction> {
    prop::sample::select(Direction::ALL.to_vec())
}

pub fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9 ]{0,24}",
        "[\\\\'\"\n\t\r(),=<>]{0,12}",
        "[一-龥ぁ-んア-ン ]{0,10}",
        any::<String>(),
    ]
}

pub fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        point().prop_map(Action::Click),
        (point(), point()).prop_map(|(a, b)| Action::drag(a, b)),
        (prop::option::of((point(), point())), direction()).prop_map(|(e, direction)| Action::Scroll {
            endpoints: e.map(|(start, end)| Endpoints { start, end }),
            direction,
        }),
        text().prop_map(Action::Type),
        text().prop_map(Action::Launch),
        Just(Action::Wait),
        text().prop_map(Action::Finished),
        text().prop_map(Action::CallUser),
        point().prop_map(Action::LongPress),
        Just(Action::PressBack),
        Just(Action::PressHome),
        Just(Action::PressEnter),
        Just(Action::PressRecent),
    ]
}

pub fn step(index: u32, thought: &str, action: Action) -> Step {
    Step {
        index,
        screenshot_ref: format!("shots/{index}.png"),
        screen: ScreenSize::new(1080, 2400).unwrap(),
        thought: thought.to_string(),
        raw_action: action.to_string(),
        action,
    }
}

pub fn trajectory(id: &str, task: &str, actions: Vec<Action>) -> Trajectory {
    Trajectory {
        schema: SCHEMA.to_string(),
        trace_id: id.to_string(),
        task: task.to_string(),
        language: Language::En,
        source: "synthetic".into(),
        category: "settings".into(),
        status: Status::Raw,
        info_retrieval: None,
        fixed_by_annotator: false,
        augmentation: None,
        steps: actions
            .into_iter()
            .enumerate()
            .map(|(i, a)| step(i as u32 + 1, &format!("thought {} of {id}", i + 1), a))
            .collect(),
    }
}

/// Actions whose coordinates fit a 1080x2400 screen.
pub fn on_screen_action() -> impl Strategy<Value = Action> {
    action().prop_map(|a| clamp(a, 1079, 2399))
}

fn clamp(a: Action, w: u32, h: u32) -> Action {
    let c = |p: Point| Point::new(p.x % (w + 1), p.y % (h + 1));
    match a {
        Action::Click(p) => Action::Click(c(p)),
        Action::LongPress(p) => Action::LongPress(c(p)),
        Action::Drag(e) => Action::drag(c(e.start), c(e.end)),
        Action::Scroll { endpoints, direction } => Action::Scroll {
            endpoints: endpoints.map(|e| Endpoints {
                start: c(e.start),
                end: c(e.end),
            }),
            direction,
        },
        other => other,
    }
}

pub fn trajectory_strategy() -> impl Strategy<Value = Trajectory> {
    (
        "[a-z0-9]{1,8}",
        "[a-zA-Z ?]{1,30}",
        prop::collection::vec((on_screen_action(), text()), 1..8),
    )
        .prop_map(|(id, task, steps)| {
            let mut t = trajectory(&id, &task, steps.iter().map(|(a, _)| a.clone()).collect());
            for (s, (_, th)) in t.steps.iter_mut().zip(&steps) {
                s.thought = th.clone();
            }
            t
        })
}
