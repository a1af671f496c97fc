//! Shipped prompt templates with `{problem}` and `{history}` placeholders.

use crate::trajectory::{render_history, HistoryContext};

pub const GROUNDING_TEMPLATE: &str = include_str!("../../../assets/prompts/grounding.txt");
pub const NAVIGATION_TEMPLATE: &str = include_str!("../../../assets/prompts/navigation.txt");

/// Substitutes each `{name}` in `template` once, left to right. Inserted
/// values are not rescanned, so a task containing `{history}` stays literal.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (name, value) in vars {
            let key_len = name.len() + 2;
            if tail.len() >= key_len && tail.as_bytes()[key_len - 1] == b'}' && &tail[1..key_len - 1] == *name {
                out.push_str(value);
                rest = &tail[key_len..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

pub fn grounding_prompt(instruction: &str) -> String {
    fill(GROUNDING_TEMPLATE, &[("problem", instruction)])
}

pub fn navigation_prompt(task: &str, history: &HistoryContext) -> String {
    let h = render_history(history);
    fill(NAVIGATION_TEMPLATE, &[("problem", task), ("history", &h)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{Action, ActionKind};

    #[test]
    fn templates_have_placeholders() {
        assert_eq!(GROUNDING_TEMPLATE.matches("{problem}").count(), 1);
        assert_eq!(NAVIGATION_TEMPLATE.matches("{problem}").count(), 1);
        assert_eq!(NAVIGATION_TEMPLATE.matches("{history}").count(), 1);
    }

    #[test]
    fn navigation_lists_every_action() {
        for k in ActionKind::ALL {
            assert!(NAVIGATION_TEMPLATE.contains(&format!("{}(", k.name())), "{k:?}");
        }
    }

    #[test]
    fn fill_does_not_rescan() {
        let s = navigation_prompt("say {history} please", &HistoryContext::default());
        assert!(s.contains("say {history} please"));
        assert!(s.contains("### Previous Actions\n\nNone\n"));
        let g = grounding_prompt("the OK button");
        assert!(g.starts_with("Outline the position corresponding to the instruction: the OK button."));
    }

    #[test]
    fn history_is_rendered() {
        let h = HistoryContext {
            pairs: vec![("open it".into(), Action::PressHome)],
        };
        assert!(navigation_prompt("t", &h).contains("Step 1: open it → PressHome()"));
    }

    #[test]
    fn fill_edge_cases() {
        assert_eq!(fill("{a}{b}{", &[("a", "1")]), "1{b}{");
        assert_eq!(fill("", &[("a", "1")]), "");
        assert_eq!(fill("{é}", &[("é", "x")]), "x");
    }
}
