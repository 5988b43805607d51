use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{Action, Horizon, PayoffMatrix};
use crate::strategy::History;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryRendering {
    /// One message per completed round.
    MessagePerRound,
    /// A single message listing all completed rounds.
    SingleSummaryBlock,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("unresolved placeholder {{{0}}}")]
    Unresolved(String),
    #[error("template must mention all four payoffs; missing {{{0}}}")]
    MissingPayoff(&'static str),
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PromptTemplate {
    pub name: String,
    pub system_text: String,
    pub history_rendering: HistoryRendering,
}

const BASE_TEXT: &str = "You are playing an iterated prisoner's dilemma game against an opponent.
In each round, you will be provided the history of all previous rounds, and your task is to pick either cooperate or defect.
Here are the rewards for each round:
1. If both players cooperate, you both receive {R} points.
2. If you defect and your opponent cooperates, you receive {H} points and your opponent receives {L} points.
3. If you cooperate and your opponent defects, you receive {L} points and your opponent receives {H} points.
4. If both players defect, you both receive {P} points.{horizon_note}";

const JSON_SUFFIX: &str = "
Reply with a JSON object of the form {\"action\": \"C\"} to cooperate or {\"action\": \"D\"} to defect.";

/// Names of the built-in templates.
pub const TEMPLATE_NAMES: [&str; 3] = ["default", "summary", "json_action"];

impl PromptTemplate {
    pub fn new(
        name: impl Into<String>,
        system_text: impl Into<String>,
        history_rendering: HistoryRendering,
    ) -> Result<Self, TemplateError> {
        let system_text = system_text.into();
        for key in ["H", "R", "P", "L"] {
            if !system_text.contains(&format!("{{{key}}}")) {
                return Err(TemplateError::MissingPayoff(key));
            }
        }
        Ok(PromptTemplate {
            name: name.into(),
            system_text,
            history_rendering,
        })
    }

    pub fn named(name: &str) -> Result<Self, TemplateError> {
        match name {
            "default" => PromptTemplate::new(name, BASE_TEXT, HistoryRendering::MessagePerRound),
            "summary" => PromptTemplate::new(name, BASE_TEXT, HistoryRendering::SingleSummaryBlock),
            "json_action" => {
                // the JSON example braces are escaped as {{ }}
                let text = format!("{BASE_TEXT}{}", JSON_SUFFIX.replace('{', "{{").replace('}', "}}"));
                PromptTemplate::new(name, text, HistoryRendering::MessagePerRound)
            }
            other => Err(TemplateError::UnknownTemplate(other.to_string())),
        }
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::named("default").expect("default template is valid")
    }
}

fn word(a: Action) -> &'static str {
    match a {
        Action::C => "cooperate",
        Action::D => "defect",
    }
}

/// Substitutes `{NAME}` placeholders; `{{` and `}}` are literal braces.
fn substitute(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push('{');
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push('}');
            rest = after;
        } else if tail.starts_with('{') {
            let end = tail
                .find('}')
                .ok_or_else(|| TemplateError::Unresolved(tail.chars().skip(1).take(20).collect()))?;
            let key = &tail[1..end];
            let value = lookup(key).ok_or_else(|| TemplateError::Unresolved(key.to_string()))?;
            out.push_str(&value);
            rest = &tail[end + 1..];
        } else {
            return Err(TemplateError::Unresolved("}".into()));
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders the chat messages for the next move.
///
/// Output: the system text, the history, then one move request. Pure in its
/// inputs.
pub fn render_prompt(
    template: &PromptTemplate,
    matrix: &PayoffMatrix,
    horizon: &Horizon,
    history: &History,
) -> Result<Vec<ChatMessage>, TemplateError> {
    let known = horizon.disclosed_rounds();
    let horizon_note = known
        .map(|n| format!("\nThe game lasts exactly {n} rounds."))
        .unwrap_or_default();
    let system = substitute(&template.system_text, |key| match key {
        "H" => Some(matrix.temptation().to_string()),
        "R" => Some(matrix.reward().to_string()),
        "P" => Some(matrix.punishment().to_string()),
        "L" => Some(matrix.sucker().to_string()),
        "horizon_note" => Some(horizon_note.clone()),
        _ => None,
    })?;

    let mut messages = vec![ChatMessage::system(system)];
    let describe = |i: usize, own: Action, opp: Action| {
        let (mine, theirs) = matrix.payoff(own, opp);
        format!(
            "Round {}: you chose {}, your opponent chose {}. You received {} points and your opponent received {} points.",
            i + 1,
            word(own),
            word(opp),
            mine,
            theirs
        )
    };
    match template.history_rendering {
        HistoryRendering::MessagePerRound => {
            for (i, (own, opp)) in history.iter().enumerate() {
                messages.push(ChatMessage::user(describe(i, own, opp)));
            }
        }
        HistoryRendering::SingleSummaryBlock if !history.is_empty() => {
            let lines: Vec<String> = history
                .iter()
                .enumerate()
                .map(|(i, (own, opp))| describe(i, own, opp))
                .collect();
            messages.push(ChatMessage::user(format!(
                "History of previous rounds:\n{}",
                lines.join("\n")
            )));
        }
        HistoryRendering::SingleSummaryBlock => {}
    }
    let round = history.len() + 1;
    let position = match known {
        Some(n) => format!("Round {round} of {n}"),
        None => format!("Round {round}"),
    };
    messages.push(ChatMessage::user(format!(
        "{position}: choose your action. Answer with cooperate or defect."
    )));
    Ok(messages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Action::{C, D};

    #[test]
    fn empty_history_is_two_messages() {
        let m = render_prompt(
            &PromptTemplate::default(),
            &PayoffMatrix::axelrod(),
            &Horizon::fixed(50),
            &History::default(),
        )
        .unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].role, "system");
        assert!(m[0].content.contains("50 rounds"));
        assert!(m[1].content.starts_with("Round 1 of 50"));
    }

    #[test]
    fn message_per_round_counts() {
        let h = History::from_pairs([(C, C), (C, D), (D, D)]);
        let m = render_prompt(
            &PromptTemplate::default(),
            &PayoffMatrix::axelrod(),
            &Horizon::indefinite(0.05),
            &h,
        )
        .unwrap();
        assert_eq!(m.len(), 5);
        assert!(!m[0].content.contains("rounds."));
        assert!(m[2].content.contains("you chose cooperate, your opponent chose defect"));
        assert!(m[2].content.contains("You received 0 points and your opponent received 5"));
        let m = render_prompt(
            &PromptTemplate::named("summary").unwrap(),
            &PayoffMatrix::axelrod(),
            &Horizon::indefinite(0.05),
            &h,
        )
        .unwrap();
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn rewards_are_enumerated() {
        let m = render_prompt(
            &PromptTemplate::default(),
            &PayoffMatrix::axelrod(),
            &Horizon::fixed(50),
            &History::default(),
        )
        .unwrap();
        let s = &m[0].content;
        assert!(s.contains("1. If both players cooperate, you both receive 3 points."));
        assert!(s.contains("you receive 5 points and your opponent receives 0 points"));
        assert!(s.contains("you receive 0 points and your opponent receives 5 points"));
        assert!(s.contains("4. If both players defect, you both receive 1 points."));
        assert!(!s.contains('{'));
    }

    #[test]
    fn json_template_keeps_literal_braces() {
        let m = render_prompt(
            &PromptTemplate::named("json_action").unwrap(),
            &PayoffMatrix::axelrod(),
            &Horizon::fixed(3),
            &History::default(),
        )
        .unwrap();
        assert!(m[0].content.contains(r#"{"action": "C"}"#));
    }

    #[test]
    fn unresolved_placeholder_is_an_error() {
        let t = PromptTemplate::new("x", "{H}{R}{P}{L} {mystery}", HistoryRendering::MessagePerRound)
            .unwrap();
        let err = render_prompt(&t, &PayoffMatrix::axelrod(), &Horizon::fixed(2), &History::default())
            .unwrap_err();
        assert_eq!(err, TemplateError::Unresolved("mystery".into()));
        assert_eq!(
            PromptTemplate::new("x", "{H}{R}{P}", HistoryRendering::MessagePerRound).unwrap_err(),
            TemplateError::MissingPayoff("L")
        );
    }
}
