use serde_json::Value;
use thiserror::Error;

use crate::game::Action;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no cooperate/defect token in response")]
    UnparseableResponse,
    /// Reserved; the last-occurrence rule resolves mixed answers.
    #[error("response names both actions")]
    AmbiguousResponse,
}

fn action_from_token(token: &str) -> Option<Action> {
    match token.to_ascii_lowercase().as_str() {
        "cooperate" | "c" => Some(Action::C),
        "defect" | "d" => Some(Action::D),
        _ => None,
    }
}

fn structured_action(raw: &str) -> Option<Action> {
    let trimmed = raw.trim();
    let candidates = [
        Some(trimmed),
        trimmed
            .find('{')
            .zip(trimmed.rfind('}'))
            .filter(|(s, e)| s < e)
            .map(|(s, e)| &trimmed[s..=e]),
    ];
    candidates.into_iter().flatten().find_map(|text| {
        let v: Value = serde_json::from_str(text).ok()?;
        action_from_token(v.get("action")?.as_str()?.trim())
    })
}

/// Extracts an action from a free-form reply.
///
/// A JSON object with an `action` field wins; otherwise the last standalone
/// `cooperate`/`defect`/`C`/`D` token (case-insensitive) decides.
pub fn parse_action(raw: &str) -> Result<Action, ParseError> {
    if let Some(a) = structured_action(raw) {
        return Ok(a);
    }
    raw.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '_'))
        .filter_map(action_from_token)
        .next_back()
        .ok_or(ParseError::UnparseableResponse)
}
