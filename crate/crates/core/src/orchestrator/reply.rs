//! Parsing of `{thought, action, action_input}` agent replies.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentReply {
    #[serde(default)]
    pub thought: String,
    pub action: String,
    pub action_input: String,
}

#[derive(Deserialize)]
struct RawReply {
    #[serde(default)]
    thought: serde_json::Value,
    action: String,
    action_input: serde_json::Value,
}

fn text_of(value: serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s,
        serde_json::Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn strip_fence(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let rest = rest.split_once('\n').map_or("", |(_, body)| body);
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

/// Accepts the bare object, a fenced block, or an object embedded in prose.
pub fn parse_agent_reply(text: &str) -> Option<AgentReply> {
    let body = strip_fence(text);
    let candidate = serde_json::from_str::<RawReply>(body).ok().or_else(|| {
        let start = body.find('{')?;
        let end = body.rfind('}')?;
        (start < end).then(|| serde_json::from_str::<RawReply>(&body[start..=end]).ok()).flatten()
    })?;
    Some(AgentReply {
        thought: text_of(candidate.thought),
        action: candidate.action.trim().to_ascii_lowercase(),
        action_input: text_of(candidate.action_input),
    })
}

/// SQL from a plain-text reply: a fenced block if present, else the whole text.
pub(crate) fn extract_sql(text: &str) -> String {
    if let Some(start) = text.find("```") {
        let after = &text[start + 3..];
        let body = after.split_once('\n').map_or(after, |(first, rest)| {
            if first.trim().chars().all(|c| c.is_ascii_alphabetic()) {
                rest
            } else {
                after
            }
        });
        if let Some(end) = body.find("```") {
            return body[..end].trim().to_string();
        }
    }
    text.trim().to_string()
}
