//! Turning generated text into typed decisions.

use serde_json::Value;
use thiserror::Error;

use super::{ModeLabel, RelevanceJudgment};

const FREE_KEYWORDS: [&str; 3] = ["yes", "command", "request"];

/// Free if the output contains `yes`, `command` or `request` as a whole word
/// (case-insensitive), Guided otherwise.
pub fn parse_mode_output(text: &str) -> ModeLabel {
    let lower = text.trim().to_lowercase();
    let free = lower
        .split(|c: char| !c.is_alphanumeric())
        .any(|w| FREE_KEYWORDS.contains(&w));
    if free {
        ModeLabel::Free
    } else {
        ModeLabel::Guided
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntentParseError {
    #[error("no index found in model output")]
    NoIndexFound,
    #[error("index {0} is out of range")]
    IndexOutOfRange(u64),
}

/// First decimal integer in the output, which must index a candidate.
pub fn parse_intent_output(text: &str, n_candidates: usize) -> Result<usize, IntentParseError> {
    let start = text
        .find(|c: char| c.is_ascii_digit())
        .ok_or(IntentParseError::NoIndexFound)?;
    let digits: &str = text[start..]
        .split(|c: char| !c.is_ascii_digit())
        .next()
        .unwrap_or_default();
    let value = digits.parse::<u64>().unwrap_or(u64::MAX);
    if value < n_candidates as u64 {
        Ok(value as usize)
    } else {
        Err(IntentParseError::IndexOutOfRange(value))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FilterParseError {
    #[error("no structured list found in model output")]
    NoList,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterParse {
    pub judgments: Vec<RelevanceJudgment>,
    /// Entries skipped because a field was missing or malformed.
    pub dropped: usize,
}

/// Extracts the first JSON list in the output, tolerating surrounding prose
/// and code fences. A list of objects is preferred over any earlier list of
/// scalars.
pub fn parse_filter_output(text: &str) -> Result<FilterParse, FilterParseError> {
    let mut fallback: Option<Vec<Value>> = None;
    for (pos, _) in text.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&text[pos..]).into_iter::<Value>();
        let Some(Ok(Value::Array(items))) = stream.next() else {
            continue;
        };
        if items.is_empty() || items.iter().any(Value::is_object) {
            return Ok(judgments_from(items));
        }
        fallback.get_or_insert(items);
    }
    fallback.map(judgments_from).ok_or(FilterParseError::NoList)
}

fn judgments_from(items: Vec<Value>) -> FilterParse {
    let mut judgments = Vec::new();
    let mut dropped = 0;
    for item in items {
        match judgment(&item) {
            Some(j) => judgments.push(j),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        tracing::warn!(dropped, "dropped malformed relevance judgments");
    }
    FilterParse { judgments, dropped }
}

fn judgment(item: &Value) -> Option<RelevanceJudgment> {
    let obj = item.as_object()?;
    let key = as_uint(obj.get("key")?)?;
    let relevance = as_uint(obj.get("relevance")?)?;
    if relevance > 2 {
        return None;
    }
    let justification = match obj.get("justification") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return None,
    };
    Some(RelevanceJudgment {
        key: usize::try_from(key).ok()?,
        relevance: relevance as u8,
        justification,
    })
}

fn as_uint(v: &Value) -> Option<u64> {
    match v {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Writes judgments in the same list layout the filter prompt asks for.
pub fn serialize_judgments(judgments: &[RelevanceJudgment]) -> String {
    let items: Vec<String> = judgments
        .iter()
        .map(|j| {
            format!(
                "{{\"key\": {}, \"relevance\": {}, \"justification\": {}}}",
                j.key,
                j.relevance,
                serde_json::to_string(&j.justification).expect("strings serialize")
            )
        })
        .collect();
    format!("[{}]", items.join(",\n"))
}
