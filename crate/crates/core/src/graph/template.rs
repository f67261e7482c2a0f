//! `{{ NAME }}` placeholder handling.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use super::condition::Beliefstate;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no value for template variable {0:?}")]
pub struct MissingVariable(pub String);

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap())
}

/// Variable names referenced by `text`, in order of first appearance.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for cap in placeholder_re().captures_iter(text) {
        let name = &cap[1];
        if !names.iter().any(|n| n == name) {
            names.push(name.to_string());
        }
    }
    names
}

pub fn has_placeholders(text: &str) -> bool {
    placeholder_re().is_match(text)
}

/// Replaces every placeholder with its beliefstate value rendered as text.
/// Text outside placeholders is copied unchanged.
pub fn fill_template(text: &str, beliefstate: &Beliefstate) -> Result<String, MissingVariable> {
    let re = placeholder_re();
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for cap in re.captures_iter(text) {
        let whole = cap.get(0).unwrap();
        let name = &cap[1];
        let value = beliefstate
            .get(name)
            .ok_or_else(|| MissingVariable(name.to_string()))?;
        out.push_str(&text[last..whole.start()]);
        out.push_str(&value.to_string());
        last = whole.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

/// Builds a regex matching any rendering of `text`: literal segments must
/// match exactly, placeholders match any non-empty string.
pub fn rendering_pattern(text: &str) -> Regex {
    let re = placeholder_re();
    let mut pattern = String::from("(?s)^");
    let mut last = 0;
    for m in re.find_iter(text) {
        pattern.push_str(&regex::escape(&text[last..m.start()]));
        pattern.push_str(".+?");
        last = m.end();
    }
    pattern.push_str(&regex::escape(&text[last..]));
    pattern.push('$');
    Regex::new(&pattern).expect("escaped pattern is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Value;

    #[test]
    fn fills_country_example() {
        let bs: Beliefstate = [("COUNTRY", Value::Text("Singapore".into()))]
            .into_iter()
            .collect();
        let out = fill_template(
            "In {{ COUNTRY }}, at 9 a.m., it is usually around 35 degrees celsius.",
            &bs,
        )
        .unwrap();
        assert_eq!(
            out,
            "In Singapore, at 9 a.m., it is usually around 35 degrees celsius."
        );
    }

    #[test]
    fn plain_text_unchanged() {
        let text = "Seat reservations are allowed for train travel. {not a placeholder}";
        assert_eq!(fill_template(text, &Beliefstate::new()).unwrap(), text);
    }

    #[test]
    fn missing_variable() {
        assert_eq!(
            fill_template("{{ A }}", &Beliefstate::new()),
            Err(MissingVariable("A".into()))
        );
    }

    #[test]
    fn whitespace_is_optional() {
        let bs: Beliefstate = [("A", Value::Number(2.0))].into_iter().collect();
        assert_eq!(fill_template("{{A}}/{{  A  }}", &bs).unwrap(), "2/2");
        assert_eq!(placeholders("{{A}} {{ B }} {{A}}"), vec!["A", "B"]);
    }

    #[test]
    fn rendering_pattern_matches_fills() {
        let text = "In {{ COUNTRY }} (daily) costs [x] apply.";
        let bs: Beliefstate = [("COUNTRY", Value::Text("France".into()))]
            .into_iter()
            .collect();
        let re = rendering_pattern(text);
        assert!(re.is_match(&fill_template(text, &bs).unwrap()));
        assert!(!re.is_match("In France costs apply."));
    }
}
