//! Typed variable values, the beliefstate, and logic-branch conditions.
//!
//! Conditions use a single comparison per branch:
//!
//! ```text
//! condition := "DEFAULT" | NAME op literal
//! op        := "==" | "!=" | "<" | "<=" | ">" | ">="
//! literal   := 'text' | "text" | decimal | true | false
//! ```

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Kind of value a variable node collects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Text,
    Number,
    Boolean,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueKind::Text => "text",
            ValueKind::Number => "number",
            ValueKind::Boolean => "boolean",
        })
    }
}

/// A typed beliefstate value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl Value {
    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Bool(_) => ValueKind::Boolean,
            Value::Number(_) => ValueKind::Number,
            Value::Text(_) => ValueKind::Text,
        }
    }

    /// Parses raw user input as a value of `kind`.
    pub fn coerce(raw: &str, kind: ValueKind) -> Result<Value, CoercionError> {
        let trimmed = raw.trim();
        let fail = || CoercionError {
            raw: raw.to_string(),
            kind,
        };
        match kind {
            ValueKind::Text => {
                if trimmed.is_empty() {
                    Err(fail())
                } else {
                    Ok(Value::Text(trimmed.to_string()))
                }
            }
            ValueKind::Number => trimmed
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Value::Number)
                .ok_or_else(fail),
            ValueKind::Boolean => match trimmed.to_ascii_lowercase().as_str() {
                "true" | "yes" | "y" => Ok(Value::Bool(true)),
                "false" | "no" | "n" => Ok(Value::Bool(false)),
                _ => Err(fail()),
            },
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Number(n) if n.fract() == 0.0 && n.abs() < 1e15 => write!(f, "{n:.0}"),
            Value::Number(n) => write!(f, "{n}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("value {raw:?} is not a valid {kind}")]
pub struct CoercionError {
    pub raw: String,
    pub kind: ValueKind,
}

/// Variable name to typed value store used to fill templates and resolve
/// logic nodes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Beliefstate(BTreeMap<String, Value>);

impl Beliefstate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0.get(name)
    }

    pub fn set(&mut self, name: impl Into<String>, value: Value) {
        self.0.insert(name.into(), value);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.0.iter()
    }
}

impl<K: Into<String>> FromIterator<(K, Value)> for Beliefstate {
    fn from_iter<I: IntoIterator<Item = (K, Value)>>(iter: I) -> Self {
        Beliefstate(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "==",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }

    fn accepts(self, ord: Ordering) -> bool {
        match self {
            CompareOp::Eq => ord == Ordering::Equal,
            CompareOp::Ne => ord != Ordering::Equal,
            CompareOp::Lt => ord == Ordering::Less,
            CompareOp::Le => ord != Ordering::Greater,
            CompareOp::Gt => ord == Ordering::Greater,
            CompareOp::Ge => ord != Ordering::Less,
        }
    }
}

/// A parsed logic-branch condition.
#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Default,
    Compare {
        variable: String,
        op: CompareOp,
        literal: Value,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse condition {input:?}: {reason}")]
pub struct ConditionError {
    pub input: String,
    pub reason: String,
}

impl Condition {
    pub fn parse(input: &str) -> Result<Condition, ConditionError> {
        let err = |reason: &str| ConditionError {
            input: input.to_string(),
            reason: reason.to_string(),
        };
        let s = input.trim();
        if s == "DEFAULT" {
            return Ok(Condition::Default);
        }
        let name_end = s
            .find(|c: char| !(c.is_alphanumeric() || c == '_'))
            .unwrap_or(s.len());
        let variable = &s[..name_end];
        if variable.is_empty() || variable.starts_with(|c: char| c.is_ascii_digit()) {
            return Err(err("expected a variable name"));
        }
        let rest = s[name_end..].trim_start();
        // two-character operators first so "<=" is not read as "<"
        let (op, rest) = [
            ("==", CompareOp::Eq),
            ("!=", CompareOp::Ne),
            ("<=", CompareOp::Le),
            (">=", CompareOp::Ge),
            ("<", CompareOp::Lt),
            (">", CompareOp::Gt),
        ]
        .iter()
        .find_map(|(sym, op)| rest.strip_prefix(sym).map(|r| (*op, r.trim())))
        .ok_or_else(|| err("expected a comparison operator"))?;
        let literal = parse_literal(rest).ok_or_else(|| err("expected a literal"))?;
        Ok(Condition::Compare {
            variable: variable.to_string(),
            op,
            literal,
        })
    }

    pub fn variable(&self) -> Option<&str> {
        match self {
            Condition::Default => None,
            Condition::Compare { variable, .. } => Some(variable),
        }
    }

    /// Evaluates the condition against a value of its variable. `DEFAULT`
    /// always holds. Mismatched value types compare as unequal and unordered.
    pub fn holds(&self, value: &Value) -> bool {
        match self {
            Condition::Default => true,
            Condition::Compare { op, literal, .. } => match compare(value, literal) {
                Some(ord) => op.accepts(ord),
                None => *op == CompareOp::Ne,
            },
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Default => f.write_str("DEFAULT"),
            Condition::Compare {
                variable,
                op,
                literal,
            } => {
                write!(f, "{variable} {} ", op.symbol())?;
                match literal {
                    Value::Text(t) => write!(f, "'{}'", t.replace('\'', "\\'")),
                    other => write!(f, "{other}"),
                }
            }
        }
    }
}

fn compare(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.partial_cmp(y),
        (Value::Text(x), Value::Text(y)) => Some(x.cmp(y)),
        (Value::Bool(x), Value::Bool(y)) if x == y => Some(Ordering::Equal),
        (Value::Bool(_), Value::Bool(_)) => None,
        _ => None,
    }
}

fn parse_literal(s: &str) -> Option<Value> {
    match s {
        "true" => return Some(Value::Bool(true)),
        "false" => return Some(Value::Bool(false)),
        _ => {}
    }
    let quote = s.chars().next()?;
    if quote == '\'' || quote == '"' {
        let body = s.strip_prefix(quote)?.strip_suffix(quote)?;
        let mut out = String::with_capacity(body.len());
        let mut chars = body.chars();
        while let Some(c) = chars.next() {
            match c {
                '\\' => out.push(chars.next()?),
                c if c == quote => return None,
                c => out.push(c),
            }
        }
        return Some(Value::Text(out));
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Value::Number)
}
