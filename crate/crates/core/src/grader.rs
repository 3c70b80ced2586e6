//! Turns free-form model output into an option choice and grades it.
//!
//! Rules are applied in order:
//!
//! 1. the first standalone letter within the option range, case-insensitive,
//!    bounded by non-alphanumerics (`B`, `(C)`, `Answer: d.`);
//! 2. the unique option whose normalized text occurs in the normalized answer;
//! 3. otherwise no choice.
//!
//! The first letter wins over later ones because instruction-following models
//! lead with the answer.

use serde::{Deserialize, Serialize};

use crate::backend::ResponseStatus;
use crate::model::{letter_index, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ParseMethod {
    Letter,
    OptionText,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub index: Option<usize>,
    pub method: ParseMethod,
    /// The matched substring (the letter, or the normalized option text).
    pub evidence: String,
}

impl ParsedAnswer {
    fn none() -> Self {
        Self { index: None, method: ParseMethod::None, evidence: String::new() }
    }
}

/// Lowercases, replaces punctuation with spaces and collapses whitespace.
pub fn normalize_text(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_lowercase().next().unwrap_or(c) } else { ' ' })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Position and letter of the first standalone option letter, if any.
pub fn first_standalone_letter(text: &str, option_count: usize) -> Option<(usize, char)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(pos, c)) in chars.iter().enumerate() {
        if !c.is_ascii_alphabetic() {
            continue;
        }
        let before_ok = k == 0 || !chars[k - 1].1.is_alphanumeric();
        let after_ok = k + 1 == chars.len() || !chars[k + 1].1.is_alphanumeric();
        if before_ok && after_ok && letter_index(c).is_some_and(|i| i < option_count) {
            return Some((pos, c));
        }
    }
    None
}

pub fn extract_choice(raw_text: &str, options: &[String]) -> ParsedAnswer {
    if let Some((_, c)) = first_standalone_letter(raw_text, options.len()) {
        return ParsedAnswer {
            index: letter_index(c),
            method: ParseMethod::Letter,
            evidence: c.to_string(),
        };
    }
    let haystack = format!(" {} ", normalize_text(raw_text));
    let mut hits = options.iter().enumerate().filter_map(|(i, o)| {
        let needle = normalize_text(o);
        (!needle.is_empty() && haystack.contains(&format!(" {needle} "))).then_some((i, needle))
    });
    match (hits.next(), hits.next()) {
        (Some((i, needle)), None) => ParsedAnswer {
            index: Some(i),
            method: ParseMethod::OptionText,
            evidence: needle,
        },
        _ => ParsedAnswer::none(),
    }
}

/// Correct iff the response is OK and the parsed index equals `gold`.
pub fn grade(p: &ParsedAnswer, gold: usize, status: ResponseStatus, raw_text: &str) -> Verdict {
    let ok = status == ResponseStatus::Ok;
    let unparseable = ok && p.method == ParseMethod::None;
    Verdict {
        correct: ok && p.index == Some(gold),
        parsed: if ok { p.index } else { None },
        raw_text: raw_text.to_string(),
        unparseable,
    }
}
