//! Lenient parsing of model responses against an item's option set.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;

use crate::dataset::{Item, TaskType};

use super::{ClientError, ParsePath, ParsedAnswer};

/// Resolve a raw response to one of the item's options.
///
/// Rules, tried in order:
/// 1. the whole response is a single option token (`Exact`),
/// 2. the response opens with an option token, e.g. "B. Because ..."
///    (`LeadingToken`),
/// 3. a standalone option token anywhere in the body, else a full option
///    text match (`PatternFallback`).
pub fn parse_choice(raw: &str, item: &Item) -> Result<ParsedAnswer, ClientError> {
    let trimmed = raw.trim();

    if let Some(token) = match_token(trimmed, item) {
        return Ok(ParsedAnswer { token, raw: raw.to_string(), parse_path: ParsePath::Exact });
    }

    if let Some(lead) = leading_word(trimmed) {
        if let Some(token) = match_token(lead, item) {
            return Ok(ParsedAnswer {
                token,
                raw: raw.to_string(),
                parse_path: ParsePath::LeadingToken,
            });
        }
    }

    if let Some(token) = first_standalone_token(trimmed, item) {
        return Ok(ParsedAnswer {
            token,
            raw: raw.to_string(),
            parse_path: ParsePath::PatternFallback,
        });
    }

    if let Some(token) = full_text_match(trimmed, item) {
        return Ok(ParsedAnswer {
            token,
            raw: raw.to_string(),
            parse_path: ParsePath::PatternFallback,
        });
    }

    Err(ClientError::Unparseable(raw.to_string()))
}

/// A candidate equals an option token after stripping wrapping punctuation.
/// Letters must be uppercase in the raw text; Yes/No match case-insensitively.
fn match_token(candidate: &str, item: &Item) -> Option<String> {
    let stripped = candidate.trim_matches(|c: char| "().,:;*\"'`".contains(c));
    for choice in &item.options {
        let matched = match item.task_type {
            TaskType::MultipleChoice => stripped == choice.token,
            TaskType::YesNo => stripped.eq_ignore_ascii_case(&choice.token),
        };
        if matched {
            return Some(choice.token.clone());
        }
    }
    None
}

fn leading_word(text: &str) -> Option<&str> {
    text.split(|c: char| c.is_whitespace()).next().filter(|w| !w.is_empty())
}

static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z]+").unwrap());

/// Earliest standalone occurrence of any option token in the text.
fn first_standalone_token(text: &str, item: &Item) -> Option<String> {
    for m in WORD.find_iter(text) {
        for choice in &item.options {
            let hit = match item.task_type {
                TaskType::MultipleChoice => m.as_str() == choice.token,
                TaskType::YesNo => m.as_str().eq_ignore_ascii_case(&choice.token),
            };
            if hit {
                return Some(choice.token.clone());
            }
        }
    }
    None
}

/// Earliest (then longest) case-insensitive occurrence of a full option
/// text.
fn full_text_match(text: &str, item: &Item) -> Option<String> {
    let lower = text.to_lowercase();
    let mut best: Option<(usize, usize, String)> = None;
    for choice in &item.options {
        let needle = choice.text.to_lowercase();
        if needle.is_empty() {
            continue;
        }
        if let Some(pos) = lower.find(&needle) {
            let better = match &best {
                None => true,
                Some((bpos, blen, _)) => pos < *bpos || (pos == *bpos && needle.len() > *blen),
            };
            if better {
                best = Some((pos, needle.len(), choice.token.clone()));
            }
        }
    }
    best.map(|(_, _, token)| token)
}

static CONFIDENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([A-Za-z]+)\s*[:=]\s*(\d+(?:\.\d+)?)\s*%?").unwrap());

/// Parse per-option confidence scores such as `A:85 B:10 C:5`.
///
/// Every option must receive a score. A stated sum inside `[95,105]` is
/// renormalized to exactly 100; anything outside is an error.
pub fn parse_confidences(raw: &str, item: &Item) -> Result<BTreeMap<String, f64>, ClientError> {
    let mut scores: BTreeMap<String, f64> = BTreeMap::new();
    for cap in CONFIDENCE.captures_iter(raw) {
        let label = &cap[1];
        let value: f64 = cap[2].parse().map_err(|_| ClientError::Unparseable(raw.into()))?;
        for choice in &item.options {
            let hit = match item.task_type {
                TaskType::MultipleChoice => label == choice.token,
                TaskType::YesNo => label.eq_ignore_ascii_case(&choice.token),
            };
            // First mention wins.
            if hit {
                scores.entry(choice.token.clone()).or_insert(value);
            }
        }
    }
    if scores.len() != item.options.len() {
        return Err(ClientError::Unparseable(raw.to_string()));
    }
    let sum: f64 = scores.values().sum();
    if !(95.0..=105.0).contains(&sum) {
        return Err(ClientError::SumOutOfRange(sum));
    }
    for v in scores.values_mut() {
        *v *= 100.0 / sum;
    }
    Ok(scores)
}
