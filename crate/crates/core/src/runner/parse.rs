//! Turning raw model text into a switch point.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::lottery::SwitchPoint;

/// Lenient mode only looks inside single lines up to this many characters.
pub const LENIENT_MAX_CHARS: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    /// Only an optionally whitespace-padded `1`..`10`.
    #[default]
    Strict,
    /// Also a single integer embedded in one short line of prose.
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnwantedReason {
    NonNumeric,
    OutOfRange,
    MultiAnswer,
    /// The backend never produced text.
    Transport,
}

impl fmt::Display for UnwantedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnwantedReason::NonNumeric => "non-numeric",
            UnwantedReason::OutOfRange => "out-of-range",
            UnwantedReason::MultiAnswer => "multi-answer",
            UnwantedReason::Transport => "transport",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedAnswer {
    Switch(SwitchPoint),
    Unwanted(UnwantedReason),
}

impl ParsedAnswer {
    pub fn switch(&self) -> Option<SwitchPoint> {
        match self {
            ParsedAnswer::Switch(s) => Some(*s),
            ParsedAnswer::Unwanted(_) => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, ParsedAnswer::Switch(_))
    }
}

/// Maximal runs of ASCII digits.
fn digit_runs(s: &str) -> Vec<&str> {
    s.split(|c: char| !c.is_ascii_digit())
        .filter(|t| !t.is_empty())
        .collect()
}

fn range_check(digits: &str) -> ParsedAnswer {
    match digits.parse::<i64>() {
        Ok(v) => match SwitchPoint::new(v) {
            Ok(s) => ParsedAnswer::Switch(s),
            Err(_) => ParsedAnswer::Unwanted(UnwantedReason::OutOfRange),
        },
        // more digits than fit in i64
        Err(_) => ParsedAnswer::Unwanted(UnwantedReason::OutOfRange),
    }
}

/// Total: every input maps to a switch point or an unwanted reason.
pub fn parse_response(raw: &str, mode: ParseMode) -> ParsedAnswer {
    let t = raw.trim();
    let all_digits = !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
    if all_digits {
        if t.len() > 1 && t.starts_with('0') {
            return ParsedAnswer::Unwanted(UnwantedReason::NonNumeric);
        }
        return range_check(t);
    }
    if let Some(rest) = t.strip_prefix('-') {
        if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
            return ParsedAnswer::Unwanted(UnwantedReason::OutOfRange);
        }
    }
    let runs = digit_runs(t);
    if runs.len() >= 2 {
        return ParsedAnswer::Unwanted(UnwantedReason::MultiAnswer);
    }
    if mode == ParseMode::Lenient
        && runs.len() == 1
        && !t.contains('\n')
        && t.chars().count() <= LENIENT_MAX_CHARS
    {
        return range_check(runs[0]);
    }
    ParsedAnswer::Unwanted(UnwantedReason::NonNumeric)
}
