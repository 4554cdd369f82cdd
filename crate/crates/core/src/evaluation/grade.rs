//! Extracting a 0–5 grade from a grading model's reply.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no grade between 0 and 5 found in {excerpt:?}")]
pub struct UnparsableGrade {
    pub excerpt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParsePass {
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedGrade {
    pub grade: i64,
    pub pass: ParsePass,
}

/// Strict pass: the trimmed reply is a single digit 0–5. When `lenient` is
/// set, fall back to the first standalone digit 0–5 anywhere in the text.
/// A standalone digit has no letter or digit on either side, no minus sign in
/// front, and is not part of a decimal like `3.5`.
pub fn parse_grade(text: &str, lenient: bool) -> Result<ParsedGrade, UnparsableGrade> {
    let trimmed = text.trim();
    if let [digit @ b'0'..=b'5'] = trimmed.as_bytes() {
        return Ok(ParsedGrade {
            grade: i64::from(digit - b'0'),
            pass: ParsePass::Strict,
        });
    }
    if lenient {
        if let Some(grade) = first_standalone_grade(text) {
            return Ok(ParsedGrade {
                grade,
                pass: ParsePass::Lenient,
            });
        }
    }
    Err(UnparsableGrade {
        excerpt: text.chars().take(80).collect(),
    })
}

fn first_standalone_grade(text: &str) -> Option<i64> {
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        let before = start.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i).copied();
        let fraction_before = before == Some('.') && start >= 2 && chars[start - 2].is_ascii_digit();
        let fraction_after = after == Some('.') && chars.get(i + 1).is_some_and(|c| c.is_ascii_digit());
        let glued = before.is_some_and(char::is_alphanumeric) || after.is_some_and(char::is_alphanumeric);
        if i - start == 1 && !fraction_before && !fraction_after && !glued && before != Some('-') {
            let grade = chars[start].to_digit(10).unwrap() as i64;
            if grade <= 5 {
                return Some(grade);
            }
        }
    }
    None
}
