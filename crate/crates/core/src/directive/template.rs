//! Placeholder grammar for directive templates.
//!
//! A placeholder is a single-brace group `{name}` whose content exactly equals
//! a known name. Every other brace group (`\paragraph{0/5 marks}`,
//! `\mathbb{R}`, `{1, 2, 3}`) is literal text and survives substitution
//! byte-for-byte. There is no escaping mechanism.

use std::collections::{BTreeMap, HashSet};
use std::ops::Range;

/// Brace groups `{...}` with no nested braces, as byte ranges of the content.
fn brace_groups(template: &str) -> impl Iterator<Item = Range<usize>> + '_ {
    let bytes = template.as_bytes();
    let mut pos = 0;
    std::iter::from_fn(move || {
        while pos < bytes.len() {
            if bytes[pos] != b'{' {
                pos += 1;
                continue;
            }
            let start = pos + 1;
            let close = bytes[start..]
                .iter()
                .position(|&b| b == b'{' || b == b'}')
                .map(|off| start + off);
            match close {
                Some(end) if bytes[end] == b'}' => {
                    pos = end + 1;
                    return Some(start..end);
                }
                // Another opening brace first: restart the scan from it.
                Some(end) => pos = end,
                None => pos = bytes.len(),
            }
        }
        None
    })
}

/// Placeholders of `template` that name something in `known_names`, in order
/// of first occurrence, without duplicates.
pub fn extract_placeholders<S>(template: &str, known_names: &HashSet<S>) -> Vec<String>
where
    S: std::hash::Hash + Eq + std::borrow::Borrow<str>,
{
    let mut seen = HashSet::new();
    brace_groups(template)
        .map(|range| &template[range])
        .filter(|content| known_names.contains(*content))
        .filter(|content| seen.insert(*content))
        .map(str::to_string)
        .collect()
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// True when the brace at byte `open` is an argument of LaTeX markup: it
/// directly follows a control word (`\textbf{`), a sub/superscript marker
/// or another group (`\frac{a}{b}`).
fn is_latex_argument(template: &str, open: usize) -> bool {
    let before = &template[..open];
    match before.chars().next_back() {
        None => false,
        Some('^' | '_' | '}' | ']') => true,
        Some(c) if c.is_ascii_alphabetic() => {
            let word_start = before
                .char_indices()
                .rev()
                .take_while(|(_, c)| c.is_ascii_alphabetic())
                .last()
                .map(|(i, _)| i)
                .unwrap_or(open);
            before[..word_start].ends_with('\\')
        }
        Some(_) => false,
    }
}

/// Brace groups that look like references to undeclared inputs: identifier
/// content that is not an argument of LaTeX markup. Used to discover
/// external inputs such as `{human_markscheme}` that a config references
/// without declaring a `null` directive for them.
pub fn candidate_placeholders(template: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    brace_groups(template)
        .filter(|range| is_identifier(&template[range.clone()]))
        .filter(|range| !is_latex_argument(template, range.start - 1))
        .map(|range| &template[range])
        .filter(|content| seen.insert(*content))
        .map(str::to_string)
        .collect()
}

/// Replace each placeholder whose name is a key of `values` with its value.
/// Substituted text is never rescanned, and unknown groups are copied verbatim.
pub fn substitute<V: AsRef<str>>(template: &str, values: &BTreeMap<String, V>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut copied = 0;
    for range in brace_groups(template) {
        if let Some(value) = values.get(&template[range.clone()]) {
            out.push_str(&template[copied..range.start - 1]);
            out.push_str(value.as_ref());
            copied = range.end + 1;
        }
    }
    out.push_str(&template[copied..]);
    out
}
