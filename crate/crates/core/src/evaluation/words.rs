//! Feedback length in words.
//!
//! A word is a maximal run of characters that are not separators. The
//! separator table is fixed so counts are reproducible:
//!
//! | class | general categories | examples |
//! |-------|--------------------|----------|
//! | whitespace | `White_Space` property | space, tab, newline, U+00A0 |
//! | punctuation | Pc Pd Ps Pe Pi Pf Po | `, . ! ? ( ) [ ] { } - _ " ' \` |
//! | symbols | Sm Sc Sk So | `+ = < > ^ $ \| ~ ∑ ∫ ≤ →` |
//!
//! Everything else (letters, marks, numbers, control and format characters)
//! is part of a word, so `x^2` is two words and `naïve` one.

use unicode_general_category::{get_general_category, GeneralCategory as G};

pub fn is_separator(c: char) -> bool {
    c.is_whitespace()
        || matches!(
            get_general_category(c),
            G::ConnectorPunctuation
                | G::DashPunctuation
                | G::OpenPunctuation
                | G::ClosePunctuation
                | G::InitialPunctuation
                | G::FinalPunctuation
                | G::OtherPunctuation
                | G::MathSymbol
                | G::CurrencySymbol
                | G::ModifierSymbol
                | G::OtherSymbol
        )
}

pub fn word_count(text: &str) -> usize {
    text.split(is_separator).filter(|w| !w.is_empty()).count()
}
