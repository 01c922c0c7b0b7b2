//! Small char-level helpers shared across modules.
//!
//! All span arithmetic in this crate uses Unicode scalar-value indices
//! (char indices), end-exclusive — never byte offsets.

use unicode_general_category::{get_general_category, GeneralCategory};

/// Number of Unicode scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Substring of `s` covering char indices `[start, end)`.
pub fn char_slice(s: &str, start: usize, end: usize) -> String {
    s.chars().skip(start).take(end.saturating_sub(start)).collect()
}

/// Punctuation predicate used by both the tokenizer and the scorer:
/// ASCII punctuation (the classic `string.punctuation` set) plus every
/// char whose Unicode general category is one of P*.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            get_general_category(c),
            GeneralCategory::ConnectorPunctuation
                | GeneralCategory::DashPunctuation
                | GeneralCategory::OpenPunctuation
                | GeneralCategory::ClosePunctuation
                | GeneralCategory::InitialPunctuation
                | GeneralCategory::FinalPunctuation
                | GeneralCategory::OtherPunctuation
        )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_len_counts_scalars_not_bytes() {
        assert_eq!(char_len("héllo"), 5);
        assert_eq!(char_len(""), 0);
    }

    #[test]
    fn char_slice_is_end_exclusive() {
        assert_eq!(char_slice("Hello world", 0, 5), "Hello");
        assert_eq!(char_slice("héllo", 1, 3), "él");
        assert_eq!(char_slice("abc", 2, 2), "");
    }

    #[test]
    fn punctuation_covers_ascii_and_unicode_classes() {
        for c in ['.', ',', '!', '$', '~', '«', '»', '—', '…'] {
            assert!(is_punctuation(c), "{c:?} should be punctuation");
        }
        for c in ['a', 'Z', '7', ' ', 'é'] {
            assert!(!is_punctuation(c), "{c:?} should not be punctuation");
        }
    }
}
