use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A generated token and where it sits in the sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedToken {
    pub position: usize,
    pub text: String,
}

/// Generated keyword tokens kept after punctuation filtering.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSpan {
    pub token_positions: Vec<usize>,
    pub decoded_words: Vec<String>,
}

static UNICODE_PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[\p{P}\p{Z}]$").unwrap());

/// True when the token text is only whitespace, ASCII punctuation or
/// Unicode punctuation/separators.
pub fn is_separator_token(text: &str) -> bool {
    text.chars().all(|c| {
        c.is_whitespace() || c.is_ascii_punctuation() || {
            let mut buf = [0u8; 4];
            UNICODE_PUNCT.is_match(c.encode_utf8(&mut buf))
        }
    })
}

/// Drop punctuation-only tokens and keep the rest, in generation order.
pub fn filter_keyword_tokens(generated: &[DecodedToken]) -> Result<KeywordSpan> {
    let mut span = KeywordSpan::default();
    for tok in generated {
        if is_separator_token(&tok.text) {
            continue;
        }
        if span.token_positions.last().is_some_and(|&p| p >= tok.position) {
            return Err(Error::Contract(format!(
                "token positions not strictly increasing at {}",
                tok.position
            )));
        }
        span.token_positions.push(tok.position);
        span.decoded_words.push(tok.text.trim().to_string());
    }
    if span.token_positions.is_empty() {
        return Err(Error::EmptyKeywords);
    }
    Ok(span)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<DecodedToken> {
        words
            .iter()
            .enumerate()
            .map(|(i, w)| DecodedToken {
                position: 100 + i,
                text: w.to_string(),
            })
            .collect()
    }

    #[test]
    fn drops_punctuation_keeps_subwords() {
        let span = filter_keyword_tokens(&toks(&["blue", ",", " wheels", ",", " zig", "zag"])).unwrap();
        assert_eq!(span.token_positions, vec![100, 102, 104, 105]);
        assert_eq!(span.decoded_words, vec!["blue", "wheels", "zig", "zag"]);
    }

    #[test]
    fn all_punctuation_is_an_error() {
        assert!(matches!(
            filter_keyword_tokens(&toks(&[",", ".", ":"])),
            Err(Error::EmptyKeywords)
        ));
        assert!(matches!(filter_keyword_tokens(&[]), Err(Error::EmptyKeywords)));
    }

    #[test]
    fn unicode_punctuation_and_separators() {
        for t in ["—", "«", "。", " ", "\u{00a0}", "...", "\"", "-", "()"] {
            assert!(is_separator_token(t), "{t:?}");
        }
        for t in ["é", "a,", "7", "\u{fffd}"] {
            assert!(!is_separator_token(t), "{t:?}");
        }
    }
}
