use std::sync::LazyLock;

use regex::Regex;

/// Lowercase, drop punctuation, collapse whitespace.
pub fn normalize(text: &str) -> String {
    text.chars()
        .filter(|c| !c.is_ascii_punctuation() && !is_unicode_punct(*c))
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_unicode_punct(c: char) -> bool {
    static P: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\p{P}$").unwrap());
    let mut buf = [0u8; 4];
    P.is_match(c.encode_utf8(&mut buf))
}

/// `needle` occurs in `haystack` as whole words after normalization.
pub fn contains_phrase(haystack: &str, needle: &str) -> bool {
    let needle = normalize(needle);
    !needle.is_empty() && format!(" {} ", normalize(haystack)).contains(&format!(" {needle} "))
}

/// Caption mentions every concept name.
pub fn caption_hit(caption: &str, names: &[String]) -> bool {
    names.iter().all(|n| contains_phrase(caption, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChoiceMatch {
    Correct,
    Wrong,
    /// The reply names several options; scored as wrong and flagged.
    Ambiguous,
}

static LEADING_LETTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*[\(\[]?([A-Za-z])\s*(?:[\)\]\.:,]|$)").unwrap());

fn letter_index(s: &str) -> Option<usize> {
    let c = s.chars().next()?.to_ascii_uppercase();
    c.is_ascii_uppercase().then(|| (c as u8 - b'A') as usize)
}

/// Score a reply against a gold answer. With `choices`, the gold may be a
/// letter or an option text and the reply may give either; without, the
/// reply must contain the gold text.
pub fn match_answer(reply: &str, gold: &str, choices: &[String]) -> ChoiceMatch {
    if choices.is_empty() {
        return if contains_phrase(reply, gold) {
            ChoiceMatch::Correct
        } else {
            ChoiceMatch::Wrong
        };
    }
    let gold_trim = gold.trim().trim_end_matches(['.', ')']);
    let gold_idx = if gold_trim.len() == 1 {
        letter_index(gold_trim).filter(|&i| i < choices.len())
    } else {
        choices.iter().position(|c| normalize(c) == normalize(gold))
    };
    let Some(gold_idx) = gold_idx else {
        return ChoiceMatch::Wrong;
    };
    let predicted = match LEADING_LETTER.captures(reply) {
        Some(c) => letter_index(&c[1]).filter(|&i| i < choices.len()),
        None => None,
    };
    let predicted = match predicted {
        Some(i) => i,
        None => {
            let named: Vec<usize> = (0..choices.len())
                .filter(|&i| contains_phrase(reply, &choices[i]))
                .collect();
            match named.as_slice() {
                [i] => *i,
                [] => return ChoiceMatch::Wrong,
                _ => return ChoiceMatch::Ambiguous,
            }
        }
    };
    if predicted == gold_idx {
        ChoiceMatch::Correct
    } else {
        ChoiceMatch::Wrong
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn choices() -> Vec<String> {
        vec!["The red mug".into(), "The blue pen".into()]
    }

    #[test]
    fn letters_and_texts() {
        assert_eq!(match_answer("A. The red mug", "A", &choices()), ChoiceMatch::Correct);
        assert_eq!(match_answer("A", "B", &choices()), ChoiceMatch::Wrong);
        assert_eq!(match_answer("(b)", "B", &choices()), ChoiceMatch::Correct);
        assert_eq!(match_answer("It is the blue pen.", "B", &choices()), ChoiceMatch::Correct);
        assert_eq!(match_answer("It is the blue pen.", "the blue pen", &choices()), ChoiceMatch::Correct);
        assert_eq!(
            match_answer("the red mug or the blue pen", "A", &choices()),
            ChoiceMatch::Ambiguous
        );
        assert_eq!(match_answer("no idea", "A", &choices()), ChoiceMatch::Wrong);
        assert_eq!(match_answer("Yes, it is.", "yes", &[]), ChoiceMatch::Correct);
        assert_eq!(match_answer("yesterday", "yes", &[]), ChoiceMatch::Wrong);
    }

    #[test]
    fn caption_rules() {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(caption_hit("a photo of my-mug on a desk", &names(&["my-mug"])));
        assert!(caption_hit("My-Mug!", &names(&["my-mug"])));
        assert!(!caption_hit("a photo of A only", &names(&["A", "B"])));
        assert!(!caption_hit("a mugshot", &names(&["mug"])));
    }
}
