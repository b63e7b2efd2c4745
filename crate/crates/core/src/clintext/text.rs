use unicode_normalization::UnicodeNormalization;

/// NFKC, lowercase, collapse whitespace runs to a single space, trim.
///
/// Lowercasing can leave a string that is no longer in NFKC form, so the
/// steps are repeated until the output is stable; this makes the function
/// idempotent.
pub fn normalize_text(text: &str) -> String {
    let mut current = normalize_once(text);
    for _ in 0..4 {
        let next = normalize_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn normalize_once(text: &str) -> String {
    let folded: String = text.nfkc().collect::<String>().to_lowercase();
    let folded: String = folded.nfkc().collect();
    let mut out = String::with_capacity(folded.len());
    for word in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// A token with its character offsets `[start, end)` in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Word,
    Number,
}

fn starts_word(c: char) -> bool {
    c.is_alphabetic() || c == '°' || c == '_'
}

/// Tokenize normalized text.
///
/// Words start with a letter and run over alphanumerics; numbers run over
/// digits and keep an inner `.` or `,` that sits between two digits
/// (`2.5`, `1,200`); any other non-space character is its own token.
pub fn tokenize_with_spans(text: &str) -> Vec<TokenSpan> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let class = if starts_word(c) {
            Some(Class::Word)
        } else if c.is_numeric() {
            Some(Class::Number)
        } else {
            None
        };
        i += 1;
        match class {
            Some(Class::Word) => {
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
            }
            Some(Class::Number) => loop {
                if i < chars.len() && chars[i].is_numeric() {
                    i += 1;
                } else if i + 1 < chars.len()
                    && (chars[i] == '.' || chars[i] == ',')
                    && chars[i + 1].is_numeric()
                {
                    i += 2;
                } else {
                    break;
                }
            },
            None => {}
        }
        out.push(TokenSpan {
            text: chars[start..i].iter().collect(),
            start,
            end: i,
        });
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_spans(text)
        .into_iter()
        .map(|t| t.text)
        .collect()
}

/// Token count of raw text under normalization + tokenization. This is the
/// length measure used by corpus statistics and stratified reports.
pub fn token_count(text: &str) -> usize {
    tokenize_with_spans(&normalize_text(text)).len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("Lesion of  18 MM"), "lesion of 18 mm");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("  Fever\t\nCough "), "fever cough");
        // fullwidth digits and ligatures fold under NFKC
        assert_eq!(normalize_text("ﬁbrosis １８"), "fibrosis 18");
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("fever, cough"), ["fever", ",", "cough"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("2.5 cm"), ["2.5", "cm"]);
        assert_eq!(tokenize("ends at 18."), ["ends", "at", "18", "."]);
        assert_eq!(tokenize("18mm x-ray"), ["18", "mm", "x", "-", "ray"]);
        assert_eq!(tokenize("38.5°c 95%"), ["38.5", "°c", "95", "%"]);
        assert_eq!(tokenize("hba1c 1,200"), ["hba1c", "1,200"]);
    }

    #[test]
    fn spans_index_characters() {
        let spans = tokenize_with_spans("é of 2 mm");
        assert_eq!(spans[0].start, 0);
        assert_eq!(spans[0].end, 1);
        assert_eq!(spans[3].start, 7);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }

        #[test]
        fn normalize_is_idempotent_on_any_chars(s in any::<String>()) {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }

        #[test]
        fn tokens_never_contain_whitespace(s in "[a-z0-9 .,;%°-]{0,40}") {
            for t in tokenize(&s) {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.chars().any(char::is_whitespace));
            }
        }
    }
}
