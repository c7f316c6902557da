//! Text normalization applied to every record at load time.
//!
//! Rules run in a fixed order: URLs are removed, `@mentions` become `@user`,
//! hashtags are dropped (marker and word), emoji are spelled out using the
//! bundled name table, remaining non-ASCII characters are dropped, and
//! whitespace is collapsed. The rule sequence is re-applied until the text
//! stops changing, so the result is always a fixed point.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

const EMOJI_TABLE: &str = include_str!("../../data/emoji_names.tsv");

/// Upper bound on rule passes; real input settles after one or two.
const MAX_PASSES: usize = 8;

struct Rules {
    url: Regex,
    mention: Regex,
    hashtag: Regex,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        url: Regex::new(r"(?i)(?:\b(?:https?|ftp)://|\bwww\.|\bt\.co/)\S*").unwrap(),
        mention: Regex::new(r"(^|[^\w@])@\w+").unwrap(),
        hashtag: Regex::new(r"(^|[^\w#&])#\w+").unwrap(),
    })
}

/// Codepoint to `:snake_case_name:` map parsed from the bundled table.
pub fn emoji_table() -> &'static HashMap<char, &'static str> {
    static TABLE: OnceLock<HashMap<char, &'static str>> = OnceLock::new();
    TABLE.get_or_init(|| {
        EMOJI_TABLE
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .filter_map(|l| {
                let (cp, name) = l.split_once('\t')?;
                let c = char::from_u32(u32::from_str_radix(cp.trim(), 16).ok()?)?;
                Some((c, name.trim()))
            })
            .collect()
    })
}

pub fn emoji_name(c: char) -> Option<&'static str> {
    emoji_table().get(&c).copied()
}

fn remove_urls(text: &str) -> String {
    rules().url.replace_all(text, " ").into_owned()
}

fn replace_mentions(text: &str) -> String {
    rules().mention.replace_all(text, "${1}@user").into_owned()
}

fn remove_hashtags(text: &str) -> String {
    rules().hashtag.replace_all(text, "${1} ").into_owned()
}

fn spell_out_emoji(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match emoji_name(c) {
            Some(name) => {
                out.push(' ');
                out.push_str(name);
                out.push(' ');
            }
            None => out.push(c),
        }
    }
    out
}

fn drop_non_ascii(text: &str) -> String {
    text.chars().filter(char::is_ascii).collect()
}

fn collapse_whitespace(text: &str) -> String {
    text.split(|c: char| c.is_ascii_whitespace() || c.is_ascii_control())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn single_pass(raw: &str) -> String {
    let text = remove_urls(raw);
    let text = replace_mentions(&text);
    let text = remove_hashtags(&text);
    let text = spell_out_emoji(&text);
    let text = drop_non_ascii(&text);
    collapse_whitespace(&text)
}

/// Normalizes raw social-media text. Output is ASCII-only and idempotent.
pub fn preprocess_text(raw: &str) -> String {
    let mut current = single_pass(raw);
    for _ in 1..MAX_PASSES {
        let next = single_pass(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_is_fixed_point() {
        assert_eq!(preprocess_text(""), "");
    }

    #[test]
    fn urls_mentions_hashtags() {
        assert_eq!(
            preprocess_text("Check https://t.co/abc @bob #BLM now"),
            "Check @user now"
        );
    }

    #[test]
    fn emoji_from_table() {
        assert_eq!(emoji_name('😀'), Some(":grinning_face:"));
        assert_eq!(preprocess_text("stay safe 😀"), "stay safe :grinning_face:");
    }

    #[test]
    fn table_names_are_ascii_snake_case() {
        assert!(emoji_table().len() > 1000);
        for name in emoji_table().values() {
            assert!(name.starts_with(':') && name.ends_with(':'), "{name}");
            assert!(name.is_ascii());
        }
    }

    #[test]
    fn email_is_not_a_mention() {
        assert_eq!(preprocess_text("mail bob@example.com"), "mail bob@example.com");
    }

    #[test]
    fn bare_t_co_link() {
        assert_eq!(preprocess_text("see t.co/xyz123 today"), "see today");
    }

    proptest! {
        #[test]
        fn ascii_only_and_idempotent(s in any::<String>()) {
            let once = preprocess_text(&s);
            prop_assert!(once.is_ascii());
            prop_assert_eq!(preprocess_text(&once), once);
        }

        #[test]
        fn idempotent_on_tweetlike_text(s in r"(@[a-zé€]{0,4}|#[a-z]{0,3}|https?://[a-z.]{0,4}|www\.x|t\.co/|[a-z]{1,3}|😀|é|€|\u{a0}| |:|/|\.){0,12}") {
            let once = preprocess_text(&s);
            prop_assert!(once.is_ascii());
            prop_assert_eq!(preprocess_text(&once), once);
        }
    }
}
