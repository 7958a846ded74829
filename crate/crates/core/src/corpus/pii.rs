use std::sync::LazyLock;

use regex::{Captures, Regex};

use super::record::TraceRecord;

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?i)\b(?:https?://|www\.)[^\s"'<>]+"#).expect("url pattern"));
static QUOTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#""([^"\n]*)"|'([^'\n]*)'"#).expect("string pattern"));
static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\p{L}[\p{L}'\-.]*$").expect("word pattern"));

/// A literal made of one or two plain words (letters only).
fn is_short_phrase(content: &str) -> bool {
    let words: Vec<&str> = content.split_whitespace().collect();
    (1..=2).contains(&words.len()) && words.iter().all(|w| WORD.is_match(w))
}

/// Replaces URLs with `<URL>` and one- or two-word string literals with
/// `<UNK>`, keeping the quotes.
pub fn scrub_pii(text: &str) -> String {
    let text = QUOTED.replace_all(text, |caps: &Captures| {
        let (quote, content) = match (caps.get(1), caps.get(2)) {
            (Some(c), _) => ('"', c.as_str()),
            (_, Some(c)) => ('\'', c.as_str()),
            _ => unreachable!("one alternative always matches"),
        };
        if is_short_phrase(content) {
            format!("{quote}<UNK>{quote}")
        } else {
            caps[0].to_string()
        }
    });
    URL.replace_all(&text, "<URL>").into_owned()
}

/// Titles of name-drawing assignments carry PII.
pub fn title_mentions_name(title: &str) -> bool {
    title.to_lowercase().contains("name")
}

/// Scrubs every program of a record, or drops it for a name-bearing title.
pub fn scrub_record(record: &TraceRecord) -> Option<TraceRecord> {
    if title_mentions_name(&record.title) {
        return None;
    }
    let mut out = record.clone();
    for event in &mut out.events {
        event.code = scrub_pii(&event.code);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replaces_urls_inside_longer_strings() {
        assert_eq!(scrub_pii(r#"write "see https://example.com/flag""#), r#"write "see <URL>""#);
    }

    #[test]
    fn replaces_short_strings() {
        assert_eq!(scrub_pii(r#"write "Springfield""#), r#"write "<UNK>""#);
        assert_eq!(scrub_pii("label 'New York', 3"), "label '<UNK>', 3");
        assert_eq!(scrub_pii(r#"write "Times New Roman""#), r#"write "Times New Roman""#);
        assert_eq!(scrub_pii(r#"write "12""#), r#"write "12""#);
    }

    #[test]
    fn urls_outside_strings() {
        assert_eq!(scrub_pii("# from www.site.org/x"), "# from <URL>");
    }

    #[test]
    fn name_titles_are_dropped() {
        assert!(title_mentions_name("myname"));
        assert!(title_mentions_name("NameArt"));
        assert!(!title_mentions_name("snowman"));
        let r = TraceRecord::new("s", "myname", vec![]);
        assert!(scrub_record(&r).is_none());
    }
}
