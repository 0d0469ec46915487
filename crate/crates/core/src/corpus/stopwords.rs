//! The pinned stopword list used by the content-overlap rule and the
//! cluster top-word extraction.

use std::collections::HashSet;
use std::sync::OnceLock;

pub const STOPWORDS_VERSION: u32 = 1;

static LIST: &str = include_str!("stopwords.txt");
static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();

pub fn stopwords() -> &'static HashSet<&'static str> {
    SET.get_or_init(|| {
        LIST.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn is_stopword(word: &str) -> bool {
    stopwords().contains(word)
}
