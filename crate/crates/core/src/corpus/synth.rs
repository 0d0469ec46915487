//! Synthetic bug-report corpus with known topics, used by the
//! end-to-end tests. Every report opens with its product area, the way
//! tracker titles carry a component tag, followed by one issue
//! template applied to one keyword from that area's pool; duplicates
//! share topic, template and keyword and differ only in extra keyword
//! mentions.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::RawReport;
use crate::error::{Error, Result};

/// Feature names seeding each topic's keyword pool.
const BASES: &[&str] = &[
    "camera", "chat", "story", "map", "audio", "profile", "gallery", "payment", "search",
    "calendar",
];

/// Single-token variants of a base name; concatenation keeps them
/// distinct from the template words below.
const SUFFIXES: &[&str] = &[
    "", "s", "view", "icon", "roll", "mode", "list", "panel", "sync", "tab", "feed", "grid",
];

/// Issue templates. `{}` is the keyword slot; connective words are all
/// stopwords, the rest are unique to their template.
const TEMPLATES: &[&[&str]] = &[
    &["{}", "crashes", "when", "opening"],
    &["cannot", "open", "{}", "after", "update"],
    &["{}", "frozen", "on", "startup"],
    &["no", "sound", "during", "{}", "playback"],
    &["{}", "shows", "blank", "white", "screen"],
    &["error", "while", "saving", "{}", "draft"],
    &["{}", "button", "missing", "from", "toolbar"],
    &["{}", "very", "slow", "to", "refresh"],
];

/// Generated corpus plus the ground truth the tests measure against.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub reports: Vec<RawReport>,
    /// Topic labels in generation order.
    pub labels: Vec<String>,
    /// Topic label -> keyword tokens of that topic.
    pub keywords_by_label: HashMap<String, Vec<String>>,
}

impl SyntheticCorpus {
    pub fn is_topic_keyword(&self, label: &str, word: &str) -> bool {
        self.keywords_by_label
            .get(label)
            .is_some_and(|kws| kws.iter().any(|k| k == word))
    }
}

pub fn generate_synthetic(
    num_topics: usize,
    reports_per_topic: usize,
    dup_rate: f64,
    vocab_per_topic: usize,
    seed: u64,
) -> Result<SyntheticCorpus> {
    if num_topics < 2 {
        return Err(Error::Config(format!(
            "need at least 2 topics, got {num_topics}"
        )));
    }
    if !(0.0 < dup_rate && dup_rate < 1.0) {
        return Err(Error::Config(format!(
            "duplicate rate must be in (0, 1), got {dup_rate}"
        )));
    }
    if vocab_per_topic == 0 {
        return Err(Error::Config("vocab_per_topic must be positive".into()));
    }
    let n_dup = (reports_per_topic as f64 * dup_rate).round() as usize;
    let n_base = reports_per_topic.checked_sub(n_dup).filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "duplicate rate {dup_rate} leaves no base reports at {reports_per_topic} per topic"
        ))
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(num_topics * reports_per_topic);
    let mut labels = Vec::with_capacity(num_topics);
    let mut keywords_by_label = HashMap::new();

    for t in 0..num_topics {
        let base_name = BASES
            .get(t)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("feature{t}"));
        let keywords: Vec<String> = (0..vocab_per_topic)
            .map(|i| match SUFFIXES.get(i) {
                Some(suffix) => format!("{base_name}{suffix}"),
                None => format!("{base_name}{i}"),
            })
            .collect();

        // seed drafts: (template, keyword, extras); a duplicate clones a
        // draft, keeps its extras, and may append one fresh mention.
        // Bases walk a shuffled grid of template-keyword combinations,
        // so two bases collide on a draft only when bases outnumber the
        // grid; below that bound every non-duplicate pair differs in
        // template or keyword.
        let mut grid: Vec<(usize, usize)> = (0..TEMPLATES.len())
            .flat_map(|t| (0..keywords.len()).map(move |k| (t, k)))
            .collect();
        grid.shuffle(&mut rng);
        let draw_extra = |kw_idx: usize, extras: &mut Vec<usize>, rng: &mut ChaCha8Rng| {
            for _ in 0..rng.random_range(0..=1usize) {
                let extra = rng.random_range(0..keywords.len());
                if extra != kw_idx && !extras.contains(&extra) {
                    extras.push(extra);
                }
            }
        };
        let mut drafts: Vec<(usize, usize, Vec<usize>)> = Vec::with_capacity(n_base);
        for i in 0..reports_per_topic {
            let (template_idx, kw_idx, extras, duplicate_of) = if i < n_base {
                let (template_idx, kw_idx) = grid[i % grid.len()];
                let mut extras = Vec::new();
                draw_extra(kw_idx, &mut extras, &mut rng);
                drafts.push((template_idx, kw_idx, extras.clone()));
                (template_idx, kw_idx, extras, Vec::new())
            } else {
                let base = rng.random_range(0..n_base);
                let (template_idx, kw_idx, mut extras) = drafts[base].clone();
                draw_extra(kw_idx, &mut extras, &mut rng);
                (template_idx, kw_idx, extras, vec![format!("t{t}-r{base:03}")])
            };

            // every report opens with its product area, the way tracker
            // titles carry a component tag; same-area reports therefore
            // always share a content word and the push-apart gate skips them
            let mut tokens: Vec<String> = vec![base_name.clone()];
            tokens.extend(TEMPLATES[template_idx].iter().map(|w| {
                if *w == "{}" {
                    keywords[kw_idx].clone()
                } else {
                    w.to_string()
                }
            }));
            for &extra in &extras {
                tokens.push("with".to_string());
                tokens.push(keywords[extra].clone());
            }

            reports.push(RawReport {
                id: format!("t{t}-r{i:03}"),
                title: tokens.join(" "),
                duplicate_of,
                feature_label: Some(base_name.clone()),
            });
        }

        labels.push(base_name.clone());
        keywords_by_label.insert(base_name, keywords);
    }

    Ok(SyntheticCorpus {
        reports,
        labels,
        keywords_by_label,
    })
}
