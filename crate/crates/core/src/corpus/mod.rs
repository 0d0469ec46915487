//! Bug-report ingestion: tokenization, vocabulary, duplicate groups,
//! labeled pair generation, splits and class weights.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub mod io;
pub mod stopwords;
pub mod synth;

pub use stopwords::{is_stopword, STOPWORDS_VERSION};

/// Reserved vocabulary ids.
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

/// A bug report as parsed from disk, before vocabulary assignment.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RawReport {
    pub id: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub duplicate_of: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_label: Option<String>,
}

/// A tokenized report with vocabulary ids assigned.
#[derive(Debug, Clone)]
pub struct Report {
    pub id: String,
    pub title_text: String,
    /// Tokenized words (kept for overlap checks and tf-idf).
    pub words: Vec<String>,
    /// Vocabulary ids, same length as `words`.
    pub tokens: Vec<u32>,
    /// Gold product feature, when the dataset carries one.
    pub feature_label: Option<String>,
}

impl Report {
    /// Non-stopword word set used by the content-overlap rule.
    pub fn content_words(&self) -> HashSet<&str> {
        self.words
            .iter()
            .map(String::as_str)
            .filter(|w| !is_stopword(w))
            .collect()
    }
}

/// One labeled training pair, referring to reports by corpus index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairExample {
    pub p: usize,
    pub q: usize,
    pub duplicate: bool,
    pub no_content_overlap: bool,
}

/// Word/id bijection with reserved padding and unknown ids.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    word_to_id: HashMap<String, u32>,
    id_to_word: Vec<String>,
}

impl Vocabulary {
    /// Rebuild from an id-ordered word list (ids 0 and 1 must be the
    /// padding and unknown markers; checkpoint loading uses this).
    pub fn from_id_ordered(words: Vec<String>) -> Result<Self> {
        if words.len() < 2 {
            return Err(Error::Data("vocabulary must hold the 2 special ids".into()));
        }
        let word_to_id = words
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            word_to_id,
            id_to_word: words,
        })
    }

    pub fn size(&self) -> usize {
        self.id_to_word.len()
    }

    /// Id for a word; unknown words map to [`UNK_ID`].
    pub fn id(&self, word: &str) -> u32 {
        self.word_to_id.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: u32) -> &str {
        &self.id_to_word[id as usize]
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_to_id.contains_key(word)
    }

    /// Words in id order, including the two specials.
    pub fn id_ordered_words(&self) -> &[String] {
        &self.id_to_word
    }
}

/// Lowercase and split on alphanumeric boundaries; punctuation is
/// discarded, digits are kept (so `v2` survives as one token).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lower in ch.to_lowercase() {
                current.push(lower);
            }
        } else if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Build a vocabulary over tokenized reports. Words below `min_freq`
/// map to unknown; retained words are ordered by frequency descending,
/// ties lexicographic, starting at id 2.
pub fn build_vocab<'a, I>(tokenized_reports: I, min_freq: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut freq: HashMap<&str, usize> = HashMap::new();
    let mut any = false;
    for words in tokenized_reports {
        any = true;
        for w in words {
            *freq.entry(w.as_str()).or_insert(0) += 1;
        }
    }
    if !any {
        return Err(Error::Data("empty corpus".into()));
    }

    let mut retained: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|(_, c)| *c >= min_freq.max(1))
        .collect();
    retained.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut id_to_word = Vec::with_capacity(retained.len() + 2);
    id_to_word.push("<pad>".to_string());
    id_to_word.push("<unk>".to_string());
    id_to_word.extend(retained.iter().map(|(w, _)| w.to_string()));
    Vocabulary::from_id_ordered(id_to_word)
}

/// Duplicate groups: the transitive closure of `duplicate_of` links
/// treated as an equivalence relation. Every report belongs to exactly
/// one group; singletons included.
#[derive(Debug, Clone)]
pub struct DuplicateGroups {
    group_of: HashMap<String, usize>,
    groups: Vec<Vec<String>>,
}

impl DuplicateGroups {
    /// Closure over links, including links through report ids absent
    /// from the corpus (two reports marked duplicates of a missing
    /// third still end up together). Groups only list present ids.
    pub fn build(raw: &[RawReport]) -> Self {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut uf = UnionFind::new();
        let idx_of = |id: &str, uf: &mut UnionFind, index: &mut HashMap<String, usize>| {
            *index.entry(id.to_string()).or_insert_with(|| uf.push())
        };
        for r in raw {
            let a = idx_of(&r.id, &mut uf, &mut index);
            for target in &r.duplicate_of {
                let b = idx_of(target, &mut uf, &mut index);
                uf.union(a, b);
            }
        }

        let present: HashSet<&str> = raw.iter().map(|r| r.id.as_str()).collect();
        let mut by_root: HashMap<usize, Vec<String>> = HashMap::new();
        for (id, &i) in &index {
            if present.contains(id.as_str()) {
                by_root.entry(uf.find(i)).or_default().push(id.clone());
            }
        }
        let mut groups: Vec<Vec<String>> = by_root.into_values().collect();
        for g in &mut groups {
            g.sort();
        }
        groups.sort();
        let group_of = groups
            .iter()
            .enumerate()
            .flat_map(|(gi, g)| g.iter().map(move |id| (id.clone(), gi)))
            .collect();
        DuplicateGroups { group_of, groups }
    }

    pub fn group_id(&self, report_id: &str) -> Option<usize> {
        self.group_of.get(report_id).copied()
    }

    pub fn same_group(&self, a: &str, b: &str) -> bool {
        match (self.group_id(a), self.group_id(b)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }

    pub fn groups(&self) -> &[Vec<String>] {
        &self.groups
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new() -> Self {
        UnionFind { parent: Vec::new() }
    }

    fn push(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.parent.len() - 1
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// A fully ingested corpus: tokenized reports, vocabulary and groups.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub reports: Vec<Report>,
    pub vocab: Vocabulary,
    pub groups: DuplicateGroups,
    by_id: HashMap<String, usize>,
    /// Reports dropped because tokenization left nothing.
    pub dropped_empty: usize,
}

impl Corpus {
    pub fn build(raw: Vec<RawReport>, min_freq: usize) -> Result<Corpus> {
        let groups = DuplicateGroups::build(&raw);

        let mut tokenized: Vec<(RawReport, Vec<String>)> = Vec::with_capacity(raw.len());
        let mut dropped_empty = 0usize;
        for r in raw {
            let words = tokenize(&r.title);
            if words.is_empty() {
                dropped_empty += 1;
                continue;
            }
            tokenized.push((r, words));
        }
        if dropped_empty > 0 {
            log::info!("dropped {dropped_empty} reports with no tokens");
        }

        let vocab = build_vocab(tokenized.iter().map(|(_, w)| w.as_slice()), min_freq)?;

        let reports: Vec<Report> = tokenized
            .into_iter()
            .map(|(r, words)| {
                let tokens = words.iter().map(|w| vocab.id(w)).collect();
                Report {
                    id: r.id,
                    title_text: r.title,
                    words,
                    tokens,
                    feature_label: r.feature_label,
                }
            })
            .collect();
        let by_id = reports
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();

        Ok(Corpus {
            reports,
            vocab,
            groups,
            by_id,
            dropped_empty,
        })
    }

    /// Load reports from disk in either supported format and assemble
    /// the corpus.
    pub fn load(path: &std::path::Path, format: io::DatasetFormat, min_freq: usize) -> Result<Corpus> {
        let raw = io::load_reports(path, format)?;
        Corpus::build(raw, min_freq)
    }

    pub fn index_of(&self, report_id: &str) -> Option<usize> {
        self.by_id.get(report_id).copied()
    }

    /// Re-map every report's token ids against `vocab`, which becomes
    /// the corpus vocabulary. Required before scoring with a trained
    /// checkpoint: ids must come from the vocabulary the model saw.
    pub fn retokenize(&mut self, vocab: Vocabulary) {
        for report in &mut self.reports {
            report.tokens = report.words.iter().map(|w| vocab.id(w)).collect();
        }
        self.vocab = vocab;
    }

    pub fn report(&self, idx: usize) -> &Report {
        &self.reports[idx]
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    fn group_of_index(&self, idx: usize) -> Option<usize> {
        self.groups.group_id(&self.reports[idx].id)
    }
}

/// Whether two reports share no non-stopword token.
pub fn no_content_overlap(p: &Report, q: &Report) -> bool {
    let a = p.content_words();
    let b = q.content_words();
    let (small, large) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    small.iter().all(|w| !large.contains(w))
}

/// All intra-group pairs as positives plus uniformly sampled cross-group
/// negatives until positives/total lands on `target_dup_fraction`.
pub fn generate_pairs(
    corpus: &Corpus,
    target_dup_fraction: f64,
    seed: u64,
) -> Result<Vec<PairExample>> {
    if !(0.0 < target_dup_fraction && target_dup_fraction < 1.0) {
        return Err(Error::Config(format!(
            "target duplicate fraction must be in (0, 1), got {target_dup_fraction}"
        )));
    }

    // positives: every intra-group pair over reports present in the corpus
    let mut positives: Vec<(usize, usize)> = Vec::new();
    for group in corpus.groups.groups() {
        let members: Vec<usize> = group
            .iter()
            .filter_map(|id| corpus.index_of(id))
            .collect();
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                positives.push((members[i].min(members[j]), members[i].max(members[j])));
            }
        }
    }
    positives.sort_unstable();
    if positives.is_empty() {
        return Err(Error::Data(
            "no duplicate group of size >= 2; cannot generate positive pairs".into(),
        ));
    }

    let n = corpus.len();
    let n_pos = positives.len();
    let total_target = (n_pos as f64 / target_dup_fraction).round() as usize;
    let n_neg = total_target.saturating_sub(n_pos);

    // achievable cross-group pair count
    let all_pairs = n * (n - 1) / 2;
    let intra_pairs: usize = corpus
        .groups
        .groups()
        .iter()
        .map(|g| {
            let s = g.iter().filter(|id| corpus.index_of(id).is_some()).count();
            s * (s - 1) / 2
        })
        .sum();
    let max_neg = all_pairs - intra_pairs;
    if n_neg > max_neg {
        let achievable = n_pos as f64 / (n_pos + max_neg) as f64;
        return Err(Error::Data(format!(
            "cannot reach duplicate fraction {target_dup_fraction}: only {max_neg} negative \
             candidates exist; achievable fraction is {achievable:.4}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<u64> = HashSet::with_capacity(n_neg * 2);
    let mut negatives: Vec<(usize, usize)> = Vec::with_capacity(n_neg);
    while negatives.len() < n_neg {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let (lo, hi) = (a.min(b), a.max(b));
        if corpus.group_of_index(lo) == corpus.group_of_index(hi) {
            continue;
        }
        let key = (lo as u64) * (n as u64) + hi as u64;
        if seen.insert(key) {
            negatives.push((lo, hi));
        }
    }

    let to_example = |(p, q): (usize, usize), duplicate: bool| PairExample {
        p,
        q,
        duplicate,
        no_content_overlap: no_content_overlap(&corpus.reports[p], &corpus.reports[q]),
    };
    let mut pairs: Vec<PairExample> = positives
        .into_iter()
        .map(|pq| to_example(pq, true))
        .collect();
    pairs.extend(negatives.into_iter().map(|pq| to_example(pq, false)));

    let achieved = n_pos as f64 / pairs.len() as f64;
    debug_assert!((achieved - target_dup_fraction).abs() <= 0.005);
    Ok(pairs)
}

/// Stratified deterministic split. Split sizes follow the ratios by
/// largest remainder; positives are spread across splits proportionally.
pub fn split_pairs(
    pairs: &[PairExample],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<PairExample>, Vec<PairExample>, Vec<PairExample>)> {
    let (r0, r1, r2) = ratios;
    if (r0 + r1 + r2 - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {}",
            r0 + r1 + r2
        )));
    }
    if pairs.len() < 10 {
        return Err(Error::Data(format!(
            "need at least 10 pairs to split, got {}",
            pairs.len()
        )));
    }

    let n = pairs.len();
    let sizes = largest_remainder(n, &[r0, r1, r2]);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<PairExample> = pairs.iter().filter(|p| p.duplicate).copied().collect();
    let mut neg: Vec<PairExample> = pairs.iter().filter(|p| !p.duplicate).copied().collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    // positives per split, proportional to split sizes
    let n_pos = pos.len();
    let mut pos_counts = largest_remainder(
        n_pos,
        &[
            sizes[0] as f64 / n as f64,
            sizes[1] as f64 / n as f64,
            sizes[2] as f64 / n as f64,
        ],
    );
    // guard against a split too small for its positive allocation
    for i in 0..3 {
        if pos_counts[i] > sizes[i] {
            let excess = pos_counts[i] - sizes[i];
            pos_counts[i] = sizes[i];
            for j in 0..3 {
                if j != i && sizes[j] - pos_counts[j] >= excess {
                    pos_counts[j] += excess;
                    break;
                }
            }
        }
    }

    let mut out: Vec<Vec<PairExample>> = Vec::with_capacity(3);
    let (mut pi, mut ni) = (0usize, 0usize);
    for s in 0..3 {
        let np = pos_counts[s];
        let nn = sizes[s] - np;
        let mut split: Vec<PairExample> = Vec::with_capacity(sizes[s]);
        split.extend_from_slice(&pos[pi..pi + np]);
        split.extend_from_slice(&neg[ni..ni + nn]);
        pi += np;
        ni += nn;
        split.shuffle(&mut rng);
        out.push(split);
    }
    let test = out.pop().unwrap();
    let val = out.pop().unwrap();
    let train = out.pop().unwrap();
    Ok((train, val, test))
}

fn largest_remainder(total: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..total - assigned {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

/// Inverse-frequency class weights `(w_pos, w_neg)` with weighted mean 1.
pub fn class_weights(pairs: &[PairExample]) -> Result<(f64, f64)> {
    let n_pos = pairs.iter().filter(|p| p.duplicate).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!(
            "class weights need both classes; got {n_pos} positives / {n_neg} negatives"
        )));
    }
    let n = pairs.len() as f64;
    Ok((n / (2.0 * n_pos as f64), n / (2.0 * n_neg as f64)))
}
