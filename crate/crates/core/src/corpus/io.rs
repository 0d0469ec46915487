//! On-disk formats: bug-tracker CSV exports, jsonl, and the labeled
//! pairs file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::corpus::{Corpus, PairExample, RawReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    BugrepoCsv,
    Jsonl,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bugrepo-csv" => Ok(DatasetFormat::BugrepoCsv),
            "jsonl" => Ok(DatasetFormat::Jsonl),
            other => Err(Error::Config(format!(
                "unknown dataset format {other:?} (expected bugrepo-csv or jsonl)"
            ))),
        }
    }
}

pub fn load_reports(path: &Path, format: DatasetFormat) -> Result<Vec<RawReport>> {
    match format {
        DatasetFormat::BugrepoCsv => read_bugrepo_csv(path),
        DatasetFormat::Jsonl => read_jsonl(path),
    }
}

/// Some tracker exports serialize ids through a float column, leaving
/// values like `370622.0`; strip that suffix so links resolve.
fn normalize_id(raw: &str) -> String {
    let t = raw.trim();
    t.strip_suffix(".0").unwrap_or(t).to_string()
}

/// Comma-separated export with header columns Issue_id, Title,
/// Duplicated_issue (empty or a semicolon-separated id list).
pub fn read_bugrepo_csv(path: &Path) -> Result<Vec<RawReport>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)?;

    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("missing required column {name:?} in {}", path.display())))
    };
    let id_col = col("Issue_id")?;
    let title_col = col("Title")?;
    let dup_col = col("Duplicated_issue")?;

    let mut out = Vec::new();
    let mut skipped = 0usize;
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let (id, title) = match (record.get(id_col), record.get(title_col)) {
            (Some(id), Some(title)) if !id.trim().is_empty() => (normalize_id(id), title.to_string()),
            _ => {
                skipped += 1;
                continue;
            }
        };
        let duplicate_of = record
            .get(dup_col)
            .unwrap_or("")
            .split(';')
            .map(normalize_id)
            .filter(|s| !s.is_empty())
            .collect();
        out.push(RawReport {
            id,
            title,
            duplicate_of,
            feature_label: None,
        });
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} malformed rows", path.display());
    }
    Ok(out)
}

/// One JSON object per line: id, title, optional duplicate_of list,
/// optional feature_label.
pub fn read_jsonl(path: &Path) -> Result<Vec<RawReport>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // a header object carrying run provenance is not a report
        match serde_json::from_str::<serde_json::Value>(&line) {
            Ok(v) if v.get("_manifest").is_some() => continue,
            Ok(v) => match RawReport::deserialize(v) {
                Ok(r) if !r.id.is_empty() => out.push(r),
                _ => skipped += 1,
            },
            Err(_) => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} malformed lines", path.display());
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, reports: &[RawReport]) -> Result<()> {
    write_jsonl_with_header(path, reports, None)
}

/// Like [`write_jsonl`] with a leading `{"_manifest": ...}` header
/// line; readers skip it.
pub fn write_jsonl_with_header(
    path: &Path,
    reports: &[RawReport],
    header: Option<&serde_json::Value>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(h) = header {
        serde_json::to_writer(&mut w, &serde_json::json!({ "_manifest": h }))?;
        w.write_all(b"\n")?;
    }
    for r in reports {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Pairs by report id, as stored in the tab-separated pairs file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub p_id: String,
    pub q_id: String,
    pub duplicate: bool,
    pub no_content_overlap: bool,
}

/// Write pairs as `p_id<TAB>q_id<TAB>label<TAB>no_content_overlap`.
pub fn write_pairs(path: &Path, corpus: &Corpus, pairs: &[PairExample]) -> Result<()> {
    write_pairs_with_manifest(path, corpus, pairs, None)
}

/// Like [`write_pairs`] with a `# manifest_hash: ...` comment line on
/// top; the reader ignores comments.
pub fn write_pairs_with_manifest(
    path: &Path,
    corpus: &Corpus,
    pairs: &[PairExample],
    manifest_hash: Option<&str>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(h) = manifest_hash {
        writeln!(w, "# manifest_hash: {h}")?;
    }
    for pair in pairs {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            corpus.reports[pair.p].id,
            corpus.reports[pair.q].id,
            pair.duplicate as u8,
            pair.no_content_overlap as u8,
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Data(format!(
                "{}:{}: expected 4 tab-separated fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let flag = |s: &str, what: &str| -> Result<bool> {
            match s {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Data(format!(
                    "{}:{}: {what} must be 0 or 1, got {other:?}",
                    path.display(),
                    lineno + 1
                ))),
            }
        };
        out.push(PairRecord {
            p_id: fields[0].to_string(),
            q_id: fields[1].to_string(),
            duplicate: flag(fields[2], "label")?,
            no_content_overlap: flag(fields[3], "no_content_overlap")?,
        });
    }
    Ok(out)
}

/// Resolve id-based pair records against a corpus.
pub fn resolve_pairs(corpus: &Corpus, records: &[PairRecord]) -> Result<Vec<PairExample>> {
    records
        .iter()
        .map(|r| {
            let p = corpus
                .index_of(&r.p_id)
                .ok_or_else(|| Error::Data(format!("pair references unknown report id {:?}", r.p_id)))?;
            let q = corpus
                .index_of(&r.q_id)
                .ok_or_else(|| Error::Data(format!("pair references unknown report id {:?}", r.q_id)))?;
            Ok(PairExample {
                p,
                q,
                duplicate: r.duplicate,
                no_content_overlap: r.no_content_overlap,
            })
        })
        .collect()
}
