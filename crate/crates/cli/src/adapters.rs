//! Source-format adapters for `damf convert`. Each reads one upstream file
//! and returns canonical corpus records.
//!
//! * `mftc`: JSON array of `{"Corpus": .., "Tweets": [{"tweet_id", "tweet_text",
//!   "annotations": [{"annotator", "annotation": "care,harm"}]}]}`. Raw
//!   annotations are aggregated by majority vote; `non-moral` and `nm`
//!   denote an empty label set.
//! * `covid`, `congress`: CSV with an `id` (or `tweet_id`) column, a `text`
//!   (or `tweet_text`) column and one 0/1 column per class. `non-moral`
//!   columns are ignored.
//! * `emfd`: CSV with `id`, `text` and `foundations`, a `;`-separated list of
//!   class names (empty for non-moral).
//! * `synthetic`: a JSON synthetic-corpus spec; yields one corpus per domain.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use damf_core::corpus::{
    document_record, generate_synthetic_corpus, majority_vote, AnnotationSet, MoralClass, MoralLabelVector, Record,
    SyntheticSpec,
};
use serde::Deserialize;

pub const ADAPTERS: [&str; 5] = ["mftc", "covid", "congress", "emfd", "synthetic"];

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ConvertReport {
    pub records: usize,
    pub kept: usize,
    pub discarded: usize,
}

/// Named record sets; single-corpus adapters return one entry.
pub type Converted = Vec<(String, Vec<Record>)>;

pub fn convert(adapter: &str, input: &Path) -> Result<(Converted, ConvertReport)> {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| adapter.to_string());
    match adapter {
        "mftc" => mftc(input).map(|(r, rep)| (vec![(stem, r)], rep)),
        "covid" | "congress" => class_columns(input).map(|(r, rep)| (vec![(stem, r)], rep)),
        "emfd" => emfd(input).map(|(r, rep)| (vec![(stem, r)], rep)),
        "synthetic" => synthetic(input),
        other => bail!("unknown adapter `{other}` (expected one of {})", ADAPTERS.join(", ")),
    }
}

fn class_names(raw: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for part in raw.split([',', ';']) {
        let name = part.trim().to_lowercase();
        if name.is_empty() || name == "non-moral" || name == "nm" || name == "nonmoral" {
            continue;
        }
        let class: MoralClass = name.parse()?;
        out.push(class.name().to_string());
    }
    Ok(out)
}

#[derive(Deserialize)]
struct MftcAnnotation {
    annotation: String,
}

#[derive(Deserialize)]
struct MftcTweet {
    tweet_id: serde_json::Value,
    tweet_text: String,
    annotations: Vec<MftcAnnotation>,
}

#[derive(Deserialize)]
struct MftcCorpus {
    #[serde(rename = "Tweets")]
    tweets: Vec<MftcTweet>,
}

fn mftc(path: &Path) -> Result<(Vec<Record>, ConvertReport)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let corpora: Vec<MftcCorpus> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut report = ConvertReport::default();
    let mut records = Vec::new();
    for tweet in corpora.iter().flat_map(|c| &c.tweets) {
        report.records += 1;
        let id = match &tweet.tweet_id {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let per_annotator = tweet
            .annotations
            .iter()
            .map(|a| class_names(&a.annotation).and_then(|n| Ok(MoralLabelVector::from_names(n)?)))
            .collect::<Result<Vec<_>>>()
            .with_context(|| format!("tweet {id}"))?;
        let n = per_annotator.len();
        let voted = majority_vote(&AnnotationSet::new(id.clone(), per_annotator), n).with_context(|| format!("tweet {id}"))?;
        match voted {
            Some(labels) => {
                report.kept += 1;
                records.push(Record {
                    id,
                    text: tweet.tweet_text.clone(),
                    labels: Some(labels.names().into_iter().map(str::to_string).collect()),
                    annotations: None,
                });
            }
            None => report.discarded += 1,
        }
    }
    Ok((records, report))
}

fn csv_reader(path: &Path) -> Result<(csv::StringRecord, csv::Reader<fs::File>)> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    Ok((headers, reader))
}

fn column(headers: &csv::StringRecord, names: &[&str], path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| names.contains(&h.trim()))
        .with_context(|| format!("{}: missing `{}` column", path.display(), names[0]))
}

fn class_columns(path: &Path) -> Result<(Vec<Record>, ConvertReport)> {
    let (headers, mut reader) = csv_reader(path)?;
    let id_col = column(&headers, &["id", "tweet_id"], path)?;
    let text_col = column(&headers, &["text", "tweet_text"], path)?;
    let mut classes = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim().to_lowercase();
        if i == id_col || i == text_col || ["non-moral", "nonmoral", "nm"].contains(&h.as_str()) {
            continue;
        }
        let class: MoralClass = h.parse().with_context(|| format!("{}: column `{h}`", path.display()))?;
        classes.push((i, class));
    }
    let mut report = ConvertReport::default();
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.with_context(|| format!("{}: line {}", path.display(), line + 2))?;
        report.records += 1;
        let mut labels = Vec::new();
        for (col, class) in &classes {
            match row.get(*col).map(str::trim) {
                Some("1") | Some("true") | Some("True") => labels.push(class.name().to_string()),
                Some("0") | Some("false") | Some("False") | Some("") | None => {}
                Some(other) => bail!("{}: line {}: bad label cell `{other}`", path.display(), line + 2),
            }
        }
        records.push(Record {
            id: row.get(id_col).unwrap_or_default().to_string(),
            text: row.get(text_col).unwrap_or_default().to_string(),
            labels: Some(labels),
            annotations: None,
        });
        report.kept += 1;
    }
    Ok((records, report))
}

fn emfd(path: &Path) -> Result<(Vec<Record>, ConvertReport)> {
    let (headers, mut reader) = csv_reader(path)?;
    let id_col = column(&headers, &["id"], path)?;
    let text_col = column(&headers, &["text"], path)?;
    let label_col = column(&headers, &["foundations"], path)?;
    let mut report = ConvertReport::default();
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.with_context(|| format!("{}: line {}", path.display(), line + 2))?;
        report.records += 1;
        let labels = class_names(row.get(label_col).unwrap_or_default())
            .with_context(|| format!("{}: line {}", path.display(), line + 2))?;
        records.push(Record {
            id: row.get(id_col).unwrap_or_default().to_string(),
            text: row.get(text_col).unwrap_or_default().to_string(),
            labels: Some(labels),
            annotations: None,
        });
        report.kept += 1;
    }
    Ok((records, report))
}

fn synthetic(path: &Path) -> Result<(Converted, ConvertReport)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: SyntheticSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let corpora = generate_synthetic_corpus(&spec)?;
    let mut report = ConvertReport::default();
    let out = corpora
        .iter()
        .map(|c| {
            report.records += c.len();
            report.kept += c.len();
            (c.name.clone(), c.documents.iter().map(document_record).collect())
        })
        .collect();
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_name_lists() {
        assert_eq!(class_names("care, Harm;non-moral").unwrap(), vec!["care", "harm"]);
        assert!(class_names("").unwrap().is_empty());
        assert!(class_names("virtue").is_err());
    }
}
