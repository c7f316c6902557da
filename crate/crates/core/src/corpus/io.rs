use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::labels::MoralLabelVector;
use super::vote::{majority_vote, AnnotationSet};
use super::{Corpus, DomainId, Document};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// One JSON record per line: `{id, text, labels?, annotations?}`.
    Jsonl,
    /// Header `id,text,<class>...` with 0/1 cells per class.
    Csv,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(Error::invalid(format!("unknown corpus format `{other}`"))),
        }
    }
}

/// A corpus-file line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub records: usize,
    pub kept: usize,
    pub discarded_no_majority: usize,
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRecord {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Labels for one record: aggregated annotations take precedence over the
/// plain `labels` list. `Ok(None)` means the record failed the vote.
fn record_labels(record: &Record) -> Result<Option<Option<MoralLabelVector>>> {
    if let Some(raw) = &record.annotations {
        let per_annotator = raw
            .iter()
            .map(MoralLabelVector::from_names)
            .collect::<Result<Vec<_>>>()?;
        let n = per_annotator.len();
        let ann = AnnotationSet::new(record.id.clone(), per_annotator);
        return Ok(majority_vote(&ann, n)?.map(Some));
    }
    match &record.labels {
        Some(names) => Ok(Some(Some(MoralLabelVector::from_names(names)?))),
        None => Ok(Some(None)),
    }
}

fn build(path: &Path, domain: DomainId, docs: Vec<Document>, report: LoadReport) -> Result<(Corpus, LoadReport)> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| domain.name.clone());
    let corpus = Corpus::new(name, domain, docs)?;
    log::info!(
        "loaded {}: {} kept, {} discarded (no majority)",
        path.display(),
        report.kept,
        report.discarded_no_majority
    );
    Ok((corpus, report))
}

fn load_jsonl(path: &Path, domain: DomainId) -> Result<(Corpus, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut report = LoadReport::default();
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        let record: Record = serde_json::from_str(&line).map_err(|e| malformed(path, lineno, e.to_string()))?;
        let labels = record_labels(&record).map_err(|e| match e {
            Error::UnknownClass(_) => e,
            other => malformed(path, lineno, other.to_string()),
        })?;
        match labels {
            Some(labels) => {
                docs.push(Document::new(record.id, record.text, domain.clone(), labels));
                report.kept += 1;
            }
            None => report.discarded_no_majority += 1,
        }
    }
    build(path, domain, docs, report)
}

fn parse_flag(path: &Path, line: usize, cell: &str) -> Result<bool> {
    match cell.trim() {
        "1" | "true" | "True" | "TRUE" => Ok(true),
        "0" | "false" | "False" | "FALSE" | "" => Ok(false),
        other => Err(malformed(path, line, format!("bad label cell `{other}`"))),
    }
}

fn load_csv(path: &Path, domain: DomainId) -> Result<(Corpus, LoadReport)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => malformed(path, 1, format!("{other:?}")),
    })?;
    let headers = reader.headers()?.clone();
    let mut id_col = None;
    let mut text_col = None;
    let mut class_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        match h.trim() {
            "id" => id_col = Some(i),
            "text" => text_col = Some(i),
            name => class_cols.push((i, name.parse::<super::MoralClass>()?)),
        }
    }
    let (id_col, text_col) = match (id_col, text_col) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(malformed(path, 1, "header needs `id` and `text` columns")),
    };

    let mut report = LoadReport::default();
    let mut docs = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let lineno = i + 2;
        let row = row.map_err(|e| malformed(path, lineno, e.to_string()))?;
        report.records += 1;
        let field = |col: usize| row.get(col).ok_or_else(|| malformed(path, lineno, "missing column"));
        let mut labels = MoralLabelVector::NON_MORAL;
        for (col, class) in &class_cols {
            labels.set(class.index(), parse_flag(path, lineno, field(*col)?)?);
        }
        docs.push(Document::new(field(id_col)?, field(text_col)?, domain.clone(), Some(labels)));
        report.kept += 1;
    }
    build(path, domain, docs, report)
}

/// Reads a corpus file and preprocesses every record.
pub fn load_corpus(path: &Path, domain: DomainId, format: CorpusFormat) -> Result<(Corpus, LoadReport)> {
    match format {
        CorpusFormat::Jsonl => load_jsonl(path, domain),
        CorpusFormat::Csv => load_csv(path, domain),
    }
}

/// Record for a document, with its raw text and label names.
pub fn document_record(doc: &Document) -> Record {
    Record {
        id: doc.id.clone(),
        text: doc.raw_text.clone(),
        labels: doc.labels.map(|l| l.names().into_iter().map(str::to_string).collect()),
        annotations: None,
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes records in the line-delimited corpus format.
pub fn write_corpus<'a, I: IntoIterator<Item = &'a Record>>(path: &Path, records: I) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

impl From<&Document> for Record {
    fn from(d: &Document) -> Self {
        Record {
            id: d.id.clone(),
            text: d.raw_text.clone(),
            labels: d.labels.map(|l| l.names().into_iter().map(String::from).collect()),
            annotations: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, MoralClass};

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_valid_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "c.jsonl",
            concat!(
                r#"{"id":"1","text":"Help them @bob","labels":["care"]}"#, "\n",
                r#"{"id":"2","text":"nothing here","labels":[]}"#, "\n",
                r#"{"id":"3","text":"unlabeled 😀"}"#, "\n",
            ),
        );
        let (c, report) = load_corpus(&p, DomainId::new(0, "c"), CorpusFormat::Jsonl).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.name, "c");
        assert_eq!(report.kept, 3);
        assert_eq!(c.documents[0].processed_text, "Help them @user");
        assert_eq!(c.documents[2].split, Split::UnlabeledTarget);
        assert!(c.documents[2].labels.is_none());
        assert_eq!(c.label_counts, c.recompute_label_counts());
        assert_eq!(c.label_counts.positives[0], 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "bad.jsonl", "{\"id\":\"1\",\"text\":\"a\"}\n\n{not json}\n");
        match load_corpus(&p, DomainId::new(0, "b"), CorpusFormat::Jsonl) {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_class_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "u.jsonl", r#"{"id":"1","text":"a","labels":["sanctity"]}"#);
        assert!(matches!(
            load_corpus(&p, DomainId::new(0, "u"), CorpusFormat::Jsonl),
            Err(Error::UnknownClass(_))
        ));
    }

    #[test]
    fn annotations_are_voted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "a.jsonl",
            concat!(
                r#"{"id":"1","text":"a","annotations":[["care"],["care"],[]]}"#, "\n",
                r#"{"id":"2","text":"b","annotations":[["fairness"],[]]}"#, "\n",
            ),
        );
        let (c, report) = load_corpus(&p, DomainId::new(0, "a"), CorpusFormat::Jsonl).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(report.discarded_no_majority, 1);
        assert_eq!(c.documents[0].labels, Some(MoralLabelVector::from_classes([MoralClass::Care])));
    }

    #[test]
    fn csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "k.csv", "id,text,care,harm\na,hello,1,0\nb,world,0,1\n");
        let (c, _) = load_corpus(&p, DomainId::new(1, "k"), CorpusFormat::Csv).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.documents[0].labels.unwrap().get(0));
        assert!(c.documents[1].labels.unwrap().get(1));

        let bad = write(&dir, "bad.csv", "id,text,sanctity\na,hello,1\n");
        assert!(matches!(load_corpus(&bad, DomainId::new(1, "k"), CorpusFormat::Csv), Err(Error::UnknownClass(_))));
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.jsonl");
        let records = vec![
            Record { id: "x".into(), text: "one".into(), labels: Some(vec!["harm".into()]), annotations: None },
            Record { id: "y".into(), text: "two".into(), labels: None, annotations: None },
        ];
        write_corpus(&p, &records).unwrap();
        let (c, _) = load_corpus(&p, DomainId::new(0, "w"), CorpusFormat::Jsonl).unwrap();
        let back: Vec<Record> = c.documents.iter().map(Record::from).collect();
        assert_eq!(back, records);
    }
}
