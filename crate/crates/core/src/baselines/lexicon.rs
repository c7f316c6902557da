//! Moral-foundations lexicon files and static word-vector tables.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::corpus::{MoralClass, NUM_CLASSES};
use crate::error::{Error, Result};

/// Word lists per class, in canonical class order.
///
/// Text format: a `[class]` header line starts each section, followed by
/// words separated by whitespace or newlines. `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub words: [Vec<String>; NUM_CLASSES],
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Lexicon::default();
        let mut current: Option<usize> = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = Some(name.to_lowercase().parse::<MoralClass>()?.index());
                continue;
            }
            let c = current.ok_or_else(|| Error::MalformedRecord {
                path: "<lexicon>".into(),
                line: i + 1,
                reason: "word before any [class] header".to_string(),
            })?;
            lex.words[c].extend(line.split_whitespace().map(|w| w.to_lowercase()));
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Static word embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    index: HashMap<String, usize>,
    vectors: Mat,
}

impl WordVectors {
    pub fn from_pairs<I: IntoIterator<Item = (String, Vec<f64>)>>(pairs: I) -> Result<Self> {
        let mut index = HashMap::new();
        let mut flat = Vec::new();
        let mut dim = None;
        for (word, v) in pairs {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: v.len(),
                    })
                }
                _ => {}
            }
            if index.contains_key(&word) {
                continue;
            }
            index.insert(word, index.len());
            flat.extend(v);
        }
        let dim = dim.unwrap_or(0);
        let vectors = Mat::from_shape_vec((index.len(), dim), flat).expect("rows of equal length");
        Ok(Self { index, vectors })
    }

    /// word2vec text format. A leading `<count> <dim>` header is optional.
    pub fn read_text<R: BufRead>(reader: R, name: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(name, e))?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let rest: Vec<&str> = parts.collect();
            if i == 0 && rest.len() == 1 && word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
                continue;
            }
            let v = rest
                .iter()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::MalformedRecord {
                    path: name.to_path_buf(),
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            pairs.push((word.to_string(), v));
        }
        Self::from_pairs(pairs)
    }

    /// word2vec binary format: `<count> <dim>\n`, then per word the token,
    /// a space and `dim` little-endian f32 values.
    pub fn read_binary<R: Read>(reader: R, name: &Path) -> Result<Self> {
        let mut r = BufReader::new(reader);
        let mut header = String::new();
        r.read_line(&mut header).map_err(|e| Error::io(name, e))?;
        let bad = |reason: &str| Error::MalformedRecord {
            path: name.to_path_buf(),
            line: 1,
            reason: reason.to_string(),
        };
        let nums: Vec<usize> = header.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        let [count, dim] = nums[..] else {
            return Err(bad("expected `<count> <dim>` header"));
        };
        let mut pairs = Vec::with_capacity(count);
        let mut buf = vec![0u8; 4 * dim];
        for _ in 0..count {
            let mut word = Vec::new();
            r.read_until(b' ', &mut word).map_err(|e| Error::io(name, e))?;
            if word.last() != Some(&b' ') {
                return Err(bad("truncated word entry"));
            }
            word.pop();
            let word = String::from_utf8_lossy(&word).trim().to_string();
            r.read_exact(&mut buf).map_err(|e| Error::io(name, e))?;
            let v = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            pairs.push((word, v));
        }
        Self::from_pairs(pairs)
    }

    /// Binary when the extension is `.bin`, text otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "bin") {
            Self::read_binary(f, path)
        } else {
            Self::read_text(BufReader::new(f), path)
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<ArrayView1<'_, f64>> {
        self.index.get(word).map(|&i| self.vectors.row(i))
    }
}
