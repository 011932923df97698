//! Word vectors from `.vec` text files, and bigram phrase features.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::fmt_sig9;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected {expected} values, found {found}")]
    Dimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate word {word:?}")]
    Duplicate { line: usize, word: String },
    #[error("line {line}: non-numeric field {field:?}")]
    NotANumber { line: usize, field: String },
    #[error("line {line}: header declares {declared} vectors, file has {found}")]
    HeaderCount {
        line: usize,
        declared: usize,
        found: usize,
    },
    #[error("no vectors found")]
    Empty,
    #[error("phrase unrepresentable: {0:?} and {1:?} are both out of vocabulary")]
    Unrepresentable(String, String),
}

/// Immutable word → vector table. Words keep their file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<f64>,
}

impl EmbeddingStore {
    /// Builds a store from in-memory rows. Panics on ragged or duplicate
    /// input; meant for tests and synthetic data.
    pub fn from_rows<I, S>(dim: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut store = EmbeddingStore {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            values: Vec::new(),
        };
        for (w, v) in rows {
            assert_eq!(v.len(), dim, "ragged embedding row");
            let w = w.into();
            assert!(store.index.insert(w.clone(), store.words.len()).is_none(), "duplicate word");
            store.words.push(w);
            store.values.extend(v);
        }
        store
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Exact lookup of the lowercased word.
    pub fn get(&self, word: &str) -> Option<&[f64]> {
        let i = *self.index.get(&word.to_lowercase())?;
        Some(&self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn contains(&self, word: &str) -> bool {
        self.get(word).is_some()
    }

    /// Writes the store with a `count dim` header and 9-significant-digit
    /// values.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (i, w) in self.words.iter().enumerate() {
            write!(out, "{w}")?;
            for v in &self.values[i * self.dim..(i + 1) * self.dim] {
                write!(out, " {}", fmt_sig9(*v))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split_whitespace();
    let count = it.next()?.parse().ok()?;
    let dim = it.next()?.parse().ok()?;
    it.next().is_none().then_some((count, dim))
}

/// Reads whitespace-separated `word v1 .. vd` lines. An optional first line
/// `count dim` is checked against the body.
pub fn load_embeddings<R: BufRead>(source: R) -> Result<EmbeddingStore, EmbeddingError> {
    let mut dim: Option<usize> = None;
    let mut header: Option<(usize, usize)> = None;
    let mut words = Vec::new();
    let mut index = HashMap::new();
    let mut values = Vec::new();
    let mut last_line = 0;

    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if line_no == 1 {
            if let Some(h) = parse_header(&line) {
                header = Some(h);
                dim = Some(h.1);
                continue;
            }
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().unwrap().to_string();
        let start = values.len();
        for f in fields {
            let v: f64 = f.parse().map_err(|_| EmbeddingError::NotANumber {
                line: line_no,
                field: f.to_string(),
            })?;
            values.push(v);
        }
        let found = values.len() - start;
        let expected = *dim.get_or_insert(found);
        if found != expected || found == 0 {
            return Err(EmbeddingError::Dimension {
                line: line_no,
                expected,
                found,
            });
        }
        if index.insert(word.clone(), words.len()).is_some() {
            return Err(EmbeddingError::Duplicate {
                line: line_no,
                word,
            });
        }
        words.push(word);
    }

    if let Some((declared, _)) = header {
        if declared != words.len() {
            return Err(EmbeddingError::HeaderCount {
                line: last_line,
                declared,
                found: words.len(),
            });
        }
    }
    let dim = match dim {
        Some(d) if !words.is_empty() => d,
        _ => return Err(EmbeddingError::Empty),
    };
    Ok(EmbeddingStore {
        dim,
        words,
        index,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Average of the two word vectors.
    Awv,
    /// Concatenation of the two word vectors.
    Cwv,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Awv => "awv",
            FeatureKind::Cwv => "cwv",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "awv" => Ok(FeatureKind::Awv),
            "cwv" => Ok(FeatureKind::Cwv),
            other => Err(format!("unknown featurizer {other:?} (expected awv or cwv)")),
        }
    }
}

impl FeatureKind {
    pub fn feature_dim(self, word_dim: usize) -> usize {
        match self {
            FeatureKind::Awv => word_dim,
            FeatureKind::Cwv => 2 * word_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhraseFeature {
    pub values: Vec<f64>,
    pub kind: FeatureKind,
}

/// Out-of-vocabulary words contribute zeros; both missing is an error.
fn lookup_pair(
    store: &EmbeddingStore,
    w1: &str,
    w2: &str,
) -> Result<(Vec<f64>, Vec<f64>), EmbeddingError> {
    let (a, b) = (store.get(w1), store.get(w2));
    if a.is_none() && b.is_none() {
        return Err(EmbeddingError::Unrepresentable(w1.to_string(), w2.to_string()));
    }
    let zero = vec![0.0; store.dim()];
    Ok((
        a.map_or_else(|| zero.clone(), <[f64]>::to_vec),
        b.map_or(zero, <[f64]>::to_vec),
    ))
}

pub fn featurize_awv(store: &EmbeddingStore, bigram: (&str, &str)) -> Result<PhraseFeature, EmbeddingError> {
    let (a, b) = lookup_pair(store, bigram.0, bigram.1)?;
    Ok(PhraseFeature {
        values: a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect(),
        kind: FeatureKind::Awv,
    })
}

pub fn featurize_cwv(store: &EmbeddingStore, bigram: (&str, &str)) -> Result<PhraseFeature, EmbeddingError> {
    let (mut a, b) = lookup_pair(store, bigram.0, bigram.1)?;
    a.extend(b);
    Ok(PhraseFeature {
        values: a,
        kind: FeatureKind::Cwv,
    })
}

pub fn featurize(
    store: &EmbeddingStore,
    kind: FeatureKind,
    bigram: (&str, &str),
) -> Result<PhraseFeature, EmbeddingError> {
    match kind {
        FeatureKind::Awv => featurize_awv(store, bigram),
        FeatureKind::Cwv => featurize_cwv(store, bigram),
    }
}
