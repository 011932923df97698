//! "sound(s) of Y" concept mining.
//!
//! Every occurrence of the trigger bigram opens a window of up to four
//! following tokens. The POS tags of that window are matched against six
//! accepted shapes; anything else is noise and dropped.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Sentence, Token};

pub const MAX_WINDOW: usize = 4;
const SENTENCE_FINAL: [&str; 3] = [".", "!", "?"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PatternId {
    P1,
    P2,
    P3,
    P4,
    P5,
    P6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TagClass {
    Vbg,
    /// NN or NNS
    Noun,
    /// NN only
    SingularNoun,
    Adj,
}

impl TagClass {
    fn accepts(self, tag: &str) -> bool {
        match self {
            TagClass::Vbg => tag == "VBG",
            TagClass::Noun => tag == "NN" || tag == "NNS",
            TagClass::SingularNoun => tag == "NN",
            TagClass::Adj => tag == "JJ",
        }
    }
}

impl PatternId {
    pub const ALL: [PatternId; 6] = [
        PatternId::P1,
        PatternId::P2,
        PatternId::P3,
        PatternId::P4,
        PatternId::P5,
        PatternId::P6,
    ];

    fn allows_determiner(self) -> bool {
        self != PatternId::P2
    }

    fn body(self) -> &'static [TagClass] {
        use TagClass::*;
        match self {
            PatternId::P1 => &[Vbg, Noun],
            PatternId::P2 => &[Vbg],
            PatternId::P3 => &[Noun, Vbg],
            PatternId::P4 => &[Noun],
            PatternId::P5 => &[SingularNoun, Noun],
            PatternId::P6 => &[Adj, Noun],
        }
    }

    /// Human-readable shape, e.g. `(DT) VBG NN(S)`.
    pub fn shape(self) -> &'static str {
        match self {
            PatternId::P1 => "(DT) VBG NN(S)",
            PatternId::P2 => "VBG",
            PatternId::P3 => "(DT) NN(S) VBG",
            PatternId::P4 => "(DT) NN(S)",
            PatternId::P5 => "(DT) NN NN(S)",
            PatternId::P6 => "(DT) JJ NN(S)",
        }
    }

    /// Number of leading tags consumed, if the pattern matches a prefix.
    fn match_prefix<S: AsRef<str>>(self, tags: &[S]) -> Option<(usize, usize)> {
        let skip = usize::from(
            self.allows_determiner() && tags.first().is_some_and(|t| t.as_ref() == "DT"),
        );
        let body = self.body();
        let rest = &tags[skip..];
        if rest.len() < body.len() {
            return None;
        }
        body.iter()
            .zip(rest)
            .all(|(class, tag)| class.accepts(tag.as_ref()))
            .then_some((skip, skip + body.len()))
    }
}

impl fmt::Display for PatternId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = PatternId::ALL.iter().position(|p| p == self).unwrap() + 1;
        write!(f, "P{n}")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown pattern id {0:?}")]
pub struct UnknownPattern(pub String);

impl FromStr for PatternId {
    type Err = UnknownPattern;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PatternId::ALL
            .iter()
            .copied()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| UnknownPattern(s.to_string()))
    }
}

/// Position of a mention in the corpus: (sentence ordinal, trigger token).
pub type Origin = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateMention {
    pub sentence: usize,
    /// 1-based indices of the trigger word and of `of`.
    pub trigger: (usize, usize),
    pub y_tokens: Vec<Token>,
}

/// Result of matching a mention: the pattern and the concept token range
/// within `y_tokens` (any leading determiner already skipped).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatternMatch {
    pub pattern: PatternId,
    pub start: usize,
    pub end: usize,
}

pub fn find_candidate_mentions(sentence_ref: usize, sentence: &Sentence) -> Vec<CandidateMention> {
    let toks = &sentence.tokens;
    let mut out = Vec::new();
    for i in 0..toks.len().saturating_sub(1) {
        let trigger = toks[i].lower.as_str();
        if !(trigger == "sound" || trigger == "sounds") || toks[i + 1].lower != "of" {
            continue;
        }
        let y_tokens: Vec<Token> = toks[i + 2..]
            .iter()
            .take(MAX_WINDOW)
            .take_while(|t| !SENTENCE_FINAL.contains(&t.surface.as_str()))
            .cloned()
            .collect();
        if y_tokens.is_empty() {
            continue;
        }
        out.push(CandidateMention {
            sentence: sentence_ref,
            trigger: (toks[i].index, toks[i + 1].index),
            y_tokens,
        });
    }
    out
}

pub fn generalize_pos(mention: &CandidateMention) -> String {
    let tags: Vec<&str> = mention.y_tokens.iter().map(|t| t.pos.as_str()).collect();
    tags.join(" ")
}

/// Longest matching prefix over the six patterns, lowest id on ties.
pub fn match_tags<S: AsRef<str>>(tags: &[S]) -> Option<PatternMatch> {
    let mut best: Option<PatternMatch> = None;
    for pattern in PatternId::ALL {
        if let Some((start, end)) = pattern.match_prefix(tags) {
            if best.is_none_or(|b| end > b.end) {
                best = Some(PatternMatch {
                    pattern,
                    start,
                    end,
                });
            }
        }
    }
    best
}

pub fn match_valid_pattern(mention: &CandidateMention) -> Option<PatternMatch> {
    let tags: Vec<&str> = mention.y_tokens.iter().map(|t| t.pos.as_str()).collect();
    match_tags(&tags)
}

/// A mention that passed pattern filtering, reduced to its concept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcceptedMention {
    pub origin: Origin,
    pub text: String,
    pub pattern: PatternId,
    /// POS tags of the concept tokens (determiner excluded).
    pub signature: String,
}

pub fn accept(mention: &CandidateMention) -> Option<AcceptedMention> {
    let m = match_valid_pattern(mention)?;
    let span = &mention.y_tokens[m.start..m.end];
    let words: Vec<&str> = span.iter().map(|t| t.lower.as_str()).collect();
    let tags: Vec<&str> = span.iter().map(|t| t.pos.as_str()).collect();
    Some(AcceptedMention {
        origin: (mention.sentence, mention.trigger.0),
        text: words.join(" "),
        pattern: m.pattern,
        signature: tags.join(" "),
    })
}

pub fn mine_sentence(sentence_ref: usize, sentence: &Sentence) -> Vec<AcceptedMention> {
    find_candidate_mentions(sentence_ref, sentence)
        .iter()
        .filter_map(accept)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptEntry {
    pub text: String,
    pub pattern: PatternId,
    pub signature: String,
    pub frequency: u64,
    /// Earliest corpus position seen; decides `pattern` on conflicts.
    pub first_seen: Origin,
}

/// Concept text → entry. Merging sums frequencies and keeps the pattern of
/// the earliest observation, which makes it commutative and associative.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConceptTable {
    entries: BTreeMap<String, ConceptEntry>,
}

#[derive(Debug, Error)]
pub enum ConceptTsvError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
}

impl ConceptTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<&ConceptEntry> {
        self.entries.get(text)
    }

    pub fn entries(&self) -> impl Iterator<Item = &ConceptEntry> {
        self.entries.values()
    }

    pub fn add(&mut self, mention: &AcceptedMention) {
        self.insert(ConceptEntry {
            text: mention.text.clone(),
            pattern: mention.pattern,
            signature: mention.signature.clone(),
            frequency: 1,
            first_seen: mention.origin,
        });
    }

    fn insert(&mut self, entry: ConceptEntry) {
        match self.entries.get_mut(&entry.text) {
            None => {
                self.entries.insert(entry.text.clone(), entry);
            }
            Some(existing) => {
                if existing.pattern != entry.pattern {
                    log::info!(
                        "concept {:?} seen under {} and {}",
                        entry.text,
                        existing.pattern,
                        entry.pattern
                    );
                }
                existing.frequency += entry.frequency;
                if entry.first_seen < existing.first_seen {
                    existing.pattern = entry.pattern;
                    existing.signature = entry.signature;
                    existing.first_seen = entry.first_seen;
                }
            }
        }
    }

    pub fn merge(&mut self, other: ConceptTable) {
        for entry in other.entries.into_values() {
            self.insert(entry);
        }
    }

    /// Descending frequency, ties by ascending text.
    pub fn sorted(&self) -> Vec<&ConceptEntry> {
        let mut all: Vec<&ConceptEntry> = self.entries.values().collect();
        all.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.text.cmp(&b.text)));
        all
    }

    pub fn top_k_by_frequency(&self, k: usize) -> Vec<&ConceptEntry> {
        let mut all = self.sorted();
        all.truncate(k);
        all
    }

    /// Per pattern: (distinct concepts, total mentions).
    pub fn pattern_counts(&self) -> BTreeMap<PatternId, (usize, u64)> {
        let mut counts: BTreeMap<PatternId, (usize, u64)> =
            PatternId::ALL.iter().map(|p| (*p, (0, 0))).collect();
        for e in self.entries.values() {
            let c = counts.get_mut(&e.pattern).unwrap();
            c.0 += 1;
            c.1 += e.frequency;
        }
        counts
    }

    /// Writes `text<TAB>pattern<TAB>frequency` rows in sorted order.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in self.sorted() {
            writeln!(out, "{}\t{}\t{}", e.text, e.pattern, e.frequency)?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(source: R) -> Result<ConceptTable, ConceptTsvError> {
        let mut table = ConceptTable::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| ConceptTsvError::Format {
                line: i + 1,
                msg: msg.to_string(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad("expected text, pattern_id, frequency"));
            }
            let text = cols[0].trim().to_lowercase();
            if text.is_empty() {
                return Err(bad("empty concept text"));
            }
            let pattern: PatternId = cols[1].parse().map_err(|e: UnknownPattern| bad(&e.to_string()))?;
            let frequency: u64 = cols[2].parse().map_err(|_| bad("bad frequency"))?;
            if frequency == 0 {
                return Err(bad("frequency must be at least 1"));
            }
            table.insert(ConceptEntry {
                text,
                pattern,
                signature: String::new(),
                frequency,
                first_seen: (i, 0),
            });
        }
        Ok(table)
    }
}

impl FromIterator<AcceptedMention> for ConceptTable {
    fn from_iter<I: IntoIterator<Item = AcceptedMention>>(iter: I) -> Self {
        let mut table = ConceptTable::new();
        for m in iter {
            table.add(&m);
        }
        table
    }
}

pub fn aggregate_concepts<'a, I>(mentions: I) -> ConceptTable
where
    I: IntoIterator<Item = &'a AcceptedMention>,
{
    let mut table = ConceptTable::new();
    for m in mentions {
        table.add(m);
    }
    table
}

pub fn mine(sentences: &[(usize, Sentence)]) -> ConceptTable {
    let mut table = ConceptTable::new();
    for (id, s) in sentences {
        for m in mine_sentence(*id, s) {
            table.add(&m);
        }
    }
    table
}

/// Splits the sentences into `shards` contiguous chunks, mines them in
/// parallel and merges the partial tables.
pub fn mine_sharded(sentences: &[(usize, Sentence)], shards: usize) -> ConceptTable {
    let shards = shards.max(1);
    let chunk = sentences.len().div_ceil(shards).max(1);
    sentences
        .par_chunks(chunk)
        .map(mine)
        .reduce(ConceptTable::new, |mut a, b| {
            a.merge(b);
            a
        })
}
