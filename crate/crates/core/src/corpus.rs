//! Reader for `.ann` annotated corpora.
//!
//! One token per line, five TAB-separated columns:
//!
//! ```text
//! index  surface  pos  head  label
//! ```
//!
//! Sentences are separated by blank lines and `#` lines are comments. A head
//! of `0` marks the root token. A head and label of `_` marks a token that
//! carries no dependency of its own, which is how collapsed prepositions
//! (`with`, `of` folded into `prep_with`, `prep_of`) appear in the input.

use std::fmt;
use std::io::BufRead;

use thiserror::Error;

/// Index of the root pseudo-node.
pub const ROOT: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// 1-based position in the sentence.
    pub index: usize,
    pub surface: String,
    pub lower: String,
    pub pos: String,
}

impl Token {
    pub fn new(index: usize, surface: &str, pos: &str) -> Self {
        Token {
            index,
            surface: surface.to_string(),
            lower: surface.to_lowercase(),
            pos: pos.to_string(),
        }
    }

    pub fn is_noun(&self) -> bool {
        self.pos.starts_with("NN")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DepEdge {
    pub label: String,
    /// Token index of the head, or [`ROOT`].
    pub head: usize,
    pub dependent: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub edges: Vec<DepEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("expected 5 TAB-separated columns, found {0}")]
    ColumnCount(usize),
    #[error("non-integer token index {0:?}")]
    BadIndex(String),
    #[error("non-integer head {0:?}")]
    BadHead(String),
    #[error("empty field in column {0}")]
    EmptyField(usize),
    #[error("duplicate token index {0}")]
    DuplicateIndex(usize),
    #[error("token index {found} out of sequence, expected {expected}")]
    IndexGap { expected: usize, found: usize },
    #[error("head out of range: {head} in a {len}-token sentence")]
    HeadOutOfRange { head: usize, len: usize },
    #[error("head and label must both be `_` or both be set")]
    HalfAttached,
    #[error("expected exactly one root edge, found {0}")]
    RootCount(usize),
    #[error("token {0} is not reachable from the root")]
    Unreachable(usize),
    #[error("empty block")]
    EmptyBlock,
}

/// A malformed sentence block. `line` is 1-based and points at the offending
/// line, or at the first line of the block for whole-sentence problems.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token at a 1-based index.
    pub fn token(&self, index: usize) -> &Token {
        &self.tokens[index - 1]
    }

    pub fn root_token(&self) -> Option<usize> {
        self.edges.iter().find(|e| e.head == ROOT).map(|e| e.dependent)
    }

    /// Serializes back to the block format (without the trailing blank line).
    pub fn to_block(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            let edge = self.edges.iter().find(|e| e.dependent == tok.index);
            let (head, label) = match edge {
                Some(e) => (e.head.to_string(), e.label.as_str()),
                None => ("_".to_string(), "_"),
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                tok.index, tok.surface, tok.pos, head, label
            ));
        }
        out
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let words: Vec<&str> = self.tokens.iter().map(|t| t.surface.as_str()).collect();
        f.write_str(&words.join(" "))
    }
}

/// Parses one block of `(line number, line)` pairs. Comment lines must
/// already be removed.
pub fn parse_block(lines: &[(usize, &str)]) -> Result<Sentence, ParseError> {
    let first_line = lines.first().map(|(n, _)| *n).unwrap_or(0);
    if lines.is_empty() {
        return Err(ParseError {
            line: first_line,
            kind: ParseErrorKind::EmptyBlock,
        });
    }
    let err = |line, kind| ParseError { line, kind };

    let mut tokens = Vec::with_capacity(lines.len());
    // (line, head, label) per token; head None = detached
    let mut heads: Vec<(usize, Option<usize>, String)> = Vec::with_capacity(lines.len());
    for &(line_no, line) in lines {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(err(line_no, ParseErrorKind::ColumnCount(cols.len())));
        }
        if let Some(i) = cols.iter().position(|c| c.is_empty()) {
            return Err(err(line_no, ParseErrorKind::EmptyField(i + 1)));
        }
        let index: usize = cols[0]
            .parse()
            .map_err(|_| err(line_no, ParseErrorKind::BadIndex(cols[0].to_string())))?;
        let expected = tokens.len() + 1;
        if index != expected {
            let kind = if index >= 1 && index < expected {
                ParseErrorKind::DuplicateIndex(index)
            } else {
                ParseErrorKind::IndexGap {
                    expected,
                    found: index,
                }
            };
            return Err(err(line_no, kind));
        }
        let head = match (cols[3], cols[4]) {
            ("_", "_") => None,
            ("_", _) | (_, "_") => return Err(err(line_no, ParseErrorKind::HalfAttached)),
            (h, _) => Some(
                h.parse::<usize>()
                    .map_err(|_| err(line_no, ParseErrorKind::BadHead(h.to_string())))?,
            ),
        };
        tokens.push(Token::new(index, cols[1], cols[2]));
        heads.push((line_no, head, cols[4].to_string()));
    }

    let len = tokens.len();
    let mut edges = Vec::new();
    for (i, (line_no, head, label)) in heads.iter().enumerate() {
        if let Some(head) = *head {
            if head > len {
                return Err(err(*line_no, ParseErrorKind::HeadOutOfRange { head, len }));
            }
            edges.push(DepEdge {
                label: label.clone(),
                head,
                dependent: i + 1,
            });
        }
    }

    let roots = edges.iter().filter(|e| e.head == ROOT).count();
    if roots != 1 {
        return Err(err(first_line, ParseErrorKind::RootCount(roots)));
    }

    // Each attached token has a single head, so following heads upward must
    // reach the root within `len` steps unless there is a cycle.
    let mut head_of = vec![None; len + 1];
    for e in &edges {
        head_of[e.dependent] = Some(e.head);
    }
    for e in &edges {
        let mut cur = e.dependent;
        let mut steps = 0;
        while cur != ROOT {
            match head_of[cur] {
                Some(h) => cur = h,
                None => break,
            }
            steps += 1;
            if steps > len {
                break;
            }
        }
        if cur != ROOT {
            return Err(err(
                heads[e.dependent - 1].0,
                ParseErrorKind::Unreachable(e.dependent),
            ));
        }
    }

    Ok(Sentence { tokens, edges })
}

/// Lazily parses sentences from an `.ann` stream.
///
/// Malformed blocks come out as `Err(CorpusError::Parse(..))` and iteration
/// continues with the next block; only I/O failures end the stream.
pub fn parse_annotated_corpus<R: BufRead>(source: R) -> SentenceReader<R> {
    SentenceReader {
        lines: source.lines(),
        line_no: 0,
        done: false,
    }
}

pub struct SentenceReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    done: bool,
}

impl<R: BufRead> Iterator for SentenceReader<R> {
    type Item = Result<Sentence, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut block: Vec<(usize, String)> = Vec::new();
        loop {
            match self.lines.next() {
                None => {
                    self.done = true;
                    break;
                }
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
                Some(Ok(line)) => {
                    self.line_no += 1;
                    let line = line.trim_end_matches('\r');
                    if line.trim().is_empty() {
                        if block.is_empty() {
                            continue;
                        }
                        break;
                    }
                    if line.starts_with('#') {
                        continue;
                    }
                    block.push((self.line_no, line.to_string()));
                }
            }
        }
        if block.is_empty() {
            return None;
        }
        let borrowed: Vec<(usize, &str)> = block.iter().map(|(n, l)| (*n, l.as_str())).collect();
        Some(parse_block(&borrowed).map_err(CorpusError::from))
    }
}

/// Reads every sentence of a corpus, numbering blocks in file order. Bad
/// blocks are logged and skipped; their ordinal is still consumed so ids
/// stay stable when a block is fixed.
pub fn read_corpus<R: BufRead>(source: R) -> Result<(Vec<(usize, Sentence)>, usize), std::io::Error> {
    let mut sentences = Vec::new();
    let mut skipped = 0;
    for (ordinal, item) in parse_annotated_corpus(source).enumerate() {
        match item {
            Ok(s) => sentences.push((ordinal, s)),
            Err(CorpusError::Parse(e)) => {
                log::warn!("skipping sentence {ordinal}: {e}");
                skipped += 1;
            }
            Err(CorpusError::Io(e)) => return Err(e),
        }
    }
    Ok((sentences, skipped))
}

/// One traversal arc as seen from a node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arc {
    pub neighbor: usize,
    pub label: String,
    /// `true` when the viewing node is the head of the edge.
    pub outgoing: bool,
}

/// Undirected view of a sentence's dependencies. The root edge is left out,
/// so traversal never passes through the root pseudo-node.
#[derive(Debug, Clone)]
pub struct DepGraph {
    /// Slot 0 is the root and always empty.
    adjacency: Vec<Vec<Arc>>,
    edge_count: usize,
}

impl DepGraph {
    pub fn node_count(&self) -> usize {
        self.adjacency.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn neighbors(&self, node: usize) -> &[Arc] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn contains(&self, node: usize) -> bool {
        node != ROOT && node < self.adjacency.len()
    }

    /// Builds a graph over `n` nodes from raw `(head, dependent, label)`
    /// triples. Edges touching [`ROOT`] are ignored.
    pub fn from_edges<'a, I>(n: usize, edges: I) -> DepGraph
    where
        I: IntoIterator<Item = (usize, usize, &'a str)>,
    {
        let mut adjacency = vec![Vec::new(); n + 1];
        let mut edge_count = 0;
        for (head, dep, label) in edges {
            if head == ROOT || dep == ROOT {
                continue;
            }
            adjacency[head].push(Arc {
                neighbor: dep,
                label: label.to_string(),
                outgoing: true,
            });
            adjacency[dep].push(Arc {
                neighbor: head,
                label: label.to_string(),
                outgoing: false,
            });
            edge_count += 1;
        }
        for arcs in &mut adjacency {
            arcs.sort_by(|a, b| a.neighbor.cmp(&b.neighbor).then_with(|| a.label.cmp(&b.label)));
        }
        DepGraph {
            adjacency,
            edge_count,
        }
    }

    /// Recovers the directed non-root edges, sorted.
    pub fn directed_edges(&self) -> Vec<DepEdge> {
        let mut out: Vec<DepEdge> = self
            .adjacency
            .iter()
            .enumerate()
            .flat_map(|(node, arcs)| {
                arcs.iter().filter(|a| a.outgoing).map(move |a| DepEdge {
                    label: a.label.clone(),
                    head: node,
                    dependent: a.neighbor,
                })
            })
            .collect();
        out.sort();
        out
    }
}

pub fn build_dep_graph(sentence: &Sentence) -> DepGraph {
    DepGraph::from_edges(
        sentence.len(),
        sentence
            .edges
            .iter()
            .map(|e| (e.head, e.dependent, e.label.as_str())),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::fixtures::PARK;

    fn parse_one(text: &str) -> Result<Sentence, CorpusError> {
        parse_annotated_corpus(text.as_bytes()).next().unwrap()
    }

    fn parse_err(text: &str) -> ParseError {
        match parse_one(text) {
            Err(CorpusError::Parse(e)) => e,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_block() {
        let s = parse_one("1\tThe\tDT\t2\tdet\n2\tpark\tNN\t0\troot\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.root_token(), Some(2));
        assert_eq!(s.token(2).surface, "park");
        assert_eq!(s.token(1).lower, "the");
    }

    #[test]
    fn head_out_of_range() {
        let e = parse_err("1\ta\tDT\t2\tdet\n2\tb\tNN\t0\troot\n3\tc\tNN\t5\tdep\n");
        assert_eq!(e.line, 3);
        assert_eq!(e.kind, ParseErrorKind::HeadOutOfRange { head: 5, len: 3 });
        assert!(e.to_string().contains("head out of range"));
    }

    #[test]
    fn park_sentence_edges() {
        let s = parse_one(PARK).unwrap();
        assert_eq!(s.len(), 10);
        let mut got: Vec<(String, usize, usize)> = s
            .edges
            .iter()
            .map(|e| (e.label.clone(), e.head, e.dependent))
            .collect();
        got.sort();
        let mut want: Vec<(String, usize, usize)> = [
            ("det", 2, 1),
            ("nsubjpass", 4, 2),
            ("auxpass", 4, 3),
            ("root", 0, 4),
            ("det", 7, 6),
            ("nsubj", 10, 7),
            ("prep_of", 7, 9),
            ("prepc_with", 4, 10),
        ]
        .iter()
        .map(|(l, h, d)| (l.to_string(), *h, *d))
        .collect();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(
            parse_err("x\ta\tNN\t0\troot\n").kind,
            ParseErrorKind::BadIndex(_)
        ));
        assert!(matches!(
            parse_err("1\ta\tNN\tz\troot\n").kind,
            ParseErrorKind::BadHead(_)
        ));
        assert_eq!(
            parse_err("1\ta\tNN\t0\troot\n1\tb\tNN\t1\tdep\n").kind,
            ParseErrorKind::DuplicateIndex(1)
        );
        assert_eq!(
            parse_err("1\ta\tNN\t0\troot\n3\tb\tNN\t1\tdep\n").kind,
            ParseErrorKind::IndexGap {
                expected: 2,
                found: 3
            }
        );
        assert_eq!(
            parse_err("1\ta\tNN\t2\tdep\n2\tb\tNN\t1\tdep\n").kind,
            ParseErrorKind::RootCount(0)
        );
        assert_eq!(
            parse_err("1\ta\tNN\t0\troot\n2\tb\tNN\t0\troot\n").kind,
            ParseErrorKind::RootCount(2)
        );
        // 2 and 3 form a cycle detached from the root
        assert_eq!(
            parse_err("1\ta\tNN\t0\troot\n2\tb\tNN\t3\tdep\n3\tc\tNN\t2\tdep\n").kind,
            ParseErrorKind::Unreachable(2)
        );
        assert_eq!(parse_err("1\ta\tNN\t0\n").kind, ParseErrorKind::ColumnCount(4));
        assert_eq!(parse_block(&[]).unwrap_err().kind, ParseErrorKind::EmptyBlock);
    }

    #[test]
    fn bad_block_does_not_abort_stream() {
        let text = format!("# header\n\n1\ta\tNN\t9\troot\n\n{PARK}\n\n1\tb\tNN\t0\troot\n");
        let items: Vec<_> = parse_annotated_corpus(text.as_bytes()).collect();
        assert_eq!(items.len(), 3);
        match &items[0] {
            Err(CorpusError::Parse(e)) => assert_eq!(e.line, 3),
            other => panic!("{other:?}"),
        }
        assert_eq!(items[1].as_ref().unwrap().len(), 10);
        assert_eq!(items[2].as_ref().unwrap().len(), 1);
    }

    #[test]
    fn park_graph_degrees() {
        let s = parse_one(PARK).unwrap();
        let g = build_dep_graph(&s);
        assert_eq!(g.node_count(), 10);
        assert_eq!(g.edge_count(), 7);
        // nsubjpass, auxpass, prepc_with; the root edge is not traversable
        assert_eq!(g.degree(4), 3);
        let incident = s.edges.iter().filter(|e| e.head == 4 || e.dependent == 4).count();
        assert_eq!(incident, 4);
        assert_eq!(g.degree(5), 0);
        assert!(g.neighbors(4).iter().any(|a| a.neighbor == 2 && a.outgoing));
        assert!(g.neighbors(2).iter().any(|a| a.neighbor == 4 && !a.outgoing));
    }

    #[test]
    fn single_token_graph() {
        let s = parse_one("1\tmusic\tNN\t0\troot\n").unwrap();
        let g = build_dep_graph(&s);
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn read_corpus_skips_and_numbers() {
        let text = format!("1\ta\tNN\t9\troot\n\n{PARK}");
        let (sents, skipped) = read_corpus(text.as_bytes()).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(sents.len(), 1);
        assert_eq!(sents[0].0, 1);
    }
}
