//! Scene-sound mention pairs and the dependency paths between them.
//!
//! A path is walked from the environment anchor to the concept anchor and
//! rendered as `edge() word edge() ... edge()`. Endpoints are never printed.
//! An intermediate word that sits inside either mention hides itself and the
//! edge label after it, so `park ... children playing` renders as
//! `nsubjpass() filled prepc_with() sound prep_of()`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{build_dep_graph, DepGraph, Sentence};

pub const DEFAULT_ENVIRONMENTS: &str = include_str!("../data/environments.txt");
pub const DEFAULT_POSITIVE_SEEDS: &str = include_str!("../data/paths.pos");
pub const DEFAULT_NEGATIVE_SEEDS: &str = include_str!("../data/paths.neg");

/// Upper bound on enumerated equal-length shortest paths per pair.
pub const MAX_SHORTEST_PATHS: usize = 4096;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("node {0} is not in the graph")]
    BadNode(usize),
    #[error("source and target are the same node")]
    SameNode,
    #[error("no path between {0} and {1}")]
    NoPath(usize, usize),
    #[error("seed path {0:?} is listed as both positive and negative")]
    OverlappingSeeds(String),
    #[error("environment lexicon is empty")]
    EmptyLexicon,
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Multiword phrase lookup by longest match over lowercased tokens.
#[derive(Debug, Clone, Default)]
pub struct PhraseMatcher {
    /// first word → candidate phrases, longest first
    by_first: HashMap<String, Vec<Vec<String>>>,
    len: usize,
}

impl PhraseMatcher {
    pub fn new<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut by_first: HashMap<String, Vec<Vec<String>>> = HashMap::new();
        let mut seen = HashSet::new();
        for p in phrases {
            let norm = normalize(p.as_ref());
            if norm.is_empty() || !seen.insert(norm.clone()) {
                continue;
            }
            let words: Vec<String> = norm.split(' ').map(String::from).collect();
            by_first.entry(words[0].clone()).or_default().push(words);
        }
        for v in by_first.values_mut() {
            v.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        }
        PhraseMatcher {
            by_first,
            len: seen.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Left-to-right scan; at each position takes the longest phrase that
    /// matches and resumes after it.
    pub fn scan(&self, sentence: &Sentence) -> Vec<(Span, String)> {
        let words: Vec<&str> = sentence.tokens.iter().map(|t| t.lower.as_str()).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let hit = self.by_first.get(words[i]).and_then(|cands| {
                cands
                    .iter()
                    .find(|c| c.len() <= words.len() - i && c.iter().zip(&words[i..]).all(|(a, b)| a == b))
            });
            match hit {
                Some(c) => {
                    out.push((
                        Span {
                            first: i + 1,
                            last: i + c.len(),
                        },
                        c.join(" "),
                    ));
                    i += c.len();
                }
                None => i += 1,
            }
        }
        out
    }
}

/// The acoustic environments scenes are drawn from.
#[derive(Debug, Clone)]
pub struct EnvironmentLexicon {
    names: Vec<String>,
    matcher: PhraseMatcher,
}

impl EnvironmentLexicon {
    pub fn new<I, S>(names: I) -> Result<Self, PathError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let names: Vec<String> = names
            .into_iter()
            .map(|n| normalize(n.as_ref()))
            .filter(|n| !n.is_empty() && seen.insert(n.clone()))
            .collect();
        if names.is_empty() {
            return Err(PathError::EmptyLexicon);
        }
        let matcher = PhraseMatcher::new(&names);
        Ok(EnvironmentLexicon { names, matcher })
    }

    /// One name per line; `#` lines are comments.
    pub fn parse(text: &str) -> Result<Self, PathError> {
        Self::new(text.lines().filter(|l| !l.trim_start().starts_with('#')))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn matcher(&self) -> &PhraseMatcher {
        &self.matcher
    }
}

impl Default for EnvironmentLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_ENVIRONMENTS).expect("bundled lexicon is valid")
    }
}

/// Inclusive 1-based token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub first: usize,
    pub last: usize,
}

impl Span {
    pub fn contains(&self, index: usize) -> bool {
        self.first <= index && index <= self.last
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.first <= other.last && other.first <= self.last
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub text: String,
    pub span: Span,
    pub anchor: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionPair {
    pub sentence: usize,
    pub concept: Mention,
    pub environment: Mention,
}

pub fn concept_anchor(sentence: &Sentence, span: Span) -> usize {
    (span.first..=span.last)
        .rev()
        .find(|&i| sentence.token(i).is_noun())
        .unwrap_or(span.last)
}

/// All concept × environment pairs with non-overlapping spans.
pub fn find_mention_pairs(
    sentence_ref: usize,
    sentence: &Sentence,
    concepts: &PhraseMatcher,
    lexicon: &EnvironmentLexicon,
) -> Vec<MentionPair> {
    let concept_hits = concepts.scan(sentence);
    if concept_hits.is_empty() {
        return Vec::new();
    }
    let env_hits = lexicon.matcher().scan(sentence);
    let mut out = Vec::new();
    for (cspan, ctext) in &concept_hits {
        for (espan, etext) in &env_hits {
            if cspan.overlaps(espan) {
                continue;
            }
            out.push(MentionPair {
                sentence: sentence_ref,
                concept: Mention {
                    text: ctext.clone(),
                    span: *cspan,
                    anchor: concept_anchor(sentence, *cspan),
                },
                environment: Mention {
                    text: etext.clone(),
                    span: *espan,
                    anchor: espan.last,
                },
            });
        }
    }
    out
}

/// A walk through the graph: `labels[i]` joins `nodes[i]` and `nodes[i+1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphPath {
    pub nodes: Vec<usize>,
    pub labels: Vec<String>,
}

impl GraphPath {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Every minimum-edge path from `from` to `to` on the undirected view, in
/// a fixed order (by neighbor index, then label). Enumeration stops after
/// [`MAX_SHORTEST_PATHS`].
pub fn shortest_paths(graph: &DepGraph, from: usize, to: usize) -> Result<Vec<GraphPath>, PathError> {
    for n in [from, to] {
        if !graph.contains(n) {
            return Err(PathError::BadNode(n));
        }
    }
    if from == to {
        return Err(PathError::SameNode);
    }
    // distances to the target
    let mut dist = vec![usize::MAX; graph.node_count() + 1];
    dist[to] = 0;
    let mut queue = VecDeque::from([to]);
    while let Some(n) = queue.pop_front() {
        for arc in graph.neighbors(n) {
            if dist[arc.neighbor] == usize::MAX {
                dist[arc.neighbor] = dist[n] + 1;
                queue.push_back(arc.neighbor);
            }
        }
    }
    if dist[from] == usize::MAX {
        return Err(PathError::NoPath(from, to));
    }

    let mut out = Vec::new();
    let mut nodes = vec![from];
    let mut labels = Vec::new();
    collect_paths(graph, &dist, &mut nodes, &mut labels, &mut out);
    Ok(out)
}

fn collect_paths(
    graph: &DepGraph,
    dist: &[usize],
    nodes: &mut Vec<usize>,
    labels: &mut Vec<String>,
    out: &mut Vec<GraphPath>,
) {
    if out.len() >= MAX_SHORTEST_PATHS {
        return;
    }
    let cur = *nodes.last().unwrap();
    if dist[cur] == 0 {
        out.push(GraphPath {
            nodes: nodes.clone(),
            labels: labels.clone(),
        });
        return;
    }
    for arc in graph.neighbors(cur) {
        if dist[arc.neighbor] + 1 == dist[cur] {
            nodes.push(arc.neighbor);
            labels.push(arc.label.clone());
            collect_paths(graph, dist, nodes, labels, out);
            nodes.pop();
            labels.pop();
        }
    }
}

/// Rendered path: edge labels with `()` alternating with intermediate words.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DepPath {
    pub items: Vec<String>,
    /// Edges in the underlying graph path, before suppression.
    pub length: usize,
}

impl DepPath {
    pub fn is_edge_item(item: &str) -> bool {
        item.ends_with("()")
    }
}

impl fmt::Display for DepPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.items.join(" "))
    }
}

/// Renders a path that runs from the environment anchor to the concept
/// anchor.
pub fn render_path(sentence: &Sentence, path: &GraphPath, pair: &MentionPair) -> DepPath {
    let in_mention =
        |i: usize| pair.concept.span.contains(i) || pair.environment.span.contains(i);
    let mut items = Vec::with_capacity(2 * path.len());
    let mut hide_edge = false;
    for (step, label) in path.labels.iter().enumerate() {
        if !hide_edge {
            items.push(format!("{label}()"));
        }
        hide_edge = false;
        let node = path.nodes[step + 1];
        if step + 1 == path.labels.len() {
            break;
        }
        if in_mention(node) {
            hide_edge = true;
        } else {
            items.push(sentence.token(node).surface.clone());
        }
    }
    DepPath {
        items,
        length: path.len(),
    }
}

/// Shortest path between the pair's anchors; equal-length candidates are
/// decided by the smallest rendered string.
pub fn shortest_dep_path(
    sentence: &Sentence,
    graph: &DepGraph,
    pair: &MentionPair,
) -> Result<(GraphPath, DepPath), PathError> {
    let candidates = shortest_paths(graph, pair.environment.anchor, pair.concept.anchor)?;
    candidates
        .into_iter()
        .map(|p| {
            let r = render_path(sentence, &p, pair);
            (r.to_string(), p, r)
        })
        .min_by(|a, b| a.0.cmp(&b.0))
        .map(|(_, p, r)| (p, r))
        .ok_or(PathError::NoPath(pair.environment.anchor, pair.concept.anchor))
}

/// One scene-sound pair observed with a rendered path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Occurrence {
    pub scene: String,
    pub concept: String,
    pub path: String,
    pub sentence: usize,
}

pub fn extract_occurrences(
    sentence_ref: usize,
    sentence: &Sentence,
    concepts: &PhraseMatcher,
    lexicon: &EnvironmentLexicon,
) -> Vec<Occurrence> {
    let pairs = find_mention_pairs(sentence_ref, sentence, concepts, lexicon);
    if pairs.is_empty() {
        return Vec::new();
    }
    let graph = build_dep_graph(sentence);
    pairs
        .iter()
        .filter_map(|pair| match shortest_dep_path(sentence, &graph, pair) {
            Ok((_, rendered)) => Some(Occurrence {
                scene: pair.environment.text.clone(),
                concept: pair.concept.text.clone(),
                path: rendered.to_string(),
                sentence: sentence_ref,
            }),
            Err(e) => {
                log::debug!(
                    "sentence {sentence_ref}: {} / {}: {e}",
                    pair.environment.text,
                    pair.concept.text
                );
                None
            }
        })
        .collect()
}

/// Path extraction over a corpus, sharded across threads. Output keeps
/// corpus order.
pub fn extract_all(
    sentences: &[(usize, Sentence)],
    concepts: &PhraseMatcher,
    lexicon: &EnvironmentLexicon,
) -> Vec<Occurrence> {
    sentences
        .par_iter()
        .flat_map_iter(|(id, s)| extract_occurrences(*id, s, concepts, lexicon))
        .collect()
}

/// Paths ranked by how many distinct (scene, concept) pairs they connect.
pub fn rank_paths_by_frequency(occurrences: &[Occurrence]) -> Vec<(String, usize)> {
    let mut pairs: BTreeMap<&str, BTreeSet<(&str, &str)>> = BTreeMap::new();
    for o in occurrences {
        pairs
            .entry(o.path.as_str())
            .or_default()
            .insert((o.scene.as_str(), o.concept.as_str()));
    }
    let mut ranked: Vec<(String, usize)> = pairs
        .into_iter()
        .map(|(p, s)| (p.to_string(), s.len()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

pub fn write_occurrences<W: Write>(mut out: W, occurrences: &[Occurrence]) -> std::io::Result<()> {
    for o in occurrences {
        writeln!(out, "{}\t{}\t{}\t{}", o.scene, o.concept, o.path, o.sentence)?;
    }
    Ok(())
}

pub fn read_occurrences<R: BufRead>(source: R) -> Result<Vec<Occurrence>, PathError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |msg: &str| PathError::Format {
            line: i + 1,
            msg: msg.to_string(),
        };
        if cols.len() != 4 {
            return Err(bad("expected scene, concept, path, sentence id"));
        }
        out.push(Occurrence {
            scene: cols[0].to_string(),
            concept: cols[1].to_string(),
            path: normalize(cols[2]),
            sentence: cols[3].parse().map_err(|_| bad("bad sentence id"))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationExample {
    pub path: String,
    pub scene: String,
    pub concept: String,
    pub label: Relation,
}

/// Reverses the item order of a rendered path.
pub fn reverse_path(path: &str) -> String {
    let mut items: Vec<&str> = path.split_whitespace().collect();
    items.reverse();
    items.join(" ")
}

/// Labeled seed path lists. A seed matches a path read in either
/// direction, since occurrences are always rendered scene to concept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedPaths {
    positive: BTreeSet<String>,
    negative: BTreeSet<String>,
}

fn parse_path_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .map(normalize)
        .filter(|l| !l.is_empty())
        .collect()
}

impl SeedPaths {
    pub fn new(positive: BTreeSet<String>, negative: BTreeSet<String>) -> Result<Self, PathError> {
        if let Some(p) = positive
            .iter()
            .find(|p| negative.contains(*p) || negative.contains(&reverse_path(p)))
        {
            return Err(PathError::OverlappingSeeds(p.clone()));
        }
        Ok(SeedPaths { positive, negative })
    }

    /// Parses two one-path-per-line lists.
    pub fn parse(positive: &str, negative: &str) -> Result<Self, PathError> {
        Self::new(parse_path_list(positive), parse_path_list(negative))
    }

    pub fn label(&self, path: &str) -> Option<Relation> {
        let path = normalize(path);
        let reversed = reverse_path(&path);
        let hit = |set: &BTreeSet<String>| set.contains(&path) || set.contains(&reversed);
        if hit(&self.positive) {
            Some(Relation::Positive)
        } else if hit(&self.negative) {
            Some(Relation::Negative)
        } else {
            None
        }
    }

    pub fn positive(&self) -> &BTreeSet<String> {
        &self.positive
    }

    pub fn negative(&self) -> &BTreeSet<String> {
        &self.negative
    }
}

impl Default for SeedPaths {
    fn default() -> Self {
        Self::parse(DEFAULT_POSITIVE_SEEDS, DEFAULT_NEGATIVE_SEEDS).expect("bundled seeds are disjoint")
    }
}

/// Labels each occurrence whose path is a seed; the rest are dropped.
pub fn generate_training_examples(occurrences: &[Occurrence], seeds: &SeedPaths) -> Vec<RelationExample> {
    occurrences
        .iter()
        .filter_map(|o| {
            seeds.label(&o.path).map(|label| RelationExample {
                path: o.path.clone(),
                scene: o.scene.clone(),
                concept: o.concept.clone(),
                label,
            })
        })
        .collect()
}
