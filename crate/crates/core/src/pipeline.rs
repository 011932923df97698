//! The CLI subcommands as library functions.
//!
//! Each command reads its inputs, writes its output files and returns a
//! short text summary for the terminal. Every output file starts with a
//! provenance line (tool version, seed, input digests); JSON models carry
//! the same line in a `provenance` field.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{read_corpus, Sentence};
use crate::embeddings::{featurize, load_embeddings, EmbeddingError, EmbeddingStore, FeatureKind};
use crate::format::{fmt_sig9, header_line};
use crate::kb::{format_report, read_predictions, write_predictions, KnowledgeBase, Prediction};
use crate::lstm::{init_params, train, PathVocab, RelationModel, TrainConfig};
use crate::paths::{
    extract_all, generate_training_examples, rank_paths_by_frequency, read_occurrences, write_occurrences,
    EnvironmentLexicon, PhraseMatcher, Relation, SeedPaths, DEFAULT_NEGATIVE_SEEDS, DEFAULT_POSITIVE_SEEDS,
};
use crate::patterns::{mine_sharded, ConceptTable, PatternId};
use crate::phrase::{
    cross_validate_features, predict, read_labeled_tsv, train as train_svm, Hyperparams, Label, PhraseModel,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Data(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?)
        .map_err(|_| PipelineError::Data(format!("{}: not valid UTF-8", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(format!("{}: {e}", path.display()))
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Named input contents for provenance headers.
struct Inputs(Vec<(String, Vec<u8>)>);

impl Inputs {
    fn new() -> Self {
        Inputs(Vec::new())
    }

    fn add(&mut self, path: &Path, bytes: Vec<u8>) -> &[u8] {
        self.0.push((file_label(path), bytes));
        &self.0.last().unwrap().1
    }

    fn header(&self, command: &str, seed: Option<u64>) -> String {
        let refs: Vec<(&str, &[u8])> = self.0.iter().map(|(n, b)| (n.as_str(), b.as_slice())).collect();
        header_line(command, seed, &refs)
    }
}

/// Reads and concatenates corpora, numbering sentences across files.
fn load_corpora(paths: &[PathBuf], inputs: &mut Inputs) -> Result<(Vec<(usize, Sentence)>, usize)> {
    if paths.is_empty() {
        return Err(PipelineError::Usage("at least one --corpus is required".into()));
    }
    let mut all = Vec::new();
    let mut skipped = 0;
    let mut offset = 0;
    for path in paths {
        let bytes = inputs.add(path, read_bytes(path)?);
        let (sentences, bad) = read_corpus(bytes).map_err(|e| data_err(path, e))?;
        let blocks = sentences.len() + bad;
        all.extend(sentences.into_iter().map(|(i, s)| (i + offset, s)));
        offset += blocks;
        skipped += bad;
    }
    Ok((all, skipped))
}

fn load_store(path: &Path, inputs: &mut Inputs) -> Result<EmbeddingStore> {
    let bytes = inputs.add(path, read_bytes(path)?);
    load_embeddings(bytes).map_err(|e| data_err(path, e))
}

fn load_lexicon(path: Option<&Path>, inputs: &mut Inputs) -> Result<EnvironmentLexicon> {
    match path {
        None => Ok(EnvironmentLexicon::default()),
        Some(p) => {
            let text = read_text(p)?;
            inputs.add(p, text.clone().into_bytes());
            EnvironmentLexicon::parse(&text).map_err(|e| data_err(p, e))
        }
    }
}

pub struct MineOptions {
    pub corpus: Vec<PathBuf>,
    pub out: PathBuf,
    pub shards: usize,
    /// Most frequent concepts per pattern, for manual inspection.
    pub top_out: Option<(PathBuf, usize)>,
}

/// Mines concepts and writes `concepts.tsv`. Returns per-pattern counts.
pub fn cmd_mine(opts: &MineOptions) -> Result<String> {
    let mut inputs = Inputs::new();
    let (sentences, skipped) = load_corpora(&opts.corpus, &mut inputs)?;
    let table = mine_sharded(&sentences, opts.shards);

    let mut buf = Vec::new();
    writeln!(buf, "{}", inputs.header("mine", None)).unwrap();
    table.write_tsv(&mut buf).unwrap();
    write_bytes(&opts.out, &buf)?;

    if let Some((path, k)) = &opts.top_out {
        let mut top = format!("{}\npattern\trank\tconcept\tfrequency\n", inputs.header("mine", None));
        for p in PatternId::ALL {
            let ranked = table.sorted().into_iter().filter(|e| e.pattern == p).take(*k);
            for (rank, e) in ranked.enumerate() {
                top.push_str(&format!("{p}\t{}\t{}\t{}\n", rank + 1, e.text, e.frequency));
            }
        }
        write_bytes(path, top.as_bytes())?;
    }

    let mut report = format!(
        "{} sentences read, {skipped} skipped, {} concepts\n",
        sentences.len() + skipped,
        table.len()
    );
    report.push_str("pattern\tshape\tconcepts\tmentions\n");
    for (p, (concepts, mentions)) in table.pattern_counts() {
        report.push_str(&format!("{p}\t<X> of {}\t{concepts}\t{mentions}\n", p.shape()));
    }
    Ok(report)
}

pub struct TrainPhraseOptions {
    pub data: PathBuf,
    pub embeddings: PathBuf,
    pub featurizer: FeatureKind,
    pub folds: usize,
    pub hyperparams: Hyperparams,
    pub out: PathBuf,
    pub report_out: Option<PathBuf>,
}

/// k-fold cross-validation, then a final model on all usable rows.
pub fn cmd_train_phrase(opts: &TrainPhraseOptions) -> Result<String> {
    let mut inputs = Inputs::new();
    let data_bytes = inputs.add(&opts.data, read_bytes(&opts.data)?).to_vec();
    let rows = read_labeled_tsv(&data_bytes[..]).map_err(|e| data_err(&opts.data, e))?;
    let store = load_store(&opts.embeddings, &mut inputs)?;
    let header = inputs.header("train-phrase", Some(opts.hyperparams.seed));

    let mut features = Vec::new();
    let mut skipped = Vec::new();
    for r in &rows {
        match featurize(&store, opts.featurizer, (&r.bigram.0, &r.bigram.1)) {
            Ok(f) => features.push((f.values, r.label)),
            Err(EmbeddingError::Unrepresentable(a, b)) => {
                log::warn!("skipping unrepresentable phrase {a:?} {b:?}");
                skipped.push(format!("{a} {b}"));
            }
            Err(e) => return Err(data_err(&opts.data, e)),
        }
    }
    let cv = cross_validate_features(&features, opts.featurizer, opts.folds, opts.hyperparams)
        .map_err(|e| data_err(&opts.data, e))?;
    let model = train_svm(&features, opts.hyperparams).map_err(|e| data_err(&opts.data, e))?;
    let pm = PhraseModel {
        kind: opts.featurizer,
        model,
    };
    write_bytes(&opts.out, pm.to_json(&header).as_bytes())?;

    let count = |l: Label| features.iter().filter(|(_, y)| *y == l).count();
    let mut report = format!(
        "{header}\n{} examples ({} sound, {} non-sound), {} unrepresentable skipped\n",
        features.len(),
        count(Label::Sound),
        count(Label::NonSound),
        skipped.len()
    );
    for s in &skipped {
        report.push_str(&format!("unrepresentable\t{s}\n"));
    }
    report.push_str(&cv.table());
    if let Some(path) = &opts.report_out {
        write_bytes(path, report.as_bytes())?;
    }
    Ok(report)
}

pub struct ClassifyOptions {
    pub model: PathBuf,
    pub embeddings: PathBuf,
    pub phrases: PathBuf,
    pub out: PathBuf,
}

/// Labels `word1<TAB>word2` rows; writes `word1, word2, label, margin`.
pub fn cmd_classify(opts: &ClassifyOptions) -> Result<String> {
    let mut inputs = Inputs::new();
    let model_text = read_text(&opts.model)?;
    inputs.add(&opts.model, model_text.clone().into_bytes());
    let pm = PhraseModel::from_json(&model_text).map_err(|e| data_err(&opts.model, e))?;
    let store = load_store(&opts.embeddings, &mut inputs)?;
    let phrases = read_text(&opts.phrases)?;
    inputs.add(&opts.phrases, phrases.clone().into_bytes());

    let mut buf = Vec::new();
    writeln!(buf, "{}", inputs.header("classify", None)).unwrap();
    let (mut n, mut sound, mut unrep) = (0, 0, 0);
    for (i, line) in phrases.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 {
            return Err(data_err(&opts.phrases, format!("line {}: expected word1, word2", i + 1)));
        }
        n += 1;
        match featurize(&store, pm.kind, (cols[0], cols[1])) {
            Ok(f) => {
                let (label, margin) = predict(&pm.model, &f.values).map_err(|e| data_err(&opts.model, e))?;
                sound += usize::from(label == Label::Sound);
                writeln!(buf, "{}\t{}\t{label}\t{}", cols[0], cols[1], fmt_sig9(margin)).unwrap();
            }
            Err(EmbeddingError::Unrepresentable(..)) => {
                unrep += 1;
                writeln!(buf, "{}\t{}\tunrepresentable\t", cols[0], cols[1]).unwrap();
            }
            Err(e) => return Err(data_err(&opts.phrases, e)),
        }
    }
    write_bytes(&opts.out, &buf)?;
    Ok(format!("{n} phrases: {sound} sound, {} non-sound, {unrep} unrepresentable\n", n - sound - unrep))
}

pub struct PathsOptions {
    pub corpus: Vec<PathBuf>,
    pub concepts: PathBuf,
    pub lexicon: Option<PathBuf>,
    pub out: PathBuf,
    pub freq_out: Option<PathBuf>,
    /// Rows of the frequency table to print (all when `None`).
    pub top_paths: Option<usize>,
}

/// Writes path occurrences; returns (and optionally writes) the path
/// frequency table.
pub fn cmd_paths(opts: &PathsOptions) -> Result<String> {
    let mut inputs = Inputs::new();
    let (sentences, skipped) = load_corpora(&opts.corpus, &mut inputs)?;
    let concept_bytes = inputs.add(&opts.concepts, read_bytes(&opts.concepts)?);
    let table = ConceptTable::read_tsv(concept_bytes).map_err(|e| data_err(&opts.concepts, e))?;
    let lexicon = load_lexicon(opts.lexicon.as_deref(), &mut inputs)?;
    let matcher = PhraseMatcher::new(table.entries().map(|e| e.text.as_str()));
    let header = inputs.header("paths", None);

    let occurrences = extract_all(&sentences, &matcher, &lexicon);
    let mut buf = Vec::new();
    writeln!(buf, "{header}").unwrap();
    write_occurrences(&mut buf, &occurrences).unwrap();
    write_bytes(&opts.out, &buf)?;

    let ranked = rank_paths_by_frequency(&occurrences);
    let mut freq = format!("{header}\npath\tpairs\n");
    for (path, count) in ranked.iter().take(opts.top_paths.unwrap_or(usize::MAX)) {
        freq.push_str(&format!("{path}\t{count}\n"));
    }
    if let Some(p) = &opts.freq_out {
        write_bytes(p, freq.as_bytes())?;
    }
    Ok(format!(
        "{} sentences, {skipped} skipped, {} occurrences, {} distinct paths\n{freq}",
        sentences.len() + skipped,
        occurrences.len(),
        ranked.len()
    ))
}

pub struct TrainRelationOptions {
    pub occurrences: PathBuf,
    pub seeds_pos: Option<PathBuf>,
    pub seeds_neg: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Embedding width when no pretrained vectors are given.
    pub dim: usize,
    pub config: TrainConfig,
    pub out: PathBuf,
    pub trace_out: Option<PathBuf>,
}

pub fn cmd_train_relation(opts: &TrainRelationOptions) -> Result<String> {
    let mut inputs = Inputs::new();
    let occ_bytes = inputs.add(&opts.occurrences, read_bytes(&opts.occurrences)?);
    let occurrences = read_occurrences(occ_bytes).map_err(|e| data_err(&opts.occurrences, e))?;
    let mut seed_text = |p: &Option<PathBuf>, default: &str| -> Result<String> {
        match p {
            Some(p) => {
                let t = read_text(p)?;
                inputs.add(p, t.clone().into_bytes());
                Ok(t)
            }
            None => Ok(default.to_string()),
        }
    };
    let pos = seed_text(&opts.seeds_pos, DEFAULT_POSITIVE_SEEDS)?;
    let neg = seed_text(&opts.seeds_neg, DEFAULT_NEGATIVE_SEEDS)?;
    let seeds = SeedPaths::parse(&pos, &neg).map_err(|e| PipelineError::Data(e.to_string()))?;
    let store = match &opts.embeddings {
        Some(p) => Some(load_store(p, &mut inputs)?),
        None => None,
    };
    let header = inputs.header("train-relation", Some(opts.config.seed));

    let examples = generate_training_examples(&occurrences, &seeds);
    let count = |l: Relation| examples.iter().filter(|e| e.label == l).count();
    let (n_pos, n_neg) = (count(Relation::Positive), count(Relation::Negative));
    if n_pos == 0 || n_neg == 0 {
        return Err(PipelineError::Data(format!(
            "seed paths label {n_pos} positive and {n_neg} negative occurrences; need at least one of each"
        )));
    }
    let d = store.as_ref().map_or(opts.dim, EmbeddingStore::dim);
    let vocab = PathVocab::build(examples.iter().map(|e| e.path.as_str()), store.as_ref());
    let cfg = &opts.config;
    let mut params = init_params(&vocab, d, cfg.hidden, store.as_ref(), cfg.seed, cfg.init_scale)
        .map_err(|e| PipelineError::Data(e.to_string()))?;
    let trace = train(&mut params, &vocab, &examples, cfg).map_err(|e| PipelineError::Data(e.to_string()))?;

    let model = RelationModel { vocab, params };
    write_bytes(&opts.out, model.to_json(&header).as_bytes())?;

    let mut trace_text = format!("{header}\nepoch\tloss\taccuracy\n");
    for s in &trace {
        trace_text.push_str(&format!("{}\t{}\t{:.4}\n", s.epoch, fmt_sig9(s.loss), s.accuracy));
    }
    if let Some(p) = &opts.trace_out {
        write_bytes(p, trace_text.as_bytes())?;
    }
    let last = trace.last().expect("epochs >= 1");
    Ok(format!(
        "{} labeled examples ({n_pos} positive, {n_neg} negative) from {} occurrences\n\
         vocabulary {} tokens, d={d}, h={}\nfinal epoch {}: loss {:.6}, training accuracy {:.4}\n",
        examples.len(),
        occurrences.len(),
        model.vocab.len(),
        cfg.hidden,
        last.epoch,
        last.loss,
        last.accuracy
    ))
}

pub struct PredictOptions {
    pub model: PathBuf,
    pub occurrences: PathBuf,
    pub out: PathBuf,
}

/// Scores every occurrence: `scene, concept, path, p_positive`.
pub fn cmd_predict(opts: &PredictOptions) -> Result<String> {
    let mut inputs = Inputs::new();
    let model_text = read_text(&opts.model)?;
    inputs.add(&opts.model, model_text.clone().into_bytes());
    let model = RelationModel::from_json(&model_text).map_err(|e| data_err(&opts.model, e))?;
    let occ_bytes = inputs.add(&opts.occurrences, read_bytes(&opts.occurrences)?);
    let occurrences = read_occurrences(occ_bytes).map_err(|e| data_err(&opts.occurrences, e))?;

    let mut rows = Vec::with_capacity(occurrences.len());
    for o in &occurrences {
        let p = model.predict(&o.path).map_err(|e| data_err(&opts.occurrences, e))?;
        rows.push(Prediction {
            scene: o.scene.clone(),
            concept: o.concept.clone(),
            path: o.path.clone(),
            p_positive: p[0],
        });
    }
    let mut buf = Vec::new();
    writeln!(buf, "{}", inputs.header("predict", None)).unwrap();
    write_predictions(&mut buf, &rows).unwrap();
    write_bytes(&opts.out, &buf)?;
    Ok(format!("{} occurrences scored\n", rows.len()))
}

pub struct ReportOptions {
    pub kb: PathBuf,
    pub lexicon: Option<PathBuf>,
    pub threshold: f64,
    pub top_k: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Per-scene sound lists from scored predictions.
pub fn cmd_report(opts: &ReportOptions) -> Result<String> {
    if !(opts.threshold.is_finite() && opts.threshold >= 0.0) {
        return Err(PipelineError::Usage("--threshold must be a non-negative number".into()));
    }
    let mut inputs = Inputs::new();
    let kb_bytes = inputs.add(&opts.kb, read_bytes(&opts.kb)?);
    let rows = read_predictions(kb_bytes).map_err(|e| data_err(&opts.kb, e))?;
    let lexicon = load_lexicon(opts.lexicon.as_deref(), &mut inputs)?;
    let kb = KnowledgeBase::from_predictions(&rows, &lexicon, opts.threshold).map_err(|e| data_err(&opts.kb, e))?;
    let text = format!(
        "{} threshold={}\n{}",
        inputs.header("report", None),
        opts.threshold,
        format_report(&kb.scene_report(&lexicon, opts.threshold, opts.top_k))
    );
    if let Some(p) = &opts.out {
        write_bytes(p, text.as_bytes())?;
    }
    Ok(text)
}
