//! Sound / non-sound bigram classification with a linear SVM.
//!
//! Training is stochastic subgradient descent on the L2-regularized hinge
//! loss with step size `1 / (reg * t)` and a reshuffle every epoch. The bias
//! is a separate scalar and is not regularized.

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{featurize, EmbeddingError, EmbeddingStore, FeatureKind};
use crate::format::round_sig9;

pub const DEFAULT_REG: f64 = 1e-4;
pub const DEFAULT_EPOCHS: usize = 50;
pub const MODEL_FORMAT: &str = "soundkb-linear-svm";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("training data needs at least one example of each label")]
    SingleClass,
    #[error("regularization must be positive and epochs at least 1")]
    BadHyperparams,
    #[error("dataset has {size} examples, fewer than {k} folds")]
    TooFewExamples { size: usize, k: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("model file: {0}")]
    Model(String),
    #[error("line {line}: {msg}")]
    Data { line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Sound,
    NonSound,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Sound => 1.0,
            Label::NonSound => -1.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Sound => "+1",
            Label::NonSound => "-1",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "+1" | "1" => Ok(Label::Sound),
            "-1" => Ok(Label::NonSound),
            other => Err(format!("label must be +1 or -1, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPhrase {
    pub bigram: (String, String),
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub reg: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            reg: DEFAULT_REG,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub hyperparams: Hyperparams,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        LinearModel {
            weights: vec![0.0; dim],
            bias: 0.0,
            hyperparams: Hyperparams::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn margin(&self, feature: &[f64]) -> Result<f64, ClassifierError> {
        if feature.len() != self.dim() {
            return Err(ClassifierError::Dimension {
                expected: self.dim(),
                found: feature.len(),
            });
        }
        Ok(dot(&self.weights, feature) + self.bias)
    }

    /// Regularized hinge objective over a dataset.
    pub fn objective(&self, examples: &[(Vec<f64>, Label)]) -> f64 {
        let reg = self.hyperparams.reg;
        let hinge: f64 = examples
            .iter()
            .map(|(x, y)| (1.0 - y.sign() * (dot(&self.weights, x) + self.bias)).max(0.0))
            .sum::<f64>()
            / examples.len() as f64;
        hinge + 0.5 * reg * dot(&self.weights, &self.weights)
    }
}

/// `(label, margin)`. A margin of exactly zero is classified non-sound.
pub fn predict(model: &LinearModel, feature: &[f64]) -> Result<(Label, f64), ClassifierError> {
    let m = model.margin(feature)?;
    let label = if m > 0.0 { Label::Sound } else { Label::NonSound };
    Ok((label, m))
}

/// Stochastic subgradient descent on the regularized hinge loss with
/// step `1 / (reg * t)` and an unregularized bias. Weights are projected
/// onto the ball of radius `1 / sqrt(reg)`; the returned model is the mean
/// iterate over the second half of the run.
pub fn train(examples: &[(Vec<f64>, Label)], hp: Hyperparams) -> Result<LinearModel, ClassifierError> {
    if hp.reg.is_nan() || hp.reg <= 0.0 || hp.epochs == 0 {
        return Err(ClassifierError::BadHyperparams);
    }
    let dim = match examples.first() {
        Some((x, _)) => x.len(),
        None => return Err(ClassifierError::SingleClass),
    };
    if let Some((x, _)) = examples.iter().find(|(x, _)| x.len() != dim) {
        return Err(ClassifierError::Dimension {
            expected: dim,
            found: x.len(),
        });
    }
    let has = |l: Label| examples.iter().any(|(_, y)| *y == l);
    if !has(Label::Sound) || !has(Label::NonSound) {
        return Err(ClassifierError::SingleClass);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    // Average of the iterates over the second half of all steps.
    let total = hp.epochs * examples.len();
    let tail_start = total / 2;
    let mut w_avg = vec![0.0; dim];
    let mut b_avg = 0.0;
    let radius = 1.0 / hp.reg.sqrt();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut t = 0usize;
    for _ in 0..hp.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (hp.reg * t as f64);
            let (x, y) = &examples[i];
            let y = y.sign();
            let violated = y * (dot(&w, x) + b) < 1.0;
            let shrink = 1.0 - eta * hp.reg;
            for wj in w.iter_mut() {
                *wj *= shrink;
            }
            if violated {
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += eta * y * xj;
                }
                b += eta * y;
            }
            let norm = dot(&w, &w).sqrt();
            if norm > radius {
                for wj in w.iter_mut() {
                    *wj *= radius / norm;
                }
            }
            if t > tail_start {
                for (a, wj) in w_avg.iter_mut().zip(&w) {
                    *a += wj;
                }
                b_avg += b;
            }
        }
    }
    let n = (total - tail_start) as f64;
    Ok(LinearModel {
        weights: w_avg.into_iter().map(|a| a / n).collect(),
        bias: b_avg / n,
        hyperparams: hp,
    })
}

pub fn accuracy(model: &LinearModel, examples: &[(Vec<f64>, Label)]) -> Result<f64, ClassifierError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (x, y) in examples {
        if predict(model, x)?.0 == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Seeded random partition of `0..n` into `k` folds whose sizes differ by
/// at most one.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in order.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    folds
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub kind: FeatureKind,
    pub fold_sizes: Vec<usize>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
}

impl CvReport {
    /// Fold accuracies and their mean as percentages, one table row.
    pub fn table(&self) -> String {
        let mut head = String::from("featurizer");
        let mut row = self.kind.to_string().to_uppercase();
        for (i, a) in self.accuracies.iter().enumerate() {
            head.push_str(&format!("\tfold {}", i + 1));
            row.push_str(&format!("\t{:.2}", 100.0 * a));
        }
        head.push_str("\tavg");
        row.push_str(&format!("\t{:.2}", 100.0 * self.mean));
        format!("{head}\n{row}\n")
    }
}

/// k-fold cross-validation: each fold is scored once by a model trained on
/// the other folds.
pub fn cross_validate(
    dataset: &[LabeledPhrase],
    store: &EmbeddingStore,
    kind: FeatureKind,
    k: usize,
    hp: Hyperparams,
) -> Result<CvReport, ClassifierError> {
    if k < 2 || dataset.len() < k {
        return Err(ClassifierError::TooFewExamples {
            size: dataset.len(),
            k,
        });
    }
    let features = dataset
        .iter()
        .map(|p| {
            featurize(store, kind, (&p.bigram.0, &p.bigram.1)).map(|f| (f.values, p.label))
        })
        .collect::<Result<Vec<_>, _>>()?;
    cross_validate_features(&features, kind, k, hp)
}

pub fn cross_validate_features(
    features: &[(Vec<f64>, Label)],
    kind: FeatureKind,
    k: usize,
    hp: Hyperparams,
) -> Result<CvReport, ClassifierError> {
    if k < 2 || features.len() < k {
        return Err(ClassifierError::TooFewExamples {
            size: features.len(),
            k,
        });
    }
    let folds = fold_partition(features.len(), k, hp.seed);
    let mut accuracies = Vec::with_capacity(k);
    for (fi, fold) in folds.iter().enumerate() {
        let mut in_fold = vec![false; features.len()];
        for &i in fold {
            in_fold[i] = true;
        }
        let train_set: Vec<(Vec<f64>, Label)> = features
            .iter()
            .enumerate()
            .filter(|(i, _)| !in_fold[*i])
            .map(|(_, e)| e.clone())
            .collect();
        let test_set: Vec<(Vec<f64>, Label)> = fold.iter().map(|&i| features[i].clone()).collect();
        let model = train(
            &train_set,
            Hyperparams {
                seed: hp.seed.wrapping_add(fi as u64 + 1),
                ..hp
            },
        )?;
        accuracies.push(accuracy(&model, &test_set)?);
    }
    let mean = accuracies.iter().sum::<f64>() / k as f64;
    Ok(CvReport {
        kind,
        fold_sizes: folds.iter().map(Vec::len).collect(),
        accuracies,
        mean,
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    #[serde(default)]
    provenance: String,
    version: u32,
    featurizer: FeatureKind,
    dimension: usize,
    weights: Vec<f64>,
    bias: f64,
    hyperparams: Hyperparams,
}

/// A trained classifier together with the feature construction it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseModel {
    pub kind: FeatureKind,
    pub model: LinearModel,
}

impl PhraseModel {
    /// `provenance` is stored verbatim and ignored on load.
    pub fn to_json(&self, provenance: &str) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            provenance: provenance.to_string(),
            version: MODEL_VERSION,
            featurizer: self.kind,
            dimension: self.model.dim(),
            weights: self.model.weights.iter().copied().map(round_sig9).collect(),
            bias: round_sig9(self.model.bias),
            hyperparams: self.model.hyperparams,
        };
        serde_json::to_string_pretty(&file).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<PhraseModel, ClassifierError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| ClassifierError::Model(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(ClassifierError::Model(format!(
                "unsupported model {} v{}",
                file.format, file.version
            )));
        }
        if file.weights.len() != file.dimension {
            return Err(ClassifierError::Dimension {
                expected: file.dimension,
                found: file.weights.len(),
            });
        }
        Ok(PhraseModel {
            kind: file.featurizer,
            model: LinearModel {
                weights: file.weights,
                bias: file.bias,
                hyperparams: file.hyperparams,
            },
        })
    }
}

/// Reads `word1<TAB>word2<TAB>label` rows. `#` lines are comments.
pub fn read_labeled_tsv<R: BufRead>(source: R) -> Result<Vec<LabeledPhrase>, ClassifierError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(ClassifierError::Data {
                line: i + 1,
                msg: "expected word1, word2, label".into(),
            });
        }
        let label = cols[2]
            .parse()
            .map_err(|msg| ClassifierError::Data { line: i + 1, msg })?;
        out.push(LabeledPhrase {
            bigram: (cols[0].to_string(), cols[1].to_string()),
            label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn hp(seed: u64) -> Hyperparams {
        Hyperparams {
            seed,
            ..Hyperparams::default()
        }
    }

    /// Two Gaussian-ish clusters around ±center; returns the examples.
    pub(crate) fn clusters(n: usize, dim: usize, seed: u64) -> Vec<(Vec<f64>, Label)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Sound } else { Label::NonSound };
                let x: Vec<f64> = (0..dim)
                    .map(|j| {
                        let c = if j == 0 { 3.0 * label.sign() } else { 0.0 };
                        c + rng.gen_range(-1.0..1.0)
                    })
                    .collect();
                (x, label)
            })
            .collect()
    }

    #[test]
    fn axis_case() {
        let data = vec![(vec![1.0, 0.0], Label::Sound), (vec![-1.0, 0.0], Label::NonSound)];
        let m = train(&data, hp(1)).unwrap();
        assert!(m.weights[0] > 0.0);
        assert_eq!(accuracy(&m, &data).unwrap(), 1.0);
    }

    #[test]
    fn separable_clusters_fit_exactly() {
        let data = clusters(200, 5, 3);
        // Separability witness: w = e0, b = 0 gives margin ≥ 2 on every point
        // because |x0| ≥ 3 - 1 by construction.
        assert!(data.iter().all(|(x, y)| y.sign() * x[0] >= 2.0));
        let m = train(&data, hp(9)).unwrap();
        assert_eq!(accuracy(&m, &data).unwrap(), 1.0);
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let data = clusters(60, 4, 5);
        assert_eq!(train(&data, hp(2)).unwrap(), train(&data, hp(2)).unwrap());
    }

    #[test]
    fn train_errors() {
        let one = vec![(vec![1.0], Label::Sound), (vec![2.0], Label::Sound)];
        assert!(matches!(train(&one, hp(0)), Err(ClassifierError::SingleClass)));
        let ragged = vec![(vec![1.0], Label::Sound), (vec![2.0, 1.0], Label::NonSound)];
        assert!(matches!(train(&ragged, hp(0)), Err(ClassifierError::Dimension { .. })));
    }

    #[test]
    fn predict_examples() {
        let zero = LinearModel::zeros(3);
        assert_eq!(predict(&zero, &[4.0, -1.0, 2.0]).unwrap(), (Label::NonSound, 0.0));
        let m = LinearModel {
            weights: vec![1.0, 0.0],
            bias: 0.0,
            hyperparams: Hyperparams::default(),
        };
        assert_eq!(predict(&m, &[2.0, 5.0]).unwrap(), (Label::Sound, 2.0));
        assert!(predict(&m, &[1.0]).is_err());
    }

    #[test]
    fn objective_does_not_increase() {
        let data = clusters(100, 3, 8);
        let zero = LinearModel::zeros(3);
        let m = train(&data, hp(4)).unwrap();
        assert!(m.objective(&data) <= zero.objective(&data));
    }

    #[test]
    fn eight_examples_four_folds() {
        let folds = fold_partition(8, 4, 1);
        assert!(folds.iter().all(|f| f.len() == 2));
    }

    #[test]
    fn cv_on_separable_data() {
        let data = clusters(40, 3, 12);
        let r = cross_validate_features(&data, FeatureKind::Awv, 4, hp(3)).unwrap();
        assert_eq!(r.accuracies.len(), 4);
        assert_eq!(r.mean, 1.0);
        assert!(matches!(
            cross_validate_features(&data[..3], FeatureKind::Awv, 4, hp(3)),
            Err(ClassifierError::TooFewExamples { size: 3, k: 4 })
        ));
        assert!(r.table().contains("avg"));
    }

    #[test]
    fn model_json_roundtrip() {
        let data = clusters(30, 3, 1);
        let pm = PhraseModel {
            kind: FeatureKind::Cwv,
            model: train(&data, hp(6)).unwrap(),
        };
        let text = pm.to_json("# test");
        let back = PhraseModel::from_json(&text).unwrap();
        assert_eq!(back.kind, FeatureKind::Cwv);
        assert_eq!(back.to_json("# test"), text);
        for (a, b) in back.model.weights.iter().zip(&pm.model.weights) {
            assert!((a - b).abs() <= 1e-8 * b.abs());
        }
        assert!(PhraseModel::from_json("{}").is_err());
    }

    #[test]
    fn labeled_tsv() {
        let rows = read_labeled_tsv("# c\ndogs\tbarking\t+1\nprice\tdropping\t-1\n".as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].label, Label::NonSound);
        assert!(read_labeled_tsv("a\tb\t0\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition(n in 1usize..200, k in 1usize..9, seed: u64) {
            let folds = fold_partition(n, k, seed);
            let mut seen = vec![0u32; n];
            for f in &folds {
                for &i in f {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            let max = folds.iter().map(Vec::len).max().unwrap();
            let min = folds.iter().map(Vec::len).min().unwrap();
            prop_assert!(max - min <= 1);
        }

        #[test]
        fn positive_scaling_keeps_labels(
            w in prop::collection::vec(-5.0f64..5.0, 3),
            b in -5.0f64..5.0,
            x in prop::collection::vec(-5.0f64..5.0, 3),
            s in 0.01f64..100.0,
        ) {
            let m = LinearModel { weights: w.clone(), bias: b, hyperparams: Hyperparams::default() };
            let scaled = LinearModel {
                weights: w.iter().map(|v| v * s).collect(),
                bias: b * s,
                hyperparams: Hyperparams::default(),
            };
            let (l1, m1) = predict(&m, &x).unwrap();
            let (l2, _) = predict(&scaled, &x).unwrap();
            prop_assume!(m1.abs() > 1e-9);
            prop_assert_eq!(l1, l2);
            let neg = LinearModel {
                weights: w.iter().map(|v| -v).collect(),
                bias: -b,
                hyperparams: Hyperparams::default(),
            };
            prop_assert_ne!(predict(&neg, &x).unwrap().0, l1);
        }
    }
}
