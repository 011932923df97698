//! Scored scene-sound relations and the per-scene report.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::paths::EnvironmentLexicon;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("line {line}: scene {scene:?} is not in the environment lexicon")]
    UnknownScene { line: usize, scene: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One scored path occurrence, as written by `predict`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scene: String,
    pub concept: String,
    pub path: String,
    pub p_positive: f64,
}

pub fn write_predictions<W: Write>(mut out: W, rows: &[Prediction]) -> std::io::Result<()> {
    for r in rows {
        writeln!(out, "{}\t{}\t{}\t{:.6}", r.scene, r.concept, r.path, r.p_positive)?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(source: R) -> Result<Vec<Prediction>, KbError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| KbError::Format {
            line: i + 1,
            msg: msg.into(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(bad("expected scene, concept, path, p_positive"));
        }
        let p: f64 = cols[3].parse().map_err(|_| bad("bad probability"))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(bad("probability outside [0, 1]"));
        }
        out.push(Prediction {
            scene: cols[0].to_string(),
            concept: cols[1].to_string(),
            path: cols[2].to_string(),
            p_positive: p,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRelation {
    pub scene: String,
    pub concept: String,
    pub p_positive: f64,
    pub found: bool,
}

/// Scene-sound relations, one per (scene, concept) pair. A pair seen
/// through several paths keeps its highest probability.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub relations: Vec<ScoredRelation>,
    pub threshold: f64,
    pub provenance: Vec<String>,
}

impl KnowledgeBase {
    pub fn from_predictions(
        rows: &[Prediction],
        lexicon: &EnvironmentLexicon,
        threshold: f64,
    ) -> Result<Self, KbError> {
        let mut best: BTreeMap<(&str, &str), f64> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            if !lexicon.contains(&r.scene) {
                return Err(KbError::UnknownScene {
                    line: i + 1,
                    scene: r.scene.clone(),
                });
            }
            let e = best.entry((&r.scene, &r.concept)).or_insert(r.p_positive);
            *e = e.max(r.p_positive);
        }
        Ok(KnowledgeBase {
            relations: best
                .into_iter()
                .map(|((s, c), p)| ScoredRelation {
                    scene: s.to_string(),
                    concept: c.to_string(),
                    p_positive: p,
                    found: p >= threshold,
                })
                .collect(),
            threshold,
            provenance: Vec::new(),
        })
    }

    /// For every lexicon scene, in lexicon order: concepts with
    /// `p_positive >= threshold`, highest first, ties by concept text.
    pub fn scene_report<'a>(
        &'a self,
        lexicon: &'a EnvironmentLexicon,
        threshold: f64,
        top_k: Option<usize>,
    ) -> Vec<(&'a str, Vec<(&'a str, f64)>)> {
        lexicon
            .names()
            .iter()
            .map(|scene| {
                let mut sounds: Vec<(&str, f64)> = self
                    .relations
                    .iter()
                    .filter(|r| r.scene == *scene && r.p_positive >= threshold)
                    .map(|r| (r.concept.as_str(), r.p_positive))
                    .collect();
                sounds.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
                if let Some(k) = top_k {
                    sounds.truncate(k);
                }
                (scene.as_str(), sounds)
            })
            .collect()
    }
}

/// `scene<TAB>concept (p), concept (p), ...`, one line per scene.
pub fn format_report(rows: &[(&str, Vec<(&str, f64)>)]) -> String {
    let mut out = String::from("environment\tsounds\n");
    for (scene, sounds) in rows {
        let list: Vec<String> = sounds.iter().map(|(c, p)| format!("{c} ({p:.3})")).collect();
        out.push_str(&format!("{scene}\t{}\n", list.join(", ")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(scene: &str, concept: &str, p: f64) -> Prediction {
        Prediction {
            scene: scene.into(),
            concept: concept.into(),
            path: "prep_of()".into(),
            p_positive: p,
        }
    }

    fn kb() -> KnowledgeBase {
        let rows = vec![
            pred("park", "birds chirping", 0.9),
            pred("park", "footsteps", 0.6),
            pred("park", "laughing", 0.9),
            pred("park", "footsteps", 0.7),
            pred("beach", "waves crashing", 0.95),
            pred("beach", "engines", 0.2),
        ];
        KnowledgeBase::from_predictions(&rows, &EnvironmentLexicon::default(), 0.5).unwrap()
    }

    #[test]
    fn aggregates_by_max() {
        let kb = kb();
        assert_eq!(kb.relations.len(), 5);
        let f = kb.relations.iter().find(|r| r.concept == "footsteps").unwrap();
        assert_eq!(f.p_positive, 0.7);
        assert!(f.found);
        assert!(!kb.relations.iter().find(|r| r.concept == "engines").unwrap().found);
    }

    #[test]
    fn report_golden() {
        let lex = EnvironmentLexicon::new(["park", "beach", "office"]).unwrap();
        let rows = vec![
            pred("park", "birds chirping", 0.9),
            pred("park", "footsteps", 0.7),
            pred("park", "laughing", 0.9),
            pred("beach", "waves crashing", 0.95),
            pred("beach", "engines", 0.2),
        ];
        let kb = KnowledgeBase::from_predictions(&rows, &lex, 0.5).unwrap();
        let text = format_report(&kb.scene_report(&lex, 0.5, None));
        assert_eq!(
            text,
            "environment\tsounds\n\
             park\tbirds chirping (0.900), laughing (0.900), footsteps (0.700)\n\
             beach\twaves crashing (0.950)\n\
             office\t\n"
        );
        let top1 = format_report(&kb.scene_report(&lex, 0.5, Some(1)));
        assert!(top1.contains("park\tbirds chirping (0.900)\n"));
    }

    #[test]
    fn thresholds() {
        let kb = kb();
        let lex = EnvironmentLexicon::default();
        let none = kb.scene_report(&lex, 1.01, None);
        assert_eq!(none.len(), 36);
        assert!(none.iter().all(|(_, s)| s.is_empty()));
        let all: usize = kb.scene_report(&lex, 0.0, None).iter().map(|(_, s)| s.len()).sum();
        assert_eq!(all, kb.relations.len());
    }

    #[test]
    fn rejects_unknown_scene() {
        let rows = vec![pred("moon", "x", 0.5)];
        assert!(matches!(
            KnowledgeBase::from_predictions(&rows, &EnvironmentLexicon::default(), 0.5),
            Err(KbError::UnknownScene { .. })
        ));
    }

    #[test]
    fn predictions_tsv_roundtrip() {
        let rows = vec![pred("park", "footsteps", 0.25)];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &rows).unwrap();
        assert_eq!(read_predictions(&buf[..]).unwrap(), rows);
        assert!(read_predictions("a\tb\tc\t1.5\n".as_bytes()).is_err());
    }
}
