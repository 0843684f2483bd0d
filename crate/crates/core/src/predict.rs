//! Ensembled prediction and evaluation against a gold corpus.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_frame_instances, instance_id, AnnotatedSentence, FrameOntology};
use crate::error::{Error, Result};
use crate::metrics::{score_arguments, score_frames, EvalReport, FrameAccuracy};
use crate::model::{ArgModel, FrameIdModel, Model, TargetRef};
use crate::semimarkov::{viterbi, ScoreLattice, Segmentation};
use crate::train::predict_frames;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictMode {
    /// Arguments given the gold frame of each target.
    ArgsGoldFrames,
    /// Frames only.
    Frames,
    /// Frames, then arguments for the predicted frame.
    EndToEnd,
}

impl FromStr for PredictMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "args-gold-frames" => Ok(Self::ArgsGoldFrames),
            "frames" => Ok(Self::Frames),
            "end-to-end" => Ok(Self::EndToEnd),
            _ => Err(Error::invalid(format!(
                "unknown mode `{s}` (expected args-gold-frames, frames or end-to-end)"
            ))),
        }
    }
}

impl fmt::Display for PredictMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ArgsGoldFrames => "args-gold-frames",
            Self::Frames => "frames",
            Self::EndToEnd => "end-to-end",
        })
    }
}

/// One line of a predictions file. Null segments are omitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub frame: String,
    pub segments: Vec<(usize, usize, String)>,
}

pub fn predictions_to_jsonl(records: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_predictions(text: &str, source_name: &str) -> Result<Vec<PredictionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            serde_json::from_str(l).map_err(|e| Error::Data {
                source_name: source_name.to_string(),
                line: k + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, &path.display().to_string())
}

/// Ensemble members for a prediction run.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ensemble<'a> {
    pub arg: &'a [ArgModel],
    pub frame: &'a [FrameIdModel],
}

fn same_hashes<M: Model>(models: &[M], what: &str) -> Result<()> {
    if let Some(first) = models.first() {
        let key = |m: &M| (m.spec().vocab.hash(), m.spec().ontology.hash());
        let k0 = key(first);
        if models.iter().any(|m| key(m) != k0) {
            return Err(Error::Checkpoint(format!(
                "{what} checkpoints disagree on vocabulary or ontology"
            )));
        }
    }
    Ok(())
}

impl<'a> Ensemble<'a> {
    /// Checks that the members needed by `mode` are present and compatible,
    /// and returns their shared ontology.
    pub fn check(&self, mode: PredictMode) -> Result<&'a FrameOntology> {
        let need_arg = mode != PredictMode::Frames;
        let need_frame = mode != PredictMode::ArgsGoldFrames;
        if need_arg && self.arg.is_empty() {
            return Err(Error::invalid(format!(
                "mode {mode} needs an argument checkpoint"
            )));
        }
        if need_frame && self.frame.is_empty() {
            return Err(Error::invalid(format!(
                "mode {mode} needs a frame checkpoint"
            )));
        }
        same_hashes(self.arg, "argument")?;
        same_hashes(self.frame, "frame")?;
        if let (Some(a), Some(f)) = (self.arg.first(), self.frame.first()) {
            if a.spec.ontology.hash() != f.spec.ontology.hash() {
                return Err(Error::Checkpoint(
                    "argument and frame checkpoints disagree on the ontology".into(),
                ));
            }
        }
        let ontology = self
            .arg
            .first()
            .map(|m| &m.spec.ontology)
            .or_else(|| self.frame.first().map(|m| &m.spec.ontology))
            .ok_or_else(|| Error::invalid("no checkpoints given"))?;
        Ok(ontology)
    }
}

/// Sum of the members' segment-score lattices.
pub fn summed_lattice(
    models: &[ArgModel],
    t: TargetRef<'_>,
    frame: &str,
) -> Result<ScoreLattice<f64>> {
    let (first, rest) = models
        .split_first()
        .ok_or_else(|| Error::invalid("empty ensemble"))?;
    let mut sum = first.score_lattice(t, frame)?;
    for m in rest {
        sum.add_assign(&m.score_lattice(t, frame)?)?;
    }
    Ok(sum)
}

/// One Viterbi decode over the summed lattice.
pub fn ensemble_decode(models: &[ArgModel], t: TargetRef<'_>, frame: &str) -> Result<Segmentation> {
    Ok(viterbi(&summed_lattice(models, t, frame)?).0)
}

fn record(
    ontology: &FrameOntology,
    id: String,
    frame: &str,
    seg: Option<&Segmentation>,
) -> Result<PredictionRecord> {
    let roles = ontology.roles(frame)?;
    Ok(PredictionRecord {
        instance_id: id,
        frame: frame.to_string(),
        segments: seg
            .map(|s| {
                s.arguments()
                    .map(|a| (a.start, a.end, roles[a.label - 1].clone()))
                    .collect()
            })
            .unwrap_or_default(),
    })
}

/// Predictions for every annotated target, in corpus order.
pub fn predict(
    ensemble: Ensemble<'_>,
    corpus: &[AnnotatedSentence],
    mode: PredictMode,
) -> Result<Vec<PredictionRecord>> {
    let ontology = ensemble.check(mode)?;
    let per_sentence = corpus
        .par_iter()
        .enumerate()
        .map(|(si, s)| -> Result<Vec<PredictionRecord>> {
            s.validate()?;
            let frames: Vec<String> = match mode {
                PredictMode::ArgsGoldFrames => {
                    s.annotations.iter().map(|a| a.frame.clone()).collect()
                }
                PredictMode::Frames | PredictMode::EndToEnd => {
                    let group = build_frame_instances(std::slice::from_ref(s), ontology, false)?;
                    let names = ontology.frame_names();
                    predict_frames(ensemble.frame, &group)?
                        .into_iter()
                        .map(|f| names[f].to_string())
                        .collect()
                }
            };
            s.annotations
                .iter()
                .zip(&frames)
                .map(|(a, frame)| {
                    let id = instance_id(&s.key(si), a.target);
                    if mode == PredictMode::Frames {
                        return record(ontology, id, frame, None);
                    }
                    let t = TargetRef {
                        tokens: &s.tokens,
                        pos: &s.pos,
                        target: crate::encoders::TargetSpan::new(a.target.start, a.target.end),
                        lu: &a.lu,
                    };
                    let seg = ensemble_decode(ensemble.arg, t, frame)?;
                    record(ontology, id, frame, Some(&seg))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_sentence.concat())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Evaluation {
    Arguments(EvalReport),
    Frames(FrameAccuracy),
}

impl Evaluation {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("evaluation serializes")
    }
}

impl fmt::Display for Evaluation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Arguments(r) => r.fmt(f),
            Self::Frames(a) => a.fmt(f),
        }
    }
}

/// Scores predictions against every annotated target of `gold`. Each target
/// must have exactly one prediction. In end-to-end mode an argument matches
/// only if its frame matches too; with gold frames the frame is ignored.
pub fn evaluate(
    predictions: &[PredictionRecord],
    gold: &[AnnotatedSentence],
    mode: PredictMode,
) -> Result<Evaluation> {
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(&p.instance_id, p).is_some() {
            return Err(Error::Validation(format!(
                "duplicate prediction for `{}`",
                p.instance_id
            )));
        }
    }
    let mut aligned = Vec::new();
    for (si, s) in gold.iter().enumerate() {
        for a in &s.annotations {
            let id = instance_id(&s.key(si), a.target);
            let p = by_id.remove(id.as_str()).ok_or_else(|| {
                Error::Validation(format!("no prediction for gold target `{id}`"))
            })?;
            aligned.push((p, a));
        }
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(Error::Validation(format!(
            "prediction `{extra}` matches no gold target ({} unmatched)",
            by_id.len()
        )));
    }
    match mode {
        PredictMode::Frames => {
            let p: Vec<&str> = aligned.iter().map(|(p, _)| p.frame.as_str()).collect();
            let g: Vec<&str> = aligned.iter().map(|(_, a)| a.frame.as_str()).collect();
            Ok(Evaluation::Frames(score_frames(&p, &g)?))
        }
        PredictMode::ArgsGoldFrames | PredictMode::EndToEnd => {
            let with_frame = mode == PredictMode::EndToEnd;
            let key = |i: usize, j: usize, role: &str, frame: &str| {
                (
                    i,
                    j,
                    role.to_string(),
                    if with_frame {
                        frame.to_string()
                    } else {
                        String::new()
                    },
                )
            };
            let p: Vec<Vec<_>> = aligned
                .iter()
                .map(|(p, _)| {
                    p.segments
                        .iter()
                        .map(|(i, j, r)| key(*i, *j, r, &p.frame))
                        .collect()
                })
                .collect();
            let g: Vec<Vec<_>> = aligned
                .iter()
                .map(|(_, a)| {
                    a.elements
                        .iter()
                        .map(|e| key(e.span.start, e.span.end, &e.role, &a.frame))
                        .collect()
                })
                .collect();
            Ok(Evaluation::Arguments(score_arguments(&p, &g)?))
        }
    }
}
