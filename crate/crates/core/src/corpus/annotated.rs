use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::TargetSpan;
use crate::error::{Error, Result};
use crate::scaffold::{ScaffoldInstance, ScaffoldSource};
use crate::semimarkov::{Segment, Segmentation};

/// Inclusive 0-based token span, written as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Self { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub role: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub target: Span,
    pub lu: String,
    pub frame: String,
    #[serde(default)]
    pub elements: Vec<Element>,
}

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

// Input-side schema: spans may be discontinuous lists of pieces.
#[derive(Deserialize)]
#[serde(untagged)]
enum RawSpan {
    Contiguous([usize; 2]),
    Pieces(Vec<[usize; 2]>),
}

#[derive(Deserialize)]
struct RawElement {
    role: String,
    span: RawSpan,
}

#[derive(Deserialize)]
struct RawAnnotation {
    target: RawSpan,
    lu: String,
    frame: String,
    #[serde(default)]
    elements: Vec<RawElement>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSentence {
    #[serde(default)]
    id: Option<String>,
    tokens: Vec<String>,
    pos: Vec<String>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
}

fn contiguous(span: RawSpan) -> Option<Span> {
    match span {
        RawSpan::Contiguous(s) => Some(s.into()),
        RawSpan::Pieces(p) if p.len() == 1 => Some(p[0].into()),
        RawSpan::Pieces(_) => None,
    }
}

impl AnnotatedSentence {
    /// Identifier used in prediction files: the `id` field, or the position
    /// of the sentence in its corpus.
    pub fn key(&self, index: usize) -> String {
        self.id.clone().unwrap_or_else(|| index.to_string())
    }

    /// Checks bounds and within-annotation overlap.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::Validation("`tokens` is empty".into()));
        }
        if self.pos.len() != n {
            return Err(Error::Validation(format!(
                "`pos` has {} tags for {n} tokens",
                self.pos.len()
            )));
        }
        let in_bounds = |s: &Span| s.start <= s.end && s.end < n;
        for (k, a) in self.annotations.iter().enumerate() {
            if !in_bounds(&a.target) {
                return Err(Error::Validation(format!(
                    "`annotations[{k}].target` {:?} outside {n} tokens",
                    <[usize; 2]>::from(a.target)
                )));
            }
            for (e, el) in a.elements.iter().enumerate() {
                if !in_bounds(&el.span) {
                    return Err(Error::Validation(format!(
                        "`annotations[{k}].elements[{e}].span` {:?} outside {n} tokens",
                        <[usize; 2]>::from(el.span)
                    )));
                }
                for (e2, other) in a.elements.iter().enumerate().skip(e + 1) {
                    if el.span.overlaps(&other.span) {
                        return Err(Error::Validation(format!(
                            "`annotations[{k}].elements`: {e} and {e2} overlap"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn from_raw(raw: RawSentence, where_: &str) -> Self {
        let mut annotations: Vec<Annotation> = Vec::new();
        let mut seen_targets = HashSet::new();
        for a in raw.annotations {
            let Some(target) = contiguous(a.target) else {
                log::warn!("{where_}: discontinuous target of `{}` skipped", a.frame);
                continue;
            };
            if !seen_targets.insert(target) {
                log::warn!(
                    "{where_}: second annotation of target {}..={} dropped",
                    target.start,
                    target.end
                );
                continue;
            }
            let mut elements = Vec::new();
            for el in a.elements {
                match contiguous(el.span) {
                    Some(span) => elements.push(Element {
                        role: el.role,
                        span,
                    }),
                    None => log::warn!("{where_}: discontinuous `{}` element dropped", el.role),
                }
            }
            annotations.push(Annotation {
                target,
                lu: a.lu,
                frame: a.frame,
                elements,
            });
        }
        Self {
            id: raw.id,
            tokens: raw.tokens,
            pos: raw.pos,
            annotations,
        }
    }
}

/// Parses JSONL corpus text. `source_name` labels error messages.
pub fn parse_corpus(text: &str, source_name: &str) -> Result<Vec<AnnotatedSentence>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let data_err = |message: String| Error::Data {
            source_name: source_name.to_string(),
            line: k + 1,
            message,
        };
        let raw: RawSentence = serde_json::from_str(line).map_err(|e| data_err(e.to_string()))?;
        let s = AnnotatedSentence::from_raw(raw, &format!("{source_name}:{}", k + 1));
        s.validate().map_err(|e| data_err(e.to_string()))?;
        out.push(s);
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Vec<AnnotatedSentence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, &path.display().to_string())
}

pub fn corpus_to_jsonl(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&serde_json::to_string(s).expect("sentence serializes"));
        out.push('\n');
    }
    out
}

/// Frames with their ordered roles, and lexical units with their ordered
/// candidate frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameOntology {
    pub frames: BTreeMap<String, Vec<String>>,
    pub lexicon: BTreeMap<String, Vec<String>>,
}

impl FrameOntology {
    pub fn new(
        frames: BTreeMap<String, Vec<String>>,
        lexicon: BTreeMap<String, Vec<String>>,
    ) -> Result<Self> {
        let o = Self { frames, lexicon };
        o.validate()?;
        Ok(o)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let o: Self = serde_json::from_str(&text).map_err(|e| Error::Data {
            source_name: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Validation("ontology has no frames".into()));
        }
        for (f, roles) in &self.frames {
            let unique: BTreeSet<_> = roles.iter().collect();
            if unique.len() != roles.len() {
                return Err(Error::Validation(format!("frame `{f}` lists a role twice")));
            }
        }
        for (lu, frames) in &self.lexicon {
            if frames.is_empty() {
                return Err(Error::Validation(format!(
                    "lexical unit `{lu}` has no frames"
                )));
            }
            if let Some(f) = frames.iter().find(|f| !self.frames.contains_key(*f)) {
                return Err(Error::Validation(format!(
                    "lexical unit `{lu}` lists unknown frame `{f}`"
                )));
            }
        }
        Ok(())
    }

    /// Frame names in index order.
    pub fn frame_names(&self) -> Vec<&str> {
        self.frames.keys().map(String::as_str).collect()
    }

    pub fn frame_index(&self, frame: &str) -> Result<usize> {
        self.frames
            .keys()
            .position(|f| f == frame)
            .ok_or_else(|| Error::Unknown {
                kind: "frame",
                name: frame.to_string(),
            })
    }

    pub fn roles(&self, frame: &str) -> Result<&[String]> {
        self.frames
            .get(frame)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Unknown {
                kind: "frame",
                name: frame.to_string(),
            })
    }

    /// Lattice label of a role: 0 is null, `k` is the frame's `k`-th role.
    pub fn role_label(&self, frame: &str, role: &str) -> Result<usize> {
        self.roles(frame)?
            .iter()
            .position(|r| r == role)
            .map(|k| k + 1)
            .ok_or_else(|| Error::Unknown {
                kind: "role",
                name: format!("{frame}.{role}"),
            })
    }

    /// All distinct role names, sorted.
    pub fn role_inventory(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.frames.values().flatten().collect();
        set.into_iter().cloned().collect()
    }

    /// Lexical units in index order (row `k + 1` of the LU table).
    pub fn lu_names(&self) -> Vec<&str> {
        self.lexicon.keys().map(String::as_str).collect()
    }

    /// Candidate frame indices of `lu`, or every frame when `lu` is unknown.
    pub fn candidate_frames(&self, lu: &str) -> Vec<usize> {
        match self.lexicon.get(lu) {
            Some(frames) => frames
                .iter()
                .map(|f| self.frame_index(f).expect("validated ontology"))
                .collect(),
            None => (0..self.frames.len()).collect(),
        }
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("ontology serializes")
    }

    pub fn hash(&self) -> String {
        hex_sha256(self.to_canonical_json().as_bytes())
    }
}

pub(crate) fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// One (sentence, annotation) pair for argument identification.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgInstance {
    pub id: String,
    /// Index of the source sentence.
    pub sentence: usize,
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    pub target: TargetSpan,
    pub lu: String,
    pub frame: String,
    /// Gold arguments over lattice labels, null gaps filled greedily.
    pub gold: Segmentation,
}

/// One target for frame identification.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameIdInstance {
    pub id: String,
    pub sentence: usize,
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    pub target: TargetSpan,
    pub lu: String,
    pub frame: Option<String>,
}

pub fn instance_id(sentence_key: &str, target: Span) -> String {
    format!("{sentence_key}:{}-{}", target.start, target.end)
}

/// One instance per annotation. Annotations whose frame or roles are
/// unknown are an error; annotations with an element longer than `max_len`
/// are skipped with a warning.
pub fn build_instances(
    sentences: &[AnnotatedSentence],
    ontology: &FrameOntology,
    max_len: usize,
) -> Result<Vec<ArgInstance>> {
    let mut out = Vec::new();
    for (si, s) in sentences.iter().enumerate() {
        let n = s.tokens.len();
        for a in &s.annotations {
            let id = instance_id(&s.key(si), a.target);
            let mut args = Vec::with_capacity(a.elements.len());
            for el in &a.elements {
                let label = ontology.role_label(&a.frame, &el.role)?;
                args.push(Segment::new(el.span.start, el.span.end, label));
            }
            if let Some(long) = a.elements.iter().find(|e| e.span.len() > max_len) {
                log::warn!(
                    "instance {id}: `{}` spans {} tokens (> {max_len}); instance skipped",
                    long.role,
                    long.span.len()
                );
                continue;
            }
            let gold = Segmentation::from_arguments(n, &args, max_len)?;
            out.push(ArgInstance {
                id,
                sentence: si,
                tokens: s.tokens.clone(),
                pos: s.pos.clone(),
                target: TargetSpan::new(a.target.start, a.target.end),
                lu: a.lu.clone(),
                frame: a.frame.clone(),
                gold,
            });
        }
    }
    Ok(out)
}

/// Frame-id instances. With `training`, targets whose gold frame is not a
/// candidate of the LU are skipped with a warning and unknown LUs are an
/// error.
pub fn build_frame_instances(
    sentences: &[AnnotatedSentence],
    ontology: &FrameOntology,
    training: bool,
) -> Result<Vec<FrameIdInstance>> {
    let mut out = Vec::new();
    for (si, s) in sentences.iter().enumerate() {
        for a in &s.annotations {
            let id = instance_id(&s.key(si), a.target);
            if training {
                let Some(cands) = ontology.lexicon.get(&a.lu) else {
                    return Err(Error::Unknown {
                        kind: "lexical unit",
                        name: a.lu.clone(),
                    });
                };
                if !cands.contains(&a.frame) {
                    log::warn!(
                        "instance {id}: frame `{}` not listed for `{}`; skipped",
                        a.frame,
                        a.lu
                    );
                    continue;
                }
            }
            out.push(FrameIdInstance {
                id,
                sentence: si,
                tokens: s.tokens.clone(),
                pos: s.pos.clone(),
                target: TargetSpan::new(a.target.start, a.target.end),
                lu: a.lu.clone(),
                frame: Some(a.frame.clone()),
            });
        }
    }
    Ok(out)
}

/// Scaffold view of annotated sentences: every element span of any frame is
/// positive. Spans longer than `max_len` are dropped.
pub fn framenet_scaffold_instances(
    sentences: &[AnnotatedSentence],
    max_len: usize,
) -> Vec<ScaffoldInstance> {
    sentences
        .iter()
        .map(|s| ScaffoldInstance {
            tokens: s.tokens.clone(),
            pos: s.pos.clone(),
            positive_spans: s
                .annotations
                .iter()
                .flat_map(|a| &a.elements)
                .filter(|e| e.span.len() <= max_len)
                .map(|e| (e.span.start, e.span.end))
                .collect(),
            source: ScaffoldSource::Framenet,
        })
        .collect()
}
