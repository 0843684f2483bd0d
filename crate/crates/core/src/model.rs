//! The argument-identification and frame-identification networks, with the
//! lookups that tie them to a vocabulary and an ontology.

use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Init, NodeId, ParamId, ParamKind, ParameterStore, Tensor};
use crate::config::Config;
use crate::corpus::{apply_unk_policy, FrameOntology, PretrainedEmbeddings, Vocabulary};
use crate::encoders::{
    DistanceDims, Dropout, FrameLuTables, SpanEncoder, SpanTable, TargetEncoder, TargetSpan,
    TokenEncoder, TokenEncoderDims, TokenInput,
};
use crate::error::{Error, Result};
use crate::frameid::{frameid_loss, FrameScorer, FrameScores};
use crate::scaffold::ScaffoldScorer;
use crate::segment::SegmentScorer;
use crate::semimarkov::{softmax_margin_loss, viterbi, CostConfig, ScoreLattice, Segmentation};

/// Randomness used only while training: dropout masks and UNK replacement.
pub struct TrainNoise {
    pub rng: ChaCha8Rng,
    pub dropout: f64,
    pub unk_prob: f64,
}

/// A target in context, with the frame it evokes when known.
#[derive(Debug, Clone, Copy)]
pub struct TargetRef<'a> {
    pub tokens: &'a [String],
    pub pos: &'a [String],
    pub target: TargetSpan,
    pub lu: &'a str,
}

/// Everything needed to rebuild a model besides its parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub config: Config,
    pub vocab: Vocabulary,
    pub ontology: FrameOntology,
    pub pretrained: Option<PretrainedEmbeddings>,
}

impl ModelSpec {
    fn lu_row(&self, lu: &str) -> usize {
        self.ontology
            .lexicon
            .keys()
            .position(|l| l == lu)
            .map_or(0, |k| k + 1)
    }

    fn token_inputs(
        &self,
        tokens: &[String],
        pos: &[String],
        target: Option<TargetSpan>,
        noise: Option<&mut TrainNoise>,
    ) -> Result<Vec<TokenInput>> {
        if tokens.is_empty() || tokens.len() != pos.len() {
            return Err(Error::invalid(format!(
                "{} tokens with {} tags",
                tokens.len(),
                pos.len()
            )));
        }
        let (p, rng) = match noise {
            Some(n) => (n.unk_prob, Some(&mut n.rng)),
            None => (0.0, None),
        };
        let ids = apply_unk_policy(&self.vocab, tokens, p, rng);
        Ok(tokens
            .iter()
            .zip(pos)
            .zip(ids)
            .enumerate()
            .map(|(q, ((w, t), id))| TokenInput {
                word_id: id,
                pretrained_id: self.pretrained.as_ref().map_or(0, |e| e.row(w)),
                pos_id: self.vocab.tag_id(t),
                target_distance: target.map(|t| q as i64 - t.start as i64),
            })
            .collect())
    }
}

fn dropout_of<'a>(noise: &'a mut Option<&mut TrainNoise>) -> Option<Dropout<'a>> {
    noise.as_deref_mut().map(|n| Dropout {
        rate: n.dropout,
        rng: &mut n.rng,
    })
}

/// Softmax-margin segmental RNN with an optional span scaffold.
#[derive(Debug, Clone)]
pub struct ArgModel {
    pub spec: ModelSpec,
    pub store: ParameterStore<f64>,
    pub tokens: TokenEncoder,
    pub spans: SpanEncoder,
    pub target: TargetEncoder,
    pub tables: FrameLuTables,
    pub scorer: SegmentScorer,
    pub scaffold: ScaffoldScorer,
    role_rows: HashMap<String, usize>,
}

impl ArgModel {
    /// Declares and initializes every parameter from `config.seed`.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let c = spec.config.clone();
        c.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut store = ParameterStore::new();
        let dims = TokenEncoderDims {
            vocab_size: spec.vocab.num_words(),
            word_dim: c.word_dim,
            num_pos: spec.vocab.num_tags(),
            pos_dim: c.pos_dim,
            distance: Some(DistanceDims {
                dim: c.distance_dim,
                max_distance: c.max_distance,
            }),
            hidden_dim: c.hidden_dim,
        };
        let tokens = TokenEncoder::declare(
            &mut store,
            "tok",
            dims,
            spec.pretrained.as_ref().map(|p| p.table()),
            &mut rng,
        )?;
        let h = tokens.output_dim();
        let spans = SpanEncoder::declare(&mut store, "span", h, c.hidden_dim, &mut rng)?;
        let target = TargetEncoder::declare(&mut store, "target", h, c.hidden_dim, &mut rng)?;
        let tables = FrameLuTables::declare(
            &mut store,
            "emb",
            spec.ontology.frames.len(),
            c.frame_dim,
            spec.ontology.lexicon.len() + 1,
            c.lu_dim,
            &mut rng,
        )?;
        let inventory = spec.ontology.role_inventory();
        let flt_dim = c.frame_dim + c.lu_dim + target.output_dim();
        let scorer = SegmentScorer::declare(
            &mut store,
            "segment",
            spans.output_dim(),
            inventory.len() + 1,
            c.role_dim,
            flt_dim,
            c.mlp_dim,
            &mut rng,
        )?;
        let scaffold = ScaffoldScorer::declare(
            &mut store,
            "scaffold",
            spans.output_dim(),
            c.scaffold_label_dim,
            c.mlp_dim,
            &mut rng,
        )?;
        let role_rows = inventory
            .into_iter()
            .enumerate()
            .map(|(k, r)| (r, k + 1))
            .collect();
        Ok(Self {
            spec,
            store,
            tokens,
            spans,
            target,
            tables,
            scorer,
            scaffold,
            role_rows,
        })
    }

    pub fn config(&self) -> &Config {
        &self.spec.config
    }

    /// Role-table rows of a frame's lattice labels; row 0 is null.
    pub fn role_rows(&self, frame: &str) -> Result<Vec<usize>> {
        let mut rows = vec![0];
        for r in self.spec.ontology.roles(frame)? {
            rows.push(self.role_rows[r]);
        }
        Ok(rows)
    }

    /// Token encodings and the span table of one sentence.
    pub fn encode(
        &self,
        g: &mut Graph<'_, f64>,
        tokens: &[String],
        pos: &[String],
        target: Option<TargetSpan>,
        mut noise: Option<&mut TrainNoise>,
    ) -> Result<(Vec<NodeId>, SpanTable)> {
        let inputs = self
            .spec
            .token_inputs(tokens, pos, target, noise.as_deref_mut())?;
        let mut dropout = dropout_of(&mut noise);
        let h = self.tokens.encode(g, &inputs, dropout.as_mut())?;
        let table = self.spans.encode(g, &h, self.config().max_span)?;
        Ok((h, table))
    }

    /// Segment scores of every labeled span for `frame`, plus the span table.
    pub fn lattice_nodes(
        &self,
        g: &mut Graph<'_, f64>,
        t: TargetRef<'_>,
        frame: &str,
        noise: Option<&mut TrainNoise>,
    ) -> Result<(ScoreLattice<NodeId>, SpanTable)> {
        let frame_id = self.spec.ontology.frame_index(frame)?;
        let roles = self.role_rows(frame)?;
        let (h, table) = self.encode(g, t.tokens, t.pos, Some(t.target), noise)?;
        let v_t = self.target.encode(g, &h, t.target)?;
        let v_flt = self
            .tables
            .target_frame_embedding(g, frame_id, self.spec.lu_row(t.lu), v_t)?;
        let lattice = self.scorer.lattice(g, &table, v_flt, t.target, &roles)?;
        Ok((lattice, table))
    }

    /// Softmax-margin loss of one instance, plus `delta` times the scaffold
    /// loss over `scaffold_positives` when given.
    pub fn instance_loss(
        &self,
        g: &mut Graph<'_, f64>,
        t: TargetRef<'_>,
        frame: &str,
        gold: &Segmentation,
        scaffold_positives: Option<&BTreeSet<(usize, usize)>>,
        noise: Option<&mut TrainNoise>,
    ) -> Result<NodeId> {
        let c = self.config();
        let (lattice, table) = self.lattice_nodes(g, t, frame, noise)?;
        let cost = CostConfig::new(c.alpha)?;
        let arg = softmax_margin_loss(g, &lattice, gold, &cost, c.numerator)?;
        match scaffold_positives {
            Some(pos) => {
                let s = self.scaffold.loss(g, &table, pos, c.max_span)?;
                crate::scaffold::joint_loss(g, Some(arg), s, c.delta)
            }
            None => Ok(arg),
        }
    }

    /// `delta` times the scaffold loss of a sentence without a target.
    pub fn scaffold_only_loss(
        &self,
        g: &mut Graph<'_, f64>,
        tokens: &[String],
        pos: &[String],
        positives: &BTreeSet<(usize, usize)>,
        noise: Option<&mut TrainNoise>,
    ) -> Result<NodeId> {
        let (_, table) = self.encode(g, tokens, pos, None, noise)?;
        let s = self
            .scaffold
            .loss(g, &table, positives, self.config().max_span)?;
        crate::scaffold::joint_loss(g, None, s, self.config().delta)
    }

    /// Segment-score values, for decoding and ensembling.
    pub fn score_lattice(&self, t: TargetRef<'_>, frame: &str) -> Result<ScoreLattice<f64>> {
        let mut g = Graph::new(&self.store);
        let (lattice, _) = self.lattice_nodes(&mut g, t, frame, None)?;
        Ok(lattice.map(|&n| g.scalar(n)))
    }

    pub fn decode(&self, t: TargetRef<'_>, frame: &str) -> Result<Segmentation> {
        Ok(viterbi(&self.score_lattice(t, frame)?).0)
    }
}

/// Frame identification network: its own token biLSTM (no distance
/// feature), a target LSTM, an LU table and per-frame output weights.
#[derive(Debug, Clone)]
pub struct FrameIdModel {
    pub spec: ModelSpec,
    pub store: ParameterStore<f64>,
    pub tokens: TokenEncoder,
    pub target: TargetEncoder,
    pub lu: ParamId,
    pub scorer: FrameScorer,
}

impl FrameIdModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let c = spec.config.clone();
        c.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut store = ParameterStore::new();
        let dims = TokenEncoderDims {
            vocab_size: spec.vocab.num_words(),
            word_dim: c.word_dim,
            num_pos: spec.vocab.num_tags(),
            pos_dim: c.pos_dim,
            distance: None,
            hidden_dim: c.hidden_dim,
        };
        let tokens = TokenEncoder::declare(
            &mut store,
            "ftok",
            dims,
            spec.pretrained.as_ref().map(|p| p.table()),
            &mut rng,
        )?;
        let target = TargetEncoder::declare(
            &mut store,
            "ftarget",
            tokens.output_dim(),
            c.hidden_dim,
            &mut rng,
        )?;
        let lu = store.declare(
            "flu",
            &[spec.ontology.lexicon.len() + 1, c.lu_dim],
            ParamKind::Lookup,
            Init::Range(0.0, (3.0 / c.lu_dim as f64).sqrt()),
            &mut rng,
        )?;
        let scorer = FrameScorer::declare(
            &mut store,
            "fscore",
            spec.ontology.frames.len(),
            target.output_dim() + c.lu_dim,
            &mut rng,
        )?;
        Ok(Self {
            spec,
            store,
            tokens,
            target,
            lu,
            scorer,
        })
    }

    pub fn config(&self) -> &Config {
        &self.spec.config
    }

    /// Score nodes for each target of one sentence; the tokens are encoded
    /// once and shared by all targets.
    pub fn sentence_scores(
        &self,
        g: &mut Graph<'_, f64>,
        tokens: &[String],
        pos: &[String],
        targets: &[(TargetSpan, &str)],
        mut noise: Option<&mut TrainNoise>,
    ) -> Result<Vec<(Vec<usize>, Vec<NodeId>)>> {
        let inputs = self
            .spec
            .token_inputs(tokens, pos, None, noise.as_deref_mut())?;
        let mut dropout = dropout_of(&mut noise);
        let h = self.tokens.encode(g, &inputs, dropout.as_mut())?;
        let mut out = Vec::with_capacity(targets.len());
        for &(span, lu) in targets {
            let u_t = self.target.encode(g, &h, span)?;
            let u_l = g.lookup(self.lu, self.spec.lu_row(lu))?;
            let candidates = self.spec.ontology.candidate_frames(lu);
            let scores = self.scorer.scores(g, u_t, u_l, &candidates)?;
            out.push((candidates, scores));
        }
        Ok(out)
    }

    /// Summed negative log-likelihood of the gold frames of one sentence.
    pub fn sentence_loss(
        &self,
        g: &mut Graph<'_, f64>,
        tokens: &[String],
        pos: &[String],
        targets: &[(TargetSpan, &str, &str)],
        noise: Option<&mut TrainNoise>,
    ) -> Result<NodeId> {
        let spans: Vec<_> = targets.iter().map(|&(s, lu, _)| (s, lu)).collect();
        let scored = self.sentence_scores(g, tokens, pos, &spans, noise)?;
        let mut losses = Vec::with_capacity(targets.len());
        for ((cands, scores), &(_, _, frame)) in scored.iter().zip(targets) {
            let f = self.spec.ontology.frame_index(frame)?;
            let gold = cands.iter().position(|&c| c == f).ok_or_else(|| {
                Error::invalid(format!(
                    "frame `{frame}` is not a candidate of its lexical unit"
                ))
            })?;
            losses.push(frameid_loss(g, scores, gold)?);
        }
        g.add_n(&losses)
    }

    /// Score values for each target of one sentence.
    pub fn frame_scores(
        &self,
        tokens: &[String],
        pos: &[String],
        targets: &[(TargetSpan, &str)],
    ) -> Result<Vec<FrameScores<f64>>> {
        let mut g = Graph::new(&self.store);
        let scored = self.sentence_scores(&mut g, tokens, pos, targets, None)?;
        Ok(scored
            .into_iter()
            .map(|(candidates, nodes)| FrameScores {
                candidates,
                scores: nodes.iter().map(|&n| g.scalar(n)).collect(),
            })
            .collect())
    }
}

/// Common access used by checkpointing.
pub trait Model: Sized {
    const KIND: &'static str;
    fn build(spec: ModelSpec) -> Result<Self>;
    fn spec(&self) -> &ModelSpec;
    fn store(&self) -> &ParameterStore<f64>;
    fn store_mut(&mut self) -> &mut ParameterStore<f64>;
}

impl Model for ArgModel {
    const KIND: &'static str = "arg";
    fn build(spec: ModelSpec) -> Result<Self> {
        Self::new(spec)
    }
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }
    fn store(&self) -> &ParameterStore<f64> {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParameterStore<f64> {
        &mut self.store
    }
}

impl Model for FrameIdModel {
    const KIND: &'static str = "frame";
    fn build(spec: ModelSpec) -> Result<Self> {
        Self::new(spec)
    }
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }
    fn store(&self) -> &ParameterStore<f64> {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParameterStore<f64> {
        &mut self.store
    }
}

/// Zeroes every parameter whose name starts with `prefix`.
pub fn zero_parameters(store: &mut ParameterStore<f64>, prefix: &str) {
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.name.starts_with(prefix))
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        store.value_mut(id).fill(0.0);
    }
}

/// A copy of a tensor with `rows` leading rows dropped.
pub(crate) fn drop_leading_rows(t: &Tensor<f64>, rows: usize) -> Vec<f64> {
    t.data()[rows * t.cols()..].to_vec()
}
