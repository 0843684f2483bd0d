//! Token, span and target encoders, plus frame and lexical-unit tables.

use rand::{Rng, RngCore};

use crate::autodiff::{
    dropout_mask, Graph, Init, Lstm, NodeId, ParamId, ParamKind, ParameterStore, Tensor,
};
use crate::error::{Error, Result};
use crate::Scalar;

/// Indices describing one token of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenInput {
    pub word_id: usize,
    /// Row of the frozen pretrained table; 0 is the all-zero UNK row.
    pub pretrained_id: usize,
    pub pos_id: usize,
    /// Signed offset from the target's first token; `None` for sentences
    /// without a target, which get a zero distance vector.
    pub target_distance: Option<i64>,
}

/// Inverted dropout applied to token input vectors during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

/// Table sizes and dimensions of a [`TokenEncoder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenEncoderDims {
    pub vocab_size: usize,
    pub word_dim: usize,
    pub num_pos: usize,
    pub pos_dim: usize,
    /// `None` leaves the distance embedding out of the input vector.
    pub distance: Option<DistanceDims>,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistanceDims {
    pub dim: usize,
    pub max_distance: usize,
}

/// Embedding lookups followed by a bidirectional LSTM.
#[derive(Debug, Clone)]
pub struct TokenEncoder {
    pub word: ParamId,
    pub pretrained: Option<ParamId>,
    pub pos: ParamId,
    pub distance: Option<ParamId>,
    pub fwd: Lstm,
    pub bwd: Lstm,
    pub max_distance: usize,
    pub distance_dim: usize,
    pub input_dim: usize,
}

impl TokenEncoder {
    /// Declares all parameters under `prefix`. A given `pretrained` table is
    /// stored frozen; its row 0 is forced to zero.
    pub fn declare<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        prefix: &str,
        dims: TokenEncoderDims,
        pretrained: Option<Tensor<T>>,
        rng: &mut R,
    ) -> Result<Self> {
        let word = store.declare(
            &format!("{prefix}.word"),
            &[dims.vocab_size, dims.word_dim],
            ParamKind::Lookup,
            Init::Glorot,
            rng,
        )?;
        let pos = store.declare(
            &format!("{prefix}.pos"),
            &[dims.num_pos, dims.pos_dim],
            ParamKind::Lookup,
            Init::Glorot,
            rng,
        )?;
        let mut input_dim = dims.word_dim + dims.pos_dim;
        let pretrained = match pretrained {
            Some(mut table) => {
                if table.shape().len() != 2 {
                    return Err(Error::invalid("pretrained table must be a matrix"));
                }
                input_dim += table.cols();
                table.row_mut(0).iter_mut().for_each(|v| *v = T::zero());
                Some(store.insert(
                    &format!("{prefix}.pretrained"),
                    table,
                    ParamKind::Lookup,
                    false,
                )?)
            }
            None => None,
        };
        let (distance, max_distance, distance_dim) = match dims.distance {
            Some(d) => {
                input_dim += d.dim;
                let id = store.declare(
                    &format!("{prefix}.distance"),
                    &[2 * d.max_distance + 1, d.dim],
                    ParamKind::Lookup,
                    Init::Glorot,
                    rng,
                )?;
                (Some(id), d.max_distance, d.dim)
            }
            None => (None, 0, 0),
        };
        let fwd = Lstm::declare(
            store,
            &format!("{prefix}.fwd"),
            input_dim,
            dims.hidden_dim,
            rng,
        )?;
        let bwd = Lstm::declare(
            store,
            &format!("{prefix}.bwd"),
            input_dim,
            dims.hidden_dim,
            rng,
        )?;
        Ok(Self {
            word,
            pretrained,
            pos,
            distance,
            fwd,
            bwd,
            max_distance,
            distance_dim,
            input_dim,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden_dim
    }

    /// Row of the distance table for a signed offset.
    pub fn distance_row(&self, distance: i64) -> usize {
        let m = self.max_distance as i64;
        (distance.clamp(-m, m) + m) as usize
    }

    /// `v_q = [word; pretrained; pos; distance]` for every token.
    pub fn input_vectors<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        tokens: &[TokenInput],
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Vec<NodeId>> {
        let mut out = Vec::with_capacity(tokens.len());
        for t in tokens {
            let mut parts = vec![g.lookup(self.word, t.word_id)?];
            if let Some(p) = self.pretrained {
                parts.push(g.lookup(p, t.pretrained_id)?);
            }
            parts.push(g.lookup(self.pos, t.pos_id)?);
            if let Some(d) = self.distance {
                parts.push(match t.target_distance {
                    Some(dist) => g.lookup(d, self.distance_row(dist))?,
                    None => g.input(Tensor::zeros(&[self.distance_dim])),
                });
            }
            let mut v = g.concat(&parts)?;
            if let Some(d) = dropout.as_deref_mut() {
                if d.rate > 0.0 {
                    let mask = dropout_mask::<T, _>(&[self.input_dim], d.rate, &mut *d.rng)?;
                    let m = g.input(mask);
                    v = g.mul(v, m)?;
                }
            }
            out.push(v);
        }
        Ok(out)
    }

    /// One `[forward; backward]` state per token.
    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        tokens: &[TokenInput],
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Vec<NodeId>> {
        if tokens.is_empty() {
            return Err(Error::invalid("cannot encode an empty sentence"));
        }
        let inputs = self.input_vectors(g, tokens, dropout)?;
        let fwd = self.fwd.run(g, &inputs)?;
        let rev: Vec<NodeId> = inputs.iter().rev().copied().collect();
        let mut bwd = self.bwd.run(g, &rev)?;
        bwd.reverse();
        fwd.iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect()
    }
}

/// Embeddings of all spans of length at most `max_len`.
#[derive(Debug, Clone)]
pub struct SpanTable {
    n: usize,
    max_len: usize,
    offsets: Vec<usize>,
    entries: Vec<NodeId>,
}

impl SpanTable {
    pub fn sentence_len(&self) -> usize {
        self.n
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<NodeId> {
        if i > j || j >= self.n || j - i >= self.max_len {
            return None;
        }
        Some(self.entries[self.offsets[i] + j - i])
    }

    /// `(i, j, embedding)` in order of `i`, then `j`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, NodeId)> + '_ {
        (0..self.n).flat_map(move |i| {
            (i..(i + self.max_len).min(self.n))
                .map(move |j| (i, j, self.entries[self.offsets[i] + j - i]))
        })
    }
}

/// Bidirectional span LSTM over token encodings.
#[derive(Debug, Clone, Copy)]
pub struct SpanEncoder {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl SpanEncoder {
    pub fn declare<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            fwd: Lstm::declare(store, &format!("{prefix}.fwd"), input_dim, hidden_dim, rng)?,
            bwd: Lstm::declare(store, &format!("{prefix}.bwd"), input_dim, hidden_dim, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden_dim
    }

    /// `h_span(i, j) = [fwd run from i, state at j; bwd run from j, state at i]`.
    ///
    /// One forward run per start and one backward run per end; every prefix
    /// of a run is reused for all shorter spans.
    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        h_tok: &[NodeId],
        max_len: usize,
    ) -> Result<SpanTable> {
        let n = h_tok.len();
        if max_len == 0 {
            return Err(Error::invalid("span length cap must be at least 1"));
        }
        // fwd_states[i][k] = forward state at i + k of the run from i
        let mut fwd_states = Vec::with_capacity(n);
        for i in 0..n {
            let end = (i + max_len).min(n);
            fwd_states.push(self.fwd.run(g, &h_tok[i..end])?);
        }
        // bwd_states[j][k] = backward state at j - k of the run from j
        let mut bwd_states = Vec::with_capacity(n);
        for j in 0..n {
            let lo = (j + 1).saturating_sub(max_len);
            let rev: Vec<NodeId> = h_tok[lo..=j].iter().rev().copied().collect();
            bwd_states.push(self.bwd.run(g, &rev)?);
        }
        let mut offsets = Vec::with_capacity(n);
        let mut entries = Vec::new();
        for i in 0..n {
            offsets.push(entries.len());
            for j in i..(i + max_len).min(n) {
                let f = fwd_states[i][j - i];
                let b = bwd_states[j][j - i];
                entries.push(g.concat(&[f, b])?);
            }
        }
        Ok(SpanTable {
            n,
            max_len,
            offsets,
            entries,
        })
    }

    /// The same embedding computed from scratch over tokens `i..=j` only.
    pub fn encode_one<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        h_tok: &[NodeId],
        i: usize,
        j: usize,
    ) -> Result<NodeId> {
        let f = *self
            .fwd
            .run(g, &h_tok[i..=j])?
            .last()
            .expect("nonempty span");
        let rev: Vec<NodeId> = h_tok[i..=j].iter().rev().copied().collect();
        let b = *self.bwd.run(g, &rev)?.last().expect("nonempty span");
        g.concat(&[f, b])
    }
}

/// Inclusive token span of a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TargetSpan {
    pub start: usize,
    pub end: usize,
}

impl TargetSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    /// The target plus one neighbor on each side, clipped to `0..n`.
    pub fn context_window(&self, n: usize) -> std::ops::RangeInclusive<usize> {
        self.start.saturating_sub(1)..=(self.end + 1).min(n - 1)
    }
}

/// Forward LSTM over the target and its immediate neighbors.
#[derive(Debug, Clone, Copy)]
pub struct TargetEncoder {
    pub lstm: Lstm,
}

impl TargetEncoder {
    pub fn declare<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            lstm: Lstm::declare(store, prefix, input_dim, hidden_dim, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.lstm.hidden_dim
    }

    pub fn encode<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        h_tok: &[NodeId],
        target: TargetSpan,
    ) -> Result<NodeId> {
        let n = h_tok.len();
        if target.start > target.end || target.end >= n {
            return Err(Error::invalid(format!(
                "target {}..={} outside a sentence of {n} tokens",
                target.start, target.end
            )));
        }
        let states = self.lstm.run(g, &h_tok[target.context_window(n)])?;
        Ok(*states.last().expect("nonempty window"))
    }
}

/// Learned frame and lexical-unit tables. LU row 0 is the UNK row.
#[derive(Debug, Clone, Copy)]
pub struct FrameLuTables {
    pub frame: ParamId,
    pub lu: ParamId,
}

impl FrameLuTables {
    pub fn declare<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        prefix: &str,
        num_frames: usize,
        frame_dim: usize,
        num_lus: usize,
        lu_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            frame: store.declare(
                &format!("{prefix}.frame"),
                &[num_frames, frame_dim],
                ParamKind::Lookup,
                Init::Glorot,
                rng,
            )?,
            lu: store.declare(
                &format!("{prefix}.lu"),
                &[num_lus, lu_dim],
                ParamKind::Lookup,
                Init::Glorot,
                rng,
            )?,
        })
    }

    pub fn lookup<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        frame_id: usize,
        lu_id: usize,
    ) -> Result<(NodeId, NodeId)> {
        Ok((g.lookup(self.frame, frame_id)?, g.lookup(self.lu, lu_id)?))
    }

    /// `v_{f,l,t} = [v_f; v_l; v_t]`.
    pub fn target_frame_embedding<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        frame_id: usize,
        lu_id: usize,
        v_t: NodeId,
    ) -> Result<NodeId> {
        let (f, l) = self.lookup(g, frame_id, lu_id)?;
        g.concat(&[f, l, v_t])
    }
}
