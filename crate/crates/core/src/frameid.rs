//! Frame identification: pick the frame a target evokes among the
//! candidates its lexical unit allows.

use rand::Rng;

use crate::autodiff::{log_sum_exp, Graph, Init, NodeId, ParamId, ParamKind, ParameterStore};
use crate::error::{Error, Result};
use crate::Scalar;

/// Per-frame output layer: `nu(f) = w3[f] * relu(w4[f] . [u_t; u_l])`.
///
/// `w3` starts at 1 and `w4` is nonnegative at initialization; together
/// with nonnegative LU embeddings this starts every frame unit active.
#[derive(Debug, Clone, Copy)]
pub struct FrameScorer {
    /// `[num_frames, 1]`
    pub w3: ParamId,
    /// `[num_frames, input_dim]`
    pub w4: ParamId,
}

impl FrameScorer {
    pub fn declare<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        prefix: &str,
        num_frames: usize,
        input_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w3: store.declare(
                &format!("{prefix}.w3"),
                &[num_frames, 1],
                ParamKind::Lookup,
                Init::Constant(1.0),
                rng,
            )?,
            w4: store.declare(
                &format!("{prefix}.w4"),
                &[num_frames, input_dim],
                ParamKind::Lookup,
                Init::Range(0.0, (3.0 / input_dim as f64).sqrt()),
                rng,
            )?,
        })
    }

    /// One score per candidate, in candidate order.
    pub fn scores<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        u_t: NodeId,
        u_l: NodeId,
        candidates: &[usize],
    ) -> Result<Vec<NodeId>> {
        if candidates.is_empty() {
            return Err(Error::invalid("empty frame candidate set"));
        }
        let x = g.concat(&[u_t, u_l])?;
        let mut out = Vec::with_capacity(candidates.len());
        for &f in candidates {
            let w4 = g.lookup(self.w4, f)?;
            let w3 = g.lookup(self.w3, f)?;
            let a = g.dot(w4, x)?;
            let a = g.relu(a);
            out.push(g.mul(w3, a)?);
        }
        Ok(out)
    }
}

/// Softmax over the candidates.
pub fn frame_posterior<T: Scalar>(scores: &[T]) -> Result<Vec<T>> {
    if scores.is_empty() {
        return Err(Error::invalid("empty frame score list"));
    }
    let z = log_sum_exp(scores);
    Ok(scores.iter().map(|&s| (s - z).exp()).collect())
}

/// `-log p(gold)`, where `gold` indexes the score list.
pub fn frameid_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    scores: &[NodeId],
    gold: usize,
) -> Result<NodeId> {
    if gold >= scores.len() {
        return Err(Error::invalid(format!(
            "gold index {gold} outside {} candidates",
            scores.len()
        )));
    }
    let z = g.log_sum_exp(scores)?;
    g.sub(z, scores[gold])
}

/// Scores of one model over an ordered candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScores<T> {
    pub candidates: Vec<usize>,
    pub scores: Vec<T>,
}

/// Frame with the largest summed score; ties go to the earlier candidate.
pub fn frameid_ensemble<T: Scalar>(members: &[FrameScores<T>]) -> Result<usize> {
    let first = members
        .first()
        .ok_or_else(|| Error::invalid("ensemble without members"))?;
    let k = first.candidates.len();
    if k == 0 {
        return Err(Error::invalid("empty frame candidate set"));
    }
    let mut total = vec![T::zero(); k];
    for m in members {
        if m.candidates != first.candidates || m.scores.len() != k {
            return Err(Error::invalid(
                "ensemble members disagree on candidate frames",
            ));
        }
        for (t, &s) in total.iter_mut().zip(&m.scores) {
            *t += s;
        }
    }
    let mut best = 0;
    for c in 1..k {
        if total[c] > total[best] {
            best = c;
        }
    }
    Ok(first.candidates[best])
}
