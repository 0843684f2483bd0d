//! Binary span scaffold: is a span a constituent (or frame element)?

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Init, NodeId, ParamId, ParamKind, ParameterStore};
use crate::encoders::SpanTable;
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaffoldSource {
    Treebank,
    Framenet,
}

/// A sentence with the spans labeled `r* = 1`. All other candidate spans are
/// negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaffoldInstance {
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    pub positive_spans: BTreeSet<(usize, usize)>,
    pub source: ScaffoldSource,
}

impl ScaffoldInstance {
    pub fn validate(&self, max_len: usize) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 || self.pos.len() != n {
            return Err(Error::Validation(format!(
                "scaffold sentence with {n} tokens and {} tags",
                self.pos.len()
            )));
        }
        for &(i, j) in &self.positive_spans {
            if i > j || j >= n || j - i + 1 > max_len {
                return Err(Error::Validation(format!(
                    "scaffold span {i}..={j} invalid for {n} tokens and cap {max_len}"
                )));
            }
        }
        Ok(())
    }
}

/// `psi(i, j, r) = w2 . relu(W1 [h_span; v_r])`.
/// A span and its two label score nodes.
type LabeledSpan = ((usize, usize), [NodeId; 2]);

#[derive(Debug, Clone, Copy)]
pub struct ScaffoldScorer {
    pub label: ParamId,
    pub w1: ParamId,
    pub w2: ParamId,
    pub span_dim: usize,
}

impl ScaffoldScorer {
    pub fn declare<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        prefix: &str,
        span_dim: usize,
        label_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            label: store.declare(
                &format!("{prefix}.label"),
                &[2, label_dim],
                ParamKind::Lookup,
                Init::Glorot,
                rng,
            )?,
            w1: store.declare(
                &format!("{prefix}.w1"),
                &[hidden_dim, span_dim + label_dim],
                ParamKind::Dense,
                Init::Glorot,
                rng,
            )?,
            w2: store.declare(
                &format!("{prefix}.w2"),
                &[hidden_dim],
                ParamKind::Dense,
                Init::Glorot,
                rng,
            )?,
            span_dim,
        })
    }

    pub fn psi<T: Scalar>(&self, g: &mut Graph<'_, T>, h_span: NodeId, r: usize) -> Result<NodeId> {
        let v_r = g.lookup(self.label, r)?;
        let x = g.concat(&[h_span, v_r])?;
        let w1 = g.param(self.w1);
        let pre = g.matvec(w1, x)?;
        let hidden = g.relu(pre);
        let w2 = g.param(self.w2);
        g.dot(w2, hidden)
    }

    /// `(psi(., 0), psi(., 1))` for every span of length at most `max_len`,
    /// multiplying the span block of the first layer once per span.
    pub fn scores<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        spans: &SpanTable,
        max_len: usize,
    ) -> Result<Vec<LabeledSpan>> {
        let w1 = g.param(self.w1);
        let w2 = g.param(self.w2);
        let mut label_parts = [None, None];
        for (r, slot) in label_parts.iter_mut().enumerate() {
            let v_r = g.lookup(self.label, r)?;
            *slot = Some(g.matvec_cols(w1, v_r, self.span_dim)?);
        }
        let mut out = Vec::new();
        for (i, j, h) in spans.iter().filter(|&(i, j, _)| j - i < max_len) {
            let base = g.matvec_cols(w1, h, 0)?;
            let mut pair = [base; 2];
            for (r, p) in pair.iter_mut().enumerate() {
                let pre = g.add(base, label_parts[r].expect("set above"))?;
                let hidden = g.relu(pre);
                *p = g.dot(w2, hidden)?;
            }
            out.push(((i, j), pair));
        }
        Ok(out)
    }

    /// Σ over candidate spans of `-log p(r* | span)`.
    pub fn loss<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        spans: &SpanTable,
        positives: &BTreeSet<(usize, usize)>,
        max_len: usize,
    ) -> Result<NodeId> {
        let mut terms = Vec::new();
        for ((i, j), psi) in self.scores(g, spans, max_len)? {
            let r = usize::from(positives.contains(&(i, j)));
            terms.push(span_logistic_loss(g, psi, r)?);
        }
        g.add_n(&terms)
    }
}

/// `lse(psi_0, psi_1) - psi_r`.
pub fn span_logistic_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    psi: [NodeId; 2],
    r: usize,
) -> Result<NodeId> {
    let z = g.log_sum_exp(&psi)?;
    g.sub(z, psi[r])
}

/// `p(r = 1)` from the two scores.
pub fn positive_probability<T: Scalar>(psi0: T, psi1: T) -> T {
    T::one() / (T::one() + (psi0 - psi1).exp())
}

/// `arg_loss + delta * scaffold_loss`; treebank sentences have no argument term.
pub fn joint_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    arg_loss: Option<NodeId>,
    scaffold_loss: NodeId,
    delta: T,
) -> Result<NodeId> {
    if delta < T::zero() {
        return Err(Error::invalid("scaffold weight must be nonnegative"));
    }
    let weighted = g.scale(scaffold_loss, delta);
    match arg_loss {
        Some(a) => g.add(a, weighted),
        None => Ok(weighted),
    }
}
