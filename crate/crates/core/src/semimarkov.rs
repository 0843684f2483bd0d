//! Exact inference for a zeroth-order semi-Markov model over labeled
//! segmentations.
//!
//! Label `0` is always the null label; labels `1..num_labels` are the roles
//! of the frame in ontology order. All sums run in log space.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::Scalar;

/// Label index of the null role.
pub const NULL_LABEL: usize = 0;

/// Largest sentence [`enumerate_segmentations`] accepts.
pub const MAX_ENUMERATION_LENGTH: usize = 8;

/// A labeled span `[start, end]` (inclusive, 0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize, label: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end, label }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_null(&self) -> bool {
        self.label == NULL_LABEL
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos <= self.end
    }
}

/// Ordered segments tiling `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Segmentation {
    n: usize,
    segments: Vec<Segment>,
}

impl Segmentation {
    /// Validates tiling and the length cap.
    pub fn new(n: usize, segments: Vec<Segment>, max_len: usize) -> Result<Self> {
        let mut next = 0;
        for s in &segments {
            if s.start != next || s.end < s.start || s.end >= n {
                return Err(Error::Validation(format!(
                    "segments do not tile 0..{n}: {segments:?}"
                )));
            }
            if s.len() > max_len {
                return Err(Error::Validation(format!(
                    "segment {}..={} longer than {max_len}",
                    s.start, s.end
                )));
            }
            next = s.end + 1;
        }
        if next != n || n == 0 {
            return Err(Error::Validation(format!(
                "segments do not tile 0..{n}: {segments:?}"
            )));
        }
        Ok(Self { n, segments })
    }

    /// Builds a segmentation from non-null arguments, filling every gap
    /// greedily left to right with null segments of length at most `max_len`.
    pub fn from_arguments(n: usize, arguments: &[Segment], max_len: usize) -> Result<Self> {
        let mut args = arguments.to_vec();
        args.sort();
        let mut segments = Vec::new();
        let mut pos = 0;
        for a in args {
            if a.is_null() {
                return Err(Error::Validation("argument with null label".into()));
            }
            if a.start < pos || a.end >= n {
                return Err(Error::Validation(format!(
                    "argument {}..={} overlaps another or leaves the sentence",
                    a.start, a.end
                )));
            }
            fill_gap(&mut segments, pos, a.start, max_len);
            segments.push(a);
            pos = a.end + 1;
        }
        fill_gap(&mut segments, pos, n, max_len);
        Self::new(n, segments, max_len)
    }

    pub fn sentence_len(&self) -> usize {
        self.n
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Non-null segments.
    pub fn arguments(&self) -> impl Iterator<Item = &Segment> + '_ {
        self.segments.iter().filter(|s| !s.is_null())
    }

    pub fn contains(&self, seg: &Segment) -> bool {
        self.segments
            .binary_search_by(|s| s.start.cmp(&seg.start))
            .is_ok_and(|k| self.segments[k] == *seg)
    }

    /// Σ of segment scores, accumulated left to right from zero.
    pub fn score<T: Scalar>(&self, lattice: &ScoreLattice<T>) -> T {
        self.segments.iter().fold(T::zero(), |acc, s| {
            acc + *lattice.get(s.start, s.end, s.label)
        })
    }
}

fn fill_gap(out: &mut Vec<Segment>, from: usize, to: usize, max_len: usize) {
    let mut i = from;
    while i < to {
        let end = (i + max_len).min(to) - 1;
        out.push(Segment::new(i, end, NULL_LABEL));
        i = end + 1;
    }
}

/// One value per labeled span `(i, j, y)` with `j - i + 1 <= max_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLattice<V> {
    n: usize,
    max_len: usize,
    num_labels: usize,
    offsets: Vec<usize>,
    cells: Vec<V>,
}

impl<V> ScoreLattice<V> {
    /// Fills the lattice in `(i, length, label)` order.
    pub fn try_from_fn(
        n: usize,
        max_len: usize,
        num_labels: usize,
        mut f: impl FnMut(usize, usize, usize) -> Result<V>,
    ) -> Result<Self> {
        if n == 0 || max_len == 0 || num_labels == 0 {
            return Err(Error::invalid(format!(
                "lattice needs positive sizes, got n={n} b={max_len} labels={num_labels}"
            )));
        }
        let mut offsets = Vec::with_capacity(n);
        let mut cells = Vec::new();
        for i in 0..n {
            offsets.push(cells.len());
            for j in i..(i + max_len).min(n) {
                for y in 0..num_labels {
                    cells.push(f(i, j, y)?);
                }
            }
        }
        Ok(Self {
            n,
            max_len,
            num_labels,
            offsets,
            cells,
        })
    }

    pub fn from_fn(
        n: usize,
        max_len: usize,
        num_labels: usize,
        mut f: impl FnMut(usize, usize, usize) -> V,
    ) -> Result<Self> {
        Self::try_from_fn(n, max_len, num_labels, |i, j, y| Ok(f(i, j, y)))
    }

    pub fn sentence_len(&self) -> usize {
        self.n
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn get(&self, i: usize, j: usize, y: usize) -> &V {
        debug_assert!(i <= j && j < self.n && j - i < self.max_len && y < self.num_labels);
        &self.cells[self.offsets[i] + (j - i) * self.num_labels + y]
    }

    pub fn get_mut(&mut self, i: usize, j: usize, y: usize) -> &mut V {
        &mut self.cells[self.offsets[i] + (j - i) * self.num_labels + y]
    }

    pub fn map<W>(&self, mut f: impl FnMut(&V) -> W) -> ScoreLattice<W> {
        ScoreLattice {
            n: self.n,
            max_len: self.max_len,
            num_labels: self.num_labels,
            offsets: self.offsets.clone(),
            cells: self.cells.iter().map(&mut f).collect(),
        }
    }

    pub fn cells(&self) -> &[V] {
        &self.cells
    }

    /// Every `(i, j, y)` in storage order.
    pub fn positions(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| {
            (i..(i + self.max_len).min(self.n))
                .flat_map(move |j| (0..self.num_labels).map(move |y| (i, j, y)))
        })
    }

    fn same_layout<W>(&self, other: &ScoreLattice<W>) -> bool {
        self.n == other.n && self.max_len == other.max_len && self.num_labels == other.num_labels
    }
}

impl<T: Scalar> ScoreLattice<T> {
    /// Cellwise sum, used to ensemble several models.
    pub fn add_assign(&mut self, other: &ScoreLattice<T>) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::invalid("lattices with different layouts"));
        }
        for (a, &b) in self.cells.iter_mut().zip(&other.cells) {
            *a += b;
        }
        Ok(())
    }
}

/// Recall-oriented cost weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostConfig {
    /// False-negative weight.
    pub alpha: f64,
}

impl CostConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { alpha: 2.0 }
    }
}

/// How the gold numerator treats null regions between arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NumeratorMode {
    /// Sum over every null tiling of the gaps.
    #[default]
    Marginal,
    /// One fixed tiling: each gap cut greedily into maximal null chunks.
    Canonical,
}

/// Cost of predicting `seg` against `gold`.
///
/// Zero when `seg` is in `gold`. Otherwise one false positive if `seg` is
/// non-null, plus `alpha` for every gold argument whose first token lies in
/// `seg`.
pub fn span_cost<T: Scalar>(seg: &Segment, gold: &Segmentation, cfg: &CostConfig) -> T {
    if gold.contains(seg) {
        return T::zero();
    }
    let fp = if seg.is_null() { 0.0 } else { 1.0 };
    let missed = gold.arguments().filter(|g| seg.contains(g.start)).count() as f64;
    T::from_f64(fp + cfg.alpha * missed).unwrap()
}

/// `log Z`, with the cost of each segment added inside the exponent when
/// `gold` is given.
pub fn log_partition<T: Scalar>(
    g: &mut Graph<'_, T>,
    lattice: &ScoreLattice<NodeId>,
    gold: Option<&Segmentation>,
    cfg: &CostConfig,
) -> Result<NodeId> {
    let n = lattice.sentence_len();
    if let Some(gold) = gold {
        if gold.sentence_len() != n {
            return Err(Error::invalid(format!(
                "gold covers {} tokens, lattice {n}",
                gold.sentence_len()
            )));
        }
    }
    // prefix[k] is log z over the first k tokens; prefix[0] = 0 is implicit.
    let mut prefix: Vec<Option<NodeId>> = vec![None; n + 1];
    for j in 0..n {
        let lo = (j + 1).saturating_sub(lattice.max_len());
        let mut terms = Vec::new();
        for i in (lo..=j).rev() {
            for y in 0..lattice.num_labels() {
                let phi = *lattice.get(i, j, y);
                let mut term = match prefix[i] {
                    Some(p) => g.add(p, phi)?,
                    None => phi,
                };
                if let Some(gold) = gold {
                    let c: T = span_cost(&Segment::new(i, j, y), gold, cfg);
                    if c != T::zero() {
                        term = g.add_const(term, c);
                    }
                }
                terms.push(term);
            }
        }
        prefix[j + 1] = Some(g.log_sum_exp(&terms)?);
    }
    Ok(prefix[n].expect("n > 0"))
}

/// Log of the total score of all segmentations whose arguments are exactly
/// the gold arguments.
pub fn constrained_log_numerator<T: Scalar>(
    g: &mut Graph<'_, T>,
    lattice: &ScoreLattice<NodeId>,
    gold: &Segmentation,
    mode: NumeratorMode,
) -> Result<NodeId> {
    let n = lattice.sentence_len();
    let b = lattice.max_len();
    if gold.sentence_len() != n {
        return Err(Error::invalid(format!(
            "gold covers {} tokens, lattice {n}",
            gold.sentence_len()
        )));
    }
    let args: Vec<Segment> = gold.arguments().copied().collect();
    if let Some(a) = args
        .iter()
        .find(|a| a.len() > b || a.label >= lattice.num_labels())
    {
        return Err(Error::invalid(format!(
            "gold argument {}..={} (label {}) does not fit the lattice (b = {b})",
            a.start, a.end, a.label
        )));
    }
    match mode {
        NumeratorMode::Canonical => {
            let canonical = Segmentation::from_arguments(n, &args, b)?;
            let nodes: Vec<NodeId> = canonical
                .segments()
                .iter()
                .map(|s| *lattice.get(s.start, s.end, s.label))
                .collect();
            g.add_n(&nodes)
        }
        NumeratorMode::Marginal => {
            // covering[k] = gold argument containing token k
            let mut covering: Vec<Option<Segment>> = vec![None; n];
            for a in &args {
                for slot in &mut covering[a.start..=a.end] {
                    *slot = Some(*a);
                }
            }
            let mut prefix: Vec<Option<NodeId>> = vec![None; n + 1];
            let mut gap_start = 0;
            for j in 0..n {
                match covering[j] {
                    Some(a) => {
                        if j == a.end {
                            let phi = *lattice.get(a.start, a.end, a.label);
                            prefix[j + 1] = Some(match prefix[a.start] {
                                Some(p) => g.add(p, phi)?,
                                None => phi,
                            });
                        }
                        gap_start = j + 1;
                    }
                    None => {
                        let lo = gap_start.max((j + 1).saturating_sub(b));
                        let mut terms = Vec::new();
                        for i in (lo..=j).rev() {
                            let phi = *lattice.get(i, j, NULL_LABEL);
                            terms.push(match prefix[i] {
                                Some(p) => g.add(p, phi)?,
                                None => phi,
                            });
                        }
                        prefix[j + 1] = Some(g.log_sum_exp(&terms)?);
                    }
                }
            }
            Ok(prefix[n].expect("n > 0"))
        }
    }
}

/// Softmax-margin loss `log Z(cost) - log numerator`.
pub fn softmax_margin_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    lattice: &ScoreLattice<NodeId>,
    gold: &Segmentation,
    cfg: &CostConfig,
    mode: NumeratorMode,
) -> Result<NodeId> {
    let log_z = log_partition(g, lattice, Some(gold), cfg)?;
    let numerator = constrained_log_numerator(g, lattice, gold, mode)?;
    g.sub(log_z, numerator)
}

/// Highest-scoring segmentation and its score.
///
/// For each end position, starts are scanned from `j` downwards and labels
/// with null first; a candidate wins only on strict improvement.
pub fn viterbi<T: Scalar>(lattice: &ScoreLattice<T>) -> (Segmentation, T) {
    let n = lattice.sentence_len();
    let mut best = vec![T::zero(); n + 1];
    let mut back = vec![Segment::new(0, 0, 0); n + 1];
    for j in 0..n {
        let lo = (j + 1).saturating_sub(lattice.max_len());
        let mut incumbent: Option<(T, Segment)> = None;
        for i in (lo..=j).rev() {
            for y in 0..lattice.num_labels() {
                let cand = best[i] + *lattice.get(i, j, y);
                if incumbent.is_none_or(|(s, _)| cand > s) {
                    incumbent = Some((cand, Segment::new(i, j, y)));
                }
            }
        }
        let (score, seg) = incumbent.expect("at least one candidate");
        best[j + 1] = score;
        back[j + 1] = seg;
    }
    let mut segments = Vec::new();
    let mut k = n;
    while k > 0 {
        let s = back[k];
        segments.push(s);
        k = s.start;
    }
    segments.reverse();
    let seg = Segmentation { n, segments };
    (seg, best[n])
}

/// Every labeled segmentation of `n` tokens, in lexicographic order.
pub fn enumerate_segmentations(
    n: usize,
    num_labels: usize,
    max_len: usize,
) -> Result<Vec<Segmentation>> {
    if n == 0 || n > MAX_ENUMERATION_LENGTH {
        return Err(Error::invalid(format!(
            "enumeration supports 1..={MAX_ENUMERATION_LENGTH} tokens, got {n}"
        )));
    }
    if num_labels == 0 || max_len == 0 {
        return Err(Error::invalid("need at least one label and max_len >= 1"));
    }
    fn go(
        pos: usize,
        n: usize,
        labels: usize,
        b: usize,
        cur: &mut Vec<Segment>,
        out: &mut Vec<Segmentation>,
    ) {
        if pos == n {
            out.push(Segmentation {
                n,
                segments: cur.clone(),
            });
            return;
        }
        for end in pos..(pos + b).min(n) {
            for y in 0..labels {
                cur.push(Segment::new(pos, end, y));
                go(end + 1, n, labels, b, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(0, n, num_labels, max_len, &mut Vec::new(), &mut out);
    Ok(out)
}
