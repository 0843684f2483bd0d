//! Segment features and the segment factor `phi`.

use rand::Rng;

use crate::autodiff::{Graph, Init, NodeId, ParamId, ParamKind, ParameterStore, Tensor};
use crate::encoders::{SpanTable, TargetSpan};
use crate::error::{Error, Result};
use crate::semimarkov::ScoreLattice;
use crate::Scalar;

/// Upper bounds (inclusive) of the length bins; the last bin is open.
const LENGTH_BIN_UPPER: [usize; 8] = [1, 2, 3, 4, 5, 7, 11, 15];

pub const NUM_LENGTH_BINS: usize = 9;
pub const NUM_POSITIONS: usize = 4;
/// Width of the hand-feature vector `mu`.
pub const FEATURE_DIM: usize = NUM_LENGTH_BINS + NUM_POSITIONS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelativePosition {
    Before,
    After,
    /// Partial overlap, or a span strictly containing the target.
    Overlapping,
    /// Span inside the target.
    Within,
}

impl RelativePosition {
    pub fn of(start: usize, end: usize, target: TargetSpan) -> Self {
        if end < target.start {
            Self::Before
        } else if start > target.end {
            Self::After
        } else if start >= target.start && end <= target.end {
            Self::Within
        } else {
            Self::Overlapping
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Bin of a span length: 1, 2, 3, 4, 5, 6-7, 8-11, 12-15, 16+.
pub fn length_bin(len: usize) -> usize {
    LENGTH_BIN_UPPER
        .iter()
        .position(|&u| len <= u)
        .unwrap_or(NUM_LENGTH_BINS - 1)
}

/// The one-hot features `mu` of a span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SegmentFeatures {
    pub length_bin: usize,
    pub position: RelativePosition,
}

impl SegmentFeatures {
    pub fn new(start: usize, end: usize, target: TargetSpan) -> Self {
        Self {
            length_bin: length_bin(end - start + 1),
            position: RelativePosition::of(start, end, target),
        }
    }

    pub fn to_vec<T: Scalar>(&self) -> Vec<T> {
        let mut v = vec![T::zero(); FEATURE_DIM];
        v[self.length_bin] = T::one();
        v[NUM_LENGTH_BINS + self.position.index()] = T::one();
        v
    }

    fn key(&self) -> usize {
        self.length_bin * NUM_POSITIONS + self.position.index()
    }
}

/// `phi(s) = w2 . relu(W1 [h_span; v_y; mu; v_flt])`.
///
/// Role row 0 is the null label.
#[derive(Debug, Clone, Copy)]
pub struct SegmentScorer {
    pub role: ParamId,
    pub w1: ParamId,
    pub w2: ParamId,
    pub span_dim: usize,
    pub role_dim: usize,
    pub flt_dim: usize,
}

impl SegmentScorer {
    #[allow(clippy::too_many_arguments)]
    pub fn declare<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        prefix: &str,
        span_dim: usize,
        num_roles: usize,
        role_dim: usize,
        flt_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let input = span_dim + role_dim + FEATURE_DIM + flt_dim;
        Ok(Self {
            role: store.declare(
                &format!("{prefix}.role"),
                &[num_roles, role_dim],
                ParamKind::Lookup,
                Init::Glorot,
                rng,
            )?,
            w1: store.declare(
                &format!("{prefix}.w1"),
                &[hidden_dim, input],
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
            role_dim,
            flt_dim,
        })
    }

    /// `v_s = [h_span; v_y; mu]`.
    pub fn segment_repr<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        spans: &SpanTable,
        start: usize,
        end: usize,
        role_row: usize,
        target: TargetSpan,
    ) -> Result<NodeId> {
        let h = spans
            .get(start, end)
            .ok_or_else(|| Error::invalid(format!("span {start}..={end} not in the span table")))?;
        let v_y = g.lookup(self.role, role_row)?;
        let mu = g.input(Tensor::vector(
            SegmentFeatures::new(start, end, target).to_vec(),
        ));
        g.concat(&[h, v_y, mu])
    }

    pub fn phi<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        v_s: NodeId,
        v_flt: NodeId,
    ) -> Result<NodeId> {
        let x = g.concat(&[v_s, v_flt])?;
        let w1 = g.param(self.w1);
        let pre = g.matvec(w1, x)?;
        self.output(g, pre)
    }

    fn output<T: Scalar>(&self, g: &mut Graph<'_, T>, pre: NodeId) -> Result<NodeId> {
        let hidden = g.relu(pre);
        let w2 = g.param(self.w2);
        g.dot(w2, hidden)
    }

    /// Scores of every labeled span, computed through [`Self::phi`] one
    /// segment at a time. `roles[y]` is the role row of lattice label `y`.
    pub fn lattice_naive<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        spans: &SpanTable,
        v_flt: NodeId,
        target: TargetSpan,
        roles: &[usize],
    ) -> Result<ScoreLattice<NodeId>> {
        ScoreLattice::try_from_fn(
            spans.sentence_len(),
            spans.max_len(),
            roles.len(),
            |i, j, y| {
                let v_s = self.segment_repr(g, spans, i, j, roles[y], target)?;
                self.phi(g, v_s, v_flt)
            },
        )
    }

    /// Same scores as [`Self::lattice_naive`], with the first layer split
    /// into column blocks so that each span, role, feature pattern and the
    /// target block is multiplied once.
    pub fn lattice<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        spans: &SpanTable,
        v_flt: NodeId,
        target: TargetSpan,
        roles: &[usize],
    ) -> Result<ScoreLattice<NodeId>> {
        if roles.first() != Some(&0) {
            return Err(Error::invalid(
                "lattice label 0 must map to the null role row",
            ));
        }
        let w1 = g.param(self.w1);
        let role_off = self.span_dim;
        let mu_off = role_off + self.role_dim;
        let flt_off = mu_off + FEATURE_DIM;
        let flt_part = g.matvec_cols(w1, v_flt, flt_off)?;
        let mut role_parts = Vec::with_capacity(roles.len());
        for &r in roles {
            let v_y = g.lookup(self.role, r)?;
            role_parts.push(g.matvec_cols(w1, v_y, role_off)?);
        }
        let mut mu_parts: Vec<Option<NodeId>> = vec![None; NUM_LENGTH_BINS * NUM_POSITIONS];
        let mut span_parts = Vec::with_capacity(spans.len());
        for (i, j, h) in spans.iter() {
            let feats = SegmentFeatures::new(i, j, target);
            let mu_part = match mu_parts[feats.key()] {
                Some(p) => p,
                None => {
                    let mu = g.input(Tensor::vector(feats.to_vec()));
                    let p = g.matvec_cols(w1, mu, mu_off)?;
                    let p = g.add(p, flt_part)?;
                    mu_parts[feats.key()] = Some(p);
                    p
                }
            };
            let s = g.matvec_cols(w1, h, 0)?;
            span_parts.push(g.add(s, mu_part)?);
        }
        let mut k = 0;
        ScoreLattice::try_from_fn(
            spans.sentence_len(),
            spans.max_len(),
            roles.len(),
            |_, _, y| {
                let base = span_parts[k / roles.len()];
                k += 1;
                let pre = g.add(base, role_parts[y])?;
                self.output(g, pre)
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::SpanEncoder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relative_positions() {
        let t = TargetSpan::new(2, 3);
        assert_eq!(RelativePosition::of(0, 1, t), RelativePosition::Before);
        assert_eq!(RelativePosition::of(4, 6, t), RelativePosition::After);
        assert_eq!(RelativePosition::of(2, 2, t), RelativePosition::Within);
        assert_eq!(RelativePosition::of(2, 3, t), RelativePosition::Within);
        assert_eq!(RelativePosition::of(1, 4, t), RelativePosition::Overlapping);
        assert_eq!(RelativePosition::of(1, 2, t), RelativePosition::Overlapping);
        assert_eq!(RelativePosition::of(3, 5, t), RelativePosition::Overlapping);
    }

    #[test]
    fn length_bins() {
        let want = [
            (1, 0),
            (2, 1),
            (3, 2),
            (4, 3),
            (5, 4),
            (6, 5),
            (7, 5),
            (8, 6),
            (9, 6),
            (11, 6),
            (12, 7),
            (15, 7),
            (16, 8),
            (40, 8),
        ];
        for (len, bin) in want {
            assert_eq!(length_bin(len), bin, "length {len}");
        }
    }

    #[test]
    fn features_are_two_hot() {
        for (i, j) in [(0, 0), (0, 8), (3, 30)] {
            let v: Vec<f64> = SegmentFeatures::new(i, j, TargetSpan::new(1, 2)).to_vec();
            assert_eq!(v.len(), FEATURE_DIM);
            assert_eq!(v[..NUM_LENGTH_BINS].iter().sum::<f64>(), 1.0);
            assert_eq!(v[NUM_LENGTH_BINS..].iter().sum::<f64>(), 1.0);
        }
        let v: Vec<f64> = SegmentFeatures::new(0, 8, TargetSpan::new(1, 2)).to_vec();
        assert_eq!(v[6], 1.0);
    }

    struct Setup {
        store: ParameterStore<f64>,
        spans: SpanEncoder,
        scorer: SegmentScorer,
        h: Vec<Vec<f64>>,
        flt: Vec<f64>,
    }

    fn setup(seed: u64, n: usize) -> Setup {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::<f64>::new();
        let spans = SpanEncoder::declare(&mut store, "span", 3, 2, &mut rng).unwrap();
        let scorer = SegmentScorer::declare(&mut store, "seg", 4, 4, 3, 5, 6, &mut rng).unwrap();
        let h = (0..n)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let flt = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Setup {
            store,
            spans,
            scorer,
            h,
            flt,
        }
    }

    fn build<'a>(s: &'a Setup, b: usize) -> (Graph<'a, f64>, SpanTable, NodeId) {
        let mut g = Graph::new(&s.store);
        let h: Vec<_> =
            s.h.iter()
                .map(|v| g.input(Tensor::vector(v.clone())))
                .collect();
        let table = s.spans.encode(&mut g, &h, b).unwrap();
        let flt = g.input(Tensor::vector(s.flt.clone()));
        (g, table, flt)
    }

    #[test]
    fn fast_lattice_matches_naive() {
        for seed in 0..10 {
            let s = setup(seed, 7);
            let (mut g, table, flt) = build(&s, 4);
            let roles = [0, 2, 3];
            let t = TargetSpan::new(2, 3);
            let fast = s.scorer.lattice(&mut g, &table, flt, t, &roles).unwrap();
            let naive = s
                .scorer
                .lattice_naive(&mut g, &table, flt, t, &roles)
                .unwrap();
            for (&a, &b) in fast.cells().iter().zip(naive.cells()) {
                assert!((g.scalar(a) - g.scalar(b)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_output_weights_give_zero_scores() {
        let mut s = setup(1, 4);
        s.store.value_mut(s.scorer.w2).fill(0.0);
        let (mut g, table, flt) = build(&s, 3);
        let lat = s
            .scorer
            .lattice(&mut g, &table, flt, TargetSpan::new(0, 0), &[0, 1])
            .unwrap();
        assert!(lat.cells().iter().all(|&c| g.scalar(c) == 0.0));
    }

    #[test]
    fn nonnegative_inputs_and_weights_give_nonnegative_scores() {
        let mut s = setup(2, 5);
        let ids: Vec<_> = s.store.ids().collect();
        for id in ids {
            s.store
                .value_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = v.abs());
        }
        s.h.iter_mut().flatten().for_each(|v| *v = v.abs());
        s.flt.iter_mut().for_each(|v| *v = v.abs());
        let (mut g, table, flt) = build(&s, 5);
        let lat = s
            .scorer
            .lattice_naive(&mut g, &table, flt, TargetSpan::new(1, 1), &[0, 1, 2])
            .unwrap();
        assert!(lat.cells().iter().all(|&c| g.scalar(c) >= 0.0));
    }

    #[test]
    fn hand_computed_two_unit_score() {
        let mut store = ParameterStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // span dim 1, role dim 1, flt dim 1, hidden 2
        let sc = SegmentScorer::declare(&mut store, "seg", 1, 2, 1, 1, 2, &mut rng).unwrap();
        *store.value_mut(sc.role) = Tensor::new(vec![2, 1], vec![0.0, 2.0]).unwrap();
        let cols = 1 + 1 + FEATURE_DIM + 1;
        let mut w1 = vec![0.0; 2 * cols];
        // unit 0: h + v_y + mu[len bin 1] - flt
        w1[0] = 1.0;
        w1[1] = 1.0;
        w1[2 + 1] = 1.0;
        w1[cols - 1] = -1.0;
        // unit 1: -h + 3 * mu[within]
        w1[cols] = -1.0;
        w1[cols + 2 + NUM_LENGTH_BINS + 3] = 3.0;
        *store.value_mut(sc.w1) = Tensor::new(vec![2, cols], w1).unwrap();
        *store.value_mut(sc.w2) = Tensor::vector(vec![0.5, 2.0]);

        let mut g = Graph::new(&store);
        let h = g.input(Tensor::vector(vec![0.3]));
        let mu_vec: Vec<f64> = SegmentFeatures::new(0, 1, TargetSpan::new(0, 1)).to_vec();
        let v_y = g.lookup(sc.role, 1).unwrap();
        let mu = g.input(Tensor::vector(mu_vec));
        let v_s = g.concat(&[h, v_y, mu]).unwrap();
        let flt = g.input(Tensor::vector(vec![0.8]));
        let phi = sc.phi(&mut g, v_s, flt).unwrap();
        // unit 0: 0.3 + 2 + 1 - 0.8 = 2.5; unit 1: -0.3 + 3 = 2.7
        let want = 0.5 * 2.5 + 2.0 * 2.7;
        assert!((g.scalar(phi) - want).abs() < 1e-14);
    }

    #[test]
    fn identical_inputs_score_identically() {
        let s = setup(3, 6);
        let mut g = Graph::new(&s.store);
        let v = g.input(Tensor::vector(vec![0.4, -0.2, 0.9]));
        let h = vec![v; 6];
        let table = s.spans.encode(&mut g, &h, 2).unwrap();
        let flt = g.input(Tensor::vector(s.flt.clone()));
        let t = TargetSpan::new(0, 0);
        let lat = s.scorer.lattice(&mut g, &table, flt, t, &[0, 1]).unwrap();
        // spans (2,2) and (4,4) share embedding, length bin and position
        assert_eq!(g.scalar(*lat.get(2, 2, 1)), g.scalar(*lat.get(4, 4, 1)));
    }

    #[test]
    fn lattice_requires_null_first() {
        let s = setup(4, 3);
        let (mut g, table, flt) = build(&s, 2);
        assert!(s
            .scorer
            .lattice(&mut g, &table, flt, TargetSpan::new(0, 0), &[1, 0])
            .is_err());
    }

    #[test]
    fn phi_gradient_matches_finite_differences() {
        let s = setup(5, 4);
        let roles = [0, 1, 3];
        let t = TargetSpan::new(1, 2);
        let weights: Vec<f64> = (0..30)
            .map(|k| ((k * 37 % 11) as f64 - 5.0) / 5.0)
            .collect();
        let loss = |store: &ParameterStore<f64>| {
            let mut g = Graph::new(store);
            let h: Vec<_> =
                s.h.iter()
                    .map(|v| g.input(Tensor::vector(v.clone())))
                    .collect();
            let table = s.spans.encode(&mut g, &h, 3).unwrap();
            let flt = g.input(Tensor::vector(s.flt.clone()));
            let lat = s.scorer.lattice(&mut g, &table, flt, t, &roles).unwrap();
            let terms: Vec<_> = lat
                .cells()
                .iter()
                .zip(weights.iter().cycle())
                .map(|(&c, &w)| g.scale(c, w))
                .collect();
            let l = g.add_n(&terms).unwrap();
            (g.scalar(l), g.backward(l).unwrap())
        };
        let mut store = s.store.clone();
        let (_, grads) = loss(&store);
        for id in [s.scorer.w1, s.scorer.w2, s.scorer.role] {
            let analytic = grads.get_or_zero(id, &store);
            for k in 0..analytic.len() {
                let orig = store.value(id).data()[k];
                store.value_mut(id).data_mut()[k] = orig + 1e-6;
                let up = loss(&store).0;
                store.value_mut(id).data_mut()[k] = orig - 1e-6;
                let down = loss(&store).0;
                store.value_mut(id).data_mut()[k] = orig;
                let num = (up - down) / 2e-6;
                let a = analytic.data()[k];
                assert!(
                    (a - num).abs() <= 1e-4 * a.abs().max(num.abs()) + 1e-8,
                    "{a} vs {num}"
                );
            }
        }
    }
}
