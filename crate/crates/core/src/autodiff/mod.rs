//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records tensor operations against a borrowed
//! [`ParameterStore`]; [`Graph::backward`] returns [`Gradients`] for every
//! reachable parameter. [`Adam`], [`clip_gradients`] and [`dropout_mask`]
//! cover the rest of a training step.

mod dropout;
mod graph;
mod lstm;
mod optim;
mod params;
mod tensor;

pub use dropout::dropout_mask;
pub use graph::{log_sum_exp, Gradients, Graph, NodeId};
pub use lstm::{Lstm, LstmState};
pub use optim::{clip_gradients, Adam, AdamConfig};
pub use params::{Init, ParamId, ParamKind, Parameter, ParameterStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(name: &str, t: Tensor<f64>) -> (ParameterStore<f64>, ParamId) {
        let mut s = ParameterStore::new();
        let id = s.insert(name, t, ParamKind::Dense, true).unwrap();
        (s, id)
    }

    #[test]
    fn relu_forward() {
        let s = ParameterStore::<f64>::new();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn log_sum_exp_of_zeros_is_ln2() {
        let s = ParameterStore::<f64>::new();
        let mut g = Graph::new(&s);
        let a = g.constant_scalar(0.0);
        let b = g.constant_scalar(0.0);
        let l = g.log_sum_exp(&[a, b]).unwrap();
        assert!((g.scalar(l) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matvec_identity() {
        let s = ParameterStore::<f64>::new();
        let mut g = Graph::new(&s);
        let w = g.input(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
        let x = g.input(Tensor::vector(vec![3.0, 4.0]));
        let y = g.matvec(w, x).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let s = ParameterStore::<f64>::new();
        let mut g = Graph::new(&s);
        let w = g.input(Tensor::zeros(&[2, 3]));
        let x = g.input(Tensor::zeros(&[2]));
        match g.matvec(w, x) {
            Err(Error::Shape { op, left, right }) => {
                assert_eq!(op, "matvec");
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        let a = g.input(Tensor::zeros(&[3]));
        assert!(matches!(g.add(a, x), Err(Error::Shape { op: "add", .. })));
    }

    #[test]
    fn square_gradient() {
        let (s, id) = store_with("x", Tensor::scalar(3.0));
        let mut g = Graph::new(&s);
        let x = g.param(id);
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(id).unwrap().item(), 6.0);
    }

    #[test]
    fn log_sum_exp_gradient_is_softmax() {
        let (s, id) = store_with("ab", Tensor::vector(vec![0.0, 0.0]));
        let mut g = Graph::new(&s);
        let v = g.param(id);
        let a = g.pick(v, 0).unwrap();
        let b = g.pick(v, 1).unwrap();
        let l = g.log_sum_exp(&[a, b]).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let (s, id) = store_with("v", Tensor::vector(vec![1.0, 2.0]));
        let mut g = Graph::new(&s);
        let v = g.param(id);
        let y = g.tanh(v);
        assert!(matches!(g.backward(y), Err(Error::NotScalar(_))));
    }

    #[test]
    fn unreachable_parameters_get_zero() {
        let mut s = ParameterStore::<f64>::new();
        let a = s
            .insert("a", Tensor::scalar(2.0), ParamKind::Dense, true)
            .unwrap();
        let b = s
            .insert("b", Tensor::vector(vec![1.0, 1.0]), ParamKind::Dense, true)
            .unwrap();
        let mut g = Graph::new(&s);
        let x = g.param(a);
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(b).is_none());
        assert_eq!(grads.get_or_zero(b, &s).data(), &[0.0, 0.0]);
    }

    #[test]
    fn frozen_lookup_gets_no_gradient() {
        let mut s = ParameterStore::<f64>::new();
        let t = s
            .insert(
                "frozen",
                Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap(),
                ParamKind::Lookup,
                false,
            )
            .unwrap();
        let mut g = Graph::new(&s);
        let r = g.lookup(t, 1).unwrap();
        let l = g.sum(r);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(t).is_none());
    }

    /// Builds a small graph exercising every differentiable op.
    fn mixed_graph(g: &mut Graph<'_, f64>, ids: &[ParamId]) -> NodeId {
        let w = g.param(ids[0]);
        let x = g.param(ids[1]);
        let e = g.lookup(ids[2], 1).unwrap();
        let h = g.matvec(w, x).unwrap();
        let hc = g.matvec_cols(w, e, 1).unwrap();
        let s = g.sigmoid(h);
        let t = g.tanh(hc);
        let m = g.mul(s, t).unwrap();
        let r = g.relu(h);
        let a = g.add_n(&[m, r, s]).unwrap();
        let d = g.sub(a, t).unwrap();
        let c = g.concat(&[d, x]).unwrap();
        let sl = g.slice(c, 1, 3).unwrap();
        let sc = g.scale(sl, 0.7);
        let ac = g.add_const(sc, 0.3);
        let p0 = g.pick(ac, 0).unwrap();
        let p2 = g.pick(ac, 2).unwrap();
        let dt = g.dot(d, t).unwrap();
        let sm = g.sum(m);
        let l = g.log_sum_exp(&[p0, p2, dt, sm]).unwrap();
        let sq = g.mul(dt, dt).unwrap();
        g.add(l, sq).unwrap()
    }

    fn mixed_store(rng: &mut ChaCha8Rng) -> (ParameterStore<f64>, Vec<ParamId>) {
        let mut s = ParameterStore::new();
        let w = s
            .declare("w", &[3, 3], ParamKind::Dense, Init::Uniform(2.0), rng)
            .unwrap();
        let x = s
            .declare("x", &[3], ParamKind::Dense, Init::Uniform(2.0), rng)
            .unwrap();
        let e = s
            .declare("e", &[3, 2], ParamKind::Lookup, Init::Uniform(2.0), rng)
            .unwrap();
        (s, vec![w, x, e])
    }

    fn nudge_from_kinks(s: &mut ParameterStore<f64>) {
        for id in s.ids().collect::<Vec<_>>() {
            for v in s.value_mut(id).data_mut() {
                if v.abs() < 1e-2 {
                    *v += 0.05;
                }
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..25 {
            let (mut s, ids) = mixed_store(&mut rng);
            nudge_from_kinks(&mut s);
            let analytic = {
                let mut g = Graph::new(&s);
                let l = mixed_graph(&mut g, &ids);
                g.backward(l).unwrap()
            };
            let h = 1e-5;
            for &id in &ids {
                let grad = analytic.get_or_zero(id, &s);
                for k in 0..s.value(id).len() {
                    let orig = s.value(id).data()[k];
                    s.value_mut(id).data_mut()[k] = orig + h;
                    let up = {
                        let mut g = Graph::new(&s);
                        let l = mixed_graph(&mut g, &ids);
                        g.scalar(l)
                    };
                    s.value_mut(id).data_mut()[k] = orig - h;
                    let down = {
                        let mut g = Graph::new(&s);
                        let l = mixed_graph(&mut g, &ids);
                        g.scalar(l)
                    };
                    s.value_mut(id).data_mut()[k] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let a = grad.data()[k];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    let tol = if id == ids[0] || id == ids[1] {
                        1e-3
                    } else {
                        1e-4
                    };
                    assert!(rel < tol, "param {id:?}[{k}]: {a} vs {numeric}");
                }
            }
        }
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (s, ids) = mixed_store(&mut rng);
        let mut g = Graph::new(&s);
        let l1 = mixed_graph(&mut g, &ids);
        let w = g.param(ids[0]);
        let l2 = g.sum(w);
        let total = g.add(l1, l2).unwrap();
        let joint = g.backward(total).unwrap();
        let mut separate = g.backward(l1).unwrap();
        separate.accumulate(&g.backward(l2).unwrap());
        for &id in &ids {
            let a = joint.get_or_zero(id, &s);
            let b = separate.get_or_zero(id, &s);
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let (s, ids) = mixed_store(&mut rng);
            let mut g = Graph::new(&s);
            let l = mixed_graph(&mut g, &ids);
            g.scalar(l).to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn lstm_with_zero_weights_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParameterStore::<f64>::new();
        let cell = Lstm::declare(&mut s, "lstm", 3, 4, &mut rng).unwrap();
        for id in [cell.w_input, cell.w_hidden, cell.bias] {
            s.value_mut(id).fill(0.0);
        }
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::vector(vec![0.3, -1.0, 2.0]));
        let st = cell.zero_state(&mut g);
        let (h, _) = cell.step(&mut g, x, st).unwrap();
        assert_eq!(g.value(h).data(), &[0.0; 4]);
    }

    #[test]
    fn lstm_sequence_of_one_equals_single_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParameterStore::<f64>::new();
        let cell = Lstm::declare(&mut s, "lstm", 2, 3, &mut rng).unwrap();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::vector(vec![0.5, -0.25]));
        let hs = cell.run(&mut g, &[x]).unwrap();
        let st = cell.zero_state(&mut g);
        let (h, _) = cell.step(&mut g, x, st).unwrap();
        assert_eq!(g.value(hs[0]), g.value(h));
    }

    #[test]
    fn lstm_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParameterStore::<f64>::new();
        let cell = Lstm::declare(&mut s, "lstm", 2, 3, &mut rng).unwrap();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::vector(vec![0.5, -0.25, 1.0]));
        let st = cell.zero_state(&mut g);
        assert!(matches!(
            cell.step(&mut g, x, st),
            Err(Error::Shape {
                op: "lstm_step",
                ..
            })
        ));
    }

    #[test]
    fn lstm_two_steps_match_hand_unrolled_cell() {
        // input dim 2, hidden dim 1: gates i, f, o, g each one row.
        let wx = [[0.5, -0.3], [0.1, 0.2], [-0.4, 0.6], [0.7, 0.9]];
        let wh = [0.2, -0.5, 0.3, 0.8];
        let b = [0.1, 1.0, -0.2, 0.05];
        let xs = [[1.0, 0.5], [-0.5, 2.0]];

        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let (mut h, mut c) = (0.0f64, 0.0f64);
        let mut expected = vec![];
        for x in xs {
            let z: Vec<f64> = (0..4)
                .map(|k| wx[k][0] * x[0] + wx[k][1] * x[1] + wh[k] * h + b[k])
                .collect();
            let (i, f, o, gg) = (sig(z[0]), sig(z[1]), sig(z[2]), z[3].tanh());
            c = f * c + i * gg;
            h = o * c.tanh();
            expected.push(h);
        }

        let mut s = ParameterStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = Lstm::declare(&mut s, "lstm", 2, 1, &mut rng).unwrap();
        let flat: Vec<f64> = wx.iter().flatten().copied().collect();
        *s.value_mut(cell.w_input) = Tensor::from_f64(&[4, 2], &flat).unwrap();
        *s.value_mut(cell.w_hidden) = Tensor::from_f64(&[4, 1], &wh).unwrap();
        *s.value_mut(cell.bias) = Tensor::vector(b.to_vec());
        let mut g = Graph::new(&s);
        let inputs: Vec<_> = xs
            .iter()
            .map(|x| g.input(Tensor::vector(x.to_vec())))
            .collect();
        let hs = cell.run(&mut g, &inputs).unwrap();
        for (node, want) in hs.iter().zip(&expected) {
            assert!((g.scalar(*node) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn lstm_forget_bias_starts_at_one() {
        let mut s = ParameterStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = Lstm::declare(&mut s, "lstm", 2, 3, &mut rng).unwrap();
        assert_eq!(
            s.value(cell.bias).data(),
            &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    fn scalar_problem(value: f64) -> (ParameterStore<f64>, ParamId) {
        store_with("p", Tensor::scalar(value))
    }

    fn grads_for(s: &ParameterStore<f64>, id: ParamId, g: f64) -> Gradients<f64> {
        // loss = g * p has gradient g
        let mut graph = Graph::new(s);
        let p = graph.param(id);
        let l = graph.scale(p, g);
        graph.backward(l).unwrap()
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let (mut s, id) = scalar_problem(1.5);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let grads = grads_for(&s, id, 0.0);
        adam.step(&mut s, &grads).unwrap();
        assert_eq!(s.value(id).item(), 1.5);
    }

    #[test]
    fn adam_single_step_closed_form() {
        let cfg = AdamConfig::default();
        let (mut s, id) = scalar_problem(1.0);
        let mut adam = Adam::new(cfg, &s);
        let grads = grads_for(&s, id, 1.0);
        adam.step(&mut s, &grads).unwrap();
        let m = (1.0 - cfg.beta1) * 1.0;
        let v = (1.0 - cfg.beta2) * 1.0;
        let m_hat = m / (1.0 - cfg.beta1);
        let v_hat = v / (1.0 - cfg.beta2);
        let expected = 1.0 - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        assert!((s.value(id).item() - expected).abs() < 1e-15);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn adam_second_step_uses_t2_bias_correction() {
        let cfg = AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            ..AdamConfig::default()
        };
        let (mut s, id) = scalar_problem(0.0);
        let mut adam = Adam::new(cfg, &s);
        let grads = grads_for(&s, id, 1.0);
        adam.step(&mut s, &grads).unwrap();
        adam.step(&mut s, &grads).unwrap();
        assert_eq!(adam.steps(), 2);
        let mut p = 0.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = cfg.beta1 * m + (1.0 - cfg.beta1);
            v = cfg.beta2 * v + (1.0 - cfg.beta2);
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        assert!((s.value(id).item() - p).abs() < 1e-15);
    }

    #[test]
    fn adam_updates_only_touched_lookup_rows() {
        let mut s = ParameterStore::<f64>::new();
        let t = s
            .insert(
                "table",
                Tensor::from_f64(&[3, 2], &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap(),
                ParamKind::Lookup,
                true,
            )
            .unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &s);
        for _ in 0..3 {
            let grads = {
                let mut g = Graph::new(&s);
                let r = g.lookup(t, 0).unwrap();
                let l = g.sum(r);
                g.backward(l).unwrap()
            };
            adam.step(&mut s, &grads).unwrap();
        }
        assert_ne!(s.value(t).row(0), &[1.0, 1.0]);
        assert_eq!(s.value(t).row(1), &[2.0, 2.0]);
        assert_eq!(s.value(t).row(2), &[3.0, 3.0]);
    }

    fn vector_grads(values: &[f64]) -> (ParameterStore<f64>, Gradients<f64>) {
        let (s, id) = store_with("v", Tensor::vector(vec![0.0; values.len()]));
        let grads = {
            let mut g = Graph::new(&s);
            let p = g.param(id);
            let c = g.input(Tensor::vector(values.to_vec()));
            let l = g.dot(p, c).unwrap();
            g.backward(l).unwrap()
        };
        (s, grads)
    }

    #[test]
    fn clip_at_boundary_is_noop() {
        let (s, mut grads) = vector_grads(&[3.0, 4.0]);
        clip_gradients(&mut grads, 5.0);
        let id = s.id("v").unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn clip_scales_large_gradients() {
        let (s, mut grads) = vector_grads(&[6.0, 8.0]);
        clip_gradients(&mut grads, 5.0);
        let id = s.id("v").unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn clip_zero_gradients() {
        let (s, mut grads) = vector_grads(&[0.0, 0.0]);
        clip_gradients(&mut grads, 5.0);
        let id = s.id("v").unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn dropout_rate_zero_is_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m: Tensor<f64> = dropout_mask(&[5], 0.0, &mut rng).unwrap();
        assert_eq!(m.data(), &[1.0; 5]);
    }

    #[test]
    fn dropout_rejects_bad_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dropout_mask::<f64, _>(&[2], 1.0, &mut rng).is_err());
        assert!(dropout_mask::<f64, _>(&[2], -0.1, &mut rng).is_err());
    }

    #[test]
    fn dropout_keeps_expected_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m: Tensor<f64> = dropout_mask(&[1_000_000], 0.05, &mut rng).unwrap();
        let kept = m.data().iter().filter(|&&v| v > 0.0).count() as f64 / 1e6;
        assert!((kept - 0.95).abs() <= 0.005, "kept {kept}");
        let scale = 1.0 / 0.95;
        assert!(m.data().iter().all(|&v| v == 0.0 || v == scale));
    }

    #[test]
    fn generic_over_f32() {
        let mut s = ParameterStore::<f32>::new();
        let id = s
            .insert("x", Tensor::scalar(3.0f32), ParamKind::Dense, true)
            .unwrap();
        let mut g = Graph::new(&s);
        let x = g.param(id);
        let y = g.mul(x, x).unwrap();
        assert_eq!(g.backward(y).unwrap().get(id).unwrap().item(), 6.0f32);
    }

    proptest::proptest! {
        #[test]
        fn clip_is_idempotent(values in proptest::collection::vec(-50.0f64..50.0, 1..8), max in 0.1f64..10.0) {
            let (s, mut grads) = vector_grads(&values);
            clip_gradients(&mut grads, max);
            let once = grads.get(s.id("v").unwrap()).unwrap().clone();
            clip_gradients(&mut grads, max);
            let twice = grads.get(s.id("v").unwrap()).unwrap();
            for (a, b) in once.data().iter().zip(twice.data()) {
                proptest::prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
            proptest::prop_assert!(grads.global_norm() <= max * (1.0 + 1e-12));
        }
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ParameterStore::<f64>::new();
        let id = s
            .declare("w", &[4, 8], ParamKind::Dense, Init::Glorot, &mut rng)
            .unwrap();
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(s.value(id).data().iter().all(|v| v.abs() <= bound));
    }
}
