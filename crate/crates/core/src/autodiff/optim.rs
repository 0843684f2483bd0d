use super::{Gradients, ParamKind, ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::Scalar;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0005,
            beta1: 0.01,
            beta2: 0.9999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction and no learning-rate decay.
///
/// Parameters without a gradient entry are left alone, and lookup tables
/// only update the rows that were touched.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParameterStore<T>) -> Self {
        let first: Vec<_> = params
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.shape()))
            .collect();
        Self {
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParameterStore<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.num_params() != params.len() || self.first.len() != params.len() {
            return Err(Error::invalid(
                "gradient set does not match the parameter store",
            ));
        }
        self.step += 1;
        let c = &self.config;
        let cast = |v: f64| T::from_f64(v).unwrap();
        let (lr, b1, b2, eps) = (
            cast(c.learning_rate),
            cast(c.beta1),
            cast(c.beta2),
            cast(c.epsilon),
        );
        let t = self.step as i32;
        let correction1 = T::one() - b1.powi(t);
        let correction2 = T::one() - b2.powi(t);

        for (id, g) in grads.iter() {
            let param = params.get(id);
            if !param.trainable {
                continue;
            }
            if g.shape() != param.value.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: param.value.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            let kind = param.kind;
            let cols = param.value.cols();
            let ranges: Vec<(usize, usize)> = match kind {
                ParamKind::Dense => vec![(0, g.len())],
                ParamKind::Lookup => grads
                    .touched_rows(id)
                    .iter()
                    .map(|&r| (r * cols, (r + 1) * cols))
                    .collect(),
            };
            let m = self.first[id.index()].data_mut();
            let v = self.second[id.index()].data_mut();
            let value = params.value_mut(id).data_mut();
            let gd = g.data();
            for (lo, hi) in ranges {
                for k in lo..hi {
                    m[k] = b1 * m[k] + (T::one() - b1) * gd[k];
                    v[k] = b2 * v[k] + (T::one() - b2) * gd[k] * gd[k];
                    let m_hat = m[k] / correction1;
                    let v_hat = v[k] / correction2;
                    value[k] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so that their joint 2-norm is at most `max_norm`.
pub fn clip_gradients<T: Scalar>(grads: &mut Gradients<T>, max_norm: T) {
    let norm = grads.global_norm();
    if norm > max_norm && norm > T::zero() {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_assign(factor);
        }
    }
}
