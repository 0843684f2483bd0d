use rand::Rng;

use super::{Graph, Init, NodeId, ParamId, ParamKind, ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::Scalar;

/// Single-layer LSTM cell.
///
/// Gate rows are stacked as input, forget, output, candidate; each block
/// has `hidden` rows. The forget-gate bias starts at 1.
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// `(hidden, cell)` pair.
pub type LstmState = (NodeId, NodeId);

impl Lstm {
    pub fn declare<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParameterStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let gates = 4 * hidden_dim;
        let w_input = store.declare(
            &format!("{prefix}.w_input"),
            &[gates, input_dim],
            ParamKind::Dense,
            Init::Glorot,
            rng,
        )?;
        let w_hidden = store.declare(
            &format!("{prefix}.w_hidden"),
            &[gates, hidden_dim],
            ParamKind::Dense,
            Init::Glorot,
            rng,
        )?;
        let mut b = vec![T::zero(); gates];
        b[hidden_dim..2 * hidden_dim]
            .iter_mut()
            .for_each(|v| *v = T::one());
        let bias = store.insert(
            &format!("{prefix}.bias"),
            Tensor::vector(b),
            ParamKind::Dense,
            true,
        )?;
        Ok(Self {
            w_input,
            w_hidden,
            bias,
            input_dim,
            hidden_dim,
        })
    }

    pub fn zero_state<T: Scalar>(&self, g: &mut Graph<'_, T>) -> LstmState {
        let h = g.input(Tensor::zeros(&[self.hidden_dim]));
        let c = g.input(Tensor::zeros(&[self.hidden_dim]));
        (h, c)
    }

    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        input: NodeId,
        state: LstmState,
    ) -> Result<LstmState> {
        let (h, c) = state;
        let in_len = g.value(input).len();
        if in_len != self.input_dim || g.value(h).len() != self.hidden_dim {
            return Err(Error::Shape {
                op: "lstm_step",
                left: vec![self.input_dim, self.hidden_dim],
                right: vec![in_len, g.value(h).len()],
            });
        }
        let wx = g.param(self.w_input);
        let wh = g.param(self.w_hidden);
        let b = g.param(self.bias);
        let zx = g.matvec(wx, input)?;
        let zh = g.matvec(wh, h)?;
        let z = g.add_n(&[zx, zh, b])?;
        let hd = self.hidden_dim;
        let zi = g.slice(z, 0, hd)?;
        let zf = g.slice(z, hd, hd)?;
        let zo = g.slice(z, 2 * hd, hd)?;
        let zg = g.slice(z, 3 * hd, hd)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let o = g.sigmoid(zo);
        let cand = g.tanh(zg);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_new = g.add(keep, write)?;
        let squashed = g.tanh(c_new);
        let h_new = g.mul(o, squashed)?;
        Ok((h_new, c_new))
    }

    /// Runs from the zero state and returns every hidden state.
    pub fn run<T: Scalar>(&self, g: &mut Graph<'_, T>, inputs: &[NodeId]) -> Result<Vec<NodeId>> {
        let mut state = self.zero_state(g);
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            state = self.step(g, x, state)?;
            out.push(state.0);
        }
        Ok(out)
    }
}
