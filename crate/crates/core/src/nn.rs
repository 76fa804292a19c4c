//! Parameterized building blocks: affine maps, LSTM cells and the
//! machinery that either initializes their parameters or binds them to an
//! existing store.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{ParamId, ParameterStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Xavier,
    Zeros,
    /// Zeros everywhere except `value` on columns `[start, start + len)`.
    BiasBand {
        start: usize,
        len: usize,
        value: f64,
    },
    Uniform(f64),
}

/// Source of parameter handles for model construction.
pub trait ParamSource<S: Scalar> {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId>;
}

/// Creates fresh parameters in a store.
pub struct Initializer<'a, S, R: ?Sized> {
    pub store: &'a mut ParameterStore<S>,
    pub rng: &'a mut R,
}

impl<S: Scalar, R: Rng + ?Sized> ParamSource<S> for Initializer<'_, S, R> {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let t = match init {
            Init::Xavier => {
                let (fan_in, fan_out) = (shape[0], shape[1..].iter().product());
                Tensor::xavier_uniform(fan_in, fan_out, self.rng)
            }
            Init::Zeros => Tensor::zeros(shape),
            Init::BiasBand { start, len, value } => {
                let mut t = Tensor::zeros(shape);
                for v in &mut t.data_mut()[start..start + len] {
                    *v = lit(value);
                }
                t
            }
            Init::Uniform(bound) => Tensor::uniform(shape, -bound, bound, self.rng),
        };
        Ok(self.store.insert(name, t))
    }
}

/// Looks up existing parameters by name and checks their shapes.
pub struct Binder<'a, S> {
    pub store: &'a ParameterStore<S>,
}

impl<S: Scalar> ParamSource<S> for Binder<'_, S> {
    fn param(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<ParamId> {
        let id = self.store.id(name).map_err(|_| Error::BadCheckpoint(format!("missing parameter `{name}`")))?;
        let got = self.store.value(id).shape();
        if got != shape {
            return Err(Error::BadCheckpoint(format!("parameter `{name}` has shape {got:?}, expected {shape:?}")));
        }
        Ok(id)
    }
}

/// `x W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<S: Scalar>(src: &mut impl ParamSource<S>, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            w: src.param(&format!("{name}.W"), &[input, output], Init::Xavier)?,
            b: src.param(&format!("{name}.b"), &[1, output], Init::Zeros)?,
            input,
            output,
        })
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        Ok(tape.linear(x, w, b)?)
    }
}

/// Hidden and cell state of an LSTM, each `1 x hidden`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Single-layer LSTM cell with gate order input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<S: Scalar>(src: &mut impl ParamSource<S>, name: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            w_x: src.param(&format!("{name}.W_x"), &[input, 4 * hidden], Init::Xavier)?,
            w_h: src.param(&format!("{name}.W_h"), &[hidden, 4 * hidden], Init::Xavier)?,
            // forget gate starts open
            b: src.param(&format!("{name}.b"), &[1, 4 * hidden], Init::BiasBand { start: hidden, len: hidden, value: 1.0 })?,
            input,
            hidden,
        })
    }

    pub fn zero_state<S: Scalar>(&self, tape: &mut Tape<'_, S>) -> LstmState {
        let h = tape.constant(Tensor::zeros(&[1, self.hidden]));
        let c = tape.constant(Tensor::zeros(&[1, self.hidden]));
        LstmState { h, c }
    }

    pub fn step<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var, state: LstmState) -> Result<LstmState> {
        let w_x = tape.param(self.w_x);
        let w_h = tape.param(self.w_h);
        let b = tape.param(self.b);
        let xw = tape.matmul(x, w_x)?;
        let hw = tape.matmul(state.h, w_h)?;
        let pre = tape.add(xw, hw)?;
        let gates = tape.add_row(pre, b)?;
        let h = self.hidden;
        let i = tape.slice_cols(gates, 0, h)?;
        let f = tape.slice_cols(gates, h, h)?;
        let g = tape.slice_cols(gates, 2 * h, h)?;
        let o = tape.slice_cols(gates, 3 * h, h)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}
