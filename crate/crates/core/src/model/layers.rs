use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::model::params::{glorot, Bound, ParamId, ParamStore};
use crate::tensor::{SeededRng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }
}

/// How a layer's weight is initialized. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Glorot,
    Zero,
}

fn init_weight(init: Init, fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Tensor {
    match init {
        Init::Glorot => glorot(fan_in, fan_out, rng),
        Init::Zero => Tensor::zeros(&[fan_in, fan_out]),
    }
}

/// Fully connected layer, `act(H·W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: (usize, usize),
        activation: Activation,
        init: Init,
        rng: &mut SeededRng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init_weight(init, dims.0, dims.1, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dims.1]));
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, h: Var) -> Result<Var> {
        let hw = tape.matmul(h, p.var(self.weight))?;
        let out = tape.add(hw, p.var(self.bias))?;
        Ok(self.activation.apply(tape, out))
    }
}

/// Graph convolution, `act(Â·H·W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl GcnLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: (usize, usize),
        activation: Activation,
        init: Init,
        rng: &mut SeededRng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init_weight(init, dims.0, dims.1, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dims.1]));
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, a_hat: Var, h: Var) -> Result<Var> {
        let hw = tape.matmul(h, p.var(self.weight))?;
        let prop = tape.matmul(a_hat, hw)?;
        let out = tape.add(prop, p.var(self.bias))?;
        Ok(self.activation.apply(tape, out))
    }
}
