use std::str::FromStr;

use rand::Rng;

use super::Mode;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    /// Softmax over the last axis.
    Softmax,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "sigmoid" => Ok(Self::Sigmoid),
            "tanh" => Ok(Self::Tanh),
            "softmax" => Ok(Self::Softmax),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// `y = x W + b` over the last axis.
pub fn dense<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    g.linear(x, w, b)
}

pub fn activation<T: Scalar>(g: &mut Graph<T>, x: Var, kind: Activation) -> Result<Var> {
    Ok(match kind {
        Activation::Relu => g.relu(x),
        Activation::Sigmoid => g.sigmoid(x),
        Activation::Tanh => g.tanh(x),
        Activation::Softmax => g.softmax(x)?,
    })
}

/// Position-wise `dense -> act -> dense`.
#[allow(clippy::too_many_arguments)]
pub fn ffn<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    act: Activation,
) -> Result<Var> {
    let h = g.linear(x, w1, Some(b1))?;
    let h = activation(g, h, act)?;
    let y = g.linear(h, w2, Some(b2))?;
    if g.shape(y) != g.shape(x) {
        return Err(Error::shape("ffn", g.shape(x), g.shape(y)));
    }
    Ok(y)
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` so infer mode
/// is the identity.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(x);
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let n = g.value(x).len();
    let scale: Vec<T> = (0..n)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let m = g.constant(Tensor::new(g.shape(x), scale)?);
    g.mul(x, m)
}
