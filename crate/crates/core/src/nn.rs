//! Small parameter-container and layer helpers shared by the detector and
//! the guard classifier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Params {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        let (names, tensors) = entries.into_iter().unzip();
        Self { names, tensors }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Records every parameter on `tape`, grad-enabled iff `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    /// Gradients for `vars` (as returned by [`bind`](Self::bind)), in order.
    pub fn collect_grads(&self, grads: &mut Gradients, vars: &[Var]) -> Result<Vec<Tensor>> {
        vars.iter()
            .zip(&self.tensors)
            .map(|(v, t)| grads.take(*v).ok_or_else(|| Error::shape(format!("no gradient for parameter of shape {:?}", t.shape()))))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Checks names and shapes against another parameter set.
    pub fn check_layout(&self, other: &Params) -> Result<()> {
        if self.names != other.names {
            return Err(Error::shape(format!("parameter names differ: {:?} vs {:?}", self.names, other.names)));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::shape(format!("parameter shape {:?} vs {:?}", a.shape(), b.shape())));
            }
        }
        Ok(())
    }
}

/// Uniform He-style initializer (bound √(6/fan_in)) for weights; zero biases.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn weight(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = (6.0 / fan_in as f32).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        Tensor::new(shape, data).expect("initializer shape")
    }

    pub fn conv(&mut self, c_out: usize, c_in: usize, k: usize) -> Tensor {
        self.weight(&[c_out, c_in, k, k], c_in * k * k)
    }

    pub fn dense(&mut self, d_in: usize, d_out: usize) -> Tensor {
        self.weight(&[d_in, d_out], d_in)
    }
}

/// `conv2d + channel bias`, optionally followed by relu.
pub fn conv_layer(tape: &mut Tape, x: Var, w: Var, b: Var, stride: usize, pad: usize, relu: bool) -> Result<Var> {
    let y = tape.conv2d(x, w, stride, pad)?;
    let y = tape.bias_channels(y, b)?;
    if relu {
        tape.relu(y)
    } else {
        Ok(y)
    }
}

/// `x·W + b` over 1×D_in or N×D_in inputs.
pub fn dense_layer(tape: &mut Tape, x: Var, w: Var, b: Var, relu: bool) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    let y = tape.bias_rows(y, b)?;
    if relu {
        tape.relu(y)
    } else {
        Ok(y)
    }
}
