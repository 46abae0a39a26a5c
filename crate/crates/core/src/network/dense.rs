use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub w: Matrix,
    pub b: Vector,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseCache {
    pub input: Vector,
    pub pre_activation: Vector,
    pub output: Vector,
}

impl DenseParams {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            w: Matrix::zeros(outputs, inputs),
            b: Vector::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.cols()
    }

    pub fn outputs(&self) -> usize {
        self.w.rows()
    }

    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice(), &self.b]
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice(), &mut self.b]
    }
}

pub fn dense_forward(p: &DenseParams, v: &[f64]) -> Result<Vector> {
    dense_forward_cached(p, v).map(|c| c.output)
}

pub(crate) fn dense_forward_cached(p: &DenseParams, v: &[f64]) -> Result<DenseCache> {
    if v.len() != p.inputs() {
        return Err(Error::shape(format!(
            "dense layer {}x{} cannot take input of length {}",
            p.outputs(),
            p.inputs(),
            v.len()
        )));
    }
    if p.b.len() != p.outputs() {
        return Err(Error::shape(format!(
            "dense bias length {} does not match {} outputs",
            p.b.len(),
            p.outputs()
        )));
    }
    let mut pre = vec![0.0; p.outputs()];
    p.w.matvec_into(v, &mut pre);
    for (z, b) in pre.iter_mut().zip(p.b.iter()) {
        *z += b;
    }
    let output = match p.activation {
        Activation::Relu => pre.iter().map(|&z| z.max(0.0)).collect(),
        Activation::Linear => pre.clone(),
    };
    Ok(DenseCache {
        input: Vector(v.to_vec()),
        pre_activation: Vector(pre),
        output: Vector(output),
    })
}

/// Accumulates parameter gradients into `grad` and returns the input gradient.
pub(crate) fn dense_backward(p: &DenseParams, cache: &DenseCache, dout: &[f64], grad: &mut DenseParams) -> Vec<f64> {
    let dpre: Vec<f64> = match p.activation {
        Activation::Relu => dout
            .iter()
            .zip(cache.pre_activation.iter())
            .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
            .collect(),
        Activation::Linear => dout.to_vec(),
    };
    grad.w.add_outer(&dpre, &cache.input);
    for (g, d) in grad.b.iter_mut().zip(&dpre) {
        *g += d;
    }
    let mut din = vec![0.0; p.inputs()];
    p.w.matvec_t_acc(&dpre, &mut din);
    din
}
