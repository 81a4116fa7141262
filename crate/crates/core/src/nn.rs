//! Small dense-layer and softmax helpers.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::uniform2;
use crate::optim::{slice1, slice1_mut, slice2, slice2_mut, Parameters};

/// Softmax that tolerates `-inf` entries (they get probability 0).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; logits.len()];
    }
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `y = W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn init<R: Rng>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        let scale = (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            w: uniform2(rng, outputs, inputs, scale),
            b: Array1::zeros(outputs),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            w: Array2::zeros((outputs, inputs)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Dense::zeros(self.inputs(), self.outputs())
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.w.dot(&x) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns dL/dx.
    pub fn backward(&self, x: ArrayView1<'_, f64>, dy: ArrayView1<'_, f64>, grad: &mut Dense) -> Array1<f64> {
        for (r, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                grad.w.row_mut(r).scaled_add(g, &x);
            }
        }
        grad.b += &dy;
        self.w.t().dot(&dy)
    }
}

impl Parameters for Dense {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(slice2(&self.w));
        f(slice1(&self.b));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(slice2_mut(&mut self.w));
        f(slice1_mut(&mut self.b));
    }
}
