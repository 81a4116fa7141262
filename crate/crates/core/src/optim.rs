//! Flat-parameter optimizers shared by the trainable heads.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Anything whose trainable tensors can be walked in a fixed order.
///
/// Gradients use the same type as the parameters they belong to, so walking
/// both in lockstep pairs every value with its derivative.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |s| n += s.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |s| out.extend_from_slice(s));
        out
    }

    fn assign(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.visit_mut(&mut |s| {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        });
    }

    fn scale(&mut self, by: f64) {
        self.visit_mut(&mut |s| s.iter_mut().for_each(|x| *x *= by));
    }

    fn add_assign(&mut self, other: &dyn Parameters) {
        let flat = other.flatten();
        let mut off = 0;
        self.visit_mut(&mut |s| {
            let len = s.len();
            for (x, g) in s.iter_mut().zip(&flat[off..off + len]) {
                *x += g;
            }
            off += len;
        });
    }
}

pub(crate) fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

pub(crate) fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Mini-batch gradient descent or Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update. `params` and `grads` are matched position by position.
    pub fn step(&mut self, params: &mut [&mut dyn Parameters], grads: &[&dyn Parameters]) {
        assert_eq!(params.len(), grads.len());
        let g: Vec<f64> = grads.iter().flat_map(|p| p.flatten()).collect();
        if self.m.len() != g.len() {
            self.m = vec![0.0; g.len()];
            self.v = vec![0.0; g.len()];
            self.step = 0;
        }
        self.step += 1;
        let lr = self.learning_rate;
        let wd = self.weight_decay;
        let kind = self.kind;
        let t = self.step as i32;
        let (m, v) = (&mut self.m, &mut self.v);
        let mut off = 0;
        for p in params.iter_mut() {
            p.visit_mut(&mut |s| {
                for x in s.iter_mut() {
                    let gi = g[off];
                    let update = match kind {
                        OptimizerKind::Sgd => gi,
                        OptimizerKind::Adam { beta1, beta2, eps } => {
                            m[off] = beta1 * m[off] + (1.0 - beta1) * gi;
                            v[off] = beta2 * v[off] + (1.0 - beta2) * gi * gi;
                            let mh = m[off] / (1.0 - beta1.powi(t));
                            let vh = v[off] / (1.0 - beta2.powi(t));
                            mh / (vh.sqrt() + eps)
                        }
                    };
                    *x -= lr * (update + wd * *x);
                    off += 1;
                }
            });
        }
        debug_assert_eq!(off, g.len());
    }
}
