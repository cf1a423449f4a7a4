//! Joint network `log_softmax(W tanh(f + g) + b)` over labels then blank.

use rand::Rng;

use super::tensor::{add_into, Mat};
use crate::logspace::log_softmax_in_place;

#[derive(Debug, Clone, PartialEq)]
pub struct JointParams {
    /// `(labels + 1) x d`
    pub w: Mat,
    pub b: Mat,
}

/// Saved activations of one joint evaluation.
#[derive(Debug, Clone)]
pub struct JointCell {
    pub hidden: Vec<f64>,
    pub logp: Vec<f64>,
}

impl JointParams {
    pub fn new<R: Rng + ?Sized>(labels: usize, d: usize, scale: f64, rng: &mut R) -> Self {
        Self { w: Mat::uniform(labels + 1, d, scale, rng), b: Mat::uniform(1, labels + 1, scale, rng) }
    }

    pub fn outputs(&self) -> usize {
        self.w.rows
    }

    pub fn zeros_like(&self) -> Self {
        Self { w: self.w.zeros_like(), b: self.b.zeros_like() }
    }

    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn joint_logits(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        self.cell(f, g).logp
    }

    pub fn cell(&self, f: &[f64], g: &[f64]) -> JointCell {
        let hidden: Vec<f64> = f.iter().zip(g).map(|(a, b)| (a + b).tanh()).collect();
        let mut logp = self.b.data.clone();
        self.w.matvec_add(&hidden, &mut logp);
        log_softmax_in_place(&mut logp);
        JointCell { hidden, logp }
    }

    /// Backward through one cell given `dL/dlogp`; returns `dL/d(f + g)`.
    pub fn backward(&self, cell: &JointCell, d_logp: &[f64], grad: &mut JointParams) -> Vec<f64> {
        let total: f64 = d_logp.iter().sum();
        let d_logits: Vec<f64> = d_logp.iter().zip(&cell.logp).map(|(g, lp)| g - lp.exp() * total).collect();
        grad.w.outer_add(&d_logits, &cell.hidden);
        add_into(&d_logits, &mut grad.b.data);
        let mut dh = vec![0.0; cell.hidden.len()];
        self.w.tmatvec_add(&d_logits, &mut dh);
        for (g, h) in dh.iter_mut().zip(&cell.hidden) {
            *g *= 1.0 - h * h;
        }
        dh
    }
}
