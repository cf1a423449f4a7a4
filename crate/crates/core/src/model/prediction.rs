//! Prediction network: a GRU over the emitted label history.
//!
//! Embedding rows are the real labels followed by one start token. Blank has
//! no row and is rejected as input.

use rand::Rng;

use super::gru::{GruParams, GruStep};
use super::tensor::{add_into, Mat};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionParams {
    /// `(labels + 1) x d`; the last row is the start token.
    pub embedding: Mat,
    pub cell: GruParams,
    pub initial: Mat,
}

/// Recurrent state; the output `g(u)` is the hidden vector itself.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionState {
    pub h: Vec<f64>,
}

pub struct PredictionCache {
    inputs: Vec<usize>,
    steps: Vec<GruStep>,
}

impl PredictionParams {
    pub fn new<R: Rng + ?Sized>(labels: usize, d: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            embedding: Mat::uniform(labels + 1, d, scale, rng),
            cell: GruParams::new(d, d, scale, rng),
            initial: Mat::uniform(1, d, scale, rng),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.embedding.rows - 1
    }

    pub fn start_token(&self) -> usize {
        self.num_labels()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embedding: self.embedding.zeros_like(),
            cell: self.cell.zeros_like(),
            initial: self.initial.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        out.extend(self.cell.tensors().into_iter().map(|(n, m)| (format!("cell.{n}"), m)));
        out.push(("initial".into(), &self.initial));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.embedding];
        out.extend(self.cell.tensors_mut());
        out.push(&mut self.initial);
        out
    }

    /// State holding `g(0)`, produced from the learned initial vector and
    /// the start token.
    pub fn start(&self) -> PredictionState {
        let h = self.cell.step(self.embedding.row(self.start_token()), &self.initial.data);
        PredictionState { h }
    }

    /// Feeds one emitted label. Blank (id `num_labels()`) is rejected.
    pub fn predict_step(&self, state: &PredictionState, label: usize) -> Result<(Vec<f64>, PredictionState)> {
        if label >= self.num_labels() {
            return Err(Error::contract(format!(
                "prediction network fed id {label}; only labels below {} are fed back",
                self.num_labels()
            )));
        }
        let h = self.cell.step(self.embedding.row(label), &state.h);
        Ok((h.clone(), PredictionState { h }))
    }

    /// `g(0..=U)` for a target sequence.
    pub fn unroll(&self, targets: &[usize]) -> Result<(Vec<Vec<f64>>, PredictionCache)> {
        let mut inputs = Vec::with_capacity(targets.len() + 1);
        inputs.push(self.start_token());
        for &y in targets {
            if y >= self.num_labels() {
                return Err(Error::contract(format!("target id {y} is not a real label")));
            }
            inputs.push(y);
        }
        let mut out = Vec::with_capacity(inputs.len());
        let mut steps = Vec::with_capacity(inputs.len());
        let mut h = self.initial.data.clone();
        for &i in &inputs {
            let (nh, step) = self.cell.step_cached(self.embedding.row(i), &h);
            steps.push(step);
            out.push(nh.clone());
            h = nh;
        }
        Ok((out, PredictionCache { inputs, steps }))
    }

    pub fn backward(&self, cache: &PredictionCache, d_g: &[Vec<f64>], grad: &mut PredictionParams) {
        let d = self.initial.cols;
        let mut carry = vec![0.0; d];
        for u in (0..cache.steps.len()).rev() {
            let mut dh = d_g[u].clone();
            add_into(&carry, &mut dh);
            let mut prev = vec![0.0; d];
            let mut dx = vec![0.0; d];
            self.cell.backward(&cache.steps[u], &dh, &mut grad.cell, &mut dx, &mut prev);
            add_into(&dx, grad.embedding.row_mut(cache.inputs[u]));
            carry = prev;
        }
        add_into(&carry, &mut grad.initial.data);
    }
}
