//! Hard-attention sequence-to-sequence head.
//!
//! At each step the cell reads `concat(emb[prev], enc[t])` where `prev` is
//! the previous output token, end-of-word included. Outputs are the labels
//! then end-of-word, so end-of-word shares blank's index.

use rand::Rng;

use super::gru::{GruParams, GruStep};
use super::tensor::{add_into, Mat};
use crate::error::{Error, Result};
use crate::lattice::{AlignmentPath, Move};
use crate::logspace::log_softmax_in_place;

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqHardAttnParams {
    /// `(labels + 2) x d`: labels, end-of-word, start.
    pub embedding: Mat,
    pub cell: GruParams,
    /// `(labels + 1) x d`
    pub w: Mat,
    pub b: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqState {
    pub h: Vec<f64>,
    pub prev: usize,
}

pub struct Seq2SeqCache {
    steps: Vec<(usize, GruStep, Vec<f64>, Vec<f64>)>,
}

impl Seq2SeqHardAttnParams {
    pub fn new<R: Rng + ?Sized>(labels: usize, d: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            embedding: Mat::uniform(labels + 2, d, scale, rng),
            cell: GruParams::new(2 * d, d, scale, rng),
            w: Mat::uniform(labels + 1, d, scale, rng),
            b: Mat::uniform(1, labels + 1, scale, rng),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.w.rows - 1
    }

    pub fn eow(&self) -> usize {
        self.num_labels()
    }

    pub fn start_token(&self) -> usize {
        self.num_labels() + 1
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embedding: self.embedding.zeros_like(),
            cell: self.cell.zeros_like(),
            w: self.w.zeros_like(),
            b: self.b.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        out.extend(self.cell.tensors().into_iter().map(|(n, m)| (format!("cell.{n}"), m)));
        out.push(("w".into(), &self.w));
        out.push(("b".into(), &self.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.embedding];
        out.extend(self.cell.tensors_mut());
        out.push(&mut self.w);
        out.push(&mut self.b);
        out
    }

    pub fn initial_state(&self) -> Seq2SeqState {
        Seq2SeqState { h: vec![0.0; self.cell.hidden()], prev: self.start_token() }
    }

    /// One step: returns the output log-distribution and the updated hidden
    /// vector.
    pub fn seq2seq_hard_attn_logits(&self, emb_u: &[f64], enc_t: &[f64], state: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (logp, h, _) = self.step_cached(emb_u, enc_t, state);
        (logp, h)
    }

    fn step_cached(&self, emb_u: &[f64], enc_t: &[f64], state: &[f64]) -> (Vec<f64>, Vec<f64>, GruStep) {
        let mut x = emb_u.to_vec();
        x.extend_from_slice(enc_t);
        let (h, step) = self.cell.step_cached(&x, state);
        let mut logp = self.b.data.clone();
        self.w.matvec_add(&h, &mut logp);
        log_softmax_in_place(&mut logp);
        (logp, h, step)
    }

    /// Distribution and successor state for `state` reading frame `enc_t`.
    pub fn step(&self, state: &Seq2SeqState, enc_t: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.seq2seq_hard_attn_logits(self.embedding.row(state.prev), enc_t, &state.h)
    }

    /// Per-step log-probabilities of `path`, in path order, and the cache
    /// for `backward`.
    pub fn path_steps(
        &self,
        enc: &[Vec<f64>],
        targets: &[usize],
        path: &AlignmentPath,
    ) -> Result<(Vec<f64>, Seq2SeqCache)> {
        if path.frames() != enc.len() || path.labels() != targets.len() {
            return Err(Error::contract("alignment path does not match frames and targets"));
        }
        let mut h = vec![0.0; self.cell.hidden()];
        let mut prev = self.start_token();
        let mut logps = Vec::with_capacity(path.len());
        let mut steps = Vec::with_capacity(path.len());
        for s in path.steps() {
            let target = match s.kind {
                Move::Label => targets[s.emitted],
                Move::Blank => self.eow(),
            };
            if target > self.eow() {
                return Err(Error::contract(format!("target id {target} is not a real label")));
            }
            let (logp, nh, step) = self.step_cached(self.embedding.row(prev), &enc[s.frame], &h);
            logps.push(logp[target]);
            steps.push((prev, step, nh.clone(), logp));
            h = nh;
            prev = target;
        }
        Ok((logps, Seq2SeqCache { steps }))
    }

    /// Gradients of `-sum(logps)`; returns `dL/denc`.
    pub fn backward(
        &self,
        cache: &Seq2SeqCache,
        targets: &[usize],
        path: &AlignmentPath,
        grad: &mut Seq2SeqHardAttnParams,
    ) -> Vec<Vec<f64>> {
        let d = self.cell.hidden();
        let d_in = self.embedding.cols;
        let mut d_enc = vec![vec![0.0; self.cell.input() - d_in]; path.frames()];
        let steps: Vec<_> = path.steps().collect();
        let mut carry = vec![0.0; d];
        for (k, s) in steps.iter().enumerate().rev() {
            let target = match s.kind {
                Move::Label => targets[s.emitted],
                Move::Blank => self.eow(),
            };
            let (prev, step, h, logp) = &cache.steps[k];
            let mut d_logits: Vec<f64> = logp.iter().map(|lp| lp.exp()).collect();
            d_logits[target] -= 1.0;
            grad.w.outer_add(&d_logits, h);
            add_into(&d_logits, &mut grad.b.data);
            let mut dh = carry.clone();
            self.w.tmatvec_add(&d_logits, &mut dh);
            let mut dx = vec![0.0; self.cell.input()];
            let mut dprev = vec![0.0; d];
            self.cell.backward(step, &dh, &mut grad.cell, &mut dx, &mut dprev);
            add_into(&dx[..d_in], grad.embedding.row_mut(*prev));
            add_into(&dx[d_in..], &mut d_enc[s.frame]);
            carry = dprev;
        }
        d_enc
    }
}
