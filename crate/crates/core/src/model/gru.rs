//! Gated recurrent unit with an explicit backward pass.
//!
//! Gate order in the stacked weights is reset, update, candidate:
//!
//! ```text
//! r  = sigmoid(Wi_r x + bi_r + Wh_r h + bh_r)
//! z  = sigmoid(Wi_z x + bi_z + Wh_z h + bh_z)
//! n  = tanh(Wi_n x + bi_n + r * (Wh_n h + bh_n))
//! h' = (1 - z) * n + z * h
//! ```

use rand::Rng;

use super::tensor::{sigmoid, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_input: Mat,
    pub w_hidden: Mat,
    pub b_input: Mat,
    pub b_hidden: Mat,
}

/// Values saved by one forward step for its backward step.
#[derive(Debug, Clone)]
pub struct GruStep {
    x: Vec<f64>,
    h: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
}

impl GruParams {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            w_input: Mat::uniform(3 * hidden, input, scale, rng),
            w_hidden: Mat::uniform(3 * hidden, hidden, scale, rng),
            b_input: Mat::uniform(1, 3 * hidden, scale, rng),
            b_hidden: Mat::uniform(1, 3 * hidden, scale, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_input: self.w_input.zeros_like(),
            w_hidden: self.w_hidden.zeros_like(),
            b_input: self.b_input.zeros_like(),
            b_hidden: self.b_hidden.zeros_like(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.cols
    }

    pub fn input(&self) -> usize {
        self.w_input.cols
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        vec![
            ("w_input", &self.w_input),
            ("w_hidden", &self.w_hidden),
            ("b_input", &self.b_input),
            ("b_hidden", &self.b_hidden),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.b_input, &mut self.b_hidden]
    }

    /// One step; returns the new hidden state.
    pub fn step(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        self.step_cached(x, h).0
    }

    pub fn step_cached(&self, x: &[f64], h: &[f64]) -> (Vec<f64>, GruStep) {
        let nh = self.hidden();
        let mut gi = self.b_input.data.clone();
        self.w_input.matvec_add(x, &mut gi);
        let mut gh = self.b_hidden.data.clone();
        self.w_hidden.matvec_add(h, &mut gh);
        let mut r = vec![0.0; nh];
        let mut z = vec![0.0; nh];
        let mut n = vec![0.0; nh];
        let hn = gh[2 * nh..].to_vec();
        let mut out = vec![0.0; nh];
        for k in 0..nh {
            r[k] = sigmoid(gi[k] + gh[k]);
            z[k] = sigmoid(gi[nh + k] + gh[nh + k]);
            n[k] = (gi[2 * nh + k] + r[k] * hn[k]).tanh();
            out[k] = (1.0 - z[k]) * n[k] + z[k] * h[k];
        }
        let cache = GruStep { x: x.to_vec(), h: h.to_vec(), r, z, n, hn };
        (out, cache)
    }

    /// Accumulates parameter gradients into `grad`; adds input and previous
    /// hidden gradients into `dx` and `dh_prev`.
    pub fn backward(&self, step: &GruStep, dh_out: &[f64], grad: &mut GruParams, dx: &mut [f64], dh_prev: &mut [f64]) {
        let nh = self.hidden();
        let mut g_in = vec![0.0; 3 * nh];
        let mut g_hid = vec![0.0; 3 * nh];
        for k in 0..nh {
            let (r, z, n, hn) = (step.r[k], step.z[k], step.n[k], step.hn[k]);
            let d = dh_out[k];
            dh_prev[k] += d * z;
            let dn_pre = d * (1.0 - z) * (1.0 - n * n);
            let dz_pre = d * (step.h[k] - n) * z * (1.0 - z);
            let dr_pre = dn_pre * hn * r * (1.0 - r);
            g_in[k] = dr_pre;
            g_in[nh + k] = dz_pre;
            g_in[2 * nh + k] = dn_pre;
            g_hid[k] = dr_pre;
            g_hid[nh + k] = dz_pre;
            g_hid[2 * nh + k] = dn_pre * r;
        }
        grad.w_input.outer_add(&g_in, &step.x);
        grad.w_hidden.outer_add(&g_hid, &step.h);
        super::tensor::add_into(&g_in, &mut grad.b_input.data);
        super::tensor::add_into(&g_hid, &mut grad.b_hidden.data);
        self.w_input.tmatvec_add(&g_in, dx);
        self.w_hidden.tmatvec_add(&g_hid, dh_prev);
    }
}
