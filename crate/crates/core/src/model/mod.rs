//! Transcription, prediction and joint networks with hand-written reverse
//! mode, plus the hard-attention sequence-to-sequence head.
//!
//! Every network is a small struct of [`Mat`] tensors. Gradient containers
//! are the same structs, zero-initialised with `zeros_like`, so the optimizer
//! and checkpoint code walk parameters and gradients in the same order.

mod checkpoint;
mod encoder;
mod gru;
mod joint;
mod optim;
mod prediction;
mod seq2seq;
pub mod tensor;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{AttentionLayer, BigruLayer, EncoderCache, EncoderKind, EncoderLayers, EncoderParams};
pub use gru::GruParams;
pub use joint::{JointCell, JointParams};
pub use optim::{global_norm, Adam, OptimizerConfig};
pub use prediction::{PredictionCache, PredictionParams, PredictionState};
pub use seq2seq::{Seq2SeqCache, Seq2SeqHardAttnParams, Seq2SeqState};
pub use tensor::Mat;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::GoldAlignment;
use crate::decoder::{beam_search, DecodeConfig, Hypothesis, Scorer};
use crate::error::{Error, Result};
use crate::lattice::{
    loss_gradients, AlignmentPath, ConstraintMask, Lattice, LatticeGradients, LossMode,
};
use crate::logspace::LOG_ZERO;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Rnnt,
    Seq2seq,
}

/// Architecture, sizes and initialisation seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub encoder: EncoderKind,
    /// Input word vocabulary; filled from the corpus when zero.
    pub input_vocab: usize,
    /// Real output labels (blank excluded); filled from the schema when zero.
    pub num_labels: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    /// Attention half-width in tokens.
    pub window: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Rnnt,
            encoder: EncoderKind::Attention,
            input_vocab: 0,
            num_labels: 0,
            hidden: 32,
            layers: 2,
            heads: 4,
            window: 20,
            init_scale: 0.1,
            seed: 17,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_vocab == 0 || self.num_labels == 0 {
            return Err(Error::Config("model vocabulary sizes must be positive".into()));
        }
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("hidden size and layer count must be positive".into()));
        }
        if self.encoder == EncoderKind::Attention && (self.heads == 0 || self.hidden % self.heads != 0) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Config("init_scale must be a finite non-negative number".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// Which alignments the training loss sums over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LossKind {
    Unconstrained,
    Fixed,
    /// Paths within `delta` frames and labels of the gold path.
    Constrained { delta: usize },
}

impl LossKind {
    pub fn mode<'a>(&self, path: &'a AlignmentPath) -> LossMode<'a> {
        match *self {
            LossKind::Unconstrained => LossMode::Unconstrained,
            LossKind::Fixed => LossMode::Fixed(path),
            LossKind::Constrained { delta } => LossMode::Constrained { path, delta_t: delta, delta_u: delta },
        }
    }

    pub fn name(&self) -> String {
        match self {
            LossKind::Unconstrained => "unconstrained".into(),
            LossKind::Fixed => "fixed".into(),
            LossKind::Constrained { delta } => format!("constrained-{delta}"),
        }
    }

    /// Joint cells the loss can touch; `None` means all of them.
    fn active_cells(&self, path: &AlignmentPath) -> Option<Vec<bool>> {
        let (nt, nu) = (path.frames(), path.labels());
        match *self {
            LossKind::Unconstrained => None,
            LossKind::Fixed => {
                let mut cells = vec![false; nt * (nu + 1)];
                for s in path.steps() {
                    cells[s.frame * (nu + 1) + s.emitted] = true;
                }
                Some(cells)
            }
            LossKind::Constrained { delta } => {
                let mask = ConstraintMask::from_path(path, delta, delta);
                let mut cells = vec![false; nt * (nu + 1)];
                for t in 0..nt {
                    for u in 0..=nu {
                        cells[t * (nu + 1) + u] = mask.blank_allowed(t, u) || (u < nu && mask.label_allowed(t, u));
                    }
                }
                Some(cells)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Rnnt { prediction: PredictionParams, joint: JointParams },
    Seq2seq(Seq2SeqHardAttnParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub head: Head,
}

/// Forward activations of the RNN-T pipeline for one example.
pub struct RnntForward {
    pub lattice: Lattice,
    enc: Vec<Vec<f64>>,
    enc_cache: EncoderCache,
    pred_cache: PredictionCache,
    targets: Vec<usize>,
    cells: Vec<Option<JointCell>>,
}

impl RnntForward {
    pub fn frame_vectors(&self) -> &[Vec<f64>] {
        &self.enc
    }
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = &config;
        let encoder = EncoderParams::new(
            c.encoder,
            c.input_vocab,
            c.hidden,
            c.layers,
            c.heads,
            c.window,
            c.init_scale,
            &mut rng,
        )?;
        let head = match c.architecture {
            Architecture::Rnnt => Head::Rnnt {
                prediction: PredictionParams::new(c.num_labels, c.hidden, c.init_scale, &mut rng),
                joint: JointParams::new(c.num_labels, c.hidden, c.init_scale, &mut rng),
            },
            Architecture::Seq2seq => {
                Head::Seq2seq(Seq2SeqHardAttnParams::new(c.num_labels, c.hidden, c.init_scale, &mut rng))
            }
        };
        Ok(Self { config, encoder, head })
    }

    pub fn num_labels(&self) -> usize {
        self.config.num_labels
    }

    pub fn zeros_like(&self) -> Self {
        let head = match &self.head {
            Head::Rnnt { prediction, joint } => {
                Head::Rnnt { prediction: prediction.zeros_like(), joint: joint.zeros_like() }
            }
            Head::Seq2seq(p) => Head::Seq2seq(p.zeros_like()),
        };
        Self { config: self.config.clone(), encoder: self.encoder.zeros_like(), head }
    }

    /// Named tensors in a fixed order shared with `tensors_mut`.
    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out: Vec<(String, &Mat)> =
            self.encoder.tensors().into_iter().map(|(n, m)| (format!("encoder.{n}"), m)).collect();
        match &self.head {
            Head::Rnnt { prediction, joint } => {
                out.extend(prediction.tensors().into_iter().map(|(n, m)| (format!("prediction.{n}"), m)));
                out.extend(joint.tensors().into_iter().map(|(n, m)| (format!("joint.{n}"), m)));
            }
            Head::Seq2seq(p) => {
                out.extend(p.tensors().into_iter().map(|(n, m)| (format!("seq2seq.{n}"), m)));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = self.encoder.tensors_mut();
        match &mut self.head {
            Head::Rnnt { prediction, joint } => {
                out.extend(prediction.tensors_mut());
                out.extend(joint.tensors_mut());
            }
            Head::Seq2seq(p) => out.extend(p.tensors_mut()),
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Model) {
        for (a, (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for m in self.tensors_mut() {
            m.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    fn rnnt_parts(&self) -> Result<(&PredictionParams, &JointParams)> {
        match &self.head {
            Head::Rnnt { prediction, joint } => Ok((prediction, joint)),
            Head::Seq2seq(_) => Err(Error::contract("operation needs an RNN-T head")),
        }
    }

    /// Full lattice: every cell's label and blank log-probability.
    pub fn build_lattice(&self, tokens: &[u32], targets: &[usize]) -> Result<Lattice> {
        Ok(self.rnnt_forward(tokens, targets, None)?.lattice)
    }

    /// Runs encoder, prediction network and the joint on `cells` (frame-major
    /// over `T x (U + 1)`, `None` for all). Cells not evaluated stay at
    /// log zero.
    pub fn rnnt_forward(&self, tokens: &[u32], targets: &[usize], cells: Option<&[bool]>) -> Result<RnntForward> {
        let (prediction, joint) = self.rnnt_parts()?;
        if tokens.is_empty() {
            return Err(Error::contract("cannot build a lattice for an empty input"));
        }
        let (enc, enc_cache) = self.encoder.forward_cached(tokens)?;
        let (g, pred_cache) = prediction.unroll(targets)?;
        let (nt, nu) = (tokens.len(), targets.len());
        if let Some(c) = cells {
            if c.len() != nt * (nu + 1) {
                return Err(Error::contract("cell selection does not match lattice shape"));
            }
        }
        let blank = prediction.num_labels();
        let mut label = vec![LOG_ZERO; nt * nu];
        let mut blank_lp = vec![LOG_ZERO; nt * (nu + 1)];
        let mut saved = Vec::with_capacity(nt * (nu + 1));
        for t in 0..nt {
            for u in 0..=nu {
                let idx = t * (nu + 1) + u;
                if cells.is_some_and(|c| !c[idx]) {
                    saved.push(None);
                    continue;
                }
                let cell = joint.cell(&enc[t], &g[u]);
                if u < nu {
                    label[t * nu + u] = cell.logp[targets[u]];
                }
                blank_lp[idx] = cell.logp[blank];
                saved.push(Some(cell));
            }
        }
        let lattice = Lattice::new(nt, nu, label, blank_lp)?;
        Ok(RnntForward { lattice, enc, enc_cache, pred_cache, targets: targets.to_vec(), cells: saved })
    }

    /// Parameter gradients given `dL/dlattice`.
    pub fn backprop_lattice(&self, fwd: &RnntForward, grads: &LatticeGradients) -> Result<Model> {
        let (prediction, joint) = self.rnnt_parts()?;
        let (nt, nu) = (fwd.lattice.frames(), fwd.lattice.labels());
        if grads.frames() != nt || grads.labels() != nu {
            return Err(Error::contract("lattice gradients do not match the forward pass"));
        }
        let d = self.config.hidden;
        let blank = prediction.num_labels();
        let mut out = self.zeros_like();
        let mut df = vec![vec![0.0; d]; nt];
        let mut dg = vec![vec![0.0; d]; nu + 1];
        {
            let Head::Rnnt { joint: gj, .. } = &mut out.head else { unreachable!() };
            let mut d_logp = vec![0.0; blank + 1];
            for t in 0..nt {
                for u in 0..=nu {
                    if !grads.cell_active(t, u) {
                        continue;
                    }
                    let Some(cell) = &fwd.cells[t * (nu + 1) + u] else {
                        return Err(Error::contract("gradient on a joint cell that was not evaluated"));
                    };
                    d_logp.fill(0.0);
                    d_logp[blank] = grads.blank(t, u);
                    if u < nu {
                        d_logp[fwd.targets[u]] += grads.label(t, u);
                    }
                    let dpre = joint.backward(cell, &d_logp, gj);
                    tensor::add_into(&dpre, &mut df[t]);
                    tensor::add_into(&dpre, &mut dg[u]);
                }
            }
        }
        if let Head::Rnnt { prediction: gp, .. } = &mut out.head {
            prediction.backward(&fwd.pred_cache, &dg, gp);
        }
        self.encoder.backward(&fwd.enc_cache, &df, &mut out.encoder);
        Ok(out)
    }

    /// Negative log-likelihood of the example and its parameter gradients.
    pub fn loss_and_gradients(&self, tokens: &[u32], gold: &GoldAlignment, loss: LossKind) -> Result<(f64, Model)> {
        match &self.head {
            Head::Rnnt { .. } => {
                let cells = loss.active_cells(&gold.path);
                let fwd = self.rnnt_forward(tokens, &gold.targets, cells.as_deref())?;
                let grads = loss_gradients(&fwd.lattice, loss.mode(&gold.path))?;
                let params = self.backprop_lattice(&fwd, &grads)?;
                Ok((-grads.loglik, params))
            }
            Head::Seq2seq(p) => {
                if loss != LossKind::Fixed {
                    return Err(Error::Config("the seq2seq head trains on fixed alignments only".into()));
                }
                let (enc, enc_cache) = self.encoder.forward_cached(tokens)?;
                let (logps, cache) = p.path_steps(&enc, &gold.targets, &gold.path)?;
                let nll = -logps.iter().sum::<f64>();
                let mut out = self.zeros_like();
                let Head::Seq2seq(gp) = &mut out.head else { unreachable!() };
                let d_enc = p.backward(&cache, &gold.targets, &gold.path, gp);
                self.encoder.backward(&enc_cache, &d_enc, &mut out.encoder);
                Ok((nll, out))
            }
        }
    }

    /// Negative log-likelihood only.
    pub fn loss(&self, tokens: &[u32], gold: &GoldAlignment, loss: LossKind) -> Result<f64> {
        match &self.head {
            Head::Rnnt { .. } => {
                let cells = loss.active_cells(&gold.path);
                let fwd = self.rnnt_forward(tokens, &gold.targets, cells.as_deref())?;
                let ll = loss.mode(&gold.path).loglik(&fwd.lattice)?;
                if ll == LOG_ZERO {
                    return Err(Error::NoAdmissiblePath);
                }
                Ok(-ll)
            }
            Head::Seq2seq(p) => {
                if loss != LossKind::Fixed {
                    return Err(Error::Config("the seq2seq head trains on fixed alignments only".into()));
                }
                let enc = self.encoder.encode(tokens)?;
                let (logps, _) = p.path_steps(&enc, &gold.targets, &gold.path)?;
                Ok(-logps.iter().sum::<f64>())
            }
        }
    }

    /// Per-step log-probabilities of the seq2seq head along `path`.
    pub fn seq2seq_path_logprobs(&self, tokens: &[u32], targets: &[usize], path: &AlignmentPath) -> Result<Vec<f64>> {
        let Head::Seq2seq(p) = &self.head else {
            return Err(Error::contract("operation needs a seq2seq head"));
        };
        let enc = self.encoder.encode(tokens)?;
        Ok(p.path_steps(&enc, targets, path)?.0)
    }

    pub fn scorer(&self, tokens: &[u32]) -> Result<ModelScorer<'_>> {
        Ok(ModelScorer { model: self, enc: self.encoder.encode(tokens)? })
    }

    pub fn decode(&self, tokens: &[u32], config: &DecodeConfig) -> Result<Vec<Hypothesis<DecoderState>>> {
        let scorer = self.scorer(tokens)?;
        beam_search(&scorer, tokens.len(), config)
    }
}

/// Decoder state for either head. RNN-T ignores `prev`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Vec<f64>,
    pub prev: usize,
}

/// Beam-search adapter over precomputed frame vectors.
pub struct ModelScorer<'m> {
    model: &'m Model,
    enc: Vec<Vec<f64>>,
}

impl Scorer for ModelScorer<'_> {
    type State = DecoderState;

    fn num_labels(&self) -> usize {
        self.model.num_labels()
    }

    fn initial_state(&self) -> DecoderState {
        match &self.model.head {
            Head::Rnnt { prediction, .. } => DecoderState { h: prediction.start().h, prev: prediction.start_token() },
            Head::Seq2seq(p) => {
                let s = p.initial_state();
                DecoderState { h: s.h, prev: s.prev }
            }
        }
    }

    fn log_probs(&self, state: &DecoderState, frame: usize) -> Result<Vec<f64>> {
        let enc = self.enc.get(frame).ok_or_else(|| Error::contract(format!("frame {frame} out of range")))?;
        Ok(match &self.model.head {
            Head::Rnnt { joint, .. } => joint.joint_logits(enc, &state.h),
            Head::Seq2seq(p) => {
                p.step(&Seq2SeqState { h: state.h.clone(), prev: state.prev }, enc).0
            }
        })
    }

    fn advance(&self, state: &DecoderState, frame: usize, label: Option<usize>) -> Result<DecoderState> {
        match &self.model.head {
            Head::Rnnt { prediction, .. } => match label {
                None => Ok(state.clone()),
                Some(y) => {
                    let (_, next) = prediction.predict_step(&PredictionState { h: state.h.clone() }, y)?;
                    Ok(DecoderState { h: next.h, prev: y })
                }
            },
            Head::Seq2seq(p) => {
                let enc =
                    self.enc.get(frame).ok_or_else(|| Error::contract(format!("frame {frame} out of range")))?;
                let (_, h) = p.step(&Seq2SeqState { h: state.h.clone(), prev: state.prev }, enc);
                Ok(DecoderState { h, prev: label.unwrap_or(p.eow()) })
            }
        }
    }
}
