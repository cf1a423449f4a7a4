//! Log-space RNN-T alignment lattice and the three alignment losses.
//!
//! # Conventions
//!
//! Lattice entries are indexed by a 0-based frame `t in 0..T` and the number
//! of labels already emitted `u`. `label(t, u)` is the log-probability of
//! emitting target `y[u]` at frame `t`; `blank(t, u)` is the log-probability of
//! blank there, which advances to frame `t + 1`.
//!
//! A complete path starts on frame 0 with no labels, makes exactly `T` blank
//! and `U` label moves, and ends with the blank at `(T - 1, U)`.
//!
//! Forward and backward variables live on a `(T + 1) x (U + 1)` grid whose
//! row `r` is the 1-based frame: `alpha[r][u]` covers prefixes that arrive at
//! frame `r` having emitted `u` labels (excluding the entry at that node) and
//! `beta[r][u]` covers the suffixes that leave from there, including the
//! terminating blank. Row 0 is a virtual entry row: `alpha[0][0] = 0` and
//! `beta[0][0] = total`. With this layout `alpha + beta` log-summed along any
//! anti-diagonal `r + u = c` equals the total.

mod batch;
mod io;
mod mask;

pub use batch::LatticeBatch;
pub use io::{LATTICE_MAGIC, MASK_MAGIC, FORMAT_VERSION};
pub use mask::ConstraintMask;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{log_add, LOG_ZERO};

/// One step of an alignment path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    /// Emit blank and advance one frame.
    Blank,
    /// Emit the next target label on the current frame.
    Label,
}

/// A monotone path through the trellis: `T` blanks and `U` labels, ending in
/// the terminating blank.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AlignmentPath {
    moves: Vec<Move>,
    frames: usize,
    labels: usize,
}

/// A lattice cell touched by one path move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathStep {
    pub kind: Move,
    /// 0-based frame.
    pub frame: usize,
    /// Labels emitted before this step.
    pub emitted: usize,
}

impl AlignmentPath {
    pub fn new(moves: Vec<Move>) -> Result<Self> {
        let frames = moves.iter().filter(|m| **m == Move::Blank).count();
        let labels = moves.len() - frames;
        if frames == 0 {
            return Err(Error::contract("alignment path needs at least one frame"));
        }
        if moves.last() != Some(&Move::Blank) {
            return Err(Error::contract("alignment path must end with the terminating blank"));
        }
        Ok(Self { moves, frames, labels })
    }

    /// Builds the path that emits `per_frame[t]` labels on frame `t` before
    /// that frame's blank.
    pub fn from_emission_counts(per_frame: &[usize]) -> Result<Self> {
        let mut moves = Vec::with_capacity(per_frame.len() + per_frame.iter().sum::<usize>());
        for &n in per_frame {
            moves.extend(std::iter::repeat(Move::Label).take(n));
            moves.push(Move::Blank);
        }
        Self::new(moves)
    }

    /// Path with no labels over `frames` frames.
    pub fn all_blank(frames: usize) -> Result<Self> {
        Self::new(vec![Move::Blank; frames])
    }

    pub fn moves(&self) -> &[Move] {
        &self.moves
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    /// Lattice cells in path order.
    pub fn steps(&self) -> impl Iterator<Item = PathStep> + '_ {
        let mut frame = 0;
        let mut emitted = 0;
        self.moves.iter().map(move |&kind| {
            let step = PathStep { kind, frame, emitted };
            match kind {
                Move::Blank => frame += 1,
                Move::Label => emitted += 1,
            }
            step
        })
    }

    /// 0-based frame of every label emission, in target order.
    pub fn label_frames(&self) -> Vec<usize> {
        self.steps()
            .filter(|s| s.kind == Move::Label)
            .map(|s| s.frame)
            .collect()
    }

    fn check_dims(&self, lattice: &Lattice) -> Result<()> {
        if self.frames != lattice.frames() || self.labels != lattice.labels() {
            return Err(Error::contract(format!(
                "path is {}x{} but lattice is {}x{}",
                self.frames,
                self.labels,
                lattice.frames(),
                lattice.labels()
            )));
        }
        Ok(())
    }
}

/// Label and blank log-probability matrices, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    frames: usize,
    labels: usize,
    /// `frames * labels`, entry `t * labels + u`.
    label_logprob: Vec<f64>,
    /// `frames * (labels + 1)`, entry `t * (labels + 1) + u`.
    blank_logprob: Vec<f64>,
}

fn check_entry(v: f64) -> Result<()> {
    if v.is_nan() || v == f64::INFINITY {
        return Err(Error::contract(format!("lattice entry {v} is not a log-probability")));
    }
    Ok(())
}

impl Lattice {
    pub fn new(
        frames: usize,
        labels: usize,
        label_logprob: Vec<f64>,
        blank_logprob: Vec<f64>,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::contract("lattice needs at least one frame"));
        }
        if label_logprob.len() != frames * labels {
            return Err(Error::contract(format!(
                "label matrix has {} entries, expected {}x{}",
                label_logprob.len(),
                frames,
                labels
            )));
        }
        if blank_logprob.len() != frames * (labels + 1) {
            return Err(Error::contract(format!(
                "blank matrix has {} entries, expected {}x{}",
                blank_logprob.len(),
                frames,
                labels + 1
            )));
        }
        for &v in label_logprob.iter().chain(&blank_logprob) {
            check_entry(v)?;
        }
        Ok(Self { frames, labels, label_logprob, blank_logprob })
    }

    /// Builds a lattice from row-per-frame matrices.
    pub fn from_rows(label_rows: &[Vec<f64>], blank_rows: &[Vec<f64>]) -> Result<Self> {
        let frames = blank_rows.len();
        let labels = blank_rows.first().map_or(0, |r| r.len().saturating_sub(1));
        if label_rows.len() != frames && !(labels == 0 && label_rows.is_empty()) {
            return Err(Error::contract("label and blank matrices disagree on frame count"));
        }
        if blank_rows.iter().any(|r| r.len() != labels + 1)
            || label_rows.iter().any(|r| r.len() != labels)
        {
            return Err(Error::contract("ragged lattice rows"));
        }
        Self::new(frames, labels, label_rows.concat(), blank_rows.concat())
    }

    /// All entries `LOG_ZERO`; cells are filled with the setters.
    pub fn empty(frames: usize, labels: usize) -> Result<Self> {
        Self::new(
            frames,
            labels,
            vec![LOG_ZERO; frames * labels],
            vec![LOG_ZERO; frames * (labels + 1)],
        )
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    #[inline]
    pub fn label(&self, t: usize, u: usize) -> f64 {
        self.label_logprob[t * self.labels + u]
    }

    #[inline]
    pub fn blank(&self, t: usize, u: usize) -> f64 {
        self.blank_logprob[t * (self.labels + 1) + u]
    }

    pub fn set_label(&mut self, t: usize, u: usize, v: f64) -> Result<()> {
        check_entry(v)?;
        self.label_logprob[t * self.labels + u] = v;
        Ok(())
    }

    pub fn set_blank(&mut self, t: usize, u: usize, v: f64) -> Result<()> {
        check_entry(v)?;
        self.blank_logprob[t * (self.labels + 1) + u] = v;
        Ok(())
    }

    pub fn label_matrix(&self) -> &[f64] {
        &self.label_logprob
    }

    pub fn blank_matrix(&self) -> &[f64] {
        &self.blank_logprob
    }

    /// Copy with every entry outside `mask` set to `LOG_ZERO`.
    pub fn masked(&self, mask: &ConstraintMask) -> Result<Lattice> {
        mask.check_dims(self.frames, self.labels)?;
        let label_logprob = self
            .label_logprob
            .iter()
            .zip(mask.label_mask())
            .map(|(&v, &keep)| if keep { v } else { LOG_ZERO })
            .collect();
        let blank_logprob = self
            .blank_logprob
            .iter()
            .zip(mask.blank_mask())
            .map(|(&v, &keep)| if keep { v } else { LOG_ZERO })
            .collect();
        Ok(Lattice { frames: self.frames, labels: self.labels, label_logprob, blank_logprob })
    }
}

/// Row-major `(T + 1) x (U + 1)` matrix of forward or backward variables.
#[derive(Debug, Clone, PartialEq)]
pub struct TrellisGrid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TrellisGrid {
    fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    /// `r` is the 1-based frame (0 is the virtual entry row).
    #[inline]
    pub fn get(&self, r: usize, u: usize) -> f64 {
        self.data[r * self.cols + u]
    }

    #[inline]
    fn set(&mut self, r: usize, u: usize, v: f64) {
        self.data[r * self.cols + u] = v;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub alpha: TrellisGrid,
    /// Log of the summed probability of all admissible complete paths.
    pub total: f64,
}

/// Entry accessor that folds an optional mask into the lattice lookups.
struct View<'a> {
    lattice: &'a Lattice,
    mask: Option<&'a ConstraintMask>,
}

impl View<'_> {
    fn new<'a>(lattice: &'a Lattice, mask: Option<&'a ConstraintMask>) -> Result<View<'a>> {
        if let Some(m) = mask {
            m.check_dims(lattice.frames(), lattice.labels())?;
        }
        Ok(View { lattice, mask })
    }

    #[inline]
    fn label(&self, t: usize, u: usize) -> f64 {
        match self.mask {
            Some(m) if !m.label_allowed(t, u) => LOG_ZERO,
            _ => self.lattice.label(t, u),
        }
    }

    #[inline]
    fn blank(&self, t: usize, u: usize) -> f64 {
        match self.mask {
            Some(m) if !m.blank_allowed(t, u) => LOG_ZERO,
            _ => self.lattice.blank(t, u),
        }
    }
}

/// Forward recursion in log space. A mask that admits no complete path gives
/// `total = -inf`, not an error.
pub fn forward(lattice: &Lattice, mask: Option<&ConstraintMask>) -> Result<ForwardResult> {
    let view = View::new(lattice, mask)?;
    let (nt, nu) = (lattice.frames(), lattice.labels());
    let mut alpha = TrellisGrid::filled(nt + 1, nu + 1, LOG_ZERO);
    alpha.set(0, 0, 0.0);
    for r in 1..=nt {
        let t = r - 1;
        for u in 0..=nu {
            let value = if r == 1 && u == 0 {
                0.0
            } else {
                let from_blank = if r > 1 { alpha.get(r - 1, u) + view.blank(t - 1, u) } else { LOG_ZERO };
                let from_label = if u > 0 { alpha.get(r, u - 1) + view.label(t, u - 1) } else { LOG_ZERO };
                log_add(from_blank, from_label)
            };
            alpha.set(r, u, value);
        }
    }
    let total = alpha.get(nt, nu) + view.blank(nt - 1, nu);
    Ok(ForwardResult { alpha, total })
}

/// Backward recursion; `beta[0][0]` equals the forward total.
pub fn backward(lattice: &Lattice, mask: Option<&ConstraintMask>) -> Result<TrellisGrid> {
    let view = View::new(lattice, mask)?;
    let (nt, nu) = (lattice.frames(), lattice.labels());
    let mut beta = TrellisGrid::filled(nt + 1, nu + 1, LOG_ZERO);
    for r in (1..=nt).rev() {
        let t = r - 1;
        for u in (0..=nu).rev() {
            let value = if r == nt && u == nu {
                view.blank(t, u)
            } else {
                let via_blank = if r < nt { view.blank(t, u) + beta.get(r + 1, u) } else { LOG_ZERO };
                let via_label = if u < nu { view.label(t, u) + beta.get(r, u + 1) } else { LOG_ZERO };
                log_add(via_blank, via_label)
            };
            beta.set(r, u, value);
        }
    }
    let entry = beta.get(1, 0);
    beta.set(0, 0, entry);
    Ok(beta)
}

/// `log P(y|x)` summed over every alignment.
pub fn loss_unconstrained(lattice: &Lattice) -> Result<f64> {
    Ok(forward(lattice, None)?.total)
}

/// Sum of the step log-probabilities along `path`.
pub fn path_logprob(lattice: &Lattice, path: &AlignmentPath) -> Result<f64> {
    path.check_dims(lattice)?;
    let mut sum = 0.0;
    for step in path.steps() {
        sum += match step.kind {
            Move::Blank => lattice.blank(step.frame, step.emitted),
            Move::Label => lattice.label(step.frame, step.emitted),
        };
    }
    Ok(sum)
}

/// Log-likelihood of the given alignment only.
pub fn loss_fixed(lattice: &Lattice, path: &AlignmentPath) -> Result<f64> {
    path_logprob(lattice, path)
}

/// Log-sum over the paths admitted by the `(delta_t, delta_u)` relaxation of
/// `path`.
pub fn loss_constrained(
    lattice: &Lattice,
    path: &AlignmentPath,
    delta_t: usize,
    delta_u: usize,
) -> Result<f64> {
    path.check_dims(lattice)?;
    let mask = ConstraintMask::from_path(path, delta_t, delta_u);
    masked_loglik(lattice, &mask)
}

fn masked_loglik(lattice: &Lattice, mask: &ConstraintMask) -> Result<f64> {
    match mask.unique_path()? {
        Some(only) => path_logprob(lattice, &only),
        None => Ok(forward(lattice, Some(mask))?.total),
    }
}

/// Which alignment set the loss sums over.
#[derive(Debug, Clone, Copy)]
pub enum LossMode<'a> {
    Unconstrained,
    Fixed(&'a AlignmentPath),
    Constrained { path: &'a AlignmentPath, delta_t: usize, delta_u: usize },
}

impl LossMode<'_> {
    pub fn loglik(&self, lattice: &Lattice) -> Result<f64> {
        match *self {
            LossMode::Unconstrained => loss_unconstrained(lattice),
            LossMode::Fixed(path) => loss_fixed(lattice, path),
            LossMode::Constrained { path, delta_t, delta_u } => {
                loss_constrained(lattice, path, delta_t, delta_u)
            }
        }
    }
}

/// Gradients of the negative log-likelihood with respect to every lattice
/// entry, plus the log-likelihood itself.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeGradients {
    pub loglik: f64,
    /// Shape `[T][U]`, frame-major.
    pub d_label: Vec<f64>,
    /// Shape `[T][U + 1]`, frame-major.
    pub d_blank: Vec<f64>,
    frames: usize,
    labels: usize,
}

impl LatticeGradients {
    fn zeros(frames: usize, labels: usize, loglik: f64) -> Self {
        Self {
            loglik,
            d_label: vec![0.0; frames * labels],
            d_blank: vec![0.0; frames * (labels + 1)],
            frames,
            labels,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    #[inline]
    pub fn label(&self, t: usize, u: usize) -> f64 {
        self.d_label[t * self.labels + u]
    }

    #[inline]
    pub fn blank(&self, t: usize, u: usize) -> f64 {
        self.d_blank[t * (self.labels + 1) + u]
    }

    fn add_path(&mut self, path: &AlignmentPath, value: f64) {
        for step in path.steps() {
            match step.kind {
                Move::Blank => self.d_blank[step.frame * (self.labels + 1) + step.emitted] += value,
                Move::Label => self.d_label[step.frame * self.labels + step.emitted] += value,
            }
        }
    }

    /// Whether any entry is non-zero at `(t, u)` (label or blank).
    pub fn cell_active(&self, t: usize, u: usize) -> bool {
        self.blank(t, u) != 0.0 || (u < self.labels && self.label(t, u) != 0.0)
    }
}

/// Gradients of `-loglik` for the chosen mode via forward-backward occupancies.
pub fn loss_gradients(lattice: &Lattice, mode: LossMode<'_>) -> Result<LatticeGradients> {
    let (nt, nu) = (lattice.frames(), lattice.labels());
    let mask = match mode {
        LossMode::Unconstrained => None,
        LossMode::Fixed(path) => {
            let loglik = path_logprob(lattice, path)?;
            if loglik == LOG_ZERO {
                return Err(Error::NoAdmissiblePath);
            }
            let mut grads = LatticeGradients::zeros(nt, nu, loglik);
            grads.add_path(path, -1.0);
            return Ok(grads);
        }
        LossMode::Constrained { path, delta_t, delta_u } => {
            path.check_dims(lattice)?;
            let mask = ConstraintMask::from_path(path, delta_t, delta_u);
            if let Some(only) = mask.unique_path()? {
                return loss_gradients(lattice, LossMode::Fixed(&only));
            }
            Some(mask)
        }
    };
    let mask = mask.as_ref();
    let view = View::new(lattice, mask)?;
    let fwd = forward(lattice, mask)?;
    let total = fwd.total;
    if total == LOG_ZERO {
        return Err(Error::NoAdmissiblePath);
    }
    let beta = backward(lattice, mask)?;
    let alpha = &fwd.alpha;
    let mut grads = LatticeGradients::zeros(nt, nu, total);
    for t in 0..nt {
        let r = t + 1;
        for u in 0..=nu {
            let a = alpha.get(r, u);
            if a == LOG_ZERO {
                continue;
            }
            let b = view.blank(t, u);
            let successor = if r < nt {
                beta.get(r + 1, u)
            } else if u == nu {
                0.0
            } else {
                LOG_ZERO
            };
            if b != LOG_ZERO && successor != LOG_ZERO {
                grads.d_blank[t * (nu + 1) + u] = -(a + b + successor - total).exp();
            }
            if u < nu {
                let l = view.label(t, u);
                let next = beta.get(r, u + 1);
                if l != LOG_ZERO && next != LOG_ZERO {
                    grads.d_label[t * nu + u] = -(a + l + next - total).exp();
                }
            }
        }
    }
    Ok(grads)
}
