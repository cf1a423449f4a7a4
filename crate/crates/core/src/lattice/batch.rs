use super::{forward, ConstraintMask, ForwardResult, Lattice};
use crate::error::{Error, Result};
use crate::logspace::LOG_ZERO;

/// Lattices of different sizes padded to a common `(max_T, max_U)` with log 0,
/// frame-major, with their true lengths recorded.
#[derive(Debug, Clone)]
pub struct LatticeBatch {
    max_frames: usize,
    max_labels: usize,
    lengths: Vec<(usize, usize)>,
    label: Vec<f64>,
    blank: Vec<f64>,
}

impl LatticeBatch {
    pub fn from_lattices(items: &[Lattice]) -> Self {
        let max_frames = items.iter().map(Lattice::frames).max().unwrap_or(0);
        let max_labels = items.iter().map(Lattice::labels).max().unwrap_or(0);
        let lsize = max_frames * max_labels;
        let bsize = max_frames * (max_labels + 1);
        let mut label = vec![LOG_ZERO; items.len() * lsize];
        let mut blank = vec![LOG_ZERO; items.len() * bsize];
        for (i, lat) in items.iter().enumerate() {
            for t in 0..lat.frames() {
                for u in 0..lat.labels() {
                    label[i * lsize + t * max_labels + u] = lat.label(t, u);
                }
                for u in 0..=lat.labels() {
                    blank[i * bsize + t * (max_labels + 1) + u] = lat.blank(t, u);
                }
            }
        }
        Self {
            max_frames,
            max_labels,
            lengths: items.iter().map(|l| (l.frames(), l.labels())).collect(),
            label,
            blank,
        }
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn lengths(&self) -> &[(usize, usize)] {
        &self.lengths
    }

    pub fn padded_shape(&self) -> (usize, usize) {
        (self.max_frames, self.max_labels)
    }

    /// Unpads item `i` back to its true size.
    pub fn get(&self, i: usize) -> Result<Lattice> {
        let &(nt, nu) = self
            .lengths
            .get(i)
            .ok_or_else(|| Error::contract(format!("batch index {i} out of range")))?;
        let lsize = self.max_frames * self.max_labels;
        let bsize = self.max_frames * (self.max_labels + 1);
        let mut label = Vec::with_capacity(nt * nu);
        let mut blank = Vec::with_capacity(nt * (nu + 1));
        for t in 0..nt {
            let lrow = i * lsize + t * self.max_labels;
            label.extend_from_slice(&self.label[lrow..lrow + nu]);
            let brow = i * bsize + t * (self.max_labels + 1);
            blank.extend_from_slice(&self.blank[brow..brow + nu + 1]);
        }
        Lattice::new(nt, nu, label, blank)
    }

    /// Forward pass over every item at its true length.
    pub fn forward_all(&self, masks: Option<&[ConstraintMask]>) -> Result<Vec<ForwardResult>> {
        if let Some(m) = masks {
            if m.len() != self.len() {
                return Err(Error::contract("one mask per batch item required"));
            }
        }
        (0..self.len())
            .map(|i| forward(&self.get(i)?, masks.map(|m| &m[i])))
            .collect()
    }
}
