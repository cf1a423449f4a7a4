use serde::{Deserialize, Serialize};

use super::{AlignmentPath, Move};
use crate::error::{Error, Result};

/// Admissible label and blank cells for the constrained loss.
///
/// Built from the cells a path visits, dilated by a `(2 * delta_t + 1) x
/// (2 * delta_u + 1)` rectangle and clipped at the lattice edges. The label
/// and blank masks are dilated independently with the same rectangle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintMask {
    frames: usize,
    labels: usize,
    delta_t: usize,
    delta_u: usize,
    label_mask: Vec<bool>,
    blank_mask: Vec<bool>,
}

impl ConstraintMask {
    pub fn from_path(path: &AlignmentPath, delta_t: usize, delta_u: usize) -> Self {
        let (nt, nu) = (path.frames(), path.labels());
        let mut label_cells = vec![false; nt * nu];
        let mut blank_cells = vec![false; nt * (nu + 1)];
        for step in path.steps() {
            match step.kind {
                Move::Label => label_cells[step.frame * nu + step.emitted] = true,
                Move::Blank => blank_cells[step.frame * (nu + 1) + step.emitted] = true,
            }
        }
        Self {
            frames: nt,
            labels: nu,
            delta_t,
            delta_u,
            label_mask: dilate(&label_cells, nt, nu, delta_t, delta_u),
            blank_mask: dilate(&blank_cells, nt, nu + 1, delta_t, delta_u),
        }
    }

    /// Assembles a mask from explicit matrices (used by deserialisation).
    pub fn from_parts(
        frames: usize,
        labels: usize,
        delta_t: usize,
        delta_u: usize,
        label_mask: Vec<bool>,
        blank_mask: Vec<bool>,
    ) -> Result<Self> {
        if label_mask.len() != frames * labels || blank_mask.len() != frames * (labels + 1) {
            return Err(Error::contract("mask matrices do not match the declared shape"));
        }
        Ok(Self { frames, labels, delta_t, delta_u, label_mask, blank_mask })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn delta_t(&self) -> usize {
        self.delta_t
    }

    pub fn delta_u(&self) -> usize {
        self.delta_u
    }

    pub fn label_mask(&self) -> &[bool] {
        &self.label_mask
    }

    pub fn blank_mask(&self) -> &[bool] {
        &self.blank_mask
    }

    #[inline]
    pub fn label_allowed(&self, t: usize, u: usize) -> bool {
        self.label_mask[t * self.labels + u]
    }

    #[inline]
    pub fn blank_allowed(&self, t: usize, u: usize) -> bool {
        self.blank_mask[t * (self.labels + 1) + u]
    }

    pub fn admissible_cells(&self) -> usize {
        self.label_mask.iter().chain(&self.blank_mask).filter(|&&b| b).count()
    }

    pub(crate) fn check_dims(&self, frames: usize, labels: usize) -> Result<()> {
        if self.frames != frames || self.labels != labels {
            return Err(Error::contract(format!(
                "mask is {}x{} but lattice is {}x{}",
                self.frames, self.labels, frames, labels
            )));
        }
        Ok(())
    }

    /// Whether a complete path admitted by the mask passes through every
    /// cell of `path`.
    pub fn contains_path(&self, path: &AlignmentPath) -> bool {
        path.frames() == self.frames
            && path.labels() == self.labels
            && path.steps().all(|s| match s.kind {
                Move::Blank => self.blank_allowed(s.frame, s.emitted),
                Move::Label => self.label_allowed(s.frame, s.emitted),
            })
    }

    /// Number of complete paths the mask admits, saturating at `u64::MAX`.
    pub fn count_paths(&self) -> u64 {
        self.prefix_counts().1
    }

    fn prefix_counts(&self) -> (Vec<u64>, u64) {
        let (nt, nu) = (self.frames, self.labels);
        let cols = nu + 1;
        // counts[t * cols + u]: admissible prefixes arriving at frame t with u labels
        let mut counts = vec![0u64; nt * cols];
        counts[0] = 1;
        for t in 0..nt {
            for u in 0..=nu {
                if t == 0 && u == 0 {
                    continue;
                }
                let mut c = 0u64;
                if t > 0 && self.blank_allowed(t - 1, u) {
                    c = c.saturating_add(counts[(t - 1) * cols + u]);
                }
                if u > 0 && self.label_allowed(t, u - 1) {
                    c = c.saturating_add(counts[t * cols + u - 1]);
                }
                counts[t * cols + u] = c;
            }
        }
        let total = if self.blank_allowed(nt - 1, nu) { counts[(nt - 1) * cols + nu] } else { 0 };
        (counts, total)
    }

    /// The admitted path when exactly one exists.
    pub fn unique_path(&self) -> Result<Option<AlignmentPath>> {
        let (counts, total) = self.prefix_counts();
        if total != 1 {
            return Ok(None);
        }
        let cols = self.labels + 1;
        let (mut t, mut u) = (self.frames - 1, self.labels);
        let mut moves = vec![Move::Blank];
        while t > 0 || u > 0 {
            if t > 0 && self.blank_allowed(t - 1, u) && counts[(t - 1) * cols + u] > 0 {
                t -= 1;
                moves.push(Move::Blank);
            } else if u > 0 && self.label_allowed(t, u - 1) && counts[t * cols + u - 1] > 0 {
                u -= 1;
                moves.push(Move::Label);
            } else {
                return Err(Error::contract("inconsistent path counts while tracing mask"));
            }
        }
        moves.reverse();
        AlignmentPath::new(moves).map(Some)
    }
}

/// Separable rectangular dilation of a row-major boolean matrix, clipped at
/// the borders.
fn dilate(cells: &[bool], rows: usize, cols: usize, half_rows: usize, half_cols: usize) -> Vec<bool> {
    if rows == 0 || cols == 0 {
        return cells.to_vec();
    }
    let mut across = vec![false; rows * cols];
    for r in 0..rows {
        let row = &cells[r * cols..(r + 1) * cols];
        let out = &mut across[r * cols..(r + 1) * cols];
        sliding_any(row.iter().copied(), cols, half_cols, |i, v| out[i] = v);
    }
    let mut out = vec![false; rows * cols];
    for c in 0..cols {
        let column = (0..rows).map(|r| across[r * cols + c]);
        sliding_any(column, rows, half_rows, |i, v| out[i * cols + c] = v);
    }
    out
}

/// Writes, for each position, whether any input within `half` positions is set.
fn sliding_any(values: impl Iterator<Item = bool>, len: usize, half: usize, mut write: impl FnMut(usize, bool)) {
    let mut prefix = Vec::with_capacity(len + 1);
    prefix.push(0usize);
    for v in values {
        prefix.push(prefix.last().unwrap() + usize::from(v));
    }
    for i in 0..len {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(len);
        write(i, prefix[hi] > prefix[lo]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dilate(cells: &[bool], rows: usize, cols: usize, hr: usize, hc: usize) -> Vec<bool> {
        let mut out = vec![false; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                if !cells[r * cols + c] {
                    continue;
                }
                for rr in r.saturating_sub(hr)..(r + hr + 1).min(rows) {
                    for cc in c.saturating_sub(hc)..(c + hc + 1).min(cols) {
                        out[rr * cols + cc] = true;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_delta_is_path_cells() {
        let path = AlignmentPath::from_emission_counts(&[0, 1, 0, 1]).unwrap();
        let m = ConstraintMask::from_path(&path, 0, 0);
        assert!(m.contains_path(&path));
        assert_eq!(m.admissible_cells(), path.len());
        assert_eq!(m.count_paths(), 1);
        assert_eq!(m.unique_path().unwrap(), Some(path));
    }

    #[test]
    fn full_relaxation_admits_everything() {
        let path = AlignmentPath::from_emission_counts(&[2, 0, 0, 1]).unwrap();
        let m = ConstraintMask::from_path(&path, 4, 3);
        assert!(m.label_mask().iter().all(|&b| b));
        assert!(m.blank_mask().iter().all(|&b| b));
        // C(T + U - 1, U) terminating paths for T=4, U=3
        assert_eq!(m.count_paths(), 20);
        assert_eq!(m.unique_path().unwrap(), None);
    }

    #[test]
    fn dilation_around_a_step() {
        // label emitted on frame 2 (1-based) as the second label
        let path = AlignmentPath::from_emission_counts(&[1, 1, 0, 0]).unwrap();
        let m = ConstraintMask::from_path(&path, 1, 1);
        let mut label_cells = vec![false; 4 * 2];
        label_cells[0] = true;
        label_cells[2 + 1] = true;
        let expected = naive_dilate(&label_cells, 4, 2, 1, 1);
        assert_eq!(m.label_mask(), expected.as_slice());
        for t in 0..3 {
            for u in 0..2 {
                assert!(m.label_allowed(t, u), "({t},{u}) should be admissible");
            }
        }
    }

    #[test]
    fn separable_matches_naive_dilation() {
        let cells: Vec<bool> = (0..7 * 5).map(|i| (i * 7 + 3) % 11 == 0).collect();
        for hr in 0..4 {
            for hc in 0..4 {
                assert_eq!(dilate(&cells, 7, 5, hr, hc), naive_dilate(&cells, 7, 5, hr, hc), "hr={hr} hc={hc}");
            }
        }
    }

    #[test]
    fn asymmetric_deltas() {
        let path = AlignmentPath::from_emission_counts(&[0, 0, 1, 0, 0, 0]).unwrap();
        let m = ConstraintMask::from_path(&path, 2, 0);
        // only column 0 of the label matrix, frames 0..=4
        let admitted: Vec<usize> = (0..6).filter(|&t| m.label_allowed(t, 0)).collect();
        assert_eq!(admitted, vec![0, 1, 2, 3, 4]);
    }
}
