//! Frame-synchronous beam search and span reconstruction.
//!
//! Hypotheses advance through the input one frame at a time. Within a frame a
//! hypothesis may emit up to `max_expansion` labels; taking blank moves it to
//! the next frame. Because every surviving hypothesis has consumed the same
//! number of frames, their scores are directly comparable and pruning is a
//! single threshold against the frame's best score.

mod output;
mod spans;

pub use output::{DecodeRecord, SpanRecord};
pub use spans::{extract_spans, DecodedSpan, LabelRole, SpanExtraction, SpanSchema};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{log_add, log_sum_exp, LOG_ZERO};

/// Supplies next-symbol distributions for beam search.
///
/// Distributions have `num_labels() + 1` entries: the real labels in id
/// order, then blank.
pub trait Scorer {
    type State: Clone;

    fn num_labels(&self) -> usize;

    fn initial_state(&self) -> Self::State;

    /// Log-distribution at 0-based `frame` for a hypothesis in `state`.
    fn log_probs(&self, state: &Self::State, frame: usize) -> Result<Vec<f64>>;

    /// State after emitting `label` (`None` is blank) at `frame`.
    fn advance(&self, state: &Self::State, frame: usize, label: Option<usize>) -> Result<Self::State>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Log-probability margin below the frame's best score; `f64::INFINITY`
    /// disables pruning.
    pub beam: f64,
    /// Labels a hypothesis may emit on one frame before it must take blank.
    pub max_expansion: usize,
    /// Cap on hypotheses kept per frame and per expansion wave.
    pub max_hyps: usize,
    /// Recombine hypotheses with identical label histories by log-sum-exp.
    pub merge: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { beam: 8.0, max_expansion: 5, max_hyps: 8, merge: true }
    }
}

impl DecodeConfig {
    /// No pruning and no recombination: explores every path with at most
    /// `max_expansion` labels per frame.
    pub fn exhaustive(max_expansion: usize) -> Self {
        Self { beam: f64::INFINITY, max_expansion, max_hyps: usize::MAX, merge: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam.is_nan() || self.beam < 0.0 {
            return Err(Error::Config(format!("beam must be >= 0, got {}", self.beam)));
        }
        if self.max_expansion == 0 {
            return Err(Error::Config("max_expansion must be >= 1".into()));
        }
        if self.max_hyps == 0 {
            return Err(Error::Config("max_hyps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Hypothesis<S> {
    /// Emitted label ids, blank excluded.
    pub labels: Vec<usize>,
    /// 1-based frame of each label.
    pub emit_frames: Vec<usize>,
    pub score: f64,
    pub state: S,
}

impl<S> Hypothesis<S> {
    /// Score order with the deterministic tie-breaks: higher score, then
    /// fewer labels, then lexicographic labels, then frames.
    fn ranking(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.labels.len().cmp(&other.labels.len()))
            .then_with(|| self.labels.cmp(&other.labels))
            .then_with(|| self.emit_frames.cmp(&other.emit_frames))
    }
}

const NORMALIZATION_TOLERANCE: f64 = 1e-6;

fn checked_distribution(dist: Vec<f64>, num_labels: usize) -> Result<Vec<f64>> {
    if dist.len() != num_labels + 1 {
        return Err(Error::contract(format!(
            "scorer returned {} entries, expected {}",
            dist.len(),
            num_labels + 1
        )));
    }
    let norm = log_sum_exp(&dist);
    if !norm.is_finite() || norm.abs() > NORMALIZATION_TOLERANCE || dist.iter().any(|v| v.is_nan()) {
        return Err(Error::contract(format!(
            "scorer distribution is not normalized (log mass {norm})"
        )));
    }
    Ok(dist)
}

fn rank_and_cap<S>(hyps: &mut Vec<Hypothesis<S>>, cap: usize) {
    hyps.sort_by(|a, b| a.ranking(b));
    hyps.truncate(cap);
}

/// Recombines hypotheses sharing a label history. The merged hypothesis keeps
/// the frames and state of its best-scoring member.
fn merge_equal_histories<S>(hyps: Vec<Hypothesis<S>>) -> Vec<Hypothesis<S>> {
    let mut hyps = hyps;
    hyps.sort_by(|a, b| a.labels.cmp(&b.labels).then_with(|| a.ranking(b)));
    let mut out: Vec<Hypothesis<S>> = Vec::with_capacity(hyps.len());
    for h in hyps {
        match out.last_mut() {
            Some(last) if last.labels == h.labels => last.score = log_add(last.score, h.score),
            _ => out.push(h),
        }
    }
    out
}

fn prune<S>(hyps: &mut Vec<Hypothesis<S>>, threshold: f64) {
    hyps.retain(|h| h.score >= threshold);
}

/// Runs frame-synchronous beam search over `frames` input frames and returns
/// hypotheses ranked best first.
pub fn beam_search<Sc: Scorer>(
    scorer: &Sc,
    frames: usize,
    config: &DecodeConfig,
) -> Result<Vec<Hypothesis<Sc::State>>> {
    config.validate()?;
    let num_labels = scorer.num_labels();
    let blank = num_labels;
    let mut hyps = vec![Hypothesis {
        labels: Vec::new(),
        emit_frames: Vec::new(),
        score: 0.0,
        state: scorer.initial_state(),
    }];

    // Candidates carry (parent state index, emitted label) instead of a state;
    // only those surviving pruning pay for `advance`.
    let realize = |arena: &[Sc::State], h: Hypothesis<(usize, Option<usize>)>, frame: usize| {
        let (parent, label) = h.state;
        Ok::<_, Error>(Hypothesis {
            labels: h.labels,
            emit_frames: h.emit_frames,
            score: h.score,
            state: scorer.advance(&arena[parent], frame, label)?,
        })
    };
    for frame in 0..frames {
        let mut arena: Vec<Sc::State> = Vec::new();
        let mut finished: Vec<Hypothesis<(usize, Option<usize>)>> = Vec::new();
        let mut active = std::mem::take(&mut hyps);
        for wave in 0..=config.max_expansion {
            let mut expanded = Vec::new();
            for hyp in active {
                let dist = checked_distribution(scorer.log_probs(&hyp.state, frame)?, num_labels)?;
                let parent = arena.len();
                if wave < config.max_expansion {
                    for (label, &lp) in dist[..num_labels].iter().enumerate() {
                        if lp == LOG_ZERO {
                            continue;
                        }
                        let mut labels = hyp.labels.clone();
                        labels.push(label);
                        let mut emit_frames = hyp.emit_frames.clone();
                        emit_frames.push(frame + 1);
                        expanded.push(Hypothesis {
                            labels,
                            emit_frames,
                            score: hyp.score + lp,
                            state: (parent, Some(label)),
                        });
                    }
                }
                finished.push(Hypothesis {
                    labels: hyp.labels,
                    emit_frames: hyp.emit_frames,
                    score: hyp.score + dist[blank],
                    state: (parent, None),
                });
                arena.push(hyp.state);
            }
            if config.merge {
                finished = merge_equal_histories(finished);
                expanded = merge_equal_histories(expanded);
            }
            let best = finished
                .iter()
                .chain(&expanded)
                .map(|h| h.score)
                .fold(LOG_ZERO, f64::max);
            let threshold = best - config.beam;
            prune(&mut finished, threshold);
            prune(&mut expanded, threshold);
            rank_and_cap(&mut finished, config.max_hyps);
            rank_and_cap(&mut expanded, config.max_hyps);
            active = expanded.into_iter().map(|h| realize(&arena, h, frame)).collect::<Result<_>>()?;
            if active.is_empty() {
                break;
            }
        }
        hyps = finished.into_iter().map(|h| realize(&arena, h, frame)).collect::<Result<_>>()?;
    }
    hyps.sort_by(|a, b| a.ranking(b));
    Ok(hyps)
}

/// Re-scores a label/frame sequence step by step from a fresh scorer state.
pub fn rescore<Sc: Scorer>(scorer: &Sc, frames: usize, labels: &[usize], emit_frames: &[usize]) -> Result<f64> {
    if labels.len() != emit_frames.len() {
        return Err(Error::contract("labels and emit_frames differ in length"));
    }
    let blank = scorer.num_labels();
    let mut state = scorer.initial_state();
    let mut score = 0.0;
    let mut next = 0;
    for frame in 0..frames {
        while next < labels.len() && emit_frames[next] == frame + 1 {
            let dist = scorer.log_probs(&state, frame)?;
            score += dist[labels[next]];
            state = scorer.advance(&state, frame, Some(labels[next]))?;
            next += 1;
        }
        let dist = scorer.log_probs(&state, frame)?;
        score += dist[blank];
        state = scorer.advance(&state, frame, None)?;
    }
    if next != labels.len() {
        return Err(Error::contract("emit frames out of range or not non-decreasing"));
    }
    Ok(score)
}
