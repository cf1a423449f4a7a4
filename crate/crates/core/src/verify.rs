//! Self-check suite: lattice losses against brute-force path enumeration,
//! gradients against central differences, and beam search against exhaustive
//! search.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::GoldAlignment;
use crate::decoder::{beam_search, DecodeConfig, Scorer};
use crate::error::Result;
use crate::lattice::{
    loss_constrained, loss_fixed, loss_gradients, loss_unconstrained, AlignmentPath, ConstraintMask, Lattice,
    LossMode, Move,
};
use crate::logspace::{log_softmax, log_sum_exp};
use crate::model::{Architecture, EncoderKind, LossKind, Model, ModelConfig};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub seconds: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, cases: usize, tolerance: f64, start: Instant, errors: impl IntoIterator<Item = f64>) -> Check {
    let mut max_error = 0.0f64;
    let mut finite = true;
    for e in errors {
        finite &= !e.is_nan();
        max_error = max_error.max(e);
    }
    Check {
        name: name.to_string(),
        cases,
        max_error,
        tolerance,
        seconds: start.elapsed().as_secs_f64(),
        passed: finite && max_error <= tolerance,
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Every monotone path from `(0, 0)` to `(frames, labels)`.
pub fn enumerate_paths(frames: usize, labels: usize) -> Vec<AlignmentPath> {
    fn go(t: usize, u: usize, nt: usize, nu: usize, moves: &mut Vec<Move>, out: &mut Vec<AlignmentPath>) {
        if t == nt {
            if u == nu {
                out.push(AlignmentPath::new(moves.clone()).expect("enumerated path is valid"));
            }
            return;
        }
        if u < nu {
            moves.push(Move::Label);
            go(t, u + 1, nt, nu, moves, out);
            moves.pop();
        }
        moves.push(Move::Blank);
        go(t + 1, u, nt, nu, moves, out);
        moves.pop();
    }
    let mut out = Vec::new();
    go(0, 0, frames, labels, &mut Vec::new(), &mut out);
    out
}

fn path_score(lat: &Lattice, path: &AlignmentPath) -> f64 {
    path.steps()
        .map(|s| match s.kind {
            Move::Blank => lat.blank(s.frame, s.emitted),
            Move::Label => lat.label(s.frame, s.emitted),
        })
        .sum()
}

fn admitted(mask: &ConstraintMask, path: &AlignmentPath) -> bool {
    path.steps().all(|s| match s.kind {
        Move::Blank => mask.blank_allowed(s.frame, s.emitted),
        Move::Label => mask.label_allowed(s.frame, s.emitted),
    })
}

/// Cell-normalised random lattice (label vs blank at each interior cell).
pub fn random_lattice<R: Rng>(rng: &mut R, frames: usize, labels: usize) -> Lattice {
    let mut lat = Lattice::empty(frames, labels).expect("non-empty lattice");
    for t in 0..frames {
        for u in 0..=labels {
            if u < labels {
                let lp = log_softmax(&[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]);
                lat.set_label(t, u, lp[0]).unwrap();
                lat.set_blank(t, u, lp[1]).unwrap();
            } else {
                lat.set_blank(t, u, -rng.gen_range(0.0..2.0)).unwrap();
            }
        }
    }
    lat
}

fn random_path<R: Rng>(rng: &mut R, frames: usize, labels: usize) -> AlignmentPath {
    let mut counts = vec![0; frames];
    for _ in 0..labels {
        counts[rng.gen_range(0..frames)] += 1;
    }
    AlignmentPath::from_emission_counts(&counts).expect("valid counts")
}

fn lattice_oracle(rng: &mut ChaCha8Rng, cases: usize) -> Result<Check> {
    let start = Instant::now();
    let mut errors = Vec::with_capacity(2 * cases);
    for _ in 0..cases {
        let (nt, nu) = (rng.gen_range(1..=6), rng.gen_range(0..=5));
        let lat = random_lattice(rng, nt, nu);
        let paths = enumerate_paths(nt, nu);
        let all: Vec<f64> = paths.iter().map(|p| path_score(&lat, p)).collect();
        errors.push((loss_unconstrained(&lat)? - log_sum_exp(&all)).abs());
        let gold = random_path(rng, nt, nu);
        let (dt, du) = (rng.gen_range(0..=3), rng.gen_range(0..=3));
        let mask = ConstraintMask::from_path(&gold, dt, du);
        let kept: Vec<f64> = paths.iter().zip(&all).filter(|(p, _)| admitted(&mask, p)).map(|(_, &s)| s).collect();
        errors.push((loss_constrained(&lat, &gold, dt, du)? - log_sum_exp(&kept)).abs());
    }
    Ok(check("lattice-oracle", cases, 1e-9, start, errors))
}

fn loss_algebra(rng: &mut ChaCha8Rng, cases: usize) -> Result<Check> {
    let start = Instant::now();
    let mut errors = Vec::new();
    for _ in 0..cases {
        let (nt, nu) = (rng.gen_range(1..=6), rng.gen_range(0..=5));
        let lat = random_lattice(rng, nt, nu);
        let gold = random_path(rng, nt, nu);
        errors.push((loss_constrained(&lat, &gold, 0, 0)? - loss_fixed(&lat, &gold)?).abs());
        let big = nt.max(nu);
        errors.push((loss_constrained(&lat, &gold, big, big)? - loss_unconstrained(&lat)?).abs());
        // log-likelihood may only grow as the neighbourhood widens
        let mut prev = f64::NEG_INFINITY;
        for delta in 0..=big {
            let ll = loss_constrained(&lat, &gold, delta, delta)?;
            errors.push((prev - ll).max(0.0));
            prev = ll;
        }
    }
    Ok(check("loss-algebra", cases, 1e-12, start, errors))
}

fn lattice_gradients(rng: &mut ChaCha8Rng, cases: usize) -> Result<Check> {
    const H: f64 = 1e-5;
    let start = Instant::now();
    let mut errors = Vec::new();
    for case in 0..cases {
        let (nt, nu) = (rng.gen_range(1..=5), rng.gen_range(0..=4));
        let lat = random_lattice(rng, nt, nu);
        let gold = random_path(rng, nt, nu);
        let mode = match case % 3 {
            0 => LossMode::Unconstrained,
            1 => LossMode::Fixed(&gold),
            _ => LossMode::Constrained { path: &gold, delta_t: 1, delta_u: 1 },
        };
        let grads = loss_gradients(&lat, mode)?;
        for t in 0..nt {
            for u in 0..=nu {
                for is_label in [false, true] {
                    if is_label && u == nu {
                        continue;
                    }
                    let get = |l: &Lattice| if is_label { l.label(t, u) } else { l.blank(t, u) };
                    let nll_at = |delta: f64| -> Result<f64> {
                        let mut l = lat.clone();
                        let v = get(&lat) + delta;
                        if is_label {
                            l.set_label(t, u, v)?;
                        } else {
                            l.set_blank(t, u, v)?;
                        }
                        Ok(-mode.loglik(&l)?)
                    };
                    let fd = (nll_at(H)? - nll_at(-H)?) / (2.0 * H);
                    let analytic = if is_label { grads.label(t, u) } else { grads.blank(t, u) };
                    errors.push(rel_err(fd, analytic));
                }
            }
        }
    }
    Ok(check("lattice-gradients", cases, 1e-5, start, errors))
}

fn model_fd(model: &Model, tokens: &[u32], gold: &GoldAlignment, loss: LossKind) -> Result<f64> {
    const H: f64 = 1e-5;
    let (_, grads) = model.loss_and_gradients(tokens, gold, loss)?;
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|(_, m)| m.data.clone()).collect();
    let mut worst = 0.0f64;
    let mut k = 0;
    for ti in 0..model.tensors().len() {
        for i in 0..model.tensors()[ti].1.len() {
            let mut plus = model.clone();
            plus.tensors_mut()[ti].data[i] += H;
            let mut minus = model.clone();
            minus.tensors_mut()[ti].data[i] -= H;
            let fd = (plus.loss(tokens, gold, loss)? - minus.loss(tokens, gold, loss)?) / (2.0 * H);
            worst = worst.max(rel_err(fd, analytic[k]));
            k += 1;
        }
    }
    Ok(worst)
}

fn pipeline_gradients(rng: &mut ChaCha8Rng) -> Result<Check> {
    let start = Instant::now();
    let mut errors = Vec::new();
    let mut cases = 0;
    for encoder in [EncoderKind::Attention, EncoderKind::Bigru] {
        for arch in [Architecture::Rnnt, Architecture::Seq2seq] {
            let cfg = ModelConfig {
                architecture: arch,
                encoder,
                input_vocab: 7,
                num_labels: 3,
                hidden: 3,
                layers: 2,
                heads: 1,
                window: 2,
                init_scale: 0.5,
                seed: rng.gen(),
            };
            let model = Model::new(cfg)?;
            let tokens: Vec<u32> = (0..4).map(|_| rng.gen_range(0..7)).collect();
            let gold = GoldAlignment {
                targets: (0..2).map(|_| rng.gen_range(0..3)).collect(),
                path: random_path(rng, 4, 2),
            };
            let losses: &[LossKind] = match arch {
                Architecture::Rnnt => &[LossKind::Unconstrained, LossKind::Fixed, LossKind::Constrained { delta: 1 }],
                Architecture::Seq2seq => &[LossKind::Fixed],
            };
            for &loss in losses {
                errors.push(model_fd(&model, &tokens, &gold, loss)?);
                cases += 1;
            }
        }
    }
    Ok(check("pipeline-gradients", cases, 1e-4, start, errors))
}

/// History-dependent random distributions, reproducible from a seed.
pub struct RandomScorer {
    pub labels: usize,
    pub seed: u64,
}

impl Scorer for RandomScorer {
    type State = Vec<usize>;

    fn num_labels(&self) -> usize {
        self.labels
    }

    fn initial_state(&self) -> Vec<usize> {
        Vec::new()
    }

    fn log_probs(&self, state: &Vec<usize>, frame: usize) -> Result<Vec<f64>> {
        let mut key = self.seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        for &l in state {
            key = key.wrapping_mul(31).wrapping_add(l as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let logits: Vec<f64> = (0..=self.labels).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Ok(log_softmax(&logits))
    }

    fn advance(&self, state: &Vec<usize>, _frame: usize, label: Option<usize>) -> Result<Vec<usize>> {
        let mut s = state.clone();
        s.extend(label);
        Ok(s)
    }
}

/// Best `(score, labels, 1-based frames)` over every emission sequence with
/// at most `max_expansion` labels per frame.
pub fn exhaustive_best<S: Scorer>(scorer: &S, frames: usize, max_expansion: usize) -> Result<(f64, Vec<usize>, Vec<usize>)> {
    type Best = (f64, Vec<usize>, Vec<usize>);
    fn go<S: Scorer>(
        sc: &S,
        st: &S::State,
        frame: usize,
        emitted: usize,
        acc: (f64, &mut Vec<usize>, &mut Vec<usize>),
        lim: (usize, usize),
        best: &mut Option<Best>,
    ) -> Result<()> {
        let (score, labels, frames_out) = acc;
        let (frames, max_exp) = lim;
        if frame == frames {
            if best.as_ref().map_or(true, |b| score > b.0) {
                *best = Some((score, labels.clone(), frames_out.clone()));
            }
            return Ok(());
        }
        let dist = sc.log_probs(st, frame)?;
        let next = sc.advance(st, frame, None)?;
        go(sc, &next, frame + 1, 0, (score + dist[sc.num_labels()], labels, frames_out), lim, best)?;
        if emitted < max_exp {
            for l in 0..sc.num_labels() {
                let next = sc.advance(st, frame, Some(l))?;
                labels.push(l);
                frames_out.push(frame + 1);
                go(sc, &next, frame, emitted + 1, (score + dist[l], labels, frames_out), lim, best)?;
                labels.pop();
                frames_out.pop();
            }
        }
        Ok(())
    }
    let mut best = None;
    go(
        scorer,
        &scorer.initial_state(),
        0,
        0,
        (0.0, &mut Vec::new(), &mut Vec::new()),
        (frames, max_expansion),
        &mut best,
    )?;
    Ok(best.expect("at least the all-blank path exists"))
}

fn decoder_exactness(rng: &mut ChaCha8Rng, cases: usize) -> Result<Check> {
    let start = Instant::now();
    let mut errors = Vec::new();
    for _ in 0..cases {
        let scorer = RandomScorer { labels: rng.gen_range(1..=3), seed: rng.gen() };
        let frames = rng.gen_range(1..=4);
        let max_expansion = 2;
        let hyps = beam_search(&scorer, frames, &DecodeConfig::exhaustive(max_expansion))?;
        let (score, labels, emit) = exhaustive_best(&scorer, frames, max_expansion)?;
        let top = &hyps[0];
        let same = top.labels == labels && top.emit_frames == emit;
        errors.push(if same { (top.score - score).abs() } else { f64::INFINITY });
    }
    Ok(check("decoder-exactness", cases, 1e-9, start, errors))
}

/// Runs every check with the case counts used by the acceptance criteria.
pub fn run_all(seed: u64) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = vec![
        lattice_oracle(&mut rng, 200)?,
        loss_algebra(&mut rng, 50)?,
        lattice_gradients(&mut rng, 30)?,
        pipeline_gradients(&mut rng)?,
        decoder_exactness(&mut rng, 100)?,
    ];
    Ok(VerifyReport { seed, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_counts_are_binomial() {
        assert_eq!(enumerate_paths(1, 0).len(), 1);
        // the last move is always blank: C(T - 1 + U, U)
        assert_eq!(enumerate_paths(3, 2).len(), 6);
        assert_eq!(enumerate_paths(6, 5).len(), 252);
    }

    #[test]
    fn suite_passes() {
        let report = run_all(7).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
    }
}
