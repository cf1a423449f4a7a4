//! Reference implementations the integration tests compare against. They
//! share nothing with the library beyond its data types.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnnt_ner::decoder::Scorer;
use rnnt_ner::lattice::{AlignmentPath, Lattice};

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// All ways to emit `labels` labels over `frames` frames, as per-frame counts.
pub fn compositions(frames: usize, labels: usize) -> Vec<Vec<usize>> {
    if frames == 1 {
        return vec![vec![labels]];
    }
    let mut out = Vec::new();
    for first in 0..=labels {
        for mut rest in compositions(frames - 1, labels - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Label cells `(t, u)` and blank cells `(t, u)` visited by a counts path.
pub fn cells(counts: &[usize]) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let (mut lab, mut blk) = (Vec::new(), Vec::new());
    let mut u = 0;
    for (t, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            lab.push((t, u));
            u += 1;
        }
        blk.push((t, u));
    }
    (lab, blk)
}

pub fn score(lat: &Lattice, counts: &[usize]) -> f64 {
    let (lab, blk) = cells(counts);
    lab.iter().map(|&(t, u)| lat.label(t, u)).sum::<f64>() + blk.iter().map(|&(t, u)| lat.blank(t, u)).sum::<f64>()
}

fn near(cell: (usize, usize), set: &[(usize, usize)], dt: usize, du: usize) -> bool {
    set.iter().any(|&(t, u)| cell.0.abs_diff(t) <= dt && cell.1.abs_diff(u) <= du)
}

/// Whether every step of `counts` lies within the `(dt, du)` box of a step of
/// the same kind on `gold`.
pub fn admitted(counts: &[usize], gold: &[usize], dt: usize, du: usize) -> bool {
    let (gl, gb) = cells(gold);
    let (l, b) = cells(counts);
    l.iter().all(|&c| near(c, &gl, dt, du)) && b.iter().all(|&c| near(c, &gb, dt, du))
}

pub fn brute_unconstrained(lat: &Lattice) -> f64 {
    let scores: Vec<f64> = compositions(lat.frames(), lat.labels()).iter().map(|c| score(lat, c)).collect();
    logsumexp(&scores)
}

pub fn brute_constrained(lat: &Lattice, gold: &[usize], dt: usize, du: usize) -> f64 {
    let scores: Vec<f64> = compositions(lat.frames(), lat.labels())
        .iter()
        .filter(|c| admitted(c, gold, dt, du))
        .map(|c| score(lat, c))
        .collect();
    logsumexp(&scores)
}

pub fn random_lattice(rng: &mut impl Rng, frames: usize, labels: usize) -> Lattice {
    let label: Vec<f64> = (0..frames * labels).map(|_| -rng.gen_range(0.01..4.0)).collect();
    let blank: Vec<f64> = (0..frames * (labels + 1)).map(|_| -rng.gen_range(0.01..4.0)).collect();
    Lattice::new(frames, labels, label, blank).unwrap()
}

pub fn random_counts(rng: &mut impl Rng, frames: usize, labels: usize) -> Vec<usize> {
    let mut counts = vec![0; frames];
    for _ in 0..labels {
        counts[rng.gen_range(0..frames)] += 1;
    }
    counts
}

pub fn path(counts: &[usize]) -> AlignmentPath {
    AlignmentPath::from_emission_counts(counts).unwrap()
}

pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Scorer whose distribution is a fixed random function of frame and label
/// history.
pub struct TableScorer {
    pub labels: usize,
    pub seed: u64,
}

impl Scorer for TableScorer {
    type State = Vec<usize>;

    fn num_labels(&self) -> usize {
        self.labels
    }

    fn initial_state(&self) -> Vec<usize> {
        Vec::new()
    }

    fn log_probs(&self, state: &Vec<usize>, frame: usize) -> rnnt_ner::Result<Vec<f64>> {
        let mut key = self.seed.wrapping_add(1000 * frame as u64);
        for &l in state {
            key = key.wrapping_mul(1_000_003).wrapping_add(l as u64 + 7);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let w: Vec<f64> = (0..=self.labels).map(|_| rng.gen_range(0.05..1.0)).collect();
        let z: f64 = w.iter().sum();
        Ok(w.iter().map(|x| (x / z).ln()).collect())
    }

    fn advance(&self, state: &Vec<usize>, _frame: usize, label: Option<usize>) -> rnnt_ner::Result<Vec<usize>> {
        let mut s = state.clone();
        if let Some(l) = label {
            s.push(l);
        }
        Ok(s)
    }
}

/// Argmax over every emission sequence with at most `max_per_frame` labels on
/// each frame: `(score, labels, 1-based emit frames)`.
pub fn exhaustive_argmax<S: Scorer>(sc: &S, frames: usize, max_per_frame: usize) -> (f64, Vec<usize>, Vec<usize>) {
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    let total_max = frames * max_per_frame;
    for n in 0..=total_max {
        for counts in compositions(frames, n) {
            if counts.iter().any(|&c| c > max_per_frame) {
                continue;
            }
            let emit: Vec<usize> = counts.iter().enumerate().flat_map(|(t, &c)| std::iter::repeat(t + 1).take(c)).collect();
            let combos = sc.num_labels().pow(n as u32);
            for mut code in 0..combos {
                let mut labels = Vec::with_capacity(n);
                for _ in 0..n {
                    labels.push(code % sc.num_labels());
                    code /= sc.num_labels();
                }
                let s = rescore_by_hand(sc, frames, &labels, &emit);
                if best.as_ref().map_or(true, |b| s > b.0) {
                    best = Some((s, labels, emit.clone()));
                }
            }
        }
    }
    best.unwrap()
}

fn rescore_by_hand<S: Scorer>(sc: &S, frames: usize, labels: &[usize], emit: &[usize]) -> f64 {
    let mut st = sc.initial_state();
    let mut total = 0.0;
    let mut k = 0;
    for t in 0..frames {
        while k < labels.len() && emit[k] == t + 1 {
            total += sc.log_probs(&st, t).unwrap()[labels[k]];
            st = sc.advance(&st, t, Some(labels[k])).unwrap();
            k += 1;
        }
        total += sc.log_probs(&st, t).unwrap()[sc.num_labels()];
        st = sc.advance(&st, t, None).unwrap();
    }
    total
}

/// Path to a file under `tests/fixtures`.
pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}
