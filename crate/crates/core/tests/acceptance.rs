//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. The experiment criteria train several models and take a while;
//! progress goes to stderr with `RUST_LOG=info`.

mod common;

use std::path::Path;
use std::time::Instant;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnnt_ner::corpus::{
    generate_corpus, load_corpus, save_corpus, spans_to_alignment, token_spans, CorpusHeader, GeneratorConfig,
    GoldAlignment, OntologySchema, OrderingPolicy, Span,
};
use rnnt_ner::decoder::{beam_search, extract_spans, DecodeConfig};
use rnnt_ner::lattice::{loss_constrained, loss_fixed, loss_gradients, loss_unconstrained, Lattice, LossMode};
use rnnt_ner::metrics::{global_f1, local_f1};
use rnnt_ner::model::{Architecture, EncoderKind, LossKind, Model, ModelConfig};
use rnnt_ner::trainer::{run_experiment, ExperimentConfig, ExperimentName, ExperimentReport};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_u, mut worst_c) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (t, u) = (rng.gen_range(1..=6), rng.gen_range(0..=5));
        let lat = random_lattice(&mut rng, t, u);
        worst_u = worst_u.max((loss_unconstrained(&lat).unwrap() - brute_unconstrained(&lat)).abs());
        let gold = random_counts(&mut rng, t, u);
        let (dt, du) = (rng.gen_range(0..=3), rng.gen_range(0..=3));
        let got = loss_constrained(&lat, &path(&gold), dt, du).unwrap();
        worst_c = worst_c.max((got - brute_constrained(&lat, &gold, dt, du)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst_u <= 1e-9 && worst_c <= 1e-9 && secs < 10.0,
        format!("200 lattices: max |diff| unconstrained {worst_u:.2e}, constrained {worst_c:.2e}, {secs:.2}s"),
    )
}

fn loss_mode_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut d0, mut dmax, mut drop) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let (t, u) = (rng.gen_range(1..=6), rng.gen_range(0..=5));
        let lat = random_lattice(&mut rng, t, u);
        let gold = path(&random_counts(&mut rng, t, u));
        d0 = d0.max((loss_constrained(&lat, &gold, 0, 0).unwrap() - loss_fixed(&lat, &gold).unwrap()).abs());
        dmax = dmax.max((loss_constrained(&lat, &gold, t, u).unwrap() - loss_unconstrained(&lat).unwrap()).abs());
        // loss_* return log-likelihoods; nested neighbourhoods can only add paths
        let mut prev = f64::NEG_INFINITY;
        for d in 0..=t.max(u) {
            let ll = loss_constrained(&lat, &gold, d, d).unwrap();
            drop = drop.max(prev - ll);
            prev = ll;
        }
    }
    ensure(
        d0 <= 1e-12 && dmax <= 1e-12 && drop <= 0.0,
        format!("50 cases: delta=0 vs fixed {d0:.1e}, full delta vs unconstrained {dmax:.1e}, worst decrease {drop:.1e}"),
    )
}

fn lattice_fd_worst(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for case in 0..30 {
        let (nt, nu) = (rng.gen_range(1..=5), rng.gen_range(0..=4));
        let lat = random_lattice(rng, nt, nu);
        let gold = path(&random_counts(rng, nt, nu));
        let mode = match case % 3 {
            0 => LossMode::Unconstrained,
            1 => LossMode::Fixed(&gold),
            _ => LossMode::Constrained { path: &gold, delta_t: 1, delta_u: 1 },
        };
        let g = loss_gradients(&lat, mode).unwrap();
        for t in 0..nt {
            for u in 0..=nu {
                for is_label in [true, false] {
                    if is_label && u == nu {
                        continue;
                    }
                    let x = if is_label { lat.label(t, u) } else { lat.blank(t, u) };
                    let nll = |v: f64| {
                        let mut l: Lattice = lat.clone();
                        if is_label {
                            l.set_label(t, u, v).unwrap();
                        } else {
                            l.set_blank(t, u, v).unwrap();
                        }
                        -mode.loglik(&l).unwrap()
                    };
                    let an = if is_label { g.label(t, u) } else { g.blank(t, u) };
                    worst = worst.max(rel_err(central_diff(nll, x, 1e-5), an));
                }
            }
        }
    }
    worst
}

fn pipeline_fd_worst(model: &Model, tokens: &[u32], gold: &GoldAlignment, loss: LossKind) -> f64 {
    let (_, grads) = model.loss_and_gradients(tokens, gold, loss).unwrap();
    let analytic: Vec<f64> = grads.tensors().into_iter().flat_map(|(_, m)| m.data.clone()).collect();
    let mut worst = 0.0f64;
    let mut k = 0;
    for ti in 0..model.tensors().len() {
        for i in 0..model.tensors()[ti].1.data.len() {
            let x = model.tensors()[ti].1.data[i];
            let f = |v: f64| {
                let mut m = model.clone();
                m.tensors_mut()[ti].data[i] = v;
                m.loss(tokens, gold, loss).unwrap()
            };
            worst = worst.max(rel_err(central_diff(f, x, 1e-5), analytic[k]));
            k += 1;
        }
    }
    worst
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let lattice = lattice_fd_worst(&mut rng);
    let mut pipeline = 0.0f64;
    for encoder in [EncoderKind::Attention, EncoderKind::Bigru] {
        for arch in [Architecture::Rnnt, Architecture::Seq2seq] {
            let model = Model::new(ModelConfig {
                architecture: arch,
                encoder,
                input_vocab: 6,
                num_labels: 3,
                hidden: 3,
                layers: 2,
                heads: 1,
                window: 2,
                init_scale: 0.5,
                seed: rng.gen(),
            })
            .unwrap();
            let tokens: Vec<u32> = (0..4).map(|_| rng.gen_range(0..6)).collect();
            let gold = GoldAlignment {
                targets: vec![rng.gen_range(0..3), rng.gen_range(0..3)],
                path: path(&random_counts(&mut rng, 4, 2)),
            };
            let losses = match arch {
                Architecture::Rnnt => vec![LossKind::Unconstrained, LossKind::Fixed, LossKind::Constrained { delta: 1 }],
                Architecture::Seq2seq => vec![LossKind::Fixed],
            };
            for loss in losses {
                pipeline = pipeline.max(pipeline_fd_worst(&model, &tokens, &gold, loss));
            }
        }
    }
    ensure(
        lattice < 1e-5 && pipeline < 1e-4,
        format!("max relative error: lattice {lattice:.2e} (< 1e-5), pipeline {pipeline:.2e} (< 1e-4)"),
    )
}

fn decoder_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut mismatches = 0;
    for _ in 0..100 {
        let sc = TableScorer { labels: rng.gen_range(1..=3), seed: rng.gen() };
        let frames = rng.gen_range(1..=4);
        let top = beam_search(&sc, frames, &DecodeConfig::exhaustive(2)).unwrap().remove(0);
        let (score, labels, emit) = exhaustive_argmax(&sc, frames, 2);
        if top.labels != labels || top.emit_frames != emit || (top.score - score).abs() > 1e-9 {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, format!("{mismatches} of 100 scorers disagree with exhaustive search"))
}

fn metric_contracts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut violations = 0;
    let spans = |rng: &mut ChaCha8Rng| -> Vec<Span> {
        (0..rng.gen_range(0..6))
            .map(|_| {
                let start = rng.gen_range(0..8);
                Span { ontology: rng.gen_range(0..2), label: rng.gen_range(0..2), start, end: start + rng.gen_range(0..3) }
            })
            .collect()
    };
    for _ in 0..1000 {
        let (p, g) = (spans(&mut rng), spans(&mut rng));
        if local_f1(&p, &g).f1() > global_f1(&p, &g).f1() {
            violations += 1;
        }
    }
    let gold = [Span { ontology: 1, label: 0, start: 6, end: 9 }];
    let pred = [Span { ontology: 1, label: 0, start: 7, end: 9 }];
    let (l, g) = (local_f1(&pred, &gold).f1(), global_f1(&pred, &gold).f1());
    ensure(
        violations == 0 && l == 0.0 && g == 1.0,
        format!("{violations} of 1000 pairs with local > global; mismatch fixture local {l} / global {g}"),
    )
}

fn round_trips() -> Outcome {
    let schema = OntologySchema::medical_default();
    let gen = GeneratorConfig { mean_length: 120.0, ..GeneratorConfig::default() };
    let (vocab, seqs) = generate_corpus(&schema, &gen, 1000, 107).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("corpus.jsonl");
    save_corpus(&file, &CorpusHeader::new(vocab.len(), false), &seqs).unwrap();
    let (_, back) = load_corpus(&file).unwrap();
    let io_ok = back == seqs;
    let mut broken = 0;
    for s in &seqs {
        let gold = spans_to_alignment(s, &schema, OrderingPolicy::default()).unwrap();
        let ex = extract_spans(&gold.targets, &gold.emit_frames(), s.len(), &schema.span_schema());
        let mut got = token_spans(&ex.spans);
        let mut want = s.spans.clone();
        got.sort();
        want.sort();
        if got != want {
            broken += 1;
        }
    }
    ensure(io_ok && broken == 0, format!("corpus file identity {io_ok}; {broken} of 1000 span round trips differ"))
}

fn desk_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    ExperimentConfig::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn experiment(name: ExperimentName, out: Option<&Path>) -> Result<ExperimentReport, String> {
    let start = Instant::now();
    let report = run_experiment(name, &desk_config(), out).map_err(|e| e.to_string())?;
    let mins = start.elapsed().as_secs_f64() / 60.0;
    if mins >= 30.0 {
        return Err(format!("{name} took {mins:.1} min"));
    }
    Ok(report)
}

fn criteria_lines(report: &ExperimentReport) -> Vec<(String, Outcome)> {
    let runs: Vec<String> =
        report.runs.iter().map(|r| format!("{} {:.3}", r.name, r.test_f1.unwrap_or(f64::NAN))).collect();
    report
        .criteria
        .iter()
        .map(|c| {
            let detail = format!("{}: value {:.4}; runs [{}]", c.description, c.value, runs.join(", "));
            (c.id.clone(), ensure(c.passed, detail))
        })
        .collect()
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut results: Vec<(String, Outcome)> = Vec::new();
    let mut record = |id: &str, outcome: Outcome| {
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} criterion {id}: {detail}");
        results.push((id.to_string(), outcome));
    };
    record("1", oracle_equivalence());
    record("2", loss_mode_algebra());
    record("3", gradient_correctness());
    record("4", decoder_exactness());
    record("6", metric_contracts());
    record("7", round_trips());

    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    for name in ExperimentName::ALL {
        let out = (name == ExperimentName::LossComparison).then_some(first.as_path());
        match experiment(name, out) {
            Ok(report) => {
                for (id, outcome) in criteria_lines(&report) {
                    record(&id, outcome);
                }
            }
            Err(e) => record(name.as_str(), Err(e)),
        }
    }

    let second = dir.path().join("second");
    let determinism = experiment(ExperimentName::LossComparison, Some(&second)).and_then(|_| {
        let mut same = 0;
        for run in ["fixed", "unconstrained"] {
            let file = format!("curve-{run}.csv");
            let a = std::fs::read(first.join(&file)).map_err(|e| e.to_string())?;
            let b = std::fs::read(second.join(&file)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{file} differs between runs"));
            }
            same += 1;
        }
        Ok(format!("{same} curve files byte-identical across two loss-comparison runs"))
    });
    record("8", determinism);

    let failed: Vec<&str> = results.iter().filter(|(_, o)| o.is_err()).map(|(id, _)| id.as_str()).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
