//! Training loop, evaluation, pseudo-labeling and the scripted experiments.

mod experiments;

pub use experiments::{
    load_datasets, run_experiment, CriterionResult, DataConfig, Datasets, ExperimentConfig, ExperimentName, ExperimentReport, RunSummary,
    SemiConfig, SweepConfig,
};

use std::fmt::Write as _;
use std::io::Write;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    random_segment, spans_to_alignment, token_spans, BoundaryPolicy, LabeledSequence, OntologySchema, OrderingPolicy,
};
use crate::decoder::{extract_spans, DecodeConfig, DecodeRecord, SpanRecord};
use crate::error::{Error, Result};
use crate::metrics::{global_f1, local_f1, SpanMatchResult};
use crate::model::{Adam, LossKind, Model, ModelConfig, OptimizerConfig};

/// One training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    /// Inclusive token-length range of the random training segments; `None`
    /// trains on whole sequences.
    pub segment: Option<[usize; 2]>,
    pub boundary: BoundaryPolicy,
    pub ordering: OrderingPolicy,
    pub epochs: usize,
    pub batch_size: usize,
    /// Evaluate every this many optimizer steps (0: only after the last step).
    pub eval_every: usize,
    /// Leading training sequences decoded for the train F1.
    pub eval_train_size: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub decode: DecodeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Fixed,
            segment: None,
            boundary: BoundaryPolicy::default(),
            ordering: OrderingPolicy::default(),
            epochs: 20,
            batch_size: 8,
            eval_every: 0,
            eval_train_size: 50,
            seed: 1,
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some([lo, hi]) = self.segment {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("invalid segment range [{lo}, {hi}]")));
            }
        }
        self.optimizer.validate()?;
        self.decode.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Copies vocabulary sizes into the model config where unset.
    pub fn resolve(&mut self, schema: &OntologySchema, input_vocab: usize) {
        if self.model.input_vocab == 0 {
            self.model.input_vocab = input_vocab;
        }
        if self.model.num_labels == 0 {
            self.model.num_labels = schema.num_outputs();
        }
    }
}

/// One optimizer step; F1 columns are filled only where an evaluation ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub nll: f64,
    pub train_f1: Option<f64>,
    pub test_f1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
}

pub const CURVE_HEADER: &str = "step,nll,train_f1,test_f1";

impl TrainingCurve {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last_test_f1(&self) -> Option<f64> {
        self.points.iter().rev().find_map(|p| p.test_f1)
    }

    pub fn last_train_f1(&self) -> Option<f64> {
        self.points.iter().rev().find_map(|p| p.train_f1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{}", p.step, p.nll, opt(p.train_f1), opt(p.test_f1));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Span scores accumulated over a set of sequences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub local: SpanMatchResult,
    pub global: SpanMatchResult,
    pub sequences: usize,
}

/// Best-hypothesis spans for one sequence.
pub fn predict_spans(
    model: &Model,
    schema: &OntologySchema,
    tokens: &[u32],
    decode: &DecodeConfig,
) -> Result<(Vec<crate::corpus::Span>, f64)> {
    if tokens.is_empty() {
        return Ok((Vec::new(), 0.0));
    }
    let hyps = model.decode(tokens, decode)?;
    let best = hyps.first().ok_or_else(|| Error::contract("beam search returned no hypothesis"))?;
    let extraction = extract_spans(&best.labels, &best.emit_frames, tokens.len(), &schema.span_schema());
    let closed: Vec<_> = extraction.spans.into_iter().filter(|s| s.closed).collect();
    Ok((token_spans(&closed), best.score))
}

/// Best hypothesis for one sequence as a decode record.
pub fn decode_record(
    model: &Model,
    schema: &OntologySchema,
    seq: &LabeledSequence,
    decode: &DecodeConfig,
) -> Result<DecodeRecord> {
    let mut record = DecodeRecord {
        id: seq.id.clone(),
        frames: seq.tokens.len(),
        score: 0.0,
        labels: Vec::new(),
        emit_frames: Vec::new(),
        spans: Vec::new(),
        diagnostics: Vec::new(),
    };
    if seq.tokens.is_empty() {
        return Ok(record);
    }
    let hyps = model.decode(&seq.tokens, decode)?;
    let best = hyps.into_iter().next().ok_or_else(|| Error::contract("beam search returned no hypothesis"))?;
    let extraction = extract_spans(&best.labels, &best.emit_frames, seq.tokens.len(), &schema.span_schema());
    record.spans = extraction
        .spans
        .iter()
        .map(|d| {
            let o = &schema.ontologies[d.ontology];
            SpanRecord {
                ontology: o.name.clone(),
                label: o.labels[d.label].clone(),
                start: d.start_frame.saturating_sub(1),
                end: d.end_frame.saturating_sub(1),
                closed: d.closed,
            }
        })
        .collect();
    record.score = best.score;
    record.labels = best.labels;
    record.emit_frames = best.emit_frames;
    record.diagnostics = extraction.diagnostics;
    Ok(record)
}

/// Decodes every sequence whole and scores the spans against the gold ones.
pub fn evaluate(
    model: &Model,
    schema: &OntologySchema,
    seqs: &[LabeledSequence],
    decode: &DecodeConfig,
) -> Result<Evaluation> {
    let mut out = Evaluation::default();
    for seq in seqs {
        let (pred, _) = predict_spans(model, schema, &seq.tokens, decode)?;
        out.local.merge(&local_f1(&pred, &seq.spans));
        out.global.merge(&global_f1(&pred, &seq.spans));
        out.sequences += 1;
    }
    Ok(out)
}

/// Decodes unlabeled sequences into a pseudo-labeled corpus. Sequences whose
/// decoded spans do not form a valid annotation, or whose per-token score
/// falls below `score_threshold`, are skipped.
pub fn pseudo_label(
    model: &Model,
    schema: &OntologySchema,
    unlabeled: &[LabeledSequence],
    decode: &DecodeConfig,
    score_threshold: Option<f64>,
) -> Result<Vec<LabeledSequence>> {
    let mut out = Vec::with_capacity(unlabeled.len());
    for seq in unlabeled {
        if seq.tokens.is_empty() {
            continue;
        }
        let (spans, score) = match predict_spans(model, schema, &seq.tokens, decode) {
            Ok(r) => r,
            Err(e) => {
                warn!("pseudo-label: skipping {}: {e}", seq.id);
                continue;
            }
        };
        if let Some(th) = score_threshold {
            if score / (seq.tokens.len() as f64) < th {
                continue;
            }
        }
        let labeled = LabeledSequence { id: seq.id.clone(), tokens: seq.tokens.clone(), spans };
        if let Err(e) = spans_to_alignment(&labeled, schema, OrderingPolicy::default()) {
            warn!("pseudo-label: skipping {}: {e}", seq.id);
            continue;
        }
        out.push(labeled);
    }
    Ok(out)
}

/// Trains a fresh model. `test` may be empty, in which case test F1 is
/// not recorded.
pub fn train(
    config: &TrainConfig,
    schema: &OntologySchema,
    train_set: &[LabeledSequence],
    test: &[LabeledSequence],
) -> Result<(Model, TrainingCurve)> {
    config.validate()?;
    let mut model = Model::new(config.model.clone())?;
    let mut curve = TrainingCurve::default();
    let examples: Vec<&LabeledSequence> = train_set.iter().filter(|s| !s.is_empty()).collect();
    if config.epochs == 0 || examples.is_empty() {
        return Ok((model, curve));
    }
    let mut opt = Adam::new(config.optimizer, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let train_eval = &train_set[..config.eval_train_size.min(train_set.len())];
    let steps_per_epoch = examples.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut step = 0;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            step += 1;
            let mut grads = model.zeros_like();
            let mut nll = 0.0;
            for &i in batch {
                let seq = match config.segment {
                    Some([lo, hi]) => random_segment(examples[i], lo, hi, config.boundary, &mut rng),
                    None => examples[i].clone(),
                };
                let gold = spans_to_alignment(&seq, schema, config.ordering)?;
                let (l, g) = model.loss_and_gradients(&seq.tokens, &gold, config.loss)?;
                nll += l;
                grads.add_assign(&g);
            }
            let scale = 1.0 / batch.len() as f64;
            nll *= scale;
            grads.scale(scale);
            if !nll.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { step, message: format!("non-finite loss {nll} in epoch {epoch}") });
            }
            opt.step(&mut model, &grads);
            let mut point = CurvePoint { step, nll, train_f1: None, test_f1: None };
            let due = step == total_steps || (config.eval_every > 0 && step % config.eval_every == 0);
            if due {
                point.train_f1 = Some(evaluate(&model, schema, train_eval, &config.decode)?.local.f1());
                if !test.is_empty() {
                    point.test_f1 = Some(evaluate(&model, schema, test, &config.decode)?.local.f1());
                }
                info!(
                    "step {step}/{total_steps} nll {nll:.4} train_f1 {:.4} test_f1 {}",
                    point.train_f1.unwrap_or(0.0),
                    point.test_f1.map_or("-".into(), |f| format!("{f:.4}"))
                );
            }
            curve.points.push(point);
        }
    }
    if !model.is_finite() {
        return Err(Error::Divergence { step, message: "non-finite parameters after training".into() });
    }
    Ok((model, curve))
}
