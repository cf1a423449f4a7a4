//! Scripted experiments on synthetic data with directional verdicts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, pseudo_label, train, TrainConfig, TrainingCurve};
use crate::corpus::{
    generate_corpus, load_corpus, random_segment, BoundaryPolicy, GeneratorConfig, LabeledSequence, OntologySchema,
};
use crate::error::{Error, Result};
use crate::model::{Architecture, LossKind, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    LossComparison,
    DeltaSweep,
    SemiSupervised,
    ShortVsLong,
    Seq2seqParity,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 5] = [
        ExperimentName::LossComparison,
        ExperimentName::DeltaSweep,
        ExperimentName::SemiSupervised,
        ExperimentName::ShortVsLong,
        ExperimentName::Seq2seqParity,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentName::LossComparison => "loss-comparison",
            ExperimentName::DeltaSweep => "delta-sweep",
            ExperimentName::SemiSupervised => "semi-supervised",
            ExperimentName::ShortVsLong => "short-vs-long",
            ExperimentName::Seq2seqParity => "seq2seq-parity",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

/// Where the corpora come from. Paths take precedence over generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub schema: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub labeled_size: usize,
    pub unlabeled_size: usize,
    pub test_size: usize,
    pub generator: GeneratorConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            schema: None,
            labeled: None,
            unlabeled: None,
            test: None,
            labeled_size: 500,
            unlabeled_size: 5000,
            test_size: 100,
            generator: GeneratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiConfig {
    /// Pseudo-label and retrain this many times.
    pub rounds: usize,
    /// Minimum per-token hypothesis score for a pseudo-label to be kept.
    pub score_threshold: Option<f64>,
}

impl Default for SemiConfig {
    fn default() -> Self {
        Self { rounds: 1, score_threshold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub deltas: Vec<usize>,
    pub short_segment: [usize; 2],
    pub long_segment: [usize; 2],
    /// Independent segmentations of each test sequence averaged for the
    /// segmented test F1.
    pub segmented_repeats: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { deltas: vec![0, 2, 4, 8, 16, 32], short_segment: [40, 60], long_segment: [280, 320], segmented_repeats: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Drives data generation, initialisation and sampling.
    pub seed: u64,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub semi: SemiConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: DataConfig::default(),
            train: TrainConfig { segment: Some([280, 320]), ..TrainConfig::default() },
            semi: SemiConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.generator.validate().map_err(|e| Error::Config(e.to_string()))?;
        for [lo, hi] in [self.sweep.short_segment, self.sweep.long_segment] {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("invalid segment range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// The training config for one run, with seeds derived from `seed`.
    pub fn train_config(&self, schema: &OntologySchema, input_vocab: usize) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = sub_seed(self.seed, 10);
        t.model.seed = sub_seed(self.seed, 11);
        t.resolve(schema, input_vocab);
        t
    }
}

/// Independent sub-seed for one consumer of randomness.
fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

/// The corpora an experiment draws on; unlabeled sequences carry no spans.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub schema: OntologySchema,
    pub vocab_size: usize,
    pub labeled: Vec<LabeledSequence>,
    pub unlabeled: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
}

fn load_or_generate(
    path: Option<&Path>,
    schema: &OntologySchema,
    cfg: &DataConfig,
    size: usize,
    seed: u64,
) -> Result<(usize, Vec<LabeledSequence>)> {
    match path {
        Some(p) => {
            let (header, seqs) = load_corpus(p)?;
            let vocab = match header {
                Some(h) => h.vocab_size,
                None => seqs.iter().flat_map(|s| s.tokens.iter()).max().map_or(0, |&m| m as usize + 1),
            };
            for s in &seqs {
                s.validate(schema)?;
            }
            Ok((vocab, seqs))
        }
        None => {
            let (vocab, seqs) = generate_corpus(schema, &cfg.generator, size, seed)?;
            Ok((vocab.len(), seqs))
        }
    }
}

/// Loads the configured corpora, generating any without a path.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    let d = &cfg.data;
    let schema = match &d.schema {
        Some(p) => OntologySchema::load(p)?,
        None => OntologySchema::medical_default(),
    };
    let (v1, labeled) = load_or_generate(d.labeled.as_deref(), &schema, d, d.labeled_size, sub_seed(cfg.seed, 1))?;
    let (v2, mut unlabeled) =
        load_or_generate(d.unlabeled.as_deref(), &schema, d, d.unlabeled_size, sub_seed(cfg.seed, 2))?;
    let (v3, test) = load_or_generate(d.test.as_deref(), &schema, d, d.test_size, sub_seed(cfg.seed, 3))?;
    // unlabeled inputs never expose their generated annotation
    for s in &mut unlabeled {
        s.spans.clear();
    }
    Ok(Datasets { schema, vocab_size: v1.max(v2).max(v3), labeled, unlabeled, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub architecture: Architecture,
    pub loss: String,
    pub segment: Option<[usize; 2]>,
    pub train_sequences: usize,
    pub steps: usize,
    pub final_nll: Option<f64>,
    pub train_f1: Option<f64>,
    /// Local F1 on whole test sequences.
    pub test_f1: Option<f64>,
    pub test_global_f1: Option<f64>,
    /// Local F1 on test segments cut like the training segments.
    pub segmented_test_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: String,
    pub description: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentName,
    pub seed: u64,
    pub runs: Vec<RunSummary>,
    pub criteria: Vec<CriterionResult>,
    pub passed: bool,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn failed_criteria(&self) -> Vec<&CriterionResult> {
        self.criteria.iter().filter(|c| !c.passed).collect()
    }
}

struct Harness<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a Datasets,
    out: Option<&'a Path>,
    runs: Vec<RunSummary>,
}

struct RunSpec {
    name: String,
    architecture: Architecture,
    loss: LossKind,
    segment: Option<[usize; 2]>,
}

impl RunSpec {
    fn rnnt(name: impl Into<String>, loss: LossKind, segment: Option<[usize; 2]>) -> Self {
        Self { name: name.into(), architecture: Architecture::Rnnt, loss, segment }
    }
}

impl Harness<'_> {
    fn train_config(&self, spec: &RunSpec) -> TrainConfig {
        let mut t = self.cfg.clone();
        t.train.loss = spec.loss;
        t.train.segment = spec.segment;
        t.train.model.architecture = spec.architecture;
        t.train_config(&self.data.schema, self.data.vocab_size)
    }

    fn run(&mut self, spec: RunSpec, train_set: &[LabeledSequence]) -> Result<(Model, f64)> {
        let tc = self.train_config(&spec);
        let started = std::time::Instant::now();
        let (model, curve) = train(&tc, &self.data.schema, train_set, &self.data.test)?;
        let test_eval = evaluate(&model, &self.data.schema, &self.data.test, &tc.decode)?;
        let segmented = match spec.segment {
            Some([lo, hi]) => {
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.cfg.seed, 20));
                let repeats = self.cfg.sweep.segmented_repeats.max(1);
                let mut total = 0.0;
                for _ in 0..repeats {
                    let segs: Vec<LabeledSequence> = self
                        .data
                        .test
                        .iter()
                        .map(|s| random_segment(s, lo, hi, BoundaryPolicy::Drop, &mut rng))
                        .collect();
                    total += evaluate(&model, &self.data.schema, &segs, &tc.decode)?.local.f1();
                }
                Some(total / repeats as f64)
            }
            None => None,
        };
        let test_f1 = test_eval.local.f1();
        info!(
            "run {}: test F1 {test_f1:.4} (segmented {}) in {:.1}s",
            spec.name,
            segmented.map_or("-".into(), |f| format!("{f:.4}")),
            started.elapsed().as_secs_f64()
        );
        self.write_curve(&spec.name, &curve)?;
        self.runs.push(RunSummary {
            name: spec.name,
            architecture: spec.architecture,
            loss: spec.loss.name(),
            segment: spec.segment,
            train_sequences: train_set.len(),
            steps: curve.points.len(),
            final_nll: curve.points.last().map(|p| p.nll),
            train_f1: curve.last_train_f1(),
            test_f1: Some(test_f1),
            test_global_f1: Some(test_eval.global.f1()),
            segmented_test_f1: segmented,
        });
        Ok((model, test_f1))
    }

    fn write_curve(&self, name: &str, curve: &TrainingCurve) -> Result<()> {
        if let Some(dir) = self.out {
            std::fs::write(dir.join(format!("curve-{name}.csv")), curve.to_csv())?;
        }
        Ok(())
    }
}

fn criterion(id: &str, description: &str, value: f64, threshold: f64, passed: bool) -> CriterionResult {
    CriterionResult { id: id.into(), description: description.into(), value, threshold, passed }
}

/// Runs one experiment end to end. When `out` is given, curves
/// (`curve-<run>.csv`), the resolved config and `report.json` are written
/// there.
pub fn run_experiment(name: ExperimentName, cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    cfg.validate()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    }
    let data = load_datasets(cfg)?;
    info!(
        "{name}: {} labeled, {} unlabeled, {} test sequences",
        data.labeled.len(),
        data.unlabeled.len(),
        data.test.len()
    );
    let mut h = Harness { cfg, data: &data, out, runs: Vec::new() };
    let seg = cfg.train.segment;
    let labeled = &data.labeled;
    let criteria = match name {
        ExperimentName::LossComparison => {
            let (_, fixed) = h.run(RunSpec::rnnt("fixed", LossKind::Fixed, seg), labeled)?;
            let (_, unc) = h.run(RunSpec::rnnt("unconstrained", LossKind::Unconstrained, seg), labeled)?;
            vec![criterion(
                "5a",
                "fixed-mode test local F1 minus unconstrained-mode test local F1 >= 0.02",
                fixed - unc,
                0.02,
                fixed - unc >= 0.02,
            )]
        }
        ExperimentName::DeltaSweep => {
            let (_, fixed) = h.run(RunSpec::rnnt("fixed", LossKind::Fixed, seg), labeled)?;
            let (_, unc) = h.run(RunSpec::rnnt("unconstrained", LossKind::Unconstrained, seg), labeled)?;
            let mut by_delta = Vec::new();
            for &delta in &cfg.sweep.deltas {
                let (_, f) =
                    h.run(RunSpec::rnnt(format!("delta-{delta}"), LossKind::Constrained { delta }, seg), labeled)?;
                by_delta.push((delta, f));
            }
            let smallest = by_delta.iter().min_by_key(|(d, _)| *d).copied();
            let largest = by_delta.iter().max_by_key(|(d, _)| *d).copied();
            let mut out = Vec::new();
            if let Some((d, f)) = smallest {
                let gap = (f - fixed).abs();
                out.push(criterion(
                    "5b-small",
                    &format!("|F1(delta={d}) - F1(fixed)| <= 0.01"),
                    gap,
                    0.01,
                    gap <= 0.01,
                ));
            }
            if let Some((d, f)) = largest {
                let gap = (f - unc).abs();
                out.push(criterion(
                    "5b-large",
                    &format!("|F1(delta={d}) - F1(unconstrained)| <= 0.02"),
                    gap,
                    0.02,
                    gap <= 0.02,
                ));
            }
            out
        }
        ExperimentName::SemiSupervised => {
            let mut gains = Vec::new();
            for (label, loss) in [("fixed", LossKind::Fixed), ("unconstrained", LossKind::Unconstrained)] {
                let (mut model, base) = h.run(RunSpec::rnnt(format!("{label}-supervised"), loss, seg), labeled)?;
                let mut last = base;
                for round in 1..=cfg.semi.rounds {
                    let tc = h.train_config(&RunSpec::rnnt("", loss, seg));
                    let pseudo =
                        pseudo_label(&model, &data.schema, &data.unlabeled, &tc.decode, cfg.semi.score_threshold)?;
                    info!("{label}: round {round} kept {} of {} pseudo-labels", pseudo.len(), data.unlabeled.len());
                    let mut combined = labeled.clone();
                    combined.extend(pseudo);
                    let (m, f) = h.run(RunSpec::rnnt(format!("{label}-semi-{round}"), loss, seg), &combined)?;
                    model = m;
                    last = f;
                }
                gains.push(last - base);
            }
            let margin = gains[1] - gains[0];
            vec![criterion(
                "5c",
                "semi-supervised gain of unconstrained mode minus gain of fixed mode > 0",
                margin,
                0.0,
                margin > 0.0,
            )]
        }
        ExperimentName::ShortVsLong => {
            let mut gaps = Vec::new();
            for (label, range) in [("short", cfg.sweep.short_segment), ("long", cfg.sweep.long_segment)] {
                h.run(RunSpec::rnnt(label, cfg.train.loss, Some(range)), labeled)?;
                let r = h.runs.last().expect("run recorded");
                gaps.push(r.test_f1.unwrap_or(0.0) - r.segmented_test_f1.unwrap_or(0.0));
            }
            let diff = gaps[0] - gaps[1];
            vec![criterion(
                "5d",
                "(unsegmented - segmented F1) of short-trained minus that of long-trained <= -0.02",
                diff,
                -0.02,
                diff <= -0.02,
            )]
        }
        ExperimentName::Seq2seqParity => {
            let (_, rnnt) = h.run(RunSpec::rnnt("rnnt-fixed", LossKind::Fixed, seg), labeled)?;
            let spec = RunSpec {
                name: "seq2seq-fixed".into(),
                architecture: Architecture::Seq2seq,
                loss: LossKind::Fixed,
                segment: seg,
            };
            let (_, s2s) = h.run(spec, labeled)?;
            let gap = (rnnt - s2s).abs();
            vec![criterion("5e", "|F1(RNN-T fixed) - F1(seq2seq fixed)| <= 0.02", gap, 0.02, gap <= 0.02)]
        }
    };
    let passed = criteria.iter().all(|c| c.passed);
    let report = ExperimentReport { experiment: name, seed: cfg.seed, runs: h.runs, criteria, passed };
    if let Some(dir) = out {
        std::fs::write(dir.join("report.json"), report.to_json())?;
    }
    Ok(report)
}
