//! `rnnt-ner`: data generation, training, decoding, evaluation,
//! pseudo-labeling, scripted experiments and the self-check suite.
//!
//! Every subcommand writes the resolved config as `config.toml` into the
//! output directory and writes nothing outside it. Progress goes to stderr.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};

use rnnt_ner::corpus::{generate_corpus, save_corpus, CorpusHeader, OntologySchema};
use rnnt_ner::metrics::{per_ontology_report, Averaging};
use rnnt_ner::model::Model;
use rnnt_ner::trainer::{
    decode_record, evaluate, load_datasets, pseudo_label, run_experiment, train, ExperimentConfig, ExperimentName,
};
use rnnt_ner::{verify, Error};

const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_DATA: u8 = 4;
const EXIT_NUMERICAL: u8 = 5;
const EXIT_CRITERION: u8 = 6;

#[derive(Debug, Parser)]
#[command(name = "rnnt-ner", version, about = "Alignment-aware RNN-T toolkit for nested NER")]
struct Cli {
    /// Experiment config (TOML); defaults apply to anything omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its schema.
    GenData {
        /// Number of sequences (defaults to the labeled size in the config).
        #[arg(long)]
        size: Option<usize>,
        /// Corpus file stem.
        #[arg(long, default_value = "corpus")]
        name: String,
    },
    /// Train a model on the labeled corpus and save a checkpoint.
    Train {
        /// Labeled corpus; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Test corpus for the curve's test F1.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Decode a corpus to JSON lines.
    Decode {
        #[arg(long)]
        model: PathBuf,
        /// Corpus to decode; defaults to the configured test set.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a model against gold spans.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "micro")]
        averaging: AveragingArg,
    },
    /// Decode unlabeled sequences into a pseudo-labeled corpus.
    PseudoLabel {
        #[arg(long)]
        model: PathBuf,
        /// Unlabeled corpus; defaults to the configured unlabeled set.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run one scripted experiment, or `all`.
    Experiment { name: String },
    /// Run the brute-force and gradient oracle suite.
    Verify,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AveragingArg {
    Micro,
    Macro,
}

#[derive(Debug)]
enum Failure {
    Lib(Error),
    Criteria(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io(_) | Error::Parse { .. } | Error::Format(_) | Error::Generation(_) | Error::Contract(_) => {
            EXIT_DATA
        }
        Error::Divergence { .. } | Error::NoAdmissiblePath => EXIT_NUMERICAL,
        Error::Criterion(_) => EXIT_CRITERION,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_config(out: &Path, cfg: &ExperimentConfig) -> Result<(), Error> {
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli)?;
    let out = cli.out.as_path();
    fs::create_dir_all(out)?;
    match cli.command {
        Command::GenData { size, name } => {
            let size = size.unwrap_or(cfg.data.labeled_size);
            cfg.data.labeled_size = size;
            write_config(out, &cfg)?;
            let schema = schema_for(&cfg)?;
            let (vocab, seqs) = generate_corpus(&schema, &cfg.data.generator, size, cfg.seed)?;
            save_corpus(&out.join(format!("{name}.jsonl")), &CorpusHeader::new(vocab.len(), false), &seqs)?;
            schema.save(&out.join("schema.toml"))?;
            info!("wrote {size} sequences to {}", out.join(format!("{name}.jsonl")).display());
        }
        Command::Train { data, test } => {
            if data.is_some() {
                cfg.data.labeled = data;
            }
            if test.is_some() {
                cfg.data.test = test;
            }
            if cfg.data.unlabeled.is_none() {
                cfg.data.unlabeled_size = 0;
            }
            write_config(out, &cfg)?;
            let d = load_datasets(&cfg)?;
            let tc = cfg.train_config(&d.schema, d.vocab_size);
            let (model, curve) = train(&tc, &d.schema, &d.labeled, &d.test)?;
            model.save(&out.join("model.bin"))?;
            fs::write(out.join("curve.csv"), curve.to_csv())?;
            info!(
                "trained {} steps, final test F1 {}",
                curve.points.len(),
                curve.last_test_f1().map_or("-".into(), |f| format!("{f:.4}"))
            );
        }
        Command::Decode { model, data } => {
            if data.is_some() {
                cfg.data.test = data;
            }
            cfg.data.labeled_size = 0;
            cfg.data.unlabeled_size = 0;
            write_config(out, &cfg)?;
            let model = Model::load(&model)?;
            let d = load_datasets(&cfg)?;
            let mut w = BufWriter::new(fs::File::create(out.join("decoded.jsonl"))?);
            for seq in &d.test {
                let rec = decode_record(&model, &d.schema, seq, &cfg.train.decode)?;
                writeln!(w, "{}", rec.to_json_line())?;
            }
            w.flush()?;
            info!("decoded {} sequences", d.test.len());
        }
        Command::Eval { model, data, averaging } => {
            if data.is_some() {
                cfg.data.test = data;
            }
            cfg.data.labeled_size = 0;
            cfg.data.unlabeled_size = 0;
            write_config(out, &cfg)?;
            let model = Model::load(&model)?;
            let d = load_datasets(&cfg)?;
            let ev = evaluate(&model, &d.schema, &d.test, &cfg.train.decode)?;
            let avg = match averaging {
                AveragingArg::Micro => Averaging::Micro,
                AveragingArg::Macro => Averaging::Macro,
            };
            let local = per_ontology_report(&ev.local, &d.schema, avg);
            let global = per_ontology_report(&ev.global, &d.schema, avg);
            local.write_csv(fs::File::create(out.join("eval-local.csv"))?)?;
            global.write_csv(fs::File::create(out.join("eval-global.csv"))?)?;
            let json = serde_json::json!({ "sequences": ev.sequences, "local": local, "global": global });
            fs::write(out.join("eval.json"), serde_json::to_string_pretty(&json).expect("json"))?;
            info!("local F1 {:.4}, global F1 {:.4}", ev.local.f1(), ev.global.f1());
        }
        Command::PseudoLabel { model, data } => {
            if data.is_some() {
                cfg.data.unlabeled = data;
            }
            cfg.data.labeled_size = 0;
            cfg.data.test_size = 0;
            write_config(out, &cfg)?;
            let model = Model::load(&model)?;
            let d = load_datasets(&cfg)?;
            let pseudo = pseudo_label(&model, &d.schema, &d.unlabeled, &cfg.train.decode, cfg.semi.score_threshold)?;
            save_corpus(&out.join("pseudo.jsonl"), &CorpusHeader::new(d.vocab_size, true), &pseudo)?;
            info!("kept {} of {} sequences", pseudo.len(), d.unlabeled.len());
        }
        Command::Experiment { name } => {
            let names: Vec<ExperimentName> = if name == "all" {
                ExperimentName::ALL.to_vec()
            } else {
                vec![name.parse()?]
            };
            write_config(out, &cfg)?;
            let mut failed = Vec::new();
            for n in names {
                let report = run_experiment(n, &cfg, Some(&out.join(n.as_str())))?;
                for c in &report.criteria {
                    eprintln!("[{}] {} {}: value {:.4} (threshold {})", if c.passed { "PASS" } else { "FAIL" }, c.id, c.description, c.value, c.threshold);
                    if !c.passed {
                        failed.push(c.id.clone());
                    }
                }
            }
            if !failed.is_empty() {
                return Err(Failure::Criteria(failed));
            }
        }
        Command::Verify => {
            write_config(out, &cfg)?;
            let report = verify::run_all(cfg.seed)?;
            fs::write(out.join("verify.json"), serde_json::to_string_pretty(&report).expect("json"))?;
            let mut failed = Vec::new();
            for c in &report.checks {
                eprintln!(
                    "[{}] {}: {} cases, max error {:.3e} (tolerance {:.0e}), {:.2}s",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.cases,
                    c.max_error,
                    c.tolerance,
                    c.seconds
                );
                if !c.passed {
                    failed.push(c.name.clone());
                }
            }
            if !failed.is_empty() {
                return Err(Failure::Criteria(failed));
            }
        }
    }
    Ok(())
}

fn schema_for(cfg: &ExperimentConfig) -> Result<OntologySchema, Error> {
    match &cfg.data.schema {
        Some(p) => OntologySchema::load(p),
        None => Ok(OntologySchema::medical_default()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Criteria(ids)) => {
            error!("failed: {}", ids.join(", "));
            ExitCode::from(EXIT_CRITERION)
        }
    }
}
