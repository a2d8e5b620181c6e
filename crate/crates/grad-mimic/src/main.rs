//! Command-line front end: wires config files and flags to the library.
//!
//! Exit codes: 0 on success, 1 for configuration mistakes (bad flags,
//! unknown subcommands, invalid or missing config values), 2 for runtime
//! failures (I/O, degenerate numerics). Every subcommand resolves an
//! explicit seed — from `--seed` or the config file — and writes all of its
//! outputs under the directory named by `--out`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use grad_mimic::config::{config_keys_help, RunConfig};
use grad_mimic::datasets::{self, inject_label_noise, LabeledDataset};
use grad_mimic::filterkit::{
    aggregate_em, binarize_matrix, detection_f1, quality_stats, FilterDecision,
};
use grad_mimic::harness::run_experiment;
use grad_mimic::mimic::ReferenceTarget;
use grad_mimic::models::{ParamMask, ParamVector};
use grad_mimic::rng::RngSeed;
use grad_mimic::theory;
use grad_mimic::trainer::{train, train_reference, ScoreMatrix};
use grad_mimic::{Error, Result};

#[derive(Parser)]
#[command(
    name = "grad-mimic",
    version,
    about = "Gradient-alignment data selection: score, reweight, filter, verify",
    after_help = config_keys_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-blob dataset (optionally with injected label noise).
    #[command(after_help = config_keys_help())]
    GenData {
        /// Config file with a [dataset] section.
        #[arg(long)]
        config: Option<PathBuf>,
        /// RNG seed; required here or as train.seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (created if absent); receives dataset.csv and,
        /// when dataset.eval_per_class > 0, eval.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the reference model (uniform weighting, clean labels).
    #[command(after_help = config_keys_help())]
    TrainRef {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training dataset CSV; overrides dataset.file.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; receives ref_params.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with the configured weighting, logging per-epoch scores.
    #[command(after_help = config_keys_help())]
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training dataset CSV; overrides dataset.file.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Reference parameters JSON (required for mimic weighting);
        /// overrides train.ref.
        #[arg(long = "ref", value_name = "REF")]
        reference: Option<PathBuf>,
        /// Evaluation dataset CSV; overrides dataset.eval_file.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; receives params.json, scores.csv,
        /// train_summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Binarize a logged score matrix and aggregate votes into a decision.
    #[command(after_help = config_keys_help())]
    Filter {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Score matrix CSV; overrides filter.scores.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; receives votes.csv and decision.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a filter decision against its score matrix (and, with
    /// ground-truth flip flags, report detection F1).
    #[command(after_help = config_keys_help())]
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Score matrix CSV; overrides filter.scores.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Filter decision CSV; overrides filter.decision.
        #[arg(long)]
        decision: Option<PathBuf>,
        /// Dataset CSV with flip flags, enabling detection F1; overrides
        /// dataset.file.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; receives report.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Numerically check the convergence identities and bounds.
    #[command(after_help = config_keys_help())]
    VerifyTheory {
        /// Random instances per check.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// RNG seed (required; this subcommand takes no config file).
        #[arg(long)]
        seed: Option<u64>,
        /// Optional output directory; receives theory_report.json in
        /// addition to the report printed on standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a canned experiment described by a config file.
    #[command(after_help = config_keys_help())]
    Experiment {
        /// Config file with an [experiment] section.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; receives {experiment}_{confighash}.json/.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            // --help/--version are successes; everything else (unknown
            // subcommand, bad flags) prints usage and exits as a config
            // error.
            return if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                ExitCode::SUCCESS
            } else {
                eprint!("{err}");
                ExitCode::from(1)
            };
        }
    };
    env_logger::init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_config_error() { 1 } else { 2 })
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::empty()),
    }
}

fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    datasets::load_csv(path)
}

fn required_input(path: Option<PathBuf>, what: &str, flag: &str, key: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::Config(format!("no {what} given: pass {flag} or set {key}")))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { config, seed, out } => {
            let cfg = load_config(config.as_deref())?;
            let seed = cfg.seed_for_train(seed)?;
            let blobs = cfg.blob_spec()?;
            std::fs::create_dir_all(&out)?;
            let mut pool = blobs.generate(seed.child("data"))?;
            let rho = cfg.noise_rho();
            if rho > 0.0 {
                pool = inject_label_noise(&pool, rho, seed.child("noise"))?;
            }
            let data_path = out.join("dataset.csv");
            datasets::save_csv(&pool, &data_path)?;
            println!("wrote {}", data_path.display());
            if cfg.eval_per_class() > 0 {
                let eval = blobs.generate_sized(cfg.eval_per_class(), seed.child("eval"))?;
                let eval_path = out.join("eval.csv");
                datasets::save_csv(&eval, &eval_path)?;
                println!("wrote {}", eval_path.display());
            }
            Ok(())
        }
        Command::TrainRef {
            config,
            data,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let seed = cfg.seed_for_train(seed)?;
            let data_path = required_input(
                cfg.dataset_file(data.as_deref()),
                "dataset",
                "--data",
                "dataset.file",
            )?;
            let ds = load_dataset(&data_path)?;
            let spec = cfg.model_spec(ds.dim(), ds.num_classes)?;
            let train_cfg = cfg.train_config(seed)?;
            let params = train_reference(&ds, &spec, &train_cfg)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("ref_params.json");
            params.save_json(&path)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Train {
            config,
            data,
            reference,
            eval,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let seed = cfg.seed_for_train(seed)?;
            let data_path = required_input(
                cfg.dataset_file(data.as_deref()),
                "dataset",
                "--data",
                "dataset.file",
            )?;
            let ds = load_dataset(&data_path)?;
            let spec = cfg.model_spec(ds.dim(), ds.num_classes)?;
            let train_cfg = cfg.train_config(seed)?;
            let target = match cfg.ref_file(reference.as_deref()) {
                Some(path) => {
                    let params = ParamVector::load_json(&path)?;
                    let mask = ParamMask::all(params.spec());
                    Some(ReferenceTarget::new(params, mask)?)
                }
                None => None,
            };
            let eval_ds = cfg
                .eval_file(eval.as_deref())
                .map(|p| load_dataset(&p))
                .transpose()?;
            let report = train(&ds, &spec, &train_cfg, target.as_ref(), eval_ds.as_ref())?;
            std::fs::create_dir_all(&out)?;
            let params_path = out.join("params.json");
            report.params.save_json(&params_path)?;
            let scores_path = out.join("scores.csv");
            report
                .score_matrix
                .as_ref()
                .expect("training always logs scores")
                .save_csv(&scores_path)?;
            let summary_path = out.join("train_summary.json");
            report.save_summary_json(&summary_path)?;
            for p in [&params_path, &scores_path, &summary_path] {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Filter {
            config,
            scores,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            cfg.seed_for_train(seed)?;
            let scores_path = required_input(
                cfg.scores_file(scores.as_deref()),
                "score matrix",
                "--scores",
                "filter.scores",
            )?;
            let matrix = ScoreMatrix::load_csv(&scores_path)?;
            let method = cfg.binarize_method()?;
            let votes = binarize_matrix(&matrix, method)?;
            let decision = aggregate_em(&votes)?;
            std::fs::create_dir_all(&out)?;
            let votes_path = out.join("votes.csv");
            votes.save_csv(&votes_path)?;
            let decision_path = out.join("decision.csv");
            decision.save_csv(&decision_path)?;
            for p in [&votes_path, &decision_path] {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Report {
            config,
            scores,
            decision,
            data,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            cfg.seed_for_train(seed)?;
            let scores_path = required_input(
                cfg.scores_file(scores.as_deref()),
                "score matrix",
                "--scores",
                "filter.scores",
            )?;
            let decision_path = required_input(
                cfg.decision_file(decision.as_deref()),
                "filter decision",
                "--decision",
                "filter.decision",
            )?;
            let matrix = ScoreMatrix::load_csv(&scores_path)?;
            let decision = FilterDecision::load_csv(&decision_path)?;
            let stats = quality_stats(&decision, &matrix)?;
            let f1 = cfg
                .dataset_file(data.as_deref())
                .map(|p| detection_f1(&decision, &load_dataset(&p)?))
                .transpose()?;

            #[derive(Serialize)]
            struct Report {
                samples: usize,
                retained: usize,
                discarded: usize,
                retention_rate: f64,
                avg_mimic_score: f64,
                #[serde(skip_serializing_if = "Option::is_none")]
                detection_f1: Option<f64>,
            }
            let report = Report {
                samples: decision.retain_prob.len(),
                retained: decision.retained.len(),
                discarded: decision.discarded().len(),
                retention_rate: stats.retention_rate,
                avg_mimic_score: stats.avg_mimic_score,
                detection_f1: f1,
            };
            std::fs::create_dir_all(&out)?;
            let path = out.join("report.json");
            let mut body = serde_json::to_string_pretty(&report)?;
            body.push('\n');
            std::fs::write(&path, &body)?;
            print!("{body}");
            Ok(())
        }
        Command::VerifyTheory { trials, seed, out } => {
            let seed = seed
                .map(RngSeed)
                .ok_or_else(|| Error::Config("no seed given: pass --seed".into()))?;
            let report = theory::verify(trials, seed)?;
            let mut body = serde_json::to_string_pretty(&report)?;
            body.push('\n');
            print!("{body}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("theory_report.json"), &body)?;
            }
            Ok(())
        }
        Command::Experiment { config, seed, out } => {
            let cfg = RunConfig::load(&config)?;
            let seed = cfg.seed_for_experiment(seed)?;
            let experiment = cfg.experiment_config(seed)?;
            let report = run_experiment(&experiment, &out)?;
            let mut body = serde_json::to_string_pretty(&report)?;
            body.push('\n');
            print!("{body}");
            Ok(())
        }
    }
}
