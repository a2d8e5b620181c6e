//! Sectioned `key = value` run configuration.
//!
//! A config file holds up to six sections — `[dataset]`, `[model]`,
//! `[train]`, `[mimic]`, `[filter]`, `[experiment]` — each a flat list of
//! `key = value` lines. Blank lines and `#` comments are ignored. Unknown
//! sections, unknown keys, duplicate keys, and malformed values are all
//! rejected with the offending `section.key` and line number, so a typo
//! never silently falls back to a default. Path-valued keys resolve
//! relative to the config file's own directory.
//!
//! [`RunConfig`] is the typed view: accessors assemble the per-module
//! configs ([`TrainConfig`], [`ModelSpec`], [`BinarizeMethod`],
//! [`ExperimentConfig`]) and name the missing key when a required value is
//! absent. Command-line flags override file values; the seed accessors
//! implement that precedence and insist that *some* seed is given.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::filterkit::BinarizeMethod;
use crate::harness::{BlobSpec, ExperimentConfig, ExperimentKind};
use crate::mimic::{MimicConfig, Weighting};
use crate::models::{ModelKind, ModelSpec};
use crate::rng::RngSeed;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

/// Every recognized config key with its value syntax and meaning. This table
/// drives both parsing (anything absent here is rejected) and the CLI's
/// `--help` output, so the two can never drift apart.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("dataset.num_classes", "integer >= 2; number of Gaussian blob classes"),
    ("dataset.per_class", "integer >= 1; training samples per class"),
    ("dataset.dim", "integer >= 1; feature dimension"),
    ("dataset.separation", "float; distance between blob centers (default 3.0)"),
    ("dataset.cluster_std", "float; per-coordinate blob spread (default 1.0)"),
    ("dataset.eval_per_class", "integer; held-out samples per class (default 0 = none)"),
    ("dataset.noise_rho", "float in [0,1); label-flip fraction (default 0 = clean)"),
    ("dataset.file", "path; dataset CSV to load (overridden by --data)"),
    ("dataset.eval_file", "path; evaluation CSV to load (overridden by --eval)"),
    ("model.kind", "linear_softmax | mlp_one_hidden (default linear_softmax)"),
    ("model.hidden_dim", "integer >= 1; hidden width, required for mlp_one_hidden"),
    ("model.init_scale", "float >= 0; uniform init half-width (default 0.1)"),
    ("train.learning_rate", "float > 0; SGD step size"),
    ("train.batch_size", "integer >= 1; mini-batch size"),
    ("train.epochs", "integer >= 1; passes over the data"),
    ("train.shuffle", "true | false; reshuffle each epoch (default true)"),
    ("train.seed", "integer; RNG seed (overridden by --seed)"),
    ("train.ref", "path; reference parameters JSON (overridden by --ref)"),
    ("mimic.temperature", "float > 0; softmax temperature (default 1.0)"),
    ("mimic.weighting", "mimic | grand | uniform (default uniform)"),
    ("filter.binarizer", "threshold | kmeans | gmm | topk (default gmm)"),
    ("filter.top_k_percent", "float in (0,100]; required when binarizer = topk"),
    ("filter.scores", "path; score matrix CSV to load (overridden by --scores)"),
    ("filter.decision", "path; filter decision CSV to load (overridden by --decision)"),
    ("experiment.kind", "denoise | noise_sweep | membership | temp_ablation | convergence"),
    ("experiment.noise_levels", "comma-separated floats; rho grid for noise_sweep"),
    ("experiment.subset_fraction", "float in (0,1); reference fraction for membership"),
    ("experiment.temperatures", "comma-separated floats; tau grid for temp_ablation"),
    ("experiment.target_accuracy", "float; convergence target (default: uniform's final)"),
    ("experiment.reference_epochs", "integer >= 1; reference training epochs (default train.epochs)"),
    ("experiment.seed", "integer; master seed for experiments (overridden by --seed)"),
];

const SECTIONS: &[&str] = &["dataset", "model", "train", "mimic", "filter", "experiment"];

/// One `--help`-ready line per recognized key.
pub fn config_keys_help() -> String {
    let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config file keys (sectioned key = value format):\n");
    let mut section = "";
    for (key, desc) in CONFIG_KEYS {
        let this = key.split('.').next().unwrap();
        if this != section {
            section = this;
            out.push_str(&format!("\n  [{section}]\n"));
        }
        let name = key.split('.').nth(1).unwrap();
        out.push_str(&format!("    {name:<w$}  {desc}\n", w = width - section.len() - 1));
    }
    out
}

fn bad_value(key: &str, line: usize, expected: &str, got: &str) -> Error {
    Error::Config(format!(
        "{key}: expected {expected}, got {got:?} (line {line})"
    ))
}

fn parse_usize(key: &str, line: usize, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad_value(key, line, "an integer", v))
}

fn parse_u64(key: &str, line: usize, v: &str) -> Result<u64> {
    v.parse().map_err(|_| bad_value(key, line, "an integer", v))
}

fn parse_f64(key: &str, line: usize, v: &str) -> Result<f64> {
    v.parse().map_err(|_| bad_value(key, line, "a number", v))
}

fn parse_bool(key: &str, line: usize, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(key, line, "true or false", v)),
    }
}

fn parse_f64_list(key: &str, line: usize, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|part| {
            let part = part.trim();
            part.parse()
                .map_err(|_| bad_value(key, line, "comma-separated numbers", part))
        })
        .collect()
}

/// Parsed, validated configuration with every value still optional; the
/// typed accessors below decide what is required for which subcommand.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    /// Directory of the config file; relative path values resolve here.
    base_dir: PathBuf,

    num_classes: Option<usize>,
    per_class: Option<usize>,
    dim: Option<usize>,
    separation: Option<f64>,
    cluster_std: Option<f64>,
    eval_per_class: Option<usize>,
    noise_rho: Option<f64>,
    dataset_file: Option<PathBuf>,
    eval_file: Option<PathBuf>,

    model_kind: Option<ModelKind>,
    hidden_dim: Option<usize>,
    init_scale: Option<f64>,

    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    shuffle: Option<bool>,
    train_seed: Option<u64>,
    ref_file: Option<PathBuf>,

    temperature: Option<f64>,
    weighting: Option<Weighting>,

    binarizer: Option<String>,
    top_k_percent: Option<f64>,
    scores_file: Option<PathBuf>,
    decision_file: Option<PathBuf>,

    experiment_kind: Option<ExperimentKind>,
    noise_levels: Option<Vec<f64>>,
    subset_fraction: Option<f64>,
    temperatures: Option<Vec<f64>>,
    target_accuracy: Option<f64>,
    reference_epochs: Option<usize>,
    experiment_seed: Option<u64>,
}

impl RunConfig {
    /// An empty configuration (for subcommands invoked without `--config`);
    /// relative paths resolve against the current directory.
    pub fn empty() -> Self {
        RunConfig {
            base_dir: PathBuf::from("."),
            ..RunConfig::default()
        }
    }

    /// Reads and parses `path`, rejecting anything outside [`CONFIG_KEYS`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let base_dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Self::parse(&text, base_dir)
    }

    fn parse(text: &str, base_dir: PathBuf) -> Result<Self> {
        let mut cfg = RunConfig {
            base_dir,
            ..RunConfig::default()
        };
        let mut section: Option<String> = None;
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(Error::Parse {
                    line,
                    message: format!("unterminated section header {trimmed:?}"),
                })?;
                if !SECTIONS.contains(&name) {
                    return Err(Error::Config(format!(
                        "unknown config section [{name}] (line {line}); expected one of {}",
                        SECTIONS
                            .iter()
                            .map(|s| format!("[{s}]"))
                            .collect::<Vec<_>>()
                            .join(", ")
                    )));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(Error::Parse {
                line,
                message: format!("expected `key = value` or `[section]`, got {trimmed:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let section = section.as_deref().ok_or(Error::Parse {
                line,
                message: format!("key {key:?} appears before any [section] header"),
            })?;
            let qualified = format!("{section}.{key}");
            if !CONFIG_KEYS.iter().any(|(k, _)| *k == qualified) {
                return Err(Error::Config(format!(
                    "unknown config key {qualified} (line {line})"
                )));
            }
            if !seen.insert(qualified.clone()) {
                return Err(Error::Config(format!(
                    "duplicate config key {qualified} (line {line})"
                )));
            }
            cfg.apply(&qualified, value, line)?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &str, line: usize) -> Result<()> {
        match key {
            "dataset.num_classes" => self.num_classes = Some(parse_usize(key, line, v)?),
            "dataset.per_class" => self.per_class = Some(parse_usize(key, line, v)?),
            "dataset.dim" => self.dim = Some(parse_usize(key, line, v)?),
            "dataset.separation" => self.separation = Some(parse_f64(key, line, v)?),
            "dataset.cluster_std" => self.cluster_std = Some(parse_f64(key, line, v)?),
            "dataset.eval_per_class" => self.eval_per_class = Some(parse_usize(key, line, v)?),
            "dataset.noise_rho" => self.noise_rho = Some(parse_f64(key, line, v)?),
            "dataset.file" => self.dataset_file = Some(PathBuf::from(v)),
            "dataset.eval_file" => self.eval_file = Some(PathBuf::from(v)),
            "model.kind" => {
                self.model_kind = Some(match v {
                    "linear_softmax" => ModelKind::LinearSoftmax,
                    "mlp_one_hidden" => ModelKind::MlpOneHidden,
                    _ => {
                        return Err(bad_value(key, line, "linear_softmax or mlp_one_hidden", v))
                    }
                })
            }
            "model.hidden_dim" => self.hidden_dim = Some(parse_usize(key, line, v)?),
            "model.init_scale" => self.init_scale = Some(parse_f64(key, line, v)?),
            "train.learning_rate" => self.learning_rate = Some(parse_f64(key, line, v)?),
            "train.batch_size" => self.batch_size = Some(parse_usize(key, line, v)?),
            "train.epochs" => self.epochs = Some(parse_usize(key, line, v)?),
            "train.shuffle" => self.shuffle = Some(parse_bool(key, line, v)?),
            "train.seed" => self.train_seed = Some(parse_u64(key, line, v)?),
            "train.ref" => self.ref_file = Some(PathBuf::from(v)),
            "mimic.temperature" => self.temperature = Some(parse_f64(key, line, v)?),
            "mimic.weighting" => {
                self.weighting = Some(match v {
                    "mimic" => Weighting::Mimic,
                    "grand" => Weighting::Grand,
                    "uniform" => Weighting::Uniform,
                    _ => return Err(bad_value(key, line, "mimic, grand, or uniform", v)),
                })
            }
            "filter.binarizer" => {
                if !["threshold", "kmeans", "gmm", "topk"].contains(&v) {
                    return Err(bad_value(key, line, "threshold, kmeans, gmm, or topk", v));
                }
                self.binarizer = Some(v.to_string());
            }
            "filter.top_k_percent" => self.top_k_percent = Some(parse_f64(key, line, v)?),
            "filter.scores" => self.scores_file = Some(PathBuf::from(v)),
            "filter.decision" => self.decision_file = Some(PathBuf::from(v)),
            "experiment.kind" => self.experiment_kind = Some(v.parse()?),
            "experiment.noise_levels" => self.noise_levels = Some(parse_f64_list(key, line, v)?),
            "experiment.subset_fraction" => {
                self.subset_fraction = Some(parse_f64(key, line, v)?)
            }
            "experiment.temperatures" => self.temperatures = Some(parse_f64_list(key, line, v)?),
            "experiment.target_accuracy" => {
                self.target_accuracy = Some(parse_f64(key, line, v)?)
            }
            "experiment.reference_epochs" => {
                self.reference_epochs = Some(parse_usize(key, line, v)?)
            }
            "experiment.seed" => self.experiment_seed = Some(parse_u64(key, line, v)?),
            _ => unreachable!("key was checked against CONFIG_KEYS"),
        }
        Ok(())
    }

    fn require<T: Copy>(value: Option<T>, key: &str) -> Result<T> {
        value.ok_or_else(|| Error::Config(format!("missing required config key {key}")))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Training seed: the CLI flag wins, then `train.seed`; having neither
    /// is an error so no run ever picks up hidden entropy.
    pub fn seed_for_train(&self, cli: Option<u64>) -> Result<RngSeed> {
        cli.or(self.train_seed).map(RngSeed).ok_or_else(|| {
            Error::Config("no seed given: pass --seed or set train.seed".into())
        })
    }

    /// Experiment master seed: the CLI flag wins, then `experiment.seed`.
    pub fn seed_for_experiment(&self, cli: Option<u64>) -> Result<RngSeed> {
        cli.or(self.experiment_seed).map(RngSeed).ok_or_else(|| {
            Error::Config("no seed given: pass --seed or set experiment.seed".into())
        })
    }

    /// Blob shape from `[dataset]`; generation sizes are required, spreads
    /// have defaults.
    pub fn blob_spec(&self) -> Result<BlobSpec> {
        Ok(BlobSpec {
            num_classes: Self::require(self.num_classes, "dataset.num_classes")?,
            per_class: Self::require(self.per_class, "dataset.per_class")?,
            dim: Self::require(self.dim, "dataset.dim")?,
            separation: self.separation.unwrap_or(3.0),
            cluster_std: self.cluster_std.unwrap_or(1.0),
        })
    }

    pub fn eval_per_class(&self) -> usize {
        self.eval_per_class.unwrap_or(0)
    }

    pub fn noise_rho(&self) -> f64 {
        self.noise_rho.unwrap_or(0.0)
    }

    /// Model shape for a dataset of the given dimensions. Input and output
    /// sizes always come from the data, so the config cannot contradict it.
    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> Result<ModelSpec> {
        let kind = self.model_kind.unwrap_or(ModelKind::LinearSoftmax);
        let spec = ModelSpec {
            kind,
            input_dim,
            num_classes,
            hidden_dim: self.hidden_dim,
            init_scale: self.init_scale.unwrap_or(0.1),
        };
        if kind == ModelKind::MlpOneHidden && self.hidden_dim.is_none() {
            return Err(Error::Config(
                "model.kind = mlp_one_hidden requires model.hidden_dim".into(),
            ));
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Training configuration; the step-size trio is required, the rest
    /// defaults as documented in [`CONFIG_KEYS`].
    pub fn train_config(&self, seed: RngSeed) -> Result<TrainConfig> {
        Ok(TrainConfig {
            learning_rate: Self::require(self.learning_rate, "train.learning_rate")?,
            batch_size: Self::require(self.batch_size, "train.batch_size")?,
            epochs: Self::require(self.epochs, "train.epochs")?,
            shuffle: self.shuffle.unwrap_or(true),
            seed,
            mimic: MimicConfig {
                temperature: self.temperature.unwrap_or(1.0),
                weighting: self.weighting.unwrap_or(Weighting::Uniform),
            },
        })
    }

    /// Binarizer from `[filter]`; `topk` insists on its percentage.
    pub fn binarize_method(&self) -> Result<BinarizeMethod> {
        match self.binarizer.as_deref().unwrap_or("gmm") {
            "threshold" => Ok(BinarizeMethod::Threshold),
            "kmeans" => Ok(BinarizeMethod::KMeans),
            "gmm" => Ok(BinarizeMethod::Gmm),
            "topk" => {
                let k_percent = self.top_k_percent.ok_or_else(|| {
                    Error::Config(
                        "filter.binarizer = topk requires filter.top_k_percent".into(),
                    )
                })?;
                Ok(BinarizeMethod::TopK { k_percent })
            }
            other => unreachable!("binarizer {other:?} was validated at parse time"),
        }
    }

    /// Assembles the full experiment description. The inner training seed is
    /// pinned to zero because experiments derive all their seeds from the
    /// master seed; leaving `train.seed` in the hash would split identical
    /// runs into different artifact names.
    pub fn experiment_config(&self, seed: RngSeed) -> Result<ExperimentConfig> {
        let kind = Self::require(self.experiment_kind, "experiment.kind")?;
        let dataset = self.blob_spec()?;
        let needs_eval = !matches!(kind, ExperimentKind::Membership);
        if needs_eval && self.eval_per_class() == 0 {
            return Err(Error::Config(format!(
                "experiment.kind = {} requires dataset.eval_per_class >= 1",
                kind.name()
            )));
        }
        Ok(ExperimentConfig {
            kind,
            model: self.model_spec(dataset.dim, dataset.num_classes)?,
            dataset,
            eval_per_class: self.eval_per_class(),
            noise_rho: self.noise_rho(),
            noise_levels: self.noise_levels.clone().unwrap_or_default(),
            subset_fraction: self.subset_fraction.unwrap_or(0.0),
            temperatures: self.temperatures.clone().unwrap_or_default(),
            target_accuracy: self.target_accuracy,
            reference_epochs: self
                .reference_epochs
                .or(self.epochs)
                .ok_or_else(|| Error::Config("missing required config key train.epochs".into()))?,
            train: self.train_config(RngSeed(0))?,
            binarizer: self.binarize_method()?,
            seed,
        })
    }

    /// `dataset.file`, resolved; the CLI's `--data` wins when given.
    pub fn dataset_file(&self, cli: Option<&Path>) -> Option<PathBuf> {
        cli.map(Path::to_path_buf)
            .or_else(|| self.dataset_file.as_deref().map(|p| self.resolve(p)))
    }

    /// `dataset.eval_file`, resolved; the CLI's `--eval` wins when given.
    pub fn eval_file(&self, cli: Option<&Path>) -> Option<PathBuf> {
        cli.map(Path::to_path_buf)
            .or_else(|| self.eval_file.as_deref().map(|p| self.resolve(p)))
    }

    /// `train.ref`, resolved; the CLI's `--ref` wins when given.
    pub fn ref_file(&self, cli: Option<&Path>) -> Option<PathBuf> {
        cli.map(Path::to_path_buf)
            .or_else(|| self.ref_file.as_deref().map(|p| self.resolve(p)))
    }

    /// `filter.scores`, resolved; the CLI's `--scores` wins when given.
    pub fn scores_file(&self, cli: Option<&Path>) -> Option<PathBuf> {
        cli.map(Path::to_path_buf)
            .or_else(|| self.scores_file.as_deref().map(|p| self.resolve(p)))
    }

    /// `filter.decision`, resolved; the CLI's `--decision` wins when given.
    pub fn decision_file(&self, cli: Option<&Path>) -> Option<PathBuf> {
        cli.map(Path::to_path_buf)
            .or_else(|| self.decision_file.as_deref().map(|p| self.resolve(p)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, PathBuf::from("/etc/runs"))
    }

    const FULL: &str = "\
# demo configuration
[dataset]
num_classes = 5
per_class = 400
dim = 10
separation = 2.5
cluster_std = 1.5
eval_per_class = 100
noise_rho = 0.5
file = pool.csv

[model]
kind = mlp_one_hidden
hidden_dim = 16
init_scale = 0.2

[train]
learning_rate = 0.05
batch_size = 32
epochs = 20
shuffle = false
seed = 99

[mimic]
temperature = 0.5
weighting = mimic

[filter]
binarizer = topk
top_k_percent = 35.0

[experiment]
kind = denoise
noise_levels = 0.1, 0.2,0.3 , 0.4
subset_fraction = 0.3
temperatures = 0.5, 1e6
reference_epochs = 30
seed = 7
";

    #[test]
    fn full_file_parses_into_typed_configs() {
        let cfg = parse(FULL).unwrap();
        let blobs = cfg.blob_spec().unwrap();
        assert_eq!(
            (blobs.num_classes, blobs.per_class, blobs.dim),
            (5, 400, 10)
        );
        assert_eq!((blobs.separation, blobs.cluster_std), (2.5, 1.5));
        assert_eq!(cfg.eval_per_class(), 100);
        assert_eq!(cfg.noise_rho(), 0.5);

        let model = cfg.model_spec(10, 5).unwrap();
        assert_eq!(model.kind, ModelKind::MlpOneHidden);
        assert_eq!(model.hidden_dim, Some(16));

        let train = cfg.train_config(RngSeed(1)).unwrap();
        assert_eq!(
            (train.learning_rate, train.batch_size, train.epochs),
            (0.05, 32, 20)
        );
        assert!(!train.shuffle);
        assert_eq!(train.mimic.weighting, Weighting::Mimic);
        assert_eq!(train.mimic.temperature, 0.5);

        assert_eq!(
            cfg.binarize_method().unwrap(),
            BinarizeMethod::TopK { k_percent: 35.0 }
        );

        let exp = cfg.experiment_config(RngSeed(7)).unwrap();
        assert_eq!(exp.kind, ExperimentKind::Denoise);
        assert_eq!(exp.noise_levels, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(exp.reference_epochs, 30);
        assert_eq!(exp.train.seed, RngSeed(0), "experiments pin the inner seed");
    }

    #[test]
    fn defaults_fill_optional_keys() {
        let cfg = parse(
            "[train]\nlearning_rate = 0.1\nbatch_size = 8\nepochs = 3\n",
        )
        .unwrap();
        let train = cfg.train_config(RngSeed(1)).unwrap();
        assert!(train.shuffle);
        assert_eq!(train.mimic.weighting, Weighting::Uniform);
        assert_eq!(train.mimic.temperature, 1.0);
        assert_eq!(cfg.binarize_method().unwrap(), BinarizeMethod::Gmm);
        assert_eq!(cfg.model_spec(4, 3).unwrap().kind, ModelKind::LinearSoftmax);
        assert_eq!(cfg.eval_per_class(), 0);
        assert_eq!(cfg.noise_rho(), 0.0);
    }

    #[test]
    fn unknown_key_and_section_are_rejected_by_name() {
        let err = parse("[dataset]\nnum_classs = 5\n").unwrap_err();
        assert!(
            err.to_string().contains("dataset.num_classs") && err.to_string().contains("line 2"),
            "got: {err}"
        );
        let err = parse("[datasets]\n").unwrap_err();
        assert!(err.to_string().contains("[datasets]"), "got: {err}");
        // A key that exists, but in a different section.
        let err = parse("[train]\ntemperature = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("train.temperature"), "got: {err}");
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = parse("[dataset]\ndim = 3\ndim = 4\n").unwrap_err();
        assert!(
            err.to_string().contains("duplicate") && err.to_string().contains("dataset.dim"),
            "got: {err}"
        );
    }

    #[test]
    fn malformed_lines_report_their_line_number() {
        let err = parse("[dataset]\ndim\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "got: {err}");
        let err = parse("dim = 3\n").unwrap_err();
        assert!(
            matches!(&err, Error::Parse { line: 1, message } if message.contains("before any")),
            "got: {err}"
        );
        let err = parse("[dataset\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "got: {err}");
    }

    #[test]
    fn bad_values_name_key_and_line() {
        for (text, key) in [
            ("[dataset]\ndim = many\n", "dataset.dim"),
            ("[train]\nshuffle = yes\n", "train.shuffle"),
            ("[mimic]\nweighting = softmax\n", "mimic.weighting"),
            ("[model]\nkind = transformer\n", "model.kind"),
            ("[filter]\nbinarizer = median\n", "filter.binarizer"),
            ("[experiment]\nnoise_levels = 0.1, x\n", "experiment.noise_levels"),
        ] {
            let err = parse(text).unwrap_err();
            assert!(
                err.to_string().contains(key) && err.to_string().contains("line 2"),
                "{key}: got {err}"
            );
        }
    }

    #[test]
    fn missing_required_keys_are_named() {
        let cfg = parse("[train]\nbatch_size = 8\nepochs = 3\n").unwrap();
        let err = cfg.train_config(RngSeed(1)).unwrap_err();
        assert!(err.to_string().contains("train.learning_rate"), "got: {err}");
        let err = cfg.blob_spec().unwrap_err();
        assert!(err.to_string().contains("dataset.num_classes"), "got: {err}");
    }

    #[test]
    fn seed_resolution_prefers_cli_then_file() {
        let cfg = parse("[train]\nseed = 5\n[experiment]\nseed = 6\n").unwrap();
        assert_eq!(cfg.seed_for_train(Some(9)).unwrap(), RngSeed(9));
        assert_eq!(cfg.seed_for_train(None).unwrap(), RngSeed(5));
        assert_eq!(cfg.seed_for_experiment(None).unwrap(), RngSeed(6));

        let bare = parse("").unwrap();
        assert_eq!(bare.seed_for_train(Some(3)).unwrap(), RngSeed(3));
        let err = bare.seed_for_train(None).unwrap_err();
        assert!(err.to_string().contains("--seed"), "got: {err}");
        assert!(bare.seed_for_experiment(None).is_err());
    }

    #[test]
    fn paths_resolve_relative_to_the_config_file() {
        let cfg = parse(
            "[dataset]\nfile = pool.csv\n[train]\nref = ../ref.json\n[filter]\nscores = /tmp/s.csv\n",
        )
        .unwrap();
        assert_eq!(
            cfg.dataset_file(None).unwrap(),
            PathBuf::from("/etc/runs/pool.csv")
        );
        assert_eq!(
            cfg.ref_file(None).unwrap(),
            PathBuf::from("/etc/runs/../ref.json")
        );
        // Absolute values stay put; CLI flags win outright.
        assert_eq!(cfg.scores_file(None).unwrap(), PathBuf::from("/tmp/s.csv"));
        assert_eq!(
            cfg.dataset_file(Some(Path::new("cli.csv"))).unwrap(),
            PathBuf::from("cli.csv")
        );
        assert_eq!(cfg.decision_file(None), None);
    }

    #[test]
    fn topk_binarizer_requires_its_percentage() {
        let cfg = parse("[filter]\nbinarizer = topk\n").unwrap();
        let err = cfg.binarize_method().unwrap_err();
        assert!(err.to_string().contains("filter.top_k_percent"), "got: {err}");
    }

    #[test]
    fn mlp_requires_hidden_dim() {
        let cfg = parse("[model]\nkind = mlp_one_hidden\n").unwrap();
        let err = cfg.model_spec(4, 3).unwrap_err();
        assert!(err.to_string().contains("model.hidden_dim"), "got: {err}");
    }

    #[test]
    fn experiments_validate_their_prerequisites() {
        let base = "\
[dataset]
num_classes = 3
per_class = 10
dim = 4
[train]
learning_rate = 0.1
batch_size = 8
epochs = 3
";
        let cfg = parse(&format!("{base}[experiment]\nkind = denoise\n")).unwrap();
        let err = cfg.experiment_config(RngSeed(1)).unwrap_err();
        assert!(
            err.to_string().contains("dataset.eval_per_class"),
            "got: {err}"
        );

        // Membership never evaluates, so it passes without an eval set, and
        // reference_epochs falls back to train.epochs.
        let cfg = parse(&format!("{base}[experiment]\nkind = membership\nsubset_fraction = 0.3\n"))
            .unwrap();
        let exp = cfg.experiment_config(RngSeed(1)).unwrap();
        assert_eq!(exp.reference_epochs, 3);

        let cfg = parse(base).unwrap();
        let err = cfg.experiment_config(RngSeed(1)).unwrap_err();
        assert!(err.to_string().contains("experiment.kind"), "got: {err}");
    }

    #[test]
    fn help_lists_every_key() {
        let help = config_keys_help();
        for (key, _) in CONFIG_KEYS {
            let name = key.split('.').nth(1).unwrap();
            assert!(help.contains(name), "help is missing {key}");
        }
        for section in SECTIONS {
            assert!(help.contains(&format!("[{section}]")), "missing [{section}]");
        }
    }

    #[test]
    fn loads_from_disk_and_resolves_against_parent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "[dataset]\nfile = pool.csv\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(
            cfg.dataset_file(None).unwrap(),
            dir.path().join("pool.csv")
        );
        assert!(RunConfig::load(&dir.path().join("missing.cfg")).is_err());
    }
}
