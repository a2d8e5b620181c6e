//! Canned end-to-end experiments with reproducible CSV/JSON reports.
//!
//! Five experiments cover the pipeline's phenomenology at desk scale:
//! `denoise` (inject label noise, reweight, filter, score detection),
//! `noise_sweep` (retention rate vs. injected noise level), `membership`
//! (do mimic scores reveal which samples trained the reference?),
//! `temp_ablation` (accuracy across temperatures vs. the uniform baseline),
//! and `convergence` (epochs to reach a target accuracy).
//!
//! Every run is deterministic: all randomness flows from the config's master
//! seed through labeled child seeds (recorded in the report), and artifacts
//! are written with fixed formatting and no timestamps, so re-running a
//! config reproduces every output byte for byte. Artifact names follow
//! `{experiment}_{confighash}.{json|csv}`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use serde::Serialize;

use crate::datasets::{gen_gaussian_blobs, inject_label_noise, LabeledDataset, Sample};
use crate::filterkit::{aggregate_em, binarize_matrix, detection_f1, quality_stats, BinarizeMethod};
use crate::mimic::{MimicConfig, ReferenceTarget, Weighting};
use crate::models::{ModelSpec, ParamMask};
use crate::num::{jaccard_overlap, pearson, Vector};
use crate::rng::{fnv1a_hex, stream, RngSeed};
use crate::trainer::{train, train_reference, TrainConfig, TrainReport};
use crate::{fmt_f64, par, Error, Result};

/// Which canned experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Denoise,
    NoiseSweep,
    Membership,
    TempAblation,
    Convergence,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Denoise => "denoise",
            ExperimentKind::NoiseSweep => "noise_sweep",
            ExperimentKind::Membership => "membership",
            ExperimentKind::TempAblation => "temp_ablation",
            ExperimentKind::Convergence => "convergence",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "denoise" => Ok(ExperimentKind::Denoise),
            "noise_sweep" => Ok(ExperimentKind::NoiseSweep),
            "membership" => Ok(ExperimentKind::Membership),
            "temp_ablation" => Ok(ExperimentKind::TempAblation),
            "convergence" => Ok(ExperimentKind::Convergence),
            other => Err(Error::Config(format!(
                "unknown experiment {other:?}; expected denoise, noise_sweep, \
                 membership, temp_ablation, or convergence"
            ))),
        }
    }
}

/// Shape of the synthetic Gaussian-blob training pool.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub cluster_std: f64,
}

impl BlobSpec {
    /// Generates the training pool this spec describes.
    pub fn generate(&self, seed: RngSeed) -> Result<LabeledDataset> {
        gen_gaussian_blobs(
            self.num_classes,
            self.per_class,
            self.dim,
            self.separation,
            self.cluster_std,
            seed,
        )
    }

    /// Same blob geometry with a different per-class count (evaluation sets).
    pub fn generate_sized(&self, per_class: usize, seed: RngSeed) -> Result<LabeledDataset> {
        gen_gaussian_blobs(
            self.num_classes,
            per_class,
            self.dim,
            self.separation,
            self.cluster_std,
            seed,
        )
    }
}

/// Full description of one experiment run.
///
/// The master `seed` drives everything; the `seed` inside `train` is ignored
/// and replaced by a labeled child of the master so that the report's seed
/// inventory is complete.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dataset: BlobSpec,
    /// Held-out evaluation set size, per class.
    pub eval_per_class: usize,
    /// Label-noise fraction for denoise/temp_ablation/convergence.
    pub noise_rho: f64,
    /// Noise levels for noise_sweep (at least 4).
    pub noise_levels: Vec<f64>,
    /// Reference-subset fraction for membership.
    pub subset_fraction: f64,
    /// Temperatures for temp_ablation (at least 2).
    pub temperatures: Vec<f64>,
    /// Convergence target; `None` means "uniform's final accuracy".
    pub target_accuracy: Option<f64>,
    /// Epochs for reference training (membership wants many, to overfit).
    pub reference_epochs: usize,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub binarizer: BinarizeMethod,
    pub seed: RngSeed,
}

impl ExperimentConfig {
    /// Hash of the canonical serialized config; names the artifact files.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        fnv1a_hex(canonical.as_bytes())
    }

    fn child(&self, label: &str) -> RngSeed {
        self.seed.child(label)
    }

    /// Training config with the seed replaced by a labeled child and the
    /// weighting/temperature overridden.
    fn train_with(&self, weighting: Weighting, temperature: f64, seed: RngSeed) -> TrainConfig {
        TrainConfig {
            seed,
            mimic: MimicConfig {
                temperature,
                weighting,
            },
            ..self.train.clone()
        }
    }
}

/// Metrics, artifact list, and seed inventory of a finished experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config_hash: String,
    pub master_seed: u64,
    /// Labeled child seeds actually used by the run.
    pub seeds: BTreeMap<String, u64>,
    pub metrics: BTreeMap<String, f64>,
    /// File names (relative to the output directory) this run wrote.
    pub artifacts: Vec<String>,
}

impl ExperimentReport {
    fn new(cfg: &ExperimentConfig) -> Self {
        ExperimentReport {
            experiment: cfg.kind.name().to_string(),
            config_hash: cfg.config_hash(),
            master_seed: cfg.seed.0,
            seeds: BTreeMap::new(),
            metrics: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    fn record_seed(&mut self, label: &str, seed: RngSeed) {
        self.seeds.insert(label.to_string(), seed.0);
    }

    fn json_path(&self, out_dir: &Path) -> PathBuf {
        out_dir.join(format!("{}_{}.json", self.experiment, self.config_hash))
    }

    fn csv_path(&self, out_dir: &Path) -> PathBuf {
        out_dir.join(format!("{}_{}.csv", self.experiment, self.config_hash))
    }

    fn save(&mut self, out_dir: &Path) -> Result<()> {
        let path = self.json_path(out_dir);
        self.artifacts
            .push(path.file_name().unwrap().to_string_lossy().into_owned());
        self.artifacts.sort();
        self.artifacts.dedup();
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        std::fs::write(&path, body)?;
        Ok(())
    }
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

/// Everything the denoise pipeline produces for one noise level.
struct DenoiseOutcome {
    f1: f64,
    retention_rate: f64,
    avg_mimic_score: f64,
    accuracy_mimic: f64,
    /// `(flipped mean, clean mean)` per epoch.
    group_means: Vec<(f64, f64)>,
    mimic_report: TrainReport,
}

/// Trains the reference on clean data, mimic-trains on noisy data, filters,
/// and scores detection. Baseline trainings are the caller's business.
fn denoise_core(
    cfg: &ExperimentConfig,
    rho: f64,
    clean: &LabeledDataset,
    eval: &LabeledDataset,
    reference: &ReferenceTarget,
    noise_seed: RngSeed,
    train_seed: RngSeed,
) -> Result<DenoiseOutcome> {
    let noisy = inject_label_noise(clean, rho, noise_seed)?;
    let mimic_cfg = cfg.train_with(Weighting::Mimic, cfg.train.mimic.temperature, train_seed);
    let mimic_report = train(&noisy, &cfg.model, &mimic_cfg, Some(reference), Some(eval))?;
    let matrix = mimic_report
        .score_matrix
        .as_ref()
        .expect("training always logs scores");
    let votes = binarize_matrix(matrix, cfg.binarizer)?;
    let decision = aggregate_em(&votes)?;
    let stats = quality_stats(&decision, matrix)?;
    let f1 = detection_f1(&decision, &noisy)?;
    let group_means = matrix.epoch_group_means(&noisy.flipped_set());
    let accuracy_mimic = final_accuracy(&mimic_report)?;
    Ok(DenoiseOutcome {
        f1,
        retention_rate: stats.retention_rate,
        avg_mimic_score: stats.avg_mimic_score,
        accuracy_mimic,
        group_means,
        mimic_report,
    })
}

fn final_accuracy(report: &TrainReport) -> Result<f64> {
    report
        .per_epoch
        .last()
        .and_then(|s| s.eval_accuracy)
        .ok_or_else(|| Error::InvalidArgument("run recorded no evaluation accuracy".into()))
}

fn reference_for(
    cfg: &ExperimentConfig,
    clean: &LabeledDataset,
    seed: RngSeed,
) -> Result<ReferenceTarget> {
    let ref_cfg = TrainConfig {
        epochs: cfg.reference_epochs,
        ..cfg.train_with(Weighting::Uniform, cfg.train.mimic.temperature, seed)
    };
    let params = train_reference(clean, &cfg.model, &ref_cfg)?;
    ReferenceTarget::new(params, ParamMask::all(&cfg.model))
}

/// Label-noise detection: reference on clean labels, mimic training on noisy
/// labels, binarize + aggregate, then score the discard set against the
/// ground-truth flips. Also trains uniform and gradient-norm baselines for
/// the accuracy comparison.
pub fn run_denoise(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    if !(cfg.noise_rho > 0.0 && cfg.noise_rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "noise_rho must lie in (0, 1), got {}",
            cfg.noise_rho
        )));
    }
    let mut report = ExperimentReport::new(cfg);
    let (data_seed, eval_seed) = (cfg.child("data"), cfg.child("eval"));
    let (noise_seed, ref_seed, train_seed) =
        (cfg.child("noise"), cfg.child("reference"), cfg.child("train"));
    for (label, seed) in [
        ("data", data_seed),
        ("eval", eval_seed),
        ("noise", noise_seed),
        ("reference", ref_seed),
        ("train", train_seed),
    ] {
        report.record_seed(label, seed);
    }

    let clean = cfg.dataset.generate(data_seed)?;
    let eval = cfg.dataset.generate_sized(cfg.eval_per_class, eval_seed)?;
    let reference = reference_for(cfg, &clean, ref_seed)?;
    let outcome = denoise_core(
        cfg,
        cfg.noise_rho,
        &clean,
        &eval,
        &reference,
        noise_seed,
        train_seed,
    )?;

    // Baselines share the training seed, so initialization and batch order
    // are identical and only the weighting differs.
    let noisy = inject_label_noise(&clean, cfg.noise_rho, noise_seed)?;
    let uniform_cfg = cfg.train_with(Weighting::Uniform, cfg.train.mimic.temperature, train_seed);
    let uniform_report = train(&noisy, &cfg.model, &uniform_cfg, None, Some(&eval))?;
    let grand_cfg = cfg.train_with(Weighting::Grand, cfg.train.mimic.temperature, train_seed);
    let grand_report = train(&noisy, &cfg.model, &grand_cfg, None, Some(&eval))?;

    let min_gap = outcome
        .group_means
        .iter()
        .skip(1)
        .map(|&(flipped, clean)| clean - flipped)
        .fold(f64::INFINITY, f64::min);
    report.metrics.insert("detection_f1".into(), outcome.f1);
    report
        .metrics
        .insert("retention_rate".into(), outcome.retention_rate);
    report
        .metrics
        .insert("avg_mimic_score".into(), outcome.avg_mimic_score);
    report
        .metrics
        .insert("accuracy_mimic".into(), outcome.accuracy_mimic);
    report
        .metrics
        .insert("accuracy_uniform".into(), final_accuracy(&uniform_report)?);
    report
        .metrics
        .insert("accuracy_grand".into(), final_accuracy(&grand_report)?);
    report
        .metrics
        .insert("score_gap_min_after_epoch1".into(), min_gap);

    let csv = report.csv_path(out_dir);
    let rows: Vec<String> = outcome
        .group_means
        .iter()
        .enumerate()
        .map(|(e, &(flipped, clean))| {
            let acc = |r: &TrainReport| {
                r.per_epoch[e]
                    .eval_accuracy
                    .map(|a| fmt_f64(a))
                    .unwrap_or_default()
            };
            format!(
                "{e},{},{},{},{},{}",
                fmt_f64(clean),
                fmt_f64(flipped),
                acc(&outcome.mimic_report),
                acc(&uniform_report),
                acc(&grand_report)
            )
        })
        .collect();
    write_csv(
        &csv,
        "epoch,clean_mean,flipped_mean,acc_mimic,acc_uniform,acc_grand",
        &rows,
    )?;
    report
        .artifacts
        .push(csv.file_name().unwrap().to_string_lossy().into_owned());
    report.save(out_dir)?;
    Ok(report)
}

/// Retention rate against injected noise level: one filtered mimic run per
/// level, then the Pearson correlation of (level, retention).
pub fn run_noise_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    if cfg.noise_levels.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "noise sweep needs at least 4 levels, got {} (correlation over fewer is meaningless)",
            cfg.noise_levels.len()
        )));
    }
    if cfg
        .noise_levels
        .iter()
        .any(|&r| !(r > 0.0 && r < 1.0))
    {
        return Err(Error::InvalidArgument(
            "every noise level must lie in (0, 1)".into(),
        ));
    }
    let mut report = ExperimentReport::new(cfg);
    let (data_seed, eval_seed, ref_seed) =
        (cfg.child("data"), cfg.child("eval"), cfg.child("reference"));
    report.record_seed("data", data_seed);
    report.record_seed("eval", eval_seed);
    report.record_seed("reference", ref_seed);

    let clean = cfg.dataset.generate(data_seed)?;
    let eval = cfg.dataset.generate_sized(cfg.eval_per_class, eval_seed)?;
    let reference = reference_for(cfg, &clean, ref_seed)?;

    let level_seeds: Vec<(RngSeed, RngSeed)> = (0..cfg.noise_levels.len())
        .map(|i| (cfg.child(&format!("noise-{i}")), cfg.child(&format!("train-{i}"))))
        .collect();
    for (i, (noise_seed, train_seed)) in level_seeds.iter().enumerate() {
        report.record_seed(&format!("noise-{i}"), *noise_seed);
        report.record_seed(&format!("train-{i}"), *train_seed);
    }
    let outcomes = par::map(
        &cfg.noise_levels
            .iter()
            .copied()
            .zip(level_seeds)
            .collect::<Vec<_>>(),
        |&(rho, (noise_seed, train_seed))| {
            denoise_core(cfg, rho, &clean, &eval, &reference, noise_seed, train_seed)
        },
    )
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let levels = Vector::new(cfg.noise_levels.clone())?;
    let retentions = Vector::new(outcomes.iter().map(|o| o.retention_rate).collect())?;
    let correlation = pearson(&levels, &retentions)?;
    report
        .metrics
        .insert("pearson_rho_retention".into(), correlation);

    let csv = report.csv_path(out_dir);
    let rows: Vec<String> = cfg
        .noise_levels
        .iter()
        .zip(&outcomes)
        .map(|(&rho, o)| {
            format!(
                "{},{},{},{}",
                fmt_f64(rho),
                fmt_f64(o.retention_rate),
                fmt_f64(o.f1),
                fmt_f64(o.avg_mimic_score)
            )
        })
        .collect();
    write_csv(&csv, "rho,retention_rate,detection_f1,avg_mimic_score", &rows)?;
    report
        .artifacts
        .push(csv.file_name().unwrap().to_string_lossy().into_owned());
    report.save(out_dir)?;
    Ok(report)
}

/// Rebuilds a dataset from a subset of sample indices, re-numbering ids.
fn subset_dataset(ds: &LabeledDataset, keep: &[usize]) -> LabeledDataset {
    let samples: Vec<Sample> = keep
        .iter()
        .enumerate()
        .map(|(new_id, &old)| Sample {
            id: new_id,
            features: ds.samples[old].features.clone(),
            label: ds.samples[old].label,
        })
        .collect();
    LabeledDataset {
        samples,
        num_classes: ds.num_classes,
        flip_flags: ds
            .flip_flags
            .as_ref()
            .map(|f| keep.iter().map(|&old| f[old]).collect()),
        clean_labels: ds
            .clean_labels
            .as_ref()
            .map(|c| keep.iter().map(|&old| c[old]).collect()),
    }
}

/// Membership probe: train the reference on a hidden subset, mimic-score the
/// full pool, rank by mean score, and compare the top slice's overlap with
/// the hidden subset against random selection.
pub fn run_membership(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    if !(cfg.subset_fraction > 0.0 && cfg.subset_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subset_fraction must lie in (0, 1), got {}",
            cfg.subset_fraction
        )));
    }
    let mut report = ExperimentReport::new(cfg);
    let (data_seed, subset_seed) = (cfg.child("data"), cfg.child("subset"));
    let (ref_seed, train_seed, baseline_seed) = (
        cfg.child("reference"),
        cfg.child("train"),
        cfg.child("random-baseline"),
    );
    for (label, seed) in [
        ("data", data_seed),
        ("subset", subset_seed),
        ("reference", ref_seed),
        ("train", train_seed),
        ("random-baseline", baseline_seed),
    ] {
        report.record_seed(label, seed);
    }

    let pool = cfg.dataset.generate(data_seed)?;
    let n = pool.len();
    let subset_size = (cfg.subset_fraction * n as f64).floor() as usize;
    if subset_size == 0 || subset_size >= n {
        return Err(Error::InvalidArgument(format!(
            "subset_fraction {} selects {subset_size} of {n} samples",
            cfg.subset_fraction
        )));
    }
    let mut rng = stream(subset_seed, "harness", "membership-subset");
    let mut chosen = index::sample(&mut rng, n, subset_size).into_vec();
    chosen.sort_unstable();
    let hidden: BTreeSet<usize> = chosen.iter().copied().collect();
    let reference_pool = subset_dataset(&pool, &chosen);
    let reference = reference_for(cfg, &reference_pool, ref_seed)?;

    let mimic_cfg = cfg.train_with(Weighting::Mimic, cfg.train.mimic.temperature, train_seed);
    let mimic_report = train(&pool, &cfg.model, &mimic_cfg, Some(&reference), None)?;
    let matrix = mimic_report
        .score_matrix
        .as_ref()
        .expect("training always logs scores");
    let mean_scores: Vec<f64> = (0..n).map(|i| matrix.sample_mean(i)).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mean_scores[b].total_cmp(&mean_scores[a]).then(a.cmp(&b)));
    let selected: BTreeSet<usize> = order[..subset_size].iter().copied().collect();
    let (jaccard, overlap_mimic) = jaccard_overlap(&selected, &hidden);

    // Random baseline: the mean overlap fraction of 100 size-matched draws.
    let mut baseline_rng = stream(baseline_seed, "harness", "membership-random");
    let draws = 100;
    let mut total = 0.0;
    for _ in 0..draws {
        let pick: BTreeSet<usize> = index::sample(&mut baseline_rng, n, subset_size)
            .into_iter()
            .collect();
        total += jaccard_overlap(&pick, &hidden).1;
    }
    let overlap_random = total / draws as f64;

    report.metrics.insert("overlap_mimic".into(), overlap_mimic);
    report
        .metrics
        .insert("overlap_random".into(), overlap_random);
    report
        .metrics
        .insert("overlap_ratio".into(), overlap_mimic / overlap_random);
    report.metrics.insert("jaccard_mimic".into(), jaccard);
    report
        .metrics
        .insert("subset_size".into(), subset_size as f64);

    let csv = report.csv_path(out_dir);
    let rows: Vec<String> = (0..n)
        .map(|i| {
            format!(
                "{i},{},{},{}",
                fmt_f64(mean_scores[i]),
                u8::from(selected.contains(&i)),
                u8::from(hidden.contains(&i))
            )
        })
        .collect();
    write_csv(&csv, "sample_id,mean_score,selected,in_reference", &rows)?;
    report
        .artifacts
        .push(csv.file_name().unwrap().to_string_lossy().into_owned());
    report.save(out_dir)?;
    Ok(report)
}

/// Accuracy across temperatures on noisy data, next to the uniform baseline.
pub fn run_temp_ablation(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    if cfg.temperatures.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "temperature ablation needs at least 2 temperatures, got {}",
            cfg.temperatures.len()
        )));
    }
    if !(cfg.noise_rho > 0.0 && cfg.noise_rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "noise_rho must lie in (0, 1), got {}",
            cfg.noise_rho
        )));
    }
    let mut report = ExperimentReport::new(cfg);
    let (data_seed, eval_seed) = (cfg.child("data"), cfg.child("eval"));
    let (noise_seed, ref_seed, train_seed) =
        (cfg.child("noise"), cfg.child("reference"), cfg.child("train"));
    for (label, seed) in [
        ("data", data_seed),
        ("eval", eval_seed),
        ("noise", noise_seed),
        ("reference", ref_seed),
        ("train", train_seed),
    ] {
        report.record_seed(label, seed);
    }

    let clean = cfg.dataset.generate(data_seed)?;
    let eval = cfg.dataset.generate_sized(cfg.eval_per_class, eval_seed)?;
    let noisy = inject_label_noise(&clean, cfg.noise_rho, noise_seed)?;
    let reference = reference_for(cfg, &clean, ref_seed)?;

    // All runs share one training seed: identical initialization and batch
    // order isolate the effect of the weighting.
    let uniform_cfg = cfg.train_with(Weighting::Uniform, cfg.train.mimic.temperature, train_seed);
    let uniform_acc = final_accuracy(&train(&noisy, &cfg.model, &uniform_cfg, None, Some(&eval))?)?;
    let accuracies = par::map(&cfg.temperatures, |&tau| -> Result<f64> {
        let mimic_cfg = cfg.train_with(Weighting::Mimic, tau, train_seed);
        final_accuracy(&train(&noisy, &cfg.model, &mimic_cfg, Some(&reference), Some(&eval))?)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    report
        .metrics
        .insert("accuracy_uniform".into(), uniform_acc);
    for (i, (&tau, &acc)) in cfg.temperatures.iter().zip(&accuracies).enumerate() {
        report.metrics.insert(format!("accuracy_tau{i}"), acc);
        report.metrics.insert(format!("tau{i}"), tau);
    }

    let csv = report.csv_path(out_dir);
    let mut rows: Vec<String> = cfg
        .temperatures
        .iter()
        .zip(&accuracies)
        .map(|(&tau, &acc)| format!("mimic,{},{}", fmt_f64(tau), fmt_f64(acc)))
        .collect();
    rows.push(format!("uniform,,{}", fmt_f64(uniform_acc)));
    write_csv(&csv, "weighting,temperature,accuracy", &rows)?;
    report
        .artifacts
        .push(csv.file_name().unwrap().to_string_lossy().into_owned());
    report.save(out_dir)?;
    Ok(report)
}

/// First 1-based epoch whose accuracy reaches the target, or `None`.
fn epochs_to_target(report: &TrainReport, target: f64) -> Option<usize> {
    report
        .per_epoch
        .iter()
        .position(|s| s.eval_accuracy.is_some_and(|a| a >= target))
        .map(|idx| idx + 1)
}

/// Per-epoch accuracy curves for mimic vs. uniform on noisy data, plus the
/// epochs each needs to reach a target accuracy. An unreached target is
/// reported as the sentinel -1, not an error.
pub fn run_convergence(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    if !(cfg.noise_rho > 0.0 && cfg.noise_rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "noise_rho must lie in (0, 1), got {}",
            cfg.noise_rho
        )));
    }
    let mut report = ExperimentReport::new(cfg);
    let (data_seed, eval_seed) = (cfg.child("data"), cfg.child("eval"));
    let (noise_seed, ref_seed, train_seed) =
        (cfg.child("noise"), cfg.child("reference"), cfg.child("train"));
    for (label, seed) in [
        ("data", data_seed),
        ("eval", eval_seed),
        ("noise", noise_seed),
        ("reference", ref_seed),
        ("train", train_seed),
    ] {
        report.record_seed(label, seed);
    }

    let clean = cfg.dataset.generate(data_seed)?;
    let eval = cfg.dataset.generate_sized(cfg.eval_per_class, eval_seed)?;
    let noisy = inject_label_noise(&clean, cfg.noise_rho, noise_seed)?;
    let reference = reference_for(cfg, &clean, ref_seed)?;

    let mimic_cfg = cfg.train_with(Weighting::Mimic, cfg.train.mimic.temperature, train_seed);
    let mimic_report = train(&noisy, &cfg.model, &mimic_cfg, Some(&reference), Some(&eval))?;
    let uniform_cfg = cfg.train_with(Weighting::Uniform, cfg.train.mimic.temperature, train_seed);
    let uniform_report = train(&noisy, &cfg.model, &uniform_cfg, None, Some(&eval))?;

    let target = match cfg.target_accuracy {
        Some(t) => t,
        None => final_accuracy(&uniform_report)?,
    };
    let to_epochs = |r: &TrainReport| epochs_to_target(r, target);
    let mimic_epochs = to_epochs(&mimic_report);
    let uniform_epochs = to_epochs(&uniform_report);
    let as_metric = |e: Option<usize>| e.map(|v| v as f64).unwrap_or(-1.0);
    let ratio = match (mimic_epochs, uniform_epochs) {
        (Some(m), Some(u)) => m as f64 / u as f64,
        _ => -1.0,
    };
    report.metrics.insert("target_accuracy".into(), target);
    report
        .metrics
        .insert("epochs_to_target_mimic".into(), as_metric(mimic_epochs));
    report
        .metrics
        .insert("epochs_to_target_uniform".into(), as_metric(uniform_epochs));
    report.metrics.insert("epochs_ratio".into(), ratio);
    report
        .metrics
        .insert("accuracy_mimic".into(), final_accuracy(&mimic_report)?);
    report
        .metrics
        .insert("accuracy_uniform".into(), final_accuracy(&uniform_report)?);

    let csv = report.csv_path(out_dir);
    let rows: Vec<String> = mimic_report
        .per_epoch
        .iter()
        .zip(&uniform_report.per_epoch)
        .enumerate()
        .map(|(e, (m, u))| {
            let fmt = |acc: Option<f64>| acc.map(|a| fmt_f64(a)).unwrap_or_default();
            format!("{e},{},{}", fmt(m.eval_accuracy), fmt(u.eval_accuracy))
        })
        .collect();
    write_csv(&csv, "epoch,acc_mimic,acc_uniform", &rows)?;
    report
        .artifacts
        .push(csv.file_name().unwrap().to_string_lossy().into_owned());
    report.save(out_dir)?;
    Ok(report)
}

/// Dispatches on the config's experiment kind.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    std::fs::create_dir_all(out_dir)?;
    match cfg.kind {
        ExperimentKind::Denoise => run_denoise(cfg, out_dir),
        ExperimentKind::NoiseSweep => run_noise_sweep(cfg, out_dir),
        ExperimentKind::Membership => run_membership(cfg, out_dir),
        ExperimentKind::TempAblation => run_temp_ablation(cfg, out_dir),
        ExperimentKind::Convergence => run_convergence(cfg, out_dir),
    }
}
