//! Reweighted mini-batch training with per-epoch score logging.
//!
//! Each epoch shuffles the dataset (seeded), walks it in batches (the last
//! one may be short), weights every batch per the configured mode, applies
//! the reweighted step, and records each sample's normalized weight in an
//! `n × epochs` score matrix — one column per epoch, since every sample is
//! visited exactly once per epoch. Reference models train the same way with
//! uniform weights on clean data.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::datasets::LabeledDataset;
use crate::mimic::{batch_weights, reweighted_update, MimicConfig, ReferenceTarget, Weighting};
use crate::models::{init_params, loss, per_sample_grad, predict, ModelSpec, ParamVector};
use crate::rng::{standard_normal, stream, RngSeed};
use crate::{fmt_f64, par, Error, Result};

/// Knobs for one training run. The score mask travels with the
/// [`ReferenceTarget`] rather than here, so a config cannot contradict the
/// reference it is paired with.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub shuffle: bool,
    pub seed: RngSeed,
    pub mimic: MimicConfig,
}

impl TrainConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "train.learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::Config(format!(
                "train.batch_size must be in 1..={n}, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        self.mimic.validate()
    }
}

/// Dense `n × epochs` matrix of logged normalized weights, plus the size of
/// the batch each cell was normalized over (the final batch of an epoch may
/// be smaller than the configured size).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    epochs: usize,
    scores: Vec<f64>,
    batch_sizes: Vec<usize>,
}

impl ScoreMatrix {
    fn new_unfilled(n: usize, epochs: usize) -> Self {
        ScoreMatrix {
            n,
            epochs,
            scores: vec![f64::NAN; n * epochs],
            batch_sizes: vec![0; n * epochs],
        }
    }

    pub fn num_samples(&self) -> usize {
        self.n
    }

    pub fn num_epochs(&self) -> usize {
        self.epochs
    }

    fn idx(&self, sample: usize, epoch: usize) -> usize {
        debug_assert!(sample < self.n && epoch < self.epochs);
        sample * self.epochs + epoch
    }

    pub fn score(&self, sample: usize, epoch: usize) -> f64 {
        self.scores[self.idx(sample, epoch)]
    }

    /// Size of the batch the cell's weight was normalized over.
    pub fn batch_size(&self, sample: usize, epoch: usize) -> usize {
        self.batch_sizes[self.idx(sample, epoch)]
    }

    /// One epoch's scores and batch sizes in sample order.
    pub fn column(&self, epoch: usize) -> (Vec<f64>, Vec<usize>) {
        let scores = (0..self.n).map(|i| self.score(i, epoch)).collect();
        let sizes = (0..self.n).map(|i| self.batch_size(i, epoch)).collect();
        (scores, sizes)
    }

    /// Mean logged score of one sample across epochs.
    pub fn sample_mean(&self, sample: usize) -> f64 {
        (0..self.epochs).map(|e| self.score(sample, e)).sum::<f64>() / self.epochs as f64
    }

    /// Per-epoch mean score of the given group vs. everything else. Groups
    /// that are empty (or all-covering) yield NaN on the empty side.
    pub fn epoch_group_means(&self, group: &BTreeSet<usize>) -> Vec<(f64, f64)> {
        (0..self.epochs)
            .map(|e| {
                let (mut gs, mut gn, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
                for i in 0..self.n {
                    if group.contains(&i) {
                        gs += self.score(i, e);
                        gn += 1;
                    } else {
                        rs += self.score(i, e);
                        rn += 1;
                    }
                }
                (gs / gn as f64, rs / rn as f64)
            })
            .collect()
    }

    /// Writes `sample_id,epoch,score,batch_size` rows, sample-major, floats
    /// with 17 significant digits, LF endings.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(b"sample_id,epoch,score,batch_size\n")?;
        for i in 0..self.n {
            for e in 0..self.epochs {
                writeln!(
                    w,
                    "{i},{e},{},{}",
                    fmt_f64(self.score(i, e)),
                    self.batch_size(i, e)
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a matrix written by [`save_csv`], requiring every cell of the
    /// dense `n × epochs` grid to appear exactly once.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();
        match lines.next() {
            Some((_, line)) => {
                let header = line?;
                if header != "sample_id,epoch,score,batch_size" {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!(
                            "expected header sample_id,epoch,score,batch_size, got {header:?}"
                        ),
                    });
                }
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing header".into(),
                })
            }
        }
        let mut cells: Vec<(usize, usize, f64, usize)> = Vec::new();
        let (mut max_i, mut max_e) = (0usize, 0usize);
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let parse = |f: &str, what: &str| -> Result<usize> {
                f.parse().map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("bad {what} {f:?}: {e}"),
                })
            };
            let i = parse(fields[0], "sample_id")?;
            let e = parse(fields[1], "epoch")?;
            let score: f64 = fields[2].parse().map_err(|err| Error::Parse {
                line: line_no,
                message: format!("bad score {:?}: {err}", fields[2]),
            })?;
            if !score.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("non-finite score {score}"),
                });
            }
            let b = parse(fields[3], "batch_size")?;
            if b == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    message: "batch_size must be positive".into(),
                });
            }
            max_i = max_i.max(i);
            max_e = max_e.max(e);
            cells.push((i, e, score, b));
        }
        if cells.is_empty() {
            return Err(Error::Parse {
                line: 1,
                message: "score matrix has no rows".into(),
            });
        }
        let mut out = ScoreMatrix::new_unfilled(max_i + 1, max_e + 1);
        let mut seen = vec![false; out.scores.len()];
        for (i, e, score, b) in cells {
            let idx = out.idx(i, e);
            if seen[idx] {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("duplicate cell for sample {i}, epoch {e}"),
                });
            }
            seen[idx] = true;
            out.scores[idx] = score;
            out.batch_sizes[idx] = b;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "missing cell for sample {}, epoch {}",
                    missing / out.epochs,
                    missing % out.epochs
                ),
            });
        }
        Ok(out)
    }
}

/// Loss/accuracy trace for one epoch. `eval_accuracy` is present when an
/// evaluation dataset was supplied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub eval_accuracy: Option<f64>,
}

/// Everything a training run produces: final parameters, the logged score
/// matrix, and per-epoch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub params: ParamVector,
    pub score_matrix: Option<ScoreMatrix>,
    pub per_epoch: Vec<EpochStats>,
}

impl TrainReport {
    /// Writes the per-epoch summary as JSON (parameters and scores have
    /// their own artifact formats).
    pub fn save_summary_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            epochs: usize,
            final_train_loss: f64,
            final_eval_accuracy: Option<f64>,
            per_epoch: &'a [EpochStats],
        }
        let last = self.per_epoch.last().ok_or_else(|| {
            Error::InvalidArgument("report has no epochs".into())
        })?;
        let summary = Summary {
            epochs: self.per_epoch.len(),
            final_train_loss: last.train_loss,
            final_eval_accuracy: last.eval_accuracy,
            per_epoch: &self.per_epoch,
        };
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &summary)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Trains a fresh model on `ds` under `config`, logging normalized weights.
///
/// `reference` is required for mimic weighting and ignored otherwise;
/// `eval_ds` adds per-epoch accuracy against clean labels. Identical inputs
/// produce bit-identical reports.
pub fn train(
    ds: &LabeledDataset,
    spec: &ModelSpec,
    config: &TrainConfig,
    reference: Option<&ReferenceTarget>,
    eval_ds: Option<&LabeledDataset>,
) -> Result<TrainReport> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("empty training dataset".into()));
    }
    let n = ds.len();
    config.validate(n)?;
    spec.validate()?;
    if ds.dim() != spec.input_dim {
        return Err(Error::Config(format!(
            "dataset has {} features but model.input_dim is {}",
            ds.dim(),
            spec.input_dim
        )));
    }
    if config.mimic.weighting == Weighting::Mimic {
        let reference = reference.ok_or_else(|| {
            Error::Config("mimic.weighting = mimic requires a reference model".into())
        })?;
        if reference.params().spec() != spec {
            return Err(Error::Config(
                "reference model spec differs from the training spec".into(),
            ));
        }
    }
    if let Some(eval) = eval_ds {
        if eval.is_empty() || eval.dim() != spec.input_dim {
            return Err(Error::Config(
                "evaluation dataset is empty or has mismatched dimensions".into(),
            ));
        }
    }

    let mut theta = init_params(spec, config.seed)?;
    let mut shuffle_rng = stream(config.seed, "trainer", "shuffle");
    let mut matrix = ScoreMatrix::new_unfilled(n, config.epochs);
    let mut per_epoch = Vec::with_capacity(config.epochs);

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.sort_unstable();
        if config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            // Per-sample work fans out; every reduction below walks the
            // batch in ascending position order.
            let grads = par::map(batch, |&i| per_sample_grad(&theta, &ds.samples[i]))
                .into_iter()
                .collect::<Result<Vec<ParamVector>>>()?;
            let losses = par::map(batch, |&i| loss(&theta, &ds.samples[i]))
                .into_iter()
                .collect::<Result<Vec<f64>>>()?;
            loss_sum += losses.iter().sum::<f64>();

            let weights = batch_weights(&theta, reference, &grads, &config.mimic)?;
            for (pos, &i) in batch.iter().enumerate() {
                let idx = matrix.idx(i, epoch);
                matrix.scores[idx] = weights[pos];
                matrix.batch_sizes[idx] = batch.len();
            }
            theta = reweighted_update(&theta, &grads, &weights, config.learning_rate)?;
        }
        let eval_accuracy = match eval_ds {
            Some(eval) => Some(evaluate(&theta, eval)?),
            None => None,
        };
        per_epoch.push(EpochStats {
            train_loss: loss_sum / n as f64,
            eval_accuracy,
        });
    }

    debug_assert!(matrix.scores.iter().all(|s| s.is_finite()));
    Ok(TrainReport {
        params: theta,
        score_matrix: Some(matrix),
        per_epoch,
    })
}

/// Trains the reference model: uniform weighting on clean data. The input
/// must carry no flipped labels.
pub fn train_reference(
    ds: &LabeledDataset,
    spec: &ModelSpec,
    config: &TrainConfig,
) -> Result<ParamVector> {
    if !ds.is_clean() {
        return Err(Error::InvalidArgument(
            "reference training requires clean labels".into(),
        ));
    }
    let mut cfg = config.clone();
    cfg.mimic.weighting = Weighting::Uniform;
    let report = train(ds, spec, &cfg, None, None)?;
    Ok(report.params)
}

/// Adds seeded zero-mean Gaussian noise (`sigma` per coordinate) to a
/// parameter vector — used to study how reference quality degrades scoring.
/// `sigma = 0` returns the input unchanged.
pub fn degrade_reference(params: &ParamVector, sigma: f64, seed: RngSeed) -> Result<ParamVector> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma must be finite and non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(params.clone());
    }
    let mut rng = stream(seed, "trainer", "degrade");
    let values = params
        .as_slice()
        .iter()
        .map(|&v| v + sigma * standard_normal(&mut rng))
        .collect();
    params.with_values(values)
}

/// Accuracy against clean labels when the dataset records them, otherwise
/// against the labels as given.
pub fn evaluate(params: &ParamVector, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("evaluate on empty dataset".into()));
    }
    let hits = par::map(&ds.samples, |s| {
        let truth = ds.clean_labels.as_ref().map_or(s.label, |c| c[s.id]);
        Ok(usize::from(predict(params, s)? == truth))
    })
    .into_iter()
    .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / ds.len() as f64)
}
