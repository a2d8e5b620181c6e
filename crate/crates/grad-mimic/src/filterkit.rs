//! Turning logged score matrices into retain/discard decisions.
//!
//! Stage one binarizes each epoch column of a score matrix into votes
//! (threshold against the uniform weight, exact 1-D 2-means, a 2-component
//! Gaussian mixture, or top-k percent). Stage two aggregates the vote matrix
//! with a two-class conditionally-independent vote model fit by EM: each
//! sample has a latent retain/discard state, each epoch column has its own
//! true/false-positive rates, and the per-sample retain posterior drives the
//! final decision.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::num::f1_score;
use crate::trainer::ScoreMatrix;
use crate::{fmt_f64, par, Error, Result};

/// Column binarization rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BinarizeMethod {
    /// Vote 1 iff the score strictly exceeds the uniform weight `1/b` for
    /// the batch the sample was normalized in.
    Threshold,
    /// Exact 1-D 2-means; the higher-mean cluster votes 1.
    KMeans,
    /// 2-component 1-D Gaussian mixture fit by EM; posterior of the
    /// higher-mean component >= 0.5 votes 1.
    Gmm,
    /// The `⌈k·n/100⌉` highest scores vote 1.
    TopK { k_percent: f64 },
}

impl BinarizeMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BinarizeMethod::Threshold => "threshold",
            BinarizeMethod::KMeans => "kmeans",
            BinarizeMethod::Gmm => "gmm",
            BinarizeMethod::TopK { .. } => "topk",
        }
    }
}

/// Dense `n × epochs` vote matrix produced by a binarizer.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteMatrix {
    n: usize,
    epochs: usize,
    votes: Vec<bool>,
    /// Name of the rule that produced the votes (not persisted in CSV).
    pub method: String,
}

impl VoteMatrix {
    /// Builds a matrix from per-epoch vote columns of equal length.
    pub fn from_columns(columns: &[Vec<bool>], method: &str) -> Result<Self> {
        let epochs = columns.len();
        if epochs == 0 {
            return Err(Error::InvalidArgument("no vote columns".into()));
        }
        let n = columns[0].len();
        if n == 0 || columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidArgument(
                "vote columns must be non-empty and equal-length".into(),
            ));
        }
        let mut votes = vec![false; n * epochs];
        for (e, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                votes[i * epochs + e] = v;
            }
        }
        Ok(VoteMatrix {
            n,
            epochs,
            votes,
            method: method.to_string(),
        })
    }

    pub fn num_samples(&self) -> usize {
        self.n
    }

    pub fn num_epochs(&self) -> usize {
        self.epochs
    }

    pub fn vote(&self, sample: usize, epoch: usize) -> bool {
        self.votes[sample * self.epochs + epoch]
    }

    /// Writes `sample_id,epoch,vote` rows mirroring the score-matrix layout.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(b"sample_id,epoch,vote\n")?;
        for i in 0..self.n {
            for e in 0..self.epochs {
                writeln!(w, "{i},{e},{}", u8::from(self.vote(i, e)))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a matrix written by [`save_csv`]; the grid must be dense.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();
        match lines.next() {
            Some((_, line)) => {
                let header = line?;
                if header != "sample_id,epoch,vote" {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!("expected header sample_id,epoch,vote, got {header:?}"),
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
        let mut cells = Vec::new();
        let (mut max_i, mut max_e) = (0usize, 0usize);
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 3 fields, got {}", fields.len()),
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
            let v = match fields[2] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("bad vote {other:?}; expected 0 or 1"),
                    })
                }
            };
            max_i = max_i.max(i);
            max_e = max_e.max(e);
            cells.push((i, e, v));
        }
        if cells.is_empty() {
            return Err(Error::Parse {
                line: 1,
                message: "vote matrix has no rows".into(),
            });
        }
        let (n, epochs) = (max_i + 1, max_e + 1);
        let mut votes = vec![false; n * epochs];
        let mut seen = vec![false; n * epochs];
        for (i, e, v) in cells {
            let idx = i * epochs + e;
            if seen[idx] {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("duplicate cell for sample {i}, epoch {e}"),
                });
            }
            seen[idx] = true;
            votes[idx] = v;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "missing cell for sample {}, epoch {}",
                    missing / epochs,
                    missing % epochs
                ),
            });
        }
        Ok(VoteMatrix {
            n,
            epochs,
            votes,
            method: "csv".into(),
        })
    }
}

/// Votes 1 where a score strictly exceeds the uniform weight of its batch.
pub fn binarize_threshold(scores: &[f64], batch_sizes: &[usize]) -> Result<Vec<bool>> {
    if scores.is_empty() || scores.len() != batch_sizes.len() {
        return Err(Error::InvalidArgument(
            "scores and batch sizes must be non-empty and equal-length".into(),
        ));
    }
    if batch_sizes.iter().any(|&b| b == 0) {
        return Err(Error::InvalidArgument("batch sizes must be positive".into()));
    }
    Ok(scores
        .iter()
        .zip(batch_sizes)
        .map(|(&s, &b)| s > 1.0 / b as f64)
        .collect())
}

/// The exact optimal 2-means split of sorted values: index `k` such that
/// clusters `[..k]` / `[k..]` minimize within-cluster squared error.
/// Candidates lie between *distinct* values, so equal scores always land in
/// the same cluster; cost ties resolve to the lowest split index. Returns
/// `None` when fewer than two distinct values exist.
fn kmeans_split(sorted: &[f64]) -> Option<usize> {
    let n = sorted.len();
    if n < 2 || sorted[0] == sorted[n - 1] {
        return None;
    }
    // Prefix sums give each candidate's within-cluster squared error in O(1):
    // sse = Σx² − (Σx)²/count, per side.
    let mut prefix = Vec::with_capacity(n + 1);
    let mut prefix_sq = Vec::with_capacity(n + 1);
    let (mut s, mut s2) = (0.0, 0.0);
    prefix.push(0.0);
    prefix_sq.push(0.0);
    for &v in sorted {
        s += v;
        s2 += v * v;
        prefix.push(s);
        prefix_sq.push(s2);
    }
    let sse = |lo: usize, hi: usize| {
        let count = (hi - lo) as f64;
        let sum = prefix[hi] - prefix[lo];
        let sum_sq = prefix_sq[hi] - prefix_sq[lo];
        sum_sq - sum * sum / count
    };
    let mut best = None;
    for k in 1..n {
        if sorted[k - 1] == sorted[k] {
            continue;
        }
        let cost = sse(0, k) + sse(k, n);
        match best {
            Some((_, best_cost)) if cost >= best_cost => {}
            _ => best = Some((k, cost)),
        }
    }
    best.map(|(k, _)| k)
}

/// Exact 1-D 2-means votes: the higher-mean cluster votes 1. Columns with
/// fewer than two distinct values retain everything.
pub fn binarize_kmeans(scores: &[f64]) -> Result<Vec<bool>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("empty score column".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    match kmeans_split(&sorted) {
        None => Ok(vec![true; scores.len()]),
        Some(k) => {
            let cut = sorted[k];
            Ok(scores.iter().map(|&s| s >= cut).collect())
        }
    }
}

/// A fitted 1-D two-component Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm1d {
    /// Mixing weight of the *higher-mean* component.
    pub weight_high: f64,
    pub mean_low: f64,
    pub mean_high: f64,
    pub var_low: f64,
    pub var_high: f64,
}

impl Gmm1d {
    /// Posterior probability that `x` came from the higher-mean component.
    pub fn posterior_high(&self, x: f64) -> f64 {
        let log_hi = self.weight_high.ln() + log_normal(x, self.mean_high, self.var_high);
        let log_lo = (1.0 - self.weight_high).ln() + log_normal(x, self.mean_low, self.var_low);
        let m = log_hi.max(log_lo);
        let hi = (log_hi - m).exp();
        hi / (hi + (log_lo - m).exp())
    }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (std::f64::consts::TAU * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
}

const GMM_VAR_FLOOR: f64 = 1e-12;
const GMM_MAX_ITERS: usize = 200;
const GMM_LL_TOL: f64 = 1e-9;

/// Fits a two-component mixture by EM, initialized from the exact 2-means
/// split. Returns `None` when the column has fewer than two distinct values.
pub fn fit_gmm(scores: &[f64]) -> Result<Option<Gmm1d>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("empty score column".into()));
    }
    let n = scores.len();
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let Some(split) = kmeans_split(&sorted) else {
        return Ok(None);
    };
    let moments = |slice: &[f64]| {
        let count = slice.len() as f64;
        let mean = slice.iter().sum::<f64>() / count;
        let var = slice.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / count;
        (mean, var.max(GMM_VAR_FLOOR))
    };
    let (mut mean_low, mut var_low) = moments(&sorted[..split]);
    let (mut mean_high, mut var_high) = moments(&sorted[split..]);
    let mut weight_high = (n - split) as f64 / n as f64;

    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..GMM_MAX_ITERS {
        // E-step: responsibility of the high component per point, log-space.
        let mut resp = vec![0.0; n];
        let mut ll = 0.0;
        for (i, &x) in scores.iter().enumerate() {
            let log_hi = weight_high.ln() + log_normal(x, mean_high, var_high);
            let log_lo = (1.0 - weight_high).ln() + log_normal(x, mean_low, var_low);
            let m = log_hi.max(log_lo);
            let hi = (log_hi - m).exp();
            let lo = (log_lo - m).exp();
            resp[i] = hi / (hi + lo);
            ll += m + (hi + lo).ln();
        }
        if ll - prev_ll < GMM_LL_TOL && prev_ll.is_finite() {
            break;
        }
        prev_ll = ll;

        // M-step with a variance floor; collapse of a component's weight is
        // clamped away from exact 0/1 to keep logs finite.
        let n_hi: f64 = resp.iter().sum();
        let n_lo = n as f64 - n_hi;
        weight_high = (n_hi / n as f64).clamp(1e-12, 1.0 - 1e-12);
        if n_hi > 0.0 {
            mean_high = scores.iter().zip(&resp).map(|(&x, &r)| r * x).sum::<f64>() / n_hi;
            var_high = (scores
                .iter()
                .zip(&resp)
                .map(|(&x, &r)| r * (x - mean_high) * (x - mean_high))
                .sum::<f64>()
                / n_hi)
                .max(GMM_VAR_FLOOR);
        }
        if n_lo > 0.0 {
            mean_low = scores
                .iter()
                .zip(&resp)
                .map(|(&x, &r)| (1.0 - r) * x)
                .sum::<f64>()
                / n_lo;
            var_low = (scores
                .iter()
                .zip(&resp)
                .map(|(&x, &r)| (1.0 - r) * (x - mean_low) * (x - mean_low))
                .sum::<f64>()
                / n_lo)
                .max(GMM_VAR_FLOOR);
        }
    }

    // Keep the "high" component the higher-mean one.
    if mean_high < mean_low {
        std::mem::swap(&mut mean_high, &mut mean_low);
        std::mem::swap(&mut var_high, &mut var_low);
        weight_high = 1.0 - weight_high;
    }
    Ok(Some(Gmm1d {
        weight_high,
        mean_low,
        mean_high,
        var_low,
        var_high,
    }))
}

/// Gaussian-mixture votes: posterior of the higher-mean component >= 0.5.
/// Columns with fewer than two distinct values retain everything.
pub fn binarize_gmm(scores: &[f64]) -> Result<Vec<bool>> {
    match fit_gmm(scores)? {
        None => Ok(vec![true; scores.len()]),
        Some(gmm) => Ok(scores.iter().map(|&s| gmm.posterior_high(s) >= 0.5).collect()),
    }
}

/// Top-k-percent votes: the `⌈k·n/100⌉` highest scores vote 1, score ties
/// breaking toward the lower sample id.
pub fn binarize_topk(scores: &[f64], k_percent: f64) -> Result<Vec<bool>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("empty score column".into()));
    }
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "k_percent must be in (0, 100], got {k_percent}"
        )));
    }
    let n = scores.len();
    let keep = ((k_percent * n as f64) / 100.0).ceil() as usize;
    let keep = keep.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut votes = vec![false; n];
    for &i in &order[..keep] {
        votes[i] = true;
    }
    Ok(votes)
}

/// Applies one binarizer to every epoch column of a score matrix.
pub fn binarize_matrix(matrix: &ScoreMatrix, method: BinarizeMethod) -> Result<VoteMatrix> {
    let columns = par::map_range(matrix.num_epochs(), |e| {
        let (scores, sizes) = matrix.column(e);
        match method {
            BinarizeMethod::Threshold => binarize_threshold(&scores, &sizes),
            BinarizeMethod::KMeans => binarize_kmeans(&scores),
            BinarizeMethod::Gmm => binarize_gmm(&scores),
            BinarizeMethod::TopK { k_percent } => binarize_topk(&scores, k_percent),
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    VoteMatrix::from_columns(&columns, method.name())
}

/// Parameters of the fitted two-class vote model: retain prior, and each
/// column's vote rates conditioned on the latent state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteModel {
    /// P(latent = retain).
    pub retain_prior: f64,
    /// Per-column P(vote = 1 | retain).
    pub rate_retain: Vec<f64>,
    /// Per-column P(vote = 1 | discard).
    pub rate_discard: Vec<f64>,
    /// Per-sample retain posteriors under these parameters.
    pub posteriors: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

const EM_MAX_ITERS: usize = 500;
const EM_LL_TOL: f64 = 1e-10;
const EM_PARAM_FLOOR: f64 = 0.01;
const EM_PARAM_CEIL: f64 = 0.99;

/// Fits the two-class conditionally-independent vote model by EM.
///
/// Initialization comes from per-sample majority vote (ties count as retain)
/// with Laplace +1 smoothing on the column rates; all probabilities stay
/// clamped to `[0.01, 0.99]`. The retain/discard labelling is normalized so
/// retain is the state with the higher mean vote rate.
pub fn fit_vote_model(votes: &VoteMatrix) -> Result<VoteModel> {
    let n = votes.num_samples();
    let t = votes.num_epochs();
    let clamp = |p: f64| p.clamp(EM_PARAM_FLOOR, EM_PARAM_CEIL);

    // Majority-vote initialization.
    let majority: Vec<bool> = (0..n)
        .map(|i| {
            let ones = (0..t).filter(|&e| votes.vote(i, e)).count();
            2 * ones >= t
        })
        .collect();
    let n_retain = majority.iter().filter(|&&m| m).count();
    let mut retain_prior = clamp(n_retain as f64 / n as f64);
    let mut rate_retain = vec![0.0; t];
    let mut rate_discard = vec![0.0; t];
    for e in 0..t {
        let (mut ones_r, mut ones_d) = (0usize, 0usize);
        for i in 0..n {
            if votes.vote(i, e) {
                if majority[i] {
                    ones_r += 1;
                } else {
                    ones_d += 1;
                }
            }
        }
        rate_retain[e] = clamp((ones_r + 1) as f64 / (n_retain + 2) as f64);
        rate_discard[e] = clamp((ones_d + 1) as f64 / (n - n_retain + 2) as f64);
    }

    let e_step = |prior: f64, rate_r: &[f64], rate_d: &[f64], post: &mut [f64]| -> f64 {
        let mut ll = 0.0;
        for (i, p) in post.iter_mut().enumerate() {
            let mut log_r = prior.ln();
            let mut log_d = (1.0 - prior).ln();
            for e in 0..t {
                if votes.vote(i, e) {
                    log_r += rate_r[e].ln();
                    log_d += rate_d[e].ln();
                } else {
                    log_r += (1.0 - rate_r[e]).ln();
                    log_d += (1.0 - rate_d[e]).ln();
                }
            }
            let m = log_r.max(log_d);
            let r = (log_r - m).exp();
            let d = (log_d - m).exp();
            *p = r / (r + d);
            ll += m + (r + d).ln();
        }
        ll
    };

    let mut posteriors = vec![0.0; n];
    let mut log_likelihood = f64::NEG_INFINITY;
    let mut iterations = 0;
    for iter in 1..=EM_MAX_ITERS {
        iterations = iter;
        let ll = e_step(retain_prior, &rate_retain, &rate_discard, &mut posteriors);
        let done = ll - log_likelihood < EM_LL_TOL && log_likelihood.is_finite();
        log_likelihood = ll;
        if done {
            break;
        }
        // M-step.
        let total: f64 = posteriors.iter().sum();
        retain_prior = clamp(total / n as f64);
        for e in 0..t {
            let mut ones_r = 0.0;
            let mut ones_d = 0.0;
            for i in 0..n {
                if votes.vote(i, e) {
                    ones_r += posteriors[i];
                    ones_d += 1.0 - posteriors[i];
                }
            }
            rate_retain[e] = clamp(ones_r / total);
            rate_discard[e] = clamp(ones_d / (n as f64 - total));
        }
    }
    // If the iteration budget ran out right after an M-step, the posteriors
    // are stale; one more E-step makes them exact under the final parameters.
    log_likelihood = e_step(retain_prior, &rate_retain, &rate_discard, &mut posteriors);

    // Two labelings explain the votes equally well; pick the one where
    // retain is the higher-vote-rate state.
    let mean_r: f64 = rate_retain.iter().sum::<f64>() / t as f64;
    let mean_d: f64 = rate_discard.iter().sum::<f64>() / t as f64;
    if mean_r < mean_d {
        std::mem::swap(&mut rate_retain, &mut rate_discard);
        retain_prior = 1.0 - retain_prior;
        for p in &mut posteriors {
            *p = 1.0 - *p;
        }
    }
    Ok(VoteModel {
        retain_prior,
        rate_retain,
        rate_discard,
        posteriors,
        log_likelihood,
        iterations,
    })
}

/// Final per-sample retain decision: posterior probabilities and the strict
/// `> threshold` retained set.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterDecision {
    pub retain_prob: Vec<f64>,
    pub retained: BTreeSet<usize>,
    pub threshold: f64,
}

impl FilterDecision {
    /// Samples not in the retained set.
    pub fn discarded(&self) -> BTreeSet<usize> {
        (0..self.retain_prob.len())
            .filter(|i| !self.retained.contains(i))
            .collect()
    }

    /// Writes `sample_id,retain_prob,retained` rows.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(b"sample_id,retain_prob,retained\n")?;
        for (i, &p) in self.retain_prob.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{}",
                fmt_f64(p),
                u8::from(self.retained.contains(&i))
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a decision written by [`save_csv`].
    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();
        match lines.next() {
            Some((_, line)) => {
                let header = line?;
                if header != "sample_id,retain_prob,retained" {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!(
                            "expected header sample_id,retain_prob,retained, got {header:?}"
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
        let mut retain_prob = Vec::new();
        let mut retained = BTreeSet::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 3 fields, got {}", fields.len()),
                });
            }
            let id: usize = fields[0].parse().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad sample_id {:?}: {e}", fields[0]),
            })?;
            if id != retain_prob.len() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("sample ids must be dense and ascending; got {id}"),
                });
            }
            let p: f64 = fields[1].parse().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad retain_prob {:?}: {e}", fields[1]),
            })?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("retain_prob {p} outside [0, 1]"),
                });
            }
            match fields[2] {
                "0" => {}
                "1" => {
                    retained.insert(id);
                }
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("bad retained flag {other:?}; expected 0 or 1"),
                    })
                }
            }
            retain_prob.push(p);
        }
        if retain_prob.is_empty() {
            return Err(Error::Parse {
                line: 1,
                message: "decision has no rows".into(),
            });
        }
        Ok(FilterDecision {
            retain_prob,
            retained,
            threshold: 0.5,
        })
    }
}

/// Aggregates a vote matrix into a retain decision: fit the vote model, then
/// keep samples whose retain posterior strictly exceeds 0.5.
pub fn aggregate_em(votes: &VoteMatrix) -> Result<FilterDecision> {
    let model = fit_vote_model(votes)?;
    let retained = model
        .posteriors
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| (p > 0.5).then_some(i))
        .collect();
    Ok(FilterDecision {
        retain_prob: model.posteriors,
        retained,
        threshold: 0.5,
    })
}

/// Summary statistics of a decision against the score matrix it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityStats {
    /// `|retained| / n`.
    pub retention_rate: f64,
    /// Mean (over samples) of each sample's mean logged score.
    pub avg_mimic_score: f64,
}

pub fn quality_stats(decision: &FilterDecision, matrix: &ScoreMatrix) -> Result<QualityStats> {
    let n = matrix.num_samples();
    if decision.retain_prob.len() != n {
        return Err(Error::InvalidArgument(format!(
            "decision covers {} samples, matrix has {n}",
            decision.retain_prob.len()
        )));
    }
    let avg = (0..n).map(|i| matrix.sample_mean(i)).sum::<f64>() / n as f64;
    Ok(QualityStats {
        retention_rate: decision.retained.len() as f64 / n as f64,
        avg_mimic_score: avg,
    })
}

/// F1 of the discarded set against the dataset's flipped labels. The dataset
/// must carry flip flags.
pub fn detection_f1(decision: &FilterDecision, ds: &LabeledDataset) -> Result<f64> {
    if ds.flip_flags.is_none() {
        return Err(Error::InvalidArgument(
            "dataset records no flip flags; cannot score detection".into(),
        ));
    }
    if decision.retain_prob.len() != ds.len() {
        return Err(Error::InvalidArgument(format!(
            "decision covers {} samples, dataset has {}",
            decision.retain_prob.len(),
            ds.len()
        )));
    }
    Ok(f1_score(&decision.discarded(), &ds.flipped_set()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_gaussian_blobs, inject_label_noise};
    use crate::rng::{standard_normal, stream, RngSeed};
    use proptest::prelude::*;
    use rand::Rng;

    fn matrix_from(columns: &[Vec<bool>]) -> VoteMatrix {
        VoteMatrix::from_columns(columns, "test").unwrap()
    }

    #[test]
    fn threshold_votes_strictly_above_uniform() {
        let votes = binarize_threshold(&[0.4, 0.3, 0.2, 0.1], &[4, 4, 4, 4]).unwrap();
        assert_eq!(votes, vec![true, true, false, false]);
        // Exactly uniform weights never vote.
        let votes = binarize_threshold(&[0.25; 4], &[4; 4]).unwrap();
        assert!(votes.iter().all(|&v| !v));
        // Batch size 1 logs weight 1.0, which is not above 1/1.
        assert_eq!(binarize_threshold(&[1.0], &[1]).unwrap(), vec![false]);
        // Ragged tail: same score, different batch size, different verdict.
        let votes = binarize_threshold(&[0.3, 0.3], &[4, 2]).unwrap();
        assert_eq!(votes, vec![true, false]);
        assert!(binarize_threshold(&[0.5], &[0]).is_err());
        assert!(binarize_threshold(&[], &[]).is_err());
    }

    #[test]
    fn kmeans_splits_clear_clusters() {
        let scores = [0.05, 0.06, 0.07, 0.50, 0.52, 0.55];
        let votes = binarize_kmeans(&scores).unwrap();
        assert_eq!(votes, vec![false, false, false, true, true, true]);

        // Constant column: everything retained.
        assert!(binarize_kmeans(&[0.3; 5]).unwrap().iter().all(|&v| v));
        // Two distinct values: the higher one is retained.
        assert_eq!(
            binarize_kmeans(&[1.0, 2.0, 1.0]).unwrap(),
            vec![false, true, false]
        );
    }

    #[test]
    fn kmeans_matches_exhaustive_split_search() {
        // Oracle: try every positional split of the sorted values (including
        // inside tie runs) and take the minimal within-cluster squared error.
        let mut rng = stream(RngSeed(40), "filterkit", "kmeans-oracle");
        for trial in 0..200 {
            let n = 2 + (trial % 30);
            let mut values: Vec<f64> = (0..n)
                .map(|_| {
                    // Coarse grid so duplicate values appear often.
                    (rng.random::<f64>() * 8.0).round() / 4.0
                })
                .collect();
            let votes = binarize_kmeans(&values).unwrap();
            values.sort_by(f64::total_cmp);
            if values[0] == values[n - 1] {
                assert!(votes.iter().all(|&v| v));
                continue;
            }
            let sse = |slice: &[f64]| {
                let m = slice.iter().sum::<f64>() / slice.len() as f64;
                slice.iter().map(|&v| (v - m) * (v - m)).sum::<f64>()
            };
            let oracle_best = (1..n)
                .map(|k| sse(&values[..k]) + sse(&values[k..]))
                .fold(f64::INFINITY, f64::min);
            // Recover the cost of the implementation's split from the votes.
            let kept_count = votes.iter().filter(|&&v| v).count();
            let split = n - kept_count;
            let got = sse(&values[..split]) + sse(&values[split..]);
            assert!(
                got <= oracle_best + 1e-9 * (1.0 + oracle_best.abs()),
                "trial {trial}: split cost {got} worse than oracle {oracle_best}"
            );
        }
    }

    #[test]
    fn gmm_agrees_with_kmeans_on_separated_clusters() {
        let mut rng = stream(RngSeed(41), "filterkit", "gmm-sep");
        for _ in 0..20 {
            let scores: Vec<f64> = (0..40)
                .map(|i| {
                    let center = if i % 3 == 0 { 10.0 } else { 0.0 };
                    center + 0.3 * standard_normal(&mut rng)
                })
                .collect();
            assert_eq!(
                binarize_gmm(&scores).unwrap(),
                binarize_kmeans(&scores).unwrap()
            );
        }
    }

    #[test]
    fn gmm_midpoint_of_symmetric_fit_is_retained() {
        // Posterior exactly 0.5 retains by the >= rule.
        let gmm = Gmm1d {
            weight_high: 0.5,
            mean_low: -1.0,
            mean_high: 1.0,
            var_low: 0.25,
            var_high: 0.25,
        };
        assert_eq!(gmm.posterior_high(0.0), 0.5);
        let votes = {
            let scores = [-1.2, -1.0, -0.8, 0.8, 1.0, 1.2, 0.0];
            binarize_gmm(&scores).unwrap()
        };
        // The midpoint sample (last) lands with the retained side.
        assert!(votes[6], "midpoint sample should be retained, got {votes:?}");
        assert_eq!(&votes[..6], &[false, false, false, true, true, true]);
    }

    #[test]
    fn gmm_constant_column_retains_everything() {
        assert!(binarize_gmm(&[1.0; 8]).unwrap().iter().all(|&v| v));
    }

    #[test]
    fn topk_counts_and_tie_breaks() {
        let votes = binarize_topk(&[0.9, 0.8, 0.7, 0.6], 50.0).unwrap();
        assert_eq!(votes, vec![true, true, false, false]);
        // ⌈50% of 3⌉ = 2.
        let votes = binarize_topk(&[0.1, 0.3, 0.2], 50.0).unwrap();
        assert_eq!(votes.iter().filter(|&&v| v).count(), 2);
        // Ties break toward the lower sample id.
        let votes = binarize_topk(&[0.5, 0.5, 0.5], 34.0).unwrap();
        assert_eq!(votes, vec![true, true, false]);
        assert!(binarize_topk(&[0.5], 0.0).is_err());
        assert!(binarize_topk(&[0.5], 100.1).is_err());
        assert!(binarize_topk(&[0.5; 7], 100.0).unwrap().iter().all(|&v| v));
    }

    #[test]
    fn vote_matrix_round_trips_and_validates() {
        let m = matrix_from(&[
            vec![true, false, true],
            vec![false, false, true],
            vec![true, true, false],
        ]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("votes.csv");
        m.save_csv(&path).unwrap();
        let loaded = VoteMatrix::load_csv(&path).unwrap();
        assert_eq!(loaded.num_samples(), 3);
        assert_eq!(loaded.num_epochs(), 3);
        for i in 0..3 {
            for e in 0..3 {
                assert_eq!(loaded.vote(i, e), m.vote(i, e));
            }
        }
        std::fs::write(&path, "sample_id,epoch,vote\n0,0,1\n").unwrap();
        VoteMatrix::load_csv(&path).unwrap();
        std::fs::write(&path, "sample_id,epoch,vote\n0,1,1\n").unwrap();
        assert!(VoteMatrix::load_csv(&path).is_err());
    }

    /// Brute-force per-sample posterior under explicit model parameters:
    /// enumerate the two latent states with plain products.
    fn enumeration_posterior(
        votes: &VoteMatrix,
        prior: f64,
        rate_r: &[f64],
        rate_d: &[f64],
        sample: usize,
    ) -> f64 {
        let mut p_r = prior;
        let mut p_d = 1.0 - prior;
        for e in 0..votes.num_epochs() {
            if votes.vote(sample, e) {
                p_r *= rate_r[e];
                p_d *= rate_d[e];
            } else {
                p_r *= 1.0 - rate_r[e];
                p_d *= 1.0 - rate_d[e];
            }
        }
        p_r / (p_r + p_d)
    }

    #[test]
    fn em_posteriors_match_enumeration_under_learned_params() {
        let mut rng = stream(RngSeed(42), "filterkit", "em-oracle");
        for trial in 0..30 {
            let n = 3 + (trial % 10);
            let t = 1 + (trial % 4);
            let columns: Vec<Vec<bool>> = (0..t)
                .map(|_| (0..n).map(|_| rng.random::<f64>() < 0.6).collect())
                .collect();
            let votes = matrix_from(&columns);
            let model = fit_vote_model(&votes).unwrap();
            for i in 0..n {
                let want = enumeration_posterior(
                    &votes,
                    model.retain_prior,
                    &model.rate_retain,
                    &model.rate_discard,
                    i,
                );
                assert!(
                    (model.posteriors[i] - want).abs() < 1e-9,
                    "trial {trial} sample {i}: {} vs {want}",
                    model.posteriors[i]
                );
            }
        }
    }

    #[test]
    fn em_follows_unanimous_and_single_columns() {
        // All columns all-ones: everything retained with high confidence.
        let votes = matrix_from(&[vec![true; 6], vec![true; 6]]);
        let decision = aggregate_em(&votes).unwrap();
        assert_eq!(decision.retained.len(), 6);
        assert!(decision.retain_prob.iter().all(|&p| p > 0.9));

        // A single column: the decision follows it.
        let votes = matrix_from(&[vec![true, true, true, false, false]]);
        let decision = aggregate_em(&votes).unwrap();
        assert_eq!(decision.retained, BTreeSet::from([0, 1, 2]));
    }

    #[test]
    fn em_downweights_a_contrarian_column() {
        // Three faithful columns and one inverted one: the aggregate follows
        // the majority and learns the inverted column's low reliability.
        let truth: Vec<bool> = (0..20).map(|i| i % 3 != 0).collect();
        let inverted: Vec<bool> = truth.iter().map(|&v| !v).collect();
        let votes = matrix_from(&[truth.clone(), truth.clone(), truth.clone(), inverted]);
        let decision = aggregate_em(&votes).unwrap();
        for (i, &t) in truth.iter().enumerate() {
            assert_eq!(decision.retained.contains(&i), t, "sample {i}");
        }
        let model = fit_vote_model(&votes).unwrap();
        assert!(model.rate_retain[3] < model.rate_retain[0]);
    }

    #[test]
    fn em_recovers_planted_truth_better_than_single_columns() {
        let n = 200;
        let flip_rate = 0.2;
        let mut wins = 0;
        let trials = 100;
        for trial in 0..trials {
            let mut rng = stream(RngSeed(trial), "filterkit", "em-recovery");
            let truth: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
            let columns: Vec<Vec<bool>> = (0..5)
                .map(|_| {
                    truth
                        .iter()
                        .map(|&v| {
                            if rng.random::<f64>() < flip_rate {
                                !v
                            } else {
                                v
                            }
                        })
                        .collect()
                })
                .collect();
            let votes = matrix_from(&columns);
            let decision = aggregate_em(&votes).unwrap();
            let errors = |pred: &dyn Fn(usize) -> bool| {
                (0..n).filter(|&i| pred(i) != truth[i]).count()
            };
            let em_errors = errors(&|i| decision.retained.contains(&i));
            let best_col = (0..5)
                .map(|e| errors(&|i| columns[e][i]))
                .min()
                .unwrap();
            if em_errors <= best_col {
                wins += 1;
            }
        }
        assert!(wins >= 95, "EM beat the best single column on {wins}/{trials} trials");
    }

    #[test]
    fn decision_csv_round_trip_and_stats() {
        let votes = matrix_from(&[
            vec![true, true, false, false],
            vec![true, true, false, true],
        ]);
        let decision = aggregate_em(&votes).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("decision.csv");
        decision.save_csv(&path).unwrap();
        let loaded = FilterDecision::load_csv(&path).unwrap();
        assert_eq!(loaded, decision);
    }

    #[test]
    fn detection_f1_matches_hand_values() {
        let ds = gen_gaussian_blobs(2, 50, 2, 4.0, 1.0, RngSeed(50)).unwrap();
        let noisy = inject_label_noise(&ds, 0.4, RngSeed(51)).unwrap();
        let n = noisy.len();

        // Retain everything: no discards, F1 = 0.
        let keep_all = FilterDecision {
            retain_prob: vec![1.0; n],
            retained: (0..n).collect(),
            threshold: 0.5,
        };
        assert_eq!(detection_f1(&keep_all, &noisy).unwrap(), 0.0);

        // Discard everything: recall 1, precision ρ → F1 = 2ρ/(1+ρ).
        let drop_all = FilterDecision {
            retain_prob: vec![0.0; n],
            retained: BTreeSet::new(),
            threshold: 0.5,
        };
        let rho = 0.4;
        let want = 2.0 * rho / (1.0 + rho);
        assert!((detection_f1(&drop_all, &noisy).unwrap() - want).abs() < 1e-12);

        // Perfect detection.
        let flipped = noisy.flipped_set();
        let perfect = FilterDecision {
            retain_prob: (0..n)
                .map(|i| if flipped.contains(&i) { 0.0 } else { 1.0 })
                .collect(),
            retained: (0..n).filter(|i| !flipped.contains(i)).collect(),
            threshold: 0.5,
        };
        assert_eq!(detection_f1(&perfect, &noisy).unwrap(), 1.0);

        // No flags: error.
        let mut clean = ds.clone();
        clean.flip_flags = None;
        clean.clean_labels = None;
        assert!(detection_f1(&keep_all, &clean).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        /// Every binarizer is monotone: a strictly higher score never gets a
        /// lower vote (ties may split only for top-k, by its id rule).
        #[test]
        fn binarizers_are_monotone(
            scores in proptest::collection::vec(0.0f64..1.0, 2..40),
            k in 1.0f64..100.0,
        ) {
            let b = vec![scores.len(); scores.len()];
            let all = [
                binarize_threshold(&scores, &b).unwrap(),
                binarize_kmeans(&scores).unwrap(),
                binarize_topk(&scores, k).unwrap(),
            ];
            for votes in &all {
                for i in 0..scores.len() {
                    for j in 0..scores.len() {
                        if scores[i] > scores[j] {
                            prop_assert!(votes[i] >= votes[j]);
                        }
                    }
                }
            }
            // Threshold and k-means give equal scores equal votes.
            for votes in &all[..2] {
                for i in 0..scores.len() {
                    for j in 0..scores.len() {
                        if scores[i] == scores[j] {
                            prop_assert_eq!(votes[i], votes[j]);
                        }
                    }
                }
            }
        }

        /// The mixture binarizer is monotone on two-clump columns (its
        /// operating regime: scores bunch around low and high weights).
        #[test]
        fn gmm_is_monotone_on_two_clump_columns(
            seed in 0u64..500,
            gap in 0.5f64..5.0,
        ) {
            let mut rng = stream(RngSeed(seed), "filterkit", "gmm-prop");
            let scores: Vec<f64> = (0..30)
                .map(|i| {
                    let center = if i % 2 == 0 { 0.0 } else { gap };
                    center + 0.2 * standard_normal(&mut rng)
                })
                .collect();
            let votes = binarize_gmm(&scores).unwrap();
            for i in 0..scores.len() {
                for j in 0..scores.len() {
                    if scores[i] > scores[j] {
                        prop_assert!(votes[i] >= votes[j]);
                    }
                }
            }
        }

        /// Aggregation is invariant to the order of vote columns.
        #[test]
        fn em_is_column_permutation_invariant(
            seed in 0u64..300,
            n in 4usize..20,
            t in 2usize..6,
        ) {
            let mut rng = stream(RngSeed(seed), "filterkit", "em-perm");
            let columns: Vec<Vec<bool>> = (0..t)
                .map(|_| (0..n).map(|_| rng.random::<f64>() < 0.5).collect())
                .collect();
            let base = fit_vote_model(&matrix_from(&columns)).unwrap();
            let mut reversed = columns.clone();
            reversed.reverse();
            let moved = fit_vote_model(&matrix_from(&reversed)).unwrap();
            for (a, b) in base.posteriors.iter().zip(&moved.posteriors) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
