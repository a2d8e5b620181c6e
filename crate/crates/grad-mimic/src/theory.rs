//! Single-step convergence checks for mimic reweighting on quadratic test
//! problems.
//!
//! Each instance holds per-sample losses `ℓ_i(θ) = ½‖θ − c_i‖²` with known
//! centers, so the pooled optimum `θ* = mean(c_i)` and every quantity in the
//! guarantees is exactly computable. Three checks are exposed, named after
//! the keys of the `verify-theory` JSON report:
//!
//! * `lemma1` — an exact algebraic identity: the squared distance of the
//!   reweighted step to the reference equals that of the plain averaged step
//!   minus `η·R`, where `R` combines the weight/alignment covariance and the
//!   squared-norm gap of the two step directions.
//! * `lemma2` — the inequality behind `R > 0`: an exponentially tilted mean
//!   exceeds the plain mean by at least `(1/λ)‖σ(λ) − σ(0)‖²`.
//! * `theorem1` — for learning rates under [`eta_bound`], the reweighted
//!   step lands no farther from `θ*` than the plain step.
//!
//! Reweighting here uses unnormalized tilt weights `α_i = exp(λ a_i)` with
//! alignment `a_i = −g̃_iᵀ v` and `λ = 1/(τ‖v‖)`, divided by their sum —
//! which is exactly the softmax weighting the trainer applies; the
//! equivalence is asserted by a test.

use rand::Rng;
use serde::Serialize;

use crate::num::{dot, norm, softmax_slice, Vector};
use crate::rng::{standard_normal, stream, RngSeed};
use crate::{par, Error, Result};

/// A bundle of quadratic losses plus the step hyperparameters.
///
/// Gradient noise is Gaussian with per-coordinate variance `noise_delta/dim`,
/// so the expected squared noise norm per sample is `noise_delta`. Draws are
/// regenerated from `seed` on every call, making all checks deterministic.
#[derive(Debug, Clone)]
pub struct TheoryInstance {
    centers: Vec<Vector>,
    theta: Vector,
    theta_ref: Vector,
    noise_delta: f64,
    learning_rate: f64,
    temperature: f64,
    seed: RngSeed,
}

impl TheoryInstance {
    pub fn new(
        centers: Vec<Vector>,
        theta: Vector,
        theta_ref: Vector,
        noise_delta: f64,
        learning_rate: f64,
        temperature: f64,
        seed: RngSeed,
    ) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 losses, got {}",
                centers.len()
            )));
        }
        let dim = theta.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("zero-dimensional instance".into()));
        }
        if theta_ref.len() != dim || centers.iter().any(|c| c.len() != dim) {
            return Err(Error::InvalidArgument(
                "centers, theta, and theta_ref must share one dimension".into(),
            ));
        }
        if !(noise_delta >= 0.0 && noise_delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_delta must be finite and non-negative, got {noise_delta}"
            )));
        }
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive and finite, got {learning_rate}"
            )));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive and finite, got {temperature}"
            )));
        }
        Ok(TheoryInstance {
            centers,
            theta,
            theta_ref,
            noise_delta,
            learning_rate,
            temperature,
            seed,
        })
    }

    /// Same instance with a different learning rate (noise draws unchanged).
    pub fn with_learning_rate(&self, learning_rate: f64) -> Result<Self> {
        Self::new(
            self.centers.clone(),
            self.theta.clone(),
            self.theta_ref.clone(),
            self.noise_delta,
            learning_rate,
            self.temperature,
            self.seed,
        )
    }

    pub fn num_samples(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Minimizer of the pooled loss: the mean of the centers.
    pub fn theta_star(&self) -> Vec<f64> {
        let n = self.centers.len() as f64;
        let mut star = vec![0.0; self.dim()];
        for c in &self.centers {
            for (s, &v) in star.iter_mut().zip(c.as_slice()) {
                *s += v;
            }
        }
        for s in &mut star {
            *s /= n;
        }
        star
    }

    /// Distance from the reference to the pooled optimum.
    pub fn epsilon(&self) -> f64 {
        let star = self.theta_star();
        let diff: Vec<f64> = self
            .theta_ref
            .as_slice()
            .iter()
            .zip(&star)
            .map(|(&r, &s)| r - s)
            .collect();
        norm(&diff)
    }

    /// Per-sample noisy gradients `θ − c_i + δ_i`, re-drawn from the seed.
    pub fn noisy_gradients(&self) -> Vec<Vec<f64>> {
        let dim = self.dim();
        let per_coord_std = (self.noise_delta / dim as f64).sqrt();
        let mut rng = stream(self.seed, "theory", "gradient-noise");
        self.centers
            .iter()
            .map(|c| {
                self.theta
                    .as_slice()
                    .iter()
                    .zip(c.as_slice())
                    .map(|(&t, &ci)| t - ci + per_coord_std * standard_normal(&mut rng))
                    .collect()
            })
            .collect()
    }
}

/// Everything both step rules share, computed once per instance.
struct Analysis {
    norm_v: f64,
    grads: Vec<Vec<f64>>,
    /// Alignments `a_i = −g̃_iᵀ v`.
    alignments: Vec<f64>,
    /// Tilt weights `α_i/Σα` = softmax of the alignments at temperature `τ‖v‖`.
    weights: Vec<f64>,
    mean_grad: Vec<f64>,
    weighted_grad: Vec<f64>,
    /// Largest noisy gradient norm.
    kappa: f64,
}

fn analyze(inst: &TheoryInstance) -> Result<Analysis> {
    let v: Vec<f64> = inst
        .theta_ref
        .as_slice()
        .iter()
        .zip(inst.theta.as_slice())
        .map(|(&r, &t)| r - t)
        .collect();
    let norm_v = norm(&v);
    if norm_v == 0.0 {
        return Err(Error::DegenerateTarget(
            "reference equals the current point; no step direction".into(),
        ));
    }
    let grads = inst.noisy_gradients();
    let n = grads.len();
    let alignments: Vec<f64> = grads.iter().map(|g| -dot(g, &v)).collect();
    let weights = softmax_slice(&alignments, inst.temperature * norm_v)?;
    let dim = inst.dim();
    let mut mean_grad = vec![0.0; dim];
    let mut weighted_grad = vec![0.0; dim];
    for (g, &w) in grads.iter().zip(&weights) {
        for k in 0..dim {
            mean_grad[k] += g[k];
            weighted_grad[k] += w * g[k];
        }
    }
    for m in &mut mean_grad {
        *m /= n as f64;
    }
    let kappa = grads.iter().map(|g| norm(g)).fold(0.0, f64::max);
    Ok(Analysis {
        norm_v,
        grads,
        alignments,
        weights,
        mean_grad,
        weighted_grad,
        kappa,
    })
}

fn weighted_mean(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(&w, &v)| w * v).sum()
}

fn step(theta: &[f64], direction: &[f64], eta: f64) -> Vec<f64> {
    theta
        .iter()
        .zip(direction)
        .map(|(&t, &d)| t - eta * d)
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    norm(&diff)
}

/// The `R` scalar of the step identity, given the shared analysis.
fn r_from(analysis: &Analysis, eta: f64) -> f64 {
    let n = analysis.grads.len() as f64;
    let mean_align = analysis.alignments.iter().sum::<f64>() / n;
    let weighted_align = weighted_mean(&analysis.weights, &analysis.alignments);
    let norm_gap = dot(&analysis.weighted_grad, &analysis.weighted_grad)
        - dot(&analysis.mean_grad, &analysis.mean_grad);
    2.0 * (weighted_align - mean_align) - eta * norm_gap
}

/// One plain averaged step and one reweighted step from the same point.
#[derive(Debug, Clone)]
pub struct StepComparison {
    pub theta_gd_next: Vector,
    pub theta_gm_next: Vector,
    /// Distance of the plain step to the pooled optimum.
    pub dist_gd: f64,
    /// Distance of the reweighted step to the pooled optimum.
    pub dist_gm: f64,
    /// The identity scalar: `‖θ_gm − θ_ref‖² = ‖θ_gd − θ_ref‖² − η·R`.
    pub r_value: f64,
    /// Learning-rate threshold under which the reweighted step is closer.
    pub eta_bound: f64,
}

/// Takes both steps and evaluates every derived quantity of the comparison.
///
/// Errors when the reference coincides with the current point or every noisy
/// gradient is zero (both leave the comparison undefined).
pub fn gm_and_gd_step(inst: &TheoryInstance) -> Result<StepComparison> {
    let analysis = analyze(inst)?;
    let eta = inst.learning_rate;
    let theta = inst.theta.as_slice();
    let star = inst.theta_star();
    let theta_gd = step(theta, &analysis.mean_grad, eta);
    let theta_gm = step(theta, &analysis.weighted_grad, eta);
    let dist_gd = dist(&theta_gd, &star);
    let dist_gm = dist(&theta_gm, &star);
    let r_value = r_from(&analysis, eta);
    let eta_bound = bounds_from(&analysis, inst)?.1;
    Ok(StepComparison {
        theta_gd_next: Vector::new(theta_gd)?,
        theta_gm_next: Vector::new(theta_gm)?,
        dist_gd,
        dist_gm,
        r_value,
        eta_bound,
    })
}

/// The identity scalar `R` alone.
pub fn compute_r(inst: &TheoryInstance) -> Result<f64> {
    let analysis = analyze(inst)?;
    Ok(r_from(&analysis, inst.learning_rate))
}

/// Result of one tilted-mean gap check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapCheck {
    /// `f(λ) − f(0)`: tilted mean minus plain mean.
    pub lhs: f64,
    /// `(1/λ)‖σ(λ) − σ(0)‖²`.
    pub rhs: f64,
    pub holds: bool,
}

/// Checks the `lemma2` inequality on one value vector: the exponentially
/// tilted mean `f(λ) = Σ e^{λv_i} v_i / Σ e^{λv_j}` exceeds the plain mean by
/// at least `(1/λ)‖σ(λ) − σ(0)‖²`, where `σ(λ)` are the tilt weights.
pub fn check_lemma2(values: &[f64], lambda: f64) -> Result<GapCheck> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 values, got {}",
            values.len()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive and finite, got {lambda}"
        )));
    }
    let n = values.len();
    let tilted = softmax_slice(values, 1.0 / lambda)?;
    // Evaluating f(0) through the same weighted mean keeps the constant-value
    // case exactly zero: both sides then use identical weights.
    let uniform = vec![1.0 / n as f64; n];
    let lhs = weighted_mean(&tilted, values) - weighted_mean(&uniform, values);
    let gap_sq: f64 = tilted
        .iter()
        .zip(&uniform)
        .map(|(&t, &u)| (t - u) * (t - u))
        .sum();
    let rhs = gap_sq / lambda;
    Ok(GapCheck {
        lhs,
        rhs,
        holds: lhs >= rhs - 1e-12,
    })
}

/// Returns `(r_positive_bound, refined_bound)`: the ε-free threshold under
/// which `R > 0` is guaranteed, and the full `theorem1` threshold.
fn bounds_from(analysis: &Analysis, inst: &TheoryInstance) -> Result<(f64, f64)> {
    if analysis.kappa == 0.0 {
        return Err(Error::DegenerateTarget(
            "every noisy gradient is zero; the step threshold is undefined".into(),
        ));
    }
    let n = analysis.grads.len();
    let uniform = 1.0 / n as f64;
    let gap_sq: f64 = analysis
        .weights
        .iter()
        .map(|&w| (w - uniform) * (w - uniform))
        .sum();
    let kappa = analysis.kappa;
    let base = 2.0 * inst.temperature * analysis.norm_v * gap_sq;
    let refined = (base - 4.0 * inst.epsilon() * kappa) / (kappa * kappa);
    Ok((base / (kappa * kappa), refined))
}

/// Learning-rate threshold of the `theorem1` guarantee:
/// `(2τ‖v‖·‖σ(λ) − σ(0)‖² − 4εκ)/κ²` with `κ = max_i ‖g̃_i‖` and
/// `ε = ‖θ_ref − θ*‖`. May be non-positive (the guarantee is then vacuous).
pub fn eta_bound(inst: &TheoryInstance) -> Result<f64> {
    let analysis = analyze(inst)?;
    Ok(bounds_from(&analysis, inst)?.1)
}

/// The ε-free part of the threshold, `2τ‖v‖·‖σ(λ) − σ(0)‖²/κ²`: learning
/// rates strictly under it keep the identity scalar `R` positive. Equals
/// [`eta_bound`] whenever the reference sits exactly at the optimum.
pub fn r_positive_eta_bound(inst: &TheoryInstance) -> Result<f64> {
    let analysis = analyze(inst)?;
    Ok(bounds_from(&analysis, inst)?.0)
}

/// Outcome of the `theorem1` check on one instance.
#[derive(Debug, Clone)]
pub enum Theorem1Check {
    /// The threshold was non-positive or the learning rate not under it;
    /// the guarantee says nothing about this instance.
    NotApplicable { eta_bound: f64 },
    /// The guarantee applies; `holds` records whether the reweighted step
    /// was indeed no farther from the optimum.
    Checked {
        holds: bool,
        comparison: StepComparison,
    },
}

/// Checks the distance guarantee: when `η` is strictly under [`eta_bound`],
/// the reweighted step must satisfy `dist_gm ≤ dist_gd + 1e-12`.
pub fn check_theorem1(inst: &TheoryInstance) -> Result<Theorem1Check> {
    let comparison = gm_and_gd_step(inst)?;
    if comparison.eta_bound <= 0.0 || inst.learning_rate >= comparison.eta_bound {
        return Ok(Theorem1Check::NotApplicable {
            eta_bound: comparison.eta_bound,
        });
    }
    let holds = comparison.dist_gm <= comparison.dist_gd + 1e-12;
    Ok(Theorem1Check::Checked { holds, comparison })
}

/// Draws a random instance for the sweep at `trial`, deterministic in
/// `(seed, purpose, trial)`: dimension 1–10, 2–50 losses, standard-normal
/// centers and points, mixed noise/step/temperature scales.
pub fn random_instance(seed: RngSeed, purpose: &str, trial: u64) -> TheoryInstance {
    let mut rng = stream(seed, "theory", &format!("{purpose}-{trial}"));
    let dim = rng.random_range(1..=10usize);
    let n = rng.random_range(2..=50usize);
    let draw_vec = |rng: &mut rand_chacha::ChaCha8Rng| {
        Vector::new((0..dim).map(|_| standard_normal(rng)).collect()).expect("finite draws")
    };
    let centers: Vec<Vector> = (0..n).map(|_| draw_vec(&mut rng)).collect();
    let theta = draw_vec(&mut rng);
    let mut theta_ref = draw_vec(&mut rng);
    if dist(theta_ref.as_slice(), theta.as_slice()) < 1e-9 {
        let mut values = theta_ref.into_inner();
        values[0] += 1.0;
        theta_ref = Vector::new(values).expect("finite nudge");
    }
    let noise_delta = 0.3 * rng.random::<f64>();
    let learning_rate = 1e-3 + 0.5 * rng.random::<f64>();
    let temperature = 10f64.powf(rng.random_range(-1.0..1.0));
    TheoryInstance::new(
        centers,
        theta,
        theta_ref,
        noise_delta,
        learning_rate,
        temperature,
        seed.child(&format!("{purpose}-{trial}")),
    )
    .expect("generated instance is valid")
}

/// Sweep results for the step identity.
#[derive(Debug, Clone, Serialize)]
pub struct Lemma1Report {
    pub trials: usize,
    pub max_rel_err: f64,
}

/// Sweep results for the tilted-mean gap inequality.
#[derive(Debug, Clone, Serialize)]
pub struct Lemma2Report {
    pub trials: usize,
    pub violations: usize,
}

/// Sweep results for the distance guarantee.
#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Report {
    /// Instances that met the precondition and were checked.
    pub admissible: usize,
    /// How many of those satisfied the guarantee.
    pub holds: usize,
    /// Candidate draws discarded because the threshold was non-positive.
    pub vacuous: usize,
}

/// Combined report of all three sweeps; serialized by `verify-theory`.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub lemma1: Lemma1Report,
    pub lemma2: Lemma2Report,
    pub theorem1: Theorem1Report,
}

/// Relative error of the step identity on one instance.
pub fn lemma1_rel_err(inst: &TheoryInstance) -> Result<f64> {
    let comparison = gm_and_gd_step(inst)?;
    let theta_ref = inst.theta_ref.as_slice();
    let d_gm = dist(comparison.theta_gm_next.as_slice(), theta_ref);
    let d_gd = dist(comparison.theta_gd_next.as_slice(), theta_ref);
    let lhs = d_gm * d_gm;
    let rhs = d_gd * d_gd - inst.learning_rate * comparison.r_value;
    Ok((lhs - rhs).abs() / (d_gd * d_gd).max(1.0))
}

/// Checks the step identity on `trials` random instances.
pub fn lemma1_sweep(trials: usize, seed: RngSeed) -> Result<Lemma1Report> {
    let errs = par::map_range(trials, |t| {
        lemma1_rel_err(&random_instance(seed, "lemma1", t as u64))
    });
    let mut max_rel_err = 0.0f64;
    for e in errs {
        max_rel_err = max_rel_err.max(e?);
    }
    Ok(Lemma1Report {
        trials,
        max_rel_err,
    })
}

/// Checks the gap inequality on `trials` random value vectors with sizes
/// 2–100 and `λ` log-uniform in `[1e-3, 1e3]`.
pub fn lemma2_sweep(trials: usize, seed: RngSeed) -> Result<Lemma2Report> {
    let results = par::map_range(trials, |t| {
        let mut rng = stream(seed, "theory", &format!("lemma2-{t}"));
        let n = rng.random_range(2..=100usize);
        let values: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let lambda = 10f64.powf(rng.random_range(-3.0..3.0));
        check_lemma2(&values, lambda).map(|check| check.holds)
    });
    let mut violations = 0;
    for r in results {
        if !r? {
            violations += 1;
        }
    }
    Ok(Lemma2Report { trials, violations })
}

/// Checks the distance guarantee on `trials` admissible instances.
///
/// Admissible instances are constructed directly: the reference sits close to
/// the optimum, noise is small, and the learning rate is drawn strictly under
/// the instance's own threshold. Draws whose threshold comes out non-positive
/// are counted as vacuous and redrawn.
pub fn theorem1_sweep(trials: usize, seed: RngSeed) -> Result<Theorem1Report> {
    let results = par::map_range(trials, |t| -> Result<(bool, usize)> {
        let mut rng = stream(seed, "theory", &format!("theorem1-{t}"));
        let mut vacuous = 0usize;
        for attempt in 0..500 {
            let dim = rng.random_range(1..=10usize);
            let n = rng.random_range(2..=50usize);
            let draw_vec = |rng: &mut rand_chacha::ChaCha8Rng| {
                Vector::new((0..dim).map(|_| standard_normal(rng)).collect())
                    .expect("finite draws")
            };
            let centers: Vec<Vector> = (0..n).map(|_| draw_vec(&mut rng)).collect();
            let theta = draw_vec(&mut rng);
            let offset_raw = draw_vec(&mut rng);
            let offset_norm = norm(offset_raw.as_slice()).max(1e-12);
            let epsilon = 1e-5 * 10f64.powf(rng.random_range(0.0..2.0));
            let centers_mean = {
                let mut star = vec![0.0; dim];
                for c in &centers {
                    for (s, &v) in star.iter_mut().zip(c.as_slice()) {
                        *s += v;
                    }
                }
                for s in &mut star {
                    *s /= n as f64;
                }
                star
            };
            let theta_ref = Vector::new(
                centers_mean
                    .iter()
                    .zip(offset_raw.as_slice())
                    .map(|(&s, &o)| s + epsilon * o / offset_norm)
                    .collect(),
            )
            .expect("finite reference");
            let noise_delta = 10f64.powf(rng.random_range(-4.0..-2.0));
            let temperature = 10f64.powf(rng.random_range(-1.0..1.0));
            let inst_seed = seed
                .child(&format!("theorem1-{t}"))
                .child(&format!("attempt-{attempt}"));
            let probe = TheoryInstance::new(
                centers,
                theta,
                theta_ref,
                noise_delta,
                1e-3,
                temperature,
                inst_seed,
            )?;
            let bound = eta_bound(&probe)?;
            if bound <= 0.0 {
                vacuous += 1;
                continue;
            }
            let eta = bound * (0.05 + 0.85 * rng.random::<f64>());
            let inst = probe.with_learning_rate(eta)?;
            match check_theorem1(&inst)? {
                Theorem1Check::Checked { holds, .. } => return Ok((holds, vacuous)),
                Theorem1Check::NotApplicable { .. } => {
                    vacuous += 1;
                    continue;
                }
            }
        }
        Err(Error::InvalidArgument(format!(
            "trial {t}: no admissible instance found in 500 attempts"
        )))
    });
    let mut holds = 0;
    let mut vacuous = 0;
    for r in results {
        let (h, v) = r?;
        if h {
            holds += 1;
        }
        vacuous += v;
    }
    Ok(Theorem1Report {
        admissible: trials,
        holds,
        vacuous,
    })
}

/// Runs all three sweeps at the same trial count.
pub fn verify(trials: usize, seed: RngSeed) -> Result<TheoryReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    Ok(TheoryReport {
        lemma1: lemma1_sweep(trials, seed)?,
        lemma2: lemma2_sweep(trials, seed)?,
        theorem1: theorem1_sweep(trials, seed)?,
    })
}
