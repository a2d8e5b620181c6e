//! Small differentiable classifiers with flat, named parameter storage.
//!
//! Two architectures: plain linear softmax, and a one-hidden-layer tanh MLP.
//! Parameters live in a single flat vector partitioned into named segments
//! (`hidden_weights`, `hidden_bias`, `output_weights`, `output_bias`), so
//! weight-space directions, masks, and updates are ordinary slice math.
//! Losses are cross-entropy; gradients are analytic and checked against
//! central differences in the tests.

use std::collections::BTreeSet;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{LabeledDataset, Sample};
use crate::num::dot;
use crate::rng::{stream, RngSeed};
use crate::{fmt_f64, par, Error, Result};

/// Architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearSoftmax,
    MlpOneHidden,
}

/// Shape and initialization scale of a model. The segment layout (and hence
/// every parameter index) is a pure function of this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Hidden width; required for [`ModelKind::MlpOneHidden`], ignored for
    /// the linear model.
    pub hidden_dim: Option<usize>,
    /// Weights draw from `Uniform(-init_scale, init_scale)`; biases start 0.
    pub init_scale: f64,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, num_classes: usize, init_scale: f64) -> Self {
        ModelSpec {
            kind: ModelKind::LinearSoftmax,
            input_dim,
            num_classes,
            hidden_dim: None,
            init_scale,
        }
    }

    pub fn mlp(input_dim: usize, num_classes: usize, hidden_dim: usize, init_scale: f64) -> Self {
        ModelSpec {
            kind: ModelKind::MlpOneHidden,
            input_dim,
            num_classes,
            hidden_dim: Some(hidden_dim),
            init_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.kind == ModelKind::MlpOneHidden && self.hidden_dim.unwrap_or(0) == 0 {
            return Err(Error::InvalidArgument(
                "mlp_one_hidden requires hidden_dim >= 1".into(),
            ));
        }
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "init_scale must be finite and non-negative, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }

    /// Named segments in layout order; ranges partition `0..param_len()`.
    pub fn segments(&self) -> Vec<(String, Range<usize>)> {
        let (d, c) = (self.input_dim, self.num_classes);
        let mut out = Vec::new();
        let mut at = 0usize;
        let mut push = |name: &str, len: usize, at: &mut usize| {
            out.push((name.to_string(), *at..*at + len));
            *at += len;
        };
        match self.kind {
            ModelKind::LinearSoftmax => {
                push("output_weights", c * d, &mut at);
                push("output_bias", c, &mut at);
            }
            ModelKind::MlpOneHidden => {
                let h = self.hidden_dim.expect("validated");
                push("hidden_weights", h * d, &mut at);
                push("hidden_bias", h, &mut at);
                push("output_weights", c * h, &mut at);
                push("output_bias", c, &mut at);
            }
        }
        out
    }

    pub fn param_len(&self) -> usize {
        self.segments().last().map_or(0, |(_, r)| r.end)
    }
}

/// A subset of parameter segments used to restrict scoring. Masks never
/// change which parameters get *updated*, only which coordinates enter the
/// alignment computation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamMask {
    included: BTreeSet<String>,
}

impl ParamMask {
    /// Mask over every segment of `spec`.
    pub fn all(spec: &ModelSpec) -> Self {
        ParamMask {
            included: spec.segments().into_iter().map(|(n, _)| n).collect(),
        }
    }

    /// Mask over the classifier head only (`output_weights`, `output_bias`).
    pub fn last_layer() -> Self {
        ParamMask {
            included: ["output_weights", "output_bias"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }

    /// Mask over the named segments; must be non-empty and every name must
    /// exist in `spec`.
    pub fn from_segments<S: AsRef<str>>(names: &[S], spec: &ModelSpec) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidArgument("empty parameter mask".into()));
        }
        let known: BTreeSet<String> = spec.segments().into_iter().map(|(n, _)| n).collect();
        let mut included = BTreeSet::new();
        for name in names {
            let name = name.as_ref();
            if !known.contains(name) {
                return Err(Error::InvalidArgument(format!(
                    "mask names unknown segment {name:?}; known: {known:?}"
                )));
            }
            included.insert(name.to_string());
        }
        Ok(ParamMask { included })
    }

    pub fn includes(&self, segment: &str) -> bool {
        self.included.contains(segment)
    }

    pub fn segment_names(&self) -> impl Iterator<Item = &str> {
        self.included.iter().map(String::as_str)
    }

    /// Checks that every masked segment exists in `spec`.
    pub fn validate_against(&self, spec: &ModelSpec) -> Result<()> {
        let known: BTreeSet<String> = spec.segments().into_iter().map(|(n, _)| n).collect();
        for name in &self.included {
            if !known.contains(name) {
                return Err(Error::InvalidArgument(format!(
                    "mask segment {name:?} does not exist for this model"
                )));
            }
        }
        Ok(())
    }
}

/// Flat parameter vector with its generating spec. Values are always finite;
/// the segment table always partitions `0..len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    spec: ModelSpec,
    values: Vec<f64>,
}

impl ParamVector {
    /// All-zero parameters for `spec`.
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        Ok(ParamVector {
            spec: spec.clone(),
            values: vec![0.0; spec.param_len()],
        })
    }

    /// Wraps explicit values; the length must match the spec layout and every
    /// entry must be finite.
    pub fn from_values(spec: &ModelSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.param_len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for a {}-parameter model",
                values.len(),
                spec.param_len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite parameter {} at index {i}",
                values[i]
            )));
        }
        Ok(ParamVector {
            spec: spec.clone(),
            values,
        })
    }

    /// Same layout as `self` with replacement values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_values(&self.spec, values)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// The values of one named segment, or `None` if the layout lacks it.
    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.spec
            .segments()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| &self.values[r])
    }

    /// Values at the mask's coordinates, concatenated in segment layout
    /// order (not mask-name order).
    pub fn masked_values(&self, mask: &ParamMask) -> Result<Vec<f64>> {
        mask.validate_against(&self.spec)?;
        let mut out = Vec::new();
        for (name, range) in self.spec.segments() {
            if mask.includes(&name) {
                out.extend_from_slice(&self.values[range]);
            }
        }
        Ok(out)
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.spec == other.spec
    }

    /// Writes the vector as JSON: spec descriptor, segment table, and values
    /// with 17 significant digits.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "{{")?;
        writeln!(w, "  \"model\": {},", serde_json::to_string(&self.spec)?)?;
        let segments: Vec<String> = self
            .spec
            .segments()
            .into_iter()
            .map(|(name, r)| {
                format!("{{\"name\": \"{name}\", \"start\": {}, \"end\": {}}}", r.start, r.end)
            })
            .collect();
        writeln!(w, "  \"segments\": [{}],", segments.join(", "))?;
        let values: Vec<String> = self.values.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "  \"values\": [{}]", values.join(", "))?;
        writeln!(w, "}}")?;
        Ok(())
    }

    /// Reads a vector written by [`save_json`], re-validating the layout.
    pub fn load_json(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct SegmentJson {
            name: String,
            start: usize,
            end: usize,
        }
        #[derive(Deserialize)]
        struct ParamJson {
            model: ModelSpec,
            segments: Vec<SegmentJson>,
            values: Vec<f64>,
        }
        let text = std::fs::read_to_string(path)?;
        let raw: ParamJson = serde_json::from_str(&text)?;
        let expected = raw.model.segments();
        if raw.segments.len() != expected.len()
            || raw
                .segments
                .iter()
                .zip(&expected)
                .any(|(s, (name, r))| s.name != *name || s.start != r.start || s.end != r.end)
        {
            return Err(Error::InvalidArgument(format!(
                "segment table in {} does not match its model spec",
                path.display()
            )));
        }
        Self::from_values(&raw.model, raw.values)
    }
}

/// Draws initial parameters: weights `Uniform(-init_scale, init_scale)`,
/// biases zero. Weight segments consume the stream in layout order.
pub fn init_params(spec: &ModelSpec, seed: RngSeed) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = stream(seed, "models", "init");
    let mut values = vec![0.0; spec.param_len()];
    for (name, range) in spec.segments() {
        if name.ends_with("_weights") {
            for v in &mut values[range] {
                *v = (rng.random::<f64>() * 2.0 - 1.0) * spec.init_scale;
            }
        }
    }
    ParamVector::from_values(spec, values)
}

/// Class logits for one sample.
fn logits(params: &ParamVector, features: &[f64]) -> Result<Vec<f64>> {
    let spec = &params.spec;
    if features.len() != spec.input_dim {
        return Err(Error::InvalidArgument(format!(
            "sample has {} features, model expects {}",
            features.len(),
            spec.input_dim
        )));
    }
    let c = spec.num_classes;
    match spec.kind {
        ModelKind::LinearSoftmax => {
            let w = params.segment("output_weights").expect("layout");
            let b = params.segment("output_bias").expect("layout");
            let d = spec.input_dim;
            Ok((0..c).map(|k| dot(&w[k * d..(k + 1) * d], features) + b[k]).collect())
        }
        ModelKind::MlpOneHidden => {
            let hidden = hidden_activations(params, features);
            let w = params.segment("output_weights").expect("layout");
            let b = params.segment("output_bias").expect("layout");
            let h = hidden.len();
            Ok((0..c).map(|k| dot(&w[k * h..(k + 1) * h], &hidden) + b[k]).collect())
        }
    }
}

/// tanh hidden layer of the MLP.
fn hidden_activations(params: &ParamVector, features: &[f64]) -> Vec<f64> {
    let spec = &params.spec;
    let h = spec.hidden_dim.expect("mlp");
    let d = spec.input_dim;
    let w = params.segment("hidden_weights").expect("layout");
    let b = params.segment("hidden_bias").expect("layout");
    (0..h).map(|j| (dot(&w[j * d..(j + 1) * d], features) + b[j]).tanh()).collect()
}

/// Softmax probabilities computed from logits with max subtraction.
fn probabilities(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(l));
    let mut p: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = p.iter().sum();
    for pi in &mut p {
        *pi /= sum;
    }
    p
}

fn check_label(params: &ParamVector, sample: &Sample) -> Result<()> {
    if sample.label >= params.spec.num_classes {
        return Err(Error::InvalidArgument(format!(
            "sample {} has label {} but the model has {} classes",
            sample.id, sample.label, params.spec.num_classes
        )));
    }
    Ok(())
}

/// Cross-entropy loss of one sample, computed via log-sum-exp.
pub fn loss(params: &ParamVector, sample: &Sample) -> Result<f64> {
    check_label(params, sample)?;
    let l = logits(params, sample.features.as_slice())?;
    let max = l.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + l.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - l[sample.label])
}

/// Analytic gradient of [`loss`] with respect to every parameter.
pub fn per_sample_grad(params: &ParamVector, sample: &Sample) -> Result<ParamVector> {
    check_label(params, sample)?;
    let spec = &params.spec;
    let x = sample.features.as_slice();
    let c = spec.num_classes;
    let mut grad = vec![0.0; spec.param_len()];
    match spec.kind {
        ModelKind::LinearSoftmax => {
            let l = logits(params, x)?;
            let p = probabilities(&l);
            let d = spec.input_dim;
            let segs = spec.segments();
            let (ow, ob) = (segs[0].1.clone(), segs[1].1.clone());
            for k in 0..c {
                let delta = p[k] - f64::from(u8::from(k == sample.label));
                for (j, &xj) in x.iter().enumerate() {
                    grad[ow.start + k * d + j] = delta * xj;
                }
                grad[ob.start + k] = delta;
            }
        }
        ModelKind::MlpOneHidden => {
            if x.len() != spec.input_dim {
                return Err(Error::InvalidArgument(format!(
                    "sample has {} features, model expects {}",
                    x.len(),
                    spec.input_dim
                )));
            }
            let a = hidden_activations(params, x);
            let h = a.len();
            let d = spec.input_dim;
            let wo = params.segment("output_weights").expect("layout").to_vec();
            let l: Vec<f64> = {
                let b = params.segment("output_bias").expect("layout");
                (0..c).map(|k| dot(&wo[k * h..(k + 1) * h], &a) + b[k]).collect()
            };
            let p = probabilities(&l);
            let segs = spec.segments();
            let (hw, hb, ow, ob) = (
                segs[0].1.clone(),
                segs[1].1.clone(),
                segs[2].1.clone(),
                segs[3].1.clone(),
            );
            let mut d_hidden = vec![0.0; h];
            for k in 0..c {
                let delta = p[k] - f64::from(u8::from(k == sample.label));
                for (j, &aj) in a.iter().enumerate() {
                    grad[ow.start + k * h + j] = delta * aj;
                    d_hidden[j] += delta * wo[k * h + j];
                }
                grad[ob.start + k] = delta;
            }
            for j in 0..h {
                let dz = d_hidden[j] * (1.0 - a[j] * a[j]);
                for (i, &xi) in x.iter().enumerate() {
                    grad[hw.start + j * d + i] = dz * xi;
                }
                grad[hb.start + j] = dz;
            }
        }
    }
    params.with_values(grad)
}

/// Per-sample gradients for a whole batch, in batch order. The map may fan
/// out across threads; callers do their own (ordered) reductions.
pub fn batch_grads(params: &ParamVector, batch: &[Sample]) -> Result<Vec<ParamVector>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    par::map(batch, |s| per_sample_grad(params, s))
        .into_iter()
        .collect()
}

/// Predicted class: argmax over logits, ties to the lowest class index.
pub fn predict(params: &ParamVector, sample: &Sample) -> Result<usize> {
    let l = logits(params, sample.features.as_slice())?;
    let mut best = 0usize;
    for (k, &v) in l.iter().enumerate() {
        if v > l[best] {
            best = k;
        }
    }
    Ok(best)
}

/// Fraction of samples whose predicted class matches their current label.
pub fn accuracy(params: &ParamVector, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("accuracy of empty dataset".into()));
    }
    let hits = par::map(&ds.samples, |s| {
        Ok(usize::from(predict(params, s)? == s.label))
    })
    .into_iter()
    .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / ds.len() as f64)
}
