//! Synthetic classification datasets with ground-truth noise bookkeeping.
//!
//! Gaussian blob generation, uniform label-noise injection (exact flip count,
//! flags preserved), and a lossless CSV format that round-trips datasets
//! byte-for-byte.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;

use crate::num::Vector;
use crate::rng::{standard_normal, stream, RngSeed};
use crate::{fmt_f64, Error, Result};

/// One labelled point. `id` is the sample's dense index in its dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub features: Vector,
    pub label: usize,
}

/// A dataset plus optional noise provenance: when labels have been tampered
/// with, `clean_labels` holds the originals and `flip_flags[i]` is true
/// exactly where `samples[i].label` differs from `clean_labels[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub flip_flags: Option<Vec<bool>>,
    pub clean_labels: Option<Vec<usize>>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature dimension (0 for an empty dataset).
    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    /// Ids whose labels were flipped; empty when no flags are recorded.
    pub fn flipped_set(&self) -> BTreeSet<usize> {
        match &self.flip_flags {
            Some(flags) => flags
                .iter()
                .enumerate()
                .filter_map(|(i, &f)| f.then_some(i))
                .collect(),
            None => BTreeSet::new(),
        }
    }

    /// True when no label differs from its recorded clean label.
    pub fn is_clean(&self) -> bool {
        self.flip_flags
            .as_ref()
            .is_none_or(|flags| flags.iter().all(|&f| !f))
    }

    fn check_invariants(&self) -> Result<()> {
        let n = self.samples.len();
        let dim = self.dim();
        for (i, s) in self.samples.iter().enumerate() {
            if s.id != i {
                return Err(Error::InvalidArgument(format!(
                    "sample at position {i} has id {}; ids must be dense and ascending",
                    s.id
                )));
            }
            if s.features.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.features.len()
                )));
            }
            if s.label >= self.num_classes {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} has label {} out of {} classes",
                    s.label, self.num_classes
                )));
            }
        }
        if let Some(flags) = &self.flip_flags {
            if flags.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{} flip flags for {n} samples",
                    flags.len()
                )));
            }
            let clean = self.clean_labels.as_ref().ok_or_else(|| {
                Error::InvalidArgument("flip flags present without clean labels".into())
            })?;
            for (i, s) in self.samples.iter().enumerate() {
                if flags[i] != (s.label != clean[i]) {
                    return Err(Error::InvalidArgument(format!(
                        "flip flag for sample {i} disagrees with its labels"
                    )));
                }
            }
        }
        if let Some(clean) = &self.clean_labels {
            if clean.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{} clean labels for {n} samples",
                    clean.len()
                )));
            }
            if let Some(&bad) = clean.iter().find(|&&c| c >= self.num_classes) {
                return Err(Error::InvalidArgument(format!(
                    "clean label {bad} out of {} classes",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }
}

/// Generates `num_classes * per_class` points from isotropic Gaussians whose
/// means sit evenly spaced on a circle of radius `class_separation` in the
/// first two feature coordinates (the remaining `dim - 2` coordinates carry
/// pure noise). Features are standardized per dimension at generation time.
pub fn gen_gaussian_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    class_separation: f64,
    cluster_std: f64,
    seed: RngSeed,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be positive".into()));
    }
    if dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 feature dimensions, got {dim}"
        )));
    }
    if !(class_separation.is_finite() && cluster_std.is_finite() && cluster_std >= 0.0) {
        return Err(Error::InvalidArgument(
            "class_separation must be finite and cluster_std non-negative".into(),
        ));
    }

    let mut rng = stream(seed, "datasets", "blobs");
    let n = num_classes * per_class;
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for class in 0..num_classes {
        let angle = std::f64::consts::TAU * class as f64 / num_classes as f64;
        let mut mean = vec![0.0; dim];
        mean[0] = class_separation * angle.cos();
        mean[1] = class_separation * angle.sin();
        for _ in 0..per_class {
            let point: Vec<f64> = mean
                .iter()
                .map(|&m| m + cluster_std * standard_normal(&mut rng))
                .collect();
            features.push(point);
            labels.push(class);
        }
    }

    // Standardize each dimension to zero mean and unit variance. A dimension
    // that carries no spread at all (possible only with cluster_std = 0) is
    // centered and left unscaled.
    for d in 0..dim {
        let mean = features.iter().map(|f| f[d]).sum::<f64>() / n as f64;
        let var = features.iter().map(|f| (f[d] - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        for f in &mut features {
            f[d] = (f[d] - mean) / scale;
        }
    }

    let samples = features
        .into_iter()
        .zip(&labels)
        .enumerate()
        .map(|(id, (f, &label))| {
            Ok(Sample {
                id,
                features: Vector::new(f)?,
                label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = LabeledDataset {
        samples,
        num_classes,
        flip_flags: Some(vec![false; n]),
        clean_labels: Some(labels),
    };
    ds.check_invariants()?;
    Ok(ds)
}

/// Flips the labels of exactly `⌊noise_level * n⌋` samples, chosen uniformly
/// without replacement; each flipped label is redrawn uniformly from the
/// wrong classes. The input must still be clean. Clean labels and flip flags
/// are recorded on the returned dataset.
pub fn inject_label_noise(
    ds: &LabeledDataset,
    noise_level: f64,
    seed: RngSeed,
) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&noise_level) {
        return Err(Error::InvalidArgument(format!(
            "noise_level must be in [0, 1], got {noise_level}"
        )));
    }
    if !ds.is_clean() {
        return Err(Error::InvalidArgument(
            "dataset already carries flipped labels".into(),
        ));
    }
    if ds.num_classes < 2 {
        return Err(Error::InvalidArgument(
            "label noise needs at least 2 classes".into(),
        ));
    }
    let n = ds.len();
    let flips = (noise_level * n as f64).floor() as usize;
    let mut rng = stream(seed, "datasets", "label-noise");
    let mut chosen: Vec<usize> = index::sample(&mut rng, n, flips).into_vec();
    chosen.sort_unstable();

    let clean_labels: Vec<usize> = ds.samples.iter().map(|s| s.label).collect();
    let mut out = ds.clone();
    out.clean_labels = Some(clean_labels.clone());
    let mut flags = vec![false; n];
    for &i in &chosen {
        // Uniform over the wrong classes: draw from C-1 slots and skip the
        // clean label.
        let draw = rng.random_range(0..ds.num_classes - 1);
        let wrong = if draw >= clean_labels[i] { draw + 1 } else { draw };
        out.samples[i].label = wrong;
        flags[i] = true;
    }
    out.flip_flags = Some(flags);
    out.check_invariants()?;
    Ok(out)
}

const CSV_FIXED_HEADER: [&str; 4] = ["id", "label", "clean_label", "flipped"];

/// Writes the dataset as CSV: `id,label,clean_label,flipped,f0,...`, floats
/// with 17 significant digits, LF line endings. Datasets without recorded
/// noise bookkeeping are written as clean (`clean_label = label`,
/// `flipped = 0`).
pub fn save_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    ds.check_invariants()?;
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut header: Vec<String> = CSV_FIXED_HEADER.iter().map(|s| s.to_string()).collect();
    header.extend((0..ds.dim()).map(|d| format!("f{d}")));
    w.write_all(header.join(",").as_bytes())?;
    w.write_all(b"\n")?;
    for (i, s) in ds.samples.iter().enumerate() {
        let clean = ds.clean_labels.as_ref().map_or(s.label, |c| c[i]);
        let flipped = ds.flip_flags.as_ref().is_some_and(|f| f[i]);
        let mut row = vec![
            s.id.to_string(),
            s.label.to_string(),
            clean.to_string(),
            u8::from(flipped).to_string(),
        ];
        row.extend(s.features.as_slice().iter().map(|&x| fmt_f64(x)));
        w.write_all(row.join(",").as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_csv`]. The class count is inferred as
/// `max(label, clean_label) + 1` over the file. Parse errors name the
/// offending 1-based line.
pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < CSV_FIXED_HEADER.len() + 1
        || cols[..CSV_FIXED_HEADER.len()] != CSV_FIXED_HEADER
    {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header id,label,clean_label,flipped,f0,..., got {header:?}"),
        });
    }
    let dim = cols.len() - CSV_FIXED_HEADER.len();
    for (d, col) in cols[CSV_FIXED_HEADER.len()..].iter().enumerate() {
        if *col != format!("f{d}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("feature column {d} is named {col:?}, expected f{d}"),
            });
        }
    }

    let mut samples = Vec::new();
    let mut clean_labels = Vec::new();
    let mut flags = Vec::new();
    let mut max_label = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let parse_usize = |field: &str, what: &str| {
            field.parse::<usize>().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad {what} {field:?}: {e}"),
            })
        };
        let id = parse_usize(fields[0], "id")?;
        let label = parse_usize(fields[1], "label")?;
        let clean = parse_usize(fields[2], "clean_label")?;
        let flipped = match fields[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("bad flipped flag {other:?}; expected 0 or 1"),
                })
            }
        };
        let mut features = Vec::with_capacity(dim);
        for (d, field) in fields[CSV_FIXED_HEADER.len()..].iter().enumerate() {
            let x = field.parse::<f64>().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad f{d} value {field:?}: {e}"),
            })?;
            features.push(x);
        }
        max_label = max_label.max(label).max(clean);
        samples.push(Sample {
            id,
            features: Vector::new(features).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?,
            label,
        });
        clean_labels.push(clean);
        flags.push(flipped);
    }

    let ds = LabeledDataset {
        samples,
        num_classes: max_label + 1,
        flip_flags: Some(flags),
        clean_labels: Some(clean_labels),
    };
    ds.check_invariants().map_err(|e| Error::Parse {
        line: 1,
        message: format!("inconsistent dataset: {e}"),
    })?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn blobs_have_standardized_features_and_dense_ids() {
        let ds = gen_gaussian_blobs(3, 50, 4, 5.0, 1.0, RngSeed(7)).unwrap();
        assert_eq!(ds.len(), 150);
        assert_eq!(ds.dim(), 4);
        for (i, s) in ds.samples.iter().enumerate() {
            assert_eq!(s.id, i);
        }
        for d in 0..4 {
            let mean = ds.samples.iter().map(|s| s.features[d]).sum::<f64>() / 150.0;
            let var = ds
                .samples
                .iter()
                .map(|s| (s.features[d] - mean).powi(2))
                .sum::<f64>()
                / 150.0;
            assert!(mean.abs() < 1e-12, "dim {d} mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "dim {d} var {var}");
        }
    }

    #[test]
    fn blobs_are_deterministic_per_seed() {
        let a = gen_gaussian_blobs(4, 25, 6, 3.0, 0.7, RngSeed(42)).unwrap();
        let b = gen_gaussian_blobs(4, 25, 6, 3.0, 0.7, RngSeed(42)).unwrap();
        let c = gen_gaussian_blobs(4, 25, 6, 3.0, 0.7, RngSeed(43)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn blobs_reject_bad_arguments() {
        assert!(gen_gaussian_blobs(2, 0, 2, 1.0, 1.0, RngSeed(1)).is_err());
        assert!(gen_gaussian_blobs(1, 5, 2, 1.0, 1.0, RngSeed(1)).is_err());
        assert!(gen_gaussian_blobs(2, 5, 1, 1.0, 1.0, RngSeed(1)).is_err());
        assert!(gen_gaussian_blobs(2, 5, 2, 1.0, -0.5, RngSeed(1)).is_err());
    }

    #[test]
    fn noise_zero_is_identity_with_flags() {
        let ds = gen_gaussian_blobs(3, 10, 3, 4.0, 1.0, RngSeed(3)).unwrap();
        let noisy = inject_label_noise(&ds, 0.0, RngSeed(5)).unwrap();
        assert_eq!(noisy, ds);
    }

    #[test]
    fn noise_one_on_two_classes_flips_everything() {
        let ds = gen_gaussian_blobs(2, 10, 2, 4.0, 1.0, RngSeed(3)).unwrap();
        let noisy = inject_label_noise(&ds, 1.0, RngSeed(5)).unwrap();
        for (s, clean) in noisy.samples.iter().zip(noisy.clean_labels.as_ref().unwrap()) {
            assert_eq!(s.label, 1 - clean);
        }
        assert!(noisy.flip_flags.as_ref().unwrap().iter().all(|&f| f));
    }

    #[test]
    fn noise_flips_exactly_floor_rho_n() {
        let ds = gen_gaussian_blobs(5, 200, 3, 4.0, 1.0, RngSeed(11)).unwrap();
        let noisy = inject_label_noise(&ds, 0.5, RngSeed(12)).unwrap();
        assert_eq!(noisy.flipped_set().len(), 500);
        assert!(inject_label_noise(&noisy, 0.1, RngSeed(13)).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let ds = gen_gaussian_blobs(4, 30, 5, 3.0, 1.2, RngSeed(21)).unwrap();
        let noisy = inject_label_noise(&ds, 0.3, RngSeed(22)).unwrap();
        save_csv(&noisy, &path).unwrap();
        let loaded = load_csv(&path).unwrap();
        assert_eq!(loaded, noisy);
    }

    #[test]
    fn csv_errors_name_lines() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        match load_csv(&empty) {
            Err(Error::Parse { line: 1, message }) => assert!(message.contains("missing header")),
            other => panic!("expected missing-header error, got {other:?}"),
        }

        let short_row = dir.path().join("short.csv");
        std::fs::write(
            &short_row,
            "id,label,clean_label,flipped,f0\n0,1,1,0,0.5\n1,0,0\n",
        )
        .unwrap();
        match load_csv(&short_row) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("fields"));
            }
            other => panic!("expected field-count error, got {other:?}"),
        }

        let bad_float = dir.path().join("badfloat.csv");
        std::fs::write(
            &bad_float,
            "id,label,clean_label,flipped,f0\n0,1,1,0,oops\n",
        )
        .unwrap();
        match load_csv(&bad_float) {
            Err(Error::Parse { line: 2, message }) => assert!(message.contains("f0")),
            other => panic!("expected float error, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn noise_flags_and_counts_are_consistent(
            classes in 2usize..6,
            per_class in 1usize..40,
            rho in 0.0f64..1.0,
            seed in 0u64..1000,
        ) {
            let ds = gen_gaussian_blobs(classes, per_class, 3, 4.0, 1.0, RngSeed(seed)).unwrap();
            let noisy = inject_label_noise(&ds, rho, RngSeed(seed + 1)).unwrap();
            let n = ds.len();
            let flags = noisy.flip_flags.as_ref().unwrap();
            let clean = noisy.clean_labels.as_ref().unwrap();
            prop_assert_eq!(flags.iter().filter(|&&f| f).count(),
                            (rho * n as f64).floor() as usize);
            for (i, s) in noisy.samples.iter().enumerate() {
                prop_assert_eq!(flags[i], s.label != clean[i]);
                prop_assert!(s.label < classes);
            }
            // Features are untouched.
            for (a, b) in ds.samples.iter().zip(&noisy.samples) {
                prop_assert_eq!(&a.features, &b.features);
            }
        }
    }
}
