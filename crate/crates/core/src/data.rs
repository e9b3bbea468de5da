//! Datasets: synthetic Gaussian clusters, IDX image files, IID partitioning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::rng;
use crate::{Error, Result};

/// Row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
    name: String,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        num_features: usize,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if labels.is_empty() || num_features == 0 || num_classes == 0 {
            return Err(Error::invalid("dataset needs N, F, C >= 1"));
        }
        if features.len() != labels.len() * num_features {
            return Err(Error::invalid(format!(
                "{} features for {} samples of dimension {num_features}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {l} outside 0..{num_classes}"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature".into()));
        }
        Ok(Dataset {
            features,
            labels,
            num_features,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Little-endian dump of labels and features, for determinism checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.labels.len() * 8 + self.features.len() * 8);
        for &l in &self.labels {
            out.extend_from_slice(&(l as u64).to_le_bytes());
        }
        for &v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Fixed mean of class `c`: `±2 e_{c/2}` when `C <= 2F`, otherwise a
/// direction drawn from a stream that depends only on `(F, C, c)`.
fn class_mean(c: usize, features: usize, classes: usize) -> Vec<f64> {
    let mut mean = vec![0.0; features];
    if classes <= 2 * features {
        mean[c / 2] = if c.is_multiple_of(2) { 2.0 } else { -2.0 };
        return mean;
    }
    let mut r = rng::stream(rng::derive_seed(&[
        features as u64,
        classes as u64,
        c as u64,
    ]));
    for m in mean.iter_mut() {
        *m = StandardNormal.sample(&mut r);
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    mean.iter_mut().for_each(|v| *v *= 2.0 / norm);
    mean
}

/// `n_samples` points from `classes` isotropic Gaussian clusters with
/// standard deviation `spread`. Sample `i` has label `i % classes`.
pub fn synth_generate(
    n_samples: usize,
    features: usize,
    classes: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || features == 0 {
        return Err(Error::invalid("need at least one feature and one class"));
    }
    if n_samples < classes {
        return Err(Error::invalid(format!(
            "{n_samples} samples cannot cover {classes} classes"
        )));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::invalid(format!(
            "spread must be non-negative, got {spread}"
        )));
    }
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|c| class_mean(c, features, classes))
        .collect();
    let mut r = rng::stream(seed);
    let mut feats = Vec::with_capacity(n_samples * features);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let c = i % classes;
        labels.push(c);
        for &m in &means[c] {
            let z: f64 = StandardNormal.sample(&mut r);
            feats.push(m + spread * z);
        }
    }
    Dataset::new(
        feats,
        labels,
        features,
        classes,
        format!("synthetic-{features}x{classes}"),
    )
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|w| u32::from_be_bytes(w.try_into().unwrap()))
        .ok_or_else(|| Error::format(bytes.len(), "truncated header"))
}

/// Parses in-memory IDX image and label files. Pixels are scaled to `[0, 1]`
/// and labels are assumed to be digits-style classes `0..=max_label`, with at
/// least 10 classes.
pub fn idx_parse(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0)?;
    if magic != IDX_IMAGES {
        return Err(Error::format(
            0,
            format!("image magic {magic:#010x}, expected {IDX_IMAGES:#010x}"),
        ));
    }
    let count = be_u32(images, 4)? as usize;
    let rows = be_u32(images, 8)? as usize;
    let cols = be_u32(images, 12)? as usize;
    let pixels = rows * cols;
    if pixels == 0 {
        return Err(Error::format(8, "image dimensions must be non-zero"));
    }
    let body = &images[16..];
    if body.len() != count * pixels {
        return Err(Error::format(
            16 + body.len().min(count * pixels),
            format!(
                "image payload is {} bytes, expected {}",
                body.len(),
                count * pixels
            ),
        ));
    }

    let magic = be_u32(labels, 0)?;
    if magic != IDX_LABELS {
        return Err(Error::format(
            0,
            format!("label magic {magic:#010x}, expected {IDX_LABELS:#010x}"),
        ));
    }
    let label_count = be_u32(labels, 4)? as usize;
    if label_count != count {
        return Err(Error::format(
            4,
            format!("{label_count} labels for {count} images"),
        ));
    }
    let lbody = &labels[8..];
    if lbody.len() != count {
        return Err(Error::format(
            8 + lbody.len().min(count),
            format!("label payload is {} bytes, expected {count}", lbody.len()),
        ));
    }
    if count == 0 {
        return Err(Error::format(4, "IDX files contain no samples"));
    }
    let labels: Vec<usize> = lbody.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().copied().max().unwrap_or(0).max(9) + 1;
    let features = body.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(
        features,
        labels,
        pixels,
        classes,
        format!("idx-{rows}x{cols}"),
    )
}

pub fn idx_load(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|e| Error::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        })
    };
    idx_parse(&read(images_path)?, &read(labels_path)?)
}

/// Disjoint client shards and their data-size ratios `p_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
}

/// Uniformly shuffles `0..n_samples` and splits it into `n` parts whose sizes
/// differ by at most one (the first `N mod n` parts get the extra sample).
pub fn iid_partition(n_samples: usize, n: usize, seed: u64) -> Result<Partition> {
    if n == 0 || n > n_samples {
        return Err(Error::invalid(format!(
            "cannot split {n_samples} samples across {n} clients"
        )));
    }
    let mut idx: Vec<usize> = (0..n_samples).collect();
    idx.shuffle(&mut rng::stream(rng::derive_seed(&[
        seed,
        rng::tag::PARTITION,
    ])));
    let (base, extra) = (n_samples / n, n_samples % n);
    let mut client_indices = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let size = base + usize::from(i < extra);
        client_indices.push(idx[start..start + size].to_vec());
        start += size;
    }
    let raw: Vec<f64> = client_indices
        .iter()
        .map(|c| c.len() as f64 / n_samples as f64)
        .collect();
    let sum: f64 = raw.iter().sum();
    let weights = raw.into_iter().map(|p| p / sum).collect();
    Ok(Partition {
        client_indices,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for w in [IDX_IMAGES, count, rows, cols] {
            v.extend_from_slice(&w.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = IDX_LABELS.to_be_bytes().to_vec();
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn idx_header_layout() {
        let images = idx_images(2, 2, 2, &[0, 255, 51, 102, 1, 2, 3, 4]);
        assert_eq!(
            &images[..16],
            &[0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2]
        );
        let labels = idx_labels(&[0, 7]);
        assert_eq!(&labels[..8], &[0, 0, 8, 1, 0, 0, 0, 2]);
        let ds = idx_parse(&images, &labels).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_features(), 4);
        assert_eq!(ds.labels(), &[0, 7]);
        assert_eq!(ds.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.num_classes(), 10);
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let images = idx_images(3, 2, 2, &[0; 12]);
        let labels = idx_labels(&[0, 7]);
        assert!(matches!(
            idx_parse(&images, &labels),
            Err(Error::Format { offset: 4, .. })
        ));

        let mut bad = idx_images(2, 2, 2, &[0; 8]);
        bad[3] = 0x02;
        assert!(matches!(
            idx_parse(&bad, &idx_labels(&[0, 1])),
            Err(Error::Format { offset: 0, .. })
        ));

        let truncated = idx_images(2, 2, 2, &[0; 5]);
        assert!(matches!(
            idx_parse(&truncated, &idx_labels(&[0, 1])),
            Err(Error::Format { offset: 21, .. })
        ));
        assert!(matches!(
            idx_parse(&[0, 0, 8], &[]),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn idx_load_reports_missing_path() {
        let err = idx_load(
            Path::new("/nonexistent/imgs"),
            Path::new("/nonexistent/lbls"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Io { ref path, .. } if path == "/nonexistent/imgs"));
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let a = synth_generate(100, 3, 4, 0.5, 11).unwrap();
        let b = synth_generate(100, 3, 4, 0.5, 11).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_ne!(
            a.to_bytes(),
            synth_generate(100, 3, 4, 0.5, 12).unwrap().to_bytes()
        );
        for c in 0..4 {
            assert_eq!(a.labels().iter().filter(|&&l| l == c).count(), 25);
        }
        assert!(synth_generate(3, 2, 4, 0.1, 0).is_err());
    }

    #[test]
    fn synth_zero_spread_sits_on_means() {
        let ds = synth_generate(6, 2, 3, 0.0, 5).unwrap();
        assert_eq!(ds.row(0), &[2.0, 0.0]);
        assert_eq!(ds.row(1), &[-2.0, 0.0]);
        assert_eq!(ds.row(2), &[0.0, 2.0]);
        let many = synth_generate(10, 2, 5, 0.0, 5).unwrap();
        let r = many.row(4);
        assert!(((r[0] * r[0] + r[1] * r[1]).sqrt() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn partition_sizes() {
        let p = iid_partition(100, 4, 1).unwrap();
        assert!(p.client_indices.iter().all(|c| c.len() == 25));
        assert!(p.weights.iter().all(|&w| w == 0.25));

        let p = iid_partition(10, 3, 1).unwrap();
        let sizes: Vec<usize> = p.client_indices.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert!((p.weights[0] - 0.4).abs() < 1e-15);
        assert!((p.weights[1] - 0.3).abs() < 1e-15);

        assert_eq!(
            iid_partition(10, 3, 7).unwrap(),
            iid_partition(10, 3, 7).unwrap()
        );
        assert!(iid_partition(3, 4, 0).is_err());
        assert!(iid_partition(3, 0, 0).is_err());
    }

    #[test]
    fn partition_is_a_bijection() {
        for (n_samples, n, seed) in [(97, 5, 3), (10, 10, 0), (1000, 7, 99)] {
            let p = iid_partition(n_samples, n, seed).unwrap();
            let mut all: Vec<usize> = p.client_indices.concat();
            all.sort_unstable();
            assert_eq!(all, (0..n_samples).collect::<Vec<_>>());
            assert!((p.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
        }
    }
}
