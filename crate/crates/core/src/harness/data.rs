//! Dataset ingestion (CIFAR binary layout), synthetic clusters and the
//! stratified validation holdout.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{purpose, stream};

pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_CHANNELS: usize = 3;
pub const IMAGE_BYTES: usize = IMAGE_CHANNELS * IMAGE_SIDE * IMAGE_SIDE;
pub const RECORD_BYTES: usize = 1 + IMAGE_BYTES;

/// Per-channel normalization applied after scaling pixels to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: [0.4914, 0.4822, 0.4465],
            std: [0.2470, 0.2435, 0.2616],
        }
    }
}

/// Raw records: one label per image and channel-major pixel bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub labels: Vec<u8>,
    pub pixels: Vec<u8>,
}

impl RawImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn parse_records(bytes: &[u8], expected_classes: usize) -> Result<RawImages> {
    let remainder = bytes.len() % RECORD_BYTES;
    if remainder != 0 {
        return Err(Error::Ingest {
            offset: (bytes.len() - remainder) as u64,
            message: format!(
                "file size {} is not a multiple of the {RECORD_BYTES}-byte record; {remainder} trailing bytes",
                bytes.len()
            ),
        });
    }
    if bytes.is_empty() {
        return Err(Error::Ingest {
            offset: 0,
            message: "file contains no records".into(),
        });
    }
    let mut labels = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    let mut pixels = Vec::with_capacity(bytes.len() / RECORD_BYTES * IMAGE_BYTES);
    for (i, record) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = record[0];
        if label as usize >= expected_classes {
            return Err(Error::Ingest {
                offset: (i * RECORD_BYTES) as u64,
                message: format!("label {label} is not below the expected {expected_classes} classes"),
            });
        }
        labels.push(label);
        pixels.extend_from_slice(&record[1..]);
    }
    Ok(RawImages { labels, pixels })
}

pub fn encode_records(raw: &RawImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(raw.len() * RECORD_BYTES);
    for (label, image) in raw.labels.iter().zip(raw.pixels.chunks_exact(IMAGE_BYTES)) {
        out.push(*label);
        out.extend_from_slice(image);
    }
    out
}

pub fn raw_to_dataset(raw: &RawImages, num_classes: usize, norm: &Normalization) -> Result<LabeledDataset> {
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    let features = raw
        .pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let c = (i / plane) % IMAGE_CHANNELS;
            ((p as f64 / 255.0 - norm.mean[c]) / norm.std[c]) as f32
        })
        .collect();
    let labels = raw.labels.iter().map(|&l| l as usize).collect();
    LabeledDataset::new(features, [IMAGE_CHANNELS, IMAGE_SIDE, IMAGE_SIDE], labels, num_classes)
}

/// Reads a CIFAR-layout binary file into a normalized dataset.
pub fn ingest_image_dataset(path: &Path, expected_classes: usize, norm: &Normalization) -> Result<LabeledDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = parse_records(&bytes, expected_classes)?;
    raw_to_dataset(&raw, expected_classes, norm)
}

pub fn export_records(path: &Path, raw: &RawImages) -> Result<()> {
    std::fs::write(path, encode_records(raw)).map_err(|e| Error::io(path, e))
}

/// Recipe for a synthetic image dataset of Gaussian class clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub per_class: usize,
    /// Channels, height, width.
    pub shape: [usize; 3],
    pub separation: f64,
    /// Draws the prototypes.
    pub seed: u64,
    /// Draws the examples from a separate stream when set, so two datasets
    /// can share prototypes without sharing examples.
    #[serde(default)]
    pub sample_seed: Option<u64>,
}

/// Each class gets a random prototype made of a per-channel offset plus a
/// spatial texture; examples are `separation * prototype + N(0, 1)` noise.
/// Examples are grouped by class.
pub fn synth_dataset(spec: &SynthSpec) -> Result<LabeledDataset> {
    if spec.classes < 2 {
        return Err(Error::Config("synthetic data needs at least 2 classes".into()));
    }
    if spec.shape.contains(&0) || !spec.separation.is_finite() || spec.separation < 0.0 {
        return Err(Error::Config("synthetic shape must be positive and separation finite and non-negative".into()));
    }
    let [c, h, w] = spec.shape;
    let dims = c * h * w;
    let mut rng = stream(spec.seed, purpose::SYNTH);
    let prototypes: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let offsets: Vec<f64> = (0..c).map(|_| rng.sample(StandardNormal)).collect();
            (0..dims)
                .map(|i| {
                    let texture: f64 = rng.sample(StandardNormal);
                    offsets[i / (h * w)] + 0.5 * texture
                })
                .collect()
        })
        .collect();
    if let Some(seed) = spec.sample_seed {
        rng = stream(seed, purpose::SYNTH);
    }
    let mut features = Vec::with_capacity(spec.classes * spec.per_class * dims);
    let mut labels = Vec::with_capacity(spec.classes * spec.per_class);
    for (label, proto) in prototypes.iter().enumerate() {
        for _ in 0..spec.per_class {
            for &p in proto {
                let noise: f64 = rng.sample(StandardNormal);
                features.push((spec.separation * p + noise) as f32);
            }
            labels.push(label);
        }
    }
    LabeledDataset::new(features, spec.shape, labels, spec.classes)
}

/// Holds out `fraction` of every class, at least one example for classes
/// with two or more examples, never a whole class. Returns `(train, val)`
/// index lists, each sorted.
pub fn stratified_holdout<R: Rng + ?Sized>(
    data: &LabeledDataset,
    fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Range(format!("holdout fraction {fraction} outside [0, 1)")));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for members in data.class_indices() {
        let n = members.len();
        let k = if n >= 2 {
            ((fraction * n as f64).round() as usize).clamp(1, n - 1)
        } else {
            0
        };
        let mut chosen = vec![false; n];
        for i in sample(rng, n, k) {
            chosen[i] = true;
        }
        for (i, idx) in members.into_iter().enumerate() {
            if chosen[i] { val.push(idx) } else { train.push(idx) }
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(n: usize, seed: u64) -> RawImages {
        let mut rng = stream(seed, 0);
        RawImages {
            labels: (0..n).map(|_| rng.random_range(0..10)).collect(),
            pixels: (0..n * IMAGE_BYTES).map(|_| rng.random()).collect(),
        }
    }

    #[test]
    fn two_records_parse() {
        let r = raw(2, 1);
        let bytes = encode_records(&r);
        assert_eq!(bytes.len(), 2 * RECORD_BYTES);
        let back = parse_records(&bytes, 10).unwrap();
        assert_eq!(back, r);
        let ds = raw_to_dataset(&back, 10, &Normalization::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.shape(), [3, 32, 32]);
    }

    #[test]
    fn size_remainder_named() {
        let mut bytes = encode_records(&raw(2, 2));
        bytes.extend_from_slice(&[0; 17]);
        let err = parse_records(&bytes, 10).unwrap_err();
        match err {
            Error::Ingest { offset, message } => {
                assert_eq!(offset, 2 * RECORD_BYTES as u64);
                assert!(message.contains("17 trailing"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn bad_label_offset() {
        let mut r = raw(3, 3);
        r.labels[2] = 10;
        match parse_records(&encode_records(&r), 10).unwrap_err() {
            Error::Ingest { offset, .. } => assert_eq!(offset, 2 * RECORD_BYTES as u64),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let r = raw(4, 4);
        export_records(&path, &r).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(parse_records(&bytes, 10).unwrap(), r);
        let ds = ingest_image_dataset(&path, 10, &Normalization::default()).unwrap();
        assert_eq!(ds.labels(), r.labels.iter().map(|&l| l as usize).collect::<Vec<_>>());
        let norm = Normalization::default();
        let v = ds.features()[IMAGE_SIDE * IMAGE_SIDE + 5];
        let p = r.pixels[IMAGE_SIDE * IMAGE_SIDE + 5] as f64;
        assert!((v as f64 - (p / 255.0 - norm.mean[1]) / norm.std[1]).abs() < 1e-5);
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SynthSpec {
            classes: 4,
            per_class: 5,
            shape: [3, 4, 4],
            separation: 2.0,
            seed: 9,
            sample_seed: None,
        };
        let a = synth_dataset(&spec).unwrap();
        let b = synth_dataset(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![5; 4]);
        assert!(synth_dataset(&SynthSpec { classes: 1, ..spec }).is_err());
    }

    #[test]
    fn sample_seed_keeps_prototypes() {
        let spec = SynthSpec {
            classes: 3,
            per_class: 400,
            shape: [1, 2, 2],
            separation: 1.0,
            seed: 4,
            sample_seed: Some(1),
        };
        let a = synth_dataset(&spec).unwrap();
        let b = synth_dataset(&SynthSpec { sample_seed: Some(2), ..spec.clone() }).unwrap();
        assert_ne!(a, b);
        let class_mean = |d: &LabeledDataset, c: usize| -> f64 {
            let rows: Vec<usize> = d.class_indices()[c].clone();
            rows.iter().map(|&i| d.example(i)[0] as f64).sum::<f64>() / rows.len() as f64
        };
        for c in 0..3 {
            assert!((class_mean(&a, c) - class_mean(&b, c)).abs() < 0.3);
        }
    }

    #[test]
    fn holdout_is_stratified() {
        let labels = [vec![0; 20], vec![1; 5], vec![2; 2], vec![3; 1]].concat();
        let data = LabeledDataset::new(vec![0.0; labels.len()], [1, 1, 1], labels, 4).unwrap();
        let (train, val) = stratified_holdout(&data, 0.1, &mut stream(0, 0)).unwrap();
        let count = |idx: &[usize], c: usize| idx.iter().filter(|&&i| data.labels()[i] == c).count();
        assert_eq!([0, 1, 2, 3].map(|c| count(&val, c)), [2, 1, 1, 0]);
        assert_eq!([0, 1, 2, 3].map(|c| count(&train, c)), [18, 4, 1, 1]);
        let mut all = [train, val].concat();
        all.sort_unstable();
        assert_eq!(all, (0..28).collect::<Vec<_>>());
    }
}
