use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labelled examples with image-shaped features `[channels, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f32>,
    shape: [usize; 3],
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f32>,
        shape: [usize; 3],
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let dims: usize = shape.iter().product();
        if dims == 0 {
            return Err(Error::Shape(format!("feature shape {shape:?} has a zero dimension")));
        }
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if features.len() != labels.len() * dims {
            return Err(Error::Shape(format!(
                "{} feature values do not match {} labels of {dims} dims",
                features.len(),
                labels.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::Index(format!(
                "label {y} at example {i} is not below {num_classes} classes"
            )));
        }
        Ok(LabeledDataset {
            features,
            shape,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn feature_dims(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn example(&self, i: usize) -> &[f32] {
        let d = self.feature_dims();
        &self.features[i * d..(i + 1) * d]
    }

    /// Examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let d = self.feature_dims();
        let mut features = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            features.extend_from_slice(self.example(i));
        }
        LabeledDataset {
            features,
            shape: self.shape,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Per-class example counts indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Indices of each class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    /// Batch tensor and labels for `indices`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.feature_dims();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend(self.example(i).iter().map(|&v| v as f64));
        }
        let [c, h, w] = self.shape;
        (
            Tensor::from_vec(indices.len(), c, h, w, data),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn all(&self) -> (Tensor, Vec<usize>) {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }
}
