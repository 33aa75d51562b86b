use crate::Label;

/// A dense batch of labelled feature vectors stored row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Samples {
    dims: usize,
    labels: Vec<Label>,
    features: Vec<f64>,
}

impl Samples {
    pub fn new(dims: usize) -> Self {
        Self {
            dims,
            labels: Vec::new(),
            features: Vec::new(),
        }
    }

    pub fn with_capacity(dims: usize, n: usize) -> Self {
        Self {
            dims,
            labels: Vec::with_capacity(n),
            features: Vec::with_capacity(n * dims),
        }
    }

    /// Panics if `features.len() != dims`.
    pub fn push(&mut self, label: Label, features: &[f64]) {
        assert_eq!(features.len(), self.dims, "feature dimension mismatch");
        self.labels.push(label);
        self.features.extend_from_slice(features);
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dims..(i + 1) * self.dims]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Label, &[f64])> + '_ {
        self.labels
            .iter()
            .copied()
            .zip(self.features.chunks_exact(self.dims.max(1)))
    }

    /// Iterates the first `n` samples whose label lies in `labels` (all labels
    /// when `None`).
    pub fn view(
        &self,
        n: usize,
        labels: Option<std::ops::Range<Label>>,
    ) -> impl Iterator<Item = (Label, &[f64])> + '_ {
        self.iter()
            .take(n)
            .filter(move |(l, _)| labels.as_ref().is_none_or(|r| r.contains(l)))
    }
}
