//! Domain types shared across the pipeline.

use crate::error::{Error, Result};
use crate::space::{normalize_in_place, Matrix};

/// Learnable per-sample parameters and the unit-norm features derived from them.
///
/// `params` plays the part of an encoder output; `features` is always the row
/// normalization of `params` and is refreshed after every parameter update.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    params: Matrix,
    features: Matrix,
}

impl FeatureStore {
    pub fn from_params(params: Matrix) -> Result<Self> {
        if params.rows() == 0 || params.cols() == 0 {
            return Err(Error::EmptyInput);
        }
        let mut store = Self {
            features: params.clone(),
            params,
        };
        for i in 0..store.count() {
            store.refresh_row(i)?;
        }
        Ok(store)
    }

    pub fn params(&self) -> &Matrix {
        &self.params
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.params.cols()
    }

    pub fn count(&self) -> usize {
        self.params.rows()
    }

    /// Applies `params[i] -= step * grad` for each listed row and re-derives the features.
    pub fn apply_gradient(&mut self, rows: &[usize], grads: &Matrix, step: f64) -> Result<()> {
        if grads.rows() != rows.len() || grads.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: rows.len() * self.dim(),
                got: grads.rows() * grads.cols(),
            });
        }
        for (k, &i) in rows.iter().enumerate() {
            if i >= self.count() {
                return Err(Error::Index {
                    index: i,
                    len: self.count(),
                });
            }
            let g = grads.row(k);
            self.params
                .row_mut(i)
                .iter_mut()
                .zip(g)
                .for_each(|(p, g)| *p -= step * g);
        }
        for &i in rows {
            self.refresh_row(i)?;
        }
        Ok(())
    }

    fn refresh_row(&mut self, i: usize) -> Result<()> {
        let src = self.params.row(i).to_vec();
        let dst = self.features.row_mut(i);
        dst.copy_from_slice(&src);
        normalize_in_place(dst, i).map(|_| ())
    }
}

/// Per-sample pseudo labels for one epoch. `None` marks an outlier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    labels: Vec<Option<usize>>,
    num_clusters: usize,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<Option<usize>>, num_clusters: usize) -> Result<Self> {
        for l in labels.iter().flatten() {
            if *l >= num_clusters {
                return Err(Error::Index {
                    index: *l,
                    len: num_clusters,
                });
            }
        }
        Ok(Self {
            labels,
            num_clusters,
        })
    }

    /// Builds an assignment from arbitrary cluster keys, relabelling clusters
    /// to `0..C` by ascending smallest member index.
    pub fn from_raw_labels(raw: &[Option<usize>]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                l.map(|key| {
                    let next = remap.len();
                    *remap.entry(key).or_insert(next)
                })
            })
            .collect();
        Self {
            labels,
            num_clusters: remap.len(),
        }
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_outliers(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for l in self.labels.iter().flatten() {
            sizes[*l] += 1;
        }
        sizes
    }

    /// Turns members of single-sample clusters into outliers and compacts ids.
    pub fn demote_singletons(&self) -> Self {
        let sizes = self.cluster_sizes();
        let raw: Vec<Option<usize>> = self
            .labels
            .iter()
            .map(|l| l.filter(|c| sizes[*c] >= 2))
            .collect();
        Self::from_raw_labels(&raw)
    }
}

/// Ground-truth identities and camera tags. Only evaluation and data
/// generation read this.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub identities: Vec<usize>,
    pub camera_ids: Vec<usize>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }
}
