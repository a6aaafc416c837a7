//! Soft pseudo labels built from sample-to-centroid distances.
//!
//! `P(i, j)` is `sigmoid(-D(i, j))` normalised over centroids, and the final
//! label mixes it with the one-hot cluster id: `beta * y_i + (1 - beta) * P(i)`.

use crate::centroids::CentroidBank;
use crate::error::{Error, Result};
use crate::space::{dot, Matrix};
use crate::types::ClusterAssignment;

/// Row-stochastic `N x C` labels. Rows of outliers are zero and masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMatrix {
    pub labels: Matrix,
    pub valid: Vec<bool>,
    pub beta: f64,
}

/// `D(i, j) = 1 - <f_i, m_j>` for unit-norm rows.
pub fn distance_matrix(features: &Matrix, bank: &CentroidBank) -> Result<Matrix> {
    let centroids = bank.centroids();
    if features.cols() != centroids.cols() {
        return Err(Error::DimensionMismatch {
            expected: centroids.cols(),
            got: features.cols(),
        });
    }
    let mut d = Matrix::zeros(features.rows(), centroids.rows());
    for i in 0..features.rows() {
        let f = features.row(i);
        for (j, out) in d.row_mut(i).iter_mut().enumerate() {
            *out = 1.0 - dot(f, centroids.row(j));
        }
    }
    Ok(d)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn confidence_matrix(distances: &Matrix) -> Result<Matrix> {
    if distances.cols() == 0 {
        return Err(Error::EmptyBank);
    }
    let mut p = distances.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::Label(format!("non-finite distance in row {i}")));
        }
        row.iter_mut().for_each(|x| *x = sigmoid(-*x));
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
    }
    Ok(p)
}

/// Mixes one-hot targets with rows of `confidence`. Rows whose target is
/// `None` are left at zero.
pub fn mix_labels(targets: &[Option<usize>], confidence: &Matrix, beta: f64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta {beta} must lie in [0, 1]")));
    }
    if targets.len() != confidence.rows() {
        return Err(Error::DimensionMismatch {
            expected: confidence.rows(),
            got: targets.len(),
        });
    }
    let c = confidence.cols();
    let mut out = Matrix::zeros(targets.len(), c);
    for (i, t) in targets.iter().enumerate() {
        let Some(t) = *t else { continue };
        if t >= c {
            return Err(Error::Index { index: t, len: c });
        }
        let row = out.row_mut(i);
        for (j, (y, p)) in row.iter_mut().zip(confidence.row(i)).enumerate() {
            let hot = if j == t { 1.0 } else { 0.0 };
            *y = beta * hot + (1.0 - beta) * p;
        }
    }
    Ok(out)
}

/// Soft labels for every sample of `assign`; `confidence` rows follow sample order.
pub fn confidence_guided_labels(
    assign: &ClusterAssignment,
    confidence: &Matrix,
    beta: f64,
) -> Result<SoftLabelMatrix> {
    let labels = mix_labels(assign.labels(), confidence, beta)?;
    Ok(SoftLabelMatrix {
        labels,
        valid: assign.labels().iter().map(Option::is_some).collect(),
        beta,
    })
}

/// One-hot rows, the `beta = 1` special case without needing a bank.
pub fn one_hot_labels(targets: &[usize], num_clusters: usize) -> Result<Matrix> {
    let mut out = Matrix::zeros(targets.len(), num_clusters);
    for (i, &t) in targets.iter().enumerate() {
        if t >= num_clusters {
            return Err(Error::Index {
                index: t,
                len: num_clusters,
            });
        }
        out.set(i, t, 1.0);
    }
    Ok(out)
}
