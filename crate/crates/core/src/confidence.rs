//! Silhouette scores as per-sample clustering confidence.
//!
//! `a_i` is the mean cosine distance from sample `i` to the rest of its own
//! cluster, `b_i` the smallest mean distance to any other cluster, and
//! `s_i = (b_i - a_i) / max(a_i, b_i)`. Members of single-sample clusters,
//! and every sample of a one-cluster partition, score exactly 0.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{unit_cosine_distance, Matrix};
use crate::types::ClusterAssignment;

/// Normalisation used for the intra-cluster mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntraDenominator {
    /// `|C_I| - 1`, the usual silhouette definition.
    #[default]
    Canonical,
    /// `|C_I|`, which biases `a_i` low for small clusters.
    IncludeSelf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceReport {
    pub scores: Vec<f64>,
    /// False for outliers, whose score is meaningless.
    pub valid: Vec<bool>,
}

impl ConfidenceReport {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn valid_scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores
            .iter()
            .zip(&self.valid)
            .filter_map(|(s, v)| v.then_some(*s))
    }

    /// Mean over valid samples; 0 when there are none.
    pub fn mean(&self) -> f64 {
        let (sum, n) = self
            .valid_scores()
            .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Sum of distances from `i` to the members of every cluster, plus cluster sizes.
fn cluster_sums(i: usize, assign: &ClusterAssignment, features: &Matrix) -> (Vec<f64>, Vec<usize>) {
    let c = assign.num_clusters();
    let mut sums = vec![0.0; c];
    let mut sizes = vec![0usize; c];
    let fi = features.row(i);
    for (j, l) in assign.labels().iter().enumerate() {
        if let Some(k) = l {
            sizes[*k] += 1;
            if j != i {
                sums[*k] += unit_cosine_distance(fi, features.row(j));
            }
        }
    }
    (sums, sizes)
}

fn own_cluster(i: usize, assign: &ClusterAssignment) -> Result<usize> {
    if i >= assign.len() {
        return Err(Error::Index {
            index: i,
            len: assign.len(),
        });
    }
    assign.label(i).ok_or(Error::OutlierSample { sample: i })
}

fn intra_from(own: usize, sums: &[f64], sizes: &[usize], denom: IntraDenominator) -> f64 {
    let size = sizes[own];
    let d = match denom {
        IntraDenominator::Canonical => size - 1,
        IntraDenominator::IncludeSelf => size,
    };
    sums[own] / d as f64
}

fn nearest_from(own: usize, sums: &[f64], sizes: &[usize]) -> f64 {
    sums.iter()
        .zip(sizes)
        .enumerate()
        .filter(|(k, (_, n))| *k != own && **n > 0)
        .map(|(_, (s, n))| s / *n as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Mean distance from `i` to the other members of its cluster.
pub fn intra_distance(
    i: usize,
    assign: &ClusterAssignment,
    features: &Matrix,
    denom: IntraDenominator,
) -> Result<f64> {
    let own = own_cluster(i, assign)?;
    let (sums, sizes) = cluster_sums(i, assign, features);
    if sizes[own] < 2 {
        return Err(Error::SingletonCluster { sample: i });
    }
    Ok(intra_from(own, &sums, &sizes, denom))
}

/// Smallest mean distance from `i` to the members of any other cluster.
pub fn nearest_other_distance(
    i: usize,
    assign: &ClusterAssignment,
    features: &Matrix,
) -> Result<f64> {
    let own = own_cluster(i, assign)?;
    let (sums, sizes) = cluster_sums(i, assign, features);
    let b = nearest_from(own, &sums, &sizes);
    if b.is_finite() {
        Ok(b)
    } else {
        Err(Error::SingleClusterPartition)
    }
}

pub fn silhouette_scores(
    assign: &ClusterAssignment,
    features: &Matrix,
    denom: IntraDenominator,
) -> Result<ConfidenceReport> {
    if assign.len() != features.rows() {
        return Err(Error::DimensionMismatch {
            expected: features.rows(),
            got: assign.len(),
        });
    }
    let populated = assign.cluster_sizes().iter().filter(|&&s| s > 0).count();
    let scores: Vec<f64> = (0..assign.len())
        .into_par_iter()
        .map(|i| {
            let Some(own) = assign.label(i) else {
                return 0.0;
            };
            if populated < 2 {
                return 0.0;
            }
            let (sums, sizes) = cluster_sums(i, assign, features);
            if sizes[own] < 2 {
                return 0.0;
            }
            let a = intra_from(own, &sums, &sizes, denom);
            let b = nearest_from(own, &sums, &sizes);
            let m = a.max(b);
            if m <= 0.0 {
                0.0
            } else {
                ((b - a) / m).clamp(-1.0, 1.0)
            }
        })
        .collect();
    let valid = assign.labels().iter().map(Option::is_some).collect();
    Ok(ConfidenceReport { scores, valid })
}

/// Appends `epoch,sample_id,cluster_id,silhouette` rows for every clustered sample.
pub fn write_score_dump<W: Write>(
    out: &mut csv::Writer<W>,
    epoch: usize,
    assign: &ClusterAssignment,
    report: &ConfidenceReport,
) -> Result<()> {
    for (i, l) in assign.labels().iter().enumerate() {
        if let Some(c) = l {
            out.write_record([
                epoch.to_string(),
                i.to_string(),
                c.to_string(),
                format!("{:.17e}", report.scores[i]),
            ])?;
        }
    }
    Ok(())
}

pub const SCORE_DUMP_HEADER: [&str; 4] = ["epoch", "sample_id", "cluster_id", "silhouette"];
