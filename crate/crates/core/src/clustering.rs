//! DBSCAN under cosine distance.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{unit_cosine_distance, Matrix};
use crate::types::ClusterAssignment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbscanParams {
    /// Neighbourhood radius in cosine distance.
    pub eps: f64,
    /// Neighbours (self included) needed for a core point.
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self {
            eps: 0.5,
            min_pts: 4,
        }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 2.0) {
            return Err(Error::Config(format!(
                "dbscan eps {} must lie in (0, 2)",
                self.eps
            )));
        }
        if self.min_pts < 2 {
            return Err(Error::Config("dbscan min_pts must be at least 2".into()));
        }
        Ok(())
    }
}

fn neighbourhoods(features: &Matrix, eps: f64) -> Vec<Vec<usize>> {
    (0..features.rows())
        .into_par_iter()
        .map(|i| {
            let fi = features.row(i);
            (0..features.rows())
                .filter(|&j| j == i || unit_cosine_distance(fi, features.row(j)) <= eps)
                .collect()
        })
        .collect()
}

/// Clusters unit-norm rows. Core points are expanded in ascending index order;
/// a border point joins the first cluster that reaches it. Cluster ids are
/// ordered by each cluster's smallest member index.
pub fn dbscan(features: &Matrix, params: &DbscanParams) -> Result<ClusterAssignment> {
    params.validate()?;
    let n = features.rows();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let neigh = neighbourhoods(features, params.eps);
    let core: Vec<bool> = neigh.iter().map(|nb| nb.len() >= params.min_pts).collect();

    let mut raw: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if raw[seed].is_some() || !core[seed] {
            continue;
        }
        raw[seed] = Some(next);
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for &q in &neigh[p] {
                if raw[q].is_none() {
                    raw[q] = Some(next);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
        next += 1;
    }
    Ok(ClusterAssignment::from_raw_labels(&raw))
}

/// Member indices per cluster, each list ascending.
pub fn cluster_members(assign: &ClusterAssignment) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); assign.num_clusters()];
    for (i, l) in assign.labels().iter().enumerate() {
        if let Some(c) = l {
            members[*c].push(i);
        }
    }
    members
}
