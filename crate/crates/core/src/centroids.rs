//! Cluster centroid banks and the threshold schedules that drive the
//! confidence filter.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::clustering::cluster_members;
use crate::confidence::ConfidenceReport;
use crate::error::{Error, Result};
use crate::space::{normalize_in_place, Matrix};
use crate::types::ClusterAssignment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankMode {
    Vanilla,
    ConfidenceGuided,
}

/// `C x d` unit-norm centroids, one per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidBank {
    centroids: Matrix,
    mode: BankMode,
    momentum: f64,
    member_counts: Vec<usize>,
    /// Members that entered the centroid mean (equals `member_counts` for vanilla banks).
    filtered_counts: Vec<usize>,
}

impl CentroidBank {
    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn mode(&self) -> BankMode {
        self.mode
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn len(&self) -> usize {
        self.centroids.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.rows() == 0
    }

    pub fn member_counts(&self) -> &[usize] {
        &self.member_counts
    }

    pub fn filtered_counts(&self) -> &[usize] {
        &self.filtered_counts
    }

    pub fn with_momentum(mut self, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum {momentum} must lie in [0, 1]"
            )));
        }
        self.momentum = momentum;
        Ok(self)
    }

    /// `m <- mu * m + (1 - mu) * f`, then re-normalised.
    pub fn momentum_update(&mut self, cluster_id: usize, f: &[f64]) -> Result<()> {
        if cluster_id >= self.len() {
            return Err(Error::Index {
                index: cluster_id,
                len: self.len(),
            });
        }
        if f.len() != self.centroids.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.centroids.cols(),
                got: f.len(),
            });
        }
        let mu = self.momentum;
        let row = self.centroids.row_mut(cluster_id);
        let before = row.to_vec();
        row.iter_mut()
            .zip(f)
            .for_each(|(m, x)| *m = mu * *m + (1.0 - mu) * x);
        if normalize_in_place(row, cluster_id).is_err() {
            // f antipodal to m at mu = 0.5 cancels exactly; keep the old centroid
            row.copy_from_slice(&before);
        }
        Ok(())
    }

    /// Appends `epoch,cluster_id,member_count,filtered_count,c_0..` rows.
    pub fn write_snapshot<W: Write>(&self, out: &mut csv::Writer<W>, epoch: usize) -> Result<()> {
        for k in 0..self.len() {
            let mut rec = vec![
                epoch.to_string(),
                k.to_string(),
                self.member_counts[k].to_string(),
                self.filtered_counts[k].to_string(),
            ];
            rec.extend(self.centroids.row(k).iter().map(|x| format!("{x:.16e}")));
            out.write_record(&rec)?;
        }
        Ok(())
    }
}

pub fn snapshot_header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = ["epoch", "cluster_id", "member_count", "filtered_count"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..dim).map(|j| format!("c_{j}")));
    h
}

fn mean_direction(features: &Matrix, members: &[usize], cluster: usize) -> Result<Vec<f64>> {
    let mut m = vec![0.0; features.cols()];
    for &i in members {
        m.iter_mut().zip(features.row(i)).for_each(|(a, x)| *a += x);
    }
    let n = members.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    normalize_in_place(&mut m, cluster)?;
    Ok(m)
}

const DEFAULT_MOMENTUM: f64 = 0.5;

/// Normalised mean of all members of each cluster.
pub fn vanilla_centroids(assign: &ClusterAssignment, features: &Matrix) -> Result<CentroidBank> {
    let members = cluster_members(assign);
    if members.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let mut data = Vec::with_capacity(members.len() * features.cols());
    for (k, m) in members.iter().enumerate() {
        if m.is_empty() {
            return Err(Error::EmptyPartition);
        }
        data.extend(mean_direction(features, m, k)?);
    }
    let counts: Vec<usize> = members.iter().map(Vec::len).collect();
    Ok(CentroidBank {
        centroids: Matrix::from_vec(members.len(), features.cols(), data)?,
        mode: BankMode::Vanilla,
        momentum: DEFAULT_MOMENTUM,
        filtered_counts: counts.clone(),
        member_counts: counts,
    })
}

/// Normalised mean over members with `s_i > delta`. A cluster whose members
/// all fall at or below `delta` keeps its all-member centroid.
pub fn confidence_guided_centroids(
    assign: &ClusterAssignment,
    features: &Matrix,
    conf: &ConfidenceReport,
    delta: f64,
) -> Result<CentroidBank> {
    if conf.len() != assign.len() {
        return Err(Error::DimensionMismatch {
            expected: assign.len(),
            got: conf.len(),
        });
    }
    let members = cluster_members(assign);
    if members.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let mut data = Vec::with_capacity(members.len() * features.cols());
    let mut filtered_counts = Vec::with_capacity(members.len());
    for (k, m) in members.iter().enumerate() {
        if m.is_empty() {
            return Err(Error::EmptyPartition);
        }
        let kept: Vec<usize> = m
            .iter()
            .copied()
            .filter(|&i| conf.scores[i] > delta)
            .collect();
        let chosen = if kept.is_empty() { m } else { &kept };
        filtered_counts.push(chosen.len());
        data.extend(mean_direction(features, chosen, k)?);
    }
    Ok(CentroidBank {
        centroids: Matrix::from_vec(members.len(), features.cols(), data)?,
        mode: BankMode::ConfidenceGuided,
        momentum: DEFAULT_MOMENTUM,
        member_counts: members.iter().map(Vec::len).collect(),
        filtered_counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `delta0 * t / T + offset`
    Linear,
    /// `delta0 * tanh(0.1 * (t - T / 2))`
    Dynamic,
    /// `constant_value` at every epoch
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSchedule {
    pub kind: ScheduleKind,
    pub delta0: f64,
    pub offset: f64,
    pub constant_value: f64,
    pub total_epochs: usize,
}

impl ThresholdSchedule {
    pub fn linear(delta0: f64, offset: f64, total_epochs: usize) -> Self {
        Self {
            kind: ScheduleKind::Linear,
            delta0,
            offset,
            constant_value: 0.0,
            total_epochs,
        }
    }

    pub fn dynamic(delta0: f64, total_epochs: usize) -> Self {
        Self {
            kind: ScheduleKind::Dynamic,
            delta0,
            offset: 0.0,
            constant_value: 0.0,
            total_epochs,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            delta0: 0.0,
            offset: 0.0,
            constant_value: value,
            total_epochs: 0,
        }
    }

    /// Short human label, e.g. `linear`, `constant(-0.1)`.
    pub fn label(&self) -> String {
        match self.kind {
            ScheduleKind::Linear => "linear".into(),
            ScheduleKind::Dynamic => "dynamic".into(),
            ScheduleKind::Constant => format!("constant({})", self.constant_value),
        }
    }
}

pub fn threshold_at(sched: &ThresholdSchedule, epoch: usize) -> Result<f64> {
    let t = epoch as f64;
    let total = sched.total_epochs as f64;
    let needs_total = matches!(sched.kind, ScheduleKind::Linear | ScheduleKind::Dynamic);
    if needs_total && sched.total_epochs == 0 {
        return Err(Error::Config(
            "threshold schedule needs total_epochs > 0".into(),
        ));
    }
    if needs_total && epoch > sched.total_epochs {
        return Err(Error::Config(format!(
            "epoch {epoch} beyond schedule length {}",
            sched.total_epochs
        )));
    }
    let delta = match sched.kind {
        ScheduleKind::Linear => sched.delta0 * t / total + sched.offset,
        ScheduleKind::Dynamic => sched.delta0 * (0.1 * (t - total / 2.0)).tanh(),
        ScheduleKind::Constant => sched.constant_value,
    };
    if !(delta > -1.0 && delta < 1.0) {
        return Err(Error::Config(format!(
            "threshold {delta} at epoch {epoch} outside (-1, 1)"
        )));
    }
    Ok(delta)
}
