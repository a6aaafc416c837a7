//! Contrastive cross-entropy against a centroid bank.
//!
//! Logits are `<f, m_j> / tau`. The hard-label loss is the `-log softmax` of
//! the target logit; the soft-label loss is the cross-entropy against a
//! label distribution. Gradients flow into the pre-normalisation parameters
//! through `df/dp = (I - f f^T) / |p|`; the bank is treated as constant.

use serde::{Deserialize, Serialize};

use crate::centroids::CentroidBank;
use crate::error::{Error, Result};
use crate::space::{dot, norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.05,
            beta: 0.8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "beta {} must lie in [0, 1]",
                self.beta
            )));
        }
        Ok(())
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature {tau} must be positive")))
    }
}

fn check_dim(f: &[f64], bank: &CentroidBank) -> Result<()> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if f.len() != bank.centroids().cols() {
        return Err(Error::DimensionMismatch {
            expected: bank.centroids().cols(),
            got: f.len(),
        });
    }
    Ok(())
}

/// Returns `(logits, log_softmax)` for feature `f`.
fn log_softmax(f: &[f64], bank: &CentroidBank, tau: f64) -> (Vec<f64>, Vec<f64>) {
    let logits: Vec<f64> = bank
        .centroids()
        .iter_rows()
        .map(|m| dot(f, m) / tau)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let logp = logits.iter().map(|z| z - lse).collect();
    (logits, logp)
}

pub fn cluster_nce_loss(f: &[f64], bank: &CentroidBank, target: usize, tau: f64) -> Result<f64> {
    check_temperature(tau)?;
    check_dim(f, bank)?;
    if target >= bank.len() {
        return Err(Error::Index {
            index: target,
            len: bank.len(),
        });
    }
    let (_, logp) = log_softmax(f, bank, tau);
    Ok(-logp[target])
}

fn check_label_row(y: &[f64], c: usize) -> Result<()> {
    if y.len() != c {
        return Err(Error::Label(format!(
            "expected {c} entries, got {}",
            y.len()
        )));
    }
    let total: f64 = y.iter().sum();
    if (total - 1.0).abs() > 1e-6 || y.iter().any(|&v| v < -1e-12 || !v.is_finite()) {
        return Err(Error::Label(format!(
            "row is not a distribution (sum {total})"
        )));
    }
    Ok(())
}

pub fn soft_ce_loss(f: &[f64], bank: &CentroidBank, label: &[f64], tau: f64) -> Result<f64> {
    check_temperature(tau)?;
    check_dim(f, bank)?;
    check_label_row(label, bank.len())?;
    let (_, logp) = log_softmax(f, bank, tau);
    Ok(-label.iter().zip(&logp).map(|(y, lp)| y * lp).sum::<f64>())
}

/// Mean soft cross-entropy over a batch and its gradient with respect to
/// each (unnormalised) parameter row.
pub fn batch_loss_and_grad(
    params: &Matrix,
    bank: &CentroidBank,
    labels: &Matrix,
    tau: f64,
) -> Result<(f64, Matrix)> {
    check_temperature(tau)?;
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if labels.rows() != params.rows() {
        return Err(Error::DimensionMismatch {
            expected: params.rows(),
            got: labels.rows(),
        });
    }
    let b = params.rows();
    if b == 0 {
        return Err(Error::EmptyInput);
    }
    let d = params.cols();
    let scale = 1.0 / b as f64;
    let mut grads = Matrix::zeros(b, d);
    let mut total = 0.0;
    for i in 0..b {
        let p = params.row(i);
        let len = norm(p);
        if len == 0.0 || !len.is_finite() {
            return Err(Error::ZeroVector { row: i });
        }
        let f: Vec<f64> = p.iter().map(|x| x / len).collect();
        check_dim(&f, bank)?;
        let y = labels.row(i);
        check_label_row(y, bank.len())?;
        let (_, logp) = log_softmax(&f, bank, tau);
        total -= y.iter().zip(&logp).map(|(y, lp)| y * lp).sum::<f64>();

        // dL/dz_j = softmax_j * sum(y) - y_j, and dz_j/df = m_j / tau
        let mass: f64 = y.iter().sum();
        let mut gf = vec![0.0; d];
        for (j, m) in bank.centroids().iter_rows().enumerate() {
            let w = (logp[j].exp() * mass - y[j]) / tau;
            gf.iter_mut().zip(m).for_each(|(g, mj)| *g += w * mj);
        }
        let radial = dot(&f, &gf);
        let out = grads.row_mut(i);
        for k in 0..d {
            out[k] = scale * (gf[k] - f[k] * radial) / len;
        }
    }
    Ok((total * scale, grads))
}
