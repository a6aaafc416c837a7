//! Reference implementations written directly from the definitions, kept
//! apart from the library code they check.

#![allow(dead_code)]

use cgclab::centroids::{vanilla_centroids, CentroidBank};
use cgclab::{ClusterAssignment, Matrix};
use rand::Rng;

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn random_unit_rows<R: Rng>(rng: &mut R, n: usize, d: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            unit(
                &(0..d)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

/// A bank whose rows are exactly `rows` (each row its own cluster).
pub fn bank_from_rows(rows: &Matrix) -> CentroidBank {
    let c = rows.rows();
    let a = ClusterAssignment::new((0..c).map(Some).collect(), c).unwrap();
    vanilla_centroids(&a, rows).unwrap()
}

/// Mean over rows of `-sum_j y_j log softmax(<p/|p|, m_j> / tau)_j`.
pub fn literal_batch_loss(params: &Matrix, bank: &Matrix, labels: &Matrix, tau: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..params.rows() {
        let f = unit(params.row(i));
        let z: Vec<f64> = (0..bank.rows())
            .map(|j| f.iter().zip(bank.row(j)).map(|(a, b)| a * b).sum::<f64>() / tau)
            .collect();
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
        total -= labels
            .row(i)
            .iter()
            .zip(&z)
            .map(|(y, v)| y * (v - lse))
            .sum::<f64>();
    }
    total / params.rows() as f64
}

/// Central differences of `literal_batch_loss` in every parameter coordinate.
pub fn finite_difference_grad(
    params: &Matrix,
    bank: &Matrix,
    labels: &Matrix,
    tau: f64,
    h: f64,
) -> Matrix {
    let mut g = Matrix::zeros(params.rows(), params.cols());
    for i in 0..params.rows() {
        for k in 0..params.cols() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.set(i, k, params.get(i, k) + h);
            minus.set(i, k, params.get(i, k) - h);
            let d = (literal_batch_loss(&plus, bank, labels, tau)
                - literal_batch_loss(&minus, bank, labels, tau))
                / (2.0 * h);
            g.set(i, k, d);
        }
    }
    g
}

fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

/// Silhouette straight from its definition: mean distance to the other
/// members of the own cluster (over |C| - 1, or |C| when `include_self`),
/// minimum over other clusters of the mean distance to their members, and
/// `(b - a) / max(a, b)`. Singletons, outliers and one-cluster partitions get
/// `None` or 0 as the definition dictates.
pub fn literal_silhouette(
    labels: &[Option<usize>],
    x: &Matrix,
    include_self: bool,
) -> Vec<Option<f64>> {
    let n = labels.len();
    let clusters: Vec<usize> = {
        let mut c: Vec<usize> = labels.iter().flatten().copied().collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    (0..n)
        .map(|i| {
            let ci = labels[i]?;
            let own: Vec<usize> = (0..n).filter(|&j| labels[j] == Some(ci)).collect();
            if own.len() == 1 || clusters.len() < 2 {
                return Some(0.0);
            }
            let sum: f64 = own
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| cos_dist(x.row(i), x.row(j)))
                .sum();
            let a = if include_self {
                sum / own.len() as f64
            } else {
                sum / (own.len() - 1) as f64
            };
            let b = clusters
                .iter()
                .filter(|&&c| c != ci)
                .map(|&c| {
                    let m: Vec<usize> = (0..n).filter(|&j| labels[j] == Some(c)).collect();
                    m.iter().map(|&j| cos_dist(x.row(i), x.row(j))).sum::<f64>() / m.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            let top = a.max(b);
            Some(if top == 0.0 { 0.0 } else { (b - a) / top })
        })
        .collect()
}

/// Density-connected components by repeated relaxation over the core graph,
/// returned as sets; border points join the component of their
/// lowest-index core neighbour's component key.
pub fn reference_dbscan(x: &Matrix, eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = x.rows();
    let near = |i: usize, j: usize| {
        i == j
            || 1.0
                - x.row(i)
                    .iter()
                    .zip(x.row(j))
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                <= eps
    };
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
        .collect();
    // label propagation: every core point takes the minimum id among its core neighbours
    let mut comp: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for i in (0..n).filter(|&i| core[i]) {
            for j in (0..n).filter(|&j| core[j] && near(i, j)) {
                if comp[j] < comp[i] {
                    comp[i] = comp[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                Some(comp[i])
            } else {
                (0..n)
                    .filter(|&j| core[j] && near(i, j))
                    .map(|j| comp[j])
                    .min()
            }
        })
        .collect()
}

pub fn as_sets(
    labels: &[Option<usize>],
) -> std::collections::BTreeSet<std::collections::BTreeSet<usize>> {
    let mut groups: std::collections::BTreeMap<usize, std::collections::BTreeSet<usize>> =
        Default::default();
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            groups.entry(*c).or_default().insert(i);
        }
    }
    groups.into_values().collect()
}

/// Random points around three random centres, unit-normalised.
pub fn clustered_instance<R: Rng>(rng: &mut R, n: usize, d: usize, spread: f64) -> Matrix {
    let centres: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let c = &centres[rng.random_range(0..3)];
            unit(
                &c.iter()
                    .map(|x| x + rng.random_range(-spread..spread))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}
