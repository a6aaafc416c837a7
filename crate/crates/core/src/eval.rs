//! Retrieval metrics and pseudo-label diagnostics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::cluster_members;
use crate::confidence::ConfidenceReport;
use crate::error::{Error, Result};
use crate::space::{dot, Matrix};
use crate::types::{ClusterAssignment, GroundTruth};

pub const CMC_KS: [usize; 3] = [1, 5, 10];
pub const HISTOGRAM_BINS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// Identity weights from every cluster member.
    Vanilla,
    /// Identity weights from the members above the confidence threshold.
    Cgc,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcsAveraging {
    /// Mean identity weight over the boundary samples.
    #[default]
    Boundary,
    /// Mean identity weight over every member of the cluster.
    AllMembers,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub query_fraction: f64,
    pub exclude_same_camera: bool,
    pub ics_boundary_fraction: f64,
    pub ics_min_cluster_size: usize,
    pub ics_averaging: IcsAveraging,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            query_fraction: 0.2,
            exclude_same_camera: false,
            ics_boundary_fraction: 0.05,
            ics_min_cluster_size: 20,
            ics_averaging: IcsAveraging::Boundary,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.query_fraction > 0.0 && self.query_fraction < 1.0) {
            return Err(Error::Config("query_fraction must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.ics_boundary_fraction) {
            return Err(Error::Config(
                "ics_boundary_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalMetrics {
    pub map: f64,
    pub cmc: BTreeMap<usize, f64>,
}

/// Gallery ranked by descending similarity, ties broken by ascending sample
/// index, as a vector of "is a true match" flags.
fn ranked_matches(
    features: &Matrix,
    q: usize,
    gallery: &[usize],
    truth: &GroundTruth,
    exclude_same_camera: bool,
) -> Result<Vec<bool>> {
    let fq = features.row(q);
    let gid = truth.identities[q];
    let cam = truth.camera_ids[q];
    let mut scored: Vec<(f64, usize)> = gallery
        .iter()
        .filter(|&&g| {
            !(exclude_same_camera && truth.identities[g] == gid && truth.camera_ids[g] == cam)
        })
        .map(|&g| (dot(fq, features.row(g)), g))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let flags: Vec<bool> = scored
        .iter()
        .map(|&(_, g)| truth.identities[g] == gid)
        .collect();
    if !flags.iter().any(|&m| m) {
        return Err(Error::Eval(format!(
            "query {q} (identity {gid}) has no match in the gallery"
        )));
    }
    Ok(flags)
}

fn average_precision(flags: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &m) in flags.iter().enumerate() {
        if m {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    sum / hits as f64
}

fn check_inputs(
    features: &Matrix,
    query: &[usize],
    gallery: &[usize],
    truth: &GroundTruth,
) -> Result<()> {
    if query.is_empty() || gallery.is_empty() {
        return Err(Error::Eval("empty query or gallery".into()));
    }
    let n = features.rows();
    if truth.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: truth.len(),
        });
    }
    if let Some(&bad) = query.iter().chain(gallery).find(|&&i| i >= n) {
        return Err(Error::Index { index: bad, len: n });
    }
    Ok(())
}

/// mAP and CMC top-k in a single ranking pass.
pub fn evaluate_retrieval(
    features: &Matrix,
    query: &[usize],
    gallery: &[usize],
    truth: &GroundTruth,
    ks: &[usize],
    exclude_same_camera: bool,
) -> Result<RetrievalMetrics> {
    check_inputs(features, query, gallery, truth)?;
    let ranked: Vec<Vec<bool>> = query
        .par_iter()
        .map(|&q| ranked_matches(features, q, gallery, truth, exclude_same_camera))
        .collect::<Result<_>>()?;
    let nq = ranked.len() as f64;
    let map = ranked.iter().map(|f| average_precision(f)).sum::<f64>() / nq;
    let cmc = ks
        .iter()
        .map(|&k| {
            let hits = ranked
                .iter()
                .filter(|f| f.iter().take(k).any(|&m| m))
                .count();
            (k, hits as f64 / nq)
        })
        .collect();
    Ok(RetrievalMetrics { map, cmc })
}

pub fn mean_average_precision(
    features: &Matrix,
    query: &[usize],
    gallery: &[usize],
    truth: &GroundTruth,
) -> Result<f64> {
    Ok(evaluate_retrieval(features, query, gallery, truth, &[], false)?.map)
}

pub fn cmc_topk(
    features: &Matrix,
    query: &[usize],
    gallery: &[usize],
    truth: &GroundTruth,
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    Ok(evaluate_retrieval(features, query, gallery, truth, ks, false)?.cmc)
}

/// Identity consistency of one cluster's boundary samples with its centroid.
///
/// The boundary set is the `ceil(boundary_fraction * |C|)` members with the
/// lowest silhouette (ties by index). Identity weights `q_g` are the share of
/// identity `g` among all members (`Vanilla`) or among members with
/// `s_i > delta` (`Cgc`, falling back to all members when none pass).
pub fn identity_consistency_score(
    members: &[usize],
    truth: &GroundTruth,
    conf: &ConfidenceReport,
    boundary_fraction: f64,
    source: WeightSource,
    delta: f64,
    averaging: IcsAveraging,
) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::IcsUndefined);
    }
    let weight_members: Vec<usize> = match source {
        WeightSource::Vanilla => members.to_vec(),
        WeightSource::Cgc => {
            let kept: Vec<usize> = members
                .iter()
                .copied()
                .filter(|&i| conf.scores[i] > delta)
                .collect();
            if kept.is_empty() {
                members.to_vec()
            } else {
                kept
            }
        }
    };
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &i in &weight_members {
        *counts.entry(truth.identities[i]).or_default() += 1;
    }
    let total = weight_members.len() as f64;
    let weight = |i: usize| counts.get(&truth.identities[i]).copied().unwrap_or(0) as f64 / total;

    let scored: Vec<usize> = match averaging {
        IcsAveraging::AllMembers => members.to_vec(),
        IcsAveraging::Boundary => {
            let take = (boundary_fraction * members.len() as f64).ceil() as usize;
            let mut order = members.to_vec();
            order.sort_by(|&a, &b| conf.scores[a].total_cmp(&conf.scores[b]).then(a.cmp(&b)));
            order.truncate(take.min(members.len()));
            order
        }
    };
    if scored.is_empty() {
        return Err(Error::IcsUndefined);
    }
    Ok(scored.iter().map(|&i| weight(i)).sum::<f64>() / scored.len() as f64)
}

/// Mean ICS over clusters of at least `cfg.ics_min_cluster_size` members.
/// `None` when no cluster qualifies.
pub fn epoch_ics(
    assign: &ClusterAssignment,
    truth: &GroundTruth,
    conf: &ConfidenceReport,
    cfg: &EvalConfig,
    source: WeightSource,
    delta: f64,
) -> Option<f64> {
    let scores: Vec<f64> = cluster_members(assign)
        .iter()
        .filter(|m| m.len() >= cfg.ics_min_cluster_size.max(1))
        .filter_map(|m| {
            identity_consistency_score(
                m,
                truth,
                conf,
                cfg.ics_boundary_fraction,
                source,
                delta,
                cfg.ics_averaging,
            )
            .ok()
        })
        .collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Counts of valid scores over 40 equal bins on `[-1, 1]`; 1.0 lands in the last bin.
pub fn silhouette_histogram(conf: &ConfidenceReport) -> [u64; HISTOGRAM_BINS] {
    let mut bins = [0u64; HISTOGRAM_BINS];
    for s in conf.valid_scores() {
        let pos = ((s + 1.0) / 2.0 * HISTOGRAM_BINS as f64).floor();
        let idx = (pos.max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        bins[idx] += 1;
    }
    bins
}

/// Projection of the rows onto their two leading principal axes. Each axis
/// is signed so that its largest-magnitude loading is positive.
pub fn pca_2d(features: &Matrix) -> Result<Matrix> {
    let (n, d) = (features.rows(), features.cols());
    if n == 0 || d < 2 {
        return Err(Error::EmptyInput);
    }
    let mut mean = vec![0.0; d];
    for r in features.iter_rows() {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n as f64);
    }
    let mut cov = nalgebra::DMatrix::<f64>::zeros(d, d);
    for r in features.iter_rows() {
        let c: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += c[a] * c[b];
            }
        }
    }
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let axes: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&k| {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                v.into_iter().map(|x| -x).collect()
            } else {
                v
            }
        })
        .collect();
    let mut out = Matrix::zeros(n, 2);
    for (i, r) in features.iter_rows().enumerate() {
        let c: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
        out.set(i, 0, dot(&c, &axes[0]));
        out.set(i, 1, dot(&c, &axes[1]));
    }
    Ok(out)
}

/// One row of the per-epoch metrics timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub map: f64,
    pub cmc: BTreeMap<usize, f64>,
    pub ics_vanilla: Option<f64>,
    pub ics_cgc: Option<f64>,
    pub mean_silhouette: f64,
    pub silhouette_histogram: Vec<u64>,
}

pub type MetricsTimeline = Vec<EpochMetrics>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::l2_normalize_rows;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn truth(ids: &[usize]) -> GroundTruth {
        GroundTruth {
            identities: ids.to_vec(),
            camera_ids: vec![0; ids.len()],
        }
    }

    fn angles(deg: &[f64]) -> Matrix {
        let rows: Vec<[f64; 2]> = deg
            .iter()
            .map(|d| [d.to_radians().cos(), d.to_radians().sin()])
            .collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn perfect_single_match() {
        let f = angles(&[0.0, 1.0, 90.0]);
        let t = truth(&[0, 0, 1]);
        assert_eq!(mean_average_precision(&f, &[0], &[1, 2], &t).unwrap(), 1.0);
        let cmc = cmc_topk(&f, &[0], &[1, 2], &t, &[1, 2]).unwrap();
        assert_eq!(cmc[&1], 1.0);
        assert_eq!(cmc[&2], 1.0);
    }

    #[test]
    fn matches_at_ranks_one_and_three() {
        // gallery order by similarity to the query at 0 deg: 1, 2, 3
        let f = angles(&[0.0, 10.0, 20.0, 30.0]);
        let t = truth(&[0, 0, 1, 0]);
        let ap = mean_average_precision(&f, &[0], &[1, 2, 3], &t).unwrap();
        assert!((ap - 0.833_333_33).abs() < 1e-8);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ties_break_by_index() {
        let f = angles(&[0.0, 45.0, 45.0]);
        // both gallery items tie; index 1 (wrong identity) ranks first
        let t = truth(&[0, 1, 0]);
        let ap = mean_average_precision(&f, &[0], &[1, 2], &t).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn missing_gallery_identity_is_an_error() {
        let f = angles(&[0.0, 10.0]);
        let t = truth(&[0, 1]);
        assert!(matches!(
            mean_average_precision(&f, &[0], &[1], &t),
            Err(Error::Eval(_))
        ));
    }

    #[test]
    fn same_camera_filter() {
        let f = angles(&[0.0, 1.0, 5.0, 90.0]);
        let t = GroundTruth {
            identities: vec![0, 0, 0, 1],
            camera_ids: vec![0, 0, 1, 0],
        };
        let r = evaluate_retrieval(&f, &[0], &[1, 2, 3], &t, &[1], true).unwrap();
        assert_eq!(r.map, 1.0);
        let only_same = GroundTruth {
            identities: vec![0, 0, 1],
            camera_ids: vec![0, 0, 0],
        };
        let f = angles(&[0.0, 1.0, 90.0]);
        assert!(evaluate_retrieval(&f, &[0], &[1, 2], &only_same, &[1], true).is_err());
    }

    #[test]
    fn cmc_full_depth_is_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let f = l2_normalize_rows(&Matrix::from_rows(&rows).unwrap()).unwrap();
        let t = truth(&(0..30).map(|i| i % 5).collect::<Vec<_>>());
        let query: Vec<usize> = (0..5).collect();
        let gallery: Vec<usize> = (5..30).collect();
        let cmc = cmc_topk(&f, &query, &gallery, &t, &[1, 5, 10, 25]).unwrap();
        assert_eq!(cmc[&25], 1.0);
        assert!(cmc[&1] <= cmc[&5] && cmc[&5] <= cmc[&10] && cmc[&10] <= cmc[&25]);
    }

    fn conf(scores: &[f64]) -> ConfidenceReport {
        ConfidenceReport {
            scores: scores.to_vec(),
            valid: vec![true; scores.len()],
        }
    }

    #[test]
    fn ics_hand_built_cluster() {
        // identities A A A B; the B sample has the lowest silhouette
        let t = truth(&[0, 0, 0, 1]);
        let c = conf(&[0.6, 0.5, 0.4, -0.3]);
        let members = [0, 1, 2, 3];
        let v = identity_consistency_score(
            &members,
            &t,
            &c,
            0.25,
            WeightSource::Vanilla,
            0.0,
            IcsAveraging::Boundary,
        )
        .unwrap();
        assert_eq!(v, 0.25);
        // with 5% the ceiling still selects one sample
        let v = identity_consistency_score(
            &members,
            &t,
            &c,
            0.05,
            WeightSource::Vanilla,
            0.0,
            IcsAveraging::Boundary,
        )
        .unwrap();
        assert_eq!(v, 0.25);
        // the B sample is filtered from the confident subset
        let g = identity_consistency_score(
            &members,
            &t,
            &c,
            0.25,
            WeightSource::Cgc,
            0.0,
            IcsAveraging::Boundary,
        )
        .unwrap();
        assert_eq!(g, 0.0);
        let all = identity_consistency_score(
            &members,
            &t,
            &c,
            0.25,
            WeightSource::Vanilla,
            0.0,
            IcsAveraging::AllMembers,
        )
        .unwrap();
        assert!((all - (3.0 * 0.75 + 0.25) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn ics_pure_cluster_is_one() {
        let t = truth(&[3; 6]);
        let c = conf(&[0.1, 0.2, -0.5, 0.3, 0.9, 0.0]);
        let v = identity_consistency_score(
            &[0, 1, 2, 3, 4, 5],
            &t,
            &c,
            0.05,
            WeightSource::Vanilla,
            0.0,
            IcsAveraging::Boundary,
        )
        .unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn ics_empty_boundary_is_undefined() {
        let t = truth(&[0, 0]);
        let c = conf(&[0.1, 0.2]);
        assert!(matches!(
            identity_consistency_score(
                &[0, 1],
                &t,
                &c,
                0.0,
                WeightSource::Vanilla,
                0.0,
                IcsAveraging::Boundary
            ),
            Err(Error::IcsUndefined)
        ));
    }

    #[test]
    fn epoch_ics_respects_size_floor() {
        let t = truth(&[0, 0, 0, 1, 1]);
        let a =
            ClusterAssignment::new(vec![Some(0), Some(0), Some(0), Some(1), Some(1)], 2).unwrap();
        let c = conf(&[0.5; 5]);
        let cfg = EvalConfig {
            ics_min_cluster_size: 3,
            ..EvalConfig::default()
        };
        assert_eq!(
            epoch_ics(&a, &t, &c, &cfg, WeightSource::Vanilla, 0.0),
            Some(1.0)
        );
        let cfg = EvalConfig {
            ics_min_cluster_size: 10,
            ..EvalConfig::default()
        };
        assert_eq!(
            epoch_ics(&a, &t, &c, &cfg, WeightSource::Vanilla, 0.0),
            None
        );
    }

    #[test]
    fn histogram_examples() {
        let h = silhouette_histogram(&conf(&[0.0; 7]));
        assert_eq!(h[20], 7);
        assert_eq!(h.iter().sum::<u64>(), 7);

        let mut c = conf(&[-1.0, 1.0, 0.3, 0.99]);
        c.valid[2] = false;
        let h = silhouette_histogram(&c);
        assert_eq!(h[0], 1);
        assert_eq!(h[39], 2);
        assert_eq!(h.iter().sum::<u64>(), 3);

        let empty = ConfidenceReport {
            scores: vec![],
            valid: vec![],
        };
        assert_eq!(silhouette_histogram(&empty), [0; HISTOGRAM_BINS]);
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        let f = Matrix::from_rows(&[
            [2.0, 0.0, 0.1],
            [-2.0, 0.0, -0.1],
            [1.0, 0.5, 0.0],
            [-1.0, -0.5, 0.0],
        ])
        .unwrap();
        let p = pca_2d(&f).unwrap();
        assert_eq!((p.rows(), p.cols()), (4, 2));
        assert!(p.get(0, 0).abs() > p.get(2, 0).abs());
        assert!((p.get(0, 0) + p.get(1, 0)).abs() < 1e-12);
    }

    /// AP from its definition: precision at each relevant position, with
    /// the position found by counting strictly better-ranked gallery items.
    fn brute_force_map(
        features: &Matrix,
        query: &[usize],
        gallery: &[usize],
        t: &GroundTruth,
    ) -> f64 {
        let mut total = 0.0;
        for &q in query {
            let sim = |g: usize| dot(features.row(q), features.row(g));
            let before = |a: usize, b: usize| sim(a) > sim(b) || (sim(a) == sim(b) && a < b);
            let rank = |g: usize| 1 + gallery.iter().filter(|&&o| o != g && before(o, g)).count();
            let rel: Vec<usize> = gallery
                .iter()
                .copied()
                .filter(|&g| t.identities[g] == t.identities[q])
                .collect();
            let mut ap = 0.0;
            for &g in &rel {
                let r = rank(g);
                let hits = rel.iter().filter(|&&h| rank(h) <= r).count();
                ap += hits as f64 / r as f64;
            }
            total += ap / rel.len() as f64;
        }
        total / query.len() as f64
    }

    fn random_retrieval(seed: u64) -> (Matrix, GroundTruth, Vec<usize>, Vec<usize>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ids = rng.random_range(2..6);
        let n = rng.random_range(2 * ids..60);
        let d = rng.random_range(2..6);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let f = l2_normalize_rows(&Matrix::from_rows(&rows).unwrap()).unwrap();
        let t = truth(&(0..n).map(|i| i % ids).collect::<Vec<_>>());
        let (q, g) = crate::datagen::split_query_gallery(&t, 0.2, seed).unwrap();
        (f, t, q, g)
    }

    proptest! {
        #[test]
        fn map_matches_brute_force(seed in any::<u64>()) {
            let (f, t, q, g) = random_retrieval(seed);
            prop_assume!(g.len() <= 50);
            let fast = mean_average_precision(&f, &q, &g, &t).unwrap();
            let slow = brute_force_map(&f, &q, &g, &t);
            prop_assert!((fast - slow).abs() <= 1e-12);
        }

        #[test]
        fn map_invariant_under_rotation(seed in any::<u64>()) {
            let (f, t, q, g) = random_retrieval(seed);
            let d = f.cols();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let raw = nalgebra::DMatrix::<f64>::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let qr = raw.qr().q();
            let rotated: Vec<Vec<f64>> = f.iter_rows().map(|r| {
                let v = nalgebra::DVector::from_row_slice(r);
                (&qr * v).iter().copied().collect()
            }).collect();
            let fr = Matrix::from_rows(&rotated).unwrap();
            let a = mean_average_precision(&f, &q, &g, &t).unwrap();
            let b = mean_average_precision(&fr, &q, &g, &t).unwrap();
            prop_assert!((a - b).abs() <= 1e-9);
        }

        #[test]
        fn ics_is_a_fraction(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..30);
            let t = truth(&(0..n).map(|_| rng.random_range(0..4)).collect::<Vec<_>>());
            let c = conf(&(0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
            let members: Vec<usize> = (0..n).collect();
            for source in [WeightSource::Vanilla, WeightSource::Cgc] {
                let v = identity_consistency_score(&members, &t, &c, 0.05, source, 0.0, IcsAveraging::Boundary).unwrap();
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
