//! The alternating cluster-then-train loop.
//!
//! Every epoch re-clusters the current features, scores each clustered sample
//! by silhouette, builds a centroid bank (optionally from confident members
//! only), then runs mini-batch descent on the embedding table with soft or
//! one-hot targets while the bank follows the batch features by momentum.

use serde::{Deserialize, Serialize};

use crate::centroids::{
    confidence_guided_centroids, threshold_at, vanilla_centroids, CentroidBank, ScheduleKind,
    ThresholdSchedule,
};
use crate::clustering::{cluster_members, dbscan, DbscanParams};
use crate::confidence::{silhouette_scores, ConfidenceReport, IntraDenominator};
use crate::datagen::{split_query_gallery, Dataset};
use crate::error::{Error, Result};
use crate::eval::{
    epoch_ics, evaluate_retrieval, silhouette_histogram, EpochMetrics, EvalConfig, MetricsTimeline,
    WeightSource, CMC_KS,
};
use crate::labeling::{confidence_matrix, distance_matrix, mix_labels, one_hot_labels};
use crate::objective::batch_loss_and_grad;
use crate::rng::{self, StreamRng};
use crate::types::{ClusterAssignment, FeatureStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None` means `ceil(N / (P * K))`.
    pub iters_per_epoch: Option<usize>,
    pub batch_identities: usize,
    pub batch_instances: usize,
    pub learning_rate: f64,
    /// Epochs at whose start the learning rate is divided by 10.
    pub lr_decay_epochs: Vec<usize>,
    pub temperature: f64,
    pub momentum: f64,
    pub beta: f64,
    /// A `total_epochs` of 0 inherits `epochs`.
    pub schedule: ThresholdSchedule,
    pub dbscan: DbscanParams,
    pub use_cgc: bool,
    pub use_cgl: bool,
    pub intra_denominator: IntraDenominator,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            iters_per_epoch: None,
            batch_identities: 8,
            batch_instances: 4,
            learning_rate: 0.05,
            lr_decay_epochs: Vec::new(),
            temperature: 0.05,
            momentum: 0.5,
            beta: 0.8,
            schedule: ThresholdSchedule::linear(0.2, -0.1, 0),
            dbscan: DbscanParams::default(),
            use_cgc: true,
            use_cgl: true,
            intra_denominator: IntraDenominator::Canonical,
            eval: EvalConfig::default(),
            seed: 0,
        }
    }
}

/// Which of the two refinements a run switches on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Baseline,
    Cgc,
    Cgl,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Self::Baseline, Self::Cgc, Self::Cgl, Self::Full];

    pub fn flags(self) -> (bool, bool) {
        match self {
            Self::Baseline => (false, false),
            Self::Cgc => (true, false),
            Self::Cgl => (false, true),
            Self::Full => (true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Cgc => "cgc",
            Self::Cgl => "cgl",
            Self::Full => "full",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

impl TrainConfig {
    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        (self.use_cgc, self.use_cgl) = ablation.flags();
        self
    }

    pub fn effective_schedule(&self) -> ThresholdSchedule {
        let mut s = self.schedule;
        if s.total_epochs == 0 && s.kind != ScheduleKind::Constant {
            s.total_epochs = self.epochs;
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_identities == 0 || self.batch_instances == 0 {
            return fail("batch_identities and batch_instances must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature {} must be positive", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return fail(format!("momentum {} must lie in [0, 1]", self.momentum));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return fail(format!("beta {} must lie in [0, 1]", self.beta));
        }
        if self.iters_per_epoch == Some(0) {
            return fail("iters_per_epoch must be positive".into());
        }
        self.dbscan.validate()?;
        self.eval.validate()?;
        let sched = self.effective_schedule();
        for t in 0..self.epochs {
            threshold_at(&sched, t)?;
        }
        Ok(())
    }

    fn iterations(&self, n: usize) -> usize {
        self.iters_per_epoch
            .unwrap_or_else(|| n.div_ceil(self.batch_identities * self.batch_instances))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub num_clusters: usize,
    pub num_outliers: usize,
    pub mean_silhouette: f64,
    /// Threshold applied to the bank; `None` for all-member banks.
    pub delta: Option<f64>,
    pub learning_rate: f64,
    pub loss_curve: Vec<f64>,
    pub degenerate: bool,
}

impl EpochTrace {
    pub fn mean_loss(&self) -> Option<f64> {
        (!self.loss_curve.is_empty())
            .then(|| self.loss_curve.iter().sum::<f64>() / self.loss_curve.len() as f64)
    }
}

/// Clustering, confidence and bank of one epoch, kept for reporting.
#[derive(Debug, Clone)]
pub struct EpochSnapshot {
    pub assignment: ClusterAssignment,
    pub confidence: ConfidenceReport,
    pub delta: f64,
    /// Bank as it stands at the end of the epoch; `None` for degenerate epochs.
    pub bank: Option<CentroidBank>,
}

/// `min(P, C)` distinct clusters, `K` members from each; members are drawn
/// with replacement only when the cluster has fewer than `K` of them.
pub fn pk_sample(
    assign: &ClusterAssignment,
    p: usize,
    k: usize,
    rng: &mut StreamRng,
) -> Result<Vec<usize>> {
    use rand::seq::index::sample;
    use rand::Rng;

    let members = cluster_members(assign);
    if members.is_empty() {
        return Err(Error::EmptyPartition);
    }
    let chosen = sample(rng, members.len(), p.min(members.len()));
    let mut batch = Vec::with_capacity(chosen.len() * k);
    for c in chosen.iter() {
        let m = &members[c];
        if m.len() >= k {
            batch.extend(sample(rng, m.len(), k).iter().map(|j| m[j]));
        } else {
            batch.extend((0..k).map(|_| m[rng.random_range(0..m.len())]));
        }
    }
    Ok(batch)
}

/// Mutable training state: the embedding table plus the sampler stream.
pub struct TrainState {
    pub store: FeatureStore,
    learning_rate: f64,
    sampler: StreamRng,
    total_samples: usize,
}

impl TrainState {
    pub fn new(observations: &crate::space::Matrix, config: &TrainConfig) -> Result<Self> {
        Ok(Self {
            store: FeatureStore::from_params(observations.clone())?,
            learning_rate: config.learning_rate,
            sampler: rng::stream(config.seed, "trainer/pk-sampler"),
            total_samples: observations.rows(),
        })
    }

    /// One full epoch. Returns the trace and what reporting needs from it.
    pub fn run_epoch(
        &mut self,
        config: &TrainConfig,
        epoch: usize,
    ) -> Result<(EpochTrace, EpochSnapshot)> {
        if config.lr_decay_epochs.contains(&epoch) {
            self.learning_rate /= 10.0;
        }
        let features = self.store.features().clone();
        let assignment = dbscan(&features, &config.dbscan)?.demote_singletons();
        let delta = threshold_at(&config.effective_schedule(), epoch)?;

        if assignment.num_clusters() == 0 {
            let confidence = ConfidenceReport {
                scores: vec![0.0; assignment.len()],
                valid: vec![false; assignment.len()],
            };
            let trace = EpochTrace {
                epoch,
                num_clusters: 0,
                num_outliers: assignment.len(),
                mean_silhouette: 0.0,
                delta: config.use_cgc.then_some(delta),
                learning_rate: self.learning_rate,
                loss_curve: Vec::new(),
                degenerate: true,
            };
            let snapshot = EpochSnapshot {
                assignment,
                confidence,
                delta,
                bank: None,
            };
            return Ok((trace, snapshot));
        }

        let confidence = silhouette_scores(&assignment, &features, config.intra_denominator)?;
        let bank = if config.use_cgc {
            confidence_guided_centroids(&assignment, &features, &confidence, delta)?
        } else {
            vanilla_centroids(&assignment, &features)?
        };
        let mut bank = bank.with_momentum(config.momentum)?;

        let iterations = config.iterations(self.total_samples);
        let mut loss_curve = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let batch = pk_sample(
                &assignment,
                config.batch_identities,
                config.batch_instances,
                &mut self.sampler,
            )?;
            let targets: Vec<usize> = batch
                .iter()
                .map(|&i| assignment.label(i).expect("batch holds clustered samples"))
                .collect();
            let batch_features = self.store.features().select_rows(&batch);
            let labels = if config.use_cgl {
                let p = confidence_matrix(&distance_matrix(&batch_features, &bank)?)?;
                let hard: Vec<Option<usize>> = targets.iter().map(|&t| Some(t)).collect();
                mix_labels(&hard, &p, config.beta)?
            } else {
                one_hot_labels(&targets, bank.len())?
            };
            let params = self.store.params().select_rows(&batch);
            let (loss, grads) = batch_loss_and_grad(&params, &bank, &labels, config.temperature)?;
            self.store
                .apply_gradient(&batch, &grads, self.learning_rate)?;

            let mut order: Vec<usize> = (0..batch.len()).collect();
            order.sort_by_key(|&k| batch[k]);
            for k in order {
                bank.momentum_update(targets[k], batch_features.row(k))?;
            }
            loss_curve.push(loss);
        }

        let trace = EpochTrace {
            epoch,
            num_clusters: assignment.num_clusters(),
            num_outliers: assignment.num_outliers(),
            mean_silhouette: confidence.mean(),
            delta: config.use_cgc.then_some(delta),
            learning_rate: self.learning_rate,
            loss_curve,
            degenerate: false,
        };
        let snapshot = EpochSnapshot {
            assignment,
            confidence,
            delta,
            bank: Some(bank),
        };
        Ok((trace, snapshot))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub store: FeatureStore,
    pub traces: Vec<EpochTrace>,
    pub timeline: MetricsTimeline,
    pub snapshots: Vec<EpochSnapshot>,
}

impl TrainOutcome {
    pub fn degenerate_epochs(&self) -> usize {
        self.traces.iter().filter(|t| t.degenerate).count()
    }

    pub fn final_metrics(&self) -> Option<&EpochMetrics> {
        self.timeline.last()
    }
}

/// Runs every epoch and evaluates the frozen features after each one.
/// Ground truth is consulted only by the evaluation step.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (query, gallery) =
        split_query_gallery(&dataset.truth, config.eval.query_fraction, config.seed)?;
    let mut state = TrainState::new(&dataset.observations, config)?;
    let mut traces = Vec::with_capacity(config.epochs);
    let mut timeline = Vec::with_capacity(config.epochs);
    let mut snapshots = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let (trace, snapshot) = state.run_epoch(config, epoch)?;
        let retrieval = evaluate_retrieval(
            state.store.features(),
            &query,
            &gallery,
            &dataset.truth,
            &CMC_KS,
            config.eval.exclude_same_camera,
        )?;
        let ics = |source| {
            epoch_ics(
                &snapshot.assignment,
                &dataset.truth,
                &snapshot.confidence,
                &config.eval,
                source,
                snapshot.delta,
            )
        };
        timeline.push(EpochMetrics {
            epoch,
            map: retrieval.map,
            cmc: retrieval.cmc,
            ics_vanilla: ics(WeightSource::Vanilla),
            ics_cgc: ics(WeightSource::Cgc),
            mean_silhouette: trace.mean_silhouette,
            silhouette_histogram: silhouette_histogram(&snapshot.confidence).to_vec(),
        });
        traces.push(trace);
        snapshots.push(snapshot);
    }
    Ok(TrainOutcome {
        store: state.store,
        traces,
        timeline,
        snapshots,
    })
}
