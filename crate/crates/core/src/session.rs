//! The labeling session: train, select, label, retrain, until the stop rule
//! fires.
//!
//! A session owns the training split (the pool the annotator draws from) and
//! the held-out test split used for the precision/recall curve. The first
//! request is a seed batch chosen without a model (top LOF scores or a
//! seeded random draw). Every later request comes from the configured query
//! strategy over the current model. The model is retrained and evaluated
//! once every id of the pending batch has been answered.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::EncodedDataset;
use crate::error::{Error, Result};
use crate::learner::{self, Committee, Labeled, LearnerConfig, Model};
use crate::outlier::{self, LofParams, LofScore};
use crate::query::{self, CandidateScore, QueryStrategy, StrategyKind};

/// Posterior at or above which an instance is classified as an attack.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedingPolicy {
    Lof,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopRule {
    pub precision_min: f64,
    pub recall_min: f64,
    pub label_budget: usize,
    pub max_rounds: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            precision_min: 0.99,
            recall_min: 0.99,
            label_budget: 1000,
            max_rounds: 10_000,
        }
    }
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.precision_min) || !unit(self.recall_min) {
            return Err(Error::Config("precision_min and recall_min must lie in (0, 1]".into()));
        }
        if self.label_budget == 0 || self.max_rounds == 0 {
            return Err(Error::Config("label_budget and max_rounds must be positive".into()));
        }
        Ok(())
    }

    /// Success needs both metrics strictly above their minimum and takes
    /// precedence; otherwise an exhausted budget or round cap stops the run.
    pub fn check(&self, latest: &CurvePoint) -> SessionStatus {
        if latest.precision > self.precision_min && latest.recall > self.recall_min {
            SessionStatus::StoppedSuccess
        } else if latest.labels_used >= self.label_budget || latest.round >= self.max_rounds {
            SessionStatus::StoppedBudget
        } else {
            SessionStatus::Running
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub strategy: QueryStrategy,
    pub learner: LearnerConfig,
    pub stop: StopRule,
    pub seeding: SeedingPolicy,
    /// Labels gathered before the first model is trained.
    pub seed_count: usize,
    pub batch_size: usize,
    /// LOF neighbour count; defaults to 20 capped at pool size - 1.
    pub lof_k: Option<usize>,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            strategy: QueryStrategy::default(),
            learner: LearnerConfig::default(),
            stop: StopRule::default(),
            seeding: SeedingPolicy::Lof,
            seed_count: 10,
            batch_size: 1,
            lof_k: None,
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        self.learner.validate()?;
        self.stop.validate()?;
        if self.seed_count == 0 {
            return Err(Error::Config("seed_count must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.strategy.kind == StrategyKind::Egl && !self.learner.has_gradient() {
            return Err(Error::Capability(
                "expected gradient length needs the logistic learner".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Ground truth comes from the training split's labels.
    Dataset,
    /// A human answers through [`Session::submit_label`]; their label is authoritative.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingLabel,
    Running,
    StoppedSuccess,
    StoppedBudget,
}

impl SessionStatus {
    pub fn is_stopped(self) -> bool {
        matches!(self, SessionStatus::StoppedSuccess | SessionStatus::StoppedBudget)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionStatus::AwaitingLabel => "awaiting_label",
            SessionStatus::Running => "running",
            SessionStatus::StoppedSuccess => "stopped_success",
            SessionStatus::StoppedBudget => "stopped_budget",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub labels_used: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryItem {
    pub id: usize,
    pub features: Vec<f64>,
    pub posterior: Option<f64>,
    #[serde(with = "nonfinite")]
    pub lof_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    /// Completed retrain rounds when the request was made.
    pub round: usize,
    pub strategy: String,
    pub items: Vec<QueryItem>,
}

impl QueryRequest {
    pub fn ids(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub id: usize,
    pub submitted: u8,
    pub truth: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionUpdate {
    pub status: SessionStatus,
    pub curve_point: Option<CurvePoint>,
    pub disagreement: Option<Disagreement>,
    /// Ids of the pending batch still unanswered.
    pub remaining: usize,
}

/// Precision and recall of the attack class. A 0/0 ratio is reported as 0
/// with its degenerate flag set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                (0.0, true)
            } else {
                (num as f64 / den as f64, false)
            }
        };
        let (precision, precision_degenerate) = ratio(tp, tp + fp);
        let (recall, recall_degenerate) = ratio(tp, tp + fn_);
        Metrics {
            precision,
            recall,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision_degenerate,
            recall_degenerate,
        }
    }
}

pub fn evaluate(model: &Model, test: &EncodedDataset) -> Result<Metrics> {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for inst in &test.instances {
        let truth = inst.label.ok_or_else(|| Error::MissingLabels(vec![inst.id]))?;
        let predicted = model.predict_proba(&inst.features)? >= DECISION_THRESHOLD;
        match (predicted, truth == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Pending {
    request: QueryRequest,
    answered: BTreeSet<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    config: SessionConfig,
    oracle: OracleKind,
    train: EncodedDataset,
    test: EncodedDataset,
    /// Labels in arrival order; training order follows it.
    labeled: Vec<(usize, u8)>,
    pool: BTreeSet<usize>,
    pending: Option<Pending>,
    model: Option<Model>,
    committee: Option<Committee>,
    curve: Vec<CurvePoint>,
    status: SessionStatus,
    round: usize,
    #[serde(with = "nonfinite::map")]
    lof: BTreeMap<usize, f64>,
    density: Option<BTreeMap<usize, f64>>,
    disagreements: Vec<Disagreement>,
    #[serde(skip)]
    index: HashMap<usize, usize>,
}

const SNAPSHOT_FORMAT: &str = "alids-session";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<S> {
    format: String,
    version: u32,
    session: S,
}

/// Derives an independent stream seed from a master seed and a counter.
fn mix(seed: u64, counter: u64) -> u64 {
    let mut z = seed ^ counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Session {
    /// Starts a session, computing LOF scores over the training pool.
    pub fn init(
        train: EncodedDataset,
        test: EncodedDataset,
        config: SessionConfig,
        oracle: OracleKind,
    ) -> Result<Session> {
        Self::init_with_lof(train, test, config, oracle, None)
    }

    /// Like [`Session::init`] with precomputed LOF scores over `train`, so
    /// sessions sharing a split can share one LOF pass.
    pub fn init_with_lof(
        train: EncodedDataset,
        test: EncodedDataset,
        config: SessionConfig,
        oracle: OracleKind,
        lof: Option<Vec<LofScore>>,
    ) -> Result<Session> {
        config.validate()?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::Config("train and test splits must be non-empty".into()));
        }
        if train.encoding_map != test.encoding_map {
            return Err(Error::Config("train and test use different encodings".into()));
        }
        if config.seed_count > train.len() {
            return Err(Error::Config(format!(
                "seed_count {} exceeds pool size {}",
                config.seed_count,
                train.len()
            )));
        }
        if config.stop.label_budget > train.len() {
            return Err(Error::Config(format!(
                "label_budget {} exceeds pool size {}",
                config.stop.label_budget,
                train.len()
            )));
        }
        let missing = |ds: &EncodedDataset| -> Vec<usize> {
            ds.instances.iter().filter(|i| i.label.is_none()).map(|i| i.id).collect()
        };
        let missing_test = missing(&test);
        if !missing_test.is_empty() {
            return Err(Error::MissingLabels(missing_test));
        }
        if oracle == OracleKind::Dataset {
            let missing_train = missing(&train);
            if !missing_train.is_empty() {
                return Err(Error::MissingLabels(missing_train));
            }
        }

        let lof = match lof {
            Some(scores) => scores,
            None if train.len() >= 2 => {
                let points: Vec<Vec<f64>> = train.instances.iter().map(|i| i.features.clone()).collect();
                let k = config
                    .lof_k
                    .unwrap_or_else(|| LofParams::for_pool(train.len()).k)
                    .min(train.len() - 1);
                outlier::lof_scores(&points, &train.ids(), LofParams { k })?
            }
            None => Vec::new(),
        };

        let density = match &config.strategy.density {
            Some(d) => {
                let all: Vec<&[f64]> = train.instances.iter().map(|i| i.features.as_slice()).collect();
                let weights = query::density_weights(&all, &all, d.beta)?;
                Some(train.ids().into_iter().zip(weights).collect())
            }
            None => None,
        };

        let mut session = Session {
            id: format!("session-{}", config.seed),
            pool: train.ids().into_iter().collect(),
            config,
            oracle,
            train,
            test,
            labeled: Vec::new(),
            pending: None,
            model: None,
            committee: None,
            curve: Vec::new(),
            status: SessionStatus::AwaitingLabel,
            round: 0,
            lof: lof.iter().map(|s| (s.id, s.score)).collect(),
            density,
            disagreements: Vec::new(),
            index: HashMap::new(),
        };
        session.rebuild_index();

        let seeds = match session.config.seeding {
            SeedingPolicy::Lof if !lof.is_empty() => {
                let mut ranked = outlier::rank_pool(&lof, 1.0);
                ranked.truncate(session.config.seed_count);
                ranked
            }
            SeedingPolicy::Lof => session.pool.iter().copied().take(session.config.seed_count).collect(),
            SeedingPolicy::Random => {
                let ids: Vec<usize> = session.pool.iter().copied().collect();
                query::random_select(&ids, session.config.seed, session.config.seed_count).ids
            }
        };
        session.pending = Some(Pending {
            request: session.request_for(&seeds)?,
            answered: BTreeSet::new(),
        });
        Ok(session)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .train
            .instances
            .iter()
            .enumerate()
            .map(|(i, inst)| (inst.id, i))
            .collect();
    }

    fn features(&self, id: usize) -> &[f64] {
        &self.train.instances[self.index[&id]].features
    }

    fn truth(&self, id: usize) -> Option<u8> {
        self.train.instances[self.index[&id]].label
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn oracle(&self) -> OracleKind {
        self.oracle
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn curve(&self) -> &[CurvePoint] {
        &self.curve
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn model(&self) -> Option<&Model> {
        self.model.as_ref()
    }

    pub fn train(&self) -> &EncodedDataset {
        &self.train
    }

    pub fn labeled(&self) -> &[(usize, u8)] {
        &self.labeled
    }

    pub fn labels_used(&self) -> usize {
        self.labeled.len()
    }

    pub fn pool_ids(&self) -> Vec<usize> {
        self.pool.iter().copied().collect()
    }

    pub fn test_ids(&self) -> Vec<usize> {
        self.test.ids()
    }

    pub fn lof_score(&self, id: usize) -> Option<f64> {
        self.lof.get(&id).copied()
    }

    pub fn disagreements(&self) -> &[Disagreement] {
        &self.disagreements
    }

    pub fn pending(&self) -> Option<&QueryRequest> {
        self.pending.as_ref().map(|p| &p.request)
    }

    fn request_for(&self, ids: &[usize]) -> Result<QueryRequest> {
        let items = ids
            .iter()
            .map(|&id| {
                let features = self.features(id).to_vec();
                let posterior = match &self.model {
                    Some(m) => Some(m.predict_proba(&features)?),
                    None => None,
                };
                Ok(QueryItem {
                    id,
                    features,
                    posterior,
                    lof_score: self.lof_score(id),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QueryRequest {
            round: self.round,
            strategy: self.config.strategy.label(),
            items,
        })
    }

    fn stopped_error(&self) -> Error {
        Error::Stopped(self.status.as_str().into())
    }

    /// The batch the annotator should label next. Repeated calls return the
    /// same request until every id in it has been answered.
    pub fn next_query(&mut self) -> Result<QueryRequest> {
        if self.status.is_stopped() {
            return Err(self.stopped_error());
        }
        if let Some(p) = &self.pending {
            return Ok(p.request.clone());
        }
        let remaining_budget = self.config.stop.label_budget.saturating_sub(self.labeled.len());
        if self.pool.is_empty() || remaining_budget == 0 {
            self.status = SessionStatus::StoppedBudget;
            return Err(self.stopped_error());
        }
        let batch = self.config.batch_size.min(remaining_budget);
        let ids = self.choose(batch)?;
        let request = self.request_for(&ids)?;
        self.pending = Some(Pending {
            request: request.clone(),
            answered: BTreeSet::new(),
        });
        self.status = SessionStatus::AwaitingLabel;
        Ok(request)
    }

    fn choose(&self, batch: usize) -> Result<Vec<usize>> {
        let strategy = &self.config.strategy;
        let pool: Vec<usize> = self.pool.iter().copied().collect();
        let round_seed = mix(self.config.seed, self.round as u64);
        if strategy.kind == StrategyKind::Random {
            return Ok(query::random_select(&pool, round_seed, batch).ids);
        }
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Training("no model trained yet".into()))?;

        let mut scores = match strategy.kind {
            StrategyKind::Uncertainty => pool
                .iter()
                .map(|&id| {
                    let p = model.predict_proba(self.features(id))?;
                    Ok(CandidateScore {
                        id,
                        score: query::uncertainty_score(p, strategy.uncertainty_criterion),
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            StrategyKind::Qbc => {
                let committee = self
                    .committee
                    .as_ref()
                    .ok_or_else(|| Error::Training("no committee trained yet".into()))?;
                pool.iter()
                    .map(|&id| {
                        let votes = committee.posteriors(self.features(id))?;
                        Ok(CandidateScore {
                            id,
                            score: query::qbc_disagreement(&votes, strategy.qbc_metric, strategy.qbc_soft)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            StrategyKind::Egl => pool
                .iter()
                .map(|&id| {
                    Ok(CandidateScore {
                        id,
                        score: query::egl_score(model, self.features(id))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            StrategyKind::Eer => self.eer_scores(model, &pool, round_seed)?,
            StrategyKind::Random => unreachable!("handled above"),
        };

        if let Some(weights) = &self.density {
            let w: Vec<f64> = scores.iter().map(|s| weights[&s.id]).collect();
            scores = query::density_wrap(&scores, &w);
        }
        Ok(query::select_next(&scores, batch).ids)
    }

    fn labeled_view(&self) -> Vec<Labeled<'_>> {
        self.labeled.iter().map(|&(id, y)| (self.features(id), y)).collect()
    }

    fn eer_scores(&self, model: &Model, pool: &[usize], round_seed: u64) -> Result<Vec<CandidateScore>> {
        let strategy = &self.config.strategy;
        let retrain = query::eer_learner(&self.config.learner, strategy.eer_exact);
        let labeled = self.labeled_view();
        let mut rng = ChaCha8Rng::seed_from_u64(round_seed);

        let candidates: Vec<usize> = if strategy.eer_exact || pool.len() <= strategy.eer_candidates {
            pool.to_vec()
        } else {
            let mut c: Vec<usize> = pool.choose_multiple(&mut rng, strategy.eer_candidates).copied().collect();
            c.sort_unstable();
            c
        };
        // In exact mode every candidate is scored against the whole rest of
        // the pool; otherwise against one shared random sample.
        let shared_sample: Vec<usize> = if strategy.eer_exact {
            pool.to_vec()
        } else {
            let mut s: Vec<usize> = pool
                .choose_multiple(&mut rng, strategy.eer_pool_sample.saturating_add(1))
                .copied()
                .collect();
            s.sort_unstable();
            s
        };

        candidates
            .iter()
            .map(|&id| {
                let mut sample: Vec<&[f64]> = shared_sample
                    .iter()
                    .filter(|&&s| s != id)
                    .map(|&s| self.features(s))
                    .collect();
                if !strategy.eer_exact {
                    sample.truncate(strategy.eer_pool_sample);
                }
                if sample.is_empty() {
                    // Last instance of the pool: nothing left to reduce.
                    return Ok(CandidateScore { id, score: 0.0 });
                }
                let score = query::eer_score(model, &labeled, &sample, self.features(id), strategy.eer_loss, &retrain)?;
                Ok(CandidateScore { id, score })
            })
            .collect()
    }

    /// Records the annotator's answer for a pending id. When it completes
    /// the batch the model is retrained, evaluated on the test split and the
    /// stop rule applied.
    pub fn submit_label(&mut self, id: usize, label: u8) -> Result<SessionUpdate> {
        if label > 1 {
            return Err(Error::Rejected(format!("label {label} is not 0 or 1")));
        }
        if self.status.is_stopped() {
            return Err(self.stopped_error());
        }
        if self.index.contains_key(&id) && !self.pool.contains(&id) {
            return Err(Error::Rejected(format!("instance {id} is already labeled")));
        }
        let is_pending = self
            .pending
            .as_ref()
            .is_some_and(|p| p.request.items.iter().any(|i| i.id == id) && !p.answered.contains(&id));
        if !is_pending {
            return Err(Error::Rejected(format!("instance {id} is not pending")));
        }

        let mut disagreement = None;
        let effective = match self.oracle {
            OracleKind::Dataset => {
                let truth = self.truth(id).ok_or_else(|| Error::MissingLabels(vec![id]))?;
                if truth != label {
                    let d = Disagreement {
                        id,
                        submitted: label,
                        truth,
                    };
                    self.disagreements.push(d);
                    disagreement = Some(d);
                }
                truth
            }
            OracleKind::External => label,
        };

        let pending = self.pending.as_mut().expect("checked above");
        pending.answered.insert(id);
        let remaining = pending.request.items.len() - pending.answered.len();
        self.labeled.push((id, effective));
        self.pool.remove(&id);

        let mut curve_point = None;
        if remaining == 0 {
            self.pending = None;
            curve_point = Some(self.retrain()?);
        } else {
            self.status = SessionStatus::AwaitingLabel;
        }
        Ok(SessionUpdate {
            status: self.status,
            curve_point,
            disagreement,
            remaining,
        })
    }

    fn retrain(&mut self) -> Result<CurvePoint> {
        let labeled = self.labeled_view();
        let model = learner::train(&labeled, &self.config.learner)?;
        let committee = if self.config.strategy.kind == StrategyKind::Qbc {
            Some(learner::train_committee(
                &labeled,
                self.config.strategy.committee_size,
                &self.config.learner,
                mix(self.config.seed ^ self.config.strategy.seed, self.round as u64),
            )?)
        } else {
            None
        };
        let metrics = evaluate(&model, &self.test)?;
        self.model = Some(model);
        self.committee = committee;
        self.round += 1;
        let point = CurvePoint {
            round: self.round,
            labels_used: self.labeled.len(),
            precision: metrics.precision,
            recall: metrics.recall,
        };
        self.curve.push(point);
        self.status = self.check_stop();
        if !self.status.is_stopped() && self.pool.is_empty() {
            self.status = SessionStatus::StoppedBudget;
        }
        Ok(point)
    }

    /// Applies the stop rule to the latest curve point; `Running` before
    /// the first retrain.
    pub fn check_stop(&self) -> SessionStatus {
        match self.curve.last() {
            Some(point) => self.config.stop.check(point),
            None => SessionStatus::Running,
        }
    }

    /// Drives the loop with the dataset's own labels until a stop condition.
    pub fn run_with_oracle(&mut self) -> Result<()> {
        if self.oracle != OracleKind::Dataset {
            return Err(Error::Config("run_with_oracle needs the dataset oracle".into()));
        }
        while !self.status.is_stopped() {
            let request = match self.next_query() {
                Ok(r) => r,
                Err(Error::Stopped(_)) => break,
                Err(e) => return Err(e),
            };
            // A restored or partly answered batch may hold ids already labeled.
            let open: Vec<usize> = request.ids().into_iter().filter(|id| self.pool.contains(id)).collect();
            for id in open {
                let truth = self.truth(id).ok_or_else(|| Error::MissingLabels(vec![id]))?;
                self.submit_label(id, truth)?;
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(&Envelope {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            session: self,
        })?)
    }

    pub fn restore(bytes: &[u8]) -> Result<Session> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_slice(bytes)
            .map_err(|e| Error::Snapshot(format!("unreadable session snapshot: {e}")))?;
        if header.format != SNAPSHOT_FORMAT || header.version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!(
                "unsupported session snapshot {} v{}",
                header.format, header.version
            )));
        }
        let envelope: Envelope<Session> = serde_json::from_slice(bytes)
            .map_err(|e| Error::Snapshot(format!("corrupted session snapshot: {e}")))?;
        let mut session = envelope.session;
        session.rebuild_index();
        Ok(session)
    }

    /// `round,labels_used,precision,recall` rows with a header.
    pub fn curve_csv(&self) -> String {
        curve_to_csv(&self.curve)
    }
}

pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("round,labels_used,precision,recall\n");
    for p in curve {
        out.push_str(&format!("{},{},{},{}\n", p.round, p.labels_used, p.precision, p.recall));
    }
    out
}

pub fn curve_from_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut curve = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 4 {
            return Err(Error::Arity {
                row: row + 1,
                expected: 4,
                found: record.len(),
            });
        }
        let parse_err = |name: &str, token: &str| Error::Parse {
            row: row + 1,
            column: name.into(),
            token: token.into(),
        };
        let (round, labels, precision, recall) = (&record[0], &record[1], &record[2], &record[3]);
        curve.push(CurvePoint {
            round: round.parse().map_err(|_| parse_err("round", round))?,
            labels_used: labels.parse().map_err(|_| parse_err("labels_used", labels))?,
            precision: precision.parse().map_err(|_| parse_err("precision", precision))?,
            recall: recall.parse().map_err(|_| parse_err("recall", recall))?,
        });
    }
    Ok(curve)
}

/// Serde adapter for LOF scores, which may be `+inf`: non-finite values
/// are written as the string `"inf"`.
mod nonfinite {
    use std::collections::BTreeMap;

    use serde::ser::SerializeMap;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(v) if v.is_finite() => s.serialize_some(v),
            Some(_) => s.serialize_str("inf"),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(v)) => Ok(Some(v)),
            Some(Repr::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
            Some(Repr::Text(t)) => Err(serde::de::Error::custom(format!("bad score {t:?}"))),
        }
    }

    pub mod map {
        use super::*;

        pub fn serialize<S: Serializer>(value: &BTreeMap<usize, f64>, s: S) -> Result<S::Ok, S::Error> {
            let mut map = s.serialize_map(Some(value.len()))?;
            for (k, v) in value {
                if v.is_finite() {
                    map.serialize_entry(k, v)?;
                } else {
                    map.serialize_entry(k, "inf")?;
                }
            }
            map.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, f64>, D::Error> {
            #[derive(Deserialize)]
            #[serde(untagged)]
            enum Repr {
                Num(f64),
                Text(String),
            }
            BTreeMap::<usize, Repr>::deserialize(d)?
                .into_iter()
                .map(|(k, v)| match v {
                    Repr::Num(v) => Ok((k, v)),
                    Repr::Text(t) if t == "inf" => Ok((k, f64::INFINITY)),
                    Repr::Text(t) => Err(serde::de::Error::custom(format!("bad score {t:?}"))),
                })
                .collect()
        }
    }
}
