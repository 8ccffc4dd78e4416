//! Label-selection strategies.
//!
//! Every strategy produces a score where higher means "ask the annotator
//! first", so [`select_next`] works the same for all of them. Expected error
//! reduction is negated to fit that convention. Ties always go to the lower id.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{self, BoostConfig, Labeled, LearnerConfig, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Uncertainty,
    Qbc,
    Egl,
    Eer,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyCriterion {
    Entropy,
    LeastConfident,
    Margin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QbcMetric {
    VoteEntropy,
    AvgKl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EerLoss {
    ZeroOne,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Cosine,
}

/// Information-density wrapper: base score times mean cosine similarity to
/// the pool, raised to `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Density {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_similarity")]
    pub similarity: Similarity,
}

fn default_beta() -> f64 {
    1.0
}

fn default_similarity() -> Similarity {
    Similarity::Cosine
}

impl Default for Density {
    fn default() -> Self {
        Density {
            beta: 1.0,
            similarity: Similarity::Cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryStrategy {
    pub kind: StrategyKind,
    pub uncertainty_criterion: UncertaintyCriterion,
    pub qbc_metric: QbcMetric,
    pub qbc_soft: bool,
    pub committee_size: usize,
    pub eer_loss: EerLoss,
    /// Pool instances the expected loss is averaged over.
    pub eer_pool_sample: usize,
    /// Candidates scored per round (each costs two retrains).
    pub eer_candidates: usize,
    /// Full-size retrains over the whole remaining pool, for small problems.
    pub eer_exact: bool,
    pub density: Option<Density>,
    pub seed: u64,
}

impl Default for QueryStrategy {
    fn default() -> Self {
        QueryStrategy {
            kind: StrategyKind::Uncertainty,
            uncertainty_criterion: UncertaintyCriterion::Entropy,
            qbc_metric: QbcMetric::VoteEntropy,
            qbc_soft: false,
            committee_size: 5,
            eer_loss: EerLoss::Log,
            eer_pool_sample: 100,
            eer_candidates: 50,
            eer_exact: false,
            density: None,
            seed: 0,
        }
    }
}

impl QueryStrategy {
    pub fn of_kind(kind: StrategyKind) -> Self {
        QueryStrategy {
            kind,
            ..QueryStrategy::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == StrategyKind::Random && self.density.is_some() {
            return Err(Error::Config("density cannot wrap random selection".into()));
        }
        if self.kind == StrategyKind::Qbc && self.committee_size < 2 {
            return Err(Error::Config("committee_size must be at least 2".into()));
        }
        if self.kind == StrategyKind::Eer && (self.eer_pool_sample == 0 || self.eer_candidates == 0) {
            return Err(Error::Config(
                "eer_pool_sample and eer_candidates must be positive".into(),
            ));
        }
        if let Some(d) = &self.density {
            if d.beta.is_nan() || d.beta < 0.0 {
                return Err(Error::Config("density beta must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// Short label used in file names and reports, e.g. `uncertainty-entropy`.
    pub fn label(&self) -> String {
        let base = match self.kind {
            StrategyKind::Uncertainty => format!("uncertainty-{}", snake(&self.uncertainty_criterion)),
            StrategyKind::Qbc => format!(
                "qbc-{}-{}",
                snake(&self.qbc_metric),
                if self.qbc_soft { "soft" } else { "hard" }
            ),
            StrategyKind::Egl => "egl".into(),
            StrategyKind::Eer => format!("eer-{}", snake(&self.eer_loss)),
            StrategyKind::Random => "random".into(),
        };
        match &self.density {
            Some(d) => format!("{base}-density{}", d.beta),
            None => base,
        }
    }
}

fn snake<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// `-p log2 p - (1 - p) log2 (1 - p)`, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    term(p) + term(1.0 - p)
}

pub fn uncertainty_score(posterior: f64, criterion: UncertaintyCriterion) -> f64 {
    match criterion {
        UncertaintyCriterion::Entropy => binary_entropy(posterior),
        UncertaintyCriterion::LeastConfident => 1.0 - posterior.max(1.0 - posterior),
        UncertaintyCriterion::Margin => -(posterior - (1.0 - posterior)).abs(),
    }
}

/// KL divergence in bits between two binary distributions given by their
/// attack probability.
fn binary_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a > 0.0 { a * (a / b).log2() } else { 0.0 };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// Committee disagreement in bits. Hard mode turns each member posterior
/// into a vote (`p > 0.5` is an attack vote); soft mode uses the posteriors.
pub fn qbc_disagreement(member_posteriors: &[f64], metric: QbcMetric, soft: bool) -> Result<f64> {
    let c = member_posteriors.len();
    if c < 2 {
        return Err(Error::Parameter(format!(
            "committee disagreement needs at least 2 members, got {c}"
        )));
    }
    let dists: Vec<f64> = member_posteriors
        .iter()
        .map(|&p| if soft { p } else if p > 0.5 { 1.0 } else { 0.0 })
        .collect();
    let mean = dists.iter().sum::<f64>() / c as f64;
    if metric == QbcMetric::AvgKl && dists.iter().all(|&p| p == dists[0]) {
        // The summed mean can miss the common value by an ulp.
        return Ok(0.0);
    }
    Ok(match metric {
        QbcMetric::VoteEntropy => binary_entropy(mean),
        QbcMetric::AvgKl => dists.iter().map(|&p| binary_kl(p, mean)).sum::<f64>() / c as f64,
    })
}

/// Expected gradient length `sum_y P(y|x) * |grad loss(x, y)|`. For the
/// logistic learner this is `2 p (1 - p) * |(x, 1)|`.
pub fn egl_score(model: &Model, x: &[f64]) -> Result<f64> {
    if !model.has_gradient() {
        return Err(Error::Capability(
            "expected gradient length needs a gradient-capable model".into(),
        ));
    }
    let p = model.predict_proba(x)?;
    let norm = (x.iter().map(|v| v * v).sum::<f64>() + 1.0).sqrt();
    Ok(2.0 * p * (1.0 - p) * norm)
}

/// Mean expected loss of `model` over `pool`, using the model's own
/// posteriors in place of the unknown labels.
pub fn expected_pool_loss(model: &Model, pool: &[&[f64]], loss: EerLoss) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::Parameter("expected loss over an empty pool".into()));
    }
    let mut total = 0.0;
    for x in pool {
        let q = model.predict_proba(x)?;
        total += match loss {
            EerLoss::ZeroOne => 1.0 - q.max(1.0 - q),
            EerLoss::Log => -(q * q.ln() + (1.0 - q) * (1.0 - q).ln()),
        };
    }
    Ok(total / pool.len() as f64)
}

/// The retraining learner used by expected error reduction: the session's
/// learner in exact mode, otherwise a booster with a fifth of the rounds.
pub fn eer_learner(config: &LearnerConfig, exact: bool) -> LearnerConfig {
    match config {
        LearnerConfig::BoostedTrees(c) if !exact => LearnerConfig::BoostedTrees(BoostConfig {
            rounds: (c.rounds / 5).max(1),
            ..c.clone()
        }),
        other => other.clone(),
    }
}

/// Negated expected loss after adding `candidate` with each hypothetical
/// label, weighted by the current model's posterior for that label. Labels
/// with zero posterior weight are not retrained.
pub fn eer_score(
    model: &Model,
    labeled: &[Labeled<'_>],
    pool_sample: &[&[f64]],
    candidate: &[f64],
    loss: EerLoss,
    retrain: &LearnerConfig,
) -> Result<f64> {
    if pool_sample.is_empty() {
        return Err(Error::Parameter("expected error reduction needs a pool sample".into()));
    }
    if labeled.is_empty() {
        return Err(Error::Training("empty labeled set".into()));
    }
    let p_attack = model.predict_proba(candidate)?;
    let mut augmented: Vec<Labeled<'_>> = Vec::with_capacity(labeled.len() + 1);
    augmented.extend_from_slice(labeled);
    augmented.push((candidate, 0));

    let mut expected = 0.0;
    for (label, weight) in [(0u8, 1.0 - p_attack), (1u8, p_attack)] {
        if weight == 0.0 {
            continue;
        }
        augmented.last_mut().expect("candidate pushed").1 = label;
        let retrained = learner::train(&augmented, retrain)?;
        expected += weight * expected_pool_loss(&retrained, pool_sample, loss)?;
    }
    Ok(-expected)
}

fn unit(x: &[f64]) -> Option<Vec<f64>> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    (norm > 0.0).then(|| x.iter().map(|v| v / norm).collect())
}

/// `(max(0, mean cosine similarity to pool))^beta`. A zero vector has
/// similarity 0 with everything.
pub fn density_weight(candidate: &[f64], pool: &[&[f64]], beta: f64) -> Result<f64> {
    Ok(density_weights(&[candidate], pool, beta)?[0])
}

/// [`density_weight`] for many candidates at once. The mean cosine equals
/// the candidate's unit vector dotted with the mean pool unit vector, so this
/// is linear in the pool size.
pub fn density_weights(candidates: &[&[f64]], pool: &[&[f64]], beta: f64) -> Result<Vec<f64>> {
    if pool.is_empty() {
        return Err(Error::Parameter("density over an empty pool".into()));
    }
    let width = pool[0].len();
    let mut centroid = vec![0.0; width];
    for x in pool {
        if let Some(u) = unit(x) {
            for (c, v) in centroid.iter_mut().zip(u) {
                *c += v;
            }
        }
    }
    let n = pool.len() as f64;
    centroid.iter_mut().for_each(|c| *c /= n);
    Ok(candidates
        .iter()
        .map(|x| {
            let similarity = unit(x).map_or(0.0, |u| {
                u.iter().zip(&centroid).map(|(a, b)| a * b).sum::<f64>()
            });
            similarity.max(0.0).powf(beta)
        })
        .collect())
}

pub fn density_wrap(base_scores: &[CandidateScore], weights: &[f64]) -> Vec<CandidateScore> {
    base_scores
        .iter()
        .zip(weights)
        .map(|(s, w)| CandidateScore {
            id: s.id,
            score: s.score * w,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub ids: Vec<usize>,
    /// The requested batch exceeded the pool, so the whole pool was returned.
    pub truncated: bool,
}

/// Top-`batch` ids by descending score, ties by ascending id.
pub fn select_next(pool_scores: &[CandidateScore], batch: usize) -> Selection {
    let mut sorted = pool_scores.to_vec();
    sorted.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.id.cmp(&b.id),
        other => other,
    });
    let truncated = batch > sorted.len();
    Selection {
        ids: sorted.into_iter().take(batch).map(|s| s.id).collect(),
        truncated,
    }
}

/// Uniform sample without replacement, in draw order.
pub fn random_select(pool_ids: &[usize], seed: u64, batch: usize) -> Selection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = pool_ids.to_vec();
    let truncated = batch > ids.len();
    let take = batch.min(ids.len());
    let (chosen, _) = ids.partial_shuffle(&mut rng, take);
    Selection {
        ids: chosen.to_vec(),
        truncated,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamDecision {
    Query,
    Discard,
}

/// Stream-based selective sampling: query iff the uncertainty score reaches
/// `threshold`. Only uncertainty strategies are supported.
pub fn stream_decide(
    x: &[f64],
    model: &Model,
    strategy: &QueryStrategy,
    threshold: f64,
) -> Result<StreamDecision> {
    if strategy.kind != StrategyKind::Uncertainty {
        return Err(Error::Config(format!(
            "stream mode supports uncertainty only, got {:?}",
            strategy.kind
        )));
    }
    let score = uncertainty_score(model.predict_proba(x)?, strategy.uncertainty_criterion);
    Ok(if score >= threshold {
        StreamDecision::Query
    } else {
        StreamDecision::Discard
    })
}
