//! Supervised learners for the labeling loop.
//!
//! * [`BoostedTrees`]: second-order gradient boosting on the logistic loss
//!   with exact greedy split search, L2-regularised leaf weights and a
//!   minimum child hessian.
//! * [`LogisticModel`]: plain logistic regression. It exists because it has
//!   a closed-form loss gradient, which expected-gradient-length scoring
//!   needs; boosted models report `has_gradient() == false`.
//! * [`Committee`]: bootstrap-bagged members of one learner family.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Posteriors are kept this far away from 0 and 1.
pub const PROBA_EPS: f64 = 1e-12;

/// A labeled training example: feature vector and binary label.
pub type Labeled<'a> = (&'a [f64], u8);

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn clamp_proba(p: f64) -> f64 {
    p.clamp(PROBA_EPS, 1.0 - PROBA_EPS)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub l2_lambda: f64,
    pub base_score: f64,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            rounds: 50,
            learning_rate: 0.3,
            max_depth: 4,
            min_child_weight: 1.0,
            l2_lambda: 1.0,
            base_score: 0.5,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("boost config: {msg}")));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if self.min_child_weight.is_nan() || self.min_child_weight < 0.0 {
            return bad("min_child_weight must be non-negative");
        }
        if self.l2_lambda.is_nan() || self.l2_lambda < 0.0 {
            return bad("l2_lambda must be non-negative");
        }
        if !(self.base_score > 0.0 && self.base_score < 1.0) {
            return bad("base_score must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Full-batch gradient descent settings for [`LogisticModel`]. The actual
/// step is `step_scale / L`, with `L` the smoothness bound of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub epochs: usize,
    pub step_scale: f64,
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            epochs: 300,
            step_scale: 1.0,
            l2: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerConfig {
    BoostedTrees(BoostConfig),
    Logistic(LogisticConfig),
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig::BoostedTrees(BoostConfig::default())
    }
}

impl LearnerConfig {
    pub fn has_gradient(&self) -> bool {
        matches!(self, LearnerConfig::Logistic(_))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerConfig::BoostedTrees(c) => c.validate(),
            LearnerConfig::Logistic(c) => {
                if c.step_scale.is_nan() || c.step_scale <= 0.0 || c.l2.is_nan() || c.l2 < 0.0 {
                    return Err(Error::Config(
                        "logistic config: step_scale must be positive, l2 non-negative".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    /// `x[feature] < threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                TreeNode::Leaf { weight } => return weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if x[feature] < threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTrees {
    pub n_features: usize,
    pub config: BoostConfig,
    pub trees: Vec<RegressionTree>,
}

impl BoostedTrees {
    pub fn margin(&self, x: &[f64]) -> f64 {
        logit(self.config.base_score) + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn zeros(n_features: usize) -> Self {
        LogisticModel {
            weights: vec![0.0; n_features],
            bias: 0.0,
        }
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    BoostedTrees(BoostedTrees),
    Logistic(LogisticModel),
}

impl Model {
    pub fn has_gradient(&self) -> bool {
        matches!(self, Model::Logistic(_))
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::BoostedTrees(m) => m.n_features,
            Model::Logistic(m) => m.weights.len(),
        }
    }

    /// Attack posterior `P(y = 1 | x)`, strictly inside (0, 1).
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                found: x.len(),
            });
        }
        let margin = match self {
            Model::BoostedTrees(m) => m.margin(x),
            Model::Logistic(m) => m.margin(x),
        };
        Ok(clamp_proba(sigmoid(margin)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn check_labeled(labeled: &[Labeled<'_>]) -> Result<usize> {
    let Some((first, _)) = labeled.first() else {
        return Err(Error::Training("empty labeled set".into()));
    };
    let width = first.len();
    for (x, y) in labeled {
        if x.len() != width {
            return Err(Error::Dimension {
                expected: width,
                found: x.len(),
            });
        }
        if *y > 1 {
            return Err(Error::Training(format!("label {y} is not binary")));
        }
    }
    Ok(width)
}

pub fn train(labeled: &[Labeled<'_>], config: &LearnerConfig) -> Result<Model> {
    match config {
        LearnerConfig::BoostedTrees(c) => train_boosted(labeled, c).map(Model::BoostedTrees),
        LearnerConfig::Logistic(c) => train_logistic(labeled, c).map(Model::Logistic),
    }
}

pub fn train_boosted(labeled: &[Labeled<'_>], config: &BoostConfig) -> Result<BoostedTrees> {
    config.validate()?;
    let n_features = check_labeled(labeled)?;
    let n = labeled.len();

    // Row order per feature, ascending by value then row index. Reused by
    // every tree since the training rows never change.
    let presorted: Vec<Vec<u32>> = (0..n_features)
        .map(|f| {
            let mut rows: Vec<u32> = (0..n as u32).collect();
            rows.sort_by(|&a, &b| {
                labeled[a as usize].0[f]
                    .total_cmp(&labeled[b as usize].0[f])
                    .then(a.cmp(&b))
            });
            rows
        })
        .collect();

    let mut margins = vec![logit(config.base_score); n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        for (i, (_, y)) in labeled.iter().enumerate() {
            let p = sigmoid(margins[i]);
            grad[i] = p - f64::from(*y);
            hess[i] = p * (1.0 - p);
        }
        let mut builder = TreeBuilder {
            labeled,
            grad: &grad,
            hess: &hess,
            config,
            nodes: Vec::new(),
        };
        builder.grow(presorted.clone(), 0);
        let tree = RegressionTree {
            nodes: builder.nodes,
        };
        for (i, (x, _)) in labeled.iter().enumerate() {
            margins[i] += tree.predict(x);
        }
        trees.push(tree);
    }
    Ok(BoostedTrees {
        n_features,
        config: config.clone(),
        trees,
    })
}

struct TreeBuilder<'a, 'b> {
    labeled: &'a [Labeled<'b>],
    grad: &'a [f64],
    hess: &'a [f64],
    config: &'a BoostConfig,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl TreeBuilder<'_, '_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        let denom = h + self.config.l2_lambda;
        if denom > 0.0 {
            g * g / denom
        } else {
            0.0
        }
    }

    fn leaf_weight(&self, g: f64, h: f64) -> f64 {
        let denom = h + self.config.l2_lambda;
        if denom > 0.0 {
            -g / denom * self.config.learning_rate
        } else {
            0.0
        }
    }

    /// Grows the subtree over the rows in `sorted` (one row list per
    /// feature, each in feature order) and returns its node index.
    fn grow(&mut self, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let rows = &sorted[0];
        let (g, h) = rows.iter().fold((0.0, 0.0), |(g, h), &r| {
            (g + self.grad[r as usize], h + self.hess[r as usize])
        });
        let idx = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            weight: self.leaf_weight(g, h),
        });
        if depth >= self.config.max_depth || rows.len() < 2 {
            return idx;
        }
        let Some(best) = self.best_split(&sorted, g, h) else {
            return idx;
        };

        let go_left = |r: u32| self.labeled[r as usize].0[best.feature] < best.threshold;
        let mut left = Vec::with_capacity(sorted.len());
        let mut right = Vec::with_capacity(sorted.len());
        for list in &sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = list.iter().partition(|&&row| go_left(row));
            left.push(l);
            right.push(r);
        }
        drop(sorted);
        let left_idx = self.grow(left, depth + 1);
        let right_idx = self.grow(right, depth + 1);
        self.nodes[idx] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: left_idx,
            right: right_idx,
        };
        idx
    }

    fn best_split(&self, sorted: &[Vec<u32>], g: f64, h: f64) -> Option<BestSplit> {
        let parent = self.score(g, h);
        let mcw = self.config.min_child_weight;
        let mut best: Option<BestSplit> = None;
        for (feature, rows) in sorted.iter().enumerate() {
            let value = |i: usize| self.labeled[rows[i] as usize].0[feature];
            if value(0) == value(rows.len() - 1) {
                continue;
            }
            let (mut gl, mut hl) = (0.0, 0.0);
            for (i, &r) in rows[..rows.len() - 1].iter().enumerate() {
                let r = r as usize;
                gl += self.grad[r];
                hl += self.hess[r];
                let (lo, hi) = (value(i), value(i + 1));
                if lo == hi {
                    continue;
                }
                let (gr, hr) = (g - gl, h - hl);
                if hl < mcw || hr < mcw {
                    continue;
                }
                let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent);
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid > lo { mid } else { hi };
                    best = Some(BestSplit {
                        gain,
                        feature,
                        threshold,
                    });
                }
            }
        }
        best
    }
}

pub fn train_logistic(labeled: &[Labeled<'_>], config: &LogisticConfig) -> Result<LogisticModel> {
    let d = check_labeled(labeled)?;
    let n = labeled.len() as f64;
    let max_sq = labeled
        .iter()
        .map(|(x, _)| x.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .fold(0.0, f64::max);
    let step = config.step_scale / (0.25 * max_sq + config.l2);

    let mut model = LogisticModel::zeros(d);
    let mut gw = vec![0.0; d];
    for _ in 0..config.epochs {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (x, y) in labeled {
            let residual = sigmoid(model.margin(x)) - f64::from(*y);
            for (g, v) in gw.iter_mut().zip(x.iter()) {
                *g += residual * v;
            }
            gb += residual;
        }
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= step * (g / n + config.l2 * *w);
        }
        model.bias -= step * gb / n;
    }
    Ok(model)
}

/// Gradient of the logistic log-loss at `(x, label)` with respect to
/// `(weights, bias)`: `(p - y) * (x, 1)`.
pub fn loss_gradient(model: &Model, x: &[f64], label: u8) -> Result<Vec<f64>> {
    let Model::Logistic(_) = model else {
        return Err(Error::Capability(
            "boosted trees expose no parameter gradient".into(),
        ));
    };
    let residual = model.predict_proba(x)? - f64::from(label);
    let mut grad: Vec<f64> = x.iter().map(|v| residual * v).collect();
    grad.push(residual);
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Committee {
    pub members: Vec<Model>,
    pub seeds: Vec<u64>,
}

impl Committee {
    pub fn posteriors(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.members.iter().map(|m| m.predict_proba(x)).collect()
    }
}

/// Member `i` trains on a same-size bootstrap resample drawn with seed `seed ^ i`.
pub fn train_committee(
    labeled: &[Labeled<'_>],
    size: usize,
    config: &LearnerConfig,
    seed: u64,
) -> Result<Committee> {
    if size < 2 {
        return Err(Error::Config(format!(
            "committee needs at least 2 members, got {size}"
        )));
    }
    check_labeled(labeled)?;
    let mut members = Vec::with_capacity(size);
    let mut seeds = Vec::with_capacity(size);
    for i in 0..size {
        let member_seed = seed ^ i as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(member_seed);
        let resample: Vec<Labeled<'_>> = (0..labeled.len())
            .map(|_| labeled[rng.random_range(0..labeled.len())])
            .collect();
        members.push(train(&resample, config)?);
        seeds.push(member_seed);
    }
    Ok(Committee { members, seeds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boosted(rounds: usize) -> LearnerConfig {
        LearnerConfig::BoostedTrees(BoostConfig {
            rounds,
            ..BoostConfig::default()
        })
    }

    #[test]
    fn zero_rounds_predict_base_score() {
        let x = [0.2, 0.7];
        let model = train(&[(&x, 1)], &boosted(0)).unwrap();
        assert_eq!(model.predict_proba(&x).unwrap(), 0.5);
        assert_eq!(model.predict_proba(&[0.9, 0.1]).unwrap(), 0.5);
    }

    #[test]
    fn singleton_attack_is_memorised() {
        let x = [0.4, 0.1, 0.9];
        let model = train(&[(&x, 1)], &boosted(10)).unwrap();
        assert!(model.predict_proba(&x).unwrap() > 0.5);
    }

    #[test]
    fn identical_normals_follow_the_scalar_recurrence() {
        // No split exists, so each round adds one leaf: w = -lr * G / (H + lambda)
        // with G = n * p and H = n * p * (1 - p).
        let x = [0.3, 0.6];
        let data: Vec<Labeled<'_>> = (0..10).map(|_| (&x[..], 0)).collect();
        let config = BoostConfig::default();
        let model = train(&data, &LearnerConfig::BoostedTrees(config.clone())).unwrap();

        let mut margin = 0.0f64;
        for _ in 0..config.rounds {
            let p = 1.0 / (1.0 + (-margin).exp());
            let g = 10.0 * p;
            let h = 10.0 * p * (1.0 - p);
            margin += -config.learning_rate * g / (h + config.l2_lambda);
        }
        let expected = 1.0 / (1.0 + (-margin).exp());
        let got = model.predict_proba(&x).unwrap();
        assert!(got < 0.5);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn empty_training_set_is_error() {
        assert!(matches!(train(&[], &boosted(5)), Err(Error::Training(_))));
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let x = [0.1, 0.2];
        let model = train(&[(&x, 0)], &boosted(2)).unwrap();
        assert!(matches!(
            model.predict_proba(&[0.1]),
            Err(Error::Dimension { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn logistic_closed_form_posteriors() {
        let zero = Model::Logistic(LogisticModel::zeros(3));
        assert_eq!(zero.predict_proba(&[5.0, -2.0, 1.0]).unwrap(), 0.5);

        let m = Model::Logistic(LogisticModel {
            weights: vec![1.0, 0.5],
            bias: 0.5,
        });
        // w.x + b = 1.0 + 0.5 + 0.5 = 2
        let p = m.predict_proba(&[1.0, 1.0]).unwrap();
        assert!((p - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        assert!((p - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn committee_of_singleton() {
        let x = [0.5, 0.5];
        let c = train_committee(&[(&x, 1)], 2, &boosted(5), 9).unwrap();
        let p = c.posteriors(&x).unwrap();
        assert_eq!(p[0], p[1]);
        assert_eq!(c.seeds, vec![9, 8]);
    }

    #[test]
    fn committee_size_below_two_is_config_error() {
        let x = [0.5];
        assert!(matches!(
            train_committee(&[(&x, 1)], 1, &boosted(5), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gradient_capability() {
        let x = [1.0, 0.0];
        let boosted_model = train(&[(&x, 1)], &boosted(1)).unwrap();
        assert!(!boosted_model.has_gradient());
        assert!(matches!(
            loss_gradient(&boosted_model, &x, 1),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn gradient_closed_form_points() {
        let zero = Model::Logistic(LogisticModel::zeros(3));
        let g = loss_gradient(&zero, &[1.0, 0.0, 0.0], 1).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 0.5 * 2f64.sqrt()).abs() < 1e-15);

        // A saturated model with matching label leaves a residual of only PROBA_EPS.
        let sure = Model::Logistic(LogisticModel {
            weights: vec![100.0],
            bias: 0.0,
        });
        let g = loss_gradient(&sure, &[1.0], 1).unwrap();
        assert!(g.iter().all(|v| v.abs() <= PROBA_EPS));
    }

    #[test]
    fn logistic_learns_separable_data() {
        let xs: Vec<[f64; 2]> = (0..20)
            .map(|i| {
                let t = i as f64 / 20.0;
                if i % 2 == 0 {
                    [0.1 + 0.1 * t, 0.2]
                } else {
                    [0.8 + 0.1 * t, 0.7]
                }
            })
            .collect();
        let data: Vec<Labeled<'_>> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| (&x[..], (i % 2) as u8))
            .collect();
        let model = train(&data, &LearnerConfig::Logistic(LogisticConfig::default())).unwrap();
        for (x, y) in &data {
            let p = model.predict_proba(x).unwrap();
            assert_eq!(p > 0.5, *y == 1);
        }
    }

    #[test]
    fn model_snapshot_round_trip() {
        let xs = [[0.1, 0.9], [0.8, 0.2], [0.4, 0.4], [0.3, 0.35]];
        let data: Vec<Labeled<'_>> = xs.iter().enumerate().map(|(i, x)| (&x[..], (i % 2) as u8)).collect();
        let model = train(&data, &boosted(7)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back, model);
        for x in &xs {
            assert_eq!(
                back.predict_proba(x).unwrap().to_bits(),
                model.predict_proba(x).unwrap().to_bits()
            );
        }
    }
}
