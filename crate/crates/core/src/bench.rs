//! Strategy benchmarks: repeated oracle-driven sessions per strategy,
//! summarized as labels needed to reach the stop rule.
//!
//! Each repetition draws its own split from its seed. All strategies of a
//! repetition share that split and one LOF pass over its training pool. A
//! run that never reaches the stop rule counts as needing infinitely many
//! labels, so medians stay honest when some runs fail.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, EncodedDataset, FeatureSchema, RawRecord};
use crate::error::{Error, Result};
use crate::learner::LearnerConfig;
use crate::outlier::{self, LofParams};
use crate::query::{QueryStrategy, StrategyKind};
use crate::session::{
    curve_to_csv, CurvePoint, OracleKind, SeedingPolicy, Session, SessionConfig, SessionStatus, StopRule,
};

/// One benchmarked strategy. `seeding` overrides the benchmark-wide policy;
/// when absent the random baseline seeds randomly and every other strategy
/// uses the benchmark policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStrategy {
    #[serde(flatten)]
    pub strategy: QueryStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeding: Option<SeedingPolicy>,
}

impl From<QueryStrategy> for BenchStrategy {
    fn from(strategy: QueryStrategy) -> Self {
        BenchStrategy { strategy, seeding: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    /// Seeded row subsample taken before encoding.
    pub max_rows: Option<usize>,
    pub sample_seed: u64,
    pub train_fraction: f64,
    pub stratified: bool,
    pub strategies: Vec<BenchStrategy>,
    pub repetitions: usize,
    /// Per-repetition seeds; defaults to `0..repetitions`.
    pub seeds: Option<Vec<u64>>,
    pub learner: LearnerConfig,
    pub stop: StopRule,
    pub seeding: SeedingPolicy,
    pub seed_count: usize,
    pub batch_size: usize,
    pub lof_k: Option<usize>,
    pub output_dir: PathBuf,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            dataset: PathBuf::new(),
            schema: PathBuf::new(),
            max_rows: None,
            sample_seed: 0,
            train_fraction: 0.8,
            stratified: false,
            strategies: vec![
                QueryStrategy::of_kind(StrategyKind::Uncertainty).into(),
                QueryStrategy::of_kind(StrategyKind::Random).into(),
            ],
            repetitions: 20,
            seeds: None,
            learner: LearnerConfig::default(),
            stop: StopRule::default(),
            seeding: SeedingPolicy::Lof,
            seed_count: 10,
            batch_size: 1,
            lof_k: None,
            output_dir: PathBuf::from("bench-out"),
        }
    }
}

impl BenchConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: BenchConfig = serde_json::from_str(&text)?;
        // Relative paths are taken from the config file's directory.
        if let Some(dir) = path.parent() {
            for p in [&mut config.dataset, &mut config.schema, &mut config.output_dir] {
                if p.is_relative() && !p.as_os_str().is_empty() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be positive".into()));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.repetitions {
                return Err(Error::Config(format!(
                    "{} seeds given for {} repetitions",
                    seeds.len(),
                    self.repetitions
                )));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        for s in &self.strategies {
            self.session_config(s, 0).validate()?;
        }
        Ok(())
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| (0..self.repetitions as u64).collect())
    }

    fn session_config(&self, s: &BenchStrategy, seed: u64) -> SessionConfig {
        let default_seeding = if s.strategy.kind == StrategyKind::Random {
            SeedingPolicy::Random
        } else {
            self.seeding
        };
        SessionConfig {
            strategy: s.strategy.clone(),
            learner: self.learner.clone(),
            stop: self.stop.clone(),
            seeding: s.seeding.unwrap_or(default_seeding),
            seed_count: self.seed_count,
            batch_size: self.batch_size,
            lof_k: self.lof_k,
            seed,
        }
    }

    /// Loads, subsamples, encodes and binarizes the configured dataset.
    pub fn load_dataset(&self) -> Result<EncodedDataset> {
        let schema = FeatureSchema::load(&self.schema)?;
        let records = dataset::load_csv(&self.dataset, &schema)?;
        let records = subsample(records, self.max_rows, self.sample_seed);
        Ok(dataset::prepare(&records, &schema)?.with_source(self.dataset.display().to_string()))
    }
}

/// At most `max_rows` records, drawn without replacement and kept in file order.
pub fn subsample(records: Vec<RawRecord>, max_rows: Option<usize>, seed: u64) -> Vec<RawRecord> {
    match max_rows {
        Some(m) if m < records.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut keep = index::sample(&mut rng, records.len(), m).into_vec();
            keep.sort_unstable();
            keep.into_iter().map(|i| records[i].clone()).collect()
        }
        _ => records,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub strategy: String,
    pub seed: u64,
    pub status: SessionStatus,
    pub labels_used: usize,
    /// Labels at the point the stop rule succeeded.
    pub labels_to_success: Option<usize>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub runs: usize,
    pub successes: usize,
    /// `None` when the median run did not reach the stop rule.
    pub median_labels_to_success: Option<f64>,
    /// Median over the random baseline's median; `None` when either is unbounded.
    pub ratio_to_random: Option<f64>,
    pub threshold_not_reached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub repetitions: usize,
    pub seeds: Vec<u64>,
    pub stop: StopRule,
    pub train_size: usize,
    pub test_size: usize,
    pub strategies: Vec<StrategySummary>,
}

impl BenchSummary {
    pub fn strategy(&self, label: &str) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.strategy == label)
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub summary: BenchSummary,
    pub runs: Vec<RunResult>,
}

/// Median where `None` stands for an unbounded value. Even counts average
/// the two middle values.
pub fn median_with_failures(values: &[Option<usize>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values
        .iter()
        .map(|x| x.map_or(f64::INFINITY, |n| n as f64))
        .collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    m.is_finite().then_some(m)
}

fn run_one(config: &BenchConfig, strategy: &BenchStrategy, seed: u64, split: &dataset::Split, lof: &[outlier::LofScore]) -> Result<RunResult> {
    let cfg = config.session_config(strategy, seed);
    let label = cfg.strategy.label();
    let mut session = Session::init_with_lof(
        split.train.clone(),
        split.test.clone(),
        cfg,
        OracleKind::Dataset,
        Some(lof.to_vec()),
    )?;
    session.run_with_oracle()?;
    let labels_to_success = (session.status() == SessionStatus::StoppedSuccess)
        .then(|| session.curve().last().map(|p| p.labels_used))
        .flatten();
    Ok(RunResult {
        strategy: label,
        seed,
        status: session.status(),
        labels_used: session.labels_used(),
        labels_to_success,
        curve: session.curve().to_vec(),
    })
}

fn run_repetition(config: &BenchConfig, data: &EncodedDataset, seed: u64) -> Result<(usize, usize, Vec<RunResult>)> {
    let manifest = dataset::split_manifest(data, config.train_fraction, seed, config.stratified)?;
    let split = dataset::materialize(data, &manifest)?;
    if split.degenerate {
        return Err(Error::Config("split left the train or test side empty".into()));
    }
    let points: Vec<Vec<f64>> = split.train.instances.iter().map(|i| i.features.clone()).collect();
    let k = config
        .lof_k
        .unwrap_or_else(|| LofParams::for_pool(points.len()).k)
        .min(points.len().saturating_sub(1));
    let lof = outlier::lof_scores(&points, &split.train.ids(), LofParams { k })?;
    let runs = config
        .strategies
        .iter()
        .map(|s| run_one(config, s, seed, &split, &lof))
        .collect::<Result<Vec<_>>>()?;
    Ok((split.train.len(), split.test.len(), runs))
}

/// Runs every (repetition, strategy) pair on `data`. The first failing
/// repetition aborts the benchmark with its seed in the error.
pub fn run(config: &BenchConfig, data: &EncodedDataset) -> Result<BenchReport> {
    config.validate()?;
    let seeds = config.run_seeds();
    let per_rep: Vec<(usize, usize, Vec<RunResult>)> = seeds
        .par_iter()
        .map(|&seed| {
            run_repetition(config, data, seed).map_err(|e| Error::Run {
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (train_size, test_size) = per_rep.first().map_or((0, 0), |r| (r.0, r.1));
    let runs: Vec<RunResult> = per_rep.into_iter().flat_map(|r| r.2).collect();
    let labels: Vec<String> = config.strategies.iter().map(|s| s.strategy.label()).collect();

    let mut strategies: Vec<StrategySummary> = labels
        .iter()
        .map(|label| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| &r.strategy == label).collect();
            let successes = mine.iter().filter(|r| r.labels_to_success.is_some()).count();
            let to_success: Vec<Option<usize>> = mine.iter().map(|r| r.labels_to_success).collect();
            StrategySummary {
                strategy: label.clone(),
                runs: mine.len(),
                successes,
                median_labels_to_success: median_with_failures(&to_success),
                ratio_to_random: None,
                threshold_not_reached: successes == 0,
            }
        })
        .collect();

    let random_label = QueryStrategy::of_kind(StrategyKind::Random).label();
    let baseline = strategies
        .iter()
        .find(|s| s.strategy == random_label)
        .and_then(|s| s.median_labels_to_success);
    for s in &mut strategies {
        s.ratio_to_random = match (s.median_labels_to_success, baseline) {
            (Some(m), Some(b)) => Some(m / b),
            _ => None,
        };
    }

    Ok(BenchReport {
        summary: BenchSummary {
            repetitions: seeds.len(),
            seeds,
            stop: config.stop.clone(),
            train_size,
            test_size,
            strategies,
        },
        runs,
    })
}

/// Writes `curves/<strategy>_seed<seed>.csv` per run and `summary.json`.
pub fn write_report(report: &BenchReport, dir: &Path) -> Result<()> {
    let curves = dir.join("curves");
    fs::create_dir_all(&curves).map_err(|e| Error::io(&curves, e))?;
    for run in &report.runs {
        let path = curves.join(format!("{}_seed{}.csv", run.strategy, run.seed));
        fs::write(&path, curve_to_csv(&run.curve)).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&report.summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}
