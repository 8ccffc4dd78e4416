//! Local Outlier Factor scoring over encoded feature vectors.
//!
//! Exact O(n²) Euclidean neighbour search. Neighbourhoods contain exactly
//! `k` points, ties at equal distance broken by lower id. When every
//! reachability distance around a point is zero (a clump of at least `k + 1`
//! duplicates) its local reachability density is `+∞`, and `∞/∞` ratios
//! count as 1 so every point gets a score.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LofParams {
    pub k: usize,
}

impl Default for LofParams {
    fn default() -> Self {
        LofParams { k: DEFAULT_K }
    }
}

impl LofParams {
    /// The default neighbour count capped at `n - 1`.
    pub fn for_pool(n: usize) -> Self {
        LofParams {
            k: DEFAULT_K.min(n.saturating_sub(1)).max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LofScore {
    pub id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Index into the input point list.
    pub id: usize,
    pub distance: f64,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || n <= k {
        return Err(Error::Parameter(format!(
            "LOF needs 1 <= k <= n - 1, got k = {k} for n = {n}"
        )));
    }
    Ok(())
}

/// The `k` nearest other points of every point, ascending by distance then id.
pub fn knn_distances(points: &[Vec<f64>], k: usize) -> Result<Vec<Vec<Neighbor>>> {
    check_k(points.len(), k)?;
    let n = points.len();
    let by_distance_then_id = |a: &Neighbor, b: &Neighbor| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.id.cmp(&b.id))
    };
    Ok((0..n)
        .map(|i| {
            let mut row: Vec<Neighbor> = (0..n)
                .filter(|&j| j != i)
                .map(|j| Neighbor {
                    id: j,
                    distance: euclidean(&points[i], &points[j]),
                })
                .collect();
            if k < row.len() {
                row.select_nth_unstable_by(k - 1, by_distance_then_id);
                row.truncate(k);
            }
            row.sort_by(by_distance_then_id);
            row
        })
        .collect())
}

/// LOF score of every point; `ids[i]` labels `points[i]` in the output.
pub fn lof_scores(points: &[Vec<f64>], ids: &[usize], params: LofParams) -> Result<Vec<LofScore>> {
    if ids.len() != points.len() {
        return Err(Error::Parameter(format!(
            "{} ids for {} points",
            ids.len(),
            points.len()
        )));
    }
    let neighbors = knn_distances(points, params.k)?;
    let k_distance: Vec<f64> = neighbors
        .iter()
        .map(|row| row.last().map_or(0.0, |nb| nb.distance))
        .collect();

    let lrd: Vec<f64> = neighbors
        .iter()
        .map(|row| {
            let total: f64 = row
                .iter()
                .map(|nb| nb.distance.max(k_distance[nb.id]))
                .sum();
            let mean = total / row.len() as f64;
            if mean == 0.0 {
                f64::INFINITY
            } else {
                1.0 / mean
            }
        })
        .collect();

    Ok(neighbors
        .iter()
        .enumerate()
        .map(|(p, row)| {
            let total: f64 = row.iter().map(|nb| density_ratio(lrd[nb.id], lrd[p])).sum();
            LofScore {
                id: ids[p],
                score: total / row.len() as f64,
            }
        })
        .collect())
}

fn density_ratio(neighbor: f64, own: f64) -> f64 {
    if neighbor.is_infinite() && own.is_infinite() {
        1.0
    } else {
        neighbor / own
    }
}

/// Ids by descending score, truncated to `ceil(top_fraction * n)`; equal
/// scores in ascending id order.
pub fn rank_pool(scores: &[LofScore], top_fraction: f64) -> Vec<usize> {
    let mut sorted: Vec<&LofScore> = scores.iter().collect();
    sorted.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.id.cmp(&b.id),
        other => other,
    });
    let keep = ((top_fraction.clamp(0.0, 1.0) * scores.len() as f64).ceil() as usize)
        .min(scores.len());
    sorted.into_iter().take(keep).map(|s| s.id).collect()
}

/// Writes `id,score` rows with a header. Infinite scores are written as `inf`.
pub fn write_scores_csv<W: Write>(writer: W, scores: &[LofScore]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["id", "score"])?;
    for s in scores {
        wtr.write_record([s.id.to_string(), s.score.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<lof scores>", e))?;
    Ok(())
}

pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<Vec<LofScore>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let mut scores = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let bad = |column: &str, token: &str| Error::Parse {
            row: row + 1,
            column: column.into(),
            token: token.into(),
        };
        let id = field(0).parse().map_err(|_| bad("id", field(0)))?;
        let score = field(1).parse().map_err(|_| bad("score", field(1)))?;
        scores.push(LofScore { id, score });
    }
    Ok(scores)
}
