//! Reference implementations written straight from the textbook
//! definitions, deliberately sharing no code with the library.
#![allow(dead_code)]

use alids_core::learner::{self, LearnerConfig, Model};

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    s.sqrt()
}

/// Indices of the k nearest other points, by (distance, index).
fn neighbourhood(points: &[Vec<f64>], p: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = Vec::new();
    for q in 0..points.len() {
        if q != p {
            others.push((distance(&points[p], &points[q]), q));
        }
    }
    others.sort_by(|a, b| a.partial_cmp(b).unwrap());
    others.into_iter().take(k).map(|(_, q)| q).collect()
}

/// LOF by the definition: k-distance, reachability distance, local
/// reachability density, then the mean density ratio. A zero mean
/// reachability gives infinite density; infinite over infinite counts as 1.
pub fn brute_lof(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    let hoods: Vec<Vec<usize>> = (0..n).map(|p| neighbourhood(points, p, k)).collect();
    let kdist: Vec<f64> = (0..n)
        .map(|p| distance(&points[p], &points[*hoods[p].last().unwrap()]))
        .collect();
    let mut lrd = vec![0.0; n];
    for p in 0..n {
        let mut sum = 0.0;
        for &o in &hoods[p] {
            let d = distance(&points[p], &points[o]);
            sum += if kdist[o] > d { kdist[o] } else { d };
        }
        lrd[p] = if sum == 0.0 { f64::INFINITY } else { k as f64 / sum };
    }
    let mut lof = vec![0.0; n];
    for p in 0..n {
        let mut sum = 0.0;
        for &o in &hoods[p] {
            sum += if lrd[o].is_infinite() && lrd[p].is_infinite() {
                1.0
            } else {
                lrd[o] / lrd[p]
            };
        }
        lof[p] = sum / k as f64;
    }
    lof
}

/// Posterior of a logistic model written out by hand.
pub fn logistic_p(weights: &[f64], bias: f64, x: &[f64]) -> f64 {
    let mut z = bias;
    for i in 0..x.len() {
        z += weights[i] * x[i];
    }
    1.0 / (1.0 + (-z).exp())
}

/// Log-loss of one labelled example under a logistic model.
pub fn log_loss(weights: &[f64], bias: f64, x: &[f64], y: u8) -> f64 {
    let p = logistic_p(weights, bias, x);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Central finite-difference gradient of the log-loss over (weights, bias).
pub fn fd_gradient(weights: &[f64], bias: f64, x: &[f64], y: u8, h: f64) -> Vec<f64> {
    let mut grad = Vec::new();
    for i in 0..weights.len() {
        let mut up = weights.to_vec();
        let mut down = weights.to_vec();
        up[i] += h;
        down[i] -= h;
        grad.push((log_loss(&up, bias, x, y) - log_loss(&down, bias, x, y)) / (2.0 * h));
    }
    grad.push((log_loss(weights, bias + h, x, y) - log_loss(weights, bias - h, x, y)) / (2.0 * h));
    grad
}

/// Expected gradient length as the explicit sum over both labels of
/// P(y|x) times the norm of the per-label log-loss gradient.
pub fn explicit_egl(weights: &[f64], bias: f64, x: &[f64]) -> f64 {
    let p = logistic_p(weights, bias, x);
    let mut total = 0.0;
    for (y, prob) in [(0.0, 1.0 - p), (1.0, p)] {
        let r = p - y;
        let mut sq = r * r;
        for v in x {
            sq += (r * v) * (r * v);
        }
        total += prob * sq.sqrt();
    }
    total
}

pub fn entropy_bits(dist: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in dist {
        if p > 0.0 {
            h -= p * p.log2();
        }
    }
    h
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Loss {
    ZeroOne,
    Log,
}

fn pointwise_loss(q: f64, loss: Loss) -> f64 {
    match loss {
        Loss::ZeroOne => {
            if q < 1.0 - q {
                q
            } else {
                1.0 - q
            }
        }
        Loss::Log => {
            let mut h = 0.0;
            for v in [q, 1.0 - q] {
                if v > 0.0 {
                    h -= v * v.ln();
                }
            }
            h
        }
    }
}

/// Expected error reduction by its definition: for each hypothetical label
/// of `candidate`, retrain on the labelled set plus that example, average
/// the retrained model's expected loss over the rest of the pool, and weight
/// by the current model's probability of that label. Returns the negated
/// expectation, so higher is better.
pub fn brute_eer(
    model: &Model,
    labeled: &[(Vec<f64>, u8)],
    rest_of_pool: &[Vec<f64>],
    candidate: &[f64],
    loss: Loss,
    config: &LearnerConfig,
) -> f64 {
    let p = model.predict_proba(candidate).unwrap();
    let mut expected = 0.0;
    for (y, weight) in [(0u8, 1.0 - p), (1u8, p)] {
        if weight == 0.0 {
            continue;
        }
        let mut data: Vec<(&[f64], u8)> = labeled.iter().map(|(x, l)| (x.as_slice(), *l)).collect();
        data.push((candidate, y));
        let retrained = learner::train(&data, config).unwrap();
        let mut sum = 0.0;
        for x in rest_of_pool {
            sum += pointwise_loss(retrained.predict_proba(x).unwrap(), loss);
        }
        expected += weight * sum / rest_of_pool.len() as f64;
    }
    -expected
}

/// Index of the posterior nearest 0.5, the first one on ties.
pub fn nearest_half(posteriors: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..posteriors.len() {
        if (posteriors[i] - 0.5).abs() < (posteriors[best] - 0.5).abs() {
            best = i;
        }
    }
    best
}
