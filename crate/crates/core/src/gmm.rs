//! One-dimensional Gaussian mixtures with unequal variances, fitted by EM and
//! selected by BIC. Used as the comparison method for mode counting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::wrm::LogEigenSet;

/// Stop when the log-likelihood improves by less than this.
pub const EM_TOLERANCE: f64 = 1e-8;
pub const EM_MAX_ITERS: usize = 500;
/// Components whose variance falls below this are removed.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub loglik: f64,
    pub bic: f64,
    pub iterations: usize,
    /// Components were dropped after a variance collapse.
    pub collapsed: bool,
    #[serde(skip)]
    pub loglik_trace: Vec<f64>,
}

/// `-2 loglik + (3k - 1) log n`; smaller is better.
pub fn bic(loglik: f64, k: usize, n: usize) -> f64 {
    -2.0 * loglik + (3 * k - 1) as f64 * (n as f64).ln()
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

struct Mixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl Mixture {
    /// Responsibilities (row per point) and the log-likelihood.
    fn e_step(&self, data: &[f64]) -> (Vec<Vec<f64>>, f64) {
        let k = self.weights.len();
        let mut loglik = 0.0;
        let resp = data
            .iter()
            .map(|&x| {
                let logs: Vec<f64> = (0..k)
                    .map(|c| self.weights[c].ln() + log_normal_pdf(x, self.means[c], self.variances[c]))
                    .collect();
                let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = logs.iter().map(|l| (l - peak).exp()).sum();
                let norm = peak + total.ln();
                loglik += norm;
                logs.iter().map(|l| (l - norm).exp()).collect()
            })
            .collect();
        (resp, loglik)
    }

    fn loglik(&self, data: &[f64]) -> f64 {
        self.e_step(data).1
    }

    fn m_step(&mut self, data: &[f64], resp: &[Vec<f64>]) {
        let n = data.len() as f64;
        for c in 0..self.weights.len() {
            let nc: f64 = resp.iter().map(|r| r[c]).sum();
            let mean = if nc > 0.0 {
                data.iter().zip(resp).map(|(x, r)| r[c] * x).sum::<f64>() / nc
            } else {
                self.means[c]
            };
            let var = if nc > 0.0 {
                data.iter().zip(resp).map(|(x, r)| r[c] * (x - mean).powi(2)).sum::<f64>() / nc
            } else {
                0.0
            };
            self.weights[c] = nc / n;
            self.means[c] = mean;
            self.variances[c] = var;
        }
    }

    /// Drops collapsed components; returns whether any were removed.
    fn prune(&mut self) -> bool {
        let keep: Vec<usize> = (0..self.weights.len())
            .filter(|&c| self.variances[c] >= VARIANCE_FLOOR && self.weights[c] > 0.0)
            .collect();
        if keep.len() == self.weights.len() {
            return false;
        }
        let total: f64 = keep.iter().map(|&c| self.weights[c]).sum();
        self.weights = keep.iter().map(|&c| self.weights[c] / total).collect();
        self.means = keep.iter().map(|&c| self.means[c]).collect();
        self.variances = keep.iter().map(|&c| self.variances[c]).collect();
        true
    }
}

/// EM from equally spaced quantiles with the pooled sample variance.
pub fn fit_em(data: &[f64], k: usize) -> Result<GmmFit> {
    if k == 0 || data.len() < 2 {
        return Err(Error::Domain("EM needs k >= 1 and at least two points".into()));
    }
    let n = data.len();
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = data.iter().sum::<f64>() / n as f64;
    let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var < VARIANCE_FLOOR {
        return Err(Error::Degenerate("data have (near) zero variance".into()));
    }
    let mut mix = Mixture {
        weights: vec![1.0 / k as f64; k],
        means: (0..k).map(|c| quantile(&sorted, (c as f64 + 0.5) / k as f64)).collect(),
        variances: vec![var; k],
    };

    let mut collapsed = false;
    let mut trace = Vec::new();
    let mut prev = mix.loglik(data);
    trace.push(prev);
    let mut iterations = 0;
    while iterations < EM_MAX_ITERS {
        iterations += 1;
        let (resp, _) = mix.e_step(data);
        mix.m_step(data, &resp);
        if mix.prune() {
            collapsed = true;
            prev = mix.loglik(data);
            trace.push(prev);
            continue;
        }
        let ll = mix.loglik(data);
        debug_assert!(
            ll >= prev - 1e-9 * (1.0 + prev.abs()),
            "EM log-likelihood decreased: {prev} -> {ll}"
        );
        trace.push(ll);
        let done = (ll - prev).abs() < EM_TOLERANCE;
        prev = ll;
        if done {
            break;
        }
    }
    let k = mix.weights.len();
    Ok(GmmFit {
        k,
        bic: bic(prev, k, n),
        loglik: prev,
        weights: mix.weights,
        means: mix.means,
        variances: mix.variances,
        iterations,
        collapsed,
        loglik_trace: trace,
    })
}

/// Fits `k = 1..=k_max` components and returns the BIC-optimal fit.
pub fn gmm_select_values(data: &[f64], k_max: usize) -> Result<GmmFit> {
    if k_max == 0 {
        return Err(Error::Config("k_max must be at least 1".into()));
    }
    if data.len() < 2 * k_max {
        return Err(Error::Config(format!(
            "{} points are too few for up to {k_max} components (need 2 k_max)",
            data.len()
        )));
    }
    let ks: Vec<usize> = (1..=k_max).collect();
    let fits = par::map_slice(&ks, |&k| fit_em(data, k))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, f) in fits.iter().enumerate() {
        if f.bic < fits[best].bic {
            best = i;
        }
    }
    Ok(fits.into_iter().nth(best).expect("non-empty"))
}

pub fn gmm_select(h_set: &LogEigenSet, k_max: usize) -> Result<GmmFit> {
    gmm_select_values(h_set.values(), k_max)
}
