//! Model selection over the threshold grid `eps_k = k M / m`.
//!
//! Every grid point is clustered independently; the scheme with the smallest
//! intra-cluster standard deviation wins. Schemes containing a cluster
//! smaller than `min_cluster` are kept in the trace but excluded from the
//! argmin, since singleton clusters drive the ICSD to zero trivially.

use serde::{Deserialize, Serialize};

use crate::cluster::{hdes, ClusterScheme};
use crate::error::{Error, Result};
use crate::wrm::LogEigenSet;
use crate::{par, seed};

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionParams {
    /// Upper end `M` of the grid.
    pub upper: f64,
    /// Number of grid points `m`.
    pub grid_size: usize,
    pub min_cluster: usize,
    pub seed: u64,
    /// Retain every grid point's scheme in the trace (otherwise only the winner).
    pub keep_schemes: bool,
}

impl SelectionParams {
    pub fn new(upper: f64, grid_size: usize, seed: u64) -> Self {
        Self { upper, grid_size, min_cluster: 2, seed, keep_schemes: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub grid: Vec<f64>,
    pub icsd_curve: Vec<f64>,
    pub r_hat_curve: Vec<usize>,
    /// Grid points excluded from the argmin by the minimum cluster size.
    pub excluded: Vec<bool>,
    pub chosen_index: usize,
    /// True when every grid point was excluded and the size guard was dropped.
    pub guard_relaxed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schemes: Option<Vec<ClusterScheme>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub r_hat: usize,
    pub modes: Vec<f64>,
    pub probs: Vec<f64>,
    pub epsilon_ms: f64,
    pub icsd: f64,
    pub scheme: ClusterScheme,
    pub trace: SelectionTrace,
}

/// `eps_k = k M / m` for `k = 1..=m`.
pub fn threshold_grid(upper: f64, grid_size: usize) -> Vec<f64> {
    (1..=grid_size).map(|k| k as f64 * upper / grid_size as f64).collect()
}

/// Index of the smallest ICSD among `allowed` points; first index on ties.
fn argmin_allowed(icsd: &[f64], allowed: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &v) in icsd.iter().enumerate() {
        if !allowed[k] {
            continue;
        }
        match best {
            Some(b) if icsd[b] <= v => {}
            _ => best = Some(k),
        }
    }
    best
}

pub fn wrmsm(h_set: &LogEigenSet, params: &SelectionParams) -> Result<EstimationResult> {
    if h_set.is_empty() {
        return Err(Error::Domain("no log-eigenvalues to cluster".into()));
    }
    if !(params.upper > 0.0) || !params.upper.is_finite() {
        return Err(Error::Config(format!("grid bound M = {} must be positive", params.upper)));
    }
    if params.grid_size == 0 {
        return Err(Error::Config("grid size m must be at least 1".into()));
    }
    if params.min_cluster == 0 {
        return Err(Error::Config("minimum cluster size must be at least 1".into()));
    }
    let grid = threshold_grid(params.upper, params.grid_size);
    // per-threshold seeds depend on the threshold value, so refined grids reuse them
    let schemes = par::map_slice(&grid, |&eps| hdes(h_set, eps, seed::derive(params.seed, &[eps.to_bits()])))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let icsd_curve: Vec<f64> = schemes.iter().map(|s| s.icsd).collect();
    let r_hat_curve: Vec<usize> = schemes.iter().map(|s| s.r_hat).collect();
    let excluded: Vec<bool> = schemes.iter().map(|s| s.smallest_cluster() < params.min_cluster).collect();
    let allowed: Vec<bool> = excluded.iter().map(|e| !e).collect();
    let (chosen_index, guard_relaxed) = match argmin_allowed(&icsd_curve, &allowed) {
        Some(k) => (k, false),
        None => {
            log::warn!(
                "every threshold yields a cluster smaller than {}; ignoring the size guard",
                params.min_cluster
            );
            (argmin_allowed(&icsd_curve, &vec![true; grid.len()]).expect("non-empty grid"), true)
        }
    };
    let scheme = schemes[chosen_index].clone();
    Ok(EstimationResult {
        r_hat: scheme.r_hat,
        modes: scheme.mode_estimates.clone(),
        probs: scheme.prob_estimates.clone(),
        epsilon_ms: grid[chosen_index],
        icsd: scheme.icsd,
        scheme,
        trace: SelectionTrace {
            grid,
            icsd_curve,
            r_hat_curve,
            excluded,
            chosen_index,
            guard_relaxed,
            schemes: params.keep_schemes.then_some(schemes),
        },
    })
}
