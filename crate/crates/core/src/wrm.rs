//! Wavelet random matrices and rescaled log-eigenvalues.
//!
//! For detail vectors `D(2^j, k)` the wavelet random matrix is
//! `W = (1/n_j) sum_k D D^T`. Its eigenvalues scale like `(a 2^j)^{2H+1}`, so
//!
//! ```text
//! H_l = log(lambda_l(W)) / (2 log a) - 1/2
//! ```
//!
//! clusters around the Hurst modes of the latent system.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::par;
use crate::wavelet::WaveletDecomposition;

/// Symmetric PSD sample second-moment matrix of detail coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletRandomMatrix {
    matrix: DMatrix<f64>,
    octave: u32,
    effective_count: usize,
}

impl WaveletRandomMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn octave(&self) -> u32 {
        self.octave
    }

    pub fn effective_count(&self) -> usize {
        self.effective_count
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::symmetric_eigenvalues(&self.matrix)
    }
}

/// `(1/n_j) sum_k d_k d_k^T` from detail rows (one row per series).
pub fn wrm_from_rows(rows: &[Vec<f64>], octave: u32) -> Result<WaveletRandomMatrix> {
    let p = rows.len();
    let nj = rows.first().map_or(0, Vec::len);
    if p == 0 || nj == 0 {
        return Err(Error::Domain(format!("octave {octave} has no detail coefficients")));
    }
    if p >= nj {
        log::warn!("octave {octave}: p = {p} >= n_j = {nj}; the wavelet random matrix is rank deficient");
    }
    let mut matrix = DMatrix::zeros(p, p);
    for i in 0..p {
        for l in 0..=i {
            let v = linalg::dot_compensated(&rows[i], &rows[l]) / nj as f64;
            matrix[(i, l)] = v;
            matrix[(l, i)] = v;
        }
    }
    Ok(WaveletRandomMatrix { matrix, octave, effective_count: nj })
}

pub fn wavelet_random_matrix(decomp: &WaveletDecomposition, octave: u32) -> Result<WaveletRandomMatrix> {
    let rows = decomp.rows(octave).ok_or_else(|| {
        let (lo, hi) = decomp.octave_range();
        Error::Domain(format!("octave {octave} not in decomposition ({lo}..={hi})"))
    })?;
    wrm_from_rows(rows, octave)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LogEigenMode {
    SingleScale { octave: u32 },
    Multiscale { j1: u32, j2: u32 },
}

/// Sorted wavelet log-eigenvalues `H_1 <= ... <= H_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEigenSet {
    values: Vec<f64>,
    /// Natural log of the scale factor used to rescale (`ln 2` for multiscale slopes).
    scale_log: f64,
    #[serde(flatten)]
    mode: LogEigenMode,
}

impl LogEigenSet {
    pub fn new(mut values: Vec<f64>, scale_log: f64, mode: LogEigenMode) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite log-eigenvalue {v}")));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values, scale_log, mode })
    }

    /// Wraps arbitrary statistics (e.g. for testing or external input).
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Self::new(values, std::f64::consts::LN_2, LogEigenMode::SingleScale { octave: 0 })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale_log(&self) -> f64 {
        self.scale_log
    }

    pub fn mode(&self) -> LogEigenMode {
        self.mode
    }

    /// `H_p - H_1`.
    pub fn range(&self) -> f64 {
        match (self.values.first(), self.values.last()) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0.0,
        }
    }

    /// The same statistics on the e.s.d. scale `2H + 1`.
    pub fn esd_scale(&self) -> Vec<f64> {
        self.values.iter().map(|h| 2.0 * h + 1.0).collect()
    }
}

fn check_scale(a: f64) -> Result<()> {
    if !(a >= 2.0) || !a.is_finite() {
        return Err(Error::Config(format!("scale factor a = {a} must be at least 2")));
    }
    Ok(())
}

fn positive_spectrum(wrm: &WaveletRandomMatrix) -> Result<Vec<f64>> {
    let eig = wrm.eigenvalues();
    if eig[0] <= 0.0 {
        return Err(Error::Degenerate(format!(
            "octave {}: smallest eigenvalue {:e} is not positive (n_j = {}, p = {})",
            wrm.octave,
            eig[0],
            wrm.effective_count,
            wrm.p()
        )));
    }
    Ok(eig)
}

/// Maps eigenvalues through `log(lambda) / (2 log a) - 1/2`.
pub fn log_eigen_from_eigenvalues(eigenvalues: &[f64], a: f64) -> Result<Vec<f64>> {
    check_scale(a)?;
    if let Some(l) = eigenvalues.iter().find(|l| !(**l > 0.0)) {
        return Err(Error::Degenerate(format!("eigenvalue {l:e} is not positive")));
    }
    let denom = 2.0 * a.ln();
    Ok(eigenvalues.iter().map(|l| l.ln() / denom - 0.5).collect())
}

/// Rescaled and shifted log-eigenvalues of one wavelet random matrix.
pub fn log_eigen(wrm: &WaveletRandomMatrix, a: f64) -> Result<LogEigenSet> {
    check_scale(a)?;
    let eig = positive_spectrum(wrm)?;
    let values = log_eigen_from_eigenvalues(&eig, a)?;
    LogEigenSet::new(values, a.ln(), LogEigenMode::SingleScale { octave: wrm.octave })
}

/// Weighted least-squares slope of `y` on `x`.
pub fn weighted_slope(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Per-rank log-eigenvalue slopes over octaves `j1..=j2`.
///
/// For each rank `l`, `log2 lambda_l(W(2^j))` is regressed on `j` with
/// weights `n_j`; the slope `s_l` estimates `2H + 1`, so `H_l = (s_l - 1) / 2`.
pub fn log_eigen_multiscale(decomp: &WaveletDecomposition, j1: u32, j2: u32) -> Result<LogEigenSet> {
    if j1 >= j2 {
        return Err(Error::Config(format!("multiscale range needs j1 < j2 (got {j1}, {j2})")));
    }
    let octaves: Vec<u32> = (j1..=j2).collect();
    let spectra = par::map_slice(&octaves, |&j| {
        wavelet_random_matrix(decomp, j).and_then(|w| {
            let eig = positive_spectrum(&w)?;
            Ok((eig, w.effective_count as f64))
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = octaves.iter().map(|&j| j as f64).collect();
    let w: Vec<f64> = spectra.iter().map(|(_, nj)| *nj).collect();
    let p = decomp.p();
    let values = (0..p)
        .map(|l| {
            let y: Vec<f64> = spectra.iter().map(|(eig, _)| eig[l].log2()).collect();
            (weighted_slope(&x, &y, &w) - 1.0) / 2.0
        })
        .collect();
    LogEigenSet::new(values, std::f64::consts::LN_2, LogEigenMode::Multiscale { j1, j2 })
}

/// `log(lambda_p / lambda_1) / (2 log a)` for the wavelet random matrix at `octave`.
pub fn heuristic_m_from_eigenvalues(eigenvalues: &[f64], a: f64) -> Result<f64> {
    check_scale(a)?;
    let (lo, hi) = (eigenvalues[0], eigenvalues[eigenvalues.len() - 1]);
    if !(lo > 0.0) {
        return Err(Error::Degenerate(format!("smallest eigenvalue {lo:e} is not positive")));
    }
    Ok(((hi / lo).ln() / (2.0 * a.ln())).max(0.0))
}

/// Heuristic upper end `M` of the threshold grid.
pub fn heuristic_m(decomp: &WaveletDecomposition, octave: u32, a: f64) -> Result<f64> {
    let w = wavelet_random_matrix(decomp, octave)?;
    heuristic_m_from_eigenvalues(&positive_spectrum(&w)?, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_rows(p: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::seed::rng(seed, &[]);
        (0..p).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    #[test]
    fn single_vector_gives_rank_one() {
        let d = vec![vec![1.0], vec![2.0], vec![-3.0]];
        let w = wrm_from_rows(&d, 1).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, -3.0, 2.0, 4.0, -6.0, -3.0, -6.0, 9.0]);
        assert_eq!(w.matrix(), &want);
        let eig = w.eigenvalues();
        assert!(eig[0].abs() < 1e-12 && eig[1].abs() < 1e-12);
        assert!((eig[2] - 14.0).abs() < 1e-12);
        assert!(log_eigen(&w, 4.0).is_err());
    }

    #[test]
    fn white_noise_matrix_near_identity() {
        let rows = gaussian_rows(4, 100_000, 8);
        let w = wrm_from_rows(&rows, 1).unwrap();
        assert!((w.matrix() - DMatrix::<f64>::identity(4, 4)).amax() < 0.05);
        assert_eq!(w.matrix(), &w.matrix().transpose());
    }

    #[test]
    fn gram_matrix_is_psd() {
        for seed in 0..10 {
            let rows = gaussian_rows(12, 30, seed);
            let w = wrm_from_rows(&rows, 2).unwrap();
            let trace = w.matrix().trace();
            assert!(w.eigenvalues()[0] >= -1e-10 * trace);
        }
    }

    #[test]
    fn log_eigen_inverts_power_law() {
        let a: f64 = 16.0;
        let h = 0.37;
        let lam = a.powf(2.0 * h + 1.0);
        let got = log_eigen_from_eigenvalues(&[lam, lam], a).unwrap();
        assert!(got.iter().all(|g| (g - h).abs() < 1e-14));
        let unit = log_eigen_from_eigenvalues(&[1.0], 7.0).unwrap();
        assert_eq!(unit, vec![-0.5]);
        assert!(log_eigen_from_eigenvalues(&[1.0], 1.0).is_err());
        assert!(matches!(log_eigen_from_eigenvalues(&[0.0, 1.0], 4.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn log_eigen_is_monotone_in_spectrum() {
        let lams = [0.3, 1.0, 2.5, 9.0, 40.0];
        let h = log_eigen_from_eigenvalues(&lams, 8.0).unwrap();
        assert!(h.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn two_point_slope() {
        let s = weighted_slope(&[2.0, 3.0], &[5.0, 7.5], &[100.0, 50.0]);
        assert!((s - 2.5).abs() < 1e-14);
        let s = weighted_slope(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 5.0, 7.0], &[8.0, 4.0, 2.0, 1.0]);
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn heuristic_m_values() {
        assert_eq!(heuristic_m_from_eigenvalues(&[2.0, 2.0, 2.0], 16.0).unwrap(), 0.0);
        let a: f64 = 8.0;
        let m = heuristic_m_from_eigenvalues(&[0.5, 1.0, 0.5 * a * a], a).unwrap();
        assert!((m - 1.0).abs() < 1e-14);
        assert!(heuristic_m_from_eigenvalues(&[0.0, 1.0], a).is_err());
    }

    #[test]
    fn missing_octave_is_domain_error() {
        use crate::synth::{Panel, PanelKind};
        use crate::wavelet::{decompose, FilterBank};
        let rows = gaussian_rows(2, 256, 1);
        let panel = Panel::from_rows(&rows, PanelKind::Observed, None).unwrap();
        let dec = decompose(&panel, &FilterBank::daubechies(2).unwrap(), 3).unwrap();
        assert!(matches!(wavelet_random_matrix(&dec, 5), Err(Error::Domain(_))));
        assert!(log_eigen_multiscale(&dec, 3, 2).is_err());
    }
}
