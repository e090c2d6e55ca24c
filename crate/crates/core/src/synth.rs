//! Synthetic rH-fBm panels.
//!
//! A latent panel `X` has independent rows, each a standard fractional
//! Brownian motion whose Hurst exponent is drawn from a discrete
//! [`HurstDistribution`]. The observed panel is `Y = P X` for an invertible
//! mixing matrix `P` (random orthogonal by default).
//!
//! Paths are synthesized exactly: fractional Gaussian noise is drawn by
//! circulant embedding of its autocovariance and cumulated. The Cholesky
//! factor of the fBm covariance is the fallback whenever the embedding has a
//! materially negative eigenvalue.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{par, seed};

/// Discrete law of Hurst exponents: sorted modes in (0,1) and their probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution")]
pub struct HurstDistribution {
    modes: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDistribution {
    modes: Vec<f64>,
    probs: Vec<f64>,
}

impl TryFrom<RawDistribution> for HurstDistribution {
    type Error = Error;

    fn try_from(raw: RawDistribution) -> Result<Self> {
        HurstDistribution::new(raw.modes, raw.probs)
    }
}

impl HurstDistribution {
    pub fn new(modes: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Config("Hurst distribution needs at least one mode".into()));
        }
        if modes.len() != probs.len() {
            return Err(Error::Config(format!(
                "{} modes but {} probabilities",
                modes.len(),
                probs.len()
            )));
        }
        if let Some(h) = modes.iter().find(|h| !(**h > 0.0 && **h < 1.0)) {
            return Err(Error::Config(format!("Hurst mode {h} outside (0,1)")));
        }
        if modes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("Hurst modes must be strictly increasing".into()));
        }
        if let Some(q) = probs.iter().find(|q| !(**q > 0.0 && **q <= 1.0)) {
            return Err(Error::Config(format!("mode probability {q} outside (0,1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mode probabilities sum to {total}, not 1")));
        }
        Ok(Self { modes, probs })
    }

    pub fn point_mass(h: f64) -> Result<Self> {
        Self::new(vec![h], vec![1.0])
    }

    /// Uniform law over `modes` (given in increasing order).
    pub fn uniform(modes: Vec<f64>) -> Result<Self> {
        let r = modes.len();
        if r == 0 {
            return Err(Error::Config("Hurst distribution needs at least one mode".into()));
        }
        let mut probs = vec![1.0 / r as f64; r];
        // make the sum exactly representable as 1 within rounding
        let head: f64 = probs[..r - 1].iter().sum();
        probs[r - 1] = 1.0 - head;
        Self::new(modes, probs)
    }

    /// Builds a law from possibly unsorted, possibly repeated support points,
    /// merging the mass of coincident modes.
    pub fn from_support(points: &[(f64, f64)]) -> Result<Self> {
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut modes: Vec<f64> = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        for (h, q) in pts {
            match modes.last() {
                Some(&last) if (last - h).abs() < 1e-12 => *probs.last_mut().unwrap() += q,
                _ => {
                    modes.push(h);
                    probs.push(q);
                }
            }
        }
        Self::new(modes, probs)
    }

    pub fn modes(&self) -> &[f64] {
        &self.modes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Number of modes `r`.
    pub fn r(&self) -> usize {
        self.modes.len()
    }

    /// Smallest gap between modes; infinite for a point mass.
    pub fn delta_min(&self) -> f64 {
        self.modes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest mode.
    pub fn min_mode(&self) -> f64 {
        self.modes[0]
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (h, q) in self.modes.iter().zip(&self.probs) {
            acc += q;
            if u < acc {
                return *h;
            }
        }
        *self.modes.last().unwrap()
    }
}

/// Draws `p` i.i.d. Hurst exponents (the diagonal of the Hurst matrix).
pub fn sample_hurst_diag(dist: &HurstDistribution, p: usize, seed: u64) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::Config("dimension p must be at least 1".into()));
    }
    let mut rng = seed::rng(seed, &[]);
    Ok((0..p).map(|_| dist.draw(&mut rng)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelKind {
    Latent,
    Observed,
}

/// A `p x n` panel: rows are series, columns are time points.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    data: DMatrix<f64>,
    kind: PanelKind,
    seed: Option<u64>,
}

impl Panel {
    pub fn new(data: DMatrix<f64>, kind: PanelKind, seed: Option<u64>) -> Result<Self> {
        if data.nrows() < 1 {
            return Err(Error::Data("panel needs at least one series".into()));
        }
        if data.ncols() < 2 {
            return Err(Error::Data("panel needs at least two time points".into()));
        }
        if let Some((idx, _)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (row, col) = (idx % data.nrows(), idx / data.nrows());
            return Err(Error::Data(format!("non-finite entry at series {row}, time {col}")));
        }
        Ok(Self { data, kind, seed })
    }

    /// Builds a panel from row vectors of equal length.
    pub fn from_rows(rows: &[Vec<f64>], kind: PanelKind, seed: Option<u64>) -> Result<Self> {
        let p = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Data("panel rows have unequal lengths".into()));
        }
        Self::new(DMatrix::from_fn(p, n, |i, t| rows[i][t]), kind, seed)
    }

    pub fn p(&self) -> usize {
        self.data.nrows()
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn kind(&self) -> PanelKind {
        self.kind
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.p()).map(|i| self.row(i)).collect()
    }
}

/// Autocovariance of unit-variance fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let k = k as f64;
    let e = 2.0 * hurst;
    0.5 * ((k + 1.0).powf(e) - 2.0 * k.powf(e) + (k - 1.0).abs().powf(e))
}

/// Covariance of `(B_H(1), ..., B_H(n))`: `(|s|^{2H} + |t|^{2H} - |t-s|^{2H}) / 2`.
pub fn fbm_covariance(hurst: f64, n: usize) -> DMatrix<f64> {
    let e = 2.0 * hurst;
    DMatrix::from_fn(n, n, |i, j| {
        let (s, t) = ((i + 1) as f64, (j + 1) as f64);
        0.5 * (s.powf(e) + t.powf(e) - (t - s).abs().powf(e))
    })
}

/// Which exact method a generator ended up using.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbmMethod {
    CirculantEmbedding,
    Cholesky,
}

enum Engine {
    Circulant {
        /// `sqrt(lambda_k / N)` for the embedding eigenvalues.
        scale: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    Cholesky {
        lower: DMatrix<f64>,
    },
}

/// Reusable exact sampler of fBm paths `B_H(1..=n)` for one Hurst exponent.
pub struct FbmGenerator {
    hurst: f64,
    n: usize,
    engine: Engine,
}

/// Relative size of a negative embedding eigenvalue tolerated as roundoff.
const EMBEDDING_TOLERANCE: f64 = 1e-10;

impl FbmGenerator {
    pub fn new(hurst: f64, n: usize) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(Error::Domain(format!("Hurst exponent {hurst} outside (0,1)")));
        }
        if n == 0 {
            return Err(Error::Config("path length must be positive".into()));
        }
        match Self::circulant(hurst, n) {
            Some(engine) => Ok(Self { hurst, n, engine }),
            None => {
                log::warn!("circulant embedding not PSD for H={hurst}, n={n}; using Cholesky");
                Self::with_cholesky(hurst, n)
            }
        }
    }

    /// Forces the Cholesky engine (O(n^3); intended for short paths).
    pub fn with_cholesky(hurst: f64, n: usize) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(Error::Domain(format!("Hurst exponent {hurst} outside (0,1)")));
        }
        let cov = fbm_covariance(hurst, n);
        let lower = cov
            .cholesky()
            .ok_or_else(|| Error::Degenerate(format!("fBm covariance not PD (H={hurst}, n={n})")))?
            .l();
        Ok(Self { hurst, n, engine: Engine::Cholesky { lower } })
    }

    fn circulant(hurst: f64, n: usize) -> Option<Engine> {
        let half = n.next_power_of_two().max(2);
        let size = 2 * half;
        let mut row: Vec<Complex64> = (0..size)
            .map(|k| {
                let lag = if k <= half { k } else { size - k };
                Complex64::new(fgn_autocovariance(hurst, lag), 0.0)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(size);
        fft.process(&mut row);
        let peak = row.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
        let mut scale = Vec::with_capacity(size);
        for c in &row {
            if c.re < -EMBEDDING_TOLERANCE * peak {
                return None;
            }
            scale.push((c.re.max(0.0) / size as f64).sqrt());
        }
        Some(Engine::Circulant { scale, fft })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn method(&self) -> FbmMethod {
        match self.engine {
            Engine::Circulant { .. } => FbmMethod::CirculantEmbedding,
            Engine::Cholesky { .. } => FbmMethod::Cholesky,
        }
    }

    /// Draws one path `B_H(1), ..., B_H(n)`.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match &self.engine {
            Engine::Circulant { scale, fft } => {
                let mut buf: Vec<Complex64> = scale
                    .iter()
                    .map(|&s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex64::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                let mut acc = 0.0;
                buf[..self.n]
                    .iter()
                    .map(|c| {
                        acc += c.re;
                        acc
                    })
                    .collect()
            }
            Engine::Cholesky { lower } => {
                let z: Vec<f64> = (0..self.n).map(|_| rng.sample(StandardNormal)).collect();
                (0..self.n)
                    .map(|i| (0..=i).map(|k| lower[(i, k)] * z[k]).sum())
                    .collect()
            }
        }
    }

    /// Covariance matrix of the generated path implied by the engine.
    pub fn implied_covariance(&self) -> DMatrix<f64> {
        match &self.engine {
            Engine::Cholesky { lower } => lower * lower.transpose(),
            Engine::Circulant { scale, .. } => {
                // increment covariance c_k = sum_j s_j^2 cos(2 pi j k / N)
                let size = scale.len();
                let lags: Vec<f64> = (0..self.n)
                    .map(|k| {
                        scale
                            .iter()
                            .enumerate()
                            .map(|(j, s)| {
                                let w = 2.0 * std::f64::consts::PI * (j * k % size) as f64
                                    / size as f64;
                                s * s * w.cos()
                            })
                            .sum()
                    })
                    .collect();
                let inc = DMatrix::from_fn(self.n, self.n, |i, j| lags[i.abs_diff(j)]);
                let sum = DMatrix::from_fn(self.n, self.n, |i, j| if j <= i { 1.0 } else { 0.0 });
                &sum * inc * sum.transpose()
            }
        }
    }
}

/// One fBm path of length `n` with Hurst exponent `hurst`.
pub fn gen_fbm(hurst: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let generator = FbmGenerator::new(hurst, n)?;
    Ok(generator.sample(&mut seed::rng(seed, &[])))
}

/// Invertible `p x p` coordinates matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    matrix: DMatrix<f64>,
}

/// Largest condition number accepted for a user-supplied mixing matrix.
const MAX_CONDITION: f64 = 1e12;

impl MixingMatrix {
    pub fn identity(p: usize) -> Self {
        Self { matrix: DMatrix::identity(p, p) }
    }

    /// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
    /// signs of `R`'s diagonal folded into `Q`.
    pub fn random_orthogonal(p: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed, &[]);
        let gauss = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = gauss.qr();
        let r = qr.r();
        let mut q = qr.q();
        for (c, mut col) in q.column_iter_mut().enumerate() {
            if r[(c, c)] < 0.0 {
                col.neg_mut();
            }
        }
        Self { matrix: q }
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Domain("mixing matrix must be square and non-empty".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("mixing matrix has non-finite entries".into()));
        }
        let sv = matrix.clone().singular_values();
        let (lo, hi) = sv
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        if !(lo > 0.0) || hi / lo > MAX_CONDITION {
            return Err(Error::Domain(format!(
                "mixing matrix is singular (condition number {})",
                hi / lo
            )));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }
}

/// How the coordinates matrix of a synthetic panel is chosen.
#[derive(Debug, Clone)]
pub enum Mixing {
    /// Draw a fresh Haar orthogonal matrix from the panel seed.
    GenerateOrthogonal,
    Fixed(MixingMatrix),
}

/// Observed panel together with the ground truth used to produce it.
#[derive(Debug, Clone)]
pub struct SyntheticPanel {
    pub observed: Panel,
    /// Hurst exponent of each latent row.
    pub hursts: Vec<f64>,
    pub mixing: MixingMatrix,
}

/// Time grid of generated paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScale {
    /// Observations at `t = 1, ..., n`: unit-variance increments.
    #[default]
    Integer,
    /// Observations at `t = 1/n, ..., 1`: the integer-grid path times `n^-H`.
    UnitInterval,
}

/// Latent panel of independent fBm rows with exponents drawn from `dist`.
pub fn gen_latent(
    dist: &HurstDistribution,
    p: usize,
    n: usize,
    seed: u64,
) -> Result<(Panel, Vec<f64>)> {
    gen_latent_on(dist, p, n, TimeScale::Integer, seed)
}

pub fn gen_latent_on(
    dist: &HurstDistribution,
    p: usize,
    n: usize,
    time: TimeScale,
    seed: u64,
) -> Result<(Panel, Vec<f64>)> {
    if n < 2 {
        return Err(Error::Config("sample size n must be at least 2".into()));
    }
    let hursts = sample_hurst_diag(dist, p, seed::derive(seed, &[0]))?;
    let generators = dist
        .modes()
        .iter()
        .map(|&h| FbmGenerator::new(h, n))
        .collect::<Result<Vec<_>>>()?;
    let rows = par::map_range(p, |i| {
        let g = generators
            .iter()
            .find(|g| g.hurst() == hursts[i])
            .expect("sampled exponent is a mode");
        let mut path = g.sample(&mut seed::rng(seed, &[1, i as u64]));
        if time == TimeScale::UnitInterval {
            let scale = (n as f64).powf(-hursts[i]);
            path.iter_mut().for_each(|v| *v *= scale);
        }
        path
    });
    let panel = Panel::from_rows(&rows, PanelKind::Latent, Some(seed))?;
    Ok((panel, hursts))
}

/// Observed panel `Y = P X` and its ground truth.
pub fn gen_panel(
    dist: &HurstDistribution,
    p: usize,
    n: usize,
    mixing: &Mixing,
    seed: u64,
) -> Result<SyntheticPanel> {
    gen_panel_on(dist, p, n, mixing, TimeScale::Integer, seed)
}

pub fn gen_panel_on(
    dist: &HurstDistribution,
    p: usize,
    n: usize,
    mixing: &Mixing,
    time: TimeScale,
    seed: u64,
) -> Result<SyntheticPanel> {
    let mix = match mixing {
        Mixing::GenerateOrthogonal => MixingMatrix::random_orthogonal(p, seed::derive(seed, &[2])),
        Mixing::Fixed(m) => {
            if m.p() != p {
                return Err(Error::Domain(format!(
                    "mixing matrix is {}x{} but p = {p}",
                    m.p(),
                    m.p()
                )));
            }
            MixingMatrix::from_matrix(m.matrix().clone())?
        }
    };
    let (latent, hursts) = gen_latent_on(dist, p, n, time, seed)?;
    let observed = Panel::new(mix.matrix() * latent.data(), PanelKind::Observed, Some(seed))?;
    Ok(SyntheticPanel { observed, hursts, mixing: mix })
}
