//! Panel to estimate: wavelet decomposition, log-eigenvalues, then model selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::{wrmsm, EstimationResult, SelectionParams};
use crate::synth::Panel;
use crate::wavelet::{decompose_range, FilterBank};
use crate::wrm::{heuristic_m, log_eigen, log_eigen_multiscale, wavelet_random_matrix, LogEigenSet};

/// Which wavelet scales feed the log-eigenvalues.
///
/// The scale factor `a` must be a power of two; the scale `a 2^j` is then
/// octave `log2(a) + j` of the pyramid. Multiscale analysis also accepts
/// `a = 1`, so that `j1..=j2` are the octaves themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "analysis", rename_all = "snake_case")]
pub enum Analysis {
    SingleScale { a: u64, j: u32 },
    Multiscale { a: u64, j1: u32, j2: u32 },
}

impl Analysis {
    pub fn validate(&self) -> Result<()> {
        let a = self.a();
        let min = match self {
            Analysis::SingleScale { .. } => 2,
            Analysis::Multiscale { .. } => 1,
        };
        if a < min || !a.is_power_of_two() {
            return Err(Error::Config(format!("scale factor a = {a} must be a power of two >= {min}")));
        }
        if let Analysis::Multiscale { j1, j2, .. } = *self {
            if j1 >= j2 {
                return Err(Error::Config(format!("multiscale range needs j1 < j2 (got {j1}, {j2})")));
            }
        }
        Ok(())
    }

    pub fn a(&self) -> u64 {
        match *self {
            Analysis::SingleScale { a, .. } | Analysis::Multiscale { a, .. } => a,
        }
    }

    fn base_octave(&self) -> u32 {
        self.a().trailing_zeros()
    }

    /// Pyramid octaves `(lo, hi)` whose details are used.
    pub fn octaves(&self) -> (u32, u32) {
        let b = self.base_octave();
        match *self {
            Analysis::SingleScale { j, .. } => (b + j, b + j),
            Analysis::Multiscale { j1, j2, .. } => (b + j1, b + j2),
        }
    }

    /// The `j` passed to the heuristic grid bound under [`MRule::BaseOctave`].
    fn first_j(&self) -> u32 {
        match *self {
            Analysis::SingleScale { j, .. } => j,
            Analysis::Multiscale { j1, .. } => j1,
        }
    }
}

/// How the automatic grid bound `M` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MRule {
    /// `H_p - H_1` of the statistics being clustered. For single-scale
    /// analysis this is the log-eigenvalue ratio at the analysis scale.
    #[default]
    Range,
    /// Log-eigenvalue ratio of the wavelet random matrix at octave `j`
    /// (not shifted by `log2 a`), divided by `2 log a`.
    BaseOctave,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MBound {
    Auto(MRule),
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub analysis: Analysis,
    pub wavelet_order: usize,
    pub grid_size: usize,
    pub m_bound: MBound,
    pub min_cluster: usize,
    pub seed: u64,
    pub keep_schemes: bool,
}

impl PipelineConfig {
    pub fn new(analysis: Analysis) -> Self {
        Self {
            analysis,
            wavelet_order: 2,
            grid_size: 10,
            m_bound: MBound::Auto(MRule::default()),
            min_cluster: 2,
            seed: 0,
            keep_schemes: false,
        }
    }
}

/// Log-eigenvalues and the automatic grid bound for one panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelStatistics {
    pub h_set: LogEigenSet,
    pub m_auto: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelEstimate {
    pub h_set: LogEigenSet,
    pub m_used: f64,
    pub result: EstimationResult,
}

/// Wavelet log-eigenvalues of `panel` under `analysis`.
pub fn panel_statistics(panel: &Panel, analysis: &Analysis, wavelet_order: usize, rule: MRule) -> Result<PanelStatistics> {
    analysis.validate()?;
    if rule == MRule::BaseOctave && analysis.a() < 2 {
        return Err(Error::Config("the base-octave grid bound needs a >= 2".into()));
    }
    let bank = FilterBank::daubechies(wavelet_order)?;
    let (lo, hi) = analysis.octaves();
    let j_m = analysis.first_j().max(1);
    let keep_lo = match rule {
        MRule::Range => lo,
        MRule::BaseOctave => lo.min(j_m),
    };
    let decomp = decompose_range(panel, &bank, keep_lo, hi)?;
    let a = analysis.a() as f64;
    let h_set = match *analysis {
        Analysis::SingleScale { .. } => log_eigen(&wavelet_random_matrix(&decomp, lo)?, a)?,
        Analysis::Multiscale { .. } => log_eigen_multiscale(&decomp, lo, hi)?,
    };
    let m_auto = match rule {
        MRule::Range => h_set.range(),
        MRule::BaseOctave => heuristic_m(&decomp, j_m, a)?,
    };
    Ok(PanelStatistics { h_set, m_auto })
}

/// Runs model selection on precomputed statistics.
pub fn select(stats: &PanelStatistics, config: &PipelineConfig) -> Result<PanelEstimate> {
    let m_used = match config.m_bound {
        MBound::Fixed(m) => m,
        MBound::Auto(_) => stats.m_auto,
    };
    if !(m_used > 0.0) {
        return Err(Error::Degenerate(format!(
            "grid bound M = {m_used:e}: the log-eigenvalues are (numerically) identical; pass an explicit bound"
        )));
    }
    let params = SelectionParams {
        upper: m_used,
        grid_size: config.grid_size,
        min_cluster: config.min_cluster,
        seed: config.seed,
        keep_schemes: config.keep_schemes,
    };
    let result = wrmsm(&stats.h_set, &params)?;
    Ok(PanelEstimate { h_set: stats.h_set.clone(), m_used, result })
}

pub fn estimate_panel(panel: &Panel, config: &PipelineConfig) -> Result<PanelEstimate> {
    let rule = match config.m_bound {
        MBound::Auto(rule) => rule,
        MBound::Fixed(_) => MRule::Range,
    };
    let stats = panel_statistics(panel, &config.analysis, config.wavelet_order, rule)?;
    select(&stats, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_panel, HurstDistribution, Mixing};

    #[test]
    fn octave_mapping() {
        assert_eq!(Analysis::SingleScale { a: 16, j: 1 }.octaves(), (5, 5));
        assert_eq!(Analysis::Multiscale { a: 64, j1: 1, j2: 3 }.octaves(), (7, 9));
        assert!(Analysis::SingleScale { a: 12, j: 1 }.validate().is_err());
        assert!(Analysis::SingleScale { a: 1, j: 1 }.validate().is_err());
        assert!(Analysis::Multiscale { a: 4, j1: 3, j2: 3 }.validate().is_err());
        assert_eq!(Analysis::Multiscale { a: 1, j1: 2, j2: 5 }.octaves(), (2, 5));
        assert!(Analysis::Multiscale { a: 1, j1: 2, j2: 5 }.validate().is_ok());
    }

    #[test]
    fn range_rule_matches_eigenvalue_ratio() {
        let dist = HurstDistribution::uniform(vec![0.3, 0.7]).unwrap();
        let sp = gen_panel(&dist, 8, 1 << 12, &Mixing::GenerateOrthogonal, 3).unwrap();
        let analysis = Analysis::SingleScale { a: 8, j: 1 };
        let stats = panel_statistics(&sp.observed, &analysis, 2, MRule::Range).unwrap();
        let bank = FilterBank::daubechies(2).unwrap();
        let decomp = decompose_range(&sp.observed, &bank, 4, 4).unwrap();
        let m = heuristic_m(&decomp, 4, 8.0).unwrap();
        assert!((stats.m_auto - m).abs() < 1e-12);
    }

    #[test]
    fn separated_modes_are_found() {
        let dist = HurstDistribution::uniform(vec![0.2, 0.8]).unwrap();
        let sp = gen_panel(&dist, 16, 1 << 13, &Mixing::GenerateOrthogonal, 11).unwrap();
        let cfg = PipelineConfig::new(Analysis::SingleScale { a: 16, j: 1 });
        let est = estimate_panel(&sp.observed, &cfg).unwrap();
        assert_eq!(est.result.r_hat, 2);
    }
}
