//! Monte Carlo driver: sweeps Hurst-distribution configurations, replicates
//! the pipeline on synthetic panels and scores mode identification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::gmm_select_values;
use crate::pipeline::{panel_statistics, select, Analysis, MBound, MRule, PipelineConfig};
use crate::synth::{gen_panel_on, HurstDistribution, Mixing, MixingMatrix, TimeScale};
use crate::{io::SCHEMA, par, seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Wrmsm,
    Gmm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Wrmsm => "wrmsm",
            Method::Gmm => "gmm",
        }
    }
}

/// A parameterized family of Hurst distributions, one per sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Modes `{base, base + delta}` with weights `(w, 1 - w)`.
    Bimodal { base: f64, weight: f64, deltas: Vec<f64> },
    /// Uniform on `{low, low + delta, high}`.
    TrimodalFixedEnds { low: f64, high: f64, deltas: Vec<f64> },
    /// Uniform on `{center - delta, center, center + delta}`.
    TrimodalEquidistant { center: f64, deltas: Vec<f64> },
    /// A single fixed distribution.
    Custom { modes: Vec<f64>, probs: Vec<f64> },
}

impl Family {
    /// `(sweep value, distribution)` pairs. Coincident modes are merged, so
    /// `delta = 0` yields a distribution with fewer modes.
    pub fn configs(&self) -> Result<Vec<(f64, HurstDistribution)>> {
        match self {
            Family::Bimodal { base, weight, deltas } => deltas
                .iter()
                .map(|&d| Ok((d, HurstDistribution::from_support(&[(*base, *weight), (base + d, 1.0 - weight)])?)))
                .collect(),
            Family::TrimodalFixedEnds { low, high, deltas } => deltas
                .iter()
                .map(|&d| {
                    let third = 1.0 / 3.0;
                    let support = [(*low, third), (low + d, third), (*high, 1.0 - 2.0 * third)];
                    Ok((d, HurstDistribution::from_support(&support)?))
                })
                .collect(),
            Family::TrimodalEquidistant { center, deltas } => deltas
                .iter()
                .map(|&d| {
                    let third = 1.0 / 3.0;
                    let support = [(center - d, third), (*center, third), (center + d, 1.0 - 2.0 * third)];
                    Ok((d, HurstDistribution::from_support(&support)?))
                })
                .collect(),
            Family::Custom { modes, probs } => {
                let support: Vec<(f64, f64)> = modes.iter().copied().zip(probs.iter().copied()).collect();
                if modes.len() != probs.len() {
                    return Err(Error::Config("custom family needs as many probabilities as modes".into()));
                }
                Ok(vec![(0.0, HurstDistribution::from_support(&support)?)])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub family: Family,
    pub n: usize,
    pub p: usize,
    pub analysis: Analysis,
    pub reps: usize,
    pub grid_size: usize,
    pub m_bound: MBound,
    pub methods: Vec<Method>,
    pub master_seed: u64,
    pub wavelet_order: usize,
    pub min_cluster: usize,
    /// Draw one mixing matrix for the whole sweep instead of one per replication.
    pub fix_mixing: bool,
    pub gmm_k_max: usize,
    pub time_scale: TimeScale,
    pub keep_records: bool,
}

impl ExperimentSpec {
    /// Sizes of the reference simulation study: `n = 2^14`, `p = 64`,
    /// `a = 16`, `j = 1`, `m = 10`, automatic `M`, both methods.
    pub fn new(family: Family) -> Self {
        Self {
            family,
            n: 1 << 14,
            p: 64,
            analysis: Analysis::SingleScale { a: 16, j: 1 },
            reps: 200,
            grid_size: 10,
            m_bound: MBound::Auto(MRule::default()),
            methods: vec![Method::Wrmsm, Method::Gmm],
            master_seed: 0,
            wavelet_order: 2,
            min_cluster: 2,
            fix_mixing: false,
            gmm_k_max: 9,
            time_scale: TimeScale::UnitInterval,
            keep_records: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.analysis.validate()?;
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.p < 2 {
            return Err(Error::Config("p must be at least 2".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        if self.methods.contains(&Method::Gmm) && self.p < 2 * self.gmm_k_max {
            return Err(Error::Config(format!(
                "p = {} is too small for up to {} mixture components",
                self.p, self.gmm_k_max
            )));
        }
        self.family.configs()?;
        Ok(())
    }

    /// Warnings for dimension and sample size combinations outside the
    /// regime `p < n / (a 2^j)` where the theory applies.
    pub fn warnings(&self) -> Vec<String> {
        let (_, hi) = self.analysis.octaves();
        let coarse = self.n >> hi;
        if self.p >= coarse {
            vec![format!(
                "p = {} is not below n / (a 2^j) = {} at the coarsest analysis octave {hi}",
                self.p, coarse
            )]
        } else {
            Vec::new()
        }
    }

    fn pipeline_config(&self, rep_seed: u64) -> PipelineConfig {
        PipelineConfig {
            analysis: self.analysis,
            wavelet_order: self.wavelet_order,
            grid_size: self.grid_size,
            m_bound: self.m_bound,
            min_cluster: self.min_cluster,
            seed: seed::derive(rep_seed, &[3]),
            keep_schemes: false,
        }
    }
}

/// Outcome of one method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub config: usize,
    pub rep: usize,
    pub seed: u64,
    pub method: Method,
    /// Absent when the replication failed.
    pub r_hat: Option<usize>,
    pub correct: bool,
    pub epsilon_ms: Option<f64>,
    pub modes: Vec<f64>,
    pub probs: Vec<f64>,
    /// Per-mode errors, present only when the number of modes is right.
    pub mode_errors: Option<Vec<f64>>,
    pub prob_errors: Option<Vec<f64>>,
    pub error: Option<String>,
}

impl RepRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn max_mode_error(&self) -> Option<f64> {
        self.mode_errors.as_ref().map(|e| e.iter().copied().fold(0.0, f64::max))
    }

    pub fn max_prob_error(&self) -> Option<f64> {
        self.prob_errors.as_ref().map(|e| e.iter().copied().fold(0.0, f64::max))
    }
}

/// Aggregate over the replications of one configuration and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config: usize,
    pub delta: f64,
    pub true_modes: Vec<f64>,
    pub true_probs: Vec<f64>,
    pub method: Method,
    pub reps: usize,
    pub successes: usize,
    pub failures: usize,
    pub correct: usize,
    /// `correct / successes`.
    pub proportion: f64,
    pub mean_epsilon_ms: Option<f64>,
    /// Over all modes of the replications with the right number of modes.
    pub mode_rmse: Option<f64>,
    pub prob_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema: String,
    pub spec: ExperimentSpec,
    pub warnings: Vec<String>,
    pub rows: Vec<SweepRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<Vec<RepRecord>>,
}

fn rep_seed(spec: &ExperimentSpec, config: usize, rep: usize) -> u64 {
    seed::derive(spec.master_seed, &[config as u64, rep as u64])
}

fn fixed_mixing(spec: &ExperimentSpec) -> Mixing {
    if spec.fix_mixing {
        Mixing::Fixed(MixingMatrix::random_orthogonal(spec.p, seed::derive(spec.master_seed, &[u64::MAX])))
    } else {
        Mixing::GenerateOrthogonal
    }
}

type Outcome = std::result::Result<(usize, Option<f64>, Vec<f64>, Vec<f64>), String>;

fn score(
    config: usize,
    rep: usize,
    seed: u64,
    method: Method,
    truth: &HurstDistribution,
    outcome: Outcome,
) -> RepRecord {
    match outcome {
        Ok((r_hat, epsilon_ms, modes, probs)) => {
            let correct = r_hat == truth.r();
            let (mode_errors, prob_errors) = if correct {
                (
                    Some(modes.iter().zip(truth.modes()).map(|(a, b)| (a - b).abs()).collect()),
                    Some(probs.iter().zip(truth.probs()).map(|(a, b)| (a - b).abs()).collect()),
                )
            } else {
                (None, None)
            };
            RepRecord {
                config,
                rep,
                seed,
                method,
                r_hat: Some(r_hat),
                correct,
                epsilon_ms,
                modes,
                probs,
                mode_errors,
                prob_errors,
                error: None,
            }
        }
        Err(e) => RepRecord {
            config,
            rep,
            seed,
            method,
            r_hat: None,
            correct: false,
            epsilon_ms: None,
            modes: Vec::new(),
            probs: Vec::new(),
            mode_errors: None,
            prob_errors: None,
            error: Some(e),
        },
    }
}

fn describe(e: Error) -> String {
    format!("{}: {e}", e.kind())
}

fn run_rep_with(
    spec: &ExperimentSpec,
    config: usize,
    truth: &HurstDistribution,
    mixing: &Mixing,
    rep: usize,
) -> Vec<RepRecord> {
    let s = rep_seed(spec, config, rep);
    let cfg = spec.pipeline_config(s);
    let rule = match spec.m_bound {
        MBound::Auto(rule) => rule,
        MBound::Fixed(_) => MRule::Range,
    };
    let stats = gen_panel_on(truth, spec.p, spec.n, mixing, spec.time_scale, s)
        .and_then(|sp| panel_statistics(&sp.observed, &spec.analysis, spec.wavelet_order, rule))
        .map_err(describe);
    spec.methods
        .iter()
        .map(|&method| {
            let outcome = match (&stats, method) {
                (Err(e), _) => Err(e.clone()),
                (Ok(st), Method::Wrmsm) => select(st, &cfg)
                    .map(|est| {
                        let r = est.result;
                        (r.r_hat, Some(r.epsilon_ms), r.modes, r.probs)
                    })
                    .map_err(describe),
                (Ok(st), Method::Gmm) => gmm_select_values(st.h_set.values(), spec.gmm_k_max)
                    .map(|fit| {
                        let mut comps: Vec<(f64, f64)> =
                            fit.means.iter().copied().zip(fit.weights.iter().copied()).collect();
                        comps.sort_by(|a, b| a.0.total_cmp(&b.0));
                        (fit.k, None, comps.iter().map(|c| c.0).collect(), comps.iter().map(|c| c.1).collect())
                    })
                    .map_err(describe),
            };
            score(config, rep, s, method, truth, outcome)
        })
        .collect()
}

/// Replays a single replication; identical to its record in a full sweep.
pub fn run_rep(spec: &ExperimentSpec, config: usize, rep: usize) -> Result<Vec<RepRecord>> {
    spec.validate()?;
    let configs = spec.family.configs()?;
    let (_, truth) = configs
        .get(config)
        .ok_or_else(|| Error::Config(format!("config index {config} out of range")))?;
    Ok(run_rep_with(spec, config, truth, &fixed_mixing(spec), rep))
}

fn rmse(errors: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for e in errors {
        sum += e * e;
        count += 1;
    }
    (count > 0).then(|| (sum / count as f64).sqrt())
}

/// Aggregates the records of one configuration and method.
pub fn aggregate(config: usize, delta: f64, truth: &HurstDistribution, method: Method, records: &[&RepRecord]) -> SweepRow {
    let ok: Vec<&&RepRecord> = records.iter().filter(|r| !r.failed()).collect();
    let correct = ok.iter().filter(|r| r.correct).count();
    let eps: Vec<f64> = ok.iter().filter_map(|r| r.epsilon_ms).collect();
    let mean_epsilon_ms = (!eps.is_empty()).then(|| eps.iter().sum::<f64>() / eps.len() as f64);
    SweepRow {
        config,
        delta,
        true_modes: truth.modes().to_vec(),
        true_probs: truth.probs().to_vec(),
        method,
        reps: records.len(),
        successes: ok.len(),
        failures: records.len() - ok.len(),
        correct,
        proportion: if ok.is_empty() { 0.0 } else { correct as f64 / ok.len() as f64 },
        mean_epsilon_ms,
        mode_rmse: rmse(ok.iter().filter_map(|r| r.mode_errors.as_ref()).flatten().copied()),
        prob_rmse: rmse(ok.iter().filter_map(|r| r.prob_errors.as_ref()).flatten().copied()),
    }
}

pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    let warnings = spec.warnings();
    for w in &warnings {
        log::warn!("{w}");
    }
    let configs = spec.family.configs()?;
    let mixing = fixed_mixing(spec);
    let jobs: Vec<(usize, usize)> =
        (0..configs.len()).flat_map(|c| (0..spec.reps).map(move |r| (c, r))).collect();
    let records: Vec<RepRecord> =
        par::map_slice(&jobs, |&(c, r)| run_rep_with(spec, c, &configs[c].1, &mixing, r))
            .into_iter()
            .flatten()
            .collect();
    let failures = records.iter().filter(|r| r.failed()).count();
    if failures > 0 {
        log::warn!("{failures} of {} method runs failed and are excluded", records.len());
    }

    let mut rows = Vec::new();
    for (c, (delta, truth)) in configs.iter().enumerate() {
        for &method in &spec.methods {
            let subset: Vec<&RepRecord> = records.iter().filter(|r| r.config == c && r.method == method).collect();
            rows.push(aggregate(c, *delta, truth, method, &subset));
        }
    }
    Ok(SweepResult {
        schema: SCHEMA.into(),
        spec: spec.clone(),
        warnings,
        rows,
        records: spec.keep_records.then_some(records),
    })
}

impl SweepResult {
    pub fn row(&self, config: usize, method: Method) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.config == config && r.method == method)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(Family::Bimodal { base: 0.2, weight: 0.5, deltas: vec![0.0, 0.6] });
        spec.n = 1 << 11;
        spec.p = 20;
        spec.analysis = Analysis::SingleScale { a: 8, j: 1 };
        spec.reps = 4;
        spec.gmm_k_max = 4;
        spec.keep_records = true;
        spec
    }

    #[test]
    fn configs_merge_coincident_modes() {
        let c = Family::Bimodal { base: 0.25, weight: 0.5, deltas: vec![0.0, 0.1] }.configs().unwrap();
        assert_eq!(c[0].1.r(), 1);
        assert_eq!(c[1].1.modes(), &[0.25, 0.35]);
        let t = Family::TrimodalEquidistant { center: 0.5, deltas: vec![0.0, 0.1] }.configs().unwrap();
        assert_eq!(t[0].1.r(), 1);
        assert_eq!(t[1].1.r(), 3);
        let f = Family::TrimodalFixedEnds { low: 0.25, high: 0.7, deltas: vec![0.0, 0.05] }.configs().unwrap();
        assert_eq!(f[0].1.r(), 2);
        assert!((f[0].1.probs()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f[1].1.r(), 3);
    }

    #[test]
    fn reps_are_accounted_and_reproducible() {
        let spec = small_spec();
        let res = run_sweep(&spec).unwrap();
        assert_eq!(res.rows.len(), 4);
        for row in &res.rows {
            assert_eq!(row.successes + row.failures, spec.reps);
            assert!((0.0..=1.0).contains(&row.proportion));
        }
        let records = res.records.as_ref().unwrap();
        for rec in records.iter().filter(|r| r.config == 1 && r.rep == 2) {
            let again = run_rep(&spec, 1, 2).unwrap();
            assert!(again.contains(rec));
        }
        assert_eq!(run_sweep(&spec).unwrap(), res);
    }

    #[test]
    fn aggregation_is_mean_of_records() {
        let res = run_sweep(&small_spec()).unwrap();
        let records = res.records.as_ref().unwrap();
        for row in &res.rows {
            let mine: Vec<&RepRecord> = records.iter().filter(|r| r.config == row.config && r.method == row.method).collect();
            let correct = mine.iter().filter(|r| r.correct).count();
            assert_eq!(row.correct, correct);
            assert_eq!(row.proportion, correct as f64 / row.successes as f64);
        }
    }

    #[test]
    fn single_rep_equals_pipeline_score() {
        let mut spec = small_spec();
        spec.reps = 1;
        spec.family = Family::Custom { modes: vec![0.2, 0.8], probs: vec![0.5, 0.5] };
        let res = run_sweep(&spec).unwrap();
        let rec = &run_rep(&spec, 0, 0).unwrap()[0];
        let row = res.row(0, Method::Wrmsm).unwrap();
        assert_eq!(row.proportion, if rec.correct { 1.0 } else { 0.0 });
        assert_eq!(row.mean_epsilon_ms, rec.epsilon_ms);
    }

    #[test]
    fn warns_outside_regime() {
        let mut spec = small_spec();
        spec.p = 200;
        spec.gmm_k_max = 3;
        assert_eq!(spec.warnings().len(), 1);
        assert!(small_spec().warnings().is_empty());
    }

    #[test]
    fn rejects_invalid_spec() {
        let mut spec = small_spec();
        spec.reps = 0;
        assert!(matches!(run_sweep(&spec), Err(Error::Config(_))));
        let mut spec = small_spec();
        spec.gmm_k_max = 11;
        assert!(spec.validate().is_err());
    }
}
