//! Command-line front end: `estimate`, `sweep` and `spectrum`.
//!
//! Every failure is reported on stderr as a one-line JSON object and mapped to
//! an exit code: 2 for configuration errors, 3 for data errors, 4 for
//! numerical degeneracy.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::harness::{run_sweep, ExperimentSpec, Family, Method, SweepResult};
use crate::io::{
    histogram, read_panel_csv, standardize_panel, to_json, EstimateDocument, Histogram, SpectrumDocument,
    SpectrumScale, TimeIndex, SCHEMA,
};
use crate::pipeline::{estimate_panel, panel_statistics, Analysis, MBound, MRule, PipelineConfig};
use crate::synth::TimeScale;

#[derive(Debug, Parser)]
#[command(name = "wrmsm", version, about = "Hurst-distribution estimation for multivariate time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the Hurst modes of a CSV panel.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo sweep described by a spec file.
    Sweep(SweepArgs),
    /// Histogram of the wavelet log-eigenvalues of a CSV panel.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TimeIndexArg {
    Detect,
    Present,
    Absent,
}

impl From<TimeIndexArg> for TimeIndex {
    fn from(t: TimeIndexArg) -> Self {
        match t {
            TimeIndexArg::Detect => TimeIndex::Detect,
            TimeIndexArg::Present => TimeIndex::Present,
            TimeIndexArg::Absent => TimeIndex::Absent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Hurst,
    Esd,
}

/// Grid bound: `auto` (same as `range`), `range`, `base-octave` or a positive real.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MBoundArg(pub MBound);

fn parse_m_bound(s: &str) -> std::result::Result<MBoundArg, String> {
    match s {
        "auto" | "range" => Ok(MBoundArg(MBound::Auto(MRule::Range))),
        "base-octave" => Ok(MBoundArg(MBound::Auto(MRule::BaseOctave))),
        _ => match s.parse::<f64>() {
            Ok(m) if m > 0.0 && m.is_finite() => Ok(MBoundArg(MBound::Fixed(m))),
            _ => Err(format!("expected auto, range, base-octave or a positive number, got '{s}'")),
        },
    }
}

fn parse_power_of_two(s: &str) -> std::result::Result<u64, String> {
    let a: u64 = s.parse().map_err(|_| format!("'{s}' is not a positive integer"))?;
    if a == 0 || !a.is_power_of_two() {
        return Err(format!("a = {a} is not a power of two"));
    }
    Ok(a)
}

/// Scale selection shared by `estimate` and `spectrum`.
#[derive(Debug, Clone, Args)]
pub struct AnalysisArgs {
    /// Single-scale octave offset; selects single-scale analysis at scale a 2^j.
    #[arg(long, conflicts_with_all = ["j1", "j2"])]
    pub j: Option<u32>,
    /// First offset of the multiscale range.
    #[arg(long, default_value_t = 2)]
    pub j1: u32,
    /// Last offset of the multiscale range.
    #[arg(long, default_value_t = 5)]
    pub j2: u32,
    /// Scale factor, a power of two. Defaults to 1 (multiscale) or 16 (single scale).
    #[arg(long, value_parser = parse_power_of_two)]
    pub a: Option<u64>,
    /// Number of vanishing moments of the Daubechies wavelet.
    #[arg(long, default_value_t = 2)]
    pub wavelet_order: usize,
}

impl AnalysisArgs {
    pub fn analysis(&self) -> Result<Analysis> {
        let analysis = match self.j {
            Some(j) => Analysis::SingleScale { a: self.a.unwrap_or(16), j },
            None => Analysis::Multiscale { a: self.a.unwrap_or(1), j1: self.j1, j2: self.j2 },
        };
        analysis.validate()?;
        Ok(analysis)
    }
}

/// Panel input shared by `estimate` and `spectrum`.
#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// CSV panel: header row of series names, one column per series.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = TimeIndexArg::Detect)]
    pub time_index: TimeIndexArg,
    /// Skip dividing each series by the SD of its first differences.
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    /// Number of threshold grid points.
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    #[arg(long = "m-bound", value_parser = parse_m_bound, default_value = "auto")]
    pub m_bound: MBoundArg,
    #[arg(long, default_value_t = 2)]
    pub min_cluster: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Histogram bins for the log-eigenvalues.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Flat key-value (TOML) experiment description.
    #[arg(long)]
    pub spec: PathBuf,
    /// Overrides the spec's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the spec's replication count.
    #[arg(long)]
    pub reps: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    #[arg(long, value_enum, default_value_t = ScaleArg::Hurst)]
    pub scale: ScaleArg,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Experiment spec as written on disk. Unset keys take the defaults of
/// [`ExperimentSpec::new`].
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub family: String,
    pub deltas: Option<Vec<f64>>,
    pub base: Option<f64>,
    pub weight: Option<f64>,
    pub low: Option<f64>,
    pub high: Option<f64>,
    pub center: Option<f64>,
    pub modes: Option<Vec<f64>>,
    pub probs: Option<Vec<f64>>,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub a: Option<u64>,
    pub j: Option<u32>,
    pub j1: Option<u32>,
    pub j2: Option<u32>,
    pub reps: Option<usize>,
    pub m: Option<usize>,
    /// `"auto"`, `"range"`, `"base-octave"` or a number.
    #[serde(rename = "M")]
    pub m_bound: Option<toml::Value>,
    pub methods: Option<Vec<String>>,
    pub master_seed: Option<u64>,
    pub wavelet_order: Option<usize>,
    pub min_cluster: Option<usize>,
    pub fix_mixing: Option<bool>,
    pub gmm_k_max: Option<usize>,
    /// `"unit_interval"` or `"integer"`.
    pub time_scale: Option<String>,
    pub records: Option<bool>,
}

fn required<T>(v: Option<T>, key: &str, family: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("family '{family}' needs key '{key}'")))
}

impl SpecFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid spec file: {e}")))
    }

    pub fn into_spec(self) -> Result<ExperimentSpec> {
        let f = self.family.as_str();
        let family = match f {
            "bimodal" => Family::Bimodal {
                base: required(self.base, "base", f)?,
                weight: self.weight.unwrap_or(0.5),
                deltas: required(self.deltas, "deltas", f)?,
            },
            "trimodal_fixed_ends" => Family::TrimodalFixedEnds {
                low: required(self.low, "low", f)?,
                high: required(self.high, "high", f)?,
                deltas: required(self.deltas, "deltas", f)?,
            },
            "trimodal_equidistant" => Family::TrimodalEquidistant {
                center: required(self.center, "center", f)?,
                deltas: required(self.deltas, "deltas", f)?,
            },
            "custom" => Family::Custom { modes: required(self.modes, "modes", f)?, probs: required(self.probs, "probs", f)? },
            other => return Err(Error::Config(format!("unknown family '{other}'"))),
        };
        let mut spec = ExperimentSpec::new(family);
        if let Some(n) = self.n {
            spec.n = n;
        }
        if let Some(p) = self.p {
            spec.p = p;
        }
        if let Some(a) = self.a {
            parse_power_of_two(&a.to_string()).map_err(Error::Config)?;
        }
        spec.analysis = match (self.j, self.j1, self.j2) {
            (Some(j), None, None) => Analysis::SingleScale { a: self.a.unwrap_or(spec.analysis.a()), j },
            (None, Some(j1), Some(j2)) => Analysis::Multiscale { a: self.a.unwrap_or(1), j1, j2 },
            (None, None, None) => match spec.analysis {
                Analysis::SingleScale { a, j } => Analysis::SingleScale { a: self.a.unwrap_or(a), j },
                other => other,
            },
            _ => return Err(Error::Config("give either j or both j1 and j2".into())),
        };
        if let Some(reps) = self.reps {
            spec.reps = reps;
        }
        if let Some(m) = self.m {
            spec.grid_size = m;
        }
        if let Some(v) = self.m_bound {
            spec.m_bound = match v {
                toml::Value::String(s) => parse_m_bound(&s).map_err(Error::Config)?.0,
                toml::Value::Float(x) => parse_m_bound(&x.to_string()).map_err(Error::Config)?.0,
                toml::Value::Integer(x) => parse_m_bound(&x.to_string()).map_err(Error::Config)?.0,
                other => return Err(Error::Config(format!("invalid M = {other}"))),
            };
        }
        if let Some(methods) = self.methods {
            spec.methods = methods
                .iter()
                .map(|m| match m.as_str() {
                    "wrmsm" => Ok(Method::Wrmsm),
                    "gmm" => Ok(Method::Gmm),
                    other => Err(Error::Config(format!("unknown method '{other}'"))),
                })
                .collect::<Result<_>>()?;
        }
        if let Some(s) = self.master_seed {
            spec.master_seed = s;
        }
        if let Some(w) = self.wavelet_order {
            spec.wavelet_order = w;
        }
        if let Some(c) = self.min_cluster {
            spec.min_cluster = c;
        }
        if let Some(fix) = self.fix_mixing {
            spec.fix_mixing = fix;
        }
        if let Some(k) = self.gmm_k_max {
            spec.gmm_k_max = k;
        }
        if let Some(t) = self.time_scale {
            spec.time_scale = match t.as_str() {
                "unit_interval" => TimeScale::UnitInterval,
                "integer" => TimeScale::Integer,
                other => return Err(Error::Config(format!("unknown time_scale '{other}'"))),
            };
        }
        if let Some(r) = self.records {
            spec.keep_records = r;
        }
        spec.validate()?;
        Ok(spec)
    }
}

pub fn read_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)?;
    SpecFile::parse(&text)?.into_spec()
}

fn load_panel(input: &InputArgs) -> Result<crate::io::PanelFile> {
    let file = read_panel_csv(&input.input, input.time_index.into())?;
    if input.no_standardize {
        Ok(file)
    } else {
        standardize_panel(&file)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Data(format!("cannot write CSV: {e}"))
}

fn histogram_csv(h: &Histogram) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lower", "upper", "count"]).map_err(csv_error)?;
    for (b, c) in h.counts.iter().enumerate() {
        w.write_record([format!("{:?}", h.edges[b]), format!("{:?}", h.edges[b + 1]), c.to_string()])
            .map_err(csv_error)?;
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("cannot write CSV: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

/// One row per mode: `mode,prob`.
pub fn estimate_csv(doc: &EstimateDocument) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mode", "prob"]).map_err(csv_error)?;
    for (m, p) in doc.modes.iter().zip(&doc.probs) {
        w.write_record([format!("{m:?}"), format!("{p:?}")]).map_err(csv_error)?;
    }
    finish_csv(w)
}

/// One row per configuration and method.
pub fn sweep_csv(result: &SweepResult) -> Result<String> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "delta",
        "method",
        "proportion",
        "successes",
        "failures",
        "mean_epsilon_ms",
        "mode_rmse",
        "prob_rmse",
    ])
    .map_err(csv_error)?;
    for row in &result.rows {
        w.write_record([
            format!("{:?}", row.delta),
            row.method.name().to_string(),
            format!("{:?}", row.proportion),
            row.successes.to_string(),
            row.failures.to_string(),
            opt(row.mean_epsilon_ms),
            opt(row.mode_rmse),
            opt(row.prob_rmse),
        ])
        .map_err(csv_error)?;
    }
    finish_csv(w)
}

fn emit(out: &OutputArgs, text: &str) -> Result<()> {
    match &out.output {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn estimate(args: &EstimateArgs) -> Result<EstimateDocument> {
    let analysis = args.analysis.analysis()?;
    let file = load_panel(&args.input)?;
    let panel = file.to_panel()?;
    let config = PipelineConfig {
        analysis,
        wavelet_order: args.analysis.wavelet_order,
        grid_size: args.m,
        m_bound: args.m_bound.0,
        min_cluster: args.min_cluster,
        seed: args.seed,
        keep_schemes: false,
    };
    let est = estimate_panel(&panel, &config)?;
    if est.result.trace.guard_relaxed {
        log::warn!("every grid point produced a cluster below the minimum size; the size guard was relaxed");
    }
    EstimateDocument::new(file.names.clone(), file.n(), analysis, config.wavelet_order, args.seed, &est, args.bins)
}

pub fn spectrum(args: &SpectrumArgs) -> Result<SpectrumDocument> {
    let analysis = args.analysis.analysis()?;
    let file = load_panel(&args.input)?;
    let stats = panel_statistics(&file.to_panel()?, &analysis, args.analysis.wavelet_order, MRule::Range)?;
    let (scale, values) = match args.scale {
        ScaleArg::Hurst => (SpectrumScale::Hurst, stats.h_set.values().to_vec()),
        ScaleArg::Esd => (SpectrumScale::Esd, stats.h_set.esd_scale()),
    };
    Ok(SpectrumDocument {
        schema: SCHEMA.into(),
        series: file.names.clone(),
        n: file.n(),
        analysis,
        wavelet_order: args.analysis.wavelet_order,
        scale,
        histogram: histogram(&values, args.bins)?,
        values,
    })
}

pub fn sweep(args: &SweepArgs) -> Result<SweepResult> {
    let mut spec = read_spec(&args.spec)?;
    if let Some(s) = args.seed {
        spec.master_seed = s;
    }
    if let Some(r) = args.reps {
        spec.reps = r;
    }
    let result = run_sweep(&spec)?;
    for w in &result.warnings {
        log::warn!("{w}");
    }
    Ok(result)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Estimate(args) => {
            let doc = estimate(args)?;
            let text = match args.output.format {
                Format::Json => to_json(&doc)?,
                Format::Csv => estimate_csv(&doc)?,
            };
            emit(&args.output, &text)
        }
        Command::Sweep(args) => {
            let result = sweep(args)?;
            let text = match args.output.format {
                Format::Json => to_json(&result)?,
                Format::Csv => sweep_csv(&result)?,
            };
            emit(&args.output, &text)
        }
        Command::Spectrum(args) => {
            let doc = spectrum(args)?;
            let text = match args.output.format {
                Format::Json => to_json(&doc)?,
                Format::Csv => histogram_csv(&doc.histogram)?,
            };
            emit(&args.output, &text)
        }
    }
}

/// `{"error": {...}}` line written to stderr on failure.
pub fn error_json(kind: &str, code: i32, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "exit_code": code, "message": message } }).to_string()
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            let detail = e.render().to_string();
            let detail = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ");
            eprintln!("{}", error_json("config", 2, detail));
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", error_json(e.kind(), code, &e.to_string()));
            code
        }
    }
}
