//! Panel ingestion, standardization and the versioned output documents.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Analysis, PanelEstimate};
use crate::selection::SelectionTrace;
use crate::synth::{Panel, PanelKind};

pub const SCHEMA: &str = "wrmsm/1";

/// Header names that mark the first column as a time index.
const TIME_HEADERS: &[&str] = &["", "t", "time", "date", "index", "sasdate"];

/// Columns are series, rows are observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelFile {
    pub names: Vec<String>,
    pub time_index: Option<Vec<String>>,
    /// One vector per series.
    pub series: Vec<Vec<f64>>,
}

impl PanelFile {
    pub fn p(&self) -> usize {
        self.series.len()
    }

    pub fn n(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn to_panel(&self) -> Result<Panel> {
        Panel::from_rows(&self.series, PanelKind::Observed, None)
    }
}

/// Whether the first column holds time stamps rather than a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeIndex {
    /// Decided from the first header cell.
    #[default]
    Detect,
    Present,
    Absent,
}

pub fn read_panel_csv(path: &Path, time_index: TimeIndex) -> Result<PanelFile> {
    let file = std::fs::File::open(path)?;
    parse_panel_csv(file, time_index)
}

pub fn parse_panel_csv<R: std::io::Read>(reader: R, time_index: TimeIndex) -> Result<PanelFile> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot parse CSV header: {e}")))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Data("CSV input is empty".into()));
    }
    let has_time = match time_index {
        TimeIndex::Present => true,
        TimeIndex::Absent => false,
        TimeIndex::Detect => TIME_HEADERS.contains(&headers[0].to_ascii_lowercase().as_str()),
    };
    let skip = usize::from(has_time);
    let names: Vec<String> = headers.iter().skip(skip).map(str::to_owned).collect();
    if names.is_empty() {
        return Err(Error::Data("CSV has no series columns".into()));
    }
    let mut series = vec![Vec::new(); names.len()];
    let mut stamps = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let row = line + 2;
        let record = record.map_err(|e| Error::Data(format!("CSV row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "CSV row {row} has {} cells, expected {}",
                record.len(),
                headers.len()
            )));
        }
        if has_time {
            stamps.push(record[0].to_owned());
        }
        for (c, cell) in record.iter().skip(skip).enumerate() {
            if cell.is_empty() {
                return Err(Error::Data(format!("missing value in series '{}' at row {row}", names[c])));
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!("non-numeric value '{cell}' in series '{}' at row {row}", names[c]))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!("non-finite value in series '{}' at row {row}", names[c])));
            }
            series[c].push(v);
        }
    }
    if series[0].is_empty() {
        return Err(Error::Data("CSV has a header but no observations".into()));
    }
    Ok(PanelFile { names, time_index: has_time.then_some(stamps), series })
}

/// Writes series as columns with a leading `t` index.
pub fn write_panel_csv(path: &Path, names: &[String], series: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    let mut header = vec!["t".to_owned()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    let n = series.first().map_or(0, Vec::len);
    for t in 0..n {
        let mut rec = vec![t.to_string()];
        rec.extend(series.iter().map(|s| format!("{:?}", s[t])));
        w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Sample SD (denominator `n - 1`) of the first differences.
pub fn difference_sd(series: &[f64]) -> f64 {
    let diffs: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    sd(&diffs)
}

/// Divides each series by the SD of its first differences.
pub fn standardize(series: &[Vec<f64>], names: &[String]) -> Result<Vec<Vec<f64>>> {
    series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
            if s.len() < 3 {
                return Err(Error::Data(format!("series '{name}' has {} observations, need at least 3", s.len())));
            }
            let scale = difference_sd(s);
            if !(scale > 0.0) {
                return Err(Error::Data(format!("series '{name}' is constant up to a trend (zero difference variance)")));
            }
            Ok(s.iter().map(|v| v / scale).collect())
        })
        .collect()
}

pub fn standardize_panel(file: &PanelFile) -> Result<PanelFile> {
    Ok(PanelFile { series: standardize(&file.series, &file.names)?, ..file.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if values.is_empty() {
        return Err(Error::Domain("histogram of an empty set".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| if b == bins { hi } else { lo + b as f64 * width }).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Output of `wrmsm estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateDocument {
    pub schema: String,
    pub series: Vec<String>,
    pub n: usize,
    pub analysis: Analysis,
    pub wavelet_order: usize,
    pub seed: u64,
    pub r_hat: usize,
    pub modes: Vec<f64>,
    pub probs: Vec<f64>,
    pub epsilon_ms: f64,
    pub icsd: f64,
    pub m_bound: f64,
    pub log_eigenvalues: Vec<f64>,
    pub assignments: Vec<usize>,
    pub trace: SelectionTrace,
    pub histogram: Histogram,
}

impl EstimateDocument {
    pub fn new(
        series: Vec<String>,
        n: usize,
        analysis: Analysis,
        wavelet_order: usize,
        seed: u64,
        est: &PanelEstimate,
        bins: usize,
    ) -> Result<Self> {
        let r = &est.result;
        Ok(Self {
            schema: SCHEMA.into(),
            series,
            n,
            analysis,
            wavelet_order,
            seed,
            r_hat: r.r_hat,
            modes: r.modes.clone(),
            probs: r.probs.clone(),
            epsilon_ms: r.epsilon_ms,
            icsd: r.icsd,
            m_bound: est.m_used,
            log_eigenvalues: est.h_set.values().to_vec(),
            assignments: r.scheme.assignments.clone(),
            trace: r.trace.clone(),
            histogram: histogram(est.h_set.values(), bins)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumScale {
    /// `H_l`.
    Hurst,
    /// `2 H_l + 1`.
    Esd,
}

/// Output of `wrmsm spectrum`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumDocument {
    pub schema: String,
    pub series: Vec<String>,
    pub n: usize,
    pub analysis: Analysis,
    pub wavelet_order: usize,
    pub scale: SpectrumScale,
    pub values: Vec<f64>,
    pub histogram: Histogram,
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Data(format!("invalid JSON: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_detected_time_index() {
        let text = "date,a,b\n2000-01,1.0,2\n2000-02,1.5,2.5\n2000-03,0.5,3\n";
        let f = parse_panel_csv(text.as_bytes(), TimeIndex::Detect).unwrap();
        assert_eq!(f.names, vec!["a", "b"]);
        assert_eq!(f.series, vec![vec![1.0, 1.5, 0.5], vec![2.0, 2.5, 3.0]]);
        assert_eq!(f.time_index.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn parses_without_time_index() {
        let f = parse_panel_csv("x,y\n1,2\n3,4\n".as_bytes(), TimeIndex::Detect).unwrap();
        assert_eq!(f.p(), 2);
        assert!(f.time_index.is_none());
        let g = parse_panel_csv("x,y\n1,2\n3,4\n".as_bytes(), TimeIndex::Present).unwrap();
        assert_eq!(g.names, vec!["y"]);
    }

    #[test]
    fn rejects_bad_input() {
        for text in ["", "a,b\n", "a,b\n1,\n", "a,b\n1,2\n3\n", "a,b\n1,x\n"] {
            assert!(
                matches!(parse_panel_csv(text.as_bytes(), TimeIndex::Detect), Err(Error::Data(_))),
                "{text:?}"
            );
        }
        let err = parse_panel_csv("a,b\n1,\n".as_bytes(), TimeIndex::Detect).unwrap_err();
        assert!(err.to_string().contains("'b'"));
    }

    #[test]
    fn standardize_examples() {
        // differences 1, -1, 1, -1 have sample SD sqrt(4/3)
        let s = vec![0.0, 1.0, 0.0, 1.0, 0.0];
        let out = standardize(std::slice::from_ref(&s), &["s".into()]).unwrap();
        assert!((difference_sd(&out[0]) - 1.0).abs() < 1e-12);
        let scaled: Vec<f64> = s.iter().map(|v| 10.0 * v).collect();
        let out10 = standardize(&[scaled], &["s".into()]).unwrap();
        for (a, b) in out[0].iter().zip(&out10[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_rejects_constant_and_short() {
        let err = standardize(&[vec![3.0; 5]], &["flat".into()]).unwrap_err();
        assert!(err.to_string().contains("flat"));
        // a pure linear trend has constant differences
        assert!(standardize(&[vec![1.0, 2.0, 3.0, 4.0]], &["trend".into()]).is_err());
        assert!(standardize(&[vec![1.0, 2.0]], &["short".into()]).is_err());
    }

    #[test]
    fn histogram_conserves_count() {
        let v = [0.1, 0.2, 0.2, 0.5, 0.9, 0.9, 0.95];
        let h = histogram(&v, 4).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), v.len());
        assert_eq!(h.edges.len(), 5);
        assert_eq!(*h.edges.last().unwrap(), 0.95);
        assert_eq!(histogram(&[0.3, 0.3], 3).unwrap().counts, vec![2, 0, 0]);
    }

    #[test]
    fn panel_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let names = vec!["u".to_owned(), "v".to_owned()];
        let series = vec![vec![0.1, 1.0 / 3.0, -2e-17], vec![1e300, 5.0, std::f64::consts::PI]];
        write_panel_csv(&path, &names, &series).unwrap();
        let f = read_panel_csv(&path, TimeIndex::Detect).unwrap();
        assert_eq!(f.names, names);
        assert_eq!(f.series, series);
    }
}
