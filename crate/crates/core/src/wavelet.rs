//! Daubechies filter banks and the border-trimmed Mallat pyramid.
//!
//! The pyramid starts from the raw samples (`A(2^0, k) = Y(k)`) and applies
//!
//! ```text
//! A(2^{j+1}, k) = sum_i u_i A(2^j, 2k + i)
//! D(2^{j+1}, k) = sum_i v_i A(2^j, 2k + i)
//! ```
//!
//! Only coefficients whose wavelet support lies inside the sampled window are
//! kept: with `supp(phi) = supp(psi) = [0, T]`, octave `j` retains the shifts
//! `2^{-j} T <= k <= 2^{-j}(n + 1) - T`. No padding, reflection or
//! periodization is ever applied.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::par;
use crate::synth::Panel;

/// Orthonormal two-channel filter pair of a compactly supported wavelet.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    n_vanishing: usize,
    lowpass: Vec<f64>,
    highpass: Vec<f64>,
}

impl FilterBank {
    /// Extremal-phase Daubechies filters with `n_vanishing` vanishing moments
    /// (`1` is Haar), normalized to unit l2 norm.
    pub fn daubechies(n_vanishing: usize) -> Result<Self> {
        if !(1..=10).contains(&n_vanishing) {
            return Err(Error::Config(format!(
                "Daubechies order {n_vanishing} unsupported (expected 1..=10)"
            )));
        }
        let lowpass = daubechies_lowpass(n_vanishing);
        Ok(Self::from_lowpass(n_vanishing, lowpass))
    }

    fn from_lowpass(n_vanishing: usize, lowpass: Vec<f64>) -> Self {
        let len = lowpass.len();
        let highpass = (0..len)
            .map(|k| {
                let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                s * lowpass[len - 1 - k]
            })
            .collect();
        Self { n_vanishing, lowpass, highpass }
    }

    pub fn n_vanishing(&self) -> usize {
        self.n_vanishing
    }

    pub fn lowpass(&self) -> &[f64] {
        &self.lowpass
    }

    pub fn highpass(&self) -> &[f64] {
        &self.highpass
    }

    /// Support width `T` of the scaling function and wavelet (`supp = [0, T]`).
    pub fn support_length(&self) -> usize {
        self.lowpass.len() - 1
    }

    /// Number of filter taps, `T + 1`.
    pub fn taps(&self) -> usize {
        self.lowpass.len()
    }
}

/// Evaluates a real-coefficient polynomial (ascending powers) at a complex point.
fn horner(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// All complex roots of a polynomial given in ascending powers (Aberth iteration
/// followed by Newton polishing).
fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let degree = coeffs.len() - 1;
    if degree == 0 {
        return Vec::new();
    }
    let lead = coeffs[degree];
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
    let deriv: Vec<f64> = (1..=degree).map(|k| k as f64 * monic[k]).collect();
    // Cauchy bound for the starting circle
    let radius = 1.0 + monic[..degree].iter().map(|c| c.abs()).fold(0.0, f64::max);
    let mut roots: Vec<Complex64> = (0..degree)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / degree as f64;
            Complex64::from_polar(0.5 * radius, angle)
        })
        .collect();
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in 0..degree {
            let z = roots[i];
            let ratio = horner(&monic, z) / horner(&deriv, z);
            let repulsion: Complex64 = (0..degree)
                .filter(|&k| k != i)
                .map(|k| 1.0 / (z - roots[k]))
                .sum();
            let step = ratio / (1.0 - ratio * repulsion);
            roots[i] = z - step;
            moved = moved.max(step.norm() / z.norm().max(1.0));
        }
        if moved < 1e-16 {
            break;
        }
    }
    for z in roots.iter_mut() {
        for _ in 0..3 {
            let d = horner(&deriv, *z);
            if d.norm() == 0.0 {
                break;
            }
            *z -= horner(&monic, *z) / d;
        }
    }
    roots
}

/// Multiplies a complex polynomial (ascending powers) by `(z - root)`.
fn multiply_linear(poly: &[Complex64], root: Complex64) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); poly.len() + 1];
    for (k, &c) in poly.iter().enumerate() {
        out[k + 1] += c;
        out[k] -= c * root;
    }
    out
}

/// Spectral factorization of the Daubechies polynomial
/// `P(y) = sum_{k<N} C(N-1+k, k) y^k` with `y = (2 - z - 1/z) / 4`.
fn daubechies_lowpass(order: usize) -> Vec<f64> {
    let binomial = |n: usize, k: usize| -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    };
    let p_coeffs: Vec<f64> = (0..order).map(|k| binomial(order - 1 + k, k)).collect();
    let mut poly = vec![Complex64::new(1.0, 0.0)];
    for _ in 0..order {
        poly = multiply_linear(&poly, Complex64::new(-1.0, 0.0));
    }
    for y in polynomial_roots(&p_coeffs) {
        // z + 1/z = 2 - 4y; keep the root inside the unit circle
        let b = Complex64::new(2.0, 0.0) - 4.0 * y;
        let disc = (b * b - 4.0).sqrt();
        let (z1, z2) = ((b + disc) / 2.0, (b - disc) / 2.0);
        let z = if z1.norm() < z2.norm() { z1 } else { z2 };
        poly = multiply_linear(&poly, z);
    }
    let total: f64 = poly.iter().map(|c| c.re).sum();
    let scale = std::f64::consts::SQRT_2 / total;
    // highest power first gives the tabulated extremal-phase ordering
    poly.iter().rev().map(|c| c.re * scale).collect()
}

/// Border-free detail coefficients of a single series at one octave.
#[derive(Debug, Clone, PartialEq)]
struct SeriesOctave {
    first_shift: i64,
    values: Vec<f64>,
}

/// Retained shift window `[lo, hi]` at octave `j` for a series of length `n`.
fn border_free_window(n: usize, support: usize, octave: u32) -> (i64, i64) {
    let scale = 1i64 << octave;
    let t = support as i64;
    let lo = ((t + scale - 1) / scale).max(1);
    let hi = (n as i64 + 1 - t * scale).div_euclid(scale);
    (lo, hi)
}

/// Number of border-free coefficients at `octave`, or `None` when there are none.
pub fn border_free_count(n: usize, bank: &FilterBank, octave: u32) -> Option<usize> {
    let (lo, hi) = border_free_window(n, bank.support_length(), octave);
    (hi >= lo).then(|| (hi - lo + 1) as usize)
}

fn validate_depth(n: usize, bank: &FilterBank, j_max: u32) -> Result<()> {
    if j_max == 0 {
        return Err(Error::Config("deepest octave must be at least 1".into()));
    }
    if j_max > 40 {
        return Err(Error::Config(format!("octave {j_max} is unreasonably deep")));
    }
    for j in 1..=j_max {
        let fits = (1usize << j).saturating_mul(bank.taps()) <= n;
        if !fits || border_free_count(n, bank, j).is_none() {
            return Err(Error::Config(format!(
                "series of length {n} too short for octave {j} with a {}-tap filter \
                 (needs 2^{j} * {} <= n)",
                bank.taps(),
                bank.taps()
            )));
        }
    }
    Ok(())
}

fn decompose_series(series: &[f64], bank: &FilterBank, j_min: u32, j_max: u32) -> Vec<SeriesOctave> {
    let n = series.len();
    let support = bank.support_length();
    let (u, v) = (bank.lowpass(), bank.highpass());
    // approx[k - 1] holds A(2^j, k) for k = 1..=approx.len()
    let mut approx = series.to_vec();
    let mut out = Vec::with_capacity((j_max - j_min + 1) as usize);
    for j in 1..=j_max {
        let count = approx.len().saturating_sub(support) / 2;
        let mut next = Vec::with_capacity(count);
        let mut detail = Vec::with_capacity(count);
        for k in 1..=count {
            let window = &approx[2 * k - 1..2 * k + support];
            next.push(window.iter().zip(u).map(|(a, c)| a * c).sum());
            detail.push(window.iter().zip(v).map(|(a, c)| a * c).sum());
        }
        if j >= j_min {
            let (lo, hi) = border_free_window(n, support, j);
            let values = detail[(lo - 1) as usize..hi as usize].to_vec();
            out.push(SeriesOctave { first_shift: lo, values });
        }
        approx = next;
    }
    out
}

/// Univariate detail coefficients at octaves `1..=j_max` (border-free only).
pub fn decompose_series_details(series: &[f64], bank: &FilterBank, j_max: u32) -> Result<Vec<Vec<f64>>> {
    validate_depth(series.len(), bank, j_max)?;
    Ok(decompose_series(series, bank, 1, j_max)
        .into_iter()
        .map(|o| o.values)
        .collect())
}

/// Multivariate detail coefficients, one `p x n_j` block per octave.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletDecomposition {
    details: BTreeMap<u32, Vec<Vec<f64>>>,
    first_shift: BTreeMap<u32, i64>,
    source_n: usize,
    p: usize,
}

impl WaveletDecomposition {
    /// Detail rows (one per series) at `octave`.
    pub fn rows(&self, octave: u32) -> Option<&[Vec<f64>]> {
        self.details.get(&octave).map(Vec::as_slice)
    }

    /// Details at `octave` as a `p x n_j` matrix.
    pub fn matrix(&self, octave: u32) -> Option<DMatrix<f64>> {
        let rows = self.details.get(&octave)?;
        let nj = rows[0].len();
        Some(DMatrix::from_fn(self.p, nj, |i, k| rows[i][k]))
    }

    /// Border-free coefficient count `n_j`.
    pub fn count(&self, octave: u32) -> Option<usize> {
        self.details.get(&octave).map(|r| r[0].len())
    }

    /// Shift index `k` of the first retained coefficient.
    pub fn first_shift(&self, octave: u32) -> Option<i64> {
        self.first_shift.get(&octave).copied()
    }

    pub fn octave_range(&self) -> (u32, u32) {
        let lo = *self.details.keys().next().expect("non-empty decomposition");
        let hi = *self.details.keys().next_back().expect("non-empty decomposition");
        (lo, hi)
    }

    pub fn octaves(&self) -> impl Iterator<Item = u32> + '_ {
        self.details.keys().copied()
    }

    pub fn source_n(&self) -> usize {
        self.source_n
    }

    pub fn p(&self) -> usize {
        self.p
    }
}

/// Mallat pyramid over octaves `1..=j_max`, keeping every octave.
pub fn decompose(panel: &Panel, bank: &FilterBank, j_max: u32) -> Result<WaveletDecomposition> {
    decompose_range(panel, bank, 1, j_max)
}

/// Mallat pyramid over octaves `1..=j_max`, retaining only `j_min..=j_max`.
pub fn decompose_range(
    panel: &Panel,
    bank: &FilterBank,
    j_min: u32,
    j_max: u32,
) -> Result<WaveletDecomposition> {
    if j_min == 0 || j_min > j_max {
        return Err(Error::Config(format!("invalid octave range {j_min}..={j_max}")));
    }
    let n = panel.n();
    validate_depth(n, bank, j_max)?;
    let per_row = par::map_range(panel.p(), |i| decompose_series(&panel.row(i), bank, j_min, j_max));
    let mut details = BTreeMap::new();
    let mut first_shift = BTreeMap::new();
    for (idx, j) in (j_min..=j_max).enumerate() {
        first_shift.insert(j, per_row[0][idx].first_shift);
        details.insert(j, per_row.iter().map(|r| r[idx].values.clone()).collect());
    }
    Ok(WaveletDecomposition { details, first_shift, source_n: n, p: panel.p() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::PanelKind;

    #[test]
    fn haar_coefficients() {
        let b = FilterBank::daubechies(1).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((b.lowpass()[0] - s).abs() < 1e-15 && (b.lowpass()[1] - s).abs() < 1e-15);
        assert_eq!(b.support_length(), 1);
    }

    #[test]
    fn d4_matches_closed_form() {
        let r3 = 3f64.sqrt();
        let d = 4.0 * std::f64::consts::SQRT_2;
        let want = [(1.0 + r3) / d, (3.0 + r3) / d, (3.0 - r3) / d, (1.0 - r3) / d];
        let b = FilterBank::daubechies(2).unwrap();
        for (got, want) in b.lowpass().iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!((b.lowpass().iter().sum::<f64>() - std::f64::consts::SQRT_2).abs() < 1e-10);
        assert!(b.highpass().iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn db3_matches_tabulated_values() {
        let want = [
            0.332_670_552_950_082_6,
            0.806_891_509_311_092_5,
            0.459_877_502_118_491_5,
            -0.135_011_020_010_254_6,
            -0.085_441_273_882_026_7,
            0.035_226_291_885_709_5,
        ];
        let b = FilterBank::daubechies(3).unwrap();
        for (got, want) in b.lowpass().iter().zip(want) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn filters_are_orthonormal_for_all_orders() {
        for order in 1..=10 {
            let b = FilterBank::daubechies(order).unwrap();
            let u = b.lowpass();
            assert_eq!(u.len(), 2 * order);
            for shift in 0..order {
                let ip: f64 = (0..u.len() - 2 * shift).map(|k| u[k] * u[k + 2 * shift]).sum();
                let want = if shift == 0 { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-12, "order {order} shift {shift}: {ip}");
            }
            assert!((u.iter().sum::<f64>() - std::f64::consts::SQRT_2).abs() < 1e-10);
        }
    }

    #[test]
    fn highpass_is_quadrature_mirror() {
        let b = FilterBank::daubechies(4).unwrap();
        let len = b.taps();
        for k in 0..len {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert_eq!(b.highpass()[k], s * b.lowpass()[len - 1 - k]);
        }
    }

    #[test]
    fn discrete_vanishing_moments() {
        for order in 1..=10 {
            let b = FilterBank::daubechies(order).unwrap();
            for m in 0..order as i32 {
                let terms: Vec<f64> = b
                    .highpass()
                    .iter()
                    .enumerate()
                    .map(|(k, v)| (k as f64).powi(m) * v)
                    .collect();
                let moment: f64 = terms.iter().sum();
                // absolute 1e-8 is below f64 resolution once k^m reaches ~1e8
                let scale: f64 = terms.iter().map(|t| t.abs()).sum::<f64>().max(1.0);
                assert!(moment.abs() < 1e-8 * scale, "order {order} m {m}: {moment}");
                if order <= 4 {
                    assert!(moment.abs() < 1e-8, "order {order} m {m}: {moment}");
                }
            }
        }
    }

    #[test]
    fn unsupported_order() {
        assert!(matches!(FilterBank::daubechies(0), Err(Error::Config(_))));
        assert!(matches!(FilterBank::daubechies(11), Err(Error::Config(_))));
    }

    #[test]
    fn border_counts_respect_bound() {
        for order in 1..=4 {
            let b = FilterBank::daubechies(order).unwrap();
            let t = b.support_length() as f64;
            for n in [64usize, 100, 1000, 1 << 14] {
                let mut prev = usize::MAX;
                for j in 1..=6u32 {
                    let Some(c) = border_free_count(n, &b, j) else { break };
                    let bound = ((n as f64 + 1.0 - t) / 2f64.powi(j as i32) - t).floor() + 1.0;
                    assert!(c as f64 <= bound, "n={n} j={j}: {c} > {bound}");
                    assert!(c <= prev);
                    prev = c;
                }
            }
        }
    }

    #[test]
    fn constant_and_ramp_details_vanish() {
        let n = 1000;
        let b = FilterBank::daubechies(2).unwrap();
        let constant = vec![3.5; n];
        let ramp: Vec<f64> = (1..=n).map(|k| k as f64).collect();
        for d in decompose_series_details(&constant, &b, 5).unwrap() {
            assert!(d.iter().all(|x| x.abs() < 1e-12));
        }
        for d in decompose_series_details(&ramp, &b, 5).unwrap() {
            assert!(d.iter().all(|x| x.abs() < 1e-8));
        }
    }

    #[test]
    fn too_short_series_names_octave() {
        let b = FilterBank::daubechies(2).unwrap();
        let err = decompose_series_details(&vec![1.0; 40], &b, 4).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("octave 4")), "{err}");
    }

    #[test]
    fn panel_decomposition_stacks_rows() {
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..512).map(|t| ((t * (i + 2)) as f64 * 0.37).sin() + t as f64 * 0.01).collect())
            .collect();
        let panel = Panel::from_rows(&rows, PanelKind::Observed, None).unwrap();
        let b = FilterBank::daubechies(3).unwrap();
        let dec = decompose(&panel, &b, 4).unwrap();
        assert_eq!(dec.octave_range(), (1, 4));
        for (i, row) in rows.iter().enumerate() {
            let uni = decompose_series_details(row, &b, 4).unwrap();
            for j in 1..=4u32 {
                assert_eq!(dec.rows(j).unwrap()[i], uni[(j - 1) as usize]);
            }
        }
        let partial = decompose_range(&panel, &b, 3, 4).unwrap();
        assert_eq!(partial.octave_range(), (3, 4));
        assert_eq!(partial.rows(3), dec.rows(3));
    }
}
