use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use wrmsm::cluster::{hdes, icsd, kmeans};
use wrmsm::io::{from_json, parse_panel_csv, standardize, to_json, write_panel_csv, difference_sd, TimeIndex};
use wrmsm::linalg::symmetric_eigenvalues;
use wrmsm::selection::{wrmsm as select_modes, SelectionParams};
use wrmsm::synth::{gen_panel, HurstDistribution, Mixing};
use wrmsm::wavelet::{decompose_series_details, FilterBank};
use wrmsm::wrm::LogEigenSet;
use wrmsm::seed;

fn white(n: usize, s: u64) -> Vec<f64> {
    let mut rng = seed::rng(s, &[]);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cfg(48))]

    #[test]
    fn details_are_linear(order in 1usize..=4, sx in any::<u64>(), sy in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let bank = FilterBank::daubechies(order).unwrap();
        let (x, y) = (white(512, sx), white(512, sy));
        let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
        let (dx, dy, dz) = (
            decompose_series_details(&x, &bank, 4).unwrap(),
            decompose_series_details(&y, &bank, 4).unwrap(),
            decompose_series_details(&z, &bank, 4).unwrap(),
        );
        for j in 0..4 {
            for i in 0..dz[j].len() {
                prop_assert!((dz[j][i] - alpha * dx[j][i] - beta * dy[j][i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constants_have_no_detail(order in 1usize..=6, c in -100.0f64..100.0) {
        let bank = FilterBank::daubechies(order).unwrap();
        let d = decompose_series_details(&vec![c; 1024], &bank, 3).unwrap();
        prop_assert!(d.iter().flatten().all(|v| v.abs() < 1e-9 * (1.0 + c.abs())));
    }

    /// Dropping the first `2^J` samples shifts the octave-`j` details by
    /// `2^(J - j)` positions for every `j <= J`.
    #[test]
    fn dyadic_shift_equivariance(order in 1usize..=3, s in any::<u64>(), big_j in 1u32..=3) {
        let bank = FilterBank::daubechies(order).unwrap();
        let x = white(1024, s);
        let shift = 1usize << big_j;
        let full = decompose_series_details(&x, &bank, big_j).unwrap();
        let cut = decompose_series_details(&x[shift..], &bank, big_j).unwrap();
        for j in 1..=big_j {
            let (a, b) = (&full[(j - 1) as usize], &cut[(j - 1) as usize]);
            let offset = (0..a.len()).find(|&o| (a[o] - b[0]).abs() < 1e-12);
            prop_assert!(offset.is_some(), "octave {j}: no alignment");
            let o = offset.unwrap();
            for i in 0..b.len().min(a.len() - o) {
                prop_assert!((a[o + i] - b[i]).abs() < 1e-10);
            }
        }
    }

    /// Sum and sum of squares of the eigenvalues, the characteristic
    /// polynomial at each eigenvalue, and the 2 x 2 closed form.
    #[test]
    fn eigenvalues_match_invariants(p in 1usize..=4, entries in prop::collection::vec(-5.0f64..5.0, 16)) {
        let mut a = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..=i {
                a[(i, j)] = entries[i * 4 + j];
                a[(j, i)] = entries[i * 4 + j];
            }
        }
        let eig = symmetric_eigenvalues(&a);
        prop_assert!(eig.windows(2).all(|w| w[0] <= w[1]));
        let scale = 1.0 + a.norm();
        prop_assert!((eig.iter().sum::<f64>() - a.trace()).abs() < 1e-9 * scale);
        prop_assert!((eig.iter().map(|l| l * l).sum::<f64>() - a.norm_squared()).abs() < 1e-8 * scale * scale);
        for &l in &eig {
            let shifted = &a - DMatrix::identity(p, p) * l;
            prop_assert!(shifted.determinant().abs() < 1e-7 * scale.powi(p as i32));
        }
        if p == 2 {
            let (x, y, z) = (a[(0, 0)], a[(1, 1)], a[(0, 1)]);
            let mid = 0.5 * (x + y);
            let rad = (0.25 * (x - y).powi(2) + z * z).sqrt();
            prop_assert!((eig[0] - (mid - rad)).abs() < 1e-10 * scale);
            prop_assert!((eig[1] - (mid + rad)).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn cluster_schemes_are_partitions(values in prop::collection::vec(0.0f64..1.0, 2..40), eps in 0.01f64..0.5, s in any::<u64>()) {
        let set = LogEigenSet::from_values(values).unwrap();
        let sch = hdes(&set, eps, s).unwrap();
        let v = set.values();
        prop_assert_eq!(sch.assignments.len(), v.len());
        prop_assert_eq!(sch.mode_estimates.len(), sch.r_hat);
        for c in 0..sch.r_hat {
            let members: Vec<f64> = v.iter().zip(&sch.assignments).filter(|(_, a)| **a == c).map(|(x, _)| *x).collect();
            prop_assert!(!members.is_empty());
            let m = members.iter().sum::<f64>() / members.len() as f64;
            prop_assert!((sch.mode_estimates[c] - m).abs() < 1e-12);
            prop_assert!((sch.prob_estimates[c] - members.len() as f64 / v.len() as f64).abs() < 1e-12);
        }
        prop_assert!(sch.mode_estimates.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!((sch.prob_estimates.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((sch.icsd - icsd(v, &sch.assignments, sch.r_hat)).abs() < 1e-12);
    }

    /// The grid `k M / (2m)` contains every point of `k M / m`, so refining it
    /// can only lower the selected ICSD.
    #[test]
    fn refining_the_grid_never_raises_icsd(values in prop::collection::vec(0.0f64..1.0, 4..30), m in 1usize..12, s in any::<u64>()) {
        let set = LogEigenSet::from_values(values).unwrap();
        let upper = set.range().max(1e-3);
        let coarse = select_modes(&set, &SelectionParams::new(upper, m, s)).unwrap();
        let fine = select_modes(&set, &SelectionParams::new(upper, 2 * m, s)).unwrap();
        for k in 0..m {
            prop_assert_eq!(coarse.trace.icsd_curve[k], fine.trace.icsd_curve[2 * k + 1]);
        }
        if !coarse.trace.guard_relaxed && !fine.trace.guard_relaxed {
            prop_assert!(fine.icsd <= coarse.icsd);
        }
    }

    #[test]
    fn kmeans_recovers_level_sets(levels in prop::collection::btree_set(-50i32..50, 1..6), reps in prop::collection::vec(1usize..5, 6), s in any::<u64>()) {
        let levels: Vec<f64> = levels.into_iter().map(|l| l as f64 / 10.0).collect();
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for (c, &l) in levels.iter().enumerate() {
            for _ in 0..reps[c] {
                points.push(vec![l]);
                truth.push(c);
            }
        }
        let res = kmeans(&points, levels.len(), s).unwrap();
        for i in 0..points.len() {
            for j in 0..points.len() {
                prop_assert_eq!(res.labels[i] == res.labels[j], truth[i] == truth[j]);
            }
        }
    }

    #[test]
    fn standardized_differences_have_unit_sd(s in any::<u64>(), scale in 0.001f64..1000.0) {
        let x: Vec<f64> = white(200, s).iter().scan(0.0, |acc, v| { *acc += v; Some(*acc) }).collect();
        let scaled: Vec<f64> = x.iter().map(|v| v * scale).collect();
        let names = vec!["x".to_string()];
        let a = standardize(&[x], &names).unwrap();
        let b = standardize(&[scaled], &names).unwrap();
        prop_assert!((difference_sd(&a[0]) - 1.0).abs() < 1e-12);
        for (u, v) in a[0].iter().zip(&b[0]) {
            prop_assert!((u - v).abs() < 1e-9 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn csv_round_trip_is_exact(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 5), 1..5)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let names: Vec<String> = (0..rows.len()).map(|i| format!("x{i}")).collect();
        write_panel_csv(&path, &names, &rows).unwrap();
        let back = parse_panel_csv(std::fs::File::open(&path).unwrap(), TimeIndex::Detect).unwrap();
        prop_assert_eq!(back.names, names);
        prop_assert_eq!(back.series, rows);
    }

    #[test]
    fn json_round_trip_is_exact(values in prop::collection::vec(-1.0f64..2.0, 3..30), s in any::<u64>()) {
        let set = LogEigenSet::from_values(values).unwrap();
        let res = select_modes(&set, &SelectionParams::new(set.range().max(1e-3), 7, s)).unwrap();
        let text = to_json(&res).unwrap();
        let back: wrmsm::selection::EstimationResult = from_json(&text).unwrap();
        prop_assert_eq!(&back, &res);
        prop_assert_eq!(to_json(&back).unwrap(), text);
    }
}

proptest! {
    #![proptest_config(cfg(8))]

    /// Haar details of unit white noise have unit variance at every octave.
    #[test]
    fn haar_preserves_white_noise_energy(s in any::<u64>()) {
        let bank = FilterBank::daubechies(1).unwrap();
        let d = decompose_series_details(&white(1 << 16, s), &bank, 6).unwrap();
        for (j, det) in d.iter().enumerate() {
            let var = det.iter().map(|v| v * v).sum::<f64>() / det.len() as f64;
            let tol = 5.0 * (2.0 / det.len() as f64).sqrt();
            prop_assert!((var - 1.0).abs() < tol, "octave {}: {}", j + 1, var);
        }
    }

    #[test]
    fn generation_and_selection_are_deterministic(s in any::<u64>()) {
        let dist = HurstDistribution::uniform(vec![0.3, 0.7]).unwrap();
        let a = gen_panel(&dist, 6, 512, &Mixing::GenerateOrthogonal, s).unwrap();
        let b = gen_panel(&dist, 6, 512, &Mixing::GenerateOrthogonal, s).unwrap();
        prop_assert_eq!(a.observed.data(), b.observed.data());
        let set = LogEigenSet::from_values(white(20, s)).unwrap();
        let params = SelectionParams::new(set.range(), 10, s);
        prop_assert_eq!(select_modes(&set, &params).unwrap(), select_modes(&set, &params).unwrap());
    }
}

#[test]
fn disjoint_complete_graphs_have_block_spectrum() {
    use wrmsm::cluster::{eigengap_count, laplacian_spectrum, EpsilonGraph};
    let sizes = [3usize, 5, 4];
    let p: usize = sizes.iter().sum();
    let mut adj = DMatrix::zeros(p, p);
    let mut start = 0;
    for &s in &sizes {
        for i in start..start + s {
            for j in start..start + s {
                if i != j {
                    adj[(i, j)] = 1.0;
                }
            }
        }
        start += s;
    }
    let spec = laplacian_spectrum(&EpsilonGraph::from_adjacency(adj).unwrap()).unwrap();
    let mut expected = vec![0.0; 3];
    for &s in &sizes {
        expected.extend(std::iter::repeat_n(s as f64, s - 1));
    }
    expected.sort_by(f64::total_cmp);
    for (a, b) in spec.eigenvalues.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-10);
    }
    assert_eq!(eigengap_count(&spec.eigenvalues).unwrap(), 3);
}
