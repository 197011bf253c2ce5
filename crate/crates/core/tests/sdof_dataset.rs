use alkgp::boucwen::{self, BoucWenParams};
use alkgp::dataset::{self, Schema};
use rand::Rng;
use rand_distr::StandardNormal;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn rejection_rate_matches_monte_carlo() {
    let mut oracle_rng = alkgp::rng::stream(99);
    let draws = 1_000_000;
    let accepted = (0..draws)
        .filter(|_| {
            let a: f64 = oracle_rng.sample(StandardNormal);
            let b: f64 = oracle_rng.sample(StandardNormal);
            b.abs() <= a
        })
        .count();
    let oracle = accepted as f64 / draws as f64;

    let mut rng = alkgp::rng::stream(3);
    let (mut samples, mut attempts) = (0usize, 0usize);
    while attempts < draws {
        let (p, tries) = boucwen::sample_params_counted(&mut rng).unwrap();
        assert!(p.s1 > 0.5 && p.s1 < 2.5 && p.s4 >= 1.0 && p.s4 < 2.0 && p.s3.abs() <= p.s2);
        samples += 1;
        attempts += tries;
    }
    let rate = samples as f64 / attempts as f64;
    assert!((rate - oracle).abs() < 0.005, "library {rate} vs oracle {oracle}");
    assert!((oracle - 0.25).abs() < 0.005);
}

#[test]
fn default_dataset_columns_behave() {
    let ds = boucwen::build_dataset(400, 17).unwrap();
    assert_eq!(ds.features.rows(), 400);
    assert_eq!(ds.features.cols(), 8);
    assert!(pearson(&ds.features.column(4), &ds.features.column(0)) > 0.99);
    assert!(pearson(&ds.features.column(5), &ds.features.column(1)) > 0.99);
    for j in [6, 7] {
        let col = ds.features.column(j);
        let mean = col.iter().sum::<f64>() / 400.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 399.0;
        assert!(mean.abs() < 0.15, "column {j} mean {mean}");
        assert!((var - 1.0).abs() < 0.25, "column {j} variance {var}");
    }
    assert!(ds.clean_labels.iter().all(|&v| v > 0.0));
    let resid: Vec<f64> = ds.labels.iter().zip(&ds.clean_labels).map(|(a, b)| a - b).collect();
    let var = resid.iter().map(|r| r * r).sum::<f64>() / 400.0;
    assert!((var - boucwen::NOISE_VARIANCE).abs() < 0.0008, "label noise variance {var}");
}

#[test]
fn csv_round_trip_is_bit_identical() {
    let ds = boucwen::build_dataset(30, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sdof.csv");
    ds.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    let loaded = dataset::load_csv(&path, &Schema::sdof()).unwrap();
    assert_eq!(loaded.features, ds.features);
    assert_eq!(loaded.labels[0], ds.labels);
}

#[test]
fn linear_limit_for_random_stiffness() {
    let mut rng = alkgp::rng::stream(8);
    for _ in 0..10 {
        let s1 = rng.random_range(0.5..2.5);
        let got = boucwen::simulate(&BoucWenParams::new(s1, 0.0, 0.0, 1.0)).unwrap();
        let want = linear_peak(1.0 + s1);
        assert!(((got - want) / want).abs() < 1e-3, "s1={s1}: {got} vs {want}");
    }
}

/// Peak of the closed-form response of m ü + c u̇ + k u = 2 cos t from rest.
fn linear_peak(k: f64) -> f64 {
    let (m, c, w) = (boucwen::MASS, boucwen::DAMPING, 1.0f64);
    let den = (k - m * w * w).powi(2) + (c * w).powi(2);
    let (a, b) = (2.0 * (k - m * w * w) / den, 2.0 * c * w / den);
    let wn = (k / m).sqrt();
    let zeta = c / (2.0 * (k * m).sqrt());
    let wd = wn * (1.0 - zeta * zeta).sqrt();
    // homogeneous part cancels the particular solution's initial state
    let c1 = -a;
    let c2 = (zeta * wn * c1 - b * w) / wd;
    let u = |t: f64| {
        (-zeta * wn * t).exp() * (c1 * (wd * t).cos() + c2 * (wd * t).sin()) + a * (w * t).cos() + b * (w * t).sin()
    };
    let steps = 400_000;
    (0..=steps).map(|i| u(10.0 * i as f64 / steps as f64)).fold(f64::MIN, f64::max)
}
