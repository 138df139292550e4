use nrdc::noise::{fbm_covariance, sample_brownian, sample_fgn, NoiseBatch, NoiseKind, NoiseSpec};

/// Empirical covariance of the cumulative path values at the grid points
/// `t_1..t_K`.
fn path_covariance(batch: &NoiseBatch, channel: usize) -> Vec<Vec<f64>> {
    let k = batch.steps;
    let n = batch.count as f64;
    let mut sum = vec![0.0; k];
    let mut prod = vec![vec![0.0; k]; k];
    for i in 0..batch.count {
        let mut w = vec![0.0; k];
        let mut acc = 0.0;
        for (s, ws) in w.iter_mut().enumerate() {
            acc += batch.increment(i, s)[channel];
            *ws = acc;
        }
        for a in 0..k {
            sum[a] += w[a];
            for b in 0..k {
                prod[a][b] += w[a] * w[b];
            }
        }
    }
    (0..k)
        .map(|a| (0..k).map(|b| prod[a][b] / n - sum[a] * sum[b] / (n * n)).collect())
        .collect()
}

fn max_relative_covariance_error(kind: NoiseKind, samples: usize, seed: u64) -> f64 {
    let k = 8;
    let batch = NoiseBatch::sample(kind, 1, 1.0, k, seed, 0, samples).unwrap();
    let cov = path_covariance(&batch, 0);
    let mut worst: f64 = 0.0;
    for (a, row) in cov.iter().enumerate() {
        for (b, c) in row.iter().enumerate() {
            let (s, t) = ((a + 1) as f64 / k as f64, (b + 1) as f64 / k as f64);
            let exact = fbm_covariance(s, t, kind.hurst());
            worst = worst.max((c - exact).abs() / exact);
        }
    }
    worst
}

#[test]
fn fractional_covariance_matches_closed_form() {
    let err = max_relative_covariance_error(NoiseKind::Fractional { hurst: 0.3 }, 40_000, 5);
    assert!(err < 0.05, "worst relative error {err}");
    let err = max_relative_covariance_error(NoiseKind::Fractional { hurst: 0.8 }, 40_000, 6);
    assert!(err < 0.05, "worst relative error {err}");
}

#[test]
fn brownian_covariance_is_min() {
    let err = max_relative_covariance_error(NoiseKind::Brownian, 40_000, 7);
    assert!(err < 0.05, "worst relative error {err}");
    // (s^1 + t^1 - |t - s|) / 2 = min(s, t)
    assert_eq!(fbm_covariance(0.25, 0.75, 0.5), 0.25);
}

#[test]
fn identical_specs_give_identical_paths() {
    let spec = NoiseSpec {
        kind: NoiseKind::Fractional { hurst: 0.3 },
        dim: 3,
        horizon: 2.0,
        steps: 17,
        seed: 99,
    };
    assert_eq!(sample_fgn(&spec).unwrap(), sample_fgn(&spec).unwrap());
    let b = NoiseSpec {
        kind: NoiseKind::Brownian,
        ..spec
    };
    assert_eq!(sample_brownian(&b).unwrap(), sample_brownian(&b).unwrap());
    assert_ne!(
        sample_brownian(&b).unwrap(),
        sample_brownian(&NoiseSpec { seed: 100, ..b }).unwrap()
    );
}

fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn summed_fine_brownian_increments_match_coarse_ones() {
    let n = 10_000;
    let fine = NoiseBatch::sample(NoiseKind::Brownian, 1, 1.0, 8, 1, 0, n)
        .unwrap()
        .coarsen(2)
        .unwrap();
    let coarse = NoiseBatch::sample(NoiseKind::Brownian, 1, 1.0, 4, 2, 0, n).unwrap();
    // two-sample Kolmogorov-Smirnov at the 1% level
    let critical = 1.628 * ((2 * n) as f64 / (n * n) as f64).sqrt();
    for step in 0..4 {
        let a = (0..n).map(|i| fine.increment(i, step)[0]).collect();
        let b = (0..n).map(|i| coarse.increment(i, step)[0]).collect();
        let d = ks_statistic(a, b);
        assert!(d < critical, "step {step}: KS statistic {d} >= {critical}");
    }
}

#[test]
fn coarsening_sums_adjacent_increments() {
    let fine = NoiseBatch::sample(NoiseKind::Fractional { hurst: 0.3 }, 2, 1.0, 8, 3, 0, 5).unwrap();
    let coarse = fine.coarsen(4).unwrap();
    assert_eq!(coarse.steps, 2);
    for i in 0..5 {
        for c in 0..2 {
            let direct: f64 = (4..8).map(|k| fine.increment(i, k)[c]).sum();
            assert!((coarse.increment(i, 1)[c] - direct).abs() < 1e-15);
        }
    }
    assert!(fine.coarsen(3).is_err());
}

#[test]
fn channels_are_uncorrelated() {
    let n = 20_000;
    let batch = NoiseBatch::sample(NoiseKind::Fractional { hurst: 0.3 }, 2, 1.0, 4, 11, 0, n).unwrap();
    for step in 0..4 {
        let xs: Vec<[f64; 2]> = (0..n)
            .map(|i| [batch.increment(i, step)[0], batch.increment(i, step)[1]])
            .collect();
        let m0 = xs.iter().map(|x| x[0]).sum::<f64>() / n as f64;
        let m1 = xs.iter().map(|x| x[1]).sum::<f64>() / n as f64;
        let prods: Vec<f64> = xs.iter().map(|x| (x[0] - m0) * (x[1] - m1)).collect();
        let cov = prods.iter().sum::<f64>() / n as f64;
        let var = prods.iter().map(|p| (p - cov).powi(2)).sum::<f64>() / n as f64;
        let se = (var / n as f64).sqrt();
        assert!(cov.abs() < 3.0 * se, "step {step}: cross covariance {cov} vs se {se}");
    }
}

#[test]
fn trajectory_streams_do_not_depend_on_batch_split() {
    let kind = NoiseKind::Fractional { hurst: 0.7 };
    let whole = NoiseBatch::sample(kind, 2, 1.0, 10, 4, 0, 6).unwrap();
    let tail = NoiseBatch::sample(kind, 2, 1.0, 10, 4, 3, 3).unwrap();
    for i in 0..3 {
        assert_eq!(whole.path(i + 3), tail.path(i));
    }
}

#[test]
fn csv_dump_has_cumulative_rows() {
    let p = sample_brownian(&NoiseSpec {
        kind: NoiseKind::Brownian,
        dim: 2,
        horizon: 1.0,
        steps: 4,
        seed: 0,
    })
    .unwrap();
    let csv = p.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,channel_0,channel_1");
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[1], "0,0,0");
    let last: Vec<f64> = lines[5].split(',').map(|v| v.parse().unwrap()).collect();
    let total: f64 = (0..4).map(|k| p.increments[2 * k]).sum();
    assert!((last[1] - total).abs() < 1e-12);
}

#[test]
fn invalid_hurst_is_rejected() {
    for h in [0.0, 1.0, -0.2, 1.5] {
        assert!(NoiseBatch::sample(NoiseKind::Fractional { hurst: h }, 1, 1.0, 4, 0, 0, 1).is_err());
    }
}
