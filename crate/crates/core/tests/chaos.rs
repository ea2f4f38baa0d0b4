use steinkit::empirical::{moment_of, moment_stderr, weighted_ks, SampleBatch};
use steinkit::gaussian_chaos::{
    berry_rate, diagnostics, simulate_statistic, Backend, FbmSampler, FbmSpec, CHOLESKY_MAX_N,
};
use steinkit::rng::{stream, Domain};

fn check_cumulants(h: f64, n: usize, draws: usize, seed: u64, width: f64) {
    let spec = FbmSpec::new(h, n).unwrap();
    let d = diagnostics(spec);
    let v = simulate_statistic(spec, draws, seed, 32).unwrap();
    let (m2, s2) = (moment_of(&v, 2), moment_stderr(&v, 2));
    let (m4, s4) = (moment_of(&v, 4), moment_stderr(&v, 4));
    assert!((m2 - 1.0).abs() <= width * s2, "H={h} n={n}: E F^2 = {m2} (se {s2})");
    let want = 3.0 + d.kappa4_excess;
    assert!(
        (m4 - want).abs() <= width * s4,
        "H={h} n={n}: E F^4 = {m4}, want {want} (se {s4})"
    );
}

#[test]
fn second_and_fourth_moments_match_traces() {
    let mut seed = 40;
    for h in [0.3, 0.5, 0.7] {
        for n in [16, 64] {
            check_cumulants(h, n, 1_000_000, seed, 4.0);
            seed += 1;
        }
    }
}

#[test]
fn excess_kurtosis_at_three_quarters() {
    check_cumulants(0.75, 64, 1_000_000, 50, 3.0);
}

#[test]
fn circulant_paths_have_the_right_covariance() {
    let spec = FbmSpec::new(0.7, 300).unwrap();
    let sampler = FbmSampler::with_backend(spec, Backend::Circulant).unwrap();
    let row = spec.covariance_row();
    let paths = 4000;
    let lags = 6;
    let mut est: Vec<Vec<f64>> = (0..lags).map(|_| Vec::with_capacity(paths)).collect();
    let mut rng = stream(7, Domain::Oracle, 0);
    for _ in 0..paths {
        let x = sampler.sample(&mut rng);
        assert_eq!(x.len(), 300);
        for (j, e) in est.iter_mut().enumerate() {
            let s: f64 = x.iter().zip(&x[j..]).map(|(a, b)| a * b).sum();
            e.push(s / (x.len() - j) as f64);
        }
    }
    for (j, e) in est.iter().enumerate() {
        let m = moment_of(e, 1);
        let se = moment_stderr(e, 1);
        assert!((m - row[j]).abs() <= 5.0 * se, "lag {j}: {m} vs {} (se {se})", row[j]);
    }
}

#[test]
fn large_n_uses_the_circulant_backend_and_stays_standardized() {
    let spec = FbmSpec::new(0.3, CHOLESKY_MAX_N + 1000).unwrap();
    assert_eq!(FbmSampler::new(spec).unwrap().backend(), Backend::Circulant);
    let v = simulate_statistic(spec, 4000, 9, 8).unwrap();
    assert!((moment_of(&v, 1)).abs() <= 4.0 * moment_stderr(&v, 1));
    assert!((moment_of(&v, 2) - 1.0).abs() <= 4.0 * moment_stderr(&v, 2));
}

#[test]
fn backends_agree_in_distribution() {
    let spec = FbmSpec::new(0.6, 128).unwrap();
    let sigma = diagnostics(spec).sigma_n;
    let mut out = Vec::new();
    for backend in [Backend::Cholesky, Backend::Circulant] {
        let s = FbmSampler::with_backend(spec, backend).unwrap();
        let v = s.statistics(&mut stream(11, Domain::Oracle, backend as u64), 100_000, sigma);
        out.push((moment_of(&v, 4), moment_stderr(&v, 4)));
    }
    let ((a, sa), (b, sb)) = (out[0], out[1]);
    assert!((a - b).abs() <= 4.0 * (sa * sa + sb * sb).sqrt(), "{a} vs {b}");
}

#[test]
fn weighted_distance_tracks_the_rate() {
    for h in [0.5, 0.7] {
        let ratios: Vec<f64> = [16, 64, 256]
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let spec = FbmSpec::new(h, n).unwrap();
                let seed = 60 + i as u64;
                let b = SampleBatch::new(simulate_statistic(spec, 200_000, seed, 16).unwrap(), seed, "fbm").unwrap();
                let w3 = weighted_ks(&b, 3).unwrap().0;
                assert!(w3 < 2.0, "H={h} n={n}: weighted distance {w3}");
                w3 / berry_rate(h, n).unwrap()
            })
            .collect();
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 10.0, "H={h}: ratios {ratios:?}");
    }
}
