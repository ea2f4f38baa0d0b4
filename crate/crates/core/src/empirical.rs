//! Empirical distribution machinery: exact Kolmogorov and weighted Kolmogorov
//! distances to Φ, tail frequencies, moments, DKW bands and log-log rate fits.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{domain, Error, Result};
use crate::stein::{mills_ratio, phi, std_normal_sf};

/// Default number of grid points between sample extremes in [`weighted_ks`].
pub const DEFAULT_GRID: usize = 2048;

/// Sorted Monte Carlo draws of a standardized statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    values: Vec<f64>,
    pub seed: u64,
    pub model_tag: String,
}

impl SampleBatch {
    /// Sorts `values`; rejects empty input and NaNs.
    pub fn new(mut values: Vec<f64>, seed: u64, model_tag: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return domain("sample batch must not be empty");
        }
        if values.iter().any(|v| v.is_nan()) {
            return domain("sample batch contains NaN");
        }
        values.sort_by(f64::total_cmp);
        Ok(Self {
            values,
            seed,
            model_tag: model_tag.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_samples(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Writes the little-endian f64 payload (8-byte count header first) and a
    /// JSON sidecar `<path>.json` with `{model_tag, seed, n_samples}`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(8 + 8 * self.values.len());
        buf.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::File::create(path)?.write_all(&buf)?;
        let meta = BatchMeta {
            model_tag: self.model_tag.clone(),
            seed: self.seed,
            n_samples: self.values.len(),
        };
        fs::write(sidecar_path(path), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 8 {
            return domain("batch file shorter than its header");
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        if bytes.len() != 8 + 8 * n {
            return domain(format!(
                "batch file holds {} payload bytes, header announces {n} values",
                bytes.len() - 8
            ));
        }
        let values: Vec<f64> = bytes[8..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let meta: BatchMeta = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
        if meta.n_samples != n {
            return Err(Error::Domain(format!(
                "sidecar n_samples {} does not match payload {n}",
                meta.n_samples
            )));
        }
        Self::new(values, meta.seed, meta.model_tag)
    }
}

#[derive(Serialize, Deserialize)]
struct BatchMeta {
    model_tag: String,
    seed: u64,
    n_samples: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Uniform and weighted Kolmogorov distances of one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub uniform: f64,
    pub weighted: BTreeMap<u32, f64>,
    pub argmax_z: BTreeMap<u32, f64>,
    pub dkw_band: f64,
}

impl KsReport {
    pub fn new(batch: &SampleBatch, ks: &[u32], delta: f64) -> Result<Self> {
        let mut weighted = BTreeMap::new();
        let mut argmax_z = BTreeMap::new();
        for &k in ks {
            let (v, z) = weighted_ks(batch, k)?;
            weighted.insert(k, v);
            argmax_z.insert(k, z);
        }
        Ok(Self {
            uniform: ks_distance(batch)?,
            weighted,
            argmax_z,
            dkw_band: dkw_band(batch.n_samples(), delta)?,
        })
    }
}

/// `sup_z |F̂(z) - Φ(z)|`, exact for the empirical measure.
pub fn ks_distance(batch: &SampleBatch) -> Result<f64> {
    Ok(jump_sup(batch.values(), 0).0)
}

// Max over order statistics of both one-sided discrepancies, weighted by (1+|x|)^k.
fn jump_sup(values: &[f64], k: u32) -> (f64, f64) {
    let n = values.len() as f64;
    let mut best = (0.0, values[0]);
    for (i, &x) in values.iter().enumerate() {
        let cdf = phi(x);
        let d = ((i + 1) as f64 / n - cdf).max(cdf - i as f64 / n);
        let v = if k == 0 { d } else { weight(x, k) * d };
        if v > best.0 {
            best = (v, x);
        }
    }
    best
}

#[inline]
fn weight(z: f64, k: u32) -> f64 {
    (1.0 + z.abs()).powi(k as i32)
}

/// Maximizer over `z >= 0` of `(1+z)^k (1 - Φ(z))`: the root of `k R(z) = 1 + z`.
fn upper_tail_maximizer(k: u32) -> f64 {
    let k = k as f64;
    let (mut lo, mut hi) = (0.0f64, k);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if k * mills_ratio(mid) > 1.0 + mid {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// `sup_z (1+|z|)^k |F̂(z) - Φ(z)|` and the location of the supremum.
///
/// Candidates are both one-sided limits at every sample point, a uniform grid
/// on `[min - 1, max + 1]`, and the smooth tail maximizers beyond the sample
/// range where F̂ is flat. For `k = 0` the supremum is attained at a jump.
pub fn weighted_ks(batch: &SampleBatch, k: u32) -> Result<(f64, f64)> {
    weighted_ks_with_grid(batch, k, DEFAULT_GRID)
}

pub fn weighted_ks_with_grid(batch: &SampleBatch, k: u32, grid: usize) -> Result<(f64, f64)> {
    let values = batch.values();
    let mut best = jump_sup(values, k);
    if k == 0 {
        return Ok(best);
    }
    let n = values.len() as f64;
    let mut consider = |v: f64, z: f64| {
        if v > best.0 {
            best = (v, z);
        }
    };

    let (lo, hi) = (batch.min() - 1.0, batch.max() + 1.0);
    if grid >= 2 {
        let step = (hi - lo) / (grid - 1) as f64;
        let mut below = 0usize;
        for g in 0..grid {
            let z = lo + step * g as f64;
            while below < values.len() && values[below] <= z {
                below += 1;
            }
            consider(weight(z, k) * (below as f64 / n - phi(z)).abs(), z);
        }
    }

    let z_star = upper_tail_maximizer(k);
    if z_star > batch.max() {
        consider(weight(z_star, k) * std_normal_sf(z_star), z_star);
    }
    if -z_star < batch.min() {
        consider(weight(z_star, k) * std_normal_sf(z_star), -z_star);
    }
    Ok(best)
}

/// Fraction of samples above `z`, or with `|x| >= z` when `two_sided`.
pub fn tail_prob(batch: &SampleBatch, z: f64, two_sided: bool) -> f64 {
    let v = batch.values();
    let n = v.len() as f64;
    if two_sided {
        if z <= 0.0 {
            return 1.0;
        }
        let upper = v.len() - v.partition_point(|&x| x < z);
        let lower = v.partition_point(|&x| x <= -z);
        (upper + lower) as f64 / n
    } else {
        (v.len() - v.partition_point(|&x| x <= z)) as f64 / n
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated mean of `x^order`.
pub fn moment_of(values: &[f64], order: u32) -> f64 {
    let mut acc = CompensatedSum::default();
    for &x in values {
        acc.add(x.powi(order as i32));
    }
    acc.value() / values.len() as f64
}

/// Standard error of [`moment_of`].
pub fn moment_stderr(values: &[f64], order: u32) -> f64 {
    let m = moment_of(values, order);
    let m2 = moment_of(values, 2 * order);
    ((m2 - m * m).max(0.0) / values.len() as f64).sqrt()
}

pub fn sample_moment(batch: &SampleBatch, order: u32) -> Result<f64> {
    if order == 0 {
        return domain("moment order must be >= 1");
    }
    Ok(moment_of(batch.values(), order))
}

/// Dvoretzky–Kiefer–Wolfowitz band `sqrt(ln(2/δ) / (2n))`.
pub fn dkw_band(n_samples: usize, delta: f64) -> Result<f64> {
    if n_samples == 0 {
        return domain("dkw_band needs n_samples >= 1");
    }
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("dkw_band needs delta in (0, 1), got {delta}"));
    }
    Ok(((2.0 / delta).ln() / (2.0 * n_samples as f64)).sqrt())
}

/// Least-squares line through `(ln n, ln d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return domain(format!("fit_rate needs >= 3 points, got {}", points.len()));
    }
    if points.iter().any(|&(n, d)| !(n > 0.0) || !(d > 0.0)) {
        return domain("fit_rate needs positive sizes and distances");
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return domain("fit_rate needs at least two distinct sizes");
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Kolmogorov distance between a discrete law `(value, probability)` and Φ.
pub fn law_ks_distance(atoms: &[(f64, f64)]) -> Result<f64> {
    if atoms.is_empty() {
        return domain("law has no atoms");
    }
    let mut sorted = atoms.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut below = CompensatedSum::default();
    let mut best = 0.0f64;
    for &(x, p) in &sorted {
        let cdf = phi(x);
        let left = below.value();
        below.add(p);
        let right = below.value().min(1.0);
        best = best.max((left - cdf).abs()).max((right - cdf).abs());
    }
    Ok(best)
}

/// `sup_z (1+|z|)^k |F(z) - Φ(z)|` for a discrete law, with the candidate set
/// of [`weighted_ks`]; returns the value and its location.
pub fn law_weighted_ks(atoms: &[(f64, f64)], k: u32) -> Result<(f64, f64)> {
    if atoms.is_empty() {
        return domain("law has no atoms");
    }
    let mut sorted = atoms.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cum = Vec::with_capacity(sorted.len());
    let mut acc = CompensatedSum::default();
    for &(_, p) in &sorted {
        acc.add(p);
        cum.push(acc.value().min(1.0));
    }
    let mut best = (0.0f64, sorted[0].0);
    let mut consider = |v: f64, z: f64| {
        if v > best.0 {
            best = (v, z);
        }
    };
    for (i, &(x, _)) in sorted.iter().enumerate() {
        let cdf = phi(x);
        let left = if i == 0 { 0.0 } else { cum[i - 1] };
        consider(weight(x, k) * (left - cdf).abs().max((cum[i] - cdf).abs()), x);
    }
    if k == 0 {
        return Ok(best);
    }
    let (lo, hi) = (sorted[0].0 - 1.0, sorted[sorted.len() - 1].0 + 1.0);
    let step = (hi - lo) / (DEFAULT_GRID - 1) as f64;
    let mut below = 0usize;
    for g in 0..DEFAULT_GRID {
        let z = lo + step * g as f64;
        while below < sorted.len() && sorted[below].0 <= z {
            below += 1;
        }
        let f = if below == 0 { 0.0 } else { cum[below - 1] };
        consider(weight(z, k) * (f - phi(z)).abs(), z);
    }
    let z_star = upper_tail_maximizer(k);
    if z_star > sorted[sorted.len() - 1].0 {
        consider(weight(z_star, k) * std_normal_sf(z_star), z_star);
    }
    if -z_star < sorted[0].0 {
        consider(weight(z_star, k) * std_normal_sf(z_star), -z_star);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn batch(v: &[f64]) -> SampleBatch {
        SampleBatch::new(v.to_vec(), 0, "t").unwrap()
    }

    fn normal_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0f64, 40.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn ks_examples() {
        let d = ks_distance(&batch(&[-1.0, 1.0])).unwrap();
        assert!((d - 0.341_344_746_068_542_9).abs() < 1e-12);
        assert_eq!(ks_distance(&batch(&[0.0])).unwrap(), 0.5);
        assert!(SampleBatch::new(vec![], 0, "t").is_err());
        assert!(SampleBatch::new(vec![f64::NAN], 0, "t").is_err());
    }

    #[test]
    fn ks_of_exact_quantiles() {
        for &m in &[10usize, 1000, 20000] {
            let q: Vec<f64> = (1..=m).map(|i| normal_quantile((i as f64 - 0.5) / m as f64)).collect();
            let d = ks_distance(&batch(&q)).unwrap();
            assert!((d - 0.5 / m as f64).abs() < 1e-12, "m={m} d={d}");
        }
    }

    #[test]
    fn weighted_examples() {
        let b = batch(&[-1.0, 1.0]);
        let (v0, _) = weighted_ks(&b, 0).unwrap();
        assert_eq!(v0, ks_distance(&b).unwrap());
        let (v3, z3) = weighted_ks(&b, 3).unwrap();
        assert!(v3 >= 8.0 * std_normal_sf(1.0) - 1e-12);
        assert!(z3.abs() >= 1.0);
    }

    #[test]
    fn weighted_tail_maximizer_beyond_sample() {
        // All samples at 0: the upper tail beyond 0 peaks at the root of k R(z) = 1 + z.
        let b = batch(&[0.0; 4]);
        let (v, z) = weighted_ks_with_grid(&b, 4, 0).unwrap();
        let zs = upper_tail_maximizer(4);
        assert!(zs > 0.0 && (4.0 * mills_ratio(zs) - 1.0 - zs).abs() < 1e-9);
        let mut brute = 0.0f64;
        for i in 0..200_000 {
            let t = i as f64 * 1e-4;
            brute = brute.max((1.0 + t).powi(4) * std_normal_sf(t));
        }
        assert!(v >= brute - 1e-9);
        assert!(z.abs() == zs || z == 0.0);
    }

    #[test]
    fn weighted_normal_draws_regression() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let v: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b = batch(&v);
        let (w3, _) = weighted_ks(&b, 3).unwrap();
        assert!(w3.is_finite() && w3 < 10.0);
        let m6 = sample_moment(&b, 6).unwrap();
        let se = moment_stderr(b.values(), 6);
        assert!((m6 - 15.0).abs() <= 3.0 * se, "m6={m6} se={se}");
    }

    #[test]
    fn tail_prob_examples() {
        let b = batch(&[-1.0, 0.0, 2.0]);
        assert!((tail_prob(&b, 1.0, true) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(tail_prob(&b, -5.0, false), 1.0);
        assert_eq!(tail_prob(&b, 5.0, false), 0.0);
        assert_eq!(tail_prob(&b, 5.0, true), 0.0);
    }

    #[test]
    fn moment_examples() {
        let b = batch(&[-1.0, 1.0]);
        assert_eq!(sample_moment(&b, 1).unwrap(), 0.0);
        assert_eq!(sample_moment(&b, 2).unwrap(), 1.0);
        assert!(sample_moment(&b, 0).is_err());
    }

    #[test]
    fn compensated_sum_keeps_small_terms() {
        let mut acc = CompensatedSum::default();
        acc.add(1e16);
        for _ in 0..1000 {
            acc.add(1.0);
        }
        acc.add(-1e16);
        assert_eq!(acc.value(), 1000.0);
    }

    #[test]
    fn dkw_examples() {
        let b = dkw_band(200_000, 0.01).unwrap();
        assert!((b - (200f64.ln() / 400_000.0).sqrt()).abs() < 1e-15);
        assert!((b - 0.003_640).abs() < 1e-6);
        assert!(dkw_band(10, 2.0).is_err());
        assert!((dkw_band(400, 0.05).unwrap() / dkw_band(1600, 0.05).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ks_within_dkw_for_normal_draws() {
        let n = 100_000;
        let band = dkw_band(n, 0.001).unwrap();
        let mut inside = 0;
        for seed in 0..100u64 {
            let mut rng = crate::rng::stream(seed, crate::rng::Domain::Oracle, 0);
            let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            if ks_distance(&batch(&v)).unwrap() <= band {
                inside += 1;
            }
        }
        assert!(inside >= 99, "{inside}/100 inside the band");
    }

    #[test]
    fn fit_rate_examples() {
        let pts: Vec<(f64, f64)> = (4..=10).map(|e| (2f64.powi(e), 2f64.powi(e).powf(-0.5))).collect();
        let f = fit_rate(&pts).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.r_squared - 1.0).abs() < 1e-12);
        let pts: Vec<(f64, f64)> = (1..=6)
            .map(|e| (10f64.powi(e), 3.0 * 10f64.powi(e).powf(-0.2)))
            .collect();
        assert!((fit_rate(&pts).unwrap().slope + 0.2).abs() < 1e-12);
        assert!(fit_rate(&pts[..2]).is_err());

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let noisy: Vec<(f64, f64)> = (4..=16)
            .map(|e| {
                let n = 2f64.powi(e);
                let eps: f64 = StandardNormal.sample(&mut rng);
                (n, n.powf(-0.5) * (0.05 * eps).exp())
            })
            .collect();
        assert!((fit_rate(&noisy).unwrap().slope + 0.5).abs() < 0.05);
    }

    #[test]
    fn law_distance_matches_sample_distance_for_uniform_atoms() {
        let v = [-1.2, -0.3, 0.4, 2.0];
        let atoms: Vec<(f64, f64)> = v.iter().map(|&x| (x, 0.25)).collect();
        let a = law_ks_distance(&atoms).unwrap();
        let b = ks_distance(&batch(&v)).unwrap();
        assert!((a - b).abs() < 1e-15);
        for k in 0..4 {
            let (a, za) = law_weighted_ks(&atoms, k).unwrap();
            let (b, zb) = weighted_ks(&batch(&v), k).unwrap();
            assert!((a - b).abs() < 1e-14 && za == zb, "k = {k}");
        }
    }

    #[test]
    fn batch_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.f64");
        let b = SampleBatch::new(vec![3.0, -1.5, 0.25], 77, "fbm").unwrap();
        b.write(&p).unwrap();
        let raw = std::fs::read(&p).unwrap();
        assert_eq!(raw.len(), 8 + 24);
        assert_eq!(u64::from_le_bytes(raw[..8].try_into().unwrap()), 3);
        assert_eq!(SampleBatch::read(&p).unwrap(), b);
    }

    proptest! {
        #[test]
        fn weighted_monotone_in_k(v in prop::collection::vec(-5.0f64..5.0, 1..60)) {
            let b = batch(&v);
            let ks = ks_distance(&b).unwrap();
            prop_assert_eq!(weighted_ks(&b, 0).unwrap().0, ks);
            prop_assert!(ks <= 1.0);
            let mut prev = ks;
            for k in 1..5 {
                let w = weighted_ks(&b, k).unwrap().0;
                prop_assert!(w >= prev - 1e-15);
                prev = w;
            }
        }

        #[test]
        fn tail_prob_nonincreasing(v in prop::collection::vec(-5.0f64..5.0, 1..60), a in -6.0f64..6.0, d in 0.0f64..3.0) {
            let b = batch(&v);
            prop_assert!(tail_prob(&b, a + d, false) <= tail_prob(&b, a, false));
            prop_assert!(tail_prob(&b, a.abs() + d, true) <= tail_prob(&b, a.abs(), true));
        }
    }
}
