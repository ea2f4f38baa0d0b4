//! Quadratic variation of fractional Brownian motion as a second-chaos
//! functional.
//!
//! With unit-spaced fBm increments `x` (covariance the Toeplitz matrix Σ with
//! entries `ρ_H(|k-l|)`), the statistic is `F_n = σ_n⁻¹ Σ_k (x_k² - 1)`. Its
//! cumulants are `κ_m = 2^{m-1}(m-1)! tr(Σ^m) / σ_n^m`, so every chaos
//! diagnostic reduces to `tr Σ²` and `tr Σ⁴`, computed here from the first
//! row of Σ without forming matrix powers.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{domain, Error, Result};
use crate::rng::{par_blocks, Domain};

/// Largest `n` sampled by Cholesky factorization; circulant embedding above.
pub const CHOLESKY_MAX_N: usize = 4096;

/// Eigenvalues of the circulant embedding in `[-CLIP_TOL, 0)` are set to zero.
pub const CLIP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FbmSpec {
    pub hurst: f64,
    pub n: usize,
}

impl FbmSpec {
    pub fn new(hurst: f64, n: usize) -> Result<Self> {
        check_hurst(hurst)?;
        if n == 0 {
            return domain("fbm needs n >= 1 increments");
        }
        Ok(Self { hurst, n })
    }

    /// First row `ρ_H(0), …, ρ_H(n-1)` of the increment covariance.
    pub fn covariance_row(&self) -> Vec<f64> {
        (0..self.n).map(|j| rho(self.hurst, j)).collect()
    }
}

fn check_hurst(hurst: f64) -> Result<()> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return domain(format!("hurst index must lie in (0, 1), got {hurst}"));
    }
    Ok(())
}

fn rho(h: f64, j: usize) -> f64 {
    if j == 0 {
        return 1.0;
    }
    let e = 2.0 * h;
    let j = j as f64;
    0.5 * ((j + 1.0).powf(e) + (j - 1.0).powf(e) - 2.0 * j.powf(e))
}

/// Covariance of unit fBm increments at lag `j`.
pub fn increment_cov(hurst: f64, j: usize) -> Result<f64> {
    check_hurst(hurst)?;
    Ok(rho(hurst, j))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Cholesky,
    Circulant,
}

enum Factor {
    // Row-major packed lower triangle.
    Cholesky { rows: Vec<f64> },
    Circulant { sqrt_eig: Vec<f64>, fft: Arc<dyn Fft<f64>> },
}

/// Reusable sampler of fBm increment vectors for one spec.
pub struct FbmSampler {
    spec: FbmSpec,
    factor: Factor,
}

impl FbmSampler {
    /// Cholesky up to [`CHOLESKY_MAX_N`], circulant embedding beyond.
    pub fn new(spec: FbmSpec) -> Result<Self> {
        if spec.n <= CHOLESKY_MAX_N {
            Self::with_backend(spec, Backend::Cholesky)
        } else {
            Self::with_backend(spec, Backend::Circulant)
        }
    }

    /// Forces a backend; circulant falls back to Cholesky when the embedding
    /// has an eigenvalue below `-CLIP_TOL`.
    pub fn with_backend(spec: FbmSpec, backend: Backend) -> Result<Self> {
        let factor = match backend {
            Backend::Cholesky => cholesky_factor(&spec)?,
            Backend::Circulant => match circulant_factor(&spec) {
                Some(f) => f,
                None => cholesky_factor(&spec)?,
            },
        };
        Ok(Self { spec, factor })
    }

    pub fn spec(&self) -> FbmSpec {
        self.spec
    }

    pub fn backend(&self) -> Backend {
        match self.factor {
            Factor::Cholesky { .. } => Backend::Cholesky,
            Factor::Circulant { .. } => Backend::Circulant,
        }
    }

    /// One increment vector.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.n];
        match &self.factor {
            Factor::Cholesky { rows } => {
                let g: Vec<f64> = (0..self.spec.n).map(|_| rng.sample(StandardNormal)).collect();
                cholesky_apply(rows, &g, &mut out);
            }
            Factor::Circulant { .. } => {
                let (a, _) = self.circulant_pair(rng);
                out.copy_from_slice(&a);
            }
        }
        out
    }

    fn circulant_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let Factor::Circulant { sqrt_eig, fft } = &self.factor else {
            unreachable!()
        };
        let mut buf: Vec<Complex<f64>> = sqrt_eig
            .iter()
            .map(|&s| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex::new(s * re, s * im)
            })
            .collect();
        fft.process(&mut buf);
        let n = self.spec.n;
        (
            buf[..n].iter().map(|c| c.re).collect(),
            buf[..n].iter().map(|c| c.im).collect(),
        )
    }

    /// `count` draws of the quadratic-variation statistic with normalizer `sigma_n`.
    pub fn statistics<R: Rng + ?Sized>(&self, rng: &mut R, count: usize, sigma_n: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        match &self.factor {
            Factor::Cholesky { rows } => {
                let n = self.spec.n;
                let mut g = vec![0.0; n];
                let mut x = vec![0.0; n];
                for _ in 0..count {
                    for v in g.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    cholesky_apply(rows, &g, &mut x);
                    out.push(quad_var_unchecked(&x, sigma_n));
                }
            }
            Factor::Circulant { .. } => {
                // Real and imaginary parts are independent draws.
                while out.len() < count {
                    let (a, b) = self.circulant_pair(rng);
                    out.push(quad_var_unchecked(&a, sigma_n));
                    if out.len() < count {
                        out.push(quad_var_unchecked(&b, sigma_n));
                    }
                }
            }
        }
        out
    }
}

fn cholesky_factor(spec: &FbmSpec) -> Result<Factor> {
    let n = spec.n;
    let row = spec.covariance_row();
    let cov = DMatrix::from_fn(n, n, |i, j| row[i.abs_diff(j)]);
    let Some(chol) = cov.clone().cholesky() else {
        let min_eigenvalue = cov.symmetric_eigenvalues().min();
        return Err(Error::Factorization { min_eigenvalue });
    };
    let l = chol.l();
    let mut rows = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            rows.push(l[(i, j)]);
        }
    }
    Ok(Factor::Cholesky { rows })
}

fn circulant_factor(spec: &FbmSpec) -> Option<Factor> {
    let n = spec.n;
    let row = spec.covariance_row();
    let m = (2 * (n - 1)).max(1);
    let mut c: Vec<Complex<f64>> = (0..m)
        .map(|k| Complex::new(row[if k < n { k } else { m - k }], 0.0))
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(m);
    fft.process(&mut c);
    let mut sqrt_eig = Vec::with_capacity(m);
    for z in &c {
        let lambda = if z.re < 0.0 {
            if z.re < -CLIP_TOL {
                return None;
            }
            0.0
        } else {
            z.re
        };
        sqrt_eig.push((lambda / m as f64).sqrt());
    }
    Some(Factor::Circulant { sqrt_eig, fft })
}

fn cholesky_apply(rows: &[f64], g: &[f64], out: &mut [f64]) {
    let mut start = 0;
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&rows[start..start + i + 1], &g[..i + 1]);
        start += i + 1;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Increment vector of unit-spaced fBm for `seed` (replica stream 0).
pub fn sample_increments(spec: FbmSpec, seed: u64) -> Result<Vec<f64>> {
    let sampler = FbmSampler::new(spec)?;
    let mut rng = crate::rng::stream(seed, Domain::Sample, 0);
    Ok(sampler.sample(&mut rng))
}

fn quad_var_unchecked(x: &[f64], sigma_n: f64) -> f64 {
    x.iter().map(|v| v * v - 1.0).sum::<f64>() / sigma_n
}

/// `σ_n⁻¹ Σ_k (x_k² - 1)`.
pub fn quad_var_statistic(x: &[f64], sigma_n: f64) -> Result<f64> {
    if !(sigma_n > 0.0) {
        return domain(format!("sigma_n must be positive, got {sigma_n}"));
    }
    Ok(quad_var_unchecked(x, sigma_n))
}

/// `tr Σ²` from the first row of a symmetric Toeplitz matrix.
pub fn toeplitz_tr2(row: &[f64]) -> f64 {
    let n = row.len();
    let off: f64 = (1..n).map(|j| (n - j) as f64 * row[j] * row[j]).sum();
    n as f64 * row[0] * row[0] + 2.0 * off
}

/// `tr Σ⁴ = ‖Σ²‖_F²` in O(n²) time and O(n) memory.
///
/// Entries of `S = Σ²` are walked along diagonals using
/// `S[i+1][j+1] = S[i][j] + ρ(i+1)ρ(j+1) - ρ(n-1-i)ρ(n-1-j)`.
pub fn toeplitz_tr4(row: &[f64]) -> f64 {
    let n = row.len();
    let r = |d: isize| row[d.unsigned_abs()];
    let mut total = 0.0;
    for d in 0..n {
        // S[0][d] = Σ_k ρ(k) ρ(k - d)
        let mut s: f64 = (0..n as isize).map(|k| r(k) * r(k - d as isize)).sum();
        let mut diag = s * s;
        for i in 0..n - d - 1 {
            let j = i + d;
            s += row[i + 1] * row[j + 1] - row[n - 1 - i] * row[n - 1 - j];
            diag += s * s;
        }
        total += if d == 0 { diag } else { 2.0 * diag };
    }
    total
}

/// Exact second-chaos diagnostics of the quadratic-variation statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaosDiagnostics {
    pub hurst: f64,
    pub n: usize,
    pub sigma_n: f64,
    pub tr2: f64,
    pub tr4: f64,
    /// `E F⁴ - 3`.
    pub kappa4_excess: f64,
    /// `sqrt((q-1)/(3q) (E F⁴ - 3))` with `q = 2`.
    pub fm_bound: f64,
    /// `‖f_n ⊗₁ f_n‖`.
    pub contraction_norm: f64,
    pub c_n: f64,
    /// Berry–Esseen rate without `c_H`; `None` outside `0 < H <= 3/4` or for `n < 2`.
    pub rate_an: Option<f64>,
}

pub fn diagnostics(spec: FbmSpec) -> ChaosDiagnostics {
    let row = spec.covariance_row();
    let tr2 = toeplitz_tr2(&row);
    let tr4 = toeplitz_tr4(&row);
    let var = 2.0 * tr2;
    let kappa4_excess = 48.0 * tr4 / (var * var);
    let contraction_norm = tr4.sqrt() / var;
    ChaosDiagnostics {
        hurst: spec.hurst,
        n: spec.n,
        sigma_n: var.sqrt(),
        tr2,
        tr4,
        kappa4_excess,
        fm_bound: (kappa4_excess / 6.0).sqrt(),
        contraction_norm,
        c_n: 1.0 / (8.0 * contraction_norm.sqrt()),
        rate_an: berry_rate(spec.hurst, spec.n).ok(),
    }
}

/// `n_samples` draws of `F_n`, generated in `blocks` independent streams.
pub fn simulate_statistic(spec: FbmSpec, n_samples: usize, seed: u64, blocks: usize) -> Result<Vec<f64>> {
    let sampler = FbmSampler::new(spec)?;
    let sigma_n = diagnostics(spec).sigma_n;
    Ok(par_blocks(seed, Domain::Sample, n_samples, blocks, |_, len, rng| {
        sampler.statistics(rng, len, sigma_n)
    }))
}

fn is(h: f64, v: f64) -> bool {
    (h - v).abs() < 1e-12
}

/// Kolmogorov rate of `F_n` up to the constant `c_H`.
pub fn berry_rate(hurst: f64, n: usize) -> Result<f64> {
    check_hurst(hurst)?;
    if hurst > 0.75 && !is(hurst, 0.75) {
        return domain(format!("no CLT regime: hurst {hurst} > 3/4"));
    }
    if n < 2 {
        return domain("berry_rate needs n >= 2");
    }
    let nf = n as f64;
    Ok(if is(hurst, 0.625) {
        nf.ln().powf(1.5) / nf.sqrt()
    } else if is(hurst, 0.75) {
        1.0 / nf.ln()
    } else if hurst < 0.625 {
        1.0 / nf.sqrt()
    } else {
        nf.powf(4.0 * hurst - 3.0)
    })
}

/// Log-log exponent of [`berry_rate`] away from the logarithmic boundary cases.
pub fn rate_exponent(hurst: f64) -> Result<f64> {
    check_hurst(hurst)?;
    if hurst < 0.625 && !is(hurst, 0.625) {
        Ok(-0.5)
    } else if hurst > 0.625 && hurst < 0.75 && !is(hurst, 0.75) {
        Ok(4.0 * hurst - 3.0)
    } else {
        domain(format!("rate at hurst {hurst} is not a pure power"))
    }
}

/// Plug-in Hurst estimate `1/2 - ln(S_n) / (2 ln n)`.
pub fn hurst_estimator(s_n: f64, n: usize) -> Result<f64> {
    if !(s_n > 0.0) {
        return domain(format!("s_n must be positive, got {s_n}"));
    }
    if n < 2 {
        return domain("hurst_estimator needs n >= 2");
    }
    Ok(0.5 - s_n.ln() / (2.0 * (n as f64).ln()))
}

/// Concentration bound `2 exp(-¼ min{z²/2^{q/2}, (c z)^{2/q}})` for `P(|I_q(f)| >= z)`.
pub fn gauss_tail_bound(z: f64, q: u32, c: f64) -> Result<f64> {
    if !(z > 0.0) || q == 0 || !(c > 0.0) {
        return domain(format!(
            "gauss_tail_bound needs z > 0, q >= 1, c > 0 (got {z}, {q}, {c})"
        ));
    }
    let q = q as f64;
    let a = z * z / 2f64.powf(q / 2.0);
    let b = (c * z).powf(2.0 / q);
    Ok(2.0 * (-0.25 * a.min(b)).exp())
}

/// Non-uniform envelope for `|P(F_n <= z) - Φ(z)|` at rate `a_n`.
pub fn fbm_nonuniform_bound(z: f64, a_n: f64, c: f64) -> Result<f64> {
    if !(z > 0.0) || !(a_n > 0.0) || !(c > 0.0) {
        return domain(format!(
            "fbm_nonuniform_bound needs z, a_n, c > 0 (got {z}, {a_n}, {c})"
        ));
    }
    let inner = (z * z / 8.0).min(2f64.powf(-13.0 / 4.0) / a_n.sqrt() * z);
    Ok((std::f64::consts::SQRT_2 * (-inner / 8.0).exp() + c * (-z * z / 4.0).exp()) * a_n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_traces(row: &[f64]) -> (f64, f64) {
        let n = row.len();
        let s = DMatrix::from_fn(n, n, |i, j| row[i.abs_diff(j)]);
        let s2 = &s * &s;
        let s4 = &s2 * &s2;
        (s2.trace(), s4.trace())
    }

    #[test]
    fn covariance_examples() {
        assert_eq!(increment_cov(0.5, 0).unwrap(), 1.0);
        for j in 1..50 {
            assert_eq!(increment_cov(0.5, j).unwrap(), 0.0);
        }
        for &h in &[0.1, 0.3, 0.7, 0.9] {
            let want = 2f64.powf(2.0 * h - 1.0) - 1.0;
            assert!((increment_cov(h, 1).unwrap() - want).abs() < 1e-15);
            for j in 0..100 {
                assert!(increment_cov(h, j).unwrap().abs() <= 1.0);
            }
        }
        assert!((increment_cov(0.75, 1).unwrap() - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!(increment_cov(1.0, 1).is_err());
        assert!(increment_cov(0.0, 1).is_err());
    }

    #[test]
    fn traces_match_dense_oracle() {
        for &h in &[0.2, 0.5, 0.6, 0.75, 0.9] {
            for &n in &[1usize, 2, 3, 7, 32, 100] {
                let row = FbmSpec::new(h, n).unwrap().covariance_row();
                let (t2, t4) = dense_traces(&row);
                assert!((toeplitz_tr2(&row) - t2).abs() <= 1e-10 * t2, "h={h} n={n}");
                assert!((toeplitz_tr4(&row) - t4).abs() <= 1e-10 * t4, "h={h} n={n}");
            }
        }
    }

    #[test]
    fn diagnostics_iid_closed_forms() {
        let d = diagnostics(FbmSpec::new(0.5, 100).unwrap());
        assert!((d.sigma_n - 200f64.sqrt()).abs() < 1e-12);
        assert!((d.kappa4_excess - 0.12).abs() < 1e-14);
        assert!((d.fm_bound - 0.02f64.sqrt()).abs() < 1e-14);
        assert!((d.contraction_norm - 0.05).abs() < 1e-15);
        assert!((d.c_n - 0.559_016_994_374_947_4).abs() < 1e-12);
        for &n in &[4usize, 64, 1000] {
            let d = diagnostics(FbmSpec::new(0.5, n).unwrap());
            let nf = n as f64;
            assert!((d.sigma_n * d.sigma_n - 2.0 * nf).abs() < 1e-9);
            assert!((d.kappa4_excess - 12.0 / nf).abs() < 1e-12);
            assert!((d.contraction_norm - 0.5 / nf.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn diagnostics_invariants() {
        for &h in &[0.1, 0.3, 0.7, 0.75] {
            let d = diagnostics(FbmSpec::new(h, 256).unwrap());
            assert!((d.sigma_n.powi(2) - 2.0 * d.tr2).abs() < 1e-9 * d.tr2);
            assert!(d.kappa4_excess >= 0.0);
            assert!((d.contraction_norm - d.tr4.sqrt() / (2.0 * d.tr2)).abs() < 1e-15);
            assert!((d.c_n - 1.0 / (8.0 * d.contraction_norm.sqrt())).abs() < 1e-15);
            assert!((d.kappa4_excess - 48.0 * d.contraction_norm.powi(2)).abs() < 1e-12);
        }
        assert!(diagnostics(FbmSpec::new(0.9, 64).unwrap()).rate_an.is_none());
    }

    #[test]
    fn quad_var_examples() {
        assert_eq!(quad_var_statistic(&[0.0; 4], 2.0).unwrap(), -2.0);
        assert_eq!(quad_var_statistic(&[1.0; 5], 3.0).unwrap(), 0.0);
        let v = quad_var_statistic(&[2.0, 0.0], 2f64.sqrt()).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-15);
        assert!(quad_var_statistic(&[1.0], 0.0).is_err());
    }

    #[test]
    fn rate_table() {
        assert!((berry_rate(0.3, 10_000).unwrap() - 0.01).abs() < 1e-15);
        assert!((berry_rate(0.7, 10_000).unwrap() - 10f64.powf(-0.8)).abs() < 1e-12);
        let n = 10f64.exp().round() as usize;
        assert!((berry_rate(0.75, n).unwrap() - 1.0 / (n as f64).ln()).abs() < 1e-15);
        assert!((1.0 / (n as f64).ln() - 0.1).abs() < 1e-5);
        let n = 1000usize;
        let want = (n as f64).ln().powf(1.5) / (n as f64).sqrt();
        assert!((berry_rate(0.625, n).unwrap() - want).abs() < 1e-15);
        assert!(berry_rate(0.8, 100).is_err());
        assert!(berry_rate(0.5, 1).is_err());
        assert_eq!(rate_exponent(0.5).unwrap(), -0.5);
        assert!((rate_exponent(0.7).unwrap() + 0.2).abs() < 1e-12);
    }

    #[test]
    fn hurst_estimator_examples() {
        for &h in &[0.2, 0.5, 0.7] {
            let n = 4096usize;
            let s = (n as f64).powf(1.0 - 2.0 * h);
            assert!((hurst_estimator(s, n).unwrap() - h).abs() < 1e-12);
        }
        assert_eq!(hurst_estimator(1.0, 50).unwrap(), 0.5);
        assert!((hurst_estimator(4.0, 16).unwrap() - 0.25).abs() < 1e-15);
        assert!(hurst_estimator(0.0, 16).is_err());
    }

    #[test]
    fn tail_and_envelope_examples() {
        assert!((gauss_tail_bound(1e-9, 2, 1.0).unwrap() - 2.0).abs() < 1e-8);
        let v = gauss_tail_bound(2.0, 2, 1.0).unwrap();
        assert!((v - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
        let mut prev = 2.0;
        for i in 1..400 {
            let b = gauss_tail_bound(i as f64 * 0.05, 2, 0.7).unwrap();
            assert!(b <= prev && b > 0.0);
            prev = b;
        }
        let e = fbm_nonuniform_bound(1e-12, 0.01, 1.0).unwrap();
        assert!((e - (2f64.sqrt() + 1.0) * 0.01).abs() < 1e-12);
        let e = fbm_nonuniform_bound(4.0, 0.01, 1.0).unwrap();
        assert!((e - 0.011_196_6).abs() < 1e-6, "{e}");
        assert!(fbm_nonuniform_bound(2.0, 0.02, 1.0).unwrap() > fbm_nonuniform_bound(2.0, 0.01, 1.0).unwrap());
    }

    #[test]
    fn circulant_eigenvalues_nonnegative() {
        for &h in &[0.1, 0.5, 0.7, 0.95] {
            let s = FbmSampler::with_backend(FbmSpec::new(h, 1000).unwrap(), Backend::Circulant).unwrap();
            assert_eq!(s.backend(), Backend::Circulant);
        }
    }

    #[test]
    fn backend_selection() {
        assert_eq!(
            FbmSampler::new(FbmSpec::new(0.3, 16).unwrap()).unwrap().backend(),
            Backend::Cholesky
        );
        assert_eq!(
            FbmSampler::new(FbmSpec::new(0.3, 5000).unwrap()).unwrap().backend(),
            Backend::Circulant
        );
    }
}
