//! Functionals of finitely many independent Rademacher variables: discrete
//! gradients, the second-order Poincaré terms `B₁ … B₅`, the weighted 2-runs
//! statistic and Erdős–Rényi subgraph counts.
//!
//! Bit vectors hold `±1` as `i8`. In enumeration, state `s` sets coordinate
//! `k` to `+1` exactly when bit `k` of `s` is set.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::empirical::law_ks_distance;
use crate::error::{domain, Error, Result};
use crate::graph::{CopyCounter, HostGraph, PatternGraph};
use crate::rng::{par_blocks, stream, Domain};

/// Largest support handled by exact enumeration.
pub const MAX_ENUM_SUPPORT: usize = 24;

/// Success probabilities `p_k = P(X_k = +1)` of the active coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherSpec {
    probs: Vec<f64>,
}

impl RademacherSpec {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return domain("Rademacher spec needs at least one coordinate");
        }
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return domain(format!("probabilities must lie in (0, 1), got {p}"));
        }
        Ok(Self { probs })
    }

    /// `m` symmetric coordinates.
    pub fn symmetric(m: usize) -> Result<Self> {
        Self::new(vec![0.5; m])
    }

    pub fn constant(m: usize, p: f64) -> Result<Self> {
        Self::new(vec![p; m])
    }

    pub fn support(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `p_k q_k`.
    pub fn pq(&self, k: usize) -> f64 {
        self.probs[k] * (1.0 - self.probs[k])
    }

    /// Standardized coordinate `Y_k = (X_k - p_k + q_k) / (2√(p_k q_k))` at `x`.
    pub fn standardized(&self, k: usize, x: i8) -> f64 {
        let p = self.probs[k];
        (f64::from(x) - p + (1.0 - p)) / (2.0 * self.pq(k).sqrt())
    }

    /// Independent draw of all coordinates.
    pub fn sample_bits<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [i8]) {
        for (b, &p) in out.iter_mut().zip(&self.probs) {
            *b = if rng.random::<f64>() < p { 1 } else { -1 };
        }
    }

    fn check_enum(&self) -> Result<()> {
        if self.support() > MAX_ENUM_SUPPORT {
            return Err(Error::Resource(format!(
                "enumeration over {} coordinates exceeds the limit {MAX_ENUM_SUPPORT}",
                self.support()
            )));
        }
        Ok(())
    }

    /// Probabilities of all `2^m` states.
    fn state_probs(&self) -> Vec<f64> {
        let mut probs = vec![1.0];
        for &p in &self.probs {
            let lo: Vec<f64> = probs.iter().map(|w| w * (1.0 - p)).collect();
            let hi: Vec<f64> = probs.iter().map(|w| w * p).collect();
            probs = lo;
            probs.extend(hi);
        }
        // Index `s` now has coordinate k = +1 iff bit k is set.
        probs
    }
}

/// A real function of the first `support()` Rademacher coordinates.
pub trait RademacherFunctional: Sync {
    fn support(&self) -> usize;
    fn eval(&self, bits: &[i8]) -> f64;
}

/// Adapter turning a closure into a functional.
pub struct FnFunctional<F> {
    support: usize,
    f: F,
}

impl<F: Fn(&[i8]) -> f64 + Sync> FnFunctional<F> {
    pub fn new(support: usize, f: F) -> Self {
        Self { support, f }
    }
}

impl<F: Fn(&[i8]) -> f64 + Sync> RademacherFunctional for FnFunctional<F> {
    fn support(&self) -> usize {
        self.support
    }

    fn eval(&self, bits: &[i8]) -> f64 {
        (self.f)(bits)
    }
}

fn check_shape<F: RademacherFunctional + ?Sized>(spec: &RademacherSpec, f: &F, bits: &[i8]) -> Result<()> {
    if f.support() != spec.support() {
        return domain(format!(
            "functional support {} differs from spec support {}",
            f.support(),
            spec.support()
        ));
    }
    if bits.len() != spec.support() {
        return domain(format!("expected {} bits, got {}", spec.support(), bits.len()));
    }
    if bits.iter().any(|b| *b != 1 && *b != -1) {
        return domain("bits must be +1 or -1");
    }
    Ok(())
}

/// `D_k F = √(p_k q_k)(F_k⁺ - F_k⁻)`.
pub fn discrete_gradient<F: RademacherFunctional + ?Sized>(
    spec: &RademacherSpec,
    f: &F,
    bits: &[i8],
    k: usize,
) -> Result<f64> {
    check_shape(spec, f, bits)?;
    if k >= spec.support() {
        return domain(format!("coordinate {k} outside support {}", spec.support()));
    }
    let mut b = bits.to_vec();
    b[k] = 1;
    let plus = f.eval(&b);
    b[k] = -1;
    let minus = f.eval(&b);
    Ok(spec.pq(k).sqrt() * (plus - minus))
}

/// `D_l D_k F` for `k ≠ l`; evaluated in a canonical index order so that it
/// is exactly symmetric.
pub fn second_gradient<F: RademacherFunctional + ?Sized>(
    spec: &RademacherSpec,
    f: &F,
    bits: &[i8],
    k: usize,
    l: usize,
) -> Result<f64> {
    check_shape(spec, f, bits)?;
    if k >= spec.support() || l >= spec.support() {
        return domain(format!("coordinates ({k}, {l}) outside support {}", spec.support()));
    }
    if k == l {
        return domain(format!("second gradient needs distinct coordinates, got k = l = {k}"));
    }
    let (a, c) = (k.min(l), k.max(l));
    let mut b = bits.to_vec();
    let mut at = |xa: i8, xc: i8| {
        b[a] = xa;
        b[c] = xc;
        f.eval(&b)
    };
    let (pp, pm, mp, mm) = (at(1, 1), at(1, -1), at(-1, 1), at(-1, -1));
    Ok(spec.pq(a).sqrt() * spec.pq(c).sqrt() * ((pp - pm) - (mp - mm)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BMode {
    Enumerate,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RMeta {
    pub mode: BMode,
    pub replicas: usize,
    pub groups: usize,
    pub seed: u64,
}

/// `B₁ … B₅` with standard errors (zero when exact).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareTermsR {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub b5: f64,
    pub stderr1: f64,
    pub stderr2: f64,
    pub stderr3: f64,
    pub stderr4: f64,
    pub stderr5: f64,
    pub exact: bool,
    pub mc_meta: RMeta,
}

impl PoincareTermsR {
    pub fn terms(&self) -> [f64; 5] {
        [self.b1, self.b2, self.b3, self.b4, self.b5]
    }

    pub fn stderrs(&self) -> [f64; 5] {
        [self.stderr1, self.stderr2, self.stderr3, self.stderr4, self.stderr5]
    }

    /// Delta-method standard error of [`uniform_bound_rademacher`].
    pub fn bound_stderr(&self) -> f64 {
        let c = bound_coefficients();
        self.terms()
            .iter()
            .zip(self.stderrs())
            .zip(c)
            .map(|((b, s), c)| {
                if *b > 0.0 {
                    (c / (2.0 * b.sqrt()) * s).powi(2)
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            .sqrt()
    }
}

fn bound_coefficients() -> [f64; 5] {
    [
        15f64.sqrt() / 2.0,
        3f64.sqrt() / 2.0,
        4.0,
        4.0 * 6f64.sqrt(),
        4.0 * 3f64.sqrt(),
    ]
}

/// `(√15/2)√B₁ + (√3/2)√B₂ + 2(2√B₃ + 2√6√B₄ + 2√3√B₅)`.
pub fn uniform_bound_rademacher(terms: &PoincareTermsR) -> Result<f64> {
    if terms.terms().iter().any(|b| !(*b >= 0.0)) {
        return domain("Poincaré terms must be nonnegative");
    }
    Ok(terms
        .terms()
        .iter()
        .zip(bound_coefficients())
        .map(|(b, c)| c * b.sqrt())
        .sum())
}

/// Weighted sums of gradient products over a set of configurations.
#[derive(Clone)]
struct Moments {
    m: usize,
    weight: f64,
    // E (D_j)²(D_k)², m×m
    d2d2: Vec<f64>,
    // E (D_l D_j)²(D_l D_k)², m×m×m indexed [l][j][k]
    s2s2: Vec<f64>,
    // E (D_k)⁴
    d4: Vec<f64>,
    // E (D_l D_k)⁴, m×m
    s4: Vec<f64>,
}

impl Moments {
    fn new(m: usize) -> Self {
        Self {
            m,
            weight: 0.0,
            d2d2: vec![0.0; m * m],
            s2s2: vec![0.0; m * m * m],
            d4: vec![0.0; m],
            s4: vec![0.0; m * m],
        }
    }

    // `d[k] = D_k F`, `s[l*m+k] = D_l D_k F` (diagonal unused).
    fn add(&mut self, w: f64, d: &[f64], s: &[f64]) {
        let m = self.m;
        self.weight += w;
        let d2: Vec<f64> = d.iter().map(|v| v * v).collect();
        for j in 0..m {
            self.d4[j] += w * d2[j] * d2[j];
            for k in 0..m {
                self.d2d2[j * m + k] += w * d2[j] * d2[k];
            }
        }
        for l in 0..m {
            let row = &s[l * m..(l + 1) * m];
            for j in 0..m {
                if j == l {
                    continue;
                }
                let sj = row[j] * row[j];
                self.s4[l * m + j] += w * sj * sj;
                if sj == 0.0 {
                    continue;
                }
                let base = (l * m + j) * m;
                for k in 0..m {
                    if k != l {
                        self.s2s2[base + k] += w * sj * row[k] * row[k];
                    }
                }
            }
        }
    }

    fn merge(&mut self, o: &Moments) {
        self.weight += o.weight;
        for (a, b) in self.d2d2.iter_mut().zip(&o.d2d2) {
            *a += b;
        }
        for (a, b) in self.s2s2.iter_mut().zip(&o.s2s2) {
            *a += b;
        }
        for (a, b) in self.d4.iter_mut().zip(&o.d4) {
            *a += b;
        }
        for (a, b) in self.s4.iter_mut().zip(&o.s4) {
            *a += b;
        }
    }

    fn subtract(&self, o: &Moments) -> Moments {
        let mut r = self.clone();
        r.weight -= o.weight;
        for (a, b) in r.d2d2.iter_mut().zip(&o.d2d2) {
            *a -= b;
        }
        for (a, b) in r.s2s2.iter_mut().zip(&o.s2s2) {
            *a -= b;
        }
        for (a, b) in r.d4.iter_mut().zip(&o.d4) {
            *a -= b;
        }
        for (a, b) in r.s4.iter_mut().zip(&o.s4) {
            *a -= b;
        }
        r
    }

    /// Assembles `B₁ … B₅`; repeated coordinates `l ∈ {j, k}` are skipped.
    fn terms(&self, spec: &RademacherSpec) -> [f64; 5] {
        let m = self.m;
        let w = self.weight;
        let e = |v: f64| (v / w).max(0.0);
        let inv: Vec<f64> = (0..m).map(|k| 1.0 / spec.pq(k)).collect();
        let mut b = [0.0; 5];
        for l in 0..m {
            for j in 0..m {
                if j == l {
                    continue;
                }
                for k in 0..m {
                    if k == l {
                        continue;
                    }
                    let ss = e(self.s2s2[(l * m + j) * m + k]);
                    if ss == 0.0 {
                        continue;
                    }
                    b[0] += e(self.d2d2[j * m + k]).sqrt() * ss.sqrt();
                    b[1] += inv[l] * ss;
                }
            }
        }
        for k in 0..m {
            let d4 = e(self.d4[k]);
            b[2] += inv[k] * d4;
            for l in 0..m {
                if l == k {
                    continue;
                }
                let s4 = e(self.s4[l * m + k]);
                b[3] += inv[k] * d4.sqrt() * s4.sqrt();
                b[4] += inv[k] * inv[l] * s4;
            }
        }
        b
    }
}

// Gradients at one configuration from a callback evaluating F at modified bits.
fn gradients_at<F: RademacherFunctional + ?Sized>(
    spec: &RademacherSpec,
    f: &F,
    bits: &mut [i8],
    d: &mut [f64],
    s: &mut [f64],
) {
    let m = spec.support();
    let saved = bits.to_vec();
    for k in 0..m {
        bits[k] = 1;
        let plus = f.eval(bits);
        bits[k] = -1;
        let minus = f.eval(bits);
        bits[k] = saved[k];
        d[k] = spec.pq(k).sqrt() * (plus - minus);
    }
    for a in 0..m {
        for c in a + 1..m {
            let mut at = |xa: i8, xc: i8| {
                bits[a] = xa;
                bits[c] = xc;
                f.eval(bits)
            };
            let (pp, pm, mp, mm) = (at(1, 1), at(1, -1), at(-1, 1), at(-1, -1));
            bits[a] = saved[a];
            bits[c] = saved[c];
            let v = spec.pq(a).sqrt() * spec.pq(c).sqrt() * ((pp - pm) - (mp - mm));
            s[a * m + c] = v;
            s[c * m + a] = v;
        }
    }
}

/// Exact values of `F` at all `2^m` states.
fn value_table<F: RademacherFunctional + ?Sized>(spec: &RademacherSpec, f: &F) -> Result<Vec<f64>> {
    spec.check_enum()?;
    if f.support() != spec.support() {
        return domain(format!(
            "functional support {} differs from spec support {}",
            f.support(),
            spec.support()
        ));
    }
    let m = spec.support();
    let mut bits = vec![-1i8; m];
    Ok((0..1usize << m)
        .map(|s| {
            for (k, b) in bits.iter_mut().enumerate() {
                *b = if s >> k & 1 == 1 { 1 } else { -1 };
            }
            f.eval(&bits)
        })
        .collect())
}

/// Default number of jackknife groups in Monte Carlo mode.
pub const MC_GROUPS: usize = 50;

/// `B₁ … B₅` by full enumeration (`Enumerate`) or over `replicas` independent
/// draws (`MonteCarlo`, jackknife standard errors over [`MC_GROUPS`] groups).
pub fn estimate_b_terms<F: RademacherFunctional + ?Sized>(
    spec: &RademacherSpec,
    f: &F,
    mode: BMode,
    replicas: usize,
    seed: u64,
) -> Result<PoincareTermsR> {
    let m = spec.support();
    match mode {
        BMode::Enumerate => {
            let table = value_table(spec, f)?;
            let probs = spec.state_probs();
            let sq: Vec<f64> = (0..m).map(|k| spec.pq(k).sqrt()).collect();
            let mut acc = Moments::new(m);
            let mut d = vec![0.0; m];
            let mut s = vec![0.0; m * m];
            for (state, &w) in probs.iter().enumerate() {
                for k in 0..m {
                    let bit = 1 << k;
                    d[k] = sq[k] * (table[state | bit] - table[state & !bit]);
                }
                for a in 0..m {
                    for c in a + 1..m {
                        let (ba, bc) = (1 << a, 1 << c);
                        let base = state & !(ba | bc);
                        let v = sq[a]
                            * sq[c]
                            * ((table[base | ba | bc] - table[base | ba]) - (table[base | bc] - table[base]));
                        s[a * m + c] = v;
                        s[c * m + a] = v;
                    }
                }
                acc.add(w, &d, &s);
            }
            let b = acc.terms(spec);
            Ok(PoincareTermsR {
                b1: b[0],
                b2: b[1],
                b3: b[2],
                b4: b[3],
                b5: b[4],
                stderr1: 0.0,
                stderr2: 0.0,
                stderr3: 0.0,
                stderr4: 0.0,
                stderr5: 0.0,
                exact: true,
                mc_meta: RMeta {
                    mode,
                    replicas: 1 << m,
                    groups: 0,
                    seed,
                },
            })
        }
        BMode::MonteCarlo => {
            if f.support() != m {
                return domain(format!(
                    "functional support {} differs from spec support {m}",
                    f.support()
                ));
            }
            let groups = MC_GROUPS.min(replicas);
            if groups < 2 {
                return domain("Monte Carlo mode needs at least two replicas");
            }
            let parts = par_blocks(seed, Domain::Sample, replicas, groups, |_, len, rng| {
                let mut acc = Moments::new(m);
                let mut bits = vec![1i8; m];
                let mut d = vec![0.0; m];
                let mut s = vec![0.0; m * m];
                for _ in 0..len {
                    spec.sample_bits(rng, &mut bits);
                    gradients_at(spec, f, &mut bits, &mut d, &mut s);
                    acc.add(1.0, &d, &s);
                }
                vec![acc]
            });
            let mut total = Moments::new(m);
            for p in &parts {
                total.merge(p);
            }
            let b = total.terms(spec);
            let loo: Vec<[f64; 5]> = parts.iter().map(|p| total.subtract(p).terms(spec)).collect();
            let g = parts.len() as f64;
            let mut se = [0.0; 5];
            for (t, s) in se.iter_mut().enumerate() {
                let mean = loo.iter().map(|v| v[t]).sum::<f64>() / g;
                *s = ((g - 1.0) / g * loo.iter().map(|v| (v[t] - mean).powi(2)).sum::<f64>()).sqrt();
            }
            Ok(PoincareTermsR {
                b1: b[0],
                b2: b[1],
                b3: b[2],
                b4: b[3],
                b5: b[4],
                stderr1: se[0],
                stderr2: se[1],
                stderr3: se[2],
                stderr4: se[3],
                stderr5: se[4],
                exact: false,
                mc_meta: RMeta {
                    mode,
                    replicas,
                    groups: parts.len(),
                    seed,
                },
            })
        }
    }
}

/// Exact law of a functional: distinct values with their probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactLaw {
    atoms: Vec<(f64, f64)>,
}

impl ExactLaw {
    /// Sorted `(value, probability)` pairs.
    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn moment(&self, order: u32) -> f64 {
        self.atoms.iter().map(|(v, p)| p * v.powi(order as i32)).sum()
    }

    pub fn mean_var(&self) -> (f64, f64) {
        let mean = self.moment(1);
        (mean, self.atoms.iter().map(|(v, p)| p * (v - mean).powi(2)).sum())
    }

    /// Exact Kolmogorov distance to the standard normal.
    pub fn ks_distance(&self) -> Result<f64> {
        law_ks_distance(&self.atoms)
    }

    /// The law of `(X - mean) / std_dev`.
    pub fn standardize(&self) -> Result<ExactLaw> {
        let (mean, var) = self.mean_var();
        if !(var > 0.0) {
            return domain("cannot standardize a degenerate law");
        }
        let sd = var.sqrt();
        Ok(ExactLaw {
            atoms: self.atoms.iter().map(|(v, p)| ((v - mean) / sd, *p)).collect(),
        })
    }

    /// `value,probability` rows with a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "value,probability")?;
        for (v, p) in &self.atoms {
            writeln!(out, "{v:?},{p:?}")?;
        }
        Ok(())
    }
}

/// Exact law by enumerating all `2^m` states; equal values are merged.
pub fn enumerate_distribution<F: RademacherFunctional + ?Sized>(spec: &RademacherSpec, f: &F) -> Result<ExactLaw> {
    let table = value_table(spec, f)?;
    let probs = spec.state_probs();
    let mut pairs: Vec<(f64, f64)> = table.into_iter().zip(probs).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for (v, p) in pairs {
        match atoms.last_mut() {
            Some(last) if last.0 == v => last.1 += p,
            _ => atoms.push((v, p)),
        }
    }
    Ok(ExactLaw { atoms })
}

/// Standardized weighted 2-runs `(Σ a_i ξ_i ξ_{i+1} - mean) / std_dev`, `ξ = (X + 1)/2`,
/// over `m + 1` symmetric coordinates for `m` weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoRunsSpec {
    pub weights: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
}

impl TwoRunsSpec {
    pub fn new(weights: Vec<f64>, mean: f64, std_dev: f64) -> Result<Self> {
        if weights.iter().all(|a| *a == 0.0) {
            return domain("2-runs needs at least one nonzero weight");
        }
        if !(std_dev > 0.0) {
            return domain(format!("std_dev must be positive, got {std_dev}"));
        }
        Ok(Self { weights, mean, std_dev })
    }

    /// Standardized by the exact moments of [`two_runs_moments`].
    pub fn standardized(weights: Vec<f64>) -> Result<Self> {
        let (mean, var) = two_runs_moments(&weights)?;
        Self::new(weights, mean, var.sqrt())
    }

    /// `m` unit weights.
    pub fn uniform(m: usize) -> Result<Self> {
        Self::standardized(vec![1.0; m])
    }

    pub fn n_bits(&self) -> usize {
        self.weights.len() + 1
    }

    pub fn rademacher_spec(&self) -> RademacherSpec {
        RademacherSpec::symmetric(self.n_bits()).expect("nonempty")
    }

    /// `n_samples` draws of the statistic on the `Sample` stream.
    pub fn simulate(&self, n_samples: usize, seed: u64, blocks: usize) -> Vec<f64> {
        let nb = self.n_bits();
        par_blocks(seed, Domain::Sample, n_samples, blocks, |_, len, rng| {
            let mut words = vec![0u64; nb.div_ceil(64)];
            (0..len)
                .map(|_| {
                    for w in words.iter_mut() {
                        *w = rng.next_u64();
                    }
                    let xi = |i: usize| (words[i / 64] >> (i % 64)) & 1;
                    let g: f64 = self
                        .weights
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| xi(i) & xi(i + 1) == 1)
                        .map(|(_, a)| a)
                        .sum();
                    (g - self.mean) / self.std_dev
                })
                .collect()
        })
    }
}

fn two_runs_raw(weights: &[f64], bits: &[i8]) -> f64 {
    weights
        .iter()
        .enumerate()
        .filter(|&(i, _)| bits[i] == 1 && bits[i + 1] == 1)
        .map(|(_, a)| a)
        .sum()
}

impl RademacherFunctional for TwoRunsSpec {
    fn support(&self) -> usize {
        self.n_bits()
    }

    fn eval(&self, bits: &[i8]) -> f64 {
        (two_runs_raw(&self.weights, bits) - self.mean) / self.std_dev
    }
}

/// Checked evaluation of the standardized 2-runs statistic.
pub fn two_runs_eval(spec: &TwoRunsSpec, bits: &[i8]) -> Result<f64> {
    if bits.len() != spec.n_bits() {
        return domain(format!(
            "2-runs with {} weights needs {} bits, got {}",
            spec.weights.len(),
            spec.n_bits(),
            bits.len()
        ));
    }
    if bits.iter().any(|b| *b != 1 && *b != -1) {
        return domain("bits must be +1 or -1");
    }
    Ok(spec.eval(bits))
}

/// Mean `Σa/4` and variance `(3Σa_i² + 2Σa_i a_{i+1})/16` of the unstandardized 2-runs.
pub fn two_runs_moments(weights: &[f64]) -> Result<(f64, f64)> {
    if weights.is_empty() {
        return domain("2-runs needs at least one weight");
    }
    let sum: f64 = weights.iter().sum();
    let sq: f64 = weights.iter().map(|a| a * a).sum();
    let lag: f64 = weights.windows(2).map(|w| w[0] * w[1]).sum();
    Ok((sum / 4.0, (3.0 * sq + 2.0 * lag) / 16.0))
}

/// Mean and variance of the unstandardized 2-runs by enumerating all
/// `2^{m+1}` bit configurations; limited to `m <= 20`.
pub fn two_runs_moments_enumerated(weights: &[f64]) -> Result<(f64, f64)> {
    if weights.is_empty() {
        return domain("2-runs needs at least one weight");
    }
    if weights.len() > 20 {
        return Err(Error::Resource(format!(
            "enumerating 2-runs with m = {} > 20",
            weights.len()
        )));
    }
    let raw = FnFunctional::new(weights.len() + 1, |b: &[i8]| two_runs_raw(weights, b));
    let law = enumerate_distribution(&RademacherSpec::symmetric(weights.len() + 1)?, &raw)?;
    Ok(law.mean_var())
}

/// `‖a‖₄² / ‖a‖₂²`.
pub fn two_runs_norm_bound(weights: &[f64]) -> Result<f64> {
    let s2: f64 = weights.iter().map(|a| a * a).sum();
    if !(s2 > 0.0) {
        return domain("weights must not all be zero");
    }
    Ok(weights.iter().map(|a| a.powi(4)).sum::<f64>().sqrt() / s2)
}

/// Number of edge slots of a graph on `n` vertices.
pub fn n_slots(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Slot of edge `{i, j}` (`i < j`) in lexicographic order.
pub fn slot_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

fn host_from_slots(n: usize, edge_bits: &[i8]) -> HostGraph {
    let mut g = HostGraph::with_vertices(n);
    let mut s = 0;
    for i in 0..n {
        for j in i + 1..n {
            if edge_bits[s] == 1 {
                g.add_edge(i, j);
            }
            s += 1;
        }
    }
    g.finish();
    g
}

// Bits strictly above position i.
fn above(i: usize) -> u64 {
    if i >= 63 {
        0
    } else {
        !0u64 << (i + 1)
    }
}

// Triangle count of a graph on <= 64 vertices given as adjacency bitsets.
fn triangles_bitset(adj: &[u64]) -> u64 {
    let mut t = 0u64;
    for (i, &ai) in adj.iter().enumerate() {
        let mut nb = ai & above(i);
        while nb != 0 {
            let j = nb.trailing_zeros() as usize;
            nb &= nb - 1;
            t += u64::from((ai & adj[j] & above(j)).count_ones());
        }
    }
    t
}

enum Counter {
    Edge,
    Triangle,
    General(Box<CopyCounter>),
}

impl Counter {
    fn new(pattern: &PatternGraph) -> Result<Self> {
        if pattern.edges().is_empty() {
            return domain("pattern needs at least one edge");
        }
        let counter = CopyCounter::new(pattern)?;
        Ok(if pattern == &PatternGraph::edge() {
            Counter::Edge
        } else if pattern == &PatternGraph::triangle() {
            Counter::Triangle
        } else {
            Counter::General(Box::new(counter))
        })
    }

    fn count(&self, n: usize, edge_bits: &[i8]) -> u64 {
        match self {
            Counter::Edge => edge_bits.iter().filter(|b| **b == 1).count() as u64,
            Counter::Triangle if n <= 64 => {
                let mut adj = vec![0u64; n];
                let mut s = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        if edge_bits[s] == 1 {
                            adj[i] |= 1 << j;
                            adj[j] |= 1 << i;
                        }
                        s += 1;
                    }
                }
                triangles_bitset(&adj)
            }
            Counter::Triangle => CopyCounter::new(&PatternGraph::triangle())
                .expect("triangle is connected")
                .count(&host_from_slots(n, edge_bits), &[]),
            Counter::General(c) => c.count(&host_from_slots(n, edge_bits), &[]),
        }
    }
}

/// Copies of `pattern` in the graph whose edges are the `+1` slots.
pub fn er_subgraph_count(n: usize, edge_bits: &[i8], pattern: &PatternGraph) -> Result<u64> {
    if edge_bits.len() != n_slots(n) {
        return domain(format!(
            "{n} vertices need {} edge slots, got {}",
            n_slots(n),
            edge_bits.len()
        ));
    }
    Ok(Counter::new(pattern)?.count(n, edge_bits))
}

/// `Ψ = min n^{v_H} p^{e_H}` over edge subsets `H` of the pattern with `e_H >= 1`,
/// `v_H` counting endpoints of the chosen edges.
pub fn psi(pattern: &PatternGraph, n: usize, p: f64) -> Result<f64> {
    let edges = pattern.edges();
    if edges.is_empty() {
        return domain("pattern needs at least one edge");
    }
    if !(p > 0.0 && p < 1.0) || n == 0 {
        return domain(format!("need n >= 1 and p in (0, 1) (got {n}, {p})"));
    }
    let (nf, mut best) = (n as f64, f64::INFINITY);
    for mask in 1u32..1 << edges.len() {
        let mut verts = 0u32;
        let mut e = 0;
        for (i, &(a, b)) in edges.iter().enumerate() {
            if mask >> i & 1 == 1 {
                verts |= 1 << a | 1 << b;
                e += 1;
            }
        }
        best = best.min(nf.powi(verts.count_ones() as i32) * p.powi(e));
    }
    Ok(best)
}

/// `((1 - p) Ψ)^{-1/2}`.
pub fn er_bound_scale(n: usize, p: f64, pattern: &PatternGraph) -> Result<f64> {
    Ok(1.0 / ((1.0 - p) * psi(pattern, n, p)?).sqrt())
}

/// Exact mean and variance of the triangle count in `G(n, p)`.
pub fn er_triangle_moments(n: usize, p: f64) -> (f64, f64) {
    let nf = n as f64;
    let c3 = nf * (nf - 1.0) * (nf - 2.0) / 6.0;
    let mean = c3 * p.powi(3);
    let pairs = c3 * 3.0 * (nf - 3.0).max(0.0);
    (mean, c3 * (p.powi(3) - p.powi(6)) + pairs * (p.powi(5) - p.powi(6)))
}

/// Standardized subgraph count of `G(n, p)` as a functional of the edge slots.
pub struct ErSpec {
    pub n: usize,
    pub p: f64,
    pub mean: f64,
    pub std_dev: f64,
    pattern: PatternGraph,
    counter: Counter,
}

impl std::fmt::Debug for ErSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ErSpec")
            .field("n", &self.n)
            .field("p", &self.p)
            .field("pattern", &self.pattern)
            .field("mean", &self.mean)
            .field("std_dev", &self.std_dev)
            .finish()
    }
}

/// How an [`ErSpec`] was standardized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    Enumerated,
    ClosedForm,
    Pilot { replicas: usize, seed: u64 },
}

impl ErSpec {
    pub fn new(n: usize, p: f64, pattern: &PatternGraph, mean: f64, std_dev: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return domain(format!("p must lie in (0, 1), got {p}"));
        }
        if n < 2 {
            return domain("ER graph needs n >= 2");
        }
        if !(std_dev > 0.0) {
            return domain(format!("std_dev must be positive, got {std_dev}"));
        }
        Ok(Self {
            n,
            p,
            mean,
            std_dev,
            pattern: pattern.clone(),
            counter: Counter::new(pattern)?,
        })
    }

    /// Exact moments by enumeration when `n <= 6`, closed form for triangles,
    /// otherwise a pilot run of `pilot_replicas` draws on the `Pilot` stream.
    pub fn standardized(
        n: usize,
        p: f64,
        pattern: &PatternGraph,
        pilot_replicas: usize,
        seed: u64,
    ) -> Result<(Self, Standardization)> {
        let raw = Self::new(n, p, pattern, 0.0, 1.0)?;
        let (mean, var, how) = if n <= 6 {
            let (m, v) = enumerate_distribution(&raw.rademacher_spec(), &raw)?.mean_var();
            (m, v, Standardization::Enumerated)
        } else if pattern == &PatternGraph::triangle() {
            let (m, v) = er_triangle_moments(n, p);
            (m, v, Standardization::ClosedForm)
        } else {
            if pilot_replicas < 2 {
                return domain("pilot needs at least two replicas");
            }
            let draws = raw.simulate_on(Domain::Pilot, pilot_replicas, seed, 16);
            let k = draws.len() as f64;
            let m = draws.iter().sum::<f64>() / k;
            let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0);
            (
                m,
                v,
                Standardization::Pilot {
                    replicas: pilot_replicas,
                    seed,
                },
            )
        };
        if !(var > 0.0) {
            return domain("subgraph count is degenerate at these parameters");
        }
        Ok((Self::new(n, p, pattern, mean, var.sqrt())?, how))
    }

    pub fn pattern(&self) -> &PatternGraph {
        &self.pattern
    }

    pub fn rademacher_spec(&self) -> RademacherSpec {
        RademacherSpec::constant(n_slots(self.n), self.p).expect("p checked")
    }

    fn simulate_on(&self, tag: Domain, n_samples: usize, seed: u64, blocks: usize) -> Vec<f64> {
        let slots = n_slots(self.n);
        par_blocks(seed, tag, n_samples, blocks, |_, len, rng| {
            let mut bits = vec![-1i8; slots];
            (0..len)
                .map(|_| {
                    for b in bits.iter_mut() {
                        *b = if rng.random::<f64>() < self.p { 1 } else { -1 };
                    }
                    self.eval(&bits)
                })
                .collect()
        })
    }

    /// `n_samples` standardized counts on the `Sample` stream.
    pub fn simulate(&self, n_samples: usize, seed: u64, blocks: usize) -> Vec<f64> {
        self.simulate_on(Domain::Sample, n_samples, seed, blocks)
    }
}

impl RademacherFunctional for ErSpec {
    fn support(&self) -> usize {
        n_slots(self.n)
    }

    fn eval(&self, bits: &[i8]) -> f64 {
        (self.counter.count(self.n, bits) as f64 - self.mean) / self.std_dev
    }
}

/// Stream used by tests and oracles that need a one-off generator.
pub fn oracle_rng(seed: u64) -> crate::rng::StreamRng {
    stream(seed, Domain::Oracle, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn y1(spec: &RademacherSpec) -> impl RademacherFunctional + '_ {
        FnFunctional::new(spec.support(), move |b: &[i8]| spec.standardized(0, b[0]))
    }

    #[test]
    fn gradient_examples() {
        let spec = RademacherSpec::symmetric(3).unwrap();
        let f = y1(&spec);
        let bits = [1, -1, 1];
        assert_eq!(discrete_gradient(&spec, &f, &bits, 0).unwrap(), 1.0);
        assert_eq!(discrete_gradient(&spec, &f, &bits, 2).unwrap(), 0.0);
        assert!(discrete_gradient(&spec, &f, &bits, 3).is_err());
        let c = FnFunctional::new(3, |_: &[i8]| 7.0);
        for k in 0..3 {
            assert_eq!(discrete_gradient(&spec, &c, &bits, k).unwrap(), 0.0);
        }
        // Y₁ with p ≠ ½ still has D₁Y₁ = 1.
        let sk = RademacherSpec::new(vec![0.3, 0.8]).unwrap();
        let f = FnFunctional::new(2, |b: &[i8]| sk.standardized(0, b[0]));
        assert!((discrete_gradient(&sk, &f, &[1, 1], 0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_runs_gradient_closed_form() {
        let tr = TwoRunsSpec::uniform(6).unwrap();
        let spec = tr.rademacher_spec();
        let mut rng = oracle_rng(1);
        let mut bits = vec![1i8; tr.n_bits()];
        for _ in 0..200 {
            spec.sample_bits(&mut rng, &mut bits);
            let xi = |i: usize| f64::from(bits[i] + 1) / 2.0;
            for k in 0..tr.n_bits() {
                let left = if k >= 1 { tr.weights[k - 1] * xi(k - 1) } else { 0.0 };
                let right = if k < tr.weights.len() {
                    tr.weights[k] * xi(k + 1)
                } else {
                    0.0
                };
                let want = (left + right) / (2.0 * tr.std_dev);
                let got = discrete_gradient(&spec, &tr, &bits, k).unwrap();
                assert!((got - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn second_gradient_examples() {
        let spec = RademacherSpec::symmetric(3).unwrap();
        let prod = FnFunctional::new(3, |b: &[i8]| f64::from(b[0]) * f64::from(b[1]));
        assert_eq!(second_gradient(&spec, &prod, &[1, 1, 1], 0, 1).unwrap(), 1.0);
        assert_eq!(second_gradient(&spec, &prod, &[-1, 1, -1], 1, 0).unwrap(), 1.0);
        assert_eq!(second_gradient(&spec, &prod, &[1, 1, 1], 0, 2).unwrap(), 0.0);
        assert!(second_gradient(&spec, &prod, &[1, 1, 1], 1, 1).is_err());
        let lin = FnFunctional::new(3, |b: &[i8]| b.iter().map(|&x| f64::from(x) * 0.375).sum());
        assert_eq!(second_gradient(&spec, &lin, &[1, -1, 1], 0, 2).unwrap(), 0.0);
    }

    #[test]
    fn b_terms_of_single_coordinate() {
        let spec = RademacherSpec::symmetric(4).unwrap();
        let f = y1(&spec);
        let t = estimate_b_terms(&spec, &f, BMode::Enumerate, 0, 0).unwrap();
        assert_eq!(t.terms(), [0.0, 0.0, 4.0, 0.0, 0.0]);
        assert!(t.exact);
        assert_eq!(uniform_bound_rademacher(&t).unwrap(), 8.0);
        let c = FnFunctional::new(4, |_: &[i8]| 1.0);
        let t = estimate_b_terms(&spec, &c, BMode::Enumerate, 0, 0).unwrap();
        assert_eq!(t.terms(), [0.0; 5]);
        assert_eq!(uniform_bound_rademacher(&t).unwrap(), 0.0);
    }

    #[test]
    fn bound_assembly() {
        let spec = RademacherSpec::symmetric(1).unwrap();
        let mut t = estimate_b_terms(&spec, &FnFunctional::new(1, |_: &[i8]| 0.0), BMode::Enumerate, 0, 0).unwrap();
        t.b1 = 1.0;
        assert!((uniform_bound_rademacher(&t).unwrap() - 1.936_491_673_103_708_5).abs() < 1e-14);
        t.b1 = -1.0;
        assert!(uniform_bound_rademacher(&t).is_err());
    }

    #[test]
    fn enumeration_limits() {
        let spec = RademacherSpec::symmetric(25).unwrap();
        let f = FnFunctional::new(25, |_: &[i8]| 0.0);
        assert!(matches!(
            estimate_b_terms(&spec, &f, BMode::Enumerate, 0, 0),
            Err(Error::Resource(_))
        ));
        assert!(matches!(enumerate_distribution(&spec, &f), Err(Error::Resource(_))));
        assert!(matches!(
            two_runs_moments_enumerated(&[1.0; 21]),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn exact_laws() {
        let spec = RademacherSpec::symmetric(2).unwrap();
        let law = enumerate_distribution(&spec, &y1(&spec)).unwrap();
        assert_eq!(law.atoms(), &[(-1.0, 0.5), (1.0, 0.5)]);
        let tr = TwoRunsSpec::uniform(2).unwrap();
        let law = enumerate_distribution(&tr.rademacher_spec(), &tr).unwrap();
        assert!(law.atoms().len() <= 8);
        assert!((law.total_mass() - 1.0).abs() < 1e-12);
        let (m, v) = law.mean_var();
        assert!(m.abs() < 1e-15 && (v - 1.0).abs() < 1e-14);
        let mut buf = Vec::new();
        law.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("value,probability\n"));
    }

    #[test]
    fn two_runs_examples() {
        let tr = TwoRunsSpec::new(vec![1.0, 1.0], 0.5, 0.5f64.sqrt()).unwrap();
        assert!((two_runs_eval(&tr, &[1, 1, 1]).unwrap() - 2.121_320_343_559_642).abs() < 1e-14);
        assert!((two_runs_eval(&tr, &[-1, -1, -1]).unwrap() + 0.5 / 0.5f64.sqrt()).abs() < 1e-15);
        assert!(two_runs_eval(&tr, &[1, 1]).is_err());
        assert_eq!(two_runs_moments(&[1.0, 1.0]).unwrap(), (0.5, 0.5));
        assert_eq!(two_runs_moments(&[1.0]).unwrap(), (0.25, 0.1875));
        assert_eq!(two_runs_moments(&[0.0, 0.0]).unwrap(), (0.0, 0.0));
        assert!(TwoRunsSpec::standardized(vec![0.0, 0.0]).is_err());
        let bits = [1i8, 1, -1, 1, 1];
        let a = [0.5, -1.0, 2.0, 0.25];
        let scaled: Vec<f64> = a.iter().map(|x| 3.0 * x).collect();
        assert_eq!(two_runs_raw(&scaled, &bits), 3.0 * two_runs_raw(&a, &bits));
    }

    #[test]
    fn two_runs_moments_match_enumeration() {
        let mut rng = oracle_rng(4);
        for m in [1usize, 2, 3, 7, 12] {
            let w: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (m1, v1) = two_runs_moments(&w).unwrap();
            let (m2, v2) = two_runs_moments_enumerated(&w).unwrap();
            assert!((m1 - m2).abs() < 1e-12 && (v1 - v2).abs() < 1e-12, "m = {m}");
        }
    }

    #[test]
    fn norm_bound_examples() {
        assert!((two_runs_norm_bound(&[1.0; 100]).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(two_runs_norm_bound(&[0.0, 3.0, 0.0]).unwrap(), 1.0);
        let a = [0.3, -1.2, 2.0];
        let b: Vec<f64> = a.iter().map(|x| x * 5.0).collect();
        assert!((two_runs_norm_bound(&a).unwrap() - two_runs_norm_bound(&b).unwrap()).abs() < 1e-15);
        assert!(two_runs_norm_bound(&[0.0]).is_err());
    }

    #[test]
    fn er_counts() {
        let k4 = vec![1i8; 6];
        assert_eq!(er_subgraph_count(4, &k4, &PatternGraph::triangle()).unwrap(), 4);
        assert_eq!(er_subgraph_count(3, &[1, 1, 1], &PatternGraph::path3()).unwrap(), 3);
        assert_eq!(
            er_subgraph_count(4, &[1, -1, 1, 1, -1, -1], &PatternGraph::edge()).unwrap(),
            3
        );
        assert!(er_subgraph_count(4, &[1; 5], &PatternGraph::edge()).is_err());
        assert_eq!(slot_index(5, 0, 1), 0);
        assert_eq!(slot_index(5, 1, 2), 4);
        assert_eq!(slot_index(5, 3, 4), 9);
    }

    #[test]
    fn triangle_fast_path_matches_general_counter() {
        let mut rng = oracle_rng(8);
        let general = CopyCounter::new(&PatternGraph::triangle()).unwrap();
        for n in [3usize, 7, 20, 64, 70] {
            let bits: Vec<i8> = (0..n_slots(n))
                .map(|_| if rng.random_bool(0.4) { 1 } else { -1 })
                .collect();
            let want = general.count(&host_from_slots(n, &bits), &[]);
            assert_eq!(
                er_subgraph_count(n, &bits, &PatternGraph::triangle()).unwrap(),
                want,
                "n = {n}"
            );
        }
    }

    #[test]
    fn psi_examples() {
        assert!((psi(&PatternGraph::edge(), 10, 0.5).unwrap() - 50.0).abs() < 1e-12);
        assert!((psi(&PatternGraph::triangle(), 10, 0.1).unwrap() - 1.0).abs() < 1e-12);
        assert!((er_bound_scale(10, 0.5, &PatternGraph::edge()).unwrap() - 0.2).abs() < 1e-15);
        let mut prev = 0.0;
        for i in 1..100 {
            let v = psi(&PatternGraph::triangle(), 20, i as f64 / 100.0).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        assert!(
            er_bound_scale(40, 0.3, &PatternGraph::triangle()).unwrap()
                < er_bound_scale(20, 0.3, &PatternGraph::triangle()).unwrap()
        );
    }

    #[test]
    fn triangle_moments_match_enumeration() {
        for &(n, p) in &[(4usize, 0.3), (5, 0.5), (6, 0.3)] {
            let raw = ErSpec::new(n, p, &PatternGraph::triangle(), 0.0, 1.0).unwrap();
            let (m, v) = enumerate_distribution(&raw.rademacher_spec(), &raw).unwrap().mean_var();
            let (cm, cv) = er_triangle_moments(n, p);
            assert!((m - cm).abs() < 1e-12 && (v - cv).abs() < 1e-12, "n = {n}");
        }
    }
}
