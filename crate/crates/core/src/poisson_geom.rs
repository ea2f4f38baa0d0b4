//! Poisson point processes on boxes, random geometric graphs and the
//! second-order Poincaré terms of Poisson functionals.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{domain, Error, Result};
use crate::graph::{CopyCounter, HostGraph, PatternGraph};
use crate::rng::{par_blocks, stream, Domain, StreamRng};

/// Largest admissible expected point count `intensity · volume`.
pub const MAX_EXPECTED_POINTS: f64 = 1e8;

/// Axis-aligned box `[lower, upper]` in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Window {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return domain("window bounds must be non-empty and of equal dimension");
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite())
        {
            return domain("window needs finite lower < upper in every coordinate");
        }
        Ok(Self { lower, upper })
    }

    /// `[0, 1]^d`.
    pub fn unit(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (a, b))| a <= v && v <= b)
    }

    /// A uniform point of the window.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| a + (b - a) * rng.random::<f64>())
            .collect()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if !self.contains(x) {
            return domain(format!("point {x:?} lies outside the window"));
        }
        Ok(())
    }
}

/// Finite point configuration stored as a flat coordinate array.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointConfig {
    dim: usize,
    coords: Vec<f64>,
}

impl PointConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            coords: Vec::new(),
        }
    }

    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        let mut c = Self::new(dim);
        for p in points {
            c.push(p)?;
        }
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return domain(format!(
                "point of dimension {} pushed into a {}-dimensional configuration",
                x.len(),
                self.dim
            ));
        }
        self.coords.extend_from_slice(x);
        Ok(())
    }

    /// Copy of the configuration with `extra` appended, in order.
    pub fn with_points(&self, extra: &[&[f64]]) -> Result<Self> {
        let mut c = self.clone();
        for x in extra {
            c.push(x)?;
        }
        Ok(c)
    }

    /// One row `x1,…,xd` per point.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for i in 0..self.len() {
            let row: Vec<String> = self.point(i).iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn check_expected(window: &Window, intensity: f64) -> Result<f64> {
    if !(intensity > 0.0) || !intensity.is_finite() {
        return domain(format!("intensity must be positive, got {intensity}"));
    }
    let mean = intensity * window.volume();
    if mean >= MAX_EXPECTED_POINTS {
        return Err(Error::Resource(format!(
            "expected point count {mean:e} exceeds the guard {MAX_EXPECTED_POINTS:e}"
        )));
    }
    Ok(mean)
}

/// Poisson process with intensity `intensity` times Lebesgue measure on the window.
pub fn sample_ppp_with<R: Rng + ?Sized>(window: &Window, intensity: f64, rng: &mut R) -> Result<PointConfig> {
    let mean = check_expected(window, intensity)?;
    let count = Poisson::new(mean)
        .map_err(|e| Error::Domain(e.to_string()))?
        .sample(rng) as usize;
    let mut c = PointConfig {
        dim: window.dim(),
        coords: Vec::with_capacity(count * window.dim()),
    };
    for _ in 0..count {
        for (a, b) in window.lower.iter().zip(&window.upper) {
            c.coords.push(a + (b - a) * rng.random::<f64>());
        }
    }
    Ok(c)
}

/// [`sample_ppp_with`] on the replica-0 sample stream of `seed`.
pub fn sample_ppp(window: &Window, intensity: f64, seed: u64) -> Result<PointConfig> {
    sample_ppp_with(window, intensity, &mut stream(seed, Domain::Sample, 0))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Geometric graph joining points at distance in `(0, radius]`.
///
/// Points are bucketed into cells of side at least `radius`, so only the
/// `3^d` surrounding cells are scanned per point.
pub fn geometric_graph(points: &PointConfig, radius: f64) -> HostGraph {
    let n = points.len();
    let d = points.dim();
    let mut g = HostGraph::with_vertices(n);
    if n < 2 || !(radius > 0.0) {
        return g;
    }
    let r2 = radius * radius;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..n {
        for (k, &v) in points.point(i).iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    // Cells per axis, capped so the grid stays O(n).
    let cap = ((4 * n) as f64).powf(1.0 / d as f64).floor().max(1.0);
    let dims: Vec<usize> = (0..d)
        .map(|k| (((hi[k] - lo[k]) / radius).floor() + 1.0).min(cap).max(1.0) as usize)
        .collect();
    let side: Vec<f64> = (0..d).map(|k| ((hi[k] - lo[k]) / dims[k] as f64).max(radius)).collect();
    let cell_of = |x: &[f64]| -> Vec<usize> {
        (0..d)
            .map(|k| (((x[k] - lo[k]) / side[k]) as usize).min(dims[k] - 1))
            .collect()
    };
    let flat = |c: &[usize]| c.iter().zip(&dims).fold(0usize, |acc, (ci, di)| acc * di + ci);
    let n_cells: usize = dims.iter().product();
    let mut start = vec![0usize; n_cells + 1];
    let cells: Vec<Vec<usize>> = (0..n).map(|i| cell_of(points.point(i))).collect();
    for c in &cells {
        start[flat(c) + 1] += 1;
    }
    for k in 0..n_cells {
        start[k + 1] += start[k];
    }
    let mut fill = start.clone();
    let mut members = vec![0usize; n];
    for (i, c) in cells.iter().enumerate() {
        let f = flat(c);
        members[fill[f]] = i;
        fill[f] += 1;
    }
    let mut offset = vec![0isize; d];
    for (i, c) in cells.iter().enumerate() {
        let xi = points.point(i);
        offset.iter_mut().for_each(|o| *o = -1);
        'cells: loop {
            let mut nb = Vec::with_capacity(d);
            let mut valid = true;
            for k in 0..d {
                let v = c[k] as isize + offset[k];
                if v < 0 || v >= dims[k] as isize {
                    valid = false;
                    break;
                }
                nb.push(v as usize);
            }
            if valid {
                let f = flat(&nb);
                for &j in &members[start[f]..start[f + 1]] {
                    if j > i {
                        let d2 = dist2(xi, points.point(j));
                        if d2 > 0.0 && d2 <= r2 {
                            g.add_edge(i, j);
                        }
                    }
                }
            }
            for o in offset.iter_mut() {
                *o += 1;
                if *o <= 1 {
                    continue 'cells;
                }
                *o = -1;
            }
            break;
        }
    }
    g.finish();
    g
}

/// Number of non-induced copies of `pattern`, each unordered copy once.
pub fn count_subgraphs(points: &PointConfig, radius: f64, pattern: &PatternGraph) -> Result<u64> {
    let counter = CopyCounter::new(pattern)?;
    let g = geometric_graph(points, radius);
    Ok(count_in(&counter, &g))
}

fn count_in(counter: &CopyCounter, g: &HostGraph) -> u64 {
    if counter.pattern().n_vertices() == 2 {
        g.n_edges() as u64
    } else {
        counter.count(g, &[])
    }
}

/// First and second differences at a tuple of added points.
#[derive(Debug, Clone, PartialEq)]
pub struct Differences {
    /// `D_{x_i} F` for each added point.
    pub first: Vec<f64>,
    /// `D²_{x_i,x_j} F` for `i < j` in lexicographic order.
    pub second: Vec<f64>,
}

/// A functional of a Poisson process on a window.
pub trait PoissonFunctional: Sync {
    fn window(&self) -> &Window;
    fn intensity(&self) -> f64;
    fn eval(&self, points: &PointConfig) -> f64;

    /// `F(η + δ_x) - F(η)`.
    fn add_one_cost(&self, points: &PointConfig, x: &[f64]) -> Result<f64> {
        self.window().check(x)?;
        Ok(self.eval(&points.with_points(&[x])?) - self.eval(points))
    }

    /// `D_y D_x F`.
    fn second_diff(&self, points: &PointConfig, x: &[f64], y: &[f64]) -> Result<f64> {
        self.window().check(x)?;
        self.window().check(y)?;
        let fxy = self.eval(&points.with_points(&[x, y])?);
        let fx = self.eval(&points.with_points(&[x])?);
        let fy = self.eval(&points.with_points(&[y])?);
        Ok(fxy - fx - fy + self.eval(points))
    }

    /// Differences at every point of `xs` (and every pair) on the same configuration.
    fn differences(&self, points: &PointConfig, xs: &[&[f64]]) -> Result<Differences> {
        let first = xs.iter().map(|x| self.add_one_cost(points, x)).collect::<Result<_>>()?;
        let mut second = Vec::new();
        for i in 0..xs.len() {
            for j in i + 1..xs.len() {
                second.push(self.second_diff(points, xs[i], xs[j])?);
            }
        }
        Ok(Differences { first, second })
    }
}

/// Standardized point count `(η(W) - mean) / std_dev`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCount {
    pub window: Window,
    pub intensity: f64,
    pub mean: f64,
    pub std_dev: f64,
}

impl PointCount {
    /// Standardized by the exact Poisson mean and variance.
    pub fn standardized(window: Window, intensity: f64) -> Result<Self> {
        let mean = check_expected(&window, intensity)?;
        Ok(Self {
            window,
            intensity,
            mean,
            std_dev: mean.sqrt(),
        })
    }
}

impl PoissonFunctional for PointCount {
    fn window(&self) -> &Window {
        &self.window
    }

    fn intensity(&self) -> f64 {
        self.intensity
    }

    fn eval(&self, points: &PointConfig) -> f64 {
        (points.len() as f64 - self.mean) / self.std_dev
    }

    fn add_one_cost(&self, _: &PointConfig, x: &[f64]) -> Result<f64> {
        self.window.check(x)?;
        Ok(1.0 / self.std_dev)
    }

    fn second_diff(&self, _: &PointConfig, x: &[f64], y: &[f64]) -> Result<f64> {
        self.window.check(x)?;
        self.window.check(y)?;
        Ok(0.0)
    }
}

/// Pilot run used to standardize a subgraph count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotMeta {
    pub replicas: usize,
    pub seed: u64,
    pub mean: f64,
    pub variance: f64,
}

/// Standardized subgraph count in a random geometric graph.
#[derive(Clone)]
pub struct RggSpec {
    pub window: Window,
    pub intensity: f64,
    pub radius: f64,
    pub v_const: f64,
    pub std_mean: f64,
    pub std_dev: f64,
    counter: std::sync::Arc<CopyCounter>,
}

impl std::fmt::Debug for RggSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RggSpec")
            .field("window", &self.window)
            .field("intensity", &self.intensity)
            .field("radius", &self.radius)
            .field("pattern", self.pattern())
            .field("v_const", &self.v_const)
            .field("std_mean", &self.std_mean)
            .field("std_dev", &self.std_dev)
            .finish()
    }
}

impl RggSpec {
    /// Unstandardized (`std_mean = 0`, `std_dev = 1`) spec.
    pub fn new(window: Window, intensity: f64, radius: f64, pattern: &PatternGraph, v_const: f64) -> Result<Self> {
        check_expected(&window, intensity)?;
        if !(radius > 0.0) || !radius.is_finite() {
            return domain(format!("radius must be positive, got {radius}"));
        }
        if !(v_const > 0.0) {
            return domain(format!("v_const must be positive, got {v_const}"));
        }
        if pattern.n_vertices() < 2 {
            return domain("pattern needs at least two vertices");
        }
        Ok(Self {
            window,
            intensity,
            radius,
            v_const,
            std_mean: 0.0,
            std_dev: 1.0,
            counter: std::sync::Arc::new(CopyCounter::new(pattern)?),
        })
    }

    pub fn pattern(&self) -> &PatternGraph {
        self.counter.pattern()
    }

    pub fn with_standardization(mut self, mean: f64, std_dev: f64) -> Result<Self> {
        if !(std_dev > 0.0) || !mean.is_finite() {
            return domain(format!(
                "standardization needs finite mean and std_dev > 0 (got {mean}, {std_dev})"
            ));
        }
        self.std_mean = mean;
        self.std_dev = std_dev;
        Ok(self)
    }

    /// Raw count `S(G)` on one configuration.
    pub fn raw_count(&self, points: &PointConfig) -> u64 {
        count_in(&self.counter, &geometric_graph(points, self.radius))
    }

    /// `replicas` raw counts on the given random domain.
    pub fn raw_counts(&self, replicas: usize, seed: u64, domain_tag: Domain, blocks: usize) -> Result<Vec<f64>> {
        check_expected(&self.window, self.intensity)?;
        Ok(par_blocks(seed, domain_tag, replicas, blocks, |_, len, rng| {
            (0..len)
                .map(|_| {
                    let pts = sample_ppp_with(&self.window, self.intensity, rng).expect("guard checked");
                    self.raw_count(&pts) as f64
                })
                .collect()
        }))
    }

    /// Sets the standardization from a pilot run on the `Pilot` stream.
    pub fn standardize_pilot(self, replicas: usize, seed: u64, blocks: usize) -> Result<(Self, PilotMeta)> {
        if replicas < 2 {
            return domain("pilot needs at least two replicas");
        }
        let counts = self.raw_counts(replicas, seed, Domain::Pilot, blocks)?;
        let (mean, variance) = mean_var(&counts);
        if !(variance > 0.0) {
            return domain("pilot variance is zero; the count is degenerate at these parameters");
        }
        let meta = PilotMeta {
            replicas,
            seed,
            mean,
            variance,
        };
        Ok((self.with_standardization(mean, variance.sqrt())?, meta))
    }

    /// `n_samples` standardized counts on the `Sample` stream.
    pub fn simulate(&self, n_samples: usize, seed: u64, blocks: usize) -> Result<Vec<f64>> {
        let raw = self.raw_counts(n_samples, seed, Domain::Sample, blocks)?;
        Ok(raw.into_iter().map(|s| (s - self.std_mean) / self.std_dev).collect())
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

impl PoissonFunctional for RggSpec {
    fn window(&self) -> &Window {
        &self.window
    }

    fn intensity(&self) -> f64 {
        self.intensity
    }

    fn eval(&self, points: &PointConfig) -> f64 {
        (self.raw_count(points) as f64 - self.std_mean) / self.std_dev
    }

    fn add_one_cost(&self, points: &PointConfig, x: &[f64]) -> Result<f64> {
        Ok(self.differences(points, &[x])?.first[0])
    }

    fn second_diff(&self, points: &PointConfig, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.differences(points, &[x, y])?.second[0])
    }

    /// Builds one graph on `η ∪ xs` and counts only copies through the added points.
    fn differences(&self, points: &PointConfig, xs: &[&[f64]]) -> Result<Differences> {
        for x in xs {
            self.window.check(x)?;
        }
        let n = points.len();
        let g = geometric_graph(&points.with_points(xs)?, self.radius);
        let added: Vec<usize> = (n..n + xs.len()).collect();
        let others = |keep: &[usize]| -> Vec<usize> { added.iter().copied().filter(|v| !keep.contains(v)).collect() };
        let first = added
            .iter()
            .map(|&a| self.counter.count_containing(&g, &[a], &others(&[a])) as f64 / self.std_dev)
            .collect();
        let mut second = Vec::new();
        for i in 0..added.len() {
            for j in i + 1..added.len() {
                let pair = [added[i], added[j]];
                second.push(self.counter.count_containing(&g, &pair, &others(&pair)) as f64 / self.std_dev);
            }
        }
        Ok(Differences { first, second })
    }
}

/// Run parameters of a Poincaré-term estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McMeta {
    pub outer: usize,
    pub inner: usize,
    /// Total process replicas drawn (`outer · inner`).
    pub point_draws: usize,
    pub seed: u64,
    pub pilot: Option<PilotMeta>,
}

/// Estimates of the second-order Poincaré terms `A₁ … A₅` with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareTermsP {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
    pub stderr1: f64,
    pub stderr2: f64,
    pub stderr3: f64,
    pub stderr4: f64,
    pub stderr5: f64,
    /// Jackknife estimate of the bias of `a1` due to square roots of inner means.
    pub bias1: f64,
    pub bias4: f64,
    pub mc_meta: McMeta,
}

impl PoincareTermsP {
    pub fn terms(&self) -> [f64; 5] {
        [self.a1, self.a2, self.a3, self.a4, self.a5]
    }

    pub fn stderrs(&self) -> [f64; 5] {
        [self.stderr1, self.stderr2, self.stderr3, self.stderr4, self.stderr5]
    }

    /// Delta-method standard error of [`uniform_bound_poisson`].
    pub fn bound_stderr(&self) -> f64 {
        let g = |a: f64, c: f64| if a > 0.0 { c / (2.0 * a.sqrt()) } else { 0.0 };
        let s45 = self.a4 + self.a5;
        let parts = [
            g(self.a1, 2.0) * self.stderr1,
            g(self.a2, 1.0) * self.stderr2,
            g(self.a3, 2.0) * self.stderr3,
            g(s45, 2.0) * self.stderr4,
            g(s45, 2.0) * self.stderr5,
        ];
        parts.iter().map(|p| p * p).sum::<f64>().sqrt()
    }
}

struct TupleTerms {
    a: [f64; 5],
    bias1: f64,
    bias4: f64,
}

// Jackknife bias of sqrt(mean(u)) * sqrt(mean(v)).
fn jackknife_sqrt_product(u: &[f64], v: &[f64]) -> f64 {
    let n = u.len() as f64;
    let su: f64 = u.iter().sum();
    let sv: f64 = v.iter().sum();
    let full = (su / n).sqrt() * (sv / n).sqrt();
    let loo: f64 = u
        .iter()
        .zip(v)
        .map(|(a, b)| (((su - a) / (n - 1.0)).max(0.0)).sqrt() * (((sv - b) / (n - 1.0)).max(0.0)).sqrt())
        .sum::<f64>()
        / n;
    (n - 1.0) * (loo - full)
}

fn tuple_terms<F: PoissonFunctional + ?Sized>(f: &F, inner: usize, rng: &mut StreamRng) -> Result<TupleTerms> {
    let w = f.window();
    let x: Vec<Vec<f64>> = (0..3).map(|_| w.sample_point(rng)).collect();
    let xs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    let mut d12sq = Vec::with_capacity(inner);
    let mut dd13_23 = Vec::with_capacity(inner);
    let mut d1_4 = Vec::with_capacity(inner);
    let mut dd12_4 = Vec::with_capacity(inner);
    for _ in 0..inner {
        let pts = sample_ppp_with(w, f.intensity(), rng)?;
        let d = f.differences(&pts, &xs)?;
        let (d1, d2) = (d.first[0], d.first[1]);
        // pairs in order (1,2), (1,3), (2,3)
        let (s12, s13, s23) = (d.second[0], d.second[1], d.second[2]);
        d12sq.push(d1 * d1 * d2 * d2);
        dd13_23.push(s13 * s13 * s23 * s23);
        d1_4.push(d1.powi(4));
        dd12_4.push(s12.powi(4));
    }
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (e_first, e_second, e_d4, e_dd4) = (m(&d12sq), m(&dd13_23), m(&d1_4), m(&dd12_4));
    Ok(TupleTerms {
        a: [
            e_first.sqrt() * e_second.sqrt(),
            e_second,
            e_d4,
            6.0 * e_d4.sqrt() * e_dd4.sqrt(),
            3.0 * e_dd4,
        ],
        bias1: jackknife_sqrt_product(&d12sq, &dd13_23),
        bias4: 6.0 * jackknife_sqrt_product(&d1_4, &dd12_4),
    })
}

/// Monte Carlo estimate of `A₁ … A₅`.
///
/// Each of `outer` tuples `(x₁, x₂, x₃)` is uniform on `W³` and each inner
/// expectation is averaged over `inner` fresh processes; a `μ^j` integral is
/// the tuple mean times `(t · Vol W)^j`. Tuple `o` uses stream `o` of the
/// `Tuples` domain, so the result does not depend on the thread count.
pub fn estimate_poincare_terms<F: PoissonFunctional + ?Sized>(
    f: &F,
    outer: usize,
    inner: usize,
    seed: u64,
) -> Result<PoincareTermsP> {
    if outer < 2 || inner < 2 {
        return domain(format!("outer and inner must be >= 2 (got {outer}, {inner})"));
    }
    let mass = check_expected(f.window(), f.intensity())?;
    let per_tuple: Vec<TupleTerms> = (0..outer)
        .into_par_iter()
        .map(|o| tuple_terms(f, inner, &mut stream(seed, Domain::Tuples, o as u64)))
        .collect::<Result<_>>()?;
    let scale = [mass.powi(3), mass.powi(3), mass, mass.powi(2), mass.powi(2)];
    let n = outer as f64;
    let mut est = [0.0; 5];
    let mut se = [0.0; 5];
    for k in 0..5 {
        let col: Vec<f64> = per_tuple.iter().map(|t| t.a[k]).collect();
        let (mean, var) = mean_var(&col);
        est[k] = mean * scale[k];
        se[k] = (var / n).sqrt() * scale[k];
    }
    let bias1 = per_tuple.iter().map(|t| t.bias1).sum::<f64>() / n * scale[0];
    let bias4 = per_tuple.iter().map(|t| t.bias4).sum::<f64>() / n * scale[3];
    Ok(PoincareTermsP {
        a1: est[0],
        a2: est[1],
        a3: est[2],
        a4: est[3],
        a5: est[4],
        stderr1: se[0],
        stderr2: se[1],
        stderr3: se[2],
        stderr4: se[3],
        stderr5: se[4],
        bias1,
        bias4,
        mc_meta: McMeta {
            outer,
            inner,
            point_draws: outer * inner,
            seed,
            pilot: None,
        },
    })
}

/// `2√A₁ + √A₂ + 2(√A₃ + √(A₄ + A₅))`.
pub fn uniform_bound_poisson(terms: &PoincareTermsP) -> Result<f64> {
    let [a1, a2, a3, a4, a5] = terms.terms();
    if terms.terms().iter().any(|a| !(*a >= 0.0)) {
        return domain("Poincaré terms must be nonnegative");
    }
    Ok(2.0 * a1.sqrt() + a2.sqrt() + 2.0 * (a3.sqrt() + (a4 + a5).sqrt()))
}

/// Volume of the Euclidean unit ball in `R^d`.
pub fn unit_ball_volume(dim: usize) -> f64 {
    let d = dim as f64;
    std::f64::consts::PI.powf(d / 2.0) / libm::tgamma(d / 2.0 + 1.0)
}

fn check_rgg_args(q: u32, intensity: f64, radius: f64, dim: usize) -> Result<()> {
    if q < 2 || !(intensity > 0.0) || !(radius >= 0.0) || dim == 0 {
        return domain(format!(
            "need q >= 2, intensity > 0, radius >= 0, dim >= 1 (got {q}, {intensity}, {radius}, {dim})"
        ));
    }
    Ok(())
}

/// `v · max{t^{q-1}(κ_d r^d)^{2q-2}, t^q (κ_d r^d)^{q-1}}`.
pub fn variance_lower_bound(q: u32, v: f64, intensity: f64, radius: f64, dim: usize) -> Result<f64> {
    check_rgg_args(q, intensity, radius, dim)?;
    let (qf, t) = (q as f64, intensity);
    let ball = unit_ball_volume(dim) * radius.powi(dim as i32);
    Ok(v * (t.powf(qf - 1.0) * ball.powf(2.0 * qf - 2.0)).max(t.powf(qf) * ball.powf(qf - 1.0)))
}

/// The constant `v` that makes [`variance_lower_bound`] equal to `variance`.
pub fn fitted_v(variance: f64, q: u32, intensity: f64, radius: f64, dim: usize) -> Result<f64> {
    Ok(variance / variance_lower_bound(q, 1.0, intensity, radius, dim)?)
}

/// Concentration constant `√(v t min{1, t κ_d r^d}^{q-1}) / (q^{3q} max{1, Vol/v})`.
pub fn concentration_c_rgg(q: u32, v: f64, intensity: f64, radius: f64, dim: usize, volume: f64) -> Result<f64> {
    check_rgg_args(q, intensity, radius, dim)?;
    if !(v > 0.0) || !(volume > 0.0) {
        return domain(format!("need v > 0 and volume > 0 (got {v}, {volume})"));
    }
    let qf = q as f64;
    let m = (intensity * unit_ball_volume(dim) * radius.powi(dim as i32)).min(1.0);
    Ok((v * intensity * m.powf(qf - 1.0)).sqrt() / (qf.powf(3.0 * qf) * (volume / v).max(1.0)))
}

/// `2 exp(-¼ min{z²/2^q, (c z)^{1/q}})`.
pub fn poisson_tail_bound(z: f64, q: u32, c: f64) -> Result<f64> {
    if !(z > 0.0) || q == 0 || !(c > 0.0) {
        return domain(format!(
            "poisson_tail_bound needs z > 0, q >= 1, c > 0 (got {z}, {q}, {c})"
        ));
    }
    let qf = q as f64;
    Ok(2.0 * (-0.25 * (z * z / 2f64.powf(qf)).min((c * z).powf(1.0 / qf))).exp())
}
