//! Standard-normal toolkit and the Stein kernel for the Kolmogorov distance.
//!
//! The solution `f_z` of `f'(w) - w f(w) = 1{w <= z} - Φ(z)` is evaluated
//! through the Mills ratio `R(x) = (1 - Φ(x)) / p(x)`, never as a quotient of
//! raw tail and density values, so it stays finite for `|w|` well beyond 37.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{domain, Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Above this point the Mills ratio switches to its continued fraction.
const MILLS_CF_THRESHOLD: f64 = 8.0;

fn check_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        domain(format!("{name} must be finite, got {x}"))
    }
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Upper tail `1 - Φ(x)`, accurate in relative terms for large positive `x`.
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Φ(x) without input validation, for hot loops over finite data.
#[inline]
pub fn phi(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 - std_normal_sf(x)
    } else {
        std_normal_sf(-x)
    }
}

/// Standard normal distribution function Φ.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    check_finite("x", x)?;
    Ok(phi(x))
}

/// Mills ratio `(1 - Φ(x)) / p(x)` for `x >= 0`.
///
/// Lentz evaluation of `1/(x + 1/(x + 2/(x + ...)))` past the threshold; the
/// direct quotient below it, where neither factor is close to underflow.
pub fn mills_ratio(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x <= MILLS_CF_THRESHOLD {
        return std_normal_sf(x) / std_normal_pdf(x);
    }
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// Mills-ratio tail bound `min(1/2, 1/z) e^{-z²/2} >= 1 - Φ(z)`.
pub fn mills_tail_bound(z: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return domain(format!("mills_tail_bound needs z > 0, got {z}"));
    }
    Ok((0.5f64).min(1.0 / z) * (-0.5 * z * z).exp())
}

// Lower branch (w <= z) of the kernel; other cases reduce to it through
// f_z(w) = f_{-z}(-w).
fn solution_lower(z: f64, w: f64) -> f64 {
    if w <= 0.0 {
        // Φ(w)/p(w) = R(-w)
        mills_ratio(-w) * std_normal_sf(z)
    } else {
        // 0 < w <= z: Φ(w) R(z) exp((w² - z²)/2), exponent <= 0
        phi(w) * mills_ratio(z) * (0.5 * (w - z) * (w + z)).exp()
    }
}

fn derivative_lower(z: f64, w: f64) -> f64 {
    if w <= 0.0 {
        std_normal_sf(z) * (1.0 + w * mills_ratio(-w))
    } else {
        std_normal_sf(z) + w * phi(w) * mills_ratio(z) * (0.5 * (w - z) * (w + z)).exp()
    }
}

/// Value of the Stein solution `f_z(w)`.
pub fn stein_solution(z: f64, w: f64) -> Result<f64> {
    check_finite("z", z)?;
    check_finite("w", w)?;
    Ok(if w <= z {
        solution_lower(z, w)
    } else {
        solution_lower(-z, -w)
    })
}

/// One-sided limits `(f'_z(z-), f'_z(z+))` at the jump; they differ by one.
pub fn stein_derivative_limits(z: f64) -> Result<(f64, f64)> {
    check_finite("z", z)?;
    Ok((derivative_lower(z, z), -derivative_lower(-z, -z)))
}

/// Derivative `f'_z(w)` for `w != z`.
///
/// At `w == z` the derivative jumps by one and [`Error::JumpPoint`] carries
/// both one-sided limits.
pub fn stein_derivative(z: f64, w: f64) -> Result<f64> {
    check_finite("z", z)?;
    check_finite("w", w)?;
    if w < z {
        Ok(derivative_lower(z, w))
    } else if w > z {
        Ok(-derivative_lower(-z, -w))
    } else {
        let (left, right) = stein_derivative_limits(z)?;
        Err(Error::JumpPoint { z, left, right })
    }
}

/// Pointwise evaluation of the kernel and its derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteinEval {
    pub z: f64,
    pub w: f64,
    pub f: f64,
    pub f_prime: f64,
}

impl SteinEval {
    pub fn new(z: f64, w: f64) -> Result<Self> {
        Ok(Self {
            z,
            w,
            f: stein_solution(z, w)?,
            f_prime: stein_derivative(z, w)?,
        })
    }

    /// `f' - w f - (1{w <= z} - Φ(z))`; zero up to rounding.
    pub fn identity_residual(&self) -> f64 {
        let indicator = if self.w <= self.z { 1.0 } else { 0.0 };
        self.f_prime - self.w * self.f - (indicator - phi(self.z))
    }
}

/// Constant relating `min(1, C₁/|z|^{2k})` to the polynomial prefactor `C₂/(1+|z|)^{2k}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaConstants {
    pub k: u32,
    pub c1: f64,
    pub c2: f64,
}

impl LemmaConstants {
    /// Left side of the inequality multiplied by `(1+|z|)^{2k}`; must stay `<= c2`.
    pub fn scaled_lhs(&self, z: f64) -> f64 {
        let two_k = 2 * self.k as i32;
        let az = z.abs();
        let min = if az == 0.0 {
            1.0
        } else {
            (self.c1 / az.powi(two_k)).min(1.0)
        };
        min * (1.0 + az).powi(two_k)
    }

    pub fn holds_at(&self, z: f64) -> bool {
        self.scaled_lhs(z) <= self.c2 * (1.0 + 1e-12)
    }
}

/// `C₂ = (1 + C₁^{1/(2k)})^{2k}`, which dominates both regimes `|z|^{2k} <= C₁` and `> C₁`.
pub fn lemma_constant(k: u32, c1: f64) -> Result<LemmaConstants> {
    if k == 0 {
        return domain("lemma_constant needs k >= 1");
    }
    if !(c1 > 0.0) || !c1.is_finite() {
        return domain(format!("lemma_constant needs c1 > 0, got {c1}"));
    }
    let two_k = 2 * k as i32;
    let c2 = (1.0 + c1.powf(1.0 / two_k as f64)).powi(two_k);
    Ok(LemmaConstants { k, c1, c2 })
}

/// Exponential-type prefactor `c e^{-z²/4} + sqrt(P(F > z/2))`.
pub fn improved_prefactor(z: f64, tail_half: f64, c: f64) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return domain(format!("improved_prefactor needs z > 0, got {z}"));
    }
    if !(0.0..=1.0).contains(&tail_half) {
        return domain(format!("tail_half must lie in [0, 1], got {tail_half}"));
    }
    if !(c > 0.0) || !c.is_finite() {
        return domain(format!("improved_prefactor needs c > 0, got {c}"));
    }
    Ok(c * (-0.25 * z * z).exp() + tail_half.sqrt())
}
