//! Special functions in `f64`.
//!
//! `erfc` comes from `libm`, `ln Γ` and `ψ` from `statrs`. The truncated-normal helpers
//! switch to a continued fraction for the Mills ratio once the standardized
//! point is below [`TAIL_SWITCH`], where `φ/Φ` computed directly loses all
//! precision.

use std::f64::consts::{PI, SQRT_2};

/// Below this standardized location the lower tail is evaluated through the
/// Mills-ratio continued fraction.
pub const TAIL_SWITCH: f64 = -6.0;

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub fn digamma(x: f64) -> f64 {
    statrs::function::gamma::digamma(x)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// `ln Φ(x)`, accurate in both tails.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x < TAIL_SWITCH {
        let tail = TruncatedTail::at(x);
        norm_pdf_ln(x) - tail.inv_mills.ln()
    } else if x > 0.0 {
        // Φ(x) = 1 - Φ(-x), keep the small complement.
        (-0.5 * erfc(x / SQRT_2)).ln_1p()
    } else {
        norm_cdf(x).ln()
    }
}

#[inline]
fn norm_pdf_ln(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

/// Lower-truncation quantities at a standardized location `α`:
/// `inv_mills = φ(α)/Φ(α)` and `shifted = α + φ(α)/Φ(α)`.
///
/// For a Gaussian `N(μ, σ²)` restricted to `[0, ∞)` with `α = μ/σ`, the
/// truncated mean is `σ·shifted` and the truncated variance is
/// `σ²·(1 - inv_mills·shifted)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedTail {
    pub inv_mills: f64,
    pub shifted: f64,
}

impl TruncatedTail {
    pub fn at(alpha: f64) -> Self {
        if alpha >= TAIL_SWITCH {
            let inv_mills = norm_pdf(alpha) / norm_cdf(alpha);
            return Self { inv_mills, shifted: alpha + inv_mills };
        }
        // Φ(α)/φ(α) = 1/(z + w), w = 1/(z + 2/(z + 3/(z + ...))), z = -α.
        // Then φ/Φ = z + w and α + φ/Φ = w exactly.
        let z = -alpha;
        let mut tail = 0.0;
        for k in (2..=200).rev() {
            tail = k as f64 / (z + tail);
        }
        let w = 1.0 / (z + tail);
        Self { inv_mills: z + w, shifted: w }
    }

    /// `1 - inv_mills·shifted`, the truncated variance in units of σ².
    pub fn variance_factor(&self) -> f64 {
        (1.0 - self.inv_mills * self.shifted).max(0.0)
    }
}
