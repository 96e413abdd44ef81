//! Closed-form hull functions for two-variable fragments and cut selection.
//!
//! The building block is the function
//!
//! ```text
//!     f(z1, z2, x1, x2) = (x1 - x2)^2 / z1   if x1 >= x2,
//!                         (x1 - x2)^2 / z2   otherwise,
//! ```
//!
//! with the convention `a / 0 = +inf` for `a > 0` and `0 / 0 = 0`. Over the
//! box `z in [0,1]^2, x >= 0` it describes the convex envelope of
//! `(x1 - x2)^2` under the indicator semantics `x_i = 0 when z_i = 0`.
//! The weighted generalization `g` handles a term
//! `d1 x1^2 - 2 x1 x2 + d2 x2^2` with `d1 d2 >= 1`; it is what the
//! cutting-surface algorithm separates over. Both functions have explicit
//! branch formulas and an equivalent representation as the maximum of two
//! `f`-based expressions, which this module exposes separately so they can
//! be cross-checked against each other.

use crate::{Error, Result};

/// Ratio with `a / 0 = +inf` for `a > 0` and `0 / 0 = 0`.
pub fn safe_div(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// `f(z1, z2, x1, x2)`; ties `x1 = x2` take the first branch.
pub fn eval_f(z1: f64, z2: f64, x1: f64, x2: f64) -> f64 {
    let d = x1 - x2;
    if x1 >= x2 {
        safe_div(d * d, z1)
    } else {
        safe_div(d * d, z2)
    }
}

/// Diagonal weight pair `(d1, d2)` with `d1 > 0`, `d2 > 0`, `d1 * d2 >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairWeights {
    d1: f64,
    d2: f64,
}

impl PairWeights {
    pub fn new(d1: f64, d2: f64) -> Result<Self> {
        if !(d1.is_finite() && d2.is_finite() && d1 > 0.0 && d2 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "weights must be positive and finite, got ({d1}, {d2})"
            )));
        }
        // Allow a hair of slack for weights computed as u/v with v*u >= 1.
        if d1 * d2 < 1.0 - 1e-12 {
            return Err(Error::InvalidInput(format!(
                "weight product {} < 1",
                d1 * d2
            )));
        }
        Ok(PairWeights { d1, d2 })
    }

    /// The one-parameter family `(d, 1/d)` used by the cut loop.
    pub fn symmetric(d: f64) -> Result<Self> {
        PairWeights::new(d, 1.0 / d)
    }

    pub fn d1(&self) -> f64 {
        self.d1
    }

    pub fn d2(&self) -> f64 {
        self.d2
    }
}

/// `g(z, x; d)`: the convex envelope of `d1 x1^2 - 2 x1 x2 + d2 x2^2` under
/// indicator semantics, by its four-branch closed form.
pub fn eval_g(z1: f64, z2: f64, x1: f64, x2: f64, w: PairWeights) -> f64 {
    let (d1, d2) = (w.d1, w.d2);
    if z1 >= z2 {
        if d1 * x1 >= x2 {
            // Numerator is (d1 x1 - x2)^2 / d1 >= 0; clamp float fuzz.
            let num = (d1 * x1 * x1 - 2.0 * x1 * x2 + x2 * x2 / d1).max(0.0);
            safe_div(num, z1) + scaled_ratio(d2 - 1.0 / d1, x2 * x2, z2)
        } else {
            let num = (d1 * x1 * x1 - 2.0 * x1 * x2 + d2 * x2 * x2).max(0.0);
            safe_div(num, z2)
        }
    } else if x1 >= d2 * x2 {
        let num = (d1 * x1 * x1 - 2.0 * x1 * x2 + d2 * x2 * x2).max(0.0);
        safe_div(num, z1)
    } else {
        // Numerator is (x1/sqrt(d2) - sqrt(d2) x2)^2 >= 0.
        let num = (x1 * x1 / d2 - 2.0 * x1 * x2 + d2 * x2 * x2).max(0.0);
        safe_div(num, z2) + scaled_ratio(d1 - 1.0 / d2, x1 * x1, z1)
    }
}

/// `coef * (num / den)` treating a zero coefficient as killing the term even
/// when the ratio is infinite. `coef` is clamped at zero: it is a quantity
/// of the form `d2 - 1/d1` which is nonnegative up to rounding.
fn scaled_ratio(coef: f64, num: f64, den: f64) -> f64 {
    if coef <= 0.0 {
        0.0
    } else {
        coef * safe_div(num, den)
    }
}

/// The two expressions whose pointwise maximum equals [`eval_g`]:
///
/// ```text
///     A = d1 * f(z1, z2, x1, x2/d1) + (x2^2/z2) (d2 - 1/d1)
///     B = d2 * f(z1, z2, x1/d2, x2) + (x1^2/z1) (d1 - 1/d2)
/// ```
pub fn g_decomposition(z1: f64, z2: f64, x1: f64, x2: f64, w: PairWeights) -> (f64, f64) {
    let (d1, d2) = (w.d1, w.d2);
    let a = d1 * eval_f(z1, z2, x1, x2 / d1) + scaled_ratio(d2 - 1.0 / d1, x2 * x2, z2);
    let b = d2 * eval_f(z1, z2, x1 / d2, x2) + scaled_ratio(d1 - 1.0 / d2, x1 * x1, z1);
    (a, b)
}

/// A fractional master solution restricted to one edge, together with the
/// lifted matrix entries for that pair.
#[derive(Debug, Clone, Copy)]
pub struct LiftedPair {
    pub z1: f64,
    pub z2: f64,
    pub x1: f64,
    pub x2: f64,
    /// Diagonal lift values `G_11, G_22` and the off-diagonal `G_12`.
    pub g11: f64,
    pub g12: f64,
    pub g22: f64,
}

impl LiftedPair {
    /// Slack of the conic rows `G_ii z_i >= x_i^2`; negative means violated.
    pub fn persp_slack(&self) -> f64 {
        (self.g11 * self.z1 - self.x1 * self.x1).min(self.g22 * self.z2 - self.x2 * self.x2)
    }

    fn select_z(&self) -> f64 {
        // Pick the side whose conic row is tighter relative to its lift.
        if safe_div(self.x1 * self.x1, self.g11) >= safe_div(self.x2 * self.x2, self.g22) {
            self.z1
        } else {
            self.z2
        }
    }
}

/// Weight of the most violated cut in the family `(d, 1/d)` at a lifted
/// point satisfying the conic rows.
///
/// The violation at weight `d` is `2v - den*d - num/d` with
/// `v = G_12 - x1 x2 / z`, `den = G_11 - x1^2 / z`, `num = G_22 - x2^2 / z`
/// at the selected `z`, so normally the maximizer is `sqrt(num/den)`. When
/// one side sits on its perspective row the supremum is only approached as
/// `d` runs to 0 or infinity, where the cut degenerates into that same row;
/// for a violated point this returns the finite weight keeping half the
/// supremum instead. Without violation the limit itself is returned as 0 or
/// `+inf` (callers cap it).
pub fn optimal_cut_weight(p: &LiftedPair) -> f64 {
    let zs = p.select_z();
    // Both differences are nonnegative up to rounding: the conic row bounds
    // the selected side, the ratio ordering the other. Clamp the noise.
    let den = (p.g11 - safe_div(p.x1 * p.x1, zs)).max(0.0);
    let num = (p.g22 - safe_div(p.x2 * p.x2, zs)).max(0.0);
    let v = p.g12 - safe_div(p.x1 * p.x2, zs);
    let eps = 1e-10 * (1.0 + p.g11.abs().max(p.g22.abs()));
    if den > eps && num > eps {
        (num / den).sqrt()
    } else if v > eps {
        if den > eps {
            v / den
        } else if num > eps {
            num / v
        } else {
            1.0
        }
    } else if den <= eps {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Violation of the most violated cut at a lifted point (positive means a
/// cut exists). Equal to half the supremum over `d` of [`cut_expr`].
pub fn cut_violation(p: &LiftedPair) -> f64 {
    let zs = p.select_z();
    let a = (p.g11 - safe_div(p.x1 * p.x1, zs)).max(0.0);
    let b = (p.g22 - safe_div(p.x2 * p.x2, zs)).max(0.0);
    p.g12 - safe_div(p.x1 * p.x2, zs) - (a * b).sqrt()
}

/// Cut expression at weight `d`:
/// `d * f(z1, z2, x1, x2/d) - (d G_11 - 2 G_12 + G_22 / d)`.
/// Positive values certify that the cut with this weight is violated.
pub fn cut_expr(d: f64, p: &LiftedPair) -> f64 {
    debug_assert!(d > 0.0 && d.is_finite());
    d * eval_f(p.z1, p.z2, p.x1, p.x2 / d) - (d * p.g11 - 2.0 * p.g12 + p.g22 / d)
}
