//! Radial interaction kernels `P(v, w)`.
//!
//! Every kernel here depends on its arguments only through `|w - v|`, so the
//! hot loops call [`KernelKind::eval_sq`] with a squared distance and never
//! take a square root.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    /// `C · 1{|w - v| < η}` (Hegselmann–Krause bounded confidence).
    BoundedConfidence { strength: f64, radius: f64 },
    /// `α + K / (ς + |v - w|²)^γ`.
    CuckerSmale {
        alpha: f64,
        k: f64,
        varsigma: f64,
        gamma: f64,
    },
    /// `|w - v|^(α-2) - |w - v|^(β-2)`, with `0⁰ := 1`.
    AttractionRepulsion { attraction: f64, repulsion: f64 },
}

/// `(r²)^e` with `0⁰ = 1`; integer exponents go through `powi`.
#[inline]
fn pow_sq(r2: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e.fract() == 0.0 && e.abs() < 64.0 {
        r2.powi(e as i32)
    } else {
        r2.powf(e)
    }
}

impl KernelKind {
    /// Kernel value as a function of the squared distance `|w - v|²`.
    #[inline]
    pub fn eval_sq(&self, r2: f64) -> f64 {
        match *self {
            KernelKind::BoundedConfidence { strength, radius } => {
                if r2 < radius * radius {
                    strength
                } else {
                    0.0
                }
            }
            KernelKind::CuckerSmale {
                alpha,
                k,
                varsigma,
                gamma,
            } => alpha + k / pow_sq(varsigma + r2, gamma),
            KernelKind::AttractionRepulsion {
                attraction,
                repulsion,
            } => pow_sq(r2, (attraction - 2.0) / 2.0) - pow_sq(r2, (repulsion - 2.0) / 2.0),
        }
    }

    /// `P(v, w)` for two state vectors of equal dimension.
    pub fn evaluate(&self, v: &[f64], w: &[f64]) -> Result<f64> {
        if v.len() != w.len() {
            return Err(Error::DimensionMismatch {
                expected: v.len(),
                got: w.len(),
            });
        }
        Ok(self.eval_sq(squared_distance(v, w)))
    }

    /// `(a, b)` with `P ∈ [-a, b]` for all pairs at distance at most
    /// `domain_radius` (which may be infinite).
    pub fn bounds(&self, domain_radius: f64) -> KernelBounds {
        match *self {
            KernelKind::BoundedConfidence { strength, .. } => {
                KernelBounds::from_range(strength.min(0.0), strength.max(0.0))
            }
            KernelKind::CuckerSmale {
                alpha,
                k,
                varsigma,
                gamma,
            } => {
                // Monotone in r², so the extremes sit at the ends of [0, R²].
                let at_zero = self.eval_sq(0.0);
                let at_edge = if domain_radius.is_finite() {
                    self.eval_sq(domain_radius * domain_radius)
                } else if gamma > 0.0 {
                    alpha
                } else {
                    alpha + k / pow_sq(varsigma, gamma)
                };
                KernelBounds::from_range(at_zero.min(at_edge), at_zero.max(at_edge))
            }
            KernelKind::AttractionRepulsion {
                attraction,
                repulsion,
            } => {
                let p = attraction - 2.0;
                let q = repulsion - 2.0;
                let mut candidates = vec![self.eval_sq(0.0)];
                if domain_radius.is_finite() {
                    candidates.push(self.eval_sq(domain_radius * domain_radius));
                } else {
                    candidates.push(if p > 0.0 || q > 0.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    });
                }
                // Stationary point of r^p - r^q.
                if p != q && p != 0.0 && q / p > 0.0 {
                    let r_star = (q / p).powf(1.0 / (p - q));
                    if r_star > 0.0 && r_star < domain_radius {
                        candidates.push(self.eval_sq(r_star * r_star));
                    }
                }
                if candidates.iter().any(|c| c.is_nan()) {
                    return KernelBounds {
                        a: f64::INFINITY,
                        b: f64::INFINITY,
                    };
                }
                let lo = candidates.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = candidates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                KernelBounds::from_range(lo, hi)
            }
        }
    }

    /// `p̄ = P(v̄, v̄)`.
    pub fn linearization_coefficient(&self, _v_bar: &[f64]) -> f64 {
        // Radial kernels take the same value at every diagonal point.
        self.eval_sq(0.0)
    }
}

#[inline]
pub fn squared_distance(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(a, b)| (b - a) * (b - a)).sum()
}

/// Kernel range `P ∈ [-a, b]` with `a, b ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelBounds {
    pub a: f64,
    pub b: f64,
}

impl KernelBounds {
    fn from_range(lo: f64, hi: f64) -> Self {
        KernelBounds {
            a: (-lo).max(0.0),
            b: hi.max(0.0),
        }
    }
}

/// A kernel together with the bounds that hold on the simulation domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub lower_a: f64,
    pub upper_b: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, domain_radius: f64) -> Self {
        let KernelBounds { a, b } = kind.bounds(domain_radius);
        KernelSpec {
            kind,
            lower_a: a,
            upper_b: b,
        }
    }

    pub fn evaluate(&self, v: &[f64], w: &[f64]) -> Result<f64> {
        self.kind.evaluate(v, w)
    }
}
