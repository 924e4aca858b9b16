//! Analytic moment decay for the three Riccati control laws.
//!
//! With a kernel confined to `[-a, b]` the mean and variance of the
//! controlled nonlinear density obey comparison bounds that only involve the
//! Riccati gains. All quantities are evaluated on the Riccati grid: a window
//! `[t0, t]` is given by grid indices `(i0, i)` with `i0 ≤ i`, elapsed times
//! `s - t0` appear in the exponentials, and integrals use the trapezoid rule
//! on the grid nodes.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::KernelBounds;
use crate::riccati::RiccatiSolution;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundContext {
    pub ric: Arc<RiccatiSolution>,
    pub kernel_a: f64,
    pub kernel_b: f64,
    pub p_bar: f64,
    pub nu: f64,
}

impl BoundContext {
    pub fn new(ric: Arc<RiccatiSolution>, bounds: KernelBounds) -> Result<Self> {
        if !(bounds.a >= 0.0 && bounds.b >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel bounds must be nonnegative, got {bounds:?}"
            )));
        }
        Ok(BoundContext {
            p_bar: ric.p_bar,
            nu: ric.nu,
            ric,
            kernel_a: bounds.a,
            kernel_b: bounds.b,
        })
    }

    fn elapsed(&self, i0: usize, i: usize) -> f64 {
        self.ric.times[i] - self.ric.times[i0]
    }

    /// `(1/ν) ∫_{t0}^{t} k_d`.
    fn kd_integral(&self, i0: usize, i: usize) -> f64 {
        (self.ric.kd_cumint[i] - self.ric.kd_cumint[i0]) / self.nu
    }

    /// `(1/ν) ∫_{t0}^{t} (k_d + k_o)`.
    fn sum_integral(&self, i0: usize, i: usize) -> f64 {
        (self.ric.kdko_cumint[i] - self.ric.kdko_cumint[i0]) / self.nu
    }
}

/// Which variance estimate a trigger or envelope refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundLaw {
    /// Open-loop control through the linear companion (weights `β`).
    OpenLoop,
    /// Inexact open-loop control (`β ≡ 1`).
    Inexact,
    /// Closed-loop feedback.
    ClosedLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub lower: f64,
    pub upper: f64,
}

/// `m1_0 exp(-(1/ν) ∫_{t0}^{t} (k_d + k_o))`.
pub fn mean_decay_open_loop(m1_0: &[f64], ctx: &BoundContext, i0: usize, i: usize) -> Vec<f64> {
    let f = (-ctx.sum_integral(i0, i)).exp();
    m1_0.iter().map(|m| m * f).collect()
}

/// `m1_0 (1 - (1/ν) ∫_{t0}^{t} (k_d + k_o))`.
pub fn mean_decay_inexact(m1_0: &[f64], ctx: &BoundContext, i0: usize, i: usize) -> Vec<f64> {
    let f = 1.0 - ctx.sum_integral(i0, i);
    m1_0.iter().map(|m| m * f).collect()
}

/// `β(t - t0) = exp(-2 p̄ (t - t0) - (1/ν) ∫_{t0}^{t} k_d)`.
pub fn beta_factor(ctx: &BoundContext, i0: usize, i: usize) -> f64 {
    (-2.0 * ctx.p_bar * ctx.elapsed(i0, i) - ctx.kd_integral(i0, i)).exp()
}

fn b_integrand(ctx: &BoundContext, c: f64, sign: Sign, weighted: bool, i0: usize, j: usize) -> f64 {
    let tau = ctx.elapsed(i0, j);
    let beta = if weighted { beta_factor(ctx, i0, j) } else { 1.0 };
    let e = match sign {
        Sign::Plus => c * tau,
        Sign::Minus => -c * tau,
    };
    beta * ctx.ric.kd[j] * e.exp()
}

fn b_integral(ctx: &BoundContext, c: f64, sign: Sign, weighted: bool, i0: usize, i: usize) -> f64 {
    let mut acc = 0.0;
    let mut prev = b_integrand(ctx, c, sign, weighted, i0, i0);
    for j in i0 + 1..=i {
        let cur = b_integrand(ctx, c, sign, weighted, i0, j);
        acc += 0.5 * (ctx.ric.times[j] - ctx.ric.times[j - 1]) * (prev + cur);
        prev = cur;
    }
    acc / ctx.nu
}

/// `B^±_c(t0, t) = (1/ν) ∫_{t0}^{t} β(s - t0) k_d(s) e^{±c(s - t0)} ds`.
pub fn bound_b(ctx: &BoundContext, c: f64, sign: Sign, i0: usize, i: usize) -> f64 {
    b_integral(ctx, c, sign, true, i0, i)
}

/// `B^±_c` with `β ≡ 1`, for the inexact law.
pub fn bound_b_inexact(ctx: &BoundContext, c: f64, sign: Sign, i0: usize, i: usize) -> f64 {
    b_integral(ctx, c, sign, false, i0, i)
}

fn comparison_envelope(sigma2_0: f64, ctx: &BoundContext, elapsed: f64, b_minus: f64, b_plus: f64) -> Envelope {
    let shrink = (1.0 - b_plus).max(0.0);
    Envelope {
        lower: sigma2_0 * (-2.0 * ctx.kernel_b * elapsed).exp() * shrink * shrink,
        upper: sigma2_0 * (2.0 * ctx.kernel_a * elapsed).exp() * (1.0 + b_minus) * (1.0 + b_minus),
    }
}

/// Variance envelope under the open-loop law. The lower bound is reported
/// as 0 once `1 - B⁺_b` changes sign.
pub fn variance_bounds_open_loop(sigma2_0: f64, ctx: &BoundContext, i0: usize, i: usize) -> Envelope {
    if i == i0 {
        return Envelope {
            lower: sigma2_0,
            upper: sigma2_0,
        };
    }
    let b_minus = bound_b(ctx, ctx.kernel_a, Sign::Minus, i0, i);
    let b_plus = bound_b(ctx, ctx.kernel_b, Sign::Plus, i0, i);
    comparison_envelope(sigma2_0, ctx, ctx.elapsed(i0, i), b_minus, b_plus)
}

/// Variance envelope under the inexact open-loop law.
pub fn variance_bounds_inexact(sigma2_0: f64, ctx: &BoundContext, i0: usize, i: usize) -> Envelope {
    if i == i0 {
        return Envelope {
            lower: sigma2_0,
            upper: sigma2_0,
        };
    }
    let b_minus = bound_b_inexact(ctx, ctx.kernel_a, Sign::Minus, i0, i);
    let b_plus = bound_b_inexact(ctx, ctx.kernel_b, Sign::Plus, i0, i);
    comparison_envelope(sigma2_0, ctx, ctx.elapsed(i0, i), b_minus, b_plus)
}

/// Variance envelope under closed-loop feedback,
/// `σ²₀ e^{-2b(t-t0)} C ≤ σ² ≤ σ²₀ e^{2a(t-t0)} C` with
/// `C = exp(-(2/ν) ∫_{t0}^{t} k_d)`.
pub fn variance_bounds_closed_loop(sigma2_0: f64, ctx: &BoundContext, i0: usize, i: usize) -> Envelope {
    if i == i0 {
        return Envelope {
            lower: sigma2_0,
            upper: sigma2_0,
        };
    }
    let elapsed = ctx.elapsed(i0, i);
    let c = (-2.0 * ctx.kd_integral(i0, i)).exp();
    Envelope {
        lower: sigma2_0 * (-2.0 * ctx.kernel_b * elapsed).exp() * c,
        upper: sigma2_0 * (2.0 * ctx.kernel_a * elapsed).exp() * c,
    }
}

pub fn variance_bounds(law: BoundLaw, sigma2_0: f64, ctx: &BoundContext, i0: usize, i: usize) -> Envelope {
    match law {
        BoundLaw::OpenLoop => variance_bounds_open_loop(sigma2_0, ctx, i0, i),
        BoundLaw::Inexact => variance_bounds_inexact(sigma2_0, ctx, i0, i),
        BoundLaw::ClosedLoop => variance_bounds_closed_loop(sigma2_0, ctx, i0, i),
    }
}

/// Gap `Δ_σ(t0, t)` between the upper and lower variance envelopes.
pub fn delta_sigma(sigma2_t0: f64, ctx: &BoundContext, i0: usize, i: usize, law: BoundLaw) -> f64 {
    let env = variance_bounds(law, sigma2_t0, ctx, i0, i);
    env.upper - env.lower
}

/// `Δ_m(t0, t) = |1 - (1/ν) ∫_{t0}^{t} (k_d + k_o)|`.
pub fn delta_m(ctx: &BoundContext, i0: usize, i: usize) -> f64 {
    (1.0 - ctx.sum_integral(i0, i)).abs()
}

/// Walks `Δ_σ(t0, ·) / σ²_{t0}` forward from `i0`, updating the `B^±`
/// trapezoid sums incrementally. Yields `(i, gap)` for `i > i0`.
pub struct GapWalker<'a> {
    ctx: &'a BoundContext,
    law: BoundLaw,
    i0: usize,
    i: usize,
    b_minus: f64,
    b_plus: f64,
    prev_minus: f64,
    prev_plus: f64,
}

impl<'a> GapWalker<'a> {
    pub fn new(ctx: &'a BoundContext, i0: usize, law: BoundLaw) -> Self {
        let weighted = law == BoundLaw::OpenLoop;
        GapWalker {
            ctx,
            law,
            i0,
            i: i0,
            b_minus: 0.0,
            b_plus: 0.0,
            prev_minus: b_integrand(ctx, ctx.kernel_a, Sign::Minus, weighted, i0, i0),
            prev_plus: b_integrand(ctx, ctx.kernel_b, Sign::Plus, weighted, i0, i0),
        }
    }
}

impl Iterator for GapWalker<'_> {
    type Item = (usize, f64);

    fn next(&mut self) -> Option<(usize, f64)> {
        if self.i >= self.ctx.ric.n_steps() {
            return None;
        }
        self.i += 1;
        let (ctx, i0, j) = (self.ctx, self.i0, self.i);
        if self.law == BoundLaw::ClosedLoop {
            return Some((j, delta_sigma(1.0, ctx, i0, j, BoundLaw::ClosedLoop)));
        }
        let weighted = self.law == BoundLaw::OpenLoop;
        let h = 0.5 * (ctx.ric.times[j] - ctx.ric.times[j - 1]) / ctx.nu;
        let cur_minus = b_integrand(ctx, ctx.kernel_a, Sign::Minus, weighted, i0, j);
        let cur_plus = b_integrand(ctx, ctx.kernel_b, Sign::Plus, weighted, i0, j);
        self.b_minus += h * (self.prev_minus + cur_minus);
        self.b_plus += h * (self.prev_plus + cur_plus);
        self.prev_minus = cur_minus;
        self.prev_plus = cur_plus;
        let env = comparison_envelope(1.0, ctx, ctx.elapsed(i0, j), self.b_minus, self.b_plus);
        Some((j, env.upper - env.lower))
    }
}
