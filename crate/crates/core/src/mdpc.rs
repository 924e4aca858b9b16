//! Moment-driven predictive control.
//!
//! The Riccati gains are computed once on `[0, T]`. Between update events the
//! ensemble is driven by an open-loop law (linear companion or frozen state);
//! an update measures the nonlinear state, resynchronizes the law and
//! searches forward for the next grid time at which the analytic moment
//! bounds have drifted further than the tolerances allow.

use crate::bounds::{delta_m, variance_bounds, BoundContext, BoundLaw, GapWalker};
use crate::control::{evaluate_control, ControlKind, ControlMode, CostAccumulator};
use crate::ensemble::{Ensemble, Stepper};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MdpcMode {
    /// Open-loop control, updated when the variance gap exceeds `δ`.
    Sigma,
    /// Inexact open-loop control, updated on the variance gap or mean drift.
    MeanSigma,
    BaselineClosed,
    BaselineOpen,
    BaselineInexact,
}

impl MdpcMode {
    pub fn control_kind(self) -> ControlKind {
        match self {
            MdpcMode::BaselineClosed => ControlKind::ClosedLoop,
            MdpcMode::Sigma | MdpcMode::BaselineOpen => ControlKind::OpenLoop,
            MdpcMode::MeanSigma | MdpcMode::BaselineInexact => ControlKind::InexactOpenLoop,
        }
    }

    /// Law whose variance envelope is reported in the trace.
    pub fn bound_law(self) -> BoundLaw {
        match self.control_kind() {
            ControlKind::ClosedLoop => BoundLaw::ClosedLoop,
            ControlKind::OpenLoop => BoundLaw::OpenLoop,
            ControlKind::InexactOpenLoop => BoundLaw::Inexact,
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, MdpcMode::Sigma | MdpcMode::MeanSigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdpcConfig {
    pub delta: f64,
    pub tau: Option<f64>,
    pub mode: MdpcMode,
}

impl MdpcConfig {
    pub fn new(mode: MdpcMode, delta: f64, tau: Option<f64>) -> Result<Self> {
        let cfg = MdpcConfig { delta, tau, mode };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {}", self.delta)));
        }
        match (self.mode, self.tau) {
            (MdpcMode::MeanSigma, None) => Err(Error::InvalidParameter("mode mean_sigma requires tau".into())),
            (MdpcMode::MeanSigma, Some(tau)) if !(tau > 0.0) => {
                Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")))
            }
            (MdpcMode::MeanSigma, Some(_)) => Ok(()),
            (mode, Some(_)) => Err(Error::InvalidParameter(format!("tau is only used by mean_sigma, not {mode:?}"))),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateCause {
    VarianceGap,
    MeanDrift,
    None,
}

fn next_trigger_law(ctx: &BoundContext, sigma2_tk: f64, k_idx: usize, delta: f64, law: BoundLaw) -> Option<usize> {
    if sigma2_tk == 0.0 {
        return None;
    }
    GapWalker::new(ctx, k_idx, law)
        .find(|&(_, gap)| sigma2_tk * gap > delta)
        .map(|(i, _)| i)
}

/// First grid index `i > k_idx` with `Δ_σ(t_k, t_i) > δ` under the
/// open-loop envelope, or `None` if the gap stays below `δ` up to `T`.
pub fn next_trigger_sigma(ctx: &BoundContext, sigma2_tk: f64, k_idx: usize, delta: f64) -> Option<usize> {
    next_trigger_law(ctx, sigma2_tk, k_idx, delta, BoundLaw::OpenLoop)
}

/// Earlier of the inexact variance-gap trigger and the first grid index
/// `i > k_idx` with `Δ_m(t_k, t_i) > τ`. Ties are attributed to the gap.
pub fn next_trigger_mean_sigma(
    ctx: &BoundContext,
    sigma2_tk: f64,
    k_idx: usize,
    delta: f64,
    tau: f64,
) -> (Option<usize>, UpdateCause) {
    let t_delta = next_trigger_law(ctx, sigma2_tk, k_idx, delta, BoundLaw::Inexact);
    let horizon = t_delta.unwrap_or(ctx.ric.n_steps());
    let t_tau = (k_idx + 1..=horizon).find(|&i| delta_m(ctx, k_idx, i) > tau);
    match (t_delta, t_tau) {
        (Some(d), Some(m)) if m < d => (Some(m), UpdateCause::MeanDrift),
        (Some(d), _) => (Some(d), UpdateCause::VarianceGap),
        (None, Some(m)) => (Some(m), UpdateCause::MeanDrift),
        (None, None) => (None, UpdateCause::None),
    }
}

/// Everything a run needs: the stepper, the bound context (which owns the
/// Riccati solution), the initial ensemble and the consensus target.
pub struct Experiment<S: Stepper> {
    pub stepper: S,
    pub ctx: BoundContext,
    pub ensemble: Ensemble,
    pub target: Vec<f64>,
}

/// One time level of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub t: f64,
    pub m1: Vec<f64>,
    pub sigma2: f64,
    pub sigma2_se: f64,
    /// Variance of the linear companion.
    pub sigma2_w: f64,
    pub lower: f64,
    pub upper: f64,
    pub delta_sigma: f64,
    pub delta_m: f64,
    /// Cost accumulated up to and including this level.
    pub running_j: f64,
    /// Root mean square of the applied control.
    pub control_norm: f64,
}

pub type MomentTrace = Vec<TraceRow>;

#[derive(Debug, Clone, PartialEq)]
pub struct MdpcRun {
    pub config: MdpcConfig,
    pub update_times: Vec<f64>,
    pub update_indices: Vec<usize>,
    pub update_causes: Vec<UpdateCause>,
    pub trace: MomentTrace,
    pub final_sigma2: f64,
    pub final_m1: Vec<f64>,
    pub cost_j: f64,
    pub update_fraction: f64,
    pub n_steps: usize,
}

pub fn run_mdpc<S: Stepper>(cfg: &MdpcConfig, exp: Experiment<S>) -> Result<MdpcRun> {
    run_mdpc_observed(cfg, exp, |_, _| {})
}

/// As [`run_mdpc`], calling `observer(ensemble, n)` at every time level
/// before the step is taken.
pub fn run_mdpc_observed<S: Stepper>(
    cfg: &MdpcConfig,
    exp: Experiment<S>,
    mut observer: impl FnMut(&Ensemble, usize),
) -> Result<MdpcRun> {
    cfg.validate()?;
    let Experiment {
        stepper,
        ctx,
        mut ensemble,
        target,
    } = exp;
    let ric = ctx.ric.clone();
    if (stepper.dt() - ric.dt).abs() > 1e-12 * ric.dt {
        return Err(Error::InvalidParameter(format!(
            "stepper dt {} differs from Riccati grid dt {}",
            stepper.dt(),
            ric.dt
        )));
    }
    let n_t = ric.n_steps();
    let mode = ControlMode::new(cfg.mode.control_kind(), target.clone());
    let law = cfg.mode.bound_law();
    let mut cost = CostAccumulator::new(ric.nu, ric.dt, target);

    let search = |sigma2: f64, k: usize| -> (Option<usize>, UpdateCause) {
        match cfg.mode {
            MdpcMode::Sigma => {
                let next = next_trigger_sigma(&ctx, sigma2, k, cfg.delta);
                let cause = if next.is_some() {
                    UpdateCause::VarianceGap
                } else {
                    UpdateCause::None
                };
                (next, cause)
            }
            MdpcMode::MeanSigma => next_trigger_mean_sigma(&ctx, sigma2, k, cfg.delta, cfg.tau.unwrap_or(f64::INFINITY)),
            _ => (None, UpdateCause::None),
        }
    };

    let mut k_idx = 0;
    let mut sigma2_k = ensemble.moments().sigma2;
    let (mut next, mut next_cause) = search(sigma2_k, 0);
    let mut update_times = Vec::new();
    let mut update_indices = Vec::new();
    let mut update_causes = Vec::new();
    let mut trace = Vec::with_capacity(n_t + 1);

    for n in 0..=n_t {
        let mom = ensemble.moments();
        if next == Some(n) {
            match cfg.mode {
                MdpcMode::Sigma => ensemble.sync_companion(),
                MdpcMode::MeanSigma => ensemble.refreeze(),
                _ => {}
            }
            update_times.push(ric.times[n]);
            update_indices.push(n);
            update_causes.push(next_cause);
            k_idx = n;
            sigma2_k = mom.sigma2;
            (next, next_cause) = search(sigma2_k, n);
        }
        let env = variance_bounds(law, sigma2_k, &ctx, k_idx, n);
        let control = evaluate_control(&mode, &ensemble, &ric, n)?;
        cost.accumulate(&ensemble, &control)?;
        let control_norm = (control.iter().map(|u| u * u).sum::<f64>() / ensemble.n_samples as f64).sqrt();
        trace.push(TraceRow {
            step: n,
            t: ric.times[n],
            m1: mom.m1,
            sigma2: mom.sigma2,
            sigma2_se: mom.sigma2_se,
            sigma2_w: ensemble.companion_moments().sigma2,
            lower: env.lower,
            upper: env.upper,
            delta_sigma: env.upper - env.lower,
            delta_m: delta_m(&ctx, k_idx, n),
            running_j: cost.running_j,
            control_norm,
        });
        observer(&ensemble, n);
        if n < n_t {
            stepper.step(&mut ensemble, &control)?;
        }
    }

    let last = trace.last().expect("trace has at least one row");
    Ok(MdpcRun {
        config: *cfg,
        update_fraction: update_times.len() as f64 / n_t as f64,
        final_sigma2: last.sigma2,
        final_m1: last.m1.clone(),
        cost_j: cost.running_j,
        update_times,
        update_indices,
        update_causes,
        trace,
        n_steps: n_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelBounds;
    use crate::riccati::{solve_limit, RiccatiConfig};
    use std::sync::Arc;

    fn ctx() -> BoundContext {
        let ric = solve_limit(&RiccatiConfig::new(10.0, 0.01, 1.0, 0.01, None).unwrap()).unwrap();
        BoundContext::new(Arc::new(ric), KernelBounds { a: 0.0, b: 10.0 }).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(MdpcConfig::new(MdpcMode::Sigma, 0.1, None).is_ok());
        assert!(MdpcConfig::new(MdpcMode::Sigma, 0.0, None).is_err());
        assert!(MdpcConfig::new(MdpcMode::Sigma, 0.1, Some(1.0)).is_err());
        assert!(MdpcConfig::new(MdpcMode::MeanSigma, 0.1, None).is_err());
        assert!(MdpcConfig::new(MdpcMode::MeanSigma, 0.1, Some(-1.0)).is_err());
        assert!(MdpcConfig::new(MdpcMode::MeanSigma, 0.1, Some(2.0)).is_ok());
    }

    #[test]
    fn sigma_trigger_limits() {
        let ctx = ctx();
        assert_eq!(next_trigger_sigma(&ctx, 0.1, 0, 1e15), None);
        assert_eq!(next_trigger_sigma(&ctx, 0.1, 0, 1e-30), Some(1));
        assert_eq!(next_trigger_sigma(&ctx, 0.1, 42, 1e-30), Some(43));
        assert_eq!(next_trigger_sigma(&ctx, 0.0, 0, 1e-30), None);
        assert_eq!(next_trigger_sigma(&ctx, 0.1, 100, 1e-30), None);
    }

    #[test]
    fn sigma_trigger_is_first_crossing() {
        let ctx = ctx();
        let i = next_trigger_sigma(&ctx, 0.1, 5, 0.01).unwrap();
        assert!(i > 5);
        for j in 6..i {
            assert!(crate::bounds::delta_sigma(0.1, &ctx, 5, j, BoundLaw::OpenLoop) <= 0.01);
        }
        assert!(crate::bounds::delta_sigma(0.1, &ctx, 5, i, BoundLaw::OpenLoop) > 0.01);
    }

    #[test]
    fn mean_sigma_trigger_limits() {
        let ctx = ctx();
        assert_eq!(next_trigger_mean_sigma(&ctx, 0.1, 0, 1e15, 1e15), (None, UpdateCause::None));
        let (i, cause) = next_trigger_mean_sigma(&ctx, 0.1, 0, 1e15, 1.0);
        let i = i.unwrap();
        assert_eq!(cause, UpdateCause::MeanDrift);
        let x = |j: usize| (ctx.ric.kdko_cumint[j] - ctx.ric.kdko_cumint[0]) / ctx.nu;
        assert!(x(i) > 2.0 && x(i - 1) <= 2.0);
        let (_, cause) = next_trigger_mean_sigma(&ctx, 0.1, 0, 1e-30, 1.0);
        assert_eq!(cause, UpdateCause::VarianceGap);
    }
}
