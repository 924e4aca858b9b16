//! Riccati-based feedback laws and the discretized cost functional.

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::riccati::RiccatiSolution;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlKind {
    /// Feedback on the measured nonlinear state `v`.
    ClosedLoop,
    /// Feedback on the co-simulated linear companion `w`.
    OpenLoop,
    /// Feedback on the state `v0` frozen at the last measurement.
    InexactOpenLoop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlMode {
    pub kind: ControlKind,
    /// Consensus target `ṽ`.
    pub target: Vec<f64>,
}

impl ControlMode {
    pub fn new(kind: ControlKind, target: Vec<f64>) -> Self {
        ControlMode { kind, target }
    }

    /// Target at the origin in `dim` dimensions.
    pub fn at_origin(kind: ControlKind, dim: usize) -> Self {
        ControlMode {
            kind,
            target: vec![0.0; dim],
        }
    }
}

/// `u_i = -(1/ν) (g_self (z_i - ṽ) + k_o (m̂₁[z] - ṽ))` at grid index
/// `t_index`, where `g_self = k_d` for the mean-field limit and
/// `k_d - k_o/N` for a finite-`N` solution.
pub fn evaluate_control(
    mode: &ControlMode,
    ens: &Ensemble,
    ric: &RiccatiSolution,
    t_index: usize,
) -> Result<Vec<f64>> {
    ric.check_index(t_index)?;
    let dim = ens.dim;
    if mode.target.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: mode.target.len(),
        });
    }
    let z = match mode.kind {
        ControlKind::ClosedLoop => &ens.v,
        ControlKind::OpenLoop => &ens.w,
        ControlKind::InexactOpenLoop => &ens.v0,
    };
    let mean = stats::mean(z, dim);
    let g_self = ric.self_gain(t_index) / ric.nu;
    let g_mean = ric.ko[t_index] / ric.nu;
    let shared: Vec<f64> = (0..dim)
        .map(|c| g_mean * (mean[c] - mode.target[c]))
        .collect();
    Ok(z
        .iter()
        .enumerate()
        .map(|(k, zk)| {
            let c = k % dim;
            -(g_self * (zk - mode.target[c]) + shared[c])
        })
        .collect())
}

/// Running value of `J = (Δt/N_s) Σ_n Σ_j (|v_j - ṽ|² + ν |u_j|²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostAccumulator {
    pub running_j: f64,
    pub nu: f64,
    pub dt: f64,
    pub n_steps_applied: usize,
    pub target: Vec<f64>,
}

impl CostAccumulator {
    pub fn new(nu: f64, dt: f64, target: Vec<f64>) -> Self {
        CostAccumulator {
            running_j: 0.0,
            nu,
            dt,
            n_steps_applied: 0,
            target,
        }
    }

    /// Adds one time level's contribution and returns it.
    pub fn accumulate(&mut self, ens: &Ensemble, controls: &[f64]) -> Result<f64> {
        if controls.len() != ens.v.len() {
            return Err(Error::DimensionMismatch {
                expected: ens.v.len(),
                got: controls.len(),
            });
        }
        let dim = ens.dim;
        let terms: Vec<f64> = ens
            .v
            .chunks_exact(dim)
            .zip(controls.chunks_exact(dim))
            .map(|(v, u)| {
                let state: f64 = v
                    .iter()
                    .zip(&self.target)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let effort: f64 = u.iter().map(|x| x * x).sum();
                state + self.nu * effort
            })
            .collect();
        let inc = self.dt / ens.n_samples as f64 * stats::pairwise_sum(&terms);
        self.running_j += inc;
        self.n_steps_applied += 1;
        Ok(inc)
    }
}
