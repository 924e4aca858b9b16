//! Particle ensembles and their time steppers.
//!
//! An [`Ensemble`] carries the nonlinear states `v`, the linear companion
//! states `w` driven by the frozen kernel `p̄`, optional positions `x` for
//! second-order models and the snapshot `v0` used by the inexact open-loop
//! law. Updates are Jacobi-style: every particle reads the previous state and
//! writes into a fresh buffer, so the result does not depend on how the
//! particle loop is scheduled across threads.
//!
//! Random subsamples are drawn from a ChaCha stream keyed by the run seed,
//! positioned by `(step, particle)`. Any particle's draws can be regenerated
//! independently of all others, which makes trajectories identical for every
//! worker count.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{squared_distance, KernelKind};
use crate::stats;

const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    First,
    Second,
}

/// Which state the kernel reads in a second-order model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coupling {
    #[default]
    Position,
    Velocity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialDistribution {
    /// Uniform law on `[lo, hi]` (first order, `d = 1`).
    UniformInterval { lo: f64, hi: f64 },
    /// Phase-space density `N(0, σ_x²)` in position times an equal-weight
    /// Gaussian mixture in velocity with modes at `-v_minus` and `-v_plus`.
    BimodalGaussian2D {
        sigma_x: f64,
        sigma_v: f64,
        v_minus: f64,
        v_plus: f64,
    },
    /// Uniform law on a disc in the plane (first order, `d = 2`).
    UniformDisc { center: [f64; 2], radius: f64 },
}

impl InitialDistribution {
    pub fn order(&self) -> Order {
        match self {
            InitialDistribution::BimodalGaussian2D { .. } => Order::Second,
            _ => Order::First,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialDistribution::UniformDisc { .. } => 2,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitialDistribution::UniformInterval { lo, hi } => lo < hi,
            InitialDistribution::BimodalGaussian2D {
                sigma_x, sigma_v, ..
            } => sigma_x > 0.0 && sigma_v > 0.0,
            InitialDistribution::UniformDisc { radius, .. } => radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("degenerate initial distribution {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub order: Order,
    pub dim: usize,
    /// Nonlinear states (velocities for second order), row-major `N × dim`.
    pub v: Vec<f64>,
    /// Linear companion states.
    pub w: Vec<f64>,
    /// Positions, second order only.
    pub x: Option<Vec<f64>>,
    /// States frozen at the last measurement, read by the inexact law.
    pub v0: Vec<f64>,
    pub n_samples: usize,
    pub step_index: u64,
    pub rng_seed: u64,
}

impl Ensemble {
    /// Builds an ensemble from explicit states, duplicating `v` into `w` and
    /// `v0`.
    pub fn from_states(dim: usize, v: Vec<f64>, x: Option<Vec<f64>>, seed: u64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM || v.len() % dim != 0 || v.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "cannot shape {} values into rows of dimension {dim}",
                v.len()
            )));
        }
        if let Some(x) = &x {
            if x.len() != v.len() {
                return Err(Error::DimensionMismatch {
                    expected: v.len(),
                    got: x.len(),
                });
            }
        }
        Ok(Ensemble {
            order: if x.is_some() { Order::Second } else { Order::First },
            dim,
            n_samples: v.len() / dim,
            w: v.clone(),
            v0: v.clone(),
            v,
            x,
            step_index: 0,
            rng_seed: seed,
        })
    }

    /// Draws `n_samples` i.i.d. particles from `dist`.
    pub fn sample(dist: &InitialDistribution, n_samples: usize, seed: u64) -> Result<Self> {
        dist.validate()?;
        if n_samples < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 samples, got {n_samples}"
            )));
        }
        // The initial draw uses its own stream so it never overlaps the
        // per-step subsampling streams.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let unit = Uniform::new(0.0, 1.0).expect("valid range");
        match *dist {
            InitialDistribution::UniformInterval { lo, hi } => {
                let law = Uniform::new(lo, hi).expect("validated range");
                let v = (0..n_samples).map(|_| law.sample(&mut rng)).collect();
                Self::from_states(1, v, None, seed)
            }
            InitialDistribution::BimodalGaussian2D {
                sigma_x,
                sigma_v,
                v_minus,
                v_plus,
            } => {
                let pos = Normal::new(0.0, sigma_x).expect("validated");
                let vel = Normal::new(0.0, sigma_v).expect("validated");
                let mut x = Vec::with_capacity(n_samples);
                let mut v = Vec::with_capacity(n_samples);
                for _ in 0..n_samples {
                    x.push(pos.sample(&mut rng));
                    let mode = if rng.random_bool(0.5) { -v_minus } else { -v_plus };
                    v.push(mode + vel.sample(&mut rng));
                }
                Self::from_states(1, v, Some(x), seed)
            }
            InitialDistribution::UniformDisc { center, radius } => {
                let mut v = Vec::with_capacity(2 * n_samples);
                for _ in 0..n_samples {
                    let u: f64 = unit.sample(&mut rng);
                    let r = radius * u.sqrt();
                    let theta = std::f64::consts::TAU * unit.sample(&mut rng);
                    v.push(center[0] + r * theta.cos());
                    v.push(center[1] + r * theta.sin());
                }
                Self::from_states(2, v, None, seed)
            }
        }
    }

    /// Current time index `n` of the ensemble.
    pub fn step(&self) -> u64 {
        self.step_index
    }

    pub fn moments(&self) -> stats::Moments {
        stats::moments(&self.v, self.dim)
    }

    pub fn companion_moments(&self) -> stats::Moments {
        stats::moments(&self.w, self.dim)
    }

    /// Measurement event: the linear companion restarts from the nonlinear state.
    pub fn sync_companion(&mut self) {
        self.w.copy_from_slice(&self.v);
    }

    /// Measurement event for the inexact law: refreeze `v0`.
    pub fn refreeze(&mut self) {
        self.v0.copy_from_slice(&self.v);
    }

    /// Upper bound on the diameter of the current state cloud.
    pub fn diameter_bound(&self, coupling_on_positions: bool) -> f64 {
        let states = match (&self.x, coupling_on_positions) {
            (Some(x), true) => x,
            _ => &self.v,
        };
        let m = stats::mean(states, self.dim);
        let r2 = states
            .chunks_exact(self.dim)
            .map(|p| squared_distance(p, &m))
            .fold(0.0, f64::max);
        2.0 * r2.sqrt()
    }

    fn check_control(&self, control: &[f64]) -> Result<()> {
        if control.len() != self.v.len() {
            return Err(Error::DimensionMismatch {
                expected: self.v.len(),
                got: control.len(),
            });
        }
        Ok(())
    }
}

/// Stream positioned at `(step, particle)` for a given run seed.
fn particle_rng(base: &ChaCha8Rng, particle: usize) -> ChaCha8Rng {
    let mut rng = base.clone();
    rng.set_word_pos((particle as u128) << 32);
    rng
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Time stepper for an ensemble under a given per-particle control.
pub trait Stepper: Sync {
    fn dt(&self) -> f64;
    fn step(&self, ens: &mut Ensemble, control: &[f64]) -> Result<()>;
}

/// Mean-field Monte Carlo stepper: the nonlocal interaction of particle `i`
/// is estimated from `M` partners drawn without replacement from the other
/// `N_s - 1` particles.
#[derive(Debug, Clone, PartialEq)]
pub struct MfmcStepper {
    pub kernel: KernelKind,
    pub p_bar: f64,
    pub subsample: usize,
    pub dt: f64,
    pub coupling: Coupling,
}

/// Kernel-weighted interaction estimate for one particle.
struct Interaction {
    /// `P̂_i`.
    p_hat: f64,
    /// `P̂_i V̂_i = (1/M) Σ_k P(·, ·) v_k`.
    weighted: [f64; MAX_DIM],
}

impl MfmcStepper {
    fn interaction(
        &self,
        i: usize,
        base: &ChaCha8Rng,
        kernel_states: &[f64],
        v: &[f64],
        dim: usize,
        n: usize,
    ) -> Interaction {
        let m = self.subsample.min(n - 1);
        let mut p_sum = 0.0;
        let mut weighted = [0.0; MAX_DIM];
        let zi = &kernel_states[i * dim..(i + 1) * dim];
        let mut visit = |j: usize| {
            let p = self
                .kernel
                .eval_sq(squared_distance(zi, &kernel_states[j * dim..(j + 1) * dim]));
            p_sum += p;
            for c in 0..dim {
                weighted[c] += p * v[j * dim + c];
            }
        };
        if m == n - 1 {
            (0..n).filter(|&j| j != i).for_each(&mut visit);
        } else if m > 0 {
            let mut rng = particle_rng(base, i);
            for k in index::sample(&mut rng, n - 1, m) {
                visit(if k >= i { k + 1 } else { k });
            }
        }
        let inv = if m > 0 { 1.0 / m as f64 } else { 0.0 };
        for wc in weighted.iter_mut().take(dim) {
            *wc *= inv;
        }
        Interaction {
            p_hat: p_sum * inv,
            weighted,
        }
    }

    /// Velocity (or state) update for every particle against the snapshot
    /// `v`, with the kernel read from `kernel_states`.
    fn update_states(&self, ens: &Ensemble, kernel_states: &[f64], control: &[f64]) -> Vec<f64> {
        let (dim, n, dt) = (ens.dim, ens.n_samples, self.dt);
        let base = step_rng(ens.rng_seed, ens.step_index);
        let v = &ens.v;
        let mut out = vec![0.0; v.len()];
        out.par_chunks_mut(dim).enumerate().for_each(|(i, row)| {
            let est = self.interaction(i, &base, kernel_states, v, dim, n);
            for c in 0..dim {
                let vi = v[i * dim + c];
                // V̂_i := v_i when P̂_i = 0, so the interaction drops out.
                let drift = if est.p_hat == 0.0 {
                    vi
                } else {
                    (1.0 - dt * est.p_hat) * vi + dt * est.weighted[c]
                };
                row[c] = drift + dt * control[i * dim + c];
            }
        });
        out
    }

    pub fn step_first_order(&self, ens: &mut Ensemble, control: &[f64]) -> Result<()> {
        if ens.order != Order::First {
            return Err(Error::InvalidParameter("first-order step on a second-order ensemble".into()));
        }
        ens.check_control(control)?;
        let v_new = self.update_states(ens, &ens.v, control);
        let w_new = companion_update(ens, self.p_bar, self.dt, control);
        commit(ens, v_new, w_new, None)
    }

    /// Lie splitting: free transport of positions, then the velocity
    /// interaction and control.
    pub fn step_second_order(&self, ens: &mut Ensemble, control: &[f64]) -> Result<()> {
        if ens.order != Order::Second {
            return Err(Error::InvalidParameter("second-order step on a first-order ensemble".into()));
        }
        ens.check_control(control)?;
        let x_new = transport(ens, self.dt);
        let kernel_states = match self.coupling {
            Coupling::Position => &x_new,
            Coupling::Velocity => &ens.v,
        };
        let v_new = self.update_states(ens, kernel_states, control);
        let w_new = companion_update(ens, self.p_bar, self.dt, control);
        commit(ens, v_new, w_new, Some(x_new))
    }
}

impl Stepper for MfmcStepper {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, ens: &mut Ensemble, control: &[f64]) -> Result<()> {
        match ens.order {
            Order::First => self.step_first_order(ens, control),
            Order::Second => self.step_second_order(ens, control),
        }
    }
}

fn transport(ens: &Ensemble, dt: f64) -> Vec<f64> {
    let x = ens.x.as_ref().expect("second-order ensemble carries positions");
    x.iter().zip(&ens.v).map(|(x, v)| x + dt * v).collect()
}

/// `w ← (1 - Δt p̄) w + Δt p̄ m̂₁[w] + Δt u`.
fn companion_update(ens: &Ensemble, p_bar: f64, dt: f64, control: &[f64]) -> Vec<f64> {
    let dim = ens.dim;
    let mean = stats::mean(&ens.w, dim);
    ens.w
        .iter()
        .zip(control)
        .enumerate()
        .map(|(k, (w, u))| (1.0 - dt * p_bar) * w + dt * p_bar * mean[k % dim] + dt * u)
        .collect()
}

fn commit(ens: &mut Ensemble, v: Vec<f64>, w: Vec<f64>, x: Option<Vec<f64>>) -> Result<()> {
    let finite = v.iter().chain(&w).all(|z| z.is_finite())
        && x.as_ref().is_none_or(|x| x.iter().all(|z| z.is_finite()));
    if !finite {
        return Err(Error::EnsembleDivergence {
            step: ens.step_index,
        });
    }
    ens.v = v;
    ens.w = w;
    if x.is_some() {
        ens.x = x;
    }
    ens.step_index += 1;
    Ok(())
}

/// Explicit Euler step of `v̇_i = (1/N) Σ_j P(v_i, v_j)(v_j - v_i) + u_i`
/// with the exact all-pairs sum.
pub fn microscopic_step_exact(
    states: &[f64],
    dim: usize,
    kernel: &KernelKind,
    control: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    exact_interaction_step(states, states, dim, kernel, control, dt)
}

/// All-pairs step where the kernel reads `kernel_states` (positions for
/// second-order models) and the drift acts on `states`.
fn exact_interaction_step(
    states: &[f64],
    kernel_states: &[f64],
    dim: usize,
    kernel: &KernelKind,
    control: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    if control.len() != states.len() {
        return Err(Error::DimensionMismatch {
            expected: states.len(),
            got: control.len(),
        });
    }
    let n = states.len() / dim;
    let mut out = vec![0.0; states.len()];
    out.par_chunks_mut(dim).enumerate().for_each(|(i, row)| {
        let zi = &kernel_states[i * dim..(i + 1) * dim];
        let mut drift = [0.0; MAX_DIM];
        for j in 0..n {
            let p = kernel.eval_sq(squared_distance(zi, &kernel_states[j * dim..(j + 1) * dim]));
            for c in 0..dim {
                drift[c] += p * (states[j * dim + c] - states[i * dim + c]);
            }
        }
        for c in 0..dim {
            row[c] = states[i * dim + c] + dt * (drift[c] / n as f64 + control[i * dim + c]);
        }
    });
    if out.iter().all(|z| z.is_finite()) {
        Ok(out)
    } else {
        Err(Error::EnsembleDivergence { step: 0 })
    }
}

/// Exact all-pairs stepper for small microscopic systems (`N ≲ 10³`).
#[derive(Debug, Clone, PartialEq)]
pub struct ExactStepper {
    pub kernel: KernelKind,
    pub p_bar: f64,
    pub dt: f64,
    pub coupling: Coupling,
}

impl Stepper for ExactStepper {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, ens: &mut Ensemble, control: &[f64]) -> Result<()> {
        ens.check_control(control)?;
        let step = ens.step_index;
        let diverged = |e| match e {
            Error::EnsembleDivergence { .. } => Error::EnsembleDivergence { step },
            other => other,
        };
        let (v_new, x_new) = match ens.order {
            Order::First => (
                microscopic_step_exact(&ens.v, ens.dim, &self.kernel, control, self.dt)
                    .map_err(diverged)?,
                None,
            ),
            Order::Second => {
                let x_new = transport(ens, self.dt);
                let kernel_states = match self.coupling {
                    Coupling::Position => &x_new,
                    Coupling::Velocity => &ens.v,
                };
                let v_new =
                    exact_interaction_step(&ens.v, kernel_states, ens.dim, &self.kernel, control, self.dt)
                        .map_err(diverged)?;
                (v_new, Some(x_new))
            }
        };
        let w_new = companion_update(ens, self.p_bar, self.dt, control);
        commit(ens, v_new, w_new, x_new)
    }
}
