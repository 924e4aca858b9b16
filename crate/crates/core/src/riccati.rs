//! Differential Riccati equations for all-to-all consensus coupling.
//!
//! For the Laplacian `A` with diagonal `p̄(1-N)/N` and off-diagonal `p̄/N`,
//! the `N × N` Riccati matrix keeps the structure
//! `K_ij = δ_ij k_d + (1 - δ_ij) k_o`, so the backward problem reduces to two
//! scalar ODEs. After the scaling `k_d ← N k_d`, `k_o ← N² k_o` the reduced
//! system has a well-defined `N → ∞` limit.
//!
//! Integration is classical RK4 in reversed time `τ = T - t` on the uniform
//! simulation grid (optionally with a fixed number of RK4 substeps per grid
//! interval), so every simulation step reads its gains without interpolation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiConfig {
    /// Linearization coefficient `p̄`.
    pub p_bar: f64,
    /// Control penalty `ν`.
    pub nu: f64,
    pub horizon: f64,
    /// `None` selects the mean-field limit system.
    pub n_agents: Option<usize>,
    pub dt: f64,
    /// RK4 substeps per grid interval.
    pub substeps: usize,
}

impl RiccatiConfig {
    /// Validated configuration with an automatic substep count.
    pub fn new(p_bar: f64, nu: f64, horizon: f64, dt: f64, n_agents: Option<usize>) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidParameter(format!("nu must be positive, got {nu}")));
        }
        if !(horizon > 0.0 && dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon and dt must be positive, got T = {horizon}, dt = {dt}"
            )));
        }
        let steps = (horizon / dt).round();
        if steps < 1.0 || (steps * dt - horizon).abs() > 1e-9 * horizon {
            return Err(Error::InvalidParameter(format!(
                "dt = {dt} does not divide T = {horizon}"
            )));
        }
        if let Some(n) = n_agents {
            if n < 2 {
                return Err(Error::InvalidParameter(format!("need at least 2 agents, got {n}")));
            }
        }
        if !p_bar.is_finite() {
            return Err(Error::InvalidParameter(format!("p_bar must be finite, got {p_bar}")));
        }
        // Keep h·(stiffness) ≲ 0.05 so the RK4 error stays far below the
        // Monte Carlo noise even for small ν.
        let stiffness = 2.0 * p_bar.abs() + 2.0 / nu.sqrt();
        let substeps = ((dt * stiffness / 0.05).ceil() as usize).max(1);
        Ok(RiccatiConfig {
            p_bar,
            nu,
            horizon,
            n_agents,
            dt,
            substeps,
        })
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps.max(1);
        self
    }

    /// Number of grid intervals `N_T = round(T / dt)`.
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// `α(N) = (N - 1) / N`, or 1 in the limit.
    pub fn alpha(&self) -> f64 {
        match self.n_agents {
            Some(n) => (n as f64 - 1.0) / n as f64,
            None => 1.0,
        }
    }

    fn time(&self, i: usize) -> f64 {
        if i == self.n_steps() {
            self.horizon
        } else {
            i as f64 * self.dt
        }
    }
}

/// Scaled gains on the time grid, with running integrals used by the
/// moment bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub times: Vec<f64>,
    pub kd: Vec<f64>,
    pub ko: Vec<f64>,
    /// `s = k_d + α(N) k_o`.
    pub s: Vec<f64>,
    /// Trapezoid `∫_0^t k_d`.
    pub kd_cumint: Vec<f64>,
    /// Trapezoid `∫_0^t (k_d + k_o)`.
    pub kdko_cumint: Vec<f64>,
    pub nu: f64,
    pub p_bar: f64,
    pub horizon: f64,
    pub dt: f64,
    pub n_agents: Option<usize>,
}

impl RiccatiSolution {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn alpha(&self) -> f64 {
        match self.n_agents {
            Some(n) => (n as f64 - 1.0) / n as f64,
            None => 1.0,
        }
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index < self.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index,
                len: self.len(),
            })
        }
    }

    /// Gain multiplying an agent's own state in the feedback law:
    /// `k_d - k_o / N` for finitely many agents, `k_d` in the limit.
    pub fn self_gain(&self, index: usize) -> f64 {
        match self.n_agents {
            Some(n) => self.kd[index] - self.ko[index] / n as f64,
            None => self.kd[index],
        }
    }

    /// Grid index whose time is closest to `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        if t < -0.5 * self.dt || t > self.horizon + 0.5 * self.dt {
            return None;
        }
        Some(((t / self.dt).round() as usize).min(self.n_steps()))
    }

    /// Maximum deviation of `s` from `√ν tanh((T - t)/√ν)` over the grid.
    pub fn max_s_defect(&self) -> f64 {
        self.times
            .iter()
            .zip(&self.s)
            .map(|(&t, &s)| (s - s_closed_form(t, self.nu, self.horizon)).abs())
            .fold(0.0, f64::max)
    }
}

/// `s(t) = √ν tanh((T - t)/√ν)`.
pub fn s_closed_form(t: f64, nu: f64, horizon: f64) -> f64 {
    let r = nu.sqrt();
    r * ((horizon - t) / r).tanh()
}

type Pair = [f64; 2];

fn rk4_pair(f: &impl Fn(Pair) -> Pair, y: Pair, h: f64) -> Pair {
    let add = |a: Pair, b: Pair, c: f64| [a[0] + c * b[0], a[1] + c * b[1]];
    let k1 = f(y);
    let k2 = f(add(y, k1, h / 2.0));
    let k3 = f(add(y, k2, h / 2.0));
    let k4 = f(add(y, k3, h));
    [
        y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Integrates `d(k_d, k_o)/dτ = rhs` from zero at `τ = 0` (i.e. `t = T`)
/// and assembles the solution on the forward grid.
fn integrate_backward(cfg: &RiccatiConfig, rhs: impl Fn(Pair) -> Pair) -> Result<RiccatiSolution> {
    let n = cfg.n_steps();
    let h = cfg.dt / cfg.substeps as f64;
    let mut kd = vec![0.0; n + 1];
    let mut ko = vec![0.0; n + 1];
    let mut y = [0.0, 0.0];
    for j in 1..=n {
        for _ in 0..cfg.substeps {
            y = rk4_pair(&rhs, y, h);
        }
        let i = n - j;
        if !(y[0].is_finite() && y[1].is_finite()) {
            return Err(Error::RiccatiDivergence { time: cfg.time(i) });
        }
        kd[i] = y[0];
        ko[i] = y[1];
    }
    let alpha = cfg.alpha();
    let times: Vec<f64> = (0..=n).map(|i| cfg.time(i)).collect();
    let s = kd.iter().zip(&ko).map(|(d, o)| d + alpha * o).collect();
    let kd_cumint = cumulative_trapezoid(&times, &kd);
    let sum: Vec<f64> = kd.iter().zip(&ko).map(|(d, o)| d + o).collect();
    let kdko_cumint = cumulative_trapezoid(&times, &sum);
    Ok(RiccatiSolution {
        times,
        kd,
        ko,
        s,
        kd_cumint,
        kdko_cumint,
        nu: cfg.nu,
        p_bar: cfg.p_bar,
        horizon: cfg.horizon,
        dt: cfg.dt,
        n_agents: cfg.n_agents,
    })
}

fn cumulative_trapezoid(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..values.len() {
        acc += 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
        out.push(acc);
    }
    out
}

/// Scaled finite-`N` system.
pub fn solve_scaled_finite_n(cfg: &RiccatiConfig) -> Result<RiccatiSolution> {
    let n = cfg.n_agents.ok_or_else(|| {
        Error::InvalidParameter("finite-N Riccati solve needs an agent count".into())
    })? as f64;
    let alpha = cfg.alpha();
    let (p, nu) = (cfg.p_bar, cfg.nu);
    integrate_backward(cfg, |[kd, ko]| {
        let coupled = kd - ko / n;
        [
            -2.0 * p * alpha * coupled - (kd * kd + alpha / n * ko * ko) / nu + 1.0,
            2.0 * p * coupled - (2.0 * kd * ko + alpha * ko * ko - ko * ko / n) / nu,
        ]
    })
}

/// Mean-field limit system.
pub fn solve_limit(cfg: &RiccatiConfig) -> Result<RiccatiSolution> {
    if cfg.n_agents.is_some() {
        return Err(Error::InvalidParameter(
            "limit Riccati solve must not carry an agent count".into(),
        ));
    }
    let (p, nu) = (cfg.p_bar, cfg.nu);
    integrate_backward(cfg, |[kd, ko]| {
        [
            -2.0 * p * kd - kd * kd / nu + 1.0,
            2.0 * p * kd - ko / nu * (2.0 * kd + ko),
        ]
    })
}

/// Dispatches on `cfg.n_agents`.
pub fn solve(cfg: &RiccatiConfig) -> Result<RiccatiSolution> {
    match cfg.n_agents {
        Some(_) => solve_scaled_finite_n(cfg),
        None => solve_limit(cfg),
    }
}

/// Consensus Laplacian with diagonal `p̄(1-N)/N` and off-diagonal `p̄/N`.
pub fn consensus_laplacian(n: usize, p_bar: f64) -> DMatrix<f64> {
    let nf = n as f64;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            p_bar * (1.0 - nf) / nf
        } else {
            p_bar / nf
        }
    })
}

/// Dense, unscaled Riccati solve `-K' = KA + AᵀK - (N/ν)KK + (1/N)Id`,
/// `K(T) = 0`. Small-`N` oracle for the reduced systems.
pub fn solve_full_matrix_oracle(cfg: &RiccatiConfig) -> Result<Vec<DMatrix<f64>>> {
    let n = cfg
        .n_agents
        .ok_or_else(|| Error::InvalidParameter("matrix oracle needs an agent count".into()))?;
    if n > 20 {
        return Err(Error::InvalidParameter(format!(
            "matrix oracle is limited to 20 agents, got {n}"
        )));
    }
    let a = consensus_laplacian(n, cfg.p_bar);
    let q = DMatrix::<f64>::identity(n, n) / n as f64;
    let gain = n as f64 / cfg.nu;
    let rhs = |k: &DMatrix<f64>| -> DMatrix<f64> { k * &a + a.transpose() * k - gain * (k * k) + &q };
    matrix_backward(cfg, n, rhs)
}

/// RK4 for a matrix ODE `dK/dτ = rhs(K)` from `K = 0` at `τ = 0`.
pub fn matrix_backward(
    cfg: &RiccatiConfig,
    size: usize,
    rhs: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    let steps = cfg.n_steps();
    let h = cfg.dt / cfg.substeps as f64;
    let mut out = vec![DMatrix::<f64>::zeros(size, size); steps + 1];
    let mut k = DMatrix::<f64>::zeros(size, size);
    for j in 1..=steps {
        for _ in 0..cfg.substeps {
            let k1 = rhs(&k);
            let k2 = rhs(&(&k + &k1 * (h / 2.0)));
            let k3 = rhs(&(&k + &k2 * (h / 2.0)));
            let k4 = rhs(&(&k + &k3 * h));
            k += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        let i = steps - j;
        if k.iter().any(|x| !x.is_finite()) {
            return Err(Error::RiccatiDivergence { time: cfg.time(i) });
        }
        out[i] = k.clone();
    }
    Ok(out)
}
