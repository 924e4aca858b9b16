//! Experiment pipeline: sample, solve Riccati, run MdPC, write artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use rayon::prelude::*;

use mdpc_core::bounds::BoundContext;
use mdpc_core::ensemble::{Coupling, Ensemble, ExactStepper, MfmcStepper, Stepper};
use mdpc_core::mdpc::{run_mdpc_observed, Experiment, MdpcConfig, MdpcMode, MdpcRun, UpdateCause};
use mdpc_core::riccati::{self, RiccatiConfig, RiccatiSolution};

use crate::config::ExperimentConfig;

/// Version tag written as the first line of every CSV file.
pub const SCHEMA_VERSION: u32 = 1;

impl ExperimentConfig {
    /// Linearization coefficient: explicit override or `P(v̄, v̄)`.
    pub fn effective_p_bar(&self) -> f64 {
        let v_bar = self.v_bar.clone().unwrap_or_else(|| vec![0.0; self.dim()]);
        self.p_bar
            .unwrap_or_else(|| self.kernel.linearization_coefficient(&v_bar))
    }

    pub fn effective_target(&self) -> Vec<f64> {
        self.target.clone().unwrap_or_else(|| vec![0.0; self.dim()])
    }

    pub fn riccati_config(&self, n_agents: Option<usize>) -> Result<RiccatiConfig> {
        Ok(RiccatiConfig::new(
            self.effective_p_bar(),
            self.nu,
            self.horizon,
            self.dt,
            n_agents,
        )?)
    }

    /// Radius of the state region on which the kernel bounds are taken:
    /// explicit `domain_radius`, else 1.2 times the diameter of the initial
    /// sample in the coupled variable.
    pub fn effective_domain_radius(&self, ens: &Ensemble) -> f64 {
        self.domain_radius
            .unwrap_or_else(|| 1.2 * ens.diameter_bound(self.coupling == Coupling::Position))
    }
}

/// Assembles an experiment with an arbitrary stepper and Riccati solution.
pub fn assemble<S: Stepper>(
    cfg: &ExperimentConfig,
    stepper: S,
    ric: RiccatiSolution,
    ensemble: Ensemble,
) -> Result<Experiment<S>> {
    let bounds = cfg.kernel.bounds(cfg.effective_domain_radius(&ensemble));
    let ctx = BoundContext::new(Arc::new(ric), bounds)?;
    Ok(Experiment {
        stepper,
        ctx,
        ensemble,
        target: cfg.effective_target(),
    })
}

/// Mean-field experiment: `N_s` samples, MFMC stepper, limit Riccati gains.
pub fn build_experiment(cfg: &ExperimentConfig) -> Result<Experiment<MfmcStepper>> {
    let ensemble = Ensemble::sample(&cfg.initial, cfg.n_samples, cfg.seed)?;
    let ric = riccati::solve(&cfg.riccati_config(None)?)?;
    let stepper = MfmcStepper {
        kernel: cfg.kernel,
        p_bar: cfg.effective_p_bar(),
        subsample: cfg.subsample,
        dt: cfg.dt,
        coupling: cfg.coupling,
    };
    assemble(cfg, stepper, ric, ensemble)
}

/// Microscopic experiment with `n` agents, the exact stepper and finite-`N`
/// gains.
pub fn build_microscopic(cfg: &ExperimentConfig, n: usize) -> Result<Experiment<ExactStepper>> {
    let ensemble = Ensemble::sample(&cfg.initial, n, cfg.seed)?;
    let ric = riccati::solve(&cfg.riccati_config(Some(n))?)?;
    let stepper = ExactStepper {
        kernel: cfg.kernel,
        p_bar: cfg.effective_p_bar(),
        dt: cfg.dt,
        coupling: cfg.coupling,
    };
    assemble(cfg, stepper, ric, ensemble)
}

/// Runs the mean-field pipeline without touching the file system.
pub fn execute(cfg: &ExperimentConfig) -> Result<MdpcRun> {
    execute_observed(cfg, |_, _| {})
}

pub fn execute_observed(cfg: &ExperimentConfig, observer: impl FnMut(&Ensemble, usize)) -> Result<MdpcRun> {
    let mdpc = cfg.mdpc()?;
    let exp = build_experiment(cfg)?;
    run_mdpc_observed(&mdpc, exp, observer).with_context(|| format!("run `{}`", cfg.name))
}

fn header(columns: &str) -> String {
    format!("# schema_version = {SCHEMA_VERSION}\n{columns}\n")
}

fn cause_label(c: UpdateCause) -> &'static str {
    match c {
        UpdateCause::VarianceGap => "variance_gap",
        UpdateCause::MeanDrift => "mean_drift",
        UpdateCause::None => "none",
    }
}

pub fn mode_label(m: MdpcMode) -> &'static str {
    match m {
        MdpcMode::Sigma => "sigma",
        MdpcMode::MeanSigma => "mean_sigma",
        MdpcMode::BaselineClosed => "closed_loop",
        MdpcMode::BaselineOpen => "open_loop",
        MdpcMode::BaselineInexact => "inexact",
    }
}

pub fn moments_csv(run: &MdpcRun, dim: usize) -> String {
    let m1_cols: Vec<String> = (0..dim).map(|c| format!("m1_{c}")).collect();
    let mut out = header(&format!(
        "step,t,{},sigma2,sigma2_se,sigma2_w,lower,upper,delta_sigma,delta_m,running_j,control_norm",
        m1_cols.join(",")
    ));
    for r in &run.trace {
        let m1: Vec<String> = r.m1.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.t,
            m1.join(","),
            r.sigma2,
            r.sigma2_se,
            r.sigma2_w,
            r.lower,
            r.upper,
            r.delta_sigma,
            r.delta_m,
            r.running_j,
            r.control_norm
        );
    }
    out
}

pub fn updates_csv(run: &MdpcRun) -> String {
    let mut out = header("update,step,t,cause");
    for (k, ((&step, &t), &cause)) in run
        .update_indices
        .iter()
        .zip(&run.update_times)
        .zip(&run.update_causes)
        .enumerate()
    {
        let _ = writeln!(out, "{},{step},{t},{}", k + 1, cause_label(cause));
    }
    out
}

pub fn summary_txt(cfg: &ExperimentConfig, run: &MdpcRun) -> String {
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let mut out = String::new();
    let _ = writeln!(out, "schema_version = {SCHEMA_VERSION}");
    let _ = writeln!(out, "name = {}", cfg.name);
    let _ = writeln!(out, "mode = {}", mode_label(run.config.mode));
    let _ = writeln!(out, "delta = {}", run.config.delta);
    let _ = writeln!(
        out,
        "tau = {}",
        run.config.tau.map_or("none".to_string(), |t| t.to_string())
    );
    let _ = writeln!(out, "seed = {}", cfg.seed);
    let _ = writeln!(out, "n_samples = {}", cfg.n_samples);
    let _ = writeln!(out, "p_bar = {}", cfg.effective_p_bar());
    let _ = writeln!(out, "n_steps = {}", run.n_steps);
    let _ = writeln!(out, "update_count = {}", run.update_times.len());
    let _ = writeln!(out, "update_fraction = {}", run.update_fraction);
    let _ = writeln!(out, "final_sigma2 = {}", run.final_sigma2);
    let _ = writeln!(out, "final_m1 = {}", join(&run.final_m1));
    let _ = writeln!(out, "cost_j = {}", run.cost_j);
    let _ = writeln!(out, "update_times = {}", join(&run.update_times));
    out
}

fn state_columns(dim: usize, second_order: bool) -> String {
    let mut cols: Vec<String> = Vec::new();
    if second_order {
        cols.extend((0..dim).map(|c| format!("x_{c}")));
    }
    cols.extend((0..dim).map(|c| format!("v_{c}")));
    cols.join(",")
}

fn push_states(out: &mut String, ens: &Ensemble, n: usize, t: f64, particles: usize) {
    let dim = ens.dim;
    for i in 0..particles.min(ens.n_samples) {
        let mut row = format!("{n},{t},{i}");
        if let Some(x) = &ens.x {
            for c in 0..dim {
                let _ = write!(row, ",{}", x[i * dim + c]);
            }
        }
        for c in 0..dim {
            let _ = write!(row, ",{}", ens.v[i * dim + c]);
        }
        out.push_str(&row);
        out.push('\n');
    }
}

fn write(dir: &Path, file: &str, body: &str) -> Result<()> {
    let path = dir.join(file);
    fs::write(&path, body).with_context(|| format!("write {}", path.display()))
}

/// Full pipeline with artifacts in `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<MdpcRun> {
    fs::create_dir_all(out_dir).with_context(|| format!("create {}", out_dir.display()))?;
    let second_order = cfg.order == mdpc_core::ensemble::Order::Second;
    let dim = cfg.dim();
    let mut snapshots = cfg.snapshot_stride.gt(&0).then(|| {
        header(&format!("step,t,particle,{}", state_columns(dim, second_order)))
    });
    let stride = cfg.snapshot_stride.max(1);
    let run = execute_observed(cfg, |ens, n| {
        if let Some(out) = snapshots.as_mut() {
            if n.is_multiple_of(stride) {
                push_states(out, ens, n, n as f64 * cfg.dt, cfg.snapshot_particles);
            }
        }
    })?;
    write(out_dir, "moments.csv", &moments_csv(&run, dim))?;
    write(out_dir, "updates.csv", &updates_csv(&run))?;
    write(out_dir, "summary.txt", &summary_txt(cfg, &run))?;
    if let Some(body) = snapshots {
        write(out_dir, "snapshots.csv", &body)?;
    }
    if let Some(n) = cfg.microscopic_n {
        let exp = build_microscopic(cfg, n)?;
        let mut body = header(&format!("step,t,particle,{}", state_columns(dim, second_order)));
        run_mdpc_observed(&cfg.mdpc()?, exp, |ens, step| {
            push_states(&mut body, ens, step, step as f64 * cfg.dt, n);
        })
        .context("microscopic run")?;
        write(out_dir, "microscopic.csv", &body)?;
    }
    Ok(run)
}

/// One row of a δ-sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub delta: Option<f64>,
    pub update_fraction: f64,
    pub final_sigma2: f64,
    pub cost_j: f64,
}

/// Matched-seed runs for each `δ` plus the closed-loop baseline, executed
/// in parallel on the current rayon pool. Each member writes its own
/// subdirectory of `out_dir`; the comparison table goes to `sweep.csv`.
pub fn run_sweep(cfg: &ExperimentConfig, deltas: &[f64], out_dir: &Path) -> Result<Vec<SweepRow>> {
    if !matches!(cfg.mode, MdpcMode::Sigma | MdpcMode::MeanSigma) {
        anyhow::bail!("a sweep needs mode sigma or mean_sigma, got {}", mode_label(cfg.mode));
    }
    let mut members: Vec<(String, ExperimentConfig)> = vec![(
        "closed_loop".into(),
        ExperimentConfig {
            mode: MdpcMode::BaselineClosed,
            tau: None,
            ..cfg.clone()
        },
    )];
    for (k, &delta) in deltas.iter().enumerate() {
        MdpcConfig::new(cfg.mode, delta, cfg.tau)?;
        members.push((format!("delta_{k}"), ExperimentConfig { delta, ..cfg.clone() }));
    }
    let runs: Vec<MdpcRun> = members
        .par_iter()
        .map(|(label, member)| run_experiment(member, &out_dir.join(label)))
        .collect::<Result<_>>()?;
    let rows: Vec<SweepRow> = members
        .iter()
        .zip(&runs)
        .map(|((label, member), run)| SweepRow {
            label: label.clone(),
            delta: (member.mode != MdpcMode::BaselineClosed).then_some(member.delta),
            update_fraction: run.update_fraction,
            final_sigma2: run.final_sigma2,
            cost_j: run.cost_j,
        })
        .collect();
    let mut body = header("run,mode,delta,update_fraction,final_sigma2,J");
    for (row, (_, member)) in rows.iter().zip(&members) {
        let _ = writeln!(
            body,
            "{},{},{},{},{},{}",
            row.label,
            mode_label(member.mode),
            row.delta.map_or(String::new(), |d| d.to_string()),
            row.update_fraction,
            row.final_sigma2,
            row.cost_j
        );
    }
    fs::create_dir_all(out_dir)?;
    write(out_dir, "sweep.csv", &body)?;
    Ok(rows)
}

/// Gains on the Δt grid as CSV.
pub fn riccati_csv(ric: &RiccatiSolution) -> String {
    let mut out = header("t,kd,ko,s,kd_cumint,kdko_cumint");
    for i in 0..ric.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            ric.times[i], ric.kd[i], ric.ko[i], ric.s[i], ric.kd_cumint[i], ric.kdko_cumint[i]
        );
    }
    out
}

pub fn run_riccati(cfg: &ExperimentConfig, n_agents: Option<usize>, out_dir: &Path) -> Result<RiccatiSolution> {
    let ric = riccati::solve(&cfg.riccati_config(n_agents)?)?;
    fs::create_dir_all(out_dir)?;
    write(out_dir, "riccati.csv", &riccati_csv(&ric))?;
    Ok(ric)
}
