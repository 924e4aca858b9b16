//! Flat `key = value` experiment configuration.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys are rejected so that typos do not silently fall back to
//! defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mdpc_core::ensemble::{Coupling, InitialDistribution, Order};
use mdpc_core::kernels::KernelKind;
use mdpc_core::mdpc::{MdpcConfig, MdpcMode};

pub const MANDATORY_KEYS: &[&str] = &[
    "name",
    "kernel",
    "order",
    "initial",
    "n_samples",
    "subsample",
    "dt",
    "nu",
    "horizon",
    "mode",
    "delta",
    "seed",
];

const OPTIONAL_KEYS: &[&str] = &[
    "tau",
    "p_bar",
    "v_bar",
    "target",
    "coupling",
    "domain_radius",
    "output_dir",
    "snapshot_stride",
    "snapshot_particles",
    "microscopic_n",
    "kernel_strength",
    "kernel_radius",
    "cs_alpha",
    "cs_k",
    "cs_varsigma",
    "cs_gamma",
    "ar_attraction",
    "ar_repulsion",
    "init_lo",
    "init_hi",
    "init_sigma_x",
    "init_sigma_v",
    "init_v_minus",
    "init_v_plus",
    "init_center",
    "init_radius",
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing mandatory keys: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("key `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub kernel: KernelKind,
    pub order: Order,
    pub initial: InitialDistribution,
    pub n_samples: usize,
    pub subsample: usize,
    pub dt: f64,
    pub nu: f64,
    pub horizon: f64,
    pub mode: MdpcMode,
    pub delta: f64,
    pub tau: Option<f64>,
    pub p_bar: Option<f64>,
    pub v_bar: Option<Vec<f64>>,
    pub target: Option<Vec<f64>>,
    pub coupling: Coupling,
    pub domain_radius: Option<f64>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Write particle snapshots every this many steps (0 disables).
    pub snapshot_stride: usize,
    pub snapshot_particles: usize,
    pub microscopic_n: Option<usize>,
}

impl ExperimentConfig {
    pub fn mdpc(&self) -> Result<MdpcConfig, ConfigError> {
        MdpcConfig::new(self.mode, self.delta, self.tau).map_err(|e| invalid("mode", e))
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    /// Number of time steps `round(T / Δt)`.
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

fn invalid(key: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.to_string(),
    }
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.map.get(key).map(|(line, v)| (*line, v.as_str()))
    }

    fn required(&self, key: &str) -> Result<(usize, &str), ConfigError> {
        self.raw(key)
            .ok_or_else(|| ConfigError::Missing(vec![key.to_string()]))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| ConfigError::Parse {
                line,
                message: format!("`{key}`: {e}"),
            }),
        }
    }

    fn need<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(key)?
            .ok_or_else(|| ConfigError::Missing(vec![key.to_string()]))
    }

    fn vector(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|e| ConfigError::Parse {
                    line,
                    message: format!("`{key}`: {e}"),
                }),
        }
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !MANDATORY_KEYS.contains(&key) && !OPTIONAL_KEYS.contains(&key) {
            return Err(ConfigError::Parse {
                line,
                message: format!("unknown key `{key}`"),
            });
        }
        if value.is_empty() {
            return Err(ConfigError::Parse {
                line,
                message: format!("empty value for `{key}`"),
            });
        }
        if map.insert(key.to_string(), (line, value.to_string())).is_some() {
            return Err(ConfigError::Parse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    let missing: Vec<String> = MANDATORY_KEYS
        .iter()
        .filter(|k| !map.contains_key(**k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ConfigError::Missing(missing));
    }
    let e = Entries { map };

    let kernel = match e.required("kernel")? {
        (_, "bounded_confidence") => KernelKind::BoundedConfidence {
            strength: e.need("kernel_strength")?,
            radius: e.need("kernel_radius")?,
        },
        (_, "cucker_smale") => KernelKind::CuckerSmale {
            alpha: e.need("cs_alpha")?,
            k: e.need("cs_k")?,
            varsigma: e.need("cs_varsigma")?,
            gamma: e.need("cs_gamma")?,
        },
        (_, "attraction_repulsion") => KernelKind::AttractionRepulsion {
            attraction: e.need("ar_attraction")?,
            repulsion: e.need("ar_repulsion")?,
        },
        (line, other) => {
            return Err(ConfigError::Parse {
                line,
                message: format!(
                    "unknown kernel `{other}` (bounded_confidence, cucker_smale, attraction_repulsion)"
                ),
            })
        }
    };
    let order = match e.required("order")? {
        (_, "first") => Order::First,
        (_, "second") => Order::Second,
        (line, other) => {
            return Err(ConfigError::Parse {
                line,
                message: format!("unknown order `{other}` (first, second)"),
            })
        }
    };
    let initial = match e.required("initial")? {
        (_, "uniform_interval") => InitialDistribution::UniformInterval {
            lo: e.need("init_lo")?,
            hi: e.need("init_hi")?,
        },
        (_, "bimodal_gaussian") => InitialDistribution::BimodalGaussian2D {
            sigma_x: e.need("init_sigma_x")?,
            sigma_v: e.need("init_sigma_v")?,
            v_minus: e.need("init_v_minus")?,
            v_plus: e.need("init_v_plus")?,
        },
        (_, "uniform_disc") => {
            let c = e
                .vector("init_center")?
                .ok_or_else(|| ConfigError::Missing(vec!["init_center".into()]))?;
            if c.len() != 2 {
                return Err(invalid("init_center", "expected two components"));
            }
            InitialDistribution::UniformDisc {
                center: [c[0], c[1]],
                radius: e.need("init_radius")?,
            }
        }
        (line, other) => {
            return Err(ConfigError::Parse {
                line,
                message: format!("unknown initial distribution `{other}` (uniform_interval, bimodal_gaussian, uniform_disc)"),
            })
        }
    };
    initial.validate().map_err(|err| invalid("initial", err))?;
    if initial.order() != order {
        return Err(invalid("order", format!("initial distribution `{}` needs order {:?}", e.required("initial")?.1, initial.order())));
    }
    let mode = match e.required("mode")? {
        (_, "sigma") => MdpcMode::Sigma,
        (_, "mean_sigma") => MdpcMode::MeanSigma,
        (_, "closed_loop") => MdpcMode::BaselineClosed,
        (_, "open_loop") => MdpcMode::BaselineOpen,
        (_, "inexact") => MdpcMode::BaselineInexact,
        (line, other) => {
            return Err(ConfigError::Parse {
                line,
                message: format!("unknown mode `{other}` (sigma, mean_sigma, closed_loop, open_loop, inexact)"),
            })
        }
    };
    let coupling = match e.raw("coupling") {
        None | Some((_, "position")) => Coupling::Position,
        Some((_, "velocity")) => Coupling::Velocity,
        Some((line, other)) => {
            return Err(ConfigError::Parse {
                line,
                message: format!("unknown coupling `{other}` (position, velocity)"),
            })
        }
    };

    let cfg = ExperimentConfig {
        name: e.required("name")?.1.to_string(),
        kernel,
        order,
        initial,
        n_samples: e.need("n_samples")?,
        subsample: e.need("subsample")?,
        dt: e.need("dt")?,
        nu: e.need("nu")?,
        horizon: e.need("horizon")?,
        mode,
        delta: e.need("delta")?,
        tau: e.parse("tau")?,
        p_bar: e.parse("p_bar")?,
        v_bar: e.vector("v_bar")?,
        target: e.vector("target")?,
        coupling,
        domain_radius: e.parse("domain_radius")?,
        seed: e.need("seed")?,
        output_dir: e
            .raw("output_dir")
            .map(|(_, p)| PathBuf::from(p))
            .unwrap_or_else(|| PathBuf::from("out").join(e.required("name").map(|x| x.1).unwrap_or("run"))),
        snapshot_stride: e.parse("snapshot_stride")?.unwrap_or(0),
        snapshot_particles: e.parse("snapshot_particles")?.unwrap_or(1000),
        microscopic_n: e.parse("microscopic_n")?,
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    let positive = [
        ("dt", cfg.dt),
        ("nu", cfg.nu),
        ("horizon", cfg.horizon),
    ];
    for (key, value) in positive {
        if !(value > 0.0 && value.is_finite()) {
            return Err(invalid(key, format!("must be positive, got {value}")));
        }
    }
    if cfg.n_samples < 2 {
        return Err(invalid("n_samples", "need at least two samples"));
    }
    if cfg.subsample == 0 {
        return Err(invalid("subsample", "must be at least 1"));
    }
    let steps = cfg.horizon / cfg.dt;
    if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
        return Err(invalid("dt", format!("must divide the horizon {}", cfg.horizon)));
    }
    let dim = cfg.dim();
    for (key, v) in [("target", &cfg.target), ("v_bar", &cfg.v_bar)] {
        if let Some(v) = v {
            if v.len() != dim {
                return Err(invalid(key, format!("expected {dim} components, got {}", v.len())));
            }
        }
    }
    if let Some(r) = cfg.domain_radius {
        if !(r > 0.0) {
            return Err(invalid("domain_radius", format!("must be positive, got {r}")));
        }
    }
    if cfg.microscopic_n == Some(0) || cfg.microscopic_n == Some(1) {
        return Err(invalid("microscopic_n", "need at least two agents"));
    }
    cfg.mdpc()?;
    Ok(())
}
