//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors. The canonical rendering (every key, sorted) feeds the config hash
//! written into every CSV row.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use svpg_core::data::data_dir_from_env;
use svpg_core::envs::PendulumConfig;
use svpg_core::inference::InferenceConfig;
use svpg_core::noise::{linspace, linspace_with, NoiseFamily, NoiseSpec, NoiseTarget, LENGTH_RANGE, THICKNESS_RANGE};
use svpg_core::rl::{Coding, CodingConfig, Connectivity, CriticHead, Method, OptimizerKind, Task, TrainConfig};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(CliError::Config(format!("precision must be f32 or f64, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub task: Task,
    pub method: Method,
    pub coding: Coding,
    pub seed: u64,
    pub connectivity: Connectivity,
    pub precision: Precision,
    pub lr: f64,
    pub gamma: f64,
    /// Training steps (MNIST) or episodes (pendulum).
    pub steps: usize,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub critic_batch: usize,
    pub critic_lr: f64,
    pub critic_head: CriticHead,
    pub entropy_ratio: f64,
    pub optimizer: OptimizerKind,
    pub init_scale: f64,
    pub checkpoint_interval: usize,
    pub checkpoint_eval: usize,
    pub target_metric: Option<f64>,
    pub confirm_episodes: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub rate_noise_std: f64,
    pub spike_steps: usize,
    pub rho_hat: f64,
    pub data_dir: Option<PathBuf>,
    /// Use only the first `train_limit` training images (0 = all).
    pub train_limit: usize,
    /// Test images (0 = all) or pendulum episodes scored by `eval`.
    pub eval_size: usize,
    pub pole_length: f64,
    pub pole_thickness: f64,
    pub noise_target: NoiseTarget,
    pub noise_family: NoiseFamily,
    /// Empty means the family's default grid.
    pub noise_strengths: Vec<f64>,
    pub noise_seed: u64,
    pub analysis_noise_std: f64,
    pub gradcheck_shape: [usize; 4],
    pub gradcheck_init: f64,
    pub workers: usize,
    /// Retain the best and the latest `keep_checkpoints` files (0 keeps all).
    pub keep_checkpoints: usize,
}

const KEYS: &[&str] = &[
    "analysis_noise_std",
    "batch_size",
    "buffer_size",
    "checkpoint_eval",
    "checkpoint_interval",
    "coding",
    "confirm_episodes",
    "connectivity",
    "critic_batch",
    "critic_head",
    "critic_lr",
    "data_dir",
    "entropy_ratio",
    "eval_size",
    "gamma",
    "gradcheck_init",
    "gradcheck_shape",
    "init_scale",
    "keep_checkpoints",
    "lr",
    "max_iters",
    "method",
    "noise_family",
    "noise_seed",
    "noise_strengths",
    "noise_target",
    "optimizer",
    "pole_length",
    "pole_thickness",
    "precision",
    "rate_noise_std",
    "rho_hat",
    "seed",
    "spike_steps",
    "steps",
    "target_metric",
    "task",
    "tol",
    "train_limit",
    "workers",
];

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("bad value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> CliResult<Vec<f64>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    // lo:hi:n expands to an even grid
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() == 3 {
        let lo: f64 = parse(key, parts[0].trim())?;
        let hi: f64 = parse(key, parts[1].trim())?;
        let n: usize = parse(key, parts[2].trim())?;
        return Ok(linspace(lo, hi, n));
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

fn target_name(t: NoiseTarget) -> &'static str {
    match t {
        NoiseTarget::Input => "input",
        NoiseTarget::Parameters => "parameters",
        NoiseTarget::Environment => "environment",
    }
}

impl Config {
    /// Defaults for a task and method.
    pub fn defaults(task: Task, method: Method) -> Self {
        let base = match task {
            Task::Mnist => TrainConfig::mnist(0),
            Task::Pendulum => TrainConfig::pendulum(0),
        };
        let env = PendulumConfig::default();
        Self {
            task,
            method,
            coding: Coding::Rate,
            seed: 0,
            connectivity: Connectivity::Full,
            precision: match task {
                Task::Mnist => Precision::F32,
                Task::Pendulum => Precision::F64,
            },
            lr: base.lr,
            gamma: base.gamma,
            steps: base.episodes,
            batch_size: base.batch_size,
            buffer_size: base.buffer_size,
            critic_batch: base.critic_batch,
            critic_lr: base.critic_lr,
            critic_head: base.critic_head,
            entropy_ratio: base.entropy_ratio,
            optimizer: base.optimizer,
            init_scale: base.init_scale,
            checkpoint_interval: base.checkpoint_interval,
            checkpoint_eval: base.checkpoint_eval,
            target_metric: None,
            confirm_episodes: 100,
            max_iters: InferenceConfig::default().max_iters,
            tol: InferenceConfig::default().tol,
            rate_noise_std: InferenceConfig::DEFAULT_RATE_NOISE_STD,
            spike_steps: CodingConfig::new(Coding::SpikeRect).spike_steps,
            rho_hat: CodingConfig::new(Coding::SpikeRect).rho_hat,
            data_dir: None,
            train_limit: 0,
            eval_size: match task {
                Task::Mnist => 0,
                Task::Pendulum => 100,
            },
            pole_length: env.pole_length,
            pole_thickness: env.pole_thickness,
            noise_target: NoiseTarget::Input,
            noise_family: match task {
                Task::Mnist => NoiseFamily::Gaussian,
                Task::Pendulum => NoiseFamily::Uniform,
            },
            noise_strengths: Vec::new(),
            noise_seed: 0,
            analysis_noise_std: 0.02,
            gradcheck_shape: [3, 2, 4, 3],
            gradcheck_init: 0.5,
            workers: 1,
            keep_checkpoints: 0,
        }
    }

    /// Parse `text` on top of the defaults for the task and method it names
    /// (or the given fallbacks).
    pub fn parse(text: &str, task: Task, method: Method) -> CliResult<Self> {
        let pairs = parse_pairs(text)?;
        let find = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.clone());
        let task = find("task").map(|v| parse("task", &v)).transpose()?.unwrap_or(task);
        let method = find("method").map(|v| parse("method", &v)).transpose()?.unwrap_or(method);
        let mut cfg = Self::defaults(task, method);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Config file (if any) over the defaults; `task`/`method` flags take
    /// precedence over the file and pick the defaults.
    pub fn resolve(text: &str, task: Option<Task>, method: Option<Method>) -> CliResult<Self> {
        let pairs = parse_pairs(text)?;
        let find = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.clone());
        let task = match task {
            Some(t) => t,
            None => find("task").map(|v| parse("task", &v)).transpose()?.unwrap_or(Task::Mnist),
        };
        let method = match method {
            Some(m) => m,
            None => find("method").map(|v| parse("method", &v)).transpose()?.unwrap_or(Method::Svpg),
        };
        let mut cfg = Self::defaults(task, method);
        for (k, v) in &pairs {
            if k != "task" && k != "method" {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, task: Task, method: Method) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, task, method)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        match key {
            "task" => self.task = parse(key, v)?,
            "method" => self.method = parse(key, v)?,
            "coding" => self.coding = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "connectivity" => self.connectivity = parse(key, v)?,
            "precision" => self.precision = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "buffer_size" => self.buffer_size = parse(key, v)?,
            "critic_batch" => self.critic_batch = parse(key, v)?,
            "critic_lr" => self.critic_lr = parse(key, v)?,
            "critic_head" => self.critic_head = parse(key, v)?,
            "entropy_ratio" => self.entropy_ratio = parse(key, v)?,
            "optimizer" => self.optimizer = parse(key, v)?,
            "init_scale" => self.init_scale = parse(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, v)?,
            "checkpoint_eval" => self.checkpoint_eval = parse(key, v)?,
            "target_metric" => {
                self.target_metric = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "confirm_episodes" => self.confirm_episodes = parse(key, v)?,
            "max_iters" => self.max_iters = parse(key, v)?,
            "tol" => self.tol = parse(key, v)?,
            "rate_noise_std" => self.rate_noise_std = parse(key, v)?,
            "spike_steps" => self.spike_steps = parse(key, v)?,
            "rho_hat" => self.rho_hat = parse(key, v)?,
            "data_dir" => self.data_dir = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "train_limit" => self.train_limit = parse(key, v)?,
            "eval_size" => self.eval_size = parse(key, v)?,
            "pole_length" => self.pole_length = parse(key, v)?,
            "pole_thickness" => self.pole_thickness = parse(key, v)?,
            "noise_target" => {
                self.noise_target = match v {
                    "input" => NoiseTarget::Input,
                    "parameters" => NoiseTarget::Parameters,
                    "environment" => NoiseTarget::Environment,
                    other => return Err(CliError::Config(format!("bad noise_target {other:?}"))),
                }
            }
            "noise_family" => self.noise_family = v.parse()?,
            "noise_strengths" => self.noise_strengths = parse_list(key, v)?,
            "noise_seed" => self.noise_seed = parse(key, v)?,
            "analysis_noise_std" => self.analysis_noise_std = parse(key, v)?,
            "gradcheck_shape" => {
                let dims: Vec<usize> = v.split(',').map(|d| parse(key, d.trim())).collect::<CliResult<_>>()?;
                self.gradcheck_shape = dims
                    .try_into()
                    .map_err(|_| CliError::Config("gradcheck_shape needs d_s,n_h,d_h,d_a".into()))?;
            }
            "gradcheck_init" => self.gradcheck_init = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "keep_checkpoints" => self.keep_checkpoints = parse(key, v)?,
            other => return Err(CliError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    fn value(&self, key: &str) -> String {
        match key {
            "task" => self.task.to_string(),
            "method" => self.method.to_string(),
            "coding" => self.coding.to_string(),
            "seed" => self.seed.to_string(),
            "connectivity" => self.connectivity.to_string(),
            "precision" => self.precision.to_string(),
            "lr" => self.lr.to_string(),
            "gamma" => self.gamma.to_string(),
            "steps" => self.steps.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "buffer_size" => self.buffer_size.to_string(),
            "critic_batch" => self.critic_batch.to_string(),
            "critic_lr" => self.critic_lr.to_string(),
            "critic_head" => self.critic_head.to_string(),
            "entropy_ratio" => self.entropy_ratio.to_string(),
            "optimizer" => self.optimizer.to_string(),
            "init_scale" => self.init_scale.to_string(),
            "checkpoint_interval" => self.checkpoint_interval.to_string(),
            "checkpoint_eval" => self.checkpoint_eval.to_string(),
            "target_metric" => self.target_metric.map_or("none".into(), |t| t.to_string()),
            "confirm_episodes" => self.confirm_episodes.to_string(),
            "max_iters" => self.max_iters.to_string(),
            "tol" => self.tol.to_string(),
            "rate_noise_std" => self.rate_noise_std.to_string(),
            "spike_steps" => self.spike_steps.to_string(),
            "rho_hat" => self.rho_hat.to_string(),
            "data_dir" => self.data_dir.as_ref().map_or(String::new(), |p| p.display().to_string()),
            "train_limit" => self.train_limit.to_string(),
            "eval_size" => self.eval_size.to_string(),
            "pole_length" => self.pole_length.to_string(),
            "pole_thickness" => self.pole_thickness.to_string(),
            "noise_target" => target_name(self.noise_target).into(),
            "noise_family" => self.noise_family.to_string(),
            "noise_strengths" => fmt_list(&self.noise_strengths),
            "noise_seed" => self.noise_seed.to_string(),
            "analysis_noise_std" => self.analysis_noise_std.to_string(),
            "gradcheck_shape" => self.gradcheck_shape.map(|d| d.to_string()).join(","),
            "gradcheck_init" => self.gradcheck_init.to_string(),
            "workers" => self.workers.to_string(),
            "keep_checkpoints" => self.keep_checkpoints.to_string(),
            _ => unreachable!("key list and renderer disagree"),
        }
    }

    /// Every key, sorted, one `key = value` per line.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k} = {}", self.value(k));
        }
        out
    }

    /// FNV-1a 64 of the canonical rendering, as 16 hex digits.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical().as_bytes()))
    }

    pub fn coding_config(&self) -> CodingConfig {
        CodingConfig {
            coding: self.coding,
            inference: InferenceConfig {
                max_iters: self.max_iters,
                tol: self.tol,
                rate_noise_std: 0.0,
            },
            rate_noise_std: self.rate_noise_std,
            spike_steps: self.spike_steps,
            rho_hat: self.rho_hat,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            lr: self.lr,
            episodes: self.steps,
            batch_size: self.batch_size,
            buffer_size: self.buffer_size,
            critic_batch: self.critic_batch,
            critic_lr: self.critic_lr,
            critic_head: self.critic_head,
            entropy_ratio: self.entropy_ratio,
            optimizer: self.optimizer,
            coding: self.coding_config(),
            seed: self.seed,
            init_scale: self.init_scale,
            checkpoint_interval: self.checkpoint_interval,
            checkpoint_eval: self.checkpoint_eval,
            target_metric: self.target_metric,
            confirm_episodes: if self.target_metric.is_some() { self.confirm_episodes } else { 0 },
        }
    }

    pub fn pendulum(&self) -> PendulumConfig {
        PendulumConfig::default().with_geometry(self.pole_length, self.pole_thickness)
    }

    /// Sweep for `family`; environment families always target the
    /// environment, other families keep the configured input/parameter target.
    pub fn noise_spec(&self, family: NoiseFamily) -> CliResult<NoiseSpec> {
        let target = if family.is_environment() {
            NoiseTarget::Environment
        } else if self.noise_target == NoiseTarget::Environment {
            NoiseTarget::Input
        } else {
            self.noise_target
        };
        let strengths = if self.noise_strengths.is_empty() {
            default_strengths(self.task, family)
        } else {
            self.noise_strengths.clone()
        };
        Ok(NoiseSpec::new(target, family, strengths, self.noise_seed)?)
    }

    /// Explicit `data_dir`, else `SVPG_DATA_DIR`, else `data/mnist`.
    pub fn resolved_data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(data_dir_from_env)
            .unwrap_or_else(|| PathBuf::from("data/mnist"))
    }
}

/// Grids spanning the plotted ranges; environment grids contain the training geometry.
pub fn default_strengths(task: Task, family: NoiseFamily) -> Vec<f64> {
    let env = PendulumConfig::default();
    match family {
        NoiseFamily::EnvLength | NoiseFamily::EnvUnion => {
            linspace_with(LENGTH_RANGE.0, LENGTH_RANGE.1, 11, env.pole_length)
        }
        NoiseFamily::EnvThickness => linspace_with(THICKNESS_RANGE.0, THICKNESS_RANGE.1, 11, env.pole_thickness),
        NoiseFamily::Gaussian | NoiseFamily::Uniform | NoiseFamily::GaussianSalt { .. } => match task {
            Task::Mnist => linspace(0.0, 1.0, 11),
            Task::Pendulum => linspace(0.0, 0.5, 11),
        },
        NoiseFamily::Salt | NoiseFamily::Pepper | NoiseFamily::SaltPepper => linspace(0.0, 0.5, 11),
    }
}

/// `key = value` pairs in file order.
pub fn parse_pairs(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(CliError::Config(format!("line {}: unknown config key {k:?}", n + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_defaults() {
        let m = Config::defaults(Task::Mnist, Method::Svpg);
        assert_eq!(m.lr, 0.1);
        assert_eq!(m.batch_size, 100);
        assert_eq!(m.steps, 50_000);
        assert_eq!(m.checkpoint_interval, 100);
        let p = Config::defaults(Task::Pendulum, Method::Svpg);
        assert_eq!(p.lr, 0.001);
        assert_eq!(p.gamma, 0.999);
        assert_eq!(p.steps, 20_000);
        assert_eq!(p.checkpoint_interval, 20);
        assert_eq!(p.buffer_size, 100);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(Config::parse("lr = 0.2\nlearning_rate = 0.1\n", Task::Mnist, Method::Svpg).is_err());
        assert!(Config::parse("lr = fast\n", Task::Mnist, Method::Svpg).is_err());
        assert!(Config::parse("just words\n", Task::Mnist, Method::Svpg).is_err());
    }

    #[test]
    fn task_key_selects_defaults() {
        let c = Config::parse("# run\ntask = pendulum\nseed = 4\n", Task::Mnist, Method::Svpg).unwrap();
        assert_eq!(c.task, Task::Pendulum);
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.seed, 4);
    }

    #[test]
    fn canonical_round_trip_and_hash() {
        let mut c = Config::defaults(Task::Pendulum, Method::Bp);
        c.noise_strengths = vec![0.0, 0.25];
        c.target_metric = Some(190.0);
        c.data_dir = Some(PathBuf::from("/tmp/x"));
        let back = Config::parse(&c.canonical(), Task::Mnist, Method::Svpg).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn grid_lists() {
        let c = Config::parse("noise_strengths = 0:1:5\n", Task::Mnist, Method::Svpg).unwrap();
        assert_eq!(c.noise_strengths, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
