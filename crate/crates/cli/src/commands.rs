//! Subcommand implementations. Each returns its results as data and writes
//! CSV (authoritative) and SVG files under the output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::{s, Array1, ArrayView1};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use svpg_core::data::{MnistSet, Split};
use svpg_core::envs::{ObsNormalizer, Pendulum};
use svpg_core::gradient::check::{self, GradCheckReport, Param};
use svpg_core::inference::{clamp_state, FiringState, InferenceConfig, MeanField};
use svpg_core::noise::{perturb_input, perturb_params, NoiseFamily, NoiseKind, NoiseTarget};
use svpg_core::rl::{
    evaluate_mnist, evaluate_pendulum, run_pendulum_episode, train_mnist, train_pendulum, CodingConfig, Connectivity,
    Method, Policy, Task, TrainEvent,
};
use svpg_core::topology::{init_params, NetworkShape, Topology};
use svpg_core::Scalar;

use crate::checkpoint::Checkpoint;
use crate::config::{Config, Precision};
use crate::report::{histogram_chart, line_chart, num, Histogram, Series, Table};
use crate::{CliError, CliResult};

/// Largest network `gradcheck` accepts; the finite-difference oracle
/// re-converges the fixed point twice per probed parameter.
pub const GRADCHECK_MAX_NEURONS: usize = 200;
pub const GRADCHECK_EXACT_TOL: f64 = 1e-4;
pub const GRADCHECK_APPROX_TOL: f64 = 1e-6;
pub const WEIGHT_CLIP: f64 = 0.15;
pub const DQ_CLIP: f64 = 0.3;
pub const SMALL_WEIGHT: f64 = 0.01;

macro_rules! with_precision {
    ($p:expr, $f:ident ( $($arg:expr),* $(,)? )) => {
        match $p {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn worker_pool(workers: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Evaluation stream for a checkpoint trained with `train_seed`.
pub fn eval_seed(cfg: &Config, train_seed: u64) -> u64 {
    train_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ cfg.noise_seed
}

fn load_set(cfg: &Config, split: Split) -> CliResult<MnistSet> {
    let dir = cfg.resolved_data_dir();
    if !dir.is_dir() {
        return Err(CliError::Usage(format!(
            "dataset directory {} not found (set data_dir or SVPG_DATA_DIR)",
            dir.display()
        )));
    }
    Ok(MnistSet::load(&dir, split)?)
}

/// Test set for MNIST commands, `None` for the pendulum.
fn test_set(cfg: &Config, task: Task) -> CliResult<Option<MnistSet>> {
    match task {
        Task::Mnist => Ok(Some(load_set(cfg, Split::Test)?)),
        Task::Pendulum => Ok(None),
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best_step: usize,
    pub best_metric: f64,
    pub best_checkpoint: PathBuf,
    pub steps_run: usize,
    pub reached_target: bool,
    /// `(step, metric)` of every checkpoint in order.
    pub checkpoints: Vec<(usize, f64)>,
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("ckpt_{step:06}.svpg"))
}

/// Train per the config. Writes `config.txt`, `metrics.csv` (per step or
/// episode), `checkpoints.csv`, `timings.csv` (wall clock, kept apart so the
/// other files are reproducible) and `checkpoints/ckpt_<step>.svpg`.
pub fn train(cfg: &Config, out_dir: &Path) -> CliResult<TrainSummary> {
    ensure_dir(&out_dir.join("checkpoints"))?;
    std::fs::write(out_dir.join("config.txt"), cfg.canonical())?;
    with_precision!(cfg.precision, train_with(cfg, out_dir))
}

fn train_with<T: Scalar>(cfg: &Config, out_dir: &Path) -> CliResult<TrainSummary> {
    let hash = cfg.hash();
    let tcfg = cfg.train_config();
    let policy = Policy::<T>::with_connectivity(cfg.task, cfg.method, cfg.connectivity, cfg.seed, cfg.init_scale)?;
    let mut metrics = Table::new(&["step", "train_metric", "loss"], &hash);
    let mut ckpts = Table::new(&["step", "metric", "file"], &hash);
    let mut timings = Table::new(&["step", "seconds"], &hash);
    let mut saved: Vec<(usize, f64)> = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut failure: Option<CliError> = None;
    let start = Instant::now();
    let keep = cfg.keep_checkpoints;
    let mut observer = |e: TrainEvent<'_, T>| match e {
        TrainEvent::Progress { step, metric, loss } => {
            metrics.push(vec![step.to_string(), num(metric), num(loss)]);
        }
        TrainEvent::Checkpoint { step, metric, policy } => {
            if failure.is_some() {
                return;
            }
            let path = checkpoint_path(out_dir, step);
            let ck = Checkpoint::from_policy(
                policy,
                cfg.task,
                cfg.method,
                cfg.coding,
                cfg.connectivity,
                cfg.seed,
                step as u64,
                metric,
            );
            if let Err(e) = ck.save(&path) {
                failure = Some(e);
                return;
            }
            if best.is_none_or(|(_, m)| metric > m) {
                best = Some((step, metric));
            }
            saved.push((step, metric));
            ckpts.push(vec![step.to_string(), num(metric), format!("checkpoints/{}", file_name(&path))]);
            timings.push(vec![step.to_string(), format!("{:.3}", start.elapsed().as_secs_f64())]);
            if keep > 0 && saved.len() > keep {
                let (old, _) = saved[saved.len() - keep - 1];
                if best.is_some_and(|(b, _)| b != old) {
                    let _ = std::fs::remove_file(checkpoint_path(out_dir, old));
                }
            }
        }
    };
    let outcome = match cfg.task {
        Task::Mnist => {
            let mut train = load_set(cfg, Split::Train)?;
            if cfg.train_limit > 0 {
                train = train.truncated(cfg.train_limit);
            }
            let test = load_set(cfg, Split::Test)?;
            train_mnist(policy, &train, &test, &tcfg, &mut observer)?
        }
        Task::Pendulum => train_pendulum(policy, &cfg.pendulum(), &ObsNormalizer::default(), &tcfg, &mut observer)?,
    };
    if let Some(e) = failure {
        return Err(e);
    }
    if keep > 0 {
        prune(out_dir, &saved, keep, outcome.best_step);
    }
    metrics.write(&out_dir.join("metrics.csv"))?;
    ckpts.write(&out_dir.join("checkpoints.csv"))?;
    timings.write(&out_dir.join("timings.csv"))?;
    let best_checkpoint = checkpoint_path(out_dir, outcome.best_step);
    if !best_checkpoint.is_file() {
        Checkpoint::from_policy(
            &outcome.best,
            cfg.task,
            cfg.method,
            cfg.coding,
            cfg.connectivity,
            cfg.seed,
            outcome.best_step as u64,
            outcome.best_metric,
        )
        .save(&best_checkpoint)?;
    }
    Ok(TrainSummary {
        best_step: outcome.best_step,
        best_metric: outcome.best_metric,
        best_checkpoint,
        steps_run: outcome.steps_run,
        reached_target: outcome.reached_target,
        checkpoints: saved,
    })
}

fn prune(out_dir: &Path, saved: &[(usize, f64)], keep: usize, best_step: usize) {
    let cut = saved.len().saturating_sub(keep);
    for &(step, _) in &saved[..cut] {
        if step != best_step {
            let _ = std::fs::remove_file(checkpoint_path(out_dir, step));
        }
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Coding of a checkpoint with the config's inference settings.
fn coding_for(cfg: &Config, ck: &Checkpoint) -> CodingConfig {
    CodingConfig {
        coding: ck.header.coding,
        ..cfg.coding_config()
    }
}

fn is_identity(kind: &NoiseKind) -> bool {
    matches!(
        *kind,
        NoiseKind::Gaussian { std: 0.0 }
            | NoiseKind::Uniform { half_width: 0.0 }
            | NoiseKind::Salt { p: 0.0 }
            | NoiseKind::Pepper { p: 0.0 }
            | NoiseKind::SaltPepper { p: 0.0 }
    )
}

/// Evaluate one checkpoint, optionally perturbed at one sweep point.
fn evaluate_checkpoint(
    cfg: &Config,
    ck: &Checkpoint,
    test: Option<&MnistSet>,
    point: Option<(NoiseTarget, NoiseKind, usize)>,
) -> CliResult<Evaluation> {
    with_precision!(ck.header.precision, evaluate_with(cfg, ck, test, point))
}

fn evaluate_with<T: Scalar>(
    cfg: &Config,
    ck: &Checkpoint,
    test: Option<&MnistSet>,
    point: Option<(NoiseTarget, NoiseKind, usize)>,
) -> CliResult<Evaluation> {
    let mut policy = ck.to_policy::<T>()?;
    let coding = coding_for(cfg, ck);
    let seed = eval_seed(cfg, ck.header.seed);
    let mut env = cfg.pendulum();
    let mut input_noise = None;
    if let Some((target, kind, index)) = point {
        match target {
            NoiseTarget::Input if !is_identity(&kind) => input_noise = Some(kind),
            NoiseTarget::Input => {}
            NoiseTarget::Parameters => {
                let mut noise_rng = rng(seed ^ 0x5eed_0000 ^ index as u64);
                policy = perturb_params(&policy, &kind, &mut noise_rng)?;
            }
            NoiseTarget::Environment => env = kind.apply_env(&env),
        }
    }
    let mut eval_rng = rng(seed);
    match ck.header.task {
        Task::Mnist => {
            let set = test.ok_or_else(|| CliError::Usage("MNIST evaluation needs the test set".into()))?;
            let n = if cfg.eval_size == 0 { set.len() } else { cfg.eval_size.min(set.len()) };
            let acc = evaluate_mnist(&policy, set, n, &coding, input_noise.as_ref(), &mut eval_rng)?;
            let std = if n > 1 { (acc * (1.0 - acc) * n as f64 / (n - 1) as f64).sqrt() } else { 0.0 };
            Ok(Evaluation { mean: acc, std, n })
        }
        Task::Pendulum => {
            let n = cfg.eval_size.max(1);
            let (mean, std) = evaluate_pendulum(
                &policy,
                &env,
                &ObsNormalizer::default(),
                n,
                &coding,
                input_noise.as_ref(),
                &mut eval_rng,
            )?;
            Ok(Evaluation { mean, std, n })
        }
    }
}

/// Zero-noise evaluation of one checkpoint; writes `eval.csv` when `out_dir` is given.
pub fn eval(cfg: &Config, checkpoint: &Path, out_dir: Option<&Path>) -> CliResult<Evaluation> {
    let ck = Checkpoint::load(checkpoint)?;
    let test = test_set(cfg, ck.header.task)?;
    let ev = evaluate_checkpoint(cfg, &ck, test.as_ref(), None)?;
    if let Some(dir) = out_dir {
        ensure_dir(dir)?;
        let mut t = Table::new(&["checkpoint", "method", "seed", "step", "metric_mean", "metric_std", "n"], &cfg.hash());
        t.push(vec![
            checkpoint.display().to_string(),
            ck.header.method.to_string(),
            ck.header.seed.to_string(),
            ck.header.step.to_string(),
            num(ev.mean),
            num(ev.std),
            ev.n.to_string(),
        ]);
        t.write(&dir.join("eval.csv"))?;
    }
    Ok(ev)
}

// ---------------------------------------------------------------- select-best

/// Highest stored metric in `dir`; ties go to the earliest step.
pub fn select_best(dir: &Path) -> CliResult<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "svpg"))
        .collect();
    files.sort();
    let mut best: Option<(PathBuf, u64, f64)> = None;
    for f in files {
        let h = Checkpoint::load(&f)?.header;
        if h.metric.is_nan() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((_, step, m)) => h.metric > *m || (h.metric == *m && h.step < *step),
        };
        if better {
            best = Some((f, h.step, h.metric));
        }
    }
    best.map(|b| b.0)
        .ok_or_else(|| CliError::Usage(format!("no scored checkpoints in {}", dir.display())))
}

// ---------------------------------------------------------------- robustness

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub family: String,
    pub strength: f64,
    pub method: Method,
    /// Training seed, or `None` for the across-seed aggregate.
    pub seed: Option<u64>,
    pub mean: f64,
    pub std: f64,
}

/// Evaluate every checkpoint at every point of every family's sweep. Writes
/// `robustness.csv` (per seed rows plus `seed=all` aggregates with the
/// sample std across seeds) and one `robustness_<family>.svg` per family.
pub fn robustness(
    cfg: &Config,
    checkpoints: &[PathBuf],
    families: &[NoiseFamily],
    out_dir: &Path,
) -> CliResult<Vec<SweepRow>> {
    if checkpoints.is_empty() {
        return Err(CliError::Usage("robustness needs at least one checkpoint".into()));
    }
    ensure_dir(out_dir)?;
    let cks = checkpoints
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect::<CliResult<Vec<_>>>()?;
    let task = cks[0].header.task;
    if cks.iter().any(|c| c.header.task != task) {
        return Err(CliError::Usage("checkpoints mix tasks".into()));
    }
    let test = test_set(cfg, task)?;
    let pool = worker_pool(cfg.workers)?;
    let mut rows = Vec::new();
    for &family in families {
        if family.is_environment() && task != Task::Pendulum {
            return Err(CliError::Usage(format!("{family} sweeps need pendulum checkpoints")));
        }
        let spec = cfg.noise_spec(family)?;
        let points = spec.points();
        let jobs: Vec<(usize, usize)> = (0..cks.len()).flat_map(|c| (0..points.len()).map(move |k| (c, k))).collect();
        let results = pool.install(|| {
            jobs.par_iter()
                .map(|&(c, k)| evaluate_checkpoint(cfg, &cks[c], test.as_ref(), Some((spec.target, points[k], k))))
                .collect::<CliResult<Vec<_>>>()
        })?;
        let mut methods: Vec<Method> = Vec::new();
        for (&(c, k), ev) in jobs.iter().zip(&results) {
            let h = &cks[c].header;
            rows.push(SweepRow {
                family: family.name().into(),
                strength: spec.strengths[k],
                method: h.method,
                seed: Some(h.seed),
                mean: ev.mean,
                std: ev.std,
            });
            if !methods.contains(&h.method) {
                methods.push(h.method);
            }
        }
        let mut series = Vec::new();
        for &method in &methods {
            let mut curve = Vec::new();
            for (k, &strength) in spec.strengths.iter().enumerate() {
                let means: Vec<f64> = jobs
                    .iter()
                    .zip(&results)
                    .filter(|((c, kk), _)| *kk == k && cks[*c].header.method == method)
                    .map(|(_, ev)| ev.mean)
                    .collect();
                let (mean, std) = svpg_core::rl::mean_std(&means);
                curve.push((strength, mean, std));
                rows.push(SweepRow {
                    family: family.name().into(),
                    strength,
                    method,
                    seed: None,
                    mean,
                    std,
                });
            }
            series.push(Series {
                name: method.to_string(),
                points: curve,
            });
        }
        let ylabel = match task {
            Task::Mnist => "test accuracy",
            Task::Pendulum => "return",
        };
        let svg = line_chart(&format!("{} {}", target_name(spec.target), family.name()), "strength", ylabel, &series);
        std::fs::write(out_dir.join(format!("robustness_{}.svg", family.name())), svg)?;
    }
    let mut t = Table::new(&["kind", "strength", "method", "seed", "metric_mean", "metric_std"], &cfg.hash());
    for r in &rows {
        t.push(vec![
            r.family.clone(),
            num(r.strength),
            r.method.to_string(),
            r.seed.map_or("all".into(), |s| s.to_string()),
            num(r.mean),
            num(r.std),
        ]);
    }
    t.write(&out_dir.join("robustness.csv"))?;
    Ok(rows)
}

fn target_name(t: NoiseTarget) -> &'static str {
    match t {
        NoiseTarget::Input => "input",
        NoiseTarget::Parameters => "parameter",
        NoiseTarget::Environment => "environment",
    }
}

// ---------------------------------------------------------------- gradcheck

#[derive(Debug, Clone)]
pub struct GradCheckOutcome {
    pub report: GradCheckReport,
    pub max_exact: f64,
    pub max_approx: f64,
    pub passed: bool,
}

/// Random small net of the given shape with weights and inferred biases
/// drawn from `U(-init, init)`, and a converged fixed point for a random state.
pub fn random_net(
    shape: NetworkShape,
    connectivity: Connectivity,
    seed: u64,
    init: f64,
) -> CliResult<(svpg_core::RwtaParams64, FiringState<f64>)> {
    let topology = Arc::new(match connectivity {
        Connectivity::Full => Topology::fully_connected(shape),
        Connectivity::Layered => Topology::new(shape),
    });
    let mut params = init_params::<f64>(topology.clone(), seed, init);
    let mut r = rng(seed ^ 0x00c0_ffee);
    for b in params.b.iter_mut().take(shape.ha_count()) {
        *b = r.random_range(-init..=init);
    }
    let s = Array1::from_shape_fn(shape.state_dim, |_| r.random::<f64>());
    let start = clamp_state(&topology, s.view(), &mut r)?;
    let fixed = check::converge(&params, &start, 1e-15);
    Ok((params, fixed))
}

/// Probe every inferred bias and up to `max_weights` admissible weights.
pub fn probes<R: Rng + ?Sized>(params: &svpg_core::RwtaParams64, max_weights: usize, rng: &mut R) -> Vec<Param> {
    let h = params.shape().ha_count();
    let mask = &params.topology().mask;
    let n = params.topology().n();
    let admissible: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| mask.allows(i, j))
        .collect();
    let mut out: Vec<Param> = (0..h).map(Param::Bias).collect();
    let k = max_weights.min(admissible.len());
    let mut picks = sample_indices(rng, admissible.len(), k).into_vec();
    picks.sort_unstable();
    out.extend(picks.into_iter().map(|p| Param::Weight(admissible[p].0, admissible[p].1)));
    out
}

pub fn gradcheck(cfg: &Config, out_dir: Option<&Path>) -> CliResult<GradCheckOutcome> {
    let [d_s, n_h, d_h, d_a] = cfg.gradcheck_shape;
    let shape = NetworkShape::new(d_s, n_h, d_h, d_a)?;
    if shape.neuron_count() > GRADCHECK_MAX_NEURONS {
        return Err(CliError::Usage(format!(
            "refusing gradcheck on {} neurons (limit {GRADCHECK_MAX_NEURONS})",
            shape.neuron_count()
        )));
    }
    let (params, fixed) = random_net(shape, cfg.connectivity, cfg.seed, cfg.gradcheck_init)?;
    let mut r = rng(cfg.seed ^ 0x0bad_5eed);
    let probes = probes(&params, 48, &mut r);
    let report = check::run(&params, &fixed, &probes, 1e-5, 1e-15)?;
    let max_exact = report.max_rel_error("exact");
    let max_approx = report.max_rel_error("approx");
    let passed = report.passes(GRADCHECK_EXACT_TOL, GRADCHECK_APPROX_TOL);
    if let Some(dir) = out_dir {
        ensure_dir(dir)?;
        let mut t = Table::new(&["route", "param", "neuron", "analytic", "numeric", "rel_error"], &cfg.hash());
        for row in &report.rows {
            t.push(vec![
                row.route.into(),
                row.param.to_string(),
                row.neuron.to_string(),
                num(row.analytic),
                num(row.numeric),
                num(row.rel_error),
            ]);
        }
        t.write(&dir.join("gradcheck.csv"))?;
    }
    Ok(GradCheckOutcome {
        report,
        max_exact,
        max_approx,
        passed,
    })
}

// ---------------------------------------------------------------- analyze

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityRow {
    pub method: Method,
    pub seed: u64,
    pub params: usize,
    pub small: usize,
}

impl SparsityRow {
    pub fn fraction(&self) -> f64 {
        self.small as f64 / self.params.max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub sparsity: Vec<SparsityRow>,
    pub weights: BTreeMap<String, Histogram>,
    pub hidden_changes: BTreeMap<String, Histogram>,
}

/// Weight-magnitude histograms (clipped at ±0.15) and the distribution of
/// hidden-response changes per inference iteration under Gaussian input
/// noise (clipped at ±0.3). Writes `sparsity.csv`, `weights_hist.csv`,
/// `hidden_change_hist.csv` and matching SVGs.
pub fn analyze(cfg: &Config, checkpoints: &[PathBuf], out_dir: &Path) -> CliResult<Analysis> {
    if checkpoints.is_empty() {
        return Err(CliError::Usage("analyze needs at least one checkpoint".into()));
    }
    ensure_dir(out_dir)?;
    let pool = worker_pool(cfg.workers)?;
    let cks = checkpoints
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect::<CliResult<Vec<_>>>()?;
    let task = cks[0].header.task;
    let test = test_set(cfg, task)?;
    let per = pool.install(|| {
        cks.par_iter()
            .map(|ck| {
                let values = ck.learnable_values()?;
                let mut h = Histogram::new(-WEIGHT_CLIP, WEIGHT_CLIP, 61);
                values.iter().for_each(|&v| h.add(v));
                let small = values.iter().filter(|v| v.abs() < SMALL_WEIGHT).count();
                let dq = with_precision!(ck.header.precision, hidden_changes(cfg, ck, test.as_ref()))?;
                Ok((values.len(), small, h, dq))
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let mut analysis = Analysis {
        sparsity: Vec::new(),
        weights: BTreeMap::new(),
        hidden_changes: BTreeMap::new(),
    };
    for (ck, (n, small, h, dq)) in cks.iter().zip(per) {
        let m = ck.header.method.to_string();
        analysis.sparsity.push(SparsityRow {
            method: ck.header.method,
            seed: ck.header.seed,
            params: n,
            small,
        });
        analysis
            .weights
            .entry(m.clone())
            .or_insert_with(|| Histogram::new(h.lo, h.hi, h.counts.len()))
            .merge(&h);
        analysis
            .hidden_changes
            .entry(m)
            .or_insert_with(|| Histogram::new(dq.lo, dq.hi, dq.counts.len()))
            .merge(&dq);
    }
    let hash = cfg.hash();
    let mut t = Table::new(&["method", "seed", "params", "small", "fraction_small"], &hash);
    for r in &analysis.sparsity {
        t.push(vec![
            r.method.to_string(),
            r.seed.to_string(),
            r.params.to_string(),
            r.small.to_string(),
            num(r.fraction()),
        ]);
    }
    t.write(&out_dir.join("sparsity.csv"))?;
    for (name, hists, xlabel) in [
        ("weights_hist", &analysis.weights, "parameter value"),
        ("hidden_change_hist", &analysis.hidden_changes, "hidden response change"),
    ] {
        let mut t = Table::new(&["method", "bin_lo", "bin_hi", "count", "fraction"], &hash);
        let mut series = Vec::new();
        let mut edges = Vec::new();
        for (m, h) in hists {
            edges = h.edges();
            for (k, (&c, f)) in h.counts.iter().zip(h.fractions()).enumerate() {
                t.push(vec![m.clone(), num(edges[k]), num(edges[k + 1]), c.to_string(), num(f)]);
            }
            series.push((m.clone(), h.fractions()));
        }
        t.write(&out_dir.join(format!("{name}.csv")))?;
        std::fs::write(
            out_dir.join(format!("{name}.svg")),
            histogram_chart(name, xlabel, &edges, &series),
        )?;
    }
    Ok(analysis)
}

/// Inputs for the hidden-response analysis: test images, or observations
/// visited by the policy on the pendulum.
fn analysis_inputs<T: Scalar>(
    cfg: &Config,
    policy: &Policy<T>,
    coding: &CodingConfig,
    test: Option<&MnistSet>,
    seed: u64,
) -> CliResult<Vec<Array1<T>>> {
    match test {
        Some(set) => {
            let n = if cfg.eval_size == 0 { set.len() } else { cfg.eval_size.min(set.len()) };
            let x = set.batch::<T>(&(0..n).collect::<Vec<_>>());
            Ok(x.rows().into_iter().map(|r| r.to_owned()).collect())
        }
        None => {
            let mut env = Pendulum::new(cfg.pendulum())?;
            let mut r = rng(seed);
            let mut out = Vec::new();
            for _ in 0..cfg.eval_size.clamp(1, 20) {
                let ep = run_pendulum_episode(policy, &mut env, &ObsNormalizer::default(), coding, None, &mut r)?;
                out.extend(ep.into_iter().map(|t| t.obs));
            }
            Ok(out)
        }
    }
}

fn hidden_changes<T: Scalar>(cfg: &Config, ck: &Checkpoint, test: Option<&MnistSet>) -> CliResult<Histogram> {
    let policy = ck.to_policy::<T>()?;
    let coding = coding_for(cfg, ck);
    let seed = eval_seed(cfg, ck.header.seed);
    let inputs = analysis_inputs(cfg, &policy, &coding, test, seed)?;
    let kind = NoiseKind::Gaussian {
        std: cfg.analysis_noise_std,
    };
    let mut noise_rng = rng(seed ^ 0xa11a_7515);
    let mut init_rng = rng(seed ^ 0x1a17);
    let mut hist = Histogram::new(-DQ_CLIP, DQ_CLIP, 61);
    match &policy {
        Policy::Rwta(params) => {
            let mf = MeanField::new(params);
            let topology = params.topology();
            let hidden = topology.shape.hidden_range();
            let icfg = InferenceConfig {
                rate_noise_std: 0.0,
                ..coding.inference
            };
            let trace = |init: FiringState<T>| -> CliResult<Vec<Array1<T>>> {
                let mut out = Vec::new();
                mf.run(init, &icfg, &mut rng(0), |_, st| out.push(st.q.slice(s![hidden.clone()]).to_owned()))?;
                Ok(out)
            };
            for x in &inputs {
                let noisy = perturb_input(x.view(), &kind, &mut noise_rng)?;
                let clean_init = clamp_state(topology, x.view(), &mut init_rng)?;
                let mut noisy_init = clean_init.clone();
                noisy_init.q.slice_mut(s![topology.shape.ha_count()..]).assign(&noisy);
                let a = trace(clean_init)?;
                let b = trace(noisy_init)?;
                for k in 0..a.len().max(b.len()) {
                    let qa = &a[k.min(a.len() - 1)];
                    let qb = &b[k.min(b.len() - 1)];
                    for (u, v) in qa.iter().zip(qb) {
                        hist.add((*v - *u).to_f64_lossy());
                    }
                }
            }
        }
        Policy::Mlp(net) => {
            let first = &net.layers[0];
            let hidden = |x: ArrayView1<'_, T>| (x.dot(&first.w) + &first.b).mapv(|v| v.max(T::zero()));
            for x in &inputs {
                let noisy = perturb_input(x.view(), &kind, &mut noise_rng)?;
                for (u, v) in hidden(x.view()).iter().zip(hidden(noisy.view()).iter()) {
                    hist.add((*v - *u).to_f64_lossy());
                }
            }
        }
    }
    Ok(hist)
}
