//! REINFORCE and advantage actor-critic training for RWTA and MLP policies.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::MnistSet;
use crate::envs::{normalize_obs, reward_of, ObsNormalizer, Pendulum, PendulumConfig};
use crate::error::{Error, Result};
use crate::gradient::{accumulate_weighted_dlogq, assemble_policy_gradient, PolicyGradient};
use crate::inference::{
    clamp_state, sample_categorical, sample_firing, FiringState, InferenceConfig, MeanField,
};
use crate::mlp::{log_softmax_grad, softmax_rows, DenseGrads, DenseNet, Head, Optimizer, Trainable};
use crate::noise::{perturb_input, NoiseKind, Perturb};
use crate::scalar::Scalar;
use crate::spikesim::{Kernel, SpikeSim, SpikeSimConfig, SpikeTrain};
use crate::stdp::{rstdp_gradient, StdpWindow};
use crate::topology::{init_params, NetworkShape, RwtaParams, Topology};

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::InvalidConfig(format!(
                        concat!("unknown ", stringify!($name), " {:?}"),
                        other
                    ))),
                }
            }
        }
    };
}

string_enum!(Task { Mnist => "mnist", Pendulum => "pendulum" });
string_enum!(Method { Svpg => "svpg", SvpgShrink => "svpg-shrink", Bp => "bp" });
string_enum!(Coding { Rate => "rate", RateNoise => "rate-noise", SpikeDexp => "spike-dexp", SpikeRect => "spike-rect" });
string_enum!(Connectivity { Full => "full", Layered => "layered" });
string_enum!(CriticHead { ActionValue => "action-value", StateValue => "state-value" });

impl Coding {
    pub fn is_spiking(&self) -> bool {
        matches!(self, Coding::SpikeDexp | Coding::SpikeRect)
    }
}

/// RWTA shape for a method, or `None` for the layered baseline.
pub fn rwta_shape(task: Task, method: Method) -> Option<NetworkShape> {
    let (d_s, d_h, d_a, full, shrink) = match task {
        Task::Mnist => (784, 10, 10, 20, 17),
        Task::Pendulum => (4, 8, 5, 8, 3),
    };
    let n_h = match method {
        Method::Svpg => full,
        Method::SvpgShrink => shrink,
        Method::Bp => return None,
    };
    Some(NetworkShape::new(d_s, n_h, d_h, d_a).expect("static shapes are valid"))
}

pub fn mlp_sizes(task: Task) -> Vec<usize> {
    match task {
        Task::Mnist => vec![784, 200, 10],
        Task::Pendulum => vec![4, 64, 5],
    }
}

pub fn critic_sizes(head: CriticHead) -> Vec<usize> {
    match head {
        CriticHead::ActionValue => vec![4, 64, 64, 5],
        CriticHead::StateValue => vec![4, 64, 64, 1],
    }
}

/// How a policy turns an observation into action probabilities and a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodingConfig {
    pub coding: Coding,
    pub inference: InferenceConfig,
    pub rate_noise_std: f64,
    pub spike_steps: usize,
    pub rho_hat: f64,
}

impl CodingConfig {
    pub fn new(coding: Coding) -> Self {
        Self {
            coding,
            inference: InferenceConfig::default(),
            rate_noise_std: InferenceConfig::DEFAULT_RATE_NOISE_STD,
            spike_steps: SpikeSimConfig::default().steps,
            rho_hat: SpikeSimConfig::default().rho_hat,
        }
    }

    pub fn inference_config(&self) -> InferenceConfig {
        InferenceConfig {
            rate_noise_std: if self.coding == Coding::RateNoise {
                self.rate_noise_std
            } else {
                0.0
            },
            ..self.inference
        }
    }

    pub fn spike_config(&self) -> Option<SpikeSimConfig> {
        let base = match self.coding {
            Coding::SpikeDexp => SpikeSimConfig::double_exponential(),
            Coding::SpikeRect => SpikeSimConfig::default(),
            _ => return None,
        };
        Some(SpikeSimConfig {
            steps: self.spike_steps,
            rho_hat: self.rho_hat,
            ..base
        })
    }

    /// STDP window with the same shape as the potential kernel.
    pub fn stdp_window(&self) -> Option<StdpWindow> {
        let cfg = self.spike_config()?;
        Some(match cfg.kernel {
            Kernel::Rectangle { width } => StdpWindow::rectangle(width),
            Kernel::DoubleExponential { tau_rise, tau_fall } => {
                StdpWindow::double_exponential(tau_rise, tau_fall, cfg.horizon)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy<T> {
    Rwta(RwtaParams<T>),
    Mlp(DenseNet<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyGrad<T> {
    Rwta(PolicyGradient<T>),
    Mlp(DenseGrads<T>),
}

impl<T: Scalar> PolicyGrad<T> {
    pub fn scale(&mut self, k: T) {
        match self {
            PolicyGrad::Rwta(g) => g.scale(k),
            PolicyGrad::Mlp(g) => g.scale(k),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            PolicyGrad::Rwta(g) => g.is_zero(),
            PolicyGrad::Mlp(g) => g.is_zero(),
        }
    }

    pub fn add_assign(&mut self, other: &PolicyGrad<T>) {
        match (self, other) {
            (PolicyGrad::Rwta(a), PolicyGrad::Rwta(b)) => a.add_assign(b),
            (PolicyGrad::Mlp(a), PolicyGrad::Mlp(b)) => a.add_assign(b),
            _ => panic!("gradient kinds differ"),
        }
    }
}

impl<T: Scalar> Trainable<T> for Policy<T> {
    type Grad = PolicyGrad<T>;

    fn visit(&mut self, grad: &PolicyGrad<T>, f: &mut dyn FnMut(&mut [T], &[T])) {
        match (self, grad) {
            (Policy::Rwta(p), PolicyGrad::Rwta(g)) => p.visit(g, f),
            (Policy::Mlp(p), PolicyGrad::Mlp(g)) => p.visit(g, f),
            _ => panic!("gradient kind does not match the policy"),
        }
    }
}

impl<T: Scalar> Perturb for Policy<T> {
    fn perturb_with(&mut self, f: &mut dyn FnMut() -> f64) {
        match self {
            Policy::Rwta(p) => p.perturb_with(f),
            Policy::Mlp(n) => n.perturb_with(f),
        }
    }
}

/// One sampled decision with what its gradient needs.
#[derive(Debug, Clone)]
pub struct Decision<T> {
    pub action: usize,
    /// Action distribution (`q_a` or the softmax output).
    pub probs: Array1<f64>,
    pub firing: Option<FiringState<T>>,
    pub train: Option<SpikeTrain>,
    pub iterations: usize,
}

fn argmax(x: &[f64]) -> usize {
    x.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

impl<T: Scalar> Policy<T> {
    pub fn new(task: Task, method: Method, seed: u64, init_scale: f64) -> Result<Self> {
        Self::with_connectivity(task, method, Connectivity::Full, seed, init_scale)
    }

    pub fn with_connectivity(
        task: Task,
        method: Method,
        connectivity: Connectivity,
        seed: u64,
        init_scale: f64,
    ) -> Result<Self> {
        Ok(match rwta_shape(task, method) {
            Some(shape) => {
                let topology = match connectivity {
                    Connectivity::Full => Topology::fully_connected(shape),
                    Connectivity::Layered => Topology::new(shape),
                };
                Policy::Rwta(init_params(Arc::new(topology), seed, init_scale))
            }
            None => Policy::Mlp(DenseNet::new(&mlp_sizes(task), Head::Softmax, seed)?),
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Policy::Rwta(p) => p.shape().state_dim,
            Policy::Mlp(n) => n.input_dim(),
        }
    }

    pub fn action_count(&self) -> usize {
        match self {
            Policy::Rwta(p) => p.shape().action_dim,
            Policy::Mlp(n) => n.output_dim(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Policy::Rwta(p) => p.is_finite(),
            Policy::Mlp(n) => n.is_finite(),
        }
    }

    fn rwta_decision<R: Rng + ?Sized>(
        topology: &Topology,
        firing: FiringState<T>,
        greedy: bool,
        iterations: usize,
        train: Option<SpikeTrain>,
        rng: &mut R,
    ) -> Decision<T> {
        let range = topology.shape.action_range();
        let probs: Array1<f64> = firing.q.slice(s![range.clone()]).mapv(|x| x.to_f64_lossy());
        let firing = if train.is_some() {
            firing
        } else {
            sample_firing(topology, &firing, rng)
        };
        let action = if greedy {
            argmax(probs.as_slice().unwrap())
        } else {
            let va = firing.v.slice(s![range]);
            va.iter().position(|&x| x > T::zero()).unwrap_or(0)
        };
        Decision {
            action,
            probs,
            firing: Some(firing),
            train,
            iterations,
        }
    }

    fn mlp_decision<R: Rng + ?Sized>(probs: Array1<f64>, greedy: bool, rng: &mut R) -> Decision<T> {
        let action = if greedy {
            argmax(probs.as_slice().unwrap())
        } else {
            sample_categorical(probs.as_slice().unwrap(), rng)
        };
        Decision {
            action,
            probs,
            firing: None,
            train: None,
            iterations: 0,
        }
    }

    /// Decide for a single observation. `greedy` takes the most probable action.
    pub fn decide<R: Rng + ?Sized>(
        &self,
        obs: ArrayView1<'_, T>,
        coding: &CodingConfig,
        greedy: bool,
        rng: &mut R,
    ) -> Result<Decision<T>> {
        match self {
            Policy::Rwta(params) => {
                let topology = params.topology();
                if let Some(cfg) = coding.spike_config() {
                    let (firing, train) = SpikeSim::new(params, cfg)?.run(obs, rng)?;
                    Ok(Self::rwta_decision(topology, firing, greedy, cfg.steps, Some(train), rng))
                } else {
                    let inf = MeanField::new(params).infer(obs, &coding.inference_config(), rng)?;
                    Ok(Self::rwta_decision(topology, inf.state, greedy, inf.iterations, None, rng))
                }
            }
            Policy::Mlp(net) => {
                let probs = net.predict(obs)?.mapv(|x| x.to_f64_lossy());
                Ok(Self::mlp_decision(probs, greedy, rng))
            }
        }
    }

    /// Decide for the rows of `obs`; rate-coded RWTA inference runs batched.
    pub fn decide_batch<R: Rng + ?Sized>(
        &self,
        obs: &Array2<T>,
        coding: &CodingConfig,
        greedy: bool,
        rng: &mut R,
    ) -> Result<Vec<Decision<T>>> {
        match self {
            Policy::Rwta(params) if coding.spike_config().is_none() => {
                let topology = params.topology();
                let batch = MeanField::new(params).infer_batch(obs.view(), &coding.inference_config(), rng)?;
                Ok(batch
                    .into_iter()
                    .map(|inf| Self::rwta_decision(topology, inf.state, greedy, inf.iterations, None, rng))
                    .collect())
            }
            Policy::Mlp(net) => {
                let out = net.forward(obs.view())?.output;
                Ok(out
                    .rows()
                    .into_iter()
                    .map(|row| Self::mlp_decision(row.mapv(|x| x.to_f64_lossy()), greedy, rng))
                    .collect())
            }
            _ => obs
                .rows()
                .into_iter()
                .map(|row| self.decide(row, coding, greedy, rng))
                .collect(),
        }
    }

    /// `sum_k w_k * grad H(pi(.|s_k))` over decisions, mask-projected. The
    /// RWTA form uses the local score of each action neuron.
    pub fn entropy_gradient(&self, items: &[(f64, &Decision<T>, ArrayView1<'_, T>)]) -> Result<PolicyGrad<T>> {
        // dH/dlog p_a = -p_a (ln p_a + 1)
        let coef = |p: f64, w: f64| if p > 0.0 { -w * p * (p.ln() + 1.0) } else { 0.0 };
        match self {
            Policy::Rwta(params) => {
                let topology = params.topology();
                let range = topology.shape.action_range();
                let mut total = PolicyGradient::zeros(topology.n());
                for &(w, d, _) in items {
                    let firing = d
                        .firing
                        .as_ref()
                        .ok_or_else(|| Error::InvalidConfig("RWTA decision without firing state".into()))?;
                    let mut c = Array1::<T>::zeros(topology.n());
                    for (k, &p) in d.probs.iter().enumerate() {
                        c[range.start + k] = T::lit(coef(p, w));
                    }
                    accumulate_weighted_dlogq(topology, firing.q.view(), c.view(), &mut total);
                }
                total.project(topology);
                Ok(PolicyGrad::Rwta(total))
            }
            Policy::Mlp(net) => {
                if items.is_empty() {
                    return Ok(PolicyGrad::Mlp(DenseGrads::zeros_like(net)));
                }
                let mut x = Array2::zeros((items.len(), net.input_dim()));
                for (mut row, (_, _, obs)) in x.rows_mut().into_iter().zip(items) {
                    row.assign(obs);
                }
                let cache = net.forward(x.view())?;
                let probs = softmax_rows(cache.logits.view());
                let mut up = Array2::<T>::zeros(probs.dim());
                for (r, &(w, _, _)) in items.iter().enumerate() {
                    let p = probs.row(r).mapv(|v| v.to_f64_lossy());
                    let grad_logp: Vec<f64> = p.iter().map(|&pk| coef(pk, w)).collect();
                    let total: f64 = grad_logp.iter().sum();
                    // chain through log-softmax: dz_k = g_k - p_k sum_a g_a
                    for k in 0..p.len() {
                        up[[r, k]] = T::lit(grad_logp[k] - p[k] * total);
                    }
                }
                Ok(PolicyGrad::Mlp(net.backward(&cache, up.view())?))
            }
        }
    }

    /// `sum_k w_k * score_k` over decisions (not averaged), mask-projected.
    pub fn weighted_score(
        &self,
        items: &[(f64, &Decision<T>, ArrayView1<'_, T>)],
        coding: &CodingConfig,
    ) -> Result<PolicyGrad<T>> {
        match self {
            Policy::Rwta(params) => {
                let topology = params.topology();
                if let Some(window) = coding.stdp_window() {
                    let mut total = PolicyGradient::zeros(topology.n());
                    for &(w, d, _) in items {
                        let (Some(firing), Some(train)) = (&d.firing, &d.train) else {
                            return Err(Error::InvalidConfig("spike coding needs spike trains".into()));
                        };
                        if w != 0.0 {
                            total.add_assign(&rstdp_gradient(topology, train, &firing.v, w, coding.rho_hat, &window)?);
                        }
                    }
                    total.project(topology);
                    Ok(PolicyGrad::Rwta(total))
                } else {
                    let mut steps = Vec::with_capacity(items.len());
                    for &(w, d, _) in items {
                        let firing = d
                            .firing
                            .as_ref()
                            .ok_or_else(|| Error::InvalidConfig("RWTA decision without firing state".into()))?;
                        steps.push((T::lit(w), firing));
                    }
                    Ok(PolicyGrad::Rwta(assemble_policy_gradient(topology, steps)))
                }
            }
            Policy::Mlp(net) => {
                let live: Vec<_> = items.iter().filter(|(w, _, _)| *w != 0.0).collect();
                if live.is_empty() {
                    return Ok(PolicyGrad::Mlp(DenseGrads::zeros_like(net)));
                }
                let mut x = Array2::zeros((live.len(), net.input_dim()));
                for (mut row, (_, _, obs)) in x.rows_mut().into_iter().zip(&live) {
                    row.assign(obs);
                }
                let cache = net.forward(x.view())?;
                let actions: Vec<usize> = live.iter().map(|(_, d, _)| d.action).collect();
                let probs = softmax_rows(cache.logits.view());
                let mut up = log_softmax_grad(probs.view(), &actions);
                for (mut row, (w, _, _)) in up.rows_mut().into_iter().zip(&live) {
                    row.mapv_inplace(|v| v * T::lit(*w));
                }
                Ok(PolicyGrad::Mlp(net.backward(&cache, up.view())?))
            }
        }
    }
}

/// `sum_a p_a ln(1/p_a)`.
pub fn entropy(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

/// Intrinsic exploration term added to the environment reward.
pub fn entropy_bonus(probs: &[f64], entropy_ratio: f64) -> f64 {
    entropy(probs) / entropy_ratio
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            other => Err(Error::InvalidConfig(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::RmsProp => "rmsprop",
        })
    }
}

impl OptimizerKind {
    pub fn build<T: Scalar>(&self, lr: f64) -> Optimizer<T> {
        match self {
            OptimizerKind::Sgd => Optimizer::sgd(lr),
            OptimizerKind::RmsProp => Optimizer::rmsprop(lr),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    /// Training steps (MNIST) or episodes (pendulum).
    pub episodes: usize,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub critic_batch: usize,
    pub critic_lr: f64,
    pub critic_head: CriticHead,
    pub entropy_ratio: f64,
    pub optimizer: OptimizerKind,
    pub coding: CodingConfig,
    pub seed: u64,
    pub init_scale: f64,
    pub checkpoint_interval: usize,
    /// Test images (MNIST) or episodes (pendulum) scored at each checkpoint; 0 means all test images.
    pub checkpoint_eval: usize,
    /// Stop once a checkpoint scores at least this.
    pub target_metric: Option<f64>,
    /// Pendulum only: a checkpoint that meets the target must also meet it
    /// over this many fresh episodes (0 skips the confirmation).
    pub confirm_episodes: usize,
}

impl TrainConfig {
    pub fn mnist(seed: u64) -> Self {
        Self {
            gamma: 1.0,
            lr: 0.1,
            episodes: 50_000,
            batch_size: 100,
            buffer_size: 100,
            critic_batch: 0,
            critic_lr: 0.0,
            critic_head: CriticHead::ActionValue,
            entropy_ratio: 0.0,
            optimizer: OptimizerKind::Sgd,
            coding: CodingConfig::new(Coding::Rate),
            seed,
            init_scale: 0.01,
            checkpoint_interval: 100,
            checkpoint_eval: 0,
            target_metric: None,
            confirm_episodes: 0,
        }
    }

    pub fn pendulum(seed: u64) -> Self {
        Self {
            gamma: 0.999,
            lr: 0.001,
            episodes: 20_000,
            batch_size: 1,
            buffer_size: 100,
            critic_batch: 32,
            critic_lr: 0.001,
            critic_head: CriticHead::ActionValue,
            entropy_ratio: 2.0,
            optimizer: OptimizerKind::RmsProp,
            coding: CodingConfig::new(Coding::Rate),
            seed,
            init_scale: 0.01,
            checkpoint_interval: 20,
            checkpoint_eval: 20,
            target_metric: None,
            confirm_episodes: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.buffer_size == 0 || self.batch_size == 0 || self.checkpoint_interval == 0 {
            return Err(Error::InvalidConfig(
                "buffer_size, batch_size and checkpoint_interval must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {} is negative", self.lr)));
        }
        self.coding.inference.validate()
    }
}

/// A fully observed step and the decision that produced it.
#[derive(Debug, Clone)]
pub struct Transition<T> {
    pub obs: Array1<T>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Array1<T>,
    pub done: bool,
    pub truncated: bool,
    pub decision: Decision<T>,
}

/// Optional input perturbation applied to every observation seen by the policy.
fn observe<T: Scalar, R: Rng + ?Sized>(raw: Array1<T>, noise: Option<&NoiseKind>, rng: &mut R) -> Result<Array1<T>> {
    match noise {
        Some(k) => perturb_input(raw.view(), k, rng),
        None => Ok(raw),
    }
}

fn pendulum_obs<T: Scalar>(norm: &ObsNormalizer, state: &[f64; 4]) -> Array1<T> {
    normalize_obs(norm, state).mapv(T::lit)
}

/// One pendulum episode under the current policy.
pub fn run_pendulum_episode<T: Scalar, R: Rng + ?Sized>(
    policy: &Policy<T>,
    env: &mut Pendulum,
    norm: &ObsNormalizer,
    coding: &CodingConfig,
    noise: Option<&NoiseKind>,
    rng: &mut R,
) -> Result<Vec<Transition<T>>> {
    let mut obs = observe(pendulum_obs(norm, &env.reset(rng)), noise, rng)?;
    let mut out = Vec::new();
    loop {
        let decision = policy.decide(obs.view(), coding, false, rng)?;
        let step = env.step(decision.action)?;
        let next_obs = observe(pendulum_obs(norm, &step.state), noise, rng)?;
        out.push(Transition {
            obs: std::mem::replace(&mut obs, next_obs.clone()),
            action: decision.action,
            reward: step.reward,
            next_obs,
            done: step.done,
            truncated: step.truncated,
            decision,
        });
        if step.done {
            return Ok(out);
        }
    }
}

/// One single-step MNIST episode on training image `index`.
pub fn run_mnist_episode<T: Scalar, R: Rng + ?Sized>(
    policy: &Policy<T>,
    set: &MnistSet,
    index: usize,
    coding: &CodingConfig,
    rng: &mut R,
) -> Result<Transition<T>> {
    let obs = set.batch::<T>(&[index]).row(0).to_owned();
    let decision = policy.decide(obs.view(), coding, false, rng)?;
    Ok(Transition {
        action: decision.action,
        reward: reward_of(decision.action, set.labels[index]),
        next_obs: obs.clone(),
        obs,
        done: true,
        truncated: false,
        decision,
    })
}

/// `sum_t gamma^t r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc)
}

/// Ascend the REINFORCE estimate averaged over trajectories; every step of a
/// trajectory is weighted by that trajectory's full discounted return.
pub fn reinforce_update<T: Scalar>(
    policy: &mut Policy<T>,
    optimizer: &mut Optimizer<T>,
    trajectories: &[Vec<Transition<T>>],
    gamma: f64,
    coding: &CodingConfig,
) -> Result<PolicyGrad<T>> {
    let mut items = Vec::new();
    for traj in trajectories {
        let rewards: Vec<f64> = traj.iter().map(|t| t.reward).collect();
        let g = discounted_return(&rewards, gamma);
        items.extend(traj.iter().map(|t| (g, &t.decision, t.obs.view())));
    }
    apply_ascent(policy, optimizer, &items, trajectories.len().max(1), coding)
}

fn apply_ascent<T: Scalar>(
    policy: &mut Policy<T>,
    optimizer: &mut Optimizer<T>,
    items: &[(f64, &Decision<T>, ArrayView1<'_, T>)],
    count: usize,
    coding: &CodingConfig,
) -> Result<PolicyGrad<T>> {
    let mut grad = policy.weighted_score(items, coding)?;
    grad.scale(T::lit(1.0 / count as f64));
    ascend(policy, optimizer, grad.clone());
    Ok(grad)
}

fn ascend<T: Scalar>(policy: &mut Policy<T>, optimizer: &mut Optimizer<T>, mut grad: PolicyGrad<T>) {
    if !grad.is_zero() {
        grad.scale(-T::one());
        optimizer.step(policy, &grad);
    }
}

/// Buffered one-step transition for critic regression.
#[derive(Debug, Clone)]
pub struct CriticSample<T> {
    pub obs: Array1<T>,
    pub action: usize,
    /// Environment reward plus the entropy bonus.
    pub reward: f64,
    pub next_obs: Array1<T>,
    /// Policy at `next_obs`, or `None` when the episode terminated there.
    pub next_probs: Option<Array1<f64>>,
}

/// MLP critic trained by one-step temporal-difference regression on a FIFO buffer.
#[derive(Debug, Clone)]
pub struct Critic<T> {
    pub net: DenseNet<T>,
    pub head: CriticHead,
    pub optimizer: Optimizer<T>,
    pub buffer: VecDeque<CriticSample<T>>,
    pub capacity: usize,
    pub batch: usize,
    pub gamma: f64,
}

impl<T: Scalar> Critic<T> {
    pub fn new(head: CriticHead, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            net: DenseNet::new(&critic_sizes(head), Head::Identity, seed)?,
            head,
            optimizer: Optimizer::rmsprop(cfg.critic_lr),
            buffer: VecDeque::with_capacity(cfg.buffer_size),
            capacity: cfg.buffer_size,
            batch: cfg.critic_batch,
            gamma: cfg.gamma,
        })
    }

    pub fn push(&mut self, sample: CriticSample<T>) {
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(sample);
    }

    fn values(&self, obs: &Array2<T>) -> Result<Array2<f64>> {
        Ok(self.net.forward(obs.view())?.output.mapv(|x| x.to_f64_lossy()))
    }

    /// `V(s) = sum_a pi(a|s) Q(s, a)`, or the scalar head.
    fn state_value(&self, row: ArrayView1<'_, f64>, probs: &Array1<f64>) -> f64 {
        match self.head {
            CriticHead::ActionValue => row.dot(probs),
            CriticHead::StateValue => row[0],
        }
    }

    /// One RMSprop step on a minibatch drawn from the buffer (the whole buffer
    /// when it is smaller than the batch). Returns the mean squared TD error.
    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64> {
        if self.buffer.is_empty() {
            return Ok(0.0);
        }
        let idx: Vec<usize> = if self.batch == 0 || self.batch >= self.buffer.len() {
            (0..self.buffer.len()).collect()
        } else {
            sample_indices(rng, self.buffer.len(), self.batch).into_vec()
        };
        let d = self.net.input_dim();
        let mut x = Array2::zeros((idx.len(), d));
        let mut xn = Array2::zeros((idx.len(), d));
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&self.buffer[i].obs);
            xn.row_mut(r).assign(&self.buffer[i].next_obs);
        }
        let next = self.values(&xn)?;
        let cache = self.net.forward(x.view())?;
        let mut up = Array2::<T>::zeros(cache.logits.dim());
        let mut loss = 0.0;
        for (r, &i) in idx.iter().enumerate() {
            let sample = &self.buffer[i];
            let bootstrap = match &sample.next_probs {
                Some(p) => self.gamma * self.state_value(next.row(r), p),
                None => 0.0,
            };
            let target = sample.reward + bootstrap;
            let col = match self.head {
                CriticHead::ActionValue => sample.action,
                CriticHead::StateValue => 0,
            };
            let err = cache.logits[[r, col]].to_f64_lossy() - target;
            loss += err * err;
            up[[r, col]] = T::lit(err / idx.len() as f64);
        }
        let grad = self.net.backward(&cache, up.view())?;
        self.optimizer.step(&mut self.net, &grad);
        Ok(loss / idx.len() as f64)
    }

    /// Advantage of `action` at `obs` under action probabilities `probs`.
    pub fn advantage(&self, t: &Transition<T>, reward: f64, next_probs: Option<&Array1<f64>>) -> Result<f64> {
        match self.head {
            CriticHead::ActionValue => {
                let q = self.net.predict(t.obs.view())?.mapv(|x| x.to_f64_lossy());
                Ok(q[t.action] - q.dot(&t.decision.probs))
            }
            CriticHead::StateValue => {
                let v = self.net.predict(t.obs.view())?[0].to_f64_lossy();
                let vn = match next_probs {
                    Some(_) => self.net.predict(t.next_obs.view())?[0].to_f64_lossy(),
                    None => 0.0,
                };
                Ok(reward + self.gamma * vn - v)
            }
        }
    }
}

/// Per-episode training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub length: usize,
    pub env_return: f64,
    pub critic_loss: f64,
    pub mean_advantage: f64,
}

/// One actor-critic episode: the critic trains online after every step, the
/// actor ascends the advantage-weighted score once at the end.
pub fn a2c_episode<T: Scalar, R: Rng + ?Sized>(
    policy: &mut Policy<T>,
    optimizer: &mut Optimizer<T>,
    critic: &mut Critic<T>,
    env: &mut Pendulum,
    norm: &ObsNormalizer,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<EpisodeStats> {
    let coding = &cfg.coding;
    let mut obs: Array1<T> = pendulum_obs(norm, &env.reset(rng));
    let mut decision = policy.decide(obs.view(), coding, false, rng)?;
    let mut steps: Vec<(Transition<T>, f64, Option<Array1<f64>>)> = Vec::new();
    let mut critic_loss = 0.0;
    loop {
        let out = env.step(decision.action)?;
        let next_obs: Array1<T> = pendulum_obs(norm, &out.state);
        let reward = out.reward + entropy_bonus(decision.probs.as_slice().unwrap(), cfg.entropy_ratio);
        let next = if !out.done || out.truncated {
            Some(policy.decide(next_obs.view(), coding, false, rng)?)
        } else {
            None
        };
        let next_probs = next.as_ref().map(|d| d.probs.clone());
        critic.push(CriticSample {
            obs: obs.clone(),
            action: decision.action,
            reward,
            next_obs: next_obs.clone(),
            next_probs: next_probs.clone(),
        });
        critic_loss += critic.train_step(rng)?;
        let t = Transition {
            obs: std::mem::replace(&mut obs, next_obs.clone()),
            action: decision.action,
            reward: out.reward,
            next_obs,
            done: out.done,
            truncated: out.truncated,
            decision,
        };
        steps.push((t, reward, next_probs));
        match next {
            Some(d) if !out.done => decision = d,
            _ => break,
        }
    }
    let weights = steps
        .iter()
        .map(|(t, r, np)| critic.advantage(t, *r, np.as_ref()))
        .collect::<Result<Vec<f64>>>()?;
    let items: Vec<_> = steps
        .iter()
        .zip(&weights)
        .map(|((t, _, _), &w)| (w, &t.decision, t.obs.view()))
        .collect();
    let mut grad = policy.weighted_score(&items, coding)?;
    if cfg.entropy_ratio > 0.0 && cfg.entropy_ratio.is_finite() {
        let coef = 1.0 / cfg.entropy_ratio;
        let ent_items: Vec<_> = items.iter().map(|&(_, d, o)| (coef, d, o)).collect();
        grad.add_assign(&policy.entropy_gradient(&ent_items)?);
    }
    grad.scale(T::lit(1.0 / items.len() as f64));
    ascend(policy, optimizer, grad);
    let n = steps.len();
    Ok(EpisodeStats {
        length: n,
        env_return: steps.iter().map(|(t, _, _)| t.reward).sum(),
        critic_loss: critic_loss / n as f64,
        mean_advantage: weights.iter().sum::<f64>() / n as f64,
    })
}

/// Greedy test-set accuracy, optionally under input noise.
pub fn evaluate_mnist<T: Scalar, R: Rng + ?Sized>(
    policy: &Policy<T>,
    set: &MnistSet,
    limit: usize,
    coding: &CodingConfig,
    noise: Option<&NoiseKind>,
    rng: &mut R,
) -> Result<f64> {
    let n = if limit == 0 { set.len() } else { limit.min(set.len()) };
    let mut correct = 0usize;
    let chunk = 500;
    for start in (0..n).step_by(chunk) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let mut x = set.batch::<T>(&idx);
        if let Some(k) = noise {
            for mut row in x.rows_mut() {
                let noisy = perturb_input(row.view(), k, rng)?;
                row.assign(&noisy);
            }
        }
        for (d, &i) in policy.decide_batch(&x, coding, true, rng)?.iter().zip(&idx) {
            correct += (d.action == set.labels[i] as usize) as usize;
        }
    }
    Ok(correct as f64 / n as f64)
}

/// Mean and sample standard deviation of episode returns with sampled actions.
pub fn evaluate_pendulum<T: Scalar, R: Rng + ?Sized>(
    policy: &Policy<T>,
    env_cfg: &PendulumConfig,
    norm: &ObsNormalizer,
    episodes: usize,
    coding: &CodingConfig,
    noise: Option<&NoiseKind>,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let mut env = Pendulum::new(*env_cfg)?;
    let returns = (0..episodes)
        .map(|_| Ok(run_pendulum_episode(policy, &mut env, norm, coding, noise, rng)?.len() as f64))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_std(&returns))
}

pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Events reported by the training loops.
#[derive(Debug)]
pub enum TrainEvent<'a, T> {
    /// Training progress, one per step (MNIST) or episode (pendulum).
    Progress { step: usize, metric: f64, loss: f64 },
    Checkpoint { step: usize, metric: f64, policy: &'a Policy<T> },
}

/// Outcome of a training run: the best checkpoint by zero-noise metric
/// (earliest on ties) and where training stopped.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub best: Policy<T>,
    pub best_step: usize,
    pub best_metric: f64,
    pub steps_run: usize,
    pub reached_target: bool,
}

struct Best<T> {
    policy: Option<Policy<T>>,
    step: usize,
    metric: f64,
}

impl<T: Scalar> Best<T> {
    fn new() -> Self {
        Self {
            policy: None,
            step: 0,
            metric: f64::NEG_INFINITY,
        }
    }

    fn offer(&mut self, step: usize, metric: f64, policy: &Policy<T>) {
        if metric > self.metric {
            self.metric = metric;
            self.step = step;
            self.policy = Some(policy.clone());
        }
    }
}

/// REINFORCE on reward-based MNIST with fresh batches of single-step episodes.
pub fn train_mnist<T: Scalar>(
    policy: Policy<T>,
    train: &MnistSet,
    test: &MnistSet,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(TrainEvent<'_, T>),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let mut policy = policy;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = cfg.optimizer.build::<T>(cfg.lr);
    let mut best = Best::new();
    let mut reached = false;
    let mut steps_run = 0;
    for step in 1..=cfg.episodes {
        let idx = sample_indices(&mut rng, train.len(), cfg.batch_size.min(train.len())).into_vec();
        let x = train.batch::<T>(&idx);
        let decisions = policy.decide_batch(&x, &cfg.coding, false, &mut rng)?;
        let rewards: Vec<f64> = decisions
            .iter()
            .zip(&idx)
            .map(|(d, &i)| reward_of(d.action, train.labels[i]))
            .collect();
        let items: Vec<_> = decisions
            .iter()
            .zip(&rewards)
            .zip(x.rows())
            .map(|((d, &r), row)| (r, d, row))
            .collect();
        apply_ascent(&mut policy, &mut opt, &items, items.len(), &cfg.coding)?;
        if !policy.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        let acc = rewards.iter().filter(|&&r| r > 0.0).count() as f64 / rewards.len() as f64;
        observer(TrainEvent::Progress {
            step,
            metric: acc,
            loss: 0.0,
        });
        steps_run = step;
        if step % cfg.checkpoint_interval == 0 {
            let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ step as u64);
            let metric = evaluate_mnist(&policy, test, cfg.checkpoint_eval, &cfg.coding, None, &mut eval_rng)?;
            observer(TrainEvent::Checkpoint {
                step,
                metric,
                policy: &policy,
            });
            best.offer(step, metric, &policy);
            if cfg.target_metric.is_some_and(|t| metric >= t) {
                reached = true;
                break;
            }
        }
    }
    Ok(finish(best, policy, steps_run, reached))
}

fn finish<T: Scalar>(best: Best<T>, last: Policy<T>, steps_run: usize, reached: bool) -> TrainOutcome<T> {
    match best.policy {
        Some(p) => TrainOutcome {
            best: p,
            best_step: best.step,
            best_metric: best.metric,
            steps_run,
            reached_target: reached,
        },
        None => TrainOutcome {
            best: last,
            best_step: steps_run,
            best_metric: f64::NAN,
            steps_run,
            reached_target: reached,
        },
    }
}

/// Actor-critic training on the cart-pole.
pub fn train_pendulum<T: Scalar>(
    policy: Policy<T>,
    env_cfg: &PendulumConfig,
    norm: &ObsNormalizer,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(TrainEvent<'_, T>),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let mut policy = policy;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = cfg.optimizer.build::<T>(cfg.lr);
    let mut critic = Critic::new(cfg.critic_head, cfg, cfg.seed.wrapping_add(0x9e37_79b9))?;
    let mut env = Pendulum::new(*env_cfg)?;
    let mut best = Best::new();
    let mut reached = false;
    let mut episodes_run = 0;
    for episode in 1..=cfg.episodes {
        let stats = a2c_episode(&mut policy, &mut opt, &mut critic, &mut env, norm, cfg, &mut rng)?;
        if !policy.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        observer(TrainEvent::Progress {
            step: episode,
            metric: stats.env_return,
            loss: stats.critic_loss,
        });
        episodes_run = episode;
        if episode % cfg.checkpoint_interval == 0 {
            let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (episode as u64).rotate_left(32));
            let (metric, _) = evaluate_pendulum(
                &policy,
                env_cfg,
                norm,
                cfg.checkpoint_eval.max(1),
                &cfg.coding,
                None,
                &mut eval_rng,
            )?;
            observer(TrainEvent::Checkpoint {
                step: episode,
                metric,
                policy: &policy,
            });
            best.offer(episode, metric, &policy);
            if let Some(target) = cfg.target_metric.filter(|&t| metric >= t) {
                let confirmed = cfg.confirm_episodes == 0 || {
                    let (m, _) = evaluate_pendulum(
                        &policy,
                        env_cfg,
                        norm,
                        cfg.confirm_episodes,
                        &cfg.coding,
                        None,
                        &mut eval_rng,
                    )?;
                    m >= target
                };
                if confirmed {
                    best = Best::new();
                    best.offer(episode, metric, &policy);
                    reached = true;
                    break;
                }
            }
        }
    }
    Ok(finish(best, policy, episodes_run, reached))
}

/// Clamp a raw state into a firing state (helper for analyses).
pub fn clamp<T: Scalar, R: Rng + ?Sized>(params: &RwtaParams<T>, s: ArrayView1<'_, T>, rng: &mut R) -> Result<FiringState<T>> {
    clamp_state(params.topology(), s, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_of_uniform_five() {
        let p = [0.2; 5];
        assert!((entropy(&p) - 5f64.ln()).abs() < 1e-12);
        assert!((entropy_bonus(&p, 2.0) - 0.8047189562170501).abs() < 1e-12);
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn discounting() {
        assert_eq!(discounted_return(&[1.0, 1.0, 1.0], 1.0), 3.0);
        assert!((discounted_return(&[1.0, 2.0], 0.5) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn names_round_trip() {
        for c in Coding::ALL {
            assert_eq!(c.as_str().parse::<Coding>().unwrap(), *c);
        }
        assert_eq!("svpg-shrink".parse::<Method>().unwrap(), Method::SvpgShrink);
        assert!("cnn".parse::<Method>().is_err());
    }

    #[test]
    fn shapes_follow_tasks() {
        assert_eq!(rwta_shape(Task::Mnist, Method::Svpg).unwrap().neuron_count(), 994);
        assert_eq!(rwta_shape(Task::Pendulum, Method::Svpg).unwrap().neuron_count(), 73);
        assert_eq!(rwta_shape(Task::Pendulum, Method::SvpgShrink).unwrap().hidden_circuits, 3);
        assert!(rwta_shape(Task::Mnist, Method::Bp).is_none());
    }

    #[test]
    fn fifo_buffer_evicts_oldest() {
        let cfg = TrainConfig::pendulum(0);
        let mut critic = Critic::<f64>::new(CriticHead::ActionValue, &cfg, 1).unwrap();
        for k in 0..150 {
            critic.push(CriticSample {
                obs: Array1::zeros(4),
                action: k % 5,
                reward: k as f64,
                next_obs: Array1::zeros(4),
                next_probs: None,
            });
        }
        assert_eq!(critic.buffer.len(), 100);
        assert_eq!(critic.buffer.front().unwrap().reward, 50.0);
    }
}
