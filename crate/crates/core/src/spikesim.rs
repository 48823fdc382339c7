//! Spike-coded inference: kernel-filtered potentials and WTA spike sampling.
//!
//! Time is discrete. At spike step `l` the potential of neuron `i` integrates
//! spikes emitted strictly before `l`; a spike emitted at `l - 1 - y` is
//! weighted by `kappa(y)`:
//!
//! `u_i(l) = sum_j (w_ij + w_ji) * sum_{y >= 0} kappa(y) S_j(l - 1 - y) + b_i`
//!
//! Within a WTA circuit at most one neuron fires per step: with probability
//! `rho_hat` the circuit emits one spike whose owner is drawn from
//! `softmax(u)` over the circuit. The firing threshold of the plain LIF model
//! has no runtime role; the log-partition term of the softmax takes its place.

use std::io::Write;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::inference::{circuit_softmax, clamp_state, clip_renormalize, sample_categorical, FiringState};
use crate::scalar::Scalar;
use crate::topology::{RwtaParams, Topology};

/// Postsynaptic potential kernel shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// Constant over `width` steps.
    Rectangle { width: usize },
    /// `c * (exp(-y / tau_fall) - exp(-y / tau_rise))`, truncated at the horizon.
    DoubleExponential { tau_rise: f64, tau_fall: f64 },
}

impl Kernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Rectangle { width } if width == 0 => {
                Err(Error::InvalidKernel("rectangle width must be positive".into()))
            }
            Kernel::DoubleExponential { tau_rise, tau_fall }
                if !(tau_rise > 0.0) || !(tau_rise < tau_fall) =>
            {
                Err(Error::InvalidKernel(format!(
                    "double exponential needs 0 < tau_rise < tau_fall, got {tau_rise}, {tau_fall}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Unnormalized shape sampled on `0..len`.
    fn shape(&self, len: usize) -> Vec<f64> {
        match *self {
            Kernel::Rectangle { width } => (0..len).map(|y| if y < width { 1.0 } else { 0.0 }).collect(),
            Kernel::DoubleExponential { tau_rise, tau_fall } => (0..len)
                .map(|y| {
                    let y = y as f64;
                    (-y / tau_fall).exp() - (-y / tau_rise).exp()
                })
                .collect(),
        }
    }

    /// Number of table entries needed for this kernel under `horizon`.
    fn support(&self, horizon: usize) -> usize {
        match *self {
            Kernel::Rectangle { width } => width,
            Kernel::DoubleExponential { .. } => horizon,
        }
    }
}

/// A nonnegative discretized profile normalized to a target mass.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    values: Vec<f64>,
}

impl KernelTable {
    /// Sample `kernel` and scale it so the entries sum to `mass`.
    pub fn normalized(kernel: &Kernel, horizon: usize, mass: f64) -> Result<Self> {
        kernel.validate()?;
        let len = kernel.support(horizon);
        if len == 0 {
            return Err(Error::InvalidKernel("kernel horizon must be positive".into()));
        }
        let raw = kernel.shape(len);
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidKernel("kernel has no mass within the horizon".into()));
        }
        let values = raw.iter().map(|x| x * mass / total).collect();
        Ok(Self { values })
    }

    pub fn eval(&self, y: usize) -> f64 {
        self.values.get(y).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeSimConfig {
    /// Spike steps per RL step (`L`).
    pub steps: usize,
    /// Overall per-step firing rate of a WTA circuit.
    pub rho_hat: f64,
    pub kernel: Kernel,
    /// Truncation of the double-exponential kernel, in steps.
    pub horizon: usize,
}

impl Default for SpikeSimConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            rho_hat: 0.5,
            kernel: Kernel::Rectangle { width: 10 },
            horizon: 50,
        }
    }
}

impl SpikeSimConfig {
    pub fn double_exponential() -> Self {
        Self {
            kernel: Kernel::DoubleExponential {
                tau_rise: 1.0,
                tau_fall: 5.0,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("spike steps must be at least 1".into()));
        }
        if !(self.rho_hat > 0.0 && self.rho_hat <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rho_hat must lie in (0, 1], got {}",
                self.rho_hat
            )));
        }
        self.kernel.validate()
    }

    /// Kernel table with total mass `1 / rho_hat`.
    pub fn kernel_table(&self) -> Result<KernelTable> {
        self.validate()?;
        KernelTable::normalized(&self.kernel, self.horizon, 1.0 / self.rho_hat)
    }
}

/// `kappa(y)` under `cfg`'s normalization.
pub fn kernel_eval(cfg: &SpikeSimConfig, y: usize) -> Result<f64> {
    Ok(cfg.kernel_table()?.eval(y))
}

/// Binary spike events of `N` neurons over `L` steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTrain {
    neurons: usize,
    /// Neurons that fired at each step, ascending.
    events: Vec<Vec<u32>>,
    /// Spike steps of each neuron, ascending.
    times: Vec<Vec<u32>>,
}

impl SpikeTrain {
    pub fn new(neurons: usize) -> Self {
        Self {
            neurons,
            events: Vec::new(),
            times: vec![Vec::new(); neurons],
        }
    }

    /// Append one step; `fired` lists the neurons spiking at that step.
    pub fn push_step(&mut self, fired: &[usize]) {
        let l = self.events.len() as u32;
        let mut step: Vec<u32> = fired.iter().map(|&i| i as u32).collect();
        step.sort_unstable();
        step.dedup();
        for &i in &step {
            self.times[i as usize].push(l);
        }
        self.events.push(step);
    }

    pub fn from_dense(neurons: usize, fired: impl Fn(usize, usize) -> bool, steps: usize) -> Self {
        let mut train = Self::new(neurons);
        for l in 0..steps {
            let step: Vec<usize> = (0..neurons).filter(|&i| fired(i, l)).collect();
            train.push_step(&step);
        }
        train
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn steps(&self) -> usize {
        self.events.len()
    }

    pub fn fired(&self, neuron: usize, l: usize) -> bool {
        self.times[neuron].binary_search(&(l as u32)).is_ok()
    }

    pub fn events(&self, l: usize) -> &[u32] {
        &self.events[l]
    }

    pub fn spike_times(&self, neuron: usize) -> &[u32] {
        &self.times[neuron]
    }

    pub fn count(&self, neuron: usize) -> usize {
        self.times[neuron].len()
    }

    /// Every WTA circuit fires at most once per step.
    pub fn is_wta_exclusive(&self, topology: &Topology) -> bool {
        self.events.iter().all(|step| {
            let mut seen = vec![false; topology.circuits.wta().len()];
            step.iter().all(|&i| {
                let c = topology.circuits.circuit_id(i as usize);
                if c >= seen.len() {
                    return true;
                }
                !std::mem::replace(&mut seen[c], true)
            })
        })
    }

    /// Text raster, one `neuron_index,spike_step` line per spike.
    pub fn write_raster<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (l, step) in self.events.iter().enumerate() {
            for i in step {
                writeln!(out, "{i},{l}")?;
            }
        }
        Ok(())
    }
}

/// Kernel-filtered presynaptic activity `x_j(l) = sum_y kappa(y) S_j(l - 1 - y)`.
fn filtered_trace(train: &SpikeTrain, table: &KernelTable, l: usize, out: &mut [f64]) {
    out.fill(0.0);
    for y in 0..table.len().min(l) {
        let k = table.eval(y);
        if k == 0.0 {
            continue;
        }
        for &j in train.events(l - 1 - y) {
            out[j as usize] += k;
        }
    }
}

/// Membrane potentials of all `N` neurons at spike step `l`.
pub fn potential_update<T: Scalar>(
    params: &RwtaParams<T>,
    train: &SpikeTrain,
    table: &KernelTable,
    l: usize,
) -> Array1<T> {
    let n = params.shape().neuron_count();
    let mut x = vec![0.0; n];
    filtered_trace(train, table, l.min(train.steps()), &mut x);
    let x: Array1<T> = x.iter().map(|&v| T::lit(v)).collect();
    params.w.dot(&x) + params.w.t().dot(&x) + &params.b
}

/// Sample the neurons firing at one spike step. `u_ha` holds the potentials of
/// the inferred block; state neurons fire i.i.d. with probability
/// `rho_hat * q_s`.
pub fn spike_step<T: Scalar, R: Rng + ?Sized>(
    topology: &Topology,
    u_ha: &[T],
    q_state: ArrayView1<'_, T>,
    rho_hat: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut probs = u_ha.to_vec();
    circuit_softmax(&topology.circuits, &mut probs)?;
    let mut fired = Vec::new();
    for c in topology.circuits.wta() {
        if rng.random::<f64>() < rho_hat {
            let k = sample_categorical(&probs[c.range.clone()], rng);
            fired.push(c.range.start + k);
        }
    }
    let offset = topology.shape.ha_count();
    for (k, &q) in q_state.iter().enumerate() {
        if rng.random::<f64>() < rho_hat * q.to_f64_lossy() {
            fired.push(offset + k);
        }
    }
    Ok(fired)
}

/// Spike-coded inference engine with `(W + W^T)` precomputed column-wise.
#[derive(Debug, Clone)]
pub struct SpikeSim<T> {
    topology: Arc<Topology>,
    /// `(W + W^T)[:, ha]`, `N x H`: row `j` is the fan-out of neuron `j`.
    fan_out: Array2<T>,
    b_ha: Array1<T>,
    cfg: SpikeSimConfig,
    table: KernelTable,
}

impl<T: Scalar> SpikeSim<T> {
    pub fn new(params: &RwtaParams<T>, cfg: SpikeSimConfig) -> Result<Self> {
        let table = cfg.kernel_table()?;
        let h = params.shape().ha_count();
        let w = &params.w;
        let fan_out = &w.slice(s![.., ..h]) + &w.slice(s![..h, ..]).t();
        Ok(Self {
            topology: params.topology().clone(),
            fan_out,
            b_ha: params.b.slice(s![..h]).to_owned(),
            cfg,
            table,
        })
    }

    pub fn config(&self) -> &SpikeSimConfig {
        &self.cfg
    }

    /// Simulate `L` spike steps for observation `s`.
    ///
    /// Returns empirical probabilities `count / (rho_hat * L)` clipped and
    /// renormalized per circuit, with `v` set to each circuit's last winner
    /// (sampled from `q` for a circuit that never fired) and Bernoulli draws
    /// for the state neurons.
    pub fn run<R: Rng + ?Sized>(
        &self,
        s: ArrayView1<'_, T>,
        rng: &mut R,
    ) -> Result<(FiringState<T>, SpikeTrain)> {
        let shape = &self.topology.shape;
        let (h, n) = (shape.ha_count(), shape.neuron_count());
        let base = clamp_state(&self.topology, s, rng)?;
        let q_state = base.q.slice(s![h..]).to_owned();
        let mut train = SpikeTrain::new(n);
        let mut x = vec![0.0; n];
        let mut u = vec![T::zero(); h];
        for l in 0..self.cfg.steps {
            filtered_trace(&train, &self.table, l, &mut x);
            u.copy_from_slice(self.b_ha.as_slice().unwrap());
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    let xj = T::lit(xj);
                    for (ui, &wji) in u.iter_mut().zip(self.fan_out.row(j)) {
                        *ui += wji * xj;
                    }
                }
            }
            let fired = spike_step(&self.topology, &u, q_state.view(), self.cfg.rho_hat, rng)?;
            train.push_step(&fired);
        }

        let scale = 1.0 / (self.cfg.rho_hat * self.cfg.steps as f64);
        let mut q = base.q.clone();
        for i in 0..h {
            q[i] = T::lit(train.count(i) as f64 * scale);
        }
        clip_renormalize(&self.topology.circuits, &mut q.as_slice_mut().unwrap()[..h]);

        let mut v = Array1::zeros(n);
        for c in self.topology.circuits.wta() {
            let last = c
                .range
                .clone()
                .filter_map(|i| train.spike_times(i).last().map(|&t| (t, i)))
                .max();
            let winner = match last {
                Some((_, i)) => i,
                None => c.range.start + sample_categorical(&q.as_slice().unwrap()[c.range.clone()], rng),
            };
            v[winner] = T::one();
        }
        for i in shape.state_range() {
            if T::lit(rng.random::<f64>()) < q[i] {
                v[i] = T::one();
            }
        }
        Ok((FiringState { q, v }, train))
    }
}

/// One-shot spike inference; see [`SpikeSim::run`].
pub fn run_spike_inference<T: Scalar, R: Rng + ?Sized>(
    params: &RwtaParams<T>,
    s: ArrayView1<'_, T>,
    cfg: &SpikeSimConfig,
    rng: &mut R,
) -> Result<(FiringState<T>, SpikeTrain)> {
    SpikeSim::new(params, *cfg)?.run(s, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::NetworkShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rect(width: usize, rho_hat: f64) -> SpikeSimConfig {
        SpikeSimConfig {
            rho_hat,
            kernel: Kernel::Rectangle { width },
            ..Default::default()
        }
    }

    #[test]
    fn rectangle_kernel_values() {
        let cfg = rect(10, 0.5);
        assert!((kernel_eval(&cfg, 3).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(kernel_eval(&cfg, 10).unwrap(), 0.0);
        assert!((cfg.kernel_table().unwrap().sum() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn double_exponential_normalized() {
        let cfg = SpikeSimConfig::double_exponential();
        let table = cfg.kernel_table().unwrap();
        assert!((table.sum() - 1.0 / cfg.rho_hat).abs() < 1e-9);
        assert!(table.values().iter().all(|&k| k >= 0.0));
        assert_eq!(table.eval(0), 0.0);
    }

    #[test]
    fn invalid_kernels_rejected() {
        let bad = Kernel::DoubleExponential {
            tau_rise: 5.0,
            tau_fall: 1.0,
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidKernel(_))));
        assert!(Kernel::Rectangle { width: 0 }.validate().is_err());
    }

    #[test]
    fn potential_from_history() {
        let topo = Arc::new(Topology::new(NetworkShape::new(1, 2, 2, 2).unwrap()));
        let mut params = RwtaParams::<f64>::zeros(topo.clone());
        params.w[[0, 2]] = 0.3;
        params.w[[2, 0]] = -0.1;
        params.b[0] = 0.25;
        params.b[2] = -1.0;
        let table = rect(10, 0.5).kernel_table().unwrap();
        let empty = SpikeTrain::new(7);
        let u = potential_update(&params, &empty, &table, 0);
        assert_eq!(u, params.b);

        let mut train = SpikeTrain::new(7);
        train.push_step(&[2]);
        let u = potential_update(&params, &train, &table, 1);
        assert!((u[0] - (0.2 * 0.2 + 0.25)).abs() < 1e-15);
        assert_eq!(u[2], -1.0);
    }

    #[test]
    fn saturated_winner() {
        let topo = Topology::new(NetworkShape::new(1, 1, 2, 2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = [50.0, -50.0, 0.0, 0.0];
        let q_state = Array1::from(vec![0.0]);
        for _ in 0..1000 {
            let fired = spike_step(&topo, &u, q_state.view(), 1.0, &mut rng).unwrap();
            assert!(fired.contains(&0));
            assert!(!fired.contains(&1));
        }
    }

    #[test]
    fn raster_lines() {
        let mut train = SpikeTrain::new(3);
        train.push_step(&[2, 0]);
        train.push_step(&[]);
        train.push_step(&[1]);
        let mut buf = Vec::new();
        train.write_raster(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0,0\n2,0\n1,2\n");
        assert!(train.fired(1, 2));
        assert!(!train.fired(1, 1));
    }
}
