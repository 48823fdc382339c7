//! Rate-coded policy inference on the RWTA network.
//!
//! Each update recomputes every inferred neuron from the previous iterate:
//! `q_i <- softmax_{G(i)}(w_row,i . q + w_col,i . q + b_i)`. State neurons stay
//! clamped to the encoded observation.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::topology::{CircuitIndex, RwtaParams, Topology};

/// Firing probabilities `q` and sampled binary firing statuses `v` of all neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct FiringState<T> {
    pub q: Array1<T>,
    pub v: Array1<T>,
}

impl<T: Scalar> FiringState<T> {
    pub fn q_ha(&self, topology: &Topology) -> ArrayView1<'_, T> {
        self.q.slice(s![..topology.shape.ha_count()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    /// Upper bound on mean-field iterations.
    pub max_iters: usize,
    /// Stop once the max-abs change over the inferred block is at most this.
    pub tol: f64,
    /// Std of Gaussian noise injected after each iteration (0 disables).
    pub rate_noise_std: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            rate_noise_std: 0.0,
        }
    }
}

impl InferenceConfig {
    pub const DEFAULT_RATE_NOISE_STD: f64 = 0.01;

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.tol >= 0.0) || !(self.rate_noise_std >= 0.0) {
            return Err(Error::InvalidConfig(
                "tol and rate_noise_std must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Result of iterating the mean-field map.
#[derive(Debug, Clone)]
pub struct Inference<T> {
    pub state: FiringState<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Encode a normalized observation into the state neurons and randomly
/// initialize the inferred circuits (uniform draws, normalized per circuit).
pub fn clamp_state<T: Scalar, R: Rng + ?Sized>(
    topology: &Topology,
    s: ArrayView1<'_, T>,
    rng: &mut R,
) -> Result<FiringState<T>> {
    let shape = &topology.shape;
    if s.len() != shape.state_dim {
        return Err(Error::ShapeMismatch(format!(
            "state has {} components, network expects {}",
            s.len(),
            shape.state_dim
        )));
    }
    if let Some((index, &value)) = s
        .iter()
        .enumerate()
        .find(|(_, x)| !(**x >= T::zero() && **x <= T::one()))
    {
        return Err(Error::Encoding {
            index,
            value: value.to_f64_lossy(),
        });
    }
    let n = shape.neuron_count();
    let mut q = Array1::zeros(n);
    random_init(topology, q.as_slice_mut().unwrap(), rng);
    q.slice_mut(s![shape.ha_count()..]).assign(&s);
    Ok(FiringState {
        q,
        v: Array1::zeros(n),
    })
}

fn random_init<T: Scalar, R: Rng + ?Sized>(topology: &Topology, q: &mut [T], rng: &mut R) {
    for c in topology.circuits.wta() {
        let mut total = T::zero();
        for i in c.range.clone() {
            // (0, 1] keeps every circuit's sum positive
            let u = T::lit(1.0 - rng.random::<f64>());
            q[i] = u;
            total += u;
        }
        for i in c.range.clone() {
            q[i] /= total;
        }
    }
}

/// Softmax of `z` within every WTA circuit, in place, with max subtraction.
/// `z` covers the inferred block only.
pub(crate) fn circuit_softmax<T: Scalar>(circuits: &CircuitIndex, z: &mut [T]) -> Result<()> {
    for c in circuits.wta() {
        let block = &mut z[c.range.clone()];
        let mut max = T::neg_infinity();
        for (k, x) in block.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    index: c.range.start + k,
                });
            }
            max = max.max(*x);
        }
        let mut total = T::zero();
        for x in block.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in block.iter_mut() {
            *x /= total;
        }
    }
    Ok(())
}

/// Clip to `[0, 1]` and renormalize each circuit; a circuit that clips to all
/// zeros becomes uniform.
pub(crate) fn clip_renormalize<T: Scalar>(circuits: &CircuitIndex, q: &mut [T]) {
    for c in circuits.wta() {
        let block = &mut q[c.range.clone()];
        let mut total = T::zero();
        for x in block.iter_mut() {
            *x = x.max(T::zero()).min(T::one());
            total += *x;
        }
        if total > T::zero() {
            for x in block.iter_mut() {
                *x /= total;
            }
        } else {
            let u = T::one() / T::from_usize_lossy(block.len());
            block.fill(u);
        }
    }
}

/// One synchronous mean-field update computed directly from `W` and `b`.
pub fn mean_field_step<T: Scalar>(
    params: &RwtaParams<T>,
    state: &FiringState<T>,
) -> Result<FiringState<T>> {
    let h = params.shape().ha_count();
    let mut z = vec![T::zero(); h];
    for (i, zi) in z.iter_mut().enumerate() {
        let row = params.w.row(i).dot(&state.q);
        let col = params.w.column(i).dot(&state.q);
        *zi = row + col + params.b[i];
    }
    circuit_softmax(&params.topology().circuits, &mut z)?;
    let mut q = state.q.clone();
    q.slice_mut(s![..h]).assign(&ArrayView1::from(&z));
    Ok(FiringState {
        q,
        v: state.v.clone(),
    })
}

/// Mean-field map with the symmetric coupling `W + W^T` precomputed for the
/// inferred rows. Build once per parameter update and reuse across inferences.
#[derive(Debug, Clone)]
pub struct MeanField<T> {
    topology: Arc<Topology>,
    /// `(W + W^T)[ha, :]`, `H x N`.
    sym: Array2<T>,
    b_ha: Array1<T>,
}

impl<T: Scalar> MeanField<T> {
    pub fn new(params: &RwtaParams<T>) -> Self {
        let h = params.shape().ha_count();
        let w = &params.w;
        let sym = &w.slice(s![..h, ..]) + &w.slice(s![.., ..h]).t();
        Self {
            topology: params.topology().clone(),
            sym,
            b_ha: params.b.slice(s![..h]).to_owned(),
        }
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    fn h(&self) -> usize {
        self.topology.shape.ha_count()
    }

    /// Constant input from the clamped state neurons plus bias.
    fn drive(&self, q: ArrayView1<'_, T>) -> Array1<T> {
        let h = self.h();
        self.sym.slice(s![.., h..]).dot(&q.slice(s![h..])) + &self.b_ha
    }

    pub fn step(&self, state: &FiringState<T>) -> Result<FiringState<T>> {
        let drive = self.drive(state.q.view());
        let mut next = state.clone();
        self.step_with_drive(&drive, state.q.view(), next.q.as_slice_mut().unwrap())?;
        Ok(next)
    }

    fn step_with_drive(&self, drive: &Array1<T>, q: ArrayView1<'_, T>, out: &mut [T]) -> Result<()> {
        let h = self.h();
        let z = self.sym.slice(s![.., ..h]).dot(&q.slice(s![..h])) + drive;
        out[..h].copy_from_slice(z.as_slice().unwrap());
        circuit_softmax(&self.topology.circuits, &mut out[..h])
    }

    /// Iterate from `init` until convergence or `max_iters`. `observer` sees
    /// every iterate (after noise injection) with its 1-based iteration index.
    pub fn run<R: Rng + ?Sized>(
        &self,
        init: FiringState<T>,
        cfg: &InferenceConfig,
        rng: &mut R,
        mut observer: impl FnMut(usize, &FiringState<T>),
    ) -> Result<Inference<T>> {
        cfg.validate()?;
        let h = self.h();
        let tol = T::lit(cfg.tol);
        let drive = self.drive(init.q.view());
        let mut cur = init;
        let mut next = cur.clone();
        for iter in 1..=cfg.max_iters {
            self.step_with_drive(&drive, cur.q.view(), next.q.as_slice_mut().unwrap())?;
            if cfg.rate_noise_std > 0.0 {
                add_rate_noise(&self.topology, &mut next.q.as_slice_mut().unwrap()[..h], cfg.rate_noise_std, rng);
            }
            let change = max_abs_diff(&cur.q.as_slice().unwrap()[..h], &next.q.as_slice().unwrap()[..h]);
            std::mem::swap(&mut cur, &mut next);
            observer(iter, &cur);
            if change <= tol {
                return Ok(Inference {
                    state: cur,
                    iterations: iter,
                    converged: true,
                });
            }
        }
        Ok(Inference {
            state: cur,
            iterations: cfg.max_iters,
            converged: false,
        })
    }

    /// Clamp `s`, randomly initialize, and iterate to the fixed point.
    pub fn infer<R: Rng + ?Sized>(
        &self,
        s: ArrayView1<'_, T>,
        cfg: &InferenceConfig,
        rng: &mut R,
    ) -> Result<Inference<T>> {
        let init = clamp_state(&self.topology, s, rng)?;
        self.run(init, cfg, rng, |_, _| {})
    }

    /// Batched inference over the rows of `states` (`B x d_s`). Rows that have
    /// converged are frozen while the rest keep iterating.
    pub fn infer_batch<R: Rng + ?Sized>(
        &self,
        states: ArrayView2<'_, T>,
        cfg: &InferenceConfig,
        rng: &mut R,
    ) -> Result<Vec<Inference<T>>> {
        cfg.validate()?;
        let shape = &self.topology.shape;
        let (h, n) = (shape.ha_count(), shape.neuron_count());
        let batch = states.nrows();
        let mut q_ha = Array2::<T>::zeros((batch, h));
        let mut inits = Vec::with_capacity(batch);
        for (row, s) in states.outer_iter().enumerate() {
            let init = clamp_state(&self.topology, s, rng)?;
            q_ha.row_mut(row).assign(&init.q.slice(s![..h]));
            inits.push(init);
        }
        let drive = states.dot(&self.sym.slice(s![.., h..]).t()) + &self.b_ha;
        let coupling = self.sym.slice(s![.., ..h]);
        let tol = T::lit(cfg.tol);
        let mut active: Vec<bool> = vec![true; batch];
        let mut iterations = vec![cfg.max_iters; batch];
        let mut converged = vec![false; batch];
        let mut remaining = batch;
        for iter in 1..=cfg.max_iters {
            if remaining == 0 {
                break;
            }
            let mut z = q_ha.dot(&coupling.t()) + &drive;
            for (row, mut zr) in z.axis_iter_mut(Axis(0)).enumerate() {
                if !active[row] {
                    continue;
                }
                let zs = zr.as_slice_mut().unwrap();
                circuit_softmax(&self.topology.circuits, zs)?;
                if cfg.rate_noise_std > 0.0 {
                    add_rate_noise(&self.topology, zs, cfg.rate_noise_std, rng);
                }
                let mut qr = q_ha.row_mut(row);
                let change = max_abs_diff(qr.as_slice().unwrap(), zs);
                qr.as_slice_mut().unwrap().copy_from_slice(zs);
                if change <= tol {
                    active[row] = false;
                    iterations[row] = iter;
                    converged[row] = true;
                    remaining -= 1;
                }
            }
        }
        Ok(inits
            .into_iter()
            .enumerate()
            .map(|(row, mut init)| {
                init.q.slice_mut(s![..h]).assign(&q_ha.row(row));
                debug_assert_eq!(init.q.len(), n);
                Inference {
                    state: init,
                    iterations: iterations[row],
                    converged: converged[row],
                }
            })
            .collect())
    }
}

fn add_rate_noise<T: Scalar, R: Rng + ?Sized>(topology: &Topology, q_ha: &mut [T], std: f64, rng: &mut R) {
    for x in q_ha.iter_mut() {
        let e: f64 = StandardNormal.sample(rng);
        *x += T::lit(std * e);
    }
    clip_renormalize(&topology.circuits, q_ha);
}

fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |m, (x, y)| m.max((*x - *y).abs()))
}

/// Clamp, randomly initialize and iterate the mean-field map.
pub fn infer_fixed_point<T: Scalar, R: Rng + ?Sized>(
    params: &RwtaParams<T>,
    s: ArrayView1<'_, T>,
    cfg: &InferenceConfig,
    rng: &mut R,
) -> Result<Inference<T>> {
    MeanField::new(params).infer(s, cfg, rng)
}

/// Draw a categorical sample from `probs`; returns the chosen index.
pub fn sample_categorical<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let u = T::lit(rng.random::<f64>());
    let mut acc = T::zero();
    let mut last_positive = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > T::zero() {
            last_positive = k;
        }
        acc += p;
        if u < acc {
            return k;
        }
    }
    last_positive
}

/// Fill `v`: one categorical winner per WTA circuit, a Bernoulli draw with
/// mean `q_s` for every state neuron.
pub fn sample_firing<T: Scalar, R: Rng + ?Sized>(
    topology: &Topology,
    state: &FiringState<T>,
    rng: &mut R,
) -> FiringState<T> {
    let mut v = Array1::zeros(state.q.len());
    let q = state.q.as_slice().unwrap();
    for c in topology.circuits.wta() {
        let k = sample_categorical(&q[c.range.clone()], rng);
        v[c.range.start + k] = T::one();
    }
    for i in topology.shape.state_range() {
        if T::lit(rng.random::<f64>()) < q[i] {
            v[i] = T::one();
        }
    }
    FiringState {
        q: state.q.clone(),
        v,
    }
}

/// The action marginal `q_a` of a converged state.
pub fn action_distribution<T: Scalar>(topology: &Topology, state: &FiringState<T>) -> Array1<T> {
    state.q.slice(s![topology.shape.action_range()]).to_owned()
}
