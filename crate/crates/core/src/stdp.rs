//! Reward-modulated STDP and its correspondence with the local policy gradient.
//!
//! A pair rule is `<W_pre, W_post, A_plus, A_minus>` with normalized windows
//! `W_plus`, `W_minus`. At spike step `l`, for the synapse between `i` and `j`:
//!
//! `STDP(l) = S_j(l) [W_pre + A_plus sum_y W_plus(y) S_i(l-1-y)]
//!          + S_i(l) [W_post + A_minus sum_y W_minus(y) S_j(l-1-y)]`
//!
//! Setting `W_pre = v_i`, `W_post = v_j` and `A_plus = A_minus = -1/rho_hat`
//! makes the time average of `R * STDP` an unbiased estimate of
//! `R * rho_hat * [q_j (v_i - q_i) + q_i (v_j - q_j)]` for trains firing at
//! `rho = rho_hat * q`.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gradient::PolicyGradient;
use crate::inference::{sample_categorical, FiringState};
use crate::scalar::Scalar;
use crate::spikesim::{Kernel, KernelTable, SpikeTrain};
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq)]
pub struct StdpRule {
    pub w_pre: f64,
    pub w_post: f64,
    pub a_plus: f64,
    pub a_minus: f64,
    pub window_plus: KernelTable,
    pub window_minus: KernelTable,
}

impl StdpRule {
    pub fn new(w_pre: f64, w_post: f64, a_plus: f64, a_minus: f64, window: &StdpWindow) -> Result<Self> {
        let table = window.table()?;
        Ok(Self {
            w_pre,
            w_post,
            a_plus,
            a_minus,
            window_plus: table.clone(),
            window_minus: table,
        })
    }

    /// The policy-gradient setting for the synapse `(i, j)`.
    pub fn svpg(v_i: f64, v_j: f64, rho_hat: f64, window: &StdpWindow) -> Result<Self> {
        check_rho(rho_hat)?;
        Self::new(v_i, v_j, -1.0 / rho_hat, -1.0 / rho_hat, window)
    }
}

/// Shape and support of the STDP time window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StdpWindow {
    pub kernel: Kernel,
    pub horizon: usize,
}

impl StdpWindow {
    pub fn rectangle(width: usize) -> Self {
        Self {
            kernel: Kernel::Rectangle { width },
            horizon: width,
        }
    }

    pub fn double_exponential(tau_rise: f64, tau_fall: f64, horizon: usize) -> Self {
        Self {
            kernel: Kernel::DoubleExponential { tau_rise, tau_fall },
            horizon,
        }
    }

    pub fn table(&self) -> Result<KernelTable> {
        KernelTable::normalized(&self.kernel, self.horizon, 1.0)
    }
}

fn check_rho(rho_hat: f64) -> Result<()> {
    if rho_hat > 0.0 && rho_hat <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("rho_hat must lie in (0, 1], got {rho_hat}")))
    }
}

/// `sum_y W(y) S_n(l-1-y)`.
fn windowed(train: &SpikeTrain, window: &KernelTable, n: usize, l: usize) -> f64 {
    (0..window.len().min(l))
        .filter(|&y| train.fired(n, l - 1 - y))
        .map(|y| window.eval(y))
        .sum()
}

pub fn stdp_coefficient(rule: &StdpRule, train: &SpikeTrain, i: usize, j: usize, l: usize) -> f64 {
    let mut out = 0.0;
    if train.fired(j, l) {
        out += rule.w_pre + rule.a_plus * windowed(train, &rule.window_plus, i, l);
    }
    if train.fired(i, l) {
        out += rule.w_post + rule.a_minus * windowed(train, &rule.window_minus, j, l);
    }
    out
}

/// `C[j, n] = sum_l S_j(l) sum_y W(y) S_n(l-1-y)` for all neuron pairs.
fn lagged_correlation(train: &SpikeTrain, window: &KernelTable) -> Array2<f64> {
    let n = train.neurons();
    let mut corr = Array2::zeros((n, n));
    let mut trace = Array1::<f64>::zeros(n);
    for l in 0..train.steps() {
        if train.events(l).is_empty() {
            continue;
        }
        trace.fill(0.0);
        for y in 0..window.len().min(l) {
            let k = window.eval(y);
            for &p in train.events(l - 1 - y) {
                trace[p as usize] += k;
            }
        }
        for &j in train.events(l) {
            corr.row_mut(j as usize).scaled_add(1.0, &trace);
        }
    }
    corr
}

/// Time average of `R * STDP(l)` under the policy-gradient setting for every
/// admissible synapse; inadmissible entries are zero.
pub fn rstdp_weight_update<T: Scalar>(
    topology: &Topology,
    train: &SpikeTrain,
    v: &Array1<T>,
    reward: f64,
    rho_hat: f64,
    window: &StdpWindow,
) -> Result<Array2<T>> {
    check_rho(rho_hat)?;
    let n = topology.n();
    check_train(train, n)?;
    let mut dw = Array2::zeros((n, n));
    let steps = train.steps();
    if reward == 0.0 || steps == 0 {
        return Ok(dw);
    }
    let table = window.table()?;
    let corr = lagged_correlation(train, &table);
    let count: Vec<f64> = (0..n).map(|i| train.count(i) as f64).collect();
    let v: Vec<f64> = v.iter().map(|x| x.to_f64_lossy()).collect();
    let scale = reward / steps as f64;
    let a = -1.0 / rho_hat;
    for i in 0..n {
        for j in 0..n {
            if topology.mask.allows(i, j) {
                let pre = count[j] * v[i] + a * corr[[j, i]];
                let post = count[i] * v[j] + a * corr[[i, j]];
                dw[[i, j]] = T::lit(scale * (pre + post));
            }
        }
    }
    Ok(dw)
}

/// Time average of `R * [v_i - (1/rho_hat) sum_y W(y) S_i(l-1-y)]` for the
/// inferred neurons; zero for clamped state neurons.
pub fn rstdp_bias_update<T: Scalar>(
    topology: &Topology,
    train: &SpikeTrain,
    v: &Array1<T>,
    reward: f64,
    rho_hat: f64,
    window: &StdpWindow,
) -> Result<Array1<T>> {
    check_rho(rho_hat)?;
    let n = topology.n();
    check_train(train, n)?;
    let h = topology.shape.ha_count();
    let mut db = Array1::zeros(n);
    let steps = train.steps();
    if reward == 0.0 || steps == 0 {
        return Ok(db);
    }
    let table = window.table()?;
    // sum_l sum_y W(y) S_i(l-1-y) = sum over spikes of the window mass left before L
    let mut cumulative = vec![0.0; table.len() + 1];
    for y in 0..table.len() {
        cumulative[y + 1] = cumulative[y] + table.eval(y);
    }
    for i in 0..h {
        let filtered: f64 = train
            .spike_times(i)
            .iter()
            .map(|&t| {
                let remaining = steps - 1 - t as usize;
                cumulative[remaining.min(table.len())]
            })
            .sum();
        let mean = v[i].to_f64_lossy() - filtered / (rho_hat * steps as f64);
        db[i] = T::lit(reward * mean);
    }
    Ok(db)
}

/// Both R-STDP updates of one RL step as a gradient estimate: the weight
/// update is divided by `rho_hat` so its expectation equals the local score.
pub fn rstdp_gradient<T: Scalar>(
    topology: &Topology,
    train: &SpikeTrain,
    v: &Array1<T>,
    reward: f64,
    rho_hat: f64,
    window: &StdpWindow,
) -> Result<PolicyGradient<T>> {
    let mut dw = rstdp_weight_update(topology, train, v, reward, rho_hat, window)?;
    dw.mapv_inplace(|x| x / T::lit(rho_hat));
    let db = rstdp_bias_update(topology, train, v, reward, rho_hat, window)?;
    Ok(PolicyGradient { dw, db })
}

fn check_train(train: &SpikeTrain, n: usize) -> Result<()> {
    if train.neurons() == n {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "spike train has {} neurons, network has {n}",
            train.neurons()
        )))
    }
}

/// Spike train at fixed rates `rho_hat * q`: each WTA circuit fires at most one
/// neuron per step, state neurons fire independently.
pub fn stationary_train<T: Scalar, R: Rng + ?Sized>(
    topology: &Topology,
    state: &FiringState<T>,
    rho_hat: f64,
    steps: usize,
    rng: &mut R,
) -> SpikeTrain {
    let n = topology.n();
    let q: Vec<f64> = state.q.iter().map(|x| x.to_f64_lossy()).collect();
    let mut train = SpikeTrain::new(n);
    let mut fired = Vec::new();
    for _ in 0..steps {
        fired.clear();
        for c in topology.circuits.wta() {
            if rng.random::<f64>() < rho_hat {
                fired.push(c.range.start + sample_categorical(&q[c.range.clone()], rng));
            }
        }
        for i in topology.shape.state_range() {
            if rng.random::<f64>() < rho_hat * q[i] {
                fired.push(i);
            }
        }
        train.push_step(&fired);
    }
    train
}

/// Expected weight update `rho_hat * [q_j (v_i - q_i) + q_i (v_j - q_j)]`.
pub fn expected_weight_update(q: &[f64], v: &[f64], i: usize, j: usize, reward: f64, rho_hat: f64) -> f64 {
    reward * rho_hat * (q[j] * (v[i] - q[i]) + q[i] * (v[j] - q[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::NetworkShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair_train(a: &[bool], b: &[bool]) -> SpikeTrain {
        SpikeTrain::from_dense(2, |n, l| if n == 0 { a[l] } else { b[l] }, a.len())
    }

    #[test]
    fn silent_step_is_zero() {
        let rule = StdpRule::svpg(1.0, 0.0, 0.5, &StdpWindow::rectangle(3)).unwrap();
        let t = pair_train(&[false, false], &[false, false]);
        assert_eq!(stdp_coefficient(&rule, &t, 0, 1, 1), 0.0);
    }

    #[test]
    fn lone_pre_spike_gives_w_pre() {
        let rule = StdpRule::new(0.7, -0.2, -2.0, -2.0, &StdpWindow::rectangle(3)).unwrap();
        let t = pair_train(&[false, false], &[false, true]);
        assert_eq!(stdp_coefficient(&rule, &t, 0, 1, 1), 0.7);
    }

    #[test]
    fn windowed_history_is_subtracted() {
        let rule = StdpRule::new(1.0, 0.0, -2.0, -2.0, &StdpWindow::rectangle(4)).unwrap();
        // neuron 0 fires at 0 and 2; neuron 1 fires at 3
        let t = pair_train(&[true, false, true, false], &[false, false, false, true]);
        assert!((stdp_coefficient(&rule, &t, 0, 1, 3) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn windows_are_normalized() {
        for w in [StdpWindow::rectangle(10), StdpWindow::double_exponential(1.0, 5.0, 50)] {
            assert!((w.table().unwrap().sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_form_matches_pointwise_rule() {
        let topo = Topology::new(NetworkShape::new(2, 1, 3, 2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = Array1::from(vec![0.2, 0.5, 0.3, 0.6, 0.4, 0.7, 0.1]);
        let v = Array1::from(vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let state = FiringState { q, v: v.clone() };
        let window = StdpWindow::double_exponential(1.0, 5.0, 20);
        let train = stationary_train(&topo, &state, 0.5, 300, &mut rng);
        let dw = rstdp_weight_update(&topo, &train, &v, 1.5, 0.5, &window).unwrap();
        let db = rstdp_bias_update(&topo, &train, &v, 1.5, 0.5, &window).unwrap();
        let table = window.table().unwrap();
        for i in 0..topo.n() {
            for j in 0..topo.n() {
                if !topo.mask.allows(i, j) {
                    assert_eq!(dw[[i, j]], 0.0);
                    continue;
                }
                let rule = StdpRule::svpg(v[i], v[j], 0.5, &window).unwrap();
                let mean: f64 = (0..train.steps())
                    .map(|l| stdp_coefficient(&rule, &train, i, j, l))
                    .sum::<f64>()
                    / train.steps() as f64;
                assert!((dw[[i, j]] - 1.5 * mean).abs() < 1e-12, "({i},{j})");
            }
        }
        for i in 0..topo.shape.ha_count() {
            let mean: f64 = (0..train.steps())
                .map(|l| v[i] - windowed(&train, &table, i, l) / 0.5)
                .sum::<f64>()
                / train.steps() as f64;
            assert!((db[i] - 1.5 * mean).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_reward_or_silence_is_zero() {
        let topo = Topology::new(NetworkShape::new(1, 1, 2, 2).unwrap());
        let v = Array1::<f64>::zeros(topo.n());
        let train = SpikeTrain::from_dense(topo.n(), |_, _| false, 50);
        let w = StdpWindow::rectangle(5);
        assert!(rstdp_weight_update(&topo, &train, &v, 0.0, 0.5, &w).unwrap().iter().all(|&x| x == 0.0));
        assert!(rstdp_weight_update(&topo, &train, &v, 2.0, 0.5, &w).unwrap().iter().all(|&x| x == 0.0));
        assert!(rstdp_bias_update(&topo, &train, &v, 2.0, 0.5, &w).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_rate() {
        let topo = Topology::new(NetworkShape::new(1, 1, 2, 2).unwrap());
        let v = Array1::<f64>::zeros(topo.n());
        let train = SpikeTrain::new(topo.n());
        assert!(rstdp_weight_update(&topo, &train, &v, 1.0, 0.0, &StdpWindow::rectangle(2)).is_err());
        assert!(rstdp_bias_update(&topo, &SpikeTrain::new(2), &v, 1.0, 0.5, &StdpWindow::rectangle(2)).is_err());
    }
}
