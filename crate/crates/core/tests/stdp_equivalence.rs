//! Monte-Carlo checks of the R-STDP updates against their expected values
//! under stationary firing.

use std::sync::Arc;

use ndarray::Array1;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svpg_core::inference::FiringState;
use svpg_core::stdp::{rstdp_bias_update, rstdp_weight_update, stationary_train, StdpWindow};
use svpg_core::{NetworkShape, Topology};

/// Random per-circuit distributions with a one-hot `v` drawn from each.
fn random_state(topology: &Topology, rng: &mut ChaCha8Rng) -> FiringState<f64> {
    let n = topology.n();
    let mut q = Array1::zeros(n);
    let mut v = Array1::zeros(n);
    for c in topology.circuits.wta() {
        let raw: Vec<f64> = c.range.clone().map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        for (i, r) in c.range.clone().zip(&raw) {
            q[i] = r / total;
        }
        v[rng.random_range(c.range.clone())] = 1.0;
    }
    for i in topology.shape.state_range() {
        q[i] = rng.random_range(0.1..0.9);
        v[i] = if rng.random::<f64>() < q[i] { 1.0 } else { 0.0 };
    }
    FiringState { q, v }
}

struct Moments {
    mean: f64,
    se: f64,
}

fn moments(x: &[f64]) -> Moments {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Moments {
        mean,
        se: (var / n).sqrt(),
    }
}

fn within(m: &Moments, target: f64, k: f64) -> bool {
    (m.mean - target).abs() <= k * m.se + 1e-12
}

fn weight_samples(
    topology: &Topology,
    state: &FiringState<f64>,
    window: &StdpWindow,
    rho: f64,
    reward: f64,
    pairs: &[(usize, usize)],
    replicates: usize,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(replicates); pairs.len()];
    for _ in 0..replicates {
        let train = stationary_train(topology, state, rho, steps, rng);
        let dw = rstdp_weight_update(topology, &train, &state.v, reward, rho, window).unwrap();
        for (k, &(i, j)) in pairs.iter().enumerate() {
            out[k].push(dw[[i, j]]);
        }
    }
    out
}

fn element(state: &FiringState<f64>, i: usize, j: usize) -> f64 {
    let (q, v) = (&state.q, &state.v);
    q[i] * (v[j] - q[j]) + q[j] * (v[i] - q[i])
}

/// Every synapse gets its own replicate trains so the per-synapse outcomes
/// are independent.
fn equivalence_fraction(window: StdpWindow, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topology = Topology::fully_connected(NetworkShape::new(3, 2, 3, 3).unwrap());
    let state = random_state(&topology, &mut rng);
    let n = topology.n();
    let all: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i < j && topology.mask.allows(i, j))
        .collect();
    let pairs: Vec<_> = sample(&mut rng, all.len(), 20).into_iter().map(|k| all[k]).collect();
    let (rho, reward) = (0.5, -0.8);
    let ok = pairs
        .iter()
        .filter(|&&(i, j)| {
            let s = weight_samples(&topology, &state, &window, rho, reward, &[(i, j)], 30, 2_000, &mut rng);
            within(&moments(&s[0]), reward * rho * element(&state, i, j), 3.0)
        })
        .count();
    ok as f64 / pairs.len() as f64
}

#[test]
fn weight_update_mean_matches_local_score_rectangle() {
    assert!(equivalence_fraction(StdpWindow::rectangle(10), 5) >= 0.95);
}

#[test]
fn weight_update_mean_matches_local_score_double_exponential() {
    assert!(equivalence_fraction(StdpWindow::double_exponential(1.0, 5.0, 50), 6) >= 0.95);
}

#[test]
fn wrong_scale_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let topology = Topology::fully_connected(NetworkShape::new(2, 1, 3, 2).unwrap());
    let state = random_state(&topology, &mut rng);
    let pairs: Vec<(usize, usize)> = vec![(0, 3), (1, 4), (2, 5), (0, 6)];
    let samples = weight_samples(&topology, &state, &StdpWindow::rectangle(10), 0.5, 1.0, &pairs, 30, 10_000, &mut rng);
    let rejected = pairs
        .iter()
        .zip(&samples)
        .filter(|((i, j), s)| {
            let t = element(&state, *i, *j);
            t.abs() > 0.05 && !within(&moments(s), 1.5 * 0.5 * t, 3.0)
        })
        .count();
    assert!(rejected >= 2, "oracle lacks power: {rejected}");
}

#[test]
fn expectation_is_symmetric_in_the_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let topology = Topology::fully_connected(NetworkShape::new(2, 1, 2, 2).unwrap());
    let state = random_state(&topology, &mut rng);
    let pairs = vec![(0, 3), (3, 0), (1, 5), (5, 1)];
    let samples = weight_samples(&topology, &state, &StdpWindow::rectangle(10), 0.5, 1.0, &pairs, 30, 10_000, &mut rng);
    for k in [0, 2] {
        let (a, b) = (moments(&samples[k]), moments(&samples[k + 1]));
        let se = (a.se.powi(2) + b.se.powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() <= 4.0 * se + 1e-12, "{} vs {}", a.mean, b.mean);
    }
}

fn bias_moments(rho: f64, q_fire: f64, seed: u64) -> (Moments, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topology = Arc::new(Topology::fully_connected(NetworkShape::new(1, 1, 2, 2).unwrap()));
    let n = topology.n();
    let mut q = Array1::from_elem(n, 0.5);
    q[0] = q_fire;
    q[1] = 1.0 - q_fire;
    let mut v = Array1::zeros(n);
    v[0] = 1.0;
    v[2] = 1.0;
    let state = FiringState { q, v };
    let window = StdpWindow::rectangle(10);
    let samples: Vec<f64> = (0..40)
        .map(|_| {
            let train = stationary_train(&topology, &state, rho, 5_000, &mut rng);
            rstdp_bias_update(&topology, &train, &state.v, 1.0, rho, &window).unwrap()[0]
        })
        .collect();
    (moments(&samples), 1.0 - q_fire)
}

#[test]
fn bias_update_of_firing_neuron_has_mean_one_minus_q() {
    let (m, target) = bias_moments(0.5, 0.3, 11);
    assert!(within(&m, target, 3.0), "{} vs {target}", m.mean);
}

#[test]
fn bias_expectation_does_not_depend_on_rho_hat() {
    let (a, t) = bias_moments(0.25, 0.6, 12);
    let (b, _) = bias_moments(0.5, 0.6, 13);
    assert!(within(&a, t, 3.0) && within(&b, t, 3.0), "{} {} vs {t}", a.mean, b.mean);
}

#[test]
fn silent_train_with_zero_v_gives_zero_bias_update() {
    let topology = Topology::fully_connected(NetworkShape::new(1, 1, 2, 2).unwrap());
    let train = svpg_core::spikesim::SpikeTrain::new(topology.n());
    let v = Array1::zeros(topology.n());
    let db = rstdp_bias_update::<f64>(&topology, &train, &v, 1.0, 0.5, &StdpWindow::rectangle(10)).unwrap();
    assert!(db.iter().all(|&x| x == 0.0));
}
