//! Mean-field inference invariants over random networks.

use std::sync::Arc;

use ndarray::Array1;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svpg_core::gradient::check::converge;
use svpg_core::inference::{clamp_state, mean_field_step, InferenceConfig, MeanField};
use svpg_core::topology::init_params;
use svpg_core::{NetworkShape, RwtaParams, Topology};

fn net(dims: (usize, usize, usize, usize), full: bool, seed: u64, scale: f64) -> RwtaParams<f64> {
    let shape = NetworkShape::new(dims.0, dims.1, dims.2, dims.3).unwrap();
    let topology = if full { Topology::fully_connected(shape) } else { Topology::new(shape) };
    let mut p = init_params::<f64>(Arc::new(topology), seed, scale);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for b in p.b.iter_mut().take(shape.ha_count()) {
        *b = rng.random_range(-2.0..2.0);
    }
    p
}

fn circuit_error(topology: &Topology, q: &Array1<f64>) -> f64 {
    topology
        .circuits
        .wta()
        .iter()
        .map(|c| (q.slice(ndarray::s![c.range.clone()]).sum() - 1.0).abs())
        .fold(0.0, f64::max)
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (1usize..6, 1usize..4, 2usize..5, 2usize..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_iterate_is_normalized(d in dims(), full: bool, seed in 0u64..1000, noise in prop::sample::select(vec![0.0, 0.01, 0.2])) {
        let p = net(d, full, seed, 1.0);
        let topology = p.topology().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Array1::from_shape_fn(d.0, |_| rng.random::<f64>());
        let init = clamp_state(&topology, s.view(), &mut rng).unwrap();
        let cfg = InferenceConfig { max_iters: 100, tol: 1e-6, rate_noise_std: noise };
        let mut worst = 0.0f64;
        let mut negative = false;
        let out = MeanField::new(&p).run(init, &cfg, &mut rng, |_, st| {
            worst = worst.max(circuit_error(&topology, &st.q));
            negative |= st.q.iter().any(|&x| x < 0.0);
        }).unwrap();
        prop_assert!(worst <= 1e-12, "{worst:e}");
        prop_assert!(!negative);
        let h = topology.shape.ha_count();
        prop_assert_eq!(out.state.q.slice(ndarray::s![h..]).to_owned(), s);
    }

    #[test]
    fn adding_a_constant_to_a_circuit_changes_nothing(d in dims(), seed in 0u64..1000, delta in -20.0f64..20.0) {
        let p = net(d, true, seed, 1.0);
        let topology = p.topology().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Array1::from_shape_fn(d.0, |_| rng.random::<f64>());
        let state = clamp_state(&topology, s.view(), &mut rng).unwrap();
        let base = mean_field_step(&p, &state).unwrap();
        for c in topology.circuits.wta() {
            let mut shifted = p.clone();
            for i in c.range.clone() {
                shifted.b[i] += delta;
            }
            let moved = mean_field_step(&shifted, &state).unwrap();
            for (a, b) in base.q.iter().zip(moved.q.iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn weak_coupling_has_one_fixed_point(d in dims(), seed in 0u64..1000) {
        let p = net(d, true, seed, 0.05);
        let topology = p.topology().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Array1::from_shape_fn(d.0, |_| rng.random::<f64>());
        let first = converge(&p, &clamp_state(&topology, s.view(), &mut rng).unwrap(), 1e-14);
        for _ in 0..4 {
            let other = converge(&p, &clamp_state(&topology, s.view(), &mut rng).unwrap(), 1e-14);
            for (a, b) in first.q.iter().zip(other.q.iter()) {
                prop_assert!((a - b).abs() <= 1e-8);
            }
        }
    }
}

/// Exact conditional of the energy model `v'Wv + b'v` given a binary state
/// neuron, by enumerating the joint one-hot assignments.
#[test]
fn tiny_net_mean_field_vs_enumeration() {
    let p = net((1, 1, 2, 2), false, 3, 1.0);
    let topology = p.topology().clone();
    let (h, a) = (topology.shape.hidden_range(), topology.shape.action_range());
    let state_neuron = topology.shape.state_range().start;
    let mut exact = vec![0.0; a.len()];
    for i in h.clone() {
        for (ka, j) in a.clone().enumerate() {
            let mut v = Array1::<f64>::zeros(topology.n());
            v[i] = 1.0;
            v[j] = 1.0;
            v[state_neuron] = 1.0;
            exact[ka] += (v.dot(&p.w.dot(&v)) + p.b.dot(&v)).exp();
        }
    }
    let z: f64 = exact.iter().sum();
    exact.iter_mut().for_each(|x| *x /= z);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let init = clamp_state(&topology, Array1::from(vec![1.0]).view(), &mut rng).unwrap();
    let q = converge(&p, &init, 1e-14).q;
    let approx: Vec<f64> = a.clone().map(|j| q[j]).collect();
    let tv = 0.5 * approx.iter().zip(&exact).map(|(x, y)| (x - y).abs()).sum::<f64>();
    eprintln!("mean-field vs exact action marginal, total variation {tv:.4}");
    assert!((approx.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(tv.is_finite());
}

#[test]
fn f32_tracks_f64() {
    let p = net((4, 2, 3, 3), true, 5, 0.5);
    let shape = *p.shape();
    let p32 = RwtaParams::<f32>::from_parts(p.topology().clone(), p.w.mapv(|x| x as f32), p.b.mapv(|x| x as f32)).unwrap();
    let s = Array1::from(vec![0.2, 0.9, 0.4, 0.6]);
    let cfg = InferenceConfig { max_iters: 100, tol: 1e-6, rate_noise_std: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let init = clamp_state(p.topology(), s.view(), &mut rng).unwrap();
    let init32 = svpg_core::inference::FiringState { q: init.q.mapv(|x| x as f32), v: init.v.mapv(|x| x as f32) };
    let a = MeanField::new(&p).run(init, &cfg, &mut rng, |_, _| {}).unwrap();
    let b = MeanField::new(&p32).run(init32, &cfg, &mut rng, |_, _| {}).unwrap();
    for i in 0..shape.ha_count() {
        assert!((a.state.q[i] - b.state.q[i] as f64).abs() < 1e-4);
    }
}
