//! Spike-coded inference: firing rates against their expected values.

use std::sync::Arc;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use svpg_core::gradient::check::converge;
use svpg_core::inference::clamp_state;
use svpg_core::spikesim::{SpikeSim, SpikeSimConfig};
use svpg_core::topology::init_params;
use svpg_core::{NetworkShape, RwtaParams, Topology};

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[test]
fn uncoupled_counts_match_bias_softmax() {
    let shape = NetworkShape::new(3, 2, 3, 4).unwrap();
    let topology = Arc::new(Topology::fully_connected(shape));
    let mut p = RwtaParams::<f64>::zeros(topology.clone());
    for (k, b) in p.b.iter_mut().take(shape.ha_count()).enumerate() {
        *b = (k as f64 * 0.7).sin() * 1.5;
    }
    let s = Array1::from(vec![0.1, 0.5, 0.8]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for cfg in [SpikeSimConfig::default(), SpikeSimConfig::double_exponential()] {
        let cfg = SpikeSimConfig { steps: 20_000, ..cfg };
        let (_, train) = SpikeSim::new(&p, cfg).unwrap().run(s.view(), &mut rng).unwrap();
        assert!(train.is_wta_exclusive(&topology));
        let l = cfg.steps as f64;
        for c in topology.circuits.wta() {
            let b: Vec<f64> = c.range.clone().map(|i| p.b[i]).collect();
            for (i, q) in c.range.clone().zip(softmax(&b)) {
                let rate = cfg.rho_hat * q;
                let se = (rate * (1.0 - rate) / l).sqrt();
                assert!((train.count(i) as f64 / l - rate).abs() <= 4.0 * se, "neuron {i}");
            }
        }
        for (k, i) in shape.state_range().enumerate() {
            let rate = cfg.rho_hat * s[k];
            let se = (rate * (1.0 - rate) / l).sqrt();
            assert!((train.count(i) as f64 / l - rate).abs() <= 4.0 * se);
        }
    }
}

#[test]
fn weakly_coupled_rates_approach_the_mean_field_fixed_point() {
    let shape = NetworkShape::new(4, 2, 3, 3).unwrap();
    let topology = Arc::new(Topology::fully_connected(shape));
    let p = init_params::<f64>(topology.clone(), 4, 0.3);
    let s = Array1::from(vec![0.3, 0.7, 0.5, 0.9]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fixed = converge(&p, &clamp_state(&topology, s.view(), &mut rng).unwrap(), 1e-13);
    let cfg = SpikeSimConfig { steps: 20_000, ..SpikeSimConfig::default() };
    let (state, train) = SpikeSim::new(&p, cfg).unwrap().run(s.view(), &mut rng).unwrap();
    assert!(train.is_wta_exclusive(&topology));
    let gap = (0..shape.ha_count()).map(|i| (state.q[i] - fixed.q[i]).abs()).fold(0.0, f64::max);
    eprintln!("spike vs mean-field max gap {gap:.4}");
    assert!(gap < 0.05);
    for c in topology.circuits.wta() {
        let total: f64 = c.range.clone().map(|i| state.q[i]).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(c.range.clone().filter(|&i| state.v[i] == 1.0).count(), 1);
    }
}
