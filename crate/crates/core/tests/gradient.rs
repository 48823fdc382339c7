//! Exact and local differentials against finite differences on random nets.

use std::sync::Arc;

use ndarray::Array1;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svpg_core::gradient::check::{converge, run, Param};
use svpg_core::inference::clamp_state;
use svpg_core::topology::init_params;
use svpg_core::{NetworkShape, Topology};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn differentials_match_finite_differences(
        d in (1usize..4, 1usize..3, 2usize..4, 2usize..4),
        full: bool,
        seed in 0u64..10_000,
    ) {
        let shape = NetworkShape::new(d.0, d.1, d.2, d.3).unwrap();
        let topology = Arc::new(if full { Topology::fully_connected(shape) } else { Topology::new(shape) });
        let mut params = init_params::<f64>(topology.clone(), seed, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = shape.ha_count();
        for b in params.b.iter_mut().take(h) {
            *b = rng.random_range(-1.0..1.0);
        }
        let s = Array1::from_shape_fn(d.0, |_| rng.random::<f64>());
        let fixed = converge(&params, &clamp_state(&topology, s.view(), &mut rng).unwrap(), 1e-15);
        let n = topology.n();
        let mut probes: Vec<Param> = (0..h).map(Param::Bias).collect();
        for _ in 0..12 {
            let (j, k) = (rng.random_range(0..n), rng.random_range(0..n));
            if topology.mask.allows(j, k) {
                probes.push(Param::Weight(j, k));
            }
        }
        let report = run(&params, &fixed, &probes, 1e-5, 1e-15).unwrap();
        prop_assert!(report.passes(1e-4, 1e-6), "{report}");
    }
}
