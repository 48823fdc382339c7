//! REINFORCE steps on both tasks against hand-computed updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svpg_core::data::{IdxTensor, MnistSet, Split};
use svpg_core::envs::{ObsNormalizer, Pendulum, PendulumConfig};
use svpg_core::mlp::Optimizer;
use svpg_core::rl::{
    reinforce_update, run_mnist_episode, run_pendulum_episode, Coding, CodingConfig, Connectivity, Method, Policy,
    Task,
};

fn fixture(n: usize, seed: u64) -> MnistSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = IdxTensor {
        dims: vec![n, 28, 28],
        data: (0..n * 784).map(|_| rng.random()).collect(),
    };
    let labels = IdxTensor {
        dims: vec![n],
        data: (0..n).map(|_| rng.random_range(0..10)).collect(),
    };
    MnistSet::from_tensors(Split::Train, images, labels).unwrap()
}

fn rwta(policy: &Policy<f64>) -> &svpg_core::RwtaParams64 {
    match policy {
        Policy::Rwta(p) => p,
        Policy::Mlp(_) => panic!("expected an RWTA policy"),
    }
}

#[test]
fn mnist_episode_is_one_transition() {
    let set = fixture(4, 1);
    let policy = Policy::<f64>::new(Task::Mnist, Method::Svpg, 0, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let coding = CodingConfig::new(Coding::Rate);
    for i in 0..4 {
        let t = run_mnist_episode(&policy, &set, i, &coding, &mut rng).unwrap();
        assert!(t.done);
        assert!(t.action < 10);
        let want = if t.action == set.labels[i] as usize { 1.0 } else { -1.0 };
        assert_eq!(t.reward, want);
        assert_eq!(t.obs, t.next_obs);
    }
}

#[test]
fn one_transition_update_matches_element_formula() {
    let set = fixture(1, 3);
    let coding = CodingConfig::new(Coding::Rate);
    for connectivity in [Connectivity::Full, Connectivity::Layered] {
        let mut policy = Policy::<f64>::with_connectivity(Task::Mnist, Method::Svpg, connectivity, 4, 0.05).unwrap();
        let before = rwta(&policy).clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = run_mnist_episode(&policy, &set, 0, &coding, &mut rng).unwrap();
        let lr = 0.1;
        let mut opt = Optimizer::sgd(lr);
        reinforce_update(&mut policy, &mut opt, &[vec![t.clone()]], 0.9, &coding).unwrap();
        let after = rwta(&policy);

        let firing = t.decision.firing.as_ref().unwrap();
        let (q, v) = (&firing.q, &firing.v);
        let topology = before.topology();
        let h = topology.shape.ha_count();
        let centered = |x: usize| if x < h { v[x] - q[x] } else { 0.0 };
        let scale = lr * t.reward;
        let mut worst = 0.0f64;
        for i in 0..topology.n() {
            for j in 0..topology.n() {
                let want = if topology.mask.allows(i, j) {
                    scale * (q[i] * centered(j) + q[j] * centered(i))
                } else {
                    0.0
                };
                worst = worst.max((after.w[[i, j]] - before.w[[i, j]] - want).abs());
            }
            worst = worst.max((after.b[i] - before.b[i] - scale * centered(i)).abs());
        }
        assert!(worst < 1e-12, "{connectivity}: {worst:e}");
    }
}

#[test]
fn zero_reward_leaves_parameters_unchanged() {
    let set = fixture(3, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for method in [Method::Svpg, Method::Bp] {
        let mut policy = Policy::<f64>::new(Task::Mnist, method, 1, 0.05).unwrap();
        let before = policy.clone();
        let coding = CodingConfig::new(Coding::Rate);
        let mut batch = Vec::new();
        for i in 0..3 {
            let mut t = run_mnist_episode(&policy, &set, i, &coding, &mut rng).unwrap();
            t.reward = 0.0;
            batch.push(vec![t]);
        }
        let mut opt = Optimizer::rmsprop(0.01);
        let g = reinforce_update(&mut policy, &mut opt, &batch, 1.0, &coding).unwrap();
        assert!(g.is_zero());
        assert_eq!(policy, before);
    }
}

#[test]
fn masked_weights_stay_zero_under_training() {
    let set = fixture(6, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for coding in [Coding::Rate, Coding::RateNoise, Coding::SpikeRect] {
        let mut coding = CodingConfig::new(coding);
        coding.spike_steps = 200;
        let mut policy = Policy::<f64>::with_connectivity(Task::Mnist, Method::Svpg, Connectivity::Layered, 2, 0.1).unwrap();
        let mut opt = Optimizer::rmsprop(0.05);
        for _ in 0..3 {
            let batch: Vec<_> = (0..6)
                .map(|i| vec![run_mnist_episode(&policy, &set, i, &coding, &mut rng).unwrap()])
                .collect();
            reinforce_update(&mut policy, &mut opt, &batch, 1.0, &coding).unwrap();
        }
        let p = rwta(&policy);
        let topology = p.topology();
        for ((i, j), &w) in p.w.indexed_iter() {
            if !topology.mask.allows(i, j) {
                assert_eq!(w, 0.0, "{coding:?} ({i}, {j})");
            }
        }
        assert!(p.is_finite());
    }
}

#[test]
fn pendulum_return_equals_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for method in [Method::Svpg, Method::Bp] {
        let policy = Policy::<f64>::new(Task::Pendulum, method, 3, 0.1).unwrap();
        let mut env = Pendulum::new(PendulumConfig::default()).unwrap();
        let traj = run_pendulum_episode(
            &policy,
            &mut env,
            &ObsNormalizer::default(),
            &CodingConfig::new(Coding::Rate),
            None,
            &mut rng,
        )
        .unwrap();
        let total: f64 = traj.iter().map(|t| t.reward).sum();
        assert_eq!(total, traj.len() as f64);
        assert!(traj.last().unwrap().done);
        assert!(traj[..traj.len() - 1].iter().all(|t| !t.done));
        assert!(traj.iter().all(|t| t.action < 5));
    }
}
