//! Backpropagation against central finite differences.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svpg_core::mlp::{log_softmax_grad, DenseNet, Head};

/// `sum_b log p(a_b | x_b)` written out without the library's softmax.
fn log_likelihood(net: &DenseNet<f64>, x: &Array2<f64>, actions: &[usize]) -> f64 {
    let logits = net.forward(x.view()).unwrap().logits;
    logits
        .rows()
        .into_iter()
        .zip(actions)
        .map(|(z, &a)| {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            z[a] - lse
        })
        .sum()
}

fn probe(sizes: &[usize], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = DenseNet::<f64>::new(sizes, Head::Softmax, seed).unwrap();
    let batch = 6;
    let x = Array2::from_shape_fn((batch, sizes[0]), |_| rng.random::<f64>());
    let out = sizes[sizes.len() - 1];
    let actions: Vec<usize> = (0..batch).map(|_| rng.random_range(0..out)).collect();
    let cache = net.forward(x.view()).unwrap();
    let upstream = log_softmax_grad(cache.output.view(), &actions);
    let grads = net.backward(&cache, upstream.view()).unwrap();

    let h = 1e-6;
    let mut worst = 0.0f64;
    for (l, layer) in net.layers.iter().enumerate() {
        let coords: Vec<Option<(usize, usize)>> = (0..layer.w.len())
            .map(|k| Some((k / layer.w.ncols(), k % layer.w.ncols())))
            .chain((0..layer.b.len()).map(|_| None))
            .collect();
        for (k, c) in coords.into_iter().enumerate() {
            let bump = |d: f64| {
                let mut n = net.clone();
                match c {
                    Some(ij) => n.layers[l].w[ij] += d,
                    None => n.layers[l].b[k - layer.w.len()] += d,
                }
                log_likelihood(&n, &x, &actions)
            };
            let numeric = (bump(h) - bump(-h)) / (2.0 * h);
            let analytic = match c {
                Some(ij) => grads.layers[l].w[ij],
                None => grads.layers[l].b[k - layer.w.len()],
            };
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn backprop_matches_finite_differences() {
    for (k, sizes) in [vec![5, 7, 4], vec![4, 6, 6, 5], vec![3, 2]].iter().enumerate() {
        let worst = probe(sizes, k as u64);
        assert!(worst <= 1e-4, "{sizes:?}: {worst:e}");
    }
}

#[test]
fn f32_and_f64_agree() {
    let a = DenseNet::<f64>::new(&[4, 8, 3], Head::Softmax, 3).unwrap();
    let b = DenseNet::<f32>::new(&[4, 8, 3], Head::Softmax, 3).unwrap();
    let x64 = Array2::from_shape_fn((2, 4), |(i, j)| (i * 4 + j) as f64 / 8.0);
    let x32 = x64.mapv(|v| v as f32);
    let (p, q) = (a.forward(x64.view()).unwrap().output, b.forward(x32.view()).unwrap().output);
    for (u, v) in p.iter().zip(q.iter()) {
        assert!((u - *v as f64).abs() < 1e-5);
    }
}

#[test]
fn same_seed_same_net() {
    let a = DenseNet::<f64>::new(&[6, 5, 2], Head::Identity, 11).unwrap();
    let b = DenseNet::<f64>::new(&[6, 5, 2], Head::Identity, 11).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, DenseNet::<f64>::new(&[6, 5, 2], Head::Identity, 12).unwrap());
}
