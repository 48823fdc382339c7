//! Dense ReLU networks trained by backpropagation, plus the optimizers shared
//! with the RWTA policy.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradient::PolicyGradient;
use crate::scalar::Scalar;
use crate::topology::RwtaParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Identity,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `in x out`.
    pub w: Array2<T>,
    pub b: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<T> {
    pub layers: Vec<Dense<T>>,
    pub head: Head,
}

/// Gradients with the same layout as [`DenseNet::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T> {
    pub layers: Vec<Dense<T>>,
}

/// Per-layer inputs and the final logits of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    inputs: Vec<Array2<T>>,
    pub logits: Array2<T>,
    pub output: Array2<T>,
}

impl<T: Scalar> DenseNet<T> {
    /// Layers initialized `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn new(sizes: &[usize], head: Head, seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidShape(format!("bad layer sizes {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|p| {
                let bound = 1.0 / (p[0] as f64).sqrt();
                let mut draw = || T::lit(rng.random_range(-bound..bound));
                let w = Array2::from_shape_simple_fn((p[0], p[1]), &mut draw);
                let b = Array1::from_shape_simple_fn(p[1], &mut draw);
                Dense { w, b }
            })
            .collect();
        Ok(Self { layers, head })
    }

    pub fn zeros(sizes: &[usize], head: Head) -> Result<Self> {
        let mut net = Self::new(sizes, head, 0)?;
        for l in &mut net.layers {
            l.w.fill(T::zero());
            l.b.fill(T::zero());
        }
        Ok(net)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![self.layers[0].w.nrows()];
        out.extend(self.layers.iter().map(|l| l.w.ncols()));
        out
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()))
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Result<ForwardCache<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = cur.dot(&layer.w) + &layer.b;
            if k < last {
                z.mapv_inplace(|v| v.max(T::zero()));
            }
            inputs.push(std::mem::replace(&mut cur, z));
        }
        let output = match self.head {
            Head::Identity => cur.clone(),
            Head::Softmax => softmax_rows(cur.view()),
        };
        Ok(ForwardCache {
            inputs,
            logits: cur,
            output,
        })
    }

    pub fn predict(&self, x: ArrayView1<'_, T>) -> Result<Array1<T>> {
        let x = x.insert_axis(Axis(0));
        Ok(self.forward(x)?.output.row(0).to_owned())
    }

    /// Reverse pass from `upstream = dL/dlogits` (`B x out`), summed over the batch.
    pub fn backward(&self, cache: &ForwardCache<T>, upstream: ArrayView2<'_, T>) -> Result<DenseGrads<T>> {
        if upstream.dim() != cache.logits.dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream {:?} does not match logits {:?}",
                upstream.dim(),
                cache.logits.dim()
            )));
        }
        let mut grads: Vec<Dense<T>> = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_owned();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[k];
            grads.push(Dense {
                w: input.t().dot(&delta).as_standard_layout().into_owned(),
                b: delta.sum_axis(Axis(0)),
            });
            if k > 0 {
                let mut prev = delta.dot(&layer.w.t());
                // the layer input is the rectified output of layer k-1
                ndarray::Zip::from(&mut prev)
                    .and(input)
                    .for_each(|d, &a| {
                        if a <= T::zero() {
                            *d = T::zero();
                        }
                    });
                delta = prev;
            }
        }
        grads.reverse();
        Ok(DenseGrads { layers: grads })
    }
}

impl<T: Scalar> DenseGrads<T> {
    pub fn zeros_like(net: &DenseNet<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense {
                    w: Array2::zeros(l.w.dim()),
                    b: Array1::zeros(l.b.dim()),
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, k: T) {
        for l in &mut self.layers {
            l.w.mapv_inplace(|x| x * k);
            l.b.mapv_inplace(|x| x * k);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|x| *x == T::zero()))
    }
}

pub fn softmax_rows<T: Scalar>(z: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = z.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - m).exp());
        let s = row.sum();
        row.mapv_inplace(|x| x / s);
    }
    out
}

/// `d log p_a / d logits = onehot(a) - p` for each row.
pub fn log_softmax_grad<T: Scalar>(probs: ArrayView2<'_, T>, actions: &[usize]) -> Array2<T> {
    let mut g = -probs.to_owned();
    for (mut row, &a) in g.rows_mut().into_iter().zip(actions) {
        row[a] += T::one();
    }
    g
}

/// Parameter containers the optimizers can walk tensor by tensor, in a fixed order.
pub trait Trainable<T> {
    type Grad;
    fn visit(&mut self, grad: &Self::Grad, f: &mut dyn FnMut(&mut [T], &[T]));
}

impl<T: Scalar> Trainable<T> for DenseNet<T> {
    type Grad = DenseGrads<T>;

    fn visit(&mut self, grad: &DenseGrads<T>, f: &mut dyn FnMut(&mut [T], &[T])) {
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            f(l.w.as_slice_mut().unwrap(), g.w.as_slice().unwrap());
            f(l.b.as_slice_mut().unwrap(), g.b.as_slice().unwrap());
        }
    }
}

impl<T: Scalar> Trainable<T> for RwtaParams<T> {
    type Grad = PolicyGradient<T>;

    fn visit(&mut self, grad: &PolicyGradient<T>, f: &mut dyn FnMut(&mut [T], &[T])) {
        f(self.w.as_slice_mut().unwrap(), grad.dw.as_slice().unwrap());
        f(self.b.as_slice_mut().unwrap(), grad.db.as_slice().unwrap());
        self.project();
    }
}

/// Descent-convention optimizers: `step` moves parameters against `grad`.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer<T> {
    Sgd { lr: f64 },
    RmsProp { lr: f64, decay: f64, eps: f64, square_avg: Vec<Vec<T>> },
}

impl<T: Scalar> Optimizer<T> {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn rmsprop(lr: f64) -> Self {
        Self::rmsprop_with(lr, 0.99, 1e-8)
    }

    pub fn rmsprop_with(lr: f64, decay: f64, eps: f64) -> Self {
        Optimizer::RmsProp {
            lr,
            decay,
            eps,
            square_avg: Vec::new(),
        }
    }

    pub fn step<P: Trainable<T>>(&mut self, params: &mut P, grad: &P::Grad) {
        match self {
            Optimizer::Sgd { lr } => {
                let lr = T::lit(*lr);
                params.visit(grad, &mut |p, g| {
                    for (p, &g) in p.iter_mut().zip(g) {
                        *p -= lr * g;
                    }
                });
            }
            Optimizer::RmsProp {
                lr,
                decay,
                eps,
                square_avg,
            } => {
                let (lr, decay, eps) = (T::lit(*lr), T::lit(*decay), T::lit(*eps));
                let mut slot = 0;
                params.visit(grad, &mut |p, g| {
                    if square_avg.len() == slot {
                        square_avg.push(vec![T::zero(); p.len()]);
                    }
                    let acc = &mut square_avg[slot];
                    for ((p, &g), s) in p.iter_mut().zip(g).zip(acc.iter_mut()) {
                        *s = decay * *s + (T::one() - decay) * g * g;
                        *p -= lr * g / (s.sqrt() + eps);
                    }
                    slot += 1;
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::<f64>::zeros(&[3, 4, 2], Head::Identity).unwrap();
        let out = net.predict(array![1.0, -2.0, 3.0].view()).unwrap();
        assert_eq!(out, array![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_then_relu() {
        let mut net = DenseNet::<f64>::zeros(&[3, 3, 3], Head::Identity).unwrap();
        net.layers[0].w = Array2::eye(3);
        net.layers[1].w = Array2::eye(3);
        let out = net.predict(array![1.5, -2.0, 0.25].view()).unwrap();
        assert_eq!(out, array![1.5, 0.0, 0.25]);
    }

    #[test]
    fn softmax_log_likelihood_gradient() {
        let p = array![[0.2, 0.5, 0.3]];
        let g = log_softmax_grad(p.view(), &[1]);
        assert_eq!(g, array![[-0.2, 0.5, -0.3]]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = DenseNet::<f64>::new(&[2, 5, 3], Head::Softmax, 1).unwrap();
        let x = array![[0.3, -0.4], [1.0, 2.0]];
        let cache = net.forward(x.view()).unwrap();
        let g = net.backward(&cache, Array2::zeros((2, 3)).view()).unwrap();
        assert!(g.is_zero());
        assert!(net.backward(&cache, Array2::zeros((2, 2)).view()).is_err());
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = DenseNet::<f64>::new(&[16, 8], Head::Identity, 9).unwrap();
        let b = DenseNet::<f64>::new(&[16, 8], Head::Identity, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.layers[0].w.iter().all(|x| x.abs() <= 0.25));
        assert_eq!(a.param_count(), 16 * 8 + 8);
    }

    #[test]
    fn lr_zero_is_identity() {
        let mut net = DenseNet::<f64>::new(&[2, 2], Head::Identity, 3).unwrap();
        let before = net.clone();
        let mut g = DenseGrads::zeros_like(&net);
        g.layers[0].w.fill(1.0);
        Optimizer::sgd(0.0).step(&mut net, &g);
        Optimizer::rmsprop(0.0).step(&mut net, &g);
        assert_eq!(net, before);
    }

    #[test]
    fn sgd_scalar_step() {
        let mut net = DenseNet::<f64>::zeros(&[1, 1], Head::Identity).unwrap();
        net.layers[0].w[[0, 0]] = 2.0;
        let mut g = DenseGrads::zeros_like(&net);
        g.layers[0].w[[0, 0]] = 0.5;
        Optimizer::sgd(0.1).step(&mut net, &g);
        assert!((net.layers[0].w[[0, 0]] - 1.95).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_two_identical_steps() {
        let mut net = DenseNet::<f64>::zeros(&[1, 1], Head::Identity).unwrap();
        let mut g = DenseGrads::zeros_like(&net);
        g.layers[0].w[[0, 0]] = 2.0;
        let mut opt = Optimizer::rmsprop(0.01);
        opt.step(&mut net, &g);
        opt.step(&mut net, &g);
        // s1 = 0.01 * 4 = 0.04, s2 = 0.99 * 0.04 + 0.04 = 0.0796
        let expected = -0.01 * 2.0 / (0.04f64.sqrt() + 1e-8) - 0.01 * 2.0 / (0.0796f64.sqrt() + 1e-8);
        assert!((net.layers[0].w[[0, 0]] - expected).abs() < 1e-12);
        if let Optimizer::RmsProp { square_avg, .. } = &opt {
            assert!((square_avg[0][0] - 0.0796).abs() < 1e-15);
        }
    }
}
