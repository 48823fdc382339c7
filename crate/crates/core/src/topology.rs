//! Network shape, circuit layout and structural connectivity of the RWTA network.
//!
//! Neurons are laid out as `[hidden circuits | action circuit | state neurons]`,
//! so the first `n_h * d_h + d_a` indices form the block whose firing
//! probabilities are inferred (the "ha" block). State neurons are clamped and
//! each forms a singleton group.

use std::ops::Range;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Neuron counts of an RWTA network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NetworkShape {
    pub state_dim: usize,
    pub hidden_circuits: usize,
    pub hidden_size: usize,
    pub action_dim: usize,
}

impl NetworkShape {
    pub fn new(
        state_dim: usize,
        hidden_circuits: usize,
        hidden_size: usize,
        action_dim: usize,
    ) -> Result<Self> {
        let dims = [
            ("d_s", state_dim),
            ("n_h", hidden_circuits),
            ("d_h", hidden_size),
            ("d_a", action_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidShape(format!("{name} must be at least 1")));
        }
        Ok(Self {
            state_dim,
            hidden_circuits,
            hidden_size,
            action_dim,
        })
    }

    pub fn hidden_count(&self) -> usize {
        self.hidden_circuits * self.hidden_size
    }

    /// Number of inferred neurons (hidden plus action).
    pub fn ha_count(&self) -> usize {
        self.hidden_count() + self.action_dim
    }

    pub fn neuron_count(&self) -> usize {
        self.ha_count() + self.state_dim
    }

    pub fn hidden_range(&self) -> Range<usize> {
        0..self.hidden_count()
    }

    pub fn action_range(&self) -> Range<usize> {
        self.hidden_count()..self.ha_count()
    }

    pub fn state_range(&self) -> Range<usize> {
        self.ha_count()..self.neuron_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CircuitKind {
    Hidden(usize),
    Action,
    State,
}

/// A contiguous group of neurons sharing one normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Circuit {
    pub kind: CircuitKind,
    pub range: Range<usize>,
}

impl Circuit {
    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    pub fn is_wta(&self) -> bool {
        !matches!(self.kind, CircuitKind::State)
    }
}

/// Partition of the neurons into circuits: `G(i)` for every neuron `i`.
#[derive(Debug, Clone)]
pub struct CircuitIndex {
    circuits: Vec<Circuit>,
    circuit_of: Vec<usize>,
    wta_count: usize,
}

impl CircuitIndex {
    fn new(shape: &NetworkShape) -> Self {
        let mut circuits = Vec::with_capacity(shape.hidden_circuits + 1 + shape.state_dim);
        for c in 0..shape.hidden_circuits {
            let start = c * shape.hidden_size;
            circuits.push(Circuit {
                kind: CircuitKind::Hidden(c),
                range: start..start + shape.hidden_size,
            });
        }
        circuits.push(Circuit {
            kind: CircuitKind::Action,
            range: shape.action_range(),
        });
        for s in shape.state_range() {
            circuits.push(Circuit {
                kind: CircuitKind::State,
                range: s..s + 1,
            });
        }
        let mut circuit_of = vec![0; shape.neuron_count()];
        for (id, c) in circuits.iter().enumerate() {
            for i in c.range.clone() {
                circuit_of[i] = id;
            }
        }
        Self {
            circuits,
            circuit_of,
            wta_count: shape.hidden_circuits + 1,
        }
    }

    pub fn circuit_id(&self, neuron: usize) -> usize {
        self.circuit_of[neuron]
    }

    pub fn circuit(&self, id: usize) -> &Circuit {
        &self.circuits[id]
    }

    /// Member range `G(i)` of the circuit containing `neuron`.
    pub fn members(&self, neuron: usize) -> Range<usize> {
        self.circuits[self.circuit_of[neuron]].range.clone()
    }

    pub fn same_circuit(&self, i: usize, j: usize) -> bool {
        self.circuit_of[i] == self.circuit_of[j]
    }

    pub fn all(&self) -> &[Circuit] {
        &self.circuits
    }

    /// The hidden circuits followed by the action circuit.
    pub fn wta(&self) -> &[Circuit] {
        &self.circuits[..self.wta_count]
    }

    pub fn neuron_count(&self) -> usize {
        self.circuit_of.len()
    }
}

/// Admissible synapses. `true` entries may carry a nonzero weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    allowed: Array2<bool>,
}

impl Mask {
    /// Default RWTA connectivity: state-hidden, hidden-hidden (across circuits)
    /// and hidden-action pairs, both directions.
    pub fn rwta(shape: &NetworkShape, circuits: &CircuitIndex) -> Self {
        let n = shape.neuron_count();
        let kind = |i: usize| circuits.circuit(circuits.circuit_id(i)).kind;
        Self::from_fn(n, |i, j| {
            if circuits.same_circuit(i, j) {
                return false;
            }
            !matches!(
                (kind(i), kind(j)),
                (CircuitKind::State, CircuitKind::State)
                    | (CircuitKind::State, CircuitKind::Action)
                    | (CircuitKind::Action, CircuitKind::State)
            )
        })
    }

    /// Every pair across circuits except state-state, so state neurons also
    /// reach the action circuit directly.
    pub fn fully_connected(shape: &NetworkShape, circuits: &CircuitIndex) -> Self {
        let kind = |i: usize| circuits.circuit(circuits.circuit_id(i)).kind;
        Self::from_fn(shape.neuron_count(), |i, j| {
            !circuits.same_circuit(i, j)
                && !matches!((kind(i), kind(j)), (CircuitKind::State, CircuitKind::State))
        })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        Self {
            allowed: Array2::from_shape_fn((n, n), |(i, j)| f(i, j)),
        }
    }

    pub fn size(&self) -> usize {
        self.allowed.nrows()
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[[i, j]]
    }

    pub fn count(&self) -> usize {
        self.allowed.iter().filter(|a| **a).count()
    }

    pub fn as_array(&self) -> &Array2<bool> {
        &self.allowed
    }

    /// Zero every inadmissible entry of `m` in place.
    pub fn project<T: Scalar>(&self, m: &mut Array2<T>) {
        ndarray::Zip::from(m).and(&self.allowed).for_each(|x, &ok| {
            if !ok {
                *x = T::zero();
            }
        });
    }
}

/// Shape, circuit partition and mask bundled together.
#[derive(Debug, Clone)]
pub struct Topology {
    pub shape: NetworkShape,
    pub circuits: CircuitIndex,
    pub mask: Mask,
}

impl Topology {
    /// Topology with the default RWTA mask.
    pub fn new(shape: NetworkShape) -> Self {
        let circuits = CircuitIndex::new(&shape);
        let mask = Mask::rwta(&shape, &circuits);
        Self {
            shape,
            circuits,
            mask,
        }
    }

    /// Topology with [`Mask::fully_connected`].
    pub fn fully_connected(shape: NetworkShape) -> Self {
        let circuits = CircuitIndex::new(&shape);
        let mask = Mask::fully_connected(&shape, &circuits);
        Self {
            shape,
            circuits,
            mask,
        }
    }

    /// Topology with a caller-supplied mask. The diagonal and intra-circuit
    /// entries are always removed.
    pub fn with_mask(shape: NetworkShape, mask: Mask) -> Result<Self> {
        if mask.size() != shape.neuron_count() {
            return Err(Error::ShapeMismatch(format!(
                "mask is {}x{}, network has {} neurons",
                mask.size(),
                mask.size(),
                shape.neuron_count()
            )));
        }
        let circuits = CircuitIndex::new(&shape);
        let mask = Mask::from_fn(shape.neuron_count(), |i, j| {
            mask.allows(i, j) && !circuits.same_circuit(i, j)
        });
        Ok(Self {
            shape,
            circuits,
            mask,
        })
    }

    pub fn n(&self) -> usize {
        self.shape.neuron_count()
    }
}

/// Build the shape and circuit partition for `(d_s, n_h, d_h, d_a)`.
pub fn build_shape(
    state_dim: usize,
    hidden_circuits: usize,
    hidden_size: usize,
    action_dim: usize,
) -> Result<(NetworkShape, CircuitIndex)> {
    let shape = NetworkShape::new(state_dim, hidden_circuits, hidden_size, action_dim)?;
    let circuits = CircuitIndex::new(&shape);
    Ok((shape, circuits))
}

/// Learnable parameters `theta = <W, b>` of an RWTA network.
#[derive(Debug, Clone)]
pub struct RwtaParams<T> {
    topology: Arc<Topology>,
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: PartialEq> PartialEq for RwtaParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.topology.shape == other.topology.shape
            && self.topology.mask == other.topology.mask
            && self.w == other.w
            && self.b == other.b
    }
}

impl<T: Scalar> RwtaParams<T> {
    pub fn zeros(topology: Arc<Topology>) -> Self {
        let n = topology.n();
        Self {
            topology,
            w: Array2::zeros((n, n)),
            b: Array1::zeros(n),
        }
    }

    /// Wrap existing tensors; masked entries of `w` are zeroed.
    pub fn from_parts(topology: Arc<Topology>, mut w: Array2<T>, b: Array1<T>) -> Result<Self> {
        let n = topology.n();
        if w.dim() != (n, n) || b.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected W {n}x{n} and b {n}, got W {:?} and b {}",
                w.dim(),
                b.len()
            )));
        }
        topology.mask.project(&mut w);
        Ok(Self { topology, w, b })
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.topology.shape
    }

    pub fn project(&mut self) {
        self.topology.mask.project(&mut self.w);
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|x| x.is_finite())
    }

    /// Number of learnable weights (admissible synapses) plus biases of the
    /// inferred neurons.
    pub fn learnable_count(&self) -> usize {
        self.topology.mask.count() + self.topology.shape.ha_count()
    }
}

/// Masked entries zero, admissible weights i.i.d. `U(-init_scale, init_scale)`, `b = 0`.
pub fn init_params<T: Scalar>(topology: Arc<Topology>, seed: u64, init_scale: f64) -> RwtaParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = topology.n();
    let mut w = Array2::zeros((n, n));
    if init_scale > 0.0 {
        for ((i, j), x) in w.indexed_iter_mut() {
            if topology.mask.allows(i, j) {
                *x = T::lit(rng.random_range(-init_scale..=init_scale));
            }
        }
    }
    RwtaParams {
        topology,
        w,
        b: Array1::zeros(n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_network_sizes() {
        let (mnist, _) = build_shape(784, 20, 10, 10).unwrap();
        assert_eq!(mnist.neuron_count(), 994);
        let (pendulum, _) = build_shape(4, 8, 8, 5).unwrap();
        assert_eq!(pendulum.neuron_count(), 73);
    }

    #[test]
    fn minimal_shape_partition() {
        let (shape, circuits) = build_shape(1, 1, 1, 1).unwrap();
        assert_eq!(shape.neuron_count(), 3);
        assert_eq!(circuits.members(0), 0..1);
        assert_eq!(circuits.members(1), 1..2);
        assert_eq!(circuits.members(2), 2..3);
        assert_eq!(circuits.circuit(circuits.circuit_id(1)).kind, CircuitKind::Action);
        assert_eq!(circuits.circuit(circuits.circuit_id(2)).kind, CircuitKind::State);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(build_shape(0, 1, 1, 1), Err(Error::InvalidShape(_))));
        assert!(matches!(build_shape(3, 2, 0, 1), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn circuits_partition_neurons() {
        let (shape, circuits) = build_shape(5, 3, 4, 2).unwrap();
        let mut seen = vec![0usize; shape.neuron_count()];
        for c in circuits.all() {
            for i in c.range.clone() {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
        for i in 0..shape.neuron_count() {
            assert!(circuits.members(i).contains(&i));
        }
        for c in circuits.wta() {
            let expected = match c.kind {
                CircuitKind::Hidden(_) => 4,
                CircuitKind::Action => 2,
                CircuitKind::State => unreachable!(),
            };
            assert_eq!(c.len(), expected);
        }
    }

    #[test]
    fn mask_admissible_count_matches_enumeration() {
        let topo = Topology::new(NetworkShape::new(784, 20, 10, 10).unwrap());
        let shape = topo.shape;
        // independent enumeration from raw index arithmetic
        let block = |i: usize| {
            if i < 200 {
                (0u8, i / 10)
            } else if i < 210 {
                (1, 0)
            } else {
                (2, i)
            }
        };
        let mut count = 0usize;
        for i in 0..shape.neuron_count() {
            for j in 0..shape.neuron_count() {
                let (bi, ci) = block(i);
                let (bj, cj) = block(j);
                let ok = match (bi, bj) {
                    (0, 0) => ci != cj,
                    (0, _) | (_, 0) => true,
                    _ => false,
                };
                count += ok as usize;
            }
        }
        assert_eq!(count, 355_600);
        assert_eq!(topo.mask.count(), count);
    }

    #[test]
    fn mask_symmetric_and_projection_idempotent() {
        let topo = Arc::new(Topology::new(NetworkShape::new(3, 2, 3, 2).unwrap()));
        let n = topo.n();
        for i in 0..n {
            assert!(!topo.mask.allows(i, i));
            for j in 0..n {
                assert_eq!(topo.mask.allows(i, j), topo.mask.allows(j, i));
            }
        }
        let mut m = Array2::from_elem((n, n), 1.0f64);
        topo.mask.project(&mut m);
        let once = m.clone();
        topo.mask.project(&mut m);
        assert_eq!(once, m);
    }

    #[test]
    fn init_zero_scale_and_determinism() {
        let topo = Arc::new(Topology::new(NetworkShape::new(4, 2, 3, 2).unwrap()));
        let zero: RwtaParams<f64> = init_params(topo.clone(), 1, 0.0);
        assert!(zero.w.iter().all(|&x| x == 0.0));
        assert!(zero.b.iter().all(|&x| x == 0.0));

        let a: RwtaParams<f64> = init_params(topo.clone(), 7, 0.01);
        let b: RwtaParams<f64> = init_params(topo.clone(), 7, 0.01);
        assert_eq!(a.w, b.w);
        assert!(a.w.iter().all(|x| x.abs() <= 0.01));
        for ((i, j), x) in a.w.indexed_iter() {
            if !topo.mask.allows(i, j) {
                assert_eq!(*x, 0.0);
            }
        }
        assert!(a.w.iter().any(|&x| x != 0.0));
    }
}
