//! Binary checkpoint format.
//!
//! Layout (little endian): magic `SVPGCKPT`, format version `u32`, a header of
//! `u8` codes (task, method, model kind, coding, connectivity, precision),
//! seed `u64`, step `u64`, metric `f64`, the shape record (`u32` count then
//! `u64` dims), payload byte count `u64`, the payload of `f64` tensors and a
//! trailing FNV-1a 64 checksum of the payload.
//!
//! RWTA payload: `W` (`N x N`, row-major) then `b` (`N`); the shape record is
//! `(d_s, n_h, d_h, d_a)`. MLP payload: per layer `w` (`in x out`) then `b`;
//! the shape record is the layer sizes.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use svpg_core::mlp::{Dense, DenseNet, Head};
use svpg_core::rl::{Coding, Connectivity, Method, Policy, Task};
use svpg_core::topology::{NetworkShape, RwtaParams, Topology};
use svpg_core::Scalar;

use crate::config::{fnv1a64, Precision};
use crate::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"SVPGCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Rwta,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub task: Task,
    pub method: Method,
    pub kind: ModelKind,
    pub coding: Coding,
    pub connectivity: Connectivity,
    pub precision: Precision,
    pub seed: u64,
    pub step: u64,
    /// Zero-noise evaluation metric at save time.
    pub metric: f64,
    pub shape: Vec<usize>,
}

/// Parameters stored at `f64`; narrowing back to `f32` is exact for
/// tensors that started as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub tensors: Vec<Vec<f64>>,
}

fn code<T: PartialEq + Copy>(all: &[T], v: T) -> u8 {
    all.iter().position(|&x| x == v).expect("value is listed") as u8
}

fn decode<T: Copy>(all: &[T], c: u8, what: &str) -> Result<T, String> {
    all.get(c as usize).copied().ok_or_else(|| format!("bad {what} code {c}"))
}

const KINDS: [ModelKind; 2] = [ModelKind::Rwta, ModelKind::Mlp];
const PRECISIONS: [Precision; 2] = [Precision::F32, Precision::F64];

impl Checkpoint {
    pub fn from_policy<T: Scalar>(
        policy: &Policy<T>,
        task: Task,
        method: Method,
        coding: Coding,
        connectivity: Connectivity,
        seed: u64,
        step: u64,
        metric: f64,
    ) -> Self {
        let wide = |x: &T| x.to_f64_lossy();
        let (kind, shape, tensors) = match policy {
            Policy::Rwta(p) => {
                let s = p.shape();
                (
                    ModelKind::Rwta,
                    vec![s.state_dim, s.hidden_circuits, s.hidden_size, s.action_dim],
                    vec![p.w.iter().map(wide).collect(), p.b.iter().map(wide).collect()],
                )
            }
            Policy::Mlp(net) => (
                ModelKind::Mlp,
                net.sizes(),
                net.layers
                    .iter()
                    .flat_map(|l| [l.w.iter().map(wide).collect(), l.b.iter().map(wide).collect()])
                    .collect(),
            ),
        };
        let precision = if std::mem::size_of::<T>() == 4 { Precision::F32 } else { Precision::F64 };
        Self {
            header: Header {
                task,
                method,
                kind,
                coding,
                connectivity,
                precision,
                seed,
                step,
                metric,
                shape,
            },
            tensors,
        }
    }

    /// Expected tensor lengths for the shape record.
    fn layout(kind: ModelKind, shape: &[usize]) -> Result<Vec<usize>, String> {
        match kind {
            ModelKind::Rwta => {
                let [d_s, n_h, d_h, d_a] = shape else {
                    return Err(format!("RWTA shape record needs 4 dims, got {}", shape.len()));
                };
                let n = d_s + n_h * d_h + d_a;
                Ok(vec![n * n, n])
            }
            ModelKind::Mlp => {
                if shape.len() < 2 {
                    return Err("MLP shape record needs at least 2 sizes".into());
                }
                Ok(shape.windows(2).flat_map(|p| [p[0] * p[1], p[1]]).collect())
            }
        }
    }

    pub fn to_policy<T: Scalar>(&self) -> CliResult<Policy<T>> {
        let h = &self.header;
        let narrow = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        let bad = |reason: String| CliError::Checkpoint {
            path: String::new(),
            reason,
        };
        match h.kind {
            ModelKind::Rwta => {
                let shape = NetworkShape::new(h.shape[0], h.shape[1], h.shape[2], h.shape[3])?;
                let n = shape.neuron_count();
                let topology = match h.connectivity {
                    Connectivity::Full => Topology::fully_connected(shape),
                    Connectivity::Layered => Topology::new(shape),
                };
                let w = Array2::from_shape_vec((n, n), narrow(&self.tensors[0])).map_err(|e| bad(e.to_string()))?;
                let b = Array1::from(narrow(&self.tensors[1]));
                let params = RwtaParams::from_parts(Arc::new(topology), w.clone(), b)?;
                if params.w != w {
                    return Err(bad("masked weights are nonzero".into()));
                }
                Ok(Policy::Rwta(params))
            }
            ModelKind::Mlp => {
                let layers = h
                    .shape
                    .windows(2)
                    .zip(self.tensors.chunks(2))
                    .map(|(p, t)| {
                        Ok(Dense {
                            w: Array2::from_shape_vec((p[0], p[1]), narrow(&t[0])).map_err(|e| bad(e.to_string()))?,
                            b: Array1::from(narrow(&t[1])),
                        })
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                Ok(Policy::Mlp(DenseNet {
                    layers,
                    head: Head::Softmax,
                }))
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&[
            code(Task::ALL, h.task),
            code(Method::ALL, h.method),
            code(&KINDS, h.kind),
            code(Coding::ALL, h.coding),
            code(Connectivity::ALL, h.connectivity),
            code(&PRECISIONS, h.precision),
        ]);
        out.extend_from_slice(&h.seed.to_le_bytes());
        out.extend_from_slice(&h.step.to_le_bytes());
        out.extend_from_slice(&h.metric.to_le_bytes());
        out.extend_from_slice(&(h.shape.len() as u32).to_le_bytes());
        for &d in &h.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let payload: Vec<u8> = self.tensors.iter().flatten().flat_map(|x| x.to_le_bytes()).collect();
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&fnv1a64(&payload).to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not an SVPG checkpoint".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let codes = r.take(6)?.to_vec();
        let task = decode(Task::ALL, codes[0], "task")?;
        let method = decode(Method::ALL, codes[1], "method")?;
        let kind = decode(&KINDS, codes[2], "model kind")?;
        let coding = decode(Coding::ALL, codes[3], "coding")?;
        let connectivity = decode(Connectivity::ALL, codes[4], "connectivity")?;
        let precision = decode(&PRECISIONS, codes[5], "precision")?;
        let seed = r.u64()?;
        let step = r.u64()?;
        let metric = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let dims = r.u32()? as usize;
        if dims > 64 {
            return Err(format!("implausible shape record of {dims} dims"));
        }
        let shape = (0..dims).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let layout = Self::layout(kind, &shape)?;
        let payload_len = r.u64()? as usize;
        let expected: usize = layout.iter().sum::<usize>() * 8;
        if payload_len != expected {
            return Err(format!("payload is {payload_len} bytes, shape record implies {expected}"));
        }
        let payload = r.take(payload_len)?;
        let checksum = r.u64()?;
        if checksum != fnv1a64(payload) {
            return Err("checksum mismatch".into());
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let tensors = layout.iter().map(|&len| values.by_ref().take(len).collect()).collect();
        Ok(Self {
            header: Header {
                task,
                method,
                kind,
                coding,
                connectivity,
                precision,
                seed,
                step,
                metric,
                shape,
            },
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes).map_err(|reason| CliError::Checkpoint {
            path: path.display().to_string(),
            reason,
        })
    }

    /// Learnable values: admissible weights and inferred-neuron biases
    /// (RWTA) or every weight and bias (MLP).
    pub fn learnable_values(&self) -> CliResult<Vec<f64>> {
        match self.header.kind {
            ModelKind::Mlp => Ok(self.tensors.iter().flatten().copied().collect()),
            ModelKind::Rwta => {
                let Policy::Rwta(p) = self.to_policy::<f64>()? else { unreachable!() };
                let topology = p.topology();
                let h = p.shape().ha_count();
                let mut out: Vec<f64> = p
                    .w
                    .indexed_iter()
                    .filter(|((i, j), _)| topology.mask.allows(*i, *j))
                    .map(|(_, &w)| w)
                    .collect();
                out.extend(p.b.iter().take(h));
                Ok(out)
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let policy = Policy::<f32>::new(Task::Pendulum, Method::Svpg, 3, 0.1).unwrap();
        Checkpoint::from_policy(&policy, Task::Pendulum, Method::Svpg, Coding::Rate, Connectivity::Full, 3, 40, 187.5)
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().encode();
        let mut flipped = bytes.clone();
        let k = flipped.len() - 20;
        flipped[k] ^= 1;
        assert!(Checkpoint::decode(&flipped).unwrap_err().contains("checksum"));
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(Checkpoint::decode(&magic).is_err());
    }

    #[test]
    fn header_survives() {
        let c = sample();
        let back = Checkpoint::decode(&c.encode()).unwrap();
        assert_eq!(back.header, c.header);
        assert_eq!(back.header.precision, Precision::F32);
        assert_eq!(back.header.shape, vec![4, 8, 8, 5]);
    }
}
