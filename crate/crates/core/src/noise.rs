//! Perturbations for robustness sweeps: input noise, parameter noise and
//! pendulum geometry variation.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::envs::PendulumConfig;
use crate::error::{Error, Result};
use crate::mlp::DenseNet;
use crate::scalar::Scalar;
use crate::topology::RwtaParams;

/// One concrete perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Gaussian { std: f64 },
    Uniform { half_width: f64 },
    Salt { p: f64 },
    Pepper { p: f64 },
    SaltPepper { p: f64 },
    GaussianSalt { std: f64, p: f64 },
    EnvLength { length: f64 },
    EnvThickness { thickness: f64 },
    /// Length with thickness tied at `length / 16`.
    EnvUnion { length: f64 },
}

pub const UNION_RATIO: f64 = 16.0;

impl NoiseKind {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let ok = match *self {
            NoiseKind::Gaussian { std } => std >= 0.0,
            NoiseKind::Uniform { half_width } => half_width >= 0.0,
            NoiseKind::Salt { p } | NoiseKind::Pepper { p } | NoiseKind::SaltPepper { p } => prob(p),
            NoiseKind::GaussianSalt { std, p } => std >= 0.0 && prob(p),
            NoiseKind::EnvLength { length } | NoiseKind::EnvUnion { length } => length > 0.0,
            NoiseKind::EnvThickness { thickness } => thickness > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidNoise(format!("{self:?}")))
        }
    }

    pub fn is_environment(&self) -> bool {
        matches!(
            self,
            NoiseKind::EnvLength { .. } | NoiseKind::EnvThickness { .. } | NoiseKind::EnvUnion { .. }
        )
    }

    /// The pendulum variant this kind describes; other kinds leave `base` unchanged.
    pub fn apply_env(&self, base: &PendulumConfig) -> PendulumConfig {
        match *self {
            NoiseKind::EnvLength { length } => base.with_geometry(length, base.pole_thickness),
            NoiseKind::EnvThickness { thickness } => base.with_geometry(base.pole_length, thickness),
            NoiseKind::EnvUnion { length } => base.with_geometry(length, length / UNION_RATIO),
            _ => *base,
        }
    }
}

/// What a sweep perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseTarget {
    Input,
    Parameters,
    Environment,
}

/// A noise kind without its strength; `at` fixes the swept quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseFamily {
    Gaussian,
    Uniform,
    Salt,
    Pepper,
    SaltPepper,
    /// Sweeps the Gaussian std with a fixed salt probability.
    GaussianSalt { p: f64 },
    EnvLength,
    EnvThickness,
    EnvUnion,
}

impl NoiseFamily {
    pub fn at(&self, strength: f64) -> NoiseKind {
        match *self {
            NoiseFamily::Gaussian => NoiseKind::Gaussian { std: strength },
            NoiseFamily::Uniform => NoiseKind::Uniform { half_width: strength },
            NoiseFamily::Salt => NoiseKind::Salt { p: strength },
            NoiseFamily::Pepper => NoiseKind::Pepper { p: strength },
            NoiseFamily::SaltPepper => NoiseKind::SaltPepper { p: strength },
            NoiseFamily::GaussianSalt { p } => NoiseKind::GaussianSalt { std: strength, p },
            NoiseFamily::EnvLength => NoiseKind::EnvLength { length: strength },
            NoiseFamily::EnvThickness => NoiseKind::EnvThickness { thickness: strength },
            NoiseFamily::EnvUnion => NoiseKind::EnvUnion { length: strength },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Uniform => "uniform",
            NoiseFamily::Salt => "salt",
            NoiseFamily::Pepper => "pepper",
            NoiseFamily::SaltPepper => "salt_pepper",
            NoiseFamily::GaussianSalt { .. } => "gaussian_salt",
            NoiseFamily::EnvLength => "env_length",
            NoiseFamily::EnvThickness => "env_thickness",
            NoiseFamily::EnvUnion => "env_union",
        }
    }

    pub fn is_environment(&self) -> bool {
        matches!(self, NoiseFamily::EnvLength | NoiseFamily::EnvThickness | NoiseFamily::EnvUnion)
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gaussian" => NoiseFamily::Gaussian,
            "uniform" => NoiseFamily::Uniform,
            "salt" => NoiseFamily::Salt,
            "pepper" => NoiseFamily::Pepper,
            "salt_pepper" => NoiseFamily::SaltPepper,
            "gaussian_salt" => NoiseFamily::GaussianSalt { p: DEFAULT_GAUSSIAN_SALT_P },
            "env_length" => NoiseFamily::EnvLength,
            "env_thickness" => NoiseFamily::EnvThickness,
            "env_union" => NoiseFamily::EnvUnion,
            other => return Err(Error::InvalidNoise(format!("unknown noise kind {other:?}"))),
        })
    }
}

pub const DEFAULT_GAUSSIAN_SALT_P: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub target: NoiseTarget,
    pub family: NoiseFamily,
    pub strengths: Vec<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(target: NoiseTarget, family: NoiseFamily, strengths: Vec<f64>, seed: u64) -> Result<Self> {
        if family.is_environment() != (target == NoiseTarget::Environment) {
            return Err(Error::InvalidNoise(format!("{family} cannot target {target:?}")));
        }
        if target == NoiseTarget::Parameters && !matches!(family, NoiseFamily::Gaussian | NoiseFamily::Uniform) {
            return Err(Error::InvalidNoise(format!("{family} is not a parameter noise")));
        }
        let spec = Self {
            target,
            family,
            strengths,
            seed,
        };
        for k in spec.points() {
            k.validate()?;
        }
        Ok(spec)
    }

    pub fn points(&self) -> Vec<NoiseKind> {
        self.strengths.iter().map(|&s| self.family.at(s)).collect()
    }
}

/// `n` evenly spaced values on `[lo, hi]`; a single point is `lo`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// Evenly spaced values that also contain `must`, kept sorted.
pub fn linspace_with(lo: f64, hi: f64, n: usize, must: f64) -> Vec<f64> {
    let mut v = linspace(lo, hi, n);
    if !v.iter().any(|&x| (x - must).abs() < 1e-12) {
        v.push(must);
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    v
}

pub const LENGTH_RANGE: (f64, f64) = (0.16, 4.9);
pub const THICKNESS_RANGE: (f64, f64) = (0.02, 0.30);

/// Pendulum variants for an environment sweep.
pub fn sweep(spec: &NoiseSpec, base: &PendulumConfig) -> Vec<(f64, PendulumConfig)> {
    spec.strengths
        .iter()
        .map(|&s| (s, spec.family.at(s).apply_env(base)))
        .collect()
}

fn salt_pepper<R: Rng + ?Sized>(x: f64, p_salt: f64, p_pepper: f64, rng: &mut R) -> f64 {
    if p_salt == 0.0 && p_pepper == 0.0 {
        return x;
    }
    let u = rng.random::<f64>();
    if u < p_salt {
        1.0
    } else if u < p_salt + p_pepper {
        0.0
    } else {
        x
    }
}

fn gaussian<R: Rng + ?Sized>(std: f64, rng: &mut R) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        Normal::new(0.0, std).unwrap().sample(rng)
    }
}

/// Additive perturbation only, before clipping.
fn additive<R: Rng + ?Sized>(kind: &NoiseKind, rng: &mut R) -> f64 {
    match *kind {
        NoiseKind::Gaussian { std } | NoiseKind::GaussianSalt { std, .. } => gaussian(std, rng),
        NoiseKind::Uniform { half_width } if half_width > 0.0 => rng.random_range(-half_width..=half_width),
        _ => 0.0,
    }
}

/// Perturb an input vector and clip it to `[0, 1]`.
pub fn perturb_input<T: Scalar, R: Rng + ?Sized>(
    x: ArrayView1<'_, T>,
    kind: &NoiseKind,
    rng: &mut R,
) -> Result<Array1<T>> {
    kind.validate()?;
    if kind.is_environment() {
        return Ok(x.to_owned());
    }
    Ok(x.mapv(|v| {
        let v = v.to_f64_lossy();
        let out = match *kind {
            NoiseKind::Salt { p } => salt_pepper(v, p, 0.0, rng),
            NoiseKind::Pepper { p } => salt_pepper(v, 0.0, p, rng),
            NoiseKind::SaltPepper { p } => salt_pepper(v, p / 2.0, p / 2.0, rng),
            NoiseKind::GaussianSalt { p, .. } => {
                let g = v + additive(kind, rng);
                salt_pepper(g, p, 0.0, rng)
            }
            _ => v + additive(kind, rng),
        };
        T::lit(out.clamp(0.0, 1.0))
    }))
}

/// Parameter sets that accept additive noise on their learnable entries.
pub trait Perturb: Clone {
    fn perturb_with(&mut self, f: &mut dyn FnMut() -> f64);
}

impl<T: Scalar> Perturb for RwtaParams<T> {
    fn perturb_with(&mut self, f: &mut dyn FnMut() -> f64) {
        let h = self.shape().ha_count();
        let topology = self.topology().clone();
        for ((i, j), w) in self.w.indexed_iter_mut() {
            if topology.mask.allows(i, j) {
                *w += T::lit(f());
            }
        }
        for b in self.b.iter_mut().take(h) {
            *b += T::lit(f());
        }
        self.project();
    }
}

impl<T: Scalar> Perturb for DenseNet<T> {
    fn perturb_with(&mut self, f: &mut dyn FnMut() -> f64) {
        for l in &mut self.layers {
            for x in l.w.iter_mut().chain(l.b.iter_mut()) {
                *x += T::lit(f());
            }
        }
    }
}

/// A perturbed copy; zero strength returns an identical copy.
pub fn perturb_params<P: Perturb, R: Rng + ?Sized>(params: &P, kind: &NoiseKind, rng: &mut R) -> Result<P> {
    kind.validate()?;
    let mut out = params.clone();
    match *kind {
        NoiseKind::Gaussian { std: 0.0 } | NoiseKind::Uniform { half_width: 0.0 } => {}
        NoiseKind::Gaussian { .. } | NoiseKind::Uniform { .. } => {
            out.perturb_with(&mut || additive(kind, rng));
        }
        other => return Err(Error::InvalidNoise(format!("{other:?} is not a parameter noise"))),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{init_params, NetworkShape, Topology};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn zero_strength_is_identity() {
        let x = Array1::from(vec![0.1, 0.5, 0.9]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for fam in [
            NoiseFamily::Gaussian,
            NoiseFamily::Uniform,
            NoiseFamily::Salt,
            NoiseFamily::Pepper,
            NoiseFamily::SaltPepper,
            NoiseFamily::GaussianSalt { p: 0.0 },
        ] {
            assert_eq!(perturb_input(x.view(), &fam.at(0.0), &mut rng).unwrap(), x);
        }
    }

    #[test]
    fn salt_saturates_and_pepper_clears() {
        let x = Array1::from(vec![0.1, 0.5, 0.9]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = perturb_input(x.view(), &NoiseKind::Salt { p: 1.0 }, &mut rng).unwrap();
        assert!(s.iter().all(|&v| v == 1.0));
        let p = perturb_input(x.view(), &NoiseKind::Pepper { p: 1.0 }, &mut rng).unwrap();
        assert!(p.iter().all(|&v| v == 0.0));
        let g = perturb_input(x.view(), &NoiseKind::Gaussian { std: 5.0 }, &mut rng).unwrap();
        assert!(g.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn invalid_strengths_rejected() {
        assert!(NoiseKind::Salt { p: 1.5 }.validate().is_err());
        assert!(NoiseKind::Gaussian { std: -0.1 }.validate().is_err());
        assert!(NoiseSpec::new(NoiseTarget::Parameters, NoiseFamily::Salt, vec![0.1], 0).is_err());
        assert!(NoiseSpec::new(NoiseTarget::Input, NoiseFamily::EnvLength, vec![1.0], 0).is_err());
    }

    #[test]
    fn param_noise_respects_mask_and_source() {
        let topo = Arc::new(Topology::new(NetworkShape::new(3, 2, 3, 2).unwrap()));
        let params = init_params::<f64>(topo.clone(), 1, 0.1);
        let before = params.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let same = perturb_params(&params, &NoiseKind::Gaussian { std: 0.0 }, &mut rng).unwrap();
        assert_eq!(same, params);
        let noisy = perturb_params(&params, &NoiseKind::Uniform { half_width: 0.3 }, &mut rng).unwrap();
        assert_eq!(params, before);
        for ((i, j), &w) in noisy.w.indexed_iter() {
            if !topo.mask.allows(i, j) {
                assert_eq!(w, 0.0);
            } else {
                assert!((w - params.w[[i, j]]).abs() <= 0.3);
            }
        }
        let h = topo.shape.ha_count();
        assert!(noisy.b.iter().skip(h).all(|&b| b == 0.0));
    }

    #[test]
    fn sweeps() {
        assert_eq!(linspace(0.3, 0.9, 1), vec![0.3]);
        let lengths = linspace_with(LENGTH_RANGE.0, LENGTH_RANGE.1, 10, 1.5);
        assert!(lengths.contains(&1.5));
        assert_eq!(lengths.first(), Some(&0.16));
        let spec = NoiseSpec::new(NoiseTarget::Environment, NoiseFamily::EnvUnion, lengths, 0).unwrap();
        for (_, cfg) in sweep(&spec, &PendulumConfig::default()) {
            assert!((cfg.pole_length / cfg.pole_thickness - 16.0).abs() < 1e-12);
        }
        assert_eq!("salt_pepper".parse::<NoiseFamily>().unwrap(), NoiseFamily::SaltPepper);
        assert!("nope".parse::<NoiseFamily>().is_err());
    }
}
