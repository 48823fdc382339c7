//! Reward-based MNIST classification and a cart-pole with configurable pole geometry.

use ndarray::{Array1, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};

pub const MNIST_CLASSES: usize = 10;

/// `+1` for the correct class, `-1` otherwise.
pub fn reward_of(action: usize, label: u8) -> f64 {
    if action == label as usize {
        1.0
    } else {
        -1.0
    }
}

/// Grayscale bytes to `[0, 1]`, row-major.
pub fn encode_image(pixels: &[u8]) -> Array1<f64> {
    pixels.iter().map(|&p| p as f64 / 255.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumConfig {
    pub pole_length: f64,
    pub pole_thickness: f64,
    pub cart_mass: f64,
    /// Pole mass is `density * length * thickness^2`.
    pub pole_density: f64,
    pub gravity: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub fail_angle: f64,
    pub force_set: [f64; 5],
    /// Half-width of the uniform reset perturbation of every state component.
    pub reset_noise: f64,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            pole_length: 1.5,
            pole_thickness: 0.05,
            cart_mass: 0.35,
            pole_density: 120.0,
            gravity: 9.81,
            dt: 0.02,
            max_steps: 200,
            fail_angle: 0.2,
            force_set: [-3.0, -1.5, 0.0, 1.5, 3.0],
            reset_noise: 0.01,
        }
    }
}

impl PendulumConfig {
    pub fn with_geometry(mut self, length: f64, thickness: f64) -> Self {
        self.pole_length = length;
        self.pole_thickness = thickness;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pole_length", self.pole_length),
            ("pole_thickness", self.pole_thickness),
            ("cart_mass", self.cart_mass),
            ("pole_density", self.pole_density),
            ("dt", self.dt),
            ("fail_angle", self.fail_angle),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_steps == 0 || !(self.reset_noise >= 0.0) {
            return Err(Error::InvalidConfig("max_steps must be positive and reset_noise nonnegative".into()));
        }
        Ok(())
    }

    pub fn pole_mass(&self) -> f64 {
        self.pole_density * self.pole_length * self.pole_thickness * self.pole_thickness
    }

    pub fn force(&self, action: usize) -> Result<f64> {
        self.force_set.get(action).copied().ok_or(Error::InvalidAction {
            action,
            count: self.force_set.len(),
        })
    }
}

/// Raw cart-pole state `(x, theta, x_dot, theta_dot)`; `theta = 0` is upright.
pub type PendulumState = [f64; 4];

/// `(x_ddot, theta_ddot)` of a cart carrying a uniform rod hinged at its base.
pub fn accelerations(cfg: &PendulumConfig, s: &PendulumState, force: f64) -> (f64, f64) {
    let m = cfg.pole_mass();
    let h = cfg.pole_length / 2.0;
    let inertia = m * cfg.pole_length * cfg.pole_length / 12.0;
    let (sin, cos) = s[1].sin_cos();
    let a11 = cfg.cart_mass + m;
    let a12 = m * h * cos;
    let a22 = inertia + m * h * h;
    let r1 = force + m * h * s[3] * s[3] * sin;
    let r2 = m * cfg.gravity * h * sin;
    let det = a11 * a22 - a12 * a12;
    ((r1 * a22 - a12 * r2) / det, (a11 * r2 - a12 * r1) / det)
}

/// Total mechanical energy; conserved by the unforced dynamics.
pub fn energy(cfg: &PendulumConfig, s: &PendulumState) -> f64 {
    let m = cfg.pole_mass();
    let h = cfg.pole_length / 2.0;
    let inertia = m * cfg.pole_length * cfg.pole_length / 12.0;
    let kinetic = 0.5 * (cfg.cart_mass + m) * s[2] * s[2]
        + m * h * s[1].cos() * s[2] * s[3]
        + 0.5 * (inertia + m * h * h) * s[3] * s[3];
    kinetic + m * cfg.gravity * h * s[1].cos()
}

/// One semi-implicit Euler step: velocities first, positions from the new velocities.
pub fn integrate(cfg: &PendulumConfig, s: &PendulumState, force: f64, dt: f64) -> PendulumState {
    let (xa, ta) = accelerations(cfg, s, force);
    let xd = s[2] + dt * xa;
    let td = s[3] + dt * ta;
    [s[0] + dt * xd, s[1] + dt * td, xd, td]
}

pub fn pendulum_reset<R: Rng + ?Sized>(cfg: &PendulumConfig, rng: &mut R) -> PendulumState {
    let a = cfg.reset_noise;
    if a == 0.0 {
        return [0.0; 4];
    }
    std::array::from_fn(|_| rng.random_range(-a..=a))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: PendulumState,
    pub reward: f64,
    /// The pole fell, or the step limit was reached.
    pub done: bool,
    /// Ended by the step limit rather than a fall.
    pub truncated: bool,
}

/// Cart-pole episode state machine.
#[derive(Debug, Clone)]
pub struct Pendulum {
    pub cfg: PendulumConfig,
    state: PendulumState,
    steps: usize,
}

impl Pendulum {
    pub fn new(cfg: PendulumConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: [0.0; 4],
            steps: 0,
        })
    }

    pub fn state(&self) -> PendulumState {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> PendulumState {
        self.state = pendulum_reset(&self.cfg, rng);
        self.steps = 0;
        self.state
    }

    pub fn set_state(&mut self, state: PendulumState) {
        self.state = state;
        self.steps = 0;
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let force = self.cfg.force(action)?;
        self.state = integrate(&self.cfg, &self.state, force, self.cfg.dt);
        self.steps += 1;
        let fell = self.state[1].abs() > self.cfg.fail_angle;
        let truncated = !fell && self.steps >= self.cfg.max_steps;
        Ok(StepOutcome {
            state: self.state,
            reward: 1.0,
            done: fell || truncated,
            truncated,
        })
    }
}

pub const PUBLISHED_RANGES: [(f64, f64); 4] = [(-0.4, 0.4), (-0.2, 0.2), (-1.7, 1.7), (-1.25, 1.25)];

/// Per-dimension linear map of `[lo, hi]` onto `[0, 1]`, clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsNormalizer {
    ranges: Vec<(f64, f64)>,
}

impl Default for ObsNormalizer {
    fn default() -> Self {
        Self {
            ranges: PUBLISHED_RANGES.to_vec(),
        }
    }
}

impl ObsNormalizer {
    pub fn new(ranges: Vec<(f64, f64)>) -> Result<Self> {
        if let Some((d, _)) = ranges
            .iter()
            .enumerate()
            .find(|(_, (lo, hi))| !(lo < hi) || !lo.is_finite() || !hi.is_finite())
        {
            return Err(Error::Calibration(format!("degenerate range in dimension {d}")));
        }
        Ok(Self { ranges })
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn normalize(&self, raw: ArrayView1<'_, f64>) -> Array1<f64> {
        raw.iter()
            .zip(&self.ranges)
            .map(|(&x, &(lo, hi))| ((x - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }
}

pub fn normalize_obs(normalizer: &ObsNormalizer, raw: &PendulumState) -> Array1<f64> {
    normalizer.normalize(ArrayView1::from(&raw[..]))
}

/// Min/max of the observations seen over `n_steps` uniformly random actions,
/// resetting after every terminal step.
pub fn calibrate_normalizer<R: Rng + ?Sized>(
    cfg: &PendulumConfig,
    n_steps: usize,
    rng: &mut R,
) -> Result<ObsNormalizer> {
    if n_steps == 0 {
        return Err(Error::Calibration("no calibration steps requested".into()));
    }
    let mut env = Pendulum::new(*cfg)?;
    let mut state = env.reset(rng);
    let mut ranges = [(f64::INFINITY, f64::NEG_INFINITY); 4];
    let mut record = |s: &PendulumState| {
        for (r, &x) in ranges.iter_mut().zip(s) {
            r.0 = r.0.min(x);
            r.1 = r.1.max(x);
        }
    };
    record(&state);
    for _ in 0..n_steps {
        let action = rng.random_range(0..cfg.force_set.len());
        let out = env.step(action)?;
        record(&out.state);
        state = if out.done { env.reset(rng) } else { out.state };
        record(&state);
    }
    ObsNormalizer::new(ranges.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mnist_reward_and_encoding() {
        assert_eq!(reward_of(3, 3), 1.0);
        assert_eq!(reward_of(2, 3), -1.0);
        let x = encode_image(&[0, 128, 255]);
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 0.50196).abs() < 1e-5);
        assert_eq!(x[2], 1.0);
        assert!(encode_image(&[0; 784]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn force_set_mapping() {
        let cfg = PendulumConfig::default();
        assert_eq!(cfg.force(2).unwrap(), 0.0);
        assert_eq!(cfg.force(0).unwrap(), -3.0);
        assert_eq!(cfg.force(4).unwrap(), 3.0);
        assert!(matches!(cfg.force(5), Err(Error::InvalidAction { action: 5, count: 5 })));
    }

    #[test]
    fn upright_equilibrium_is_preserved() {
        let mut env = Pendulum::new(PendulumConfig::default()).unwrap();
        env.set_state([0.0; 4]);
        for _ in 0..10 {
            let out = env.step(2).unwrap();
            assert_eq!(out.state, [0.0; 4]);
        }
    }

    #[test]
    fn reset_is_bounded_and_seeded() {
        let cfg = PendulumConfig::default();
        let a = pendulum_reset(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let b = pendulum_reset(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert!(a.iter().all(|x| x.abs() <= 0.01));
        let still = PendulumConfig {
            reset_noise: 0.0,
            ..cfg
        };
        assert_eq!(pendulum_reset(&still, &mut ChaCha8Rng::seed_from_u64(1)), [0.0; 4]);
    }

    #[test]
    fn episode_ends_by_fall_or_limit() {
        let cfg = PendulumConfig::default();
        let mut env = Pendulum::new(cfg).unwrap();
        env.set_state([0.0, 0.19, 0.0, 0.5]);
        let mut n = 0;
        loop {
            let out = env.step(2).unwrap();
            n += 1;
            if out.done {
                assert!(!out.truncated);
                break;
            }
        }
        assert!(n < cfg.max_steps);
        env.set_state([0.0; 4]);
        let last = (0..cfg.max_steps).map(|_| env.step(2).unwrap()).last().unwrap();
        assert!(last.done && last.truncated);
    }

    #[test]
    fn normalizer_maps_published_ranges() {
        let n = ObsNormalizer::default();
        assert_eq!(normalize_obs(&n, &[-0.4, -0.2, -1.7, -1.25]).to_vec(), vec![0.0; 4]);
        let mid = normalize_obs(&n, &[0.0; 4]);
        assert!(mid.iter().all(|&x| (x - 0.5).abs() < 1e-15));
        assert_eq!(normalize_obs(&n, &[9.0, 0.0, 0.0, 0.0])[0], 1.0);
        assert!(ObsNormalizer::new(vec![(1.0, 1.0)]).is_err());
    }

    #[test]
    fn calibration_errors() {
        let cfg = PendulumConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(calibrate_normalizer(&cfg, 0, &mut rng).is_err());
        let frozen = PendulumConfig {
            reset_noise: 0.0,
            force_set: [0.0; 5],
            ..cfg
        };
        assert!(matches!(calibrate_normalizer(&frozen, 100, &mut rng), Err(Error::Calibration(_))));
    }
}
