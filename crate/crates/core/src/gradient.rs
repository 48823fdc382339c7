//! Differentials of the mean-field policy and REINFORCE gradient assembly.
//!
//! Two routes are provided:
//!
//! * [`ExactDifferential`] differentiates through the fixed point. With
//!   `S = W + W^T` and `M = diag(q_ha) [D_sel - G_ha diag(q)]`, the sensitivity
//!   `x = dq_ha/dtheta` solves `(I - M S D_sel^T) x = M r`, where `r` is the
//!   explicit derivative of the logits (`e_j` for `b_j`,
//!   `(U_jk + U_kj) q` for `w_jk`). Cost is cubic in the inferred block, so it
//!   serves as a diagnostic only.
//! * The local score treats the right-hand `q` as constant:
//!   `dlog q_i/dw_jk = d_ij q_k + d_ik q_j - ([j in G(i)] + [k in G(i)]) q_j q_k`,
//!   `dlog q_i/db_j = d_ij - [j in G(i)] q_j`. Summed over the fired neurons of
//!   every circuit this collapses to `q_k (v_j - q_j) + q_j (v_k - q_k)` for
//!   inferred `j, k`, which training uses.

use ndarray::{s, Array1, Array2, ArrayView1, Zip};

use crate::error::{Error, Result};
use crate::inference::FiringState;
use crate::linalg::{norm1, Lu};
use crate::scalar::Scalar;
use crate::topology::{RwtaParams, Topology};

/// Gradient with respect to `theta = <W, b>`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient<T> {
    pub dw: Array2<T>,
    pub db: Array1<T>,
}

impl<T: Scalar> PolicyGradient<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            dw: Array2::zeros((n, n)),
            db: Array1::zeros(n),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.dw.iter().chain(self.db.iter()).all(|x| *x == T::zero())
    }

    pub fn is_finite(&self) -> bool {
        self.dw.iter().chain(self.db.iter()).all(|x| x.is_finite())
    }

    pub fn scale(&mut self, k: T) {
        self.dw.mapv_inplace(|x| x * k);
        self.db.mapv_inplace(|x| x * k);
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.dw += &other.dw;
        self.db += &other.db;
    }

    /// Zero inadmissible synapses and the biases of clamped state neurons.
    pub fn project(&mut self, topology: &Topology) {
        topology.mask.project(&mut self.dw);
        self.db.slice_mut(s![topology.shape.ha_count()..]).fill(T::zero());
    }

    pub fn dot(&self, other: &Self) -> T {
        (&self.dw * &other.dw).sum() + self.db.dot(&other.db)
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn cosine(&self, other: &Self) -> T {
        let denom = self.norm() * other.norm();
        if denom == T::zero() {
            T::zero()
        } else {
            self.dot(other) / denom
        }
    }
}

/// One sensitivity vector `dq_ha/dtheta` with the residual of its linear solve.
#[derive(Debug, Clone)]
pub struct Differential<T> {
    pub dq: Array1<T>,
    pub residual: T,
}

/// Exact differentials of a converged fixed point.
#[derive(Debug, Clone)]
pub struct ExactDifferential<T> {
    h: usize,
    q: Array1<T>,
    /// `M S D_sel^T`, the `H x H` feedback through the fixed point.
    feedback: Array2<T>,
    system: Array2<T>,
    lu: Lu<T>,
    condition: T,
    group_start: Vec<usize>,
    group_end: Vec<usize>,
}

impl<T: Scalar> ExactDifferential<T> {
    pub const CONDITION_LIMIT: f64 = 1e12;

    pub fn new(params: &RwtaParams<T>, state: &FiringState<T>) -> Result<Self> {
        let topology = params.topology();
        let h = topology.shape.ha_count();
        let q = state.q.clone();
        let sym = &params.w + &params.w.t();
        let mut group_start = Vec::with_capacity(h);
        let mut group_end = Vec::with_capacity(h);
        for i in 0..h {
            let g = topology.circuits.members(i);
            group_start.push(g.start);
            group_end.push(g.end);
        }
        // (M S)_{i,n} = q_i (S_in - sum_{m in G(i)} q_m S_mn), restricted to n in ha
        let mut feedback = Array2::zeros((h, h));
        for i in 0..h {
            for n in 0..h {
                let mut mean = T::zero();
                for m in group_start[i]..group_end[i] {
                    mean += q[m] * sym[[m, n]];
                }
                feedback[[i, n]] = q[i] * (sym[[i, n]] - mean);
            }
        }
        let system: Array2<T> = Array2::eye(h) - &feedback;
        let lu = Lu::factor(system.clone())
            .ok_or_else(|| Error::OracleUnavailable("singular fixed-point system".into()))?;
        let condition: T = norm1(&system) * lu.inverse_norm1();
        if condition.to_f64_lossy().is_nan() || condition.to_f64_lossy() > Self::CONDITION_LIMIT {
            return Err(Error::OracleUnavailable(format!(
                "condition estimate {:e} exceeds {:e}",
                condition.to_f64_lossy(),
                Self::CONDITION_LIMIT
            )));
        }
        Ok(Self {
            h,
            q,
            feedback,
            system,
            lu,
            condition,
            group_start,
            group_end,
        })
    }

    pub fn condition(&self) -> T {
        self.condition
    }

    pub fn feedback(&self) -> &Array2<T> {
        &self.feedback
    }

    /// `(M r)_i = q_i (r_i - sum_{m in G(i)} q_m r_m)` for a sparse logit derivative `r`.
    fn apply_m(&self, r: &[(usize, T)]) -> Array1<T> {
        let mut out = Array1::zeros(self.h);
        for i in 0..self.h {
            let mut own = T::zero();
            let mut mean = T::zero();
            for &(m, val) in r {
                if m == i {
                    own += val;
                }
                if m >= self.group_start[i] && m < self.group_end[i] {
                    mean += self.q[m] * val;
                }
            }
            out[i] = self.q[i] * (own - mean);
        }
        out
    }

    fn solve(&self, rhs: Array1<T>) -> Differential<T> {
        let dq = self.lu.solve(&rhs);
        let r = self.system.dot(&dq) - &rhs;
        let residual = r.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        Differential { dq, residual }
    }

    /// `dq_ha / db_j`.
    pub fn dq_db(&self, j: usize) -> Differential<T> {
        let rhs = self.apply_m(&[(j, T::one())]);
        self.solve(rhs)
    }

    /// `dq_ha / dw_jk`, evaluated whether or not `(j, k)` is admissible.
    pub fn dq_dw(&self, j: usize, k: usize) -> Differential<T> {
        let rhs = self.apply_m(&[(j, self.q[k]), (k, self.q[j])]);
        self.solve(rhs)
    }

    /// Exact score `sum_{i fired} dlog q_i / dtheta` over every admissible
    /// parameter; the reference direction for the local approximation.
    pub fn score(&self, params: &RwtaParams<T>, state: &FiringState<T>) -> PolicyGradient<T> {
        let topology = params.topology();
        let n = topology.n();
        let fired: Vec<usize> = (0..self.h).filter(|&i| state.v[i] > T::zero()).collect();
        let project = |d: &Differential<T>| -> T {
            fired.iter().map(|&i| d.dq[i] / self.q[i]).sum()
        };
        let mut grad = PolicyGradient::zeros(n);
        for j in 0..self.h {
            grad.db[j] = project(&self.dq_db(j));
        }
        for j in 0..n {
            for k in 0..n {
                if topology.mask.allows(j, k) {
                    grad.dw[[j, k]] = project(&self.dq_dw(j, k));
                }
            }
        }
        grad
    }
}

pub fn exact_dq_db<T: Scalar>(
    params: &RwtaParams<T>,
    state: &FiringState<T>,
    j: usize,
) -> Result<Differential<T>> {
    Ok(ExactDifferential::new(params, state)?.dq_db(j))
}

pub fn exact_dq_dw<T: Scalar>(
    params: &RwtaParams<T>,
    state: &FiringState<T>,
    j: usize,
    k: usize,
) -> Result<Differential<T>> {
    Ok(ExactDifferential::new(params, state)?.dq_dw(j, k))
}

/// Add `weight * dlog q_i / dtheta` (local approximation) into `grad`,
/// touching only the rows and columns of `G(i)`.
pub fn accumulate_dlogq<T: Scalar>(
    topology: &Topology,
    q: ArrayView1<'_, T>,
    i: usize,
    weight: T,
    grad: &mut PolicyGradient<T>,
) {
    let n = topology.n();
    let group = topology.circuits.members(i);
    let in_group = |x: usize| group.contains(&x);
    let entry = |j: usize, k: usize| -> T {
        let mut val = T::zero();
        if j == i {
            val += q[k];
        }
        if k == i {
            val += q[j];
        }
        let hits = in_group(j) as usize + in_group(k) as usize;
        val - T::from_usize_lossy(hits) * q[j] * q[k]
    };
    for j in group.clone() {
        for k in 0..n {
            grad.dw[[j, k]] += weight * entry(j, k);
        }
    }
    for k in group.clone() {
        for j in (0..n).filter(|j| !in_group(*j)) {
            grad.dw[[j, k]] += weight * entry(j, k);
        }
    }
    for j in group {
        let d = if j == i { T::one() } else { T::zero() };
        grad.db[j] += weight * (d - q[j]);
    }
}

/// Local approximation of `dlog q_i / dtheta` as a dense gradient (unmasked).
pub fn approx_dlogq<T: Scalar>(topology: &Topology, state: &FiringState<T>, i: usize) -> PolicyGradient<T> {
    let mut grad = PolicyGradient::zeros(topology.n());
    accumulate_dlogq(topology, state.q.view(), i, T::one(), &mut grad);
    grad
}

/// Add the one-step score `weight * [sum_i v_hi . dlog q_hi + v_a . dlog q_a]`
/// in closed form, unmasked.
pub fn accumulate_score<T: Scalar>(
    topology: &Topology,
    state: &FiringState<T>,
    weight: T,
    grad: &mut PolicyGradient<T>,
) {
    let h = topology.shape.ha_count();
    let centered: Array1<T> = (&state.v.slice(s![..h]) - &state.q.slice(s![..h])) * weight;
    let q = &state.q;
    for j in 0..h {
        let c = centered[j];
        if c == T::zero() {
            continue;
        }
        grad.dw.row_mut(j).scaled_add(c, q);
        grad.dw.column_mut(j).scaled_add(c, q);
    }
    grad.db.slice_mut(s![..h]).scaled_add(T::one(), &centered);
}

/// Add `sum_i c_i dlog q_i` for arbitrary coefficients `c` on the inferred
/// block, unmasked. With `S_G` the coefficient sum of circuit `G`, the weight
/// entry is `c_j q_k + c_k q_j - q_j q_k (S_G(j) + S_G(k))` and the bias entry
/// `c_j - q_j S_G(j)`.
pub fn accumulate_weighted_dlogq<T: Scalar>(
    topology: &Topology,
    q: ArrayView1<'_, T>,
    c: ArrayView1<'_, T>,
    grad: &mut PolicyGradient<T>,
) {
    let (h, n) = (topology.shape.ha_count(), topology.n());
    let mut sums = Array1::<T>::zeros(n);
    for circuit in topology.circuits.wta() {
        let total: T = circuit.range.clone().map(|i| c[i]).sum();
        sums.slice_mut(s![circuit.range.clone()]).fill(total);
    }
    let mut coef = Array1::<T>::zeros(n);
    coef.slice_mut(s![..h]).assign(&c.slice(s![..h]));
    // c~_j = c_j - q_j S_G(j) folds the group terms into the outer products
    let folded: Array1<T> = &coef - &(&sums * &q);
    for j in 0..h {
        let cj = folded[j];
        if cj != T::zero() {
            grad.dw.row_mut(j).scaled_add(cj, &q);
            grad.dw.column_mut(j).scaled_add(cj, &q);
        }
    }
    grad.db.slice_mut(s![..h]).scaled_add(T::one(), &folded.slice(s![..h]));
}

/// Weighted score over a batch of firing states via two dense products:
/// `A = C^T Q` with `C_b = w_b (v_b - q_b)` on the inferred block, then
/// `dW[ha, :] += A`, `dW[:, ha] += A^T`. The result is mask-projected.
pub fn assemble_policy_gradient<'a, T: Scalar>(
    topology: &Topology,
    steps: impl IntoIterator<Item = (T, &'a FiringState<T>)>,
) -> PolicyGradient<T> {
    let (h, n) = (topology.shape.ha_count(), topology.n());
    let steps: Vec<(T, &FiringState<T>)> = steps
        .into_iter()
        .filter(|(w, _)| *w != T::zero())
        .collect();
    let mut grad = PolicyGradient::zeros(n);
    if steps.is_empty() {
        return grad;
    }
    let mut qm = Array2::<T>::zeros((steps.len(), n));
    let mut cm = Array2::<T>::zeros((steps.len(), h));
    for (row, (w, st)) in steps.iter().enumerate() {
        qm.row_mut(row).assign(&st.q);
        Zip::from(cm.row_mut(row))
            .and(st.v.slice(s![..h]))
            .and(st.q.slice(s![..h]))
            .for_each(|c, &v, &q| *c = *w * (v - q));
    }
    let a = cm.t().dot(&qm);
    grad.dw.slice_mut(s![..h, ..]).scaled_add(T::one(), &a);
    grad.dw.slice_mut(s![.., ..h]).scaled_add(T::one(), &a.t());
    grad.db.slice_mut(s![..h]).assign(&cm.sum_axis(ndarray::Axis(0)));
    grad.project(topology);
    grad
}

/// Finite-difference checks of both differentials. These evaluate the
/// mean-field map directly and share no code with the analytic routes.
pub mod check {
    use std::fmt;

    use super::*;
    use crate::inference::{mean_field_step, InferenceConfig, MeanField};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum Param {
        Bias(usize),
        Weight(usize, usize),
    }

    impl fmt::Display for Param {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match self {
                Param::Bias(j) => write!(f, "b[{j}]"),
                Param::Weight(j, k) => write!(f, "w[{j},{k}]"),
            }
        }
    }

    #[derive(Debug, Clone)]
    pub struct CheckRow {
        pub route: &'static str,
        pub param: Param,
        /// Inferred neuron with the largest discrepancy for this parameter.
        pub neuron: usize,
        pub analytic: f64,
        pub numeric: f64,
        pub rel_error: f64,
    }

    #[derive(Debug, Clone, Default)]
    pub struct GradCheckReport {
        pub rows: Vec<CheckRow>,
    }

    impl GradCheckReport {
        pub fn max_rel_error(&self, route: &str) -> f64 {
            self.rows
                .iter()
                .filter(|r| r.route == route)
                .map(|r| r.rel_error)
                .fold(0.0, f64::max)
        }

        pub fn passes(&self, exact_tol: f64, approx_tol: f64) -> bool {
            self.max_rel_error("exact") <= exact_tol && self.max_rel_error("approx") <= approx_tol
        }
    }

    impl fmt::Display for GradCheckReport {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            writeln!(
                f,
                "{:<7} {:<12} {:>6} {:>16} {:>16} {:>11}",
                "route", "param", "neuron", "analytic", "numeric", "rel_error"
            )?;
            for r in &self.rows {
                writeln!(
                    f,
                    "{:<7} {:<12} {:>6} {:>16.9e} {:>16.9e} {:>11.3e}",
                    r.route,
                    r.param.to_string(),
                    r.neuron,
                    r.analytic,
                    r.numeric,
                    r.rel_error
                )?;
            }
            Ok(())
        }
    }

    /// Largest componentwise gap relative to the larger of the two vectors'
    /// infinity norms; vectors that are both below `floor` count as equal.
    pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, usize) {
        let scale = analytic
            .iter()
            .chain(numeric)
            .fold(0.0f64, |m, x| m.max(x.abs()));
        let (idx, gap) = analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs())
            .enumerate()
            .fold((0, 0.0), |best, (i, g)| if g > best.1 { (i, g) } else { best });
        if scale < floor {
            (0.0, idx)
        } else {
            (gap / scale, idx)
        }
    }

    fn perturbed(params: &RwtaParams<f64>, p: Param, delta: f64) -> RwtaParams<f64> {
        let mut out = params.clone();
        match p {
            Param::Bias(j) => out.b[j] += delta,
            Param::Weight(j, k) => out.w[[j, k]] += delta,
        }
        out
    }

    /// Iterate the mean-field map from `start` until successive iterates agree to `tol`.
    pub fn converge(params: &RwtaParams<f64>, start: &FiringState<f64>, tol: f64) -> FiringState<f64> {
        let cfg = InferenceConfig {
            max_iters: 100_000,
            tol,
            rate_noise_std: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        MeanField::new(params)
            .run(start.clone(), &cfg, &mut rng, |_, _| {})
            .expect("finite parameters")
            .state
    }

    /// Central difference of the converged fixed point, re-converged from `start`.
    pub fn fixed_point_fd(
        params: &RwtaParams<f64>,
        start: &FiringState<f64>,
        p: Param,
        step: f64,
        tol: f64,
    ) -> Vec<f64> {
        let h = params.shape().ha_count();
        let plus = converge(&perturbed(params, p, step), start, tol);
        let minus = converge(&perturbed(params, p, -step), start, tol);
        (0..h).map(|i| (plus.q[i] - minus.q[i]) / (2.0 * step)).collect()
    }

    /// Central difference of `log q'` after one frozen mean-field step.
    pub fn frozen_step_fd(params: &RwtaParams<f64>, state: &FiringState<f64>, p: Param, step: f64) -> Vec<f64> {
        let h = params.shape().ha_count();
        let plus = mean_field_step(&perturbed(params, p, step), state).expect("finite");
        let minus = mean_field_step(&perturbed(params, p, -step), state).expect("finite");
        (0..h)
            .map(|i| (plus.q[i].ln() - minus.q[i].ln()) / (2.0 * step))
            .collect()
    }

    /// Compare the exact and the local differentials against finite
    /// differences at `state` (which must be a tightly converged fixed point).
    pub fn run(
        params: &RwtaParams<f64>,
        state: &FiringState<f64>,
        params_to_check: &[Param],
        fd_step: f64,
        fd_tol: f64,
    ) -> Result<GradCheckReport> {
        let topology = params.topology();
        let h = topology.shape.ha_count();
        let exact = ExactDifferential::new(params, state)?;
        let mut report = GradCheckReport::default();
        for &p in params_to_check {
            let analytic = match p {
                Param::Bias(j) => exact.dq_db(j),
                Param::Weight(j, k) => exact.dq_dw(j, k),
            };
            let numeric = fixed_point_fd(params, state, p, fd_step, fd_tol);
            let analytic = analytic.dq.to_vec();
            let (rel_error, neuron) = relative_error(&analytic, &numeric, 1e-9);
            report.rows.push(CheckRow {
                route: "exact",
                param: p,
                neuron,
                analytic: analytic[neuron],
                numeric: numeric[neuron],
                rel_error,
            });

            let local: Vec<f64> = (0..h)
                .map(|i| {
                    let g = approx_dlogq(topology, state, i);
                    match p {
                        Param::Bias(j) => g.db[j],
                        Param::Weight(j, k) => g.dw[[j, k]],
                    }
                })
                .collect();
            let numeric = frozen_step_fd(params, state, p, fd_step);
            let (rel_error, neuron) = relative_error(&local, &numeric, 1e-9);
            report.rows.push(CheckRow {
                route: "approx",
                param: p,
                neuron,
                analytic: local[neuron],
                numeric: numeric[neuron],
                rel_error,
            });
        }
        Ok(report)
    }
}
