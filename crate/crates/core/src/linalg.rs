//! Dense LU factorization with partial pivoting.

use ndarray::{Array1, Array2};

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Array2<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    /// Factor a square matrix. Returns `None` when a pivot is exactly zero.
    pub fn factor(mut a: Array2<T>) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU needs a square matrix");
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, max) = (k..n)
                .map(|r| (r, a[[r, k]].abs()))
                .fold((k, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if max == T::zero() {
                return None;
            }
            if p != k {
                for c in 0..n {
                    a.swap([k, c], [p, c]);
                }
                perm.swap(k, p);
            }
            let pivot = a[[k, k]];
            for r in k + 1..n {
                let f = a[[r, k]] / pivot;
                a[[r, k]] = f;
                if f != T::zero() {
                    for c in k + 1..n {
                        let v = a[[k, c]];
                        a[[r, c]] -= f * v;
                    }
                }
            }
        }
        Some(Self { lu: a, perm })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn solve(&self, b: &Array1<T>) -> Array1<T> {
        let n = self.dim();
        let mut x: Array1<T> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let mut acc = x[r];
            for c in 0..r {
                acc -= self.lu[[r, c]] * x[c];
            }
            x[r] = acc;
        }
        for r in (0..n).rev() {
            let mut acc = x[r];
            for c in r + 1..n {
                acc -= self.lu[[r, c]] * x[c];
            }
            x[r] = acc / self.lu[[r, r]];
        }
        x
    }

    /// `||A^-1||_1` from explicit column solves.
    pub fn inverse_norm1(&self) -> T {
        let n = self.dim();
        let mut best = T::zero();
        for c in 0..n {
            let mut e = Array1::zeros(n);
            e[c] = T::one();
            let col = self.solve(&e);
            best = best.max(col.iter().map(|x| x.abs()).sum());
        }
        best
    }
}

pub fn norm1<T: Scalar>(a: &Array2<T>) -> T {
    a.columns()
        .into_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<T>())
        .fold(T::zero(), T::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_pivoting_system() {
        let a: Array2<f64> = array![[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]];
        let b = array![3.0, 2.0, 4.0];
        let lu = Lu::factor(a.clone()).unwrap();
        let x = lu.solve(&b);
        let r: Array1<f64> = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn singular_detected() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(Lu::factor(a).is_none());
    }

    #[test]
    fn identity_condition() {
        let lu = Lu::factor(Array2::<f64>::eye(4)).unwrap();
        assert_eq!(lu.inverse_norm1(), 1.0);
        assert_eq!(norm1(&Array2::<f64>::eye(4)), 1.0);
    }
}
