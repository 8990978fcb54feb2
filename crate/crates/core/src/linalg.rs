//! Linear operators used by the steppers: dense matrices for small ODE
//! systems and periodic (circulant) stencils for the PDE discretizations.
//!
//! Every implicit stage system in this crate has the form
//! `(I − A ⊗ L) y = r`, with a small coefficient matrix `A` (one diagonal
//! entry of a DIRK, or a whole ADER block) and a state operator `L`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Circulant {
    n: usize,
    /// `(L u)_i = Σ coeff · u_{i+offset}`, indices taken modulo `n`.
    taps: Vec<(i64, f64)>,
    eigen: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Circulant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Circulant")
            .field("n", &self.n)
            .field("taps", &self.taps)
            .finish()
    }
}

impl Circulant {
    pub fn new(n: usize, taps: &[(i64, f64)]) -> Self {
        let mut merged: Vec<(i64, f64)> = Vec::new();
        for &(k, c) in taps {
            match merged.iter_mut().find(|(o, _)| *o == k) {
                Some(t) => t.1 += c,
                None => merged.push((k, c)),
            }
        }
        merged.retain(|&(_, c)| c != 0.0);
        merged.sort_by_key(|&(k, _)| k);
        let eigen = (0..n)
            .map(|j| {
                merged
                    .iter()
                    .map(|&(k, c)| {
                        let phase = std::f64::consts::TAU * (j as f64) * (k as f64) / n as f64;
                        Complex64::from_polar(c, phase)
                    })
                    .sum()
            })
            .collect();
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            taps: merged,
            eigen,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn taps(&self) -> &[(i64, f64)] {
        &self.taps
    }

    /// Eigenvalue for the Fourier mode `e^{2πi j x/n}`.
    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigen
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        let n = self.n as i64;
        DVector::from_fn(self.n, |i, _| {
            self.taps
                .iter()
                .map(|&(k, c)| c * u[(i as i64 + k).rem_euclid(n) as usize])
                .sum()
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        let taps: Vec<_> = self.taps.iter().map(|&(k, c)| (k, s * c)).collect();
        Self::new(self.n, &taps)
    }

    pub fn plus(&self, other: &Circulant) -> Self {
        let taps: Vec<_> = self.taps.iter().chain(&other.taps).copied().collect();
        Self::new(self.n, &taps)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n as i64;
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for &(k, c) in &self.taps {
                m[(i, (i as i64 + k).rem_euclid(n) as usize)] += c;
            }
        }
        m
    }

    fn solve_kron(&self, a: &DMatrix<f64>, r: &[DVector<f64>]) -> Option<Vec<DVector<f64>>> {
        let nb = a.nrows();
        let n = self.n;
        let mut spectra: Vec<Vec<Complex64>> = r
            .iter()
            .map(|v| {
                let mut buf: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                self.forward.process(&mut buf);
                buf
            })
            .collect();
        let ac = a.map(|v| Complex64::new(v, 0.0));
        for j in 0..n {
            let lam = self.eigen[j];
            if nb == 1 {
                let d = Complex64::new(1.0, 0.0) - ac[(0, 0)] * lam;
                if d.norm() == 0.0 {
                    return None;
                }
                spectra[0][j] /= d;
                continue;
            }
            let m = DMatrix::<Complex64>::identity(nb, nb) - ac.map(|v| v * lam);
            let rhs = DVector::from_fn(nb, |b, _| spectra[b][j]);
            let y = m.lu().solve(&rhs)?;
            for b in 0..nb {
                spectra[b][j] = y[b];
            }
        }
        let scale = 1.0 / n as f64;
        let out: Vec<DVector<f64>> = spectra
            .into_iter()
            .map(|mut buf| {
                self.inverse.process(&mut buf);
                DVector::from_iterator(n, buf.iter().map(|c| c.re * scale))
            })
            .collect();
        out.iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            .then_some(out)
    }
}

/// A real linear operator on `R^n`.
#[derive(Debug, Clone)]
pub enum LinOp {
    Dense(DMatrix<f64>),
    Circulant(Circulant),
    Zero(usize),
}

impl LinOp {
    pub fn dim(&self) -> usize {
        match self {
            LinOp::Dense(m) => m.nrows(),
            LinOp::Circulant(c) => c.dim(),
            LinOp::Zero(n) => *n,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            LinOp::Zero(_) => true,
            LinOp::Dense(m) => m.iter().all(|&v| v == 0.0),
            LinOp::Circulant(c) => c.taps().is_empty(),
        }
    }

    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            LinOp::Dense(m) => m * u,
            LinOp::Circulant(c) => c.apply(u),
            LinOp::Zero(n) => DVector::zeros(*n),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            LinOp::Dense(m) => m.clone(),
            LinOp::Circulant(c) => c.to_dense(),
            LinOp::Zero(n) => DMatrix::zeros(*n, *n),
        }
    }

    pub fn plus(&self, other: &LinOp) -> LinOp {
        match (self, other) {
            (LinOp::Zero(_), x) | (x, LinOp::Zero(_)) => x.clone(),
            (LinOp::Circulant(a), LinOp::Circulant(b)) => LinOp::Circulant(a.plus(b)),
            (a, b) => LinOp::Dense(a.to_dense() + b.to_dense()),
        }
    }

    /// Solves `(I − A ⊗ L) y = r`, where `r` and `y` stack `A.nrows()`
    /// state vectors. Returns `None` if the system is singular.
    pub fn solve_kron(&self, a: &DMatrix<f64>, r: &[DVector<f64>]) -> Option<Vec<DVector<f64>>> {
        debug_assert_eq!(a.nrows(), r.len());
        if self.is_zero() || a.iter().all(|&v| v == 0.0) {
            return Some(r.to_vec());
        }
        match self {
            LinOp::Zero(_) => unreachable!(),
            LinOp::Circulant(c) => c.solve_kron(a, r),
            LinOp::Dense(l) => {
                let n = l.nrows();
                let nb = a.nrows();
                let mut m = DMatrix::<f64>::identity(nb * n, nb * n);
                for bi in 0..nb {
                    for bj in 0..nb {
                        let s = a[(bi, bj)];
                        if s != 0.0 {
                            let mut view = m.view_mut((bi * n, bj * n), (n, n));
                            view -= l * s;
                        }
                    }
                }
                let rhs = DVector::from_iterator(nb * n, r.iter().flat_map(|v| v.iter().copied()));
                let y = m.lu().solve(&rhs)?;
                if !y.iter().all(|v| v.is_finite()) {
                    return None;
                }
                Some((0..nb).map(|b| y.rows(b * n, n).into_owned()).collect())
            }
        }
    }

    /// Solves `(I − s L) y = r`.
    pub fn solve_shifted(&self, s: f64, r: &DVector<f64>) -> Option<DVector<f64>> {
        let a = DMatrix::from_element(1, 1, s);
        self.solve_kron(&a, std::slice::from_ref(r))
            .map(|mut v| v.pop().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn upwind(n: usize) -> Circulant {
        Circulant::new(n, &[(-1, 1.0), (0, -1.0)])
    }

    #[test]
    fn circulant_apply_wraps() {
        let c = upwind(4);
        let u = DVector::from_vec(vec![1.0, 2.0, 4.0, 8.0]);
        assert_eq!(c.apply(&u).as_slice(), &[7.0, -1.0, -2.0, -4.0]);
        assert_eq!(c.to_dense() * &u, c.apply(&u));
    }

    #[test]
    fn circulant_spectrum_matches_dense_eigenvalues() {
        let c = Circulant::new(8, &[(-2, 0.3), (-1, -1.1), (0, 0.4), (1, 0.2)]);
        let d = c.to_dense();
        for (j, &lam) in c.eigenvalues().iter().enumerate() {
            let v = DVector::from_fn(8, |i, _| {
                Complex64::from_polar(1.0, std::f64::consts::TAU * (i * j) as f64 / 8.0)
            });
            let dv = d.map(|x| Complex64::new(x, 0.0)) * &v;
            assert!((dv - v * lam).norm() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn fft_kron_solve_matches_dense(
            taps in proptest::collection::vec(-1.0f64..1.0, 4),
            a in proptest::collection::vec(-0.3f64..0.3, 9),
            r in proptest::collection::vec(-1.0f64..1.0, 30),
        ) {
            let c = Circulant::new(10, &[(-2, taps[0]), (-1, taps[1]), (0, taps[2]), (1, taps[3])]);
            let a = DMatrix::from_row_slice(3, 3, &a);
            let r: Vec<DVector<f64>> = r.chunks(10).map(DVector::from_column_slice).collect();
            let fast = LinOp::Circulant(c.clone()).solve_kron(&a, &r).unwrap();
            let dense = LinOp::Dense(c.to_dense()).solve_kron(&a, &r).unwrap();
            for (x, y) in fast.iter().zip(&dense) {
                prop_assert!((x - y).amax() < 1e-11);
            }
        }
    }

    #[test]
    fn singular_shift_is_reported() {
        let l = LinOp::Dense(DMatrix::identity(2, 2));
        assert!(l.solve_shifted(1.0, &DVector::from_element(2, 1.0)).is_none());
        let c = LinOp::Circulant(Circulant::new(4, &[(0, 1.0)]));
        assert!(c.solve_shifted(1.0, &DVector::from_element(4, 1.0)).is_none());
    }
}
