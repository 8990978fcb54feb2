//! Periodic finite-difference stencils for the first, second and third
//! derivative, generated by solving the moment conditions
//! `Σ_k α_k k^m / m! = [m = d]` in exact rational arithmetic.

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use crate::{Error, Result};

/// Stencil coefficients for the `d`-th derivative, to be divided by `Δx^d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stencil {
    pub d: u32,
    /// Accuracy order.
    pub q: usize,
    pub offsets: Vec<i64>,
    pub coefficients: Vec<f64>,
    /// Exact coefficients as `[numerator, denominator]` pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rational: Option<Vec<[i64; 2]>>,
}

impl Stencil {
    pub fn width(&self) -> usize {
        self.offsets.len()
    }

    /// Fourier symbol `σ(θ) = Σ_k α_k e^{ikθ}`.
    pub fn symbol(&self, theta: f64) -> Complex64 {
        self.offsets
            .iter()
            .zip(&self.coefficients)
            .map(|(&k, &a)| Complex64::from_polar(a, k as f64 * theta))
            .sum()
    }

    /// Largest violation of the moment conditions for `m = 0..q+d−1`.
    pub fn moment_defect(&self) -> f64 {
        let d = self.d as usize;
        (0..self.q + d)
            .map(|m| {
                let fact: f64 = (1..=m).map(|v| v as f64).product();
                let s: f64 = self
                    .offsets
                    .iter()
                    .zip(&self.coefficients)
                    .map(|(&k, &a)| a * (k as f64).powi(m as i32))
                    .sum::<f64>()
                    / fact;
                (s - if m == d { 1.0 } else { 0.0 }).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `(offset, coefficient)` pairs.
    pub fn taps(&self) -> Vec<(i64, f64)> {
        self.offsets.iter().copied().zip(self.coefficients.iter().copied()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Solves the square system `Σ_k α_k k^m / m! = [m = d]`, `m < n`, over
/// the offsets `lo..=hi` (`n = hi − lo + 1`).
fn solve_moments(d: u32, lo: i64, hi: i64) -> Vec<BigRational> {
    let offsets: Vec<i64> = (lo..=hi).collect();
    let n = offsets.len();
    let mut a: Vec<Vec<BigRational>> = (0..n)
        .map(|m| {
            let fact: BigInt = (1..=m as i64).map(BigInt::from).product();
            let mut row: Vec<BigRational> = offsets
                .iter()
                .map(|&k| BigRational::new(BigInt::from(k).pow(m as u32), fact.clone()))
                .collect();
            row.push(if m == d as usize { BigRational::one() } else { BigRational::zero() });
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).find(|&r| !a[r][col].is_zero()).expect("moment system is a Vandermonde system");
        a.swap(col, piv);
        let inv = a[col][col].recip();
        for v in a[col].iter_mut() {
            *v = &*v * &inv;
        }
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = a[r][col].clone();
                for c in col..=n {
                    let sub = &f * &a[col][c];
                    a[r][c] = &a[r][c] - sub;
                }
            }
        }
    }
    a.into_iter().map(|row| row[n].clone()).collect()
}

fn build(d: u32, q: usize, lo: i64, hi: i64, coeffs: Vec<BigRational>) -> Stencil {
    let rational = coeffs
        .iter()
        .map(|c| Some([c.numer().to_i64()?, c.denom().to_i64()?]))
        .collect::<Option<Vec<_>>>();
    Stencil {
        d,
        q,
        offsets: (lo..=hi).collect(),
        coefficients: coeffs.iter().map(|c| c.to_f64().unwrap()).collect(),
        rational,
    }
}

/// Optimal `[r, s]` first-derivative stencil on offsets `−r..=s`, order
/// `r + s`.
pub fn advection_stencil(r: usize, s: usize) -> Result<Stencil> {
    if r + s == 0 {
        return Err(Error::InvalidArgument("an advection stencil needs r + s ≥ 1".into()));
    }
    let (lo, hi) = (-(r as i64), s as i64);
    Ok(build(1, r + s, lo, hi, solve_moments(1, lo, hi)))
}

/// Closed form of the optimal `[r, s]` coefficients, indexed from `−r`.
/// For `s > r` the central coefficient is `−Σ_{j=r+1}^{s} 1/j`; the
/// alternative sign would leave `Σ α_k = 1`.
pub fn advection_formula(r: usize, s: usize) -> Vec<f64> {
    let fact = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
    let (ri, si) = (r as i64, s as i64);
    (-ri..=si)
        .map(|k| {
            if k == 0 {
                if r > s {
                    (s + 1..=r).map(|j| 1.0 / j as f64).sum()
                } else {
                    -(r + 1..=s).map(|j| 1.0 / j as f64).sum::<f64>()
                }
            } else {
                let sign = if (k + 1).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                sign / k as f64 * fact(r) * fact(s) / (fact((ri + k) as usize) * fact((si - k) as usize))
            }
        })
        .collect()
}

/// Upwind-biased first-derivative stencil of order `q` for `a > 0`: one
/// extra point on the left for odd `q`, two for even `q`.
pub fn advection_stencil_for_order(q: usize) -> Result<Stencil> {
    if q == 0 {
        return Err(Error::InvalidArgument("advection order must be at least 1".into()));
    }
    let (r, s) = if q % 2 == 1 { (q.div_ceil(2), q / 2) } else { (q / 2 + 1, q / 2 - 1) };
    advection_stencil(r, s)
}

/// Central second-derivative stencil of even order `q ∈ {2, 4, 6, 8}`.
pub fn diffusion_stencil(q: usize) -> Result<Stencil> {
    if !matches!(q, 2 | 4 | 6 | 8) {
        return Err(Error::InvalidArgument(format!("diffusion order must be 2, 4, 6 or 8, got {q}")));
    }
    let h = (q / 2) as i64;
    Ok(build(2, q, -h, h, solve_moments(2, -h, h)))
}

/// Upwind third-derivative stencil of odd order `q ∈ {3, 5, 7}` on offsets
/// `−r..=r+1` with `r = (q + 1) / 2`.
pub fn dispersion_stencil(q: usize) -> Result<Stencil> {
    if !matches!(q, 3 | 5 | 7) {
        return Err(Error::InvalidArgument(format!("dispersion order must be 3, 5 or 7, got {q}")));
    }
    let r = q.div_ceil(2) as i64;
    Ok(build(3, q, -r, r + 1, solve_moments(3, -r, r + 1)))
}

/// Exact sum of the coefficients; zero for any consistent derivative.
pub fn coefficient_sum(st: &Stencil) -> Option<BigRational> {
    st.rational.as_ref().map(|r| {
        r.iter()
            .fold(BigRational::zero(), |acc, [n, d]| acc + BigRational::new(BigInt::from(*n), BigInt::from(*d)))
    })
}
