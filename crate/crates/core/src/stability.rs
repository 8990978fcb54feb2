//! Stability functions of the generated tableaux and scans of the regions
//! built from them: the scalar region of a single tableau, Minion's region
//! (real implicit, imaginary explicit eigenvalue), and the two
//! "for all" regions D₀ and D₁ of an IMEX pair.
//!
//! Scans evaluate `R` by block forward substitution on the tableau instead
//! of a dense solve per point. Poles are reported as `+∞`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::integrator::stage_blocks;
use crate::quadrature::{cached_ader_operators, AderOperators, AderQuadrature, NodeKind};
use crate::tableaux::{ButcherTableau, Tableau};
use crate::Result;

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const POLE: Complex64 = Complex64::new(f64::INFINITY, 0.0);

struct Block {
    start: usize,
    len: usize,
    /// Row-major `len × len` entries of `A` and `Â` inside the block.
    a: Vec<f64>,
    a_hat: Vec<f64>,
}

/// Fast evaluator of `R(z_I, z_E)` for one tableau.
///
/// A single tableau is evaluated at `z_I + z_E`, like
/// [`Tableau::amplification`].
pub struct Evaluator {
    stages: usize,
    imex: bool,
    /// Couplings of each stage to stages of earlier blocks: `(j, a_ij, â_ij)`.
    lower: Vec<Vec<(usize, f64, f64)>>,
    blocks: Vec<Block>,
    weights: Vec<(usize, f64, f64)>,
    max_block: usize,
}

impl Evaluator {
    pub fn new(t: &Tableau) -> Self {
        let (main, expl) = t.parts();
        let z = main.stages();
        let zero = DMatrix::zeros(z, z);
        let zero_b = DVector::zeros(z);
        let a_hat = expl.map_or(&zero, |e| &e.a);
        let b_hat = expl.map_or(&zero_b, |e| &e.b);
        let pattern = main.a.abs() + a_hat.abs();
        let ranges = stage_blocks(&pattern);

        let mut lower = vec![Vec::new(); z];
        let mut blocks = Vec::with_capacity(ranges.len());
        for &(start, end) in &ranges {
            let len = end - start;
            for (i, row) in lower.iter_mut().enumerate().take(end).skip(start) {
                for j in 0..start {
                    let (a, ah) = (main.a[(i, j)], a_hat[(i, j)]);
                    if a != 0.0 || ah != 0.0 {
                        row.push((j, a, ah));
                    }
                }
            }
            let a = (0..len * len)
                .map(|k| main.a[(start + k / len, start + k % len)])
                .collect();
            let ah = (0..len * len)
                .map(|k| a_hat[(start + k / len, start + k % len)])
                .collect();
            blocks.push(Block { start, len, a, a_hat: ah });
        }
        let weights = (0..z)
            .filter(|&j| main.b[j] != 0.0 || b_hat[j] != 0.0)
            .map(|j| (j, main.b[j], b_hat[j]))
            .collect();
        let max_block = blocks.iter().map(|b| b.len).max().unwrap_or(1);
        Self {
            stages: z,
            imex: expl.is_some(),
            lower,
            blocks,
            weights,
            max_block,
        }
    }

    pub fn is_imex(&self) -> bool {
        self.imex
    }

    pub fn eval(&self, zi: Complex64, ze: Complex64) -> Complex64 {
        self.eval_with(&mut Workspace::new(self), zi, ze)
    }

    /// As [`Evaluator::eval`], reusing scratch buffers.
    pub fn eval_with(&self, ws: &mut Workspace, zi: Complex64, ze: Complex64) -> Complex64 {
        let (zi, ze) = if self.imex { (zi, ze) } else { (zi + ze, Complex64::default()) };
        let y = &mut ws.y;
        for blk in &self.blocks {
            for r in 0..blk.len {
                let i = blk.start + r;
                let mut acc = ONE;
                for &(j, a, ah) in &self.lower[i] {
                    acc += (zi * a + ze * ah) * y[j];
                }
                y[i] = acc;
            }
            if blk.len == 1 {
                let d = ONE - zi * blk.a[0] - ze * blk.a_hat[0];
                if d == Complex64::default() {
                    return POLE;
                }
                y[blk.start] /= d;
            } else if !solve_block(blk, zi, ze, &mut ws.m, &mut y[blk.start..blk.start + blk.len]) {
                return POLE;
            }
        }
        let mut r = ONE;
        for &(j, b, bh) in &self.weights {
            r += (zi * b + ze * bh) * y[j];
        }
        if r.is_finite() {
            r
        } else {
            POLE
        }
    }

    /// `R(z)` of a single tableau, or `R(z, 0)` of an IMEX pair.
    pub fn eval_scalar(&self, z: Complex64) -> Complex64 {
        self.eval(z, Complex64::default())
    }
}

/// Scratch space for [`Evaluator::eval_with`].
pub struct Workspace {
    y: Vec<Complex64>,
    m: Vec<Complex64>,
}

impl Workspace {
    pub fn new(ev: &Evaluator) -> Self {
        Self {
            y: vec![Complex64::default(); ev.stages],
            m: vec![Complex64::default(); ev.max_block * ev.max_block],
        }
    }
}

/// Gaussian elimination with partial pivoting on `I − z_I A_bb − z_E Â_bb`.
fn solve_block(blk: &Block, zi: Complex64, ze: Complex64, m: &mut [Complex64], y: &mut [Complex64]) -> bool {
    let n = blk.len;
    for k in 0..n * n {
        let diag = if k / n == k % n { ONE } else { Complex64::default() };
        m[k] = diag - zi * blk.a[k] - ze * blk.a_hat[k];
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&p, &q| m[p * n + col].norm_sqr().total_cmp(&m[q * n + col].norm_sqr()))
            .unwrap();
        if m[piv * n + col].norm_sqr() == 0.0 {
            return false;
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            y.swap(piv, col);
        }
        let inv = ONE / m[col * n + col];
        for row in col + 1..n {
            let f = m[row * n + col] * inv;
            if f == Complex64::default() {
                continue;
            }
            for k in col..n {
                let v = m[col * n + k];
                m[row * n + k] -= f * v;
            }
            let v = y[col];
            y[row] -= f * v;
        }
    }
    for row in (0..n).rev() {
        let mut acc = y[row];
        for k in row + 1..n {
            acc -= m[row * n + k] * y[k];
        }
        y[row] = acc / m[row * n + row];
    }
    true
}

/// Regular grid of `|R|` values, stored row-major with rows along the
/// second axis.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityGrid {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub values: Vec<f64>,
    pub offset: f64,
}

impl StabilityGrid {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.x.len() + ix]
    }

    pub fn is_stable(&self, ix: usize, iy: usize) -> bool {
        self.value(ix, iy) <= 1.0
    }

    pub fn mask(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v <= 1.0).collect()
    }

    pub fn stable_count(&self) -> usize {
        self.values.iter().filter(|&&v| v <= 1.0).count()
    }

    /// CSV with columns `re,im,absR`. For Minion grids `re` is `z_I` and
    /// `im` is the imaginary part of `z_E`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("re,im,absR\n");
        for (iy, y) in self.y.iter().enumerate() {
            for (ix, x) in self.x.iter().enumerate() {
                out.push_str(&format!("{x:.16e},{y:.16e},{:.16e}\n", self.value(ix, iy)));
            }
        }
        out
    }

    /// Binary PGM of the stable mask, first grid row at the bottom.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (w, h) = (self.x.len(), self.y.len());
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for iy in (0..h).rev() {
            out.extend((0..w).map(|ix| if self.is_stable(ix, iy) { 255u8 } else { 0 }));
        }
        out
    }
}

/// `n ≥ 2` equispaced points on `[lo, hi]`, shifted by `offset`.
pub fn axis(lo: f64, hi: f64, n: usize, offset: f64) -> Vec<f64> {
    assert!(n >= 2, "an axis needs at least two points");
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64 + offset)
        .collect()
}

fn grid_from(x: Vec<f64>, y: Vec<f64>, offset: f64, f: impl Fn(f64, f64) -> f64 + Sync) -> StabilityGrid {
    let values = y
        .par_iter()
        .flat_map_iter(|&yv| x.iter().map(|&xv| f(xv, yv)).collect::<Vec<_>>())
        .collect();
    StabilityGrid { x, y, values, offset }
}

/// `|R(z)|` over a rectangle of the complex plane.
pub fn scan_region(
    f: &(dyn Fn(Complex64) -> Complex64 + Sync),
    re: (f64, f64),
    im: (f64, f64),
    resolution: usize,
    offset: f64,
) -> StabilityGrid {
    let x = axis(re.0, re.1, resolution, offset);
    let y = axis(im.0, im.1, resolution, offset);
    grid_from(x, y, offset, |a, b| f(Complex64::new(a, b)).norm())
}

/// Scalar stability region of a tableau (an IMEX pair is scanned in its
/// implicit argument).
pub fn scan_tableau(ev: &Evaluator, re: (f64, f64), im: (f64, f64), resolution: usize, offset: f64) -> StabilityGrid {
    scan_region(&|z| ev.eval_scalar(z), re, im, resolution, offset)
}

#[derive(Debug, Clone, Serialize)]
pub struct MinionRegion {
    pub grid: StabilityGrid,
    /// Largest wedge half-angle around the negative `z_I` axis, in whole
    /// degrees, inside which every grid point is stable.
    pub alpha_deg: u32,
}

/// Minion's region `|R(z_I, i·w)| ≤ 1` over real `z_I` and real `w`.
pub fn minion_region(ev: &Evaluator, zi_range: (f64, f64), w_range: (f64, f64), resolution: usize, offset: f64) -> MinionRegion {
    let x = axis(zi_range.0, zi_range.1, resolution, offset);
    let y = axis(w_range.0, w_range.1, resolution, offset);
    let grid = grid_from(x, y, offset, |zi, w| {
        ev.eval(Complex64::new(zi, 0.0), Complex64::new(0.0, w)).norm()
    });
    let alpha_deg = wedge_angle(&grid);
    MinionRegion { grid, alpha_deg }
}

/// Largest `α` (degrees) such that every grid point with `x < 0` and
/// `atan(|y| / |x|) ≤ α` is stable.
pub fn wedge_angle(grid: &StabilityGrid) -> u32 {
    let mut worst = 90.0f64;
    for (iy, &y) in grid.y.iter().enumerate() {
        for (ix, &x) in grid.x.iter().enumerate() {
            if x < 0.0 && !grid.is_stable(ix, iy) {
                worst = worst.min(y.abs().atan2(-x).to_degrees());
            }
        }
    }
    // Every ray with angle strictly below `worst` is clean.
    let a = worst.ceil() - 1.0;
    a.max(0.0) as u32
}

/// Samples standing in for the closed left half-plane in D₀: 40 magnitudes
/// log-spaced on `[1e-2, 1e6]`, each at 36 arguments strictly inside
/// `(90°, 270°)` and on the negative real axis.
pub fn d0_samples() -> Vec<Complex64> {
    let mut out = Vec::with_capacity(40 * 37);
    for i in 0..40 {
        let r = 10f64.powf(-2.0 + 8.0 * i as f64 / 39.0);
        for j in 0..36 {
            let arg = std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * (j + 1) as f64 / 37.0;
            out.push(Complex64::from_polar(r, arg));
        }
        out.push(Complex64::new(-r, 0.0));
    }
    out
}

/// Samples of the explicit Euler disk `|1 + z| ≤ 1`: 16 radii × 64 angles.
pub fn d1_samples() -> Vec<Complex64> {
    let mut out = Vec::with_capacity(16 * 64);
    for i in 0..16 {
        let r = (i + 1) as f64 / 16.0;
        for j in 0..64 {
            let arg = std::f64::consts::TAU * j as f64 / 64.0;
            out.push(Complex64::new(-1.0, 0.0) + Complex64::from_polar(r, arg));
        }
    }
    out
}

/// Worst `|R|` over `samples`, stopping at the first violation.
fn worst_over(ev: &Evaluator, ws: &mut Workspace, samples: &[Complex64], f: impl Fn(Complex64) -> (Complex64, Complex64)) -> f64 {
    let mut worst = 0.0f64;
    for &s in samples {
        let (zi, ze) = f(s);
        let v = ev.eval_with(ws, zi, ze).norm();
        if !(v <= 1.0) {
            return v;
        }
        worst = worst.max(v);
    }
    worst
}

/// D₀: grid over `z_E`; a point is stable only if `|R(z_I, z_E)| ≤ 1` for
/// every sampled `z_I` in the left half-plane. The stored value is the
/// first violating `|R|`, or the maximum when none violates.
pub fn d0_region(ev: &Evaluator, re: (f64, f64), im: (f64, f64), resolution: usize, offset: f64) -> StabilityGrid {
    let samples = d0_samples();
    let x = axis(re.0, re.1, resolution, offset);
    let y = axis(im.0, im.1, resolution, offset);
    grid_from(x, y, offset, |a, b| {
        let ze = Complex64::new(a, b);
        worst_over(ev, &mut Workspace::new(ev), &samples, |zi| (zi, ze))
    })
}

/// D₁: grid over `z_I`, stable only if `|R(z_I, z_E)| ≤ 1` for every
/// sampled `z_E` of the explicit Euler disk.
pub fn d1_region(ev: &Evaluator, re: (f64, f64), im: (f64, f64), resolution: usize, offset: f64) -> StabilityGrid {
    let samples = d1_samples();
    let x = axis(re.0, re.1, resolution, offset);
    let y = axis(im.0, im.1, resolution, offset);
    grid_from(x, y, offset, |a, b| {
        let zi = Complex64::new(a, b);
        worst_over(ev, &mut Workspace::new(ev), &samples, |ze| (zi, ze))
    })
}

/// Leftmost point of the stable interval `[x, 0)` of the negative real
/// axis found on an `n`-point scan of `[lo, 0)` and refined by bisection.
/// `None` if the scan finds no instability.
pub fn real_axis_border(ev: &Evaluator, lo: f64, n: usize) -> Option<f64> {
    let stable = |x: f64| ev.eval_scalar(Complex64::new(x, 0.0)).norm() <= 1.0;
    let pts: Vec<f64> = (1..=n).map(|i| lo * i as f64 / n as f64).collect();
    let first_bad = pts.iter().position(|&x| !stable(x))?;
    let (mut good, mut bad) = (if first_bad == 0 { 0.0 } else { pts[first_bad - 1] }, pts[first_bad]);
    for _ in 0..60 {
        let mid = 0.5 * (good + bad);
        if stable(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Some(0.5 * (good + bad))
}

/// `R(z) = N(z) / Q(z)` with ascending coefficients and `Q(0) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RationalFit {
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
}

fn horner(c: &[f64], z: Complex64) -> Complex64 {
    c.iter().rev().fold(Complex64::default(), |acc, &v| acc * z + v)
}

impl RationalFit {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        horner(&self.numerator, z) / horner(&self.denominator, z)
    }

    pub fn eval_denominator(&self, z: Complex64) -> Complex64 {
        horner(&self.denominator, z)
    }

    /// Largest `|[z^i](N − Q·e^z)|` for `i ≤ n`.
    pub fn series_defect(&self, n: usize) -> f64 {
        let mut fact = vec![1.0f64; n + 1];
        for i in 1..=n {
            fact[i] = fact[i - 1] * i as f64;
        }
        (0..=n)
            .map(|i| {
                let num = self.numerator.get(i).copied().unwrap_or(0.0);
                let prod: f64 = (0..=i)
                    .filter_map(|l| self.denominator.get(l).map(|q| q / fact[i - l]))
                    .sum();
                (num - prod).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Padé approximant of `e^z` with numerator degree `k` and denominator
/// degree `j`.
pub fn pade_coefficients(k: usize, j: usize) -> RationalFit {
    let fact = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
    let kj = fact(k + j);
    let numerator = (0..=k)
        .map(|i| fact(k + j - i) * fact(k) / (kj * fact(i) * fact(k - i)))
        .collect();
    let denominator = (0..=j)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sign * fact(k + j - i) * fact(j) / (kj * fact(i) * fact(j - i))
        })
        .collect();
    RationalFit { numerator, denominator }
}

/// The one-block implicit ADER method `A = Q`, `b = b` on `M + 1` nodes.
pub fn ader_single_block(kind: NodeKind, degree: usize) -> Result<ButcherTableau> {
    let ops = cached_ader_operators(kind, degree, AderQuadrature::Collocated)?;
    Ok(ButcherTableau::new(ops.q.clone(), ops.b.clone()))
}

/// Largest relative deviation `|R(z) − R_kj(z)| / |R_kj(z)|` over 100
/// seeded points in the disk `|z| ≤ 5`, skipping points close to a pole of
/// either function.
pub fn pade_check(t: &ButcherTableau, k: usize, j: usize) -> f64 {
    let pade = pade_coefficients(k, j);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst = 0.0f64;
    let mut taken = 0;
    while taken < 100 {
        let z = Complex64::from_polar(5.0 * rng.gen::<f64>().sqrt(), std::f64::consts::TAU * rng.gen::<f64>());
        if pade.eval_denominator(z).norm() < 1e-3 {
            continue;
        }
        let r = t.stability_function(z);
        if !r.is_finite() {
            continue;
        }
        let p = pade.eval(z);
        worst = worst.max((r - p).norm() / p.norm());
        taken += 1;
    }
    worst
}

/// `|det(Q − 1bᵀ)|` divided by the product of the singular values above
/// `1e-8 σ_max`: tiny when the matrix is singular, about 1 otherwise.
pub fn zero_det_check(ops: &AderOperators) -> f64 {
    let n = ops.q.nrows();
    let x = &ops.q - DVector::from_element(n, 1.0) * ops.b.transpose();
    let sv = x.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let big: f64 = sv.iter().filter(|&&s| s > 1e-8 * smax).product();
    x.determinant().abs() / big
}

/// `1ᵀ(R − massM·1·bᵀ)`, which vanishes identically.
pub fn rhs_column_defect(ops: &AderOperators) -> f64 {
    let n = ops.q.nrows();
    let ones = DVector::from_element(n, 1.0);
    let x = &ops.rhs - &ops.mass * &ones * ops.b.transpose();
    (x.transpose() * ones).amax()
}

/// Largest `|R(z)|` over `n × n` points with `Re z ∈ −[1e-3, 1e6]` and
/// `Im z ∈ ±[1e-3, 1e6]` (both log-spaced) plus the real axis.
pub fn a_stability_probe(ev: &Evaluator, n: usize) -> f64 {
    let logs: Vec<f64> = (0..n).map(|i| 10f64.powf(-3.0 + 9.0 * i as f64 / (n - 1) as f64)).collect();
    let mut ims: Vec<f64> = vec![0.0];
    ims.extend(logs.iter().step_by(2).flat_map(|&v| [v, -v]));
    logs.par_iter()
        .map(|&re| {
            ims.iter()
                .map(|&im| ev.eval_scalar(Complex64::new(-re, im)).norm())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}
