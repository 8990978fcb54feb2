//! Von Neumann analysis of IMEX schemes for `u_t + a u_x = d u_xx` and
//! `u_t + a u_x + β u_xxx = 0` on periodic grids, with the advection term
//! explicit and the diffusion or dispersion term implicit.
//!
//! A Fourier mode `e^{ijθ}` is multiplied per step by
//! `g = R(z_I, z_E)` with `z_E = −C σ_adv(θ)` and `z_I = D σ_diff(θ)` or
//! `z_I = −P σ_disp(θ)`. Only `θ ∈ [0, π]` is sampled since `|g|` is even
//! in `θ`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::stability::{Evaluator, Workspace};
use crate::stencils::{advection_stencil_for_order, diffusion_stencil, dispersion_stencil, Stencil};
use crate::tableaux::{build_reduced, MethodSpec};
use crate::{Error, Result};

/// Slack on `|g| ≤ 1` for round-off on modes with `|g| = 1`.
pub const STABILITY_TOL: f64 = 1e-12;

/// Parameter plane of a scan. The first axis is always the CFL number `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Plane {
    /// Diffusion number `D = dΔt/Δx²`.
    CD,
    /// `E = C²/D = a²Δt/d`.
    CE,
    /// Dispersion number `P = βΔt/Δx³`.
    CP,
    /// `E_P = C/P = aΔx²/β`.
    CEP,
}

impl Plane {
    pub fn is_dispersive(self) -> bool {
        matches!(self, Plane::CP | Plane::CEP)
    }

    /// Default range of `C`. On the dispersion planes the `E_P` border keeps
    /// moving until `C ≈ 100`.
    pub fn default_c_range(self) -> (f64, f64) {
        if self.is_dispersive() {
            (0.01, 100.0)
        } else {
            (0.01, 10.0)
        }
    }

    /// Default range of the second axis (always log-scaled).
    pub fn default_range(self) -> (f64, f64) {
        match self {
            Plane::CD | Plane::CE => (1e-2, 1e2),
            Plane::CP => (1e-2, 1e4),
            Plane::CEP => (1e-6, 1e-1),
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Plane::CD => "CD",
            Plane::CE => "CE",
            Plane::CP => "CP",
            Plane::CEP => "CEP",
        })
    }
}

impl FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CD" => Ok(Plane::CD),
            "CE" => Ok(Plane::CE),
            "CP" => Ok(Plane::CP),
            "CEP" => Ok(Plane::CEP),
            _ => Err(Error::InvalidArgument(format!("unknown plane '{s}'"))),
        }
    }
}

/// The dimensionless numbers of one discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coefficients {
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub p: f64,
    pub e_p: f64,
}

impl Coefficients {
    /// From physical data: advection speed `a`, diffusion `d`, dispersion
    /// `β`, and the step sizes.
    pub fn from_physical(a: f64, diff: f64, beta: f64, dt: f64, dx: f64) -> Self {
        let c = a * dt / dx;
        let d = diff * dt / (dx * dx);
        let p = beta * dt / (dx * dx * dx);
        Self { c, d, e: c * c / d, p, e_p: c / p }
    }

    pub fn from_ce(c: f64, e: f64) -> Self {
        let d = c * c / e;
        Self { c, d, e, p: f64::NAN, e_p: f64::NAN }
    }

    pub fn from_cep(c: f64, e_p: f64) -> Self {
        Self { c, d: f64::NAN, e: f64::NAN, p: c / e_p, e_p }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanSpec {
    pub method: MethodSpec,
    /// Order of the advection stencil (`A_n`).
    pub advection_order: usize,
    /// Order of the diffusion (`D_m`) or dispersion (`B_m`) stencil.
    pub second_order: usize,
    pub plane: Plane,
    pub c_range: (f64, f64),
    pub second_range: (f64, f64),
    pub resolution: usize,
    /// Wavenumbers `θ_k = πk/(n₀+1)`, `k = 0..=n₀+1`.
    pub n0: usize,
}

impl ScanSpec {
    pub fn new(method: MethodSpec, advection_order: usize, second_order: usize, plane: Plane) -> Self {
        Self {
            method,
            advection_order,
            second_order,
            plane,
            c_range: plane.default_c_range(),
            second_range: plane.default_range(),
            resolution: 400,
            n0: 1000,
        }
    }

    pub fn with_grid(mut self, resolution: usize, n0: usize) -> Self {
        self.resolution = resolution;
        self.n0 = n0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.second_range;
        if self.resolution < 2 || self.n0 < 1 {
            return Err(Error::InvalidArgument("resolution must be ≥ 2 and n0 ≥ 1".into()));
        }
        if !(lo > 0.0 && hi > lo && self.c_range.1 > self.c_range.0 && self.c_range.0 >= 0.0) {
            return Err(Error::InvalidArgument("scan ranges must be increasing, log axes positive".into()));
        }
        Ok(())
    }

    /// Values of `C`, linear from the lower to the upper bound.
    pub fn c_axis(&self) -> Vec<f64> {
        linspace(self.c_range.0, self.c_range.1, self.resolution)
    }

    /// Values of the second parameter, log-spaced.
    pub fn second_axis(&self) -> Vec<f64> {
        let (lo, hi) = (self.second_range.0.log10(), self.second_range.1.log10());
        linspace(lo, hi, self.resolution).into_iter().map(|v| 10f64.powf(v)).collect()
    }

    /// `[family, nodes, order, A_n, D_m]`-style label.
    pub fn label(&self) -> String {
        let second = if self.plane.is_dispersive() { 'B' } else { 'D' };
        format!(
            "[{},{},{},A{},{}{}]",
            self.method.family,
            self.method.kind.short(),
            self.method.order,
            self.advection_order,
            second,
            self.second_order
        )
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Amplification factor for advection–diffusion at one mode.
pub fn amplification_ad(ev: &Evaluator, adv: &Stencil, diff: &Stencil, c: f64, d: f64, theta: f64) -> Complex64 {
    ev.eval(diff.symbol(theta) * d, -adv.symbol(theta) * c)
}

/// Amplification factor for advection–dispersion at one mode.
pub fn amplification_disp(ev: &Evaluator, adv: &Stencil, disp: &Stencil, c: f64, p: f64, theta: f64) -> Complex64 {
    ev.eval(-disp.symbol(theta) * p, -adv.symbol(theta) * c)
}

/// Precomputed symbols and stability function of one scan.
pub struct Engine {
    pub spec: ScanSpec,
    ev: Evaluator,
    adv: Vec<Complex64>,
    second: Vec<Complex64>,
}

impl Engine {
    pub fn new(spec: ScanSpec) -> Result<Self> {
        spec.validate()?;
        let adv = advection_stencil_for_order(spec.advection_order)?;
        let second = if spec.plane.is_dispersive() {
            dispersion_stencil(spec.second_order)?
        } else {
            diffusion_stencil(spec.second_order)?
        };
        let thetas: Vec<f64> = (0..=spec.n0 + 1)
            .map(|k| std::f64::consts::PI * k as f64 / (spec.n0 + 1) as f64)
            .collect();
        let ev = Evaluator::new(&build_reduced(&spec.method)?);
        Ok(Self {
            adv: thetas.iter().map(|&t| adv.symbol(t)).collect(),
            second: thetas.iter().map(|&t| second.symbol(t)).collect(),
            spec,
            ev,
        })
    }

    /// Multipliers `(s_I, s_E)` with `z_I = s_I σ₂(θ)` and `z_E = s_E σ_adv(θ)`.
    fn scales(&self, c: f64, s: f64) -> (f64, f64) {
        let implicit = match self.spec.plane {
            Plane::CD => s,
            Plane::CE => c * c / s,
            Plane::CP => -s,
            Plane::CEP => -c / s,
        };
        (implicit, -c)
    }

    /// `max_θ |g|` at one parameter point.
    pub fn max_gain(&self, c: f64, s: f64) -> f64 {
        let mut ws = Workspace::new(&self.ev);
        let (si, se) = self.scales(c, s);
        self.adv
            .iter()
            .zip(&self.second)
            .map(|(&a, &b)| self.ev.eval_with(&mut ws, b * si, a * se).norm())
            .fold(0.0, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v) })
    }

    /// `true` if every sampled mode has `|g| ≤ 1 + STABILITY_TOL`.
    pub fn is_stable(&self, c: f64, s: f64) -> bool {
        let (si, se) = self.scales(c, s);
        self.stable_scaled(si, se)
    }

    /// Stability of pure advection (`z_I = 0`), the limit of a column as
    /// `E → ∞` or `E_P → ∞`.
    pub fn advection_limit_stable(&self, c: f64) -> bool {
        self.stable_scaled(0.0, -c)
    }

    fn stable_scaled(&self, si: f64, se: f64) -> bool {
        let mut ws = Workspace::new(&self.ev);
        self.adv
            .iter()
            .zip(&self.second)
            .all(|(&a, &b)| self.ev.eval_with(&mut ws, b * si, a * se).norm() <= 1.0 + STABILITY_TOL)
    }

    pub fn scan(&self) -> VonNeumannMap {
        let c = self.spec.c_axis();
        let s = self.spec.second_axis();
        let values = s
            .par_iter()
            .flat_map_iter(|&sv| c.iter().map(|&cv| self.max_gain(cv, sv)).collect::<Vec<_>>())
            .collect();
        VonNeumannMap {
            spec: self.spec.clone(),
            c,
            second: s,
            values,
        }
    }

    fn column_stable(&self, c: f64, s_axis: &[f64]) -> bool {
        self.advection_limit_stable(c) && s_axis.iter().all(|&s| self.is_stable(c, s))
    }

    fn row_stable(&self, s: f64, c_axis: &[f64]) -> bool {
        c_axis.iter().all(|&c| self.is_stable(c, s))
    }

    /// Borders from the scan grid without storing the map: the largest
    /// fully stable column and row, refined by bisection toward the next
    /// grid line.
    pub fn borders(&self) -> Borders {
        let c = self.spec.c_axis();
        let s = self.spec.second_axis();
        let col = (0..c.len()).into_par_iter().rev().find_first(|&i| self.column_stable(c[i], &s));
        let row = (0..s.len()).into_par_iter().rev().find_first(|&j| self.row_stable(s[j], &c));
        self.refine(&c, &s, col, row)
    }

    fn refine(&self, c: &[f64], s: &[f64], col: Option<usize>, row: Option<usize>) -> Borders {
        let c0 = border(col, c, false, |v| self.column_stable(v, s));
        let s0 = border(row, s, true, |v| self.row_stable(v, c));
        Borders {
            label: self.spec.label(),
            plane: self.spec.plane,
            c0,
            second0: s0,
        }
    }

    /// Borders extracted from a stored map, refined like [`Engine::borders`].
    pub fn extract_borders(&self, map: &VonNeumannMap) -> Borders {
        let (nc, ns) = (map.c.len(), map.second.len());
        let col = (0..nc)
            .rev()
            .find(|&i| (0..ns).all(|j| map.is_stable(i, j)) && self.advection_limit_stable(map.c[i]));
        let row = (0..ns).rev().find(|&j| (0..nc).all(|i| map.is_stable(i, j)));
        self.refine(&map.c, &map.second, col, row)
    }
}

fn border(idx: Option<usize>, axis: &[f64], log: bool, stable: impl Fn(f64) -> bool) -> Border {
    match idx {
        None => Border { value: 0.0, valid: false },
        Some(i) if i + 1 == axis.len() => Border { value: axis[i], valid: false },
        Some(i) => {
            let (mut good, mut bad) = (axis[i], axis[i + 1]);
            for _ in 0..24 {
                let mid = if log { (good * bad).sqrt() } else { 0.5 * (good + bad) };
                if stable(mid) {
                    good = mid;
                } else {
                    bad = mid;
                }
            }
            Border { value: good, valid: true }
        }
    }
}

/// A stability border. `valid` is false when it sits at the edge of the
/// scanned range or nothing is stable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Border {
    pub value: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Borders {
    pub label: String,
    pub plane: Plane,
    /// Largest `C` whose whole column (every sampled second parameter and
    /// the pure-advection limit) is stable.
    #[serde(rename = "C0")]
    pub c0: Border,
    /// Largest value of the second parameter whose whole row is stable:
    /// `E₀` on the `CE` plane, `E_{P,0}` on `CEP`.
    #[serde(rename = "second0")]
    pub second0: Border,
}

impl Borders {
    /// `C₀` to two decimals and the second border to one significant
    /// decimal place (`E₀`) or three significant digits (`E_{P,0}`).
    pub fn summary(&self) -> String {
        format!(
            "{} C0={:.2}{} {}0={}{}",
            self.label,
            self.c0.value,
            if self.c0.valid { "" } else { " (range edge)" },
            match self.plane {
                Plane::CD => "D",
                Plane::CE => "E",
                Plane::CP => "P",
                Plane::CEP => "EP",
            },
            if self.plane == Plane::CE { format!("{:.1}", self.second0.value) } else { format!("{:.3e}", self.second0.value) },
            if self.second0.valid { "" } else { " (range edge)" },
        )
    }
}

/// Grid of `max_θ |g|`, row-major with rows along the second axis.
#[derive(Debug, Clone, Serialize)]
pub struct VonNeumannMap {
    pub spec: ScanSpec,
    pub c: Vec<f64>,
    pub second: Vec<f64>,
    pub values: Vec<f64>,
}

impl VonNeumannMap {
    pub fn value(&self, ic: usize, is: usize) -> f64 {
        self.values[is * self.c.len() + ic]
    }

    pub fn is_stable(&self, ic: usize, is: usize) -> bool {
        self.value(ic, is) <= 1.0 + STABILITY_TOL
    }

    /// CSV with columns `C,secondAxis,maxAbsG`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("C,secondAxis,maxAbsG\n");
        for (is, s) in self.second.iter().enumerate() {
            for (ic, c) in self.c.iter().enumerate() {
                out.push_str(&format!("{c:.16e},{s:.16e},{:.16e}\n", self.value(ic, is)));
            }
        }
        out
    }

    /// Binary PGM of the stable mask, smallest second-axis value at the
    /// bottom.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (w, h) = (self.c.len(), self.second.len());
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for is in (0..h).rev() {
            out.extend((0..w).map(|ic| if self.is_stable(ic, is) { 255u8 } else { 0 }));
        }
        out
    }
}

/// Time-method order `k` with advection stencil `A_k` and diffusion
/// stencil `D_{2⌈k/2⌉}` on the `C`–`E` plane.
pub fn matched_order_spec(method: MethodSpec) -> ScanSpec {
    let k = method.order;
    ScanSpec::new(method, k, 2 * k.div_ceil(2), Plane::CE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::NodeKind;
    use crate::tableaux::{build_tableau, Family, Mode};
    use approx::assert_relative_eq;

    fn method(family: Family, kind: NodeKind, p: usize) -> MethodSpec {
        MethodSpec::new(family, kind, p, Mode::Imex).unwrap()
    }

    fn small(spec: ScanSpec) -> Engine {
        Engine::new(spec.with_grid(24, 60)).unwrap()
    }

    #[test]
    fn coefficient_identities() {
        let k = Coefficients::from_physical(1.3, 0.02, 0.004, 1e-3, 0.05);
        assert_relative_eq!(k.e * k.d, k.c * k.c, max_relative = 1e-14);
        assert_relative_eq!(k.e_p * k.p, k.c, max_relative = 1e-14);
        let ce = Coefficients::from_ce(0.7, 3.0);
        assert_relative_eq!(ce.e * ce.d, ce.c * ce.c, max_relative = 1e-14);
        let cep = Coefficients::from_cep(0.7, 3e-4);
        assert_relative_eq!(cep.e_p * cep.p, cep.c, max_relative = 1e-14);
    }

    #[test]
    fn trivial_modes() {
        let ev = Evaluator::new(&build_tableau(&method(Family::Dec, NodeKind::GaussLobatto, 3)).unwrap());
        let adv = advection_stencil_for_order(1).unwrap();
        let diff = diffusion_stencil(2).unwrap();
        let disp = dispersion_stencil(3).unwrap();
        for th in [0.0, 0.4, 2.0] {
            assert_relative_eq!(amplification_ad(&ev, &adv, &diff, 0.0, 0.0, th).norm(), 1.0, epsilon = 1e-15);
        }
        assert_eq!(amplification_ad(&ev, &adv, &diff, 3.0, 50.0, 0.0), Complex64::new(1.0, 0.0));
        assert_eq!(amplification_disp(&ev, &adv, &disp, 3.0, 50.0, 0.0), Complex64::new(1.0, 0.0));
        // P = 0 is pure explicit advection.
        let expl = build_tableau(&method(Family::Dec, NodeKind::GaussLobatto, 3)).unwrap();
        let r = expl.as_imex().unwrap().explicit.stability_function(-adv.symbol(1.1) * 0.8);
        assert!((amplification_disp(&ev, &adv, &disp, 0.8, 0.0, 1.1) - r).norm() < 1e-13);
    }

    #[test]
    fn stiff_diffusion_with_second_order_methods() {
        for family in [Family::Dec, Family::Sdec, Family::Ader] {
            let ev = Evaluator::new(&build_tableau(&method(family, NodeKind::GaussLobatto, 2)).unwrap());
            let adv = advection_stencil_for_order(2).unwrap();
            let diff = diffusion_stencil(2).unwrap();
            let g = amplification_ad(&ev, &adv, &diff, 0.0, 1e3, std::f64::consts::PI);
            assert!(g.norm() <= 1.0, "{family}: {g}");
            let e = Engine::new(ScanSpec::new(method(family, NodeKind::GaussLobatto, 2), 2, 2, Plane::CD).with_grid(10, 200)).unwrap();
            assert!(e.is_stable(0.01, 1e6), "{family}");
        }
        let ev = Evaluator::new(&build_tableau(&method(Family::Dec, NodeKind::GaussLobatto, 2)).unwrap());
        let g = amplification_disp(&ev, &advection_stencil_for_order(1).unwrap(), &dispersion_stencil(3).unwrap(), 0.0, 10.0, std::f64::consts::PI);
        assert!(g.norm() <= 1.0);
    }

    #[test]
    fn zero_mode_column_and_conjugate_symmetry() {
        let e = small(ScanSpec::new(method(Family::Sdec, NodeKind::Equispaced, 4), 3, 4, Plane::CE));
        let adv = advection_stencil_for_order(3).unwrap();
        let diff = diffusion_stencil(4).unwrap();
        for (c, ev) in [(0.3, 0.5), (2.0, 30.0), (7.5, 0.02)] {
            let d = c * c / ev;
            let neg = (0..=61)
                .map(|k| -std::f64::consts::PI * k as f64 / 61.0)
                .map(|t| amplification_ad(&e.ev, &adv, &diff, c, d, t).norm())
                .fold(0.0, f64::max);
            assert_relative_eq!(neg, e.max_gain(c, ev), max_relative = 1e-13);
        }
    }

    #[test]
    fn small_c_row_is_stable_for_a_stable_diffusion() {
        let e = small(ScanSpec::new(method(Family::Ader, NodeKind::GaussLobatto, 3), 1, 2, Plane::CE));
        for s in e.spec.second_axis() {
            assert!(e.is_stable(1e-4, s));
        }
    }

    #[test]
    fn plane_reparametrisation_agrees() {
        let m = method(Family::Dec, NodeKind::GaussLobatto, 3);
        let cd = small(ScanSpec::new(m, 1, 2, Plane::CD));
        let ce = small(ScanSpec::new(m, 1, 2, Plane::CE));
        for c in [0.2, 1.1, 4.0] {
            for e in [0.05, 1.0, 20.0] {
                assert_eq!(cd.max_gain(c, c * c / e), ce.max_gain(c, e));
            }
        }
        let cp = small(ScanSpec::new(m, 1, 3, Plane::CP));
        let cep = small(ScanSpec::new(m, 1, 3, Plane::CEP));
        assert_eq!(cp.max_gain(0.5, 0.5 / 1e-3), cep.max_gain(0.5, 1e-3));
    }

    #[test]
    fn map_and_direct_borders_agree() {
        let e = Engine::new(matched_order_spec(method(Family::Dec, NodeKind::GaussLobatto, 2)).with_grid(40, 100)).unwrap();
        let map = e.scan();
        assert_eq!(e.extract_borders(&map), e.borders());
        assert_eq!(map.values.len(), 1600);
        assert!(map.to_csv().starts_with("C,secondAxis,maxAbsG\n"));
    }

    #[test]
    fn all_stable_map_is_flagged() {
        let spec = ScanSpec {
            c_range: (0.01, 0.2),
            second_range: (1e-3, 1e-2),
            ..ScanSpec::new(method(Family::Ader, NodeKind::GaussLobatto, 3), 1, 2, Plane::CE)
        };
        let b = small(spec).borders();
        assert!(!b.c0.valid && !b.second0.valid);
        assert_eq!(b.c0.value, 0.2);
    }

    #[test]
    fn refinement_moves_less_than_a_cell() {
        let m = method(Family::Dec, NodeKind::GaussLobatto, 2);
        let coarse = Engine::new(matched_order_spec(m).with_grid(60, 100)).unwrap().borders();
        let fine = Engine::new(matched_order_spec(m).with_grid(120, 200)).unwrap().borders();
        assert!((coarse.c0.value - fine.c0.value).abs() < 10.0 / 59.0);
        let cell = (1e4f64).powf(1.0 / 59.0);
        assert!(coarse.second0.value / fine.second0.value < cell && fine.second0.value / coarse.second0.value < cell);
    }
}
