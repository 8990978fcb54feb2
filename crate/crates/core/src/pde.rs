//! Periodic finite-difference discretizations of advection–diffusion and
//! advection–dispersion on `[0, 2π]`, stepped with the IMEX methods.
//!
//! Advection is the explicit part `G`, the second- or third-derivative term
//! the implicit part `S`. Both are circulant, so implicit stage systems are
//! solved in Fourier space.

use std::fmt::Write as _;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::integrator::{Integrator, SplitLinearOde, StepperKind};
use crate::linalg::{Circulant, LinOp};
use crate::quadrature::NodeKind;
use crate::stencils::{advection_stencil_for_order, diffusion_stencil, dispersion_stencil, Stencil};
use crate::tableaux::{Family, MethodSpec, Mode};
use crate::{Error, Result};

/// Errors above this mark a run as unstable.
pub const BLOWUP: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SecondTerm {
    /// `+d u_xx` on the right-hand side.
    Diffusion { d: f64 },
    /// `−β u_xxx` on the right-hand side.
    Dispersion { beta: f64 },
}

/// `u_t + a u_x = d u_xx` or `u_t + a u_x + β u_xxx = 0` with `u₀ = sin x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeriodicProblem {
    pub cells: usize,
    pub a: f64,
    pub second: SecondTerm,
}

impl PeriodicProblem {
    pub fn new(cells: usize, a: f64, second: SecondTerm) -> Result<Self> {
        if cells < 4 {
            return Err(Error::InvalidArgument(format!("need at least 4 cells, got {cells}")));
        }
        Ok(Self { cells, a, second })
    }

    pub fn dx(&self) -> f64 {
        std::f64::consts::TAU / self.cells as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.cells).map(|j| j as f64 * self.dx()).collect()
    }

    pub fn initial(&self) -> DVector<f64> {
        DVector::from_iterator(self.cells, self.grid().into_iter().map(f64::sin))
    }

    /// `e^{−dt} sin(x − at)` for diffusion, `sin(x − (a − β)t)` for
    /// dispersion.
    pub fn exact(&self, t: f64) -> DVector<f64> {
        let (decay, speed) = match self.second {
            SecondTerm::Diffusion { d } => ((-d * t).exp(), self.a),
            SecondTerm::Dispersion { beta } => (1.0, self.a - beta),
        };
        DVector::from_iterator(self.cells, self.grid().into_iter().map(|x| decay * (x - speed * t).sin()))
    }
}

/// Circulant operators of the semi-discrete system `u' = S u + G u`.
#[derive(Debug, Clone)]
pub struct SemiDiscretization {
    /// `G = −a/Δx · A`.
    pub explicit: Circulant,
    /// `S = d/Δx² · D` or `−β/Δx³ · B`.
    pub implicit: Circulant,
}

pub fn semidiscretize(problem: &PeriodicProblem, adv: &Stencil, second: &Stencil) -> Result<SemiDiscretization> {
    let want = match problem.second {
        SecondTerm::Diffusion { .. } => 2,
        SecondTerm::Dispersion { .. } => 3,
    };
    if adv.d != 1 || second.d != want {
        return Err(Error::InvalidArgument(format!(
            "expected stencils for derivatives 1 and {want}, got {} and {}",
            adv.d, second.d
        )));
    }
    for st in [adv, second] {
        if st.width() >= problem.cells {
            return Err(Error::StencilTooWide { width: st.width(), cells: problem.cells });
        }
    }
    let dx = problem.dx();
    let scale = match problem.second {
        SecondTerm::Diffusion { d } => d / (dx * dx),
        SecondTerm::Dispersion { beta } => -beta / (dx * dx * dx),
    };
    let n = problem.cells;
    Ok(SemiDiscretization {
        explicit: Circulant::new(n, &adv.taps()).scaled(-problem.a / dx),
        implicit: Circulant::new(n, &second.taps()).scaled(scale),
    })
}

impl SemiDiscretization {
    pub fn ode(&self, u0: DVector<f64>) -> SplitLinearOde {
        SplitLinearOde::from_ops(LinOp::Circulant(self.implicit.clone()), LinOp::Circulant(self.explicit.clone()), u0)
            .expect("operators share the grid size")
    }
}

/// The parameter fixing the second term: `E = a²Δt/d` or `E_P = aΔx²/β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SecondParameter {
    E(f64),
    EP(f64),
}

/// One configured simulation with `Δt = C·Δx/a`.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub method: MethodSpec,
    pub cells: usize,
    pub a: f64,
    pub c: f64,
    pub second: SecondParameter,
    pub advection_order: usize,
    pub second_order: usize,
    pub t_end: f64,
}

impl RunConfig {
    /// Advection stencil of order `k` and diffusion stencil of order
    /// `2⌈k/2⌉`, with `k` the method order.
    pub fn matched(method: MethodSpec, cells: usize, c: f64, e: f64, t_end: f64) -> Self {
        let k = method.order;
        Self {
            method,
            cells,
            a: 1.0,
            c,
            second: SecondParameter::E(e),
            advection_order: k,
            second_order: 2 * k.div_ceil(2),
            t_end,
        }
    }

    pub fn dt(&self) -> f64 {
        self.c * std::f64::consts::TAU / self.cells as f64 / self.a
    }

    pub fn problem(&self) -> Result<PeriodicProblem> {
        if !(self.a > 0.0 && self.c > 0.0 && self.t_end > 0.0) {
            return Err(Error::InvalidArgument("a, C and tEnd must be positive".into()));
        }
        let dx = std::f64::consts::TAU / self.cells as f64;
        let second = match self.second {
            SecondParameter::E(e) if e > 0.0 => SecondTerm::Diffusion { d: self.a * self.a * self.dt() / e },
            SecondParameter::EP(ep) if ep > 0.0 => SecondTerm::Dispersion { beta: self.a * dx * dx / ep },
            _ => return Err(Error::InvalidArgument("E and E_P must be positive".into())),
        };
        PeriodicProblem::new(self.cells, self.a, second)
    }

    pub fn stencils(&self) -> Result<(Stencil, Stencil)> {
        let adv = advection_stencil_for_order(self.advection_order)?;
        let second = match self.second {
            SecondParameter::E(_) => diffusion_stencil(self.second_order)?,
            SecondParameter::EP(_) => dispersion_stencil(self.second_order)?,
        };
        Ok((adv, second))
    }

    fn setup(&self) -> Result<(PeriodicProblem, SplitLinearOde, Integrator)> {
        let problem = self.problem()?;
        let (adv, second) = self.stencils()?;
        let ode = semidiscretize(&problem, &adv, &second)?.ode(problem.initial());
        let integrator = Integrator::new(self.method, StepperKind::Tableau)?;
        Ok((problem, ode, integrator))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub cells: usize,
    pub dt: f64,
    pub steps: usize,
    /// Time reached; smaller than `tEnd` if the run was stopped.
    pub t: f64,
    /// Discrete L² error `sqrt(Δx Σ e_j²)` against the exact solution.
    pub error: f64,
    pub unstable: bool,
    #[serde(skip)]
    pub state: DVector<f64>,
}

/// Discrete L² norm on the periodic grid.
pub fn l2_norm(v: &DVector<f64>, dx: f64) -> f64 {
    (dx * v.norm_squared()).sqrt()
}

/// Runs to `tEnd` with uniform steps (the last one shortened), stopping
/// early once the solution leaves `BLOWUP`.
pub fn run_single(cfg: &RunConfig) -> Result<RunResult> {
    let (problem, ode, integrator) = cfg.setup()?;
    let dt = cfg.dt();
    let mut u = problem.initial();
    let (mut t, mut steps) = (0.0, 0usize);
    let mut unstable = false;
    while t < cfg.t_end {
        let mut next = (steps + 1) as f64 * dt;
        if next > cfg.t_end || cfg.t_end - next <= 1e-12 * dt {
            next = cfg.t_end;
        }
        u = integrator.step(&ode, &u, next - t)?;
        t = next;
        steps += 1;
        if !u.iter().all(|v| v.is_finite()) || u.amax() > BLOWUP {
            unstable = true;
            break;
        }
    }
    let error = l2_norm(&(&u - problem.exact(t)), problem.dx());
    Ok(RunResult {
        cells: cfg.cells,
        dt,
        steps,
        t,
        error,
        unstable: unstable || !(error <= BLOWUP),
        state: u,
    })
}

/// Error table of the convergence experiment, one column per order.
#[derive(Debug, Clone, Serialize)]
pub struct PdeConvergence {
    pub family: Family,
    pub kind: NodeKind,
    pub c: f64,
    pub e: f64,
    pub t_end: f64,
    pub cells: Vec<usize>,
    pub orders: Vec<usize>,
    /// `errors[i][j]` for order `orders[i]` on `cells[j]`.
    pub errors: Vec<Vec<f64>>,
    pub unstable: Vec<Vec<bool>>,
}

impl PdeConvergence {
    /// Observed orders between consecutive grids for the `i`-th method.
    pub fn observed(&self, i: usize) -> Vec<f64> {
        self.errors[i]
            .windows(2)
            .zip(self.cells.windows(2))
            .map(|(e, n)| (e[0] / e[1]).ln() / (n[1] as f64 / n[0] as f64).ln())
            .collect()
    }

    /// CSV with columns `N,order2,order3,...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N");
        for p in &self.orders {
            write!(out, ",order{p}").unwrap();
        }
        out.push('\n');
        for (j, n) in self.cells.iter().enumerate() {
            write!(out, "{n}").unwrap();
            for e in &self.errors {
                write!(out, ",{:.16e}", e[j]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// IMEX runs of `family` on `kind` nodes for every order and grid, with
/// matched stencils and `d = a²Δt/E`.
pub fn run_convergence(
    family: Family,
    kind: NodeKind,
    orders: &[usize],
    cells: &[usize],
    c: f64,
    e: f64,
    t_end: f64,
) -> Result<PdeConvergence> {
    let jobs: Vec<(usize, usize)> = orders.iter().flat_map(|&p| cells.iter().map(move |&n| (p, n))).collect();
    let results = jobs
        .par_iter()
        .map(|&(p, n)| {
            let method = MethodSpec::new(family, kind, p, Mode::Imex)?;
            run_single(&RunConfig::matched(method, n, c, e, t_end))
        })
        .collect::<Result<Vec<_>>>()?;
    let nc = cells.len();
    Ok(PdeConvergence {
        family,
        kind,
        c,
        e,
        t_end,
        cells: cells.to_vec(),
        orders: orders.to_vec(),
        errors: results.chunks(nc).map(|r| r.iter().map(|x| x.error).collect()).collect(),
        unstable: results.chunks(nc).map(|r| r.iter().map(|x| x.unstable).collect()).collect(),
    })
}

/// Largest per-step amplification over the grid's Fourier modes, measured
/// by stepping a seeded random vector `steps` times. Each mode evolves
/// independently under a circulant scheme, so the ratio of Fourier
/// coefficients gives `|g(θ_j)|^steps`.
pub fn empirical_max_gain(cfg: &RunConfig, steps: usize, seed: u64) -> Result<f64> {
    let (_, ode, integrator) = cfg.setup()?;
    let n = cfg.cells;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let mut u = u0.clone();
    for _ in 0..steps {
        u = integrator.step(&ode, &u, cfg.dt())?;
    }
    let fft = FftPlanner::new().plan_fft_forward(n);
    let spectrum = |v: &DVector<f64>| {
        let mut buf: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        fft.process(&mut buf);
        buf
    };
    let (before, after) = (spectrum(&u0), spectrum(&u));
    let floor = 1e-8 * before.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(before
        .iter()
        .zip(&after)
        .filter(|(b, _)| b.norm() > floor)
        .map(|(b, a)| (a.norm() / b.norm()).powf(1.0 / steps as f64))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::von_neumann::{Engine, Plane, ScanSpec};
    use approx::assert_relative_eq;

    fn diffusion(cells: usize, a: f64, d: f64) -> PeriodicProblem {
        PeriodicProblem::new(cells, a, SecondTerm::Diffusion { d }).unwrap()
    }

    #[test]
    fn upwind_operator_entries() {
        let p = diffusion(8, 1.0, 0.0);
        let sd = semidiscretize(&p, &advection_stencil_for_order(1).unwrap(), &diffusion_stencil(2).unwrap()).unwrap();
        let dense = sd.explicit.to_dense();
        let dx = p.dx();
        assert_relative_eq!(dense[(0, 7)], 1.0 / dx, epsilon = 1e-12);
        assert_relative_eq!(dense[(0, 0)], -1.0 / dx, epsilon = 1e-12);
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(dense[(i, j)], dense[((i + 1) % 8, (j + 1) % 8)]);
            }
        }
        let ones = DVector::from_element(8, 1.0);
        assert!(sd.implicit.apply(&ones).amax() < 1e-12);
    }

    #[test]
    fn operators_act_on_fourier_modes_by_their_symbols() {
        let p = PeriodicProblem::new(32, 1.7, SecondTerm::Dispersion { beta: 0.3 }).unwrap();
        let (adv, disp) = (advection_stencil_for_order(5).unwrap(), dispersion_stencil(5).unwrap());
        let sd = semidiscretize(&p, &adv, &disp).unwrap();
        let dx = p.dx();
        for k in [1usize, 5, 13] {
            let theta = std::f64::consts::TAU * k as f64 / 32.0;
            let mode: Vec<Complex64> = (0..32).map(|j| Complex64::from_polar(1.0, theta * j as f64)).collect();
            for (op, sym) in [
                (&sd.explicit, adv.symbol(theta) * (-1.7 / dx)),
                (&sd.implicit, disp.symbol(theta) * (-0.3 / dx.powi(3))),
            ] {
                let re = op.apply(&DVector::from_iterator(32, mode.iter().map(|z| z.re)));
                let im = op.apply(&DVector::from_iterator(32, mode.iter().map(|z| z.im)));
                for j in 0..32 {
                    let got = Complex64::new(re[j], im[j]);
                    assert!((got - sym * mode[j]).norm() < 1e-10 * sym.norm().max(1.0));
                }
                assert!((op.eigenvalues()[k] - sym).norm() < 1e-10 * sym.norm().max(1.0));
            }
        }
    }

    #[test]
    fn wide_stencils_are_rejected() {
        let p = diffusion(4, 1.0, 0.1);
        let r = semidiscretize(&p, &advection_stencil_for_order(5).unwrap(), &diffusion_stencil(2).unwrap());
        assert!(matches!(r, Err(Error::StencilTooWide { .. })));
    }

    #[test]
    fn exact_solutions_solve_the_pdes() {
        let p = PeriodicProblem::new(16, 1.3, SecondTerm::Dispersion { beta: 0.2 }).unwrap();
        // u = sin(x − ct): u_t + a u_x + β u_xxx = (−c + a − β) cos(·)
        let (t, h) = (0.7, 1e-6);
        let ut = (p.exact(t + h) - p.exact(t - h)) / (2.0 * h);
        let x = p.grid();
        for j in 0..16 {
            let arg = x[j] - (1.3 - 0.2) * t;
            assert_relative_eq!(ut[j] + 1.3 * arg.cos() - 0.2 * arg.cos(), 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn frozen_problem_keeps_the_initial_state() {
        for family in [Family::Dec, Family::Sdec, Family::Ader] {
            let method = MethodSpec::new(family, NodeKind::GaussLobatto, 3, Mode::Imex).unwrap();
            let p = diffusion(32, 0.0, 0.0);
            let sd = semidiscretize(&p, &advection_stencil_for_order(3).unwrap(), &diffusion_stencil(4).unwrap()).unwrap();
            let ode = sd.ode(p.initial());
            let it = Integrator::new(method, StepperKind::Tableau).unwrap();
            let mut u = p.initial();
            for _ in 0..20 {
                u = it.step(&ode, &u, 0.05).unwrap();
            }
            assert!(l2_norm(&(u - p.exact(1.0)), p.dx()) < 1e-14);
        }
    }

    #[test]
    fn explicit_advection_conserves_mass() {
        let method = MethodSpec::new(Family::Dec, NodeKind::GaussLobatto, 2, Mode::Imex).unwrap();
        let p = diffusion(64, 1.0, 0.0);
        let sd = semidiscretize(&p, &advection_stencil_for_order(2).unwrap(), &diffusion_stencil(2).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u0 = DVector::from_fn(64, |_, _| rng.gen_range(0.0..1.0));
        let ode = sd.ode(u0.clone());
        let it = Integrator::new(method, StepperKind::Tableau).unwrap();
        let mut u = u0.clone();
        for _ in 0..100 {
            u = it.step(&ode, &u, 0.4 * p.dx()).unwrap();
        }
        assert_relative_eq!(u.sum(), u0.sum(), epsilon = 1e-12);
    }

    #[test]
    fn third_order_dec_converges() {
        let t = run_convergence(Family::Dec, NodeKind::GaussLobatto, &[3], &[32, 64, 128, 256], 0.4, 0.5, 1.0).unwrap();
        let obs = t.observed(0);
        assert!((obs.last().unwrap() - 3.0).abs() < 0.25, "{obs:?}");
        assert!(t.to_csv().starts_with("N,order3\n32,"));
    }

    #[test]
    fn blowup_is_reported_not_raised() {
        let method = MethodSpec::new(Family::Dec, NodeKind::GaussLobatto, 2, Mode::Imex).unwrap();
        let r = run_single(&RunConfig::matched(method, 64, 5.0, 50.0, 20.0)).unwrap();
        assert!(r.unstable);
        assert!(r.t < 20.0);
    }

    #[test]
    fn measured_growth_matches_the_amplification_factor() {
        let method = MethodSpec::new(Family::Ader, NodeKind::GaussLobatto, 3, Mode::Imex).unwrap();
        let cfg = RunConfig::matched(method, 32, 1.2, 3.0, 1.0);
        let engine = Engine::new(ScanSpec::new(method, 3, 4, Plane::CE).with_grid(2, 15)).unwrap();
        let measured = empirical_max_gain(&cfg, 50, 1).unwrap();
        assert_relative_eq!(measured, engine.max_gain(1.2, 3.0), max_relative = 1e-8);
    }
}
