//! Time stepping with the generated methods.
//!
//! There are two independent routes. [`rk_step`] advances a linear split
//! system through a Butcher tableau. [`dec_iterate`] and [`ader_iterate`]
//! run the correction iterations directly, linearizing the implicit part
//! around `u_n`. For linear systems the two must agree to round-off, and
//! each serves as the other's oracle.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::LinOp;
use crate::quadrature::{cached_ader_operators, cached_dec_coefficients, AderOperators, DeCCoefficients};
use crate::tableaux::{build_reduced, build_tableau, Family, Mode, MethodSpec, Tableau};

/// `u' = S(u) + G(u)`, where `S` is the stiff part treated implicitly in
/// IMEX mode and `G` the part that is always explicit there.
pub trait SplitOde: Sync {
    fn dim(&self) -> usize;
    fn initial(&self) -> &DVector<f64>;
    fn stiff(&self, u: &DVector<f64>) -> DVector<f64>;
    fn nonstiff(&self, u: &DVector<f64>) -> DVector<f64>;
    fn stiff_jacobian(&self, u: &DVector<f64>) -> LinOp;
    fn nonstiff_jacobian(&self, u: &DVector<f64>) -> LinOp;

    /// `(S, G)` when both parts are linear.
    fn linear_parts(&self) -> Option<(&LinOp, &LinOp)> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct SplitLinearOde {
    pub s: LinOp,
    pub g: LinOp,
    pub u0: DVector<f64>,
}

impl SplitLinearOde {
    pub fn new(s: DMatrix<f64>, g: DMatrix<f64>, u0: DVector<f64>) -> Result<Self> {
        if !s.is_square() || s.shape() != g.shape() || s.nrows() != u0.len() {
            return Err(Error::InvalidArgument(format!(
                "S is {:?}, G is {:?}, u0 has {} entries",
                s.shape(),
                g.shape(),
                u0.len()
            )));
        }
        Ok(Self {
            s: LinOp::Dense(s),
            g: LinOp::Dense(g),
            u0,
        })
    }

    pub fn from_ops(s: LinOp, g: LinOp, u0: DVector<f64>) -> Result<Self> {
        if s.dim() != g.dim() || s.dim() != u0.len() {
            return Err(Error::InvalidArgument("operator dimensions differ".into()));
        }
        Ok(Self { s, g, u0 })
    }

    /// Scalar `u' = (λ_S + λ_G) u`.
    pub fn scalar(lambda_s: f64, lambda_g: f64, u0: f64) -> Self {
        let m = |v| DMatrix::from_element(1, 1, v);
        Self::new(m(lambda_s), m(lambda_g), DVector::from_element(1, u0)).unwrap()
    }
}

impl SplitOde for SplitLinearOde {
    fn dim(&self) -> usize {
        self.u0.len()
    }
    fn initial(&self) -> &DVector<f64> {
        &self.u0
    }
    fn stiff(&self, u: &DVector<f64>) -> DVector<f64> {
        self.s.apply(u)
    }
    fn nonstiff(&self, u: &DVector<f64>) -> DVector<f64> {
        self.g.apply(u)
    }
    fn stiff_jacobian(&self, _: &DVector<f64>) -> LinOp {
        self.s.clone()
    }
    fn nonstiff_jacobian(&self, _: &DVector<f64>) -> LinOp {
        self.g.clone()
    }
    fn linear_parts(&self) -> Option<(&LinOp, &LinOp)> {
        Some((&self.s, &self.g))
    }
}

type VecFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Nonlinear split system whose stiff part comes with its Jacobian.
pub struct LinearizedOde {
    stiff: VecFn,
    jacobian: MatFn,
    nonstiff: VecFn,
    u0: DVector<f64>,
}

fn fd_jacobian(f: &dyn Fn(&DVector<f64>) -> DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
    let n = u.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = 1e-6 * u[j].abs().max(1e-3);
        let mut up = u.clone();
        let mut dn = u.clone();
        up[j] += h;
        dn[j] -= h;
        let col = (f(&up) - f(&dn)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

impl LinearizedOde {
    /// Checks the Jacobian against central differences at `u0`.
    pub fn new(
        stiff: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        nonstiff: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        u0: DVector<f64>,
    ) -> Result<Self> {
        let fd = fd_jacobian(&stiff, &u0);
        let jac = jacobian(&u0);
        if jac.shape() != fd.shape() {
            return Err(Error::InvalidArgument("Jacobian has the wrong shape".into()));
        }
        let scale = jac.amax().max(fd.amax()).max(f64::MIN_POSITIVE);
        let err = (&jac - &fd).amax() / scale;
        if err > 1e-5 {
            return Err(Error::InvalidArgument(format!(
                "Jacobian disagrees with finite differences at u0 (relative {err:.2e})"
            )));
        }
        Ok(Self {
            stiff: Box::new(stiff),
            jacobian: Box::new(jacobian),
            nonstiff: Box::new(nonstiff),
            u0,
        })
    }
}

impl SplitOde for LinearizedOde {
    fn dim(&self) -> usize {
        self.u0.len()
    }
    fn initial(&self) -> &DVector<f64> {
        &self.u0
    }
    fn stiff(&self, u: &DVector<f64>) -> DVector<f64> {
        (self.stiff)(u)
    }
    fn nonstiff(&self, u: &DVector<f64>) -> DVector<f64> {
        (self.nonstiff)(u)
    }
    fn stiff_jacobian(&self, u: &DVector<f64>) -> LinOp {
        LinOp::Dense((self.jacobian)(u))
    }
    fn nonstiff_jacobian(&self, u: &DVector<f64>) -> LinOp {
        LinOp::Dense(fd_jacobian(&self.nonstiff, u))
    }
}

/// Implicit/explicit evaluation of the right-hand side for a given mode.
struct Treatment<'a> {
    ode: &'a dyn SplitOde,
    mode: Mode,
}

impl Treatment<'_> {
    /// `(F_I(u), F_E(u))`.
    fn eval(&self, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let s = self.ode.stiff(u);
        let g = self.ode.nonstiff(u);
        let zero = DVector::zeros(u.len());
        match self.mode {
            Mode::Explicit => (zero, s + g),
            Mode::Implicit => (s + g, zero),
            Mode::Imex => (s, g),
        }
    }

    /// Jacobian of the implicit part at `u`.
    fn jacobian(&self, u: &DVector<f64>) -> LinOp {
        match self.mode {
            Mode::Explicit => LinOp::Zero(u.len()),
            Mode::Implicit => self
                .ode
                .stiff_jacobian(u)
                .plus(&self.ode.nonstiff_jacobian(u)),
            Mode::Imex => self.ode.stiff_jacobian(u),
        }
    }
}

/// One step of a Runge–Kutta or IMEX Runge–Kutta method on a linear system.
///
/// A single tableau integrates the whole right-hand side `S + G`; an IMEX
/// tableau treats `S` with its implicit part and `G` with its explicit part.
/// Coupled stages of block-implicit tableaux are solved together.
pub fn rk_step(
    tableau: &Tableau,
    ode: &dyn SplitOde,
    u: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    let (s, g) = ode.linear_parts().ok_or_else(|| {
        Error::UnsupportedStructure("tableau stepping needs a linear split system".into())
    })?;
    let sum;
    let (main, expl, li, le) = match tableau {
        Tableau::Single(t) => {
            sum = s.plus(g);
            (t, None, &sum, None)
        }
        Tableau::Imex(t) => (&t.implicit, Some(&t.explicit), s, Some(g)),
    };
    let z = main.stages();
    let mut ki: Vec<DVector<f64>> = Vec::with_capacity(z);
    let mut ke: Vec<DVector<f64>> = Vec::with_capacity(z);

    for (start, end) in stage_blocks(&main.a) {
        if let Some(e) = expl {
            if (start..end).any(|i| (start..end).any(|j| e.a[(i, j)] != 0.0)) {
                return Err(Error::UnsupportedStructure(
                    "explicit part couples stages of one implicit block".into(),
                ));
            }
        }
        let rhs: Vec<DVector<f64>> = (start..end)
            .map(|i| {
                let mut r = u.clone();
                for j in 0..start {
                    let a = main.a[(i, j)];
                    if a != 0.0 {
                        r.axpy(dt * a, &ki[j], 1.0);
                    }
                    if let Some(e) = expl {
                        let a = e.a[(i, j)];
                        if a != 0.0 {
                            r.axpy(dt * a, &ke[j], 1.0);
                        }
                    }
                }
                r
            })
            .collect();
        let block = main.a.view((start, start), (end - start, end - start)) * dt;
        let y = li
            .solve_kron(&block, &rhs)
            .ok_or(Error::SingularStage { stage: start, dt })?;
        for yi in y {
            ki.push(li.apply(&yi));
            ke.push(le.map_or_else(|| DVector::zeros(yi.len()), |l| l.apply(&yi)));
        }
    }

    let mut out = u.clone();
    for j in 0..z {
        if main.b[j] != 0.0 {
            out.axpy(dt * main.b[j], &ki[j], 1.0);
        }
        if let Some(e) = expl {
            if e.b[j] != 0.0 {
                out.axpy(dt * e.b[j], &ke[j], 1.0);
            }
        }
    }
    Ok(out)
}

/// Consecutive stage ranges that must be solved together: a block closes
/// once no row in it references a later stage.
pub(crate) fn stage_blocks(a: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let z = a.nrows();
    let mut blocks = Vec::new();
    let mut start = 0;
    while start < z {
        let mut end = start + 1;
        let mut i = start;
        while i < end {
            for j in (end..z).rev() {
                if a[(i, j)] != 0.0 {
                    end = j + 1;
                    break;
                }
            }
            i += 1;
        }
        blocks.push((start, end));
        start = end;
    }
    blocks
}

/// One DeC or sDeC step by direct iteration.
pub fn dec_iterate(
    coeffs: &DeCCoefficients,
    spec: &MethodSpec,
    ode: &dyn SplitOde,
    u: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    if !matches!(spec.family, Family::Dec | Family::Sdec) {
        return Err(Error::Mismatch(format!("{} is not a DeC method", spec.family)));
    }
    if coeffs.nodes.kind != spec.kind || coeffs.degree() != spec.m {
        return Err(Error::Mismatch("coefficients do not belong to the method".into()));
    }
    let tr = Treatment { ode, mode: spec.mode };
    let jac = tr.jacobian(u);
    let n = spec.m + 1;
    let singular = |iteration, node| Error::SingularIteration { iteration, node, dt };

    let mut prev: Vec<DVector<f64>> = vec![u.clone(); n];
    let mut prev_f: Vec<(DVector<f64>, DVector<f64>)> = vec![tr.eval(u); n];
    for k in 1..=spec.k {
        let total: Vec<DVector<f64>> = prev_f.iter().map(|(i, e)| i + e).collect();
        let mut cur: Vec<DVector<f64>> = Vec::with_capacity(n);
        let mut cur_f = Vec::with_capacity(n);
        match spec.family {
            Family::Dec => {
                // only the last node is needed after the final correction
                let nodes = if k == spec.k { spec.m..n } else { 0..n };
                cur.extend((0..nodes.start).map(|_| u.clone()));
                for m in nodes {
                    let beta = coeffs.beta[m];
                    let mut rhs = u - jac.apply(&prev[m]) * (beta * dt);
                    for r in 0..n {
                        rhs.axpy(dt * coeffs.theta[(m, r)], &total[r], 1.0);
                    }
                    let a = jac
                        .solve_shifted(beta * dt, &rhs)
                        .ok_or_else(|| singular(k, m))?;
                    cur.push(a);
                }
                if k < spec.k {
                    cur_f = cur.iter().map(|a| tr.eval(a)).collect();
                }
            }
            Family::Sdec => {
                cur.push(u.clone());
                cur_f.push(tr.eval(u));
                for m in 1..n {
                    let gamma = coeffs.gamma[m];
                    let mut rhs = &cur[m - 1] - jac.apply(&prev[m]) * (gamma * dt);
                    rhs.axpy(dt * gamma, &(&cur_f[m - 1].1 - &prev_f[m - 1].1), 1.0);
                    for r in 0..n {
                        rhs.axpy(dt * coeffs.delta[(m, r)], &total[r], 1.0);
                    }
                    let a = jac
                        .solve_shifted(gamma * dt, &rhs)
                        .ok_or_else(|| singular(k, m))?;
                    cur_f.push(tr.eval(&a));
                    cur.push(a);
                }
            }
            Family::Ader => unreachable!(),
        }
        prev = cur;
        prev_f = cur_f;
    }
    Ok(prev.pop().unwrap())
}

/// One ADER step by direct iteration of the space-time predictor.
///
/// The purely implicit variant performs a single solve: for a linear
/// implicit operator its result does not depend on the previous iterate.
pub fn ader_iterate(
    ops: &AderOperators,
    spec: &MethodSpec,
    ode: &dyn SplitOde,
    u: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    if spec.family != Family::Ader {
        return Err(Error::Mismatch(format!("{} is not an ADER method", spec.family)));
    }
    if ops.nodes.kind != spec.kind || ops.degree() != spec.m {
        return Err(Error::Mismatch("operators do not belong to the method".into()));
    }
    let tr = Treatment { ode, mode: spec.mode };
    let jac = tr.jacobian(u);
    let n = spec.m + 1;
    let qdt = &ops.q * dt;
    let iterations = if spec.mode == Mode::Implicit { 1 } else { spec.k };

    let mut alpha: Vec<DVector<f64>> = vec![u.clone(); n];
    let mut f: Vec<DVector<f64>> = {
        let (i, e) = tr.eval(u);
        vec![i + e; n]
    };
    for k in 1..=iterations {
        let ja: Vec<DVector<f64>> = alpha.iter().map(|a| jac.apply(a)).collect();
        let rhs: Vec<DVector<f64>> = (0..n)
            .map(|m| {
                let mut r = u.clone();
                for l in 0..n {
                    let q = qdt[(m, l)];
                    if q != 0.0 {
                        r.axpy(q, &(&f[l] - &ja[l]), 1.0);
                    }
                }
                r
            })
            .collect();
        alpha = jac
            .solve_kron(&qdt, &rhs)
            .ok_or(Error::SingularIteration { iteration: k, node: 0, dt })?;
        f = alpha
            .iter()
            .map(|a| {
                let (i, e) = tr.eval(a);
                i + e
            })
            .collect();
    }
    let mut out = u.clone();
    for i in 0..n {
        out.axpy(dt * ops.b[i], &f[i], 1.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepperKind {
    /// Reduced Butcher tableau; linear systems only.
    #[default]
    Tableau,
    /// Direct correction iterations.
    Direct,
}

/// A method ready for stepping, with its coefficients resolved once.
#[derive(Debug, Clone)]
pub struct Integrator {
    pub spec: MethodSpec,
    pub kind: StepperKind,
    tableau: Option<Tableau>,
    dec: Option<Arc<DeCCoefficients>>,
    ader: Option<Arc<AderOperators>>,
    lipschitz: Option<f64>,
}

impl Integrator {
    pub fn new(spec: MethodSpec, kind: StepperKind) -> Result<Self> {
        let mut it = Self {
            spec,
            kind,
            tableau: None,
            dec: None,
            ader: None,
            lipschitz: None,
        };
        match kind {
            StepperKind::Tableau => it.tableau = Some(build_reduced(&spec)?),
            StepperKind::Direct => match spec.family {
                Family::Ader => {
                    it.ader = Some(cached_ader_operators(spec.kind, spec.m, spec.quadrature)?)
                }
                _ => it.dec = Some(cached_dec_coefficients(spec.kind, spec.m)?),
            },
        }
        Ok(it)
    }

    /// Stepper using the unreduced tableau, exactly as assembled.
    pub fn unreduced(spec: MethodSpec) -> Result<Self> {
        let mut it = Self::new(spec, StepperKind::Direct)?;
        it.kind = StepperKind::Tableau;
        it.tableau = Some(build_tableau(&spec)?);
        Ok(it)
    }

    /// Enables the step-size guard warnings for a Lipschitz constant `l` of
    /// the implicit part.
    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn tableau(&self) -> Option<&Tableau> {
        self.tableau.as_ref()
    }

    pub fn step(&self, ode: &dyn SplitOde, u: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        if let Some(t) = &self.tableau {
            return rk_step(t, ode, u, dt);
        }
        match (&self.dec, &self.ader) {
            (Some(c), _) => dec_iterate(c, &self.spec, ode, u, dt),
            (_, Some(o)) => ader_iterate(o, &self.spec, ode, u, dt),
            _ => unreachable!(),
        }
    }

    /// Upper bound on `Δt` from the coercivity argument for the linearized
    /// implicit iterations, if one applies.
    pub fn step_bound(&self, lipschitz: f64) -> Option<f64> {
        if self.spec.mode == Mode::Explicit || lipschitz <= 0.0 {
            return None;
        }
        let constant = match self.spec.family {
            Family::Ader => {
                let ops = cached_ader_operators(self.spec.kind, self.spec.m, self.spec.quadrature).ok()?;
                ops.q.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
            }
            _ => {
                let c = cached_dec_coefficients(self.spec.kind, self.spec.m).ok()?;
                c.beta.amax()
            }
        };
        Some(1.0 / (2.0 * constant * lipschitz))
    }
}

/// Times and states of a computed solution.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub method: String,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> DVector<f64> {
        DVector::from_column_slice(self.states.last().unwrap())
    }

    pub fn to_csv(&self) -> String {
        let dim = self.states.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for i in 0..dim {
            write!(out, ",u{i}").unwrap();
        }
        out.push('\n');
        for (t, u) in self.times.iter().zip(&self.states) {
            write!(out, "{t:.16e}").unwrap();
            for v in u {
                write!(out, ",{v:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Uniform steps of size `h`; the last one is shortened to land on `t_end`.
pub fn solve_ivp(
    integrator: &Integrator,
    ode: &dyn SplitOde,
    t_end: f64,
    h: f64,
) -> Result<Trajectory> {
    if !(h > 0.0 && t_end > 0.0) {
        return Err(Error::InvalidArgument(format!("need h > 0 and tEnd > 0, got {h}, {t_end}")));
    }
    if let (Some(l), Some(bound)) = (
        integrator.lipschitz,
        integrator.lipschitz.and_then(|l| integrator.step_bound(l)),
    ) {
        if h >= bound {
            log::warn!(
                "{}: h = {h} exceeds the coercivity bound {bound:.3e} for L = {l}",
                integrator.spec
            );
        }
    }
    let mut u = ode.initial().clone();
    let mut times = vec![0.0];
    let mut states = vec![u.as_slice().to_vec()];
    let mut t = 0.0;
    let mut k = 0u64;
    while t < t_end {
        k += 1;
        let mut next = k as f64 * h;
        if next > t_end || t_end - next <= 1e-12 * h {
            next = t_end;
        }
        u = integrator.step(ode, &u, next - t)?;
        t = next;
        times.push(t);
        states.push(u.as_slice().to_vec());
    }
    Ok(Trajectory {
        method: integrator.spec.id(),
        times,
        states,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub error: f64,
    /// Observed order from the previous (coarser) row.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub method: String,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn from_errors(method: String, hs: &[f64], errors: &[f64]) -> Self {
        let rows = hs
            .iter()
            .zip(errors)
            .enumerate()
            .map(|(i, (&h, &error))| ConvergenceRow {
                h,
                error,
                order: (i > 0).then(|| (errors[i - 1] / error).ln() / (hs[i - 1] / h).ln()),
            })
            .collect();
        Self { method, rows }
    }

    /// Order observed between the two finest step sizes.
    pub fn final_order(&self) -> f64 {
        self.rows.last().and_then(|r| r.order).unwrap_or(f64::NAN)
    }

    /// Least-squares slope of `log(error)` against `log(h)`.
    pub fn fitted_order(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self.rows.iter().map(|r| (r.h.ln(), r.error.ln())).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,error,order\n");
        for r in &self.rows {
            let order = r.order.map_or(String::new(), |o| format!("{o:.16e}"));
            writeln!(out, "{:.16e},{:.16e},{order}", r.h, r.error).unwrap();
        }
        out
    }
}

pub(crate) fn check_geometric(hs: &[f64]) -> Result<()> {
    if hs.len() < 3 {
        return Err(Error::InvalidArgument("need at least three step sizes".into()));
    }
    let ratio = hs[0] / hs[1];
    let geometric = hs.windows(2).all(|w| ((w[0] / w[1]) / ratio - 1.0).abs() < 1e-6);
    if !geometric || ratio <= 1.0 {
        return Err(Error::InvalidArgument(
            "step sizes must form a decreasing geometric sequence".into(),
        ));
    }
    Ok(())
}

/// Euclidean error at `t_end` for each step size, with observed orders.
pub fn convergence_study(
    integrator: &Integrator,
    ode: &dyn SplitOde,
    exact: &dyn Fn(f64) -> DVector<f64>,
    t_end: f64,
    hs: &[f64],
) -> Result<ConvergenceTable> {
    check_geometric(hs)?;
    let reference = exact(t_end);
    let errors = hs
        .iter()
        .map(|&h| Ok((solve_ivp(integrator, ode, t_end, h)?.last() - &reference).norm()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ConvergenceTable::from_errors(integrator.spec.id(), hs, &errors))
}

/// The stiff linear oscillator `u₁' = −2u₁ − 2501u₂`, `u₂' = u₁` with
/// `u(0) = (1, 0)`; the `−2u₁` damping is the explicit part.
pub fn damped_oscillator() -> SplitLinearOde {
    SplitLinearOde::new(
        DMatrix::from_row_slice(2, 2, &[0.0, -2501.0, 1.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 0.0]),
        DVector::from_vec(vec![1.0, 0.0]),
    )
    .unwrap()
}

/// Exact solution of [`damped_oscillator`].
pub fn damped_oscillator_exact(t: f64) -> DVector<f64> {
    let (s, c) = (50.0 * t).sin_cos();
    let e = (-t).exp();
    DVector::from_vec(vec![e * (c - s / 50.0), e * s / 50.0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::NodeKind;
    use crate::tableaux::ButcherTableau;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_step(t: &Tableau, lambda: f64, dt: f64) -> f64 {
        let ode = SplitLinearOde::scalar(lambda, 0.0, 1.0);
        rk_step(t, &ode, &ode.u0, dt).unwrap()[0]
    }

    #[test]
    fn explicit_euler_and_heun() {
        let euler = Tableau::Single(ButcherTableau::from_rows(&[&[0.0]], &[1.0]));
        assert_relative_eq!(scalar_step(&euler, -1.0, 0.1), 0.9, epsilon = 1e-15);
        let spec = MethodSpec::new(Family::Dec, NodeKind::Equispaced, 2, Mode::Explicit).unwrap();
        let heun = build_reduced(&spec).unwrap();
        assert_relative_eq!(scalar_step(&heun, -1.0, 0.1), 0.905, epsilon = 1e-15);
    }

    #[test]
    fn zero_field_leaves_state_unchanged() {
        let ode = SplitLinearOde::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            DVector::from_vec(vec![0.3, -1.0]),
        )
        .unwrap();
        for family in [Family::Dec, Family::Sdec, Family::Ader] {
            for mode in [Mode::Explicit, Mode::Implicit, Mode::Imex] {
                let spec = MethodSpec::new(family, NodeKind::GaussLobatto, 4, mode).unwrap();
                for kind in [StepperKind::Tableau, StepperKind::Direct] {
                    let it = Integrator::new(spec, kind).unwrap();
                    let traj = solve_ivp(&it, &ode, 1.0, 0.3).unwrap();
                    assert!(traj.states.iter().all(|s| s == &vec![0.3, -1.0]));
                }
            }
        }
    }

    #[test]
    fn stage_blocks_of_dirk_and_ader() {
        let spec = MethodSpec::new(Family::Ader, NodeKind::GaussLobatto, 4, Mode::Implicit).unwrap();
        let t = build_tableau(&spec).unwrap();
        let blocks = stage_blocks(&t.as_single().unwrap().a);
        assert_eq!(blocks[0], (0, 1));
        assert!(blocks[1..].iter().all(|(s, e)| e - s == spec.m + 1));
        let spec = MethodSpec::new(Family::Dec, NodeKind::GaussLobatto, 4, Mode::Implicit).unwrap();
        let t = build_tableau(&spec).unwrap();
        assert!(stage_blocks(&t.as_single().unwrap().a).iter().all(|(s, e)| e - s == 1));
    }

    fn random_system(rng: &mut ChaCha8Rng) -> SplitLinearOde {
        let mut m = || DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let (s, g) = (m(), m());
        let u0 = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        SplitLinearOde::new(s, g, u0).unwrap()
    }

    #[test]
    fn direct_iteration_matches_unreduced_tableau() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ode = random_system(&mut rng);
        for family in [Family::Dec, Family::Sdec, Family::Ader] {
            for kind in NodeKind::ALL {
                for mode in [Mode::Explicit, Mode::Implicit, Mode::Imex] {
                    for p in 2..=6 {
                        let Ok(spec) = MethodSpec::new(family, kind, p, mode) else { continue };
                        let direct = Integrator::new(spec, StepperKind::Direct).unwrap();
                        let tab = Integrator::unreduced(spec).unwrap();
                        let a = direct.step(&ode, &ode.u0, 0.01).unwrap();
                        let b = tab.step(&ode, &ode.u0, 0.01).unwrap();
                        let rel = (&a - &b).norm() / b.norm();
                        assert!(rel <= 1e-12, "{spec}: {rel:e}");
                    }
                }
            }
        }
    }

    #[test]
    fn implicit_dec_single_iteration_is_implicit_euler() {
        for kind in [NodeKind::Equispaced, NodeKind::GaussLobatto] {
            let spec = MethodSpec::new(Family::Dec, kind, 4, Mode::Implicit)
                .unwrap()
                .with_iterations(1);
            let c = cached_dec_coefficients(kind, spec.m).unwrap();
            let ode = SplitLinearOde::scalar(-3.0, 0.5, 1.0);
            let got = dec_iterate(&c, &spec, &ode, &ode.u0, 0.2).unwrap()[0];
            let want = 1.0 / (1.0 + 2.5 * 0.2 * c.beta[spec.m]);
            assert_relative_eq!(got, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn implicit_ader_is_independent_of_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ode = random_system(&mut rng);
        let spec = MethodSpec::new(Family::Ader, NodeKind::GaussLobatto, 5, Mode::Implicit).unwrap();
        let ops = cached_ader_operators(spec.kind, spec.m, spec.quadrature).unwrap();
        let a = ader_iterate(&ops, &spec.with_iterations(1), &ode, &ode.u0, 0.3).unwrap();
        let b = ader_iterate(&ops, &spec.with_iterations(5), &ode, &ode.u0, 0.3).unwrap();
        assert!((a - b).amax() < 1e-15);
    }

    #[test]
    fn implicit_dec_depends_on_iterations() {
        let ode = SplitLinearOde::scalar(-3.0, 0.0, 1.0);
        let spec = MethodSpec::new(Family::Dec, NodeKind::GaussLobatto, 5, Mode::Implicit).unwrap();
        let c = cached_dec_coefficients(spec.kind, spec.m).unwrap();
        let a = dec_iterate(&c, &spec.with_iterations(2), &ode, &ode.u0, 0.3).unwrap();
        let b = dec_iterate(&c, &spec.with_iterations(5), &ode, &ode.u0, 0.3).unwrap();
        assert!((a - b).amax() > 1e-8);
    }

    #[test]
    fn implicit_stage_equations_hold_for_negative_lambda() {
        // Stage values of an implicit DeC tableau on u' = λu satisfy
        // Y = u + Δt A λ Y.
        let spec = MethodSpec::new(Family::Dec, NodeKind::GaussLobatto, 6, Mode::Implicit).unwrap();
        let t = build_reduced(&spec).unwrap();
        let a = &t.as_single().unwrap().a;
        let (lambda, dt) = (-40.0, 0.1);
        let z = a.nrows();
        let mut y = vec![0.0; z];
        for i in 0..z {
            let explicit: f64 = (0..i).map(|j| a[(i, j)] * y[j]).sum();
            y[i] = (1.0 + dt * lambda * explicit) / (1.0 - dt * lambda * a[(i, i)]);
        }
        for i in 0..z {
            let r: f64 = (0..z).map(|j| a[(i, j)] * y[j]).sum();
            let residual = y[i] - 1.0 - dt * lambda * r;
            assert!(residual.abs() <= 1e-13, "stage {i}: {residual:e}");
        }
    }

    #[test]
    fn linearized_equals_linear_for_linear_stiff_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lin = random_system(&mut rng);
        let (s, g) = (lin.s.to_dense(), lin.g.to_dense());
        let (s2, g2) = (s.clone(), g.clone());
        let nl = LinearizedOde::new(
            move |u| &s * u,
            move |_| s2.clone(),
            move |u| &g2 * u,
            lin.u0.clone(),
        )
        .unwrap();
        for family in [Family::Dec, Family::Sdec, Family::Ader] {
            for mode in [Mode::Explicit, Mode::Implicit, Mode::Imex] {
                let spec = MethodSpec::new(family, NodeKind::GaussLobatto, 4, mode).unwrap();
                let it = Integrator::new(spec, StepperKind::Direct).unwrap();
                let a = it.step(&lin, &lin.u0, 0.05).unwrap();
                let b = it.step(&nl, &lin.u0, 0.05).unwrap();
                // the G Jacobian is a finite difference, exact for linear maps
                // up to rounding of the difference quotient
                assert!((&a - &b).norm() / a.norm() < 1e-8, "{spec}");
            }
        }
    }

    #[test]
    fn bad_jacobian_is_rejected() {
        let r = LinearizedOde::new(
            |u| u.map(|v| v * v),
            |_| DMatrix::from_element(1, 1, 1.0),
            |u| u * 0.0,
            DVector::from_element(1, 2.0),
        );
        assert!(r.is_err());
    }

    #[test]
    fn dec4_on_decay() {
        let spec = MethodSpec::new(Family::Dec, NodeKind::Equispaced, 4, Mode::Explicit).unwrap();
        let ode = SplitLinearOde::scalar(-1.0, 0.0, 1.0);
        let it = Integrator::new(spec, StepperKind::Tableau).unwrap();
        let traj = solve_ivp(&it, &ode, 1.0, 0.1).unwrap();
        assert_eq!(traj.times.len(), 11);
        assert_eq!(*traj.times.last().unwrap(), 1.0);
        assert!((traj.last()[0] - (-1f64).exp()).abs() <= 1e-6);
    }

    #[test]
    fn final_step_is_truncated() {
        let spec = MethodSpec::new(Family::Dec, NodeKind::Equispaced, 2, Mode::Explicit).unwrap();
        let ode = SplitLinearOde::scalar(-1.0, 0.0, 1.0);
        let it = Integrator::new(spec, StepperKind::Tableau).unwrap();
        let traj = solve_ivp(&it, &ode, 1.0, 0.3).unwrap();
        assert_eq!(traj.times.len(), 5);
        assert_relative_eq!(traj.times[3], 0.9, epsilon = 1e-15);
        assert_eq!(traj.times[4], 1.0);
        let csv = traj.to_csv();
        assert!(csv.starts_with("t,u0\n"));
    }

    #[test]
    fn oscillator_exact_solution_solves_the_system() {
        let ode = damped_oscillator();
        let h = 1e-6;
        for &t in &[0.0, 0.3, 1.7] {
            let d = (damped_oscillator_exact(t + h) - damped_oscillator_exact(t - h)) / (2.0 * h);
            let u = damped_oscillator_exact(t);
            let f = ode.stiff(&u) + ode.nonstiff(&u);
            assert!((d - f).norm() < 1e-4);
        }
        assert_eq!(damped_oscillator_exact(0.0), ode.u0);
    }

    #[test]
    fn geometric_step_sizes_are_required() {
        assert!(check_geometric(&[0.1, 0.05]).is_err());
        assert!(check_geometric(&[0.1, 0.05, 0.02]).is_err());
        assert!(check_geometric(&[0.1, 0.05, 0.025]).is_ok());
    }
}
