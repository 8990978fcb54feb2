//! Butcher tableaux for DeC, sDeC and ADER.
//!
//! Tableaux are assembled in their full block form, with one block of `M + 1`
//! stages per correction, and [`reduce_tableau`] removes the trivial and
//! duplicated stages afterwards.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{
    cached_ader_operators, cached_dec_coefficients, rows, AderOperators, AderQuadrature,
    DeCCoefficients, NodeKind,
};

const ROW_SUM_TOL: f64 = 1e-13;
const MERGE_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Dec,
    Sdec,
    Ader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Explicit,
    Implicit,
    Imex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    Explicit,
    DiagonallyImplicit,
    BlockImplicit,
}

macro_rules! text_enum {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(<$ty>::$variant => $name),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok(<$ty>::$variant),)+
                    other => Err(Error::InvalidArgument(format!(
                        "unknown {} '{}'", stringify!($ty).to_ascii_lowercase(), other
                    ))),
                }
            }
        }
    };
}

text_enum!(Family { Dec => "dec", Sdec => "sdec", Ader => "ader" });
text_enum!(Mode { Explicit => "explicit", Implicit => "implicit", Imex => "imex" });

/// Family, node set, order and treatment of a method, with the derived
/// number of subtimesteps `M` and iterations `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct MethodSpec {
    pub family: Family,
    pub kind: NodeKind,
    pub order: usize,
    pub mode: Mode,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub quadrature: AderQuadrature,
}

impl MethodSpec {
    pub fn new(family: Family, kind: NodeKind, order: usize, mode: Mode) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidMethod(format!("order must be at least 2, got {order}")));
        }
        let m = match (family, kind) {
            (_, NodeKind::Equispaced) => order - 1,
            (_, NodeKind::GaussLobatto) => order.div_ceil(2),
            (Family::Ader, NodeKind::GaussLegendre) => order / 2,
            (f, NodeKind::GaussLegendre) => {
                return Err(Error::InvalidMethod(format!(
                    "{f} needs nodes containing both interval endpoints, not {kind}"
                )))
            }
        };
        Ok(Self {
            family,
            kind,
            order,
            mode,
            m,
            k: order,
            quadrature: AderQuadrature::default(),
        })
    }

    /// Same method with a different number of iterations.
    pub fn with_iterations(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_quadrature(mut self, quadrature: AderQuadrature) -> Self {
        self.quadrature = quadrature;
        self
    }

    /// Identifier such as `dec-glb-p4-imex`.
    pub fn id(&self) -> String {
        format!("{}-{}-p{}-{}", self.family, self.kind.short(), self.order, self.mode)
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub structure: Structure,
}

impl ButcherTableau {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let c = DVector::from_iterator(a.nrows(), a.row_iter().map(|r| r.sum()));
        let structure = classify(&a);
        Self { a, b, c, structure }
    }

    pub fn from_rows(a: &[&[f64]], b: &[f64]) -> Self {
        let z = b.len();
        Self::new(
            DMatrix::from_fn(z, z, |i, j| a[i][j]),
            DVector::from_column_slice(b),
        )
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    /// `R(z) = 1 + z bᵀ (I − zA)⁻¹ 1`, infinite at poles.
    pub fn stability_function(&self, z: Complex64) -> Complex64 {
        let z_b = self.b.map(|v| z * v);
        let mat = self.a.map(|v| z * v);
        dense_amplification(&mat, &z_b)
    }
}

fn classify(a: &DMatrix<f64>) -> Structure {
    let n = a.nrows();
    let mut upper = false;
    let mut diag = false;
    for i in 0..n {
        for j in i..n {
            if a[(i, j)] != 0.0 {
                if i == j {
                    diag = true;
                } else {
                    upper = true;
                }
            }
        }
    }
    match (diag, upper) {
        (false, false) => Structure::Explicit,
        (true, false) => Structure::DiagonallyImplicit,
        _ => Structure::BlockImplicit,
    }
}

/// `1 + z_bᵀ (I − Z)⁻¹ 1` for a complex stage matrix `Z` and weights `z_b`.
pub(crate) fn dense_amplification(
    zmat: &DMatrix<Complex64>,
    z_b: &DVector<Complex64>,
) -> Complex64 {
    let n = zmat.nrows();
    let one = Complex64::new(1.0, 0.0);
    let lhs = DMatrix::<Complex64>::identity(n, n) - zmat;
    let rhs = DVector::from_element(n, one);
    match lhs.lu().solve(&rhs) {
        Some(y) if y.iter().all(|v| v.is_finite()) => one + z_b.dot(&y),
        _ => Complex64::new(f64::INFINITY, 0.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImexTableau {
    pub implicit: ButcherTableau,
    pub explicit: ButcherTableau,
}

impl ImexTableau {
    pub fn new(implicit: ButcherTableau, explicit: ButcherTableau) -> Result<Self> {
        if implicit.stages() != explicit.stages() {
            return Err(Error::Mismatch(format!(
                "implicit part has {} stages, explicit part {}",
                implicit.stages(),
                explicit.stages()
            )));
        }
        if explicit.structure != Structure::Explicit {
            return Err(Error::Mismatch(
                "explicit part must be strictly lower triangular".into(),
            ));
        }
        Ok(Self { implicit, explicit })
    }

    pub fn stages(&self) -> usize {
        self.implicit.stages()
    }

    /// `R(z_I, z_E) = 1 + (z_I b + z_E b̂)ᵀ (I − z_I A − z_E Â)⁻¹ 1`.
    pub fn stability_function(&self, zi: Complex64, ze: Complex64) -> Complex64 {
        let mat = self.implicit.a.map(|v| zi * v) + self.explicit.a.map(|v| ze * v);
        let z_b = self.implicit.b.map(|v| zi * v) + self.explicit.b.map(|v| ze * v);
        dense_amplification(&mat, &z_b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tableau {
    Single(ButcherTableau),
    Imex(ImexTableau),
}

impl Tableau {
    pub fn stages(&self) -> usize {
        match self {
            Tableau::Single(t) => t.stages(),
            Tableau::Imex(t) => t.stages(),
        }
    }

    pub fn c(&self) -> &DVector<f64> {
        match self {
            Tableau::Single(t) => &t.c,
            Tableau::Imex(t) => &t.implicit.c,
        }
    }

    /// Amplification factor for `u' = (λ_I + λ_E) u` with `zi = Δt λ_I`,
    /// `ze = Δt λ_E`. A single tableau sees only the sum.
    pub fn amplification(&self, zi: Complex64, ze: Complex64) -> Complex64 {
        match self {
            Tableau::Single(t) => t.stability_function(zi + ze),
            Tableau::Imex(t) => t.stability_function(zi, ze),
        }
    }

    pub fn as_single(&self) -> Option<&ButcherTableau> {
        match self {
            Tableau::Single(t) => Some(t),
            Tableau::Imex(_) => None,
        }
    }

    pub fn as_imex(&self) -> Option<&ImexTableau> {
        match self {
            Tableau::Imex(t) => Some(t),
            Tableau::Single(_) => None,
        }
    }

    /// Implicit part (or the only part) and, for IMEX, the explicit part.
    pub fn parts(&self) -> (&ButcherTableau, Option<&ButcherTableau>) {
        match self {
            Tableau::Single(t) => (t, None),
            Tableau::Imex(t) => (&t.implicit, Some(&t.explicit)),
        }
    }

    pub fn dump(&self, spec: &MethodSpec) -> TableauDump {
        let (main, expl) = self.parts();
        TableauDump {
            family: spec.family,
            kind: spec.kind,
            order: spec.order,
            mode: spec.mode,
            z: self.stages(),
            c: main.c.iter().copied().collect(),
            b: main.b.iter().copied().collect(),
            a: rows(&main.a),
            b_hat: expl.map(|t| t.b.iter().copied().collect()),
            a_hat: expl.map(|t| rows(&t.a)),
        }
    }

    /// The implicit (or only) `A` matrix as CSV, 17 significant digits.
    pub fn a_csv(&self) -> String {
        matrix_csv(&self.parts().0.a)
    }
}

pub fn matrix_csv(a: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in a.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct TableauDump {
    pub family: Family,
    pub kind: NodeKind,
    pub order: usize,
    pub mode: Mode,
    #[serde(rename = "Z")]
    pub z: usize,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "bHat", skip_serializing_if = "Option::is_none")]
    pub b_hat: Option<Vec<f64>>,
    #[serde(rename = "AHat", skip_serializing_if = "Option::is_none")]
    pub a_hat: Option<Vec<Vec<f64>>>,
}

/// Block layout: stage 0 is `u_n`, block `k ≥ 1` holds `M + 1` stages.
///
/// Block 0 is the constant initial guess. Its coefficients are never summed
/// from the block weights: the callers write the exact row sum into column 0
/// (`β^m`, `P_m`, or an exact zero), so that rows which should coincide with
/// `u_n` carry no cancellation residue.
struct Layout {
    n: usize,
}

impl Layout {
    fn col(&self, block: usize, node: usize) -> usize {
        debug_assert!(block > 0);
        1 + (block - 1) * self.n + node
    }
}

/// Scratch builder for one or two `A` matrices with weights.
struct Builder {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Builder {
    fn new(z: usize) -> Self {
        Self {
            a: DMatrix::zeros(z, z),
            b: DVector::zeros(z),
        }
    }

    fn finish(self) -> ButcherTableau {
        ButcherTableau::new(self.a, self.b)
    }

    fn b_from_last_row(mut self) -> Self {
        let last = self.a.nrows() - 1;
        self.b = self.a.row(last).transpose();
        self
    }
}

fn check_spec(spec: &MethodSpec, family: Family, kind: NodeKind, degree: usize) -> Result<()> {
    if spec.family != family {
        return Err(Error::Mismatch(format!(
            "{} method passed to the {} builder",
            spec.family, family
        )));
    }
    if spec.kind != kind || spec.m != degree {
        return Err(Error::Mismatch(format!(
            "coefficients for {kind} M={degree}, method needs {} M={}",
            spec.kind, spec.m
        )));
    }
    if spec.k == 0 {
        return Err(Error::InvalidMethod("at least one iteration is needed".into()));
    }
    if family != Family::Ader && !kind.includes_endpoints() {
        return Err(Error::InvalidMethod(format!("{family} needs the left endpoint as a node")));
    }
    Ok(())
}

/// Unreduced DeC tableau.
pub fn dec_tableau(coeffs: &DeCCoefficients, spec: &MethodSpec) -> Result<Tableau> {
    check_spec(spec, Family::Dec, coeffs.nodes.kind, coeffs.degree())?;
    let n = coeffs.degree() + 1;
    let k_max = spec.k;
    let lay = Layout { n };
    let last = n - 1;
    let theta = &coeffs.theta;
    let beta = &coeffs.beta;

    match spec.mode {
        Mode::Explicit => {
            let z = 1 + (k_max - 1) * n;
            let mut e = Builder::new(z);
            for k in 1..k_max {
                for m in 0..n {
                    let row = lay.col(k, m);
                    if k == 1 {
                        e.a[(row, 0)] = beta[m];
                    } else {
                        for r in 0..n {
                            e.a[(row, lay.col(k - 1, r))] = theta[(m, r)];
                        }
                    }
                }
            }
            if k_max == 1 {
                e.b[0] = beta[last];
            } else {
                for r in 0..n {
                    e.b[lay.col(k_max - 1, r)] = theta[(last, r)];
                }
            }
            Ok(Tableau::Single(e.finish()))
        }
        Mode::Implicit | Mode::Imex => {
            let z = 2 + (k_max - 1) * n;
            let fin = z - 1;
            let mut im = Builder::new(z);
            let mut ex = Builder::new(z);
            let mut fill = |row: usize, k: usize, m: usize| {
                if k == 1 {
                    // implicit part: Σθ − β = 0 on the initial guess
                    ex.a[(row, 0)] = beta[m];
                } else {
                    for r in 0..n {
                        im.a[(row, lay.col(k - 1, r))] = theta[(m, r)];
                        ex.a[(row, lay.col(k - 1, r))] = theta[(m, r)];
                    }
                    im.a[(row, lay.col(k - 1, m))] -= beta[m];
                }
                im.a[(row, row)] = beta[m];
            };
            for k in 1..k_max {
                for m in 0..n {
                    fill(lay.col(k, m), k, m);
                }
            }
            fill(fin, k_max, last);
            let im = im.b_from_last_row().finish();
            if spec.mode == Mode::Implicit {
                Ok(Tableau::Single(im))
            } else {
                let ex = ex.b_from_last_row().finish();
                Ok(Tableau::Imex(ImexTableau::new(im, ex)?))
            }
        }
    }
}

/// Unreduced sDeC tableau, with every substep of every correction unrolled.
pub fn sdec_tableau(coeffs: &DeCCoefficients, spec: &MethodSpec) -> Result<Tableau> {
    check_spec(spec, Family::Sdec, coeffs.nodes.kind, coeffs.degree())?;
    let n = coeffs.degree() + 1;
    let lay = Layout { n };
    let z = 1 + spec.k * n;
    let theta = &coeffs.theta;
    let gamma = &coeffs.gamma;

    // Own-block weights of the unrolled substeps: the explicit substep uses
    // the node it starts from, the implicit one the node it ends at.
    let own_explicit = |m: usize, l: usize| if l < m { gamma[l + 1] } else { 0.0 };
    let own_implicit = |m: usize, l: usize| if 1 <= l && l <= m { gamma[l] } else { 0.0 };

    let build = |own: &dyn Fn(usize, usize) -> f64| {
        let mut t = Builder::new(z);
        for k in 1..=spec.k {
            for m in 0..n {
                let row = lay.col(k, m);
                for l in 0..n {
                    let g = own(m, l);
                    t.a[(row, lay.col(k, l))] = g;
                    // on the initial guess the weights cancel exactly
                    if k > 1 {
                        t.a[(row, lay.col(k - 1, l))] = theta[(m, l)] - g;
                    }
                }
            }
        }
        t.b_from_last_row().finish()
    };

    match spec.mode {
        Mode::Explicit => Ok(Tableau::Single(build(&own_explicit))),
        Mode::Implicit => Ok(Tableau::Single(build(&own_implicit))),
        Mode::Imex => Ok(Tableau::Imex(ImexTableau::new(
            build(&own_implicit),
            build(&own_explicit),
        )?)),
    }
}

/// Unreduced ADER tableau with `K (M + 1) + 1` stages.
pub fn ader_tableau(ops: &AderOperators, spec: &MethodSpec) -> Result<Tableau> {
    check_spec(spec, Family::Ader, ops.nodes.kind, ops.degree())?;
    let n = ops.degree() + 1;
    let lay = Layout { n };
    let z = 1 + spec.k * n;
    let q = &ops.q;

    let mut im = Builder::new(z);
    let mut ex = Builder::new(z);
    for k in 1..=spec.k {
        for m in 0..n {
            let row = lay.col(k, m);
            for l in 0..n {
                im.a[(row, lay.col(k, l))] = q[(m, l)];
                if k > 1 {
                    ex.a[(row, lay.col(k - 1, l))] = q[(m, l)];
                }
            }
            if k == 1 {
                ex.a[(row, 0)] = ops.p[m];
            }
        }
    }
    for l in 0..n {
        im.b[lay.col(spec.k, l)] = ops.b[l];
        ex.b[lay.col(spec.k, l)] = ops.b[l];
    }
    match spec.mode {
        Mode::Explicit => Ok(Tableau::Single(ex.finish())),
        Mode::Implicit => Ok(Tableau::Single(im.finish())),
        Mode::Imex => Ok(Tableau::Imex(ImexTableau::new(im.finish(), ex.finish())?)),
    }
}

/// Unreduced tableau of `spec`, using the cached coefficients.
pub fn build_tableau(spec: &MethodSpec) -> Result<Tableau> {
    match spec.family {
        Family::Dec => dec_tableau(&*cached_dec_coefficients(spec.kind, spec.m)?, spec),
        Family::Sdec => sdec_tableau(&*cached_dec_coefficients(spec.kind, spec.m)?, spec),
        Family::Ader => ader_tableau(
            &*cached_ader_operators(spec.kind, spec.m, spec.quadrature)?,
            spec,
        ),
    }
}

/// Reduced tableau of `spec`.
pub fn build_reduced(spec: &MethodSpec) -> Result<Tableau> {
    Ok(reduce_tableau(&build_tableau(spec)?))
}

/// Removes unused stages and merges stages with identical rows until
/// nothing changes.
pub fn reduce_tableau(t: &Tableau) -> Tableau {
    let mut parts: Vec<(DMatrix<f64>, DVector<f64>)> = match t {
        Tableau::Single(t) => vec![(t.a.clone(), t.b.clone())],
        Tableau::Imex(t) => vec![
            (t.implicit.a.clone(), t.implicit.b.clone()),
            (t.explicit.a.clone(), t.explicit.b.clone()),
        ],
    };
    while merge_duplicate(&mut parts) || drop_unused(&mut parts) {}

    let mut built = parts.into_iter().map(|(a, b)| ButcherTableau::new(a, b));
    match t {
        Tableau::Single(_) => Tableau::Single(built.next().unwrap()),
        Tableau::Imex(_) => {
            let implicit = built.next().unwrap();
            let explicit = built.next().unwrap();
            Tableau::Imex(ImexTableau { implicit, explicit })
        }
    }
}

fn remove_stage(parts: &mut [(DMatrix<f64>, DVector<f64>)], j: usize) {
    for (a, b) in parts.iter_mut() {
        *a = a.clone().remove_row(j).remove_column(j);
        *b = b.clone().remove_row(j);
    }
}

fn merge_duplicate(parts: &mut [(DMatrix<f64>, DVector<f64>)]) -> bool {
    let z = parts[0].1.len();
    for i in 0..z {
        for j in (i + 1)..z {
            let same = parts.iter().all(|(a, _)| {
                (0..z).all(|c| (a[(i, c)] - a[(j, c)]).abs() <= MERGE_TOL)
            });
            if same && merge_is_exact(parts, i, j) {
                for (a, b) in parts.iter_mut() {
                    for r in 0..z {
                        let v = a[(r, j)];
                        a[(r, i)] += v;
                    }
                    b[i] += b[j];
                }
                remove_stage(parts, j);
                return true;
            }
        }
    }
    false
}

/// Whether folding column `j` into column `i` involves only error-free
/// additions. Near poles the stability function of high-order methods is so
/// sensitive that a single rounded coefficient shifts it far more than the
/// reduction is allowed to, so inexact merges are skipped.
fn merge_is_exact(parts: &[(DMatrix<f64>, DVector<f64>)], i: usize, j: usize) -> bool {
    let exact = |x: f64, y: f64| {
        let s = x + y;
        let yy = s - x;
        (x - (s - yy)) + (y - yy) == 0.0
    };
    parts.iter().all(|(a, b)| {
        exact(b[i], b[j]) && (0..a.nrows()).all(|r| exact(a[(r, i)], a[(r, j)]))
    })
}

fn drop_unused(parts: &mut [(DMatrix<f64>, DVector<f64>)]) -> bool {
    let z = parts[0].1.len();
    // Stage 0 is kept so that a reduced tableau always starts at u_n.
    for j in (1..z).rev() {
        let unused = parts
            .iter()
            .all(|(a, b)| b[j] == 0.0 && (0..z).all(|r| r == j || a[(r, j)] == 0.0));
        if unused {
            remove_stage(parts, j);
            return true;
        }
    }
    false
}

/// Largest violation of `c = A·1` over all parts.
pub fn row_sum_defect(t: &Tableau) -> f64 {
    let (main, expl) = t.parts();
    let defect = |p: &ButcherTableau| {
        p.a.row_iter()
            .zip(p.c.iter())
            .map(|(r, c)| (r.sum() - c).abs())
            .fold(0.0, f64::max)
    };
    let mut d = defect(main);
    if let Some(e) = expl {
        d = d.max(defect(e));
        d = d.max((&main.c - &e.c).amax());
    }
    d
}

/// Whether all parts satisfy row-sum consistency to the working tolerance.
pub fn is_consistent(t: &Tableau) -> bool {
    row_sum_defect(t) <= ROW_SUM_TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{ader_operators, dec_coefficients, make_nodes};
    use crate::testutil::amplification_hp;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(f: Family, k: NodeKind, p: usize, m: Mode) -> MethodSpec {
        MethodSpec::new(f, k, p, m).unwrap()
    }

    fn all_specs(max_p: usize) -> Vec<MethodSpec> {
        let mut out = Vec::new();
        for family in [Family::Dec, Family::Sdec, Family::Ader] {
            for kind in NodeKind::ALL {
                for mode in [Mode::Explicit, Mode::Implicit, Mode::Imex] {
                    for p in 2..=max_p {
                        if let Ok(s) = MethodSpec::new(family, kind, p, mode) {
                            out.push(s);
                        }
                    }
                }
            }
        }
        out
    }

    fn sample_points(seed: u64, n: usize) -> Vec<(Complex64, Complex64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut disk = || {
            let r = 10.0 * rng.gen::<f64>().sqrt();
            let a = rng.gen::<f64>() * std::f64::consts::TAU;
            Complex64::from_polar(r, a)
        };
        (0..n).map(|_| (disk(), disk())).collect()
    }

    fn amplification_hp_t(t: &Tableau, zi: Complex64, ze: Complex64) -> Complex64 {
        match t {
            Tableau::Single(t) => {
                amplification_hp(&t.a, t.b.as_slice(), None, zi + ze, 0.0.into())
            }
            Tableau::Imex(t) => amplification_hp(
                &t.implicit.a,
                t.implicit.b.as_slice(),
                Some((&t.explicit.a, t.explicit.b.as_slice())),
                zi,
                ze,
            ),
        }
    }

    fn rel(a: Complex64, b: Complex64) -> f64 {
        if !a.is_finite() || !b.is_finite() {
            return if a.is_finite() == b.is_finite() { 0.0 } else { f64::INFINITY };
        }
        (a - b).norm() / a.norm().max(b.norm()).max(1.0)
    }

    #[test]
    fn method_spec_degrees() {
        let s = spec(Family::Dec, NodeKind::Equispaced, 5, Mode::Explicit);
        assert_eq!((s.m, s.k), (4, 5));
        let s = spec(Family::Sdec, NodeKind::GaussLobatto, 5, Mode::Imex);
        assert_eq!((s.m, s.k), (3, 5));
        let s = spec(Family::Ader, NodeKind::GaussLegendre, 5, Mode::Implicit);
        assert_eq!((s.m, s.k), (2, 5));
        assert!(MethodSpec::new(Family::Dec, NodeKind::GaussLegendre, 3, Mode::Explicit).is_err());
        assert!(MethodSpec::new(Family::Ader, NodeKind::Equispaced, 1, Mode::Explicit).is_err());
        assert_eq!(s.id(), "ader-glg-p5-implicit");
        assert_eq!("imex".parse::<Mode>().unwrap(), Mode::Imex);
        assert_eq!("sdec".parse::<Family>().unwrap(), Family::Sdec);
    }

    #[test]
    fn explicit_dec2_reduces_to_heun() {
        let t = build_reduced(&spec(Family::Dec, NodeKind::Equispaced, 2, Mode::Explicit)).unwrap();
        let t1 = t.as_single().unwrap();
        assert_eq!(t1.stages(), 2);
        let heun = ButcherTableau::from_rows(&[&[0.0, 0.0], &[1.0, 0.0]], &[0.5, 0.5]);
        assert!((&t1.a - &heun.a).amax() < 1e-15);
        assert!((&t1.b - &heun.b).amax() < 1e-15);
        for z in [Complex64::new(-1.3, 0.4), Complex64::new(0.2, -2.0)] {
            let want = 1.0 + z + z * z / 2.0;
            assert!((t.amplification(z, 0.0.into()) - want).norm() < 1e-14);
        }
    }

    #[test]
    fn first_iteration_block_is_beta() {
        let s = spec(Family::Dec, NodeKind::GaussLobatto, 5, Mode::Explicit);
        let c = cached_dec_coefficients(s.kind, s.m).unwrap();
        let t = build_tableau(&s).unwrap();
        let a = &t.as_single().unwrap().a;
        for m in 0..=s.m {
            assert_abs_diff_eq!(a[(1 + m, 0)], c.beta[m], epsilon = 1e-15);
        }
    }

    #[test]
    fn implicit_variants_are_stiffly_accurate() {
        for s in all_specs(8) {
            if s.mode == Mode::Explicit || s.family == Family::Ader {
                continue;
            }
            let t = build_tableau(&s).unwrap();
            let (main, expl) = t.parts();
            for p in std::iter::once(main).chain(expl) {
                let last = p.a.nrows() - 1;
                assert_eq!(p.a.row(last).transpose(), p.b, "{s}");
            }
            assert_eq!(main.structure, Structure::DiagonallyImplicit, "{s}");
        }
    }

    #[test]
    fn row_sums_and_structure_for_all_methods() {
        for s in all_specs(8) {
            let t = build_tableau(&s).unwrap();
            assert!(is_consistent(&t), "{s}: {}", row_sum_defect(&t));
            let r = reduce_tableau(&t);
            assert!(is_consistent(&r), "{s} reduced");
            if let Some(imex) = t.as_imex() {
                assert_eq!(imex.explicit.structure, Structure::Explicit);
                assert_eq!(r.as_imex().unwrap().explicit.structure, Structure::Explicit);
            }
            if s.mode == Mode::Explicit {
                assert_eq!(t.as_single().unwrap().structure, Structure::Explicit, "{s}");
            }
        }
    }

    #[test]
    fn stage_counts() {
        for p in 2..=8 {
            for kind in [NodeKind::Equispaced, NodeKind::GaussLobatto] {
                let s = spec(Family::Dec, kind, p, Mode::Explicit);
                let r = build_reduced(&s).unwrap();
                assert_eq!(r.stages(), s.m * (s.k - 1) + 1, "{s}");
            }
            for kind in NodeKind::ALL {
                for mode in [Mode::Explicit, Mode::Implicit, Mode::Imex] {
                    let s = spec(Family::Ader, kind, p, mode);
                    let t = build_tableau(&s).unwrap();
                    assert_eq!(t.stages(), s.k * (s.m + 1) + 1);
                }
            }
        }
    }

    #[test]
    fn reduction_preserves_stability_function() {
        let pts = sample_points(7, 64);
        for s in all_specs(8) {
            let t = build_tableau(&s).unwrap();
            let r = reduce_tableau(&t);
            assert!(r.stages() <= t.stages());
            for &(zi, ze) in &pts {
                let (zi, ze) = match s.mode {
                    Mode::Imex => (zi, ze),
                    _ => (zi, Complex64::new(0.0, 0.0)),
                };
                let mut d = rel(t.amplification(zi, ze), r.amplification(zi, ze));
                if d > 1e-11 {
                    // f64 evaluation is too ill-conditioned here; settle it
                    // with the high-precision oracle
                    d = rel(amplification_hp_t(&t, zi, ze), amplification_hp_t(&r, zi, ze));
                }
                assert!(d <= 1e-10, "{s} at {zi},{ze}: {d}");
            }
        }
    }

    #[test]
    fn reduction_is_a_fixed_point() {
        for s in all_specs(5) {
            let r = build_reduced(&s).unwrap();
            assert_eq!(reduce_tableau(&r), r, "{s}");
        }
        let rk4 = ButcherTableau::from_rows(
            &[
                &[0.0, 0.0, 0.0, 0.0],
                &[0.5, 0.0, 0.0, 0.0],
                &[0.0, 0.5, 0.0, 0.0],
                &[0.0, 0.0, 1.0, 0.0],
            ],
            &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        );
        let t = Tableau::Single(rk4);
        assert_eq!(reduce_tableau(&t), t);
    }

    #[test]
    fn sdec2_imex_coincides_with_dec2_imex() {
        let d = build_reduced(&spec(Family::Dec, NodeKind::GaussLobatto, 2, Mode::Imex)).unwrap();
        let s = build_reduced(&spec(Family::Sdec, NodeKind::GaussLobatto, 2, Mode::Imex)).unwrap();
        let (d, s) = (d.as_imex().unwrap(), s.as_imex().unwrap());
        assert_eq!(d.stages(), s.stages());
        assert!((&d.implicit.a - &s.implicit.a).amax() < 1e-15);
        assert!((&d.explicit.a - &s.explicit.a).amax() < 1e-15);
        assert!((&d.implicit.b - &s.implicit.b).amax() < 1e-15);
        assert!((&d.explicit.b - &s.explicit.b).amax() < 1e-15);
    }

    #[test]
    fn explicit_sdec_substeps_add_one_stage_at_a_time() {
        // Within the first correction each substep row extends the previous
        // one by a single forward-Euler increment.
        let s = spec(Family::Sdec, NodeKind::Equispaced, 4, Mode::Explicit);
        let c = dec_coefficients(&make_nodes(s.kind, s.m).unwrap());
        let t = sdec_tableau(&c, &s).unwrap();
        let a = &t.as_single().unwrap().a;
        let n = s.m + 1;
        for m in 1..n {
            let diff: Vec<usize> = (0..a.ncols())
                .filter(|&j| (a[(1 + m, j)] - a[(m, j)]).abs() > 1e-15)
                .collect();
            assert_eq!(diff, vec![m], "row {m}");
            assert_abs_diff_eq!(a[(1 + m, m)], c.gamma[m], epsilon = 1e-15);
        }
    }

    #[test]
    fn implicit_ader_lobatto_m1_is_lobatto_iiic() {
        let s = spec(Family::Ader, NodeKind::GaussLobatto, 2, Mode::Implicit);
        let ops = ader_operators(&make_nodes(s.kind, s.m).unwrap()).unwrap();
        let want = [[0.5, -0.5], [0.5, 0.5]];
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(ops.q[(i, j)], want[i][j], epsilon = 1e-14);
            }
        }
        let t = build_tableau(&s).unwrap();
        let main = t.as_single().unwrap();
        assert_eq!(main.structure, Structure::BlockImplicit);
        let last = main.stages() - 2;
        assert_abs_diff_eq!(main.b[last], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(main.b[last + 1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn explicit_ader_first_column_is_p() {
        for kind in NodeKind::ALL {
            let s = spec(Family::Ader, kind, 4, Mode::Explicit);
            let ops = cached_ader_operators(kind, s.m, s.quadrature).unwrap();
            let t = build_tableau(&s).unwrap();
            let a = &t.as_single().unwrap().a;
            for m in 0..=s.m {
                assert_abs_diff_eq!(a[(1 + m, 0)], ops.p[m], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let s = spec(Family::Dec, NodeKind::Equispaced, 3, Mode::Explicit);
        let wrong = dec_coefficients(&make_nodes(NodeKind::Equispaced, 4).unwrap());
        assert!(matches!(dec_tableau(&wrong, &s), Err(Error::Mismatch(_))));
        let right = dec_coefficients(&make_nodes(NodeKind::Equispaced, 2).unwrap());
        assert!(matches!(sdec_tableau(&right, &s), Err(Error::Mismatch(_))));
    }

    #[test]
    fn json_dump_fields() {
        let s = spec(Family::Ader, NodeKind::GaussLobatto, 3, Mode::Imex);
        let t = build_reduced(&s).unwrap();
        let v = serde_json::to_value(t.dump(&s)).unwrap();
        for key in ["family", "kind", "order", "mode", "Z", "c", "b", "A", "bHat", "AHat"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["family"], "ader");
        assert_eq!(v["mode"], "imex");
        let csv = t.a_csv();
        assert_eq!(csv.lines().count(), t.stages());
    }
}
