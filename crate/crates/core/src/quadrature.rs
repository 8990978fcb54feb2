//! Subtimestep nodes, Lagrange bases and the coefficient matrices every
//! DeC, sDeC and ADER method is assembled from.
//!
//! All integrals of Lagrange-basis polynomials are evaluated with an internal
//! Gauss–Legendre rule of `M + 2` points, which is exact up to degree `2M + 3`
//! and therefore covers every integrand appearing here (at most degree `2M`).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest polynomial degree for which nodes are generated.
pub const MAX_DEGREE: usize = 30;

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Equispaced,
    GaussLobatto,
    GaussLegendre,
}

impl NodeKind {
    pub const ALL: [NodeKind; 3] = [
        NodeKind::Equispaced,
        NodeKind::GaussLobatto,
        NodeKind::GaussLegendre,
    ];

    /// Short label used in method identifiers (`eq`, `glb`, `glg`).
    pub fn short(self) -> &'static str {
        match self {
            NodeKind::Equispaced => "eq",
            NodeKind::GaussLobatto => "glb",
            NodeKind::GaussLegendre => "glg",
        }
    }

    fn min_degree(self) -> usize {
        match self {
            NodeKind::GaussLegendre => 0,
            _ => 1,
        }
    }

    /// Whether the node set contains both interval endpoints.
    pub fn includes_endpoints(self) -> bool {
        !matches!(self, NodeKind::GaussLegendre)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Equispaced => "equispaced",
            NodeKind::GaussLobatto => "gauss-lobatto",
            NodeKind::GaussLegendre => "gauss-legendre",
        })
    }
}

impl FromStr for NodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eq" | "equispaced" => Ok(NodeKind::Equispaced),
            "glb" | "gl" | "gauss-lobatto" | "lobatto" => Ok(NodeKind::GaussLobatto),
            "glg" | "gauss-legendre" | "legendre" => Ok(NodeKind::GaussLegendre),
            other => Err(Error::InvalidArgument(format!("unknown node kind '{other}'"))),
        }
    }
}

/// `M + 1` strictly increasing nodes on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSet {
    pub kind: NodeKind,
    pub degree: usize,
    pub nodes: Vec<f64>,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub fn make_nodes(kind: NodeKind, degree: usize) -> Result<NodeSet> {
    if degree < kind.min_degree() || degree > MAX_DEGREE {
        return Err(Error::DegreeOutOfRange {
            kind,
            degree,
            min: kind.min_degree(),
            max: MAX_DEGREE,
        });
    }
    let nodes = match kind {
        NodeKind::Equispaced => (0..=degree).map(|i| i as f64 / degree as f64).collect(),
        NodeKind::GaussLegendre => {
            let (x, _) = gauss_legendre_reference(degree + 1);
            x.iter().map(|&x| 0.5 * (1.0 + x)).collect()
        }
        NodeKind::GaussLobatto => {
            let x = gauss_lobatto_reference(degree + 1);
            x.iter().map(|&x| 0.5 * (1.0 + x)).collect()
        }
    };
    Ok(NodeSet {
        kind,
        degree,
        nodes,
    })
}

/// Legendre polynomial `P_n(x)` and its derivative.
pub(crate) fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = next;
    }
    let nf = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        // P_n'(±1) = (±1)^{n+1} n(n+1)/2
        let s = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        s * nf * (nf + 1.0) / 2.0
    } else {
        nf * (x * p - p_prev) / (x * x - 1.0)
    };
    (p, dp)
}

/// Roots of `P_n` on `[-1, 1]` with weights, ascending.
fn gauss_legendre_reference(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // Chebyshev-like initial guess for the i-th largest root.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..NEWTON_MAX_ITER {
            let (p, dp) = legendre(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() <= NEWTON_TOL {
                break;
            }
        }
        let (_, dp) = legendre(n, z);
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[n - 1 - i] = z;
        x[i] = -z;
        w[n - 1 - i] = wi;
        w[i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Gauss–Lobatto points (`npts >= 2`): endpoints plus the roots of `P'_{npts-1}`.
fn gauss_lobatto_reference(npts: usize) -> Vec<f64> {
    let m = npts - 1;
    let mut x = vec![0.0; npts];
    x[0] = -1.0;
    x[m] = 1.0;
    let mf = m as f64;
    for i in 1..=(m / 2) {
        let mut z = (std::f64::consts::PI * i as f64 / mf).cos();
        for _ in 0..NEWTON_MAX_ITER {
            let (p, dp) = legendre(m, z);
            let d2p = (2.0 * z * dp - mf * (mf + 1.0) * p) / (1.0 - z * z);
            let dz = dp / d2p;
            z -= dz;
            if dz.abs() <= NEWTON_TOL {
                break;
            }
        }
        x[m - i] = z;
        x[i] = -z;
    }
    if m % 2 == 0 {
        x[m / 2] = 0.0;
    }
    x
}

/// Gauss–Legendre rule with `n` points mapped to `[a, b]`.
pub fn gauss_legendre_rule(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre_reference(n);
    let half = 0.5 * (b - a);
    let nodes = x.iter().map(|&x| a + half * (1.0 + x)).collect();
    let weights = w.iter().map(|&w| half * w).collect();
    (nodes, weights)
}

/// Lagrange basis on a node set, `φ_r(t_m) = δ_{rm}`.
#[derive(Debug, Clone)]
pub struct LagrangeBasis {
    nodes: Vec<f64>,
    denom: Vec<f64>,
}

impl LagrangeBasis {
    pub fn new(nodes: &[f64]) -> Self {
        let denom = (0..nodes.len())
            .map(|r| {
                nodes
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != r)
                    .map(|(_, &tj)| nodes[r] - tj)
                    .product()
            })
            .collect();
        Self {
            nodes: nodes.to_vec(),
            denom,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn eval(&self, r: usize, t: f64) -> f64 {
        let num: f64 = self
            .nodes
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != r)
            .map(|(_, &tj)| t - tj)
            .product();
        num / self.denom[r]
    }

    pub fn eval_all(&self, t: f64) -> Vec<f64> {
        (0..self.len()).map(|r| self.eval(r, t)).collect()
    }

    pub fn derivative(&self, r: usize, t: f64) -> f64 {
        let n = self.len();
        let mut sum = 0.0;
        for j in (0..n).filter(|&j| j != r) {
            let prod: f64 = (0..n)
                .filter(|&l| l != r && l != j)
                .map(|l| t - self.nodes[l])
                .product();
            sum += prod;
        }
        sum / self.denom[r]
    }

    /// `∫_a^b φ_r(s) ds` for every `r`, exact for the basis degree.
    pub fn integrate(&self, a: f64, b: f64) -> Vec<f64> {
        self.integrate_with(a, b, self.len() + 1)
    }

    fn integrate_with(&self, a: f64, b: f64, points: usize) -> Vec<f64> {
        let (x, w) = gauss_legendre_rule(points, a, b);
        let mut out = vec![0.0; self.len()];
        for (xq, wq) in x.iter().zip(&w) {
            for (r, o) in out.iter_mut().enumerate() {
                *o += wq * self.eval(r, *xq);
            }
        }
        out
    }
}

/// Value of `φ_r` at `t` for the given node set.
pub fn lagrange_eval(nodes: &NodeSet, r: usize, t: f64) -> f64 {
    LagrangeBasis::new(&nodes.nodes).eval(r, t)
}

fn internal_points(degree: usize) -> usize {
    (2 * degree + 2).div_ceil(2) + 1
}

/// θ, β, δ and γ coefficients of the DeC and sDeC operators.
#[derive(Debug, Clone)]
pub struct DeCCoefficients {
    pub nodes: NodeSet,
    /// `theta[(m, r)] = ∫_0^{t_m} φ_r`
    pub theta: DMatrix<f64>,
    pub beta: DVector<f64>,
    /// `delta[(m, r)] = ∫_{t_{m-1}}^{t_m} φ_r`; row 0 integrates from 0 to `t_0`.
    pub delta: DMatrix<f64>,
    pub gamma: DVector<f64>,
}

impl DeCCoefficients {
    pub fn degree(&self) -> usize {
        self.nodes.degree
    }
}

pub fn dec_coefficients(nodes: &NodeSet) -> DeCCoefficients {
    dec_coefficients_with(nodes, internal_points(nodes.degree))
}

fn dec_coefficients_with(nodes: &NodeSet, points: usize) -> DeCCoefficients {
    let basis = LagrangeBasis::new(&nodes.nodes);
    let n = nodes.len();
    let mut theta = DMatrix::zeros(n, n);
    let mut delta = DMatrix::zeros(n, n);
    let mut gamma = DVector::zeros(n);
    for m in 0..n {
        let tm = nodes.nodes[m];
        let prev = if m == 0 { 0.0 } else { nodes.nodes[m - 1] };
        let th = basis.integrate_with(0.0, tm, points);
        let de = basis.integrate_with(prev, tm, points);
        for r in 0..n {
            theta[(m, r)] = th[r];
            delta[(m, r)] = de[r];
        }
        gamma[m] = tm - prev;
    }
    let beta = DVector::from_column_slice(&nodes.nodes);
    DeCCoefficients {
        nodes: nodes.clone(),
        theta,
        beta,
        delta,
        gamma,
    }
}

/// Quadrature used inside the ADER mass matrix and right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AderQuadrature {
    /// Interpolatory quadrature on the basis nodes themselves: Gauss–Lobatto
    /// or Gauss–Legendre weights, closed Newton–Cotes for equispaced nodes.
    #[default]
    Collocated,
    /// Gauss–Legendre rule exact for every basis product.
    Exact,
}

/// Mass matrix, right-hand side matrix and derived quantities of ADER.
#[derive(Debug, Clone)]
pub struct AderOperators {
    pub nodes: NodeSet,
    pub quadrature: AderQuadrature,
    pub mass: DMatrix<f64>,
    pub rhs: DMatrix<f64>,
    /// `mass⁻¹ · rhs`
    pub q: DMatrix<f64>,
    /// Row sums of `q`.
    pub p: DVector<f64>,
    /// `b_i = ∫_0^1 φ_i`
    pub b: DVector<f64>,
    pub phi0: DVector<f64>,
    pub phi1: DVector<f64>,
    pub mass_condition: f64,
}

impl AderOperators {
    pub fn degree(&self) -> usize {
        self.nodes.degree
    }
}

pub fn ader_operators(nodes: &NodeSet) -> Result<AderOperators> {
    ader_operators_with(nodes, AderQuadrature::default())
}

pub fn ader_operators_with(nodes: &NodeSet, quadrature: AderQuadrature) -> Result<AderOperators> {
    ader_operators_impl(nodes, quadrature, internal_points(nodes.degree))
}

fn ader_operators_impl(
    nodes: &NodeSet,
    quadrature: AderQuadrature,
    points: usize,
) -> Result<AderOperators> {
    let basis = LagrangeBasis::new(&nodes.nodes);
    let n = nodes.len();
    let b = basis.integrate_with(0.0, 1.0, points);
    let (xq, wq) = match quadrature {
        AderQuadrature::Collocated => (nodes.nodes.clone(), b.clone()),
        AderQuadrature::Exact => gauss_legendre_rule(points, 0.0, 1.0),
    };
    let phi0 = DVector::from_vec(basis.eval_all(0.0));
    let phi1 = DVector::from_vec(basis.eval_all(1.0));
    let vals: Vec<Vec<f64>> = xq.iter().map(|&x| basis.eval_all(x)).collect();
    let ders: Vec<Vec<f64>> = xq
        .iter()
        .map(|&x| (0..n).map(|r| basis.derivative(r, x)).collect())
        .collect();

    let mut mass = DMatrix::zeros(n, n);
    let mut rhs = DMatrix::zeros(n, n);
    for m in 0..n {
        for l in 0..n {
            let mut stiff = 0.0;
            let mut r = 0.0;
            for q in 0..xq.len() {
                stiff += wq[q] * ders[q][m] * vals[q][l];
                r += wq[q] * vals[q][m] * vals[q][l];
            }
            mass[(m, l)] = phi1[m] * phi1[l] - stiff;
            rhs[(m, l)] = r;
        }
    }

    let singular = || Error::SingularMassMatrix {
        kind: nodes.kind,
        degree: nodes.degree,
    };
    let lu = mass.clone().lu();
    let q = lu.solve(&rhs).ok_or_else(singular)?;
    let sv = mass.clone().singular_values();
    let smin = sv.min();
    if smin == 0.0 || !q.iter().all(|v| v.is_finite()) {
        return Err(singular());
    }
    let mass_condition = sv.max() / smin;
    let p = DVector::from_iterator(n, q.row_iter().map(|row| row.sum()));
    Ok(AderOperators {
        nodes: nodes.clone(),
        quadrature,
        mass,
        rhs,
        q,
        p,
        b: DVector::from_vec(b),
        phi0,
        phi1,
        mass_condition,
    })
}

type DecKey = (NodeKind, usize);
type AderKey = (NodeKind, usize, AderQuadrature);

fn dec_cache() -> &'static Mutex<HashMap<DecKey, Arc<DeCCoefficients>>> {
    static CACHE: OnceLock<Mutex<HashMap<DecKey, Arc<DeCCoefficients>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn ader_cache() -> &'static Mutex<HashMap<AderKey, Arc<AderOperators>>> {
    static CACHE: OnceLock<Mutex<HashMap<AderKey, Arc<AderOperators>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Shared, immutable DeC coefficients for `(kind, M)`.
pub fn cached_dec_coefficients(kind: NodeKind, degree: usize) -> Result<Arc<DeCCoefficients>> {
    if let Some(c) = dec_cache().lock().unwrap().get(&(kind, degree)) {
        return Ok(Arc::clone(c));
    }
    let coeffs = Arc::new(dec_coefficients(&make_nodes(kind, degree)?));
    dec_cache()
        .lock()
        .unwrap()
        .insert((kind, degree), Arc::clone(&coeffs));
    Ok(coeffs)
}

/// Shared, immutable ADER operators for `(kind, M, quadrature)`.
pub fn cached_ader_operators(
    kind: NodeKind,
    degree: usize,
    quadrature: AderQuadrature,
) -> Result<Arc<AderOperators>> {
    let key = (kind, degree, quadrature);
    if let Some(c) = ader_cache().lock().unwrap().get(&key) {
        return Ok(Arc::clone(c));
    }
    let ops = Arc::new(ader_operators_with(&make_nodes(kind, degree)?, quadrature)?);
    ader_cache().lock().unwrap().insert(key, Arc::clone(&ops));
    Ok(ops)
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// JSON-serializable dump of every coefficient of one node family and degree.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientDump {
    pub kind: NodeKind,
    #[serde(rename = "M")]
    pub degree: usize,
    pub nodes: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub delta: Vec<Vec<f64>>,
    #[serde(rename = "massM")]
    pub mass: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub rhs: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    pub b: Vec<f64>,
}

impl CoefficientDump {
    pub fn new(dec: &DeCCoefficients, ader: &AderOperators) -> Self {
        Self {
            kind: dec.nodes.kind,
            degree: dec.nodes.degree,
            nodes: dec.nodes.nodes.clone(),
            theta: rows(&dec.theta),
            beta: dec.beta.iter().copied().collect(),
            delta: rows(&dec.delta),
            mass: rows(&ader.mass),
            rhs: rows(&ader.rhs),
            q: rows(&ader.q),
            p: ader.p.iter().copied().collect(),
            b: ader.b.iter().copied().collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn small_node_sets() {
        let eq = make_nodes(NodeKind::Equispaced, 2).unwrap();
        assert_eq!(eq.nodes, vec![0.0, 0.5, 1.0]);
        let glb = make_nodes(NodeKind::GaussLobatto, 2).unwrap();
        assert_eq!(glb.nodes, vec![0.0, 0.5, 1.0]);
        let glg = make_nodes(NodeKind::GaussLegendre, 1).unwrap();
        let off = 0.5 / 3f64.sqrt();
        assert_abs_diff_eq!(glg.nodes[0], 0.5 - off, epsilon = 1e-15);
        assert_abs_diff_eq!(glg.nodes[1], 0.5 + off, epsilon = 1e-15);
    }

    #[test]
    fn degree_limits() {
        assert!(make_nodes(NodeKind::Equispaced, 0).is_err());
        assert!(make_nodes(NodeKind::GaussLobatto, 0).is_err());
        assert_eq!(make_nodes(NodeKind::GaussLegendre, 0).unwrap().nodes, vec![0.5]);
        assert!(make_nodes(NodeKind::GaussLobatto, MAX_DEGREE + 1).is_err());
        assert!(make_nodes(NodeKind::GaussLobatto, MAX_DEGREE).is_ok());
    }

    #[test]
    fn node_invariants_and_residuals() {
        for kind in NodeKind::ALL {
            for m in kind.min_degree().max(1)..=MAX_DEGREE {
                let ns = make_nodes(kind, m).unwrap();
                let x = &ns.nodes;
                assert!(x.windows(2).all(|w| w[0] < w[1]), "{kind} M={m}");
                assert!(x.iter().all(|&t| (0.0..=1.0).contains(&t)));
                match kind {
                    NodeKind::GaussLegendre => {
                        assert!(x[0] > 0.0 && x[m] < 1.0);
                        for &t in x {
                            let (p, _) = legendre(m + 1, 2.0 * t - 1.0);
                            assert!(p.abs() < 1e-14 * (m as f64 + 1.0), "{kind} M={m} {p}");
                        }
                    }
                    _ => {
                        assert_eq!(x[0], 0.0);
                        assert_eq!(x[m], 1.0);
                    }
                }
                if kind == NodeKind::GaussLobatto {
                    let mf = m as f64;
                    for &t in &x[1..m] {
                        let (_, dp) = legendre(m, 2.0 * t - 1.0);
                        // scale by the size of P'_M to get a relative residual
                        assert!(dp.abs() < 1e-14 * mf * mf, "{kind} M={m} {dp}");
                    }
                }
                if kind != NodeKind::Equispaced {
                    for i in 0..=m {
                        assert!((x[i] + x[m - i] - 1.0).abs() <= 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn lagrange_examples() {
        let eq2 = make_nodes(NodeKind::Equispaced, 2).unwrap();
        // φ₁(t) = 4t(1 − t)
        assert_abs_diff_eq!(lagrange_eval(&eq2, 1, 0.25), 0.75, epsilon = 1e-15);
        for kind in NodeKind::ALL {
            let ns = make_nodes(kind, 4).unwrap();
            for r in 0..ns.len() {
                for m in 0..ns.len() {
                    let v = lagrange_eval(&ns, r, ns.nodes[m]);
                    assert_abs_diff_eq!(v, if r == m { 1.0 } else { 0.0 }, epsilon = 1e-13);
                }
            }
            let sum: f64 = (0..ns.len()).map(|r| lagrange_eval(&ns, r, 0.3)).sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn lagrange_derivative_matches_finite_differences() {
        let ns = make_nodes(NodeKind::GaussLobatto, 5).unwrap();
        let basis = LagrangeBasis::new(&ns.nodes);
        let h = 1e-6;
        for r in 0..ns.len() {
            for &t in &[0.0, 0.13, 0.5, 0.91] {
                let fd = (basis.eval(r, t + h) - basis.eval(r, t - h)) / (2.0 * h);
                assert_abs_diff_eq!(basis.derivative(r, t), fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn theta_examples() {
        let c1 = dec_coefficients(&make_nodes(NodeKind::Equispaced, 1).unwrap());
        assert_abs_diff_eq!(c1.theta[(1, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c1.theta[(1, 1)], 0.5, epsilon = 1e-15);
        let c2 = dec_coefficients(&make_nodes(NodeKind::Equispaced, 2).unwrap());
        let simpson = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];
        let half = [5.0 / 24.0, 1.0 / 3.0, -1.0 / 24.0];
        for r in 0..3 {
            assert_abs_diff_eq!(c2.theta[(2, r)], simpson[r], epsilon = 1e-15);
            assert_abs_diff_eq!(c2.theta[(1, r)], half[r], epsilon = 1e-15);
        }
        assert_eq!(c2.delta.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0; 3]);
        assert_eq!(c2.gamma[0], 0.0);
    }

    #[test]
    fn coefficient_invariants() {
        for kind in NodeKind::ALL {
            for m in 1..=10 {
                let ns = make_nodes(kind, m).unwrap();
                let c = dec_coefficients(&ns);
                let n = m + 1;
                for row in 0..n {
                    assert_abs_diff_eq!(c.theta.row(row).sum(), c.beta[row], epsilon = 1e-13);
                    let cum: f64 = (0..=row).map(|j| c.delta.row(j).sum()).sum();
                    assert_abs_diff_eq!(cum, c.beta[row], epsilon = 1e-13);
                    for r in 0..n {
                        let cum: f64 = (0..=row).map(|j| c.delta[(j, r)]).sum();
                        assert_abs_diff_eq!(cum, c.theta[(row, r)], epsilon = 1e-13);
                    }
                }
                if kind.includes_endpoints() {
                    assert_eq!(c.beta[0], 0.0);
                    assert_eq!(c.beta[m], 1.0);
                }
            }
        }
    }

    #[test]
    fn integration_is_exact_under_refinement() {
        for kind in NodeKind::ALL {
            for m in 1..=10 {
                let ns = make_nodes(kind, m).unwrap();
                let p = internal_points(m);
                let a = dec_coefficients_with(&ns, p);
                let b = dec_coefficients_with(&ns, p + 1);
                assert!((a.theta - b.theta).amax() <= 1e-13);
                for quad in [AderQuadrature::Collocated, AderQuadrature::Exact] {
                    let a = ader_operators_impl(&ns, quad, p).unwrap();
                    let b = ader_operators_impl(&ns, quad, p + 1).unwrap();
                    assert!((&a.mass - &b.mass).amax() <= 1e-13, "{kind} {m}");
                    assert!((&a.rhs - &b.rhs).amax() <= 1e-13);
                    assert!((&a.b - &b.b).amax() <= 1e-13);
                }
            }
        }
    }

    #[test]
    fn ader_invariants() {
        for kind in NodeKind::ALL {
            for m in 1..=10 {
                for quad in [AderQuadrature::Collocated, AderQuadrature::Exact] {
                    let ops = ader_operators_with(&make_nodes(kind, m).unwrap(), quad).unwrap();
                    let ones = ops.mass.clone().lu().solve(&ops.phi0).unwrap();
                    assert!(ones.iter().all(|v| (v - 1.0).abs() <= 1e-12), "{kind} {m}");
                    assert_abs_diff_eq!(ops.b.sum(), 1.0, epsilon = 1e-14);
                    assert!(ops.mass_condition.is_finite());
                }
            }
        }
    }

    #[test]
    fn collocated_rhs_is_diagonal_weights() {
        for kind in [NodeKind::GaussLobatto, NodeKind::GaussLegendre] {
            for m in 1..=8 {
                let ops = ader_operators(&make_nodes(kind, m).unwrap()).unwrap();
                for i in 0..=m {
                    for j in 0..=m {
                        let want = if i == j { ops.b[i] } else { 0.0 };
                        assert_abs_diff_eq!(ops.rhs[(i, j)], want, epsilon = 1e-14);
                    }
                }
            }
        }
        let ops = ader_operators(&make_nodes(NodeKind::GaussLobatto, 1).unwrap()).unwrap();
        assert_abs_diff_eq!(ops.rhs[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(ops.rhs[(1, 1)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn gauss_legendre_exact_rhs_matches_collocated() {
        // M+1 Gauss points integrate degree 2M exactly
        for m in 1..=6 {
            let ns = make_nodes(NodeKind::GaussLegendre, m).unwrap();
            let a = ader_operators_with(&ns, AderQuadrature::Collocated).unwrap();
            let b = ader_operators_with(&ns, AderQuadrature::Exact).unwrap();
            assert!((&a.q - &b.q).amax() < 1e-12);
        }
    }

    #[test]
    fn last_theta_row_equals_b() {
        for kind in [NodeKind::Equispaced, NodeKind::GaussLobatto] {
            for m in 1..=10 {
                let ns = make_nodes(kind, m).unwrap();
                let c = dec_coefficients(&ns);
                let ops = ader_operators(&ns).unwrap();
                for r in 0..=m {
                    assert_abs_diff_eq!(c.theta[(m, r)], ops.b[r], epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn cache_returns_shared_instances() {
        let a = cached_dec_coefficients(NodeKind::GaussLobatto, 3).unwrap();
        let b = cached_dec_coefficients(NodeKind::GaussLobatto, 3).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let a = cached_ader_operators(NodeKind::Equispaced, 3, AderQuadrature::Exact).unwrap();
        let b = cached_ader_operators(NodeKind::Equispaced, 3, AderQuadrature::Exact).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn dump_has_expected_fields() {
        let ns = make_nodes(NodeKind::GaussLobatto, 2).unwrap();
        let dump = CoefficientDump::new(&dec_coefficients(&ns), &ader_operators(&ns).unwrap());
        let v: serde_json::Value = serde_json::from_str(&dump.to_json().unwrap()).unwrap();
        for key in [
            "kind", "M", "nodes", "theta", "beta", "delta", "massM", "R", "Q", "P", "b",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["kind"], "gauss-lobatto");
    }
}
