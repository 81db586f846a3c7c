//! Quadratic functions over a prediction horizon, their condensation to
//! functions of the stacked control vector alone, and homogenization of a
//! condensed family at a fixed initial state.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linsys::PredictionMatrices;

/// Entries of homogenized matrices at or below this magnitude are zeroed
/// before the coupling-pair set is collected, so condensation dust cannot
/// inflate it.
pub const CLEANUP_TOL: f64 = 1e-12;

/// Role of a quadratic function in a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadraticKind {
    Objective,
    Constraint,
}

/// Where a stage block acts along the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// A single step `k`: state blocks act on `x(k)`, control blocks on `u(k)`.
    Step(usize),
    /// Summed over the horizon: state blocks over `x(0..=N)`, control and
    /// cross blocks over steps `0..=N-1`.
    AllSteps,
    /// The terminal state `x(N)` only; control or cross blocks are invalid here.
    Terminal,
}

/// One stage block of a quadratic function:
/// `x^T Qs x + u^T Rs u + 2 x^T Cs u + 2 qs^T x + 2 rs^T u + constant`
/// evaluated at the stage(s) selected by `placement`.
#[derive(Debug, Clone)]
pub struct StageSpec {
    pub state_quad: Option<DMatrix<f64>>,
    pub control_quad: Option<DMatrix<f64>>,
    pub cross: Option<DMatrix<f64>>,
    pub state_lin: Option<DVector<f64>>,
    pub control_lin: Option<DVector<f64>>,
    pub constant: f64,
    pub placement: Placement,
    pub kind: QuadraticKind,
}

impl Default for StageSpec {
    fn default() -> Self {
        Self {
            state_quad: None,
            control_quad: None,
            cross: None,
            state_lin: None,
            control_lin: None,
            constant: 0.0,
            placement: Placement::AllSteps,
            kind: QuadraticKind::Constraint,
        }
    }
}

/// A quadratic function of the stacked state `X = (x(0), ..., x(N))` and the
/// stacked control `U = (u(0), ..., u(N-1))`:
///
/// `F(X, U) = X^T Q X + U^T R U + 2 X^T S U + 2 q^T X + 2 r^T U + constant`.
#[derive(Debug, Clone)]
pub struct HorizonQuadratic {
    /// `Q`, `(N+1) n_x` square, symmetric.
    pub state_quad: DMatrix<f64>,
    /// `R`, `N n_u` square, symmetric.
    pub control_quad: DMatrix<f64>,
    /// `S`, `(N+1) n_x  x  N n_u`.
    pub cross: DMatrix<f64>,
    /// `q`.
    pub state_lin: DVector<f64>,
    /// `r`.
    pub control_lin: DVector<f64>,
    pub constant: f64,
    pub kind: QuadraticKind,
}

impl HorizonQuadratic {
    /// The all-zero function for the given horizon and dimensions.
    pub fn zero(n: usize, n_x: usize, n_u: usize, kind: QuadraticKind) -> Self {
        Self {
            state_quad: DMatrix::zeros((n + 1) * n_x, (n + 1) * n_x),
            control_quad: DMatrix::zeros(n * n_u, n * n_u),
            cross: DMatrix::zeros((n + 1) * n_x, n * n_u),
            state_lin: DVector::zeros((n + 1) * n_x),
            control_lin: DVector::zeros(n * n_u),
            constant: 0.0,
            kind,
        }
    }

    /// Adds another function of identical shape onto this one.
    pub fn add_in_place(&mut self, other: &HorizonQuadratic) -> Result<()> {
        if self.state_quad.shape() != other.state_quad.shape()
            || self.control_quad.shape() != other.control_quad.shape()
        {
            return Err(Error::Dimension(
                "cannot sum horizon quadratics of different shapes".into(),
            ));
        }
        self.state_quad += &other.state_quad;
        self.control_quad += &other.control_quad;
        self.cross += &other.cross;
        self.state_lin += &other.state_lin;
        self.control_lin += &other.control_lin;
        self.constant += other.constant;
        Ok(())
    }

    /// The negated function (used to flip a `>=` constraint into `<= 0` form).
    pub fn negated(&self) -> Self {
        Self {
            state_quad: -&self.state_quad,
            control_quad: -&self.control_quad,
            cross: -&self.cross,
            state_lin: -&self.state_lin,
            control_lin: -&self.control_lin,
            constant: -self.constant,
            kind: self.kind,
        }
    }
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Places one stage block onto the horizon, producing a full
/// [`HorizonQuadratic`]. Stage matrices are symmetrized on entry.
pub fn assemble(
    spec: &StageSpec,
    n: usize,
    n_x: usize,
    n_u: usize,
) -> Result<HorizonQuadratic> {
    if n == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if let Some(m) = &spec.state_quad {
        if m.shape() != (n_x, n_x) {
            return Err(Error::Dimension(format!(
                "state_quad must be {n_x}x{n_x}, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    if let Some(m) = &spec.control_quad {
        if m.shape() != (n_u, n_u) {
            return Err(Error::Dimension(format!(
                "control_quad must be {n_u}x{n_u}, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    if let Some(m) = &spec.cross {
        if m.shape() != (n_x, n_u) {
            return Err(Error::Dimension(format!(
                "cross must be {n_x}x{n_u}, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    if let Some(v) = &spec.state_lin {
        if v.len() != n_x {
            return Err(Error::Dimension(format!(
                "state_lin must have length {n_x}, got {}",
                v.len()
            )));
        }
    }
    if let Some(v) = &spec.control_lin {
        if v.len() != n_u {
            return Err(Error::Dimension(format!(
                "control_lin must have length {n_u}, got {}",
                v.len()
            )));
        }
    }

    let has_control_part =
        spec.control_quad.is_some() || spec.cross.is_some() || spec.control_lin.is_some();
    let (state_steps, control_steps): (Vec<usize>, Vec<usize>) = match spec.placement {
        Placement::Step(k) => {
            if k > n {
                return Err(Error::InvalidArgument(format!(
                    "step {k} is past the end of a horizon of {n}"
                )));
            }
            if has_control_part && k >= n {
                return Err(Error::InvalidArgument(format!(
                    "control blocks at step {k} need a control u({k}), but the horizon has {n} controls"
                )));
            }
            (vec![k], if has_control_part { vec![k] } else { vec![] })
        }
        Placement::AllSteps => ((0..=n).collect(), (0..n).collect()),
        Placement::Terminal => {
            if has_control_part {
                return Err(Error::InvalidArgument(
                    "terminal placement has no control; control blocks are invalid here".into(),
                ));
            }
            (vec![n], vec![])
        }
    };

    let mut out = HorizonQuadratic::zero(n, n_x, n_u, spec.kind);
    let sym_state = spec.state_quad.as_ref().map(symmetrized);
    let sym_control = spec.control_quad.as_ref().map(symmetrized);

    for &k in &state_steps {
        if let Some(m) = &sym_state {
            let mut block = out.state_quad.view_mut((k * n_x, k * n_x), (n_x, n_x));
            block += m;
        }
        if let Some(v) = &spec.state_lin {
            let mut seg = out.state_lin.rows_mut(k * n_x, n_x);
            seg += v;
        }
    }
    for &k in &control_steps {
        if let Some(m) = &sym_control {
            let mut block = out.control_quad.view_mut((k * n_u, k * n_u), (n_u, n_u));
            block += m;
        }
        if let Some(m) = &spec.cross {
            let mut block = out.cross.view_mut((k * n_x, k * n_u), (n_x, n_u));
            block += m;
        }
        if let Some(v) = &spec.control_lin {
            let mut seg = out.control_lin.rows_mut(k * n_u, n_u);
            seg += v;
        }
    }
    out.constant = spec.constant;
    Ok(out)
}

/// The same function expressed over `(x0, U)` after substituting
/// `X = Sx x0 + Su U`:
///
/// `G(x0, U) = U^T M U + 2 (x0^T Nm + d^T) U + x0^T T x0 + 2 v^T x0 + constant`.
#[derive(Debug, Clone)]
pub struct CondensedQuadratic {
    /// `M = Su^T Q Su + Su^T S + S^T Su + R`, symmetric, `N n_u` square.
    pub control_quad: DMatrix<f64>,
    /// `Nm = Sx^T Q Su + Sx^T S`, `n_x  x  N n_u`.
    pub state_control: DMatrix<f64>,
    /// `d = Su^T q + r`.
    pub control_lin: DVector<f64>,
    /// `T = Sx^T Q Sx`, symmetric, `n_x` square.
    pub state_quad: DMatrix<f64>,
    /// `v = Sx^T q`.
    pub state_lin: DVector<f64>,
    pub constant: f64,
    pub kind: QuadraticKind,
}

/// Substitutes the prediction matrices into a horizon quadratic.
pub fn condense(f: &HorizonQuadratic, pm: &PredictionMatrices) -> Result<CondensedQuadratic> {
    let stacked = (pm.horizon + 1) * pm.n_x;
    let n = pm.horizon * pm.n_u;
    if f.state_quad.nrows() != stacked || f.control_quad.nrows() != n {
        return Err(Error::Dimension(format!(
            "horizon quadratic sized for ({}, {}) but prediction matrices give ({stacked}, {n})",
            f.state_quad.nrows(),
            f.control_quad.nrows()
        )));
    }
    let q_su = &f.state_quad * &pm.su;
    let control_quad = symmetrized(
        &(pm.su.transpose() * &q_su
            + pm.su.transpose() * &f.cross
            + f.cross.transpose() * &pm.su
            + &f.control_quad),
    );
    let state_control = pm.sx.transpose() * &q_su + pm.sx.transpose() * &f.cross;
    let control_lin = pm.su.transpose() * &f.state_lin + &f.control_lin;
    let state_quad = symmetrized(&(pm.sx.transpose() * &f.state_quad * &pm.sx));
    let state_lin = pm.sx.transpose() * &f.state_lin;
    Ok(CondensedQuadratic {
        control_quad,
        state_control,
        control_lin,
        state_quad,
        state_lin,
        constant: f.constant,
        kind: f.kind,
    })
}

/// Evaluates a horizon quadratic at a stacked state/control pair.
pub fn evaluate_horizon(
    f: &HorizonQuadratic,
    x_stacked: &DVector<f64>,
    u_stacked: &DVector<f64>,
) -> f64 {
    (x_stacked.transpose() * &f.state_quad * x_stacked)[(0, 0)]
        + (u_stacked.transpose() * &f.control_quad * u_stacked)[(0, 0)]
        + 2.0 * (x_stacked.transpose() * &f.cross * u_stacked)[(0, 0)]
        + 2.0 * f.state_lin.dot(x_stacked)
        + 2.0 * f.control_lin.dot(u_stacked)
        + f.constant
}

/// Evaluates a condensed quadratic at an initial state and stacked control.
pub fn evaluate_condensed(g: &CondensedQuadratic, x0: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let tail = g.state_control.transpose() * x0 + &g.control_lin;
    (u.transpose() * &g.control_quad * u)[(0, 0)]
        + 2.0 * tail.dot(u)
        + constant_part(g, x0)
}

/// The part of a condensed quadratic that does not involve the control:
/// `x0^T T x0 + 2 v^T x0 + constant`.
pub fn constant_part(g: &CondensedQuadratic, x0: &DVector<f64>) -> f64 {
    (x0.transpose() * &g.state_quad * x0)[(0, 0)] + 2.0 * g.state_lin.dot(x0) + g.constant
}

/// A family of symmetric `(n+1) x (n+1)` matrices representing homogeneous
/// quadratic forms `[1; U]^T P [1; U]`, with index 0 the objective and the
/// rest constraints (`<= 0`).
#[derive(Debug, Clone)]
pub struct HomogeneousFamily {
    pub mats: Vec<DMatrix<f64>>,
    /// Control dimension `n`; every matrix is `(n+1)` square.
    pub n: usize,
    /// Strict upper-triangular pairs `(j, k)`, `j < k`, 0-based over the
    /// homogeneous index range `0..=n`, where some family member is nonzero.
    pub lambda: Vec<(usize, usize)>,
}

impl HomogeneousFamily {
    /// Builds a family directly from symmetric matrices, applying the same
    /// entry clean-up and coupling-pair collection as [`homogenize`].
    pub fn from_matrices(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        if mats.is_empty() {
            return Err(Error::InvalidArgument(
                "a homogeneous family needs at least an objective matrix".into(),
            ));
        }
        let dim = mats[0].nrows();
        if dim < 2 {
            return Err(Error::Dimension(
                "homogeneous matrices must be at least 2x2".into(),
            ));
        }
        for m in &mats {
            if m.shape() != (dim, dim) {
                return Err(Error::Dimension(
                    "all family members must share one shape".into(),
                ));
            }
        }
        let mut cleaned: Vec<DMatrix<f64>> = mats
            .into_iter()
            .map(|m| symmetrized(&m))
            .collect();
        for m in &mut cleaned {
            for v in m.iter_mut() {
                if v.abs() <= CLEANUP_TOL {
                    *v = 0.0;
                }
            }
        }
        let lambda = collect_lambda(&cleaned);
        Ok(Self {
            mats: cleaned,
            n: dim - 1,
            lambda,
        })
    }
}

fn collect_lambda(mats: &[DMatrix<f64>]) -> Vec<(usize, usize)> {
    let dim = mats[0].nrows();
    let mut lambda = Vec::new();
    for j in 0..dim {
        for k in (j + 1)..dim {
            if mats.iter().any(|m| m[(j, k)] != 0.0) {
                lambda.push((j, k));
            }
        }
    }
    lambda
}

/// Homogenizes a condensed family at a fixed initial state. Member `i` of the
/// output satisfies `[1; U]^T P_i [1; U] = G_i(x0, U)` exactly; entries at or
/// below [`CLEANUP_TOL`] are zeroed before the coupling pairs are collected.
pub fn homogenize(gs: &[CondensedQuadratic], x0: &DVector<f64>) -> Result<HomogeneousFamily> {
    if gs.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one condensed function to homogenize".into(),
        ));
    }
    let n = gs[0].control_quad.nrows();
    let n_x = gs[0].state_quad.nrows();
    if x0.len() != n_x {
        return Err(Error::Dimension(format!(
            "state has length {} but the condensed family expects {}",
            x0.len(),
            n_x
        )));
    }
    let mut mats = Vec::with_capacity(gs.len());
    for g in gs {
        if g.control_quad.nrows() != n || g.state_quad.nrows() != n_x {
            return Err(Error::Dimension(
                "condensed family members disagree on dimensions".into(),
            ));
        }
        let corner = constant_part(g, x0);
        let tail = g.state_control.transpose() * x0 + &g.control_lin;
        let mut p = DMatrix::<f64>::zeros(n + 1, n + 1);
        p[(0, 0)] = corner;
        for k in 0..n {
            p[(0, k + 1)] = tail[k];
            p[(k + 1, 0)] = tail[k];
        }
        p.view_mut((1, 1), (n, n)).copy_from(&g.control_quad);
        mats.push(p);
    }
    HomogeneousFamily::from_matrices(mats)
}

/// Evaluates the homogeneous form `[1; U]^T P [1; U]`.
pub fn homogeneous_value(p: &DMatrix<f64>, u: &DVector<f64>) -> f64 {
    let n = u.len();
    debug_assert_eq!(p.nrows(), n + 1);
    let mut acc = p[(0, 0)];
    for k in 0..n {
        acc += 2.0 * p[(0, k + 1)] * u[k];
    }
    for j in 0..n {
        let uj = u[j];
        acc += p[(j + 1, j + 1)] * uj * uj;
        for k in (j + 1)..n {
            acc += 2.0 * p[(j + 1, k + 1)] * uj * u[k];
        }
    }
    acc
}
