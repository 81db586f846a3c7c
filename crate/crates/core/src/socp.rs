//! Second-order-cone relaxation of a homogeneous quadratic family, with
//! rank-one recovery and an exactness certificate.
//!
//! The relaxation replaces the rank-one outer product of `[1; U]` by moment
//! variables: one `y_jj` per homogeneous coordinate and one `y_jk` per
//! coupling pair in the family's support. Each pair carries the cone
//! constraint `‖(y_jj - y_kk, 2 y_jk)‖ <= y_jj + y_kk`, i.e. the 2x2 minor
//! `[[y_jj, y_jk], [y_jk, y_kk]]` stays positive semidefinite. Under a
//! uniform sign vector (see [`crate::odnp`]) the relaxation is tight and a
//! global minimizer of the original problem is recovered from the diagonal
//! by signed square roots.

use nalgebra::DVector;

use crate::cone::{self, ConeProblem, ConeSolution, SparseRow};
pub use crate::cone::{SolveStatus, SolverOptions};
use crate::error::{Error, Result};
use crate::odnp::SignVector;
use crate::quadform::{homogeneous_value, HomogeneousFamily};

/// Diagonal moments this far below zero abort reconstruction; anything in
/// Floor of the negative-diagonal clamp used during rank-one recovery; the
/// effective clamp widens with the solution's reported residuals.
pub const RECONSTRUCT_CLAMP: f64 = 1e-8;

/// Variable layout of the relaxation: variable `j` is the diagonal moment
/// `y_jj` for `j = 0..=n`, followed by one off-diagonal moment per coupling
/// pair in lexicographic order.
#[derive(Debug, Clone)]
pub struct VariableMap {
    pub n: usize,
    pub lambda: Vec<(usize, usize)>,
}

impl VariableMap {
    pub fn num_vars(&self) -> usize {
        self.n + 1 + self.lambda.len()
    }

    pub fn diag(&self, j: usize) -> usize {
        debug_assert!(j <= self.n);
        j
    }

    /// Variable index of the pair `(j, k)`, if it is in the support.
    pub fn pair(&self, j: usize, k: usize) -> Option<usize> {
        self.lambda
            .binary_search(&(j, k))
            .ok()
            .map(|i| self.n + 1 + i)
    }
}

/// The assembled relaxation, ready to lower into the cone engine.
#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub vars: VariableMap,
    /// Linearized objective coefficients over the moment variables.
    pub objective: Vec<f64>,
    /// One row per constraint member: `P_i · Y <= 0`.
    pub linear_rows: Vec<SparseRow>,
    /// Diagonal moments (excluding `y_00`) in no coupling pair; they get an
    /// explicit `y_jj >= 0` row since no cone block would otherwise bound
    /// them below.
    pub uncovered_diag: Vec<usize>,
}

/// Linearizes one symmetric matrix against the moment variables:
/// `P · Y = sum_j p_jj y_jj + 2 sum_{(j,k)} p_jk y_jk`.
fn linearize(p: &nalgebra::DMatrix<f64>, vars: &VariableMap) -> SparseRow {
    let mut idx = Vec::new();
    let mut val = Vec::new();
    for j in 0..=vars.n {
        if p[(j, j)] != 0.0 {
            idx.push(vars.diag(j));
            val.push(p[(j, j)]);
        }
    }
    for (i, &(j, k)) in vars.lambda.iter().enumerate() {
        if p[(j, k)] != 0.0 {
            idx.push(vars.n + 1 + i);
            val.push(2.0 * p[(j, k)]);
        }
    }
    SparseRow::new(idx, val)
}

/// Builds the moment relaxation of a homogeneous family. Member 0 becomes
/// the objective; every other member becomes a `<= 0` row.
pub fn build_relaxation(family: &HomogeneousFamily) -> ConicProgram {
    let vars = VariableMap {
        n: family.n,
        lambda: family.lambda.clone(),
    };
    let obj_row = linearize(&family.mats[0], &vars);
    let mut objective = vec![0.0; vars.num_vars()];
    obj_row.scatter_add(1.0, &mut objective);

    let linear_rows = family.mats[1..]
        .iter()
        .map(|m| linearize(m, &vars))
        .collect();

    let mut covered = vec![false; family.n + 1];
    for &(j, k) in &vars.lambda {
        covered[j] = true;
        covered[k] = true;
    }
    let uncovered_diag = (1..=family.n).filter(|&j| !covered[j]).collect();

    ConicProgram {
        vars,
        objective,
        linear_rows,
        uncovered_diag,
    }
}

impl ConicProgram {
    /// Lowers to the cone engine's standard form: the single equality
    /// `y_00 = 1`, the constraint rows, explicit nonnegativity for uncovered
    /// diagonals, and one cone block per coupling pair.
    pub fn to_cone_problem(&self) -> ConeProblem {
        let mut prob = ConeProblem::new(self.vars.num_vars());
        prob.objective = self.objective.clone();
        prob.push_eq(SparseRow::new(vec![0], vec![1.0]), 1.0);
        for row in &self.linear_rows {
            prob.push_nonneg(row.clone(), 0.0);
        }
        for &j in &self.uncovered_diag {
            prob.push_nonneg(SparseRow::new(vec![j], vec![-1.0]), 0.0);
        }
        for (i, &(j, k)) in self.vars.lambda.iter().enumerate() {
            let pair_var = self.vars.n + 1 + i;
            prob.push_soc(
                [
                    SparseRow::new(vec![j, k], vec![-1.0, -1.0]),
                    SparseRow::new(vec![j, k], vec![-1.0, 1.0]),
                    SparseRow::new(vec![pair_var], vec![-2.0]),
                ],
                [0.0, 0.0, 0.0],
            );
        }
        prob
    }
}

/// Solution of the relaxation in moment coordinates.
#[derive(Debug, Clone)]
pub struct SocpSolution {
    pub status: SolveStatus,
    /// `y_00, ..., y_nn`.
    pub diag: Vec<f64>,
    /// `((j, k), y_jk)` per coupling pair.
    pub offdiag: Vec<((usize, usize), f64)>,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    /// The untranslated engine output (duals, certificates, message).
    pub raw: ConeSolution,
}

/// Solves the relaxation. Non-optimal engine statuses are passed through in
/// `status`; callers decide whether that is an error.
pub fn solve(prog: &ConicProgram, opts: &SolverOptions) -> SocpSolution {
    let cone_prob = prog.to_cone_problem();
    let raw = cone::solve(&cone_prob, opts);
    let n = prog.vars.n;
    let diag = raw.x[..=n].to_vec();
    let offdiag = prog
        .vars
        .lambda
        .iter()
        .enumerate()
        .map(|(i, &jk)| (jk, raw.x[n + 1 + i]))
        .collect();
    SocpSolution {
        status: raw.status,
        diag,
        offdiag,
        objective: raw.objective,
        primal_residual: raw.primal_residual,
        dual_residual: raw.dual_residual,
        gap: raw.gap,
        iterations: raw.iterations,
        raw,
    }
}

/// Recovers the rank-one candidate `u_k = σ̄_0 σ̄_k sqrt(y_kk)` from the
/// moment diagonal. Small negative diagonals are solver dust and clamp to
/// zero; the threshold scales with the solution's reported residuals, since
/// a reduced-accuracy exit legitimately leaves cone entries dipping below
/// zero by that order. Anything further negative aborts: the solution is too
/// corrupted to trust. (The exactness certificate re-audits whatever this
/// returns, so a clamped point can never silently pass as optimal.)
pub fn reconstruct(sol: &SocpSolution, sigma_bar: &SignVector) -> Result<DVector<f64>> {
    if sol.status != SolveStatus::Optimal {
        return Err(Error::SolverFailure(sol.status));
    }
    let n = sol.diag.len() - 1;
    if sigma_bar.len() != n + 1 {
        return Err(Error::Dimension(format!(
            "sign vector has length {} but the moment diagonal implies {}",
            sigma_bar.len(),
            n + 1
        )));
    }
    let noise = RECONSTRUCT_CLAMP.max(10.0 * sol.primal_residual.max(sol.dual_residual));
    let mut u = DVector::zeros(n);
    for k in 1..=n {
        let d = sol.diag[k];
        if d < -noise {
            return Err(Error::NumericalFailure(format!(
                "moment diagonal y_{k}{k} = {d:.3e} is negative beyond the clamp {noise:.3e}"
            )));
        }
        u[k - 1] = sigma_bar.get(0) * sigma_bar.get(k) * d.max(0.0).sqrt();
    }
    Ok(u)
}

/// Feasibility and optimality audit of a recovered point against the family
/// it came from.
#[derive(Debug, Clone)]
pub struct ExactnessCertificate {
    /// True when the point is feasible within `feas_tol` and its objective
    /// matches the relaxation bound within `gap_tol * (1 + |bound|)`.
    pub exact: bool,
    /// Worst constraint violation `max_i max(0, [1;U]^T P_i [1;U])`.
    pub max_violation: f64,
    /// `point objective - relaxation objective` (nonnegative when the
    /// relaxation is a true lower bound).
    pub gap: f64,
    pub point_objective: f64,
    pub relaxation_objective: f64,
}

/// Audits a recovered point: evaluates every family member at `u` and
/// compares the objective against the relaxation bound.
pub fn certify(
    family: &HomogeneousFamily,
    relaxation_objective: f64,
    u: &DVector<f64>,
    feas_tol: f64,
    gap_tol: f64,
) -> ExactnessCertificate {
    let point_objective = homogeneous_value(&family.mats[0], u);
    let max_violation = family.mats[1..]
        .iter()
        .map(|m| homogeneous_value(m, u))
        .fold(0.0f64, |acc, v| acc.max(v));
    let gap = point_objective - relaxation_objective;
    let exact = max_violation <= feas_tol
        && gap.abs() <= gap_tol * (1.0 + relaxation_objective.abs());
    ExactnessCertificate {
        exact,
        max_violation,
        gap,
        point_objective,
        relaxation_objective,
    }
}
