//! A self-contained conic interior-point engine for problems of the form
//!
//! ```text
//! minimize    c·x
//! subject to  A x = b
//!             G x + s = h,   s ∈ K,
//! ```
//!
//! where `K` is a product of a nonnegative orthant and 3-dimensional
//! second-order cones. The solver runs a homogeneous self-dual embedding
//! with Nesterov-Todd scaled predictor-corrector steps, so it returns
//! either an optimal primal/dual pair or a certificate of primal
//! infeasibility / unboundedness.

pub(crate) mod ipm;
pub(crate) mod kkt;
pub(crate) mod soc;

/// A sparse row: strictly increasing indices with matching coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn new(idx: Vec<usize>, val: Vec<f64>) -> SparseRow {
        assert_eq!(idx.len(), val.len(), "index/value length mismatch");
        assert!(
            idx.windows(2).all(|w| w[0] < w[1]),
            "row indices must be strictly increasing"
        );
        SparseRow { idx, val }
    }

    pub fn empty() -> SparseRow {
        SparseRow {
            idx: Vec::new(),
            val: Vec::new(),
        }
    }

    /// Collects the nonzero entries of a dense slice.
    pub fn from_dense(dense: &[f64]) -> SparseRow {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for (i, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                idx.push(i);
                val.push(v);
            }
        }
        SparseRow { idx, val }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx
            .iter()
            .zip(&self.val)
            .map(|(&i, &a)| a * x[i])
            .sum()
    }

    /// `out[idx] += coef * val` for every stored entry.
    pub fn scatter_add(&self, coef: f64, out: &mut [f64]) {
        for (&i, &a) in self.idx.iter().zip(&self.val) {
            out[i] += coef * a;
        }
    }

    pub fn max_index(&self) -> Option<usize> {
        self.idx.last().copied()
    }
}

/// A conic program in the solver's standard form.
#[derive(Debug, Clone)]
pub struct ConeProblem {
    pub num_vars: usize,
    /// The cost vector `c`, length `num_vars`.
    pub objective: Vec<f64>,
    pub eq: Vec<SparseRow>,
    pub eq_rhs: Vec<f64>,
    /// Rows `g·x <= h` (slack in the nonnegative orthant).
    pub nonneg: Vec<SparseRow>,
    pub nonneg_rhs: Vec<f64>,
    /// Blocks `(h0 - g0·x, h1 - g1·x, h2 - g2·x)` constrained to the
    /// 3-dimensional second-order cone.
    pub soc: Vec<[SparseRow; 3]>,
    pub soc_rhs: Vec<[f64; 3]>,
}

impl ConeProblem {
    pub fn new(num_vars: usize) -> ConeProblem {
        ConeProblem {
            num_vars,
            objective: vec![0.0; num_vars],
            eq: Vec::new(),
            eq_rhs: Vec::new(),
            nonneg: Vec::new(),
            nonneg_rhs: Vec::new(),
            soc: Vec::new(),
            soc_rhs: Vec::new(),
        }
    }

    pub fn push_eq(&mut self, row: SparseRow, rhs: f64) {
        self.eq.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn push_nonneg(&mut self, row: SparseRow, rhs: f64) {
        self.nonneg.push(row);
        self.nonneg_rhs.push(rhs);
    }

    pub fn push_soc(&mut self, rows: [SparseRow; 3], rhs: [f64; 3]) {
        self.soc.push(rows);
        self.soc_rhs.push(rhs);
    }

    /// Structural sanity checks (index bounds, matching lengths).
    pub fn validate(&self) -> Result<(), String> {
        if self.objective.len() != self.num_vars {
            return Err("objective length != num_vars".into());
        }
        let check_rows = |rows: &[SparseRow], what: &str| -> Result<(), String> {
            for row in rows {
                if let Some(maxi) = row.max_index() {
                    if maxi >= self.num_vars {
                        return Err(format!("{what} row references variable {maxi}"));
                    }
                }
                if row.idx.len() != row.val.len() {
                    return Err(format!("{what} row index/value mismatch"));
                }
            }
            Ok(())
        };
        check_rows(&self.eq, "equality")?;
        check_rows(&self.nonneg, "nonnegative")?;
        for rows in &self.soc {
            check_rows(rows, "second-order-cone")?;
        }
        if self.eq.len() != self.eq_rhs.len()
            || self.nonneg.len() != self.nonneg_rhs.len()
            || self.soc.len() != self.soc_rhs.len()
        {
            return Err("row/rhs count mismatch".into());
        }
        Ok(())
    }

    /// Total cone dimension (nonnegative entries plus 3 per cone block).
    pub fn cone_dim(&self) -> usize {
        self.nonneg.len() + 3 * self.soc.len()
    }
}

/// Termination status of a conic solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Converged to the requested feasibility and gap tolerances.
    Optimal,
    /// A Farkas certificate of primal infeasibility was found.
    Infeasible,
    /// An improving ray was found (dual infeasible).
    Unbounded,
    /// No conclusion within the iteration budget or numerics broke down.
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical-failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Primal/dual feasibility tolerance on scaled residuals.
    pub feas_tol: f64,
    /// Duality-gap tolerance (absolute, and relative to the objective).
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// Result of a conic solve. For `Optimal` the primal/dual values are the
/// scaled interior-point solution. For `Infeasible` the duals hold the
/// Farkas certificate (`b·y + h·z = -1`, `A^T y + G^T z ≈ 0`) and `x` is
/// zero; for `Unbounded` `x` holds an improving ray (`c·x = -1`) and the
/// duals are zero. `objective` is NaN for both certificate statuses.
#[derive(Debug, Clone)]
pub struct ConeSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub nonneg_duals: Vec<f64>,
    pub soc_duals: Vec<[f64; 3]>,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub message: Option<String>,
}

pub fn solve(prob: &ConeProblem, opts: &SolverOptions) -> ConeSolution {
    if let Err(e) = prob.validate() {
        panic!("invalid cone problem: {e}");
    }
    ipm::solve(prob, opts)
}

/// Recomputes the residual triple `(primal, dual, gap)` reported in
/// `ConeSolution` from first principles:
///
/// - primal: worst equality violation and cone violation of `h - G x`,
/// - dual: `‖c + A^T y + G^T z‖∞`,
/// - gap: `|c·x + b·y + h·z|`.
pub fn residuals(
    prob: &ConeProblem,
    x: &[f64],
    eq_duals: &[f64],
    nonneg_duals: &[f64],
    soc_duals: &[[f64; 3]],
) -> (f64, f64, f64) {
    let mut primal: f64 = 0.0;
    for (row, &b) in prob.eq.iter().zip(&prob.eq_rhs) {
        primal = primal.max((row.dot(x) - b).abs());
    }
    for (row, &h) in prob.nonneg.iter().zip(&prob.nonneg_rhs) {
        primal = primal.max(row.dot(x) - h);
    }
    for (rows, rhs) in prob.soc.iter().zip(&prob.soc_rhs) {
        let s = [
            rhs[0] - rows[0].dot(x),
            rhs[1] - rows[1].dot(x),
            rhs[2] - rows[2].dot(x),
        ];
        primal = primal.max((s[1] * s[1] + s[2] * s[2]).sqrt() - s[0]);
    }

    let mut dual_vec = prob.objective.clone();
    for (row, &y) in prob.eq.iter().zip(eq_duals) {
        row.scatter_add(y, &mut dual_vec);
    }
    for (row, &z) in prob.nonneg.iter().zip(nonneg_duals) {
        row.scatter_add(z, &mut dual_vec);
    }
    for (rows, z) in prob.soc.iter().zip(soc_duals) {
        for r in 0..3 {
            rows[r].scatter_add(z[r], &mut dual_vec);
        }
    }
    let dual = dual_vec.iter().fold(0.0f64, |a, &v| a.max(v.abs()));

    let cx: f64 = prob.objective.iter().zip(x).map(|(&c, &v)| c * v).sum();
    let by: f64 = prob.eq_rhs.iter().zip(eq_duals).map(|(&b, &y)| b * y).sum();
    let hz_lin: f64 = prob
        .nonneg_rhs
        .iter()
        .zip(nonneg_duals)
        .map(|(&h, &z)| h * z)
        .sum();
    let hz_soc: f64 = prob
        .soc_rhs
        .iter()
        .zip(soc_duals)
        .map(|(h, z)| h[0] * z[0] + h[1] * z[1] + h[2] * z[2])
        .sum();
    let gap = (cx + by + hz_lin + hz_soc).abs();

    (primal, dual, gap)
}
