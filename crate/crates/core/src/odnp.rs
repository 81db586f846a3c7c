//! Sign structure of homogeneous quadratic families.
//!
//! A symmetric matrix `A` is *almost off-diagonal nonpositive* with respect
//! to a sign vector `σ ∈ {±1}^n` when `σ_j σ_k [A]_{jk} <= 0` for every
//! off-diagonal pair. When one σ works for a whole family, the moment
//! relaxation solved in [`crate::socp`] is exact, so finding a uniform σ —
//! or a certificate that none exists — is the gatekeeper of the pipeline.
//!
//! Each nonzero off-diagonal entry demands a fixed *product* of two signs,
//! which makes the search a parity (bipartiteness) problem on the coupling
//! graph; it is solved exactly by a union-find with parities.

use nalgebra::{DMatrix, DVector};

use crate::cone::{self, ConeProblem, SolverOptions, SparseRow};
use crate::error::{Error, Result};
use crate::quadform::{CondensedQuadratic, HomogeneousFamily};

/// Off-diagonal entries at or below this magnitude are treated as zero when
/// signs are checked or demanded.
pub const SIGN_ENTRY_TOL: f64 = 1e-12;

/// Halfspace membership uses this slack: `normal·x + offset <= REGION_TOL`.
pub const REGION_TOL: f64 = 1e-9;

/// A vector of ±1 signs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignVector {
    entries: Vec<i8>,
}

impl SignVector {
    /// Builds from entries that must each be +1 or -1.
    pub fn new(entries: Vec<i8>) -> Result<Self> {
        if entries.iter().any(|&e| e != 1 && e != -1) {
            return Err(Error::InvalidArgument(
                "sign vector entries must be +1 or -1".into(),
            ));
        }
        Ok(SignVector { entries })
    }

    pub fn all_plus(len: usize) -> Self {
        SignVector {
            entries: vec![1; len],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The sign at `k` as `+1.0` or `-1.0`.
    pub fn get(&self, k: usize) -> f64 {
        f64::from(self.entries[k])
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.entries
    }

    pub fn negated(&self) -> SignVector {
        SignVector {
            entries: self.entries.iter().map(|&e| -e).collect(),
        }
    }

    /// `(+1, σ)`: the homogeneous extension selecting the plus branch.
    pub fn prepend_plus(&self) -> SignVector {
        let mut entries = Vec::with_capacity(self.len() + 1);
        entries.push(1);
        entries.extend_from_slice(&self.entries);
        SignVector { entries }
    }

    /// `(+1, -σ)`: the homogeneous extension selecting the minus branch.
    pub fn prepend_plus_negated(&self) -> SignVector {
        self.negated().prepend_plus()
    }
}

impl std::fmt::Display for SignVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}", if *e > 0 { "+1" } else { "-1" })?;
        }
        write!(f, ")")
    }
}

/// Why no uniform sign vector exists: the entry `pair` receives incompatible
/// sign-product requirements. `members` are the indices of two family
/// matrices whose entries disagree directly; they are equal when the
/// contradiction arises transitively through a cycle of requirements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignConflict {
    pub pair: (usize, usize),
    pub members: (usize, usize),
}

impl std::fmt::Display for SignConflict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (j, k) = self.pair;
        let (a, b) = self.members;
        if a == b {
            write!(
                f,
                "entry ({j}, {k}) of family member {a} contradicts the sign products implied by other entries"
            )
        } else {
            write!(
                f,
                "family members {a} and {b} demand opposite sign products at entry ({j}, {k})"
            )
        }
    }
}

/// Checks `σ_j σ_k [A]_{jk} <= 0` for all off-diagonal pairs, ignoring
/// entries within [`SIGN_ENTRY_TOL`] of zero. `sigma` indexes the rows of
/// `a` directly.
pub fn is_odnp(a: &DMatrix<f64>, sigma: &SignVector) -> bool {
    let dim = a.nrows();
    assert_eq!(a.ncols(), dim, "matrix must be square");
    assert_eq!(sigma.len(), dim, "sign vector length must match");
    for j in 0..dim {
        for k in (j + 1)..dim {
            let v = 0.5 * (a[(j, k)] + a[(k, j)]);
            if v.abs() <= SIGN_ENTRY_TOL {
                continue;
            }
            if sigma.get(j) * sigma.get(k) * v > 0.0 {
                return false;
            }
        }
    }
    true
}

/// True when the whole homogeneous family is almost off-diagonal nonpositive
/// with respect to the `(n+1)`-long homogeneous sign vector.
pub fn check_family_odnp(family: &HomogeneousFamily, sigma_bar: &SignVector) -> bool {
    assert_eq!(sigma_bar.len(), family.n + 1, "sign vector length must be n+1");
    family.mats.iter().all(|m| is_odnp(m, sigma_bar))
}

/// Union-find with parities: tracks, for each element, the sign product
/// relative to its component root.
struct ParityDsu {
    parent: Vec<usize>,
    rank: Vec<u8>,
    /// Parity (0 = same sign, 1 = opposite sign) relative to the parent.
    parity: Vec<u8>,
}

impl ParityDsu {
    fn new(n: usize) -> Self {
        ParityDsu {
            parent: (0..n).collect(),
            rank: vec![0; n],
            parity: vec![0; n],
        }
    }

    /// Root of `x` and the parity of `x` relative to that root.
    fn find(&mut self, x: usize) -> (usize, u8) {
        let mut path = Vec::new();
        let mut node = x;
        while self.parent[node] != node {
            path.push(node);
            node = self.parent[node];
        }
        let root = node;
        // Path compression: recompute parities against the root.
        let mut parity_acc = 0u8;
        for &n in path.iter().rev() {
            parity_acc ^= self.parity[n];
            self.parent[n] = root;
            self.parity[n] = parity_acc;
        }
        let px = if self.parent[x] == x { 0 } else { self.parity[x] };
        (root, px)
    }

    /// Merges the components of `a` and `b`, demanding parity `par` between
    /// them. Returns false when they are already connected with the other
    /// parity.
    fn union(&mut self, a: usize, b: usize, par: u8) -> bool {
        let (ra, pa) = self.find(a);
        let (rb, pb) = self.find(b);
        if ra == rb {
            return pa ^ pb == par;
        }
        // Union by rank; set the parity of the attached root so that
        // parity(a) ^ parity(b) == par holds afterwards.
        let (hi, lo, p_lo) = if self.rank[ra] >= self.rank[rb] {
            (ra, rb, pa ^ pb ^ par)
        } else {
            (rb, ra, pa ^ pb ^ par)
        };
        self.parent[lo] = hi;
        self.parity[lo] = p_lo;
        if self.rank[hi] == self.rank[lo] {
            self.rank[hi] += 1;
        }
        true
    }
}

/// Searches for one sign vector making every matrix in the family almost
/// off-diagonal nonpositive.
///
/// The returned vector is canonical: scanning indices in order, the first
/// entry of every connected component of the coupling graph is +1 (so fully
/// decoupled families give the all-plus vector). On failure the
/// [`SignConflict`] pinpoints an entry with irreconcilable requirements.
pub fn find_uniform_sign_vector(
    mats: &[DMatrix<f64>],
) -> std::result::Result<SignVector, SignConflict> {
    assert!(!mats.is_empty(), "family must be non-empty");
    let dim = mats[0].nrows();
    for m in mats {
        assert_eq!(m.shape(), (dim, dim), "family members must share one shape");
    }

    // Per-pair demanded parity: 1 when the entry is positive (signs must
    // differ), 0 when negative (signs must agree).
    let mut dsu = ParityDsu::new(dim);
    for j in 0..dim {
        for k in (j + 1)..dim {
            let mut demand: Option<(u8, usize)> = None;
            for (i, m) in mats.iter().enumerate() {
                let v = 0.5 * (m[(j, k)] + m[(k, j)]);
                if v.abs() <= SIGN_ENTRY_TOL {
                    continue;
                }
                let par = if v > 0.0 { 1 } else { 0 };
                match demand {
                    None => demand = Some((par, i)),
                    Some((prev, first)) => {
                        if prev != par {
                            return Err(SignConflict {
                                pair: (j, k),
                                members: (first, i),
                            });
                        }
                    }
                }
            }
            if let Some((par, first)) = demand {
                if !dsu.union(j, k, par) {
                    return Err(SignConflict {
                        pair: (j, k),
                        members: (first, first),
                    });
                }
            }
        }
    }

    // Canonical assignment: first index of each component gets +1.
    let mut root_sign = vec![0i8; dim];
    let mut entries = vec![0i8; dim];
    for (idx, e) in entries.iter_mut().enumerate() {
        let (root, par) = dsu.find(idx);
        if root_sign[root] == 0 {
            root_sign[root] = if par == 0 { 1 } else { -1 };
        }
        *e = if par == 0 {
            root_sign[root]
        } else {
            -root_sign[root]
        };
    }
    let sigma = SignVector { entries };
    assert!(
        mats.iter().all(|m| is_odnp(m, &sigma)),
        "sign search returned a vector that does not certify the family"
    );
    Ok(sigma)
}

/// A closed halfspace `{x : normal·x + offset <= 0}`. Stored normalized so
/// the largest coefficient magnitude is 1 (membership is scale-invariant).
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl Halfspace {
    /// Signed evaluation `normal·x + offset` (nonpositive means inside).
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.normal.dot(x) + self.offset
    }
}

impl std::fmt::Display for Halfspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.normal.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.9}")?;
        }
        write!(f, "]·x + {:.9} <= 0", self.offset)
    }
}

/// The two state regions on which the sign-definite branches apply: inside
/// `plus` every selected cross coefficient is nonpositive with `σ`, inside
/// `minus` with `-σ`.
#[derive(Debug, Clone)]
pub struct AdmissibleRegions {
    pub plus: Vec<Halfspace>,
    pub minus: Vec<Halfspace>,
}

/// Which admissible region(s) a state belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionLabel {
    Plus,
    Minus,
    Both,
    Neither,
}

impl std::fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RegionLabel::Plus => "plus",
            RegionLabel::Minus => "minus",
            RegionLabel::Both => "both",
            RegionLabel::Neither => "neither",
        };
        f.write_str(s)
    }
}

/// Builds the admissible regions for a condensed family under a sign vector.
///
/// For every function `i` and control coordinate `k`, the plus region
/// requires `σ_k [x^T Nm_i + d_i^T]_k <= 0`; the minus region is its mirror
/// image. Rows that are identically zero give no constraint. The remaining
/// halfspaces are normalized, deduplicated (which also removes positive
/// multiples), and — when all offsets vanish — conically redundant rows are
/// removed with Farkas feasibility solves, so the returned lists are
/// irredundant generators of the same regions.
pub fn admissible_regions(
    gs: &[CondensedQuadratic],
    sigma: &SignVector,
) -> Result<AdmissibleRegions> {
    if gs.is_empty() {
        return Ok(AdmissibleRegions {
            plus: Vec::new(),
            minus: Vec::new(),
        });
    }
    let n = gs[0].control_quad.nrows();
    let n_x = gs[0].state_quad.nrows();
    if sigma.len() != n {
        return Err(Error::Dimension(format!(
            "sign vector has length {} but the stacked control dimension is {n}",
            sigma.len()
        )));
    }

    let mut raw: Vec<Halfspace> = Vec::new();
    for g in gs {
        if g.control_quad.nrows() != n || g.state_quad.nrows() != n_x {
            return Err(Error::Dimension(
                "condensed family members disagree on dimensions".into(),
            ));
        }
        for k in 0..n {
            let sk = sigma.get(k);
            let normal = g.state_control.column(k) * sk;
            let offset = sk * g.control_lin[k];
            let scale = normal
                .iter()
                .fold(offset.abs(), |acc, v| acc.max(v.abs()));
            if scale <= SIGN_ENTRY_TOL {
                continue;
            }
            raw.push(Halfspace {
                normal: normal / scale,
                offset: offset / scale,
            });
        }
    }

    // Deduplicate: normalization already removed positive scalings.
    let mut plus: Vec<Halfspace> = Vec::new();
    for h in raw {
        let dup = plus.iter().any(|p| {
            (p.offset - h.offset).abs() <= SIGN_ENTRY_TOL
                && (&p.normal - &h.normal)
                    .iter()
                    .all(|v| v.abs() <= SIGN_ENTRY_TOL)
        });
        if !dup {
            plus.push(h);
        }
    }

    if plus.iter().all(|h| h.offset.abs() <= SIGN_ENTRY_TOL) {
        plus = prune_conically_redundant(plus);
    }

    let minus = plus
        .iter()
        .map(|h| Halfspace {
            normal: -&h.normal,
            offset: -h.offset,
        })
        .collect();
    Ok(AdmissibleRegions { plus, minus })
}

/// Removes halfspaces through the origin whose normals lie in the conic hull
/// of the remaining normals (such rows are implied by the others). Each
/// membership test is one small feasibility solve with the cone engine.
fn prune_conically_redundant(rows: Vec<Halfspace>) -> Vec<Halfspace> {
    if rows.len() < 2 {
        return rows;
    }
    let n_x = rows[0].normal.len();
    let mut kept: Vec<Halfspace> = rows;
    let mut i = 0;
    while i < kept.len() {
        if kept.len() < 2 {
            break;
        }
        let others: Vec<&Halfspace> = kept
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, h)| h)
            .collect();
        let mut prob = ConeProblem::new(others.len());
        for r in 0..n_x {
            let coeffs: Vec<f64> = others.iter().map(|h| h.normal[r]).collect();
            prob.push_eq(SparseRow::from_dense(&coeffs), kept[i].normal[r]);
        }
        for j in 0..others.len() {
            prob.push_nonneg(SparseRow::new(vec![j], vec![-1.0]), 0.0);
        }
        let sol = cone::solve(&prob, &SolverOptions::default());
        if sol.status == cone::SolveStatus::Optimal {
            kept.remove(i);
        } else {
            i += 1;
        }
    }
    kept
}

/// Classifies a state against the two regions with slack [`REGION_TOL`].
pub fn classify_state(x0: &DVector<f64>, regions: &AdmissibleRegions) -> RegionLabel {
    let in_plus = regions.plus.iter().all(|h| h.value(x0) <= REGION_TOL);
    let in_minus = regions.minus.iter().all(|h| h.value(x0) <= REGION_TOL);
    match (in_plus, in_minus) {
        (true, true) => RegionLabel::Both,
        (true, false) => RegionLabel::Plus,
        (false, true) => RegionLabel::Minus,
        (false, false) => RegionLabel::Neither,
    }
}

/// The halfspaces of each region that a state violates (empty for regions
/// containing it). Used to build precise diagnostics.
pub fn region_violations(
    x0: &DVector<f64>,
    regions: &AdmissibleRegions,
) -> (Vec<Halfspace>, Vec<Halfspace>) {
    let violated = |list: &[Halfspace]| {
        list.iter()
            .filter(|h| h.value(x0) > REGION_TOL)
            .cloned()
            .collect::<Vec<_>>()
    };
    (violated(&regions.plus), violated(&regions.minus))
}

/// First structural obstacle found when screening data for the
/// all-plus-sign shortcut, reported with the indices that witness it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StructureViolation {
    /// The discrete dynamics have a negative entry.
    SystemNotPositive,
    /// `[Q_i]_{jk} > 0`.
    StateQuadPositive { func: usize, row: usize, col: usize },
    /// `[R_i]_{jk} > 0` for `j != k`.
    ControlQuadOffDiagPositive { func: usize, row: usize, col: usize },
    /// `[S_i]_{jk} > 0`.
    CrossPositive { func: usize, row: usize, col: usize },
    /// `[q_i]_j > 0`.
    StateLinPositive { func: usize, idx: usize },
    /// `[r_i]_j > 0`.
    ControlLinPositive { func: usize, idx: usize },
}

impl std::fmt::Display for StructureViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StructureViolation::SystemNotPositive => {
                write!(f, "system matrices have a negative entry")
            }
            StructureViolation::StateQuadPositive { func, row, col } => write!(
                f,
                "function {func}: state quadratic entry ({row}, {col}) is positive"
            ),
            StructureViolation::ControlQuadOffDiagPositive { func, row, col } => write!(
                f,
                "function {func}: control quadratic off-diagonal entry ({row}, {col}) is positive"
            ),
            StructureViolation::CrossPositive { func, row, col } => write!(
                f,
                "function {func}: cross-term entry ({row}, {col}) is positive"
            ),
            StructureViolation::StateLinPositive { func, idx } => write!(
                f,
                "function {func}: state linear coefficient {idx} is positive"
            ),
            StructureViolation::ControlLinPositive { func, idx } => write!(
                f,
                "function {func}: control linear coefficient {idx} is positive"
            ),
        }
    }
}

/// Outcome of the positive-structure screen.
#[derive(Debug, Clone)]
pub struct PositiveStructureReport {
    pub holds: bool,
    pub violation: Option<StructureViolation>,
}

/// Screens a positive system with sign-structured costs: if the dynamics are
/// (entrywise) nonnegative within `system_tol` and every function has
/// nonpositive state quadratic, cross, and linear coefficients and
/// nonpositive off-diagonal control couplings, then the all-plus sign vector
/// certifies the whole family for every nonnegative initial state, no search
/// needed. Control-quadratic diagonals are unrestricted.
pub fn check_positive_structure(
    system: &crate::linsys::DiscreteLinearSystem,
    fs: &[crate::quadform::HorizonQuadratic],
    system_tol: f64,
) -> PositiveStructureReport {
    if !system.is_positive_within(system_tol) {
        return PositiveStructureReport {
            holds: false,
            violation: Some(StructureViolation::SystemNotPositive),
        };
    }
    for (i, f) in fs.iter().enumerate() {
        for r in 0..f.state_quad.nrows() {
            for c in 0..f.state_quad.ncols() {
                if f.state_quad[(r, c)] > 0.0 {
                    return PositiveStructureReport {
                        holds: false,
                        violation: Some(StructureViolation::StateQuadPositive {
                            func: i,
                            row: r,
                            col: c,
                        }),
                    };
                }
            }
        }
        for r in 0..f.control_quad.nrows() {
            for c in 0..f.control_quad.ncols() {
                if r != c && f.control_quad[(r, c)] > 0.0 {
                    return PositiveStructureReport {
                        holds: false,
                        violation: Some(StructureViolation::ControlQuadOffDiagPositive {
                            func: i,
                            row: r,
                            col: c,
                        }),
                    };
                }
            }
        }
        for r in 0..f.cross.nrows() {
            for c in 0..f.cross.ncols() {
                if f.cross[(r, c)] > 0.0 {
                    return PositiveStructureReport {
                        holds: false,
                        violation: Some(StructureViolation::CrossPositive {
                            func: i,
                            row: r,
                            col: c,
                        }),
                    };
                }
            }
        }
        for (j, &v) in f.state_lin.iter().enumerate() {
            if v > 0.0 {
                return PositiveStructureReport {
                    holds: false,
                    violation: Some(StructureViolation::StateLinPositive { func: i, idx: j }),
                };
            }
        }
        for (j, &v) in f.control_lin.iter().enumerate() {
            if v > 0.0 {
                return PositiveStructureReport {
                    holds: false,
                    violation: Some(StructureViolation::ControlLinPositive { func: i, idx: j }),
                };
            }
        }
    }
    PositiveStructureReport {
        holds: true,
        violation: None,
    }
}

/// Whether the *negation* of an almost off-diagonal nonpositive matrix is
/// also almost off-diagonal nonpositive under the same signs — true exactly
/// when all selected couplings vanish, i.e. the matrix is (numerically)
/// diagonal. It is an error to call this with a matrix the sign vector does
/// not certify.
pub fn diag_negation_check(p: &DMatrix<f64>, sigma_bar: &SignVector) -> Result<bool> {
    if !is_odnp(p, sigma_bar) {
        return Err(Error::InvalidArgument(
            "matrix is not almost off-diagonal nonpositive for the given signs".into(),
        ));
    }
    Ok(is_odnp(&(-p), sigma_bar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsys::{prediction_matrices, DiscreteLinearSystem};
    use crate::quadform::{
        assemble, condense, homogenize, Placement, QuadraticKind, StageSpec,
    };
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn sv(entries: &[i8]) -> SignVector {
        SignVector::new(entries.to_vec()).unwrap()
    }

    fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
        (&m + m.transpose()) * 0.5
    }

    /// Random family with a planted sign vector: entries `t σ_j σ_k`, t <= 0.
    fn planted_family(
        rng: &mut StdRng,
        dim: usize,
        members: usize,
        sigma: &SignVector,
    ) -> Vec<DMatrix<f64>> {
        (0..members)
            .map(|_| {
                let mut m = DMatrix::zeros(dim, dim);
                for j in 0..dim {
                    m[(j, j)] = rng.gen_range(-2.0..2.0);
                    for k in (j + 1)..dim {
                        if rng.gen_bool(0.6) {
                            let t = -rng.gen_range(0.0..2.0);
                            let v = t * sigma.get(j) * sigma.get(k);
                            m[(j, k)] = v;
                            m[(k, j)] = v;
                        }
                    }
                }
                m
            })
            .collect()
    }

    fn exhaustive_has_sign_vector(mats: &[DMatrix<f64>]) -> bool {
        let dim = mats[0].nrows();
        assert!(dim <= 16);
        // First sign fixed to +1: σ and -σ certify the same matrices.
        for bits in 0..(1u32 << (dim - 1)) {
            let mut entries = vec![1i8; dim];
            for (j, e) in entries.iter_mut().enumerate().skip(1) {
                if bits >> (j - 1) & 1 == 1 {
                    *e = -1;
                }
            }
            let s = sv(&entries);
            if mats.iter().all(|m| is_odnp(m, &s)) {
                return true;
            }
        }
        false
    }

    #[test]
    fn diagonal_matrices_accept_any_signs() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, -1.0, 0.5]));
        for entries in [[1, 1, 1], [1, -1, 1], [-1, -1, 1]] {
            assert!(is_odnp(&d, &sv(&entries)));
        }
    }

    #[test]
    fn positive_coupling_needs_opposite_signs() {
        let m = sym(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert!(!is_odnp(&m, &sv(&[1, 1])));
        assert!(is_odnp(&m, &sv(&[1, -1])));
    }

    #[test]
    fn tiny_couplings_are_ignored() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = 0.5e-12;
        m[(1, 0)] = 0.5e-12;
        assert!(is_odnp(&m, &sv(&[1, 1])));
    }

    #[test]
    fn search_returns_canonical_vector_on_reference_problem() {
        let sys = DiscreteLinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.9, -0.2, 0.0, 0.9]),
            DMatrix::from_row_slice(2, 2, &[0.2, -0.05, 0.0, 0.2]),
        )
        .unwrap();
        let pm = prediction_matrices(&sys, 2).unwrap();
        let cost = StageSpec {
            state_quad: Some(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])),
            placement: Placement::AllSteps,
            kind: QuadraticKind::Objective,
            ..Default::default()
        };
        let f = assemble(&cost, 2, 2, 2).unwrap();
        let g = condense(&f, &pm).unwrap();
        let sigma = find_uniform_sign_vector(std::slice::from_ref(&g.control_quad)).unwrap();
        assert_eq!(sigma.as_slice(), &[1, -1, 1, -1]);
    }

    #[test]
    fn fully_decoupled_family_gets_all_plus() {
        let d1 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -2.0, 0.3]));
        let d2 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 0.0, 4.0]));
        let sigma = find_uniform_sign_vector(&[d1, d2]).unwrap();
        assert_eq!(sigma.as_slice(), &[1, 1, 1]);
    }

    #[test]
    fn direct_disagreement_names_both_members() {
        let a = sym(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let b = sym(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]));
        let err = find_uniform_sign_vector(&[a, b]).unwrap_err();
        assert_eq!(err.pair, (0, 1));
        assert_eq!(err.members, (0, 1));
    }

    #[test]
    fn odd_positive_cycle_is_rejected() {
        // Three mutually positive couplings cannot be two-colored.
        let mut m = DMatrix::zeros(3, 3);
        for (j, k) in [(0, 1), (0, 2), (1, 2)] {
            m[(j, k)] = 1.0;
            m[(k, j)] = 1.0;
        }
        let err = find_uniform_sign_vector(std::slice::from_ref(&m)).unwrap_err();
        // The cycle closes on the lexicographically last processed edge.
        assert_eq!(err.pair, (1, 2));
        assert_eq!(err.members, (0, 0));
    }

    #[test]
    fn search_agrees_with_exhaustive_enumeration() {
        let mut rng = StdRng::seed_from_u64(51);
        let mut feasible_seen = 0;
        let mut infeasible_seen = 0;
        for trial in 0..200 {
            let dim = rng.gen_range(2..=12);
            let members = rng.gen_range(1..=4);
            let mats: Vec<DMatrix<f64>> = if trial % 2 == 0 {
                let entries: Vec<i8> =
                    (0..dim).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
                let sigma = sv(&entries);
                planted_family(&mut rng, dim, members, &sigma)
            } else {
                (0..members)
                    .map(|_| {
                        let mut m = DMatrix::zeros(dim, dim);
                        for j in 0..dim {
                            for k in (j + 1)..dim {
                                if rng.gen_bool(0.5) {
                                    let v = rng.gen_range(-1.0..1.0);
                                    m[(j, k)] = v;
                                    m[(k, j)] = v;
                                }
                            }
                        }
                        m
                    })
                    .collect()
            };
            let found = find_uniform_sign_vector(&mats);
            let exists = exhaustive_has_sign_vector(&mats);
            match found {
                Ok(sigma) => {
                    assert!(exists, "trial {trial}: search found a vector where none exists");
                    assert!(mats.iter().all(|m| is_odnp(m, &sigma)));
                    assert_eq!(sigma.get(0), 1.0, "canonical first entry");
                    feasible_seen += 1;
                }
                Err(conflict) => {
                    assert!(
                        !exists,
                        "trial {trial}: search reported {conflict} but enumeration found a vector"
                    );
                    infeasible_seen += 1;
                }
            }
        }
        assert!(feasible_seen > 50 && infeasible_seen > 20);
    }

    #[test]
    fn family_check_matches_per_member_checks() {
        let mut rng = StdRng::seed_from_u64(52);
        for _ in 0..50 {
            let n = rng.gen_range(1..6);
            let entries: Vec<i8> =
                (0..=n).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
            let sigma_bar = sv(&entries);
            let mats = planted_family(&mut rng, n + 1, 3, &sigma_bar);
            let family = HomogeneousFamily::from_matrices(mats.clone()).unwrap();
            assert!(check_family_odnp(&family, &sigma_bar));
            // Breaking one coupling breaks the family check.
            let mut broken = mats;
            broken[1][(0, n)] = sigma_bar.get(0) * sigma_bar.get(n) * 0.7;
            broken[1][(n, 0)] = broken[1][(0, n)];
            let family2 = HomogeneousFamily::from_matrices(broken).unwrap();
            assert!(!check_family_odnp(&family2, &sigma_bar));
        }
    }

    /// Builds the condensed reference family: cross state cost on a
    /// two-state system over two steps, plus pure-control annulus rows that
    /// contribute no halfspaces.
    fn reference_condensed() -> Vec<crate::quadform::CondensedQuadratic> {
        let sys = DiscreteLinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.9, -0.2, 0.0, 0.9]),
            DMatrix::from_row_slice(2, 2, &[0.2, -0.05, 0.0, 0.2]),
        )
        .unwrap();
        let pm = prediction_matrices(&sys, 2).unwrap();
        let mut gs = Vec::new();
        let cost = StageSpec {
            state_quad: Some(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])),
            placement: Placement::AllSteps,
            kind: QuadraticKind::Objective,
            ..Default::default()
        };
        gs.push(condense(&assemble(&cost, 2, 2, 2).unwrap(), &pm).unwrap());
        for step in 0..2 {
            for (sign, offset) in [(-1.0, 0.2), (1.0, -0.5)] {
                let spec = StageSpec {
                    control_quad: Some(DMatrix::identity(2, 2) * sign),
                    constant: offset,
                    placement: Placement::Step(step),
                    ..Default::default()
                };
                gs.push(condense(&assemble(&spec, 2, 2, 2).unwrap(), &pm).unwrap());
            }
        }
        let total = StageSpec {
            control_quad: Some(DMatrix::identity(2, 2)),
            constant: -2.0 / 3.0,
            placement: Placement::AllSteps,
            ..Default::default()
        };
        gs.push(condense(&assemble(&total, 2, 2, 2).unwrap(), &pm).unwrap());
        gs
    }

    #[test]
    fn reference_regions_prune_to_two_halfspaces() {
        let gs = reference_condensed();
        let sigma = sv(&[1, -1, 1, -1]);
        let regions = admissible_regions(&gs, &sigma).unwrap();
        assert_eq!(regions.plus.len(), 2, "plus region: {:?}", regions.plus);
        assert_eq!(regions.minus.len(), 2);

        // Expected normals, up to the stored normalization: (0, 1) from
        // column 0 and -(col 1)/max from column 1 of the cross matrix.
        let nm = &gs[0].state_control;
        let expect_a = DVector::from_vec(vec![0.0, 1.0]);
        let col1 = nm.column(1).into_owned();
        let scale = col1.amax();
        let expect_b = -col1 / scale;
        for expect in [expect_a, expect_b] {
            assert!(
                regions.plus.iter().any(|h| (&h.normal - &expect)
                    .iter()
                    .all(|v| v.abs() < 1e-9)
                    && h.offset.abs() < 1e-12),
                "missing halfspace with normal {expect:?}"
            );
        }
        // Minus region is the exact mirror.
        for (hp, hm) in regions.plus.iter().zip(&regions.minus) {
            assert!((&hp.normal + &hm.normal).iter().all(|v| v.abs() == 0.0));
            assert_eq!(hp.offset, -hm.offset);
        }
    }

    #[test]
    fn reference_state_classifications() {
        let gs = reference_condensed();
        let sigma = sv(&[1, -1, 1, -1]);
        let regions = admissible_regions(&gs, &sigma).unwrap();
        let classify = |x: [f64; 2]| classify_state(&DVector::from_vec(x.to_vec()), &regions);
        assert_eq!(classify([0.0, 0.0]), RegionLabel::Both);
        assert_eq!(classify([0.0, 0.1]), RegionLabel::Minus);
        assert_eq!(classify([0.0, -0.1]), RegionLabel::Plus);
        assert_eq!(classify([1.0, 0.5]), RegionLabel::Neither);
        let (pv, mv) = region_violations(&DVector::from_vec(vec![1.0, 0.5]), &regions);
        assert!(!pv.is_empty() && !mv.is_empty());
    }

    #[test]
    fn pure_control_families_constrain_nothing() {
        let gs = &reference_condensed()[1..]; // constraints only
        let sigma = sv(&[1, -1, 1, -1]);
        let regions = admissible_regions(gs, &sigma).unwrap();
        assert!(regions.plus.is_empty());
        assert!(regions.minus.is_empty());
        assert_eq!(
            classify_state(&DVector::from_vec(vec![5.0, -3.0]), &regions),
            RegionLabel::Both
        );
    }

    #[test]
    fn redundant_zero_offset_rows_are_pruned() {
        let h = |n: &[f64]| Halfspace {
            normal: DVector::from_row_slice(n),
            offset: 0.0,
        };
        let has = |kept: &[Halfspace], n: [f64; 2]| {
            kept.iter()
                .any(|k| (k.normal[0] - n[0]).abs() <= 1e-12 && (k.normal[1] - n[1]).abs() <= 1e-12)
        };

        // (1, 1) = 1*(1, 0) + 1*(0, 1) is the unique redundant row here.
        let rows = vec![h(&[1.0, 0.0]), h(&[0.0, 1.0]), h(&[1.0, 1.0])];
        let kept = prune_conically_redundant(rows);
        assert_eq!(kept.len(), 2);
        assert!(has(&kept, [1.0, 0.0]) && has(&kept, [0.0, 1.0]));

        // With (-1, 0) added the cone becomes the closed upper halfplane:
        // (0, 1) and (1, 1) each generate the other together with the axis
        // rays, so exactly one of them must go while both axis rays stay.
        let rows = vec![h(&[1.0, 0.0]), h(&[0.0, 1.0]), h(&[1.0, 1.0]), h(&[-1.0, 0.0])];
        let kept = prune_conically_redundant(rows);
        assert_eq!(kept.len(), 3);
        assert!(has(&kept, [1.0, 0.0]) && has(&kept, [-1.0, 0.0]));
        assert!(has(&kept, [0.0, 1.0]) ^ has(&kept, [1.0, 1.0]));
    }

    #[test]
    fn classification_flips_with_negated_signs() {
        let mut rng = StdRng::seed_from_u64(53);
        let gs = reference_condensed();
        let sigma = sv(&[1, -1, 1, -1]);
        let regions = admissible_regions(&gs, &sigma).unwrap();
        let regions_neg = admissible_regions(&gs, &sigma.negated()).unwrap();
        for _ in 0..100 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let a = classify_state(&x, &regions);
            let b = classify_state(&x, &regions_neg);
            let flipped = match a {
                RegionLabel::Plus => RegionLabel::Minus,
                RegionLabel::Minus => RegionLabel::Plus,
                other => other,
            };
            assert_eq!(b, flipped);
        }
    }

    #[test]
    fn region_membership_equals_family_sign_certification() {
        // For states inside a region, the homogenized family must be
        // certified by the corresponding extended sign vector, and for
        // states outside it must not be.
        let mut rng = StdRng::seed_from_u64(54);
        let gs = reference_condensed();
        let sigma = sv(&[1, -1, 1, -1]);
        let regions = admissible_regions(&gs, &sigma).unwrap();
        let mut seen_plus = 0;
        let mut seen_minus = 0;
        let mut seen_neither = 0;
        for _ in 0..400 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let family = homogenize(&gs, &x).unwrap();
            let plus_ok = check_family_odnp(&family, &sigma.prepend_plus());
            let minus_ok = check_family_odnp(&family, &sigma.prepend_plus_negated());
            match classify_state(&x, &regions) {
                RegionLabel::Plus => {
                    assert!(plus_ok, "plus region state not certified at {x:?}");
                    seen_plus += 1;
                }
                RegionLabel::Minus => {
                    assert!(minus_ok, "minus region state not certified at {x:?}");
                    seen_minus += 1;
                }
                RegionLabel::Both => {
                    assert!(plus_ok && minus_ok);
                }
                RegionLabel::Neither => {
                    // Strictly outside both: some coupling keeps the wrong
                    // sign either way (boundary slack aside).
                    let strictly_out = regions
                        .plus
                        .iter()
                        .any(|h| h.value(&x) > 1e-6)
                        && regions.minus.iter().any(|h| h.value(&x) > 1e-6);
                    if strictly_out {
                        assert!(!plus_ok && !minus_ok, "neither-state certified at {x:?}");
                        seen_neither += 1;
                    }
                }
            }
        }
        assert!(seen_plus > 10 && seen_minus > 10 && seen_neither > 10);
    }

    #[test]
    fn positive_structure_screen_accepts_and_pinpoints() {
        let sys = DiscreteLinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let good = StageSpec {
            state_quad: Some(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0])),
            control_quad: Some(DMatrix::from_row_slice(1, 1, &[5.0])), // diagonal free
            placement: Placement::AllSteps,
            kind: QuadraticKind::Objective,
            ..Default::default()
        };
        let f = assemble(&good, 3, 2, 1).unwrap();
        let report = check_positive_structure(&sys, std::slice::from_ref(&f), 0.0);
        assert!(report.holds);
        assert!(report.violation.is_none());

        let bad = StageSpec {
            state_quad: Some(DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.5, -1.0])),
            placement: Placement::AllSteps,
            ..Default::default()
        };
        let f2 = assemble(&bad, 3, 2, 1).unwrap();
        let report = check_positive_structure(&sys, &[f.clone(), f2], 0.0);
        assert!(!report.holds);
        match report.violation {
            Some(StructureViolation::StateQuadPositive { func: 1, .. }) => {}
            other => panic!("expected a state-quad violation on function 1, got {other:?}"),
        }

        let neg_sys = DiscreteLinearSystem::new(
            DMatrix::from_row_slice(1, 1, &[-0.5]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
        )
        .unwrap();
        let report = check_positive_structure(&neg_sys, &[], 0.0);
        assert_eq!(report.violation, Some(StructureViolation::SystemNotPositive));
    }

    #[test]
    fn negation_check_equals_diagonality() {
        let mut rng = StdRng::seed_from_u64(55);
        for _ in 0..200 {
            let dim = rng.gen_range(2..7);
            let entries: Vec<i8> =
                (0..dim).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
            let sigma = sv(&entries);
            let m = &planted_family(&mut rng, dim, 1, &sigma)[0];
            let diagonal = (0..dim).all(|j| {
                ((j + 1)..dim).all(|k| m[(j, k)].abs() <= SIGN_ENTRY_TOL)
            });
            assert_eq!(diag_negation_check(m, &sigma).unwrap(), diagonal);
        }
        // Precondition violation is an error, not a false.
        let bad = sym(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert!(diag_negation_check(&bad, &sv(&[1, 1])).is_err());
    }
}
