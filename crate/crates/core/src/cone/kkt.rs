//! Reduced KKT system for the interior-point method.
//!
//! Eliminating the cone block from the Newton system leaves the saddle
//! problem
//!
//! ```text
//! [ H  A^T ] [dx]   [r1']          H = G^T (W^2)^{-1} G
//! [ A   0  ] [dy] = [r2 ]
//! ```
//!
//! Variables that appear in exactly one second-order-cone block and in no
//! linear row couple only to that block's few variables, so they are
//! eliminated block-by-block before a dense Cholesky factorization of the
//! remaining (usually much smaller) global part. For moment relaxations the
//! off-diagonal entries are such local variables, which turns an
//! `O(nv^3)` factorization into one sized by the diagonal block.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3};

use super::SparseRow;

struct BlockStructure {
    /// Sorted distinct variables the block's three rows touch.
    vars: Vec<usize>,
    /// Each row as `(position-in-vars, coefficient)`.
    rows: [Vec<(usize, f64)>; 3],
    /// Positions (into `vars`) eliminated locally.
    loc: Vec<usize>,
    /// Positions kept in the global system.
    glob: Vec<usize>,
    /// Dense global index for every entry of `glob`.
    glob_dense: Vec<usize>,
}

pub(crate) struct KktSolver {
    nv: usize,
    eq: Vec<SparseRow>,
    nonneg: Vec<SparseRow>,
    blocks: Vec<BlockStructure>,
    global_of: Vec<Option<usize>>,
    globals: Vec<usize>,
    n_g: usize,
    // Per-factorization state.
    thetas: Vec<f64>,
    w2s: Vec<Matrix3<f64>>,
    w2_invs: Vec<Matrix3<f64>>,
    h_exact: DMatrix<f64>,
    block_c: Vec<DMatrix<f64>>,
    block_chol: Vec<Option<Cholesky<f64, Dyn>>>,
    global_chol: Option<Cholesky<f64, Dyn>>,
    /// Cached `H^{-1} a_j` for every equality row.
    hinv_at: Vec<DVector<f64>>,
    schur_chol: Option<Cholesky<f64, Dyn>>,
    schur_lu: Option<nalgebra::LU<f64, Dyn, Dyn>>,
}

const DELTA_BASE: f64 = 1e-8;

impl KktSolver {
    pub(crate) fn new(
        nv: usize,
        eq: &[SparseRow],
        nonneg: &[SparseRow],
        soc: &[[SparseRow; 3]],
    ) -> Self {
        // Count how each variable is used to decide local vs global.
        let mut in_linear = vec![false; nv];
        for row in eq.iter().chain(nonneg.iter()) {
            for &i in &row.idx {
                in_linear[i] = true;
            }
        }
        let mut soc_count = vec![0usize; nv];
        let mut block_vars: Vec<Vec<usize>> = Vec::with_capacity(soc.len());
        for rows in soc {
            let mut vars: Vec<usize> = rows.iter().flat_map(|r| r.idx.iter().copied()).collect();
            vars.sort_unstable();
            vars.dedup();
            for &v in &vars {
                soc_count[v] += 1;
            }
            block_vars.push(vars);
        }

        let mut global_of = vec![None; nv];
        let mut globals = Vec::new();
        for v in 0..nv {
            let local = !in_linear[v] && soc_count[v] == 1;
            if !local {
                global_of[v] = Some(globals.len());
                globals.push(v);
            }
        }
        // Isolated variables (no row at all) stay global so the regularized
        // factorization still covers them.
        let n_g = globals.len();

        let blocks = soc
            .iter()
            .zip(block_vars)
            .map(|(rows, vars)| {
                let pos_of = |v: usize| vars.binary_search(&v).unwrap();
                let rows = [0, 1, 2].map(|r| {
                    rows[r]
                        .idx
                        .iter()
                        .zip(&rows[r].val)
                        .map(|(&i, &a)| (pos_of(i), a))
                        .collect::<Vec<_>>()
                });
                let (mut loc, mut glob, mut glob_dense) = (Vec::new(), Vec::new(), Vec::new());
                for (p, &v) in vars.iter().enumerate() {
                    match global_of[v] {
                        None => loc.push(p),
                        Some(g) => {
                            glob.push(p);
                            glob_dense.push(g);
                        }
                    }
                }
                BlockStructure {
                    vars,
                    rows,
                    loc,
                    glob,
                    glob_dense,
                }
            })
            .collect::<Vec<_>>();

        let n_blocks = blocks.len();
        KktSolver {
            nv,
            eq: eq.to_vec(),
            nonneg: nonneg.to_vec(),
            blocks,
            global_of,
            globals,
            n_g,
            thetas: Vec::new(),
            w2s: Vec::new(),
            w2_invs: Vec::new(),
            h_exact: DMatrix::zeros(n_g, n_g),
            block_c: vec![DMatrix::zeros(0, 0); n_blocks],
            block_chol: (0..n_blocks).map(|_| None).collect(),
            global_chol: None,
            hinv_at: Vec::new(),
            schur_chol: None,
            schur_lu: None,
        }
    }

    /// Refactors for the given scalings: `thetas[i] = z_i / s_i` for each
    /// nonnegative row and `w2s[b]` / `w2_invs[b] = (W_b^2)^{±1}` for each
    /// cone block.
    pub(crate) fn factor(
        &mut self,
        thetas: Vec<f64>,
        w2s: Vec<Matrix3<f64>>,
        w2_invs: Vec<Matrix3<f64>>,
    ) -> bool {
        debug_assert_eq!(thetas.len(), self.nonneg.len());
        debug_assert_eq!(w2_invs.len(), self.blocks.len());

        self.h_exact.fill(0.0);
        for (row, &theta) in self.nonneg.iter().zip(&thetas) {
            for (a_pos, &i) in row.idx.iter().enumerate() {
                let gi = self.global_of[i].expect("linear-row variable is global");
                let ai = row.val[a_pos];
                for (b_pos, &j) in row.idx.iter().enumerate() {
                    let gj = self.global_of[j].expect("linear-row variable is global");
                    self.h_exact[(gi, gj)] += theta * ai * row.val[b_pos];
                }
            }
        }
        for (b, blk) in self.blocks.iter().enumerate() {
            let nb = blk.vars.len();
            let mut bmat: DMatrix<f64> = DMatrix::zeros(3, nb);
            for r in 0..3 {
                for &(p, a) in &blk.rows[r] {
                    bmat[(r, p)] += a;
                }
            }
            let w2 = DMatrix::from_fn(3, 3, |i, j| w2_invs[b][(i, j)]);
            let c: DMatrix<f64> = bmat.transpose() * w2 * bmat;
            for (pi, &gi) in blk.glob.iter().enumerate() {
                for (pj, &gj) in blk.glob.iter().enumerate() {
                    self.h_exact[(blk.glob_dense[pi], blk.glob_dense[pj])] += c[(gi, gj)];
                }
            }
            self.block_c[b] = c;
        }
        self.thetas = thetas;
        self.w2s = w2s;
        self.w2_invs = w2_invs;

        let mut delta = 0.0;
        let mut ok = false;
        for _ in 0..6 {
            if self.try_factor(delta) {
                ok = true;
                break;
            }
            delta = if delta == 0.0 { DELTA_BASE } else { delta * 100.0 };
        }
        if !ok {
            return false;
        }

        // Cache H^{-1} a_j and factor the equality Schur complement.
        self.hinv_at.clear();
        let p = self.eq.len();
        if p > 0 {
            let mut s = DMatrix::zeros(p, p);
            for row in &self.eq {
                let mut rhs = DVector::zeros(self.nv);
                row.scatter_add(1.0, rhs.as_mut_slice());
                self.hinv_at.push(self.h_solve(&rhs));
            }
            for (i, row) in self.eq.iter().enumerate() {
                for j in 0..p {
                    s[(i, j)] = row.dot(self.hinv_at[j].as_slice());
                }
            }
            self.schur_chol = Cholesky::new(s.clone());
            self.schur_lu = if self.schur_chol.is_none() {
                let lu = s.lu();
                if !lu.is_invertible() {
                    return false;
                }
                Some(lu)
            } else {
                None
            };
        }
        true
    }

    fn try_factor(&mut self, delta: f64) -> bool {
        for (b, blk) in self.blocks.iter().enumerate() {
            let nl = blk.loc.len();
            if nl == 0 {
                self.block_chol[b] = None;
                continue;
            }
            let mut cll = DMatrix::zeros(nl, nl);
            for (i, &pi) in blk.loc.iter().enumerate() {
                for (j, &pj) in blk.loc.iter().enumerate() {
                    cll[(i, j)] = self.block_c[b][(pi, pj)];
                }
                cll[(i, i)] += delta;
            }
            match Cholesky::new(cll) {
                Some(ch) => self.block_chol[b] = Some(ch),
                None => return false,
            }
        }

        let mut h_schur = self.h_exact.clone();
        for (b, blk) in self.blocks.iter().enumerate() {
            let (nl, ng) = (blk.loc.len(), blk.glob.len());
            if nl == 0 || ng == 0 {
                continue;
            }
            let mut clg = DMatrix::zeros(nl, ng);
            for (i, &pi) in blk.loc.iter().enumerate() {
                for (j, &pj) in blk.glob.iter().enumerate() {
                    clg[(i, j)] = self.block_c[b][(pi, pj)];
                }
            }
            let sol = self.block_chol[b].as_ref().unwrap().solve(&clg);
            let update = clg.transpose() * sol;
            for (i, &gi) in blk.glob_dense.iter().enumerate() {
                for (j, &gj) in blk.glob_dense.iter().enumerate() {
                    h_schur[(gi, gj)] -= update[(i, j)];
                }
            }
        }
        for i in 0..self.n_g {
            h_schur[(i, i)] += delta;
        }
        match Cholesky::new(h_schur) {
            Some(ch) => {
                self.global_chol = Some(ch);
                true
            }
            None => false,
        }
    }

    /// Solves `H x = r` using the factored (regularized) matrix.
    fn h_solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let mut r_g = DVector::zeros(self.n_g);
        for (g, &v) in self.globals.iter().enumerate() {
            r_g[g] = r[v];
        }
        // Forward-eliminate the local parts.
        let mut block_rl: Vec<DVector<f64>> = Vec::with_capacity(self.blocks.len());
        for (b, blk) in self.blocks.iter().enumerate() {
            let nl = blk.loc.len();
            if nl == 0 {
                block_rl.push(DVector::zeros(0));
                continue;
            }
            let rl = DVector::from_fn(nl, |i, _| r[blk.vars[blk.loc[i]]]);
            let yl = self.block_chol[b].as_ref().unwrap().solve(&rl);
            for (j, &pj) in blk.glob.iter().enumerate() {
                let mut acc = 0.0;
                for (i, &pi) in blk.loc.iter().enumerate() {
                    acc += self.block_c[b][(pj, pi)] * yl[i];
                }
                r_g[blk.glob_dense[j]] -= acc;
            }
            block_rl.push(rl);
        }

        let x_g = self.global_chol.as_ref().unwrap().solve(&r_g);

        let mut x = DVector::zeros(self.nv);
        for (g, &v) in self.globals.iter().enumerate() {
            x[v] = x_g[g];
        }
        for (b, blk) in self.blocks.iter().enumerate() {
            let nl = blk.loc.len();
            if nl == 0 {
                continue;
            }
            let mut rhs = block_rl[b].clone();
            for (i, &pi) in blk.loc.iter().enumerate() {
                for (j, &pj) in blk.glob.iter().enumerate() {
                    rhs[i] -= self.block_c[b][(pi, pj)] * x_g[blk.glob_dense[j]];
                }
            }
            let xl = self.block_chol[b].as_ref().unwrap().solve(&rhs);
            for (i, &pi) in blk.loc.iter().enumerate() {
                x[blk.vars[pi]] = xl[i];
            }
        }
        x
    }

    /// Exact (unregularized) `H x` for iterative refinement.
    fn apply_h(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.nv);
        for (row, &theta) in self.nonneg.iter().zip(&self.thetas) {
            let gx = row.dot(x.as_slice());
            row.scatter_add(theta * gx, y.as_mut_slice());
        }
        for (b, blk) in self.blocks.iter().enumerate() {
            let nb = blk.vars.len();
            for pi in 0..nb {
                let mut acc = 0.0;
                for pj in 0..nb {
                    acc += self.block_c[b][(pi, pj)] * x[blk.vars[pj]];
                }
                y[blk.vars[pi]] += acc;
            }
        }
        y
    }

    fn eq_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.eq.len(), |i, _| self.eq[i].dot(x.as_slice()))
    }

    fn eq_apply_t(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        for (row, &yi) in self.eq.iter().zip(y.iter()) {
            row.scatter_add(yi, out.as_mut_slice());
        }
    }

    fn schur_solve(&self, t: &DVector<f64>) -> DVector<f64> {
        if let Some(ch) = &self.schur_chol {
            ch.solve(t)
        } else {
            self.schur_lu.as_ref().unwrap().solve(t).expect("Schur system solvable")
        }
    }

    fn saddle_base(&self, rx: &DVector<f64>, ry: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let x0 = self.h_solve(rx);
        if self.eq.is_empty() {
            return (x0, DVector::zeros(0));
        }
        let t = self.eq_apply(&x0) - ry;
        let dy = self.schur_solve(&t);
        let mut dx = x0;
        for (j, col) in self.hinv_at.iter().enumerate() {
            dx.axpy(-dy[j], col, 1.0);
        }
        (dx, dy)
    }

    /// Solves the saddle system with two rounds of iterative refinement
    /// against the exact (unregularized) operator.
    pub(crate) fn saddle_solve(
        &self,
        rx: &DVector<f64>,
        ry: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let (mut dx, mut dy) = self.saddle_base(rx, ry);
        for _ in 0..2 {
            let mut res_x = rx - self.apply_h(&dx);
            let minus_dy = -&dy;
            self.eq_apply_t(&minus_dy, &mut res_x);
            let res_y = ry - self.eq_apply(&dx);
            let (cx, cy) = self.saddle_base(&res_x, &res_y);
            dx += cx;
            dy += cy;
        }
        (dx, dy)
    }

    pub(crate) fn theta(&self, i: usize) -> f64 {
        self.thetas[i]
    }

    pub(crate) fn w2(&self, b: usize) -> &Matrix3<f64> {
        &self.w2s[b]
    }

    pub(crate) fn w2_inv(&self, b: usize) -> &Matrix3<f64> {
        &self.w2_invs[b]
    }
}
