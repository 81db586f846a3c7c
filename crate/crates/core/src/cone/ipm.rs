//! Homogeneous self-dual embedding with Nesterov-Todd scaled
//! predictor-corrector steps.
//!
//! The embedding tracks `(x, y, z, s, tau, kappa)` and drives the residuals
//!
//! ```text
//! rx = A^T y + G^T z + c tau        rz = G x + s - h tau
//! ry = A x - b tau                  rt = c·x + b·y + h·z + kappa
//! ```
//!
//! to zero while keeping `s, z` in the cone and `tau, kappa > 0`. A point
//! with small scaled residuals yields an optimal pair `(x, y, z)/tau`;
//! convergence with `tau -> 0` yields an infeasibility or unboundedness
//! certificate instead.

use nalgebra::Vector3;

use super::kkt::KktSolver;
use super::soc;
use super::{ConeProblem, ConeSolution, SolveStatus, SolverOptions};

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

struct Workspace<'a> {
    prob: &'a ConeProblem,
    nv: usize,
    p: usize,
    l: usize,
    q: usize,
    m: usize,
    b: Vec<f64>,
    h: Vec<f64>,
    norm_b: f64,
    norm_h: f64,
    norm_c: f64,
}

impl<'a> Workspace<'a> {
    fn new(prob: &'a ConeProblem) -> Self {
        let l = prob.nonneg.len();
        let q = prob.soc.len();
        let m = l + 3 * q;
        let mut h = vec![0.0; m];
        h[..l].copy_from_slice(&prob.nonneg_rhs);
        for (bi, rhs) in prob.soc_rhs.iter().enumerate() {
            h[l + 3 * bi..l + 3 * bi + 3].copy_from_slice(rhs);
        }
        let b = prob.eq_rhs.clone();
        Workspace {
            prob,
            nv: prob.num_vars,
            p: prob.eq.len(),
            l,
            q,
            m,
            norm_b: norm_inf(&b),
            norm_h: norm_inf(&h),
            norm_c: norm_inf(&prob.objective),
            b,
            h,
        }
    }

    fn g_apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.prob.nonneg.iter().enumerate() {
            out[i] = row.dot(x);
        }
        for (bi, rows) in self.prob.soc.iter().enumerate() {
            for r in 0..3 {
                out[self.l + 3 * bi + r] = rows[r].dot(x);
            }
        }
    }

    fn g_apply_t_add(&self, z: &[f64], coef: f64, out: &mut [f64]) {
        for (i, row) in self.prob.nonneg.iter().enumerate() {
            row.scatter_add(coef * z[i], out);
        }
        for (bi, rows) in self.prob.soc.iter().enumerate() {
            for r in 0..3 {
                rows[r].scatter_add(coef * z[self.l + 3 * bi + r], out);
            }
        }
    }

    fn a_apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.prob.eq.iter().enumerate() {
            out[i] = row.dot(x);
        }
    }

    fn a_apply_t_add(&self, y: &[f64], coef: f64, out: &mut [f64]) {
        for (i, row) in self.prob.eq.iter().enumerate() {
            row.scatter_add(coef * y[i], out);
        }
    }

    fn soc_part(&self, v: &[f64], bi: usize) -> [f64; 3] {
        let o = self.l + 3 * bi;
        [v[o], v[o + 1], v[o + 2]]
    }
}

/// Per-iteration Nesterov-Todd scaling data for the whole cone.
struct Scalings {
    /// `sqrt(s_i / z_i)` per nonnegative entry.
    w_lin: Vec<f64>,
    /// `sqrt(s_i z_i)` per nonnegative entry.
    lambda_lin: Vec<f64>,
    socs: Vec<soc::NtScaling>,
}

impl Scalings {
    /// Applies the full scaling matrix `W` to a cone-sized vector.
    fn w_apply(&self, ws: &Workspace, v: &[f64], out: &mut [f64]) {
        for i in 0..ws.l {
            out[i] = self.w_lin[i] * v[i];
        }
        for (bi, sc) in self.socs.iter().enumerate() {
            let part = ws.soc_part(v, bi);
            let t = soc::apply(&sc.w, &part);
            out[ws.l + 3 * bi..ws.l + 3 * bi + 3].copy_from_slice(&t);
        }
    }

    /// Recovers `ds = W (v - W dz)` from the eliminated cone equation.
    fn ds_from(&self, ws: &Workspace, v: &[f64], dz: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; ws.m];
        self.w_apply(ws, dz, &mut t);
        for i in 0..ws.m {
            t[i] = v[i] - t[i];
        }
        let mut ds = vec![0.0; ws.m];
        self.w_apply(ws, &t, &mut ds);
        ds
    }
}

/// Largest step keeping `(s, z, tau, kappa)` in the closed cone.
#[allow(clippy::too_many_arguments)]
fn max_step(
    ws: &Workspace,
    s: &[f64],
    ds: &[f64],
    z: &[f64],
    dz: &[f64],
    tau: f64,
    dtau: f64,
    kappa: f64,
    dkappa: f64,
) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..ws.l {
        if ds[i] < 0.0 {
            alpha = alpha.min(-s[i] / ds[i]);
        }
        if dz[i] < 0.0 {
            alpha = alpha.min(-z[i] / dz[i]);
        }
    }
    for bi in 0..ws.q {
        alpha = alpha.min(soc::step_to_boundary(
            &ws.soc_part(s, bi),
            &ws.soc_part(ds, bi),
        ));
        alpha = alpha.min(soc::step_to_boundary(
            &ws.soc_part(z, bi),
            &ws.soc_part(dz, bi),
        ));
    }
    if dtau < 0.0 {
        alpha = alpha.min(-tau / dtau);
    }
    if dkappa < 0.0 {
        alpha = alpha.min(-kappa / dkappa);
    }
    alpha
}

/// Applies the Newton matrix `[0 A^T G^T; A 0 0; G 0 -W^2]`.
fn k_apply(
    ws: &Workspace,
    kkt: &KktSolver,
    u1: &[f64],
    u2: &[f64],
    u3: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut v1 = vec![0.0; u1.len()];
    ws.a_apply_t_add(u2, 1.0, &mut v1);
    ws.g_apply_t_add(u3, 1.0, &mut v1);
    let mut v2 = vec![0.0; u2.len()];
    ws.a_apply(u1, &mut v2);
    let mut v3 = vec![0.0; u3.len()];
    ws.g_apply(u1, &mut v3);
    for i in 0..ws.l {
        v3[i] -= u3[i] / kkt.theta(i);
    }
    for bi in 0..ws.q {
        let part = ws.soc_part(u3, bi);
        let t = kkt.w2(bi) * Vector3::new(part[0], part[1], part[2]);
        let o = ws.l + 3 * bi;
        for r in 0..3 {
            v3[o + r] -= t[r];
        }
    }
    (v1, v2, v3)
}

/// Solves the reduced Newton system
/// `[0 A^T G^T; A 0 0; G 0 -W^2] (u1,u2,u3) = (p1,p2,p3)`, with iterative
/// refinement against the exact operator to survive the ill-conditioning of
/// `W^2` near convergence. The last element is the infinity norm of the
/// remaining residual, so callers can reject directions that lost accuracy.
fn k_solve(
    ws: &Workspace,
    kkt: &KktSolver,
    p1: &[f64],
    p2: &[f64],
    p3: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
    let (mut u1, mut u2, mut u3) = k_solve_once(ws, kkt, p1, p2, p3);
    let scale = norm_inf(p1).max(norm_inf(p2)).max(norm_inf(p3)).max(1.0);
    let mut err = f64::INFINITY;
    for round in 0..3 {
        let (v1, v2, v3) = k_apply(ws, kkt, &u1, &u2, &u3);
        let e1: Vec<f64> = (0..p1.len()).map(|i| p1[i] - v1[i]).collect();
        let e2: Vec<f64> = (0..p2.len()).map(|i| p2[i] - v2[i]).collect();
        let e3: Vec<f64> = (0..p3.len()).map(|i| p3[i] - v3[i]).collect();
        err = norm_inf(&e1).max(norm_inf(&e2)).max(norm_inf(&e3));
        if err <= 1e-14 * scale || round == 2 {
            break;
        }
        let (d1, d2, d3) = k_solve_once(ws, kkt, &e1, &e2, &e3);
        for i in 0..u1.len() {
            u1[i] += d1[i];
        }
        for i in 0..u2.len() {
            u2[i] += d2[i];
        }
        for i in 0..u3.len() {
            u3[i] += d3[i];
        }
    }
    (u1, u2, u3, err)
}

fn k_solve_once(
    ws: &Workspace,
    kkt: &KktSolver,
    p1: &[f64],
    p2: &[f64],
    p3: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rxp = p1.to_vec();
    for (i, row) in ws.prob.nonneg.iter().enumerate() {
        row.scatter_add(kkt.theta(i) * p3[i], &mut rxp);
    }
    for (bi, rows) in ws.prob.soc.iter().enumerate() {
        let part = ws.soc_part(p3, bi);
        let t = kkt.w2_inv(bi) * Vector3::new(part[0], part[1], part[2]);
        for r in 0..3 {
            rows[r].scatter_add(t[r], &mut rxp);
        }
    }
    let (dx, dy) = kkt.saddle_solve(
        &nalgebra::DVector::from_column_slice(&rxp),
        &nalgebra::DVector::from_column_slice(p2),
    );
    let dx: Vec<f64> = dx.as_slice().to_vec();
    let dy: Vec<f64> = dy.as_slice().to_vec();

    let mut gx = vec![0.0; ws.m];
    ws.g_apply(&dx, &mut gx);
    let mut dz = vec![0.0; ws.m];
    for i in 0..ws.l {
        dz[i] = kkt.theta(i) * (gx[i] - p3[i]);
    }
    for bi in 0..ws.q {
        let g = ws.soc_part(&gx, bi);
        let pp = ws.soc_part(p3, bi);
        let t = kkt.w2_inv(bi) * Vector3::new(g[0] - pp[0], g[1] - pp[1], g[2] - pp[2]);
        dz[ws.l + 3 * bi..ws.l + 3 * bi + 3].copy_from_slice(&[t[0], t[1], t[2]]);
    }
    (dx, dy, dz)
}

/// The lowest-residual iterate seen so far, kept so that a late numerical
/// breakdown (the KKT system has condition ~1/mu^2 near convergence) can
/// still return a usable answer.
struct BestIterate {
    metric: f64,
    pres: f64,
    dres: f64,
    relgap: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    tau: f64,
}

/// Exit used when the iteration can no longer make progress. Returns the
/// best iterate as optimal at reduced accuracy when it meets relaxed
/// tolerances, and as a numerical failure otherwise.
fn stall_finish(
    ws: &Workspace,
    opts: &SolverOptions,
    c: &[f64],
    best: Option<BestIterate>,
    current: (&[f64], &[f64], &[f64], f64),
    iterations: usize,
    reason: &str,
) -> ConeSolution {
    let relaxed_feas = opts.feas_tol.max(1e-4);
    let relaxed_gap = opts.gap_tol.max(5e-5);
    let (x, y, z, tau, status, message) = match best {
        Some(b) => {
            let ok =
                b.pres <= relaxed_feas && b.dres <= relaxed_feas && b.relgap <= relaxed_gap;
            if ok {
                (
                    b.x,
                    b.y,
                    b.z,
                    b.tau,
                    SolveStatus::Optimal,
                    format!("reduced accuracy: {reason}"),
                )
            } else {
                (
                    b.x,
                    b.y,
                    b.z,
                    b.tau,
                    SolveStatus::NumericalFailure,
                    format!("{reason}; best iterate kept"),
                )
            }
        }
        None => (
            current.0.to_vec(),
            current.1.to_vec(),
            current.2.to_vec(),
            current.3,
            SolveStatus::NumericalFailure,
            reason.to_string(),
        ),
    };
    let tau = if tau.is_finite() && tau > 0.0 { tau } else { 1.0 };
    let xs: Vec<f64> = x.iter().map(|&v| v / tau).collect();
    let ys: Vec<f64> = y.iter().map(|&v| v / tau).collect();
    let (nn, sd) = split_duals(ws, &z, 1.0 / tau);
    let obj = dot(c, &xs);
    finish(ws, status, xs, ys, nn, sd, obj, iterations, Some(message))
}

fn split_duals(ws: &Workspace, z: &[f64], scale: f64) -> (Vec<f64>, Vec<[f64; 3]>) {
    let nonneg = z[..ws.l].iter().map(|&v| v * scale).collect();
    let socd = (0..ws.q)
        .map(|bi| {
            let p = ws.soc_part(z, bi);
            [p[0] * scale, p[1] * scale, p[2] * scale]
        })
        .collect();
    (nonneg, socd)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    ws: &Workspace,
    status: SolveStatus,
    x: Vec<f64>,
    eq_duals: Vec<f64>,
    nonneg_duals: Vec<f64>,
    soc_duals: Vec<[f64; 3]>,
    objective: f64,
    iterations: usize,
    message: Option<String>,
) -> ConeSolution {
    let (primal_residual, dual_residual, gap) =
        super::residuals(ws.prob, &x, &eq_duals, &nonneg_duals, &soc_duals);
    ConeSolution {
        status,
        x,
        eq_duals,
        nonneg_duals,
        soc_duals,
        objective,
        primal_residual,
        dual_residual,
        gap,
        iterations,
        message,
    }
}

pub(crate) fn solve(prob: &ConeProblem, opts: &SolverOptions) -> ConeSolution {
    let ws = Workspace::new(prob);
    let (nv, p, l, q, m) = (ws.nv, ws.p, ws.l, ws.q, ws.m);
    let c = &prob.objective;

    if m == 0 {
        return finish(
            &ws,
            SolveStatus::NumericalFailure,
            vec![0.0; nv],
            vec![0.0; p],
            Vec::new(),
            Vec::new(),
            f64::NAN,
            0,
            Some("problem has no cone constraints".into()),
        );
    }

    let nu = (l + q) as f64;
    let mut x = vec![0.0; nv];
    let mut y = vec![0.0; p];
    let mut s = vec![0.0; m];
    let mut z = vec![0.0; m];
    for i in 0..l {
        s[i] = 1.0;
        z[i] = 1.0;
    }
    for bi in 0..q {
        s[l + 3 * bi] = 1.0;
        z[l + 3 * bi] = 1.0;
    }
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let mut kkt = KktSolver::new(nv, &prob.eq, &prob.nonneg, &prob.soc);
    let mut iterations = 0usize;
    let mut best: Option<BestIterate> = None;

    loop {
        // Unscaled residuals of the embedding.
        let mut rx: Vec<f64> = c.iter().map(|&v| v * tau).collect();
        ws.a_apply_t_add(&y, 1.0, &mut rx);
        ws.g_apply_t_add(&z, 1.0, &mut rx);

        let mut ry = vec![0.0; p];
        ws.a_apply(&x, &mut ry);
        for (r, &bi) in ry.iter_mut().zip(&ws.b) {
            *r -= bi * tau;
        }

        let mut rz = vec![0.0; m];
        ws.g_apply(&x, &mut rz);
        for i in 0..m {
            rz[i] += s[i] - ws.h[i] * tau;
        }

        let cx = dot(c, &x);
        let by = dot(&ws.b, &y);
        let hz = dot(&ws.h, &z);
        let rtau = cx + by + hz + kappa;

        if !(cx.is_finite() && by.is_finite() && hz.is_finite() && tau > 0.0 && kappa > 0.0) {
            return stall_finish(
                &ws,
                opts,
                c,
                best,
                (&x, &y, &z, tau),
                iterations,
                "iterates became non-finite",
            );
        }

        let pres = (norm_inf(&ry) / (1.0 + ws.norm_b)).max(norm_inf(&rz) / (1.0 + ws.norm_h)) / tau;
        let dres = norm_inf(&rx) / (1.0 + ws.norm_c) / tau;
        let pobj = cx / tau;
        let dobj = -(by + hz) / tau;
        let dgap = pobj - dobj;
        let relgap = dgap.abs() / 1.0f64.max(pobj.abs().min(dobj.abs()));
        let gap_ok = relgap <= opts.gap_tol;

        let metric = pres.max(dres).max(relgap);
        if metric.is_finite() && best.as_ref().is_none_or(|b| metric < b.metric) {
            best = Some(BestIterate {
                metric,
                pres,
                dres,
                relgap,
                x: x.clone(),
                y: y.clone(),
                z: z.clone(),
                tau,
            });
        }

        log::debug!(
            "iter {iterations}: pres {pres:.3e} dres {dres:.3e} gap {dgap:.3e} tau {tau:.3e} kappa {kappa:.3e}"
        );

        if pres <= opts.feas_tol && dres <= opts.feas_tol && gap_ok {
            let xs: Vec<f64> = x.iter().map(|&v| v / tau).collect();
            let ys: Vec<f64> = y.iter().map(|&v| v / tau).collect();
            let (nn, sd) = split_duals(&ws, &z, 1.0 / tau);
            let obj = dot(c, &xs);
            return finish(&ws, SolveStatus::Optimal, xs, ys, nn, sd, obj, iterations, None);
        }

        // Farkas certificate of primal infeasibility: duals with
        // A^T y + G^T z ~ 0 and b·y + h·z < 0.
        if by + hz < 0.0 {
            let denom = -(by + hz);
            let mut atgz = rx.clone();
            for i in 0..nv {
                atgz[i] -= c[i] * tau;
            }
            if norm_inf(&atgz) <= opts.feas_tol * denom {
                let (nn, sd) = split_duals(&ws, &z, 1.0 / denom);
                return finish(
                    &ws,
                    SolveStatus::Infeasible,
                    vec![0.0; nv],
                    y.iter().map(|&v| v / denom).collect(),
                    nn,
                    sd,
                    f64::NAN,
                    iterations,
                    Some("primal infeasibility certificate found".into()),
                );
            }
        }
        // Improving-ray certificate of unboundedness: A x ~ 0,
        // G x + s ~ 0 with s in the cone and c·x < 0.
        if cx < 0.0 {
            let mut ax = vec![0.0; p];
            ws.a_apply(&x, &mut ax);
            let mut gxs = vec![0.0; m];
            ws.g_apply(&x, &mut gxs);
            for i in 0..m {
                gxs[i] += s[i];
            }
            if norm_inf(&ax).max(norm_inf(&gxs)) <= opts.feas_tol * (-cx) {
                let ray: Vec<f64> = x.iter().map(|&v| v / (-cx)).collect();
                return finish(
                    &ws,
                    SolveStatus::Unbounded,
                    ray,
                    vec![0.0; p],
                    vec![0.0; l],
                    vec![[0.0; 3]; q],
                    f64::NAN,
                    iterations,
                    Some("unboundedness certificate found".into()),
                );
            }
        }

        if iterations >= opts.max_iter {
            return stall_finish(
                &ws,
                opts,
                c,
                best,
                (&x, &y, &z, tau),
                iterations,
                &format!("iteration limit ({}) reached", opts.max_iter),
            );
        }

        let mu = (dot(&s, &z) + tau * kappa) / (nu + 1.0);

        // Nesterov-Todd scalings for the current iterate.
        let mut w_lin = Vec::with_capacity(l);
        let mut lambda_lin = Vec::with_capacity(l);
        let mut thetas = Vec::with_capacity(l);
        for i in 0..l {
            if s[i] <= 0.0 || z[i] <= 0.0 {
                return stall_finish(
                    &ws,
                    opts,
                    c,
                    best,
                    (&x, &y, &z, tau),
                    iterations,
                    "iterate left the cone interior",
                );
            }
            w_lin.push((s[i] / z[i]).sqrt());
            lambda_lin.push((s[i] * z[i]).sqrt());
            thetas.push(z[i] / s[i]);
        }
        let mut socs = Vec::with_capacity(q);
        let mut w2s = Vec::with_capacity(q);
        let mut w2_invs = Vec::with_capacity(q);
        for bi in 0..q {
            let sb = ws.soc_part(&s, bi);
            let zb = ws.soc_part(&z, bi);
            if !(soc::in_interior(&sb) && soc::in_interior(&zb)) {
                return stall_finish(
                    &ws,
                    opts,
                    c,
                    best,
                    (&x, &y, &z, tau),
                    iterations,
                    "iterate left the cone interior",
                );
            }
            let sc = soc::nt_scaling(&sb, &zb);
            w2s.push(sc.w2);
            w2_invs.push(sc.w2_inv);
            socs.push(sc);
        }
        let scal = Scalings {
            w_lin,
            lambda_lin,
            socs,
        };

        if !kkt.factor(thetas, w2s, w2_invs) {
            return stall_finish(
                &ws,
                opts,
                c,
                best,
                (&x, &y, &z, tau),
                iterations,
                "KKT factorization failed",
            );
        }

        // Shared second solve for the tau elimination.
        let neg_c: Vec<f64> = c.iter().map(|&v| -v).collect();
        let (w1, w2, w3, err_w) = k_solve(&ws, &kkt, &neg_c, &ws.b, &ws.h);
        let denom_dtau = dot(c, &w1) + dot(&ws.b, &w2) + dot(&ws.h, &w3) - kappa / tau;

        // Full lambda vector of the scaled point.
        let mut lambda = vec![0.0; m];
        lambda[..l].copy_from_slice(&scal.lambda_lin);
        for (bi, sc) in scal.socs.iter().enumerate() {
            lambda[l + 3 * bi..l + 3 * bi + 3].copy_from_slice(&sc.lambda);
        }

        // Affine predictor: aim at zero residuals and zero complementarity.
        let v_aff: Vec<f64> = lambda.iter().map(|&v| -v).collect();
        let bx: Vec<f64> = rx.iter().map(|&v| -v).collect();
        let by_r: Vec<f64> = ry.iter().map(|&v| -v).collect();
        let mut wv = vec![0.0; m];
        scal.w_apply(&ws, &v_aff, &mut wv);
        let bz: Vec<f64> = (0..m).map(|i| -rz[i] - wv[i]).collect();

        let (u1, u2, u3, _) = k_solve(&ws, &kkt, &bx, &by_r, &bz);
        let num_aff = -rtau - dot(c, &u1) - dot(&ws.b, &u2) - dot(&ws.h, &u3) + kappa;
        let dtau_aff = num_aff / denom_dtau;
        let dz_aff: Vec<f64> = (0..m).map(|i| u3[i] + dtau_aff * w3[i]).collect();
        let ds_aff = scal.ds_from(&ws, &v_aff, &dz_aff);
        let dkappa_aff = -kappa - (kappa / tau) * dtau_aff;

        let alpha_aff = max_step(
            &ws, &s, &ds_aff, &z, &dz_aff, tau, dtau_aff, kappa, dkappa_aff,
        )
        .min(1.0);

        // Mehrotra centering parameter from the affine progress.
        let mut num = (tau + alpha_aff * dtau_aff) * (kappa + alpha_aff * dkappa_aff);
        for i in 0..m {
            num += (s[i] + alpha_aff * ds_aff[i]) * (z[i] + alpha_aff * dz_aff[i]);
        }
        let rho = num / (dot(&s, &z) + tau * kappa);
        let sigma = rho.clamp(0.0, 1.0).powi(3);

        // Combined corrector step.
        let scale = 1.0 - sigma;
        let mut v_comb = vec![0.0; m];
        for i in 0..l {
            let corr = ds_aff[i] * dz_aff[i];
            v_comb[i] = (sigma * mu - corr) / lambda[i] - lambda[i];
        }
        for (bi, sc) in scal.socs.iter().enumerate() {
            let dst = soc::apply(&sc.w_inv, &ws.soc_part(&ds_aff, bi));
            let dzt = soc::apply(&sc.w, &ws.soc_part(&dz_aff, bi));
            let corr = soc::jordan_mul(&dst, &dzt);
            let rhs = [sigma * mu - corr[0], -corr[1], -corr[2]];
            let sol = soc::jordan_solve(&sc.lambda, &rhs);
            let o = l + 3 * bi;
            for r in 0..3 {
                v_comb[o + r] = sol[r] - sc.lambda[r];
            }
        }
        let bx2: Vec<f64> = rx.iter().map(|&v| -scale * v).collect();
        let by2: Vec<f64> = ry.iter().map(|&v| -scale * v).collect();
        let mut wv2 = vec![0.0; m];
        scal.w_apply(&ws, &v_comb, &mut wv2);
        let bz2: Vec<f64> = (0..m).map(|i| -scale * rz[i] - wv2[i]).collect();

        let (u1, u2, u3, err_u) = k_solve(&ws, &kkt, &bx2, &by2, &bz2);
        let dktau = sigma * mu - tau * kappa - dtau_aff * dkappa_aff;
        let num_c =
            -scale * rtau - dot(c, &u1) - dot(&ws.b, &u2) - dot(&ws.h, &u3) - dktau / tau;
        let dtau = num_c / denom_dtau;
        let dx: Vec<f64> = (0..nv).map(|i| u1[i] + dtau * w1[i]).collect();
        let dy: Vec<f64> = (0..p).map(|i| u2[i] + dtau * w2[i]).collect();
        let dz: Vec<f64> = (0..m).map(|i| u3[i] + dtau * w3[i]).collect();
        let ds = scal.ds_from(&ws, &v_comb, &dz);
        let dkappa = (dktau - kappa * dtau) / tau;

        let alpha_max = max_step(&ws, &s, &ds, &z, &dz, tau, dtau, kappa, dkappa);
        let alpha = (0.99 * alpha_max).min(1.0);
        log::trace!(
            "iter {iterations}: mu {mu:.3e} sigma {sigma:.3e} alpha_aff {alpha_aff:.3e} \
             alpha {alpha:.3e} tau {tau:.3e} kappa {kappa:.3e}"
        );

        if !alpha.is_finite() || alpha < 1e-10 {
            return stall_finish(
                &ws,
                opts,
                c,
                best,
                (&x, &y, &z, tau),
                iterations,
                "step length collapsed",
            );
        }

        // Reject directions that are grossly inconsistent with the Newton
        // system (refinement failed): stepping along them, even slightly,
        // can destroy a nearly converged iterate. Directions that are merely
        // noisy at the level of the current residuals still pass; the
        // best-iterate fallback covers the occasional bad step.
        let dir_err = err_u + dtau.abs() * err_w;
        let res_scale = norm_inf(&rx)
            .max(norm_inf(&ry))
            .max(norm_inf(&rz))
            .max(rtau.abs());
        if alpha * dir_err > 100.0 * res_scale + 1e-9 * (1.0 + ws.norm_h + ws.norm_b + ws.norm_c)
        {
            return stall_finish(
                &ws,
                opts,
                c,
                best,
                (&x, &y, &z, tau),
                iterations,
                "search direction lost accuracy",
            );
        }

        for i in 0..nv {
            x[i] += alpha * dx[i];
        }
        for i in 0..p {
            y[i] += alpha * dy[i];
        }
        for i in 0..m {
            s[i] += alpha * ds[i];
            z[i] += alpha * dz[i];
        }
        tau += alpha * dtau;
        kappa += alpha * dkappa;
        iterations += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::super::{residuals, solve, ConeProblem, SolveStatus, SolverOptions, SparseRow};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    fn assert_certified_optimal(prob: &ConeProblem, sol: &super::super::ConeSolution) {
        assert_eq!(sol.status, SolveStatus::Optimal, "{:?}", sol.message);
        let (pr, dr, gap) = residuals(
            prob,
            &sol.x,
            &sol.eq_duals,
            &sol.nonneg_duals,
            &sol.soc_duals,
        );
        // Reported numbers must be exactly the recomputed ones.
        assert!((pr - sol.primal_residual).abs() <= 1e-12);
        assert!((dr - sol.dual_residual).abs() <= 1e-12);
        assert!((gap - sol.gap).abs() <= 1e-12);
        let scale = 1.0 + sol.objective.abs();
        assert!(pr <= 1e-6 * scale, "primal residual {pr}");
        assert!(dr <= 1e-6 * scale, "dual residual {dr}");
        assert!(gap <= 1e-6 * scale, "gap {gap}");
        for &zi in &sol.nonneg_duals {
            assert!(zi >= -1e-9);
        }
        for zb in &sol.soc_duals {
            assert!(zb[0] >= -1e-9);
            assert!(zb[0] * zb[0] - zb[1] * zb[1] - zb[2] * zb[2] >= -1e-7 * (1.0 + zb[0] * zb[0]));
        }
    }

    #[test]
    fn box_lp_reaches_the_corner() {
        let mut prob = ConeProblem::new(2);
        prob.objective = vec![-1.0, -1.0];
        prob.push_nonneg(SparseRow::new(vec![0], vec![1.0]), 1.0);
        prob.push_nonneg(SparseRow::new(vec![1], vec![1.0]), 2.0);
        prob.push_nonneg(SparseRow::new(vec![0], vec![-1.0]), 0.0);
        prob.push_nonneg(SparseRow::new(vec![1], vec![-1.0]), 0.0);
        let sol = solve(&prob, &opts());
        assert_certified_optimal(&prob, &sol);
        assert!((sol.objective + 3.0).abs() < 1e-7);
        assert!((sol.x[0] - 1.0).abs() < 1e-7);
        assert!((sol.x[1] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn equality_lp_puts_mass_on_the_free_coordinate() {
        let mut prob = ConeProblem::new(2);
        prob.objective = vec![1.0, 0.0];
        prob.push_eq(SparseRow::new(vec![0, 1], vec![1.0, 1.0]), 1.0);
        prob.push_nonneg(SparseRow::new(vec![0], vec![-1.0]), 0.0);
        prob.push_nonneg(SparseRow::new(vec![1], vec![-1.0]), 0.0);
        let sol = solve(&prob, &opts());
        assert_certified_optimal(&prob, &sol);
        assert!(sol.objective.abs() < 1e-7);
        assert!(sol.x[0].abs() < 1e-7);
        assert!((sol.x[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn contradictory_bounds_produce_a_farkas_certificate() {
        // x <= -1 and x >= 0 cannot hold together.
        let mut prob = ConeProblem::new(1);
        prob.push_nonneg(SparseRow::new(vec![0], vec![1.0]), -1.0);
        prob.push_nonneg(SparseRow::new(vec![0], vec![-1.0]), 0.0);
        let sol = solve(&prob, &opts());
        assert_eq!(sol.status, SolveStatus::Infeasible);
        // Certificate: z >= 0, G^T z ~ 0, h·z = -1.
        let z = &sol.nonneg_duals;
        assert!(z[0] >= -1e-9 && z[1] >= -1e-9);
        assert!((z[0] - z[1]).abs() <= 1e-6);
        assert!((-z[0] + 1.0).abs() <= 1e-6, "h.z = {}", -z[0]);
    }

    #[test]
    fn missing_upper_bound_is_reported_unbounded() {
        let mut prob = ConeProblem::new(1);
        prob.objective = vec![-1.0];
        prob.push_nonneg(SparseRow::new(vec![0], vec![-1.0]), 0.0);
        let sol = solve(&prob, &opts());
        assert_eq!(sol.status, SolveStatus::Unbounded);
        // Improving ray: c·x = -1, stays feasible for the inequality.
        assert!((sol.x[0] - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn cone_ball_minimization_hits_the_analytic_point() {
        // min x1 + x2  s.t. ||(x1, x2)|| <= 2: optimum -2*sqrt(2).
        let mut prob = ConeProblem::new(2);
        prob.objective = vec![1.0, 1.0];
        prob.push_soc(
            [
                SparseRow::empty(),
                SparseRow::new(vec![0], vec![-1.0]),
                SparseRow::new(vec![1], vec![-1.0]),
            ],
            [2.0, 0.0, 0.0],
        );
        let sol = solve(&prob, &opts());
        assert_certified_optimal(&prob, &sol);
        let expect = -2.0 * std::f64::consts::SQRT_2;
        assert!((sol.objective - expect).abs() < 1e-7, "{}", sol.objective);
        assert!((sol.x[0] + std::f64::consts::SQRT_2).abs() < 1e-6);
        assert!((sol.x[1] + std::f64::consts::SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn cone_bound_is_active_at_the_optimum() {
        // min -x1 s.t. ||(x1, x2)|| <= 1.
        let mut prob = ConeProblem::new(2);
        prob.objective = vec![-1.0, 0.0];
        prob.push_soc(
            [
                SparseRow::empty(),
                SparseRow::new(vec![0], vec![-1.0]),
                SparseRow::new(vec![1], vec![-1.0]),
            ],
            [1.0, 0.0, 0.0],
        );
        let sol = solve(&prob, &opts());
        assert_certified_optimal(&prob, &sol);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
        assert!(sol.x[1].abs() < 1e-6);
    }

    #[test]
    fn cone_membership_lp_distinguishes_inside_from_outside() {
        // Is t in cone{(1,0), (1,1)}? Solve for mu >= 0 with [a1 a2] mu = t.
        let build = |t: [f64; 2]| {
            let mut prob = ConeProblem::new(2);
            prob.push_eq(SparseRow::new(vec![0, 1], vec![1.0, 1.0]), t[0]);
            prob.push_eq(SparseRow::new(vec![1], vec![1.0]), t[1]);
            prob.push_nonneg(SparseRow::new(vec![0], vec![-1.0]), 0.0);
            prob.push_nonneg(SparseRow::new(vec![1], vec![-1.0]), 0.0);
            prob
        };
        let inside = solve(&build([2.0, 1.0]), &opts());
        assert_eq!(inside.status, SolveStatus::Optimal);
        assert!((inside.x[0] - 1.0).abs() < 1e-6);
        assert!((inside.x[1] - 1.0).abs() < 1e-6);

        let outside = solve(&build([-1.0, 0.0]), &opts());
        assert_eq!(outside.status, SolveStatus::Infeasible);
    }

    #[test]
    fn random_feasible_lps_are_self_certified() {
        let mut rng = StdRng::seed_from_u64(1001);
        for trial in 0..30 {
            let nv = rng.gen_range(3..8);
            let p = rng.gen_range(0..3.min(nv - 1));
            let xstar: Vec<f64> = (0..nv).map(|_| rng.gen_range(0.1..2.0)).collect();
            let mut prob = ConeProblem::new(nv);
            prob.objective = (0..nv).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for _ in 0..p {
                let coeffs: Vec<f64> = (0..nv).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let rhs: f64 = coeffs.iter().zip(&xstar).map(|(&a, &v)| a * v).sum();
                prob.push_eq(SparseRow::from_dense(&coeffs), rhs);
            }
            for (i, &xi) in xstar.iter().enumerate() {
                prob.push_nonneg(SparseRow::new(vec![i], vec![-1.0]), 0.0);
                prob.push_nonneg(SparseRow::new(vec![i], vec![1.0]), xi + 1.0);
            }
            let sol = solve(&prob, &opts());
            assert_certified_optimal(&prob, &sol);
            let _ = trial;
        }
    }

    #[test]
    fn random_feasible_socps_are_self_certified() {
        let mut rng = StdRng::seed_from_u64(1002);
        for _trial in 0..20 {
            let nv = rng.gen_range(2..7);
            let mut prob = ConeProblem::new(nv);
            prob.objective = (0..nv).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for i in 0..nv {
                prob.push_nonneg(SparseRow::new(vec![i], vec![-1.0]), 3.0);
                prob.push_nonneg(SparseRow::new(vec![i], vec![1.0]), 3.0);
            }
            for _ in 0..rng.gen_range(1..4) {
                let rows = [0, 1, 2].map(|_| {
                    let k = rng.gen_range(1..3);
                    let mut idx: Vec<usize> = (0..k).map(|_| rng.gen_range(0..nv)).collect();
                    idx.sort_unstable();
                    idx.dedup();
                    let val = idx.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
                    SparseRow { idx, val }
                });
                // Choose rhs so x = 0 is strictly feasible.
                let h1: f64 = rng.gen_range(-1.0..1.0);
                let h2: f64 = rng.gen_range(-1.0..1.0);
                let h0 = (h1 * h1 + h2 * h2).sqrt() + rng.gen_range(0.5..2.0);
                prob.push_soc(rows, [h0, h1, h2]);
            }
            let sol = solve(&prob, &opts());
            assert_certified_optimal(&prob, &sol);
        }
    }
}
