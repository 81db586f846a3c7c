//! Primitive operations on the 3-dimensional second-order cone
//! `K = {(t, u, v) : t >= sqrt(u^2 + v^2)}`: Jordan-algebra products,
//! Nesterov-Todd scaling, and boundary step lengths.

use nalgebra::Matrix3;

/// `det_J(p) = t^2 - u^2 - v^2`, the hyperbolic determinant.
#[inline]
pub fn det_j(p: &[f64; 3]) -> f64 {
    p[0] * p[0] - p[1] * p[1] - p[2] * p[2]
}

/// Strict interior test.
#[inline]
pub fn in_interior(p: &[f64; 3]) -> bool {
    p[0] > 0.0 && det_j(p) > 0.0
}

/// Jordan product `p ∘ q = (p·q, p0 q1 + q0 p1, p0 q2 + q0 p2)`.
#[inline]
pub fn jordan_mul(p: &[f64; 3], q: &[f64; 3]) -> [f64; 3] {
    [
        p[0] * q[0] + p[1] * q[1] + p[2] * q[2],
        p[0] * q[1] + q[0] * p[1],
        p[0] * q[2] + q[0] * p[2],
    ]
}

/// Solves `p ∘ x = d` for `x` (the arrow matrix of `p` must be invertible,
/// which holds for interior points).
#[inline]
pub fn jordan_solve(p: &[f64; 3], d: &[f64; 3]) -> [f64; 3] {
    let det = det_j(p);
    let x0 = (p[0] * d[0] - p[1] * d[1] - p[2] * d[2]) / det;
    [
        x0,
        (d[1] - x0 * p[1]) / p[0],
        (d[2] - x0 * p[2]) / p[0],
    ]
}

/// Nesterov-Todd scaling for one cone: the symmetric positive definite `W`
/// with `W z = W^{-1} s` for interior `s`, `z`.
#[derive(Debug, Clone)]
pub struct NtScaling {
    pub w: Matrix3<f64>,
    pub w_inv: Matrix3<f64>,
    /// `W^2`, used when refining KKT solves against the exact system.
    pub w2: Matrix3<f64>,
    /// `(W^2)^{-1}`, used by the condensed KKT system.
    pub w2_inv: Matrix3<f64>,
    /// The scaled point `λ = W z = W^{-1} s`.
    pub lambda: [f64; 3],
}

pub fn nt_scaling(s: &[f64; 3], z: &[f64; 3]) -> NtScaling {
    debug_assert!(in_interior(s) && in_interior(z), "NT scaling needs interior points");
    let ds = det_j(s).sqrt();
    let dz = det_j(z).sqrt();
    let sbar = [s[0] / ds, s[1] / ds, s[2] / ds];
    let zbar = [z[0] / dz, z[1] / dz, z[2] / dz];
    let gamma = ((1.0 + sbar[0] * zbar[0] + sbar[1] * zbar[1] + sbar[2] * zbar[2]) / 2.0).sqrt();
    // wbar = (sbar + J zbar) / (2 gamma), a unit-hyperboloid point.
    let wbar = [
        (sbar[0] + zbar[0]) / (2.0 * gamma),
        (sbar[1] - zbar[1]) / (2.0 * gamma),
        (sbar[2] - zbar[2]) / (2.0 * gamma),
    ];
    let eta = (ds / dz).sqrt();

    // The Householder-like form 2 w w^T - J is the quadratic representation
    // P(w), so eta^2 (2 wbar wbar^T - J) is W^2.  W itself uses the Jordan
    // square root u of wbar (u ∘ u = wbar, det_J(u) = 1):
    //     u = (wbar + e) / sqrt(2 (1 + wbar_0)),
    // and then W = eta (2 u u^T - J) = eta P(u) squares to eta^2 P(wbar).
    // Inverses swap u for J u (the Jordan inverse) and eta for 1/eta.
    let root = (2.0 * (1.0 + wbar[0])).sqrt();
    let u = [(wbar[0] + 1.0) / root, wbar[1] / root, wbar[2] / root];
    let u_j = [u[0], -u[1], -u[2]];
    let w = scaled_householder(&u, eta);
    let w_inv = scaled_householder(&u_j, 1.0 / eta);
    let wbar_j = [wbar[0], -wbar[1], -wbar[2]];
    let w2 = scaled_householder(&wbar, eta * eta);
    let w2_inv = scaled_householder(&wbar_j, 1.0 / (eta * eta));

    let zv = nalgebra::Vector3::new(z[0], z[1], z[2]);
    let lv = w * zv;
    NtScaling {
        w,
        w_inv,
        w2,
        w2_inv,
        lambda: [lv[0], lv[1], lv[2]],
    }
}

fn scaled_householder(wbar: &[f64; 3], scale: f64) -> Matrix3<f64> {
    let j = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, -1.0, -1.0));
    let wv = nalgebra::Vector3::new(wbar[0], wbar[1], wbar[2]);
    (2.0 * wv * wv.transpose() - j) * scale
}

/// Applies `W` to a vector.
#[inline]
pub fn apply(m: &Matrix3<f64>, p: &[f64; 3]) -> [f64; 3] {
    let v = m * nalgebra::Vector3::new(p[0], p[1], p[2]);
    [v[0], v[1], v[2]]
}

/// The largest step `alpha` with `p + alpha d` still in the (closed) cone,
/// or `f64::INFINITY` when the whole ray stays inside. `p` must be interior.
pub fn step_to_boundary(p: &[f64; 3], d: &[f64; 3]) -> f64 {
    let a = det_j(d);
    let b = 2.0 * (p[0] * d[0] - p[1] * d[1] - p[2] * d[2]);
    let c = det_j(p);
    debug_assert!(c > 0.0 && p[0] > 0.0);

    // The t-component can only reach zero together with det_J unless the
    // direction is collinear with -p; track it separately.
    let alpha_t = if d[0] < 0.0 { -p[0] / d[0] } else { f64::INFINITY };

    let alpha_j = if a.abs() <= 1e-14 * (b.abs() + c.abs()) {
        // Essentially linear in alpha.
        if b < 0.0 {
            -c / b
        } else {
            f64::INFINITY
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if a > 0.0 {
            if disc < 0.0 || b >= 0.0 {
                // No real crossing, or both roots negative.
                f64::INFINITY
            } else {
                2.0 * c / (-b + disc.sqrt())
            }
        } else {
            // a < 0: exactly one positive root.
            2.0 * c / (-b + disc.sqrt())
        }
    };
    alpha_t.min(alpha_j)
}
