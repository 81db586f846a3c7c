//! Discrete-time linear systems: zero-order-hold discretization, stacked
//! prediction matrices over a horizon, and state propagation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Continuous-time linear dynamics `x' = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl ContinuousLinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        check_system_shapes(&a, &b)?;
        Ok(Self { a, b })
    }
}

/// Discrete-time linear dynamics `x(k+1) = A x(k) + B u(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl DiscreteLinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        check_system_shapes(&a, &b)?;
        Ok(Self { a, b })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    /// Entry-wise nonnegativity of both system matrices, compared exactly.
    ///
    /// Use this for matrices supplied verbatim; discretization output carries
    /// floating-point dust and should go through [`is_positive_within`].
    ///
    /// [`is_positive_within`]: Self::is_positive_within
    pub fn is_positive(&self) -> bool {
        self.is_positive_within(0.0)
    }

    /// Entry-wise nonnegativity allowing entries as low as `-tol`.
    pub fn is_positive_within(&self, tol: f64) -> bool {
        self.a.iter().all(|&v| v >= -tol) && self.b.iter().all(|&v| v >= -tol)
    }

    /// One step of the recursion: `A x + B u`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

fn check_system_shapes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "state matrix must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if b.nrows() != a.nrows() {
        return Err(Error::Dimension(format!(
            "input matrix has {} rows but the state dimension is {}",
            b.nrows(),
            a.nrows()
        )));
    }
    if a.nrows() == 0 || b.ncols() == 0 {
        return Err(Error::Dimension(
            "state and input dimensions must be nonzero".into(),
        ));
    }
    Ok(())
}

/// Dense matrix exponential via scaling-and-squaring with an order-13 Padé
/// approximant. The scaled 1-norm is brought below 5.4 before evaluating the
/// approximant, then the result is squared back up.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    const THETA_13: f64 = 5.4;
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];

    assert_eq!(m.nrows(), m.ncols(), "expm requires a square matrix");
    let dim = m.nrows();
    let norm = one_norm(m);
    let squarings = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as u32
    } else {
        0
    };
    let a = m / 2f64.powi(squarings as i32);

    let eye = DMatrix::<f64>::identity(dim, dim);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let u_inner = &a6 * (B[13] * &a6 + B[11] * &a4 + B[9] * &a2)
        + B[7] * &a6
        + B[5] * &a4
        + B[3] * &a2
        + B[1] * &eye;
    let u = &a * u_inner;
    let v = &a6 * (B[12] * &a6 + B[10] * &a4 + B[8] * &a2)
        + B[6] * &a6
        + B[4] * &a4
        + B[2] * &a2
        + B[0] * &eye;

    let denom = &v - &u;
    let numer = &v + &u;
    let mut result = denom
        .lu()
        .solve(&numer)
        .expect("Padé denominator is singular; the input matrix is not finite");

    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Zero-order-hold discretization with sample time `dt`, computed from one
/// matrix exponential of the augmented block matrix `[[A, B], [0, 0]] * dt`.
pub fn zoh_discretize(sys: &ContinuousLinearSystem, dt: f64) -> Result<DiscreteLinearSystem> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sample time must be positive and finite, got {dt}"
        )));
    }
    let n_x = sys.a.nrows();
    let n_u = sys.b.ncols();
    let mut aug = DMatrix::<f64>::zeros(n_x + n_u, n_x + n_u);
    aug.view_mut((0, 0), (n_x, n_x)).copy_from(&(&sys.a * dt));
    aug.view_mut((0, n_x), (n_x, n_u)).copy_from(&(&sys.b * dt));
    let e = expm(&aug);
    let a = e.view((0, 0), (n_x, n_x)).into_owned();
    let b = e.view((0, n_x), (n_x, n_u)).into_owned();
    DiscreteLinearSystem::new(a, b)
}

/// Stacked prediction matrices for a horizon of `N` steps:
/// the stacked state vector satisfies `X = Sx x0 + Su U` where
/// `X = (x(0), ..., x(N))` and `U = (u(0), ..., u(N-1))`.
#[derive(Debug, Clone)]
pub struct PredictionMatrices {
    /// `(N+1) n_x  x  n_x`; block row `j` is `A^j`.
    pub sx: DMatrix<f64>,
    /// `(N+1) n_x  x  N n_u`; block `(j, k)` is `A^(j-1-k) B` for `k < j`, zero otherwise.
    pub su: DMatrix<f64>,
    pub horizon: usize,
    pub n_x: usize,
    pub n_u: usize,
}

/// Builds the stacked prediction matrices for horizon `n >= 1`.
pub fn prediction_matrices(sys: &DiscreteLinearSystem, n: usize) -> Result<PredictionMatrices> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "prediction horizon must be at least 1".into(),
        ));
    }
    let n_x = sys.n_x();
    let n_u = sys.n_u();

    // Powers of A, reused for both blocks: powers[j] = A^j.
    let mut powers = Vec::with_capacity(n + 1);
    powers.push(DMatrix::<f64>::identity(n_x, n_x));
    for j in 1..=n {
        let next = &sys.a * &powers[j - 1];
        powers.push(next);
    }

    let mut sx = DMatrix::<f64>::zeros((n + 1) * n_x, n_x);
    for (j, power) in powers.iter().enumerate() {
        sx.view_mut((j * n_x, 0), (n_x, n_x)).copy_from(power);
    }

    let mut su = DMatrix::<f64>::zeros((n + 1) * n_x, n * n_u);
    for j in 1..=n {
        for k in 0..j {
            let block = &powers[j - 1 - k] * &sys.b;
            su.view_mut((j * n_x, k * n_u), (n_x, n_u)).copy_from(&block);
        }
    }

    Ok(PredictionMatrices {
        sx,
        su,
        horizon: n,
        n_x,
        n_u,
    })
}

/// Rolls the recursion `x(k+1) = A x(k) + B u(k)` forward over the stacked
/// control vector and returns the stacked state vector `(x(0), ..., x(N))`.
pub fn propagate(
    sys: &DiscreteLinearSystem,
    x0: &DVector<f64>,
    u_stacked: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n_x = sys.n_x();
    let n_u = sys.n_u();
    if x0.len() != n_x {
        return Err(Error::Dimension(format!(
            "initial state has length {} but the state dimension is {}",
            x0.len(),
            n_x
        )));
    }
    if !u_stacked.len().is_multiple_of(n_u) {
        return Err(Error::Dimension(format!(
            "stacked control length {} is not a multiple of the input dimension {}",
            u_stacked.len(),
            n_u
        )));
    }
    let n = u_stacked.len() / n_u;
    let mut stacked = DVector::<f64>::zeros((n + 1) * n_x);
    stacked.rows_mut(0, n_x).copy_from(x0);
    let mut x = x0.clone();
    for k in 0..n {
        let u = u_stacked.rows(k * n_u, n_u).into_owned();
        x = sys.step(&x, &u);
        stacked.rows_mut((k + 1) * n_x, n_x).copy_from(&x);
    }
    Ok(stacked)
}
