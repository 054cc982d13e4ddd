//! Symmetric matrix / coefficient vector correspondence and the convex
//! projections used to constrain quadratic value functions.
//!
//! A coefficient vector `r` of length `m = n(n+1)/2` holds the weights of the
//! upper-triangular monomials `z_i z_j` (`i <= j`) in row-major order, so
//! for `n = 2` the order is `z1², z1 z2, z2²`. The induced symmetric matrix
//! satisfies `φ(z)ᵀ r = zᵀ H z`: diagonal entries are copied and off-diagonal
//! coefficients are split evenly between `H_ij` and `H_ji`.

use nalgebra::{DMatrix, DVector, Matrix5, SymmetricEigen};

use crate::error::{Error, Result};

/// Asymmetry allowed by [`mat_to_vec`].
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Returns `n` such that `len = n(n+1)/2`, if one exists.
pub fn triangular_dim(len: usize) -> Option<usize> {
    let n = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (n >= 1 && n * (n + 1) / 2 == len).then_some(n)
}

pub fn coeff_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

pub fn vec_to_mat(r: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = triangular_dim(r.len()).ok_or_else(|| {
        Error::dim(format!(
            "coefficient vector length {} is not a triangular number",
            r.len()
        ))
    })?;
    let mut h = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        h[(i, i)] = r[k];
        k += 1;
        for j in (i + 1)..n {
            let half = r[k] / 2.0;
            h[(i, j)] = half;
            h[(j, i)] = half;
            k += 1;
        }
    }
    Ok(h)
}

pub fn mat_to_vec(h: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_symmetric(h, SYMMETRY_TOL)?;
    let n = h.nrows();
    let mut r = DVector::zeros(coeff_len(n));
    let mut k = 0;
    for i in 0..n {
        r[k] = h[(i, i)];
        k += 1;
        for j in (i + 1)..n {
            r[k] = h[(i, j)] + h[(j, i)];
            k += 1;
        }
    }
    Ok(r)
}

fn check_symmetric(h: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !h.is_square() {
        return Err(Error::dim(format!(
            "expected a square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    let n = h.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (h[(i, j)] - h[(j, i)]).abs() > tol {
                return Err(Error::InvalidInput(format!(
                    "matrix is not symmetric at ({i},{j}): {} vs {}",
                    h[(i, j)],
                    h[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

fn check_finite(h: &DMatrix<f64>) -> Result<()> {
    if h.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric("matrix has non-finite entries".into()))
    }
}

fn symmetrize(h: &DMatrix<f64>) -> DMatrix<f64> {
    (h + h.transpose()) * 0.5
}

/// A quadratic form over `z ∈ R^dim`, stored as its monomial weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SymQuadForm {
    dim: usize,
    coeffs: DVector<f64>,
}

impl SymQuadForm {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            coeffs: DVector::zeros(coeff_len(dim)),
        }
    }

    pub fn from_coeffs(coeffs: DVector<f64>) -> Result<Self> {
        let dim = triangular_dim(coeffs.len()).ok_or_else(|| {
            Error::dim(format!(
                "coefficient vector length {} is not a triangular number",
                coeffs.len()
            ))
        })?;
        Ok(Self { dim, coeffs })
    }

    pub fn from_matrix(h: &DMatrix<f64>) -> Result<Self> {
        let coeffs = mat_to_vec(h)?;
        Ok(Self {
            dim: h.nrows(),
            coeffs,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        vec_to_mat(&self.coeffs).expect("length checked at construction")
    }

    /// `zᵀ H z`.
    pub fn eval(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dim);
        let mut k = 0;
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in i..self.dim {
                acc += self.coeffs[k] * z[i] * z[j];
                k += 1;
            }
        }
        acc
    }
}

/// Frobenius radius of the ball the value matrix is confined to.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct BallRadius(f64);

impl BallRadius {
    pub fn new(delta: f64) -> Result<Self> {
        if delta.is_finite() && delta > 0.0 {
            Ok(Self(delta))
        } else {
            Err(Error::InvalidInput(format!(
                "ball radius must be positive and finite, got {delta}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for BallRadius {
    fn default() -> Self {
        Self(100.0)
    }
}

impl TryFrom<f64> for BallRadius {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BallRadius> for f64 {
    fn from(r: BallRadius) -> f64 {
        r.0
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    if h.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(h))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Frobenius-nearest positive semidefinite matrix.
pub fn proj_psd(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_finite(h)?;
    check_symmetric(h, SYMMETRY_TOL.max(1e-9 * h.amax()))?;
    let sym = symmetrize(h);
    if sym.nrows() == 5 {
        return proj_psd5(&Matrix5::from_iterator(sym.iter().copied()))
            .map(|p| DMatrix::from_iterator(5, 5, p.iter().copied()));
    }
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigendecomposition failed".into()));
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    Ok(symmetrize(&out))
}

fn proj_psd5(h: &Matrix5<f64>) -> Result<Matrix5<f64>> {
    if h.cholesky().is_some() {
        return Ok(*h);
    }
    let eig = SymmetricEigen::new(*h);
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigendecomposition failed".into()));
    }
    let v = &eig.eigenvectors;
    let out = v * Matrix5::from_diagonal(&eig.eigenvalues.map(|e| e.max(0.0))) * v.transpose();
    Ok((out + out.transpose()) * 0.5)
}

pub fn proj_ball(h: &DMatrix<f64>, delta: BallRadius) -> DMatrix<f64> {
    let norm = h.norm();
    if norm <= delta.get() {
        h.clone()
    } else {
        h * (delta.get() / norm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DykstraOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for DykstraOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub matrix: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Projection onto `PSD ∩ {‖H‖_F <= δ}`.
///
/// The PSD set is a cone and the ball is centred at the origin, so the
/// projection onto the intersection is the ball projection of the cone
/// projection. [`dykstra`] computes the same point iteratively.
pub fn proj_intersection(h: &DMatrix<f64>, delta: BallRadius) -> Result<DMatrix<f64>> {
    Ok(proj_ball(&proj_psd(h)?, delta))
}

/// Dykstra's alternating projections onto `PSD ∩ {‖H‖_F <= δ}`.
///
/// The returned matrix is polished with one final cone-then-ball pass so it
/// belongs to both sets exactly (up to eigensolver round-off), even when the
/// iteration stops at `max_iter`.
pub fn dykstra(h: &DMatrix<f64>, delta: BallRadius, opts: DykstraOptions) -> Result<Projection> {
    if opts.max_iter == 0 {
        return Err(Error::InvalidInput("max_iter must be at least 1".into()));
    }
    check_finite(h)?;
    let n = h.nrows();
    let mut x = symmetrize(h);
    let mut p = DMatrix::zeros(n, n);
    let mut q = DMatrix::zeros(n, n);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iter {
        iterations += 1;
        let y = proj_psd(&(&x + &p))?;
        p = &x + &p - &y;
        let x_next = proj_ball(&(&y + &q), delta);
        q = &y + &q - &x_next;
        let change = (&x_next - &x).norm();
        let gap = (&x_next - &y).norm();
        x = x_next;
        if change < opts.tol && gap < opts.tol.max(1e-12 * delta.get()) {
            converged = true;
            break;
        }
    }

    let matrix = proj_ball(&proj_psd(&x)?, delta);
    Ok(Projection {
        matrix,
        iterations,
        converged,
    })
}
