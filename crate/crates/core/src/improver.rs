//! Greedy policy improvement: minimize the Q-function over the action box.
//!
//! The action dimension is tiny, so the box QP
//! `min uᵀ H_uu u + cᵀ u, lower <= u <= upper` is solved exactly by
//! enumerating every free/lower/upper pattern (27 for three actions). Free
//! coordinates use the pseudo-inverse so singular `H_uu` yields the
//! minimum-norm stationary point; ties between patterns are broken towards
//! the smaller-norm action.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matspace;
use crate::valuefn::{ActionBox, LinearPolicy, QFunction};

/// Most negative eigenvalue of `H_uu` accepted as PSD.
pub const PSD_TOL: f64 = 1e-8;
pub const KKT_TOL: f64 = 1e-7;

fn objective(h: &DMatrix<f64>, c: &DVector<f64>, u: &DVector<f64>) -> f64 {
    (u.transpose() * h * u)[0] + c.dot(u)
}

fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = (smax * 1e-12).max(1e-300);
    svd.pseudo_inverse(eps).expect("eps is non-negative")
}

/// Largest KKT violation of `u` for the box QP, measured on the gradient
/// `2 H u + c`.
pub fn kkt_violation(h: &DMatrix<f64>, c: &DVector<f64>, u: &DVector<f64>, bounds: ActionBox) -> f64 {
    let grad = h * u * 2.0 + c;
    let span = bounds.upper - bounds.lower;
    let at_bound = 1e-12 * span.max(1.0);
    let mut worst: f64 = 0.0;
    for i in 0..u.len() {
        let g = grad[i];
        let v = if u[i] <= bounds.lower + at_bound {
            (-g).max(0.0)
        } else if u[i] >= bounds.upper - at_bound {
            g.max(0.0)
        } else {
            g.abs()
        };
        let outside = (bounds.lower - u[i]).max(u[i] - bounds.upper).max(0.0);
        worst = worst.max(v).max(outside);
    }
    worst
}

/// Exact box-QP minimizer without input validation. `h` must be PSD.
pub(crate) fn minimize_box_qp(h: &DMatrix<f64>, c: &DVector<f64>, bounds: ActionBox) -> DVector<f64> {
    let n = c.len();
    let feas_tol = 1e-12 * (bounds.upper - bounds.lower).max(1.0);
    let patterns = 3usize.pow(n as u32);
    let mut best: Option<(f64, f64, DVector<f64>)> = None;

    for code in 0..patterns {
        let mut u = DVector::zeros(n);
        let mut free = Vec::with_capacity(n);
        let mut rem = code;
        for i in 0..n {
            match rem % 3 {
                0 => free.push(i),
                1 => u[i] = bounds.lower,
                _ => u[i] = bounds.upper,
            }
            rem /= 3;
        }
        if !free.is_empty() {
            let k = free.len();
            let h_ff = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
            // rhs = -(c_F / 2 + H_F,fixed u_fixed); fixed entries of u are the
            // only nonzeros at this point.
            let rhs = DVector::from_fn(k, |a, _| {
                let i = free[a];
                let coupling: f64 = (0..n).map(|j| h[(i, j)] * u[j]).sum();
                -(c[i] / 2.0 + coupling)
            });
            let sol = pinv(&h_ff) * rhs;
            let mut feasible = true;
            for (a, &i) in free.iter().enumerate() {
                let v = sol[a];
                if !v.is_finite() || v < bounds.lower - feas_tol || v > bounds.upper + feas_tol {
                    feasible = false;
                    break;
                }
                u[i] = bounds.clip(v);
            }
            if !feasible {
                continue;
            }
        }
        let f = objective(h, c, &u);
        let norm = u.norm();
        let better = match &best {
            None => true,
            Some((bf, bn, _)) => {
                let tie = 1e-12 * (1.0 + bf.abs());
                f < bf - tie || (f <= bf + tie && norm < *bn - 1e-12)
            }
        };
        if better {
            best = Some((f, norm, u));
        }
    }

    let mut u = best.map(|(_, _, u)| u).unwrap_or_else(|| DVector::zeros(n));
    if kkt_violation(h, c, &u, bounds) > KKT_TOL {
        polish_coordinate_descent(h, c, bounds, &mut u);
    }
    u
}

fn polish_coordinate_descent(h: &DMatrix<f64>, c: &DVector<f64>, bounds: ActionBox, u: &mut DVector<f64>) {
    let n = u.len();
    for _ in 0..10_000 {
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| h[(i, j)] * u[j]).sum();
            let lin = c[i] / 2.0 + off;
            u[i] = if h[(i, i)] > 0.0 {
                bounds.clip(-lin / h[(i, i)])
            } else if lin > 0.0 {
                bounds.lower
            } else if lin < 0.0 {
                bounds.upper
            } else {
                u[i]
            };
        }
        if kkt_violation(h, c, u, bounds) <= KKT_TOL {
            break;
        }
    }
}

/// `argmin_{u in box} uᵀ H_uu u + cᵀ u`. Call sites pass `c = 2 H_ux x`.
pub fn solve_box_qp(h_uu: &DMatrix<f64>, c: &DVector<f64>, bounds: ActionBox) -> Result<DVector<f64>> {
    if !h_uu.is_square() || h_uu.nrows() != c.len() {
        return Err(Error::dim(format!(
            "QP expects square H matching c, got {}x{} and {}",
            h_uu.nrows(),
            h_uu.ncols(),
            c.len()
        )));
    }
    if h_uu.iter().chain(c.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("QP data has non-finite entries".into()));
    }
    if (h_uu - h_uu.transpose()).amax() > matspace::SYMMETRY_TOL * h_uu.amax().max(1.0) {
        return Err(Error::InvalidInput("H_uu is not symmetric".into()));
    }
    let h = (h_uu + h_uu.transpose()) * 0.5;
    let min_eig = matspace::min_eigenvalue(&h);
    if min_eig < -PSD_TOL {
        return Err(Error::InvalidInput(format!(
            "H_uu is not PSD (min eigenvalue {min_eig:e})"
        )));
    }
    Ok(minimize_box_qp(&h, c, bounds))
}

/// `-H_uu⁺ H_ux`, the greedy gain when no bound is active.
pub fn unconstrained_gain(q: &QFunction) -> DMatrix<f64> {
    -pinv(&q.h_uu()) * q.h_ux()
}

/// Greedy policy of `q` over the box. The returned policy solves the QP per
/// queried state, so clipping is state dependent.
pub fn improve_policy(q: &QFunction, bounds: ActionBox) -> Result<LinearPolicy> {
    let h_uu = q.h_uu();
    let min_eig = matspace::min_eigenvalue(&h_uu);
    if min_eig < -PSD_TOL {
        return Err(Error::InvalidInput(format!(
            "cannot improve on a Q-function whose H_uu is not PSD (min eigenvalue {min_eig:e})"
        )));
    }
    let gain = unconstrained_gain(q);
    Ok(LinearPolicy::greedy(q.clone(), gain, bounds))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn identity_without_linear_term() {
        let u = solve_box_qp(&DMatrix::identity(3, 3), &v(&[0.0; 3]), ActionBox::default()).unwrap();
        assert_eq!(u, v(&[0.0; 3]));
    }

    #[test]
    fn clipped_minimizer() {
        let u = solve_box_qp(&DMatrix::identity(3, 3), &v(&[4.0, 0.0, 0.0]), ActionBox::default()).unwrap();
        assert!((u - v(&[-1.0, 0.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn singular_hessian_takes_min_norm() {
        let h = DMatrix::from_diagonal(&v(&[1.0, 0.0, 0.0]));
        let u = solve_box_qp(&h, &v(&[2.0, 0.0, 0.0]), ActionBox::default()).unwrap();
        assert!((u - v(&[-1.0, 0.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn zero_hessian_goes_to_bounds() {
        let h = DMatrix::zeros(3, 3);
        let u = solve_box_qp(&h, &v(&[1.0, -2.0, 0.0]), ActionBox::default()).unwrap();
        assert_eq!(u, v(&[-1.0, 1.0, 0.0]));
    }

    #[test]
    fn rejects_indefinite() {
        let h = DMatrix::from_diagonal(&v(&[1.0, -1.0, 0.0]));
        assert!(matches!(
            solve_box_qp(&h, &v(&[0.0; 3]), ActionBox::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn rejects_mismatched_dims() {
        assert!(matches!(
            solve_box_qp(&DMatrix::identity(3, 3), &v(&[0.0; 2]), ActionBox::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn kkt_holds_for_coupled_problem() {
        let h = DMatrix::from_row_slice(3, 3, &[2.0, 0.9, 0.1, 0.9, 1.0, 0.3, 0.1, 0.3, 0.5]);
        let c = v(&[3.0, -5.0, 0.4]);
        let u = solve_box_qp(&h, &c, ActionBox::default()).unwrap();
        assert!(kkt_violation(&h, &c, &u, ActionBox::default()) <= KKT_TOL);
    }

    #[test]
    fn decoupled_q_gives_zero_policy() {
        let mut h = DMatrix::identity(5, 5);
        h[(0, 0)] = 3.0;
        let q = QFunction::from_matrix(&h, 2).unwrap();
        let pi = improve_policy(&q, ActionBox::default()).unwrap();
        assert!(pi.is_greedy());
        assert_eq!(pi.act(&[0.7, -2.0]), vec![0.0; 3]);
        assert!(pi.gain().amax() == 0.0);
    }
}
