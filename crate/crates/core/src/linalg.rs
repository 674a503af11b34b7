//! Small dense linear-algebra helpers shared by the solvers and networks.

use nalgebra::{ComplexField, DMatrix, DVector};

use crate::{Error, RMat, Result};

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 100_000;

/// Largest squared singular value `‖A‖₂²`, by power iteration on `AᵀA`.
///
/// Iterates until the eigen-residual `‖AᵀAv − ρv‖` drops below `1e-10·ρ`,
/// which bounds the error of the Rayleigh quotient `ρ` by the same amount.
/// The start vector is deterministic.
pub fn spectral_norm_sq(a: &RMat) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    // A fixed, non-symmetric start avoids being orthogonal to the top
    // singular vector for structured (e.g. lifted) matrices.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64) * 0.7548776662).sin());
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let av = a * &v;
        let w = a.tr_mul(&av);
        let rq = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let residual = (&w - &v * rq).norm();
        estimate = rq;
        if residual <= POWER_TOL * rq {
            return rq;
        }
        v = w / norm;
    }
    estimate
}

/// Checks that every column has unit ℓ2 norm within `tol`.
pub fn check_unit_columns<T: ComplexField<RealField = f64>>(s: &DMatrix<T>, tol: f64) -> Result<()> {
    for (j, col) in s.column_iter().enumerate() {
        let norm = col.norm();
        if (norm - 1.0).abs() > tol {
            return Err(Error::UnnormalizedColumn { column: j, norm });
        }
    }
    Ok(())
}

/// Scales every nonzero column to unit ℓ2 norm.
pub fn normalize_columns<T: ComplexField<RealField = f64>>(s: &mut DMatrix<T>) {
    for mut col in s.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col.unscale_mut(norm);
        }
    }
}

/// Frobenius inner product `⟨A, B⟩ = tr(AᵀB)`.
pub fn frob_dot(a: &RMat, b: &RMat) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

pub(crate) fn ensure_shape(context: &'static str, m: &RMat, expected: (usize, usize)) -> Result<()> {
    if m.shape() != expected {
        return Err(Error::ShapeMismatch {
            context,
            expected,
            actual: m.shape(),
        });
    }
    Ok(())
}
