//! Row-wise shrinkage and the quantities built around it.
//!
//! The shrinkage operator (MSTO) scales each row `u` of its input by
//! `max(0, 1 - θ/‖u‖₂)`. It is the proximal map of `θ·‖·‖₂,₁`.
//!
//! Matrices holding several samples side by side are handled by the
//! `*_blocked` variants: a row is then the `block`-wide slice belonging to one
//! sample, so each sample keeps its own group structure.

use std::collections::BTreeSet;

use nalgebra::{ComplexField, DMatrix, DVector};

use crate::linalg::{self, ensure_shape};
use crate::{CMat, Error, RMat, Result};

/// Output of [`msto`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageResult {
    pub value: RMat,
    pub active_rows: BTreeSet<usize>,
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::invalid(format!("threshold must be finite and >= 0, got {theta}")));
    }
    Ok(())
}

fn check_block(x: &RMat, block: usize) -> Result<()> {
    if block == 0 || !x.ncols().is_multiple_of(block) {
        return Err(Error::invalid(format!(
            "block width {block} does not divide {} columns",
            x.ncols()
        )));
    }
    Ok(())
}

/// Squared row norms per block: entry `(i, b)` is `‖x[i, b*block..(b+1)*block]‖²`.
pub fn row_norms_sq_blocked(x: &RMat, block: usize) -> RMat {
    let rows = x.nrows();
    let blocks = x.ncols() / block;
    let mut out = RMat::zeros(rows, blocks);
    for (c, col) in x.column_iter().enumerate() {
        let b = c / block;
        let dst = out.column_mut(b);
        for (d, v) in dst.into_iter().zip(col.iter()) {
            *d += v * v;
        }
    }
    out
}

/// MSTO applied per sample block. Returns the shrunk matrix.
///
/// Rows with norm `<= θ` (including zero rows) map to zero.
pub fn msto_blocked(x: &RMat, theta: f64, block: usize) -> Result<RMat> {
    check_theta(theta)?;
    check_block(x, block)?;
    Ok(shrink_blocked(x, theta, block))
}

pub(crate) fn shrink_blocked(x: &RMat, theta: f64, block: usize) -> RMat {
    let norms = row_norms_sq_blocked(x, block);
    let scale = norms.map(|n2| {
        let r = n2.sqrt();
        if r > theta {
            1.0 - theta / r
        } else {
            0.0
        }
    });
    let mut out = x.clone();
    for (c, mut col) in out.column_iter_mut().enumerate() {
        let sc = scale.column(c / block);
        for (v, s) in col.iter_mut().zip(sc.iter()) {
            *v *= s;
        }
    }
    out
}

/// The shrinkage operator on a single `2N x M` matrix.
pub fn msto(x: &RMat, theta: f64) -> Result<ShrinkageResult> {
    check_theta(theta)?;
    let block = x.ncols().max(1);
    let value = if x.ncols() == 0 { x.clone() } else { shrink_blocked(x, theta, block) };
    let active_rows = (0..value.nrows())
        .filter(|&i| value.row(i).iter().any(|v| *v != 0.0))
        .collect();
    Ok(ShrinkageResult { value, active_rows })
}

/// Reverse-mode derivative of [`msto_blocked`].
///
/// For a row `u` with `r = ‖u‖ > θ` and upstream row `g` the input gradient
/// is `(1 - θ/r) g + θ (uᵀg) u / r³` and the threshold picks up `-uᵀg / r`.
/// Rows at or below the threshold contribute nothing.
pub fn msto_vjp_blocked(x: &RMat, theta: f64, upstream: &RMat, block: usize) -> Result<(RMat, f64)> {
    check_theta(theta)?;
    check_block(x, block)?;
    ensure_shape("msto_vjp upstream", upstream, x.shape())?;
    Ok(shrink_vjp_blocked(x, theta, upstream, block))
}

pub(crate) fn shrink_vjp_blocked(x: &RMat, theta: f64, upstream: &RMat, block: usize) -> (RMat, f64) {
    let rows = x.nrows();
    let blocks = x.ncols() / block;
    let norms = row_norms_sq_blocked(x, block);
    // uᵀg per (row, block)
    let mut ug = RMat::zeros(rows, blocks);
    for (c, (xc, gc)) in x.column_iter().zip(upstream.column_iter()).enumerate() {
        let mut dst = ug.column_mut(c / block);
        for i in 0..rows {
            dst[i] += xc[i] * gc[i];
        }
    }
    let mut scale = RMat::zeros(rows, blocks);
    let mut radial = RMat::zeros(rows, blocks);
    let mut grad_theta = 0.0;
    for b in 0..blocks {
        for i in 0..rows {
            let r = norms[(i, b)].sqrt();
            if r > theta {
                scale[(i, b)] = 1.0 - theta / r;
                radial[(i, b)] = theta * ug[(i, b)] / (r * r * r);
                grad_theta -= ug[(i, b)] / r;
            }
        }
    }
    let mut grad = upstream.clone();
    for (c, (mut gc, xc)) in grad.column_iter_mut().zip(x.column_iter()).enumerate() {
        let b = c / block;
        for i in 0..rows {
            gc[i] = scale[(i, b)] * gc[i] + radial[(i, b)] * xc[i];
        }
    }
    (grad, grad_theta)
}

/// Reverse-mode derivative of [`msto`] on a single matrix.
pub fn msto_vjp(x: &RMat, theta: f64, upstream: &RMat) -> Result<(RMat, f64)> {
    msto_vjp_blocked(x, theta, upstream, x.ncols().max(1))
}

/// Row ℓ2 norms `ψ(x)`.
pub fn group_norms(x: &RMat) -> DVector<f64> {
    DVector::from_iterator(x.nrows(), x.row_iter().map(|r| r.norm()))
}

/// Mixed norm `‖x‖₂,₁`: sum of row norms.
pub fn l21_norm(x: &RMat) -> f64 {
    group_norms(x).sum()
}

/// Mixed "norm" `‖x‖₂,₀`: number of nonzero rows.
pub fn l20_count(x: &RMat) -> usize {
    x.row_iter().filter(|r| r.iter().any(|v| *v != 0.0)).count()
}

/// `‖x‖₂,₁` summed over sample blocks.
pub fn l21_norm_blocked(x: &RMat, block: usize) -> f64 {
    row_norms_sq_blocked(x, block).iter().map(|v| v.sqrt()).sum()
}

/// Group-LASSO objective `½‖y - s x‖²_F + λ‖x‖₂,₁`.
pub fn lasso_objective(y: &RMat, s: &RMat, x: &RMat, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    check_lasso_shapes(y, s, x)?;
    Ok(objective_blocked(y, s, x, lambda, x.ncols().max(1)))
}

pub(crate) fn check_lasso_shapes(y: &RMat, s: &RMat, x: &RMat) -> Result<()> {
    ensure_shape("lasso x", x, (s.ncols(), y.ncols()))?;
    ensure_shape("lasso y", y, (s.nrows(), x.ncols()))
}

pub(crate) fn objective_blocked(y: &RMat, s: &RMat, x: &RMat, lambda: f64, block: usize) -> f64 {
    let resid = y - s * x;
    0.5 * resid.norm_squared() + lambda * l21_norm_blocked(x, block)
}

/// Mutual coherence `max_{i≠j} |⟨s_i, s_j⟩|` of a column-normalized matrix.
pub fn mutual_coherence<T: ComplexField<RealField = f64>>(s: &DMatrix<T>) -> Result<f64> {
    linalg::check_unit_columns(s, 1e-9)?;
    let gram = s.adjoint() * s;
    let mut mu: f64 = 0.0;
    for j in 0..gram.ncols() {
        for i in 0..gram.nrows() {
            if i != j {
                mu = mu.max(gram[(i, j)].clone().modulus());
            }
        }
    }
    Ok(mu)
}

/// Replaces the singular values of `a` by a log-spaced sequence from
/// `σ_max` down to `σ_max / κ` and reassembles the matrix. The result is not
/// column-normalized; see [`set_condition_number`].
pub fn condition_surgery(a: &CMat, kappa: f64) -> Result<CMat> {
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::invalid(format!("condition number must be finite and >= 1, got {kappa}")));
    }
    let (l, n) = a.shape();
    if l > n || l == 0 {
        return Err(Error::invalid(format!("condition surgery needs 0 < L <= N, got {l}x{n}")));
    }
    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if !(smax > 0.0) || smin <= smax * 1e-12 {
        return Err(Error::RankDeficient { sigma_min: smin });
    }
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let k = sv.len();
    let log_kappa = kappa.ln();
    let mut out = CMat::zeros(l, n);
    for i in 0..k {
        let frac = if k > 1 { i as f64 / (k - 1) as f64 } else { 0.0 };
        let sigma = smax * (-frac * log_kappa).exp();
        let ui = u.column(i);
        let vi = v_t.row(i);
        out += (ui * vi) * crate::Complex64::new(sigma, 0.0);
    }
    Ok(out)
}

/// Condition-number surgery followed by column normalization.
pub fn set_condition_number(a: &CMat, kappa: f64) -> Result<CMat> {
    let mut out = condition_surgery(a, kappa)?;
    linalg::normalize_columns(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    #[test]
    fn theta_zero_is_identity() {
        let mut r = rng::stream(1);
        let x = rng::real_normal_matrix(&mut r, 10, 4);
        let out = msto(&x, 0.0).unwrap();
        assert_eq!(out.value, x);
        assert_eq!(out.active_rows.len(), 10);
    }

    #[test]
    fn row_three_four() {
        let x = dmatrix![3.0, 4.0];
        let out = msto(&x, 1.0).unwrap().value;
        assert_relative_eq!(out[(0, 0)], 2.4, epsilon = 1e-15);
        assert_relative_eq!(out[(0, 1)], 3.2, epsilon = 1e-15);
    }

    #[test]
    fn rows_below_threshold_vanish() {
        let x = dmatrix![0.3, 0.4; 3.0, 4.0; 0.0, 0.0; 0.6, 0.8];
        let out = msto(&x, 1.0).unwrap();
        assert_eq!(out.value.row(0).norm(), 0.0);
        assert_eq!(out.value.row(2).norm(), 0.0);
        // kink: norm exactly equal to theta
        assert_eq!(out.value.row(3).norm(), 0.0);
        assert_eq!(out.active_rows.iter().copied().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn negative_theta_rejected() {
        assert!(msto(&dmatrix![1.0], -0.1).is_err());
        assert!(msto_vjp(&dmatrix![1.0], -0.1, &dmatrix![1.0]).is_err());
    }

    #[test]
    fn vjp_shape_mismatch() {
        let err = msto_vjp(&RMat::zeros(3, 2), 0.1, &RMat::zeros(2, 2)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn vjp_at_zero_threshold() {
        let mut r = rng::stream(4);
        let x = rng::real_normal_matrix(&mut r, 6, 3);
        let g = rng::real_normal_matrix(&mut r, 6, 3);
        let (gx, gt) = msto_vjp(&x, 0.0, &g).unwrap();
        assert_relative_eq!(gx, g, epsilon = 1e-14);
        let expected: f64 = (0..6).map(|i| -x.row(i).dot(&g.row(i)) / x.row(i).norm()).sum();
        assert_relative_eq!(gt, expected, epsilon = 1e-12);
    }

    #[test]
    fn vjp_all_below_threshold() {
        let mut r = rng::stream(5);
        let x = rng::real_normal_matrix(&mut r, 6, 3) * 0.01;
        let g = rng::real_normal_matrix(&mut r, 6, 3);
        let (gx, gt) = msto_vjp(&x, 10.0, &g).unwrap();
        assert_eq!(gx, RMat::zeros(6, 3));
        assert_eq!(gt, 0.0);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut r = rng::stream(6);
        for trial in 0..20 {
            let x = rng::real_normal_matrix(&mut r, 8, 5);
            let g = rng::real_normal_matrix(&mut r, 8, 5);
            let theta = 0.3 + 0.1 * trial as f64;
            // keep away from kinks
            let norms = group_norms(&x);
            if norms.iter().any(|n| (n - theta).abs() < 1e-3) {
                continue;
            }
            let f = |x: &RMat, t: f64| linalg::frob_dot(&g, &msto(x, t).unwrap().value);
            let (gx, gt) = msto_vjp(&x, theta, &g).unwrap();
            let h = 1e-6;
            for idx in 0..x.len() {
                let mut xp = x.clone();
                xp[idx] += h;
                let mut xm = x.clone();
                xm[idx] -= h;
                let fd = (f(&xp, theta) - f(&xm, theta)) / (2.0 * h);
                let scale = fd.abs().max(gx[idx].abs()).max(1e-8);
                assert!((fd - gx[idx]).abs() / scale < 1e-5, "x[{idx}]: fd {fd} vs {}", gx[idx]);
            }
            let fd = (f(&x, theta + h) - f(&x, theta - h)) / (2.0 * h);
            assert!((fd - gt).abs() / fd.abs().max(1e-8) < 1e-5, "theta: fd {fd} vs {gt}");
        }
    }

    #[test]
    fn blocked_matches_per_sample() {
        let mut r = rng::stream(7);
        let a = rng::real_normal_matrix(&mut r, 5, 3);
        let b = rng::real_normal_matrix(&mut r, 5, 3);
        let mut stacked = RMat::zeros(5, 6);
        stacked.columns_mut(0, 3).copy_from(&a);
        stacked.columns_mut(3, 3).copy_from(&b);
        let out = msto_blocked(&stacked, 1.0, 3).unwrap();
        assert_eq!(out.columns(0, 3).into_owned(), msto(&a, 1.0).unwrap().value);
        assert_eq!(out.columns(3, 3).into_owned(), msto(&b, 1.0).unwrap().value);
        assert!(msto_blocked(&stacked, 1.0, 4).is_err());
    }

    #[test]
    fn group_norms_by_hand() {
        assert_eq!(group_norms(&RMat::zeros(4, 3)), DVector::zeros(4));
        let x = dmatrix![1.0, 0.0, 0.0];
        assert_eq!(group_norms(&x), DVector::from_vec(vec![1.0]));
        let mut r = rng::stream(8);
        let x = rng::real_normal_matrix(&mut r, 7, 4);
        let psi = group_norms(&x);
        for i in 0..7 {
            let brute = (0..4).map(|j| x[(i, j)] * x[(i, j)]).sum::<f64>().sqrt();
            assert_relative_eq!(psi[i], brute, epsilon = 1e-15);
        }
        assert_relative_eq!(l21_norm(&x), psi.sum(), epsilon = 1e-15);
        assert_eq!(l20_count(&x), 7);
    }

    #[test]
    fn objective_cases() {
        let mut r = rng::stream(9);
        let s = rng::real_normal_matrix(&mut r, 4, 6);
        let y = rng::real_normal_matrix(&mut r, 4, 3);
        let zero = RMat::zeros(6, 3);
        assert_relative_eq!(lasso_objective(&y, &s, &zero, 0.1).unwrap(), 0.5 * y.norm_squared(), epsilon = 1e-14);

        let mut x = RMat::zeros(6, 3);
        x[(2, 0)] = 0.6;
        x[(2, 2)] = 0.8;
        let y_exact = &s * &x;
        assert_relative_eq!(lasso_objective(&y_exact, &s, &x, 0.7).unwrap(), 0.7, epsilon = 1e-14);

        let x = rng::real_normal_matrix(&mut r, 6, 3);
        let mut resid = 0.0;
        for i in 0..4 {
            for j in 0..3 {
                let mut sx = 0.0;
                for k in 0..6 {
                    sx += s[(i, k)] * x[(k, j)];
                }
                resid += (y[(i, j)] - sx).powi(2);
            }
        }
        let reg: f64 = (0..6).map(|i| (0..3).map(|j| x[(i, j)].powi(2)).sum::<f64>().sqrt()).sum();
        assert_relative_eq!(lasso_objective(&y, &s, &x, 0.3).unwrap(), 0.5 * resid + 0.3 * reg, epsilon = 1e-12);

        assert!(lasso_objective(&y, &s, &RMat::zeros(5, 3), 0.1).is_err());
        assert!(lasso_objective(&y, &s, &zero, 0.0).is_err());
    }

    #[test]
    fn coherence_cases() {
        assert_eq!(mutual_coherence(&RMat::identity(5, 5)).unwrap(), 0.0);
        let mut s = RMat::identity(4, 5);
        s.set_column(4, &s.column(1).into_owned());
        assert_eq!(mutual_coherence(&s).unwrap(), 1.0);
        assert!(mutual_coherence(&(RMat::identity(3, 3) * 2.0)).is_err());

        let mut r = rng::stream(10);
        let mut s = rng::real_normal_matrix(&mut r, 6, 10);
        linalg::normalize_columns(&mut s);
        let mut brute: f64 = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    brute = brute.max(s.column(i).dot(&s.column(j)).abs());
                }
            }
        }
        assert_relative_eq!(mutual_coherence(&s).unwrap(), brute, epsilon = 1e-15);
    }

    #[test]
    fn complex_coherence_uses_modulus() {
        let mut r = rng::stream(12);
        let mut s = rng::complex_normal_matrix(&mut r, 5, 8);
        linalg::normalize_columns(&mut s);
        let mut brute: f64 = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    brute = brute.max(s.column(i).dotc(&s.column(j)).norm());
                }
            }
        }
        assert_relative_eq!(mutual_coherence(&s).unwrap(), brute, epsilon = 1e-14);
    }

    fn condition_of(a: &CMat) -> f64 {
        let sv = a.clone().svd(false, false).singular_values;
        sv.max() / sv.min()
    }

    #[test]
    fn condition_surgery_hits_kappa() {
        let mut r = rng::stream(13);
        let a = rng::complex_normal_matrix(&mut r, 20, 40);
        let flat = condition_surgery(&a, 1.0).unwrap();
        let sv = flat.clone().svd(false, false).singular_values;
        assert!((sv.max() - sv.min()).abs() < 1e-9 * sv.max());
        for &kappa in &[2.0, 15.0] {
            let b = condition_surgery(&a, kappa).unwrap();
            assert!((condition_of(&b) - kappa).abs() < 1e-9, "{}", condition_of(&b));
            let s = set_condition_number(&a, kappa).unwrap();
            linalg::check_unit_columns(&s, 1e-12).unwrap();
        }
    }

    #[test]
    fn condition_surgery_rejects_rank_deficient() {
        let mut r = rng::stream(14);
        let col = rng::complex_normal_matrix(&mut r, 4, 1);
        let row = rng::complex_normal_matrix(&mut r, 1, 6);
        let a = col * row;
        assert!(matches!(condition_surgery(&a, 2.0), Err(Error::RankDeficient { .. })));
        assert!(condition_surgery(&a, 0.5).is_err());
    }

    fn rows_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
        (
            proptest::collection::vec(-3.0..3.0f64, 12),
            proptest::collection::vec(-3.0..3.0f64, 12),
            0.0..2.0f64,
        )
    }

    proptest! {
        #[test]
        fn shrinkage_is_nonexpansive((a, b, theta) in rows_strategy()) {
            let a = RMat::from_vec(4, 3, a);
            let b = RMat::from_vec(4, 3, b);
            let pa = msto(&a, theta).unwrap().value;
            let pb = msto(&b, theta).unwrap().value;
            prop_assert!((pa - pb).norm() <= (&a - &b).norm() + 1e-12);
        }

        #[test]
        fn row_norms_shrink_by_theta((a, _b, theta) in rows_strategy()) {
            let a = RMat::from_vec(4, 3, a);
            let psi = group_norms(&a);
            let psi_out = group_norms(&msto(&a, theta).unwrap().value);
            for i in 0..4 {
                prop_assert!((psi_out[i] - (psi[i] - theta).max(0.0)).abs() < 1e-12);
            }
        }

        #[test]
        fn coherence_invariant_under_signed_permutation(seed in 0u64..1000, flip in 0usize..6) {
            let mut r = rng::stream(seed);
            let mut s = rng::real_normal_matrix(&mut r, 4, 6);
            linalg::normalize_columns(&mut s);
            let mu = mutual_coherence(&s).unwrap();
            let mut t = s.clone();
            t.swap_columns(0, 5);
            t.column_mut(flip).neg_mut();
            prop_assert!((mutual_coherence(&t).unwrap() - mu).abs() < 1e-15);
        }
    }
}
