//! Executable versions of the convergence results.
//!
//! * [`coupling_diagnostics`]: LISTA-GS weights should satisfy
//!   `W2ᵏ ≈ I − W1ᵏS̃` and `θᵏ → 0` as training deepens.
//! * [`good_thresholds`]: the threshold schedules under which LISTA-GSCP and
//!   ALISTA-GS provably converge linearly,
//!   `θᵏ = μ̃·sup‖X̃ᵏ − X̃♮‖₂,₁ + σC_W` (LISTA-GSCP) and
//!   `θᵏ = μ̃γᵏ·sup‖X̃ᵏ − X̃♮‖₂,₁` (ALISTA-GS), with the supremum taken over
//!   a finite batch.
//! * [`error_bound_curve`]: `sβ·e^{−ck} + Cσ` with `c = −log(2μ̃s − μ̃)` and
//!   `C = (s+1)C_W / (1 + μ̃ − 2μ̃s)`.
//! * [`no_false_positive_check`]: iterates never activate rows outside the
//!   true support.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::batch::{block_frobenius, block_l21, StackedBatch};
use crate::operators::{l21_norm, row_norms_sq_blocked};
use crate::rng::{self, derive_seed};
use crate::unrolled_nets::{forward_blocked, init_params_with_weight, Arch, Layer, NetParams};
use crate::{Error, RMat, Result};

/// Round-off allowance for bound comparisons, relative to `sβ`.
pub const BOUND_SLACK: f64 = 1e-12;

/// Per-layer `‖W2ᵏ − (I − W1ᵏS̃)‖_F` and `θᵏ` of a LISTA-GS network.
pub fn coupling_diagnostics(params: &NetParams, s_tilde: &RMat) -> Result<(Vec<f64>, Vec<f64>)> {
    params.require(Arch::ListaGs)?;
    let n2 = params.n_lifted;
    let mut residuals = Vec::with_capacity(params.k_layers());
    for layer in &params.layers {
        if let Layer::ListaGs { w1, w2, .. } = layer {
            let coupled = RMat::identity(n2, n2) - w1 * s_tilde;
            residuals.push((w2 - coupled).norm());
        }
    }
    Ok((residuals, params.thetas()))
}

/// Report holding only the coupling diagnostics of a LISTA-GS network.
pub fn coupling_report(params: &NetParams, s_tilde: &RMat) -> Result<TheoryReport> {
    let (coupling_residuals, thresholds) = coupling_diagnostics(params, s_tilde)?;
    Ok(TheoryReport {
        arch: params.arch,
        coupling_residuals,
        thresholds,
        gammas: Vec::new(),
        empirical_l21: Vec::new(),
        empirical_fro: Vec::new(),
        analytic_bounds: Vec::new(),
        rate_factors: Vec::new(),
        constants: None,
        nfp_violations: 0,
        bound_violations: Vec::new(),
        log_fit: None,
    })
}

/// `max_b ‖Z̃_b‖_F` over the samples of a batch.
pub fn batch_sigma(batch: &StackedBatch) -> f64 {
    block_frobenius(&batch.z, batch.m).into_iter().fold(0.0, f64::max)
}

/// `max_k ‖Wᵏ‖₂,₁` over the instantiated layers (the shared weight for ALISTA-GS).
pub fn weight_constant(params: &NetParams) -> f64 {
    match params.arch {
        Arch::AlistaGs => params.shared_w.as_ref().map_or(0.0, l21_norm),
        _ => params
            .layers
            .iter()
            .map(|l| match l {
                Layer::ListaGscp { w, .. } => l21_norm(w),
                Layer::ListaGs { w1, .. } => l21_norm(&w1.transpose()),
                Layer::AlistaGs { .. } => 0.0,
            })
            .fold(0.0, f64::max),
    }
}

/// Threshold schedule of the "good parameter" definitions, computed layer by
/// layer alongside the forward pass on `batch` from `X̃⁰ = 0`.
///
/// The weights (and for ALISTA-GS the `γᵏ`) are taken from `params`; their
/// thresholds are ignored.
pub fn good_thresholds(params: &NetParams, batch: &StackedBatch, s_tilde: &RMat, mu_tilde: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::invalid("good thresholds need a nonempty batch"));
    }
    if params.arch == Arch::ListaGs {
        return Err(Error::WrongArchitecture {
            expected: "lista_gscp or alista_gs",
            actual: params.arch.name(),
        });
    }
    let noise_term = match params.arch {
        Arch::ListaGscp => batch_sigma(batch) * weight_constant(params),
        _ => 0.0,
    };
    let mut x = batch.zero_start();
    let mut thresholds = Vec::with_capacity(params.k_layers());
    for layer in &params.layers {
        let sup = block_l21(&(&x - &batch.x_true), batch.m).into_iter().fold(0.0, f64::max);
        let theta = match layer {
            Layer::AlistaGs { gamma, .. } => mu_tilde * gamma * sup,
            _ => mu_tilde * sup + noise_term,
        };
        let mut single = NetParams {
            layers: vec![layer.clone()],
            ..params.clone()
        };
        *single.layers[0].theta_mut() = theta;
        x = forward_blocked(&single, s_tilde, &batch.y, &x, 1, batch.m)?.output().clone();
        thresholds.push(theta);
    }
    Ok(thresholds)
}

/// `2μ̃s − μ̃`, required to lie in `(0, 1)`.
pub fn contraction_factor(sparsity: usize, mu_tilde: f64) -> f64 {
    2.0 * mu_tilde * sparsity as f64 - mu_tilde
}

/// `(c, C)` of the error bound, or the violated sparsity condition.
pub fn bound_constants(sparsity: usize, mu_tilde: f64, c_w: f64) -> Result<(f64, f64)> {
    if sparsity == 0 || !(mu_tilde > 0.0) {
        return Err(Error::Precondition(format!(
            "need s >= 1 and mu > 0, got s = {sparsity}, mu = {mu_tilde}"
        )));
    }
    let factor = contraction_factor(sparsity, mu_tilde);
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::SparsityCondition { factor });
    }
    let c = -factor.ln();
    let big_c = (sparsity as f64 + 1.0) * c_w / (1.0 + mu_tilde - 2.0 * mu_tilde * sparsity as f64);
    Ok((c, big_c))
}

/// `k ↦ sβ·e^{−ck} + Cσ` for `k = 0..=k_max`.
pub fn error_bound_curve(
    sparsity: usize,
    beta: f64,
    mu_tilde: f64,
    c_w: f64,
    sigma: f64,
    k_max: usize,
) -> Result<Vec<f64>> {
    let (c, big_c) = bound_constants(sparsity, mu_tilde, c_w)?;
    let sb = sparsity as f64 * beta;
    Ok((0..=k_max).map(|k| sb * (-c * k as f64).exp() + big_c * sigma).collect())
}

/// `cᵗ = −log(γᵗ(2μ̃s − μ̃) + |1 − γᵗ|)` for each layer.
pub fn alista_rate_factors(sparsity: usize, mu_tilde: f64, gammas: &[f64]) -> Vec<f64> {
    let factor = contraction_factor(sparsity, mu_tilde);
    gammas.iter().map(|g| -(g * factor + (1.0 - g).abs()).ln()).collect()
}

/// Rows outside `true_support` whose norm exceeds `tol` in any iterate.
pub fn no_false_positive_check(iterates: &[RMat], true_support: &BTreeSet<usize>, tol: f64) -> usize {
    let Some(first) = iterates.first() else { return 0 };
    (0..first.nrows())
        .filter(|i| !true_support.contains(i))
        .filter(|&i| iterates.iter().any(|x| x.row(i).norm() > tol))
        .count()
}

/// [`no_false_positive_check`] summed over the samples of a stacked trace.
pub fn no_false_positive_blocked(iterates: &[RMat], batch: &StackedBatch, tol: f64) -> usize {
    let supports = batch.supports();
    supports
        .iter()
        .enumerate()
        .map(|(b, sup)| {
            let per: Vec<RMat> = iterates.iter().map(|x| x.columns(b * batch.m, batch.m).into_owned()).collect();
            let set: BTreeSet<usize> = sup.iter().copied().collect();
            no_false_positive_check(&per, &set, tol)
        })
        .sum()
}

/// Least-squares line through `(k, ln eₖ)` over the positive entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn log_linear_fit(errors: &[f64]) -> Option<LogFit> {
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .filter(|(_, e)| **e > 0.0 && e.is_finite())
        .map(|(k, e)| (k as f64, e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some(LogFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        points: pts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub mu_tilde: f64,
    pub sparsity: usize,
    pub beta: f64,
    pub sigma: f64,
    pub c_w: f64,
    /// `None` when the sparsity condition fails.
    pub c: Option<f64>,
    pub big_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub arch: Arch,
    /// Per-layer coupling residual (LISTA-GS only).
    pub coupling_residuals: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Batch max of `‖X̃ᵏ − X̃♮‖₂,₁`, `k = 0..=K`.
    pub empirical_l21: Vec<f64>,
    /// Batch max of `‖X̃ᵏ − X̃♮‖_F`, `k = 0..=K`.
    pub empirical_fro: Vec<f64>,
    /// Analytic bound per `k = 0..=K` (empty without a valid rate).
    pub analytic_bounds: Vec<f64>,
    /// Rate factor per layer.
    pub rate_factors: Vec<f64>,
    /// Absent for coupling-only reports.
    pub constants: Option<TheoryConstants>,
    pub nfp_violations: usize,
    /// Layers whose empirical Frobenius error exceeds the bound by more than
    /// `BOUND_SLACK·sβ`.
    pub bound_violations: Vec<usize>,
    pub log_fit: Option<LogFit>,
}

/// Checks `‖X̃♮‖₂,₀ ≤ s` and row norms `≤ β` for every sample.
pub fn check_in_class(batch: &StackedBatch, sparsity: usize, beta: f64) -> Result<()> {
    let norms = row_norms_sq_blocked(&batch.x_true, batch.m);
    for b in 0..norms.ncols() {
        let col = norms.column(b);
        let support = col.iter().filter(|v| **v > 0.0).count();
        let max_row = col.iter().fold(0.0f64, |a, v| a.max(v.sqrt()));
        if support > sparsity {
            return Err(Error::Precondition(format!(
                "sample {b} has {support} nonzero rows, more than s = {sparsity}"
            )));
        }
        if max_row > beta * (1.0 + 1e-12) {
            return Err(Error::Precondition(format!(
                "sample {b} has a row of norm {max_row} > beta = {beta}"
            )));
        }
    }
    Ok(())
}

/// Runs `params` (with good thresholds already set) on an in-class batch and
/// compares the per-layer batch-max errors against the analytic bound.
///
/// LISTA-GSCP uses `sβ·e^{−ck} + Cσ`. ALISTA-GS uses
/// `sβ·exp(−Σ_{t<k} cᵗ)` and requires a noiseless batch and
/// `γᵗ ∈ (0, 2/(1 + 2μ̃s − μ̃))`.
pub fn validate_bound(
    params: &NetParams,
    batch: &StackedBatch,
    s_tilde: &RMat,
    mu_tilde: f64,
    sparsity: usize,
    beta: f64,
) -> Result<TheoryReport> {
    if params.arch == Arch::ListaGs {
        return Err(Error::WrongArchitecture {
            expected: "lista_gscp or alista_gs",
            actual: params.arch.name(),
        });
    }
    check_in_class(batch, sparsity, beta)?;
    let sigma = batch_sigma(batch);
    let c_w = weight_constant(params);
    let k = params.k_layers();
    let constants_result = bound_constants(sparsity, mu_tilde, c_w);
    let factor = contraction_factor(sparsity, mu_tilde);
    let gammas = params.gammas();
    let (analytic_bounds, rate_factors) = match (params.arch, &constants_result) {
        (Arch::AlistaGs, _) => {
            if sigma > 0.0 {
                return Err(Error::Precondition("the ALISTA-GS rate is stated for noiseless data".into()));
            }
            let upper = 2.0 / (1.0 + factor);
            if let Some(g) = gammas.iter().find(|g| !(**g > 0.0 && **g < upper)) {
                return Err(Error::Precondition(format!("gamma {g} outside (0, {upper})")));
            }
            let rates = alista_rate_factors(sparsity, mu_tilde, &gammas);
            let sb = sparsity as f64 * beta;
            let bounds = if constants_result.is_ok() && rates.iter().all(|c| *c > 0.0) {
                let mut acc = 0.0;
                let mut out = vec![sb];
                for c in &rates {
                    acc += c;
                    out.push(sb * (-acc).exp());
                }
                out
            } else {
                Vec::new()
            };
            (bounds, rates)
        }
        (_, Ok((c, _))) => (
            error_bound_curve(sparsity, beta, mu_tilde, c_w, sigma, k)?,
            vec![*c; k],
        ),
        (_, Err(_)) => (Vec::new(), Vec::new()),
    };
    let trace = forward_blocked(params, s_tilde, &batch.y, &batch.zero_start(), k, batch.m)?;
    let mut empirical_l21 = Vec::with_capacity(k + 1);
    let mut empirical_fro = Vec::with_capacity(k + 1);
    for x in &trace.iterates {
        let diff = x - &batch.x_true;
        empirical_l21.push(block_l21(&diff, batch.m).into_iter().fold(0.0, f64::max));
        empirical_fro.push(block_frobenius(&diff, batch.m).into_iter().fold(0.0, f64::max));
    }
    let slack = BOUND_SLACK * analytic_bounds.first().copied().unwrap_or(0.0);
    let bound_violations = analytic_bounds
        .iter()
        .zip(&empirical_fro)
        .enumerate()
        .filter(|(_, (b, e))| **e > **b + slack)
        .map(|(i, _)| i)
        .collect();
    let nfp_violations = no_false_positive_blocked(&trace.iterates, batch, 1e-12);
    let (c, big_c) = match constants_result {
        Ok((c, bc)) => (Some(c), Some(bc)),
        Err(_) => (None, None),
    };
    Ok(TheoryReport {
        arch: params.arch,
        coupling_residuals: Vec::new(),
        thresholds: params.thetas(),
        gammas,
        log_fit: log_linear_fit(&empirical_fro),
        empirical_l21,
        empirical_fro,
        analytic_bounds,
        rate_factors,
        constants: Some(TheoryConstants {
            mu_tilde,
            sparsity,
            beta,
            sigma,
            c_w,
            c,
            big_c,
        }),
        nfp_violations,
        bound_violations,
    })
}

/// Builds a `k_layers` network with weight `w` in every layer (`γᵗ = 1` for
/// ALISTA-GS), sets the good thresholds on `batch` and validates the bound.
#[allow(clippy::too_many_arguments)]
pub fn oracle_report(
    arch: Arch,
    batch: &StackedBatch,
    s_tilde: &RMat,
    w: &RMat,
    mu_tilde: f64,
    k_layers: usize,
    sparsity: usize,
    beta: f64,
) -> Result<TheoryReport> {
    let mut params = match arch {
        Arch::ListaGscp => {
            let mut p = init_params_with_weight(arch, s_tilde, k_layers, None)?;
            for l in p.layers.iter_mut() {
                if let Layer::ListaGscp { w: lw, .. } = l {
                    *lw = w.clone();
                }
            }
            p
        }
        Arch::AlistaGs => init_params_with_weight(arch, s_tilde, k_layers, Some(w.clone()))?,
        Arch::ListaGs => {
            return Err(Error::WrongArchitecture {
                expected: "lista_gscp or alista_gs",
                actual: arch.name(),
            })
        }
    };
    let thresholds = good_thresholds(&params, batch, s_tilde, mu_tilde)?;
    params.set_thetas(&thresholds)?;
    validate_bound(&params, batch, s_tilde, mu_tilde, sparsity, beta)
}

/// Noiseless-or-noisy batch drawn directly in the lifted domain with at most
/// `sparsity` nonzero rows per sample.
///
/// Active devices contribute their real and imaginary rows; an odd budget
/// adds one device with a real channel. Every nonzero row has norm drawn
/// uniformly from `[β/2, β]`. With `sigma > 0` each sample gets Gaussian
/// noise scaled to `‖Z̃‖_F = σ`.
pub fn in_class_batch(
    s_tilde: &RMat,
    m: usize,
    count: usize,
    sparsity: usize,
    beta: f64,
    sigma: f64,
    seed: u64,
) -> Result<StackedBatch> {
    let (l2, n2) = s_tilde.shape();
    let n = n2 / 2;
    if sparsity == 0 || sparsity.div_ceil(2) > n {
        return Err(Error::invalid(format!("sparsity {sparsity} does not fit {n} devices")));
    }
    let mut parts = Vec::with_capacity(count);
    for i in 0..count {
        let mut r = rng::stream(derive_seed(seed, 0x7468, i as u64));
        let devices = rand::seq::index::sample(&mut r, n, sparsity.div_ceil(2));
        let mut x = RMat::zeros(n2, m);
        for (j, d) in devices.iter().enumerate() {
            let rows: Vec<usize> = if 2 * j + 1 < sparsity { vec![d, n + d] } else { vec![d] };
            for row in rows {
                let g = rng::real_normal_matrix(&mut r, 1, m);
                let target = beta * rand::Rng::random_range(&mut r, 0.5..=1.0);
                x.set_row(row, &(g.row(0) * (target / g.norm())));
            }
        }
        let mut z = RMat::zeros(l2, m);
        if sigma > 0.0 {
            z = rng::real_normal_matrix(&mut r, l2, m);
            z *= sigma / z.norm();
        }
        let y = s_tilde * &x + &z;
        parts.push((y, x, z));
    }
    Ok(StackedBatch::from_parts(m, &parts))
}
