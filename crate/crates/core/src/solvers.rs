//! ISTA-GS and its accelerated (FISTA) variant for the group LASSO.

use serde::{Deserialize, Serialize};

use crate::linalg::spectral_norm_sq;
use crate::operators::{check_lasso_shapes, objective_blocked, shrink_blocked};
use crate::{metrics, Error, RMat, Result};

/// Gradient step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Step {
    /// `1/C` with `C = ‖S̃‖₂²`.
    #[default]
    Auto,
    Fixed(f64),
}

impl Step {
    /// Resolves to a concrete step for dictionary `s`.
    pub fn resolve(self, s: &RMat) -> Result<f64> {
        match self {
            Step::Auto => {
                let c = spectral_norm_sq(s);
                if c <= 0.0 {
                    return Err(Error::invalid("dictionary is zero, no step size exists"));
                }
                Ok(1.0 / c)
            }
            Step::Fixed(t) if t > 0.0 && t.is_finite() => Ok(t),
            Step::Fixed(t) => Err(Error::invalid(format!("step must be positive, got {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateTrace {
    /// `X̃⁰ … X̃ᴷ`.
    pub iterates: Vec<RMat>,
    pub objectives: Vec<f64>,
    pub per_iter_nmse: Option<Vec<f64>>,
}

impl IterateTrace {
    pub fn last(&self) -> &RMat {
        self.iterates.last().expect("trace holds at least the initial point")
    }

    /// Fills `per_iter_nmse` against `truth` (dB).
    pub fn attach_nmse(&mut self, truth: &RMat) -> Result<()> {
        let v = self.iterates.iter().map(|x| metrics::nmse(x, truth)).collect::<Result<Vec<_>>>()?;
        self.per_iter_nmse = Some(v);
        Ok(())
    }
}

fn check_inputs(y: &RMat, s: &RMat, x0: &RMat, lambda: f64, block: usize) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    check_lasso_shapes(y, s, x0)?;
    if block == 0 || !y.ncols().is_multiple_of(block) {
        return Err(Error::invalid(format!("block width {block} does not divide {} columns", y.ncols())));
    }
    Ok(())
}

fn prox_grad(y: &RMat, s: &RMat, v: &RMat, step: f64, threshold: f64, block: usize) -> RMat {
    let residual = y - s * v;
    let u = v + s.tr_mul(&residual) * step;
    shrink_blocked(&u, threshold, block)
}

/// ISTA-GS on a single instance.
pub fn ista_gs(y: &RMat, s: &RMat, lambda: f64, k_iters: usize, step: Step, x0: &RMat) -> Result<IterateTrace> {
    ista_gs_blocked(y, s, lambda, k_iters, step, x0, y.ncols().max(1))
}

/// ISTA-GS on samples stacked side by side, `block` columns each.
///
/// The objective recorded is the sum of the per-sample objectives.
pub fn ista_gs_blocked(
    y: &RMat,
    s: &RMat,
    lambda: f64,
    k_iters: usize,
    step: Step,
    x0: &RMat,
    block: usize,
) -> Result<IterateTrace> {
    check_inputs(y, s, x0, lambda, block)?;
    let t = step.resolve(s)?;
    let mut iterates = Vec::with_capacity(k_iters + 1);
    let mut objectives = Vec::with_capacity(k_iters + 1);
    iterates.push(x0.clone());
    objectives.push(objective_blocked(y, s, x0, lambda, block));
    for _ in 0..k_iters {
        let next = prox_grad(y, s, iterates.last().unwrap(), t, lambda * t, block);
        objectives.push(objective_blocked(y, s, &next, lambda, block));
        iterates.push(next);
    }
    Ok(IterateTrace {
        iterates,
        objectives,
        per_iter_nmse: None,
    })
}

/// FISTA on a single instance.
pub fn nesterov_gs(y: &RMat, s: &RMat, lambda: f64, k_iters: usize, step: Step, x0: &RMat) -> Result<IterateTrace> {
    nesterov_gs_blocked(y, s, lambda, k_iters, step, x0, y.ncols().max(1))
}

/// FISTA on samples stacked side by side.
pub fn nesterov_gs_blocked(
    y: &RMat,
    s: &RMat,
    lambda: f64,
    k_iters: usize,
    step: Step,
    x0: &RMat,
    block: usize,
) -> Result<IterateTrace> {
    check_inputs(y, s, x0, lambda, block)?;
    let t = step.resolve(s)?;
    let mut iterates = Vec::with_capacity(k_iters + 1);
    let mut objectives = Vec::with_capacity(k_iters + 1);
    iterates.push(x0.clone());
    objectives.push(objective_blocked(y, s, x0, lambda, block));
    let mut momentum = 1.0f64;
    let mut v = x0.clone();
    for k in 0..k_iters {
        let next = prox_grad(y, s, &v, t, lambda * t, block);
        let momentum_next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        v = &next + (&next - &iterates[k]) * ((momentum - 1.0) / momentum_next);
        momentum = momentum_next;
        objectives.push(objective_blocked(y, s, &next, lambda, block));
        iterates.push(next);
    }
    Ok(IterateTrace {
        iterates,
        objectives,
        per_iter_nmse: None,
    })
}
