//! Analysis weights `W` with `W[:,i]ᵀS̃[:,i] = 1` and small cross-coherence.
//!
//! [`pgd_weight`] minimizes `‖WᵀS̃‖²_F` by projected gradient descent.
//! [`minimax_weight`] minimizes `max_{j≠i} |W[:,i]ᵀS̃[:,j]|` column by column
//! with a linear program, which gives the smallest generalized coherence
//! reachable for the given dictionary.

use std::path::{Path, PathBuf};

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::{self, ArrayData};
use crate::linalg::{check_unit_columns, frob_dot, spectral_norm_sq};
use crate::{Error, RMat, Result};

const UNIT_TOL: f64 = 1e-9;
/// Largest accepted `|W[:,i]ᵀS̃[:,i] − 1|`.
pub const FEASIBILITY_TOL: f64 = 1e-8;
pub const CONTENT: &str = "coherence_weight";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    Pgd,
    Minimax,
}

impl std::str::FromStr for WeightMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgd" => Ok(Self::Pgd),
            "minimax" | "lp" => Ok(Self::Minimax),
            _ => Err(Error::invalid(format!("unknown weight method '{s}' (pgd, minimax)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceWeight {
    /// `2L x 2N`.
    pub w: RMat,
    /// `‖WᵀS̃‖²_F`.
    pub objective: f64,
    /// `max_i |W[:,i]ᵀS̃[:,i] − 1|`.
    pub constraint_violation: f64,
    pub mu_tilde_estimate: f64,
    pub method: WeightMethod,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdOptions {
    pub max_iters: usize,
    /// `None` selects `1/(2‖S̃‖₂²)`.
    pub step: Option<f64>,
    /// Relative objective change that ends the descent.
    pub tol: f64,
}

impl Default for PgdOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            step: None,
            tol: 1e-10,
        }
    }
}

/// `w ← w + (1 − sᵢᵀw)·sᵢ` for every column.
pub fn project_columns(w: &mut RMat, s: &RMat) {
    for i in 0..s.ncols() {
        let si = s.column(i);
        let gap = 1.0 - si.dot(&w.column(i));
        w.column_mut(i).axpy(gap, &si, 1.0);
    }
}

/// `max_i |W[:,i]ᵀS̃[:,i] − 1|`.
pub fn constraint_violation(w: &RMat, s: &RMat) -> f64 {
    (0..s.ncols())
        .map(|i| (w.column(i).dot(&s.column(i)) - 1.0).abs())
        .fold(0.0, f64::max)
}

fn check_pair(w: &RMat, s: &RMat) -> Result<()> {
    if w.shape() != s.shape() {
        return Err(Error::ShapeMismatch {
            context: "weight matrix",
            expected: s.shape(),
            actual: w.shape(),
        });
    }
    Ok(())
}

/// Projected gradient descent on `‖WᵀS̃‖²_F` from `W⁰ = S̃`.
///
/// Running out of iterations is not an error: the weight is returned with
/// `converged = false` and a warning is logged.
pub fn pgd_weight(s: &RMat, opts: PgdOptions) -> Result<CoherenceWeight> {
    check_unit_columns(s, UNIT_TOL)?;
    let step = match opts.step {
        None => 1.0 / (2.0 * spectral_norm_sq(s)),
        Some(t) if t > 0.0 && t.is_finite() => t,
        Some(t) => return Err(Error::invalid(format!("step must be positive, got {t}"))),
    };
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let gram = s * s.transpose();
    let mut w = s.clone();
    project_columns(&mut w, s);
    let mut gw = &gram * &w;
    let mut objective = frob_dot(&w, &gw);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        w -= &gw * (2.0 * step);
        project_columns(&mut w, s);
        gw = &gram * &w;
        let next = frob_dot(&w, &gw);
        let change = (objective - next).abs();
        objective = next;
        if change <= opts.tol * objective.abs() {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("pgd weight stopped after {iterations} iterations without meeting tol {:e}", opts.tol);
    }
    finish(w, s, WeightMethod::Pgd, iterations, converged)
}

fn finish(w: RMat, s: &RMat, method: WeightMethod, iterations: usize, converged: bool) -> Result<CoherenceWeight> {
    let violation = constraint_violation(&w, s);
    let mu = generalized_coherence(&w, s)?;
    let wts = w.tr_mul(s);
    Ok(CoherenceWeight {
        objective: wts.norm_squared(),
        constraint_violation: violation,
        mu_tilde_estimate: mu,
        method,
        iterations,
        converged,
        w,
    })
}

/// Column-wise minimax weight.
///
/// For each `i` solves `min t` subject to `sᵢᵀw = 1` and `|sⱼᵀw| ≤ t` for
/// `j ≠ i`, then rescales `w` so the equality holds to rounding.
pub fn minimax_weight(s: &RMat) -> Result<CoherenceWeight> {
    check_unit_columns(s, UNIT_TOL)?;
    let (rows, cols) = s.shape();
    let mut w = RMat::zeros(rows, cols);
    for i in 0..cols {
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let vars: Vec<_> = (0..rows).map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
        let t = lp.add_var(1.0, (0.0, f64::INFINITY));
        for j in 0..cols {
            let sj = s.column(j);
            let terms = || vars.iter().zip(sj.iter()).map(|(v, c)| (*v, *c));
            if j == i {
                lp.add_constraint(terms().collect::<Vec<_>>().as_slice(), ComparisonOp::Eq, 1.0);
            } else {
                let mut le: Vec<_> = terms().collect();
                le.push((t, -1.0));
                lp.add_constraint(le.as_slice(), ComparisonOp::Le, 0.0);
                let mut ge: Vec<_> = terms().collect();
                ge.push((t, 1.0));
                lp.add_constraint(ge.as_slice(), ComparisonOp::Ge, 0.0);
            }
        }
        let sol = lp.solve().map_err(|e| Error::LinearProgram {
            column: i,
            message: e.to_string(),
        })?;
        for (r, v) in vars.iter().enumerate() {
            w[(r, i)] = sol[*v];
        }
        let diag = w.column(i).dot(&s.column(i));
        if diag.abs() < 0.5 {
            return Err(Error::LinearProgram {
                column: i,
                message: format!("solution violates the equality constraint (sᵢᵀw = {diag})"),
            });
        }
        w.column_mut(i).scale_mut(1.0 / diag);
    }
    finish(w, s, WeightMethod::Minimax, cols, true)
}

pub fn compute_weight(s: &RMat, method: WeightMethod, opts: PgdOptions) -> Result<CoherenceWeight> {
    match method {
        WeightMethod::Pgd => pgd_weight(s, opts),
        WeightMethod::Minimax => minimax_weight(s),
    }
}

/// `max_{i≠j} |W[:,i]ᵀS̃[:,j]|` for a feasible `W`.
///
/// Values `≥ 1` are returned with a logged warning.
pub fn generalized_coherence(w: &RMat, s: &RMat) -> Result<f64> {
    check_pair(w, s)?;
    for i in 0..s.ncols() {
        let violation = (w.column(i).dot(&s.column(i)) - 1.0).abs();
        if !(violation <= FEASIBILITY_TOL) {
            return Err(Error::InfeasibleWeight { column: i, violation });
        }
    }
    let wts = w.tr_mul(s);
    let mut mu = 0.0f64;
    for j in 0..wts.ncols() {
        for i in 0..wts.nrows() {
            if i != j {
                mu = mu.max(wts[(i, j)].abs());
            }
        }
    }
    if mu >= 1.0 {
        log::warn!("generalized coherence {mu} is not below 1; the dictionary has near-duplicate columns");
    }
    Ok(mu)
}

/// Hex SHA-256 of the shape and little-endian row-major entries of `s`.
pub fn dictionary_hash(s: &RMat) -> String {
    let mut h = Sha256::new();
    h.update((s.nrows() as u64).to_le_bytes());
    h.update((s.ncols() as u64).to_le_bytes());
    for v in container::real_row_major(s) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WeightMeta {
    s_hash: String,
    method: WeightMethod,
    objective: f64,
    constraint_violation: f64,
    mu_tilde_estimate: f64,
    iterations: usize,
    converged: bool,
}

/// Stores `weight` computed for `s` in `dir`.
pub fn save_weight(dir: &Path, weight: &CoherenceWeight, s: &RMat) -> Result<PathBuf> {
    let meta = WeightMeta {
        s_hash: dictionary_hash(s),
        method: weight.method,
        objective: weight.objective,
        constraint_violation: weight.constraint_violation,
        mu_tilde_estimate: weight.mu_tilde_estimate,
        iterations: weight.iterations,
        converged: weight.converged,
    };
    container::write(dir, CONTENT, serde_json::to_value(meta)?, &[ArrayData::matrix("w", &weight.w)])
}

/// Loads a weight and checks it was computed for `s`.
pub fn load_weight(dir: &Path, s: &RMat) -> Result<CoherenceWeight> {
    let c = container::read(dir, CONTENT)?;
    let meta: WeightMeta = serde_json::from_value(c.meta.clone())?;
    let expected = dictionary_hash(s);
    if meta.s_hash != expected {
        return Err(Error::Container {
            path: dir.to_path_buf(),
            message: format!("weight was computed for dictionary {}, not {expected}", meta.s_hash),
        });
    }
    let w = c.array("w", &[s.nrows(), s.ncols()])?.real_matrix(s.nrows(), s.ncols(), 0);
    Ok(CoherenceWeight {
        w,
        objective: meta.objective,
        constraint_violation: meta.constraint_violation,
        mu_tilde_estimate: meta.mu_tilde_estimate,
        method: meta.method,
        iterations: meta.iterations,
        converged: meta.converged,
    })
}

/// Loads the weight cached under `cache/<method>-<hash>` or computes and stores it.
pub fn load_or_compute(cache: &Path, s: &RMat, method: WeightMethod, opts: PgdOptions) -> Result<CoherenceWeight> {
    let tag = match method {
        WeightMethod::Pgd => "pgd",
        WeightMethod::Minimax => "minimax",
    };
    let dir = cache.join(format!("{tag}-{}", &dictionary_hash(s)[..16]));
    if dir.join(container::MANIFEST).exists() {
        return load_weight(&dir, s);
    }
    let weight = compute_weight(s, method, opts)?;
    save_weight(&dir, &weight, s)?;
    Ok(weight)
}
