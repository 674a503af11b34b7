//! Samples stored side by side.
//!
//! Sample `i` of a batch with `m` antennas occupies columns `i*m..(i+1)*m` of
//! every matrix. Linear layers act on the whole batch at once; row-wise
//! shrinkage and norms respect the `m`-wide blocks.

use crate::operators;
use crate::signal_model::{lift_stack, Sample};
use crate::RMat;

#[derive(Debug, Clone, PartialEq)]
pub struct StackedBatch {
    /// Lifted observations, `2L x (B·M)`.
    pub y: RMat,
    /// Lifted ground truth, `2N x (B·M)`.
    pub x_true: RMat,
    /// Lifted noise, `2L x (B·M)`.
    pub z: RMat,
    /// Columns per sample.
    pub m: usize,
}

impl StackedBatch {
    pub fn from_samples<'a>(m: usize, samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let parts: Vec<(RMat, RMat, RMat)> = samples
            .into_iter()
            .map(|s| (lift_stack(&s.observation), lift_stack(&s.signal.entries), lift_stack(&s.noise)))
            .collect();
        Self::from_parts(m, &parts)
    }

    /// Builds a batch from lifted `(y, x_true, z)` triples.
    pub fn from_parts(m: usize, parts: &[(RMat, RMat, RMat)]) -> Self {
        let b = parts.len();
        let (ly, nx) = parts.first().map_or((0, 0), |p| (p.0.nrows(), p.1.nrows()));
        let mut y = RMat::zeros(ly, b * m);
        let mut x = RMat::zeros(nx, b * m);
        let mut z = RMat::zeros(ly, b * m);
        for (i, (yi, xi, zi)) in parts.iter().enumerate() {
            y.columns_mut(i * m, m).copy_from(yi);
            x.columns_mut(i * m, m).copy_from(xi);
            z.columns_mut(i * m, m).copy_from(zi);
        }
        Self { y, x_true: x, z, m }
    }

    pub fn len(&self) -> usize {
        self.y.ncols().checked_div(self.m).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lifted row count `2N`.
    pub fn n_lifted(&self) -> usize {
        self.x_true.nrows()
    }

    /// Lifted row count `2L`.
    pub fn l_lifted(&self) -> usize {
        self.y.nrows()
    }

    pub fn sample_x(&self, i: usize) -> RMat {
        self.x_true.columns(i * self.m, self.m).into_owned()
    }

    pub fn sample_y(&self, i: usize) -> RMat {
        self.y.columns(i * self.m, self.m).into_owned()
    }

    pub fn sample_z(&self, i: usize) -> RMat {
        self.z.columns(i * self.m, self.m).into_owned()
    }

    /// Samples `range` as a new batch.
    pub fn slice(&self, start: usize, count: usize) -> Self {
        let (c0, w) = (start * self.m, count * self.m);
        Self {
            y: self.y.columns(c0, w).into_owned(),
            x_true: self.x_true.columns(c0, w).into_owned(),
            z: self.z.columns(c0, w).into_owned(),
            m: self.m,
        }
    }

    /// Row-support of each sample's ground truth (lifted row indices).
    pub fn supports(&self) -> Vec<Vec<usize>> {
        let norms = operators::row_norms_sq_blocked(&self.x_true, self.m);
        (0..norms.ncols())
            .map(|b| (0..norms.nrows()).filter(|&i| norms[(i, b)] > 0.0).collect())
            .collect()
    }

    /// Zero initial point of matching shape.
    pub fn zero_start(&self) -> RMat {
        RMat::zeros(self.n_lifted(), self.y.ncols())
    }
}

/// Frobenius norm of each sample block.
pub fn block_frobenius(x: &RMat, m: usize) -> Vec<f64> {
    (0..x.ncols() / m).map(|b| x.columns(b * m, m).norm()).collect()
}

/// `‖·‖₂,₁` of each sample block.
pub fn block_l21(x: &RMat, m: usize) -> Vec<f64> {
    let norms = operators::row_norms_sq_blocked(x, m);
    norms.column_iter().map(|c| c.iter().map(|v| v.sqrt()).sum()).collect()
}
