use std::hash::{DefaultHasher, Hash, Hasher};

use super::{Arch, Gradients, Layer, NetParams};
use crate::batch::StackedBatch;
use crate::linalg::ensure_shape;
use crate::operators::{shrink_blocked, shrink_vjp_blocked};
use crate::{metrics, Error, RMat, Result};

/// Intermediates of one forward pass, kept for [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetTrace {
    /// `X̃⁰ … X̃ᵏ` for the layers that ran.
    pub iterates: Vec<RMat>,
    /// Shrinkage inputs `Uᵏ`, one per layer.
    pub pre_shrink: Vec<RMat>,
    /// `Ỹ − S̃X̃ᵏ` per layer (empty for LISTA-GS).
    pub residuals: Vec<RMat>,
    /// Columns per sample.
    pub block: usize,
    arch: Arch,
    fingerprint: u64,
}

impl NetTrace {
    pub fn depth(&self) -> usize {
        self.pre_shrink.len()
    }

    pub fn output(&self) -> &RMat {
        self.iterates.last().expect("trace holds the initial point")
    }

    /// NMSE (dB) of every iterate, starting with `X̃⁰`.
    pub fn per_layer_nmse(&self, truth: &RMat) -> Result<Vec<f64>> {
        self.iterates.iter().map(|x| metrics::nmse(x, truth)).collect()
    }
}

fn fingerprint(params: &NetParams, depth: usize) -> u64 {
    let mut h = DefaultHasher::new();
    params.arch.hash(&mut h);
    for layer in &params.layers[..depth] {
        for slot in layer.slots() {
            for v in slot {
                v.to_bits().hash(&mut h);
            }
        }
    }
    if let Some(w) = &params.shared_w {
        for v in w.as_slice() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn shared_w(params: &NetParams) -> Result<&RMat> {
    params
        .shared_w
        .as_ref()
        .ok_or_else(|| Error::invalid("alista_gs network has no shared weight"))
}

fn check_dims(params: &NetParams, s: &RMat, y: &RMat, x0: &RMat) -> Result<()> {
    ensure_shape("dictionary", s, (params.l_lifted, params.n_lifted))?;
    ensure_shape("observation", y, (params.l_lifted, y.ncols()))?;
    ensure_shape("initial point", x0, (params.n_lifted, y.ncols()))
}

/// Runs the first `upto_layer` layers on a single instance.
pub fn forward(params: &NetParams, s: &RMat, y: &RMat, x0: &RMat, upto_layer: usize) -> Result<NetTrace> {
    forward_blocked(params, s, y, x0, upto_layer, y.ncols().max(1))
}

/// Runs the first `upto_layer` layers on samples stacked `block` columns wide.
pub fn forward_blocked(
    params: &NetParams,
    s: &RMat,
    y: &RMat,
    x0: &RMat,
    upto_layer: usize,
    block: usize,
) -> Result<NetTrace> {
    if upto_layer > params.k_layers() {
        return Err(Error::invalid(format!(
            "layer {upto_layer} requested from a {}-layer network",
            params.k_layers()
        )));
    }
    if block == 0 || !y.ncols().is_multiple_of(block) {
        return Err(Error::invalid(format!("block width {block} does not divide {} columns", y.ncols())));
    }
    check_dims(params, s, y, x0)?;
    let mut iterates = Vec::with_capacity(upto_layer + 1);
    let mut pre_shrink = Vec::with_capacity(upto_layer);
    let mut residuals = Vec::new();
    iterates.push(x0.clone());
    for layer in &params.layers[..upto_layer] {
        let theta = layer.theta();
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::invalid(format!("threshold {theta} is not a finite nonnegative number")));
        }
        let x = iterates.last().unwrap();
        let u = match layer {
            Layer::ListaGs { w1, w2, .. } => w1 * y + w2 * x,
            Layer::ListaGscp { w, .. } => {
                let r = y - s * x;
                let u = x + w.transpose() * &r;
                residuals.push(r);
                u
            }
            Layer::AlistaGs { gamma, .. } => {
                let r = y - s * x;
                let u = x + (shared_w(params)?.transpose() * &r) * *gamma;
                residuals.push(r);
                u
            }
        };
        iterates.push(shrink_blocked(&u, theta, block));
        pre_shrink.push(u);
    }
    Ok(NetTrace {
        iterates,
        pre_shrink,
        residuals,
        block,
        arch: params.arch,
        fingerprint: fingerprint(params, upto_layer),
    })
}

/// Forward pass over a stacked batch from `X̃⁰ = 0`.
pub fn forward_batch(params: &NetParams, s: &RMat, batch: &StackedBatch, upto_layer: usize) -> Result<NetTrace> {
    forward_blocked(params, s, &batch.y, &batch.zero_start(), upto_layer, batch.m)
}

/// `(1/P)·‖X̃ᴷ − X̃♮‖²_F` with `P` the number of samples in the trace.
pub fn loss(trace: &NetTrace, x_truth: &RMat) -> Result<f64> {
    let out = trace.output();
    ensure_shape("ground truth", x_truth, out.shape())?;
    let samples = (out.ncols() / trace.block).max(1) as f64;
    Ok((out - x_truth).norm_squared() / samples)
}

/// Which layers receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    /// Only the deepest layer of the trace.
    LastLayer,
    /// Every layer of the trace.
    AllLayers,
}

/// Gradients of [`loss`] with respect to the layers that produced `trace`.
///
/// Layers deeper than the trace, and shallower ones under
/// [`GradScope::LastLayer`], get zero gradients.
pub fn backward(
    params: &NetParams,
    trace: &NetTrace,
    s: &RMat,
    y: &RMat,
    x_truth: &RMat,
    scope: GradScope,
) -> Result<Gradients> {
    let depth = trace.depth();
    if trace.arch != params.arch
        || depth > params.k_layers()
        || trace.iterates.len() != depth + 1
        || trace.fingerprint != fingerprint(params, depth)
    {
        return Err(Error::StaleTrace(format!(
            "trace of depth {depth} was not produced by these {} parameters",
            params.arch
        )));
    }
    ensure_shape("ground truth", x_truth, trace.output().shape())?;
    ensure_shape("observation", y, (params.l_lifted, x_truth.ncols()))?;
    let mut grads = Gradients::zeros_like(params);
    if depth == 0 {
        return Ok(grads);
    }
    let samples = (x_truth.ncols() / trace.block).max(1) as f64;
    let mut g = (trace.output() - x_truth) * (2.0 / samples);
    let lowest = match scope {
        GradScope::LastLayer => depth - 1,
        GradScope::AllLayers => 0,
    };
    for k in (lowest..depth).rev() {
        let (gu, gtheta) = shrink_vjp_blocked(&trace.pre_shrink[k], params.layers[k].theta(), &g, trace.block);
        let need_prev = k > lowest;
        match (&params.layers[k], &mut grads.layers[k]) {
            (Layer::ListaGs { w2, .. }, Layer::ListaGs { w1: g1, w2: g2, theta }) => {
                *g1 = &gu * y.transpose();
                *g2 = &gu * trace.iterates[k].transpose();
                *theta = gtheta;
                if need_prev {
                    g = w2.transpose() * &gu;
                }
            }
            (Layer::ListaGscp { w, .. }, Layer::ListaGscp { w: gw, theta }) => {
                *gw = &trace.residuals[k] * gu.transpose();
                *theta = gtheta;
                if need_prev {
                    g = &gu - s.transpose() * (w * &gu);
                }
            }
            (Layer::AlistaGs { gamma, .. }, Layer::AlistaGs { theta, gamma: ggamma }) => {
                let w = shared_w(params)?;
                let wtr = w.transpose() * &trace.residuals[k];
                *ggamma = crate::linalg::frob_dot(&gu, &wtr);
                *theta = gtheta;
                if need_prev {
                    g = &gu - (s.transpose() * (w * &gu)) * *gamma;
                }
            }
            _ => unreachable!("gradient layout follows the parameters"),
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::super::{init_params, ista_equivalent_params};
    use super::*;
    use crate::rng;
    use crate::signal_model::{gen_preamble, lift_to_real, PreambleKind, ProblemInstance};
    use crate::solvers::{ista_gs, Step};

    fn setup(seed: u64) -> (RMat, RMat, RMat) {
        let pre = gen_preamble(PreambleKind::Gaussian, 5, 9, seed).unwrap();
        let inst = ProblemInstance::generate(&pre, 3, 0.4, Some(20.0), seed + 7).unwrap();
        let sys = lift_to_real(&inst);
        (sys.s_tilde, sys.y_tilde, sys.x_tilde)
    }

    #[test]
    fn init_equivalence_with_ista() {
        let (s, y, _) = setup(1);
        let x0 = RMat::zeros(s.ncols(), y.ncols());
        let ista = ista_gs(&y, &s, 0.1, 6, Step::Auto, &x0).unwrap();
        for arch in Arch::ALL {
            let p = ista_equivalent_params(arch, &s, 6, 0.1).unwrap();
            let tr = forward(&p, &s, &y, &x0, 6).unwrap();
            for (a, b) in tr.iterates.iter().zip(&ista.iterates) {
                assert!((a - b).amax() < 1e-10, "{arch}");
            }
        }
    }

    #[test]
    fn huge_threshold_zeroes_output() {
        let (s, y, _) = setup(2);
        let mut p = init_params(Arch::ListaGscp, &s, 2).unwrap();
        p.set_thetas(&[1e6, 0.1]).unwrap();
        let tr = forward(&p, &s, &y, &RMat::zeros(s.ncols(), y.ncols()), 1).unwrap();
        assert_eq!(tr.iterates[1].amax(), 0.0);
    }

    #[test]
    fn noiseless_truth_is_a_fixed_input() {
        let pre = gen_preamble(PreambleKind::Gaussian, 5, 9, 3).unwrap();
        let inst = ProblemInstance::generate(&pre, 3, 0.4, None, 3).unwrap();
        let sys = lift_to_real(&inst);
        let p = init_params(Arch::ListaGscp, &sys.s_tilde, 1).unwrap();
        let tr = forward(&p, &sys.s_tilde, &sys.y_tilde, &sys.x_tilde, 1).unwrap();
        assert!((&tr.pre_shrink[0] - &sys.x_tilde).amax() < 1e-14);
    }

    #[test]
    fn layer_out_of_range() {
        let (s, y, _) = setup(4);
        let p = init_params(Arch::ListaGs, &s, 2).unwrap();
        assert!(forward(&p, &s, &y, &RMat::zeros(s.ncols(), y.ncols()), 3).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let (s, y, _) = setup(5);
        let p = init_params(Arch::AlistaGs, &s, 3).unwrap();
        let x0 = RMat::zeros(s.ncols(), y.ncols());
        assert_eq!(forward(&p, &s, &y, &x0, 3).unwrap(), forward(&p, &s, &y, &x0, 3).unwrap());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (s, y, _) = setup(6);
        for arch in Arch::ALL {
            let p = init_params(arch, &s, 2).unwrap();
            let tr = forward(&p, &s, &y, &RMat::zeros(s.ncols(), y.ncols()), 2).unwrap();
            let g = backward(&p, &tr, &s, &y, &tr.output().clone(), GradScope::AllLayers).unwrap();
            assert_eq!(g.max_abs(), 0.0);
        }
    }

    #[test]
    fn stale_trace_rejected() {
        let (s, y, x) = setup(8);
        let mut p = init_params(Arch::ListaGscp, &s, 2).unwrap();
        let tr = forward(&p, &s, &y, &RMat::zeros(s.ncols(), y.ncols()), 2).unwrap();
        p.set_thetas(&[0.2, 0.2]).unwrap();
        assert!(matches!(
            backward(&p, &tr, &s, &y, &x, GradScope::AllLayers),
            Err(Error::StaleTrace(_))
        ));
        let q = init_params(Arch::ListaGs, &s, 2).unwrap();
        assert!(backward(&q, &tr, &s, &y, &x, GradScope::AllLayers).is_err());
    }

    fn loss_of(p: &NetParams, s: &RMat, y: &RMat, x: &RMat, block: usize) -> f64 {
        let x0 = RMat::zeros(s.ncols(), y.ncols());
        loss(&forward_blocked(p, s, y, &x0, p.k_layers(), block).unwrap(), x).unwrap()
    }

    /// Central differences on every scalar (or a deterministic subsample).
    fn check_gradients(arch: Arch, k: usize, seed: u64, stride: usize) {
        let (s, y1, x1) = setup(seed);
        let (_, y2, x2) = {
            let pre = gen_preamble(PreambleKind::Gaussian, 5, 9, seed).unwrap();
            let inst = ProblemInstance::generate(&pre, 3, 0.4, Some(20.0), seed + 1000).unwrap();
            let sys = lift_to_real(&inst);
            (sys.s_tilde, sys.y_tilde, sys.x_tilde)
        };
        let y = RMat::from_fn(y1.nrows(), 6, |i, j| if j < 3 { y1[(i, j)] } else { y2[(i, j - 3)] });
        let x = RMat::from_fn(x1.nrows(), 6, |i, j| if j < 3 { x1[(i, j)] } else { x2[(i, j - 3)] });
        let mut p = init_params(arch, &s, k).unwrap();
        let mut r = rng::stream(seed);
        for layer in p.layers.iter_mut() {
            for slot in layer.slots_mut() {
                for v in slot.iter_mut() {
                    *v *= 1.0 + 0.1 * rand::Rng::random_range(&mut r, -1.0..1.0);
                }
            }
            *layer.theta_mut() = 0.05;
        }
        let tr = forward_blocked(&p, &s, &y, &RMat::zeros(s.ncols(), 6), k, 3).unwrap();
        let g = backward(&p, &tr, &s, &y, &x, GradScope::AllLayers).unwrap();
        let h = 1e-6;
        let mut idx = 0usize;
        for li in 0..k {
            let nslots = p.layers[li].slots().len();
            for si in 0..nslots {
                let len = p.layers[li].slots()[si].len();
                for e in 0..len {
                    idx += 1;
                    if !idx.is_multiple_of(stride) {
                        continue;
                    }
                    let orig = p.layers[li].slots()[si][e];
                    p.layers[li].slots_mut()[si][e] = orig + h;
                    let up = loss_of(&p, &s, &y, &x, 3);
                    p.layers[li].slots_mut()[si][e] = orig - h;
                    let down = loss_of(&p, &s, &y, &x, 3);
                    p.layers[li].slots_mut()[si][e] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let an = g.layers[li].slots()[si][e];
                    let scale = fd.abs().max(an.abs()).max(1e-4);
                    assert!(
                        (fd - an).abs() / scale < 1e-5,
                        "{arch} K={k} layer {li} slot {si} entry {e}: fd {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for arch in Arch::ALL {
            check_gradients(arch, 1, 11, 1);
            check_gradients(arch, 3, 12, 7);
        }
    }

    #[test]
    fn last_layer_scope_only_touches_last_layer() {
        let (s, y, x) = setup(9);
        let p = init_params(Arch::ListaGscp, &s, 3).unwrap();
        let tr = forward(&p, &s, &y, &RMat::zeros(s.ncols(), y.ncols()), 3).unwrap();
        let all = backward(&p, &tr, &s, &y, &x, GradScope::AllLayers).unwrap();
        let last = backward(&p, &tr, &s, &y, &x, GradScope::LastLayer).unwrap();
        assert_eq!(last.layers[2], all.layers[2]);
        assert_eq!(last.layers[0], p.layers[0].zeros_like());
    }
}
