//! LISTA-GS, LISTA-GSCP and ALISTA-GS.
//!
//! Layer maps, with `η_θ` the row-wise shrinkage:
//!
//! * LISTA-GS:   `X⁺ = η_θ(W1·Y + W2·X)`
//! * LISTA-GSCP: `X⁺ = η_θ(X + Wᵀ(Y − S·X))`
//! * ALISTA-GS:  `X⁺ = η_θ(X + γ·Wᵀ(Y − S·X))` with one fixed `W` shared by all layers
//!
//! All matrices live in the lifted real domain: `S` is `2L x 2N`.

mod adam;
mod checkpoint;
mod forward;
mod train;

use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_CONTENT};
pub use forward::{backward, forward, forward_batch, forward_blocked, loss, GradScope, NetTrace};
pub use train::{
    train_layerwise, FreshSampler, Phase, SampleSource, StageLog, TrainLog, TrainSchedule,
};

use crate::coherence_weights::{pgd_weight, PgdOptions};
use crate::linalg::spectral_norm_sq;
use crate::{Error, RMat, Result};

/// Threshold of the default initialization.
pub const INIT_THETA: f64 = 0.1;
/// Step scaling of the default ALISTA-GS initialization.
pub const INIT_GAMMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    ListaGs,
    ListaGscp,
    AlistaGs,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::ListaGs, Arch::ListaGscp, Arch::AlistaGs];

    pub fn name(self) -> &'static str {
        match self {
            Arch::ListaGs => "lista_gs",
            Arch::ListaGscp => "lista_gscp",
            Arch::AlistaGs => "alista_gs",
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "lista_gs" => Ok(Arch::ListaGs),
            "lista_gscp" => Ok(Arch::ListaGscp),
            "alista_gs" => Ok(Arch::AlistaGs),
            _ => Err(Error::invalid(format!(
                "unknown architecture '{s}' (lista_gs, lista_gscp, alista_gs)"
            ))),
        }
    }
}

/// Trainable parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `w1`: `2N x 2L`, `w2`: `2N x 2N`.
    ListaGs { w1: RMat, w2: RMat, theta: f64 },
    /// `w`: `2L x 2N`.
    ListaGscp { w: RMat, theta: f64 },
    AlistaGs { theta: f64, gamma: f64 },
}

impl Layer {
    pub fn theta(&self) -> f64 {
        match self {
            Layer::ListaGs { theta, .. } | Layer::ListaGscp { theta, .. } | Layer::AlistaGs { theta, .. } => *theta,
        }
    }

    pub fn theta_mut(&mut self) -> &mut f64 {
        match self {
            Layer::ListaGs { theta, .. } | Layer::ListaGscp { theta, .. } | Layer::AlistaGs { theta, .. } => theta,
        }
    }

    pub fn arch(&self) -> Arch {
        match self {
            Layer::ListaGs { .. } => Arch::ListaGs,
            Layer::ListaGscp { .. } => Arch::ListaGscp,
            Layer::AlistaGs { .. } => Arch::AlistaGs,
        }
    }

    /// Every trainable scalar, grouped into contiguous slices in a fixed order.
    pub fn slots(&self) -> Vec<&[f64]> {
        match self {
            Layer::ListaGs { w1, w2, theta } => vec![w1.as_slice(), w2.as_slice(), std::slice::from_ref(theta)],
            Layer::ListaGscp { w, theta } => vec![w.as_slice(), std::slice::from_ref(theta)],
            Layer::AlistaGs { theta, gamma } => vec![std::slice::from_ref(theta), std::slice::from_ref(gamma)],
        }
    }

    pub fn slots_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::ListaGs { w1, w2, theta } => {
                vec![w1.as_mut_slice(), w2.as_mut_slice(), std::slice::from_mut(theta)]
            }
            Layer::ListaGscp { w, theta } => vec![w.as_mut_slice(), std::slice::from_mut(theta)],
            Layer::AlistaGs { theta, gamma } => vec![std::slice::from_mut(theta), std::slice::from_mut(gamma)],
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.slots().iter().map(|s| s.len()).sum()
    }

    /// Same shape, all zeros.
    pub fn zeros_like(&self) -> Layer {
        match self {
            Layer::ListaGs { w1, w2, .. } => Layer::ListaGs {
                w1: RMat::zeros(w1.nrows(), w1.ncols()),
                w2: RMat::zeros(w2.nrows(), w2.ncols()),
                theta: 0.0,
            },
            Layer::ListaGscp { w, .. } => Layer::ListaGscp {
                w: RMat::zeros(w.nrows(), w.ncols()),
                theta: 0.0,
            },
            Layer::AlistaGs { .. } => Layer::AlistaGs { theta: 0.0, gamma: 0.0 },
        }
    }
}

/// Parameters of a `K`-layer network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub arch: Arch,
    pub layers: Vec<Layer>,
    /// Fixed analysis weight of ALISTA-GS, `2L x 2N`. Not trainable.
    pub shared_w: Option<RMat>,
    pub n_lifted: usize,
    pub l_lifted: usize,
}

/// Per-layer gradients, shaped like [`NetParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(params: &NetParams) -> Self {
        Self {
            layers: params.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.slots().into_iter().flat_map(|s| s.iter().copied()).collect::<Vec<_>>())
            .fold(0.0, |a, v| a.max(v.abs()))
    }
}

impl NetParams {
    pub fn k_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.layers.iter().map(Layer::theta).collect()
    }

    /// `γᵏ` of an ALISTA-GS network, empty otherwise.
    pub fn gammas(&self) -> Vec<f64> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::AlistaGs { gamma, .. } => Some(*gamma),
                _ => None,
            })
            .collect()
    }

    pub fn set_thetas(&mut self, thetas: &[f64]) -> Result<()> {
        if thetas.len() != self.layers.len() {
            return Err(Error::invalid(format!(
                "{} thresholds for {} layers",
                thetas.len(),
                self.layers.len()
            )));
        }
        for (l, t) in self.layers.iter_mut().zip(thetas) {
            *l.theta_mut() = *t;
        }
        Ok(())
    }

    pub fn set_gammas(&mut self, gammas: &[f64]) -> Result<()> {
        if self.arch != Arch::AlistaGs || gammas.len() != self.layers.len() {
            return Err(Error::invalid("step scalings apply to every layer of an alista_gs network"));
        }
        for (l, g) in self.layers.iter_mut().zip(gammas) {
            if let Layer::AlistaGs { gamma, .. } = l {
                *gamma = *g;
            }
        }
        Ok(())
    }

    /// Number of trainable scalars actually held.
    pub fn scalar_count(&self) -> usize {
        self.layers.iter().map(Layer::scalar_count).sum()
    }

    /// Errors unless the network is `expected`.
    pub fn require(&self, expected: Arch) -> Result<()> {
        if self.arch != expected {
            return Err(Error::WrongArchitecture {
                expected: expected.name(),
                actual: self.arch.name(),
            });
        }
        Ok(())
    }

    /// Keeps the first `k` layers.
    pub fn truncated(&self, k: usize) -> NetParams {
        let mut p = self.clone();
        p.layers.truncate(k);
        p
    }
}

/// Trainable scalar count from the closed-form formulas, lifted dimensions.
///
/// `K(N² + LN + 1)`, `K(LN + 1)` and `2K` with `N = n_lifted`, `L = l_lifted`.
pub fn param_count(arch: Arch, n_lifted: usize, l_lifted: usize, k_layers: usize) -> usize {
    match arch {
        Arch::ListaGs => k_layers * (n_lifted * n_lifted + l_lifted * n_lifted + 1),
        Arch::ListaGscp => k_layers * (l_lifted * n_lifted + 1),
        Arch::AlistaGs => 2 * k_layers,
    }
}

/// Default initialization. ALISTA-GS gets the projected-gradient weight.
pub fn init_params(arch: Arch, s_tilde: &RMat, k_layers: usize) -> Result<NetParams> {
    let shared = match arch {
        Arch::AlistaGs => Some(pgd_weight(s_tilde, PgdOptions::default())?.w),
        _ => None,
    };
    init_params_with_weight(arch, s_tilde, k_layers, shared)
}

/// Default initialization with a caller-supplied ALISTA-GS weight.
pub fn init_params_with_weight(
    arch: Arch,
    s_tilde: &RMat,
    k_layers: usize,
    shared_w: Option<RMat>,
) -> Result<NetParams> {
    if k_layers == 0 {
        return Err(Error::invalid("a network needs at least one layer"));
    }
    let (l2, n2) = s_tilde.shape();
    let c = spectral_norm_sq(s_tilde);
    if c <= 0.0 {
        return Err(Error::invalid("dictionary is zero"));
    }
    let layer = match arch {
        Arch::ListaGs => {
            let w1 = s_tilde.transpose() / c;
            let w2 = RMat::identity(n2, n2) - &w1 * s_tilde;
            Layer::ListaGs {
                w1,
                w2,
                theta: INIT_THETA,
            }
        }
        Arch::ListaGscp => Layer::ListaGscp {
            w: s_tilde / c,
            theta: INIT_THETA,
        },
        Arch::AlistaGs => Layer::AlistaGs {
            theta: INIT_THETA,
            gamma: INIT_GAMMA,
        },
    };
    let shared_w = match (arch, shared_w) {
        (Arch::AlistaGs, Some(w)) => {
            crate::linalg::ensure_shape("alista weight", &w, (l2, n2))?;
            Some(w)
        }
        (Arch::AlistaGs, None) => return Err(Error::invalid("alista_gs needs a shared weight")),
        _ => None,
    };
    Ok(NetParams {
        arch,
        layers: vec![layer; k_layers],
        shared_w,
        n_lifted: n2,
        l_lifted: l2,
    })
}

/// Parameters whose forward pass reproduces ISTA-GS with regularization `lambda`.
///
/// Default weights with every `θᵏ = λ/C`; ALISTA-GS uses `W = S̃/C`, `γᵏ = 1`.
pub fn ista_equivalent_params(arch: Arch, s_tilde: &RMat, k_layers: usize, lambda: f64) -> Result<NetParams> {
    let c = spectral_norm_sq(s_tilde);
    let shared = (arch == Arch::AlistaGs).then(|| s_tilde / c);
    let mut p = init_params_with_weight(arch, s_tilde, k_layers, shared)?;
    p.set_thetas(&vec![lambda / c; k_layers])?;
    Ok(p)
}
