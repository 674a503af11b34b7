//! Network checkpoints in the shared container format.
//!
//! Thresholds, step scalings and weight matrices are stored as blobs; the
//! manifest carries the architecture, dimensions, the dictionary hash and the
//! training log. Optimizer state is not saved.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Arch, Layer, NetParams, TrainLog};
use crate::coherence_weights::dictionary_hash;
use crate::container::{self, ArrayData};
use crate::{Error, RMat, Result};

pub const CHECKPOINT_CONTENT: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    arch: Arch,
    k_layers: usize,
    n_lifted: usize,
    l_lifted: usize,
    s_hash: String,
    train_log: Option<TrainLog>,
    #[serde(default)]
    extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams,
    /// Hash of the dictionary the network was built for.
    pub s_hash: String,
    pub train_log: Option<TrainLog>,
    /// Caller-defined data such as the experiment configuration.
    pub extra: serde_json::Value,
}

impl Checkpoint {
    /// Errors unless the checkpoint was built for `s`.
    pub fn check_dictionary(&self, s: &RMat) -> Result<()> {
        if (s.nrows(), s.ncols()) != (self.params.l_lifted, self.params.n_lifted) {
            return Err(Error::ShapeMismatch {
                context: "checkpoint dictionary",
                expected: (self.params.l_lifted, self.params.n_lifted),
                actual: s.shape(),
            });
        }
        let h = dictionary_hash(s);
        if h != self.s_hash {
            return Err(Error::invalid(format!(
                "checkpoint was trained for dictionary {}, data uses {h}",
                self.s_hash
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(
    dir: &Path,
    params: &NetParams,
    s: &RMat,
    train_log: Option<&TrainLog>,
    extra: serde_json::Value,
) -> Result<PathBuf> {
    let k = params.k_layers();
    let mut arrays = vec![ArrayData::real("theta", vec![k], params.thetas())];
    match params.arch {
        Arch::ListaGs => {
            for (i, l) in params.layers.iter().enumerate() {
                if let Layer::ListaGs { w1, w2, .. } = l {
                    arrays.push(ArrayData::matrix(&format!("w1_{i}"), w1));
                    arrays.push(ArrayData::matrix(&format!("w2_{i}"), w2));
                }
            }
        }
        Arch::ListaGscp => {
            for (i, l) in params.layers.iter().enumerate() {
                if let Layer::ListaGscp { w, .. } = l {
                    arrays.push(ArrayData::matrix(&format!("w_{i}"), w));
                }
            }
        }
        Arch::AlistaGs => {
            arrays.push(ArrayData::real("gamma", vec![k], params.gammas()));
            let w = params
                .shared_w
                .as_ref()
                .ok_or_else(|| Error::invalid("alista_gs network has no shared weight"))?;
            arrays.push(ArrayData::matrix("shared_w", w));
        }
    }
    let meta = CheckpointMeta {
        arch: params.arch,
        k_layers: k,
        n_lifted: params.n_lifted,
        l_lifted: params.l_lifted,
        s_hash: dictionary_hash(s),
        train_log: train_log.cloned(),
        extra,
    };
    container::write(dir, CHECKPOINT_CONTENT, serde_json::to_value(meta)?, &arrays)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let c = container::read(dir, CHECKPOINT_CONTENT)?;
    let meta: CheckpointMeta = serde_json::from_value(c.meta.clone())?;
    let (k, n2, l2) = (meta.k_layers, meta.n_lifted, meta.l_lifted);
    let thetas = c.array("theta", &[k])?.data.clone();
    let matrix = |name: String, rows: usize, cols: usize| -> Result<RMat> {
        Ok(c.array(&name, &[rows, cols])?.real_matrix(rows, cols, 0))
    };
    let mut layers = Vec::with_capacity(k);
    let mut shared_w = None;
    match meta.arch {
        Arch::ListaGs => {
            for (i, theta) in thetas.iter().enumerate() {
                layers.push(Layer::ListaGs {
                    w1: matrix(format!("w1_{i}"), n2, l2)?,
                    w2: matrix(format!("w2_{i}"), n2, n2)?,
                    theta: *theta,
                });
            }
        }
        Arch::ListaGscp => {
            for (i, theta) in thetas.iter().enumerate() {
                layers.push(Layer::ListaGscp {
                    w: matrix(format!("w_{i}"), l2, n2)?,
                    theta: *theta,
                });
            }
        }
        Arch::AlistaGs => {
            let gammas = &c.array("gamma", &[k])?.data;
            for (theta, gamma) in thetas.iter().zip(gammas) {
                layers.push(Layer::AlistaGs {
                    theta: *theta,
                    gamma: *gamma,
                });
            }
            shared_w = Some(matrix("shared_w".into(), l2, n2)?);
        }
    }
    Ok(Checkpoint {
        params: NetParams {
            arch: meta.arch,
            layers,
            shared_w,
            n_lifted: n2,
            l_lifted: l2,
        },
        s_hash: meta.s_hash,
        train_log: meta.train_log,
        extra: meta.extra,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{init_params, TrainSchedule};
    use super::*;
    use crate::rng;
    use crate::signal_model::{gen_preamble, PreambleKind};

    #[test]
    fn round_trip_every_arch() {
        let s = gen_preamble(PreambleKind::Gaussian, 4, 7, 1).unwrap().lifted();
        let mut r = rng::stream(4);
        for arch in Arch::ALL {
            let dir = tempfile::tempdir().unwrap();
            let mut p = init_params(arch, &s, 3).unwrap();
            for layer in p.layers.iter_mut() {
                for slot in layer.slots_mut() {
                    for v in slot.iter_mut() {
                        *v += rand::Rng::random_range(&mut r, -0.01..0.01);
                    }
                }
            }
            let log = TrainLog::new(arch, 3, TrainSchedule::default());
            save_checkpoint(dir.path(), &p, &s, Some(&log), serde_json::json!({"seed": 3})).unwrap();
            let back = load_checkpoint(dir.path()).unwrap();
            assert_eq!(back.params, p, "{arch}");
            assert_eq!(back.train_log, Some(log));
            assert_eq!(back.extra["seed"], 3);
            back.check_dictionary(&s).unwrap();
            let other = gen_preamble(PreambleKind::Gaussian, 4, 7, 2).unwrap().lifted();
            assert!(back.check_dictionary(&other).is_err());
        }
    }
}
