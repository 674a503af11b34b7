use serde::{Deserialize, Serialize};

use super::{Gradients, Layer, NetParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates shaped like the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Layer>,
    pub second: Vec<Layer>,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &NetParams, config: AdamConfig) -> Self {
        let zeros: Vec<Layer> = params.layers.iter().map(Layer::zeros_like).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            config,
        }
    }

    /// One bias-corrected Adam update of the layers in `active`, then `θ ← max(θ, 0)`.
    ///
    /// Moments of inactive layers are left untouched.
    pub fn step(&mut self, params: &mut NetParams, grads: &Gradients, lr: f64, active: std::ops::Range<usize>) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for k in active {
            let g_slots = grads.layers[k].slots();
            let m_slots = self.first[k].slots_mut();
            let v_slots = self.second[k].slots_mut();
            let p_slots = params.layers[k].slots_mut();
            for (((p, g), m), v) in p_slots.into_iter().zip(g_slots).zip(m_slots).zip(v_slots) {
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let mhat = m[i] / c1;
                    let vhat = v[i] / c2;
                    p[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
            let theta = params.layers[k].theta_mut();
            if *theta < 0.0 {
                *theta = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{init_params, Arch};
    use super::*;
    use crate::signal_model::{gen_preamble, PreambleKind};

    fn params() -> NetParams {
        let s = gen_preamble(PreambleKind::Gaussian, 4, 6, 1).unwrap().lifted();
        init_params(Arch::ListaGscp, &s, 2).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = params();
        let before = p.clone();
        let mut st = AdamState::new(&p, AdamConfig::default());
        let g = Gradients::zeros_like(&p);
        for _ in 0..5 {
            st.step(&mut p, &g, 1e-2, 0..2);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut p = params();
        let mut st = AdamState::new(&p, AdamConfig::default());
        let mut g = Gradients::zeros_like(&p);
        for slot in g.layers[1].slots_mut() {
            slot.fill(-3.0);
        }
        let lr = 1e-3;
        let mut last = p.layers[1].theta();
        for _ in 0..50 {
            st.step(&mut p, &g, lr, 0..2);
            let now = p.layers[1].theta();
            assert!(((now - last) - lr).abs() < 1e-9);
            last = now;
        }
        assert_eq!(p.layers[0], params().layers[0]);
    }

    #[test]
    fn inactive_layers_are_frozen() {
        let mut p = params();
        let mut st = AdamState::new(&p, AdamConfig::default());
        let mut g = Gradients::zeros_like(&p);
        for layer in g.layers.iter_mut() {
            for slot in layer.slots_mut() {
                slot.fill(0.5);
            }
        }
        st.step(&mut p, &g, 1e-2, 1..2);
        assert_eq!(p.layers[0], params().layers[0]);
        assert_ne!(p.layers[1], params().layers[1]);
    }

    #[test]
    fn negative_threshold_is_clamped() {
        let mut p = params();
        let mut st = AdamState::new(&p, AdamConfig::default());
        let mut g = Gradients::zeros_like(&p);
        *g.layers[0].theta_mut() = 1.0;
        st.step(&mut p, &g, 1.0, 0..1);
        assert_eq!(p.layers[0].theta(), 0.0);
    }
}
