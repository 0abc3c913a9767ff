use alloc::vec::Vec;

use super::{Real, Tensor};

/// Adam with bias correction. `weight_decay` adds an L2 term to the gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments per parameter tensor, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<R: Real>(params: &[Tensor<R>]) -> Self {
        Self {
            m: params.iter().map(|p| alloc::vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| alloc::vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }
}

impl Adam {
    pub fn step<R: Real>(&self, params: &mut [Tensor<R>], grads: &[Tensor<R>], state: &mut AdamState) {
        assert_eq!(params.len(), grads.len(), "adam: params/grads count");
        assert_eq!(params.len(), state.m.len(), "adam: params/state count");
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - libm::pow(self.beta1, f64::from(t));
        let c2 = 1.0 - libm::pow(self.beta2, f64::from(t));
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.shape(), g.shape(), "adam: param/grad shape");
            let (m, v) = (&mut state.m[k], &mut state.v[k]);
            for (i, (w, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let wf = w.as_f64();
                let gf = gv.as_f64() + self.weight_decay * wf;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gf;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gf * gf;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *w = R::from_f64(wf - self.lr * mh / (libm::sqrt(vh) + self.eps));
            }
        }
    }
}
