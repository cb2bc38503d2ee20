//! Adam with L2 weight decay and global-norm gradient clipping, operating on
//! one parameter group of a [`ParamStore`].

use std::collections::HashMap;

use ndarray::ArrayD;

use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn new(lr: f64, betas: (f64, f64), weight_decay: f64, clip_norm: Option<f64>) -> Self {
        AdamConfig {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            weight_decay,
            clip_norm,
        }
    }
}

pub struct Adam<F: Scalar> {
    pub cfg: AdamConfig,
    ids: Vec<ParamId>,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
    t: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(store: &ParamStore<F>, group: ParamGroup, cfg: AdamConfig) -> Self {
        let ids = store.ids_in_group(group);
        let m = ids
            .iter()
            .map(|id| ArrayD::zeros(store.value(*id).raw_dim()))
            .collect();
        let v = ids
            .iter()
            .map(|id| ArrayD::zeros(store.value(*id).raw_dim()))
            .collect();
        Adam {
            cfg,
            ids,
            m,
            v,
            t: 0,
        }
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update. Parameters without a gradient entry get a zero
    /// gradient (weight decay still moves them). Returns the pre-clip global
    /// gradient norm.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &HashMap<usize, ArrayD<F>>) -> f64 {
        let mut norm_sq = 0.0f64;
        for id in &self.ids {
            if let Some(gr) = grads.get(&id.0) {
                for v in gr.iter() {
                    let x = v.to_f64_lossy();
                    norm_sq += x * x;
                }
            }
        }
        let norm = norm_sq.sqrt();
        let clip_scale = match self.cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };

        self.t += 1;
        let b1 = F::from_f64_lossy(self.cfg.beta1);
        let b2 = F::from_f64_lossy(self.cfg.beta2);
        let one = F::one();
        let lr = F::from_f64_lossy(self.cfg.lr);
        let eps = F::from_f64_lossy(self.cfg.eps);
        let wd = F::from_f64_lossy(self.cfg.weight_decay);
        let cs = F::from_f64_lossy(clip_scale);
        let bias1 = one - b1.powi(self.t as i32);
        let bias2 = one - b2.powi(self.t as i32);

        for (k, id) in self.ids.iter().enumerate() {
            let value = store.value_mut(*id);
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let zero_grad;
            let grad = match grads.get(&id.0) {
                Some(gr) => gr,
                None => {
                    zero_grad = ArrayD::zeros(value.raw_dim());
                    &zero_grad
                }
            };
            for ((p, g), (mi, vi)) in value
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = *g * cs + wd * *p;
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let mhat = *mi / bias1;
                let vhat = *vi / bias2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        norm
    }

    /// Moment tensors for checkpointing, keyed by parameter index.
    pub fn state(&self) -> (u64, Vec<(usize, &ArrayD<F>, &ArrayD<F>)>) {
        (
            self.t,
            self.ids
                .iter()
                .enumerate()
                .map(|(k, id)| (id.0, &self.m[k], &self.v[k]))
                .collect(),
        )
    }

    pub fn restore(&mut self, t: u64, moments: HashMap<usize, (ArrayD<F>, ArrayD<F>)>) {
        self.t = t;
        for (k, id) in self.ids.iter().enumerate() {
            if let Some((m, v)) = moments.get(&id.0) {
                self.m[k] = m.clone();
                self.v[k] = v.clone();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{zeros, ParamGroup};
    use ndarray::IxDyn;

    fn single_param_store(p0: f64) -> (ParamStore<f64>, ParamId) {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("p", ParamGroup::Weight, {
            let mut z = zeros(&[1]);
            z[IxDyn(&[0])] = p0;
            z
        });
        (store, id)
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // Hand-executed Adam: p=1.0, g=0.5, lr=0.1, betas (0.9, 0.999), no wd
        let (mut store, id) = single_param_store(1.0);
        let cfg = AdamConfig::new(0.1, (0.9, 0.999), 0.0, None);
        let mut adam = Adam::new(&store, ParamGroup::Weight, cfg);
        let mut grads = HashMap::new();
        let mut g = zeros(&[1]);
        g[IxDyn(&[0])] = 0.5;
        grads.insert(id.0, g);
        adam.step(&mut store, &grads);

        // m = 0.1*0.5 = 0.05 ; v = 0.001*0.25 = 2.5e-4
        // mhat = 0.05/0.1 = 0.5 ; vhat = 2.5e-4/0.001 = 0.25
        // p = 1 - 0.1 * 0.5 / (sqrt(0.25) + 1e-8)
        let expected = 1.0 - 0.1 * 0.5 / (0.25f64.sqrt() + 1e-8);
        let got = store.value(id)[IxDyn(&[0])];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn zero_gradient_moves_only_by_weight_decay() {
        let (mut store, id) = single_param_store(2.0);
        let cfg = AdamConfig::new(0.01, (0.5, 0.999), 1e-3, None);
        let mut adam = Adam::new(&store, ParamGroup::Weight, cfg);
        adam.step(&mut store, &HashMap::new());
        // effective grad = wd*p = 2e-3
        let g: f64 = 2e-3;
        let mhat = g; // bias-corrected first moment equals g on step 1
        let vhat = g * g;
        let expected = 2.0 - 0.01 * mhat / (vhat.sqrt() + 1e-8);
        let got = store.value(id)[IxDyn(&[0])];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert!(got < 2.0, "shrinks toward zero");
    }

    #[test]
    fn no_decay_no_grad_is_a_fixed_point() {
        let (mut store, id) = single_param_store(3.0);
        let cfg = AdamConfig::new(0.01, (0.9, 0.999), 0.0, None);
        let mut adam = Adam::new(&store, ParamGroup::Weight, cfg);
        adam.step(&mut store, &HashMap::new());
        assert_eq!(store.value(id)[IxDyn(&[0])], 3.0);
    }

    #[test]
    fn clipping_rescales_large_gradients() {
        let (mut store, id) = single_param_store(0.0);
        let cfg = AdamConfig::new(1.0, (0.0, 0.0), 0.0, Some(5.0));
        // with betas = 0 Adam reduces to sign-ish update: p -= lr * g/|g|
        let mut adam = Adam::new(&store, ParamGroup::Weight, cfg);
        let mut grads = HashMap::new();
        let mut g = zeros(&[1]);
        g[IxDyn(&[0])] = 50.0;
        grads.insert(id.0, g);
        let norm = adam.step(&mut store, &grads);
        assert!((norm - 50.0).abs() < 1e-12);
        // clipped grad = 5; update = -1 * 5/(5+eps) ≈ -1
        let got = store.value(id)[IxDyn(&[0])];
        assert!((got + 1.0).abs() < 1e-6, "{got}");
    }

    #[test]
    fn step_only_touches_own_group() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", ParamGroup::Weight, zeros(&[2]));
        let th = store.add("th", ParamGroup::Theta, zeros(&[2]));
        let theta_before = store.checksum(ParamGroup::Theta);
        let cfg = AdamConfig::new(0.1, (0.9, 0.999), 1e-2, None);
        let mut adam = Adam::new(&store, ParamGroup::Weight, cfg);
        let mut grads = HashMap::new();
        let mut g = zeros(&[2]);
        g[IxDyn(&[0])] = 1.0;
        grads.insert(w.0, g);
        // also offer a gradient for theta: it must be ignored
        let mut gt = zeros(&[2]);
        gt[IxDyn(&[0])] = 9.0;
        grads.insert(th.0, gt);
        adam.step(&mut store, &grads);
        assert_eq!(store.checksum(ParamGroup::Theta), theta_before);
    }
}
