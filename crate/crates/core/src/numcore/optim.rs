use super::params::ParamStore;

/// Decoupled-weight-decay Adam.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 8e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamW {
    /// One update of every trainable entry from its accumulated gradient.
    ///
    /// Decay is applied to the pre-step value (`θ ← θ(1 − lr·wd)`), then the
    /// bias-corrected Adam step is subtracted.
    pub fn step(&self, store: &mut ParamStore) {
        store.step += 1;
        let t = store.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let e = store.entry_mut(id);
            if !e.trainable {
                continue;
            }
            let n = e.value.len();
            for i in 0..n {
                let g = e.grad.data()[i];
                let m = self.beta1 * e.m.data()[i] + (1.0 - self.beta1) * g;
                let v = self.beta2 * e.v.data()[i] + (1.0 - self.beta2) * g * g;
                e.m.data_mut()[i] = m;
                e.v.data_mut()[i] = v;
                let mhat = m / bc1;
                let vhat = v / bc2;
                let theta = e.value.data()[i] * (1.0 - self.lr * self.weight_decay);
                e.value.data_mut()[i] = theta - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales all trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let e = store.entry_mut(id);
            if e.trainable {
                e.grad.data_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::tensor::SequenceTensor;

    #[test]
    fn single_step_matches_closed_form() {
        // f(θ) = (θ − 3)², θ0 = 1 → g = −4.
        let mut s = ParamStore::new();
        let id = s.add("theta", "q", SequenceTensor::scalar(1.0));
        s.accumulate_grad(id, &SequenceTensor::scalar(-4.0));
        let opt = AdamW {
            lr: 0.1,
            weight_decay: 0.01,
            ..AdamW::default()
        };
        opt.step(&mut s);
        // m̂ = g, v̂ = g², so the Adam term is lr·g/(|g| + eps).
        let expected = 1.0 * (1.0 - 0.1 * 0.01) - 0.1 * (-4.0) / (4.0 + 1e-8);
        assert!((s.value(id).data()[0] - expected).abs() < 1e-12);
        assert!((s.entry(id).m.data()[0] - (-0.4)).abs() < 1e-15);
        assert!((s.entry(id).v.data()[0] - 0.016).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_only_moves_moments() {
        let mut s = ParamStore::new();
        let id = s.add("w", "q", SequenceTensor::vector(vec![0.5, -2.0]));
        s.accumulate_grad(id, &SequenceTensor::vector(vec![1.0, 3.0]));
        AdamW { lr: 0.0, ..AdamW::default() }.step(&mut s);
        assert_eq!(s.value(id).data(), &[0.5, -2.0]);
        assert!(s.entry(id).m.max_abs() > 0.0);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut s = ParamStore::new();
        let a = s.add("a", "q", SequenceTensor::zeros(2, 1));
        let b = s.add("b", "q", SequenceTensor::zeros(1, 1));
        s.accumulate_grad(a, &SequenceTensor::vector(vec![3.0, 0.0]));
        s.accumulate_grad(b, &SequenceTensor::scalar(4.0));
        let before = clip_grad_norm(&mut s, 1.0);
        assert_eq!(before, 5.0);
        assert!((s.grad_norm() - 1.0).abs() < 1e-15);
        assert!((s.grad(a).data()[0] - 0.6).abs() < 1e-15);
        // below the threshold nothing changes
        assert_eq!(clip_grad_norm(&mut s, 10.0), s.grad_norm());
    }
}
