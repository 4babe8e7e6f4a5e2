use super::params::{ParamGroup, ParamStore};
use super::tensor::Tensor;

/// AdamW with decoupled weight decay and one learning rate per [`ParamGroup`].
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr_new: f64,
    pub lr_pretrained: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<(Tensor, Tensor)>,
}

impl AdamW {
    pub fn new(lr_new: f64, lr_pretrained: f64) -> Self {
        Self {
            lr_new,
            lr_pretrained,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update from the accumulated gradients. Frozen parameters are
    /// skipped; weight decay only touches matrices (rank >= 2).
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.moments.len() < store.len() {
            let have = self.moments.len();
            for (_, p) in store.iter().skip(have) {
                self.moments
                    .push((Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for (i, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id);
            if p.frozen {
                continue;
            }
            let lr = match p.group {
                ParamGroup::NewInit => self.lr_new,
                ParamGroup::PretrainedInit => self.lr_pretrained,
            };
            let wd = if p.value.ndim() >= 2 { self.weight_decay } else { 0.0 };
            let (m, v) = &mut self.moments[i];
            let (md, vd) = (m.data_mut(), v.data_mut());
            let g = p.grad.data();
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                md[j] = self.beta1 * md[j] + (1.0 - self.beta1) * g[j];
                vd[j] = self.beta2 * vd[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = md[j] / bc1;
                let vhat = vd[j] / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + self.eps) + wd * *w);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: f64, grad: f64, shape: &[usize]) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::full(shape, value), ParamGroup::NewInit);
        s.get_mut(id).grad = Tensor::full(shape, grad);
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = store_with(0.7, 0.0, &[2, 2]);
        let mut opt = AdamW::new(0.1, 0.1).with_weight_decay(0.0);
        opt.step(&mut s);
        assert!(s.iter().next().unwrap().1.value.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn zero_gradient_with_decay_shrinks() {
        let mut s = store_with(2.0, 0.0, &[2, 2]);
        let mut opt = AdamW::new(0.1, 0.1).with_weight_decay(0.5);
        opt.step(&mut s);
        let expected = 2.0 * (1.0 - 0.1 * 0.5);
        for &v in s.iter().next().unwrap().1.value.data() {
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // m = 0.1, v = 0.001; bias-corrected both are 1, so the step is
        // -lr / (1 + eps).
        let mut s = store_with(1.0, 1.0, &[1]);
        let mut opt = AdamW::new(0.1, 0.1).with_weight_decay(0.0);
        opt.step(&mut s);
        let v = s.iter().next().unwrap().1.value.data()[0];
        assert!((v - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn groups_use_their_own_rate_and_frozen_is_skipped() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::full(&[1], 0.0), ParamGroup::NewInit);
        let b = s.add("b", Tensor::full(&[1], 0.0), ParamGroup::PretrainedInit);
        let c = s.add("c", Tensor::full(&[1], 0.0), ParamGroup::NewInit);
        for id in [a, b, c] {
            s.get_mut(id).grad = Tensor::full(&[1], 1.0);
        }
        s.get_mut(c).frozen = true;
        let mut opt = AdamW::new(1e-4, 5e-5);
        opt.step(&mut s);
        assert!((s.value(a).item() + 1e-4).abs() < 1e-10);
        assert!((s.value(b).item() + 5e-5).abs() < 1e-10);
        assert_eq!(s.value(c).item(), 0.0);
    }
}
