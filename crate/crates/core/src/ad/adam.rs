//! Bias-corrected Adam over groups of parameter tensors.

use super::tensor::Tensor;

/// Moment buffers for a fixed list of parameter tensors. The step counter
/// is shared; learning rates are supplied per group at each step so heads
/// trained at different rates can share one optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)]) -> AdamState {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    /// One update. `grads[i] = None` counts as a zero gradient. Groups whose
    /// gradient contains a non-finite entry are skipped entirely (no moment
    /// decay, no parameter change); their indices are returned so callers
    /// can log the event. Parameters are borrowed individually so tensors
    /// scattered across a model struct can be updated in place.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Option<&Tensor>],
        lrs: &[f64],
    ) -> Vec<usize> {
        assert_eq!(params.len(), self.m.len(), "parameter group count");
        assert_eq!(grads.len(), params.len());
        assert_eq!(lrs.len(), params.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut skipped = Vec::new();
        for i in 0..params.len() {
            if let Some(g) = grads[i] {
                assert_eq!(
                    g.shape(),
                    params[i].shape(),
                    "gradient shape for group {i}"
                );
                if !g.all_finite() {
                    skipped.push(i);
                    continue;
                }
            }
            let zero;
            let g = match grads[i] {
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(params[i].rows(), params[i].cols());
                    &zero
                }
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params[i].data_mut();
            for (((pv, mv), vv), &gv) in p
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lrs[i] * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        skipped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p0 = Tensor::from_vec(1, 2, vec![1.0, -2.0]).unwrap();
        let mut state = AdamState::new(&[(1, 2)]);
        let skipped = state.step(&mut [&mut p0], &[None], &[0.01]);
        assert!(skipped.is_empty());
        assert_eq!(p0.data(), &[1.0, -2.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_about_lr_in_grad_sign() {
        let mut p0 = Tensor::scalar(0.0);
        let mut state = AdamState::new(&[(1, 1)]);
        let grad = Tensor::scalar(0.3);
        state.step(&mut [&mut p0], &[Some(&grad)], &[0.01]);
        // m_hat = g, v_hat = g^2: update = -lr * g / (|g| + eps) = -lr-ish.
        let got = p0.scalar_value();
        assert!((got + 0.01).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn constant_gradient_drifts_monotonically() {
        let mut p0 = Tensor::scalar(0.0);
        let mut state = AdamState::new(&[(1, 1)]);
        let grad = Tensor::scalar(-1.0);
        let mut last = 0.0;
        for _ in 0..50 {
            state.step(&mut [&mut p0], &[Some(&grad)], &[0.001]);
            let now = p0.scalar_value();
            assert!(now > last, "drift must follow -grad");
            last = now;
        }
    }

    #[test]
    fn non_finite_gradient_skips_group() {
        let mut p0 = Tensor::scalar(1.0);
        let mut p1 = Tensor::scalar(2.0);
        let mut state = AdamState::new(&[(1, 1), (1, 1)]);
        let bad = Tensor::scalar(f64::NAN);
        let good = Tensor::scalar(1.0);
        let skipped = state.step(&mut [&mut p0, &mut p1], &[Some(&bad), Some(&good)], &[0.1, 0.1]);
        assert_eq!(skipped, vec![0]);
        assert_eq!(p0.scalar_value(), 1.0);
        assert!(p1.scalar_value() < 2.0);
        // Moments of the skipped group untouched.
        assert_eq!(state.m[0].scalar_value(), 0.0);
    }
}
