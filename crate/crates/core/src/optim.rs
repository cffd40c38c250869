//! Adamax parameter updates and the cosine learning-rate schedule.

use crate::error::Result;
use crate::require;
use crate::tensor::{Element, Tensor};

/// Adamax: Adam with an infinity-norm second moment. State is one pair of
/// buffers per parameter, kept in registration order.
pub struct Adamax<T: Element = crate::tensor::Real> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: Vec<Tensor<T>>,
    u: Vec<Tensor<T>>,
}

impl<T: Element> Adamax<T> {
    pub fn new(shapes: &[&[usize]]) -> Self {
        Adamax {
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            u: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Snapshot of the moment buffers, in registration order.
    pub fn state(&self) -> (u64, Vec<Tensor<T>>, Vec<Tensor<T>>) {
        (self.step, self.m.clone(), self.u.clone())
    }

    /// Restore buffers captured by [`Adamax::state`].
    pub fn restore(&mut self, step: u64, m: Vec<Tensor<T>>, u: Vec<Tensor<T>>) -> Result<()> {
        require!(
            m.len() == self.m.len() && u.len() == self.u.len(),
            "restored state covers {} buffers, optimizer has {}",
            m.len(),
            self.m.len()
        );
        for (a, b) in m.iter().zip(&self.m) {
            require!(a.shape() == b.shape(), "restored state shape mismatch");
        }
        for (a, b) in u.iter().zip(&self.u) {
            require!(a.shape() == b.shape(), "restored state shape mismatch");
        }
        self.step = step;
        self.m = m;
        self.u = u;
        Ok(())
    }

    /// Apply one update in place. `params` and `grads` must match the
    /// registered buffers pairwise in count and shape.
    pub fn step(&mut self, lr: f64, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        require!(
            params.len() == self.m.len() && grads.len() == self.m.len(),
            "optimizer registered {} buffers, got {} params / {} grads",
            self.m.len(),
            params.len(),
            grads.len()
        );
        self.step += 1;
        let t = self.step as i32;
        let bias = T::one() - self.beta1.powi(t);
        let scale = T::from_f64(lr) / bias;
        for ((p, g), (m, u)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.u.iter_mut()))
        {
            require!(
                p.shape() == g.shape() && p.shape() == m.shape(),
                "optimizer shape mismatch: param {:?}, grad {:?}, state {:?}",
                p.shape(),
                g.shape(),
                m.shape()
            );
            g.check_finite("adamax_step")?;
            let one_minus_b1 = T::one() - self.beta1;
            for i in 0..p.numel() {
                let gi = g.data()[i];
                let mi = self.beta1 * m.data()[i] + one_minus_b1 * gi;
                let ui_prev = self.beta2 * u.data()[i];
                let ui = if ui_prev > gi.abs() { ui_prev } else { gi.abs() };
                m.data_mut()[i] = mi;
                u.data_mut()[i] = ui;
                p.data_mut()[i] = p.data()[i] - scale * mi / (ui + self.eps);
            }
            p.check_finite("adamax_step")?;
        }
        Ok(())
    }
}

/// Cosine annealing from `lr0` at epoch 0 down to 0 at `total` epochs.
pub fn cosine_anneal_lr(lr0: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = (epoch as f64) / (total as f64);
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}
