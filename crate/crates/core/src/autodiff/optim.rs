use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// AdamW moments and hyper-parameters for an ordered parameter list.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &[Tensor], lr: f64, weight_decay: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { m: zeros(), v: zeros(), step: 0, lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One decoupled-weight-decay Adam update at the learning rate stored in `state`.
pub fn adamw_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptimizerState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adamw_step",
            format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape("adamw_step", format!("parameter {i}: {:?} vs grad {:?}", p.shape(), g.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (lr, wd, b1, b2, eps) = (state.lr, state.weight_decay, state.beta1, state.beta2, state.eps);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for (j, &gj) in g.data().iter().enumerate() {
            md[j] = b1 * md[j] + (1.0 - b1) * gj;
            vd[j] = b2 * vd[j] + (1.0 - b2) * gj * gj;
            let update = (md[j] / bc1) / ((vd[j] / bc2).sqrt() + eps);
            pd[j] -= lr * (update + wd * pd[j]);
        }
    }
    Ok(())
}

/// Linear warmup followed by polynomial decay to zero.
#[derive(Debug, Clone, Copy)]
pub struct PolySchedule {
    pub base_lr: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub power: f64,
}

impl PolySchedule {
    /// Warmup covers `warmup_frac` of the run.
    pub fn new(base_lr: f64, total_steps: usize, warmup_frac: f64, power: f64) -> Self {
        let warmup_steps = ((total_steps as f64 * warmup_frac).round() as usize).min(total_steps);
        Self { base_lr, total_steps, warmup_steps, power }
    }

    /// Learning rate for 0-based step `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        if t < self.warmup_steps {
            return self.base_lr * (t + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let frac = ((t - self.warmup_steps) as f64 / span).min(1.0);
        self.base_lr * (1.0 - frac).powf(self.power)
    }
}
