use rand::Rng;

use crate::autodiff::{ScanVars, Tape, Tensor, Var};
use crate::blocks::config::{ModelConfig, STAGES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> u64 {
        self.tensors.iter().map(|t| t.len() as u64).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Records every tensor on `tape`, trainable or not.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound(self.tensors.iter().map(|t| tape.leaf(t.clone(), trainable)).collect())
    }
}

/// Tape variables for every entry of a [`ParamStore`], in store order.
#[derive(Debug, Clone)]
pub struct Bound(pub Vec<Var>);

impl Bound {
    pub fn v(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScanParamIds {
    pub a_log: ParamId,
    pub w_delta: ParamId,
    pub b_delta: ParamId,
    pub w_b: ParamId,
    pub w_c: ParamId,
    pub d: ParamId,
}

impl ScanParamIds {
    pub fn bind(&self, b: &Bound) -> ScanVars {
        ScanVars {
            a_log: b.v(self.a_log),
            w_delta: b.v(self.w_delta),
            b_delta: b.v(self.b_delta),
            w_b: b.v(self.w_b),
            w_c: b.v(self.w_c),
            d: b.v(self.d),
        }
    }
}

/// One residual VMS block. A single scan parameter set serves all eight slots.
#[derive(Debug, Clone, Copy)]
pub struct VmsBlockParams {
    pub dim: usize,
    pub norm_g: ParamId,
    pub norm_b: ParamId,
    pub in_w: ParamId,
    pub in_b: ParamId,
    pub conv_k: ParamId,
    pub scan: ScanParamIds,
    pub gate_w: ParamId,
    pub gate_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearParams {
    pub w: ParamId,
    pub b: ParamId,
}

/// Parameter layout of the full encoder/decoder.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub embed: LinearParams,
    pub stages: Vec<Vec<VmsBlockParams>>,
    /// Projections entering stages 2..4.
    pub downsample: Vec<LinearParams>,
    pub head: LinearParams,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

fn linear(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dout: usize, din: usize) -> LinearParams {
    let bound = 1.0 / (din as f64).sqrt();
    LinearParams {
        w: store.add(format!("{name}.weight"), uniform(rng, &[dout, din], bound)),
        b: store.add(format!("{name}.bias"), Tensor::zeros(&[dout])),
    }
}

/// Inverse of softplus.
fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn vms_block(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dim: usize, state: usize) -> VmsBlockParams {
    let bound = 1.0 / (dim as f64).sqrt();
    let norm_g = store.add(format!("{name}.norm.gamma"), Tensor::full(&[dim], 1.0));
    let norm_b = store.add(format!("{name}.norm.beta"), Tensor::zeros(&[dim]));
    let inp = linear(store, rng, &format!("{name}.in_proj"), dim, dim);
    let conv_k = store.add(format!("{name}.dwconv.kernel"), uniform(rng, &[dim, 9], 1.0 / 3.0));
    let a_log =
        store.add(format!("{name}.scan.a_log"), Tensor::from_fn(&[dim, state], |i| ((i % state + 1) as f64).ln()));
    let w_delta = store.add(format!("{name}.scan.w_delta"), uniform(rng, &[dim], bound));
    // initial steps log-uniform in [1e-3, 1e-1]
    let b_delta = store.add(
        format!("{name}.scan.b_delta"),
        Tensor::from_fn(&[dim], |_| softplus_inv(10f64.powf(rng.gen_range(-3.0..-1.0)))),
    );
    let w_b = store.add(format!("{name}.scan.w_b"), uniform(rng, &[state, dim], bound));
    let w_c = store.add(format!("{name}.scan.w_c"), uniform(rng, &[state, dim], bound));
    let d = store.add(format!("{name}.scan.d"), Tensor::full(&[dim], 1.0));
    let gate = linear(store, rng, &format!("{name}.gate"), dim, dim);
    let out = linear(store, rng, &format!("{name}.out_proj"), dim, dim);
    VmsBlockParams {
        dim,
        norm_g,
        norm_b,
        in_w: inp.w,
        in_b: inp.b,
        conv_k,
        scan: ScanParamIds { a_log, w_delta, b_delta, w_b, w_c, d },
        gate_w: gate.w,
        gate_b: gate.b,
        out_w: out.w,
        out_b: out.b,
    }
}

/// Allocates and initializes every parameter of `cfg`. The strategy plays no part.
pub fn init_params(cfg: &ModelConfig, rng: &mut impl Rng) -> (ParamStore, ModelParams) {
    let mut store = ParamStore::default();
    let p = cfg.patch.patch_size;
    let embed = linear(&mut store, rng, "embed", cfg.stage_dims[0], p * p * cfg.in_channels);
    let mut stages = Vec::with_capacity(STAGES);
    let mut downsample = Vec::with_capacity(STAGES - 1);
    for s in 0..STAGES {
        if s > 0 {
            let name = format!("down{}", s + 1);
            downsample.push(linear(&mut store, rng, &name, cfg.stage_dims[s], 4 * cfg.stage_dims[s - 1]));
        }
        let blocks = (0..cfg.stage_depths[s])
            .map(|b| vms_block(&mut store, rng, &format!("stage{}.block{b}", s + 1), cfg.stage_dims[s], cfg.state_dim))
            .collect();
        stages.push(blocks);
    }
    let fused = cfg.stage_dims.iter().sum();
    let head = linear(&mut store, rng, "head", cfg.num_classes, fused);
    (store, ModelParams { embed, stages, downsample, head })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_inverse() {
        for y in [1e-3, 0.05, 0.1, 2.0] {
            let x = softplus_inv(y);
            assert!((crate::ssm_core::softplus(x) - y).abs() < 1e-12 * y.max(1.0));
        }
    }
}
