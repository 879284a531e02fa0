#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scanlab::autodiff::{Tape, Tensor, Var};
use scanlab::Result;

pub const EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// `sum(y * r)` for a fixed random `r`, a scalar whose gradient w.r.t. `y` is dense and O(1).
pub fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let r = rand_tensor(&mut rng(seed), &shape, 1.0);
    let r = tape.constant(r);
    let m = tape.mul(y, r)?;
    tape.sum(m)
}

/// Replaces every parameter with an O(1) random value. The initial scan weights
/// and step sizes are small on purpose, which leaves their gradients around 1e-8,
/// below what a central difference at eps = 1e-5 resolves against an O(1) loss.
pub fn randomize_params(model: &mut scanlab::blocks::Model, seed: u64) {
    let mut g = rng(seed);
    let names: Vec<String> = model.store.names().to_vec();
    for name in names {
        let id = model.store.find(&name).unwrap();
        for v in model.store.get_mut(id).data_mut() {
            *v = if name.ends_with("a_log") {
                g.gen_range(0.5f64..2.0).ln()
            } else if name.ends_with("gamma") {
                g.gen_range(0.8..1.2)
            } else {
                g.gen_range(-0.5..0.5)
            };
        }
    }
}
