use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{adamw_step, OptimizerState, PolySchedule, Tape, Tensor};
use crate::blocks::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::synth::{augment, Dataset, Sample};
use crate::metrics::ConfusionMatrix;
use crate::patching::estimate_flops;

/// Seed for the stream identified by `(master, label, seed)`: FNV-1a over the
/// label, then two rounds of the splitmix64 finaliser.
pub fn derive_seed(master: u64, label: &str, seed: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    let h = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    mix(mix(master ^ h) ^ seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub poly_power: f64,
    pub log_every: usize,
    pub augment: bool,
    pub excluded: Option<usize>,
    pub master_seed: u64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn from_experiment(cfg: &ExperimentConfig, seed: u64) -> Self {
        let t = &cfg.train;
        Self {
            iterations: t.iterations,
            batch_size: t.batch_size,
            lr: t.lr,
            weight_decay: t.weight_decay,
            warmup_frac: t.warmup_frac,
            poly_power: t.poly_power,
            log_every: t.log_every.max(1),
            augment: cfg.data.augment,
            excluded: cfg.data.excluded_classes.first().copied(),
            master_seed: t.master_seed,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub label: String,
    pub seed: u64,
    /// `NaN` when no class has a defined IoU.
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub pixel_accuracy: f64,
    /// `(step, mean loss since the previous entry)`.
    pub loss_curve: Vec<(usize, f64)>,
    pub wall_time_s: f64,
    pub param_count: u64,
    pub flops: u64,
}

/// Loss and parameter gradients (store order) for one sample.
pub fn sample_gradients(model: &Model, sample: &Sample, ignore: Option<usize>) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape, true);
    let logits = model.forward(&mut tape, &bound, &sample.image)?;
    let labels: Arc<[usize]> = sample.mask.clone().into();
    let loss = tape.softmax_cross_entropy(logits, labels, ignore)?;
    let value = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss)?;
    let out = bound
        .vars()
        .iter()
        .zip(model.store.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((value, out))
}

/// Confusion matrix over `samples`, evaluated in parallel and merged in order.
pub fn evaluate(model: &Model, samples: &[Sample], excluded: Option<usize>) -> Result<ConfusionMatrix> {
    let k = model.cfg.num_classes;
    let parts = samples
        .par_iter()
        .map(|s| {
            let mut cm = ConfusionMatrix::new(k, excluded);
            cm.update(&model.predict(&s.image)?, &s.mask)?;
            Ok(cm)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = ConfusionMatrix::new(k, excluded);
    for p in &parts {
        total += p;
    }
    Ok(total)
}

/// Trains a fresh model on `data.train` and scores it on `data.val`.
///
/// Initial weights depend on `(master_seed, seed)` only, so every strategy starts
/// from the same point; batch sampling and augmentation use the stream of
/// `(master_seed, label, seed)`. Per-sample gradients run in parallel and are
/// summed in batch order, so results do not depend on the thread count.
pub fn train(cfg: &ModelConfig, data: &Dataset, tc: &TrainConfig) -> Result<(Model, RunResult)> {
    let start = Instant::now();
    let label = cfg.strategy.label().to_string();
    let mut model = Model::new(cfg.clone(), derive_seed(tc.master_seed, "init", tc.seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tc.master_seed, &label, tc.seed));
    let mut opt = OptimizerState::new(model.store.tensors(), tc.lr, tc.weight_decay);
    let sched = PolySchedule::new(tc.lr, tc.iterations, tc.warmup_frac, tc.poly_power);

    let mut loss_curve = Vec::new();
    let (mut window, mut window_n) = (0.0, 0usize);
    for step in 0..tc.iterations {
        let batch: Vec<Sample> = (0..tc.batch_size)
            .map(|_| {
                let s = &data.train[rng.gen_range(0..data.train.len())];
                if tc.augment {
                    augment(s, &mut rng)
                } else {
                    s.clone()
                }
            })
            .collect();
        let results = batch.par_iter().map(|s| sample_gradients(&model, s, tc.excluded)).collect::<Vec<_>>();

        let mut loss = 0.0;
        let mut grads: Option<Vec<Tensor>> = None;
        for r in results {
            let (l, g) = r.map_err(|e| match e {
                Error::NonFinite { .. } => Error::Divergence { step, loss: f64::NAN },
                other => other,
            })?;
            loss += l;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
            }
        }
        let inv = 1.0 / tc.batch_size as f64;
        loss *= inv;
        if !loss.is_finite() {
            log::error!("{label} seed {}: loss {loss} at step {step}", tc.seed);
            return Err(Error::Divergence { step, loss });
        }
        let mut grads = grads.expect("batch is non-empty");
        grads.iter_mut().for_each(|g| g.scale_in_place(inv));
        opt.lr = sched.lr_at(step);
        adamw_step(model.store.tensors_mut(), &grads, &mut opt)?;

        window += loss;
        window_n += 1;
        if (step + 1) % tc.log_every == 0 || step + 1 == tc.iterations {
            let mean = window / window_n as f64;
            log::info!(
                "{label} seed {} step {}/{}: loss {mean:.4} lr {:.2e}",
                tc.seed,
                step + 1,
                tc.iterations,
                opt.lr
            );
            loss_curve.push((step + 1, mean));
            window = 0.0;
            window_n = 0;
        }
    }

    let cm = evaluate(&model, &data.val, tc.excluded)?;
    let size = data.train[0].image.height;
    let flops = estimate_flops(cfg, size, data.train[0].image.width)?.total_flops;
    let result = RunResult {
        label,
        seed: tc.seed,
        miou: cm.miou().unwrap_or(f64::NAN),
        per_class_iou: cm.iou_per_class(),
        pixel_accuracy: cm.pixel_accuracy(),
        loss_curve,
        wall_time_s: start.elapsed().as_secs_f64(),
        param_count: model.param_count(),
        flops,
    };
    Ok((model, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_every_component() {
        let base = derive_seed(0, "Exp1", 0);
        assert_eq!(base, derive_seed(0, "Exp1", 0));
        assert_ne!(base, derive_seed(1, "Exp1", 0));
        assert_ne!(base, derive_seed(0, "Exp2", 0));
        assert_ne!(base, derive_seed(0, "Exp1", 1));
    }
}
