use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ResampleMap, Tape, Var};
use crate::blocks::config::{ModelConfig, STAGES};
use crate::blocks::params::{init_params, Bound, ModelParams, ParamStore};
use crate::blocks::vms::{downsample, vms_block_forward};
use crate::error::{Error, Result};
use crate::grid_scan::GridShape;
use crate::patching::{shared_patch_index, ImageTensor};

/// Bilinear interpolation (half-pixel centres, edge clamped) from `src` to `dst`.
pub fn bilinear_map(src: GridShape, dst: GridShape) -> ResampleMap {
    fn axis(src: usize, dst: usize) -> Vec<[(usize, f64); 2]> {
        (0..dst)
            .map(|d| {
                let f = ((d as f64 + 0.5) * src as f64 / dst as f64 - 0.5).max(0.0);
                let i0 = (f.floor() as usize).min(src - 1);
                let i1 = (i0 + 1).min(src - 1);
                let t = (f - i0 as f64).clamp(0.0, 1.0);
                [(i0, 1.0 - t), (i1, t)]
            })
            .collect()
    }
    let ry = axis(src.rows, dst.rows);
    let rx = axis(src.cols, dst.cols);
    let mut offsets = Vec::with_capacity(dst.len() + 1);
    let mut taps = Vec::with_capacity(dst.len() * 4);
    offsets.push(0);
    for wy in &ry {
        for wx in &rx {
            for &(sy, ay) in wy {
                for &(sx, ax) in wx {
                    let w = ay * ax;
                    if w != 0.0 {
                        taps.push((sy * src.cols + sx, w));
                    }
                }
            }
            offsets.push(taps.len());
        }
    }
    ResampleMap { in_rows: src.len(), out_rows: dst.len(), offsets, taps }
}

/// Parameters plus the configuration that shapes them.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub layout: ModelParams,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (store, layout) = init_params(&cfg, &mut rng);
        Ok(Self { cfg, store, layout })
    }

    pub fn param_count(&self) -> u64 {
        self.store.count()
    }

    /// Builds the forward graph on `tape` with parameters already bound.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, img: &ImageTensor) -> Result<Var> {
        model_forward(tape, &self.cfg, &self.layout, bound, img)
    }

    /// Per-pixel class predictions without gradient tracking.
    pub fn predict(&self, img: &ImageTensor) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let logits = self.forward(&mut tape, &bound, img)?;
        Ok(argmax_rows(tape.value(logits).data(), self.cfg.num_classes))
    }
}

pub fn argmax_rows(data: &[f64], k: usize) -> Vec<usize> {
    data.chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Encoder (patch embedding, four stages with downsampling) and a multi-scale
/// linear head, producing `[height * width, num_classes]` logits.
pub fn model_forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    layout: &ModelParams,
    bound: &Bound,
    img: &ImageTensor,
) -> Result<Var> {
    if img.channels != cfg.in_channels {
        return Err(Error::shape(
            "model_forward",
            format!("{} image channels, model expects {}", img.channels, cfg.in_channels),
        ));
    }
    let grids = cfg.stage_grids(img.height, img.width)?;
    let pixels = tape.constant(img.to_tensor());
    let patches = tape.gather(pixels, shared_patch_index(img.height, img.width, img.channels, &cfg.patch)?)?;
    let mut x = tape.linear(patches, bound.v(layout.embed.w), Some(bound.v(layout.embed.b)))?;

    let mut features = Vec::with_capacity(STAGES);
    let mut grid = grids[0];
    for s in 0..STAGES {
        if s > 0 {
            let (y, g) = downsample(tape, x, grid, &layout.downsample[s - 1], bound)?;
            debug_assert_eq!(g, grids[s]);
            x = y;
            grid = g;
        }
        for block in &layout.stages[s] {
            x = vms_block_forward(tape, x, grid, block, bound, &cfg.strategy, cfg.merge)?;
        }
        features.push(if s == 0 { x } else { tape.resample(x, Arc::new(bilinear_map(grid, grids[0])))? });
    }
    let fused = tape.concat(&features)?;
    let logits = tape.linear(fused, bound.v(layout.head.w), Some(bound.v(layout.head.b)))?;
    let full = GridShape { rows: img.height, cols: img.width };
    tape.resample(logits, Arc::new(bilinear_map(grids[0], full)))
}
