//! Image-to-token patching and analytic compute/parameter accounting.

use std::sync::Arc;

use crate::autodiff::{linear_forward, GatherIndex, Tensor};
use crate::blocks::ModelConfig;
use crate::error::{Error, Result};
use crate::grid_scan::{GridShape, SLOT_COUNT};

pub const STANDARD_PATCH_SIZES: [usize; 4] = [4, 8, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub embed_dim: usize,
}

impl PatchConfig {
    pub fn new(patch_size: usize, stride: usize, embed_dim: usize) -> Result<Self> {
        if patch_size == 0 || stride == 0 || embed_dim == 0 {
            return Err(Error::Config("patch size, stride and embed dim must be positive".into()));
        }
        if stride > patch_size {
            return Err(Error::Config(format!("stride {stride} exceeds patch size {patch_size}")));
        }
        Ok(Self { patch_size, stride, embed_dim })
    }

    /// A note for patch sizes outside the usual 4/8/16/32 set.
    pub fn note(&self) -> Option<String> {
        (!STANDARD_PATCH_SIZES.contains(&self.patch_size))
            .then(|| format!("non-standard patch size {}", self.patch_size))
    }
}

/// Interleaved (HWC) image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(
                "image",
                format!("{height}x{width}x{channels} needs {} values, got {}", height * width * channels, data.len()),
            ));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    /// `[height * width, channels]` view as a tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height * self.width, self.channels], self.data.clone()).expect("consistent image")
    }
}

/// Sliding-window token grid; trailing pixels that do not fill a window are dropped.
pub fn grid_dims(image_h: usize, image_w: usize, cfg: &PatchConfig) -> Result<GridShape> {
    let p = cfg.patch_size;
    if image_h < p || image_w < p {
        return Err(Error::ImageTooSmall { height: image_h, width: image_w, patch: p });
    }
    GridShape::new((image_h - p) / cfg.stride + 1, (image_w - p) / cfg.stride + 1)
}

/// Gather map turning an HWC image into `[tokens, patch * patch * channels]` rows.
///
/// Each row lists the patch pixels row by row, channels innermost.
pub fn patch_index(image_h: usize, image_w: usize, channels: usize, cfg: &PatchConfig) -> Result<GatherIndex> {
    let grid = grid_dims(image_h, image_w, cfg)?;
    let (p, s) = (cfg.patch_size, cfg.stride);
    let width = p * p * channels;
    let mut index = Vec::with_capacity(grid.len() * width);
    for i in 0..grid.rows {
        for j in 0..grid.cols {
            for di in 0..p {
                let row = (i * s + di) * image_w;
                for dj in 0..p {
                    let base = (row + j * s + dj) * channels;
                    index.extend(base..base + channels);
                }
            }
        }
    }
    Ok(GatherIndex { src_len: image_h * image_w * channels, out_shape: vec![grid.len(), width], index })
}

/// Linear patch-embedding weights: `weight: [embed_dim, patch^2 * channels]`, `bias: [embed_dim]`.
#[derive(Debug, Clone)]
pub struct PatchEmbedding {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Embeds every patch of `img`, returning the token grid and `[tokens, embed_dim]` features.
pub fn extract_patches(img: &ImageTensor, cfg: &PatchConfig, emb: &PatchEmbedding) -> Result<(GridShape, Tensor)> {
    let din = cfg.patch_size * cfg.patch_size * img.channels;
    if emb.weight.shape() != [cfg.embed_dim, din] || emb.bias.len() != cfg.embed_dim {
        return Err(Error::shape(
            "extract_patches",
            format!(
                "weights {:?} / bias {:?}, expected [{}, {din}] / [{}]",
                emb.weight.shape(),
                emb.bias.shape(),
                cfg.embed_dim,
                cfg.embed_dim
            ),
        ));
    }
    let grid = grid_dims(img.height, img.width, cfg)?;
    let index = patch_index(img.height, img.width, img.channels, cfg)?;
    let flat: Vec<f64> = index.index.iter().map(|&i| img.data[i]).collect();
    let y = linear_forward(&flat, grid.len(), din, emb.weight.data(), cfg.embed_dim, Some(emb.bias.data()));
    Ok((grid, Tensor::new(vec![grid.len(), cfg.embed_dim], y)?))
}

pub(crate) fn shared_patch_index(h: usize, w: usize, c: usize, cfg: &PatchConfig) -> Result<Arc<GatherIndex>> {
    Ok(Arc::new(patch_index(h, w, c, cfg)?))
}

/// Compute and parameter totals for one model configuration and input size.
///
/// One multiply-accumulate counts as two FLOPs. Normalization, activations,
/// element-wise products/sums and interpolation are not counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopReport {
    pub total_flops: u64,
    pub param_count: u64,
    /// `(component, flops, params)` in evaluation order.
    pub per_stage: Vec<(String, u64, u64)>,
}

impl FlopReport {
    pub fn component(&self, name: &str) -> Option<(u64, u64)> {
        self.per_stage.iter().find(|(n, ..)| n == name).map(|&(_, f, p)| (f, p))
    }
}

/// Multiply-accumulates of one selective-scan slot per token.
fn scan_macs_per_token(dim: u64, state: u64) -> u64 {
    // step projection + skip, B/C projections, and per state element:
    // dt*a, coefficient*B, a_bar*h, b_bar*x, C*h
    2 * dim + 2 * state * dim + 5 * state * dim
}

/// FLOPs of one VMS block over `tokens` tokens.
pub fn block_flops(tokens: usize, dim: usize, state: usize) -> u64 {
    let (t, d, n) = (tokens as u64, dim as u64, state as u64);
    let linear = 3 * d * d;
    let conv = 9 * d;
    let scans = SLOT_COUNT as u64 * scan_macs_per_token(d, n);
    2 * t * (linear + conv + scans)
}

pub fn block_params(dim: usize, state: usize) -> u64 {
    let (d, n) = (dim as u64, state as u64);
    3 * d * d + 3 * d * n + 17 * d
}

pub fn estimate_flops(cfg: &ModelConfig, input_h: usize, input_w: usize) -> Result<FlopReport> {
    cfg.validate()?;
    let patch = &cfg.patch;
    let grids = cfg.stage_grids(input_h, input_w)?;
    let mut per_stage = Vec::new();

    let t1 = grids[0].len() as u64;
    let din = (patch.patch_size * patch.patch_size * cfg.in_channels) as u64;
    let d0 = cfg.stage_dims[0] as u64;
    per_stage.push(("embed".to_string(), 2 * t1 * din * d0, din * d0 + d0));

    for s in 0..4 {
        let d = cfg.stage_dims[s];
        let t = grids[s].len();
        if s > 0 {
            let (dp, dc) = (cfg.stage_dims[s - 1] as u64, d as u64);
            per_stage.push((format!("downsample{}", s + 1), 2 * t as u64 * 4 * dp * dc, 4 * dp * dc + dc));
        }
        let depth = cfg.stage_depths[s] as u64;
        per_stage.push((
            format!("stage{}", s + 1),
            depth * block_flops(t, d, cfg.state_dim),
            depth * block_params(d, cfg.state_dim),
        ));
    }

    let fused: u64 = cfg.stage_dims.iter().map(|&d| d as u64).sum();
    let k = cfg.num_classes as u64;
    per_stage.push(("decoder".to_string(), 2 * t1 * fused * k, fused * k + k));

    let total_flops = per_stage.iter().map(|(_, f, _)| f).sum();
    let param_count = per_stage.iter().map(|(_, _, p)| p).sum();
    Ok(FlopReport { total_flops, param_count, per_stage })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_dims_examples() {
        let g = |p, s| grid_dims(512, 512, &PatchConfig::new(p, s, 8).unwrap()).unwrap();
        assert_eq!(g(4, 4), GridShape { rows: 128, cols: 128 });
        assert_eq!(g(8, 4), GridShape { rows: 127, cols: 127 });
        assert_eq!(g(32, 32), GridShape { rows: 16, cols: 16 });
        let cfg = PatchConfig::new(8, 4, 8).unwrap();
        assert!(matches!(grid_dims(7, 64, &cfg), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn trailing_pixels_are_dropped() {
        let cfg = PatchConfig::new(4, 3, 2).unwrap();
        // (10 - 4) / 3 + 1 = 3 rows, (9 - 4) / 3 + 1 = 2 cols
        assert_eq!(grid_dims(10, 9, &cfg).unwrap(), GridShape { rows: 3, cols: 2 });
    }

    #[test]
    fn config_validation() {
        assert!(PatchConfig::new(4, 8, 16).is_err());
        assert!(PatchConfig::new(0, 0, 16).is_err());
        assert!(PatchConfig::new(4, 4, 16).unwrap().note().is_none());
        assert!(PatchConfig::new(6, 3, 16).unwrap().note().is_some());
    }

    #[test]
    fn constant_image_gives_identical_tokens() {
        let cfg = PatchConfig::new(4, 4, 3).unwrap();
        let img = ImageTensor::filled(12, 8, 1, 0.37);
        let weight = Tensor::from_fn(&[3, 16], |i| if i % 17 == 0 { 1.0 } else { 0.0 });
        let emb = PatchEmbedding { weight, bias: Tensor::zeros(&[3]) };
        let (grid, tok) = extract_patches(&img, &cfg, &emb).unwrap();
        assert_eq!(grid, GridShape { rows: 3, cols: 2 });
        let first = tok.data()[..3].to_vec();
        for row in tok.data().chunks(3) {
            assert_eq!(row, &first[..]);
        }
    }

    #[test]
    fn zero_weights_give_zero_tokens() {
        let cfg = PatchConfig::new(4, 2, 5).unwrap();
        let img = ImageTensor::new(8, 8, 3, (0..192).map(|i| i as f64 / 192.0).collect()).unwrap();
        let emb = PatchEmbedding { weight: Tensor::zeros(&[5, 48]), bias: Tensor::zeros(&[5]) };
        let (_, tok) = extract_patches(&img, &cfg, &emb).unwrap();
        assert!(tok.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weight_shape_mismatch() {
        let cfg = PatchConfig::new(4, 4, 5).unwrap();
        let img = ImageTensor::filled(8, 8, 3, 0.0);
        let emb = PatchEmbedding { weight: Tensor::zeros(&[5, 16]), bias: Tensor::zeros(&[5]) };
        assert!(matches!(extract_patches(&img, &cfg, &emb), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn block_cost_is_linear_in_tokens() {
        let a = block_flops(64, 16, 8) as f64;
        let b = block_flops(128, 16, 8) as f64;
        let r = b / a;
        assert!((1.9..=2.1).contains(&r), "ratio {r}");
    }
}
