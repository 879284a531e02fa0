//! Procedural aerial-style scenes with per-pixel labels.
//!
//! Class ids: 0 background, 1 building, 2 road, 3 water, 4 vegetation, 5 car.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patching::ImageTensor;

pub const CLASS_NAMES: [&str; 6] = ["background", "building", "road", "water", "vegetation", "car"];

const BASE_COLORS: [[f64; 3]; 6] = [
    [0.58, 0.52, 0.40],
    [0.78, 0.32, 0.26],
    [0.38, 0.38, 0.40],
    [0.16, 0.30, 0.58],
    [0.20, 0.48, 0.18],
    [0.92, 0.86, 0.22],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneConfig {
    pub image_size: usize,
    /// At most six; classes beyond the count are never painted.
    pub num_classes: usize,
    pub buildings: usize,
    pub roads: usize,
    pub water: usize,
    pub trees: usize,
    pub cars: usize,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    pub seed: u64,
    /// Every class is stamped again until it covers at least this many pixels.
    pub min_class_pixels: usize,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            num_classes: 6,
            buildings: 3,
            roads: 2,
            water: 1,
            trees: 3,
            cars: 3,
            noise: 0.04,
            seed: 0,
            min_class_pixels: 12,
        }
    }
}

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=CLASS_NAMES.len()).contains(&self.num_classes) {
            return Err(Error::Config(format!("synthetic scenes support 1..=6 classes, got {}", self.num_classes)));
        }
        if self.image_size < 16 {
            return Err(Error::Config(format!("image size {} is below the 16-pixel minimum", self.image_size)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise level {} must be non-negative", self.noise)));
        }
        Ok(())
    }
}

/// One image with its label map (row-major, one class id per pixel).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageTensor,
    pub mask: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct Canvas {
    n: usize,
    mask: Vec<usize>,
}

impl Canvas {
    fn rect(&mut self, r0: isize, c0: isize, h: usize, w: usize, class: usize) {
        let n = self.n as isize;
        for r in r0.max(0)..(r0 + h as isize).min(n) {
            for c in c0.max(0)..(c0 + w as isize).min(n) {
                self.mask[(r * n + c) as usize] = class;
            }
        }
    }

    fn ellipse(&mut self, cy: f64, cx: f64, ry: f64, rx: f64, class: usize) {
        for r in 0..self.n {
            for c in 0..self.n {
                let dy = (r as f64 + 0.5 - cy) / ry;
                let dx = (c as f64 + 0.5 - cx) / rx;
                if dy * dy + dx * dx <= 1.0 {
                    self.mask[r * self.n + c] = class;
                }
            }
        }
    }

    fn count(&self, class: usize) -> usize {
        self.mask.iter().filter(|&&m| m == class).count()
    }
}

fn paint(canvas: &mut Canvas, class: usize, rng: &mut ChaCha8Rng) {
    let n = canvas.n as f64;
    let ni = canvas.n as isize;
    match class {
        0 => {
            let h = rng.gen_range(6..=12);
            let w = rng.gen_range(6..=12);
            canvas.rect(rng.gen_range(0..ni), rng.gen_range(0..ni), h, w, 0);
        }
        1 => {
            let h = rng.gen_range(8..=16);
            let w = rng.gen_range(8..=16);
            canvas.rect(rng.gen_range(0..=ni - h as isize), rng.gen_range(0..=ni - w as isize), h, w, 1);
        }
        2 => {
            let width = rng.gen_range(4..=7);
            let at = rng.gen_range(0..=ni - width as isize);
            if rng.gen_bool(0.5) {
                canvas.rect(at, 0, width, canvas.n, 2);
            } else {
                canvas.rect(0, at, canvas.n, width, 2);
            }
        }
        3 => {
            let (cy, cx) = (rng.gen_range(0.0..n), rng.gen_range(0.0..n));
            for _ in 0..rng.gen_range(2..=3) {
                let oy = cy + rng.gen_range(-6.0..6.0);
                let ox = cx + rng.gen_range(-6.0..6.0);
                canvas.ellipse(oy, ox, rng.gen_range(5.0..11.0), rng.gen_range(5.0..11.0), 3);
            }
        }
        4 => {
            let (cy, cx) = (rng.gen_range(0.0..n), rng.gen_range(0.0..n));
            for _ in 0..rng.gen_range(3..=6) {
                let r = rng.gen_range(3.0..6.0);
                canvas.ellipse(cy + rng.gen_range(-7.0..7.0), cx + rng.gen_range(-7.0..7.0), r, r, 4);
            }
        }
        _ => {
            let (h, w) = if rng.gen_bool(0.5) { (4, 8) } else { (8, 4) };
            // cars prefer to sit on a road
            let roads: Vec<usize> = (0..canvas.mask.len()).filter(|&i| canvas.mask[i] == 2).collect();
            let (r, c) = if roads.is_empty() {
                (rng.gen_range(0..ni), rng.gen_range(0..ni))
            } else {
                let i = roads[rng.gen_range(0..roads.len())] as isize;
                (i / ni, i % ni)
            };
            canvas.rect(r - h as isize / 2, c - w as isize / 2, h, w, class);
        }
    }
}

fn render(cfg: &SyntheticSceneConfig, mask: &[usize], rng: &mut ChaCha8Rng) -> ImageTensor {
    let n = cfg.image_size;
    let colors: Vec<[f64; 3]> = BASE_COLORS.iter().map(|c| c.map(|v| v + rng.gen_range(-0.05..0.05))).collect();
    let (fy, fx, phase) = (rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6), rng.gen_range(0.0..6.3));
    let noise = Normal::new(0.0, cfg.noise.max(1e-12)).expect("finite noise level");
    let mut data = Vec::with_capacity(n * n * 3);
    for r in 0..n {
        for c in 0..n {
            let class = mask[r * n + c];
            let texture = match class {
                0 => 0.05 * ((r as f64 * fy + c as f64 * fx + phase).sin()),
                4 => rng.gen_range(-0.08..0.08),
                _ => 0.0,
            };
            for ch in 0..3 {
                let v = colors[class][ch] + texture + if cfg.noise > 0.0 { noise.sample(rng) } else { 0.0 };
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor { height: n, width: n, channels: 3, data }
}

/// Scene number `index` of the stream selected by `cfg.seed`.
pub fn generate_scene(cfg: &SyntheticSceneConfig, index: u64) -> Result<Sample> {
    cfg.validate()?;
    let mut rng = scene_rng(cfg.seed, index);
    let k = cfg.num_classes;
    let mut canvas = Canvas { n: cfg.image_size, mask: vec![0; cfg.image_size * cfg.image_size] };
    for (class, count) in [(3, cfg.water), (2, cfg.roads), (1, cfg.buildings), (4, cfg.trees), (5, cfg.cars)] {
        if class < k {
            for _ in 0..count {
                paint(&mut canvas, class, &mut rng);
            }
        }
    }
    for class in 0..k {
        for _ in 0..8 {
            if canvas.count(class) >= cfg.min_class_pixels {
                break;
            }
            paint(&mut canvas, class, &mut rng);
        }
    }
    let image = render(cfg, &canvas.mask, &mut rng);
    Ok(Sample { image, mask: canvas.mask })
}

/// `n_train` training scenes followed by `n_val` validation scenes from disjoint indices.
pub fn generate_dataset(cfg: &SyntheticSceneConfig, n_train: usize, n_val: usize) -> Result<Dataset> {
    if n_train == 0 {
        return Err(Error::Config("the training split needs at least one scene".into()));
    }
    let gen = |range: std::ops::Range<usize>| range.map(|i| generate_scene(cfg, i as u64)).collect::<Result<Vec<_>>>();
    Ok(Dataset { train: gen(0..n_train)?, val: gen(n_train..n_train + n_val)? })
}

/// Bilinear sample of channel `ch` at fractional source coordinates (edge clamped).
fn bilinear(img: &ImageTensor, y: f64, x: f64, ch: usize) -> f64 {
    let y = y.clamp(0.0, (img.height - 1) as f64);
    let x = x.clamp(0.0, (img.width - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(img.height - 1), (x0 + 1).min(img.width - 1));
    let (ty, tx) = (y - y0 as f64, x - x0 as f64);
    let at = |r: usize, c: usize| img.data[(r * img.width + c) * img.channels + ch];
    (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x1)) + ty * ((1.0 - tx) * at(y1, x0) + tx * at(y1, x1))
}

/// Training-time augmentation: a crop of side `size / s` with `s` drawn from
/// `[0.75, 1.25]` (clamped to the image) resized back to full size, random
/// horizontal and vertical flips, and brightness and contrast jitter of ±10%.
/// Image and mask stay aligned; the mask uses nearest-neighbour sampling.
pub fn augment(sample: &Sample, rng: &mut impl Rng) -> Sample {
    let (h, w, chans) = (sample.image.height, sample.image.width, sample.image.channels);
    let scale: f64 = rng.gen_range(0.75..=1.25);
    let ch = ((h as f64 / scale).round() as usize).clamp(1, h);
    let cw = ((w as f64 / scale).round() as usize).clamp(1, w);
    let oy = rng.gen_range(0..=h - ch);
    let ox = rng.gen_range(0..=w - cw);
    let (flip_h, flip_v) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
    let brightness: f64 = rng.gen_range(-0.1..=0.1);
    let contrast: f64 = rng.gen_range(0.9..=1.1);

    let mut data = Vec::with_capacity(h * w * chans);
    let mut mask = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let rr = if flip_v { h - 1 - r } else { r };
            let cc = if flip_h { w - 1 - c } else { c };
            let sy = oy as f64 + (rr as f64 + 0.5) * ch as f64 / h as f64 - 0.5;
            let sx = ox as f64 + (cc as f64 + 0.5) * cw as f64 / w as f64 - 0.5;
            for k in 0..chans {
                let v = bilinear(&sample.image, sy, sx, k);
                data.push(((v - 0.5) * contrast + 0.5 + brightness).clamp(0.0, 1.0));
            }
            let my = (sy.round().max(0.0) as usize).min(h - 1);
            let mx = (sx.round().max(0.0) as usize).min(w - 1);
            mask.push(sample.mask[my * w + mx]);
        }
    }
    Sample { image: ImageTensor { height: h, width: w, channels: chans, data }, mask }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `<stem>.ppm` (binary RGB) and `<stem>_mask.pgm` (binary grey, value = class id).
pub fn save_sample(sample: &Sample, dir: &Path, stem: &str) -> Result<()> {
    let img = &sample.image;
    if img.channels != 3 {
        return Err(Error::shape("save_sample", format!("PPM output needs 3 channels, got {}", img.channels)));
    }
    let (w, h) = (img.width as u32, img.height as u32);
    let rgb: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    let file = std::fs::File::create(dir.join(format!("{stem}.ppm")))?;
    PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&rgb, w, h, ExtendedColorType::Rgb8)?;
    let grey: Vec<u8> = sample.mask.iter().map(|&m| m as u8).collect();
    let file = std::fs::File::create(dir.join(format!("{stem}_mask.pgm")))?;
    PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&grey, w, h, ExtendedColorType::L8)?;
    Ok(())
}

/// Reads a pair written by [`save_sample`]; pixel values are quantised to 8 bits.
pub fn load_sample(dir: &Path, stem: &str) -> Result<Sample> {
    let rgb = image::open(dir.join(format!("{stem}.ppm")))?.into_rgb8();
    let grey = image::open(dir.join(format!("{stem}_mask.pgm")))?.into_luma8();
    let (w, h) = rgb.dimensions();
    if grey.dimensions() != (w, h) {
        return Err(Error::shape("load_sample", "image and mask sizes differ"));
    }
    let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Ok(Sample {
        image: ImageTensor::new(h as usize, w as usize, 3, data)?,
        mask: grey.into_raw().into_iter().map(usize::from).collect(),
    })
}

/// Stores the dataset as `train/NNNN` and `val/NNNN` image/mask pairs under `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    for (split, samples) in [("train", &ds.train), ("val", &ds.val)] {
        let sub = dir.join(split);
        std::fs::create_dir_all(&sub)?;
        for (i, s) in samples.iter().enumerate() {
            save_sample(s, &sub, &format!("{i:04}"))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let cfg = SyntheticSceneConfig::default();
        assert_eq!(generate_scene(&cfg, 3).unwrap(), generate_scene(&cfg, 3).unwrap());
        assert_ne!(generate_scene(&cfg, 3).unwrap(), generate_scene(&cfg, 4).unwrap());
    }

    #[test]
    fn masks_respect_class_count() {
        let cfg = SyntheticSceneConfig { num_classes: 3, ..Default::default() };
        let s = generate_scene(&cfg, 0).unwrap();
        assert!(s.mask.iter().all(|&m| m < 3));
        assert!(s.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn augment_keeps_shapes_and_labels() {
        let s = generate_scene(&SyntheticSceneConfig::default(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = augment(&s, &mut rng);
        assert_eq!(a.mask.len(), s.mask.len());
        assert_eq!(a.image.data.len(), s.image.data.len());
        assert!(a.mask.iter().all(|&m| m < 6));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(generate_scene(&SyntheticSceneConfig { num_classes: 7, ..Default::default() }, 0).is_err());
        assert!(generate_scene(&SyntheticSceneConfig { image_size: 8, ..Default::default() }, 0).is_err());
        assert!(generate_dataset(&SyntheticSceneConfig::default(), 0, 1).is_err());
    }

    #[test]
    fn pnm_round_trip() {
        let dir = std::env::temp_dir().join(format!("scanlab-pnm-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let s = generate_scene(&SyntheticSceneConfig::default(), 2).unwrap();
        save_sample(&s, &dir, "x").unwrap();
        let back = load_sample(&dir, "x").unwrap();
        assert_eq!(back.mask, s.mask);
        for (a, b) in back.image.data.iter().zip(&s.image.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        let header = std::fs::read(dir.join("x.ppm")).unwrap();
        assert_eq!(&header[..2], b"P6");
        let header = std::fs::read(dir.join("x_mask.pgm")).unwrap();
        assert_eq!(&header[..2], b"P5");
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
