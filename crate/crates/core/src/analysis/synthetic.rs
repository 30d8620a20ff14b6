//! Seeded synthetic feature maps with known ground truth.
//!
//! An elliptical blob marks the object. Background features are drawn from
//! `N(0, σ²)` per channel and object features from `N(Δ·σ, σ²)`, so `Δ` is
//! the class separation in units of σ. The simulated network output is the
//! ground truth with a seeded fraction of its boundary pixels flipped.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::feature::{FeatureMap, LabelMask};
use crate::io::manifest::{AnalysisManifest, ImageEntry, LayerEntry, MANIFEST_VERSION};
use crate::io::npy::{write_tensor, Layout, TensorDump};
use crate::protoseg::protoseg;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Δ, the object mean offset in units of `noise_sigma`.
    pub class_separation: f64,
    pub object_fraction: f64,
    pub noise_sigma: f64,
    /// Fraction of ground-truth boundary pixels flipped in the simulated output.
    pub boundary_flip: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 32,
            width: 32,
            channels: 4,
            class_separation: 2.0,
            object_fraction: 0.4,
            noise_sigma: 1.0,
            boundary_flip: 0.2,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(msg));
        if self.height == 0 || self.width == 0 || self.height * self.width < 2 {
            return fail(format!("need at least two pixels, got {}x{}", self.height, self.width));
        }
        if self.channels == 0 {
            return fail("channels must be positive".into());
        }
        if !(self.class_separation.is_finite() && self.class_separation >= 0.0) {
            return fail(format!("class_separation must be >= 0, got {}", self.class_separation));
        }
        if !(self.object_fraction > 0.0 && self.object_fraction < 1.0) {
            return fail(format!("object_fraction must be in (0, 1), got {}", self.object_fraction));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return fail(format!("noise_sigma must be positive, got {}", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.boundary_flip) {
            return fail(format!("boundary_flip must be in [0, 1], got {}", self.boundary_flip));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub features: FeatureMap,
    pub truth: LabelMask,
    pub output: LabelMask,
}

/// A seeded elliptical blob covering `round(fraction · H·W)` pixels (at least
/// one pixel of each class).
pub fn synthetic_mask(rng: &mut impl Rng, height: usize, width: usize, fraction: f64) -> LabelMask {
    let n = height * width;
    let target = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let cy = rng.random_range(0.25..0.75) * height as f64;
    let cx = rng.random_range(0.25..0.75) * width as f64;
    let aspect: f64 = rng.random_range(0.6..1.6);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (sin, cos) = theta.sin_cos();
    let mut order: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let dy = (i / width) as f64 + 0.5 - cy;
            let dx = (i % width) as f64 + 0.5 - cx;
            let u = (dy * cos + dx * sin) / aspect;
            let v = (-dy * sin + dx * cos) * aspect;
            (u * u + v * v, i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut labels = vec![0u8; n];
    for &(_, i) in &order[..target] {
        labels[i] = 1;
    }
    LabelMask::binary(height, width, labels).expect("binary labels")
}

/// Per-channel Gaussian features around `0` (background) or `Δ·σ` (object).
pub fn synthetic_features(
    rng: &mut impl Rng,
    truth: &LabelMask,
    channels: usize,
    separation: f64,
    sigma: f64,
) -> FeatureMap {
    let mut values = Vec::with_capacity(truth.pixels() * channels);
    for &l in truth.labels() {
        let mean = if l == 0 { 0.0 } else { separation * sigma };
        for _ in 0..channels {
            let z: f64 = rng.sample(StandardNormal);
            values.push((mean + sigma * z) as f32);
        }
    }
    FeatureMap::new(truth.height(), truth.width(), channels, values).expect("finite gaussian samples")
}

/// Pixels with a 4-neighbour of a different label.
pub fn boundary_pixels(mask: &LabelMask) -> Vec<usize> {
    let (h, w) = (mask.height(), mask.width());
    let l = mask.labels();
    (0..h * w)
        .filter(|&i| {
            let (y, x) = (i / w, i % w);
            let differs = |j: usize| l[j] != l[i];
            (y > 0 && differs(i - w))
                || (y + 1 < h && differs(i + w))
                || (x > 0 && differs(i - 1))
                || (x + 1 < w && differs(i + 1))
        })
        .collect()
}

/// The ground truth with `round(fraction · |boundary|)` boundary pixels flipped.
/// Flips that would empty a class are skipped.
pub fn simulate_output(rng: &mut impl Rng, truth: &LabelMask, fraction: f64) -> LabelMask {
    let mut boundary = boundary_pixels(truth);
    boundary.shuffle(rng);
    let flips = (fraction * boundary.len() as f64).round() as usize;
    let mut labels = truth.labels().to_vec();
    let mut counts = [truth.count(0), truth.count(1)];
    for &i in boundary.iter().take(flips) {
        let from = usize::from(labels[i].min(1));
        if counts[from] > 1 {
            counts[from] -= 1;
            counts[1 - from] += 1;
            labels[i] = 1 - labels[i].min(1);
        }
    }
    LabelMask::binary(truth.height(), truth.width(), labels).expect("binary labels")
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = synthetic_mask(&mut rng, spec.height, spec.width, spec.object_fraction);
    let features = synthetic_features(
        &mut rng,
        &truth,
        spec.channels,
        spec.class_separation,
        spec.noise_sigma,
    );
    let output = simulate_output(&mut rng, &truth, spec.boundary_flip);
    Ok(SyntheticSample {
        features,
        truth,
        output,
    })
}

/// One image of the confidence test bed: a layer of units at separation Δ
/// and a network output whose quality is governed by the same Δ.
#[derive(Debug, Clone, PartialEq)]
pub struct BedImage {
    pub separation: f64,
    pub units: FeatureMap,
    pub truth: LabelMask,
    pub output: LabelMask,
}

/// The simulated output is the nearest-prototype segmentation of an
/// independent one-channel feature at separation Δ, seeded by the ground
/// truth. Its Dice against the truth therefore falls as Δ shrinks.
pub fn bed_image(spec: &SyntheticSpec) -> Result<BedImage> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = synthetic_mask(&mut rng, spec.height, spec.width, spec.object_fraction);
    let units = synthetic_features(&mut rng, &truth, spec.channels, spec.class_separation, spec.noise_sigma);
    let logit = synthetic_features(&mut rng, &truth, 1, spec.class_separation, spec.noise_sigma);
    let (_, sam) = protoseg(&logit, &truth)?;
    let mut output = sam.mask;
    // a degenerate output cannot seed prototypes; keep one pixel of each class
    if let Some(missing) = (0..2).find(|&k| output.count(k) == 0) {
        let mut labels = output.labels().to_vec();
        labels[0] = missing as u8;
        output = LabelMask::binary(output.height(), output.width(), labels)?;
    }
    Ok(BedImage {
        separation: spec.class_separation,
        units,
        truth,
        output,
    })
}

/// Mixes a global seed with an item identity into an independent stream seed.
pub fn item_seed(global_seed: u64, image_id: &str, layer: u32, level: f64) -> u64 {
    // FNV-1a over the identity, finished with the splitmix64 mixer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(&global_seed.to_le_bytes());
    eat(image_id.as_bytes());
    eat(&[0xff]);
    eat(&layer.to_le_bytes());
    eat(&level.to_bits().to_le_bytes());
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Box-averages `f` by an integer factor (partial boxes at the edges).
pub fn downsample_box(f: &FeatureMap, factor: usize) -> Result<FeatureMap> {
    if factor == 0 {
        return Err(Error::InvalidValue("downsample factor must be positive".into()));
    }
    if factor == 1 {
        return Ok(f.clone());
    }
    let (h, w, c) = (f.height(), f.width(), f.channels());
    let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
    let mut values = vec![0.0f32; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = vec![0.0f64; c];
            let mut n = 0.0;
            for y in oy * factor..((oy + 1) * factor).min(h) {
                for x in ox * factor..((ox + 1) * factor).min(w) {
                    for (a, &v) in acc.iter_mut().zip(f.pixel(y * w + x)) {
                        *a += f64::from(v);
                    }
                    n += 1.0;
                }
            }
            let dst = (oy * ow + ox) * c;
            for (o, a) in values[dst..dst + c].iter_mut().zip(&acc) {
                *o = (a / n) as f32;
            }
        }
    }
    let mut out = FeatureMap::new(oh, ow, c, values)?;
    out.layer_id = f.layer_id;
    Ok(out)
}

/// Layout of a synthetic analysis manifest written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticManifestSpec {
    pub seed: u64,
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// One Δ per layer; layer indices run 1, 2, ….
    pub separations: Vec<f64>,
    /// Per-layer box-downsampling factor; missing entries mean 1.
    pub downsample: Vec<usize>,
    pub input_channels: usize,
    pub input_separation: f64,
    pub object_fraction: f64,
    pub noise_sigma: f64,
    pub boundary_flip: f64,
}

impl Default for SyntheticManifestSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            images: 4,
            height: 32,
            width: 32,
            channels: 4,
            separations: vec![0.5, 2.0, 6.0],
            downsample: Vec::new(),
            input_channels: 3,
            input_separation: 1.5,
            object_fraction: 0.4,
            noise_sigma: 1.0,
            boundary_flip: 0.2,
        }
    }
}

/// Writes dumps plus `manifest.json` under `dir` and returns the manifest path.
pub fn write_synthetic_manifest(dir: impl AsRef<Path>, spec: &SyntheticManifestSpec) -> Result<PathBuf> {
    let dir = dir.as_ref();
    if spec.images == 0 || spec.separations.is_empty() {
        return Err(Error::InvalidSpec("need at least one image and one layer".into()));
    }
    let base = SyntheticSpec {
        seed: spec.seed,
        height: spec.height,
        width: spec.width,
        channels: spec.channels,
        class_separation: 0.0,
        object_fraction: spec.object_fraction,
        noise_sigma: spec.noise_sigma,
        boundary_flip: spec.boundary_flip,
    };
    base.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut images = Vec::with_capacity(spec.images);
    for n in 0..spec.images {
        let id = format!("synth-{n:04}");
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(spec.seed, &id, 0, 0.0));
        let truth = synthetic_mask(&mut rng, spec.height, spec.width, spec.object_fraction);
        let output = simulate_output(&mut rng, &truth, spec.boundary_flip);
        let input = synthetic_features(&mut rng, &truth, spec.input_channels.max(1), spec.input_separation, spec.noise_sigma);

        let file = |name: &str| PathBuf::from(format!("{id}_{name}.npy"));
        write_tensor(dir.join(file("truth")), &TensorDump::from_label_mask(&truth))?;
        write_tensor(dir.join(file("output")), &TensorDump::from_label_mask(&output))?;
        write_tensor(dir.join(file("input")), &TensorDump::from_feature_map(&input))?;

        let mut layers = Vec::with_capacity(spec.separations.len());
        for (l, &separation) in spec.separations.iter().enumerate() {
            let layer_index = l as u32 + 1;
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed(spec.seed, &id, layer_index, 0.0));
            let full = synthetic_features(&mut rng, &truth, spec.channels, separation, spec.noise_sigma);
            let factor = spec.downsample.get(l).copied().unwrap_or(1);
            let stored = downsample_box(&full, factor)?;
            let name = file(&format!("layer{layer_index:02}"));
            write_tensor(dir.join(&name), &TensorDump::from_feature_map(&stored))?;
            layers.push(LayerEntry {
                layer_index,
                channels: spec.channels,
                feature: name,
                layout: Layout::ChannelLast,
            });
        }
        images.push(ImageEntry {
            id: id.clone(),
            input: Some(file("input")),
            ground_truth: Some(file("truth")),
            output: file("output"),
            layers,
        });
    }
    let manifest = AnalysisManifest {
        version: MANIFEST_VERSION,
        global_seed: spec.seed,
        images,
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}
