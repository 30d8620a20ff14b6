//! Feature tensors and label masks.
//!
//! Feature maps are stored channel-last (`H×W×C`, row-major) in single
//! precision. Every reduction over them accumulates in `f64`.

use crate::error::{Error, Result};

/// A dense `H×W×C` feature tensor from one layer, or one unit when `C == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
    pub layer_id: Option<u32>,
    pub unit_id: Option<u32>,
}

impl FeatureMap {
    /// Builds a feature map from channel-last values.
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidValue(format!(
                "feature dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if values.len() != expected {
            return Err(Error::dims(
                format!("{expected} values"),
                format!("{} values", values.len()),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite feature value at flat index {pos}"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
            layer_id: None,
            unit_id: None,
        })
    }

    /// Builds a map from `f64` values, rounding each to single precision.
    pub fn from_f64(height: usize, width: usize, channels: usize, values: &[f64]) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            values.iter().map(|&v| v as f32).collect(),
        )
    }

    /// Builds a map from channel-first (`C×H×W`) values.
    pub fn from_channel_first(
        channels: usize,
        height: usize,
        width: usize,
        values: &[f32],
    ) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::dims(
                format!("{} values", channels * height * width),
                format!("{} values", values.len()),
            ));
        }
        let plane = height * width;
        let mut out = vec![0.0f32; values.len()];
        for c in 0..channels {
            for p in 0..plane {
                out[p * channels + c] = values[c * plane + p];
            }
        }
        Self::new(height, width, channels, out)
    }

    /// A one-channel feature whose value at each pixel is its mask label.
    pub fn from_mask(mask: &LabelMask) -> Self {
        Self {
            height: mask.height(),
            width: mask.width(),
            channels: 1,
            values: mask.labels().iter().map(|&l| f32::from(l)).collect(),
            layer_id: None,
            unit_id: None,
        }
    }

    pub fn with_layer(mut self, layer_id: u32) -> Self {
        self.layer_id = Some(layer_id);
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Feature vector of the pixel at flat index `i`.
    pub fn pixel(&self, i: usize) -> &[f32] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.values[(row * self.width + col) * self.channels + channel]
    }

    /// Applies `op` to every value; fails if the result is not finite.
    pub fn map_values(&self, mut op: impl FnMut(usize, f32) -> f32) -> Result<Self> {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| op(i, v))
            .collect();
        let mut out = Self::new(self.height, self.width, self.channels, values)?;
        out.layer_id = self.layer_id;
        out.unit_id = self.unit_id;
        Ok(out)
    }

    pub(crate) fn check_spatial(&self, height: usize, width: usize) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(Error::dims(
                format!("{height}x{width}"),
                format!("{}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }
}

/// An `H×W` integer label grid with `K ≥ 2` classes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMask {
    height: usize,
    width: usize,
    num_classes: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidValue(format!(
                "mask dims must be positive, got {height}x{width}"
            )));
        }
        if !(2..=256).contains(&num_classes) {
            return Err(Error::InvalidValue(format!(
                "num_classes must be in [2, 256], got {num_classes}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::dims(
                format!("{} labels", height * width),
                format!("{} labels", labels.len()),
            ));
        }
        if let Some(pos) = labels.iter().position(|&l| usize::from(l) >= num_classes) {
            return Err(Error::InvalidValue(format!(
                "label {} at pixel {pos} exceeds {} classes",
                labels[pos], num_classes
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            labels,
        })
    }

    pub fn binary(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        Self::new(height, width, 2, labels)
    }

    /// Binary mask from `[row][col]` rows of 0/1.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidValue("ragged mask rows".into()));
        }
        Self::binary(height, width, rows.concat())
    }

    /// Largest label present plus one, clamped to at least two classes.
    pub fn infer(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        let k = labels.iter().copied().max().map_or(2, |m| usize::from(m) + 1);
        Self::new(height, width, k.max(2), labels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn count(&self, class: usize) -> usize {
        self.labels.iter().filter(|&&l| usize::from(l) == class).count()
    }

    pub(crate) fn check_same_dims(&self, other: &LabelMask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::dims(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(())
    }
}

/// A soft binary initial mask with object weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    height: usize,
    width: usize,
    weights: Vec<f64>,
}

impl SoftMask {
    pub fn new(height: usize, width: usize, weights: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidValue("soft mask dims must be positive".into()));
        }
        if weights.len() != height * width {
            return Err(Error::dims(
                format!("{} weights", height * width),
                format!("{} weights", weights.len()),
            ));
        }
        if let Some(pos) = weights
            .iter()
            .position(|w| !w.is_finite() || !(0.0..=1.0).contains(w))
        {
            return Err(Error::InvalidValue(format!(
                "soft mask weight {} at pixel {pos} is outside [0, 1]",
                weights[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            weights,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Hard mask at threshold 0.5 (weights `>= 0.5` become object).
    pub fn binarize(&self) -> LabelMask {
        let labels = self.weights.iter().map(|&w| u8::from(w >= 0.5)).collect();
        LabelMask {
            height: self.height,
            width: self.width,
            num_classes: 2,
            labels,
        }
    }
}

impl From<&LabelMask> for SoftMask {
    fn from(mask: &LabelMask) -> Self {
        Self {
            height: mask.height,
            width: mask.width,
            weights: mask.labels.iter().map(|&l| f64::from(l.min(1))).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    Nearest,
    #[default]
    Bilinear,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "bilinear" => Ok(Self::Bilinear),
            other => Err(Error::InvalidValue(format!(
                "unknown interpolation {other:?}"
            ))),
        }
    }
}

/// Source sample positions along one axis for align-corners=false resampling.
fn nearest_index(dst: usize, src_len: usize, dst_len: usize) -> usize {
    let center = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64;
    (center.floor() as usize).min(src_len - 1)
}

fn bilinear_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).max(0.0);
    let lo = (pos.floor() as usize).min(src_len - 1);
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

/// Resizes the spatial dims of `f`, preserving channels.
pub fn upsample(
    f: &FeatureMap,
    target_h: usize,
    target_w: usize,
    mode: Interpolation,
) -> Result<FeatureMap> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::PreconditionViolation(format!(
            "target dims must be positive, got {target_h}x{target_w}"
        )));
    }
    if target_h == f.height && target_w == f.width {
        return Ok(f.clone());
    }
    let c = f.channels;
    let mut out = vec![0.0f32; target_h * target_w * c];
    match mode {
        Interpolation::Nearest => {
            let cols: Vec<usize> = (0..target_w)
                .map(|x| nearest_index(x, f.width, target_w))
                .collect();
            for y in 0..target_h {
                let sy = nearest_index(y, f.height, target_h);
                for (x, &sx) in cols.iter().enumerate() {
                    let dst = (y * target_w + x) * c;
                    out[dst..dst + c].copy_from_slice(f.pixel(sy * f.width + sx));
                }
            }
        }
        Interpolation::Bilinear => {
            let cols: Vec<_> = (0..target_w)
                .map(|x| bilinear_taps(x, f.width, target_w))
                .collect();
            for y in 0..target_h {
                let (y0, y1, ty) = bilinear_taps(y, f.height, target_h);
                for (x, &(x0, x1, tx)) in cols.iter().enumerate() {
                    let p00 = f.pixel(y0 * f.width + x0);
                    let p01 = f.pixel(y0 * f.width + x1);
                    let p10 = f.pixel(y1 * f.width + x0);
                    let p11 = f.pixel(y1 * f.width + x1);
                    let dst = (y * target_w + x) * c;
                    for ch in 0..c {
                        let top = f64::from(p00[ch]) * (1.0 - tx) + f64::from(p01[ch]) * tx;
                        let bottom = f64::from(p10[ch]) * (1.0 - tx) + f64::from(p11[ch]) * tx;
                        out[dst + ch] = (top * (1.0 - ty) + bottom * ty) as f32;
                    }
                }
            }
        }
    }
    Ok(FeatureMap {
        height: target_h,
        width: target_w,
        channels: c,
        values: out,
        layer_id: f.layer_id,
        unit_id: f.unit_id,
    })
}

/// The `H×W×1` slice holding unit `channel`.
pub fn extract_unit(f: &FeatureMap, channel: usize) -> Result<FeatureMap> {
    if channel >= f.channels {
        return Err(Error::IndexOutOfRange {
            index: channel,
            len: f.channels,
        });
    }
    let values = f
        .values
        .chunks_exact(f.channels)
        .map(|px| px[channel])
        .collect();
    Ok(FeatureMap {
        height: f.height,
        width: f.width,
        channels: 1,
        values,
        layer_id: f.layer_id,
        unit_id: Some(channel as u32),
    })
}
