//! Manifest-driven batch sweeps.
//!
//! Every sweep fans out over independent work items with rayon, collects
//! results in manifest order and reduces serially, so reports are identical
//! whatever the pool size. A failing item becomes a row with a status
//! message; it never aborts the sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::synthetic::item_seed;
use crate::analysis::units::{unit_heatmap, unit_sams};
use crate::error::{Error, Result};
use crate::feature::{upsample, FeatureMap, Interpolation, LabelMask};
use crate::io::manifest::{AnalysisManifest, ImageEntry, LayerEntry};
use crate::io::render::{Curve, Heatmap, Series};
use crate::io::report::{Cell, Report, Table};
use crate::metrics::{mean_sa_score, sa_difference, sa_score, separableness, GainRecord, SaScore};
use crate::protoseg::protoseg;

const OK: &str = "ok";

/// A pool of `jobs` workers; `None` or 0 means one per logical core.
pub fn build_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidValue(format!("cannot start worker pool: {e}")))
}

fn status_of<T>(r: &Result<T>) -> String {
    match r {
        Ok(_) => OK.to_string(),
        Err(e) => e.to_string(),
    }
}

/// Population mean and standard deviation; `None` for an empty slice.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// SA of one feature map: resized to the reference grid, seeded by `init`.
pub fn feature_sa(
    f: &FeatureMap,
    init: &LabelMask,
    g: &LabelMask,
    interpolation: Interpolation,
) -> Result<SaScore> {
    init.check_same_dims(g)?;
    let f = upsample(f, g.height(), g.width(), interpolation)?;
    match protoseg(&f, init) {
        Ok((_, sam)) => sa_score(&sam.mask, g, 1),
        Err(Error::EmptyClass(_)) => Ok(SaScore::undefined()),
        Err(e) => Err(e),
    }
}

fn layer_items(manifest: &AnalysisManifest) -> Vec<(&ImageEntry, &LayerEntry)> {
    manifest
        .images
        .iter()
        .flat_map(|im| im.layers.iter().map(move |l| (im, l)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub image: String,
    pub layer: u32,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub channels: usize,
    pub sa: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSummary {
    pub layer: u32,
    /// Number of images with a defined score.
    pub count: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSweepReport {
    pub rows: Vec<LayerRow>,
    /// Sorted by layer index.
    pub layers: Vec<LayerSummary>,
}

impl LayerSweepReport {
    pub fn summary(&self, layer: u32) -> Option<&LayerSummary> {
        self.layers.iter().find(|s| s.layer == layer)
    }

    /// Mean SA per layer as a plottable series.
    pub fn curve(&self) -> Curve {
        Curve {
            title: "Segmentation ability by layer".into(),
            x_label: "layer".into(),
            y_label: "mean SA score".into(),
            series: vec![Series {
                label: "mean SA".into(),
                points: self
                    .layers
                    .iter()
                    .filter_map(|s| s.mean.map(|m| (f64::from(s.layer), m)))
                    .collect(),
            }],
        }
    }
}

/// SA score of every (image, layer) in the manifest, ProtoSeg seeded by the
/// network output and scored against ground truth.
pub fn layer_sweep(manifest: &AnalysisManifest, interpolation: Interpolation) -> LayerSweepReport {
    let rows: Vec<LayerRow> = layer_items(manifest)
        .par_iter()
        .map(|&(image, layer)| {
            let mut row = LayerRow {
                image: image.id.clone(),
                layer: layer.layer_index,
                height: None,
                width: None,
                channels: layer.channels,
                sa: None,
                status: String::new(),
            };
            let result = (|| {
                let f = manifest.load_feature(layer)?;
                row.height = Some(f.height());
                row.width = Some(f.width());
                let g = manifest.load_ground_truth(image)?;
                let b = manifest.load_output(image)?;
                let sa = feature_sa(&f, &b, &g, interpolation)?;
                sa.get().ok_or(Error::Undefined)
            })();
            row.status = status_of(&result);
            row.sa = result.ok();
            row
        })
        .collect();

    let mut layer_ids: Vec<u32> = rows.iter().map(|r| r.layer).collect();
    layer_ids.sort_unstable();
    layer_ids.dedup();
    let layers = layer_ids
        .into_iter()
        .map(|layer| {
            let scores: Vec<f64> = rows.iter().filter(|r| r.layer == layer).filter_map(|r| r.sa).collect();
            let stats = mean_std(&scores);
            LayerSummary {
                layer,
                count: scores.len(),
                mean: stats.map(|s| s.0),
                std: stats.map(|s| s.1),
            }
        })
        .collect();
    LayerSweepReport { rows, layers }
}

impl Report for LayerSweepReport {
    fn kind(&self) -> &'static str {
        "layer_sweep"
    }

    fn sections(&self) -> Vec<(&'static str, Table)> {
        let mut entries = Table::new(&["image", "layer", "height", "width", "channels", "sa", "status"]);
        for r in &self.rows {
            entries.push(vec![
                r.image.as_str().into(),
                r.layer.into(),
                r.height.into(),
                r.width.into(),
                r.channels.into(),
                r.sa.into(),
                r.status.as_str().into(),
            ]);
        }
        let mut layers = Table::new(&["layer", "count", "mean_sa", "std_sa"]);
        for s in &self.layers {
            layers.push(vec![s.layer.into(), s.count.into(), s.mean.into(), s.std.into()]);
        }
        vec![("entries", entries), ("layers", layers)]
    }
}

/// μ of one image and, when ground truth is available, the output's Dice.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceEntry {
    pub image: String,
    pub mu: Option<f64>,
    pub unit_count: usize,
    pub dice: Option<f64>,
    pub heatmap: Option<Heatmap>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceReport {
    pub entries: Vec<ConfidenceEntry>,
}

impl ConfidenceReport {
    /// `(image, μ)` for every image whose μ is defined.
    pub fn mu_per_image(&self) -> Vec<(String, f64)> {
        self.entries.iter().filter_map(|e| e.mu.map(|m| (e.image.clone(), m))).collect()
    }
}

/// μ over the units of the image's last two layers, each unit SAM scored
/// against the network output; also returns the averaged unit SAM.
pub fn image_confidence(
    manifest: &AnalysisManifest,
    image: &ImageEntry,
    interpolation: Interpolation,
) -> Result<(f64, usize, Heatmap)> {
    let b = manifest.load_output(image)?;
    let mut sams = Vec::new();
    for layer in image.last_two_layers() {
        let f = manifest.load_feature(layer)?;
        let f = upsample(&f, b.height(), b.width(), interpolation)?;
        sams.extend(unit_sams(&f, &b)?);
    }
    let mu = mean_sa_score(&sams, &b, 1)?;
    let heatmap = unit_heatmap(sams.iter().flatten().map(|s| &s.mask))?;
    Ok((mu.mu, mu.unit_count, heatmap))
}

pub fn confidence_sweep(manifest: &AnalysisManifest, interpolation: Interpolation) -> ConfidenceReport {
    let entries = manifest
        .images
        .par_iter()
        .map(|image| {
            let result = image_confidence(manifest, image, interpolation);
            let dice = image.ground_truth.as_ref().and_then(|_| {
                let g = manifest.load_ground_truth(image).ok()?;
                let b = manifest.load_output(image).ok()?;
                sa_score(&b, &g, 1).ok()?.get()
            });
            let status = status_of(&result);
            let (mu, unit_count, heatmap) = match result {
                Ok((mu, n, h)) => (Some(mu), n, Some(h)),
                Err(_) => (None, 0, None),
            };
            ConfidenceEntry {
                image: image.id.clone(),
                mu,
                unit_count,
                dice,
                heatmap,
                status,
            }
        })
        .collect();
    ConfidenceReport { entries }
}

impl Report for ConfidenceReport {
    fn kind(&self) -> &'static str {
        "confidence"
    }

    fn sections(&self) -> Vec<(&'static str, Table)> {
        let mut t = Table::new(&["image", "mu", "units", "dice", "status"]);
        for e in &self.entries {
            t.push(vec![
                e.image.as_str().into(),
                e.mu.into(),
                e.unit_count.into(),
                e.dice.into(),
                e.status.as_str().into(),
            ]);
        }
        vec![("images", t)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparablenessReport {
    pub records: Vec<GainRecord>,
    /// Images that could not be scored, with the reason.
    pub failures: Vec<(String, String)>,
    /// `m(d)` over `records`.
    pub mean_gain: Option<f64>,
}

/// Gain of the network output over ProtoSeg on the raw input, per image.
pub fn separableness_sweep(manifest: &AnalysisManifest, interpolation: Interpolation) -> SeparablenessReport {
    let results: Vec<(String, Result<GainRecord>)> = manifest
        .images
        .par_iter()
        .map(|image| {
            let result = (|| {
                let g = manifest.load_ground_truth(image)?;
                let b = manifest.load_output(image)?;
                let x = manifest.load_input(image)?;
                let x = upsample(&x, g.height(), g.width(), interpolation)?;
                separableness(&image.id, &x, &b, &g)
            })();
            (image.id.clone(), result)
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    let mean_gain = crate::metrics::mean_gain(&records).ok();
    SeparablenessReport {
        records,
        failures,
        mean_gain,
    }
}

impl Report for SeparablenessReport {
    fn kind(&self) -> &'static str {
        "separableness"
    }

    fn sections(&self) -> Vec<(&'static str, Table)> {
        let mut images = Table::new(&["image", "sa_input", "dice_output", "d", "status"]);
        for r in &self.records {
            images.push(vec![r.image_id.as_str().into(), r.sa_input.into(), r.dice_output.into(), r.d.into(), OK.into()]);
        }
        for (id, why) in &self.failures {
            images.push(vec![id.as_str().into(), Cell::Null, Cell::Null, Cell::Null, why.as_str().into()]);
        }
        let mut summary = Table::new(&["images", "failed", "mean_d"]);
        summary.push(vec![self.records.len().into(), self.failures.len().into(), self.mean_gain.into()]);
        vec![("images", images), ("summary", summary)]
    }
}

/// Adds seeded uniform noise in `[-level, level]` to every value.
/// A zero level returns the map unchanged.
pub fn perturb(f: &FeatureMap, level: f64, seed: u64) -> Result<FeatureMap> {
    if !(level.is_finite() && level >= 0.0) {
        return Err(Error::InvalidValue(format!("noise level must be finite and >= 0, got {level}")));
    }
    if level == 0.0 {
        return Ok(f.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    f.map_values(|_, v| (f64::from(v) + rng.random_range(-level..=level)) as f32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRow {
    pub image: String,
    pub layer: u32,
    pub level: f64,
    pub difference: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSummary {
    pub layer: u32,
    pub level: f64,
    pub count: usize,
    pub mean_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseReport {
    pub rows: Vec<NoiseRow>,
    /// Sorted by layer, then by level in request order.
    pub summary: Vec<NoiseSummary>,
}

/// `SA(noisy) − SA(clean)` per (image, layer, level), noise added to the
/// stored feature maps before resizing. Seeds derive from the manifest's
/// global seed and the item identity.
pub fn noise_sweep(
    manifest: &AnalysisManifest,
    levels: &[f64],
    interpolation: Interpolation,
) -> Result<NoiseReport> {
    if let Some(l) = levels.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::InvalidValue(format!("noise level must be finite and >= 0, got {l}")));
    }
    let rows: Vec<NoiseRow> = layer_items(manifest)
        .par_iter()
        .flat_map_iter(|&(image, layer)| {
            let clean = (|| {
                let f = manifest.load_feature(layer)?;
                let g = manifest.load_ground_truth(image)?;
                let b = manifest.load_output(image)?;
                let sa = feature_sa(&f, &b, &g, interpolation)?;
                Ok::<_, Error>((f, g, b, sa))
            })();
            levels
                .iter()
                .map(|&level| {
                    let diff = clean.as_ref().map_err(|e| e.to_string()).and_then(|(f, g, b, sa)| {
                        let seed = item_seed(manifest.global_seed, &image.id, layer.layer_index, level);
                        let noisy = perturb(f, level, seed).map_err(|e| e.to_string())?;
                        let noisy_sa = feature_sa(&noisy, b, g, interpolation).map_err(|e| e.to_string())?;
                        sa_difference(noisy_sa, *sa).map_err(|e| e.to_string())
                    });
                    NoiseRow {
                        image: image.id.clone(),
                        layer: layer.layer_index,
                        level,
                        status: diff.as_ref().err().cloned().unwrap_or_else(|| OK.into()),
                        difference: diff.ok(),
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let mut layer_ids: Vec<u32> = rows.iter().map(|r| r.layer).collect();
    layer_ids.sort_unstable();
    layer_ids.dedup();
    let mut summary = Vec::new();
    for layer in layer_ids {
        for &level in levels {
            let diffs: Vec<f64> = rows
                .iter()
                .filter(|r| r.layer == layer && r.level.to_bits() == level.to_bits())
                .filter_map(|r| r.difference)
                .collect();
            summary.push(NoiseSummary {
                layer,
                level,
                count: diffs.len(),
                mean_difference: mean_std(&diffs).map(|s| s.0),
            });
        }
    }
    Ok(NoiseReport { rows, summary })
}

impl Report for NoiseReport {
    fn kind(&self) -> &'static str {
        "noise"
    }

    fn sections(&self) -> Vec<(&'static str, Table)> {
        let mut entries = Table::new(&["image", "layer", "level", "sa_difference", "status"]);
        for r in &self.rows {
            entries.push(vec![
                r.image.as_str().into(),
                r.layer.into(),
                r.level.into(),
                r.difference.into(),
                r.status.as_str().into(),
            ]);
        }
        let mut layers = Table::new(&["layer", "level", "count", "mean_sa_difference"]);
        for s in &self.summary {
            layers.push(vec![s.layer.into(), s.level.into(), s.count.into(), s.mean_difference.into()]);
        }
        vec![("entries", entries), ("layers", layers)]
    }
}
