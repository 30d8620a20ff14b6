//! The `protoseg` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (including a failed
//! gradient check).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::analysis::selection::{coverage_table, rank_images, CoverageRecord};
use crate::analysis::sweep::{build_pool, confidence_sweep, layer_sweep, noise_sweep, separableness_sweep};
use crate::analysis::synthetic::{write_synthetic_manifest, SyntheticManifestSpec};
use crate::analysis::units::{unit_heatmap, unit_sweep};
use crate::diffkernel::{finite_diff_check, gradcheck_case, GradMode, DEFAULT_FD_STEP};
use crate::error::{Error, Result};
use crate::feature::{upsample, FeatureMap, Interpolation, LabelMask};
use crate::io::manifest::{load_manifest, AnalysisManifest};
use crate::io::npy::{read_tensor, write_tensor, Layout, TensorDump};
use crate::io::render::{render_curve, render_heatmap, render_heatmap_range, Curve, Heatmap, Series};
use crate::io::report::{render_report, Report, ReportFormat};
use crate::metrics::sa_score;
use crate::protoseg::{protoseg, protoseg_soft};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Gradient checks pass below this maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "protoseg", version, about = "Segmentation ability of deep feature maps")]
struct Cli {
    /// Worker threads for sweeps (default: one per logical core)
    #[arg(long, global = true, env = "PROTOSEG_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment one feature map, seeded by an initial mask
    Sam(SamArgs),
    /// SA score of every (image, layer) in a manifest
    LayerSweep(LayerSweepArgs),
    /// Per-unit SA scores of one layer and the active/inertia split
    UnitSweep(UnitSweepArgs),
    /// Mean SA score (confidence) per image
    Score(ManifestArgs),
    /// Images ordered from least to most confident
    Rank(ManifestArgs),
    /// Retained-set Dice at the requested coverages
    Coverage(CoverageArgs),
    /// Gain of the network output over segmenting the raw input
    Separableness(ManifestArgs),
    /// SA change under uniform feature noise
    Noise(NoiseArgs),
    /// Compare analytic and finite-difference gradients on a random problem
    Gradcheck(GradcheckArgs),
    /// Write a synthetic manifest with tensor dumps
    Synth(SynthArgs),
    /// Draw a heatmap (PGM) from a 2-d dump or a layer curve (SVG) from a layer-sweep report
    Render(RenderArgs),
}

#[derive(Debug, Args)]
struct ReportOut {
    /// Report destination; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// json or csv (default: from the --out extension, else json)
    #[arg(long)]
    format: Option<ReportFormat>,
}

#[derive(Debug, Args)]
struct ManifestArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Feature resizing: bilinear or nearest
    #[arg(long, default_value = "bilinear")]
    interpolation: Interpolation,
    #[command(flatten)]
    report: ReportOut,
}

#[derive(Debug, Args)]
struct SamArgs {
    #[arg(long)]
    feature: PathBuf,
    /// Initial mask (normally the network output)
    #[arg(long)]
    mask: PathBuf,
    /// Where to write the SAM as a uint8 dump
    #[arg(long)]
    out: PathBuf,
    /// Ground truth; when given, the SA score is printed
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Treat the mask as soft weights in [0, 1]
    #[arg(long)]
    soft: bool,
    /// Only use this unit (channel) of the feature map
    #[arg(long)]
    unit: Option<usize>,
    #[arg(long, default_value = "hwc")]
    layout: Layout,
    #[arg(long, default_value = "bilinear")]
    interpolation: Interpolation,
}

#[derive(Debug, Args)]
struct LayerSweepArgs {
    #[command(flatten)]
    common: ManifestArgs,
    /// Also draw mean SA per layer as SVG
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct UnitSweepArgs {
    #[arg(long)]
    feature: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value = "hwc")]
    layout: Layout,
    #[arg(long, default_value = "bilinear")]
    interpolation: Interpolation,
    /// Also write the averaged unit SAM as PGM
    #[arg(long)]
    heatmap: Option<PathBuf>,
    #[command(flatten)]
    report: ReportOut,
}

#[derive(Debug, Args)]
struct CoverageArgs {
    #[command(flatten)]
    common: ManifestArgs,
    /// Coverage percentages
    #[arg(long, value_delimiter = ',', default_value = "100,90,70,50")]
    coverages: Vec<f64>,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    #[command(flatten)]
    common: ManifestArgs,
    /// Maximum noise magnitudes λ
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
    levels: Vec<f64>,
    /// Overrides the manifest's global seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// through or detached
    #[arg(long, default_value = "through")]
    mode: GradMode,
    #[arg(long, default_value_t = DEFAULT_FD_STEP)]
    step: f64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Directory for the dumps and manifest.json
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    images: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    /// Class separation Δ of each layer
    #[arg(long, value_delimiter = ',', default_value = "0.5,2,6")]
    separations: Vec<f64>,
    /// Per-layer downsampling factors
    #[arg(long, value_delimiter = ',')]
    downsample: Vec<usize>,
    #[arg(long, default_value_t = 0.4)]
    object_fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sigma: f64,
    /// Fraction of boundary pixels flipped in the simulated output
    #[arg(long, default_value_t = 0.2)]
    boundary_flip: f64,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true))]
struct RenderArgs {
    /// 2-d (or H×W×1) dump to draw as a heatmap
    #[arg(long, group = "source")]
    input: Option<PathBuf>,
    /// Layer-sweep JSON report to draw as a curve
    #[arg(long, group = "source")]
    report: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Heatmap range (default: [0, 1])
    #[arg(long, requires = "max")]
    min: Option<f64>,
    #[arg(long, requires = "min")]
    max: Option<f64>,
}

/// Parses `argv` (including the program name), runs the command, and
/// returns the process exit code.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let pool = build_pool(cli.jobs)?;
    pool.install(|| match cli.command {
        Command::Sam(a) => sam(a),
        Command::LayerSweep(a) => {
            let m = load_manifest(&a.common.manifest)?;
            let report = layer_sweep(&m, a.common.interpolation);
            emit(&report, &a.common.report)?;
            if let Some(path) = &a.curve {
                render_curve(&report.curve(), path)?;
            }
            Ok(EXIT_OK)
        }
        Command::UnitSweep(a) => units(a),
        Command::Score(a) => {
            let m = load_manifest(&a.manifest)?;
            emit(&confidence_sweep(&m, a.interpolation), &a.report)?;
            Ok(EXIT_OK)
        }
        Command::Rank(a) => {
            let m = load_manifest(&a.manifest)?;
            let scores = confidence_sweep(&m, a.interpolation);
            report_failures(&scores.entries.iter().map(|e| (e.image.as_str(), e.status.as_str())).collect::<Vec<_>>());
            emit(&rank_images(&scores.mu_per_image())?, &a.report)?;
            Ok(EXIT_OK)
        }
        Command::Coverage(a) => {
            let m = load_manifest(&a.common.manifest)?;
            let scores = confidence_sweep(&m, a.common.interpolation);
            report_failures(&scores.entries.iter().map(|e| (e.image.as_str(), e.status.as_str())).collect::<Vec<_>>());
            let records: Vec<CoverageRecord> = scores
                .entries
                .iter()
                .filter_map(|e| e.mu.map(|mu| CoverageRecord::new(e.image.clone(), mu, e.dice)))
                .collect();
            emit(&coverage_table(&records, &a.coverages)?, &a.common.report)?;
            Ok(EXIT_OK)
        }
        Command::Separableness(a) => {
            let m = load_manifest(&a.manifest)?;
            emit(&separableness_sweep(&m, a.interpolation), &a.report)?;
            Ok(EXIT_OK)
        }
        Command::Noise(a) => {
            let mut m: AnalysisManifest = load_manifest(&a.common.manifest)?;
            if let Some(seed) = a.seed {
                m.global_seed = seed;
            }
            emit(&noise_sweep(&m, &a.levels, a.common.interpolation)?, &a.common.report)?;
            Ok(EXIT_OK)
        }
        Command::Gradcheck(a) => {
            let (f, init, g) = gradcheck_case(a.seed);
            let err = finite_diff_check(&f, &init, &g, a.mode, a.step)?;
            println!(
                "max_relative_error={err:e} shape={}x{}x{} mode={}",
                f.height,
                f.width,
                f.channels,
                a.mode.as_str()
            );
            Ok(if err < GRADCHECK_TOLERANCE { EXIT_OK } else { EXIT_DATA })
        }
        Command::Synth(a) => {
            let spec = SyntheticManifestSpec {
                seed: a.seed,
                images: a.images,
                height: a.height,
                width: a.width,
                channels: a.channels,
                separations: a.separations,
                downsample: a.downsample,
                object_fraction: a.object_fraction,
                noise_sigma: a.noise_sigma,
                boundary_flip: a.boundary_flip,
                ..Default::default()
            };
            let path = write_synthetic_manifest(&a.out_dir, &spec)?;
            println!("{}", path.display());
            Ok(EXIT_OK)
        }
        Command::Render(a) => render(a),
    })
}

fn report_failures(entries: &[(&str, &str)]) {
    for (id, status) in entries.iter().filter(|(_, s)| *s != "ok") {
        eprintln!("warning: {id}: {status}");
    }
}

fn emit(report: &dyn Report, out: &ReportOut) -> Result<()> {
    let format = out
        .format
        .or_else(|| out.out.as_deref().map(ReportFormat::from_path))
        .unwrap_or(ReportFormat::Json);
    let text = render_report(report, format)?;
    match &out.out {
        Some(path) => fs::write(path, text).map_err(|e| Error::IoFailure(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_feature(path: &Path, layout: Layout) -> Result<FeatureMap> {
    read_tensor(path)?.to_feature_map(layout)
}

fn load_mask(path: &Path) -> Result<LabelMask> {
    read_tensor(path)?.to_label_mask()
}

fn sam(a: SamArgs) -> Result<i32> {
    let mut f = load_feature(&a.feature, a.layout)?;
    if let Some(unit) = a.unit {
        f = crate::feature::extract_unit(&f, unit)?;
    }
    let mask_dump = read_tensor(&a.mask)?;
    let sam = if a.soft {
        let soft = mask_dump.to_soft_mask()?;
        let f = upsample(&f, soft.height(), soft.width(), a.interpolation)?;
        protoseg_soft(&f, &soft)?.1
    } else {
        let mask = mask_dump.to_label_mask()?;
        let f = upsample(&f, mask.height(), mask.width(), a.interpolation)?;
        protoseg(&f, &mask)?.1
    };
    write_tensor(&a.out, &TensorDump::from_label_mask(&sam.mask))?;
    if let Some(truth) = &a.truth {
        let g = load_mask(truth)?;
        match sa_score(&sam.mask, &g, 1)?.get() {
            Some(v) => println!("sa_score={v:.6}"),
            None => println!("sa_score=undefined"),
        }
    }
    Ok(EXIT_OK)
}

fn units(a: UnitSweepArgs) -> Result<i32> {
    let b = load_mask(&a.mask)?;
    let g = load_mask(&a.truth)?;
    let f = load_feature(&a.feature, a.layout)?;
    let f = upsample(&f, b.height(), b.width(), a.interpolation)?;
    let report = unit_sweep(&f, &b, &g)?;
    emit(&report, &a.report)?;
    if let Some(path) = &a.heatmap {
        let sams = crate::analysis::units::unit_sams(&f, &b)?;
        render_heatmap(&unit_heatmap(sams.iter().flatten().map(|s| &s.mask))?, path)?;
    }
    Ok(EXIT_OK)
}

fn render(a: RenderArgs) -> Result<i32> {
    if let Some(input) = &a.input {
        let dump = read_tensor(input)?;
        let map = match dump.shape() {
            [h, w] | [h, w, 1] | [1, h, w] => {
                Heatmap::new(*h, *w, dump.as_f32().into_iter().map(f64::from).collect())?
            }
            other => return Err(Error::dims("a 2-d map", format!("shape {other:?}"))),
        };
        match (a.min, a.max) {
            (Some(min), Some(max)) => render_heatmap_range(&map, min, max, &a.out)?,
            _ => render_heatmap(&map, &a.out)?,
        }
    } else if let Some(report) = &a.report {
        render_curve(&curve_from_report(report)?, &a.out)?;
    }
    Ok(EXIT_OK)
}

/// Rebuilds the per-layer mean curve from a saved layer-sweep JSON report.
fn curve_from_report(path: &Path) -> Result<Curve> {
    let text = fs::read_to_string(path).map_err(|e| Error::IoFailure(format!("{}: {e}", path.display())))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::schema("$", e.to_string()))?;
    if doc["kind"] != "layer_sweep" {
        return Err(Error::schema("kind", "expected a layer_sweep report"));
    }
    let rows = doc["sections"]["layers"]
        .as_array()
        .ok_or_else(|| Error::schema("sections.layers", "missing"))?;
    let points = rows
        .iter()
        .filter_map(|r| Some((r["layer"].as_f64()?, r["mean_sa"].as_f64()?)))
        .collect();
    Ok(Curve {
        title: "Segmentation ability by layer".into(),
        x_label: "layer".into(),
        y_label: "mean SA score".into(),
        series: vec![Series {
            label: "mean SA".into(),
            points,
        }],
    })
}
