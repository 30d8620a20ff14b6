//! Batch experiments over layers, units and images.

pub mod selection;
pub mod sweep;
pub mod synthetic;
pub mod units;

pub use selection::{coverage_table, rank_images, retained_count, CoverageRecord, CoverageRow, CoverageTable, RankingReport};
pub use sweep::{
    build_pool, confidence_sweep, image_confidence, layer_sweep, noise_sweep, separableness_sweep, ConfidenceReport,
    LayerSweepReport, NoiseReport, SeparablenessReport,
};
pub use synthetic::{
    bed_image, gen_synthetic, item_seed, write_synthetic_manifest, BedImage, SyntheticManifestSpec, SyntheticSample,
    SyntheticSpec,
};
pub use units::{split_active_inertia, unit_heatmap, unit_sams, unit_sweep, UnitScore, UnitSweepReport};
