//! On-disk formats: tensor dumps, the analysis manifest, reports, and images.

pub mod manifest;
pub mod npy;
pub mod render;
pub mod report;

pub use manifest::{load_manifest, AnalysisManifest, ImageEntry, LayerEntry};
pub use npy::{read_tensor, write_tensor, DType, Layout, TensorData, TensorDump};
pub use render::{render_curve, render_heatmap, Curve, Heatmap, Series};
pub use report::{save_report, Cell, Report, ReportFormat, Table};
