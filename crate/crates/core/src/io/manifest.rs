//! The analysis manifest: which images, masks, and per-layer feature dumps
//! to analyze. A JSON document with `"version": 1`; every path in it is
//! relative to the manifest's own directory.
//!
//! ```json
//! {
//!   "version": 1,
//!   "global_seed": 7,
//!   "images": [{
//!     "id": "case-001",
//!     "input": "case-001/input.npy",
//!     "ground_truth": "case-001/gt.npy",
//!     "output": "case-001/output.npy",
//!     "layers": [
//!       {"layer_index": 17, "channels": 64, "feature": "case-001/f17.npy", "layout": "chw"},
//!       {"layer_index": 18, "channels": 2, "feature": "case-001/f18.npy"}
//!     ]
//!   }]
//! }
//! ```
//!
//! `input` and `ground_truth` are optional; operations that need them record
//! a per-entry error when they are absent. Unknown keys are ignored, so
//! exporters may attach free-text metadata such as hook descriptions.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::feature::{FeatureMap, LabelMask};
use crate::io::npy::{read_tensor, Layout};

pub const MANIFEST_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerEntry {
    pub layer_index: u32,
    pub channels: usize,
    pub feature: PathBuf,
    pub layout: Layout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEntry {
    pub id: String,
    pub input: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub output: PathBuf,
    pub layers: Vec<LayerEntry>,
}

impl ImageEntry {
    /// The two layers with the highest indices (fewer if the image has fewer).
    pub fn last_two_layers(&self) -> &[LayerEntry] {
        &self.layers[self.layers.len().saturating_sub(2)..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisManifest {
    pub version: u64,
    pub global_seed: u64,
    pub images: Vec<ImageEntry>,
    /// Directory the entry paths are relative to.
    pub base_dir: PathBuf,
}

impl AnalysisManifest {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn load_feature(&self, layer: &LayerEntry) -> Result<FeatureMap> {
        let f = read_tensor(self.resolve(&layer.feature))?.to_feature_map(layer.layout)?;
        if f.channels() != layer.channels {
            return Err(Error::dims(
                format!("{} channels (manifest)", layer.channels),
                format!("{} channels in {}", f.channels(), layer.feature.display()),
            ));
        }
        Ok(f.with_layer(layer.layer_index))
    }

    pub fn load_output(&self, image: &ImageEntry) -> Result<LabelMask> {
        read_tensor(self.resolve(&image.output))?.to_label_mask()
    }

    pub fn load_ground_truth(&self, image: &ImageEntry) -> Result<LabelMask> {
        let path = image
            .ground_truth
            .as_ref()
            .ok_or_else(|| Error::InvalidValue(format!("image {} has no ground_truth", image.id)))?;
        read_tensor(self.resolve(path))?.to_label_mask()
    }

    pub fn load_input(&self, image: &ImageEntry) -> Result<FeatureMap> {
        let path = image
            .input
            .as_ref()
            .ok_or_else(|| Error::InvalidValue(format!("image {} has no input", image.id)))?;
        read_tensor(self.resolve(path))?.to_feature_map(Layout::ChannelLast)
    }

    /// The manifest as a JSON document, paths kept relative.
    pub fn to_json(&self) -> Value {
        let path = |p: &Path| Value::String(p.to_string_lossy().replace('\\', "/"));
        let images: Vec<Value> = self
            .images
            .iter()
            .map(|img| {
                let mut obj = Map::new();
                obj.insert("id".into(), json!(img.id));
                if let Some(p) = &img.input {
                    obj.insert("input".into(), path(p));
                }
                if let Some(p) = &img.ground_truth {
                    obj.insert("ground_truth".into(), path(p));
                }
                obj.insert("output".into(), path(&img.output));
                let layers: Vec<Value> = img
                    .layers
                    .iter()
                    .map(|l| {
                        json!({
                            "layer_index": l.layer_index,
                            "channels": l.channels,
                            "feature": path(&l.feature),
                            "layout": l.layout.as_str(),
                        })
                    })
                    .collect();
                obj.insert("layers".into(), Value::Array(layers));
                Value::Object(obj)
            })
            .collect();
        json!({
            "version": self.version,
            "global_seed": self.global_seed,
            "images": images,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())
            .map_err(|e| Error::IoFailure(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Reads and validates a manifest, checking that every referenced file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<AnalysisManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let doc: Value =
        serde_json::from_str(&text).map_err(|e| Error::schema("$", format!("invalid JSON: {e}")))?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let manifest = parse_manifest(&doc, base_dir)?;
    check_references(&manifest)?;
    Ok(manifest)
}

fn check_references(m: &AnalysisManifest) -> Result<()> {
    for img in &m.images {
        let paths = img
            .input
            .iter()
            .chain(img.ground_truth.iter())
            .chain(std::iter::once(&img.output))
            .chain(img.layers.iter().map(|l| &l.feature));
        for p in paths {
            let full = m.resolve(p);
            if !full.is_file() {
                return Err(Error::DanglingReference(full));
            }
        }
    }
    Ok(())
}

fn field<'a>(obj: &'a Map<String, Value>, path: &str, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::schema(format!("{path}.{key}"), "missing required field"))
}

fn uint(v: &Value, path: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| Error::schema(path, "expected a non-negative integer"))
}

fn string<'a>(v: &'a Value, path: &str) -> Result<&'a str> {
    match v.as_str() {
        Some(s) if !s.is_empty() => Ok(s),
        Some(_) => Err(Error::schema(path, "must not be empty")),
        None => Err(Error::schema(path, "expected a string")),
    }
}

fn opt_path(obj: &Map<String, Value>, path: &str, key: &str) -> Result<Option<PathBuf>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => Ok(Some(PathBuf::from(string(v, &format!("{path}.{key}"))?))),
    }
}

/// Structural validation with JSON-path style error locations.
pub fn parse_manifest(doc: &Value, base_dir: PathBuf) -> Result<AnalysisManifest> {
    let root = doc
        .as_object()
        .ok_or_else(|| Error::schema("$", "manifest must be an object"))?;
    let version = uint(field(root, "$", "version")?, "version")?;
    if version != MANIFEST_VERSION {
        return Err(Error::schema(
            "version",
            format!("unsupported version {version}, expected {MANIFEST_VERSION}"),
        ));
    }
    let global_seed = match root.get("global_seed") {
        None => 0,
        Some(v) => uint(v, "global_seed")?,
    };
    let images_val = field(root, "$", "images")?
        .as_array()
        .ok_or_else(|| Error::schema("images", "expected an array"))?;

    let mut seen = HashSet::new();
    let mut images = Vec::with_capacity(images_val.len());
    for (i, img) in images_val.iter().enumerate() {
        let at = format!("images[{i}]");
        let obj = img
            .as_object()
            .ok_or_else(|| Error::schema(&at, "expected an object"))?;
        let id = string(field(obj, &at, "id")?, &format!("{at}.id"))?.to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::schema(format!("{at}.id"), format!("duplicate image id {id:?}")));
        }
        let output = PathBuf::from(string(field(obj, &at, "output")?, &format!("{at}.output"))?);
        let layers_val = field(obj, &at, "layers")?
            .as_array()
            .ok_or_else(|| Error::schema(format!("{at}.layers"), "expected an array"))?;
        let mut layers: Vec<LayerEntry> = Vec::with_capacity(layers_val.len());
        for (j, layer) in layers_val.iter().enumerate() {
            let lat = format!("{at}.layers[{j}]");
            let lobj = layer
                .as_object()
                .ok_or_else(|| Error::schema(&lat, "expected an object"))?;
            let index_path = format!("{lat}.layer_index");
            let layer_index = u32::try_from(uint(field(lobj, &lat, "layer_index")?, &index_path)?)
                .map_err(|_| Error::schema(&index_path, "out of range"))?;
            if let Some(prev) = layers.last() {
                if layer_index <= prev.layer_index {
                    return Err(Error::schema(
                        index_path,
                        format!("layer_index must increase strictly (previous {})", prev.layer_index),
                    ));
                }
            }
            let channels_path = format!("{lat}.channels");
            let channels = uint(field(lobj, &lat, "channels")?, &channels_path)? as usize;
            if channels == 0 {
                return Err(Error::schema(channels_path, "must be positive"));
            }
            let feature = PathBuf::from(string(field(lobj, &lat, "feature")?, &format!("{lat}.feature"))?);
            let layout = match lobj.get("layout") {
                None => Layout::default(),
                Some(v) => string(v, &format!("{lat}.layout"))?
                    .parse()
                    .map_err(|e: Error| Error::schema(format!("{lat}.layout"), e.to_string()))?,
            };
            layers.push(LayerEntry {
                layer_index,
                channels,
                feature,
                layout,
            });
        }
        images.push(ImageEntry {
            id,
            input: opt_path(obj, &at, "input")?,
            ground_truth: opt_path(obj, &at, "ground_truth")?,
            output,
            layers,
        });
    }
    Ok(AnalysisManifest {
        version,
        global_seed,
        images,
        base_dir,
    })
}
