//! Per-instance feature vectors for each (stage, feature set) pair, and the
//! cached matrix form consumed by training and evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{is_valid_combination, FeatureSet, Stage};
use crate::attention::{attention_feature_vector, complement, AttentionFeatures, AttentionMap};
use crate::complexity::{context_complexity_with, ComplexityFeatures, ComplexityOptions};
use crate::error::{Error, Result};
use crate::saturation::{aggregate_saturation, saturation_profile, AggregatedStats, SaturationStats};
use crate::tensor_io::{read_tensor, write_atomic, write_tensor, InstanceRecord, Manifest, RepStage, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub complexity: ComplexityOptions,
}

fn in_instance(id: &str, e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::domain(format!("instance {id:?}: {m}")),
        other => other,
    }
}

fn missing(record: &InstanceRecord, field: &str) -> Error {
    Error::MissingFeature {
        id: record.id.clone(),
        field: field.to_string(),
    }
}

fn load_nonx(manifest: &Manifest, record: &InstanceRecord, layer: RepStage) -> Result<Vec<SaturationStats>> {
    let rel = record
        .nonx_paths
        .get(layer.suffix())
        .ok_or_else(|| missing(record, &format!("nonx_paths.{}", layer.suffix())))?;
    let t = read_tensor(manifest.resolve(rel))?;
    let [rows, d] = *t.shape() else {
        return Err(Error::InvalidRecord {
            id: record.id.clone(),
            message: format!("nonx_paths.{} has rank {}, expected 2", layer.suffix(), t.rank()),
        });
    };
    let data = t.into_f64_vec();
    (0..rows)
        .map(|r| saturation_profile(&data[r * d..(r + 1) * d]))
        .collect()
}

/// Layers of the attention map that a stage reads: the middle layer is
/// `floor(L / 2)`, the last is `L - 1`, post-inference uses every layer.
pub fn attention_layers(stage: Stage, total: usize) -> Vec<usize> {
    match stage {
        Stage::MiddleLayer => vec![total / 2],
        Stage::LastLayer => vec![total - 1],
        _ => (0..total).collect(),
    }
}

fn attention_features(manifest: &Manifest, record: &InstanceRecord, stage: Stage) -> Result<AttentionFeatures> {
    let rel = record.attn_path.as_ref().ok_or_else(|| missing(record, "attn_path"))?;
    let queries = record.query_positions.as_ref().ok_or_else(|| missing(record, "query_positions"))?;
    let compressed = record.xrag_positions.as_ref().ok_or_else(|| missing(record, "xrag_positions"))?;
    let full = AttentionMap::from_tensor(&read_tensor(manifest.resolve(rel))?)?;
    let map = full.select_layers(&attention_layers(stage, full.layers()))?;
    let others = complement(map.seq_len(), compressed);
    let feats = attention_feature_vector(&map, queries, compressed, &others)?;
    if feats.off_simplex_rows > 0 {
        log::warn!(
            "instance {:?}: {} query rows do not sum to 1",
            record.id,
            feats.off_simplex_rows
        );
    }
    Ok(feats)
}

/// Feature vector of one instance. Representation sets concatenate the stage's
/// layers in order, the joint variant appends the query vectors after the
/// context vectors. Saturation sets repeat their block per layer.
pub fn compose_features(
    manifest: &Manifest,
    record: &InstanceRecord,
    stage: Stage,
    set: FeatureSet,
    opts: &FeatureOptions,
) -> Result<Vec<f64>> {
    if !is_valid_combination(stage, set) {
        return Err(Error::Config(format!("feature set {set} is not defined at stage {stage}")));
    }
    let id = record.id.as_str();
    let layers = stage.layers();
    let mut out = Vec::new();
    match set {
        FeatureSet::Context => {
            let f = context_complexity_with(record, &opts.complexity)?;
            out.extend(f.to_array());
        }
        FeatureSet::Saturation | FeatureSet::SaturationJoint => {
            for &layer in layers {
                let x = manifest.load_rep(record, &layer.context_key())?;
                let p = saturation_profile(&x).map_err(|e| in_instance(id, e))?;
                out.extend(p.to_array());
                if set == FeatureSet::SaturationJoint {
                    let profiles = load_nonx(manifest, record, layer).map_err(|e| in_instance(id, e))?;
                    let agg = aggregate_saturation(&profiles).map_err(|e| in_instance(id, e))?;
                    out.extend(agg.to_vec());
                }
            }
        }
        FeatureSet::Attention => {
            let f = attention_features(manifest, record, stage).map_err(|e| in_instance(id, e))?;
            out.extend(f.to_vec());
        }
        FeatureSet::Representation | FeatureSet::RepresentationJoint => {
            for &layer in layers {
                out.extend(manifest.load_rep(record, &layer.context_key())?);
            }
            if set == FeatureSet::RepresentationJoint {
                for &layer in layers {
                    out.extend(manifest.load_rep(record, &layer.query_key())?);
                }
            }
        }
    }
    Ok(out)
}

/// Column names for a composed vector; `dims` gives the per-layer context and
/// query vector lengths for representation sets.
pub fn feature_names(stage: Stage, set: FeatureSet, dims: &dyn Fn(&str) -> usize) -> Vec<String> {
    let layers = stage.layers();
    let mut names = Vec::new();
    match set {
        FeatureSet::Context => names.extend(ComplexityFeatures::NAMES.iter().map(|s| s.to_string())),
        FeatureSet::Saturation | FeatureSet::SaturationJoint => {
            for layer in layers {
                let sfx = layer.suffix();
                names.extend(SaturationStats::NAMES.iter().map(|s| format!("x_{sfx}_{s}")));
                if set == FeatureSet::SaturationJoint {
                    names.extend(AggregatedStats::names(&format!("nonx_{sfx}_")));
                }
            }
        }
        FeatureSet::Attention => names.extend(AttentionFeatures::names()),
        FeatureSet::Representation | FeatureSet::RepresentationJoint => {
            let mut keys: Vec<String> = layers.iter().map(|l| l.context_key()).collect();
            if set == FeatureSet::RepresentationJoint {
                keys.extend(layers.iter().map(|l| l.query_key()));
            }
            for key in keys {
                names.extend((0..dims(&key)).map(|i| format!("{key}[{i}]")));
            }
        }
    }
    names
}

/// Row-aligned features for a list of instances.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub stage: Stage,
    pub feature_set: FeatureSet,
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    pub data: Array2<f64>,
    pub labels: Option<Vec<u8>>,
}

/// Composes features for `records` in parallel; rows keep the input order.
pub fn build_feature_matrix(
    manifest: &Manifest,
    records: &[&InstanceRecord],
    stage: Stage,
    set: FeatureSet,
    opts: &FeatureOptions,
) -> Result<FeatureMatrix> {
    if records.is_empty() {
        return Err(Error::domain("no instances to featurize"));
    }
    let rows: Vec<Vec<f64>> = records
        .par_iter()
        .map(|r| compose_features(manifest, r, stage, set, opts))
        .collect::<Result<_>>()?;
    let width = rows[0].len();
    if let Some(i) = rows.iter().position(|r| r.len() != width) {
        return Err(Error::InvalidRecord {
            id: records[i].id.clone(),
            message: format!(
                "{stage}/{set} feature vector has length {}, the first instance has {width}",
                rows[i].len()
            ),
        });
    }
    let first = records[0];
    let dims = |key: &str| -> usize {
        manifest.load_rep(first, key).map(|v| v.len()).unwrap_or(0)
    };
    let columns = feature_names(stage, set, &dims);
    debug_assert_eq!(columns.len(), width);
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(FeatureMatrix {
        stage,
        feature_set: set,
        ids: records.iter().map(|r| r.id.clone()).collect(),
        columns,
        data: Array2::from_shape_vec((records.len(), width), flat).expect("row lengths checked"),
        labels: None,
    })
}

pub const CACHE_FORMAT_VERSION: u32 = 1;

/// JSON sidecar next to the OVT feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSidecar {
    pub format_version: u32,
    pub stage: Stage,
    pub feature_set: FeatureSet,
    pub matrix_file: String,
    pub columns: Vec<String>,
    pub ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
    pub config_digest: String,
    #[serde(default)]
    pub config: serde_json::Value,
}

fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("ovt"), path.with_extension("json"))
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    /// Writes `<path>.ovt` and `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>, config: serde_json::Value, config_digest: &str) -> Result<()> {
        let (ovt, json) = sidecar_paths(path.as_ref());
        if let Some(dir) = ovt.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let t = Tensor::from_f64(vec![self.data.nrows(), self.data.ncols()], self.data.iter().copied().collect())?;
        write_tensor(&t, &ovt)?;
        let side = CacheSidecar {
            format_version: CACHE_FORMAT_VERSION,
            stage: self.stage,
            feature_set: self.feature_set,
            matrix_file: ovt
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            columns: self.columns.clone(),
            ids: self.ids.clone(),
            labels: self.labels.clone(),
            config_digest: config_digest.to_string(),
            config,
        };
        let mut bytes = serde_json::to_vec_pretty(&side).map_err(|e| Error::json(&json, e))?;
        bytes.push(b'\n');
        write_atomic(&json, &bytes)
    }

    /// Reads a cache written by [`FeatureMatrix::save`]; `path` may name
    /// either file or the common stem.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, CacheSidecar)> {
        let (_, json) = sidecar_paths(path.as_ref());
        let text = fs::read(&json).map_err(|e| Error::io(&json, e))?;
        let side: CacheSidecar = serde_json::from_slice(&text).map_err(|e| Error::json(&json, e))?;
        if side.format_version != CACHE_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "{}: cache format version {}",
                json.display(),
                side.format_version
            )));
        }
        let ovt = json.with_file_name(&side.matrix_file);
        let t = read_tensor(&ovt)?;
        let [rows, cols] = *t.shape() else {
            return Err(Error::InvalidTensor(format!("{}: feature cache must be rank 2", ovt.display())));
        };
        if rows != side.ids.len() || cols != side.columns.len() {
            return Err(Error::InvalidTensor(format!(
                "{}: shape [{rows}, {cols}] disagrees with sidecar ({} ids, {} columns)",
                ovt.display(),
                side.ids.len(),
                side.columns.len()
            )));
        }
        if let Some(l) = &side.labels {
            if l.len() != rows {
                return Err(Error::InvalidTensor(format!("{}: label count mismatch", json.display())));
            }
        }
        let m = FeatureMatrix {
            stage: side.stage,
            feature_set: side.feature_set,
            ids: side.ids.clone(),
            columns: side.columns.clone(),
            data: Array2::from_shape_vec((rows, cols), t.into_f64_vec()).expect("shape checked"),
            labels: side.labels.clone(),
        };
        Ok((m, side))
    }
}
