//! OVT1 tensor files and the JSONL instance manifest.
//!
//! OVT1 layout (all integers little-endian):
//!
//! ```text
//! offset  size      field
//! 0       4         magic "OVT1"
//! 4       1         dtype code (1 = f32, 2 = f64)
//! 5       1         ndim (1..=4)
//! 6       6         zero padding
//! 12      8 * ndim  dims as u64
//! ...     payload   row-major elements
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"OVT1";
const HEADER_LEN: usize = 12;
pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    fn first_non_finite(&self) -> Option<usize> {
        match self {
            TensorData::F32(v) => v.iter().position(|x| !x.is_finite()),
            TensorData::F64(v) => v.iter().position(|x| !x.is_finite()),
        }
    }
}

/// Dense row-major tensor of rank 1 to 4.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let t = Tensor { shape, data };
        t.check_shape()?;
        Ok(t)
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, TensorData::F64(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements widened to f64.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    pub fn into_f64_vec(self) -> Vec<f64> {
        match self.data {
            TensorData::F32(v) => v.into_iter().map(|x| x as f64).collect(),
            TensorData::F64(v) => v,
        }
    }

    fn check_shape(&self) -> Result<()> {
        if self.shape.is_empty() || self.shape.len() > MAX_RANK {
            return Err(Error::InvalidTensor(format!(
                "rank {} outside 1..={MAX_RANK}",
                self.shape.len()
            )));
        }
        if self.shape.contains(&0) {
            return Err(Error::InvalidTensor(format!(
                "zero-sized dimension in shape {:?}",
                self.shape
            )));
        }
        let expected = self
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidTensor("shape product overflows".into()))?;
        if expected != self.data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {:?} needs {expected} elements, buffer has {}",
                self.shape,
                self.data.len()
            )));
        }
        Ok(())
    }

    /// Encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 8 * self.shape.len() + self.dtype().size() * self.data.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_shape()?;
        if let Some(index) = self.data.first_non_finite() {
            return Err(Error::InvalidTensor(format!(
                "non-finite element at flat index {index}"
            )));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(self.dtype().code());
        out.push(self.shape.len() as u8);
        out.extend_from_slice(&[0u8; 6]);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        Ok(out)
    }

    /// Decodes an OVT1 buffer. `path` is used only for error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path, mode: ReadMode) -> Result<Self> {
        let truncated = |expected: usize| Error::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: bytes.len() as u64,
        };
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != MAGIC {
                return Err(Error::BadMagic {
                    path: path.to_path_buf(),
                    found: bytes[..4].try_into().unwrap(),
                });
            }
            return Err(truncated(HEADER_LEN));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found: magic,
            });
        }
        let dtype = DType::from_code(bytes[4]).ok_or(Error::UnsupportedDType {
            path: path.to_path_buf(),
            code: bytes[4],
        })?;
        let ndim = bytes[5] as usize;
        if ndim == 0 || ndim > MAX_RANK {
            return Err(Error::InvalidTensor(format!(
                "{}: rank {ndim} outside 1..={MAX_RANK}",
                path.display()
            )));
        }
        let dims_end = HEADER_LEN + 8 * ndim;
        if bytes.len() < dims_end {
            return Err(truncated(dims_end));
        }
        let shape: Vec<usize> = bytes[HEADER_LEN..dims_end]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::InvalidTensor("shape product overflows".into()))?;
        let total = dims_end + count * dtype.size();
        if bytes.len() < total {
            return Err(truncated(total));
        }
        if bytes.len() > total {
            return Err(Error::InvalidTensor(format!(
                "{}: {} trailing bytes after payload",
                path.display(),
                bytes.len() - total
            )));
        }
        let payload = &bytes[dims_end..total];
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        let t = Tensor::new(shape, data)?;
        if mode == ReadMode::Validated {
            if let Some(index) = t.data.first_non_finite() {
                return Err(Error::NonFinite {
                    path: path.to_path_buf(),
                    index,
                });
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadMode {
    /// Reject NaN and infinities.
    #[default]
    Validated,
    /// Accept any bit pattern; for debugging exported activations.
    Raw,
}

/// Writes `t` as OVT1. The file is written to a sibling temp path and renamed.
pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = t.to_bytes()?;
    write_atomic(path, &bytes)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    read_tensor_with(path, ReadMode::Validated)
}

pub fn read_tensor_with(path: impl AsRef<Path>, mode: ReadMode) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes, path, mode)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Representation stages exported per instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RepStage {
    PreProj,
    PostProj,
    Mid,
    Last,
}

impl RepStage {
    pub const ALL: [RepStage; 4] = [
        RepStage::PreProj,
        RepStage::PostProj,
        RepStage::Mid,
        RepStage::Last,
    ];

    pub fn suffix(self) -> &'static str {
        match self {
            RepStage::PreProj => "preproj",
            RepStage::PostProj => "postproj",
            RepStage::Mid => "mid",
            RepStage::Last => "last",
        }
    }

    pub fn from_suffix(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.suffix() == s)
    }

    pub fn query_key(self) -> String {
        format!("q_{}", self.suffix())
    }

    pub fn context_key(self) -> String {
        format!("x_{}", self.suffix())
    }
}

fn is_rep_key(key: &str) -> bool {
    match key.split_once('_') {
        Some(("q" | "x", stage)) => RepStage::from_suffix(stage).is_some(),
        _ => false,
    }
}

/// One QA instance as written by the extractor or the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct InstanceRecord {
    pub id: String,
    #[serde(default)]
    pub question: String,
    #[serde(default)]
    pub context: String,
    #[serde(default)]
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comp_output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comp_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<f64>,
    #[serde(default)]
    pub rep_paths: BTreeMap<String, String>,
    /// Rank-2 `[tokens, d]` hidden states of the non-compressed tokens, keyed by
    /// stage suffix (`mid`, `last`, ...). Feeds the aggregated saturation features.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub nonx_paths: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attn_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xrag_positions: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_positions: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_positions: Option<Vec<usize>>,
}

impl InstanceRecord {
    /// Field-level invariants that do not need the referenced files.
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::InvalidRecord {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(bad("empty id".into()));
        }
        if self.token_count == Some(0) {
            return Err(bad("token_count must be >= 1".into()));
        }
        if let Some(p) = self.perplexity {
            if !(p.is_finite() && p > 0.0) {
                return Err(bad(format!("perplexity must be positive, got {p}")));
            }
        }
        for key in self.rep_paths.keys() {
            if !is_rep_key(key) {
                return Err(bad(format!("unknown rep_paths stage {key:?}")));
            }
        }
        for key in self.nonx_paths.keys() {
            if RepStage::from_suffix(key).is_none() {
                return Err(bad(format!("unknown nonx_paths stage {key:?}")));
            }
        }
        let lists = [
            ("xrag_positions", &self.xrag_positions),
            ("query_positions", &self.query_positions),
            ("context_positions", &self.context_positions),
        ];
        let mut seen: HashSet<usize> = HashSet::new();
        for (name, list) in lists {
            let Some(list) = list else { continue };
            let mut own = HashSet::new();
            for &p in list {
                if !own.insert(p) {
                    return Err(bad(format!("{name} repeats position {p}")));
                }
                if !seen.insert(p) {
                    return Err(bad(format!("{name} overlaps another position list at {p}")));
                }
            }
        }
        Ok(())
    }
}

/// Parsed manifest; relative file references resolve against `base_dir`.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub records: Vec<InstanceRecord>,
}

impl Manifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Loads a rank-1 representation vector, widened to f64.
    pub fn load_rep(&self, record: &InstanceRecord, key: &str) -> Result<Vec<f64>> {
        let rel = record
            .rep_paths
            .get(key)
            .ok_or_else(|| Error::MissingFeature {
                id: record.id.clone(),
                field: format!("rep_paths.{key}"),
            })?;
        let t = read_tensor(self.resolve(rel))?;
        if t.rank() != 1 {
            return Err(Error::InvalidRecord {
                id: record.id.clone(),
                message: format!("rep_paths.{key} has rank {}, expected 1", t.rank()),
            });
        }
        Ok(t.into_f64_vec())
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::ManifestLine {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord =
            serde_json::from_str(&line).map_err(|e| Error::ManifestLine {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        rec.validate().map_err(|e| Error::ManifestLine {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if !ids.insert(rec.id.clone()) {
            return Err(Error::DuplicateId(rec.id));
        }
        records.push(rec);
    }
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Manifest { base_dir, records })
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[InstanceRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::json(path, e))?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn two_by_two_f32_layout() {
        let dir = tmp();
        let p = dir.path().join("t.ovt");
        let t = Tensor::from_f32(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        write_tensor(&t, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 44);
        assert_eq!(&bytes[..12], &[0x4F, 0x56, 0x54, 0x31, 1, 2, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[12..20], &2u64.to_le_bytes());
        assert_eq!(&bytes[20..28], &2u64.to_le_bytes());
        assert_eq!(&bytes[28..32], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[40..44], &4.0f32.to_le_bytes());
        assert_eq!(read_tensor(&p).unwrap(), t);
    }

    #[test]
    fn rank_one_zeros_is_32_bytes() {
        let dir = tmp();
        let p = dir.path().join("z.ovt");
        write_tensor(&Tensor::from_f32(vec![3], vec![0.0; 3]).unwrap(), &p).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 32);
    }

    #[test]
    fn bad_magic() {
        let dir = tmp();
        let p = dir.path().join("bad.ovt");
        let mut bytes = Tensor::from_f32(vec![1], vec![1.0]).unwrap().to_bytes().unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_tensor(&p), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload() {
        let dir = tmp();
        let p = dir.path().join("short.ovt");
        let bytes = Tensor::from_f32(vec![2, 2], vec![1.0; 4]).unwrap().to_bytes().unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        match read_tensor(&p) {
            Err(Error::Truncated {
                expected, found, ..
            }) => {
                assert_eq!(expected, 44);
                assert_eq!(found, 40);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_dtype_and_non_finite() {
        let dir = tmp();
        let p = dir.path().join("d.ovt");
        let mut bytes = Tensor::from_f32(vec![1], vec![1.0]).unwrap().to_bytes().unwrap();
        bytes[4] = 7;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_tensor(&p), Err(Error::UnsupportedDType { code: 7, .. })));

        let mut bytes = Tensor::from_f32(vec![2], vec![1.0, 2.0]).unwrap().to_bytes().unwrap();
        bytes[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_tensor(&p), Err(Error::NonFinite { index: 1, .. })));
        let raw = read_tensor_with(&p, ReadMode::Raw).unwrap();
        assert!(raw.to_f64_vec()[1].is_nan());
    }

    #[test]
    fn invalid_tensors_rejected_before_write() {
        assert!(Tensor::from_f32(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::from_f32(vec![], vec![]).is_err());
        assert!(Tensor::from_f32(vec![1, 1, 1, 1, 1], vec![1.0]).is_err());
        assert!(Tensor::from_f32(vec![0], vec![]).is_err());
        let t = Tensor::from_f64(vec![1], vec![f64::INFINITY]).unwrap();
        let dir = tmp();
        let p = dir.path().join("inf.ovt");
        assert!(write_tensor(&t, &p).is_err());
        assert!(!p.exists());
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        (prop::collection::vec(1usize..5, 1..=4), any::<bool>()).prop_flat_map(|(shape, wide)| {
            let n: usize = shape.iter().product();
            if wide {
                prop::collection::vec(-1e300f64..1e300, n)
                    .prop_map(move |v| Tensor::from_f64(shape.clone(), v).unwrap())
                    .boxed()
            } else {
                prop::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), n)
                    .prop_map(move |v| Tensor::from_f32(shape.clone(), v).unwrap())
                    .boxed()
            }
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(t in arb_tensor()) {
            let bytes = t.to_bytes().unwrap();
            let expected_len = 12 + 8 * t.rank() + t.dtype().size() * t.len();
            prop_assert_eq!(bytes.len(), expected_len);
            let back = Tensor::from_bytes(&bytes, Path::new("mem"), ReadMode::Validated).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
            prop_assert_eq!(back, t);
        }
    }

    fn write_lines(dir: &Path, lines: &[&str]) -> PathBuf {
        let p = dir.join("manifest.jsonl");
        fs::write(&p, lines.join("\n")).unwrap();
        p
    }

    #[test]
    fn manifest_parses_in_order_and_ignores_unknown_fields() {
        let dir = tmp();
        let p = write_lines(
            dir.path(),
            &[
                r#"{"id":"c","question":"q","context":"x","answers":["a"],"extra":1}"#,
                r#"{"id":"a","rep_paths":{"x_postproj":"a.ovt"}}"#,
                r#"{"id":"b","token_count":3,"perplexity":2.5}"#,
            ],
        );
        let m = read_manifest(&p).unwrap();
        let ids: Vec<_> = m.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(m.resolve("a.ovt"), dir.path().join("a.ovt"));
    }

    #[test]
    fn manifest_malformed_line_is_named() {
        let dir = tmp();
        let p = write_lines(dir.path(), &[r#"{"id":"a"}"#, "{not json", r#"{"id":"b"}"#]);
        match read_manifest(&p) {
            Err(Error::ManifestLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_duplicate_id() {
        let dir = tmp();
        let p = write_lines(dir.path(), &[r#"{"id":"a"}"#, r#"{"id":"a"}"#]);
        assert!(matches!(read_manifest(&p), Err(Error::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn record_invariants() {
        let mut r = InstanceRecord {
            id: "r".into(),
            ..Default::default()
        };
        assert!(r.validate().is_ok());
        r.perplexity = Some(0.0);
        assert!(r.validate().is_err());
        r.perplexity = Some(3.0);
        r.token_count = Some(0);
        assert!(r.validate().is_err());
        r.token_count = Some(1);
        r.xrag_positions = Some(vec![0]);
        r.query_positions = Some(vec![0, 1]);
        assert!(r.validate().is_err());
        r.query_positions = Some(vec![1, 2]);
        assert!(r.validate().is_ok());
        r.rep_paths.insert("y_mid".into(), "f".into());
        assert!(r.validate().is_err());
    }
}
