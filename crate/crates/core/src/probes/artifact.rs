//! On-disk model: `model.json` header plus one f64 OVT tensor per parameter block.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, NetSpec, Network, ProbeModel, Scaler, TrainSummary};
use crate::error::{Error, Result};
use crate::tensor_io::{read_tensor, write_atomic, write_tensor, Tensor};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const HEADER_FILE: &str = "model.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub architecture: Architecture,
    pub spec: NetSpec,
    pub scaler: Scaler,
    pub summary: TrainSummary,
    pub config_digest: String,
    pub tensors: Vec<TensorEntry>,
}

fn blocks(model: &ProbeModel) -> Vec<(&'static str, Vec<usize>, Vec<f64>)> {
    let spec = &model.network.spec;
    let l = spec.layout();
    let p = &model.network.params;
    let h = if spec.has_hidden() { spec.hidden_dim } else { 1 };
    let mut out = vec![
        ("w1", vec![h, spec.input_dim], p[l.w1.clone()].to_vec()),
        ("b1", vec![h], p[l.b1.clone()].to_vec()),
    ];
    if let (Some(g), Some(b)) = (&l.gamma, &l.beta) {
        out.push(("bn_gamma", vec![h], p[g.clone()].to_vec()));
        out.push(("bn_beta", vec![h], p[b.clone()].to_vec()));
        out.push(("bn_running_mean", vec![h], model.network.running_mean.clone()));
        out.push(("bn_running_var", vec![h], model.network.running_var.clone()));
    }
    if let (Some(w2), Some(b2)) = (&l.w2, &l.b2) {
        out.push(("w2", vec![1, h], p[w2.clone()].to_vec()));
        out.push(("b2", vec![1], p[b2.clone()].to_vec()));
    }
    out
}

pub fn save_model(model: &ProbeModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::new();
    for (name, shape, data) in blocks(model) {
        let file = format!("{name}.ovt");
        write_tensor(&Tensor::from_f64(shape.clone(), data)?, dir.join(&file))?;
        tensors.push(TensorEntry {
            name: name.to_string(),
            file,
            shape,
        });
    }
    let header = ModelHeader {
        format_version: MODEL_FORMAT_VERSION,
        architecture: model.architecture,
        spec: model.network.spec,
        scaler: model.scaler.clone(),
        summary: model.summary.clone(),
        config_digest: model.config_digest.clone(),
        tensors,
    };
    let path = dir.join(HEADER_FILE);
    let mut json = serde_json::to_vec_pretty(&header).map_err(|e| Error::json(&path, e))?;
    json.push(b'\n');
    write_atomic(&path, &json)
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<ProbeModel> {
    let dir = dir.as_ref();
    let path = dir.join(HEADER_FILE);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let header: ModelHeader = serde_json::from_slice(&text).map_err(|e| Error::json(&path, e))?;
    if header.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "{}: model format version {} (supported: {MODEL_FORMAT_VERSION})",
            path.display(),
            header.format_version
        )));
    }
    if header.scaler.dim() != header.spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: header.spec.input_dim,
            found: header.scaler.dim(),
        });
    }
    if header.scaler.stds.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Config(format!("{}: non-positive scaler std", path.display())));
    }
    let mut network = Network::zeros(header.spec);
    let layout = header.spec.layout();
    for entry in &header.tensors {
        let t = read_tensor(dir.join(&entry.file))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::InvalidTensor(format!(
                "{}: shape {:?} does not match header {:?}",
                entry.file,
                t.shape(),
                entry.shape
            )));
        }
        let data = t.into_f64_vec();
        let target: &mut [f64] = match entry.name.as_str() {
            "w1" => &mut network.params[layout.w1.clone()],
            "b1" => &mut network.params[layout.b1.clone()],
            "bn_gamma" => slot(&mut network.params, &layout.gamma, &entry.name)?,
            "bn_beta" => slot(&mut network.params, &layout.beta, &entry.name)?,
            "w2" => slot(&mut network.params, &layout.w2, &entry.name)?,
            "b2" => slot(&mut network.params, &layout.b2, &entry.name)?,
            "bn_running_mean" => &mut network.running_mean,
            "bn_running_var" => &mut network.running_var,
            other => return Err(Error::Config(format!("unknown model tensor {other:?}"))),
        };
        if target.len() != data.len() {
            return Err(Error::DimensionMismatch {
                expected: target.len(),
                found: data.len(),
            });
        }
        target.copy_from_slice(&data);
    }
    Ok(ProbeModel {
        architecture: header.architecture,
        scaler: header.scaler,
        network,
        summary: header.summary,
        config_digest: header.config_digest,
    })
}

fn slot<'a>(
    params: &'a mut [f64],
    range: &Option<std::ops::Range<usize>>,
    name: &str,
) -> Result<&'a mut [f64]> {
    match range {
        Some(r) => Ok(&mut params[r.clone()]),
        None => Err(Error::Config(format!("tensor {name:?} does not belong to this architecture"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::{predict_scores, train_probe, ProbeConfig};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_every_architecture() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Array2::from_shape_fn((60, 4), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<u8> = (0..60).map(|i| u8::from(x[[i, 1]] > 0.1)).collect();
        let dir = tempfile::tempdir().unwrap();
        for arch in Architecture::ALL {
            let mut cfg = ProbeConfig::for_architecture(arch).with_seed(3);
            cfg.hidden_dim = 8;
            cfg.max_epochs = 3;
            let m = train_probe(x.view(), &y, &cfg).unwrap();
            let sub = dir.path().join(arch.name());
            save_model(&m, &sub).unwrap();
            let back = load_model(&sub).unwrap();
            assert_eq!(back, m);
            assert_eq!(
                predict_scores(&back, x.view()).unwrap(),
                predict_scores(&m, x.view()).unwrap()
            );
        }
    }
}
