//! Seeded generators with known ground truth.
//!
//! The overflow world stores up to `capacity` facts in one compressed vector;
//! a query asks about one fact chosen uniformly among the `m` facts in its
//! context, and the compressed run answers correctly iff that fact survived.
//! Stage vectors after the projector are fixed linear distortions of the
//! projected vector rather than real transformer layers, so the world checks
//! pipeline mechanics and detector ordering, not model behaviour.
//!
//! Every instance draws from its own ChaCha stream, so instance `i` is the same
//! no matter how many instances are generated.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{write_manifest, write_tensor, InstanceRecord, RepStage, Tensor};

const WORLD_STREAM: u64 = 0;
const INSTANCE_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_instances: usize,
    pub facts_min: usize,
    pub facts_max: usize,
    /// Facts that survive compression.
    pub capacity: usize,
    pub fact_dim: usize,
    pub compressed_dim: usize,
    pub noise_sigma: f64,
    /// Probability of flipping the compressed-run correctness flag.
    pub label_noise: f64,
    /// Weight of the shared slot key inside each stored fact.
    pub slot_weight: f64,
    /// Non-compressed (query) tokens per instance: rows of the non-xRAG
    /// hidden-state matrices and attention positions after the compressed one.
    pub query_tokens: usize,
    pub attention_layers: usize,
    pub attention_heads: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub const PRESETS: [&'static str; 1] = ["paper-mini"];

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper-mini" => Ok(SynthConfig {
                n_instances: 2000,
                facts_min: 1,
                facts_max: 8,
                capacity: 4,
                fact_dim: 64,
                compressed_dim: 256,
                noise_sigma: 0.1,
                label_noise: 0.0,
                slot_weight: 0.5,
                query_tokens: 7,
                attention_layers: 2,
                attention_heads: 2,
                seed: 7,
            }),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (available: {})",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.capacity < 1 {
            return bad("capacity must be at least 1".into());
        }
        if self.compressed_dim < 8 {
            return bad(format!("compressed_dim must be at least 8, got {}", self.compressed_dim));
        }
        if self.fact_dim < 2 {
            return bad(format!("fact_dim must be at least 2, got {}", self.fact_dim));
        }
        if !(0.0..=0.2).contains(&self.label_noise) {
            return bad(format!("label_noise must be in [0, 0.2], got {}", self.label_noise));
        }
        if self.facts_min < 1 || self.facts_min > self.facts_max {
            return bad(format!("invalid fact range {}..={}", self.facts_min, self.facts_max));
        }
        if self.n_instances == 0 || self.query_tokens == 0 {
            return bad("n_instances and query_tokens must be at least 1".into());
        }
        if self.attention_layers == 0 || self.attention_heads == 0 {
            return bad("attention axes must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(self.slot_weight >= 0.0 && self.slot_weight.is_finite()) {
            return bad(format!("slot_weight must be non-negative, got {}", self.slot_weight));
        }
        Ok(())
    }
}

/// Expected positive rate: `P(target > capacity)` under uniform `m` and a
/// uniform target, mixed with symmetric label noise.
pub fn analytic_overflow_rate(cfg: &SynthConfig) -> f64 {
    let span = (cfg.facts_max - cfg.facts_min + 1) as f64;
    let p: f64 = (cfg.facts_min..=cfg.facts_max)
        .map(|m| m.saturating_sub(cfg.capacity) as f64 / m as f64)
        .sum::<f64>()
        / span;
    p * (1.0 - cfg.label_noise) + (1.0 - p) * cfg.label_noise
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

fn normalized(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

/// Parameters shared by every instance of a world.
struct World {
    slots: Vec<Array1<f64>>,
    projection: Array2<f64>,
    mid: Array2<f64>,
    last: Array2<f64>,
}

impl World {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = stream(cfg.seed, WORLD_STREAM);
        let (df, dc) = (cfg.fact_dim, cfg.compressed_dim);
        let slots = (0..cfg.facts_max)
            .map(|_| normalized(gaussian(&mut rng, df, 1.0)))
            .collect();
        let proj_scale = 1.0 / (df as f64).sqrt();
        let projection = Array2::from_shape_fn((dc, df), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * proj_scale
        });
        let distortion = |rng: &mut ChaCha8Rng| {
            let s = 0.5 / (dc as f64).sqrt();
            let mut m = Array2::from_shape_fn((dc, dc), |_| {
                let z: f64 = StandardNormal.sample(rng);
                z * s
            });
            for i in 0..dc {
                m[[i, i]] += 1.0;
            }
            m
        };
        let mid = distortion(&mut rng);
        let last = distortion(&mut rng);
        World {
            slots,
            projection,
            mid,
            last,
        }
    }
}

/// One generated instance before it is written out.
#[derive(Debug, Clone)]
pub struct SynthInstance {
    pub record: InstanceRecord,
    pub n_facts: usize,
    pub target: usize,
    /// `(rep key, vector)` for the eight q/x stage vectors.
    pub reps: Vec<(String, Vec<f32>)>,
    /// `(stage suffix, [tokens, d] row-major)` for the post-inference stages.
    pub nonx: Vec<(String, Vec<f32>)>,
    pub attention: Vec<f32>,
}

impl SynthInstance {
    pub fn overflow(&self) -> bool {
        self.record.comp_correct == Some(false)
    }
}

fn instance_id(i: usize) -> String {
    format!("syn-{i:05}")
}

fn generate_instance(cfg: &SynthConfig, world: &World, index: usize) -> SynthInstance {
    let mut rng = stream(cfg.seed, INSTANCE_STREAM_BASE + index as u64);
    let (df, dc) = (cfg.fact_dim, cfg.compressed_dim);
    let noise = cfg.noise_sigma;
    let m = rng.gen_range(cfg.facts_min..=cfg.facts_max);
    let target = rng.gen_range(1..=m);

    let contents: Vec<Array1<f64>> = (0..m).map(|_| normalized(gaussian(&mut rng, df, 1.0))).collect();
    let facts: Vec<Array1<f64>> = contents
        .iter()
        .zip(&world.slots)
        .map(|(c, s)| normalized(c + &(s * cfg.slot_weight)))
        .collect();

    let mut x_pre = gaussian(&mut rng, df, noise / (df as f64).sqrt());
    for f in facts.iter().take(m.min(cfg.capacity)) {
        x_pre += f;
    }
    let q_pre = normalized(&world.slots[target - 1] + &(&contents[target - 1] * 0.5))
        + gaussian(&mut rng, df, noise / (df as f64).sqrt());

    let post = |v: &Array1<f64>, rng: &mut ChaCha8Rng| world.projection.dot(v) + gaussian(rng, dc, noise / (dc as f64).sqrt());
    let x_post = post(&x_pre, &mut rng);
    let q_post = post(&q_pre, &mut rng);
    let deeper = |m: &Array2<f64>, v: &Array1<f64>, rng: &mut ChaCha8Rng| m.dot(v) + gaussian(rng, dc, noise / (dc as f64).sqrt());
    let x_mid = deeper(&world.mid, &x_post, &mut rng);
    let q_mid = deeper(&world.mid, &q_post, &mut rng);
    let x_last = deeper(&world.last, &x_post, &mut rng);
    let q_last = deeper(&world.last, &q_post, &mut rng);

    let to32 = |v: &Array1<f64>| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let id = instance_id(index);
    let reps = vec![
        (RepStage::PreProj.context_key(), to32(&x_pre)),
        (RepStage::PostProj.context_key(), to32(&x_post)),
        (RepStage::Mid.context_key(), to32(&x_mid)),
        (RepStage::Last.context_key(), to32(&x_last)),
        (RepStage::PreProj.query_key(), to32(&q_pre)),
        (RepStage::PostProj.query_key(), to32(&q_post)),
        (RepStage::Mid.query_key(), to32(&q_mid)),
        (RepStage::Last.query_key(), to32(&q_last)),
    ];

    // Query-token hidden states: unrelated dense vectors pushed through the
    // same projection and distortions.
    let tokens: Vec<Array1<f64>> = (0..cfg.query_tokens)
        .map(|_| world.projection.dot(&normalized(gaussian(&mut rng, df, 1.0))))
        .collect();
    let nonx = [(RepStage::Mid, &world.mid), (RepStage::Last, &world.last)]
        .iter()
        .map(|(stage, m)| {
            let rows: Vec<f32> = tokens
                .iter()
                .flat_map(|t| {
                    let v = m.dot(t) + gaussian(&mut rng, dc, noise / (dc as f64).sqrt());
                    to32(&v)
                })
                .collect();
            (stage.suffix().to_string(), rows)
        })
        .collect();

    // Uniform attention with a per-head bias towards the compressed position.
    let seq = cfg.query_tokens + 1;
    let mut attention = Vec::with_capacity(cfg.attention_layers * cfg.attention_heads * seq * seq);
    for _ in 0..cfg.attention_layers * cfg.attention_heads {
        let bias: f64 = rng.gen_range(0.0..2.0);
        for _ in 0..seq {
            let logits: Vec<f64> = (0..seq)
                .map(|j| if j == 0 { bias } else { 0.0 } + rng.gen_range(-0.1..0.1))
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            attention.extend(logits.iter().map(|l| (l.exp() / z) as f32));
        }
    }

    let survives = target <= cfg.capacity;
    let flip = cfg.label_noise > 0.0 && rng.gen_bool(cfg.label_noise);
    let comp_correct = survives != flip;

    let entity = |j: usize| format!("entity{}x{}", index, j);
    let value = |j: usize| format!("value{}", (index * 31 + j * 7) % 997);
    let context: Vec<String> = (1..=m)
        .map(|j| format!("Fact {j}: {} is linked to {}.", entity(j), value(j)))
        .collect();
    let context = context.join(" ");
    let token_count = context.split_whitespace().count() as u64;
    let perplexity = {
        let u: f64 = Exp1.sample(&mut rng);
        4.0 + 0.25 * m as f64 + 0.5 * u
    };
    let answer = value(target);
    let ref_output = format!("The answer is {answer}.");
    let comp_output = if comp_correct {
        ref_output.clone()
    } else {
        "I cannot tell from the passage.".to_string()
    };

    let record = InstanceRecord {
        id: id.clone(),
        question: format!("What is {} linked to?", entity(target)),
        context,
        answers: vec![answer],
        ref_output: Some(ref_output),
        comp_output: Some(comp_output),
        ref_correct: Some(true),
        comp_correct: Some(comp_correct),
        token_count: Some(token_count),
        perplexity: Some(perplexity),
        rep_paths: reps
            .iter()
            .map(|(k, _)| (k.clone(), format!("reps/{id}_{k}.ovt")))
            .collect(),
        nonx_paths: [RepStage::Mid, RepStage::Last]
            .iter()
            .map(|s| (s.suffix().to_string(), format!("nonx/{id}_{}.ovt", s.suffix())))
            .collect(),
        attn_path: Some(format!("attn/{id}.ovt")),
        xrag_positions: Some(vec![0]),
        query_positions: Some((1..seq).collect()),
        context_positions: None,
    };
    SynthInstance {
        record,
        n_facts: m,
        target,
        reps,
        nonx,
        attention,
    }
}

/// Generates every instance in memory.
pub fn generate_instances(cfg: &SynthConfig) -> Result<Vec<SynthInstance>> {
    cfg.validate()?;
    let world = World::new(cfg);
    Ok((0..cfg.n_instances)
        .into_par_iter()
        .map(|i| generate_instance(cfg, &world, i))
        .collect())
}

/// Writes `manifest.jsonl` plus `reps/`, `nonx/` and `attn/` under `out`.
pub fn generate_overflow_world(cfg: &SynthConfig, out: impl AsRef<Path>) -> Result<Vec<InstanceRecord>> {
    let out = out.as_ref();
    let instances = generate_instances(cfg)?;
    for sub in ["reps", "nonx", "attn"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let dc = cfg.compressed_dim;
    let seq = cfg.query_tokens + 1;
    instances.par_iter().try_for_each(|inst| -> Result<()> {
        let r = &inst.record;
        for (key, v) in &inst.reps {
            write_tensor(&Tensor::from_f32(vec![v.len()], v.clone())?, out.join(&r.rep_paths[key]))?;
        }
        for (stage, rows) in &inst.nonx {
            let t = Tensor::from_f32(vec![cfg.query_tokens, dc], rows.clone())?;
            write_tensor(&t, out.join(&r.nonx_paths[stage]))?;
        }
        let shape = vec![cfg.attention_layers, cfg.attention_heads, seq, seq];
        let attn = r.attn_path.as_ref().expect("generator sets attn_path");
        write_tensor(&Tensor::from_f32(shape, inst.attention.clone())?, out.join(attn))
    })?;
    let records: Vec<InstanceRecord> = instances.into_iter().map(|i| i.record).collect();
    write_manifest(out.join("manifest.jsonl"), &records)?;
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenCorpusConfig {
    pub per_class: usize,
    pub dim: usize,
    /// Fraction of exact zeros in the sparse class.
    pub sparsity: f64,
    pub seed: u64,
}

impl Default for TokenCorpusConfig {
    fn default() -> Self {
        TokenCorpusConfig {
            per_class: 2000,
            dim: 4096,
            sparsity: 0.9,
            seed: 7,
        }
    }
}

/// Rows `0..per_class` are dense Gaussian (label 1, compressed-like); the rest
/// are sparse with Laplace non-zeros (label 0, standard-token-like).
pub fn generate_token_type_corpus(cfg: &TokenCorpusConfig) -> Result<(Array2<f32>, Vec<u8>)> {
    if cfg.per_class == 0 || cfg.dim < 2 {
        return Err(Error::Config("token corpus needs per_class >= 1 and dim >= 2".into()));
    }
    if !(0.0..1.0).contains(&cfg.sparsity) {
        return Err(Error::Config(format!("sparsity must be in [0, 1), got {}", cfg.sparsity)));
    }
    let n = 2 * cfg.per_class;
    let rows: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, INSTANCE_STREAM_BASE + i as u64);
            let dense = i < cfg.per_class;
            let mut row: Vec<f32> = (0..cfg.dim)
                .map(|_| {
                    if dense {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z as f32
                    } else if rng.gen_bool(cfg.sparsity) {
                        0.0
                    } else {
                        let mag: f64 = Exp1.sample(&mut rng);
                        if rng.gen_bool(0.5) { mag as f32 } else { -mag as f32 }
                    }
                })
                .collect();
            // keep every vector non-constant so all statistics are defined
            if row.iter().all(|&v| v == row[0]) {
                row[0] += 1.0;
            }
            row
        })
        .collect();
    let labels = (0..n).map(|i| u8::from(i < cfg.per_class)).collect();
    let flat: Vec<f32> = rows.into_iter().flatten().collect();
    Ok((
        Array2::from_shape_vec((n, cfg.dim), flat).expect("row lengths are fixed"),
        labels,
    ))
}
