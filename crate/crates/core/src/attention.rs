//! Query-conditioned attention features over an exported `[L, H, T, T]` map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::Summary;
use crate::tensor_io::Tensor;

pub const RATIO_FLOOR: f64 = 1e-12;
pub const RATIO_CAP: f64 = 1e6;
const ROW_SUM_TOL: f64 = 1e-3;

/// Attention weights `A[layer, head, query, key]`, widened to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    layers: usize,
    heads: usize,
    seq: usize,
    data: Vec<f64>,
}

impl AttentionMap {
    pub fn new(layers: usize, heads: usize, seq: usize, data: Vec<f64>) -> Result<Self> {
        if layers == 0 || heads == 0 || seq == 0 {
            return Err(Error::domain("attention map has an empty axis"));
        }
        if data.len() != layers * heads * seq * seq {
            return Err(Error::domain(format!(
                "attention buffer of {} elements does not match [{layers}, {heads}, {seq}, {seq}]",
                data.len()
            )));
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::domain(format!("attention weight {x} is not a probability")));
        }
        Ok(AttentionMap {
            layers,
            heads,
            seq,
            data,
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [l, h, q, k] if q == k => Self::new(l, h, q, t.to_f64_vec()),
            ref s => Err(Error::domain(format!(
                "attention tensor must have shape [L, H, T, T], got {s:?}"
            ))),
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq
    }

    pub fn row(&self, layer: usize, head: usize, i: usize) -> &[f64] {
        let start = ((layer * self.heads + head) * self.seq + i) * self.seq;
        &self.data[start..start + self.seq]
    }

    /// Keeps only the listed layers, in the given order.
    pub fn select_layers(&self, layers: &[usize]) -> Result<Self> {
        let block = self.heads * self.seq * self.seq;
        let mut data = Vec::with_capacity(layers.len() * block);
        for &l in layers {
            if l >= self.layers {
                return Err(Error::domain(format!(
                    "layer {l} out of range for {} layers",
                    self.layers
                )));
            }
            data.extend_from_slice(&self.data[l * block..(l + 1) * block]);
        }
        Self::new(layers.len(), self.heads, self.seq, data)
    }

    /// Number of rows in `positions` whose mass is not within 1e-3 of 1.
    pub fn off_simplex_rows(&self, positions: &[usize]) -> usize {
        let mut count = 0;
        for l in 0..self.layers {
            for h in 0..self.heads {
                for &i in positions {
                    let s: f64 = self.row(l, h, i).iter().sum();
                    if (s - 1.0).abs() > ROW_SUM_TOL {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    fn check_positions(&self, name: &str, set: &[usize]) -> Result<()> {
        if set.is_empty() {
            return Err(Error::domain(format!("{name} index set is empty")));
        }
        if let Some(&p) = set.iter().find(|&&p| p >= self.seq) {
            return Err(Error::domain(format!(
                "{name} position {p} outside [0, {})",
                self.seq
            )));
        }
        Ok(())
    }
}

/// Values indexed by `(layer, head)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMatrix {
    pub layers: usize,
    pub heads: usize,
    pub values: Vec<f64>,
}

impl HeadMatrix {
    pub fn get(&self, layer: usize, head: usize) -> f64 {
        self.values[layer * self.heads + head]
    }
}

/// Average over `queries` of the attention mass each query row puts on `targets`.
pub fn mean_attention_to(a: &AttentionMap, queries: &[usize], targets: &[usize]) -> Result<HeadMatrix> {
    a.check_positions("query", queries)?;
    a.check_positions("target", targets)?;
    let off = a.off_simplex_rows(queries);
    if off > 0 {
        log::warn!("{off} attention rows do not sum to 1 (masked or truncated export)");
    }
    let mut values = Vec::with_capacity(a.layers * a.heads);
    for l in 0..a.layers {
        for h in 0..a.heads {
            let total: f64 = queries
                .iter()
                .map(|&i| {
                    let row = a.row(l, h, i);
                    targets.iter().map(|&j| row[j]).sum::<f64>()
                })
                .sum();
            values.push(total / queries.len() as f64);
        }
    }
    Ok(HeadMatrix {
        layers: a.layers,
        heads: a.heads,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioMatrix {
    pub ratios: HeadMatrix,
    /// Heads whose ratio hit the cap because the denominator was (near) zero.
    pub capped: usize,
}

/// Per-token attention on `compressed` divided by per-token attention on `others`.
pub fn attention_ratio(
    a: &AttentionMap,
    queries: &[usize],
    compressed: &[usize],
    others: &[usize],
) -> Result<RatioMatrix> {
    a.check_positions("compressed", compressed)?;
    a.check_positions("non-compressed", others)?;
    if compressed.iter().any(|p| others.contains(p)) {
        return Err(Error::domain("compressed and non-compressed sets overlap"));
    }
    let num = mean_attention_to(a, queries, compressed)?;
    let den = mean_attention_to(a, queries, others)?;
    let mut capped = 0;
    let values = num
        .values
        .iter()
        .zip(&den.values)
        .map(|(&n, &d)| {
            let n = n / compressed.len() as f64;
            let d = d / others.len() as f64;
            let r = n / d.max(RATIO_FLOOR);
            if d < RATIO_FLOOR || r > RATIO_CAP {
                capped += 1;
                RATIO_CAP
            } else {
                r
            }
        })
        .collect();
    Ok(RatioMatrix {
        ratios: HeadMatrix {
            layers: a.layers,
            heads: a.heads,
            values,
        },
        capped,
    })
}

fn row_entropy(row: &[f64]) -> Result<f64> {
    let total: f64 = row.iter().sum();
    if total <= 0.0 {
        return Err(Error::domain("attention row has zero mass"));
    }
    Ok(row
        .iter()
        .map(|&x| x / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum())
}

/// Row entropy for every `(layer, head, position)`, position-fastest.
pub fn attention_entropy_rows(a: &AttentionMap, positions: &[usize]) -> Result<Vec<f64>> {
    a.check_positions("entropy", positions)?;
    let mut out = Vec::with_capacity(a.layers * a.heads * positions.len());
    for l in 0..a.layers {
        for h in 0..a.heads {
            for &i in positions {
                out.push(row_entropy(a.row(l, h, i))?);
            }
        }
    }
    Ok(out)
}

/// Entropy of each position's (renormalized) attention row, averaged over layers and heads.
pub fn attention_entropy(a: &AttentionMap, positions: &[usize]) -> Result<Vec<f64>> {
    let rows = attention_entropy_rows(a, positions)?;
    let n = positions.len();
    let heads = (a.layers * a.heads) as f64;
    Ok((0..n)
        .map(|i| rows.iter().skip(i).step_by(n).sum::<f64>() / heads)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionFeatures {
    pub mass: Summary,
    pub ratio: Summary,
    pub entropy: Summary,
    pub capped_ratios: usize,
    pub off_simplex_rows: usize,
}

impl AttentionFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        [self.mass, self.ratio, self.entropy]
            .iter()
            .flat_map(|s| s.to_array())
            .collect()
    }

    pub fn names() -> Vec<String> {
        ["attn_mass", "attn_ratio", "attn_entropy"]
            .iter()
            .flat_map(|g| Summary::SUFFIXES.iter().map(move |s| format!("{g}_{s}")))
            .collect()
    }
}

/// All positions not in `set`.
pub fn complement(seq: usize, set: &[usize]) -> Vec<usize> {
    (0..seq).filter(|p| !set.contains(p)).collect()
}

pub fn attention_feature_vector(
    a: &AttentionMap,
    queries: &[usize],
    compressed: &[usize],
    others: &[usize],
) -> Result<AttentionFeatures> {
    let mass = mean_attention_to(a, queries, compressed)?;
    let ratio = attention_ratio(a, queries, compressed, others)?;
    let entropy = attention_entropy(a, queries)?;
    Ok(AttentionFeatures {
        mass: Summary::of(&mass.values)?,
        ratio: Summary::of(&ratio.ratios.values)?,
        entropy: Summary::of(&entropy)?,
        capped_ratios: ratio.capped,
        off_simplex_rows: a.off_simplex_rows(queries),
    })
}
