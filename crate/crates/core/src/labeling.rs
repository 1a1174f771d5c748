//! Answer judging and overflow labels.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::InstanceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Unicode case folding and whitespace collapsing on both sides.
    #[default]
    Normalized,
    /// Byte-for-byte containment.
    Raw,
}

fn normalize(s: &str) -> String {
    let folded = caseless::default_case_fold_str(s);
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn judge_substring(prediction: &str, answers: &[String]) -> Result<bool> {
    judge_substring_with(prediction, answers, MatchMode::Normalized)
}

pub fn judge_substring_with(prediction: &str, answers: &[String], mode: MatchMode) -> Result<bool> {
    if answers.is_empty() {
        return Err(Error::domain("substring judge needs at least one reference answer"));
    }
    Ok(match mode {
        MatchMode::Raw => answers.iter().any(|a| prediction.contains(a.as_str())),
        MatchMode::Normalized => {
            let p = normalize(prediction);
            answers.iter().any(|a| p.contains(&normalize(a)))
        }
    })
}

/// 1 when the reference run succeeded and the compressed run did not.
pub fn overflow_label(ref_correct: bool, comp_correct: bool) -> u8 {
    u8::from(ref_correct && !comp_correct)
}

/// Thresholded degradation: `t_ref - t_comp >= eps`.
pub fn overflow_label_threshold(t_ref: f64, t_comp: f64, eps: f64) -> u8 {
    u8::from(t_ref - t_comp >= eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    pub timeout: Duration,
    pub attempts: usize,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff: Duration,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            timeout: Duration::from_secs(30),
            attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Serialize)]
struct JudgeRequest<'a> {
    question: &'a str,
    reference_answers: &'a [String],
    prediction: &'a str,
}

#[derive(Debug, Deserialize)]
struct JudgeResponse {
    correct: bool,
}

pub fn judge_external(
    cfg: &EndpointConfig,
    question: &str,
    answers: &[String],
    prediction: &str,
) -> Result<bool> {
    let agent = ureq::AgentBuilder::new().timeout(cfg.timeout).build();
    let body = JudgeRequest {
        question,
        reference_answers: answers,
        prediction,
    };
    let attempts = cfg.attempts.max(1);
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(cfg.backoff * (1u32 << (attempt - 1)));
        }
        match agent.post(&cfg.url).send_json(&body) {
            Ok(resp) => {
                let text = resp
                    .into_string()
                    .map_err(|e| Error::JudgeProtocol(format!("unreadable body: {e}")))?;
                let parsed: JudgeResponse = serde_json::from_str(&text)
                    .map_err(|e| Error::JudgeProtocol(format!("{e}: {text}")))?;
                return Ok(parsed.correct);
            }
            Err(ureq::Error::Status(code, _)) if code < 500 => {
                return Err(Error::JudgeProtocol(format!("HTTP {code}")));
            }
            Err(ureq::Error::Status(code, _)) => last = format!("HTTP {code}"),
            Err(e) => last = e.to_string(),
        }
        log::debug!("judge attempt {} failed: {last}", attempt + 1);
    }
    Err(Error::JudgeUnavailable { attempts, message: last })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Manifest,
    Substring,
    External,
}

/// How missing correctness flags are filled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum JudgeMode {
    Manifest,
    Substring { matching: MatchMode },
    External {
        endpoint: EndpointConfig,
        concurrency: usize,
    },
}

impl JudgeMode {
    fn provenance(&self) -> Provenance {
        match self {
            JudgeMode::Manifest => Provenance::Manifest,
            JudgeMode::Substring { .. } => Provenance::Substring,
            JudgeMode::External { .. } => Provenance::External,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub id: String,
    pub overflow: u8,
    /// Index into [`Dataset::records`].
    pub record: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub total: usize,
    pub kept: usize,
    pub dropped: usize,
    pub judge_skipped: usize,
    pub errors: usize,
    pub positives: usize,
}

impl LabelCounts {
    pub fn positive_rate(&self) -> f64 {
        if self.kept == 0 {
            0.0
        } else {
            self.positives as f64 / self.kept as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Kept records with both correctness flags filled.
    pub records: Vec<InstanceRecord>,
    pub instances: Vec<LabeledInstance>,
    pub counts: LabelCounts,
    /// Per-record failures (`id`, message), in manifest order.
    pub failures: Vec<(String, String)>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<u8> {
        self.instances.iter().map(|i| i.overflow).collect()
    }

    pub fn is_single_class(&self) -> bool {
        self.counts.positives == 0 || self.counts.positives == self.counts.kept
    }
}

enum Outcome {
    Kept(InstanceRecord, Provenance),
    Dropped,
    Skipped(String),
    Failed(String),
}

fn judge_one(mode: &JudgeMode, r: &InstanceRecord, output: Option<&String>, which: &str) -> Result<bool> {
    let prediction = output.ok_or_else(|| Error::MissingFeature {
        id: r.id.clone(),
        field: format!("{which}_correct or {which}_output"),
    })?;
    match mode {
        JudgeMode::Manifest => Err(Error::MissingFeature {
            id: r.id.clone(),
            field: format!("{which}_correct"),
        }),
        JudgeMode::Substring { matching } => judge_substring_with(prediction, &r.answers, *matching),
        JudgeMode::External { endpoint, .. } => {
            judge_external(endpoint, &r.question, &r.answers, prediction)
        }
    }
}

fn label_record(mode: &JudgeMode, r: &InstanceRecord) -> Outcome {
    let mut rec = r.clone();
    let mut judged = false;
    let mut run = |flag: Option<bool>, out: Option<&String>, which: &str| -> std::result::Result<bool, Outcome> {
        match flag {
            Some(v) => Ok(v),
            None => {
                judged = true;
                judge_one(mode, r, out, which).map_err(|e| match e {
                    Error::JudgeUnavailable { .. } => Outcome::Skipped(e.to_string()),
                    other => Outcome::Failed(other.to_string()),
                })
            }
        }
    };
    let ref_ok = match run(r.ref_correct, r.ref_output.as_ref(), "ref") {
        Ok(v) => v,
        Err(o) => return o,
    };
    if !ref_ok {
        return Outcome::Dropped;
    }
    let comp_ok = match run(r.comp_correct, r.comp_output.as_ref(), "comp") {
        Ok(v) => v,
        Err(o) => return o,
    };
    rec.ref_correct = Some(ref_ok);
    rec.comp_correct = Some(comp_ok);
    let provenance = if judged { mode.provenance() } else { Provenance::Manifest };
    Outcome::Kept(rec, provenance)
}

/// Applies the judge, drops instances the reference run got wrong, and labels the rest.
pub fn build_dataset(records: &[InstanceRecord], mode: &JudgeMode) -> Result<Dataset> {
    let outcomes: Vec<Outcome> = match mode {
        JudgeMode::External { concurrency, .. } => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads((*concurrency).max(1))
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| records.par_iter().map(|r| label_record(mode, r)).collect())
        }
        _ => records.iter().map(|r| label_record(mode, r)).collect(),
    };

    let mut ds = Dataset {
        records: Vec::new(),
        instances: Vec::new(),
        counts: LabelCounts {
            total: records.len(),
            ..Default::default()
        },
        failures: Vec::new(),
    };
    for (r, outcome) in records.iter().zip(outcomes) {
        match outcome {
            Outcome::Kept(rec, provenance) => {
                let overflow = overflow_label(true, rec.comp_correct == Some(true));
                ds.counts.kept += 1;
                ds.counts.positives += overflow as usize;
                ds.instances.push(LabeledInstance {
                    id: rec.id.clone(),
                    overflow,
                    record: ds.records.len(),
                    provenance,
                });
                ds.records.push(rec);
            }
            Outcome::Dropped => ds.counts.dropped += 1,
            Outcome::Skipped(msg) => {
                ds.counts.judge_skipped += 1;
                ds.failures.push((r.id.clone(), msg));
            }
            Outcome::Failed(msg) => {
                ds.counts.errors += 1;
                ds.failures.push((r.id.clone(), msg));
            }
        }
    }
    if ds.is_single_class() {
        log::warn!(
            "labeled dataset has a single class ({} positives of {} kept)",
            ds.counts.positives,
            ds.counts.kept
        );
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn answers(a: &[&str]) -> Vec<String> {
        a.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn substring_examples() {
        assert!(judge_substring("The answer is Paris.", &answers(&["paris"])).unwrap());
        assert!(!judge_substring("unknown", &answers(&["Paris"])).unwrap());
        assert!(judge_substring("nineteen  forty–five", &answers(&["nineteen forty–five"])).unwrap());
        assert!(judge_substring("STRASSE", &answers(&["straße"])).unwrap());
        assert!(judge_substring("x", &[]).is_err());
        assert!(!judge_substring_with("The answer is Paris.", &answers(&["paris"]), MatchMode::Raw).unwrap());
    }

    #[test]
    fn label_examples() {
        assert_eq!(overflow_label(true, false), 1);
        assert_eq!(overflow_label(true, true), 0);
        assert_eq!(overflow_label(false, false), 0);
        assert_eq!(overflow_label_threshold(1.0, 0.0, 0.5), 1);
        assert_eq!(overflow_label_threshold(0.8, 0.8, 0.1), 0);
        assert_eq!(overflow_label_threshold(0.7, 0.7, 0.0), 1);
    }

    fn rec(id: &str, r: Option<bool>, c: Option<bool>) -> InstanceRecord {
        InstanceRecord {
            id: id.into(),
            answers: answers(&["paris"]),
            ref_correct: r,
            comp_correct: c,
            ..Default::default()
        }
    }

    #[test]
    fn build_from_flags() {
        let mut records = Vec::new();
        for i in 0..10 {
            let ref_ok = i < 7;
            let comp_ok = !(i < 3);
            records.push(rec(&format!("r{i}"), Some(ref_ok), Some(comp_ok)));
        }
        // an external judge pointed at nothing: must never be called
        let mode = JudgeMode::External {
            endpoint: EndpointConfig::new("http://127.0.0.1:9"),
            concurrency: 2,
        };
        let ds = build_dataset(&records, &mode).unwrap();
        assert_eq!(ds.counts.kept, 7);
        assert_eq!(ds.counts.positives, 3);
        assert_eq!(ds.counts.dropped, 3);
        assert!(ds.instances.iter().all(|i| i.provenance == Provenance::Manifest));
    }

    #[test]
    fn substring_fills_missing_flags_and_errors_are_counted() {
        let mut a = rec("a", None, None);
        a.ref_output = Some("It is Paris".into());
        a.comp_output = Some("London".into());
        let b = rec("b", None, None);
        let mut c = rec("c", None, None);
        c.ref_output = Some("no idea".into());
        let mode = JudgeMode::Substring {
            matching: MatchMode::Normalized,
        };
        let ds = build_dataset(&[a, b, c], &mode).unwrap();
        assert_eq!(ds.counts.total, 3);
        assert_eq!(ds.counts.kept, 1);
        assert_eq!(ds.counts.errors, 1);
        assert_eq!(ds.counts.dropped, 1);
        assert_eq!(ds.instances[0].overflow, 1);
        assert_eq!(ds.instances[0].provenance, Provenance::Substring);
        assert_eq!(ds.records[0].comp_correct, Some(false));
        assert!(ds.is_single_class());

        let ds = build_dataset(&[rec("m", Some(true), None)], &JudgeMode::Manifest).unwrap();
        assert_eq!(ds.counts.errors, 1);
    }

    #[test]
    fn eq1_is_thresholded_eq2_exhaustively() {
        let indicator = |b: bool| if b { 1.0 } else { 0.0 };
        for r in [false, true] {
            for c in [false, true] {
                for eps in [1e-9, 0.25, 0.5, 0.999, 1.0] {
                    assert_eq!(
                        overflow_label(r, c),
                        overflow_label_threshold(indicator(r), indicator(c), eps),
                        "r={r} c={c} eps={eps}"
                    );
                }
            }
        }
    }
}
