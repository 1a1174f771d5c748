//! Command-line front end. `run` parses arguments, merges the optional JSON
//! config file under the flags, executes one command and returns the process
//! exit code.

pub mod args;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::complexity::ComplexityOptions;
use crate::digest::config_digest;
use crate::error::Error;
use crate::evaluation::features::CacheSidecar;
use crate::evaluation::report::{build_grid, folds_csv, render_grid, render_text};
use crate::evaluation::{
    build_feature_matrix, run_experiment, EvalReport, ExperimentConfig, FeatureMatrix, FeatureOptions, FeatureSet,
    Stage,
};
use crate::labeling::{build_dataset, Dataset, EndpointConfig, JudgeMode, MatchMode, Provenance};
use crate::probes::artifact::save_model;
use crate::probes::{train_probe, Architecture, ProbeConfig};
use crate::synthetic::{analytic_overflow_rate, generate_overflow_world, generate_token_type_corpus, SynthConfig, TokenCorpusConfig};
use crate::tensor_io::{read_manifest, write_atomic, write_manifest, write_tensor, InstanceRecord, Manifest, Tensor};
pub use args::Cli;
use args::{Command, EvalArgs, FeaturesArgs, JudgeArgs, JudgeKind, LabelArgs, MatchKind, ReportArgs, SynthArgs, TrainArgs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_JUDGE: i32 = 3;

pub const SEED_ENV: &str = "OVERFLOW_PROBE_SEED";
const DEFAULT_SEED: u64 = 7;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] Error),
    #[error("{0}")]
    JudgeUnavailable(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Data(Error::Config(_)) => EXIT_USAGE,
            CliError::JudgeUnavailable(_) | CliError::Data(Error::JudgeUnavailable { .. }) => EXIT_JUDGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&matches) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(matches: &ArgMatches) -> CliResult<()> {
    let cli = Cli::from_arg_matches(matches).map_err(|e| CliError::Usage(e.to_string()))?;
    let file_config = match &cli.config {
        Some(p) => load_config(p)?,
        None => Map::new(),
    };
    let jobs = cli.jobs.or(file_config.get("jobs").and_then(Value::as_u64).map(|v| v as usize));
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("global thread pool already initialized");
        }
    }
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let ctx = Context {
        file: file_config,
        sub,
        command: name.to_string(),
    };
    match cli.command {
        Command::Synth(a) => cmd_synth(&ctx, ctx.merge(a)?),
        Command::Label(a) => cmd_label(&ctx, ctx.merge(a)?),
        Command::Features(a) => cmd_features(&ctx, ctx.merge(a)?),
        Command::Train(a) => cmd_train(&ctx, ctx.merge(a)?),
        Command::Eval(a) => cmd_eval(&ctx, ctx.merge(a)?),
        Command::Report(a) => cmd_report(ctx.merge(a)?),
    }
}

fn load_config(path: &Path) -> CliResult<Map<String, Value>> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    match serde_json::from_slice::<Value>(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Usage(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("{}: {e}", path.display()))),
    }
}

struct Context<'a> {
    file: Map<String, Value>,
    sub: &'a ArgMatches,
    command: String,
}

impl Context<'_> {
    /// Fills every flag not given on the command line from the config file:
    /// first the `<command>` section, then top-level keys.
    fn merge<T: Serialize + DeserializeOwned>(&self, parsed: T) -> CliResult<T> {
        let Value::Object(mut fields) = serde_json::to_value(&parsed).expect("argument structs serialize") else {
            unreachable!("argument structs are objects")
        };
        let section = match self.file.get(&self.command) {
            Some(Value::Object(m)) => Some(m),
            Some(_) => return Err(CliError::Usage(format!("config section {:?} must be an object", self.command))),
            None => None,
        };
        if let Some(s) = section {
            if let Some(k) = s.keys().find(|k| !fields.contains_key(*k)) {
                return Err(CliError::Usage(format!("config key {}.{k} is not a flag of this command", self.command)));
            }
        }
        for (key, slot) in fields.iter_mut() {
            if self.sub.value_source(key) == Some(ValueSource::CommandLine) {
                continue;
            }
            if let Some(v) = section.and_then(|s| s.get(key)).or_else(|| self.file.get(key)) {
                *slot = v.clone();
            }
        }
        serde_json::from_value(Value::Object(fields)).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// Partial JSON object merged into a typed default.
    fn overrides<T: Serialize + DeserializeOwned>(&self, key: &str, base: T) -> CliResult<T> {
        let Some(patch) = self.file.get(key) else {
            return Ok(base);
        };
        let Value::Object(patch) = patch else {
            return Err(CliError::Usage(format!("config key {key:?} must be an object")));
        };
        let Value::Object(mut fields) = serde_json::to_value(&base).expect("configs serialize") else {
            unreachable!("configs are objects")
        };
        for (k, v) in patch {
            if !fields.contains_key(k) {
                return Err(CliError::Usage(format!("config key {key}.{k} is not recognized")));
            }
            fields.insert(k.clone(), v.clone());
        }
        serde_json::from_value(Value::Object(fields)).map_err(|e| CliError::Usage(format!("config {key}: {e}")))
    }
}

fn resolve_seed(seed: Option<u64>) -> CliResult<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> CliResult<T> {
    s.parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

fn judge_mode(a: &JudgeArgs) -> CliResult<JudgeMode> {
    Ok(match a.judge {
        JudgeKind::Manifest => JudgeMode::Manifest,
        JudgeKind::Substring => JudgeMode::Substring {
            matching: match a.matching {
                MatchKind::Normalized => MatchMode::Normalized,
                MatchKind::Raw => MatchMode::Raw,
            },
        },
        JudgeKind::External => {
            let url = a
                .judge_url
                .clone()
                .ok_or_else(|| CliError::Usage("--judge external requires --judge-url".into()))?;
            if !(a.timeout_s > 0.0 && a.timeout_s.is_finite()) {
                return Err(CliError::Usage("--timeout-s must be positive".into()));
            }
            let mut endpoint = EndpointConfig::new(url);
            endpoint.timeout = Duration::from_secs_f64(a.timeout_s);
            JudgeMode::External {
                endpoint,
                concurrency: a.judge_concurrency.max(1),
            }
        }
    })
}

/// Labels a manifest; a judge that never answered is a fatal condition.
fn label(manifest: &Manifest, mode: &JudgeMode) -> CliResult<Dataset> {
    let ds = build_dataset(&manifest.records, mode)?;
    for (id, msg) in &ds.failures {
        log::warn!("instance {id:?}: {msg}");
    }
    let c = &ds.counts;
    log::info!(
        "labels: total {} kept {} dropped {} judge-skipped {} errors {} positives {}",
        c.total,
        c.kept,
        c.dropped,
        c.judge_skipped,
        c.errors,
        c.positives
    );
    let judged = ds.instances.iter().any(|i| i.provenance == Provenance::External);
    if c.judge_skipped > 0 && !judged {
        return Err(CliError::JudgeUnavailable(format!(
            "external judge unavailable: {} instances skipped, none judged",
            c.judge_skipped
        )));
    }
    Ok(ds)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn default_probe(set: FeatureSet) -> Architecture {
    if set.is_engineered() {
        Architecture::Logistic
    } else {
        Architecture::Linear
    }
}

/// The echo written into every artifact, and its digest.
fn echo<A: Serialize>(ctx: &Context, args: &A, extra: Value) -> (Value, String) {
    let mut v = json!({
        "command": ctx.command,
        "args": args,
        "version": env!("CARGO_PKG_VERSION"),
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    let digest = config_digest(&v);
    (v, digest)
}

fn cmd_synth(ctx: &Context, a: SynthArgs) -> CliResult<()> {
    let seed = resolve_seed(a.seed)?;
    ensure_dir(&a.out)?;
    if a.preset == "token-types" {
        let mut cfg = ctx.overrides("token_corpus", TokenCorpusConfig::default())?;
        cfg.seed = seed;
        if let Some(n) = a.n_instances {
            cfg.per_class = n;
        }
        let (x, y) = generate_token_type_corpus(&cfg)?;
        let (run, digest) = echo(ctx, &a, json!({ "token_corpus": cfg }));
        let t = Tensor::from_f32(vec![x.nrows(), x.ncols()], x.iter().copied().collect())?;
        write_tensor(&t, a.out.join("tokens.ovt"))?;
        write_json(
            &a.out.join("tokens.json"),
            &json!({ "labels": y, "config_digest": digest, "config": run }),
        )?;
        println!("wrote {} vectors of dimension {} to {}", x.nrows(), x.ncols(), a.out.display());
        return Ok(());
    }
    let mut cfg = ctx.overrides("synth_overrides", SynthConfig::preset(&a.preset).map_err(|e| CliError::Usage(e.to_string()))?)?;
    cfg.seed = seed;
    if let Some(n) = a.n_instances {
        cfg.n_instances = n;
    }
    let records = generate_overflow_world(&cfg, &a.out)?;
    let positives = records.iter().filter(|r| r.comp_correct == Some(false)).count();
    let (run, digest) = echo(ctx, &a, json!({ "synth": cfg }));
    write_json(
        &a.out.join("synth.json"),
        &json!({
            "config_digest": digest,
            "config": run,
            "n_instances": records.len(),
            "positives": positives,
            "analytic_overflow_rate": analytic_overflow_rate(&cfg),
        }),
    )?;
    println!(
        "wrote {} instances ({} overflow) to {}",
        records.len(),
        positives,
        a.out.join("manifest.jsonl").display()
    );
    Ok(())
}

/// Makes relative file references valid from `to_dir`.
fn rebase(records: &mut [InstanceRecord], manifest: &Manifest, to_dir: &Path) {
    let same = fs::canonicalize(&manifest.base_dir).ok() == fs::canonicalize(to_dir).ok();
    if same {
        return;
    }
    let fix = |p: &mut String| {
        if Path::new(p.as_str()).is_relative() {
            let abs = manifest.resolve(p);
            let abs = fs::canonicalize(&abs).unwrap_or(abs);
            *p = abs.to_string_lossy().into_owned();
        }
    };
    for r in records {
        r.rep_paths.values_mut().for_each(fix);
        r.nonx_paths.values_mut().for_each(fix);
        if let Some(p) = r.attn_path.as_mut() {
            fix(p);
        }
    }
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn cmd_label(ctx: &Context, a: LabelArgs) -> CliResult<()> {
    let mode = judge_mode(&a.judge)?;
    let manifest = read_manifest(&a.manifest)?;
    let ds = label(&manifest, &mode)?;
    let out_dir = parent_dir(&a.out);
    ensure_dir(&out_dir)?;
    let mut records = ds.records.clone();
    rebase(&mut records, &manifest, &out_dir);
    write_manifest(&a.out, &records)?;
    let (run, digest) = echo(ctx, &a, json!({ "judge_mode": mode }));
    let summary = a.out.with_extension("summary.json");
    write_json(
        &summary,
        &json!({
            "config_digest": digest,
            "config": run,
            "counts": ds.counts,
            "positive_rate": ds.counts.positive_rate(),
            "failures": ds.failures,
        }),
    )?;
    println!(
        "kept {} of {} instances, {} overflow (rate {:.4})",
        ds.counts.kept,
        ds.counts.total,
        ds.counts.positives,
        ds.counts.positive_rate()
    );
    Ok(())
}

fn feature_options(fallback: bool) -> FeatureOptions {
    FeatureOptions {
        complexity: ComplexityOptions {
            whitespace_token_fallback: fallback,
            ..Default::default()
        },
    }
}

fn featurize(
    manifest: &Manifest,
    ds: &Dataset,
    stage: Stage,
    set: FeatureSet,
    opts: &FeatureOptions,
) -> CliResult<FeatureMatrix> {
    let refs: Vec<&InstanceRecord> = ds.records.iter().collect();
    let mut m = build_feature_matrix(manifest, &refs, stage, set, opts)?;
    m.labels = Some(ds.labels());
    Ok(m)
}

fn cmd_features(ctx: &Context, a: FeaturesArgs) -> CliResult<()> {
    let stage: Stage = parse(&a.stage)?;
    let set: FeatureSet = parse(&a.features)?;
    if !crate::evaluation::is_valid_combination(stage, set) {
        return Err(CliError::Usage(format!("feature set {set} is not defined at stage {stage}")));
    }
    let mode = judge_mode(&a.judge)?;
    let manifest = read_manifest(&a.manifest)?;
    let ds = label(&manifest, &mode)?;
    let opts = feature_options(a.whitespace_token_fallback);
    let m = featurize(&manifest, &ds, stage, set, &opts)?;
    let (run, digest) = echo(ctx, &a, json!({ "judge_mode": mode, "feature_options": opts }));
    m.save(&a.out, run, &digest)?;
    println!("wrote {} x {} feature matrix to {}", m.n_rows(), m.data.ncols(), a.out.with_extension("ovt").display());
    Ok(())
}

fn load_cache(stem: &Path) -> CliResult<(FeatureMatrix, CacheSidecar, Vec<u8>)> {
    let (m, side) = FeatureMatrix::load(stem)?;
    let labels = m
        .labels
        .clone()
        .ok_or_else(|| Error::domain(format!("{}: feature cache has no labels", stem.display())))?;
    Ok((m, side, labels))
}

fn cmd_train(ctx: &Context, a: TrainArgs) -> CliResult<()> {
    let (m, side, y) = load_cache(&a.cache)?;
    let arch = match &a.probe {
        Some(p) => parse(p)?,
        None => default_probe(m.feature_set),
    };
    let seed = resolve_seed(a.seed)?;
    let probe = ctx.overrides("probe_overrides", ProbeConfig::for_architecture(arch))?.with_seed(seed);
    probe.validate()?;
    let model = train_probe(m.data.view(), &y, &probe)?;
    save_model(&model, &a.out)?;
    let (run, digest) = echo(ctx, &a, json!({ "probe": probe, "cache_digest": side.config_digest }));
    write_json(&a.out.join("run.json"), &json!({ "config_digest": digest, "config": run }))?;
    println!(
        "trained {} probe on {} instances ({} features); best epoch {}",
        arch,
        m.n_rows(),
        m.data.ncols(),
        model.summary.best_epoch
    );
    Ok(())
}

fn cmd_eval(ctx: &Context, a: EvalArgs) -> CliResult<()> {
    let seed = resolve_seed(a.seed)?;
    let (matrix, y, source) = match (&a.manifest, &a.cache) {
        (Some(path), None) => {
            let stage: Stage = parse(a.stage.as_deref().ok_or_else(|| CliError::Usage("--stage is required with --manifest".into()))?)?;
            let set: FeatureSet =
                parse(a.features.as_deref().ok_or_else(|| CliError::Usage("--features is required with --manifest".into()))?)?;
            if !crate::evaluation::is_valid_combination(stage, set) {
                return Err(CliError::Usage(format!("feature set {set} is not defined at stage {stage}")));
            }
            let mode = judge_mode(&a.judge)?;
            let manifest = read_manifest(path)?;
            let ds = label(&manifest, &mode)?;
            let opts = feature_options(a.whitespace_token_fallback);
            let m = featurize(&manifest, &ds, stage, set, &opts)?;
            let y = ds.labels();
            (m, y, json!({ "judge_mode": mode, "feature_options": opts, "label_counts": ds.counts }))
        }
        (None, Some(stem)) => {
            let (m, side, y) = load_cache(stem)?;
            for (flag, given, actual) in [
                ("--stage", &a.stage, m.stage.name()),
                ("--features", &a.features, m.feature_set.name()),
            ] {
                if let Some(g) = given {
                    if g != actual {
                        return Err(CliError::Usage(format!("{flag} {g} does not match the cache ({actual})")));
                    }
                }
            }
            (m, y, json!({ "cache_digest": side.config_digest, "cache_config": side.config }))
        }
        _ => return Err(CliError::Usage("exactly one of --manifest or --cache is required".into())),
    };
    let arch = match &a.probe {
        Some(p) => parse(p)?,
        None => default_probe(matrix.feature_set),
    };
    let mut cfg = ExperimentConfig::new(matrix.stage, matrix.feature_set, arch, seed);
    cfg.folds = a.folds;
    cfg.probe = ctx.overrides("probe_overrides", cfg.probe)?;
    cfg.validate()?;
    let (run, _) = echo(ctx, &a, json!({ "source": source }));
    let report = run_experiment(matrix.data.view(), &y, &cfg, run)?;
    ensure_dir(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    write_atomic(&a.out.join("report.txt"), render_text(&report).as_bytes())?;
    write_atomic(&a.out.join("folds.csv"), folds_csv(&report).as_bytes())?;
    print!("{}", render_text(&report));
    Ok(())
}

fn cmd_report(a: ReportArgs) -> CliResult<()> {
    let mut reports = Vec::new();
    for input in &a.inputs {
        let path = if input.is_dir() { input.join("report.json") } else { input.clone() };
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let r: EvalReport = serde_json::from_slice(&text).map_err(|e| Error::json(&path, e))?;
        reports.push(r);
    }
    let grid = build_grid(&reports)?;
    ensure_dir(&a.out)?;
    write_json(&a.out.join("grid.json"), &grid)?;
    let text = render_grid(&grid);
    write_atomic(&a.out.join("grid.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_flag_is_documented() {
        let mut root = Cli::command();
        root.build();
        let check = |cmd: &clap::Command, help: &str| {
            for arg in cmd.get_arguments() {
                let id = arg.get_id().as_str();
                if id == "help" || id == "version" {
                    continue;
                }
                assert!(arg.get_help().is_some(), "{} --{id} has no help text", cmd.get_name());
                let shown = match arg.get_long() {
                    Some(l) => format!("--{l}"),
                    None => arg.get_value_names().map(|v| v[0].to_string()).unwrap_or_else(|| id.to_uppercase()),
                };
                assert!(help.contains(&shown), "{} help omits {shown}", cmd.get_name());
            }
        };
        let root_help = root.render_long_help().to_string();
        check(&root, &root_help);
        for sub in root.get_subcommands_mut() {
            let help = sub.render_long_help().to_string();
            let sub = sub.clone();
            check(&sub, &help);
        }
    }

    #[test]
    fn exit_codes_for_usage() {
        assert_eq!(run(["overflow-probe", "--help"]), EXIT_OK);
        assert_eq!(run(["overflow-probe", "--version"]), EXIT_OK);
        assert_eq!(run(["overflow-probe", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["overflow-probe", "eval", "--out", "x", "--manifest", "a", "--cache", "b"]), EXIT_USAGE);
    }

    #[test]
    fn error_mapping() {
        assert_eq!(CliError::Data(Error::Config("x".into())).exit_code(), EXIT_USAGE);
        assert_eq!(CliError::Data(Error::SingleClass("x".into())).exit_code(), EXIT_DATA);
        assert_eq!(
            CliError::Data(Error::JudgeUnavailable {
                attempts: 3,
                message: "x".into()
            })
            .exit_code(),
            EXIT_JUDGE
        );
    }
}
