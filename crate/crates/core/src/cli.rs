//! The `ems` command-line tool.
//!
//! Every subcommand reads an optional TOML config (unknown keys are
//! rejected), writes `config.toml` (the resolved config) into its output
//! directory before doing any work and `run.json` after succeeding. Exit
//! codes: 0 success, 1 usage or config error, 2 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use plotters::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::corpus::{
    generate_corpus, read_corpus, split_corpus, write_corpus, CorpusConfig, FeatureSequence, SplitCorpus,
};
use crate::intensity::{
    heuristic_intensity, predict_intensity, train_intensity, ExtractorConfig, IntensityExtractor, IntensityTrack,
    IntensityTrainConfig,
};
use crate::models::{ModelConfig, SslModel};
use crate::probes::{
    compare_strategies, extract_representations, probe_all, CompareConfig, ExperimentData, ProbeConfig,
};
use crate::stats::{mean, FeatureNormalizer};
use crate::training::{
    final_checkpoint_path, pretrain, smoothed_loss_ratio, MaskStrategy, MetricsRecord, PretrainData, PretrainOptions,
    StartFrom, TrainConfig,
};
use crate::{EmsError, Result};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "EMS_OUT_ROOT";
pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const RUN_SUMMARY: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Parser)]
#[command(name = "ems", version, about = "Emotion-intensity-guided masking for speech pre-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic emotional corpus.
    Corpus(RunArgs),
    /// Train the frame-level intensity extractor.
    Intensity(RunArgs),
    /// Pre-train an encoder.
    Pretrain(RunArgs),
    /// Probe frozen representations of a checkpoint.
    Probe(RunArgs),
    /// Train and probe an experiment matrix of masking strategies.
    Compare(RunArgs),
    /// Render loss curves and accuracy-vs-k curves.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: $EMS_OUT_ROOT/<subcommand> or runs/<subcommand>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seeds of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Progress on standard error; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Metrics JSON-lines file from `pretrain` or `intensity` (repeatable).
    #[arg(long)]
    metrics: Vec<PathBuf>,
    /// Comparison report CSV from `compare` (repeatable).
    #[arg(long)]
    report: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

/// Where pre-training and probing read utterances and intensity scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Corpus directory written by `ems corpus`.
    pub corpus: PathBuf,
    /// Train/dev/test fractions.
    pub split: [f64; 3],
    pub split_seed: u64,
    pub scores: ScoreSource,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { corpus: PathBuf::from("corpus"), split: [0.8, 0.1, 0.1], split_seed: 0, scores: ScoreSource::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreSource {
    /// Normalized frame energy.
    #[default]
    Heuristic,
    /// The generator's burst envelope.
    GroundTruth,
    /// A trained extractor checkpoint.
    Extractor { checkpoint: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntensityRunConfig {
    pub data: DataConfig,
    pub extractor: ExtractorConfig,
    pub train: IntensityTrainConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainRunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    /// Continue an interrupted run from this checkpoint.
    pub resume: Option<PathBuf>,
    /// Initialize parameters from this checkpoint and train on.
    pub warm_start: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeRunConfig {
    pub data: DataConfig,
    /// Encoder to probe; a freshly initialized `model` when absent.
    pub checkpoint: Option<PathBuf>,
    pub model: ModelConfig,
    /// Masking strategy for representation extraction; taken from the
    /// checkpoint when absent.
    pub strategy: Option<MaskStrategy>,
    pub probe: ProbeConfig,
    pub frame_probe: bool,
}

impl Default for ProbeRunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            checkpoint: None,
            model: ModelConfig::default(),
            strategy: None,
            probe: ProbeConfig::default(),
            frame_probe: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareRunConfig {
    pub data: DataConfig,
    pub compare: CompareConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PlotInputs {
    metrics: Vec<PathBuf>,
    reports: Vec<PathBuf>,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let started = Instant::now();
    let result = match cli.command {
        Command::Corpus(a) => run_corpus(&a, started),
        Command::Intensity(a) => run_intensity(&a, started),
        Command::Pretrain(a) => run_pretrain(&a, started),
        Command::Probe(a) => run_probe(&a, started),
        Command::Compare(a) => run_compare(&a, started),
        Command::Plot(a) => run_plot(&a, started),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// 1 for problems with what the user asked for, 2 for failures while doing it.
pub fn exit_code(e: &EmsError) -> i32 {
    match e {
        EmsError::Config(_) | EmsError::InvalidArgument(_) => 1,
        _ => 2,
    }
}

fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    let Some(path) = path else { return Ok(C::default()) };
    let text =
        fs::read_to_string(path).map_err(|e| EmsError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| EmsError::Config(format!("{}: {e}", path.display())))
}

fn out_dir(explicit: Option<&Path>, subcommand: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from).join(subcommand),
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| EmsError::io(p, e))
}

fn absolute_data(data: &mut DataConfig) -> Result<()> {
    data.corpus = absolute(&data.corpus)?;
    if let ScoreSource::Extractor { checkpoint } = &mut data.scores {
        *checkpoint = absolute(checkpoint)?;
    }
    Ok(())
}

fn to_toml<C: Serialize>(config: &C) -> Result<String> {
    toml::to_string(config).map_err(|e| EmsError::Config(format!("cannot serialize resolved config: {e}")))
}

/// Creates the output directory and writes the resolved config; returns
/// its hash.
fn begin<C: Serialize>(out: &Path, config: &C) -> Result<String> {
    let text = to_toml(config)?;
    fs::create_dir_all(out).map_err(|e| EmsError::io(out, e))?;
    write_file(&out.join(CONFIG_SNAPSHOT), text.as_bytes())?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| EmsError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn finish(out: &Path, subcommand: &str, config_hash: &str, started: Instant, metrics: serde_json::Value) -> Result<()> {
    let summary = serde_json::json!({
        "subcommand": subcommand,
        "config_hash": config_hash,
        "config": CONFIG_SNAPSHOT,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_clock_ms": started.elapsed().as_millis() as u64,
        "metrics": metrics,
    });
    write_json(&out.join(RUN_SUMMARY), &summary)?;
    println!("{subcommand}: done, outputs in {}", out.display());
    Ok(())
}

struct JsonLines {
    path: PathBuf,
    writer: BufWriter<fs::File>,
}

impl JsonLines {
    fn create(path: PathBuf) -> Result<Self> {
        let file = fs::File::create(&path).map_err(|e| EmsError::io(&path, e))?;
        Ok(Self { path, writer: BufWriter::new(file) })
    }

    fn push<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let line = serde_json::to_string(value)?;
        writeln!(self.writer, "{line}").map_err(|e| EmsError::io(&self.path, e))
    }

    fn close(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| EmsError::io(&self.path, e))
    }
}

fn run_corpus(args: &RunArgs, started: Instant) -> Result<()> {
    let mut config: CorpusConfig = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = out_dir(args.out.as_deref(), "corpus");
    let hash = begin(&out, &config)?;
    let records = generate_corpus(&config)?;
    let manifest = write_corpus(&records, &out)?;
    if args.verbose > 0 {
        eprintln!("wrote {} records", manifest.records.len());
    }
    let frames: usize = records.iter().map(FeatureSequence::len).sum();
    finish(&out, "corpus", &hash, started, serde_json::json!({ "records": records.len(), "frames": frames }))
}

fn load_split(data: &DataConfig) -> Result<SplitCorpus> {
    let records = read_corpus(&data.corpus)?;
    split_corpus(&records, data.split, data.split_seed)
}

fn score_tracks(source: &ScoreSource, features: &[FeatureSequence]) -> Result<Vec<IntensityTrack>> {
    match source {
        ScoreSource::Heuristic => Ok(features.iter().map(heuristic_intensity).collect()),
        ScoreSource::GroundTruth => features.iter().map(IntensityTrack::ground_truth).collect(),
        ScoreSource::Extractor { checkpoint } => {
            let model = IntensityExtractor::from_checkpoint(&checkpoint::load(checkpoint)?)?;
            features.iter().map(|f| predict_intensity(&model, f).map(|(track, _)| track)).collect()
        }
    }
}

fn run_intensity(args: &RunArgs, started: Instant) -> Result<()> {
    let mut config: IntensityRunConfig = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.extractor.seed = seed;
        config.train.seed = seed;
    }
    config.extractor.validate()?;
    absolute_data(&mut config.data)?;
    let out = out_dir(args.out.as_deref(), "intensity");
    let hash = begin(&out, &config)?;
    let split = load_split(&config.data)?;
    let mut log = JsonLines::create(out.join(METRICS_FILE))?;
    let mut log_err = None;
    let verbose = args.verbose;
    let (model, metrics) = train_intensity(
        IntensityExtractor::new(config.extractor.clone())?,
        &split.train,
        &split.dev,
        &config.train,
        |m| {
            if verbose > 0 {
                eprintln!(
                    "epoch {}: loss {:.4} dev_mae {:.4} dev_acc {:.3}",
                    m.epoch, m.train_loss, m.dev_mae, m.dev_accuracy
                );
            }
            if let Err(e) = log.push(m) {
                log_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = log_err {
        return Err(e);
    }
    log.close()?;
    checkpoint::save(&out.join("extractor.ckpt"), &model.to_checkpoint(config.train.epochs)?)?;
    let (mut abs_err, mut frames, mut hits) = (0.0, 0usize, 0usize);
    for f in &split.test {
        let (track, probs) = predict_intensity(&model, f)?;
        abs_err += track.scores.iter().zip(&f.truth_frame_intensity).map(|(a, b)| (a - b).abs()).sum::<f64>();
        frames += f.len();
        let best = (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        hits += usize::from(best == f.emotion.index());
    }
    let test_mae = abs_err / frames.max(1) as f64;
    let test_accuracy = hits as f64 / split.test.len().max(1) as f64;
    finish(
        &out,
        "intensity",
        &hash,
        started,
        serde_json::json!({ "test_frame_mae": test_mae, "test_emotion_accuracy": test_accuracy, "final_epoch": metrics.last() }),
    )
}

fn run_pretrain(args: &RunArgs, started: Instant) -> Result<()> {
    let mut config: PretrainRunConfig = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
        config.train.model.seed = seed;
    }
    if config.resume.is_some() && config.warm_start.is_some() {
        return Err(EmsError::Config("resume and warm_start are mutually exclusive".into()));
    }
    config.train.validate()?;
    absolute_data(&mut config.data)?;
    for p in config.resume.iter_mut().chain(config.warm_start.iter_mut()) {
        *p = absolute(p)?;
    }
    let out = out_dir(args.out.as_deref(), "pretrain");
    let hash = begin(&out, &config)?;
    let split = load_split(&config.data)?;
    let scores = score_tracks(&config.data.scores, &split.train)?;
    let data = PretrainData { features: &split.train, scores: &scores };
    let start_ckpt = match config.resume.as_ref().or(config.warm_start.as_ref()) {
        Some(p) => Some(checkpoint::load(p)?),
        None => None,
    };
    let start = match (&start_ckpt, config.resume.is_some()) {
        (Some(c), true) => StartFrom::Resume(c),
        (Some(c), false) => StartFrom::WarmStart(c),
        (None, _) => StartFrom::Scratch,
    };
    let ckpt_dir = out.join("checkpoints");
    let options = PretrainOptions { start, checkpoint_dir: Some(ckpt_dir.clone()) };
    let mut log = JsonLines::create(out.join(METRICS_FILE))?;
    let verbose = args.verbose;
    let outcome = pretrain(&data, &config.train, &options, |r| {
        if verbose > 1 || (verbose > 0 && r.step % 100 == 0) {
            eprintln!("step {}: total {:.5} score {:.5} joint {:.5}", r.step, r.total, r.l_score, r.l_joint_input);
        }
        log.push(r)
    })?;
    log.close()?;
    let last = outcome.metrics.last().map(MetricsRecord::without_time);
    finish(
        &out,
        "pretrain",
        &hash,
        started,
        serde_json::json!({
            "final_step": outcome.step,
            "smoothed_loss_ratio": smoothed_loss_ratio(&outcome.metrics),
            "final_record": last,
            "checkpoint": final_checkpoint_path(&ckpt_dir),
        }),
    )
}

fn run_probe(args: &RunArgs, started: Instant) -> Result<()> {
    let mut config: ProbeRunConfig = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.probe.seeds = (0..config.probe.seeds.len() as u64).map(|i| seed + i).collect();
        config.model.seed = seed;
    }
    config.probe.validate()?;
    absolute_data(&mut config.data)?;
    if let Some(p) = &mut config.checkpoint {
        *p = absolute(p)?;
    }
    let out = out_dir(args.out.as_deref(), "probe");
    let hash = begin(&out, &config)?;
    let split = load_split(&config.data)?;
    let (model, strategy) = match &config.checkpoint {
        Some(path) => {
            let ckpt = checkpoint::load(path)?;
            let from_ckpt = ckpt.header.strategy.as_deref().and_then(|s| match s {
                "ems" => Some(MaskStrategy::Ems),
                "uniform" => Some(MaskStrategy::Uniform),
                _ => None,
            });
            (SslModel::from_checkpoint(&ckpt)?, config.strategy.or(from_ckpt).unwrap_or(MaskStrategy::Uniform))
        }
        None => {
            let mut model = SslModel::new(config.model.clone())?;
            model.normalizer = FeatureNormalizer::fit(&split.train);
            (model, config.strategy.unwrap_or(MaskStrategy::Uniform))
        }
    };
    let train_scores = score_tracks(&config.data.scores, &split.train)?;
    let test_scores = score_tracks(&config.data.scores, &split.test)?;
    let train =
        extract_representations(&model, strategy, &PretrainData { features: &split.train, scores: &train_scores })?;
    let test =
        extract_representations(&model, strategy, &PretrainData { features: &split.test, scores: &test_scores })?;
    let probes = probe_all(&train, &test, &config.probe, config.frame_probe)?;
    write_json(&out.join("probes.json"), &probes)?;
    if args.verbose > 0 {
        eprintln!("utterance probe accuracy {:.4}", probes.utterance.accuracy);
    }
    finish(
        &out,
        "probe",
        &hash,
        started,
        serde_json::json!({
            "utterance_accuracy": probes.utterance.accuracy,
            "utterance_chance_threshold": probes.utterance.chance_threshold(),
            "frame_accuracy": probes.frame.as_ref().map(|f| f.accuracy),
        }),
    )
}

fn run_compare(args: &RunArgs, started: Instant) -> Result<()> {
    let mut config: CompareRunConfig = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.compare.train.seed = seed;
        config.compare.train.model.seed = seed;
    }
    config.compare.train.validate()?;
    absolute_data(&mut config.data)?;
    for cell in &mut config.compare.cells {
        if let Some(p) = &mut cell.checkpoint {
            *p = absolute(p)?;
        }
    }
    let out = out_dir(args.out.as_deref(), "compare");
    let hash = begin(&out, &config)?;
    let split = load_split(&config.data)?;
    let train_scores = score_tracks(&config.data.scores, &split.train)?;
    let test_scores = score_tracks(&config.data.scores, &split.test)?;
    let data = ExperimentData {
        train: PretrainData { features: &split.train, scores: &train_scores },
        eval: PretrainData { features: &split.test, scores: &test_scores },
    };
    let verbose = args.verbose;
    let report = compare_strategies(&config.compare, &data, Some(&out.join("checkpoints")), |cell| {
        if verbose > 0 {
            eprintln!("cell {} finished", cell.key.slug());
        }
    })?;
    write_json(&out.join("report.json"), &report.to_json())?;
    write_file(&out.join("report.csv"), report.to_csv().as_bytes())?;
    if !report.complete {
        let failed =
            report.cells.iter().filter(|c| matches!(c.outcome, crate::probes::CellOutcome::Failed { .. })).count();
        return Err(EmsError::MalformedInput(format!("{failed} cell(s) failed; report written and marked incomplete")));
    }
    finish(&out, "compare", &hash, started, serde_json::json!({ "complete": true, "cells": report.cells.len() }))
}

/// A loss curve parsed from a metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct LossCurve {
    pub x_label: &'static str,
    pub x: Vec<f64>,
    /// Named series in a fixed order.
    pub series: Vec<(String, Vec<f64>)>,
}

/// Parses a `pretrain` or `intensity` metrics file.
pub fn parse_metrics(text: &str, origin: &Path) -> Result<LossCurve> {
    let bad = |line: usize, msg: String| EmsError::MalformedInput(format!("{}:{line}: {msg}", origin.display()));
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(i + 1, e.to_string()))?;
        rows.push((i + 1, v));
    }
    let Some((_, first)) = rows.first() else {
        return Err(EmsError::MalformedInput(format!("{}: no metrics records", origin.display())));
    };
    let (x_key, x_label, keys): (&str, &'static str, &[&str]) = if first.get("step").is_some() {
        ("step", "step", &["total", "l_score", "l_joint_input", "l_vq"])
    } else if first.get("epoch").is_some() {
        ("epoch", "epoch", &["train_loss", "dev_mae"])
    } else {
        return Err(bad(rows[0].0, "record has neither `step` nor `epoch`".into()));
    };
    let mut x = Vec::with_capacity(rows.len());
    let mut series: Vec<(String, Vec<f64>)> = keys.iter().map(|k| (k.to_string(), Vec::new())).collect();
    for (line, v) in &rows {
        x.push(v.get(x_key).and_then(|n| n.as_f64()).ok_or_else(|| bad(*line, format!("missing numeric `{x_key}`")))?);
        for (name, values) in &mut series {
            match v.get(name.as_str()) {
                Some(n) if n.is_number() => values.push(n.as_f64().unwrap_or(f64::NAN)),
                Some(serde_json::Value::Null) | None if name == "l_vq" => {}
                _ => return Err(bad(*line, format!("missing numeric `{name}`"))),
            }
        }
    }
    series.retain(|(_, v)| !v.is_empty());
    if series.iter().any(|(_, v)| v.len() != x.len()) {
        return Err(EmsError::MalformedInput(format!("{}: `l_vq` present on only some records", origin.display())));
    }
    Ok(LossCurve { x_label, x, series })
}

/// Mean accuracy per series and parameter value, parsed from a report CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyTable {
    /// (family, strategy, input_mode, task) → parameter → per-seed accuracies.
    pub cells: BTreeMap<(String, String, String, String), BTreeMap<OrderedParam, Vec<f64>>>,
}

/// A numeric mask parameter ordered by value.
#[derive(Clone, Debug, PartialEq, PartialOrd)]
pub struct OrderedParam(pub f64);

impl Eq for OrderedParam {}

impl Ord for OrderedParam {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

pub fn parse_report_csv(text: &str, origin: &Path) -> Result<AccuracyTable> {
    let bad = |line: usize, msg: &str| EmsError::MalformedInput(format!("{}:{line}: {msg}", origin.display()));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == crate::probes::REPORT_CSV_HEADER => {}
        _ => return Err(bad(1, "not a comparison report (unexpected header)")),
    }
    let mut cells: BTreeMap<_, BTreeMap<OrderedParam, Vec<f64>>> = BTreeMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad(i + 1, "expected 9 fields"));
        }
        if f[8] != "ok" {
            continue;
        }
        let param: f64 = f[2].parse().map_err(|_| bad(i + 1, "parameter is not numeric"))?;
        let acc: f64 = f[6].parse().map_err(|_| bad(i + 1, "accuracy is not numeric"))?;
        cells
            .entry((f[0].to_string(), f[1].to_string(), f[3].to_string(), f[4].to_string()))
            .or_default()
            .entry(OrderedParam(param))
            .or_default()
            .push(acc);
    }
    if cells.is_empty() {
        return Err(EmsError::MalformedInput(format!("{}: report has no successful rows", origin.display())));
    }
    Ok(AccuracyTable { cells })
}

impl AccuracyTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("family,strategy,input_mode,task,parameter,mean_accuracy,seeds\n");
        for ((family, strategy, mode, task), by_param) in &self.cells {
            for (p, accs) in by_param {
                out.push_str(&format!("{family},{strategy},{mode},{task},{},{:.6},{}\n", p.0, mean(accs), accs.len()));
            }
        }
        out
    }
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(self.x_label);
        for (name, _) in &self.series {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, x) in self.x.iter().enumerate() {
            out.push_str(&x.to_string());
            for (_, v) in &self.series {
                out.push_str(&format!(",{}", v[i]));
            }
            out.push('\n');
        }
        out
    }
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

fn plot_err(path: &Path, e: impl std::fmt::Display) -> EmsError {
    EmsError::io(path, std::io::Error::other(e.to_string()))
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) =
        values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }
}

fn draw_lines(path: &Path, title: &str, x_desc: &str, y_desc: &str, lines: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let (x0, x1) = span(lines.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let (y0, y1) = span(lines.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| plot_err(path, e))?;
    chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(|e| plot_err(path, e))?;
    for (i, (name, points)) in lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| plot_err(path, e))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        if points.len() < 50 {
            chart
                .draw_series(points.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(|e| plot_err(path, e))?;
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    root.present().map_err(|e| plot_err(path, e))
}

/// `<parent dir>-<file stem>`, so `runs/a/metrics.jsonl` and
/// `runs/b/metrics.jsonl` get distinct output names.
fn file_stem(path: &Path) -> String {
    let stem = path.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned());
    match path.parent().and_then(Path::file_name) {
        Some(dir) => format!("{}-{stem}", dir.to_string_lossy()),
        None => stem,
    }
}

fn run_plot(args: &PlotArgs, started: Instant) -> Result<()> {
    if args.metrics.is_empty() && args.report.is_empty() {
        return Err(EmsError::InvalidArgument("plot needs at least one --metrics or --report input".into()));
    }
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| EmsError::io(p, e));
    // Parse every input before creating anything so a bad file leaves no outputs.
    let mut curves = Vec::new();
    let mut stems = std::collections::BTreeSet::new();
    for p in &args.metrics {
        let stem = format!("loss-{}", file_stem(p));
        if !stems.insert(stem.clone()) {
            return Err(EmsError::InvalidArgument(format!("two inputs map to the output name {stem}")));
        }
        curves.push((stem, parse_metrics(&read(p)?, p)?));
    }
    let mut tables = Vec::new();
    for p in &args.report {
        let stem = format!("accuracy-{}", file_stem(p));
        if !stems.insert(stem.clone()) {
            return Err(EmsError::InvalidArgument(format!("two inputs map to the output name {stem}")));
        }
        tables.push((stem, parse_report_csv(&read(p)?, p)?));
    }
    let inputs = PlotInputs {
        metrics: args.metrics.iter().map(|p| absolute(p)).collect::<Result<_>>()?,
        reports: args.report.iter().map(|p| absolute(p)).collect::<Result<_>>()?,
    };
    let out = out_dir(args.out.as_deref(), "plot");
    let hash = begin(&out, &inputs)?;
    let mut written = Vec::new();
    for (stem, curve) in &curves {
        let lines: Vec<(String, Vec<(f64, f64)>)> = curve
            .series
            .iter()
            .map(|(n, v)| (n.clone(), curve.x.iter().copied().zip(v.iter().copied()).collect()))
            .collect();
        draw_lines(&out.join(format!("{stem}.svg")), stem, curve.x_label, "loss", &lines)?;
        write_file(&out.join(format!("{stem}.csv")), curve.to_csv().as_bytes())?;
        written.push(stem.clone());
    }
    for (stem, table) in &tables {
        let lines: Vec<(String, Vec<(f64, f64)>)> = table
            .cells
            .iter()
            .map(|((family, strategy, mode, task), by_param)| {
                (format!("{family} {strategy} {mode} {task}"), by_param.iter().map(|(p, a)| (p.0, mean(a))).collect())
            })
            .collect();
        draw_lines(&out.join(format!("{stem}.svg")), stem, "masking parameter", "accuracy", &lines)?;
        write_file(&out.join(format!("{stem}.csv")), table.to_csv().as_bytes())?;
        written.push(stem.clone());
    }
    if args.verbose > 0 {
        eprintln!("rendered {} figure(s)", written.len());
    }
    finish(&out, "plot", &hash, started, serde_json::json!({ "figures": written }))
}
