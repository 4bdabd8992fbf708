//! Command-line front end: corpus and episode generation, training,
//! evaluation, table reproduction and attention export.
//!
//! Settings are layered: built-in defaults, then a flat `key=value` config
//! file, then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::episodes::{
    read_episode, split_me_permutations, test_episodes, write_episode, EpisodeSampler, Experiment, GeneratorConfig,
};
use crate::model::{ModelError, Variant};
use crate::scan::{canonical_corpus, make_split, write_pairs, Instruction, Pair};
use crate::training::{
    evaluate, reproduce_table, run_experiment, table_cells, EvalResult, RunSpec, Scale, SeedResult, TrainError, Trainer,
};

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "METASEQ_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "metaseq", version, about = "Meta seq2seq learning on SCAN-style episodes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the corpus, split files and sample episodes of an experiment.
    Generate(GenerateArgs),
    /// Train and score one experiment and variant over one or more seeds.
    Train(TrainArgs),
    /// Score a saved checkpoint on its experiment's test episodes.
    Eval(EvalArgs),
    /// Train and score every cell of a results table.
    ReproduceTable(TableArgs),
    /// Export memory and decoder attention for the queries of an episode.
    DumpAttention(DumpArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `key=value` settings file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output root (default: $METASEQ_OUT_DIR, else `runs`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub experiment: Option<Experiment>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of sample meta-training episodes to write.
    #[arg(long)]
    pub samples: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub experiment: Option<Experiment>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Single seed; shorthand for `--seeds N`.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, value_parser = ["paper", "desk"])]
    pub scale: Option<String>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Score only this many uniformly drawn test queries.
    #[arg(long)]
    pub eval_subset: Option<usize>,
    /// Seeds trained concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Seed of the test episodes (default: the checkpoint's seed).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_subset: Option<usize>,
    /// Directory for `eval.json` and `errors.tsv`; nothing is written
    /// without it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(long, value_parser = ["2", "3"])]
    pub table: Option<String>,
    #[arg(long, value_parser = ["paper", "desk"])]
    pub scale: Option<String>,
    #[arg(long)]
    pub seeds: Option<String>,
    /// Overrides the preset episode budget of every cell.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Overrides the preset hidden size of every cell.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub eval_subset: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Episode file in the `SUPPORT`/`QUERY` format written by `generate`.
    #[arg(long)]
    pub episode: PathBuf,
    /// Only trace these instructions (default: every query in the episode).
    #[arg(long)]
    pub query: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// Process exit status: 2 for bad arguments, 3 for I/O, 4 for
    /// divergence, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Divergence(_) => 4,
            CliError::Failed(_) => 1,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io { path, source } => CliError::Io { path, source },
            TrainError::Divergence { .. } => CliError::Divergence(e.to_string()),
            TrainError::Config(msg) => CliError::Usage(msg),
            TrainError::Model(m) => m.into(),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::VocabMismatch { .. } | ModelError::EmptySupport | ModelError::InvalidConfig(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

/// One file produced by a command.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

/// Record of one command invocation, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub experiment: Option<String>,
    pub variant: Option<String>,
    pub seeds: Vec<u64>,
    /// Settings that came from the config file or flags.
    pub overrides: BTreeMap<String, String>,
    pub out_dir: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub corpus_checksums: BTreeMap<String, String>,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    /// The manifest without its timestamps; equal for reruns with the same
    /// settings.
    pub fn without_timestamps(&self) -> Self {
        Self { started_unix: 0, finished_unix: 0, ..self.clone() }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn pairs_text(pairs: &[Pair]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_pairs(&mut buf, pairs).expect("writing to memory");
    buf
}

fn corpus_checksums(experiment: Option<Experiment>) -> BTreeMap<String, String> {
    let mut sums = BTreeMap::new();
    let corpus = canonical_corpus();
    sums.insert("corpus".to_string(), sha256_hex(&pairs_text(corpus)));
    if let Some(split) = experiment.and_then(Experiment::split) {
        let (train, test) = make_split(corpus, &split);
        sums.insert(format!("{}.train", split.name()), sha256_hex(&pairs_text(&train)));
        sums.insert(format!("{}.test", split.name()), sha256_hex(&pairs_text(&test)));
    }
    sums
}

fn collect_files(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, root, out)?;
        } else if path.file_name().is_some_and(|n| n != "manifest.json") {
            out.push(path.strip_prefix(root).unwrap_or(&path).to_path_buf());
        }
    }
    Ok(())
}

/// Checksums every file under `dir` except the manifest itself.
pub fn list_artifacts(dir: &Path) -> Result<Vec<Artifact>, CliError> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    files
        .into_iter()
        .map(|rel| {
            let full = dir.join(&rel);
            let bytes = fs::read(&full).map_err(|e| CliError::io(&full, e))?;
            Ok(Artifact { path: rel.to_string_lossy().replace('\\', "/"), sha256: sha256_hex(&bytes) })
        })
        .collect()
}

fn write_text(path: &Path, text: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Layered settings as strings, keyed like the config file.
#[derive(Debug, Default)]
struct Layers {
    values: BTreeMap<String, String>,
    overrides: BTreeMap<String, String>,
}

impl Layers {
    fn new(defaults: &[(&str, String)], config: Option<&Path>) -> Result<Self, CliError> {
        let mut layers = Layers::default();
        for (k, v) in defaults {
            layers.values.insert(k.to_string(), v.clone());
        }
        if let Some(path) = config {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let file = GeneratorConfig::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            for (k, v) in file.entries {
                let k = k.replace('-', "_");
                if k == "seed" {
                    layers.set("seeds", v);
                } else {
                    layers.set(&k, v);
                }
            }
        }
        Ok(layers)
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        let v = value.to_string();
        self.values.insert(key.to_string(), v.clone());
        self.overrides.insert(key.to_string(), v);
    }

    fn flag<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| CliError::Usage(format!("invalid {key} `{v}`: {e}"))),
        }
    }

    fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(key)?.ok_or_else(|| CliError::Usage(format!("missing required setting `{key}`")))
    }

    fn seeds(&self) -> Result<Vec<u64>, CliError> {
        let raw = self.raw("seeds").unwrap_or("1");
        let seeds: Result<Vec<u64>, _> = raw.split(',').map(|s| s.trim().parse::<u64>()).collect();
        match seeds {
            Ok(s) if !s.is_empty() => Ok(s),
            _ => Err(CliError::Usage(format!("invalid seeds `{raw}`"))),
        }
    }

    fn scale(&self) -> Result<Scale, CliError> {
        let raw = self.raw("scale").unwrap_or("desk");
        Scale::parse(raw).ok_or_else(|| CliError::Usage(format!("invalid scale `{raw}` (expected paper or desk)")))
    }

    fn out_root(&self) -> PathBuf {
        PathBuf::from(self.raw("out").unwrap_or("runs"))
    }
}

fn default_out() -> String {
    std::env::var(OUT_DIR_ENV).ok().filter(|v| !v.is_empty()).unwrap_or_else(|| "runs".to_string())
}

fn log_line(s: &str) {
    eprintln!("{s}");
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ReproduceTable(a) => cmd_reproduce_table(a),
        Command::DumpAttention(a) => cmd_dump_attention(a),
    }
}

fn finish_manifest(mut manifest: RunManifest, dir: &Path) -> Result<RunManifest, CliError> {
    manifest.artifacts = list_artifacts(dir)?;
    manifest.finished_unix = unix_now();
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Failed(e.to_string()))?;
    write_text(&dir.join("manifest.json"), json.as_bytes())?;
    Ok(manifest)
}

fn cmd_generate(a: GenerateArgs) -> Result<(), CliError> {
    let started = unix_now();
    let mut layers = Layers::new(&[("out", default_out()), ("samples", "5".into())], a.common.config.as_deref())?;
    layers.flag("experiment", a.experiment);
    layers.flag("seeds", a.seed);
    layers.flag("samples", a.samples);
    layers.flag("out", a.common.out.as_ref().map(|p| p.display()));
    let experiment: Experiment = layers.require("experiment")?;
    let seed = layers.seeds()?[0];
    let samples: usize = layers.require("samples")?;
    let dir = layers.out_root().join(experiment.name());

    if let Some(split) = experiment.split() {
        let (train, test) = make_split(canonical_corpus(), &split);
        write_text(&dir.join("corpus.txt"), &pairs_text(canonical_corpus()))?;
        write_text(&dir.join("train.txt"), &pairs_text(&train))?;
        write_text(&dir.join("test.txt"), &pairs_text(&test))?;
    } else {
        let pool = split_me_permutations(seed);
        let mut text = String::new();
        for (label, perms) in [("train", &pool.train_perms), ("test", &pool.test_perms)] {
            for p in perms.iter() {
                let _ = writeln!(text, "{label}\t{}", p.map(|i| i.to_string()).join(" "));
            }
        }
        write_text(&dir.join("permutations.tsv"), text.as_bytes())?;
    }
    let mut sampler = EpisodeSampler::new(experiment, seed);
    for i in 0..samples {
        let mut buf = Vec::new();
        write_episode(&mut buf, &sampler.next_episode()).map_err(|e| CliError::io(&dir, e))?;
        write_text(&dir.join(format!("episodes/train_{i:04}.txt")), &buf)?;
    }
    for (i, ep) in test_episodes(experiment, seed).iter().enumerate() {
        let mut buf = Vec::new();
        write_episode(&mut buf, ep).map_err(|e| CliError::io(&dir, e))?;
        write_text(&dir.join(format!("episodes/test_{i:04}.txt")), &buf)?;
    }

    let manifest = RunManifest {
        command: "generate".into(),
        experiment: Some(experiment.name().into()),
        variant: None,
        seeds: vec![seed],
        overrides: layers.overrides.clone(),
        out_dir: dir.display().to_string(),
        started_unix: started,
        finished_unix: 0,
        corpus_checksums: corpus_checksums(Some(experiment)),
        artifacts: Vec::new(),
    };
    let manifest = finish_manifest(manifest, &dir)?;
    println!("wrote {} files to {}", manifest.artifacts.len(), dir.display());
    Ok(())
}

fn run_spec_from(layers: &Layers, experiment: Experiment, variant: Variant) -> Result<RunSpec, CliError> {
    let mut spec = RunSpec::at_scale(experiment, variant, layers.scale()?, layers.seeds()?);
    if let Some(m) = layers.parse("m")? {
        spec.model.m = m;
    }
    if let Some(e) = layers.parse("episodes")? {
        spec.train.episodes = e;
    }
    if let Some(d) = layers.parse("dropout")? {
        spec.model.dropout = d;
    }
    spec.eval_subset = layers.parse("eval_subset")?;
    spec.train_eval_subset = layers.parse("train_eval_subset")?;
    spec.model.validate()?;
    spec.train.validate()?;
    Ok(spec)
}

fn seed_status(results: &[SeedResult]) -> String {
    let mut s = String::new();
    for r in results {
        let status = match (r.accuracy, r.diverged_at) {
            (Some(a), _) => format!("{:.2}%", 100.0 * a),
            (None, Some(e)) => format!("diverged at episode {e}"),
            (None, None) => "no result".into(),
        };
        let _ = writeln!(s, "seed {}: {status}", r.seed);
    }
    s
}

fn diverged(results: &[SeedResult]) -> Option<String> {
    let bad: Vec<String> = results
        .iter()
        .filter_map(|r| r.diverged_at.map(|e| format!("seed {} at episode {e}", r.seed)))
        .collect();
    (!bad.is_empty()).then(|| bad.join(", "))
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let started = unix_now();
    let defaults = [("out", default_out()), ("variant", "full".into()), ("jobs", "1".into())];
    let mut layers = Layers::new(&defaults, a.common.config.as_deref())?;
    layers.flag("experiment", a.experiment);
    layers.flag("variant", a.variant);
    layers.flag("seeds", a.seed.map(|s| s.to_string()).or(a.seeds));
    layers.flag("episodes", a.episodes);
    layers.flag("m", a.m);
    layers.flag("scale", a.scale);
    layers.flag("dropout", a.dropout);
    layers.flag("eval_subset", a.eval_subset);
    layers.flag("jobs", a.jobs);
    layers.flag("out", a.common.out.as_ref().map(|p| p.display()));
    let experiment: Experiment = layers.require("experiment")?;
    let variant: Variant = layers.require("variant")?;
    let jobs: usize = layers.require("jobs")?;
    let spec = run_spec_from(&layers, experiment, variant)?;
    let root = layers.out_root();

    let (results, report) = run_experiment(&spec, Some(&root), jobs, &log_line)?;
    let dir = root.join(spec.label());
    let manifest = RunManifest {
        command: "train".into(),
        experiment: Some(experiment.name().into()),
        variant: Some(variant.name().into()),
        seeds: spec.seeds.clone(),
        overrides: layers.overrides.clone(),
        out_dir: dir.display().to_string(),
        started_unix: started,
        finished_unix: 0,
        corpus_checksums: corpus_checksums(Some(experiment)),
        artifacts: Vec::new(),
    };
    finish_manifest(manifest, &dir)?;
    print!("{}", seed_status(&results));
    println!("{}: mean {:.2}% (SD {:.2})", spec.label(), 100.0 * report.mean, 100.0 * report.sd);
    match diverged(&results) {
        Some(msg) => Err(CliError::Divergence(msg)),
        None => Ok(()),
    }
}

/// Summary written by `eval --out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub experiment: String,
    pub variant: String,
    pub seed: u64,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub overflows: usize,
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let trainer = Trainer::load(&a.checkpoint)?;
    let seed = a.seed.unwrap_or(trainer.seed);
    let episodes = test_episodes(trainer.experiment, seed);
    let result: EvalResult = evaluate(trainer.model(), &episodes, a.eval_subset.map(|k| (k, seed)))?;
    let summary = EvalSummary {
        experiment: trainer.experiment.name().into(),
        variant: trainer.model().config().variant.name().into(),
        seed,
        correct: result.correct,
        total: result.total,
        accuracy: result.accuracy(),
        overflows: result.overflows,
    };
    println!(
        "{} {}: {:.2}% ({}/{})",
        summary.experiment,
        summary.variant,
        100.0 * summary.accuracy,
        summary.correct,
        summary.total
    );
    if let Some(dir) = &a.out {
        let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Failed(e.to_string()))?;
        write_text(&dir.join("eval.json"), json.as_bytes())?;
        let mut errs = String::from("instruction\ttarget\tpredicted\toverflow\n");
        for q in &result.errors {
            let _ = writeln!(errs, "{}\t{}\t{}\t{}", q.instruction, q.target, q.predicted, q.overflow);
        }
        write_text(&dir.join("errors.tsv"), errs.as_bytes())?;
    }
    Ok(())
}

fn cmd_reproduce_table(a: TableArgs) -> Result<(), CliError> {
    let started = unix_now();
    let defaults = [("out", default_out()), ("jobs", "1".into())];
    let mut layers = Layers::new(&defaults, a.common.config.as_deref())?;
    layers.flag("table", a.table);
    layers.flag("scale", a.scale);
    layers.flag("seeds", a.seeds);
    layers.flag("episodes", a.episodes);
    layers.flag("m", a.m);
    layers.flag("eval_subset", a.eval_subset);
    layers.flag("jobs", a.jobs);
    layers.flag("out", a.common.out.as_ref().map(|p| p.display()));
    let table: u8 = layers.require("table")?;
    if table_cells(table).is_none() {
        return Err(CliError::Usage(format!("no table {table}; expected 2 or 3")));
    }
    let scale = layers.scale()?;
    let seeds = layers.seeds()?;
    let jobs: usize = layers.require("jobs")?;
    let eval_subset: Option<usize> = layers.parse("eval_subset")?;
    let m: Option<usize> = layers.parse("m")?;
    let episodes: Option<usize> = layers.parse("episodes")?;
    let dir = layers.out_root().join(format!("table{table}_{}", scale.name()));

    let adjust = |spec: &mut RunSpec| {
        spec.eval_subset = eval_subset;
        if let Some(m) = m {
            spec.model.m = m;
        }
        if let Some(e) = episodes {
            spec.train.episodes = e;
        }
    };
    let (text, _) = reproduce_table(table, scale, &seeds, &adjust, Some(&dir), jobs, &log_line)?;
    write_text(&dir.join("table.tsv"), text.as_bytes())?;
    let manifest = RunManifest {
        command: "reproduce-table".into(),
        experiment: None,
        variant: None,
        seeds,
        overrides: layers.overrides.clone(),
        out_dir: dir.display().to_string(),
        started_unix: started,
        finished_unix: 0,
        corpus_checksums: corpus_checksums(None),
        artifacts: Vec::new(),
    };
    finish_manifest(manifest, &dir)?;
    print!("{text}");
    let failed: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| CliError::io(&dir, e))?
        .filter_map(|e| e.ok())
        .flat_map(|cell| fs::read_dir(cell.path()).into_iter().flatten().filter_map(|e| e.ok()))
        .filter_map(|seed_dir| fs::read_to_string(seed_dir.path().join("result.json")).ok())
        .filter_map(|json| serde_json::from_str::<SeedResult>(&json).ok())
        .filter(|r| r.diverged_at.is_some())
        .map(|r| format!("seed {}", r.seed))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Divergence(failed.join(", ")))
    }
}

fn cmd_dump_attention(a: DumpArgs) -> Result<(), CliError> {
    let started = unix_now();
    let trainer = Trainer::load(&a.checkpoint)?;
    let file = fs::File::open(&a.episode).map_err(|e| CliError::io(&a.episode, e))?;
    let episode = read_episode(std::io::BufReader::new(file))
        .map_err(|e| CliError::Usage(format!("{}: {e}", a.episode.display())))?;
    let queries: Vec<Instruction> = if a.query.is_empty() {
        episode.query.iter().map(|p| p.instruction.clone()).collect()
    } else {
        a.query.iter().map(|q| Instruction::parse_str(q)).collect()
    };
    if queries.is_empty() {
        return Err(CliError::Usage("no queries to trace".into()));
    }
    let preds = trainer.model().predict(&episode.support, &queries, true)?;
    let dir = a.out.unwrap_or_else(|| PathBuf::from(default_out()).join("attention"));
    for (i, p) in preds.iter().enumerate() {
        let trace = p.trace.as_ref().expect("trace requested");
        write_text(&dir.join(format!("query_{i:03}.txt")), trace.to_text().as_bytes())?;
        write_text(&dir.join(format!("query_{i:03}.svg")), trace.to_svg().as_bytes())?;
        println!("{}\t{}", queries[i], p.output.join(" "));
    }
    let mut overrides = BTreeMap::new();
    overrides.insert("checkpoint".to_string(), a.checkpoint.display().to_string());
    overrides.insert("episode".to_string(), a.episode.display().to_string());
    let manifest = RunManifest {
        command: "dump-attention".into(),
        experiment: Some(trainer.experiment.name().into()),
        variant: Some(trainer.model().config().variant.name().into()),
        seeds: vec![trainer.seed],
        overrides,
        out_dir: dir.display().to_string(),
        started_unix: started,
        finished_unix: 0,
        corpus_checksums: BTreeMap::new(),
        artifacts: Vec::new(),
    };
    finish_manifest(manifest, &dir)?;
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
