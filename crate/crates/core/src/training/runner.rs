use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::batches::baseline_templates;
use super::eval::{evaluate, evaluate_pairs, EvalReport, EvalResult};
use super::{TrainConfig, TrainError, Trainer};
use crate::episodes::{test_episodes, Experiment};
use crate::model::{ModelConfig, Variant};
use crate::scan::Pair;

/// Hyperparameter presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    /// The full published settings.
    Paper,
    /// Reduced settings that finish on one CPU core.
    Desk,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Paper => "paper",
            Scale::Desk => "desk",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paper" => Some(Scale::Paper),
            "desk" => Some(Scale::Desk),
            _ => None,
        }
    }

    /// Model and training settings for one table cell at this scale.
    pub fn settings(self, experiment: Experiment, variant: Variant) -> (ModelConfig, TrainConfig) {
        let mut model = ModelConfig { variant, ..ModelConfig::default() };
        let mut train = TrainConfig { support_loss: variant.support_loss(), ..TrainConfig::default() };
        if self == Scale::Desk {
            let (m, episodes) = desk_budget(experiment);
            model.m = m;
            model.dropout = 0.0;
            train.episodes = episodes;
        }
        (model, train)
    }
}

/// Desk-scale `(m, episodes)` per experiment, sized for one CPU core.
/// Dropout is off at this scale; it slows the early escape from uniform
/// memory attention more than it helps generalization at small m.
fn desk_budget(experiment: Experiment) -> (usize, usize) {
    match experiment {
        Experiment::Me => (50, 2_000),
        _ => (64, 10_000),
    }
}

/// Everything needed to train and score one (experiment, variant) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub experiment: Experiment,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Score only this many uniformly drawn test queries.
    pub eval_subset: Option<usize>,
    /// For the baseline, also score this many training items.
    pub train_eval_subset: Option<usize>,
}

impl RunSpec {
    pub fn at_scale(experiment: Experiment, variant: Variant, scale: Scale, seeds: Vec<u64>) -> Self {
        let (model, train) = scale.settings(experiment, variant);
        Self { experiment, model, train, seeds, eval_subset: None, train_eval_subset: None }
    }

    pub fn variant(&self) -> Variant {
        self.model.variant
    }

    pub fn label(&self) -> String {
        format!("{}_{}", self.experiment, self.model.variant)
    }
}

/// Outcome of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Test accuracy; `None` when training diverged.
    pub accuracy: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub diverged_at: Option<usize>,
    pub final_query_loss: f64,
    /// Wall-clock time; left out of saved results so reruns are identical.
    #[serde(skip)]
    pub seconds: f64,
}

/// Items the baseline is trained on, with the bare `jump` pair included for
/// the add-jump experiments.
pub fn baseline_pool(experiment: Experiment) -> Vec<Pair> {
    let mut pool = baseline_templates(experiment);
    if matches!(experiment, Experiment::AddJumpPerm | Experiment::AddJumpAug) {
        pool.push(Pair::from_strs("jump", "JUMP"));
    }
    pool
}

fn run_seed(spec: &RunSpec, seed: u64, dir: Option<&Path>, log: &(dyn Fn(&str) + Sync)) -> Result<SeedResult, TrainError> {
    let start = Instant::now();
    let mut trainer = Trainer::new(spec.experiment, spec.model.clone(), spec.train.clone(), seed)?;
    let report_every = (spec.train.episodes / 10).max(1);
    let mut recent = Vec::new();
    let label = spec.label();
    let mut diverged_at = None;
    while !trainer.is_done() {
        match trainer.step() {
            Ok(ql) => recent.push(ql),
            Err(TrainError::Divergence { episode, .. }) => {
                log(&format!("{label} seed {seed}: diverged at episode {episode}"));
                diverged_at = Some(episode);
                break;
            }
            Err(e) => return Err(e),
        }
        if trainer.episode() % report_every == 0 {
            let mean = recent.iter().sum::<f64>() / recent.len().max(1) as f64;
            log(&format!(
                "{label} seed {seed}: episode {}/{} query loss {mean:.4} ({:.0}s)",
                trainer.episode(),
                spec.train.episodes,
                start.elapsed().as_secs_f64()
            ));
            recent.clear();
        }
    }
    let final_query_loss = trainer.loss_curve().last().map(|p| p.1).unwrap_or(f64::NAN);

    let (accuracy, train_accuracy, test) = if diverged_at.is_some() {
        (None, None, EvalResult::default())
    } else {
        let model = trainer.model();
        let test = evaluate(model, &test_episodes(spec.experiment, seed), spec.eval_subset.map(|k| (k, seed)))?;
        let train_accuracy = match spec.train_eval_subset {
            Some(k) if !spec.model.variant.uses_memory() => {
                let pool = baseline_pool(spec.experiment);
                let picks = rand::seq::index::sample(
                    &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed),
                    pool.len(),
                    k.min(pool.len()),
                );
                let items: Vec<Pair> = picks.into_iter().map(|i| pool[i].clone()).collect();
                Some(evaluate_pairs(model, &[], &items)?.accuracy())
            }
            _ => None,
        };
        (Some(test.accuracy()), train_accuracy, test)
    };
    let result = SeedResult {
        seed,
        accuracy,
        train_accuracy,
        diverged_at,
        final_query_loss,
        seconds: start.elapsed().as_secs_f64(),
    };
    log(&format!(
        "{label} seed {seed}: test accuracy {} ({:.0}s)",
        accuracy.map(|a| format!("{:.2}%", 100.0 * a)).unwrap_or_else(|| "diverged".into()),
        result.seconds
    ));

    if let Some(dir) = dir {
        let seed_dir = dir.join(format!("seed{seed}"));
        std::fs::create_dir_all(&seed_dir).map_err(|e| TrainError::io(&seed_dir, e))?;
        trainer.save(&seed_dir.join("checkpoint.json"))?;
        let mut curve = String::from("episode\tloss\n");
        for (e, l) in trainer.loss_curve() {
            let _ = writeln!(curve, "{e}\t{l}");
        }
        write_file(&seed_dir.join("loss.tsv"), &curve)?;
        let mut errs = String::from("instruction\ttarget\tpredicted\toverflow\n");
        for q in &test.errors {
            let _ = writeln!(errs, "{}\t{}\t{}\t{}", q.instruction, q.target, q.predicted, q.overflow);
        }
        write_file(&seed_dir.join("errors.tsv"), &errs)?;
        let summary = serde_json::to_string_pretty(&result).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        write_file(&seed_dir.join("result.json"), &summary)?;
    }
    Ok(result)
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), TrainError> {
    let mut f = std::fs::File::create(path).map_err(|e| TrainError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| TrainError::io(path, e))
}

/// Trains and evaluates every seed of `spec`, `jobs` seeds at a time.
/// Artifacts go under `out/<experiment>_<variant>/` when `out` is given.
pub fn run_experiment(
    spec: &RunSpec,
    out: Option<&Path>,
    jobs: usize,
    log: &(dyn Fn(&str) + Sync),
) -> Result<(Vec<SeedResult>, EvalReport), TrainError> {
    let dir: Option<PathBuf> = out.map(|o| o.join(spec.label()));
    if let Some(d) = &dir {
        std::fs::create_dir_all(d).map_err(|e| TrainError::io(d, e))?;
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<SeedResult, TrainError>>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, spec.seeds.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = spec.seeds.get(i) else { break };
                let r = run_seed(spec, seed, dir.as_deref(), log);
                results.lock().expect("no poisoned workers").push(r);
            });
        }
    });
    let mut done: Vec<SeedResult> = Vec::new();
    for r in results.into_inner().expect("no poisoned workers") {
        done.push(r?);
    }
    done.sort_by_key(|r| r.seed);
    let report = EvalReport::from_accuracies(done.iter().filter_map(|r| r.accuracy.map(|a| (r.seed, a))).collect());
    if let Some(d) = &dir {
        write_file(&d.join("results.tsv"), &results_tsv(spec, &done, &report))?;
    }
    Ok((done, report))
}

fn results_tsv(spec: &RunSpec, results: &[SeedResult], report: &EvalReport) -> String {
    let mut s = String::from("experiment\tvariant\tseed\taccuracy\n");
    let (e, v) = (spec.experiment, spec.model.variant);
    for r in results {
        let acc = r.accuracy.map(|a| format!("{a:.6}")).unwrap_or_else(|| "diverged".into());
        let _ = writeln!(s, "{e}\t{v}\t{}\t{acc}", r.seed);
    }
    let _ = writeln!(s, "{e}\t{v}\tmean\t{:.6}", report.mean);
    let _ = writeln!(s, "{e}\t{v}\tsd\t{:.6}", report.sd);
    s
}

/// One cell of a results table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TableCell {
    pub variant: Variant,
    pub column: &'static str,
    pub experiment: Experiment,
}

/// Cells of the add-jump table (2) or the around-right/length table (3),
/// in row order.
pub fn table_cells(table: u8) -> Option<Vec<TableCell>> {
    let cell = |variant, column, experiment| TableCell { variant, column, experiment };
    match table {
        2 => {
            let mut cells = Vec::new();
            for v in [Variant::Full, Variant::NoSupportLoss, Variant::NoDecoderAttention] {
                cells.push(cell(v, "permutation meta-training", Experiment::AddJumpPerm));
                cells.push(cell(v, "augmentation meta-training", Experiment::AddJumpAug));
            }
            cells.push(cell(Variant::StandardSeq2Seq, "standard training", Experiment::AddJumpPerm));
            cells.push(cell(Variant::StandardSeq2Seq, "augmentation meta-training", Experiment::AddJumpAug));
            Some(cells)
        }
        3 => Some(vec![
            cell(Variant::Full, "around right", Experiment::AroundRight),
            cell(Variant::Full, "length", Experiment::Length),
            cell(Variant::StandardSeq2Seq, "around right", Experiment::AroundRight),
            cell(Variant::StandardSeq2Seq, "length", Experiment::Length),
        ]),
        _ => None,
    }
}

fn row_label(v: Variant) -> &'static str {
    match v {
        Variant::Full => "meta seq2seq learning",
        Variant::NoSupportLoss => "-without support loss",
        Variant::NoDecoderAttention => "-without decoder attention",
        Variant::StandardSeq2Seq => "standard seq2seq",
    }
}

/// Renders `mean% (SD x)` cells as a tab-separated table; cells that were
/// not run show `---`.
pub fn render_table(table: u8, results: &[(TableCell, EvalReport)]) -> String {
    let columns: &[&str] = match table {
        2 => &["standard training", "permutation meta-training", "augmentation meta-training"],
        _ => &["around right", "length"],
    };
    let rows: &[Variant] = match table {
        2 => &[Variant::Full, Variant::NoSupportLoss, Variant::NoDecoderAttention, Variant::StandardSeq2Seq],
        _ => &[Variant::Full, Variant::StandardSeq2Seq],
    };
    let mut s = format!("model\t{}\n", columns.join("\t"));
    for &v in rows {
        s.push_str(row_label(v));
        for &c in columns {
            let cell = results.iter().find(|(tc, _)| tc.variant == v && tc.column == c);
            match cell {
                Some((_, r)) => {
                    let _ = write!(s, "\t{:.2}% (SD {:.2})", 100.0 * r.mean, 100.0 * r.sd);
                }
                None => s.push_str("\t---"),
            }
        }
        s.push('\n');
    }
    s
}

/// Runs every cell of a table and renders it. `adjust` may override each
/// cell's preset settings. Per-cell artifacts go under `out`.
pub fn reproduce_table(
    table: u8,
    scale: Scale,
    seeds: &[u64],
    adjust: &dyn Fn(&mut RunSpec),
    out: Option<&Path>,
    jobs: usize,
    log: &(dyn Fn(&str) + Sync),
) -> Result<(String, Vec<(TableCell, EvalReport)>), TrainError> {
    let cells = table_cells(table).ok_or_else(|| TrainError::Config(format!("no table {table}")))?;
    let mut results = Vec::new();
    for cell in cells {
        let mut spec = RunSpec::at_scale(cell.experiment, cell.variant, scale, seeds.to_vec());
        adjust(&mut spec);
        let (_, report) = run_experiment(&spec, out, jobs, log)?;
        results.push((cell, report));
    }
    Ok((render_table(table, &results), results))
}
