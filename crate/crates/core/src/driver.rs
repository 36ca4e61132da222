//! Experiment driver behind the `cluster-adapt` binary.
//!
//! Each mode consumes a [`RunConfig`] (config file plus flag overrides) and
//! writes its artifacts under `--out`:
//!
//! - `gen-data` — `dataset.csv` with a `dataset.meta.json` provenance sidecar
//! - `s`, `s+t`, `adapt` — `model.ckpt`, `history.json`, `history.csv`,
//!   `metrics.json`
//! - `ablate` — the same trio per clustering variant (`model-KM.ckpt`, ...)
//!   plus one combined `metrics.json`
//! - `eval` — `metrics.json` for an existing checkpoint
//! - `report` — `report.txt` and `report.json` aggregated over many runs
//!
//! Every JSON artifact embeds the resolved configuration (seed included) so
//! results stay traceable to the invocation that produced them; plain-text
//! artifacts get the same via their JSON sibling. Runs are deterministic:
//! the same config and seed reproduce every artifact byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapt::{
    self, AdaptConfig, AdaptError, RoundRecord, RunHistory, StopReason,
};
use crate::config::{ConfigError, Mode, RunConfig};
use crate::data::{self, Dataset, Domain, Split};
use crate::metrics::{ConfusionMatrix, MetricReport};
use crate::nn::{self, Model};
use crate::wsclust::ClusteringVariant;

/// Failure surfaced to the shell. Bad invocations exit with code 1,
/// failures during an otherwise well-formed run with code 2.
#[derive(Debug, Error)]
pub enum DriverError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl DriverError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for DriverError {
    fn from(e: ConfigError) -> Self {
        Self::Usage(e.to_string())
    }
}

/// Renders an error with its full cause chain, skipping layers a message
/// already restates, so file paths and root causes survive to the shell.
fn describe(top: &dyn std::error::Error) -> String {
    let mut msg = top.to_string();
    let mut source = top.source();
    while let Some(e) = source {
        let part = e.to_string();
        if !msg.contains(&part) {
            msg.push_str(": ");
            msg.push_str(&part);
        }
        source = e.source();
    }
    msg
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for DriverError {
            fn from(e: $ty) -> Self {
                Self::Runtime(describe(&e))
            }
        }
    )*};
}

runtime_from!(
    crate::data::DataError,
    crate::nn::NnError,
    crate::adapt::AdaptError,
    crate::metrics::MetricsError
);

/// Parses the command line and executes the selected mode.
pub fn run(args: &[String]) -> Result<(), DriverError> {
    let cfg = RunConfig::from_args(args)?;
    run_with(&cfg)
}

/// Executes one mode with an already-resolved configuration.
pub fn run_with(cfg: &RunConfig) -> Result<(), DriverError> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| DriverError::Runtime(format!("{}: {e}", cfg.out.display())))?;
    match cfg.mode {
        Mode::GenData => generate_data(cfg),
        Mode::S => train_source_only(cfg),
        Mode::SPlusT => train_source_plus_target(cfg),
        Mode::Adapt => run_adaptation(cfg),
        Mode::Ablate => run_ablation(cfg),
        Mode::Eval => evaluate_checkpoint(cfg),
        Mode::Report => aggregate_report(cfg),
    }
}

pub fn usage() -> &'static str {
    "cluster-adapt - cluster-guided semi-supervised domain adaptation

usage: cluster-adapt [--config FILE] [--KEY VALUE | --KEY=VALUE]...

modes (--mode):
  gen-data  synthesize a shifted, imbalanced two-domain dataset -> dataset.csv
  s         source-only baseline: pretrain, then evaluate
  s+t       source + labeled-target fine-tuning baseline
  adapt     cluster-guided adaptation with the full clustering pipeline
  ablate    adapt once per clustering variant (KM, SoftConst, Full)
  eval      score --checkpoint against a dataset -> metrics.json
  report    aggregate --inputs metrics files -> report.txt, report.json

common flags:
  --config FILE         flat key=value file; flags override file entries
  --seed N              master seed for every random choice (default 0)
  --out DIR             artifact directory (default runs/)
  --data FILE.csv       use this dataset instead of synthesizing one
  --checkpoint FILE     model to score in eval mode
  --inputs A,B,...      metrics.json files or run directories for report mode
  --labeled-fraction F  share of target training samples keeping labels
  --k N  --lambda F  --margin F  --max-rounds N  --patience N  ...

Every config key doubles as a flag in kebab-case (file key pareto_alpha
becomes --pareto-alpha). Training modes write model.ckpt, history.json,
history.csv, and metrics.json under --out; each JSON artifact embeds the
resolved config and seed.

exit codes: 0 success, 1 usage error, 2 runtime failure
"
}

/// `history.json`: the run history with the producing config attached.
#[derive(Serialize)]
struct HistoryArtifact<'a> {
    config: &'a RunConfig,
    #[serde(flatten)]
    history: &'a RunHistory,
}

/// `metrics.json`: one report per evaluated method (several for `ablate`).
#[derive(Serialize, Deserialize)]
struct MetricsArtifact {
    config: RunConfig,
    reports: Vec<MetricReport>,
}

fn write_text(path: &Path, text: &str) -> Result<(), DriverError> {
    fs::write(path, text).map_err(|e| DriverError::Runtime(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), DriverError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| DriverError::Runtime(format!("{}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

fn provenance(cfg: &RunConfig) -> serde_json::Value {
    serde_json::json!({ "config": cfg })
}

/// Loads `--data` when given, otherwise synthesizes the seeded benchmark.
fn obtain_dataset(cfg: &RunConfig) -> Result<Dataset, DriverError> {
    match &cfg.data {
        Some(path) => Ok(data::load_dataset(path)?),
        None => {
            let full = data::generate_synthetic(&cfg.synth_config())?;
            Ok(data::split_target(&full, cfg.labeled_fraction, cfg.seed)?)
        }
    }
}

/// A freshly initialized model sized for the dataset at hand: the
/// configured hidden/embedding widths, but input dimension and class count
/// taken from the data so loaded CSVs work unchanged.
fn fresh_model(cfg: &RunConfig, ds: &Dataset) -> Result<Model, DriverError> {
    let mut dims = cfg.model_dims();
    dims[0] = ds.dim();
    Ok(Model::new(&dims, ds.num_classes(), cfg.seed)?)
}

/// Scores a model on the target test split against ground truth.
fn evaluate(model: &Model, ds: &Dataset, method: &str) -> Result<MetricReport, DriverError> {
    let view = ds.eval_view();
    let scored: Vec<usize> = ds
        .split_of(Domain::Target, Split::Test)
        .into_iter()
        .filter(|&i| view.truth(i).is_some())
        .collect();
    if scored.is_empty() {
        return Err(DriverError::Runtime(
            "no target test samples with ground truth to evaluate".into(),
        ));
    }
    let preds = model.predict_batch(&ds.features_matrix(&scored))?;
    let truths = scored.iter().map(|&i| view.truth(i).expect("filtered above"));
    let cm = ConfusionMatrix::from_pairs(ds.num_classes(), truths.zip(preds))?;
    Ok(MetricReport::from_confusion(method, &cm))
}

/// Validation mDice under the run's validation plan, for modes that train
/// without the round loop and so never record one themselves.
fn validation_mdice(model: &Model, ds: &Dataset, cfg: &AdaptConfig) -> Result<f64, DriverError> {
    let plan = adapt::validation_plan(ds, cfg)?;
    let preds = model.predict_batch(&ds.features_matrix(&plan.val))?;
    let pairs = plan.val_labels.iter().copied().zip(preds);
    let cm = ConfusionMatrix::from_pairs(ds.num_classes(), pairs)?;
    Ok(cm.mdice().unwrap_or(0.0))
}

fn stop_name(stop: StopReason) -> &'static str {
    match stop {
        StopReason::Patience => "patience",
        StopReason::MaxRounds => "max-rounds",
        StopReason::Incomplete => "incomplete",
    }
}

fn summary_line(history: &RunHistory) -> String {
    format!(
        "best round {} of {} (val mdice {:.4}, stop: {})",
        history.best_round,
        history.rounds.len(),
        history.best_val_mdice,
        stop_name(history.stop),
    )
}

/// Purity recorded at the best round, when clustering ran.
fn best_purity(history: &RunHistory) -> Option<f64> {
    let index = history.best_round.checked_sub(1)?;
    history.rounds.get(index).and_then(|r| r.purity)
}

fn write_history(
    out: &Path,
    cfg: &RunConfig,
    stem: &str,
    history: &RunHistory,
) -> Result<(), DriverError> {
    write_json(
        &out.join(format!("{stem}.json")),
        &HistoryArtifact { config: cfg, history },
    )?;
    history.write_csv(out.join(format!("{stem}.csv")))?;
    Ok(())
}

/// Unwraps a round-loop result, persisting the partial history when a round
/// failed so the aborted run stays inspectable.
fn unwrap_rounds(
    result: Result<(Model, RunHistory), AdaptError>,
    cfg: &RunConfig,
    stem: &str,
) -> Result<(Model, RunHistory), DriverError> {
    match result {
        Ok(pair) => Ok(pair),
        Err(AdaptError::RoundFailed { round, source, history }) => {
            write_history(&cfg.out, cfg, stem, &history)?;
            Err(DriverError::Runtime(format!(
                "round {round} failed: {} (history up to the failure written to {})",
                describe(source.as_ref()),
                cfg.out.join(format!("{stem}.json")).display(),
            )))
        }
        Err(e) => Err(e.into()),
    }
}

/// Checkpoint + history + metrics for one trained model.
fn finish_training_run(
    cfg: &RunConfig,
    ds: &Dataset,
    model: &Model,
    history: &RunHistory,
    method: &str,
    purity: Option<f64>,
) -> Result<(), DriverError> {
    nn::save_checkpoint_with_provenance(
        model,
        cfg.out.join("model.ckpt"),
        Some(provenance(cfg)),
    )?;
    write_history(&cfg.out, cfg, "history", history)?;
    let mut report = evaluate(model, ds, method)?;
    report.purity = purity;
    write_json(
        &cfg.out.join("metrics.json"),
        &MetricsArtifact { config: cfg.clone(), reports: vec![report.clone()] },
    )?;
    println!("{report}");
    println!("{}", summary_line(history));
    println!("artifacts in {}", cfg.out.display());
    Ok(())
}

fn generate_data(cfg: &RunConfig) -> Result<(), DriverError> {
    let full = data::generate_synthetic(&cfg.synth_config())?;
    let ds = data::split_target(&full, cfg.labeled_fraction, cfg.seed)?;
    let path = cfg.out.join("dataset.csv");
    data::save_dataset(&ds, &path)?;
    write_json(&cfg.out.join("dataset.meta.json"), &provenance(cfg))?;
    println!(
        "dataset: {} samples, {} classes, {} features -> {}",
        ds.len(),
        ds.num_classes(),
        ds.dim(),
        path.display(),
    );
    println!("  source train: {}", ds.source_train().len());
    println!(
        "  target train: {} labeled + {} unlabeled",
        ds.target_labeled().len(),
        ds.target_unlabeled().len(),
    );
    println!(
        "  target test:  {}",
        ds.split_of(Domain::Target, Split::Test).len(),
    );
    Ok(())
}

fn train_source_only(cfg: &RunConfig) -> Result<(), DriverError> {
    let ds = obtain_dataset(cfg)?;
    let acfg = cfg.adapt_config();
    let model = fresh_model(cfg, &ds)?;
    let (model, losses) = adapt::pretrain_source(&model, &ds, &acfg)?;
    let val_mdice = validation_mdice(&model, &ds, &acfg)?;
    // No round loop here, so the history is a single summary record of the
    // fixed pretraining schedule.
    let history = RunHistory {
        rounds: vec![RoundRecord {
            round: 1,
            loss_ce: losses.last().copied().unwrap_or(0.0),
            loss_triplet: None,
            val_mdice,
            k: None,
            purity: None,
        }],
        best_round: 1,
        best_val_mdice: val_mdice,
        stop: StopReason::MaxRounds,
    };
    finish_training_run(cfg, &ds, &model, &history, "S", None)
}

fn train_source_plus_target(cfg: &RunConfig) -> Result<(), DriverError> {
    let ds = obtain_dataset(cfg)?;
    let acfg = cfg.adapt_config();
    let model = fresh_model(cfg, &ds)?;
    let (model, _) = adapt::pretrain_source(&model, &ds, &acfg)?;
    let (model, history) = unwrap_rounds(adapt::fine_tune_ce(&model, &ds, &acfg), cfg, "history")?;
    finish_training_run(cfg, &ds, &model, &history, "S+T", None)
}

fn run_adaptation(cfg: &RunConfig) -> Result<(), DriverError> {
    let ds = obtain_dataset(cfg)?;
    let acfg = cfg.adapt_config();
    let model = fresh_model(cfg, &ds)?;
    let (model, _) = adapt::pretrain_source(&model, &ds, &acfg)?;
    let (model, history) = unwrap_rounds(adapt::adapt(&model, &ds, &acfg), cfg, "history")?;
    let purity = best_purity(&history);
    finish_training_run(cfg, &ds, &model, &history, "Adapt", purity)
}

fn run_ablation(cfg: &RunConfig) -> Result<(), DriverError> {
    let ds = obtain_dataset(cfg)?;
    let acfg = cfg.adapt_config();
    let model = fresh_model(cfg, &ds)?;
    let (pretrained, _) = adapt::pretrain_source(&model, &ds, &acfg)?;
    let mut reports = Vec::new();
    for variant in ClusteringVariant::ALL {
        let tag = variant.tag();
        let stem = format!("history-{tag}");
        let (model, history) = unwrap_rounds(
            adapt::adapt_with_variant(&pretrained, &ds, &acfg, variant),
            cfg,
            &stem,
        )?;
        nn::save_checkpoint_with_provenance(
            &model,
            cfg.out.join(format!("model-{tag}.ckpt")),
            Some(provenance(cfg)),
        )?;
        write_history(&cfg.out, cfg, &stem, &history)?;
        let mut report = evaluate(&model, &ds, tag)?;
        report.purity = best_purity(&history);
        println!("{report}");
        println!("{}", summary_line(&history));
        println!();
        reports.push(report);
    }
    write_json(
        &cfg.out.join("metrics.json"),
        &MetricsArtifact { config: cfg.clone(), reports },
    )?;
    println!("artifacts in {}", cfg.out.display());
    Ok(())
}

fn evaluate_checkpoint(cfg: &RunConfig) -> Result<(), DriverError> {
    let Some(ckpt) = &cfg.checkpoint else {
        return Err(DriverError::Usage(
            "mode 'eval' requires --checkpoint <model.ckpt>".into(),
        ));
    };
    let model = nn::load_checkpoint(ckpt)?;
    let ds = obtain_dataset(cfg)?;
    let report = evaluate(&model, &ds, "Eval")?;
    write_json(
        &cfg.out.join("metrics.json"),
        &MetricsArtifact { config: cfg.clone(), reports: vec![report.clone()] },
    )?;
    println!("{report}");
    Ok(())
}

/// Per-method aggregate in `report.json`.
#[derive(Serialize)]
struct MethodSummary {
    runs: usize,
    seeds: Vec<u64>,
    mdice_mean: Option<f64>,
    mdice_std: Option<f64>,
    midice_mean: Option<f64>,
    midice_std: Option<f64>,
}

/// Pairwise mdice comparison over the seeds two methods share.
#[derive(Serialize)]
struct HeadToHead {
    a: String,
    b: String,
    shared_seeds: usize,
    a_wins: usize,
    b_wins: usize,
    ties: usize,
}

#[derive(Serialize)]
struct ReportArtifact<'a> {
    config: &'a RunConfig,
    methods: &'a BTreeMap<String, MethodSummary>,
    head_to_head: &'a [HeadToHead],
}

/// Population mean and standard deviation.
fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Expands `--inputs` entries: files are taken as-is, directories search
/// `DIR/metrics.json` and `DIR/*/metrics.json` (one run per subdirectory).
fn gather_metric_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, DriverError> {
    if inputs.is_empty() {
        return Err(DriverError::Usage(
            "mode 'report' requires --inputs <metrics.json or run dir,...>".into(),
        ));
    }
    let io = |path: &Path| {
        let shown = path.display().to_string();
        move |e: std::io::Error| DriverError::Runtime(format!("{shown}: {e}"))
    };
    let mut files = Vec::new();
    for input in inputs {
        if !input.is_dir() {
            files.push(input.clone());
            continue;
        }
        let mut found = Vec::new();
        let direct = input.join("metrics.json");
        if direct.is_file() {
            found.push(direct);
        }
        for entry in fs::read_dir(input).map_err(io(input))? {
            let nested = entry.map_err(io(input))?.path().join("metrics.json");
            if nested.is_file() {
                found.push(nested);
            }
        }
        if found.is_empty() {
            return Err(DriverError::Runtime(format!(
                "{}: no metrics.json found",
                input.display(),
            )));
        }
        found.sort();
        files.extend(found);
    }
    Ok(files)
}

fn aggregate_report(cfg: &RunConfig) -> Result<(), DriverError> {
    let files = gather_metric_files(&cfg.inputs)?;
    // method -> seed -> (mdice, midice); later files win on seed collisions.
    let mut scores: BTreeMap<String, BTreeMap<u64, (Option<f64>, Option<f64>)>> = BTreeMap::new();
    for path in &files {
        let text = fs::read_to_string(path)
            .map_err(|e| DriverError::Runtime(format!("{}: {e}", path.display())))?;
        let artifact: MetricsArtifact = serde_json::from_str(&text)
            .map_err(|e| DriverError::Runtime(format!("{}: {e}", path.display())))?;
        for report in artifact.reports {
            scores
                .entry(report.method)
                .or_default()
                .insert(artifact.config.seed, (report.mdice, report.midice));
        }
    }

    let methods: BTreeMap<String, MethodSummary> = scores
        .iter()
        .map(|(name, by_seed)| {
            let collect = |pick: fn(&(Option<f64>, Option<f64>)) -> Option<f64>| {
                by_seed.values().filter_map(pick).collect::<Vec<f64>>()
            };
            let mdice = mean_std(&collect(|v| v.0));
            let midice = mean_std(&collect(|v| v.1));
            let summary = MethodSummary {
                runs: by_seed.len(),
                seeds: by_seed.keys().copied().collect(),
                mdice_mean: mdice.map(|(m, _)| m),
                mdice_std: mdice.map(|(_, s)| s),
                midice_mean: midice.map(|(m, _)| m),
                midice_std: midice.map(|(_, s)| s),
            };
            (name.clone(), summary)
        })
        .collect();

    let names: Vec<&String> = scores.keys().collect();
    let mut head_to_head = Vec::new();
    for (i, &a) in names.iter().enumerate() {
        for &b in &names[i + 1..] {
            let (mut a_wins, mut b_wins, mut ties, mut shared) = (0, 0, 0, 0);
            for (seed, &(a_mdice, _)) in &scores[a] {
                let Some(&(b_mdice, _)) = scores[b].get(seed) else {
                    continue;
                };
                let (Some(x), Some(y)) = (a_mdice, b_mdice) else {
                    continue;
                };
                shared += 1;
                match x.partial_cmp(&y).expect("finite metric values") {
                    std::cmp::Ordering::Greater => a_wins += 1,
                    std::cmp::Ordering::Less => b_wins += 1,
                    std::cmp::Ordering::Equal => ties += 1,
                }
            }
            head_to_head.push(HeadToHead {
                a: a.clone(),
                b: b.clone(),
                shared_seeds: shared,
                a_wins,
                b_wins,
                ties,
            });
        }
    }

    let text = render_report(&methods, &head_to_head, &files);
    write_text(&cfg.out.join("report.txt"), &text)?;
    write_json(
        &cfg.out.join("report.json"),
        &ReportArtifact { config: cfg, methods: &methods, head_to_head: &head_to_head },
    )?;
    print!("{text}");
    Ok(())
}

fn render_report(
    methods: &BTreeMap<String, MethodSummary>,
    head_to_head: &[HeadToHead],
    files: &[PathBuf],
) -> String {
    let spread = |mean: Option<f64>, std: Option<f64>| match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.4} +/- {s:.4}"),
        _ => "-".into(),
    };
    let name_width = methods
        .keys()
        .map(String::len)
        .chain(["method".len()])
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<name_width$}  {:>4}  {:<17}  {:<17}\n",
        "method", "runs", "mdice", "midice",
    ));
    for (name, s) in methods {
        out.push_str(&format!(
            "{name:<name_width$}  {:>4}  {:<17}  {:<17}\n",
            s.runs,
            spread(s.mdice_mean, s.mdice_std),
            spread(s.midice_mean, s.midice_std),
        ));
    }
    if !head_to_head.is_empty() {
        out.push_str("\nhead-to-head by mdice over shared seeds:\n");
        for d in head_to_head {
            out.push_str(&format!(
                "  {} vs {}: {}-{}-{} (win-tie-loss over {} seeds)\n",
                d.a, d.b, d.a_wins, d.ties, d.b_wins, d.shared_seeds,
            ));
        }
    }
    out.push_str(&format!("\naggregated from {} metrics files:\n", files.len()));
    for f in files {
        out.push_str(&format!("  {}\n", f.display()));
    }
    out
}
