//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage and input errors, 3 when the
//! numerics fail. Failures print one line to stderr of the form
//! `error kind=<Kind> code=<n> message="..."`.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::classify::{evaluate, Classifier, FusedClassifier, PrototypeClassifier};
use crate::data::{
    build_structure_target, class_counts, load_data, load_labels, normalize_columns,
    one_hot_labels, random_projection, save_labels, save_matrix, synth_dataset, LabeledDataset,
};
use crate::distributed::{train_dsadl, DsadlOutput};
use crate::error::SadlError;
use crate::model::{DataMatrix, Mat, ModelState, Problem, TrainTrace};
use crate::solver::train_sadl;

use config::{expand_grid, parse_flat, preset_names, preset_text, read_config_file, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Sadl(SadlError),
}

impl From<SadlError> for CliError {
    fn from(e: SadlError) -> Self {
        CliError::Sadl(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Sadl(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "Usage",
            CliError::Sadl(e) => e.kind(),
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Sadl(e) => e.to_string(),
        }
    }

    /// The machine-readable stderr line.
    pub fn line(&self) -> String {
        format!(
            "error kind={} code={} message={:?}",
            self.kind(),
            self.exit_code(),
            self.message()
        )
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sadl", version, about = "Structured analysis dictionary learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on one machine.
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Train(Flags),
    /// Train with consensus averaging over column shards.
    #[command(args_override_self = true, allow_negative_numbers = true)]
    TrainDist(Flags),
    /// Write predicted labels and scores for a feature matrix.
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Predict(Flags),
    /// Accuracy, confusion matrix and per-sample timing on labelled data.
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Eval(Flags),
    /// Compare structure-only, label-only and full training.
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Ablate(Flags),
    /// Generate the union-of-subspaces benchmark.
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Synth(Flags),
    /// Train and export every per-iteration diagnostic.
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Trace(Flags),
}

impl Command {
    fn flags(&self) -> &Flags {
        match self {
            Command::Train(f)
            | Command::TrainDist(f)
            | Command::Predict(f)
            | Command::Eval(f)
            | Command::Ablate(f)
            | Command::Synth(f)
            | Command::Trace(f) => f,
        }
    }
}

/// Every flag maps onto the [`RunConfig`] key of the same name.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Flags {
    /// Named preset applied before the config file.
    #[arg(long)]
    #[serde(skip)]
    pub preset: Option<String>,
    /// Config file, flat `key = value` or JSON.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    #[serde(skip)]
    pub print_config: bool,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<PathBuf>,
    /// One-based labels, one per line.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_x: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    /// Directory holding a trained model.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_in: Option<PathBuf>,
    /// Directory for the trained model (defaults to --out-dir).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,

    /// Dictionary size r.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atoms: Option<usize>,
    /// Rows s of the structure target.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub structure_rows: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// `auto` or `eta_u,eta_q,eta_w`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<String>,
    /// Safety margin on automatic step sizes.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    /// Iteration budget p.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// `consistent` or `literal` slack and dual updates.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub form: Option<String>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi3: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth_rho: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_max: Option<f64>,
    /// Worker threads; 0 means one per cluster.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Scale every sample to unit norm, in training and at prediction time.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalize: Option<bool>,
    /// Apply a seeded random projection to this many dimensions first.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projection_dim: Option<usize>,
    /// Also write U, the slacks and the multipliers.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub save_state: Option<bool>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subspace_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ambient_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    /// `normal` or `folded-normal`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<String>,

    /// Cross-validation grid, e.g. `lambda1=0.001,0.01;lambda2=0.005,0.05`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv_folds: Option<usize>,
}

/// Defaults, then preset, then config file, then flags.
pub fn resolve(flags: &Flags) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(name) = &flags.preset {
        let text = preset_text(name).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown preset {name:?}; available: {}",
                preset_names().join(", ")
            ))
        })?;
        cfg = cfg.merged(parse_flat(text, name)?, &format!("preset {name}"))?;
    }
    if let Some(path) = &flags.config {
        cfg = cfg.merged(read_config_file(path)?, &path.display().to_string())?;
    }
    let given = match serde_json::to_value(flags).expect("flags serialize") {
        Value::Object(m) => m,
        _ => unreachable!("flags are a struct"),
    };
    cfg.merged(given, "command line")
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}

pub fn run(command: &Command) -> CliResult<()> {
    let cfg = resolve(command.flags())?;
    if command.flags().print_config {
        print!("{}", cfg.to_flat());
        return Ok(());
    }
    match command {
        Command::Train(_) => cmd_train(&cfg),
        Command::TrainDist(_) => cmd_train_dist(&cfg),
        Command::Predict(_) => cmd_predict(&cfg),
        Command::Eval(_) => cmd_eval(&cfg),
        Command::Ablate(_) => cmd_ablate(&cfg),
        Command::Synth(_) => cmd_synth(&cfg),
        Command::Trace(_) => cmd_trace(&cfg),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Sadl(SadlError::Io { path: dir.into(), source: e }))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text)
        .map_err(|e| CliError::Sadl(SadlError::Io { path: path.into(), source: e }))
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    write_text(path, &text)
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Sadl(SadlError::Io { path: path.into(), source: e }))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Sadl(SadlError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    })
}

/// Feature preprocessing recorded with a model so prediction repeats it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub input_features: usize,
    pub projection_dim: Option<usize>,
    pub projection_seed: u64,
    pub normalize: bool,
}

impl Preprocess {
    /// No projection, no normalization.
    pub fn identity(input_features: usize) -> Self {
        Preprocess { input_features, projection_dim: None, projection_seed: 0, normalize: false }
    }

    fn from_config(cfg: &RunConfig, input_features: usize) -> Self {
        Preprocess {
            input_features,
            projection_dim: cfg.projection_dim,
            projection_seed: cfg.seed,
            normalize: cfg.normalize,
        }
    }

    pub fn apply(&self, x: &DataMatrix) -> CliResult<DataMatrix> {
        if x.features() != self.input_features {
            return Err(SadlError::DimensionMismatch(format!(
                "model expects {} input features, data has {}",
                self.input_features,
                x.features()
            ))
            .into());
        }
        let mut out = match self.projection_dim {
            Some(d) => random_projection(x, d, self.projection_seed)?,
            None => x.clone(),
        };
        if self.normalize {
            out = normalize_columns(&out);
        }
        Ok(out)
    }
}

fn load_labeled(x: &Path, labels: &Path, classes: Option<usize>) -> CliResult<LabeledDataset> {
    let data = load_data(x)?;
    let labels = load_labels(labels)?;
    let c = match classes {
        Some(c) => c,
        None => labels.iter().copied().max().map_or(0, |m| m + 1),
    };
    Ok(LabeledDataset::new(data, labels, c)?)
}

struct TrainingSet {
    data: LabeledDataset,
    pre: Preprocess,
}

fn training_set(cfg: &RunConfig) -> CliResult<TrainingSet> {
    let x = cfg.require(&cfg.x, "x")?;
    let labels = cfg.require(&cfg.labels, "labels")?;
    let raw = load_labeled(x, labels, None)?;
    let pre = Preprocess::from_config(cfg, raw.x.features());
    let data = LabeledDataset::new(pre.apply(&raw.x)?, raw.labels, raw.class_count)?;
    Ok(TrainingSet { data, pre })
}

fn test_set(cfg: &RunConfig, pre: &Preprocess, classes: usize) -> CliResult<Option<LabeledDataset>> {
    match (&cfg.test_x, &cfg.test_labels) {
        (Some(x), Some(l)) => {
            let raw = load_labeled(x, l, Some(classes))?;
            Ok(Some(LabeledDataset::new(pre.apply(&raw.x)?, raw.labels, classes)?))
        }
        (None, None) => Ok(None),
        _ => Err(CliError::Usage("--test-x and --test-labels go together".into())),
    }
}

fn full_problem(cfg: &RunConfig, data: &LabeledDataset) -> CliResult<Problem> {
    let h = build_structure_target(&data.labels, data.class_count, None, cfg.structure_rows)?;
    let y = one_hot_labels(&data.labels, data.class_count)?;
    Ok(Problem::new(&data.x, &h, &y)?)
}

fn atoms(cfg: &RunConfig, data: &LabeledDataset) -> CliResult<usize> {
    match cfg.atoms {
        Some(0) => Err(CliError::Usage("--atoms must be >= 1".into())),
        Some(r) => Ok(r),
        None => Ok(data.x.features()),
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

pub const TRACE_HEADER: &str = "iter,lagrangian,res_h,res_y,dualgap1,dualgap2,max_delta";

fn trace_csv(trace: &TrainTrace, with_gap: bool) -> String {
    let mut out = String::from(TRACE_HEADER);
    if with_gap {
        out.push_str(",consensus_gap");
    }
    out.push('\n');
    for r in &trace.records {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            r.iter,
            fmt_f(r.lagrangian),
            fmt_f(r.res_h),
            fmt_f(r.res_y),
            fmt_f(r.dual_gap1),
            fmt_f(r.dual_gap2),
            fmt_f(r.max_delta())
        );
        if with_gap {
            let _ = write!(out, ",{}", fmt_f(r.consensus_gap));
        }
        out.push('\n');
    }
    out
}

fn full_trace_csv(trace: &TrainTrace) -> String {
    let mut out = String::from(
        "iter,lagrangian,res_h,res_y,dualgap1,dualgap2,d_omega,d_u,d_q,d_w,d_eps1,d_eps2,d_z1,d_z2,eta_u,eta_q,eta_w,max_delta\n",
    );
    let _ = writeln!(out, "0,{},,,,,,,,,,,,,,,,", fmt_f(trace.initial_lagrangian));
    for r in &trace.records {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            r.iter,
            fmt_f(r.lagrangian),
            fmt_f(r.res_h),
            fmt_f(r.res_y),
            fmt_f(r.dual_gap1),
            fmt_f(r.dual_gap2)
        );
        for d in r.deltas {
            let _ = write!(out, ",{}", fmt_f(d));
        }
        let _ = writeln!(
            out,
            ",{},{},{},{}",
            fmt_f(r.steps.eta_u),
            fmt_f(r.steps.eta_q),
            fmt_f(r.steps.eta_w),
            fmt_f(r.max_delta())
        );
    }
    out
}

fn write_model(dir: &Path, omega: &Mat, q: &Mat, w: &Mat, manifest: &Value) -> CliResult<()> {
    create_dir(dir)?;
    save_matrix(&dir.join("omega.bin"), omega)?;
    save_matrix(&dir.join("q.bin"), q)?;
    save_matrix(&dir.join("w.bin"), w)?;
    write_json(&dir.join("model.json"), manifest)
}

fn write_state(dir: &Path, state: &ModelState) -> CliResult<()> {
    for (name, m) in state.variables() {
        if !matches!(name, "omega" | "q" | "w") {
            save_matrix(&dir.join(format!("{name}.bin")), m)?;
        }
    }
    Ok(())
}

/// Writes `omega.bin`, `q.bin`, `w.bin` and `model.json` into `dir`, in the
/// layout [`load_model`] reads.
pub fn save_model(dir: &Path, classifier: &Classifier, pre: &Preprocess, seed: u64) -> CliResult<()> {
    let manifest = json!({
        "format": "sadl-model-1",
        "classes": classifier.w.nrows(),
        "atoms": classifier.omega.nrows(),
        "features": classifier.omega.ncols(),
        "structure_rows": classifier.q.nrows(),
        "preprocess": pre,
        "seed": seed,
    });
    write_model(dir, &classifier.omega, &classifier.q, &classifier.w, &manifest)
}

/// A model directory as written by `train` or `train-dist`.
pub struct LoadedModel {
    pub classifier: Classifier,
    pub pre: Preprocess,
}

pub fn load_model(dir: &Path) -> CliResult<LoadedModel> {
    let omega = crate::data::load_matrix(&dir.join("omega.bin"))?;
    let q = crate::data::load_matrix(&dir.join("q.bin"))?;
    let w = crate::data::load_matrix(&dir.join("w.bin"))?;
    let manifest_path = dir.join("model.json");
    let manifest = read_json(&manifest_path)?;
    let pre: Preprocess = serde_json::from_value(manifest["preprocess"].clone()).map_err(|e| {
        CliError::Sadl(SadlError::InvalidData(format!("{}: {e}", manifest_path.display())))
    })?;
    Ok(LoadedModel { classifier: Classifier::new(omega, q, w)?, pre })
}

fn accuracy_of(model: &dyn crate::classify::Predictor, data: &LabeledDataset) -> CliResult<f64> {
    Ok(evaluate(model, &data.x, &data.labels)?.accuracy)
}

fn train_centralized(
    cfg: &RunConfig,
    data: &LabeledDataset,
) -> CliResult<(ModelState, TrainTrace)> {
    let hyper = cfg.hyperparams()?;
    let problem = full_problem(cfg, data)?;
    let init = ModelState::init(problem.dims(atoms(cfg, data)?), cfg.seed);
    Ok(train_sadl(&problem, init, &hyper)?)
}

/// Stratified fold index of every sample.
fn fold_assignment(labels: &[usize], classes: usize, folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut rng = crate::model::seeded_rng(seed);
    let mut fold = vec![0; labels.len()];
    for k in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == k).collect();
        members.shuffle(&mut rng);
        for (i, j) in members.into_iter().enumerate() {
            fold[j] = i % folds;
        }
    }
    fold
}

/// Mean held-out accuracy of every grid point; returns the best config.
fn cross_validate(cfg: &RunConfig, data: &LabeledDataset, out_dir: &Path) -> CliResult<RunConfig> {
    let spec = cfg.grid.as_deref().expect("caller checked the grid");
    let candidates = expand_grid(spec)?;
    let folds = cfg.cv_folds;
    let smallest = class_counts(&data.labels, data.class_count).into_iter().min().unwrap_or(0);
    if folds < 2 || smallest < folds {
        return Err(CliError::Usage(format!(
            "--cv-folds {folds} needs at least 2 folds and that many samples per class (smallest class has {smallest})"
        )));
    }
    let fold = fold_assignment(&data.labels, data.class_count, folds, cfg.seed);
    let keys: Vec<String> = candidates[0].iter().map(|(k, _)| k.clone()).collect();
    let mut table = keys.join(",");
    table.push_str(",mean_accuracy\n");
    let mut best: Option<(f64, RunConfig)> = None;
    for cand in candidates {
        let trial = cfg.merged(cand.clone(), "grid")?;
        let mut total = 0.0;
        for f in 0..folds {
            let train_idx: Vec<usize> = (0..fold.len()).filter(|&j| fold[j] != f).collect();
            let held_idx: Vec<usize> = (0..fold.len()).filter(|&j| fold[j] == f).collect();
            let train = data.select(&train_idx);
            let held = data.select(&held_idx);
            let (state, _) = train_centralized(&trial, &train)?;
            total += accuracy_of(&FusedClassifier::new(&Classifier::from_state(&state)), &held)?;
        }
        let mean = total / folds as f64;
        let values: Vec<String> = cand
            .iter()
            .map(|(_, v)| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect();
        let _ = writeln!(table, "{},{}", values.join(","), fmt_f(mean));
        if best.as_ref().is_none_or(|(b, _)| mean > *b) {
            best = Some((mean, trial));
        }
    }
    write_text(&out_dir.join("cv.csv"), &table)?;
    let (_, chosen) = best.expect("grid has at least one point");
    Ok(chosen)
}

fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    let set = training_set(cfg)?;
    create_dir(&cfg.out_dir)?;
    let cfg = if cfg.grid.is_some() {
        cross_validate(cfg, &set.data, &cfg.out_dir)?
    } else {
        cfg.clone()
    };
    let test = test_set(&cfg, &set.pre, set.data.class_count)?;
    let (state, trace) = train_centralized(&cfg, &set.data)?;

    let model_dir = cfg.model_out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    save_model(&model_dir, &Classifier::from_state(&state), &set.pre, cfg.seed)?;
    if cfg.save_state {
        write_state(&model_dir, &state)?;
    }
    write_text(&cfg.out_dir.join("trace.csv"), &trace_csv(&trace, false))?;
    write_text(&cfg.out_dir.join("config.txt"), &cfg.to_flat())?;

    let model = FusedClassifier::new(&Classifier::from_state(&state));
    let mut summary = Map::new();
    summary.insert("iterations".into(), json!(trace.records.len()));
    summary.insert("converged".into(), json!(trace.converged));
    summary.insert("initial_lagrangian".into(), json!(trace.initial_lagrangian));
    summary.insert(
        "final_lagrangian".into(),
        json!(trace.records.last().map_or(trace.initial_lagrangian, |r| r.lagrangian)),
    );
    summary.insert("train_accuracy".into(), json!(accuracy_of(&model, &set.data)?));
    if let Some(test) = &test {
        summary.insert("test_accuracy".into(), json!(accuracy_of(&model, test)?));
    }
    write_json(&cfg.out_dir.join("summary.json"), &Value::Object(summary.clone()))?;
    println!("{}", Value::Object(summary));
    Ok(())
}

fn rounds_csv(out: &DsadlOutput) -> String {
    let mut s = String::from("iter,mu,xi1,xi2,xi3,global_delta,consensus_gap\n");
    for r in &out.rounds {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.iter,
            fmt_f(r.mu),
            fmt_f(r.xi[0]),
            fmt_f(r.xi[1]),
            fmt_f(r.xi[2]),
            fmt_f(r.global_delta),
            fmt_f(r.consensus_gap)
        );
    }
    s
}

fn cmd_train_dist(cfg: &RunConfig) -> CliResult<()> {
    let set = training_set(cfg)?;
    let dist = cfg.dist_hyperparams()?;
    let test = test_set(cfg, &set.pre, set.data.class_count)?;
    let problem = full_problem(cfg, &set.data)?;
    let out = train_dsadl(&problem, atoms(cfg, &set.data)?, &dist)?;

    create_dir(&cfg.out_dir)?;
    let g = &out.globals;
    let model_dir = cfg.model_out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let global_model = Classifier::new(g.omega.clone(), g.q.clone(), g.w.clone())?;
    save_model(&model_dir, &global_model, &set.pre, cfg.seed)?;
    for (t, trace) in out.worker_traces.iter().enumerate() {
        write_text(&cfg.out_dir.join(format!("trace_worker_{t}.csv")), &trace_csv(trace, true))?;
    }
    write_text(&cfg.out_dir.join("rounds.csv"), &rounds_csv(&out))?;
    write_text(&cfg.out_dir.join("config.txt"), &cfg.to_flat())?;

    let model = FusedClassifier::new(&global_model);
    let mut summary = Map::new();
    summary.insert("rounds".into(), json!(out.rounds.len()));
    summary.insert("clusters".into(), json!(out.workers.len()));
    summary.insert("converged".into(), json!(out.converged));
    summary.insert(
        "final_consensus_gap".into(),
        json!(out.rounds.last().map_or(0.0, |r| r.consensus_gap)),
    );
    summary.insert("train_accuracy".into(), json!(accuracy_of(&model, &set.data)?));
    if let Some(test) = &test {
        summary.insert("test_accuracy".into(), json!(accuracy_of(&model, test)?));
    }
    write_json(&cfg.out_dir.join("summary.json"), &Value::Object(summary.clone()))?;
    println!("{}", Value::Object(summary));
    Ok(())
}

fn cmd_predict(cfg: &RunConfig) -> CliResult<()> {
    let loaded = load_model(cfg.require(&cfg.model_in, "model-in")?)?;
    let x_path = cfg.require(&cfg.x, "x")?;
    let x = loaded.pre.apply(&load_data(x_path)?)?;
    let scores = loaded.classifier.score_matrix(x.as_matrix())?;
    let fast = FusedClassifier::new(&loaded.classifier);
    let predicted: Vec<usize> = x
        .as_matrix()
        .column_iter()
        .map(|c| fast.predict_slice(c.as_slice()))
        .collect();
    create_dir(&cfg.out_dir)?;
    save_labels(&cfg.out_dir.join("predictions.txt"), &predicted)?;
    save_matrix(&cfg.out_dir.join("scores.csv"), &scores)?;
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> CliResult<()> {
    let loaded = load_model(cfg.require(&cfg.model_in, "model-in")?)?;
    let x_path = cfg.test_x.as_ref().or(cfg.x.as_ref()).cloned();
    let l_path = cfg.test_labels.as_ref().or(cfg.labels.as_ref()).cloned();
    let x_path = cfg.require(&x_path, "test-x")?;
    let l_path = cfg.require(&l_path, "test-labels")?;
    let classes = loaded.classifier.w.nrows();
    let raw = load_labeled(x_path, l_path, Some(classes))?;
    let x = loaded.pre.apply(&raw.x)?;
    let report = evaluate(&FusedClassifier::new(&loaded.classifier), &x, &raw.labels)?;

    create_dir(&cfg.out_dir)?;
    let metrics = json!({
        "accuracy": report.accuracy,
        "correct": report.correct(),
        "total": raw.labels.len(),
        "classes": classes,
        "seconds_per_sample": report.seconds_per_sample,
    });
    write_json(&cfg.out_dir.join("metrics.json"), &metrics)?;
    let mut conf = String::new();
    for row in &report.confusion {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        conf.push_str(&cells.join(","));
        conf.push('\n');
    }
    write_text(&cfg.out_dir.join("confusion.csv"), &conf)?;
    println!("{metrics}");
    Ok(())
}

/// Accuracies of the structure-only, label-only and full variants.
pub fn ablation(
    cfg: &RunConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> CliResult<[(&'static str, f64); 3]> {
    let hyper = cfg.hyperparams()?;
    let r = atoms(cfg, train)?;
    let c = train.class_count;

    let h = build_structure_target(&train.labels, c, None, cfg.structure_rows)?;
    let h_problem = Problem::structure_only(&train.x, &h)?;
    let (h_state, _) = train_sadl(&h_problem, ModelState::init(h_problem.dims(r), cfg.seed), &hyper)?;
    let h_only = PrototypeClassifier::new(h_state.omega, h_state.q, &h);

    let y = one_hot_labels(&train.labels, c)?;
    let w_problem = Problem::label_only(&train.x, &y, r)?;
    let mut w_init = ModelState::init(w_problem.dims(r), cfg.seed);
    w_init.q = ModelState::identity_map(r, r);
    let (w_state, _) = train_sadl(&w_problem, w_init, &hyper)?;
    let w_only = FusedClassifier::new(&Classifier::from_state(&w_state));

    let (full_state, _) = train_centralized(cfg, train)?;
    let full = FusedClassifier::new(&Classifier::from_state(&full_state));

    Ok([
        ("H-only", accuracy_of(&h_only, test)?),
        ("W-only", accuracy_of(&w_only, test)?),
        ("full", accuracy_of(&full, test)?),
    ])
}

fn cmd_ablate(cfg: &RunConfig) -> CliResult<()> {
    let set = training_set(cfg)?;
    let test = test_set(cfg, &set.pre, set.data.class_count)?
        .ok_or_else(|| CliError::Usage("ablate needs --test-x and --test-labels".into()))?;
    let rows = ablation(cfg, &set.data, &test)?;
    create_dir(&cfg.out_dir)?;
    let mut table = String::from("variant,accuracy\n");
    for (name, acc) in rows {
        let _ = writeln!(table, "{name},{}", fmt_f(acc));
    }
    write_text(&cfg.out_dir.join("ablation.csv"), &table)?;
    print!("{table}");
    Ok(())
}

pub const SYNTH_FILES: [&str; 6] = [
    "train_x.bin",
    "train_labels.txt",
    "test_x.bin",
    "test_labels.txt",
    "manifest.json",
    "h_spec.txt",
];

fn cmd_synth(cfg: &RunConfig) -> CliResult<()> {
    let synth = cfg.synth();
    let (train, test) = synth_dataset(&synth)?;
    let dir = &cfg.out_dir;
    create_dir(dir)?;
    save_matrix(&dir.join(SYNTH_FILES[0]), train.x.as_matrix())?;
    save_labels(&dir.join(SYNTH_FILES[1]), &train.labels)?;
    save_matrix(&dir.join(SYNTH_FILES[2]), test.x.as_matrix())?;
    save_labels(&dir.join(SYNTH_FILES[3]), &test.labels)?;
    let rows = class_counts(&train.labels, train.class_count);
    let manifest = json!({
        "generator": "union-of-subspaces",
        "params": synth,
        "noiseless": synth.noise_sigma == 0.0,
        "split": {"train_fraction": 0.5, "seed": synth.seed.wrapping_add(1)},
        "train_samples": train.samples(),
        "test_samples": test.samples(),
        "files": SYNTH_FILES,
    });
    write_json(&dir.join(SYNTH_FILES[4]), &manifest)?;
    let mut spec = String::from("class,rows\n");
    for (k, n) in rows.iter().enumerate() {
        let _ = writeln!(spec, "{},{n}", k + 1);
    }
    write_text(&dir.join(SYNTH_FILES[5]), &spec)
}

fn cmd_trace(cfg: &RunConfig) -> CliResult<()> {
    let set = training_set(cfg)?;
    let (_, trace) = train_centralized(cfg, &set.data)?;
    create_dir(&cfg.out_dir)?;
    write_text(&cfg.out_dir.join("trace_full.csv"), &full_trace_csv(&trace))?;
    write_text(&cfg.out_dir.join("config.txt"), &cfg.to_flat())
}
