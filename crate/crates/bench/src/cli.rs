//! Command-line front end.
//!
//! Resolved configs are built as JSON: defaults, then an optional config file
//! merged key by key, then flags. The result is echoed into the manifest.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use responder_core::analysis::{default_columns, percentile_table, tree_importance, TreeConfig, TABLE_CAPTION};
use responder_core::dataset::{generate_synthetic, SyntheticSpec};
use responder_core::expression::{filter_gene_set, fpkm_to_log_tpm, pca2, scale, GeneSetName, ScalingMethod};
use responder_core::sweep::{convergence_filter, train_point, ConfigPoint, SweepGrid, SweepSettings, FACTORS};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::bundle::{read_json, write_bundle, write_json, Bundle};
use crate::error::{validation, BenchError, Result, EXIT_VALIDATION};
use crate::formats::{
    fold_rows, read_dose_csv, read_expression_csv, read_gene_set, write_expression_csv, write_folds_csv,
    write_metrics_csv, write_train_log_csv,
};
use crate::manifest::{now, RunManifest};
use crate::runner::{run_sweep_with, sweep_manifest, SweepOptions};
use crate::store::{self, ResultStore};
use crate::{checkpoint, curves, report};

#[derive(Debug, Parser)]
#[command(name = "responder-bench", version, about = "Drug response modelling benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit Hill curves to a dose table and write per-curve metrics.
    FitCurves(FitCurvesArgs),
    /// Filter, transform and scale an expression matrix.
    Preprocess(PreprocessArgs),
    /// Generate a synthetic study bundle.
    GenSynth(GenSynthArgs),
    /// Train one configuration on a bundle.
    Train(TrainArgs),
    /// Run a configuration grid into a result store.
    Sweep(SweepArgs),
    /// Filter a result store and report tables, tests and importances.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct FitCurvesArgs {
    /// Dose CSV with SOURCE, CELL, DRUG, DOSE, GROWTH.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Recorded in the manifest; fitting is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Expression CSV with SAMPLE, SOURCE and one column per gene.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Gene list file, one gene per line.
    #[arg(long = "gene-set")]
    pub gene_set: Option<PathBuf>,
    #[arg(long, value_parser = parse::<ScalingMethod>)]
    pub scaling: Option<ScalingMethod>,
    /// Convert FPKM to log2(TPM + 1) before scaling.
    #[arg(long)]
    pub log_tpm: bool,
    /// Also write the first two principal components to this CSV.
    #[arg(long)]
    pub pca: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Spec JSON; missing keys take the defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output bundle directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Single-value choices shared by `train` and `sweep`. In a sweep each one
/// pins its axis to that value.
#[derive(Debug, Args, Default)]
pub struct PointFlags {
    #[arg(long = "gene-set", value_parser = parse::<GeneSetName>)]
    pub gene_set: Option<GeneSetName>,
    #[arg(long, value_parser = parse::<ScalingMethod>)]
    pub scaling: Option<ScalingMethod>,
    #[arg(long, value_parser = parse_on_off)]
    pub snps: Option<bool>,
    #[arg(long, value_parser = parse::<responder_core::dataset::DescriptorProvider>)]
    pub descriptors: Option<responder_core::dataset::DescriptorProvider>,
    #[arg(long, value_parser = parse::<responder_core::nn::Variant>)]
    pub arch: Option<responder_core::nn::Variant>,
    #[arg(long, value_parser = parse::<responder_core::trainer::Strategy>)]
    pub strategy: Option<responder_core::trainer::Strategy>,
    #[arg(long, value_parser = parse::<responder_core::nn::OptimizerKind>)]
    pub optimizer: Option<responder_core::nn::OptimizerKind>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, value_parser = parse::<responder_core::evaluation::SplitMode>)]
    pub split: Option<responder_core::evaluation::SplitMode>,
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long = "group-filter", value_parser = parse::<responder_core::sweep::GroupFilter>)]
    pub group_filter: Option<responder_core::sweep::GroupFilter>,
    /// Split seed; it enters the config hash, which seeds training.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Bundle directory.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory for the model, log, folds and record.
    #[arg(long)]
    pub out: PathBuf,
    /// Partial config-point JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub point: PointFlags,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Bundle directory.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Grid JSON.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Run at most this many pending points.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub point: PointFlags,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Factor compared within each split, e.g. snps, scaling, architecture.
    #[arg(long, default_value = "snps")]
    pub table: String,
    /// Metric for the tests, the importance tree and the scatter plot.
    #[arg(long, default_value = "r2")]
    pub metric: String,
    /// Report directory; defaults to `<store>.analysis`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Tabulate every record with metrics instead of the filtered set.
    #[arg(long)]
    pub no_filter: bool,
    #[arg(long, default_value_t = 8)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse<T: FromStr>(s: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_on_off(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(format!("expected on or off, got {s}")),
    }
}

/// Parses argv and runs it, returning the process exit code. Usage errors
/// exit 1; `--help` and `--version` exit 0.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::FitCurves(a) => fit_curves(a),
        Command::Preprocess(a) => preprocess(a),
        Command::GenSynth(a) => gen_synth(a),
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Analyze(a) => analyze(a),
    }
}

/// Recursively overlays `top` onto `base`; objects merge, anything else replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, t) => *slot = t,
    }
}

/// defaults < config file < flags.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, file: Option<&Path>, flags: Value) -> Result<(T, Value)> {
    let mut v = serde_json::to_value(defaults).map_err(|e| BenchError::Runtime(e.to_string()))?;
    if let Some(path) = file {
        let overlay: Value = read_json(path)?;
        if !overlay.is_object() {
            return Err(BenchError::format(path, "config must be a JSON object"));
        }
        merge(&mut v, overlay);
    }
    merge(&mut v, flags);
    let resolved = serde_json::from_value(v.clone()).map_err(|e| validation!("invalid configuration: {e}"))?;
    Ok((resolved, v))
}

fn to_value<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("flag values serialize")
}

impl PointFlags {
    /// Flags that were given, as config-point keys. With `as_axes` each value
    /// is wrapped in a one-element list so it pins a grid axis.
    fn overlay(&self, as_axes: bool) -> Value {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.into(), if as_axes { Value::Array(vec![v]) } else { v });
            }
        };
        put("gene_set", self.gene_set.map(to_value));
        put("scaling", self.scaling.map(to_value));
        put("snps", self.snps.map(to_value));
        put("descriptor_provider", self.descriptors.map(to_value));
        put("architecture", self.arch.map(to_value));
        put("strategy", self.strategy.map(to_value));
        put("optimizer", self.optimizer.map(to_value));
        put("dropout_rate", self.dropout.map(to_value));
        put("split", self.split.map(to_value));
        put("fold", self.fold.map(to_value));
        put("group_filter", self.group_filter.map(to_value));
        if let Some(seed) = self.seed {
            m.insert("settings".into(), json!({ "split_seed": seed }));
        }
        Value::Object(m)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))
}

fn fit_curves(a: FitCurvesArgs) -> Result<()> {
    let started = now();
    let rows = read_dose_csv(&a.input)?;
    let fitted = curves::fit_curves(&rows)?;
    write_metrics_csv(&a.out, &fitted)?;
    let failed = fitted.iter().filter(|r| r.r2fit.is_none()).count();
    let mut m = RunManifest::new("fit-curves", json!({ "in": a.input, "out": a.out }), Some(a.seed), started);
    m.add_input(&a.input)?;
    m.outcome = json!({ "curves": fitted.len(), "failed_fits": failed });
    m.write_for(&a.out)?;
    eprintln!("fitted {} curves ({failed} failed) -> {}", fitted.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
struct PreprocessConfig {
    scaling: ScalingMethod,
    log_tpm: bool,
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let started = now();
    let mut flags = Map::new();
    if let Some(s) = a.scaling {
        flags.insert("scaling".into(), to_value(s));
    }
    if a.log_tpm {
        flags.insert("log_tpm".into(), Value::Bool(true));
    }
    let defaults = PreprocessConfig { scaling: ScalingMethod::WholeFrame, log_tpm: false };
    let (cfg, mut echo) = resolve(&defaults, a.config.as_deref(), Value::Object(flags))?;

    let mut matrix = read_expression_csv(&a.input)?;
    if cfg.log_tpm {
        matrix = fpkm_to_log_tpm(&matrix)?;
    }
    if let Some(path) = &a.gene_set {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
            .unwrap_or(GeneSetName::Full);
        matrix = filter_gene_set(&matrix, &read_gene_set(path, name)?)?;
    }
    let scaled = scale(&matrix, cfg.scaling)?;
    write_expression_csv(&a.out, &scaled)?;

    let mut outcome = json!({ "samples": scaled.n_samples(), "genes": scaled.n_genes() });
    if let Some(pca_path) = &a.pca {
        let pca = pca2(&scaled)?;
        let mut w = csv::Writer::from_path(pca_path).map_err(|e| BenchError::format(pca_path, e))?;
        let csv_err = |e: csv::Error| BenchError::format(pca_path, e);
        w.write_record(["SAMPLE", "SOURCE", "PC1", "PC2"]).map_err(csv_err)?;
        for (i, c) in pca.coordinates.iter().enumerate() {
            w.write_record([
                scaled.sample_ids()[i].as_str(),
                scaled.sources()[i].as_str(),
                &c[0].to_string(),
                &c[1].to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| BenchError::io(pca_path, e))?;
        outcome["explained_variance"] = to_value(pca.explained_variance);
        eprintln!(
            "PC1 {:.1}%, PC2 {:.1}% of variance",
            100.0 * pca.explained_variance[0],
            100.0 * pca.explained_variance[1]
        );
    }
    echo["gene_set"] = to_value(&a.gene_set);
    echo["pca"] = to_value(&a.pca);
    let mut m = RunManifest::new("preprocess", echo, Some(a.seed), started);
    m.add_input(&a.input)?;
    if let Some(p) = &a.gene_set {
        m.add_input(p)?;
    }
    m.outcome = outcome;
    m.write_for(&a.out)?;
    Ok(())
}

fn gen_synth(a: GenSynthArgs) -> Result<()> {
    let started = now();
    let flags = match a.seed {
        Some(s) => json!({ "seed": s }),
        None => json!({}),
    };
    let (spec, echo): (SyntheticSpec, _) = resolve(&SyntheticSpec::default(), a.spec.as_deref(), flags)?;
    spec.validate()?;
    let study = generate_synthetic(&spec)?;
    write_bundle(&a.out, &spec, &study)?;
    let mut m = RunManifest::new("gen-synth", echo, Some(spec.seed), started);
    if let Some(p) = &a.spec {
        m.add_input(p)?;
    }
    m.outcome = json!({ "records": study.records.len(), "responder_fraction": study.ground_truth.responder_fraction });
    m.write_for(&a.out)?;
    eprintln!("wrote {} response records -> {}", study.records.len(), a.out.display());
    Ok(())
}

/// Defaults for a single `train` run: the first point of the desk grid.
pub fn default_point() -> ConfigPoint {
    let g = SweepGrid::desk();
    ConfigPoint {
        gene_set: g.gene_set[0],
        scaling: g.scaling[0],
        snps: true,
        descriptor_provider: g.descriptor_provider[0],
        architecture: g.architecture[0],
        strategy: g.strategy[0],
        optimizer: responder_core::nn::OptimizerKind::Adam,
        dropout_rate: g.dropout_rate[0],
        split: g.split[0],
        fold: 0,
        group_filter: g.group_filter[0],
        settings: SweepSettings::desk(),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let started = now();
    let (point, echo): (ConfigPoint, _) = resolve(&default_point(), a.config.as_deref(), a.point.overlay(false))?;
    if point.fold >= point.settings.folds {
        return Err(validation!("fold {} out of range for {} folds", point.fold, point.settings.folds));
    }
    let bundle = Bundle::load(&a.input)?;
    let run = train_point(&point, &bundle.inputs())?;
    create_dir(&a.out)?;
    checkpoint::save(&a.out.join("model.ckpt"), &run.model)?;
    write_train_log_csv(&a.out.join("train_log.csv"), &run.log)?;
    write_folds_csv(&a.out.join("folds.csv"), &fold_rows(&run.plan, &run.data))?;
    let mut record = run.record;
    record.wall_time_s = (now() - started) as f64;
    write_json(&a.out.join("record.json"), &record)?;

    let mut m = RunManifest::new("train", echo, Some(record.seed), started);
    for f in Bundle::files(&a.input) {
        m.add_input(&f)?;
    }
    m.outcome = json!({
        "hash": record.hash,
        "status": record.status,
        "termination": run.log.termination.as_str(),
        "best_epoch": record.best_epoch,
        "epochs": record.epochs,
        "best_val_loss": record.best_val_loss,
        "metrics": record.metrics,
    });
    m.write_for(&a.out)?;
    match &record.metrics {
        Some(mt) => eprintln!(
            "{} after {} epochs: rmse {:.4} r2 {:.4} balanced accuracy {:.4} mcc {:.4}",
            run.log.termination.as_str(),
            record.epochs,
            mt.rmse,
            mt.r2,
            mt.balanced_accuracy,
            mt.mcc
        ),
        None => eprintln!("{}: {}", record.status.as_str(), record.error.as_deref().unwrap_or("")),
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let started = now();
    let grid_value: Value = read_json(&a.grid)?;
    let mut v = grid_value;
    merge(&mut v, a.point.overlay(true));
    let grid: SweepGrid = serde_json::from_value(v).map_err(|e| BenchError::format(&a.grid, e))?;
    if !grid.is_empty() {
        grid.validate()?;
    }
    // opening the store fails here, before any work, when it is not writable
    let mut store = ResultStore::open(&a.store)?;
    if store.dropped_lines() > 0 {
        eprintln!("dropped {} torn or corrupt lines from {}", store.dropped_lines(), a.store.display());
    }
    let bundle = Bundle::load(&a.input)?;
    let mut m = sweep_manifest(&grid, &a.input, a.workers, started)?;
    m.add_input(&a.grid)?;

    let total = grid.len();
    let quiet = a.quiet;
    let options = SweepOptions { workers: a.workers, limit: a.limit };
    let summary = run_sweep_with(&grid, &bundle.inputs(), options, &mut store, |i, r| {
        if !quiet {
            let r2 = r.metric("r2").map(|v| format!("r2 {v:.3}")).unwrap_or_else(|| r.status.as_str().to_string());
            eprintln!("[{i}] {} {r2} {:.1}s", r.point.label(), r.wall_time_s);
        }
    })?;
    eprintln!(
        "{} of {total} points stored: {} run now ({} done, {} diverged, {} failed), {} already present",
        store.records().len(),
        summary.ran,
        summary.done,
        summary.diverged,
        summary.failed,
        summary.skipped
    );
    m.outcome = json!({ "grid_points": total, "stored": store.records().len(), "workers": summary.workers });
    m.write_for(&a.store)?;
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let started = now();
    if !FACTORS.contains(&a.table.as_str()) {
        return Err(validation!("unknown factor {}; expected one of {}", a.table, FACTORS.join(", ")));
    }
    if !a.store.exists() {
        return Err(validation!("store {} does not exist", a.store.display()));
    }
    let (records, dropped) = store::load(&a.store)?;
    if dropped > 0 {
        eprintln!("ignored {dropped} torn or corrupt lines");
    }
    let outcome = convergence_filter(&records);
    let used = if a.no_filter { records.clone() } else { outcome.kept.clone() };

    let group_by: Vec<&str> = if a.table == "split" { vec!["split"] } else { vec!["split", a.table.as_str()] };
    let table = percentile_table(&used, &group_by, &default_columns())?;
    let comparisons = report::compare_levels(&used, "split", &a.table, &a.metric);
    let tree = TreeConfig { max_depth: a.max_depth, min_leaf: a.min_leaf };
    let importance = tree_importance(&used, &a.metric, &tree);

    let mut text = String::new();
    text.push_str(&report::render_filter(&outcome));
    text.push('\n');
    text.push_str(&report::render_table(&table));
    text.push('\n');
    text.push_str(&report::render_comparisons("split", &comparisons));
    text.push('\n');
    match &importance {
        Ok(r) => text.push_str(&report::render_importance(&a.metric, r)),
        Err(e) => text.push_str(&format!("importance not computed: {e}\n")),
    }
    print!("{text}");

    let out = a.out.clone().unwrap_or_else(|| {
        let mut name = a.store.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".analysis");
        a.store.with_file_name(name)
    });
    create_dir(&out)?;
    let write = |name: &str, body: &str| {
        let p = out.join(name);
        std::fs::write(&p, body).map_err(|e| BenchError::io(&p, e))
    };
    write("report.txt", &text)?;
    write("table.txt", &report::render_table(&table))?;
    write("table.csv", &report::table_csv(&table)?)?;
    write("scatter.svg", &report::scatter_svg(&used, &a.table, &a.metric))?;
    write_json(&out.join("table.json"), &table)?;
    write_json(&out.join("tests.json"), &comparisons)?;
    if let Ok(r) = &importance {
        write_json(&out.join("importance.json"), r)?;
    }
    let removed: Vec<Value> =
        outcome.removed.iter().map(|r| json!({ "hash": r.record.hash, "reasons": r.reasons })).collect();
    write_json(&out.join("filter.json"), &json!({ "kept": outcome.kept.len(), "loss_threshold": outcome.loss_threshold, "removed": removed }))?;

    let config = json!({
        "store": a.store, "table": a.table, "metric": a.metric, "filter": !a.no_filter,
        "tree": tree, "caption": TABLE_CAPTION,
    });
    let mut m = RunManifest::new("analyze", config, Some(a.seed), started);
    m.add_input(&a.store)?;
    m.outcome = json!({ "records": records.len(), "kept": outcome.kept.len(), "groups": table.rows.len() });
    m.write_for(&out)?;
    Ok(())
}
