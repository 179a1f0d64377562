//! `battwin`: command-line pipeline from raw discharge traces to trained
//! estimators, staleness tables and digital-twin runs.
//!
//! Every command writes its outputs plus a `manifest.json` into `--out`.

mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use battwin::features::{training_set, Feature, Target};
use battwin::ingest::{parse_traces, validate_dataset, write_dataset, Dataset, DEFAULT_RATED_CAPACITY_AH};
use battwin::labeling::{
    build_labeled_dataset, read_labeled_dataset, write_labeled_dataset, write_removed_log,
    LabeledCycle, LabeledDataset,
};
use battwin::learners::{kfold_cv, LearnerConfig, LearnerKind, Regressor, Scaling};
use battwin::synth::{generate_fleet, twin_fleet, SynthParams};
use battwin::twin::{evaluate_staleness, run_twin, StalenessOptions, Transport, TwinConfig};

use manifest::{write_json, ManifestBuilder};

#[derive(Parser)]
#[command(name = "battwin", version, about = "Battery digital twin toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every randomized step; overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// JSON config file (meaning depends on the command).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a trace CSV, then write it in canonical form.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RATED_CAPACITY_AH)]
        rated_capacity: f64,
    },
    /// Derive SOC/SOH labels and drop cycles that break SOH monotonicity.
    Label {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long, default_value_t = DEFAULT_RATED_CAPACITY_AH)]
        rated_capacity: f64,
    },
    /// Train one estimator and report its error.
    Train(TrainArgs),
    /// Replay a battery through the edge/cloud twin.
    Simulate(SimulateArgs),
    /// Train SOC models at several SOH bands and score them at one band.
    EvaluateStaleness(StalenessArgs),
    /// Export SOH profiles and voltage curves for plotting.
    Report {
        /// Raw trace CSV; cleaning runs here so removed cycles are marked.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long, default_value_t = DEFAULT_RATED_CAPACITY_AH)]
        rated_capacity: f64,
        /// SOH bands whose nearest cycles get a voltage curve.
        #[arg(long, value_delimiter = ',', default_values_t = [100.0, 90.0, 80.0, 70.0])]
        bands: Vec<f64>,
        /// Battery for the voltage curves; defaults to the first by id.
        #[arg(long)]
        battery: Option<String>,
    },
    /// Generate synthetic ageing traces.
    Synth {
        #[arg(long, value_enum, default_value_t = Preset::Twin)]
        preset: Preset,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Vehicle VEH (100 -> 80 %, 401 cycles) and HIST1/HIST2 (100 -> 70 %).
    Twin,
    /// One battery SYN with default parameters (100 -> 70 %, 61 cycles).
    Single,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TargetArg {
    Soc,
    Soh,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalingArg {
    Minmax,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Inproc,
    Socket,
}

#[derive(Args)]
struct LearnerArgs {
    /// rf, gbt or mlp.
    #[arg(long, default_value = "rf")]
    learner: String,
    /// Hyperparameter overrides, `key=value`, comma separated.
    #[arg(long, value_delimiter = ',')]
    params: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long, value_enum)]
    target: TargetArg,
    #[command(flatten)]
    learner: LearnerArgs,
    /// Run k-fold cross validation before the final fit.
    #[arg(long)]
    kfold: Option<usize>,
    /// Only train on cycles within `--band-tolerance` of this SOH.
    #[arg(long)]
    soh_band: Option<f64>,
    #[arg(long, default_value_t = 2.5)]
    band_tolerance: f64,
    /// Batteries to train on, comma separated; all by default.
    #[arg(long, value_delimiter = ',')]
    batteries: Vec<String>,
    /// Input columns, comma separated; all by default.
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    /// Defaults to minmax for SOC and none for SOH.
    #[arg(long, value_enum)]
    scaling: Option<ScalingArg>,
    #[arg(long, default_value_t = DEFAULT_RATED_CAPACITY_AH)]
    rated_capacity: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long, value_enum, default_value_t = TransportArg::Inproc)]
    transport: TransportArg,
    #[arg(long)]
    vehicle: Option<String>,
    #[arg(long, value_delimiter = ',')]
    historical: Vec<String>,
    /// SOH drop that triggers a retrain.
    #[arg(long)]
    delta: Option<f64>,
    /// Retrain every N uploads.
    #[arg(long)]
    period: Option<usize>,
    #[arg(long)]
    retrain_window: Option<usize>,
    /// Disable every retrain trigger.
    #[arg(long)]
    no_retrain: bool,
    #[arg(long, default_value_t = DEFAULT_RATED_CAPACITY_AH)]
    rated_capacity: f64,
}

#[derive(Args)]
struct StalenessArgs {
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [100.0, 95.0, 85.0, 75.0])]
    train_bands: Vec<f64>,
    #[arg(long, default_value_t = 75.0)]
    eval_band: f64,
    #[command(flatten)]
    learner: LearnerArgs,
    #[arg(long)]
    battery: Option<String>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    band_tolerance: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_RATED_CAPACITY_AH)]
    rated_capacity: f64,
}

fn main() {
    let cli = Cli::parse();
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    match cli.command {
        Command::Ingest {
            input,
            rated_capacity,
        } => cmd_ingest(c, &input, rated_capacity),
        Command::Label {
            dataset,
            epsilon,
            rated_capacity,
        } => cmd_label(c, &dataset, epsilon, rated_capacity),
        Command::Train(a) => cmd_train(c, &a),
        Command::Simulate(a) => cmd_simulate(c, &a),
        Command::EvaluateStaleness(a) => cmd_staleness(c, &a),
        Command::Report {
            dataset,
            epsilon,
            rated_capacity,
            bands,
            battery,
        } => cmd_report(c, &dataset, epsilon, rated_capacity, &bands, battery),
        Command::Synth { preset } => cmd_synth(c, preset),
    }
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn parse_features(names: &[String]) -> Result<Vec<Feature>> {
    if names.is_empty() {
        return Ok(Feature::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| Feature::parse(n).with_context(|| format!("unknown feature `{n}`")))
        .collect()
}

/// Learner from `--config` (a learner JSON) or `--learner`, then `--params`
/// and `--seed` applied on top.
fn learner_config(c: &Common, a: &LearnerArgs, default: Option<LearnerConfig>) -> Result<LearnerConfig> {
    let base = match &c.config {
        Some(p) => read_config(p)?,
        None => {
            let kind = LearnerKind::parse(&a.learner)
                .with_context(|| format!("unknown learner `{}`", a.learner))?;
            match default {
                Some(d) if d.kind() == kind => d,
                _ => LearnerConfig::default_for(kind),
            }
        }
    };
    let pairs = a
        .params
        .iter()
        .map(|kv| kv.split_once('=').with_context(|| format!("expected key=value, got `{kv}`")))
        .collect::<Result<Vec<_>>>()?;
    let cfg = base.with_overrides(pairs)?;
    Ok(match c.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn summarize(ds: &Dataset) -> String {
    let mut s = String::new();
    for (id, cycles) in &ds.batteries {
        let samples: usize = cycles.iter().map(|c| c.samples.len()).sum();
        let _ = writeln!(s, "{id}: {} cycles, {samples} samples", cycles.len());
    }
    let _ = write!(s, "total: {} batteries, {} cycles", ds.batteries.len(), ds.n_cycles());
    s
}

fn cmd_ingest(c: &Common, input: &Path, rated: f64) -> Result<()> {
    let mut m = ManifestBuilder::new("ingest", c.seed, json!({"rated_capacity": rated}));
    m.input(input);
    let ds = parse_traces(input, rated)?;
    let violations = validate_dataset(&ds);
    for v in &violations {
        eprintln!("warning: {}/{:?}: {:?}: {}", v.battery_id, v.cycle_index, v.rule, v.message);
    }
    let out = c.out.join("dataset.csv");
    write_dataset(&ds, &out)?;
    m.output(&out);
    println!("{}", summarize(&ds));
    m.finish(&c.out)?;
    Ok(())
}

fn cmd_label(c: &Common, dataset: &Path, epsilon: f64, rated: f64) -> Result<()> {
    let mut m = ManifestBuilder::new(
        "label",
        c.seed,
        json!({"epsilon": epsilon, "rated_capacity": rated}),
    );
    m.input(dataset);
    let ds = parse_traces(dataset, rated)?;
    let labeled = build_labeled_dataset(&ds, epsilon)?;
    let out = c.out.join("labeled.csv");
    write_labeled_dataset(&labeled, &out)?;
    m.output(&out);
    let removed = c.out.join("removed.json");
    write_removed_log(&labeled.removed_cycles, &removed)?;
    m.output(&removed);
    println!(
        "labeled {} cycles, removed {}",
        labeled.n_cycles(),
        labeled.removed_cycles.len()
    );
    m.finish(&c.out)?;
    Ok(())
}

fn select_cycles<'a>(
    ds: &'a LabeledDataset,
    batteries: &[String],
    band: Option<f64>,
    tolerance: f64,
) -> Result<Vec<&'a LabeledCycle>> {
    for b in batteries {
        if !ds.batteries.contains_key(b) {
            bail!("unknown battery `{b}`");
        }
    }
    let cycles: Vec<&LabeledCycle> = ds
        .batteries
        .iter()
        .filter(|(id, _)| batteries.is_empty() || batteries.contains(id))
        .flat_map(|(_, cs)| cs.iter())
        .filter(|c| band.is_none_or(|b| (c.soh - b).abs() <= tolerance))
        .collect();
    if cycles.is_empty() {
        bail!("no cycles match the selection");
    }
    Ok(cycles)
}

fn cmd_train(c: &Common, a: &TrainArgs) -> Result<()> {
    // SOH estimation needs deep trees; the twin's SOH learner is the default.
    let default = (a.target == TargetArg::Soh).then(|| TwinConfig::default().soh_learner);
    let learner = learner_config(c, &a.learner, default)?;
    let features = parse_features(&a.features)?;
    let scaling = match (a.scaling, a.target) {
        (Some(ScalingArg::Minmax), _) | (None, TargetArg::Soc) => Scaling::MinMax,
        (Some(ScalingArg::None), _) | (None, TargetArg::Soh) => Scaling::None,
    };
    let target = match a.target {
        TargetArg::Soc => Target::Soc,
        TargetArg::Soh => Target::Soh,
    };
    let mut m = ManifestBuilder::new(
        "train",
        c.seed,
        json!({
            "target": target,
            "learner": learner,
            "features": features,
            "scaling": format!("{scaling:?}"),
            "kfold": a.kfold,
            "soh_band": a.soh_band,
            "band_tolerance": a.band_tolerance,
            "batteries": a.batteries,
        }),
    );
    m.input(&a.labeled);
    let ds = read_labeled_dataset(&a.labeled, a.rated_capacity)?;
    let cycles = select_cycles(&ds, &a.batteries, a.soh_band, a.band_tolerance)?;
    let (x, y) = training_set(cycles.iter().copied(), &features, target);
    log::info!("training {:?} on {} rows from {} cycles", learner.kind(), x.n_rows(), cycles.len());

    if let Some(k) = a.kfold {
        let cv = kfold_cv(&learner, &x, &y, scaling, k, c.seed.unwrap_or(0))?;
        let path = c.out.join("cv.json");
        write_json(&path, &cv)?;
        m.timed_output(&path);
        println!("{}", serde_json::to_string(&cv.mean)?);
    }

    let t0 = std::time::Instant::now();
    let mut model = Regressor::fit(&learner, &x, &y, scaling)?.with_features(&features);
    let train_time = t0.elapsed().as_secs_f64();
    if target == Target::Soc {
        let band = cycles.iter().map(|c| c.soh).sum::<f64>() / cycles.len() as f64;
        model = model.with_band(band);
    }
    let mut report = model.evaluate(&x, &y)?;
    report.train_time_s = train_time;
    let model_path = c.out.join("model.json");
    fs::write(&model_path, model.to_json() + "\n")?;
    m.output(&model_path);
    let report_path = c.out.join("report.json");
    write_json(&report_path, &json!({"in_sample": report, "model_sha256": model.fingerprint()}))?;
    m.timed_output(&report_path);
    if a.kfold.is_none() {
        println!("{}", serde_json::to_string(&report)?);
    }
    m.finish(&c.out)?;
    Ok(())
}

fn cmd_simulate(c: &Common, a: &SimulateArgs) -> Result<()> {
    let mut cfg: TwinConfig = match &c.config {
        Some(p) => read_config(p)?,
        None => TwinConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(v) = &a.vehicle {
        cfg.vehicle_battery = Some(v.clone());
    }
    if !a.historical.is_empty() {
        cfg.historical_batteries = Some(a.historical.clone());
    }
    if a.delta.is_some() {
        cfg.soh_trigger_delta = a.delta;
    }
    if a.period.is_some() {
        cfg.period_trigger = a.period;
    }
    if let Some(w) = a.retrain_window {
        cfg.retrain_window = w;
    }
    if a.no_retrain {
        cfg = cfg.without_retraining();
    }
    let transport = match a.transport {
        TransportArg::Inproc => Transport::Inproc,
        TransportArg::Socket => Transport::Socket,
    };
    let mut m = ManifestBuilder::new(
        "simulate",
        Some(cfg.seed),
        json!({"twin": cfg, "transport": format!("{transport:?}")}),
    );
    m.input(&a.labeled);
    let ds = read_labeled_dataset(&a.labeled, a.rated_capacity)?;
    let run = run_twin(&ds, &cfg, transport)?;
    if let Err(e) = run.log.check_invariants() {
        bail!("run log violates an invariant: {e}");
    }

    let log_path = c.out.join("run_log.jsonl");
    run.log.write_jsonl(fs::File::create(&log_path)?)?;
    m.output(&log_path);

    let mut csv = String::from(
        "ordinal,cycle_index,true_soh_pct,estimated_soh_pct,model_version,soc_mae_pct,soc_rmse_pct,soc_max_err_pct\n",
    );
    for r in &run.cycles {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.ordinal,
            r.cycle_index,
            r.true_soh_pct,
            r.estimated_soh_pct,
            r.model_version,
            r.soc.mae_pct,
            r.soc.rmse_pct,
            r.soc.max_err_pct
        );
    }
    let cycles_path = c.out.join("cycles.csv");
    fs::write(&cycles_path, csv)?;
    m.output(&cycles_path);

    let summary_path = c.out.join("summary.json");
    write_json(&summary_path, &run.summary)?;
    m.output(&summary_path);
    println!("{}", serde_json::to_string_pretty(&run.summary)?);
    m.finish(&c.out)?;
    Ok(())
}

fn cmd_staleness(c: &Common, a: &StalenessArgs) -> Result<()> {
    let learner = learner_config(c, &a.learner, None)?;
    let defaults = StalenessOptions::default();
    let opts = StalenessOptions {
        battery: a.battery.clone(),
        window: a.window.unwrap_or(defaults.window),
        band_tolerance: a.band_tolerance.unwrap_or(defaults.band_tolerance),
        ..defaults
    };
    let mut m = ManifestBuilder::new(
        "evaluate-staleness",
        c.seed,
        json!({
            "learner": learner,
            "train_bands": a.train_bands,
            "eval_band": a.eval_band,
            "options": opts,
        }),
    );
    m.input(&a.labeled);
    let ds = read_labeled_dataset(&a.labeled, a.rated_capacity)?;
    let table = evaluate_staleness(&ds, &a.train_bands, a.eval_band, &learner, &opts)?;

    let table_path = c.out.join("staleness.json");
    write_json(&table_path, &table)?;
    m.timed_output(&table_path);
    let curves_path = c.out.join("soc_curves.csv");
    table
        .curves
        .write_csv(&a.train_bands, fs::File::create(&curves_path)?)?;
    m.output(&curves_path);

    println!("train_band  mae_pct  rmse_pct  max_err_pct");
    for r in &table.rows {
        println!(
            "{:>10}  {:>7.3}  {:>8.3}  {:>11.3}",
            r.train_band, r.report.mae_pct, r.report.rmse_pct, r.report.max_err_pct
        );
    }
    m.finish(&c.out)?;
    Ok(())
}

fn cmd_report(
    c: &Common,
    dataset: &Path,
    epsilon: f64,
    rated: f64,
    bands: &[f64],
    battery: Option<String>,
) -> Result<()> {
    let mut m = ManifestBuilder::new(
        "report",
        c.seed,
        json!({"epsilon": epsilon, "rated_capacity": rated, "bands": bands, "battery": battery}),
    );
    m.input(dataset);
    let ds = parse_traces(dataset, rated)?;
    let labeled = build_labeled_dataset(&ds, epsilon)?;

    // SOH per cycle, including the cycles cleaning removed.
    let mut soh_csv = String::from("battery_id,cycle_index,capacity_ah,soh_pct,removed\n");
    for (id, cycles) in &ds.batteries {
        for cycle in cycles {
            let lc = LabeledCycle::label(cycle.clone(), rated)?;
            let removed = labeled
                .removed_cycles
                .iter()
                .any(|r| &r.battery_id == id && r.cycle_index == cycle.cycle_index);
            let _ = writeln!(
                soh_csv,
                "{id},{},{},{},{}",
                cycle.cycle_index, lc.available_capacity, lc.soh, removed
            );
        }
    }
    let soh_path = c.out.join("soh_profile.csv");
    fs::write(&soh_path, soh_csv)?;
    m.output(&soh_path);

    let battery = match battery {
        Some(b) => b,
        None => labeled
            .batteries
            .keys()
            .next()
            .cloned()
            .context("dataset has no batteries")?,
    };
    let cycles = labeled
        .batteries
        .get(&battery)
        .with_context(|| format!("unknown battery `{battery}`"))?;
    let mut v_csv = String::from("band,cycle_index,soh_pct,relative_time_s,voltage_v,soc_pct\n");
    for &band in bands {
        let nearest = cycles
            .iter()
            .min_by(|a, b| (a.soh - band).abs().total_cmp(&(b.soh - band).abs()))
            .expect("battery has cycles");
        for (s, soc) in nearest.cycle.samples.iter().zip(&nearest.soc_per_sample) {
            let _ = writeln!(
                v_csv,
                "{band},{},{},{},{},{soc}",
                nearest.cycle_index(),
                nearest.soh,
                s.relative_time,
                s.voltage
            );
        }
    }
    let v_path = c.out.join("voltage_profiles.csv");
    fs::write(&v_path, v_csv)?;
    m.output(&v_path);
    println!("wrote {} and {}", soh_path.display(), v_path.display());
    m.finish(&c.out)?;
    Ok(())
}

fn cmd_synth(c: &Common, preset: Preset) -> Result<()> {
    let seed = c.seed.unwrap_or(0);
    let params: Vec<SynthParams> = match (&c.config, preset) {
        (Some(p), _) => read_config(p)?,
        (None, Preset::Twin) => twin_fleet(seed),
        (None, Preset::Single) => vec![SynthParams {
            seed,
            ..SynthParams::default()
        }],
    };
    let mut m = ManifestBuilder::new("synth", Some(seed), serde_json::to_value(&params)?);
    if let Some(p) = &c.config {
        m.input(p);
    }
    let ds = generate_fleet(&params)?;
    let path = c.out.join("traces.csv");
    write_dataset(&ds, &path)?;
    m.output(&path);
    println!("{}", summarize(&ds));
    m.finish(&c.out)?;
    Ok(())
}
