//! Command-line front end.
//!
//! Every verb reads flat `key = value` settings (`--config file`, then
//! `--key value` flags). `train` echoes the fully resolved settings to
//! `<out>/config.txt`, which can be fed back with `--config` to rerun.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime or numeric
//! failure.

mod args;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub use args::{render, RawConfig};

use crate::data::{impute_missing, load_edges, load_flows, FlowDataset, RoadGraph, TimeRange};
use crate::diffcore::{op_suite, GradCheckReport};
use crate::error::{Error, Result};
use crate::model::{attention_traces, model_gradcheck, ModelConfig, ModelParams, SgMode};
use crate::synth::{SynthSpec, SyntheticData, Topology};
use crate::train::{grid_search, history_jsonl, Experiment, FitStatus, GridCandidates, MetricsReport, TrainingConfig};

pub const USAGE: &str = "usage: stahgnet <synth|train|eval|gradcheck|export-attention> [--config FILE] [--key value ...]";

/// Tolerances of the gradient check.
pub const OP_TOLERANCE: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-4;

const TRAIN_KEYS: &[&str] = &[
    "learning_rate",
    "batch_size",
    "epochs",
    "d",
    "window",
    "k",
    "hops",
    "horizon",
    "dropout",
    "seed",
    "huber_beta",
    "literal_eq5",
    "literal_eq9",
    "share_time",
    "share_encoders",
    "sg_mode",
    "ablate_spatial",
    "ablate_ctg",
    "random_c0",
    "top_k",
    "clip",
    "mape_floor",
    "exclude_imputed",
    "normalize_flows",
    "split",
];
const DATA_KEYS: &[&str] = &["edges", "flows", "nodes", "interval_minutes", "out"];
const GRID_KEYS: &[&str] = &["grid", "grid_k", "grid_window", "grid_hops", "grid_epochs"];
const SYNTH_KEYS: &[&str] =
    &["out", "topology", "nodes", "steps", "period", "kappa", "noise", "incident_rate", "interval_minutes", "radius", "seed"];
const GRADCHECK_KEYS: &[&str] = &["seed", "sg_mode", "literal_eq5", "sabotage"];

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Data(_) | Error::Csv(_) | Error::Json(_) | Error::Incompatible(_) => 1,
        Error::Shape { .. } | Error::NonFinite(_) | Error::GradCheck(_) | Error::Io(_) => 2,
    }
}

/// Runs one command line (without the program name) and returns the exit code.
pub fn run(args: &[String]) -> i32 {
    let stdout = std::io::stdout();
    match execute(args, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) {
                eprintln!("{USAGE}");
            }
            exit_code(&e)
        }
    }
}

/// Dispatches a verb, writing human-readable output to `out`.
pub fn execute(args: &[String], out: &mut dyn Write) -> Result<()> {
    let (verb, rest) = args.split_first().ok_or_else(|| Error::Config("missing command".into()))?;
    let raw = RawConfig::from_args(rest)?;
    match verb.as_str() {
        "synth" => cmd_synth(&raw, out),
        "train" => cmd_train(&raw, out),
        "eval" => cmd_eval(&raw, out),
        "gradcheck" => cmd_gradcheck(&raw, out),
        "export-attention" => cmd_export_attention(&raw, out),
        "help" | "--help" | "-h" => {
            writeln!(out, "{USAGE}")?;
            Ok(())
        }
        other => Err(Error::Config(format!("unknown command {other:?}"))),
    }
}

/// `seed` key, else `STAHG_SEED`, else `default`.
fn resolve_seed(raw: &RawConfig, default: u64) -> Result<u64> {
    if raw.contains("seed") {
        return raw.get("seed", default);
    }
    match std::env::var("STAHG_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| Error::Config(format!("bad STAHG_SEED {v:?}"))),
        Err(_) => Ok(default),
    }
}

fn cmd_synth(raw: &RawConfig, out: &mut dyn Write) -> Result<()> {
    raw.check_keys(SYNTH_KEYS)?;
    let d = SynthSpec::default();
    let topology = Topology::parse(raw.get_str("topology").unwrap_or("path"), raw.get("radius", 0.3)?)?;
    let spec = SynthSpec {
        nodes: raw.get("nodes", d.nodes)?,
        topology,
        steps: raw.get("steps", d.steps)?,
        period: raw.get("period", d.period)?,
        kappa: raw.get("kappa", d.kappa)?,
        noise: raw.get("noise", d.noise)?,
        incident_rate: raw.get("incident_rate", d.incident_rate)?,
        interval_minutes: raw.get("interval_minutes", d.interval_minutes)?,
        seed: resolve_seed(raw, d.seed)?,
    };
    spec.validate()?;
    let dir = PathBuf::from(raw.get_str("out").unwrap_or("data"));
    let data = SyntheticData::generate(&spec)?;
    data.write(&dir)?;
    writeln!(
        out,
        "wrote {} and {}: N={} L={} edges={}",
        dir.join("edges.csv").display(),
        dir.join("flows.csv").display(),
        data.flows.node_count(),
        data.flows.len(),
        data.graph.edges().len()
    )?;
    Ok(())
}

/// Training settings from raw keys over the defaults.
pub fn training_config(raw: &RawConfig) -> Result<TrainingConfig> {
    let d = TrainingConfig::default();
    let split = raw.get_list("split", &d.split)?;
    let split: [f64; 3] = split
        .try_into()
        .map_err(|_| Error::Config("split needs three comma-separated ratios".into()))?;
    let cfg = TrainingConfig {
        learning_rate: raw.get("learning_rate", d.learning_rate)?,
        batch_size: raw.get("batch_size", d.batch_size)?,
        epochs: raw.get("epochs", d.epochs)?,
        d: raw.get("d", d.d)?,
        window: raw.get("window", d.window)?,
        k: raw.get("k", d.k)?,
        hops: raw.get("hops", d.hops)?,
        horizon: raw.get("horizon", d.horizon)?,
        dropout: raw.get("dropout", d.dropout)?,
        seed: resolve_seed(raw, d.seed)?,
        huber_beta: raw.get("huber_beta", d.huber_beta)?,
        literal_eq5: raw.get_bool("literal_eq5", d.literal_eq5)?,
        literal_eq9: raw.get_bool("literal_eq9", d.literal_eq9)?,
        share_time: raw.get_bool("share_time", d.share_time)?,
        share_encoders: raw.get_bool("share_encoders", d.share_encoders)?,
        sg_mode: raw.get("sg_mode", d.sg_mode)?,
        ablate_spatial: raw.get_bool("ablate_spatial", d.ablate_spatial)?,
        ablate_ctg: raw.get_bool("ablate_ctg", d.ablate_ctg)?,
        random_c0: raw.get_bool("random_c0", d.random_c0)?,
        top_k: raw.get_opt("top_k")?,
        clip: raw.get_opt("clip")?,
        mape_floor: raw.get("mape_floor", d.mape_floor)?,
        exclude_imputed: raw.get_bool("exclude_imputed", d.exclude_imputed)?,
        normalize_flows: raw.get_bool("normalize_flows", d.normalize_flows)?,
        split,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn opt_string<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

/// Every training key with its resolved value.
pub fn training_entries(cfg: &TrainingConfig) -> BTreeMap<String, String> {
    let pairs: [(&str, String); 25] = [
        ("learning_rate", cfg.learning_rate.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("d", cfg.d.to_string()),
        ("window", cfg.window.to_string()),
        ("k", cfg.k.to_string()),
        ("hops", cfg.hops.to_string()),
        ("horizon", cfg.horizon.to_string()),
        ("dropout", cfg.dropout.to_string()),
        ("seed", cfg.seed.to_string()),
        ("huber_beta", cfg.huber_beta.to_string()),
        ("literal_eq5", cfg.literal_eq5.to_string()),
        ("literal_eq9", cfg.literal_eq9.to_string()),
        ("share_time", cfg.share_time.to_string()),
        ("share_encoders", cfg.share_encoders.to_string()),
        ("sg_mode", cfg.sg_mode.to_string()),
        ("ablate_spatial", cfg.ablate_spatial.to_string()),
        ("ablate_ctg", cfg.ablate_ctg.to_string()),
        ("random_c0", cfg.random_c0.to_string()),
        ("top_k", opt_string(cfg.top_k)),
        ("clip", opt_string(cfg.clip)),
        ("mape_floor", cfg.mape_floor.to_string()),
        ("exclude_imputed", cfg.exclude_imputed.to_string()),
        ("normalize_flows", cfg.normalize_flows.to_string()),
        ("split", cfg.split.iter().map(f64::to_string).collect::<Vec<_>>().join(",")),
    ];
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

struct Inputs {
    graph: RoadGraph,
    flows: FlowDataset,
    edges_path: String,
    flows_path: String,
    interval: u32,
}

/// Loads the edge and flow files; gaps in the flows are interpolated.
fn load_inputs(raw: &RawConfig) -> Result<Inputs> {
    let edges_path = raw.require("edges")?.to_string();
    let flows_path = raw.require("flows")?.to_string();
    let interval = raw.get("interval_minutes", 5u32)?;
    let flows = load_flows(&flows_path, interval)?;
    let declared = raw.get_opt("nodes")?.or(Some(flows.node_count()));
    let graph = load_edges(&edges_path, declared)?;
    let flows = if flows.is_complete() { flows } else { impute_missing(&flows)? };
    Ok(Inputs { graph, flows, edges_path, flows_path, interval })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn print_report(out: &mut dyn Write, label: &str, m: &MetricsReport) -> Result<()> {
    writeln!(out, "{label}: MAE {:.4}  RMSE {:.4}  MAPE {:.2}%  (n={})", m.mae, m.rmse, m.mape_percent, m.count)?;
    if m.per_step.len() > 1 {
        writeln!(out, "step       MAE      RMSE    MAPE%")?;
        for s in &m.per_step {
            writeln!(out, "{:>4} {:>9.4} {:>9.4} {:>8.2}", s.step, s.mae, s.rmse, s.mape_percent)?;
        }
    }
    Ok(())
}

fn cmd_train(raw: &RawConfig, out: &mut dyn Write) -> Result<()> {
    let allowed: Vec<&str> = TRAIN_KEYS.iter().chain(DATA_KEYS).chain(GRID_KEYS).copied().collect();
    raw.check_keys(&allowed)?;
    let cfg = training_config(raw)?;
    let inputs = load_inputs(raw)?;
    let dir = PathBuf::from(raw.get_str("out").unwrap_or("out"));
    std::fs::create_dir_all(&dir)?;

    let mut echo = training_entries(&cfg);
    echo.insert("edges".into(), inputs.edges_path.clone());
    echo.insert("flows".into(), inputs.flows_path.clone());
    echo.insert("interval_minutes".into(), inputs.interval.to_string());
    echo.insert("out".into(), dir.display().to_string());
    for key in GRID_KEYS.iter().chain(&["nodes"]) {
        if let Some(v) = raw.get_str(key) {
            echo.insert(key.to_string(), v.to_string());
        }
    }
    std::fs::write(dir.join("config.txt"), render(&echo))?;

    if raw.get_bool("grid", false)? {
        let std = GridCandidates::standard();
        let cands = GridCandidates {
            k: raw.get_list("grid_k", &std.k)?,
            window: raw.get_list("grid_window", &std.window)?,
            hops: raw.get_list("grid_hops", &std.hops)?,
        };
        let epochs = raw.get("grid_epochs", cfg.epochs)?;
        let result = grid_search(&cands, &inputs.flows, &inputs.graph, &cfg, epochs)?;
        write_json(&dir.join("grid.json"), &result)?;
        writeln!(out, "   K    w  hops   val MAE  val RMSE")?;
        for r in &result.ranked {
            let v = r.val.as_ref().expect("ranked runs have metrics");
            writeln!(out, "{:>4} {:>4} {:>5} {:>9.4} {:>9.4}", r.k, r.window, r.hops, v.mae, v.rmse)?;
        }
        for r in &result.failed {
            writeln!(out, "{:>4} {:>4} {:>5}  failed: {}", r.k, r.window, r.hops, r.error.as_deref().unwrap_or("?"))?;
        }
        return Ok(());
    }

    let ex = Experiment::new(&inputs.flows, &inputs.graph, cfg)?;
    let tag = ex.cfg.variant_tag();
    let fit = ex.fit()?;
    std::fs::write(dir.join(format!("history_{tag}.jsonl")), history_jsonl(&fit.history)?)?;
    for r in &fit.history {
        writeln!(out, "epoch {:>3}  loss {:.6}  val MAE {:.4}  val RMSE {:.4}", r.epoch, r.train_loss, r.val_mae, r.val_rmse)?;
    }
    if fit.best_epoch.is_some() {
        fit.params.save(dir.join(format!("checkpoint_{tag}.json")))?;
    }
    if let FitStatus::Diverged { epoch, reason } = &fit.status {
        let kept = fit.best_epoch.map_or("no checkpoint written".to_string(), |e| format!("kept epoch {e}"));
        return Err(Error::NonFinite(format!("training diverged in epoch {epoch}: {reason}; {kept}")));
    }
    let val = ex.evaluate(&fit.params, ex.split.val)?;
    let test = ex.evaluate(&fit.params, ex.split.test)?;
    let metrics = serde_json::json!({
        "variant": tag,
        "best_epoch": fit.best_epoch,
        "val": val,
        "test": test,
    });
    write_json(&dir.join(format!("metrics_{tag}.json")), &metrics)?;
    writeln!(out, "best epoch {}", fit.best_epoch.unwrap_or(0))?;
    print_report(out, "val", &val)?;
    print_report(out, "test", &test)?;
    Ok(())
}

/// Training settings for a stored model: architecture keys come from the
/// checkpoint, and an explicit conflicting key is an incompatibility.
fn config_for_checkpoint(raw: &RawConfig, model: &ModelConfig) -> Result<TrainingConfig> {
    let mut cfg = training_config(raw)?;
    let given = cfg.model_config(model.flow_mean, model.flow_std);
    let checks: [(&str, bool, String); 12] = [
        ("d", given.d == model.d, model.d.to_string()),
        ("window", given.window == model.window, model.window.to_string()),
        ("k", given.k == model.k, model.k.to_string()),
        ("horizon", given.horizon == model.horizon, model.horizon.to_string()),
        ("dropout", given.dropout == model.dropout, model.dropout.to_string()),
        ("top_k", given.top_k == model.top_k, model.top_k.to_string()),
        ("literal_eq5", given.literal_eq5 == model.literal_eq5, model.literal_eq5.to_string()),
        ("share_time", given.share_time == model.share_time, model.share_time.to_string()),
        ("share_encoders", given.share_encoders == model.share_encoders, model.share_encoders.to_string()),
        ("sg_mode", given.sg_mode == model.sg_mode, model.sg_mode.to_string()),
        ("ablate_spatial", given.ablate_spatial == model.ablate_spatial, model.ablate_spatial.to_string()),
        ("ablate_ctg", given.ablate_ctg == model.ablate_ctg, model.ablate_ctg.to_string()),
    ];
    for (key, same, stored) in checks {
        if raw.contains(key) && !same {
            return Err(Error::Incompatible(format!(
                "{key} = {} requested but the checkpoint was trained with {key} = {stored}",
                raw.get_str(key).unwrap_or_default()
            )));
        }
    }
    cfg.d = model.d;
    cfg.window = model.window;
    cfg.k = model.k;
    cfg.horizon = model.horizon;
    cfg.dropout = model.dropout;
    cfg.top_k = Some(model.top_k);
    cfg.literal_eq5 = model.literal_eq5;
    cfg.share_time = model.share_time;
    cfg.share_encoders = model.share_encoders;
    cfg.sg_mode = model.sg_mode;
    cfg.ablate_spatial = model.ablate_spatial;
    cfg.ablate_ctg = model.ablate_ctg;
    cfg.random_c0 = model.random_c0;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_eval(raw: &RawConfig, out: &mut dyn Write) -> Result<()> {
    let allowed: Vec<&str> = TRAIN_KEYS.iter().chain(DATA_KEYS).chain(GRID_KEYS).chain(&["checkpoint", "on"]).copied().collect();
    raw.check_keys(&allowed)?;
    let params = ModelParams::load(raw.require("checkpoint")?)?;
    let cfg = config_for_checkpoint(raw, &params.config)?;
    let inputs = load_inputs(raw)?;
    let ex = Experiment::new(&inputs.flows, &inputs.graph, cfg)?;
    let on = raw.get_str("on").unwrap_or("test");
    let range = split_range(&ex, on)?;
    let report = ex.evaluate(&params, range)?;
    if let Some(dir) = raw.get_str("out") {
        std::fs::create_dir_all(dir)?;
        write_json(&Path::new(dir).join(format!("eval_{on}_{}.json", ex.cfg.variant_tag())), &report)?;
    }
    writeln!(out, "{}", serde_json::to_string(&report)?)?;
    print_report(out, on, &report)?;
    Ok(())
}

fn split_range(ex: &Experiment<'_>, name: &str) -> Result<TimeRange> {
    match name {
        "train" => Ok(ex.split.train),
        "val" => Ok(ex.split.val),
        "test" => Ok(ex.split.test),
        _ => Err(Error::Config(format!("unknown split {name:?} (train, val, test)"))),
    }
}

/// One row of the gradient check.
#[derive(Clone, Debug)]
pub struct CheckLine {
    pub component: String,
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl CheckLine {
    pub fn passes(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

/// Settings of the tiny model used by the full gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckSetup {
    pub seed: u64,
    pub sg_mode: SgMode,
    pub literal_eq5: bool,
    /// Flip one analytic gradient of the full model before comparing.
    pub sabotage: bool,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        GradCheckSetup { seed: 0, sg_mode: SgMode::Message, literal_eq5: false, sabotage: false }
    }
}

/// The op suite plus the full model on a 5-node path with `K=2`, `w=4`,
/// `D=8`, one sample and horizon 1.
pub fn gradcheck_suite(setup: &GradCheckSetup) -> Result<Vec<CheckLine>> {
    let mut lines: Vec<CheckLine> = op_suite(setup.seed)?
        .into_iter()
        .map(|(component, report)| CheckLine { component, report, tolerance: OP_TOLERANCE })
        .collect();
    let spec = SynthSpec { nodes: 5, steps: 40, seed: setup.seed, ..SynthSpec::default() };
    let data = SyntheticData::generate(&spec)?;
    let cfg = TrainingConfig {
        d: 8,
        k: 2,
        window: 4,
        horizon: 1,
        seed: setup.seed,
        sg_mode: setup.sg_mode,
        literal_eq5: setup.literal_eq5,
        ..TrainingConfig::default()
    };
    let ex = Experiment::new(&data.flows, &data.graph, cfg)?;
    let params = ex.init_params()?;
    let idx = ex.windower.indices(ex.split.train)?;
    let batch = ex.windower.batch(&idx[..1], ex.eval_stream())?;
    let report = model_gradcheck(&params.config, &params.tensors, &batch, ex.cfg.huber_beta, setup.sabotage)?;
    lines.push(CheckLine { component: "full_model".into(), report, tolerance: MODEL_TOLERANCE });
    Ok(lines)
}

fn cmd_gradcheck(raw: &RawConfig, out: &mut dyn Write) -> Result<()> {
    raw.check_keys(GRADCHECK_KEYS)?;
    let setup = GradCheckSetup {
        seed: resolve_seed(raw, 0)?,
        sg_mode: raw.get("sg_mode", SgMode::Message)?,
        literal_eq5: raw.get_bool("literal_eq5", false)?,
        sabotage: raw.get_bool("sabotage", false)?,
    };
    let lines = gradcheck_suite(&setup)?;
    writeln!(out, "component          worst rel err   tolerance  entries  result")?;
    for l in &lines {
        writeln!(
            out,
            "{:<18} {:>13.3e} {:>11.0e} {:>8}  {}",
            l.component,
            l.report.max_rel_error,
            l.tolerance,
            l.report.entries_checked,
            if l.passes() { "ok" } else { "FAIL" }
        )?;
    }
    let failed: Vec<String> = lines
        .iter()
        .filter(|l| !l.passes())
        .map(|l| {
            format!(
                "{} (tensor {} entry {}: analytic {:.6e}, numeric {:.6e})",
                l.component, l.report.tensor, l.report.index, l.report.analytic, l.report.numeric
            )
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::GradCheck(failed.join("; ")))
    }
}

/// Parses `node:anchor` pairs, or plain indices into the chosen split's windows.
fn parse_samples(spec: &str, windows: &[crate::data::SampleIndex]) -> Result<Vec<crate::data::SampleIndex>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s.split_once(':') {
            Some((n, a)) => {
                let node: usize = n.parse().map_err(|_| Error::Config(format!("bad sample {s:?}")))?;
                let anchor: usize = a.parse().map_err(|_| Error::Config(format!("bad sample {s:?}")))?;
                windows
                    .iter()
                    .find(|w| w.node == node && w.anchor == anchor)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("no window for node {node} at anchor {anchor} in this split")))
            }
            None => {
                let i: usize = s.parse().map_err(|_| Error::Config(format!("bad sample {s:?}")))?;
                windows
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("sample {i} out of range ({} windows)", windows.len())))
            }
        })
        .collect()
}

fn cmd_export_attention(raw: &RawConfig, out: &mut dyn Write) -> Result<()> {
    let allowed: Vec<&str> = TRAIN_KEYS.iter().chain(DATA_KEYS).chain(GRID_KEYS).chain(&["checkpoint", "on", "samples"]).copied().collect();
    raw.check_keys(&allowed)?;
    let params = ModelParams::load(raw.require("checkpoint")?)?;
    let cfg = config_for_checkpoint(raw, &params.config)?;
    let inputs = load_inputs(raw)?;
    let ex = Experiment::new(&inputs.flows, &inputs.graph, cfg)?;
    let range = split_range(&ex, raw.get_str("on").unwrap_or("test"))?;
    let windows = ex.windower.indices(range)?;
    let picked = parse_samples(raw.get_str("samples").unwrap_or("0"), &windows)?;
    if picked.is_empty() {
        return Err(Error::Config("no samples selected".into()));
    }
    let dir = PathBuf::from(raw.get_str("out").unwrap_or("out"));
    std::fs::create_dir_all(&dir)?;
    let batch = ex.windower.batch(&picked, ex.eval_stream())?;
    for trace in attention_traces(&params, &batch)? {
        let path = dir.join(format!("attention_{}_{}.json", trace.sample.node, trace.sample.anchor));
        write_json(&path, &trace)?;
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(())
}
