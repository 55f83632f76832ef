//! Command-line front end.
//!
//! Every command reads one JSON [`RunConfig`], applies `--set key=value`
//! overrides and writes its artifacts under the output directory next to the
//! effective configuration (`config.json`).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ablation::DecoupledBaseline;
use crate::bench::{bench_scaling, BenchConfig, BenchModel};
use crate::data::{generate_synthetic, load_dataset, write_dataset, HTGraph, SynthConfig};
use crate::error::{Error, Result};
use crate::model::{read_checkpoint, write_checkpoint, Forecaster, Model, ModelConfig, PreparedGraph};
use crate::prompt::{embed_dataset, EmbeddingCache, EmbeddingTable, ProviderConfig};
use crate::train::{evaluate, grad_check_groups, train, EpochRecord, Task, TaskSpec, TrainConfig};

/// Where the graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// A dataset directory or its `manifest.json`.
    Path { path: PathBuf },
    /// A fully specified synthetic graph.
    Synth { config: SynthConfig },
    /// A built-in synthetic graph: `toy`, `planted_link` or `regime_switch`.
    Preset {
        name: String,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetSpec {
    fn synth_config(&self) -> Result<Option<SynthConfig>> {
        Ok(match self {
            DatasetSpec::Path { .. } => None,
            DatasetSpec::Synth { config } => Some(config.clone()),
            DatasetSpec::Preset { name, seed } => Some(match name.as_str() {
                "toy" => SynthConfig::toy(*seed),
                "planted_link" => SynthConfig::planted_link(*seed),
                "regime_switch" => SynthConfig::regime_switch(*seed),
                other => {
                    return Err(Error::Config(format!(
                        "dataset.name: unknown preset '{other}' (expected toy, planted_link or regime_switch)"
                    )))
                }
            }),
        })
    }

    pub fn load(&self) -> Result<HTGraph> {
        match (self, self.synth_config()?) {
            (DatasetSpec::Path { path }, _) => load_dataset(path),
            (_, Some(cfg)) => Ok(generate_synthetic(&cfg)?.graph),
            _ => unreachable!("only paths lack a synth config"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub threshold: f64,
    /// Coordinates perturbed per parameter group; all when unset.
    pub max_coords: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-3, threshold: 1e-4, max_coords: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: Option<DatasetSpec>,
    pub task: Option<TaskSpec>,
    pub architecture: BenchModel,
    pub model: ModelConfig,
    pub provider: ProviderConfig,
    /// Precomputed embedding table; takes precedence over `provider`.
    pub embeddings: Option<PathBuf>,
    /// Directory of the per-prompt embedding cache.
    pub cache_dir: Option<PathBuf>,
    pub train: TrainConfig,
    pub gradcheck: GradCheckConfig,
    pub bench: BenchConfig,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            task: None,
            architecture: BenchModel::Dynamic,
            model: ModelConfig::default(),
            provider: ProviderConfig::default(),
            embeddings: None,
            cache_dir: None,
            train: TrainConfig::default(),
            gradcheck: GradCheckConfig::default(),
            bench: BenchConfig::default(),
            out: None,
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `key=value`
    /// overrides, and deserializes the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("reading {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for kv in overrides {
            let (key, raw) =
                kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects key=value, got '{kv}'")))?;
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut value, key, parsed)?;
        }
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    fn validate(&self, cmd: &Command) -> Result<()> {
        let need = |present: bool, field: &str| {
            if present {
                Ok(())
            } else {
                Err(Error::Config(format!("{field} is required by this command")))
            }
        };
        match cmd {
            Command::Bench(_) => self.bench.validate()?,
            Command::Synth(_) => {
                need(self.dataset.is_some(), "dataset")?;
                if matches!(self.dataset, Some(DatasetSpec::Path { .. })) {
                    return Err(Error::Config("dataset: synth needs a synth or preset dataset".into()));
                }
                self.dataset.as_ref().expect("checked").synth_config()?;
            }
            Command::Embed(_) => need(self.dataset.is_some(), "dataset")?,
            Command::Train(_) | Command::Eval(_) | Command::Gradcheck(_) => {
                need(self.dataset.is_some(), "dataset")?;
                need(self.task.is_some(), "task")?;
                self.model.validate()?;
                self.train.validate()?;
                let gc = &self.gradcheck;
                if !(gc.eps > 0.0 && gc.threshold > 0.0) || gc.max_coords == Some(0) {
                    return Err(Error::Config("gradcheck: eps, threshold and max_coords must be positive".into()));
                }
            }
        }
        if !matches!(cmd, Command::Gradcheck(_)) {
            need(self.out.is_some(), "out")?;
        }
        Ok(())
    }
}

/// Sets a dotted `key` inside a JSON object tree, creating objects on the way.
fn set_path(root: &mut Value, key: &str, v: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("--set: malformed key '{key}'")));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("--set {key}: '{}' is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), v);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
    }
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "htgnn", version, about = "Heterogeneous temporal graph learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set model.hidden_dim=16`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; same as `--set out=<dir>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to evaluate; defaults to `<out>/checkpoint.bin`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset into `<out>/dataset`.
    Synth(Common),
    /// Embed the node-type prompts into `<out>/embeddings.json`.
    Embed(Common),
    /// Train and write the report, checkpoint and convergence curve.
    Train(Common),
    /// Score a checkpoint on the validation and test targets.
    Eval(EvalArgs),
    /// Compare analytic and numeric gradients per parameter group.
    Gradcheck(Common),
    /// Time training epochs over a grid and fit scaling exponents.
    Bench(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth(c) | Command::Embed(c) | Command::Train(c) | Command::Gradcheck(c) | Command::Bench(c) => c,
            Command::Eval(e) => &e.common,
        }
    }
}

/// Outcome of a command that ran to completion.
enum Outcome {
    Ok,
    /// Completed, but a check did not pass.
    Failed(String),
}

/// Runs the command line `args` (program name first) and returns the exit
/// code: 0 on success, 1 on usage or validation errors, 2 on runtime failures.
pub fn run_command<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match load_config(&cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match execute(&cli.command, &cfg) {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::Failed(msg)) => {
            eprintln!("failed: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn load_config(cmd: &Command) -> Result<RunConfig> {
    let c = cmd.common();
    let mut overrides = c.overrides.clone();
    if let Some(out) = &c.out {
        overrides.push(format!("out={}", serde_json::to_string(out)?));
    }
    let cfg = RunConfig::load(c.config.as_deref(), &overrides)?;
    cfg.validate(cmd)?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().ok_or_else(|| Error::Config("out is required".into()))?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").map_err(|e| Error::io(path, e))
}

fn embeddings(cfg: &RunConfig, graph: &HTGraph) -> Result<EmbeddingTable> {
    if let Some(path) = &cfg.embeddings {
        return EmbeddingTable::read(path);
    }
    let mut provider = cfg.provider.build()?;
    let cache = cfg.cache_dir.as_ref().map(EmbeddingCache::new);
    embed_dataset(graph, provider.as_mut(), cache.as_ref())
}

/// Loaded dataset, resolved task and an initialized model.
struct Setup {
    data: PreparedGraph,
    task: Task,
    model: Box<dyn Forecaster>,
}

fn setup(cfg: &RunConfig) -> Result<Setup> {
    let graph = cfg.dataset.as_ref().expect("validated").load()?;
    let data = PreparedGraph::new(&graph)?;
    let task = Task::resolve(cfg.task.as_ref().expect("validated"), &data)?;
    let model: Box<dyn Forecaster> = match cfg.architecture {
        BenchModel::Dynamic => {
            let v = cfg.model.variant;
            let emb = if v.init == crate::ablation::InitKind::Llm && v.attention.uses_init() {
                Some(embeddings(cfg, &graph)?.matrix(&data.schema.type_names)?)
            } else {
                None
            };
            Box::new(Model::new(&data.schema, &cfg.model, task.head(), emb, cfg.train.seed)?)
        }
        BenchModel::Baseline => Box::new(DecoupledBaseline::new(&data.schema, &cfg.model, task.head())?),
    };
    Ok(Setup { data, task, model })
}

fn write_curves(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    let err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let keys: Vec<&String> = epochs.first().map(|e| e.val_metrics.keys().collect()).unwrap_or_default();
    let mut header = vec!["epoch".to_string(), "train_loss".to_string()];
    header.extend(keys.iter().map(|k| format!("val_{k}")));
    header.push("wall_ms".into());
    w.write_record(&header).map_err(err)?;
    for e in epochs {
        let mut row = vec![e.epoch.to_string(), e.train_loss.to_string()];
        row.extend(keys.iter().map(|k| e.val_metrics[*k].to_string()));
        row.push(e.wall_ms.to_string());
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn execute(cmd: &Command, cfg: &RunConfig) -> Result<Outcome> {
    match cmd {
        Command::Synth(_) => {
            let dir = out_dir(cfg)?;
            let sc = cfg.dataset.as_ref().expect("validated").synth_config()?.expect("validated");
            let graph = generate_synthetic(&sc)?.graph;
            write_dataset(&graph, &dir.join("dataset"))?;
            println!("wrote {}", dir.join("dataset").display());
        }
        Command::Embed(_) => {
            let dir = out_dir(cfg)?;
            let graph = cfg.dataset.as_ref().expect("validated").load()?;
            let table = embeddings(cfg, &graph)?;
            table.write(&dir.join("embeddings.json"))?;
            println!("embedded {} types (dim {})", table.entries.len(), table.dim().unwrap_or(0));
        }
        Command::Train(_) => {
            let dir = out_dir(cfg)?;
            let s = setup(cfg)?;
            let mut params = s.model.init_params(cfg.train.seed);
            let report = train(s.model.as_ref(), &mut params, &s.data, &s.task, &cfg.train, &mut |e| {
                let metrics: Vec<String> = e.val_metrics.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
                println!("epoch {:>4}  loss {:.6}  {}", e.epoch, e.train_loss, metrics.join("  "));
            })?;
            write_json(&dir.join("report.json"), &report)?;
            write_checkpoint(&dir.join("checkpoint.bin"), &params)?;
            write_curves(&dir.join("curves.csv"), &report.epochs)?;
            println!("best epoch {}; test {:?}", report.best_epoch, report.test_metrics);
        }
        Command::Eval(args) => {
            let dir = out_dir(cfg)?;
            let s = setup(cfg)?;
            let path = args.checkpoint.clone().unwrap_or_else(|| dir.join("checkpoint.bin"));
            let mut params = s.model.init_params(cfg.train.seed);
            params.load_from(&read_checkpoint(&path)?)?;
            let split = cfg.train.split(s.data.num_snapshots(), s.model.window(), s.model.horizon())?;
            let mut metrics = std::collections::BTreeMap::new();
            for (name, targets) in [("val", &split.val), ("test", &split.test)] {
                metrics.insert(name, evaluate(s.model.as_ref(), &params, &s.data, &s.task, targets, cfg.train.seed)?);
            }
            write_json(&dir.join("metrics.json"), &metrics)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::Gradcheck(_) => {
            let s = setup(cfg)?;
            let params = s.model.init_params(cfg.train.seed);
            let (w, h) = (s.model.window(), s.model.horizon());
            let targets: Vec<usize> = (w..=s.data.num_snapshots().saturating_sub(h)).collect();
            let gc = &cfg.gradcheck;
            let checks =
                grad_check_groups(s.model.as_ref(), &params, &s.data, &s.task, &targets, cfg.train.seed, gc.eps, gc.max_coords)?;
            for c in &checks {
                println!("{:<32} {:>6}/{:<6} {:.3e}", c.group, c.checked, c.total, c.max_rel_error);
            }
            if cfg.out.is_some() {
                write_json(&out_dir(cfg)?.join("gradcheck.json"), &checks)?;
            }
            let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
            println!("max relative error {worst:.3e} (threshold {:.0e})", gc.threshold);
            if worst > gc.threshold {
                return Ok(Outcome::Failed(format!("max relative error {worst:.3e} exceeds {:.0e}", gc.threshold)));
            }
        }
        Command::Bench(_) => {
            let dir = out_dir(cfg)?;
            let result = bench_scaling(&cfg.bench, &mut |c| {
                println!("{:<8} T={:<4} n={:<5} e={:<3} params={:<7} {:.2} ms", c.model.name(), c.t, c.n, c.e, c.params, c.epoch_ms_median);
            })?;
            result.write_csv(&dir.join("bench.csv"))?;
            result.write_summary(&dir.join("bench.json"))?;
            for (model, fits) in &result.exponents {
                for (axis, slope) in fits {
                    println!("{model} exponent in {axis}: {slope:.3}");
                }
            }
        }
    }
    Ok(Outcome::Ok)
}
