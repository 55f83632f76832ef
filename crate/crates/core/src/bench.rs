//! Wall-clock scaling of one training epoch.
//!
//! Each cell synthesizes a one-type graph with `R` relations of about `e`
//! out-edges per node, builds a model whose window spans `T` snapshots and
//! times full epochs (forward, backward and one optimizer step on a single
//! target). Cells run one after another on the calling thread.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ablation::DecoupledBaseline;
use crate::data::{generate_synthetic, SynthConfig, SynthRelation, SynthType};
use crate::error::{Error, Result};
use crate::model::{Forecaster, Model, ModelConfig, PreparedGraph};
use crate::prompt::{embed_dataset, FallbackProvider};
use crate::tensor::Graph;
use crate::train::{adam_step, training_loss, AdamConfig, AdamState, Task, TaskSpec};

/// Epochs shorter than this are too close to the timer resolution.
pub const MIN_EPOCH_MS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchModel {
    /// The recurrent relation-attention model.
    Dynamic,
    /// The spatial-then-temporal baseline.
    Baseline,
}

impl BenchModel {
    pub fn name(self) -> &'static str {
        match self {
            BenchModel::Dynamic => "dynamic",
            BenchModel::Baseline => "baseline",
        }
    }
}

/// Benchmark grid. Every axis with more than one value is swept on its own
/// while the other axes stay at their first value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub models: Vec<BenchModel>,
    /// Window lengths `T`.
    pub windows: Vec<usize>,
    /// Nodes `n`.
    pub nodes: Vec<usize>,
    /// Expected out-degree `e` per relation.
    pub degrees: Vec<usize>,
    /// Relations `R`.
    pub relations: usize,
    /// Hidden width `d`, also used as the feature width.
    pub hidden_dim: usize,
    pub layers: usize,
    /// Width of the pseudo type embeddings.
    pub llm_dim: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            models: vec![BenchModel::Dynamic, BenchModel::Baseline],
            windows: vec![64, 128, 256, 512],
            nodes: vec![200],
            degrees: vec![4],
            relations: 2,
            hidden_dim: 4,
            layers: 2,
            llm_dim: 64,
            repeats: 3,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("bench: {m}")));
        if self.models.is_empty() {
            return bad("at least one model is required");
        }
        for (name, axis) in [("windows", &self.windows), ("nodes", &self.nodes), ("degrees", &self.degrees)] {
            if axis.is_empty() || axis.contains(&0) {
                return bad(&format!("{name} must be non-empty and positive"));
            }
            if axis.len() == 2 {
                return bad(&format!("a swept axis needs at least 3 points, {name} has 2"));
            }
        }
        if [&self.windows, &self.nodes, &self.degrees].iter().all(|a| a.len() == 1) {
            return bad("no axis is swept");
        }
        if self.degrees.iter().any(|&e| e >= self.nodes[0]) {
            return bad("degrees must stay below the node count");
        }
        if self.relations == 0 || self.hidden_dim == 0 || self.layers == 0 || self.llm_dim == 0 {
            return bad("relations, hidden_dim, layers and llm_dim must be positive");
        }
        if self.repeats < 3 {
            return bad("repeats must be at least 3");
        }
        Ok(())
    }

    /// Cells of the grid as `(T, n, e)`, without duplicates.
    fn points(&self) -> Vec<(usize, usize, usize)> {
        let base = (self.windows[0], self.nodes[0], self.degrees[0]);
        let mut pts = vec![base];
        pts.extend(self.windows.iter().map(|&t| (t, base.1, base.2)));
        pts.extend(self.nodes.iter().map(|&n| (base.0, n, base.2)));
        pts.extend(self.degrees.iter().map(|&e| (base.0, base.1, e)));
        let mut seen = std::collections::HashSet::new();
        pts.retain(|p| seen.insert(*p));
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub model: BenchModel,
    #[serde(rename = "T")]
    pub t: usize,
    pub n: usize,
    #[serde(rename = "R")]
    pub r: usize,
    pub e: usize,
    pub d: usize,
    pub params: usize,
    pub epoch_ms_median: f64,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub cells: Vec<BenchCell>,
    /// Fitted log–log slope per model and swept axis (`T`, `n`, `e`).
    pub exponents: BTreeMap<String, BTreeMap<String, f64>>,
    pub threads: usize,
}

impl BenchResult {
    pub fn exponent(&self, model: BenchModel, axis: &str) -> Option<f64> {
        self.exponents.get(model.name())?.get(axis).copied()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let err = |e: csv::Error| Error::Bench(format!("writing {}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        for c in &self.cells {
            w.serialize(c).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f).map_err(|e| Error::io(path, e))
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Bench(format!("slope fit needs matching series of 2+ points, got {} and {}", xs.len(), ys.len())));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Bench("slope fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Bench("slope fit needs at least two distinct x values".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// Graph of one cell: `T + 1` snapshots so that exactly one target exists.
fn bench_graph(cfg: &BenchConfig, t: usize, n: usize, e: usize) -> Result<PreparedGraph> {
    let relations = (0..cfg.relations)
        .map(|r| SynthRelation {
            name: format!("r{r}"),
            src: "node".into(),
            dst: "node".into(),
            density: e as f64 / n as f64,
            homophily: 0.5,
            symmetric: false,
            informative: None,
        })
        .collect();
    let sc = SynthConfig {
        node_types: vec![SynthType {
            name: "node".into(),
            count: n,
            feature_dim: cfg.hidden_dim,
            description: "Nodes of a benchmark graph.".into(),
        }],
        relations,
        num_snapshots: t + 1,
        communities: 4,
        signal: 1.0,
        noise: 1.0,
        drift: 0.0,
        seed: cfg.seed,
    };
    PreparedGraph::new(&generate_synthetic(&sc)?.graph)
}

fn build(cfg: &BenchConfig, kind: BenchModel, data: &PreparedGraph, t: usize, task: &Task) -> Result<Box<dyn Forecaster>> {
    let mc = ModelConfig { hidden_dim: cfg.hidden_dim, layers: cfg.layers, window: t, ..ModelConfig::default() };
    Ok(match kind {
        BenchModel::Dynamic => {
            let emb = embed_dataset(&data.graph, &mut FallbackProvider::new(cfg.llm_dim, cfg.seed), None)?;
            let emb = emb.matrix(&data.schema.type_names)?;
            Box::new(Model::new(&data.schema, &mc, task.head(), Some(emb), cfg.seed)?)
        }
        BenchModel::Baseline => Box::new(DecoupledBaseline::new(&data.schema, &mc, task.head())?),
    })
}

fn measure(cfg: &BenchConfig, kind: BenchModel, t: usize, n: usize, e: usize) -> Result<BenchCell> {
    let data = bench_graph(cfg, t, n, e)?;
    let task = Task::resolve(&TaskSpec::Link { relation: "r0".into() }, &data)?;
    let model = build(cfg, kind, &data, t, &task)?;
    let mut params = model.init_params(cfg.seed);
    let param_count = params.count();
    let opt = AdamConfig::default();
    let mut state = AdamState::new();
    let mut epoch = || -> Result<f64> {
        let start = Instant::now();
        let mut g = Graph::new();
        let b = params.bind(&mut g, |name| model.is_frozen(name));
        let loss = training_loss(&mut g, &b, model.as_ref(), &data, &task, &[t], cfg.seed)?;
        g.backward(loss)?;
        let mut grads = b.grads(&g);
        grads.retain(|name, _| !model.is_frozen(name));
        drop(g);
        adam_step(&mut params, &grads, &mut state, &opt)?;
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    epoch()?;
    let mut times = (0..cfg.repeats).map(|_| epoch()).collect::<Result<Vec<_>>>()?;
    let ms = median(&mut times);
    if ms < MIN_EPOCH_MS {
        return Err(Error::Bench(format!(
            "{} epoch at T={t}, n={n}, e={e} took {ms:.3} ms; enlarge the instance",
            kind.name()
        )));
    }
    Ok(BenchCell {
        model: kind,
        t,
        n,
        r: cfg.relations,
        e,
        d: cfg.hidden_dim,
        params: param_count,
        epoch_ms_median: ms,
        repeats: cfg.repeats,
    })
}

/// Measures every cell of the grid and fits a slope per swept axis.
pub fn bench_scaling(cfg: &BenchConfig, on_cell: &mut dyn FnMut(&BenchCell)) -> Result<BenchResult> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &kind in &cfg.models {
        for (t, n, e) in cfg.points() {
            let cell = measure(cfg, kind, t, n, e)?;
            on_cell(&cell);
            cells.push(cell);
        }
    }
    let base = (cfg.windows[0], cfg.nodes[0], cfg.degrees[0]);
    let mut exponents = BTreeMap::new();
    for &kind in &cfg.models {
        let mut fits = BTreeMap::new();
        let axes: [(&str, &Vec<usize>, fn(&BenchCell) -> usize); 3] =
            [("T", &cfg.windows, |c| c.t), ("n", &cfg.nodes, |c| c.n), ("e", &cfg.degrees, |c| c.e)];
        for (axis, values, get) in axes {
            if values.len() < 3 {
                continue;
            }
            let on_axis = |c: &&BenchCell| {
                let key = (c.t, c.n, c.e);
                c.model == kind
                    && match axis {
                        "T" => (key.1, key.2) == (base.1, base.2),
                        "n" => (key.0, key.2) == (base.0, base.2),
                        _ => (key.0, key.1) == (base.0, base.1),
                    }
            };
            let pts: Vec<&BenchCell> = cells.iter().filter(on_axis).filter(|c| values.contains(&get(c))).collect();
            let xs: Vec<f64> = pts.iter().map(|c| get(c) as f64).collect();
            let ys: Vec<f64> = pts.iter().map(|c| c.epoch_ms_median).collect();
            fits.insert(axis.to_string(), loglog_slope(&xs, &ys)?);
        }
        exponents.insert(kind.name().to_string(), fits);
    }
    Ok(BenchResult { cells, exponents, threads: 1 })
}
