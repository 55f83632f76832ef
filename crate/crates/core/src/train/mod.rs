//! Task losses, optimization, evaluation and the full-graph training loop.
//!
//! Every epoch runs one forward pass per training target on a shared tape,
//! sums the task losses, back-propagates once and takes one Adam step. The
//! validation metric is recorded after each step; the parameters of the best
//! epoch are restored before the test targets are scored.

mod check;
mod loss;
mod metrics;
mod optim;
mod sample;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use check::{grad_check_groups, param_group, GroupCheck};
pub use loss::{classify_loss, link_loss, pair_scores, regress_loss};
pub use metrics::{argmax_rows, auc, average_precision, macro_f1, macro_recall, mae, rmse};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use sample::{positive_pairs, sample_negatives};

use crate::data::{split_temporal, TemporalSplit};
use crate::error::{Error, Result};
use crate::model::{Bound, Forecaster, ForwardOptions, ForwardOutput, HeadKind, ParamStore, PreparedGraph};
use crate::prompt::SplitMix64;
use crate::tensor::{Graph, Var};

/// What the model is trained to forecast.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TaskSpec {
    /// Presence of edges of `relation` at future snapshots.
    Link { relation: String },
    /// A class label series.
    Classify { label: String },
    /// A real-valued label series.
    Regress { label: String },
}

/// A [`TaskSpec`] bound to the indices of one graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Link { relation: usize, src: usize, dst: usize },
    Classify { label: usize, node_type: usize, classes: usize },
    Regress { label: usize, node_type: usize },
}

impl Task {
    pub fn resolve(spec: &TaskSpec, data: &PreparedGraph) -> Result<Task> {
        let g = &data.graph;
        let label = |name: &str| {
            g.label_index(name)
                .ok_or_else(|| Error::Config(format!("task: unknown label series '{name}'")))
        };
        match spec {
            TaskSpec::Link { relation } => {
                let r = g
                    .relation_index(relation)
                    .filter(|&r| !g.relation_types[r].is_self())
                    .ok_or_else(|| Error::Config(format!("task: unknown relation '{relation}'")))?;
                let (src, dst) = g.endpoints(r);
                Ok(Task::Link { relation: r, src, dst })
            }
            TaskSpec::Classify { label: name } => {
                let l = label(name)?;
                let spec = &g.labels[l].spec;
                let classes = spec
                    .num_classes
                    .ok_or_else(|| Error::Config(format!("task: label series '{name}' has no classes")))?;
                if classes < 2 {
                    return Err(Error::Config(format!("task: label series '{name}' has {classes} class")));
                }
                let node_type = g.type_index(&spec.node_type).expect("validated graph");
                Ok(Task::Classify { label: l, node_type, classes })
            }
            TaskSpec::Regress { label: name } => {
                let l = label(name)?;
                let node_type = g.type_index(&g.labels[l].spec.node_type).expect("validated graph");
                Ok(Task::Regress { label: l, node_type })
            }
        }
    }

    pub fn head(&self) -> HeadKind {
        match *self {
            Task::Link { .. } => HeadKind::Link,
            Task::Classify { classes, .. } => HeadKind::Classify { classes },
            Task::Regress { .. } => HeadKind::Regress,
        }
    }

    /// Node types whose predictions the task reads.
    pub fn outputs(&self) -> Vec<usize> {
        match *self {
            Task::Link { src, dst, .. } if src == dst => vec![src],
            Task::Link { src, dst, .. } => vec![src, dst],
            Task::Classify { node_type, .. } | Task::Regress { node_type, .. } => vec![node_type],
        }
    }

    /// Early-stopping metric and whether larger is better.
    pub fn stop_metric(&self) -> (&'static str, bool) {
        match self {
            Task::Link { .. } => ("auc", true),
            Task::Classify { .. } => ("macro_f1", true),
            Task::Regress { .. } => ("mae", false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub optimizer: AdamConfig,
    /// Targets held out for validation and test, taken from the end.
    pub n_val: usize,
    pub n_test: usize,
    /// Draw fresh training negatives every epoch.
    pub resample_negatives: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            patience: 50,
            optimizer: AdamConfig::default(),
            n_val: 1,
            n_test: 1,
            resample_negatives: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.patience == 0 {
            return Err(Error::Config("train.epochs and train.patience must be positive".into()));
        }
        if self.n_val == 0 || self.n_test == 0 {
            return Err(Error::Config("train.n_val and train.n_test must be positive".into()));
        }
        self.optimizer.validate()
    }

    pub fn split(&self, num_snapshots: usize, window: usize, horizon: usize) -> Result<TemporalSplit> {
        let s = split_temporal(num_snapshots, window, horizon, self.n_val, self.n_test)?;
        if s.train.is_empty() {
            return Err(Error::Config(format!("no training targets left in {num_snapshots} snapshots")));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metrics: BTreeMap<String, f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stop_metric: String,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub test_metrics: BTreeMap<String, f64>,
    pub param_count: usize,
    pub total_wall_ms: f64,
}

/// Seed derived from a base seed and a path of integers.
pub(crate) fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut s = SplitMix64::new(base);
    let mut out = s.next_u64();
    for &p in parts {
        out = SplitMix64::new(out ^ p).next_u64();
    }
    out
}

const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

/// Loss of one target's predictions, plus the material to score it.
struct Scored {
    loss: Var,
    /// Link: pair scores and labels. Classify/regress: predictions and truth.
    pairs: Option<(Var, Vec<bool>)>,
    nodes: Option<(Var, Vec<usize>, Vec<f64>)>,
}

fn target_loss(
    g: &mut Graph,
    data: &PreparedGraph,
    task: &Task,
    out: &ForwardOutput,
    target: usize,
    neg_seed: impl Fn(usize) -> u64,
) -> Result<Vec<Scored>> {
    let steps = out.predictions.values().next().map_or(0, Vec::len);
    let mut res = Vec::with_capacity(steps);
    for s in 0..steps {
        let snap = target + s;
        match *task {
            Task::Link { relation, src, dst } => {
                let same = src == dst;
                let pos = positive_pairs(&data.graph.snapshots[snap].edges[relation], same);
                if pos.is_empty() {
                    continue;
                }
                let counts = &data.schema.counts;
                let neg = sample_negatives(&pos, counts[src], counts[dst], same, neg_seed(s))?;
                let (hs, hd) = (out.predictions[&src][s], out.predictions[&dst][s]);
                let loss = link_loss(g, hs, hd, &pos, &neg)?;
                let all: Vec<(usize, usize)> = pos.iter().chain(&neg).copied().collect();
                let scores = pair_scores(g, hs, hd, &all)?;
                let labels = (0..all.len()).map(|i| i < pos.len()).collect();
                res.push(Scored { loss, pairs: Some((scores, labels)), nodes: None });
            }
            Task::Classify { label, node_type, classes } => {
                let values = &data.graph.labels[label].values[snap];
                if values.is_empty() {
                    continue;
                }
                let nodes: Vec<usize> = values.iter().map(|p| p.0).collect();
                let ys: Vec<usize> = values.iter().map(|p| p.1 as usize).collect();
                if let Some(&bad) = ys.iter().find(|&&y| y >= classes) {
                    return Err(Error::Index(format!("class label {bad} with {classes} classes at snapshot {snap}")));
                }
                let logits = out.predictions[&node_type][s];
                let loss = classify_loss(g, logits, &nodes, &ys)?;
                let truth = ys.iter().map(|&y| y as f64).collect();
                res.push(Scored { loss, pairs: None, nodes: Some((logits, nodes, truth)) });
            }
            Task::Regress { label, node_type } => {
                let values = &data.graph.labels[label].values[snap];
                if values.is_empty() {
                    continue;
                }
                let nodes: Vec<usize> = values.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = values.iter().map(|p| p.1).collect();
                let pred = out.predictions[&node_type][s];
                let loss = regress_loss(g, pred, &nodes, &ys)?;
                res.push(Scored { loss, pairs: None, nodes: Some((pred, nodes, ys)) });
            }
        }
    }
    Ok(res)
}

/// Scores `targets` with fixed, seeded negatives.
pub fn evaluate(
    model: &dyn Forecaster,
    ps: &ParamStore,
    data: &PreparedGraph,
    task: &Task,
    targets: &[usize],
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    let (mut pred_cls, mut true_cls) = (Vec::new(), Vec::new());
    let (mut pred_reg, mut true_reg) = (Vec::new(), Vec::new());
    let mut loss = 0.0;
    for &t in targets {
        let mut g = Graph::new();
        let b = ps.bind(&mut g, |_| true);
        let out = model.forward(&mut g, &b, data, t, &task.outputs(), &ForwardOptions::default())?;
        let scored = target_loss(&mut g, data, task, &out, t, |s| derive_seed(seed, &[EVAL_STREAM, t as u64, s as u64]))?;
        for sc in scored {
            loss += g.item(sc.loss)?;
            if let Some((scores, labels)) = sc.pairs {
                for (&x, &l) in g.value(scores).data().iter().zip(&labels) {
                    if l { pos.push(x) } else { neg.push(x) }
                }
            }
            if let Some((pred, nodes, truth)) = sc.nodes {
                let v = g.value(pred);
                match task {
                    Task::Classify { classes, .. } => {
                        let am = argmax_rows(v.data(), *classes);
                        pred_cls.extend(nodes.iter().map(|&i| am[i]));
                        true_cls.extend(truth.iter().map(|&y| y as usize));
                    }
                    _ => {
                        pred_reg.extend(nodes.iter().map(|&i| v.data()[i]));
                        true_reg.extend(truth);
                    }
                }
            }
        }
    }
    let mut m = BTreeMap::from([("loss".to_string(), loss)]);
    match task {
        Task::Link { .. } => {
            m.insert("auc".into(), auc(&pos, &neg)?);
            m.insert("ap".into(), average_precision(&pos, &neg)?);
        }
        Task::Classify { classes, .. } => {
            m.insert("macro_f1".into(), macro_f1(&pred_cls, &true_cls, *classes)?);
            m.insert("recall".into(), macro_recall(&pred_cls, &true_cls, *classes)?);
        }
        Task::Regress { .. } => {
            m.insert("mae".into(), mae(&pred_reg, &true_reg)?);
            m.insert("rmse".into(), rmse(&pred_reg, &true_reg)?);
        }
    }
    Ok(m)
}

/// Summed training loss over `targets` on `g`, with parameters bound in `b`.
pub fn training_loss(
    g: &mut Graph,
    b: &Bound,
    model: &dyn Forecaster,
    data: &PreparedGraph,
    task: &Task,
    targets: &[usize],
    neg_seed: u64,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &t in targets {
        let out = model.forward(g, b, data, t, &task.outputs(), &ForwardOptions::default())?;
        for sc in target_loss(g, data, task, &out, t, |s| derive_seed(neg_seed, &[t as u64, s as u64]))? {
            total = Some(match total {
                None => sc.loss,
                Some(acc) => g.add(acc, sc.loss)?,
            });
        }
    }
    total.ok_or_else(|| Error::Config("the training targets carry no supervision".into()))
}

/// Trains `params` in place and returns the report; `params` ends at the
/// best validation epoch.
pub fn train(
    model: &dyn Forecaster,
    params: &mut ParamStore,
    data: &PreparedGraph,
    task: &Task,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if model.head() != task.head() {
        return Err(Error::Config(format!("model head {:?} does not fit the task ({:?})", model.head(), task.head())));
    }
    let split = cfg.split(data.num_snapshots(), model.window(), model.horizon())?;
    let start = Instant::now();
    let (metric, higher) = task.stop_metric();
    let mut state = AdamState::new();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let neg_epoch = if cfg.resample_negatives { epoch as u64 } else { 0 };
        let mut g = Graph::new();
        let b = params.bind(&mut g, |n| model.is_frozen(n));
        let loss = training_loss(
            &mut g,
            &b,
            model,
            data,
            task,
            &split.train,
            derive_seed(cfg.seed, &[TRAIN_STREAM, neg_epoch]),
        )?;
        let train_loss = g.item(loss)?;
        if !train_loss.is_finite() {
            return Err(Error::Training { epoch, msg: format!("training loss is {train_loss}") });
        }
        g.backward(loss).map_err(|e| Error::Training { epoch, msg: e.to_string() })?;
        let mut grads = b.grads(&g);
        grads.retain(|name, _| !model.is_frozen(name));
        drop(g);
        adam_step(params, &grads, &mut state, &cfg.optimizer).map_err(|e| Error::Training { epoch, msg: e.to_string() })?;
        let val_metrics = evaluate(model, params, data, task, &split.val, cfg.seed)?;
        let value = val_metrics[metric];
        let record = EpochRecord { epoch, train_loss, val_metrics, wall_ms: t0.elapsed().as_secs_f64() * 1e3 };
        on_epoch(&record);
        epochs.push(record);
        let improved = match &best {
            None => true,
            Some((_, b, _)) => {
                if higher {
                    value > *b
                } else {
                    value < *b
                }
            }
        };
        if improved {
            best = Some((epoch, value, params.clone()));
        } else if epoch - best.as_ref().map_or(0, |b| b.0) >= cfg.patience {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    let (best_epoch, _, best_params) = best.expect("at least one epoch");
    *params = best_params;
    let test_metrics = evaluate(model, params, data, task, &split.test, cfg.seed)?;
    Ok(TrainReport {
        epochs,
        stop_metric: metric.to_string(),
        best_epoch,
        stopped_early,
        test_metrics,
        param_count: params.count(),
        total_wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
