use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{training_loss, Task};
use crate::error::{Error, Result};
use crate::model::{Forecaster, ParamStore, PreparedGraph};
use crate::tensor::{grad_check_coordinates, Graph};

/// Worst relative error of one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub group: String,
    /// Coordinates compared.
    pub checked: usize,
    pub total: usize,
    pub max_rel_error: f64,
}

/// Group of a parameter: its name without the last component, so that
/// `gru.0.cites.Uz` belongs to `gru.0.cites`.
pub fn param_group(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(g, _)| g)
}

/// Evenly spaced coordinates, all of them when `limit` allows.
fn pick(total: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(m) if m < total => (0..m).map(|i| i * total / m).collect(),
        _ => (0..total).collect(),
    }
}

/// Compares the analytic gradient of the training loss on `targets` with
/// central differences, group by group.
///
/// Negatives are drawn once from `seed`, so the loss is a fixed function of
/// the parameters. At most `limit` coordinates per group are perturbed. Each
/// coordinate is scored at the better of two step sizes, `eps` and `eps/10`:
/// round-off on small derivatives favours the larger one, activation kinks
/// inside the stencil the smaller one.
#[allow(clippy::too_many_arguments)]
pub fn grad_check_groups(
    model: &dyn Forecaster,
    params: &ParamStore,
    data: &PreparedGraph,
    task: &Task,
    targets: &[usize],
    seed: u64,
    eps: f64,
    limit: Option<usize>,
) -> Result<Vec<GroupCheck>> {
    if limit == Some(0) {
        return Err(Error::Config("grad check needs at least one coordinate per group".into()));
    }
    let loss_of = |ps: &ParamStore| -> Result<(f64, Graph, crate::model::Bound, crate::tensor::Var)> {
        let mut g = Graph::new();
        let b = ps.bind(&mut g, |_| false);
        let l = training_loss(&mut g, &b, model, data, task, targets, seed)?;
        Ok((g.item(l)?, g, b, l))
    };
    let (_, mut g, b, l) = loss_of(params)?;
    g.backward(l)?;
    let grads = b.grads(&g);
    drop(g);

    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for name in params.names().filter(|n| !model.is_frozen(n)) {
        groups.entry(param_group(name)).or_default().push(name);
    }
    let mut work = params.clone();
    let mut out = Vec::with_capacity(groups.len());
    for (group, names) in groups {
        let coords: Vec<(&str, usize)> =
            names.iter().flat_map(|&n| (0..params.get(n).map_or(0, |t| t.numel())).map(move |i| (n, i))).collect();
        let chosen: Vec<(&str, usize)> = pick(coords.len(), limit).into_iter().map(|i| coords[i]).collect();
        let x0: Vec<f64> = chosen.iter().map(|&(n, i)| params.get(n).expect("listed").data()[i]).collect();
        let analytic: Vec<f64> = chosen.iter().map(|&(n, i)| grads[n][i]).collect();
        let mut eval = |x: &[f64]| {
            for (&(n, i), &v) in chosen.iter().zip(x) {
                work.get_mut(n).expect("listed").data_mut()[i] = v;
            }
            Ok(loss_of(&work)?.0)
        };
        let coarse = grad_check_coordinates(&mut eval, &x0, &analytic, eps)?;
        let fine = grad_check_coordinates(&mut eval, &x0, &analytic, eps / 10.0)?;
        let errors: Vec<f64> = coarse.iter().zip(&fine).map(|(a, b)| a.min(*b)).collect();
        for &(n, i) in &chosen {
            work.get_mut(n).expect("listed").data_mut()[i] = params.get(n).expect("listed").data()[i];
        }
        out.push(GroupCheck {
            group: group.to_string(),
            checked: chosen.len(),
            total: coords.len(),
            max_rel_error: errors.into_iter().fold(0.0, f64::max),
        });
    }
    Ok(out)
}
