use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Forecasting targets of a graph, partitioned in time.
///
/// A target `t` (0-based) is predicted from the window of snapshots
/// `t-window .. t` and covers snapshots `t .. t+horizon`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalSplit {
    pub window: usize,
    pub horizon: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl TemporalSplit {
    /// Snapshot indices of the input window for target `t`.
    pub fn window_of(&self, t: usize) -> std::ops::Range<usize> {
        t - self.window..t
    }
}

/// Splits the targets of a `num_snapshots`-long graph: the last `n_test`
/// targets go to test, the `n_val` before them to validation, and the rest
/// to training.
pub fn split_temporal(
    num_snapshots: usize,
    window: usize,
    horizon: usize,
    n_val: usize,
    n_test: usize,
) -> Result<TemporalSplit> {
    if window == 0 || horizon == 0 {
        return Err(Error::Config("window and horizon must be positive".into()));
    }
    let need = window + horizon + n_val + n_test;
    if num_snapshots < need {
        return Err(Error::Config(format!(
            "insufficient snapshots: window {window} + horizon {horizon} + n_val {n_val} + n_test {n_test} = {need} > T = {num_snapshots}"
        )));
    }
    let targets: Vec<usize> = (window..=num_snapshots - horizon).collect();
    let n_train = targets.len() - n_val - n_test;
    Ok(TemporalSplit {
        window,
        horizon,
        train: targets[..n_train].to_vec(),
        val: targets[n_train..n_train + n_val].to_vec(),
        test: targets[n_train + n_val..].to_vec(),
    })
}
