use crate::error::{Error, Result};

fn check_scores(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Dimension(format!(
            "ranking metrics need both classes, got {} positives and {} negatives",
            pos.len(),
            neg.len()
        )));
    }
    if pos.iter().chain(neg).any(|x| x.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    Ok(())
}

/// Labelled scores sorted by descending score.
fn ranked(pos: &[f64], neg: &[f64]) -> Vec<(f64, bool)> {
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    all
}

/// Area under the ROC curve from the rank-sum statistic, ties at midrank.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores(pos, neg)?;
    let mut all = ranked(pos, neg);
    all.reverse();
    // Doubled ranks keep midranks integral.
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid2 = (i + 1 + j) as u128;
        rank2_sum += mid2 * all[i..j].iter().filter(|x| x.1).count() as u128;
        i = j;
    }
    let (p, n) = (pos.len() as u128, neg.len() as u128);
    let num2 = rank2_sum - p * (p + 1);
    Ok(num2 as f64 / (2 * p * n) as f64)
}

/// Average precision: precision summed over recall increments, one step per
/// distinct score threshold.
pub fn average_precision(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores(pos, neg)?;
    let all = ranked(pos, neg);
    let total = pos.len() as f64;
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let mut hits = 0;
        while j < all.len() && all[j].0 == all[i].0 {
            hits += usize::from(all[j].1);
            j += 1;
        }
        tp += hits;
        seen = j;
        if hits > 0 {
            ap += (hits as f64 / total) * (tp as f64 / seen as f64);
        }
        i = j;
    }
    debug_assert_eq!(seen, all.len());
    Ok(ap)
}

fn per_class(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<(usize, usize, usize)>> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Dimension(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    let mut counts = vec![(0, 0, 0); classes];
    for (&p, &y) in pred.iter().zip(truth) {
        if p >= classes || y >= classes {
            return Err(Error::Index(format!("class {} with {classes} classes", p.max(y))));
        }
        if p == y {
            counts[y].0 += 1;
        } else {
            counts[p].1 += 1;
            counts[y].2 += 1;
        }
    }
    Ok(counts)
}

/// Unweighted mean of per-class F1; a class with no support and no
/// predictions contributes 0.
pub fn macro_f1(pred: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    let counts = per_class(pred, truth, classes)?;
    let sum: f64 = counts
        .iter()
        .map(|&(tp, fp, fn_)| if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 })
        .sum();
    Ok(sum / classes as f64)
}

/// Unweighted mean of per-class recall; classes without support contribute 0.
pub fn macro_recall(pred: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    let counts = per_class(pred, truth, classes)?;
    let sum: f64 = counts
        .iter()
        .map(|&(tp, _, fn_)| if tp == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 })
        .sum();
    Ok(sum / classes as f64)
}

fn residuals<'a>(pred: &'a [f64], y: &'a [f64]) -> Result<impl Iterator<Item = f64> + 'a> {
    if pred.len() != y.len() || pred.is_empty() {
        return Err(Error::Dimension(format!("{} predictions for {} targets", pred.len(), y.len())));
    }
    Ok(pred.iter().zip(y).map(|(p, t)| p - t))
}

pub fn mae(pred: &[f64], y: &[f64]) -> Result<f64> {
    Ok(residuals(pred, y)?.map(f64::abs).sum::<f64>() / y.len() as f64)
}

pub fn rmse(pred: &[f64], y: &[f64]) -> Result<f64> {
    Ok((residuals(pred, y)?.map(|r| r * r).sum::<f64>() / y.len() as f64).sqrt())
}

/// Row-wise argmax of a row-major `[n, c]` matrix; the first maximum wins.
pub fn argmax_rows(data: &[f64], c: usize) -> Vec<usize> {
    data.chunks(c)
        .map(|row| row.iter().enumerate().fold(0, |best, (k, &x)| if x > row[best] { k } else { best }))
        .collect()
}
