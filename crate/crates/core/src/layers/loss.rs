use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check(logits: &Tensor, targets: &[usize]) -> Result<(usize, usize)> {
    let (n, k) = match *logits.shape() {
        [n, k] => (n, k),
        _ => {
            return Err(Error::Shape(format!(
                "logits must be (N, K), got {:?}",
                logits.shape()
            )))
        }
    };
    if targets.len() != n {
        return Err(Error::Shape(format!(
            "{} targets for {n} logit rows",
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::Data(format!("target class {t} outside [0, {k})")));
    }
    Ok((n, k))
}

/// Softmax probabilities of one row, max-shifted, plus its log-sum-exp.
fn softmax_row(row: &[f64]) -> (Vec<f64>, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / sum).collect(), max + sum.ln())
}

/// `-log softmax(logits)[target]` for each row.
pub fn per_sample_xent(logits: &Tensor, targets: &[usize]) -> Result<Vec<f64>> {
    let (_, k) = check(logits, targets)?;
    Ok(logits
        .data()
        .chunks(k)
        .zip(targets)
        .map(|(row, &t)| softmax_row(row).1 - row[t])
        .collect())
}

/// Mean cross-entropy over the batch and its gradient `(softmax - onehot) / N`.
pub fn softmax_xent(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = check(logits, targets)?;
    let mut grad = Vec::with_capacity(n * k);
    let mut total = 0.0;
    for (row, &t) in logits.data().chunks(k).zip(targets) {
        let (probs, lse) = softmax_row(row);
        total += lse - row[t];
        grad.extend(
            probs
                .iter()
                .enumerate()
                .map(|(j, p)| (p - if j == t { 1.0 } else { 0.0 }) / n as f64),
        );
    }
    Ok((total / n as f64, Tensor::new(&[n, k], grad)?))
}
