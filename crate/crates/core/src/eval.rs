//! Fairness and accuracy audit. The representation under audit is the
//! posterior mean of `q(z1|x,s)` (strictly more informative to an adversary
//! than a sample, so the audit is conservative). An L2-regularized logistic
//! probe tries to recover `s` from it; target accuracy comes from the
//! model's own `q(y|z1)`; the discrimination score is the absolute gap in
//! group-mean predicted positive probability, in percent.

use serde::{Deserialize, Serialize};

use crate::data::{Split, TabularDataset};
use crate::error::{Error, Result};
use crate::models::FairModel;
use crate::tensor::Tensor;

/// L2 strength for the audit probe (fixed; small enough not to blunt the
/// adversary, large enough to pin down separable problems).
pub const PROBE_L2: f64 = 1e-4;
/// Iteration cap for probe fitting.
pub const PROBE_MAX_ITERS: usize = 5000;
/// Gradient-norm convergence threshold for probe fitting.
pub const PROBE_TOLERANCE: f64 = 1e-6;

/// Binary logistic regression fit by plain gradient descent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticProbe {
    weights: Vec<f64>,
    bias: f64,
    /// False when the gradient norm never reached tolerance within the
    /// iteration cap; the probe is still usable, accuracy just reflects an
    /// incomplete fit.
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticProbe {
    /// Predicted probability of class 1 per row.
    pub fn predict_prob(&self, features: &Tensor) -> Result<Vec<f64>> {
        if features.rank() != 2 || features.cols() != self.weights.len() {
            return Err(Error::shape(
                "probe features",
                format!("[n, {}]", self.weights.len()),
                format!("{:?}", features.shape()),
            ));
        }
        Ok((0..features.rows())
            .map(|i| {
                let z: f64 = features
                    .row(i)
                    .iter()
                    .zip(&self.weights)
                    .map(|(x, w)| x * w)
                    .sum::<f64>()
                    + self.bias;
                sigmoid(z)
            })
            .collect())
    }

    /// Percent of rows whose thresholded prediction (class 1 at p >= 0.5)
    /// matches the label.
    pub fn accuracy(&self, features: &Tensor, labels: &[usize]) -> Result<f64> {
        if labels.len() != features.rows() {
            return Err(Error::shape(
                "probe labels",
                format!("[{}]", features.rows()),
                format!("[{}]", labels.len()),
            ));
        }
        let probs = self.predict_prob(features)?;
        let hits = probs
            .iter()
            .zip(labels)
            .filter(|(&p, &l)| usize::from(p >= 0.5) == l)
            .count();
        Ok(100.0 * hits as f64 / labels.len() as f64)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fit a logistic probe with the audit defaults: zero initialization,
/// gradient descent until the gradient norm drops below tolerance or the
/// iteration cap, L2 on the weights (not the bias).
pub fn train_probe(features: &Tensor, labels: &[usize]) -> Result<LogisticProbe> {
    fit_probe(features, labels, PROBE_L2, PROBE_MAX_ITERS)
}

/// Probe fitting with explicit knobs (the zero-iteration probe is the
/// constant classifier: all probabilities exactly 0.5).
pub fn fit_probe(
    features: &Tensor,
    labels: &[usize],
    l2: f64,
    max_iters: usize,
) -> Result<LogisticProbe> {
    let n = features.rows();
    if features.rank() != 2 || n == 0 {
        return Err(Error::shape("probe features", "[n >= 1, d]", format!("{:?}", features.shape())));
    }
    if labels.len() != n {
        return Err(Error::shape("probe labels", format!("[{n}]"), format!("[{}]", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Data(format!("probe labels must be binary, got {bad}")));
    }
    let d = features.cols();
    // Guaranteed-descent step size for the mean logistic loss: its gradient
    // is Lipschitz with constant at most max_i ||x_i||^2 / 4 (plus the ridge
    // term and the bias channel).
    let max_sq = (0..n)
        .map(|i| features.row(i).iter().map(|v| v * v).sum::<f64>() + 1.0)
        .fold(0.0f64, f64::max);
    let lr = 1.0 / (0.25 * max_sq + l2);

    let mut weights = vec![0.0; d];
    let mut bias = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iters {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for i in 0..n {
            let row = features.row(i);
            let z: f64 = row.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>() + bias;
            let err = sigmoid(z) - labels[i] as f64;
            for (g, x) in gw.iter_mut().zip(row) {
                *g += err * x;
            }
            gb += err;
        }
        let inv = 1.0 / n as f64;
        for (g, w) in gw.iter_mut().zip(&weights) {
            *g = *g * inv + l2 * w;
        }
        gb *= inv;
        let norm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
        if norm < PROBE_TOLERANCE {
            converged = true;
            break;
        }
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= lr * g;
        }
        bias -= lr * gb;
        iterations += 1;
    }
    if !converged && max_iters > 0 {
        log::warn!("audit probe stopped at the {max_iters}-iteration cap without converging");
    }
    Ok(LogisticProbe { weights, bias, converged: converged || max_iters == 0, iterations })
}

/// Absolute difference between the two groups' mean predicted probability,
/// as a percent: `|mean(probs where s=0) - mean(probs where s=1)| * 100`.
pub fn discrimination_score(probs: &[f64], s: &[usize]) -> Result<f64> {
    if probs.len() != s.len() {
        return Err(Error::shape(
            "discrimination inputs",
            format!("[{}]", probs.len()),
            format!("[{}]", s.len()),
        ));
    }
    if let Some(&bad) = probs.iter().find(|&&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Data(format!("predicted probability {bad} outside [0, 1]")));
    }
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (&p, &group) in probs.iter().zip(s) {
        if group > 1 {
            return Err(Error::Data(format!("group label {group} is not binary")));
        }
        sums[group] += p;
        counts[group] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::Data(format!(
            "discrimination score needs both groups present, got {} and {} rows",
            counts[0], counts[1]
        )));
    }
    Ok((sums[0] / counts[0] as f64 - sums[1] / counts[1] as f64).abs() * 100.0)
}

/// Posterior means of `q(z1|x,s)` for every row of the given split, using
/// the dataset's true sensitive values (the audit is an adversarial upper
/// bound, so the encoder gets the real `s` even where training masked it).
pub fn extract_z1(model: &FairModel, dataset: &TabularDataset, split: Split) -> Result<Tensor> {
    let rows = dataset.rows_in(split);
    if rows.is_empty() {
        return Err(Error::Data(format!("dataset has no {split} rows to extract")));
    }
    let (x, _, s) = dataset.gather(&rows);
    model.encode_z1_mean(&x, &s)
}

/// Training-configuration echo carried into reports so result tables are
/// self-describing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub alpha: f64,
    pub lambda_reg: f64,
    pub penalty: String,
    /// Mixture components in the prior (0 for the standard prior).
    pub components: usize,
    pub seed_init: u64,
    pub seed_mask: u64,
    pub seed_rff: u64,
    pub seed_split: u64,
}

/// One audited model: accuracy, sensitive leakage, discrimination, and the
/// matching majority baselines (same split as the metrics).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    /// Percent of test rows where argmax `q(y|z1)` matches `y`.
    pub y_acc: f64,
    /// Test accuracy of the logistic probe for `s`, trained on train-split
    /// representations.
    pub s_audit_acc: f64,
    /// Discrimination score of `q(y=1|z1)` on the test split.
    pub ds: f64,
    pub y_majority: f64,
    pub s_majority: f64,
    pub probe_converged: bool,
    pub echo: ConfigEcho,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "model_id,y_acc,s_audit_acc,ds,y_majority,s_majority,probe_converged,alpha,lambda_reg,penalty,components,seed_init,seed_mask,seed_rff,seed_split";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{},{},{},{},{},{},{},{},{}",
            self.model_id,
            self.y_acc,
            self.s_audit_acc,
            self.ds,
            self.y_majority,
            self.s_majority,
            self.probe_converged,
            self.echo.alpha,
            self.echo.lambda_reg,
            self.echo.penalty,
            self.echo.components,
            self.echo.seed_init,
            self.echo.seed_mask,
            self.echo.seed_rff,
            self.echo.seed_split,
        )
    }
}

fn majority_percent(labels: &[usize]) -> f64 {
    let ones = labels.iter().filter(|&&l| l == 1).count();
    100.0 * ones.max(labels.len() - ones) as f64 / labels.len() as f64
}

/// Run the full audit: probe `s` from train-split representations, score
/// target accuracy and discrimination on the test split, attach majority
/// baselines from the same split. Deterministic given model and dataset.
pub fn evaluate(
    model: &FairModel,
    dataset: &TabularDataset,
    model_id: &str,
    echo: ConfigEcho,
) -> Result<EvalReport> {
    let z1_train = extract_z1(model, dataset, Split::Train)?;
    let z1_test = extract_z1(model, dataset, Split::Test)?;
    let train_rows = dataset.rows_in(Split::Train);
    let test_rows = dataset.rows_in(Split::Test);
    let s_train: Vec<usize> = train_rows.iter().map(|&i| dataset.s()[i]).collect();
    let s_test: Vec<usize> = test_rows.iter().map(|&i| dataset.s()[i]).collect();
    let y_test: Vec<usize> = test_rows.iter().map(|&i| dataset.y()[i]).collect();

    let probe = train_probe(&z1_train, &s_train)?;
    let s_audit_acc = probe.accuracy(&z1_test, &s_test)?;

    let y_probs = model.classify_y_probs(&z1_test)?;
    let mut hits = 0usize;
    let mut positive = Vec::with_capacity(y_test.len());
    for (i, &label) in y_test.iter().enumerate() {
        let row = y_probs.row(i);
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(c, _)| c)
            .unwrap();
        hits += usize::from(argmax == label);
        positive.push(row[1]);
    }
    let y_acc = 100.0 * hits as f64 / y_test.len() as f64;
    let ds = discrimination_score(&positive, &s_test)?;

    Ok(EvalReport {
        model_id: model_id.to_string(),
        y_acc,
        s_audit_acc,
        ds,
        y_majority: majority_percent(&y_test),
        s_majority: majority_percent(&s_test),
        probe_converged: probe.converged,
        echo,
    })
}
