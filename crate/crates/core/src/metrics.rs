//! Velocity-model error metrics: mean absolute error, mean relative error,
//! mean absolute log10 error and threshold accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geomodel::VelocityModel;
use crate::{Error, Result};

pub const ACC_THRESHOLDS: [f64; 4] = [1.01, 1.02, 1.05, 1.10];

/// Metric values over a set of cells. `rel` and `log10` are stored raw;
/// [`MetricReport::csv_row`] reports them ×10³.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub rel: f64,
    pub log10: f64,
    /// Percentage of cells with `max(truth/pred, pred/truth) < t`, keyed by
    /// the threshold's text form (`"1.01"`, ...).
    pub acc: BTreeMap<String, f64>,
    pub cells: usize,
}

fn threshold_key(t: f64) -> String {
    format!("{t:.2}")
}

#[derive(Debug, Clone, Default)]
struct Sums {
    abs: f64,
    rel: f64,
    log: f64,
    hits: [usize; 4],
    cells: usize,
}

impl Sums {
    fn add(&mut self, pred: &[f64], truth: &[f64]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::ShapeMismatch(format!("{} predicted vs {} true cells", pred.len(), truth.len())));
        }
        if truth.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::NonPositiveTruth);
        }
        if pred.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::NonPositivePred);
        }
        for (p, t) in pred.iter().zip(truth) {
            let d = (p - t).abs();
            self.abs += d;
            self.rel += d / t;
            self.log += (p.log10() - t.log10()).abs();
            let ratio = (t / p).max(p / t);
            for (h, th) in self.hits.iter_mut().zip(ACC_THRESHOLDS) {
                if ratio < th {
                    *h += 1;
                }
            }
        }
        self.cells += pred.len();
        Ok(())
    }

    fn report(&self) -> MetricReport {
        let n = self.cells as f64;
        let acc = ACC_THRESHOLDS.iter().zip(self.hits).map(|(t, h)| (threshold_key(*t), 100.0 * h as f64 / n)).collect();
        MetricReport { mae: self.abs / n, rel: self.rel / n, log10: self.log / n, acc, cells: self.cells }
    }
}

/// Metrics of one predicted model against its ground truth.
pub fn evaluate(pred: &VelocityModel, truth: &VelocityModel) -> Result<MetricReport> {
    if pred.dims() != truth.dims() {
        return Err(Error::ShapeMismatch(format!("predicted {:?} vs true {:?}", pred.dims(), truth.dims())));
    }
    evaluate_values(pred.grid().data(), truth.grid().data())
}

/// Metrics over flat value slices.
pub fn evaluate_values(pred: &[f64], truth: &[f64]) -> Result<MetricReport> {
    let mut s = Sums::default();
    s.add(pred, truth)?;
    Ok(s.report())
}

/// Per-model reports plus the aggregate over every cell of every model.
pub fn evaluate_set(preds: &[VelocityModel], truths: &[VelocityModel]) -> Result<(Vec<MetricReport>, MetricReport)> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} models", preds.len(), truths.len())));
    }
    let mut total = Sums::default();
    let mut per = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(truths) {
        per.push(evaluate(p, t)?);
        total.add(p.grid().data(), t.grid().data())?;
    }
    Ok((per, total.report()))
}

impl MetricReport {
    pub fn acc_at(&self, t: f64) -> Option<f64> {
        self.acc.get(&threshold_key(t)).copied()
    }

    pub fn csv_header() -> String {
        let mut h = String::from("label,mae,rel_e3,log10_e3");
        for t in ACC_THRESHOLDS {
            let _ = write!(h, ",acc_{}", threshold_key(t));
        }
        h
    }

    /// One CSV row with fixed formatting so equal reports give equal bytes.
    pub fn csv_row(&self, label: &str) -> String {
        let mut r = format!("{label},{:.6},{:.6},{:.6}", self.mae, self.rel * 1e3, self.log10 * 1e3);
        for t in ACC_THRESHOLDS {
            let _ = write!(r, ",{:.4}", self.acc_at(t).unwrap_or(f64::NAN));
        }
        r
    }
}

/// CSV with one row per model (`model_<i>`) and a final `all` row.
pub fn metrics_csv(per_model: &[MetricReport], aggregate: &MetricReport) -> String {
    let mut out = MetricReport::csv_header();
    out.push('\n');
    for (i, r) in per_model.iter().enumerate() {
        out.push_str(&r.csv_row(&format!("model_{i}")));
        out.push('\n');
    }
    out.push_str(&aggregate.csv_row("all"));
    out.push('\n');
    out
}
