//! Depth evaluation: RMSE, MAE, ARD, δ-threshold accuracies and completeness over a
//! masked region, capped at a maximum ground-truth range.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{DepthMap, Mask, SparseDepth};
use crate::error::{Error, Result};

/// Default evaluation cap in meters.
pub const DEFAULT_MAX_RANGE_M: f64 = 80.0;

/// Base of the δ thresholds, `δ_i: max(d/g, g/d) < 1.25^i`.
pub const DELTA_BASE: f64 = 1.25;

/// Pairwise (cascade) summation in slice order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Ground truth to evaluate against.
#[derive(Debug, Clone, Copy)]
pub enum GroundTruth<'a> {
    Dense(&'a DepthMap),
    Sparse(&'a SparseDepth),
}

impl GroundTruth<'_> {
    fn dims(&self) -> (usize, usize) {
        match self {
            GroundTruth::Dense(d) => d.dims(),
            GroundTruth::Sparse(s) => s.dims(),
        }
    }

    /// `(flat pixel index, range)` for every ground-truth point in `(0, max_range]`.
    fn points(&self, max_range: f64) -> Vec<(usize, f64)> {
        let in_range = |r: f64| r > 0.0 && r <= max_range;
        match self {
            GroundTruth::Dense(d) => d
                .values()
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_nan())
                .map(|(i, &v)| (i, v as f64))
                .filter(|&(_, r)| in_range(r))
                .collect(),
            GroundTruth::Sparse(s) => {
                let w = s.frame_width();
                s.samples()
                    .iter()
                    .map(|p| (p.row * w + p.col, p.range_m))
                    .filter(|&(_, r)| in_range(r))
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    pub ard: f64,
    /// Percent of points inside each δ threshold.
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    /// Percent of in-range ground-truth points that were evaluated.
    pub completeness: f64,
    pub evaluated_points: usize,
    pub total_points: usize,
    pub max_range: f64,
}

impl MetricsReport {
    /// Aligned two-line table: RMSE, ARD, MAE, δ1, δ2, δ3, Compl.
    pub fn to_table(&self) -> String {
        let headers = ["RMSE[m]", "ARD", "MAE[m]", "d1[%]", "d2[%]", "d3[%]", "Compl.[%]"];
        let values = [
            format!("{:.2}", self.rmse),
            format!("{:.3}", self.ard),
            format!("{:.2}", self.mae),
            format!("{:.2}", self.delta1),
            format!("{:.2}", self.delta2),
            format!("{:.2}", self.delta3),
            format!("{:.1}", self.completeness),
        ];
        let widths: Vec<usize> = headers
            .iter()
            .zip(&values)
            .map(|(h, v)| h.len().max(v.len()))
            .collect();
        let mut out = String::new();
        for (i, h) in headers.iter().enumerate() {
            let sep = if i == 0 { "" } else { "  " };
            let _ = write!(out, "{sep}{h:>w$}", w = widths[i]);
        }
        out.push('\n');
        for (i, v) in values.iter().enumerate() {
            let sep = if i == 0 { "" } else { "  " };
            let _ = write!(out, "{sep}{v:>w$}", w = widths[i]);
        }
        out.push('\n');
        out
    }
}

/// `max(pred/gt, gt/pred) < 1.25^i`.
pub fn ratio_delta(pred: f64, gt: f64, i: u32) -> Result<bool> {
    for v in [pred, gt] {
        if !(v > 0.0) {
            return Err(Error::NonPositiveInput(v));
        }
    }
    Ok(symmetric_ratio(pred, gt) < DELTA_BASE.powi(i as i32))
}

#[inline]
fn symmetric_ratio(pred: f64, gt: f64) -> f64 {
    if pred > 0.0 {
        (pred / gt).max(gt / pred)
    } else {
        f64::INFINITY
    }
}

fn check_dims(pred: &DepthMap, gt: &GroundTruth<'_>, mask: &Mask) -> Result<()> {
    for (field, dims) in [("ground truth", gt.dims()), ("eval mask", mask.dims())] {
        if dims != pred.dims() {
            return Err(Error::DimensionMismatch {
                field: field.into(),
                expected: pred.dims(),
                found: dims,
            });
        }
    }
    Ok(())
}

/// Percent of ground-truth points within `max_range` whose pixel is in `eval_mask`.
/// Zero when there are no such points.
pub fn completeness(gt: GroundTruth<'_>, eval_mask: &Mask, max_range: f64) -> Result<f64> {
    if gt.dims() != eval_mask.dims() {
        return Err(Error::DimensionMismatch {
            field: "eval mask".into(),
            expected: gt.dims(),
            found: eval_mask.dims(),
        });
    }
    let points = gt.points(max_range);
    if points.is_empty() {
        return Ok(0.0);
    }
    let hit = points.iter().filter(|(i, _)| eval_mask.values()[*i]).count();
    Ok(100.0 * hit as f64 / points.len() as f64)
}

pub fn depth_metrics(
    pred: &DepthMap,
    gt: GroundTruth<'_>,
    eval_mask: &Mask,
    max_range: f64,
) -> Result<MetricsReport> {
    check_dims(pred, &gt, eval_mask)?;
    if !(max_range > 0.0) {
        return Err(Error::NonPositiveInput(max_range));
    }
    let points = gt.points(max_range);
    let mut sq = Vec::new();
    let mut abs = Vec::new();
    let mut rel = Vec::new();
    let mut hits = [0usize; 3];
    for &(i, g) in points.iter().filter(|(i, _)| eval_mask.values()[*i]) {
        let p = pred.values()[i];
        if p.is_nan() {
            return Err(Error::InvalidPrediction { index: i });
        }
        let p = p as f64;
        let e = p - g;
        sq.push(e * e);
        abs.push(e.abs());
        rel.push(e.abs() / g);
        let ratio = symmetric_ratio(p, g);
        for (k, hit) in hits.iter_mut().enumerate() {
            if ratio < DELTA_BASE.powi(k as i32 + 1) {
                *hit += 1;
            }
        }
    }
    let n = abs.len();
    if n == 0 {
        return Err(Error::ZeroEvaluatedPoints);
    }
    let nf = n as f64;
    let pct = |k: usize| 100.0 * hits[k] as f64 / nf;
    Ok(MetricsReport {
        rmse: (pairwise_sum(&sq) / nf).sqrt(),
        mae: pairwise_sum(&abs) / nf,
        ard: pairwise_sum(&rel) / nf,
        delta1: pct(0),
        delta2: pct(1),
        delta3: pct(2),
        completeness: 100.0 * nf / points.len() as f64,
        evaluated_points: n,
        total_points: points.len(),
        max_range,
    })
}
