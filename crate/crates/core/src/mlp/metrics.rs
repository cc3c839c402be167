use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Coefficient of determination `1 - SSE / SST`. A constant target gives 1
/// for an exact fit and 0 otherwise.
pub fn r_squared(actual: &[f64], predicted: &[f64]) -> f64 {
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let sst: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    let sse: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p) * (a - p)).sum();
    if sst == 0.0 {
        return if sse == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - sse / sst
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> f64 {
    let sse: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p) * (a - p)).sum();
    (sse / actual.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelMetrics {
    pub n: usize,
    pub r2: f64,
    pub rmse: f64,
    /// RMSE divided by the mean actual value.
    pub nrmse: f64,
}

impl LevelMetrics {
    pub fn compute(actual: &[f64], predicted: &[f64]) -> LevelMetrics {
        let r = rmse(actual, predicted);
        let mean = actual.iter().sum::<f64>() / actual.len() as f64;
        LevelMetrics {
            n: actual.len(),
            r2: r_squared(actual, predicted),
            rmse: r,
            nrmse: r / mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldTotals {
    pub actual: f64,
    pub predicted: f64,
    /// `100 * (predicted - actual) / actual`.
    pub percent_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotTotal {
    pub plot_id: String,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub subplot: LevelMetrics,
    pub plot: LevelMetrics,
    pub field: FieldTotals,
    pub plots: Vec<PlotTotal>,
}

/// Sub-plot, plot and field metrics. Predictions are clamped at 0 first.
/// Plot-level predictions are the sums of the plot's sub-plot predictions;
/// `plot_yields` supplies the measured plot yield (it defaults to the sum of
/// the allocated yields when a plot is missing from it).
pub fn evaluate(
    plot_ids: &[&str],
    actual: &[f64],
    predicted: &[f64],
    plot_yields: &BTreeMap<String, f64>,
) -> Result<Evaluation> {
    if actual.is_empty() || actual.len() != predicted.len() || actual.len() != plot_ids.len() {
        return Err(Error::Dimension("evaluation inputs are empty or differ in length".into()));
    }
    let pred: Vec<f64> = predicted.iter().map(|p| p.max(0.0)).collect();
    let subplot = LevelMetrics::compute(actual, &pred);
    let mut groups: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for ((id, a), p) in plot_ids.iter().zip(actual).zip(&pred) {
        let g = groups.entry(id).or_default();
        g.0 += a;
        g.1 += p;
    }
    let plots: Vec<PlotTotal> = groups
        .into_iter()
        .map(|(id, (a, p))| PlotTotal {
            plot_id: id.to_string(),
            actual: plot_yields.get(id).copied().unwrap_or(a),
            predicted: p,
        })
        .collect();
    let pa: Vec<f64> = plots.iter().map(|p| p.actual).collect();
    let pp: Vec<f64> = plots.iter().map(|p| p.predicted).collect();
    let plot = LevelMetrics::compute(&pa, &pp);
    let ta: f64 = pa.iter().sum();
    let tp: f64 = pp.iter().sum();
    Ok(Evaluation {
        subplot,
        plot,
        field: FieldTotals {
            actual: ta,
            predicted: tp,
            percent_error: 100.0 * (tp - ta) / ta,
        },
        plots,
    })
}
