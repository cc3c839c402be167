use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::network::Network;
use super::standardize::NormStats;
use crate::error::{Error, Result};
use crate::subplot::SubPlotRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![256, 128, 64, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub seed: u64,
    /// Train on z-scored targets; predictions are mapped back to grams.
    pub standardize_target: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            standardize_target: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config(
                "epochs and batch_size must be at least 1 and learning_rate positive".into(),
            ));
        }
        Ok(())
    }
}

/// Row-major features with one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Dataset> {
        if x.len() != dim * y.len() {
            return Err(Error::Dimension(format!(
                "{} feature values do not form {} rows of {dim}",
                x.len(),
                y.len()
            )));
        }
        Ok(Dataset { dim, x, y })
    }

    pub fn from_records(records: &[SubPlotRecord], idx: &[usize]) -> Result<Dataset> {
        let dim = idx.first().map_or(0, |&i| records[i].features.len());
        let mut x = Vec::with_capacity(dim * idx.len());
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            let r = &records[i];
            if r.features.len() != dim {
                return Err(Error::Dimension("records differ in feature count".into()));
            }
            x.extend_from_slice(&r.features);
            y.push(r.allocated_yield);
        }
        Ok(Dataset { dim, x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

/// Trained regressor: input standardization, network, output scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub network: Network,
    pub norm: NormStats,
    pub target_mean: f64,
    pub target_std: f64,
    pub best_epoch: usize,
    pub seed: u64,
}

impl MlpModel {
    pub fn layer_sizes(&self) -> &[usize] {
        self.network.sizes()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut z = vec![0.0; x.len()];
        self.norm.apply_row(x, &mut z);
        self.network.forward(&z) * self.target_std + self.target_mean
    }

    pub fn predict(&self, data: &Dataset) -> Vec<f64> {
        (0..data.len())
            .into_par_iter()
            .map(|i| self.predict_row(data.row(i)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub log: Vec<EpochLog>,
}

fn rmse_grams(net: &Network, zx: &[f64], y: &[f64], dim: usize, tm: f64, ts: f64) -> f64 {
    let sse: f64 = (0..y.len())
        .into_par_iter()
        .map(|i| {
            let e = net.forward(&zx[i * dim..(i + 1) * dim]) * ts + tm - y[i];
            e * e
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    (sse / y.len() as f64).sqrt()
}

/// Mini-batch Adam on squared error from a seeded Glorot start. Returns the
/// parameters of the epoch with the lowest validation RMSE (epoch 0 is the
/// initialization; the earliest epoch wins ties).
pub fn train(train: &Dataset, val: &Dataset, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Input("training and validation sets must be non-empty".into()));
    }
    if val.dim != train.dim {
        return Err(Error::Dimension("training and validation feature counts differ".into()));
    }
    let dim = train.dim;
    let norm = NormStats::fit(&train.x, dim)?;
    let zx = norm.apply(&train.x);
    let vzx = norm.apply(&val.x);
    let (tm, ts) = if cfg.standardize_target {
        let n = train.len() as f64;
        let m = train.y.iter().sum::<f64>() / n;
        let s = (train.y.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / n).sqrt();
        (m, if s > 1e-12 { s } else { 1.0 })
    } else {
        (0.0, 1.0)
    };
    let zy: Vec<f64> = train.y.iter().map(|y| (y - tm) / ts).collect();

    let mut sizes = vec![dim];
    sizes.extend_from_slice(&model.hidden);
    sizes.push(1);
    let mut net = Network::glorot(&sizes, cfg.seed)?;
    let mut adam = Adam::new(net.params().len(), cfg.adam);
    let mut grad = vec![0.0; net.params().len()];

    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let eval = |net: &Network, epoch: usize| -> Result<EpochLog> {
        let e = EpochLog {
            epoch,
            train_rmse: rmse_grams(net, &zx, &train.y, dim, tm, ts),
            val_rmse: rmse_grams(net, &vzx, &val.y, dim, tm, ts),
        };
        if !(e.train_rmse.is_finite() && e.val_rmse.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        Ok(e)
    };
    let first = eval(&net, 0)?;
    log.push(first);
    let mut best = (first.val_rmse, net.params().to_vec(), 0usize);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut bx = Vec::with_capacity(cfg.batch_size * dim);
    let mut by = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.extend_from_slice(&zx[i * dim..(i + 1) * dim]);
                by.push(zy[i]);
            }
            let loss = net.gradient(&bx, &by, &mut grad);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            adam.step(net.params_mut(), &grad);
        }
        let e = eval(&net, epoch)?;
        log::debug!("epoch {epoch}: train {:.4} val {:.4}", e.train_rmse, e.val_rmse);
        if e.val_rmse < best.0 {
            best = (e.val_rmse, net.params().to_vec(), epoch);
        }
        log.push(e);
    }
    let network = Network::from_params(&sizes, best.1)?;
    Ok(TrainOutcome {
        model: MlpModel {
            network,
            norm,
            target_mean: tm,
            target_std: ts,
            best_epoch: best.2,
            seed: cfg.seed,
        },
        log,
    })
}

pub fn write_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for e in log {
        w.serialize(e).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<EpochLog>, _>>()
        .map_err(|e| Error::csv(path, e))
}
