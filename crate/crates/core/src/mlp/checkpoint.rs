//! Text checkpoint:
//!
//! ```text
//! HYPERFIELD-MLP v1
//! layers 381 256 128 64 32 1
//! seed 7
//! best_epoch 42
//! target <mean> <std>
//! norm_mean <v1> ... <vd>
//! norm_var <v1> ... <vd>
//! params <count>
//! <values, eight per line, layer by layer: weights row-major then biases>
//! ```
//!
//! Floats use Rust's shortest round-trip formatting so a save/load cycle is
//! lossless.

use std::fmt::Write as _;
use std::path::Path;

use super::network::Network;
use super::standardize::NormStats;
use super::train::MlpModel;
use crate::error::{Error, Result};

pub const MAGIC: &str = "HYPERFIELD-MLP v1";

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn to_text(m: &MlpModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "layers {}", join(m.layer_sizes()));
    let _ = writeln!(s, "seed {}", m.seed);
    let _ = writeln!(s, "best_epoch {}", m.best_epoch);
    let _ = writeln!(s, "target {} {}", m.target_mean, m.target_std);
    let _ = writeln!(s, "norm_mean {}", join(&m.norm.mean));
    let _ = writeln!(s, "norm_var {}", join(&m.norm.var));
    let p = m.network.params();
    let _ = writeln!(s, "params {}", p.len());
    for chunk in p.chunks(8) {
        let _ = writeln!(s, "{}", join(chunk));
    }
    s
}

pub fn from_text(text: &str, path: &Path) -> Result<MlpModel> {
    let mut lines = text.lines().enumerate();
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        message,
    };
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(perr(0, format!("missing `{MAGIC}` header"))),
    }
    let mut field = |key: &str| -> Result<(usize, Vec<String>)> {
        let (i, l) = lines.next().ok_or_else(|| perr(0, format!("missing `{key}`")))?;
        let mut it = l.split_whitespace();
        if it.next() != Some(key) {
            return Err(perr(i, format!("expected `{key}`")));
        }
        Ok((i, it.map(str::to_string).collect()))
    };
    fn nums<T: std::str::FromStr>(v: &[String]) -> Option<Vec<T>> {
        v.iter().map(|s| s.parse().ok()).collect()
    }
    let (i, v) = field("layers")?;
    let sizes: Vec<usize> = nums(&v).ok_or_else(|| perr(i, "bad layer sizes".into()))?;
    let (i, v) = field("seed")?;
    let seed: u64 = nums(&v).and_then(|x: Vec<u64>| x.first().copied()).ok_or_else(|| perr(i, "bad seed".into()))?;
    let (i, v) = field("best_epoch")?;
    let best_epoch: usize = nums(&v)
        .and_then(|x: Vec<usize>| x.first().copied())
        .ok_or_else(|| perr(i, "bad best_epoch".into()))?;
    let (i, v) = field("target")?;
    let t: Vec<f64> = nums(&v).filter(|x: &Vec<f64>| x.len() == 2).ok_or_else(|| perr(i, "bad target".into()))?;
    let (i, v) = field("norm_mean")?;
    let mean: Vec<f64> = nums(&v).ok_or_else(|| perr(i, "bad norm_mean".into()))?;
    let (i, v) = field("norm_var")?;
    let var: Vec<f64> = nums(&v).ok_or_else(|| perr(i, "bad norm_var".into()))?;
    let (i, v) = field("params")?;
    let count: usize = nums(&v)
        .and_then(|x: Vec<usize>| x.first().copied())
        .ok_or_else(|| perr(i, "bad params count".into()))?;
    let mut params = Vec::with_capacity(count);
    for (i, l) in lines {
        for tok in l.split_whitespace() {
            params.push(tok.parse::<f64>().map_err(|e| perr(i, e.to_string()))?);
        }
    }
    if params.len() != count {
        return Err(perr(0, format!("expected {count} parameters, found {}", params.len())));
    }
    if sizes.first() != Some(&mean.len()) || mean.len() != var.len() {
        return Err(perr(0, "normalization statistics do not match the input layer".into()));
    }
    Ok(MlpModel {
        network: Network::from_params(&sizes, params)?,
        norm: NormStats { mean, var },
        target_mean: t[0],
        target_std: t[1],
        best_epoch,
        seed,
    })
}

pub fn write_checkpoint(m: &MlpModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(m)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<MlpModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, path)
}
