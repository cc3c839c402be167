use crate::error::{Error, Result};

pub const SIGMA_FLOOR: f64 = 1e-12;

/// Per-feature training mean and population variance.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl NormStats {
    /// Fits on `n` row-major rows of width `dim`.
    pub fn fit(xs: &[f64], dim: usize) -> Result<NormStats> {
        if dim == 0 || xs.is_empty() || !xs.len().is_multiple_of(dim) {
            return Err(Error::Dimension("feature matrix is empty or ragged".into()));
        }
        let n = (xs.len() / dim) as f64;
        let mut mean = vec![0.0; dim];
        for row in xs.chunks_exact(dim) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in xs.chunks_exact(dim) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        Ok(NormStats { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, x: &[f64], out: &mut [f64]) {
        for (((o, x), m), v) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.var) {
            let s = v.sqrt();
            *o = if s < SIGMA_FLOOR { 0.0 } else { (x - m) / s };
        }
    }

    pub fn apply(&self, xs: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; xs.len()];
        for (o, x) in out.chunks_exact_mut(d).zip(xs.chunks_exact(d)) {
            self.apply_row(x, o);
        }
        out
    }
}

pub fn standardize_fit_apply(xs: &[f64], dim: usize) -> Result<(NormStats, Vec<f64>)> {
    let s = NormStats::fit(xs, dim)?;
    let z = s.apply(xs);
    Ok((s, z))
}
