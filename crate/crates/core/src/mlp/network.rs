use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Fully connected network with ReLU hidden units and a linear output unit.
///
/// Parameters are stored flat, layer by layer: the `out x in` weight matrix
/// (row-major) followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl Network {
    pub fn zeros(sizes: &[usize]) -> Result<Network> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Input(format!("invalid layer sizes {sizes:?}")));
        }
        if *sizes.last().unwrap() != 1 {
            return Err(Error::Input("output layer must have one unit".into()));
        }
        let n = sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        Ok(Network {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Glorot-uniform weights `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn glorot(sizes: &[usize], seed: u64) -> Result<Network> {
        let mut net = Network::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[off..off + fan_in * fan_out] {
                *p = rng.random_range(-a..a);
            }
            off += fan_out * (fan_in + 1);
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Network> {
        let mut net = Network::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.sizes.windows(2).scan(0, |off, w| {
            let o = *off;
            *off += w[1] * (w[0] + 1);
            Some((o, w[0], w[1]))
        })
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut ws = Workspace::new(&self.sizes);
        self.forward_ws(x, &mut ws)
    }

    fn forward_ws(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        debug_assert_eq!(x.len(), self.sizes[0]);
        ws.act[0].copy_from_slice(x);
        let last = self.sizes.len() - 2;
        for (l, (off, n_in, n_out)) in self.layers().enumerate() {
            let (w, rest) = self.params[off..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            let (prev, next) = ws.act.split_at_mut(l + 1);
            let a_in = &prev[l];
            let a_out = &mut next[0];
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let z = b[j] + row.iter().zip(a_in).map(|(p, q)| p * q).sum::<f64>();
                a_out[j] = if l == last { z } else { z.max(0.0) };
            }
        }
        ws.act[self.sizes.len() - 1][0]
    }

    /// Batch-mean squared error over row-major inputs `xs` (`ys.len()` rows).
    pub fn loss(&self, xs: &[f64], ys: &[f64]) -> f64 {
        let d = self.sizes[0];
        let mut ws = Workspace::new(&self.sizes);
        let s: f64 = ys
            .iter()
            .enumerate()
            .map(|(k, &y)| {
                let e = self.forward_ws(&xs[k * d..(k + 1) * d], &mut ws) - y;
                e * e
            })
            .sum();
        s / ys.len() as f64
    }

    /// Batch-mean squared error and its gradient with respect to every
    /// parameter, written into `grad` (same layout as the parameters).
    pub fn gradient(&self, xs: &[f64], ys: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.sizes[0];
        let b = ys.len();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut ws = Workspace::new(&self.sizes);
        let layers: Vec<_> = self.layers().collect();
        let mut loss = 0.0;
        for (k, &y) in ys.iter().enumerate() {
            let out = self.forward_ws(&xs[k * d..(k + 1) * d], &mut ws);
            let e = out - y;
            loss += e * e;
            ws.delta[layers.len()][0] = 2.0 * e / b as f64;
            for (l, &(off, n_in, n_out)) in layers.iter().enumerate().rev() {
                let (gw, gb) = grad[off..off + n_out * (n_in + 1)].split_at_mut(n_in * n_out);
                let a_in = &ws.act[l];
                let (lo, hi) = ws.delta.split_at_mut(l + 1);
                let dout = &hi[0];
                for j in 0..n_out {
                    let dj = dout[j];
                    if dj == 0.0 {
                        continue;
                    }
                    gb[j] += dj;
                    for (g, a) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(a_in) {
                        *g += dj * a;
                    }
                }
                if l > 0 {
                    let w = &self.params[off..off + n_in * n_out];
                    let din = &mut lo[l];
                    din.iter_mut().for_each(|v| *v = 0.0);
                    for j in 0..n_out {
                        let dj = dout[j];
                        if dj == 0.0 {
                            continue;
                        }
                        for (v, p) in din.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                            *v += dj * p;
                        }
                    }
                    // ReLU subgradient at 0 is 0
                    for (v, a) in din.iter_mut().zip(a_in) {
                        if *a <= 0.0 {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
        loss / b as f64
    }
}

struct Workspace {
    act: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(sizes: &[usize]) -> Self {
        Workspace {
            act: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            delta: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }
}
