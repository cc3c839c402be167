//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use hyperfield::mlp::Network;
use nalgebra::{DMatrix, DVector};

/// `‖x - W h‖²` straight from the spectra.
pub fn objective(w: &[Vec<f64>], x: &[f64], h: &[f64]) -> f64 {
    (0..x.len())
        .map(|b| {
            let m: f64 = w.iter().zip(h).map(|(s, a)| s[b] * a).sum();
            (x[b] - m).powi(2)
        })
        .sum()
}

/// Brute-force simplex least squares: every support solved through a fresh
/// LU factorization of its KKT system.
pub fn enumeration_oracle(w: &[Vec<f64>], x: &[f64]) -> (Vec<f64>, f64) {
    let e = w.len();
    let mut best = (vec![0.0; e], f64::INFINITY);
    for mask in 1usize..(1 << e) {
        let s: Vec<usize> = (0..e).filter(|i| mask >> i & 1 == 1).collect();
        let n = s.len() + 1;
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for (p, &i) in s.iter().enumerate() {
            for (q, &j) in s.iter().enumerate() {
                a[(p, q)] = w[i].iter().zip(&w[j]).map(|(u, v)| u * v).sum();
            }
            a[(p, n - 1)] = 1.0;
            a[(n - 1, p)] = 1.0;
            rhs[p] = w[i].iter().zip(x).map(|(u, v)| u * v).sum();
        }
        rhs[n - 1] = 1.0;
        let Some(sol) = a.lu().solve(&rhs) else { continue };
        if (0..s.len()).any(|p| sol[p] < -1e-12) {
            continue;
        }
        let mut h = vec![0.0; e];
        for (p, &i) in s.iter().enumerate() {
            h[i] = sol[p].max(0.0);
        }
        let obj = objective(w, x, &h);
        if obj < best.1 {
            best = (h, obj);
        }
    }
    best
}

/// Layer-by-layer forward pass written with explicit weight indexing.
pub fn forward_oracle(sizes: &[usize], params: &[f64], x: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let mut off = 0;
    for l in 0..sizes.len() - 1 {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let mut next = vec![0.0; n_out];
        for j in 0..n_out {
            let mut z = params[off + n_in * n_out + j];
            for i in 0..n_in {
                z += params[off + j * n_in + i] * a[i];
            }
            next[j] = if l + 2 == sizes.len() { z } else { z.max(0.0) };
        }
        off += n_out * (n_in + 1);
        a = next;
    }
    a[0]
}

/// Worst relative disagreement between the analytic gradient and central
/// differences over all parameters. Entries below `floor` times the largest
/// gradient magnitude are compared absolutely against that floor.
pub fn gradient_check(net: &Network, xs: &[f64], ys: &[f64], step: f64) -> f64 {
    let mut grad = vec![0.0; net.params().len()];
    net.gradient(xs, ys, &mut grad);
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = 1e-8 * scale.max(1e-300);
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for k in 0..grad.len() {
        let p0 = probe.params()[k];
        probe.params_mut()[k] = p0 + step;
        let up = probe.loss(xs, ys);
        probe.params_mut()[k] = p0 - step;
        let down = probe.loss(xs, ys);
        probe.params_mut()[k] = p0;
        let fd = (up - down) / (2.0 * step);
        let denom = grad[k].abs().max(fd.abs()).max(floor);
        worst = worst.max((grad[k] - fd).abs() / denom);
    }
    worst
}

/// Population mean and standard deviation by the two-pass formula.
pub fn two_pass_stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}
