use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.cfg;
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_magnitude() {
        for g in [0.01, 0.5, -4.0, 1e3] {
            let mut p = [1.0];
            let mut a = Adam::new(1, AdamConfig::default());
            a.step(&mut p, &[g]);
            let d = (p[0] - 1.0).abs();
            assert!((1e-3 * (1.0 - 1e-6)..=1e-3).contains(&d), "{g}: {d}");
            assert_eq!((p[0] - 1.0).signum(), -g.signum());
        }
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = [0.25, -3.0];
        let mut a = Adam::new(2, AdamConfig::default());
        for _ in 0..50 {
            a.step(&mut p, &[0.0, 0.0]);
        }
        assert_eq!(p, [0.25, -3.0]);
    }

    #[test]
    fn scalar_quadratic_converges() {
        let mut p = [0.0];
        let mut a = Adam::new(1, AdamConfig { learning_rate: 0.1, ..Default::default() });
        for _ in 0..200 {
            let g = 2.0 * (p[0] - 3.0);
            a.step(&mut p, &[g]);
        }
        assert!((p[0] - 3.0).abs() < 0.05, "{}", p[0]);
    }
}
