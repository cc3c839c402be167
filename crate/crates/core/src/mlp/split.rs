use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub strata: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.9,
            validation_fraction: 0.1,
            strata: 10,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let (t, v) = (self.train_fraction, self.validation_fraction);
        if !(t > 0.0 && t < 1.0 && v > 0.0 && v < 1.0 && t + v <= 1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "split fractions must lie in (0, 1) and sum to at most 1, got {t} and {v}"
            )));
        }
        if self.strata == 0 {
            return Err(Error::Config("split needs at least one stratum".into()));
        }
        Ok(())
    }

    /// Share of non-test records sent to training.
    pub fn train_share(&self) -> f64 {
        self.train_fraction / (self.train_fraction + self.validation_fraction)
    }
}

/// Record indices per partition, each sorted ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Equal-count quantile bins of `values` (ties broken by index). Bins with
/// fewer than `min_size` members are merged into a neighbour.
pub fn quantile_strata(values: &[f64], bins: usize, min_size: usize, warnings: &mut Vec<String>) -> Vec<Vec<usize>> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let bins = bins.max(1);
    let mut strata: Vec<Vec<usize>> = (0..bins)
        .map(|k| order[k * n / bins..(k + 1) * n / bins].to_vec())
        .filter(|s| !s.is_empty())
        .collect();
    let mut k = 0;
    while strata.len() > 1 && k < strata.len() {
        if strata[k].len() >= min_size {
            k += 1;
            continue;
        }
        let small = strata.remove(k);
        let target = if k < strata.len() { k } else { k - 1 };
        warnings.push(format!(
            "stratum of {} record(s) merged into a neighbour",
            small.len()
        ));
        let t = &mut strata[target];
        t.extend(small);
        k = target;
    }
    strata
}

/// Per-stratum counts for `share` of the total: each stratum gets the floor
/// of its quota, and the leftover up to `round(share * N)` goes to the
/// largest fractional remainders (lower stratum first on ties).
pub fn apportion(sizes: &[usize], share: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let target = (share * total as f64).round() as usize;
    let quotas: Vec<f64> = sizes.iter().map(|&s| share * s as f64).collect();
    let mut counts: Vec<usize> = quotas
        .iter()
        .zip(sizes)
        .map(|(q, &s)| (q.floor() as usize).min(s))
        .collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = target.saturating_sub(assigned);
    for &k in order.iter().cycle().take(order.len() * 2) {
        if left == 0 {
            break;
        }
        if counts[k] < sizes[k] {
            counts[k] += 1;
            left -= 1;
        }
    }
    counts
}

fn take_shuffled(strata: &[Vec<usize>], counts: &[usize], rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut picked = Vec::new();
    let mut rest = Vec::new();
    for (s, &k) in strata.iter().zip(counts) {
        let mut s = s.clone();
        s.sort_unstable();
        s.shuffle(rng);
        picked.extend_from_slice(&s[..k]);
        rest.extend_from_slice(&s[k..]);
    }
    picked.sort_unstable();
    rest.sort_unstable();
    (picked, rest)
}

/// Chooses `n_test` plots, stratified by plot yield.
pub fn holdout_plots(plots: &[(String, f64)], n_test: usize, strata: usize, seed: u64) -> Result<Vec<String>> {
    if n_test >= plots.len() {
        return Err(Error::Config(format!(
            "cannot hold out {n_test} of {} plots",
            plots.len()
        )));
    }
    if n_test == 0 {
        return Ok(Vec::new());
    }
    let yields: Vec<f64> = plots.iter().map(|p| p.1).collect();
    let mut warnings = Vec::new();
    let bins = quantile_strata(&yields, strata, 1, &mut warnings);
    let sizes: Vec<usize> = bins.iter().map(Vec::len).collect();
    let counts = apportion(&sizes, n_test as f64 / plots.len() as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (test, _) = take_shuffled(&bins, &counts, &mut rng);
    Ok(test.into_iter().map(|i| plots[i].0.clone()).collect())
}

/// Test set = all records of `test_plots`; the remaining records are split
/// into training and validation within yield-quantile strata.
pub fn stratified_split(plot_ids: &[&str], yields: &[f64], test_plots: &[String], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if plot_ids.is_empty() || plot_ids.len() != yields.len() {
        return Err(Error::Input("split needs a non-empty record list".into()));
    }
    let test_set: HashSet<&str> = test_plots.iter().map(String::as_str).collect();
    let mut split = Split::default();
    let mut pool = Vec::new();
    for (i, id) in plot_ids.iter().enumerate() {
        if test_set.contains(id) {
            split.test.push(i);
        } else {
            pool.push(i);
        }
    }
    if pool.is_empty() {
        return Err(Error::Input("every record belongs to a test plot".into()));
    }
    let pool_y: Vec<f64> = pool.iter().map(|&i| yields[i]).collect();
    let strata = quantile_strata(&pool_y, spec.strata, 2, &mut split.warnings);
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let counts = apportion(&sizes, spec.train_share());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (train, val) = take_shuffled(&strata, &counts, &mut rng);
    split.train = train.into_iter().map(|k| pool[k]).collect();
    split.validation = val.into_iter().map(|k| pool[k]).collect();
    split.train.sort_unstable();
    split.validation.sort_unstable();
    Ok(split)
}
