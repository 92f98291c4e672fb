//! Deterministic, parallel Monte Carlo replications.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Generator for replication `rep`: the master seed picks the key and the
/// replication index picks the stream, so a replication's draws do not depend on
/// how many others run or in which order.
pub fn replication_rng(master_seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(rep);
    rng
}

/// Runs `f(rep, rng)` for `reps` replications in parallel; results keep replication order.
pub fn run_replications<T, F>(reps: usize, master_seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|r| f(r, &mut replication_rng(master_seed, r as u64)))
        .collect()
}

/// Distribution of an estimator across replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub reps: usize,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    /// Standard error of `mean`.
    pub mc_se: f64,
    pub bias: f64,
    pub rmse: f64,
}

impl McSummary {
    pub fn new(estimates: &[f64], truth: f64) -> Self {
        let n = estimates.len();
        let mean = estimates.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n as f64;
        Self {
            reps: n,
            truth,
            mean,
            sd: var.sqrt(),
            mc_se: (var / n as f64).sqrt(),
            bias: mean - truth,
            rmse: mse.sqrt(),
        }
    }

    /// Whether the mean lies within `k` Monte Carlo standard errors of the truth.
    pub fn within_mc_se(&self, k: f64) -> bool {
        self.bias.abs() <= k * self.mc_se
    }
}

/// Share of `flags` that are true.
pub fn rate(flags: impl IntoIterator<Item = bool>) -> f64 {
    let (hit, n) = flags
        .into_iter()
        .fold((0usize, 0usize), |(h, n), f| (h + usize::from(f), n + 1));
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}
