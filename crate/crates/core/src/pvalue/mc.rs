use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::WeightedChiSq;
use crate::error::{Result, SeagleError};

pub const MIN_MC_SAMPLES: usize = 10_000;

/// Empirical `P(Q > q)` from `n_samples` draws of `sum lambda_j z_j^2`.
pub fn survival_mc(q: f64, dist: &WeightedChiSq, n_samples: usize, seed: u64) -> Result<f64> {
    Ok(survival_mc_many(&[q], dist, n_samples, seed)?[0])
}

/// Same as [`survival_mc`] for several thresholds sharing one set of draws.
pub fn survival_mc_many(
    qs: &[f64],
    dist: &WeightedChiSq,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_samples < MIN_MC_SAMPLES {
        return Err(SeagleError::Config(format!(
            "Monte Carlo needs at least {MIN_MC_SAMPLES} samples, got {n_samples}"
        )));
    }
    if let Some(&bad) = qs.iter().find(|q| q.is_nan()) {
        return Err(SeagleError::ParameterDomain {
            name: "q",
            value: bad,
        });
    }
    let mut sorted: Vec<(usize, f64)> = qs.iter().copied().enumerate().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let thresholds: Vec<f64> = sorted.iter().map(|s| s.1).collect();

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    // exceed[i] counts draws landing in [thresholds[i-1], thresholds[i]).
    let mut bucket = vec![0u64; thresholds.len() + 1];
    let lambdas = dist.lambdas();
    for _ in 0..n_samples {
        let mut s = 0.0;
        for &l in lambdas {
            let z: f64 = StandardNormal.sample(&mut rng);
            s += l * z * z;
        }
        // Number of thresholds strictly below s.
        let idx = thresholds.partition_point(|&t| t < s);
        bucket[idx] += 1;
    }
    // Draws exceeding thresholds[i] are those in buckets > i.
    let mut above = vec![0u64; thresholds.len()];
    let mut acc = 0u64;
    for i in (0..thresholds.len()).rev() {
        acc += bucket[i + 1];
        above[i] = acc;
    }
    let mut out = vec![0.0; qs.len()];
    for (rank, (orig, _)) in sorted.iter().enumerate() {
        out[*orig] = above[rank] as f64 / n_samples as f64;
    }
    Ok(out)
}
