//! Non-parametric bootstrap: row resamples with replacement, each refitted
//! end to end (including the marginal transform) with its own derived seed,
//! plus percentile confidence intervals over any scalar statistic.
//!
//! Replicates run in parallel; each one is internally single-threaded and
//! fully determined by the master seed and its index, so the ensemble is
//! reproducible regardless of worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataio::ObservationMatrix;
use crate::error::{Result, SparError};
use crate::seeds;
use crate::spar::{spar_fit, SparConfig, SparModel};
use crate::stats::quantile_type7_sorted;

/// Fraction of replicates that must fit successfully.
const MIN_SUCCESS_FRACTION: f64 = 0.9;

/// Bootstrap replicate fits sharing dimension, `α`, and configuration.
#[derive(Debug, Clone)]
pub struct BootstrapEnsemble {
    /// Successfully fitted replicates, in replicate order.
    pub models: Vec<SparModel>,
    /// Seed used by each successful replicate.
    pub replicate_seeds: Vec<u64>,
    /// `(replicate index, error)` for replicates that failed to fit.
    pub failures: Vec<(usize, String)>,
    /// Requested ensemble size.
    pub b_requested: usize,
}

impl SparConfig {
    /// Same configuration under a different master seed, with the stage
    /// seeds re-derived.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seed = seed;
        cfg.threshold_schedule.seed = seeds::derive(seed, 1);
        cfg.gpd_schedule.seed = seeds::derive(seed, 2);
        cfg
    }
}

/// Refit one replicate on the given row selection with the given seed.
pub fn bootstrap_replicate(
    raw: &ObservationMatrix,
    cfg: &SparConfig,
    indices: &[usize],
    seed: u64,
) -> Result<SparModel> {
    let resampled = raw.resample_rows(indices)?;
    spar_fit(&resampled, &cfg.with_seed(seed))
}

/// `B` independent row-resamples with replacement, each refitted end to
/// end. Individual failures are tolerated up to 10% of `B`; beyond that the
/// whole ensemble fails.
pub fn bootstrap_fit(
    raw: &ObservationMatrix,
    cfg: &SparConfig,
    b: usize,
    master_seed: u64,
) -> Result<BootstrapEnsemble> {
    if b == 0 {
        return Err(SparError::ParamDomain("bootstrap ensemble size must be >= 1".into()));
    }
    let n = raw.nrows();
    let results: Vec<(usize, u64, Result<SparModel>)> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let fit_seed = seeds::derive(master_seed, 1000 + rep as u64);
            let mut resample_rng =
                ChaCha8Rng::seed_from_u64(seeds::derive(master_seed, 2000 + rep as u64));
            let indices: Vec<usize> = (0..n).map(|_| resample_rng.random_range(0..n)).collect();
            (rep, fit_seed, bootstrap_replicate(raw, cfg, &indices, fit_seed))
        })
        .collect();

    let mut models = Vec::with_capacity(b);
    let mut replicate_seeds = Vec::with_capacity(b);
    let mut failures = Vec::new();
    for (rep, seed, result) in results {
        match result {
            Ok(model) => {
                models.push(model);
                replicate_seeds.push(seed);
            }
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    if (models.len() as f64) < MIN_SUCCESS_FRACTION * b as f64 {
        return Err(SparError::BootstrapFailure { failed: failures.len(), total: b });
    }
    for (rep, err) in &failures {
        log::warn!("bootstrap replicate {rep} failed: {err}");
    }
    Ok(BootstrapEnsemble { models, replicate_seeds, failures, b_requested: b })
}

/// Percentile confidence interval: the empirical `(1−level)/2` and
/// `1−(1−level)/2` quantiles (type-7) of the replicate statistics.
pub fn percentile_ci(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(SparError::InsufficientData { context: "percentile_ci", needed: 1, got: 0 });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(SparError::ParamDomain(format!("level {level} outside (0, 1)")));
    }
    let recommended = (2.0 / (1.0 - level)).ceil() as usize * 2;
    if values.len() < recommended.min(20) {
        log::warn!(
            "percentile_ci: {} replicates is few for level {level}; endpoints are imprecise",
            values.len()
        );
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_type7_sorted(&sorted, tail), quantile_type7_sorted(&sorted, 1.0 - tail)))
}
