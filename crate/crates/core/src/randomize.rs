//! Null-model data generation.
//!
//! A corresponding randomized data set (CRDS) permutes every attribute column
//! independently, which keeps each attribute's category counts exactly while
//! destroying any association between attributes.
//!
//! # Random streams
//!
//! Every permutation draws from its own ChaCha8 stream. Stream seeds are
//! derived from the user seed by folding a path of integers through the
//! SplitMix64 finalizer (see [`derive_seed`]); attribute `m` of a CRDS built
//! from seed `s` uses path `[ATTRIBUTE, m]`, and replicate `k` of a pool uses
//! `[POOL, k]` before that. Output is therefore a pure function of the seed
//! and independent of thread scheduling.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::CategoricalDataset;
use crate::testcat::{testcat_report, TestOptions, TestcatError};

#[derive(Debug, Error)]
pub enum RandomizeError {
    #[error("shuffle fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("invalid randomization config: {0}")]
    InvalidConfig(String),
    #[error(
        "no CRDS within {tolerance} of the pool median {} after {attempts} attempts",
        .stats.median
    )]
    SelectionFailed {
        attempts: usize,
        tolerance: f64,
        stats: Box<PoolStats>,
    },
    #[error(transparent)]
    Testcat(#[from] TestcatError),
}

pub type Result<T> = std::result::Result<T, RandomizeError>;

/// Stream-path tags.
pub mod tag {
    pub const ATTRIBUTE: u64 = 1;
    pub const ROW_SUBSET: u64 = 2;
    pub const POOL: u64 = 3;
    pub const SELECTION: u64 = 4;
    pub const ROBUSTNESS: u64 = 5;
    pub const MONTE_CARLO: u64 = 6;
    pub const UNIFORMITY: u64 = 7;
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for a path below `seed`: `s <- splitmix64(s ^ splitmix64(c))`
/// for each component `c`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |s, &c| splitmix64(s ^ splitmix64(c)))
}

/// The generator behind every stream.
pub fn stream_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationConfig {
    pub seed: u64,
    pub fraction: f64,
    pub pool_size: usize,
    pub tolerance: f64,
    pub max_attempts: usize,
}

impl RandomizationConfig {
    pub fn new(seed: u64) -> Self {
        RandomizationConfig {
            seed,
            fraction: 1.0,
            pool_size: 101,
            tolerance: 0.05,
            max_attempts: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(RandomizeError::InvalidFraction(self.fraction));
        }
        if self.pool_size == 0 {
            return Err(RandomizeError::InvalidConfig("pool_size must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(RandomizeError::InvalidConfig("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Permutes every column independently.
pub fn generate_crds(ds: &CategoricalDataset, seed: u64) -> CategoricalDataset {
    let columns = ds
        .columns()
        .par_iter()
        .enumerate()
        .map(|(m, col)| {
            let mut col = col.clone();
            col.shuffle(&mut stream_rng(derive_seed(seed, &[tag::ATTRIBUTE, m as u64])));
            col
        })
        .collect();
    ds.with_permuted_columns(columns)
}

/// Rows touched by a partial shuffle of `fraction`: ⌈fraction · n⌉.
pub fn shuffled_row_count(fraction: f64, n: usize) -> usize {
    // slack absorbs products like 0.07 * 100 = 7.000000000000001
    let k = (fraction * n as f64 - 1e-9).ceil();
    (k.max(0.0) as usize).min(n)
}

/// Picks one row subset, then permutes each attribute within that subset
/// using the attribute's own stream.
pub fn partial_shuffle(
    ds: &CategoricalDataset,
    fraction: f64,
    seed: u64,
) -> Result<CategoricalDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(RandomizeError::InvalidFraction(fraction));
    }
    let n = ds.n_objects();
    let k = shuffled_row_count(fraction, n);
    if k < 2 {
        return Ok(ds.clone());
    }
    let mut rows =
        index::sample(&mut stream_rng(derive_seed(seed, &[tag::ROW_SUBSET])), n, k).into_vec();
    rows.sort_unstable();
    let columns = ds
        .columns()
        .par_iter()
        .enumerate()
        .map(|(m, col)| {
            let mut picked: Vec<u32> = rows.iter().map(|&r| col[r]).collect();
            picked.shuffle(&mut stream_rng(derive_seed(seed, &[tag::ATTRIBUTE, m as u64])));
            let mut col = col.clone();
            for (&r, v) in rows.iter().zip(picked) {
                col[r] = v;
            }
            col
        })
        .collect();
    Ok(ds.with_permuted_columns(columns))
}

/// TestCat p-values over a pool of CRDSs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolStats {
    pub size: usize,
    pub seed: u64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    /// Members with p > 0.01.
    pub count_above_001: usize,
    pub fraction_above_001: f64,
    pub pvalues: Vec<f64>,
    pub strong_pairs: Vec<usize>,
    pub strong_pair_proportions: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Generates `size` CRDSs (member `k` from `derive_seed(seed, [POOL, k])`)
/// and summarizes their TestCat p-values.
pub fn crds_pool(ds: &CategoricalDataset, size: usize, seed: u64) -> Result<PoolStats> {
    if size == 0 {
        return Err(RandomizeError::InvalidConfig("pool size must be at least 1".into()));
    }
    let opts = TestOptions::default();
    let members = (0..size)
        .into_par_iter()
        .map(|k| {
            let crds = generate_crds(ds, derive_seed(seed, &[tag::POOL, k as u64]));
            testcat_report(&crds, &opts)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let pvalues: Vec<f64> = members.iter().map(|r| r.p_value.linear()).collect();
    let count_above_001 = pvalues.iter().filter(|&&p| p > 0.01).count();
    Ok(PoolStats {
        size,
        seed,
        median: median(&pvalues),
        min: pvalues.iter().copied().fold(f64::INFINITY, f64::min),
        max: pvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        count_above_001,
        fraction_above_001: count_above_001 as f64 / size as f64,
        strong_pairs: members.iter().map(|r| r.strong_pairs_total).collect(),
        strong_pair_proportions: members.iter().map(|r| r.strong_pairs_proportion).collect(),
        pvalues,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentativeCrds {
    pub dataset: CategoricalDataset,
    pub pvalue: f64,
    /// Index of the accepted candidate in the selection sequence.
    pub attempt: usize,
    pub pool: PoolStats,
}

/// Builds a pool, takes its median p-value, then scans further CRDSs
/// (candidate `k` from `derive_seed(seed, [SELECTION, k])`) and returns the
/// first one within `tolerance` of the median.
pub fn representative_crds(
    ds: &CategoricalDataset,
    cfg: &RandomizationConfig,
) -> Result<RepresentativeCrds> {
    cfg.validate()?;
    let pool = crds_pool(ds, cfg.pool_size, cfg.seed)?;
    let opts = TestOptions::default();
    let batch = rayon::current_num_threads().max(1) * 2;
    let mut start = 0;
    while start < cfg.max_attempts {
        let end = (start + batch).min(cfg.max_attempts);
        let found = (start..end)
            .into_par_iter()
            .map(|k| -> Result<Option<(usize, CategoricalDataset, f64)>> {
                let crds = generate_crds(ds, derive_seed(cfg.seed, &[tag::SELECTION, k as u64]));
                let p = testcat_report(&crds, &opts)?.p_value.linear();
                Ok(((p - pool.median).abs() <= cfg.tolerance).then_some((k, crds, p)))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .next();
        if let Some((attempt, dataset, pvalue)) = found {
            return Ok(RepresentativeCrds {
                dataset,
                pvalue,
                attempt,
                pool,
            });
        }
        start = end;
    }
    Err(RandomizeError::SelectionFailed {
        attempts: cfg.max_attempts,
        tolerance: cfg.tolerance,
        stats: Box::new(pool),
    })
}
