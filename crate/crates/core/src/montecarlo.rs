//! Permutation p-values per attribute pair, pooled with Fisher's method.
//!
//! Null tables come from shuffling the second attribute's values against the
//! first, which keeps both marginals fixed. Replicates are drawn in blocks of
//! [`BLOCK`]; block `k` of a pair uses the stream
//! `derive_seed(seed, [MONTE_CARLO, k])`, so results are independent of the
//! thread count.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contingency::{build_table, ContingencyError, ContingencyTable};
use crate::dataset::CategoricalDataset;
use crate::randomize::{derive_seed, stream_rng, tag};
use crate::special::{chi2_survival, LogProb, SpecialError};
use crate::summation::compensated_sum;
use crate::testcat::{attribute_pairs, Verdict};

#[derive(Debug, Error)]
pub enum MonteCarloError {
    #[error("table has a single category on one side ({rows}x{cols})")]
    Degenerate { rows: usize, cols: usize },
    #[error("replicates must be at least 1")]
    NoReplicates,
    #[error("p-value {0} is outside (0, 1]")]
    PValueDomain(f64),
    #[error("no p-values to pool")]
    Empty,
    #[error("need at least 2 attributes, got {0}")]
    TooFewAttributes(usize),
    #[error(transparent)]
    Contingency(#[from] ContingencyError),
    #[error(transparent)]
    Special(#[from] SpecialError),
}

pub type Result<T> = std::result::Result<T, MonteCarloError>;

/// Replicates per random stream.
pub const BLOCK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub replicates: usize,
    pub seed: u64,
}

impl MonteCarloConfig {
    pub fn new(seed: u64) -> Self {
        MonteCarloConfig {
            replicates: 20_000,
            seed,
        }
    }

    pub fn with_replicates(mut self, replicates: usize) -> Self {
        self.replicates = replicates;
        self
    }
}

/// Pearson statistic for a flat row-major count table against fixed margins.
fn pearson(counts: &[u64], rows: &[u64], cols: &[u64], n: f64) -> f64 {
    let c = cols.len();
    let mut x = 0.0;
    for (i, &r) in rows.iter().enumerate() {
        for (j, &s) in cols.iter().enumerate() {
            let e = (r * s) as f64 / n;
            let d = counts[i * c + j] as f64 - e;
            x += d * d / e;
        }
    }
    x
}

struct NullSampler {
    a: Vec<usize>,
    b: Vec<usize>,
    rows: Vec<u64>,
    cols: Vec<u64>,
    n: f64,
}

impl NullSampler {
    fn new(t: &ContingencyTable) -> Self {
        let (r, c) = t.shape();
        let mut a = Vec::with_capacity(t.grand_total() as usize);
        let mut b = Vec::with_capacity(a.capacity());
        for i in 0..r {
            for j in 0..c {
                for _ in 0..t.count(i, j) {
                    a.push(i);
                    b.push(j);
                }
            }
        }
        NullSampler {
            a,
            b,
            rows: t.row_marginals().to_vec(),
            cols: t.col_marginals().to_vec(),
            n: t.grand_total() as f64,
        }
    }

    fn observed(&self) -> f64 {
        let mut counts = vec![0; self.rows.len() * self.cols.len()];
        self.tabulate(&self.b, &mut counts);
        pearson(&counts, &self.rows, &self.cols, self.n)
    }

    fn tabulate(&self, b: &[usize], counts: &mut [u64]) {
        counts.fill(0);
        let c = self.cols.len();
        for (&i, &j) in self.a.iter().zip(b) {
            counts[i * c + j] += 1;
        }
    }

    /// Runs `len` replicates from the stream of block `block`.
    fn block(&self, seed: u64, block: usize, len: usize, mut visit: impl FnMut(&[u64], f64)) {
        let mut rng = stream_rng(derive_seed(seed, &[tag::MONTE_CARLO, block as u64]));
        let mut b = self.b.clone();
        let mut counts = vec![0; self.rows.len() * self.cols.len()];
        for _ in 0..len {
            b.shuffle(&mut rng);
            self.tabulate(&b, &mut counts);
            visit(&counts, pearson(&counts, &self.rows, &self.cols, self.n));
        }
    }
}

/// Permutation p-value `(1 + #{χ²_sim ≥ χ²_obs}) / (B + 1)`.
///
/// Simulated values within a relative `64 ε` below the observed statistic
/// count as ties, so rounding in the two sums cannot flip a comparison.
pub fn mc_pair_pvalue(t: &ContingencyTable, cfg: &MonteCarloConfig) -> Result<f64> {
    if cfg.replicates == 0 {
        return Err(MonteCarloError::NoReplicates);
    }
    if t.is_degenerate() || t.grand_total() == 0 {
        let (rows, cols) = t.shape();
        return Err(MonteCarloError::Degenerate { rows, cols });
    }
    let sampler = NullSampler::new(t);
    let cutoff = sampler.observed() * (1.0 - 64.0 * f64::EPSILON);
    let blocks = cfg.replicates.div_ceil(BLOCK);
    let exceed: usize = (0..blocks)
        .into_par_iter()
        .map(|k| {
            let len = BLOCK.min(cfg.replicates - k * BLOCK);
            let mut hits = 0;
            sampler.block(cfg.seed, k, len, |_, x| hits += usize::from(x >= cutoff));
            hits
        })
        .sum();
    Ok((1 + exceed) as f64 / (cfg.replicates + 1) as f64)
}

/// Fisher's combination: `X = −2 Σ ln p` referred to χ² with `2S` degrees of
/// freedom.
pub fn fisher_pool(pvalues: &[f64]) -> Result<LogProb> {
    if pvalues.is_empty() {
        return Err(MonteCarloError::Empty);
    }
    if let Some(&bad) = pvalues.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(MonteCarloError::PValueDomain(bad));
    }
    let x = -2.0 * compensated_sum(pvalues.iter().map(|p| p.ln()));
    Ok(chi2_survival(x.max(0.0), 2 * pvalues.len() as u64)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPairResult {
    pub attr_a: usize,
    pub attr_b: usize,
    pub chi2: f64,
    pub mc_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub n_objects: usize,
    pub n_attributes: usize,
    pub replicates: usize,
    pub seed: u64,
    pub fisher_statistic: f64,
    pub fisher_df: u64,
    #[serde(flatten)]
    pub p_value: LogProb,
    pub pairs: Vec<McPairResult>,
}

impl McReport {
    pub fn verdict(&self, alpha: f64) -> Verdict {
        Verdict::from_pvalue(self.p_value, alpha)
    }
}

/// Monte Carlo p-value for every informative attribute pair, then Fisher
/// pooling. Pair `s` (in lexicographic order) draws from
/// `derive_seed(seed, [MONTE_CARLO, s])`.
pub fn mc_testcat_pvalue(ds: &CategoricalDataset, cfg: &MonteCarloConfig) -> Result<McReport> {
    let m = ds.n_attributes();
    if m < 2 {
        return Err(MonteCarloError::TooFewAttributes(m));
    }
    let tables = attribute_pairs(m)
        .map(|(a, b)| build_table(ds, a, b))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let pairs = tables
        .par_iter()
        .enumerate()
        .filter(|(_, t)| !t.is_degenerate())
        .map(|(s, t)| {
            let pair_cfg = MonteCarloConfig {
                replicates: cfg.replicates,
                seed: derive_seed(cfg.seed, &[tag::MONTE_CARLO, s as u64]),
            };
            let (attr_a, attr_b) = t.attributes();
            Ok(McPairResult {
                attr_a,
                attr_b,
                chi2: NullSampler::new(t).observed(),
                mc_p_value: mc_pair_pvalue(t, &pair_cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pvalues: Vec<f64> = pairs.iter().map(|p| p.mc_p_value).collect();
    let (fisher_statistic, p_value) = if pvalues.is_empty() {
        (0.0, LogProb::ONE)
    } else {
        (
            -2.0 * compensated_sum(pvalues.iter().map(|p| p.ln())),
            fisher_pool(&pvalues)?,
        )
    };
    Ok(McReport {
        n_objects: ds.n_objects(),
        n_attributes: m,
        replicates: cfg.replicates,
        seed: cfg.seed,
        fisher_statistic,
        fisher_df: 2 * pvalues.len() as u64,
        p_value,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contingency::chi_squared;
    use crate::randomize::generate_crds;
    use crate::testcat::uniformity_test;
    use approx::assert_relative_eq;

    fn t(rows: &[[u64; 2]]) -> ContingencyTable {
        ContingencyTable::from_rows(rows).unwrap()
    }

    /// P(|C11 − E11| ≥ |obs − E11|) under the hypergeometric law of C11.
    fn hypergeometric_two_sided(r1: u64, c1: u64, n: u64, obs: u64) -> f64 {
        let ln_choose = |n: u64, k: u64| -> f64 {
            (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
        };
        let e = (r1 * c1) as f64 / n as f64;
        let gap = (obs as f64 - e).abs();
        let lo = (r1 + c1).saturating_sub(n);
        (lo..=r1.min(c1))
            .filter(|&k| (k as f64 - e).abs() >= gap - 1e-9)
            .map(|k| (ln_choose(c1, k) + ln_choose(n - c1, r1 - k) - ln_choose(n, r1)).exp())
            .sum()
    }

    #[test]
    fn exact_oracle_matches_reference() {
        assert_relative_eq!(hypergeometric_two_sided(25, 40, 100, 15), 0.032523860629862594, max_relative = 1e-10);
    }

    #[test]
    fn zero_statistic_gives_one() {
        let ds3 = t(&[[10, 15], [30, 45]]);
        let cfg = MonteCarloConfig::new(1).with_replicates(2000);
        assert_eq!(mc_pair_pvalue(&ds3, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn strong_association_hits_floor() {
        let ds1 = t(&[[20, 5], [20, 55]]);
        let cfg = MonteCarloConfig::new(2);
        let p = mc_pair_pvalue(&ds1, &cfg).unwrap();
        assert!(p <= 5.0 / 20_001.0, "p = {p}");
        assert!(p >= 1.0 / 20_001.0);
    }

    #[test]
    fn reproducible_and_bounded() {
        let tab = t(&[[15, 10], [25, 50]]);
        let cfg = MonteCarloConfig::new(3).with_replicates(3000);
        let p = mc_pair_pvalue(&tab, &cfg).unwrap();
        assert_eq!(p, mc_pair_pvalue(&tab, &cfg).unwrap());
        assert!((1.0 / 3001.0..=1.0).contains(&p));
        let exact = hypergeometric_two_sided(25, 40, 100, 15);
        let se = (exact * (1.0 - exact) / 3000.0).sqrt();
        assert!((p - exact).abs() < 4.0 * se, "p = {p}, exact = {exact}");
        let one = MonteCarloConfig::new(3).with_replicates(1);
        let p1 = mc_pair_pvalue(&tab, &one).unwrap();
        assert!(p1 == 0.5 || p1 == 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = MonteCarloConfig::new(1).with_replicates(0);
        assert!(matches!(mc_pair_pvalue(&t(&[[1, 2], [3, 4]]), &cfg), Err(MonteCarloError::NoReplicates)));
        let single = ContingencyTable::from_rows(&[[3, 4]]).unwrap();
        assert!(matches!(
            mc_pair_pvalue(&single, &MonteCarloConfig::new(1)),
            Err(MonteCarloError::Degenerate { .. })
        ));
    }

    #[test]
    fn simulated_tables_keep_marginals() {
        let tab = ContingencyTable::from_rows(&[[5, 0, 3], [1, 7, 2], [0, 4, 9]]).unwrap();
        let sampler = NullSampler::new(&tab);
        assert_relative_eq!(sampler.observed(), chi_squared(&tab).statistic, max_relative = 1e-12);
        sampler.block(9, 0, 500, |counts, _| {
            for i in 0..3 {
                assert_eq!(counts[i * 3..i * 3 + 3].iter().sum::<u64>(), tab.row_marginals()[i]);
            }
            for j in 0..3 {
                assert_eq!((0..3).map(|i| counts[i * 3 + j]).sum::<u64>(), tab.col_marginals()[j]);
            }
        });
    }

    #[test]
    fn fisher_identities() {
        assert_eq!(fisher_pool(&[1.0, 1.0, 1.0]).unwrap().linear(), 1.0);
        for p in [0.9, 0.3, 1e-4, 1e-200] {
            assert_relative_eq!(fisher_pool(&[p]).unwrap().linear(), p, max_relative = 1e-12);
        }
        let x: f64 = -4.0 * 0.05f64.ln();
        assert_relative_eq!(x, 11.982929094215963, max_relative = 1e-14);
        let closed = (-x / 2.0).exp() * (1.0 + x / 2.0);
        assert_relative_eq!(fisher_pool(&[0.05, 0.05]).unwrap().linear(), closed, max_relative = 1e-12);
        assert!((closed - 0.01746).abs() < 5e-5);
        assert!(matches!(fisher_pool(&[0.5, 0.0]), Err(MonteCarloError::PValueDomain(_))));
        assert!(matches!(fisher_pool(&[]), Err(MonteCarloError::Empty)));
    }

    fn toy(n: usize, seed: u64) -> CategoricalDataset {
        use rand::Rng;
        let mut rng = stream_rng(seed);
        let rows: Vec<Vec<String>> = (0..n)
            .map(|_| (0..3).map(|a| format!("v{}", rng.random_range(0..(a + 2)))).collect())
            .collect();
        CategoricalDataset::from_rows(vec!["x".into(), "y".into(), "z".into()], &rows).unwrap()
    }

    #[test]
    fn independent_toy_rarely_rejects() {
        let cfg = MonteCarloConfig::new(0).with_replicates(500);
        let passing = (0..100)
            .filter(|&s| {
                let r = mc_testcat_pvalue(&toy(60, 1000 + s), &MonteCarloConfig { seed: s, ..cfg }).unwrap();
                r.p_value.linear() > 0.01
            })
            .count();
        assert!(passing >= 99, "passing = {passing}");
    }

    #[test]
    fn null_pvalues_are_uniform() {
        let cfg = MonteCarloConfig::new(0).with_replicates(2000);
        let base = {
            use rand::Rng;
            let mut rng = stream_rng(77);
            let rows: Vec<Vec<String>> = (0..200)
                .map(|_| vec![format!("a{}", rng.random_range(0..4)), format!("b{}", rng.random_range(0..4))])
                .collect();
            CategoricalDataset::from_rows(vec!["a".into(), "b".into()], &rows).unwrap()
        };
        let ps: Vec<f64> = (0..200u64)
            .into_par_iter()
            .map(|s| {
                let crds = generate_crds(&base, derive_seed(5, &[s]));
                let tab = build_table(&crds, 0, 1).unwrap();
                mc_pair_pvalue(&tab, &MonteCarloConfig { seed: s, ..cfg }).unwrap()
            })
            .collect();
        let ks = uniformity_test(&ps).unwrap();
        assert!(ks.ks_pvalue > 0.01, "{ks:?}");
    }

    #[test]
    fn report_shape() {
        let ds = toy(40, 4);
        let cfg = MonteCarloConfig::new(8).with_replicates(200);
        let r = mc_testcat_pvalue(&ds, &cfg).unwrap();
        assert_eq!(r.pairs.len(), 3);
        assert_eq!(r.fisher_df, 6);
        assert_eq!(r, mc_testcat_pvalue(&ds, &cfg).unwrap());
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("p_value").is_some() && json.get("log10_p").is_some());
    }
}
