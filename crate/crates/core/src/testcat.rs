//! The TestCat clusterability test.
//!
//! Every unordered attribute pair is cross-tabulated and tested for
//! independence. The pairwise chi-squared statistics and their degrees of
//! freedom are summed, and the sum is referred to a single chi-squared
//! distribution. A small composite p-value means the attributes carry joint
//! structure, which is taken as evidence of clusterability.
//!
//! Pairs are evaluated in parallel but always reduced in the fixed `(a, b)`,
//! `a < b` lexicographic order, so `chi2_sum` is bit-identical for any thread
//! count.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contingency::{
    build_table, chi_squared, count_strong_cells, standardized_residuals, ContingencyError,
    ContingencyTable, StrongCells, DEFAULT_RESIDUAL_THRESHOLD,
};
use crate::dataset::CategoricalDataset;
use crate::special::{chi2_survival, kolmogorov_ks_pvalue, LogProb, SpecialError};
use crate::summation::compensated_sum;

pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Error)]
pub enum TestcatError {
    #[error("need at least two attributes, found {0}")]
    TooFewAttributes(usize),
    #[error("uniformity test needs a non-empty sample")]
    EmptySample,
    #[error("sample value {0} lies outside [0, 1]")]
    OutOfUnitInterval(f64),
    #[error("invalid significance level {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Contingency(#[from] ContingencyError),
    #[error(transparent)]
    Special(#[from] SpecialError),
}

pub type Result<T> = std::result::Result<T, TestcatError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Clusterable,
    Unclusterable,
}

impl Verdict {
    /// Clusterable iff `p <= alpha`.
    pub fn from_pvalue(p: LogProb, alpha: f64) -> Self {
        if p.linear() <= alpha {
            Verdict::Clusterable
        } else {
            Verdict::Unclusterable
        }
    }

    pub fn is_clusterable(self) -> bool {
        self == Verdict::Clusterable
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Clusterable => f.write_str("clusterable"),
            Verdict::Unclusterable => f.write_str("unclusterable"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub alpha: f64,
    /// |sr| above this marks a strongly associated cell.
    pub residual_threshold: f64,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            alpha: DEFAULT_ALPHA,
            residual_threshold: DEFAULT_RESIDUAL_THRESHOLD,
        }
    }
}

impl TestOptions {
    pub fn with_alpha(alpha: f64) -> Self {
        TestOptions {
            alpha,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTestResult {
    pub attr_a: usize,
    pub attr_b: usize,
    pub chi2: f64,
    pub df: u64,
    #[serde(flatten)]
    pub p_value: LogProb,
    pub strong_positive: usize,
    pub strong_negative: usize,
    pub cell_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterabilityReport {
    pub n_objects: usize,
    pub n_attributes: usize,
    pub chi2_sum: f64,
    pub df_sum: u64,
    #[serde(flatten)]
    pub p_value: LogProb,
    pub alpha: f64,
    pub verdict: Verdict,
    pub residual_threshold: f64,
    /// Strongly associated cells over all pair tables.
    pub strong_pairs_total: usize,
    pub strong_pairs_proportion: f64,
    pub pairs: Vec<PairTestResult>,
}

/// All unordered pairs `(a, b)`, `a < b`, in lexicographic order.
pub fn attribute_pairs(m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..m).flat_map(move |a| (a + 1..m).map(move |b| (a, b)))
}

fn require_pairs(ds: &CategoricalDataset) -> Result<()> {
    match ds.n_attributes() {
        m if m < 2 => Err(TestcatError::TooFewAttributes(m)),
        _ => Ok(()),
    }
}

fn pair_tables(ds: &CategoricalDataset) -> Result<Vec<ContingencyTable>> {
    let pairs: Vec<_> = attribute_pairs(ds.n_attributes()).collect();
    pairs
        .par_iter()
        .map(|&(a, b)| build_table(ds, a, b).map_err(TestcatError::from))
        .collect()
}

/// Summed chi-squared statistic and summed degrees of freedom.
pub fn testcat_statistic(ds: &CategoricalDataset) -> Result<(f64, u64)> {
    require_pairs(ds)?;
    let stats: Vec<_> = pair_tables(ds)?.iter().map(chi_squared).collect();
    let chi2_sum = compensated_sum(stats.iter().map(|c| c.statistic));
    let df_sum = stats.iter().map(|c| c.df).sum();
    Ok((chi2_sum, df_sum))
}

fn test_pair(t: &ContingencyTable, threshold: f64) -> Result<PairTestResult> {
    let (attr_a, attr_b) = t.attributes();
    let chi = chi_squared(t);
    let (p_value, strong) = if chi.df == 0 {
        (LogProb::ONE, StrongCells::default())
    } else {
        let residuals = standardized_residuals(t)?;
        (
            chi2_survival(chi.statistic, chi.df)?,
            count_strong_cells(&residuals, threshold),
        )
    };
    Ok(PairTestResult {
        attr_a,
        attr_b,
        chi2: chi.statistic,
        df: chi.df,
        p_value,
        strong_positive: strong.positive,
        strong_negative: strong.negative,
        cell_count: t.cell_count(),
    })
}

/// Full report at significance level `alpha` with the default residual
/// threshold.
pub fn testcat_pvalue(ds: &CategoricalDataset, alpha: f64) -> Result<ClusterabilityReport> {
    testcat_report(ds, &TestOptions::with_alpha(alpha))
}

pub fn testcat_report(ds: &CategoricalDataset, opts: &TestOptions) -> Result<ClusterabilityReport> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(TestcatError::InvalidAlpha(opts.alpha));
    }
    require_pairs(ds)?;
    let pairs: Vec<(usize, usize)> = attribute_pairs(ds.n_attributes()).collect();
    let results = pairs
        .par_iter()
        .map(|&(a, b)| test_pair(&build_table(ds, a, b)?, opts.residual_threshold))
        .collect::<Result<Vec<_>>>()?;

    let chi2_sum = compensated_sum(results.iter().map(|r| r.chi2));
    let df_sum: u64 = results.iter().map(|r| r.df).sum();
    let p_value = if df_sum == 0 {
        LogProb::ONE
    } else {
        chi2_survival(chi2_sum, df_sum)?
    };
    let verdict = if df_sum == 0 {
        Verdict::Unclusterable
    } else {
        Verdict::from_pvalue(p_value, opts.alpha)
    };
    let strong_pairs_total = results
        .iter()
        .map(|r| r.strong_positive + r.strong_negative)
        .sum();
    let cells: usize = results.iter().map(|r| r.cell_count).sum();

    Ok(ClusterabilityReport {
        n_objects: ds.n_objects(),
        n_attributes: ds.n_attributes(),
        chi2_sum,
        df_sum,
        p_value,
        alpha: opts.alpha,
        verdict,
        residual_threshold: opts.residual_threshold,
        strong_pairs_total,
        strong_pairs_proportion: strong_pairs_total as f64 / cells as f64,
        pairs: results,
    })
}

/// Per-pair p-values, skipping pairs with zero degrees of freedom.
pub fn per_pair_pvalues(ds: &CategoricalDataset) -> Result<Vec<f64>> {
    require_pairs(ds)?;
    pair_tables(ds)?
        .iter()
        .map(chi_squared)
        .filter(|c| c.df > 0)
        .map(|c| Ok(chi2_survival(c.statistic, c.df)?.linear()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub n: usize,
    pub ks_statistic: f64,
    pub ks_pvalue: f64,
}

/// One-sample Kolmogorov-Smirnov test of `pvalues` against Uniform[0, 1].
pub fn uniformity_test(pvalues: &[f64]) -> Result<KsResult> {
    if pvalues.is_empty() {
        return Err(TestcatError::EmptySample);
    }
    if let Some(&bad) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(TestcatError::OutOfUnitInterval(bad));
    }
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let above = (i + 1) as f64 / n - x;
            let below = x - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        n: sorted.len(),
        ks_statistic: d,
        ks_pvalue: kolmogorov_ks_pvalue(d.min(1.0), sorted.len())?,
    })
}
