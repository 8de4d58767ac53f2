//! Experiments built from the test and the null models, plus report output.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::CategoricalDataset;
use crate::montecarlo::McReport;
use crate::randomize::{
    crds_pool, derive_seed, partial_shuffle, representative_crds, tag, PoolStats,
    RandomizationConfig, RandomizeError,
};
use crate::separation::SeparationSummary;
use crate::testcat::{
    testcat_pvalue, ClusterabilityReport, KsResult, TestcatError, Verdict,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("repeats must be at least 1")]
    NoRepeats,
    #[error(transparent)]
    Randomize(#[from] RandomizeError),
    #[error(transparent)]
    Testcat(#[from] TestcatError),
    #[error("failed to write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to encode JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("failed to encode CSV: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub dataset_name: String,
    pub alpha: f64,
    pub ods_pvalue: f64,
    pub ods_log10_p: f64,
    pub ods_verdict: Verdict,
    pub crds_pvalue: f64,
    pub crds_log10_p: f64,
    pub crds_verdict: Verdict,
    /// The original data should test clusterable.
    pub correctly_identified_ods: bool,
    /// The randomized data should test unclusterable.
    pub correctly_identified_crds: bool,
    pub crds_attempt: usize,
    pub pool_median: f64,
}

/// Tests the data set and its representative CRDS.
pub fn validate_dataset(
    name: &str,
    ds: &CategoricalDataset,
    cfg: &RandomizationConfig,
    alpha: f64,
) -> Result<ValidationOutcome> {
    let ods = testcat_pvalue(ds, alpha)?;
    let rep = representative_crds(ds, cfg)?;
    let crds = testcat_pvalue(&rep.dataset, alpha)?;
    Ok(ValidationOutcome {
        dataset_name: name.to_string(),
        alpha,
        ods_pvalue: ods.p_value.linear(),
        ods_log10_p: ods.p_value.log10(),
        ods_verdict: ods.verdict,
        crds_pvalue: crds.p_value.linear(),
        crds_log10_p: crds.p_value.log10(),
        crds_verdict: crds.verdict,
        correctly_identified_ods: ods.verdict.is_clusterable(),
        correctly_identified_crds: !crds.verdict.is_clusterable(),
        crds_attempt: rep.attempt,
        pool_median: rep.pool.median,
    })
}

pub const DEFAULT_POOL_SIZE: usize = 101;

/// Statistics over `n` CRDSs of `ds`.
pub fn pvalue_pool(ds: &CategoricalDataset, n: usize, seed: u64) -> Result<PoolStats> {
    Ok(crds_pool(ds, n, seed)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCurve {
    pub fractions: Vec<f64>,
    pub clusterable_counts: Vec<usize>,
    pub clusterable_proportion: Vec<f64>,
    pub repeats: usize,
    pub alpha: f64,
    pub seed: u64,
}

pub const DEFAULT_REPEATS: usize = 100;

/// 0.01, 0.02, 0.05, then 0.1 to 1.0 in steps of 0.1.
pub fn default_fractions() -> Vec<f64> {
    let mut f = vec![0.01, 0.02, 0.05];
    f.extend((1..=10).map(|k| k as f64 / 10.0));
    f
}

/// Clusterable proportion after partially shuffling each fraction.
///
/// Repeat `r` at fraction `f` shuffles with
/// `derive_seed(seed, [ROBUSTNESS, f.to_bits(), r])`, so a fraction's result
/// does not depend on which other fractions are on the grid.
pub fn robustness_curve(
    ds: &CategoricalDataset,
    fractions: &[f64],
    repeats: usize,
    alpha: f64,
    seed: u64,
) -> Result<RobustnessCurve> {
    if repeats == 0 {
        return Err(HarnessError::NoRepeats);
    }
    if let Some(&bad) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(HarnessError::InvalidFraction(bad));
    }
    let mut clusterable_counts = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let verdicts = (0..repeats)
            .into_par_iter()
            .map(|r| -> Result<bool> {
                let s = derive_seed(seed, &[tag::ROBUSTNESS, f.to_bits(), r as u64]);
                let shuffled = partial_shuffle(ds, f, s)?;
                Ok(testcat_pvalue(&shuffled, alpha)?.verdict.is_clusterable())
            })
            .collect::<Result<Vec<_>>>()?;
        clusterable_counts.push(verdicts.into_iter().filter(|&c| c).count());
    }
    Ok(RobustnessCurve {
        fractions: fractions.to_vec(),
        clusterable_proportion: clusterable_counts
            .iter()
            .map(|&c| c as f64 / repeats as f64)
            .collect(),
        clusterable_counts,
        repeats,
        alpha,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown output format '{other}' (expected json or csv)")),
        }
    }
}

/// Anything `emit_report` can write. JSON comes from serde; the CSV form is
/// a flat table chosen per type.
pub trait Report: Serialize {
    fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()>;
}

pub fn emit_report<R: Report, W: Write>(result: &R, format: ReportFormat, mut sink: W) -> Result<()> {
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut sink, result)?;
            sink.write_all(b"\n")?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut sink);
            result.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    sink.flush()?;
    Ok(())
}

impl Report for ClusterabilityReport {
    fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record([
            "attr_a", "attr_b", "chi2", "df", "p_value", "log10_p", "strong_positive",
            "strong_negative", "cell_count",
        ])?;
        for p in &self.pairs {
            w.write_record([
                p.attr_a.to_string(),
                p.attr_b.to_string(),
                p.chi2.to_string(),
                p.df.to_string(),
                p.p_value.linear().to_string(),
                p.p_value.log10().to_string(),
                p.strong_positive.to_string(),
                p.strong_negative.to_string(),
                p.cell_count.to_string(),
            ])?;
        }
        Ok(())
    }
}

impl Report for McReport {
    fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record(["attr_a", "attr_b", "chi2", "mc_p_value"])?;
        for p in &self.pairs {
            w.write_record([
                p.attr_a.to_string(),
                p.attr_b.to_string(),
                p.chi2.to_string(),
                p.mc_p_value.to_string(),
            ])?;
        }
        Ok(())
    }
}

impl Report for RobustnessCurve {
    fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record(["fraction", "clusterable_proportion"])?;
        for (f, p) in self.fractions.iter().zip(&self.clusterable_proportion) {
            w.write_record([f.to_string(), p.to_string()])?;
        }
        Ok(())
    }
}

impl Report for PoolStats {
    fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record(["member", "p_value", "strong_pairs", "strong_pair_proportion"])?;
        for (k, ((p, s), q)) in self
            .pvalues
            .iter()
            .zip(&self.strong_pairs)
            .zip(&self.strong_pair_proportions)
            .enumerate()
        {
            w.write_record([k.to_string(), p.to_string(), s.to_string(), q.to_string()])?;
        }
        Ok(())
    }
}

impl Report for ValidationOutcome {
    fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.serialize(self)?;
        Ok(())
    }
}

impl Report for KsResult {
    fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.serialize(self)?;
        Ok(())
    }
}

impl Report for SeparationSummary {
    fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.serialize(self)?;
        Ok(())
    }
}
