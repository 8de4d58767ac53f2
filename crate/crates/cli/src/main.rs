use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use testcat::contingency::{
    build_table, count_strong_cells, expected_frequencies, standardized_residuals,
    ContingencyError, ContingencyTable,
};
use testcat::dataset::{load_csv, CategoricalDataset, ColumnSelector, DatasetError, IngestOptions, MissingPolicy};
use testcat::harness::{
    default_fractions, emit_report, pvalue_pool, robustness_curve, validate_dataset, HarnessError,
    Report, ReportFormat, DEFAULT_POOL_SIZE, DEFAULT_REPEATS,
};
use testcat::montecarlo::{mc_testcat_pvalue, McReport, MonteCarloConfig, MonteCarloError};
use testcat::randomize::{
    derive_seed, generate_crds, partial_shuffle, representative_crds, tag, RandomizationConfig,
    RandomizeError,
};
use testcat::separation::{
    check_theorem1, separation_bruteforce, table_to_dataset, SeparationError, SeparationSummary,
    Theorem1Check,
};
use testcat::testcat::{
    attribute_pairs, per_pair_pvalues, testcat_report, uniformity_test, ClusterabilityReport,
    KsResult, TestOptions, TestcatError, Verdict, DEFAULT_ALPHA,
};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Input { path: String, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Output { path: String, source: io::Error },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Contingency(#[from] ContingencyError),
    #[error(transparent)]
    Testcat(#[from] TestcatError),
    #[error(transparent)]
    Randomize(#[from] RandomizeError),
    #[error(transparent)]
    Separation(#[from] SeparationError),
    #[error(transparent)]
    MonteCarlo(#[from] MonteCarloError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// Clusterability test for categorical data.
#[derive(Debug, Parser)]
#[command(name = "testcat", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Report format: json (default) or csv.
    #[arg(long, global = true)]
    output: Option<ReportFormat>,

    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the analytical test and report the verdict.
    Test {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        /// Residual magnitude marking a strongly associated cell.
        #[arg(long, default_value_t = 2.0)]
        threshold: f64,
        /// Exit with status 3 when the verdict is unclusterable.
        #[arg(long)]
        fail_if_unclusterable: bool,
    },
    /// Standardized residuals for every attribute pair.
    Residuals {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 2.0)]
        threshold: f64,
    },
    /// Write a randomized copy of the data set as CSV.
    Randomize {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        seed: u64,
        /// Shuffle only this fraction of rows.
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        /// Return the pool-median representative instead of one draw.
        #[arg(long)]
        representative: bool,
        #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
        pool_size: usize,
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
    },
    /// Separation measures of a two-attribute data set or a literal 2x2 table.
    Separation {
        #[command(flatten)]
        input: OptionalInputArgs,
        /// Row-major 2x2 counts, e.g. 20,5,20,55.
        #[arg(long, value_delimiter = ',')]
        table: Option<Vec<u64>>,
        /// Second 2x2 table with the same marginals for the ordering check.
        #[arg(long, value_delimiter = ',')]
        compare: Option<Vec<u64>>,
    },
    /// Monte Carlo per-pair p-values pooled with Fisher's method.
    Montecarlo {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 20_000)]
        replicates: usize,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        fail_if_unclusterable: bool,
    },
    /// Clusterable proportion under increasing partial shuffles.
    Robustness {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        seed: u64,
        /// Comma-separated fractions in [0, 1].
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_REPEATS)]
        repeats: usize,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
    },
    /// Kolmogorov-Smirnov test of per-pair p-values against Uniform[0, 1].
    Uniformity {
        #[command(flatten)]
        input: InputArgs,
        /// Pool per-pair p-values from this many CRDSs instead of the data set.
        #[arg(long, requires = "seed")]
        crds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Treat the input as a list of p-values, one per line.
        #[arg(long, conflicts_with = "crds")]
        pvalues: bool,
    },
    /// Test the data set and its representative CRDS.
    Validate {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
        pool_size: usize,
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        #[arg(long, default_value_t = 1000)]
        max_attempts: usize,
        /// Name recorded in the outcome (default: input file stem).
        #[arg(long)]
        name: Option<String>,
    },
    /// p-value statistics over a pool of CRDSs.
    Pool {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
        pool_size: usize,
    },
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Field delimiter.
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// The first row holds column names.
    #[arg(long, overrides_with = "no_header")]
    header: bool,
    /// The first row is data (default).
    #[arg(long)]
    no_header: bool,
    /// Handling of the "?" token.
    #[arg(long, default_value = "own-category")]
    missing: MissingPolicy,
    /// Columns to exclude, by 0-based index or header name.
    #[arg(long, value_delimiter = ',')]
    drop: Vec<ColumnSelector>,
}

impl IngestArgs {
    fn options(&self) -> IngestOptions {
        IngestOptions {
            delimiter: self.delimiter,
            has_header: self.header && !self.no_header,
            missing_policy: self.missing,
            drop_columns: self.drop.clone(),
            ..IngestOptions::default()
        }
    }
}

#[derive(Debug, Args)]
struct InputArgs {
    /// CSV file, or - for stdin.
    input: PathBuf,
    #[command(flatten)]
    ingest: IngestArgs,
}

#[derive(Debug, Args)]
struct OptionalInputArgs {
    /// CSV file with two attributes, or - for stdin.
    input: Option<PathBuf>,
    #[command(flatten)]
    ingest: IngestArgs,
}

fn read_input(path: &PathBuf) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    let res = if path.as_os_str() == "-" {
        io::stdin().read_to_end(&mut buf)
    } else {
        File::open(path).and_then(|mut f| f.read_to_end(&mut buf))
    };
    res.map_err(|source| CliError::Input {
        path: path.display().to_string(),
        source,
    })?;
    Ok(buf)
}

fn load(path: &PathBuf, ingest: &IngestArgs) -> Result<CategoricalDataset, CliError> {
    let bytes = read_input(path)?;
    Ok(load_csv(bytes.as_slice(), &ingest.options())?)
}

/// Ingest settings attached to a report so that results can be traced back.
#[derive(Debug, Serialize)]
struct Provenance {
    source: String,
    missing_policy: MissingPolicy,
    dropped_columns: Vec<ColumnSelector>,
    attribute_names: Vec<String>,
}

impl Provenance {
    fn new(input: &InputArgs, ds: &CategoricalDataset) -> Self {
        Provenance {
            source: input.input.display().to_string(),
            missing_policy: input.ingest.missing,
            dropped_columns: input.ingest.drop.clone(),
            attribute_names: ds.attribute_names().to_vec(),
        }
    }
}

#[derive(Debug, Serialize)]
struct Annotated<R> {
    input: Provenance,
    #[serde(flatten)]
    report: R,
}

impl<R: Report> Report for Annotated<R> {
    fn write_csv<W: Write>(&self, w: &mut testcat::csv::Writer<W>) -> testcat::harness::Result<()> {
        self.report.write_csv(w)
    }
}

#[derive(Debug, Serialize)]
struct McOutput {
    #[serde(flatten)]
    report: McReport,
    alpha: f64,
    verdict: Verdict,
}

impl Report for McOutput {
    fn write_csv<W: Write>(&self, w: &mut testcat::csv::Writer<W>) -> testcat::harness::Result<()> {
        self.report.write_csv(w)
    }
}

#[derive(Debug, Serialize)]
struct PairResiduals {
    attr_a: usize,
    attr_b: usize,
    name_a: String,
    name_b: String,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    observed: Vec<Vec<u64>>,
    expected: Vec<Vec<f64>>,
    residuals: Vec<Vec<f64>>,
    strong_positive: usize,
    strong_negative: usize,
}

#[derive(Debug, Serialize)]
struct ResidualsReport {
    threshold: f64,
    strong_pairs_total: usize,
    cell_total: usize,
    pairs: Vec<PairResiduals>,
}

impl Report for ResidualsReport {
    fn write_csv<W: Write>(&self, w: &mut testcat::csv::Writer<W>) -> testcat::harness::Result<()> {
        w.write_record([
            "attr_a", "attr_b", "value_a", "value_b", "observed", "expected", "residual", "strong",
        ])?;
        for p in &self.pairs {
            for (i, ri) in p.row_labels.iter().enumerate() {
                for (j, cj) in p.col_labels.iter().enumerate() {
                    let r = p.residuals[i][j];
                    let strong = if r > self.threshold {
                        "positive"
                    } else if r < -self.threshold {
                        "negative"
                    } else {
                        ""
                    };
                    w.write_record([
                        p.name_a.clone(),
                        p.name_b.clone(),
                        ri.clone(),
                        cj.clone(),
                        p.observed[i][j].to_string(),
                        p.expected[i][j].to_string(),
                        r.to_string(),
                        strong.to_string(),
                    ])?;
                }
            }
        }
        Ok(())
    }
}

fn residuals_report(ds: &CategoricalDataset, threshold: f64) -> Result<ResidualsReport, CliError> {
    let mut pairs = Vec::new();
    let mut cell_total = 0;
    for (a, b) in attribute_pairs(ds.n_attributes()) {
        let t = build_table(ds, a, b)?;
        cell_total += t.cell_count();
        if t.is_degenerate() {
            continue;
        }
        let r = standardized_residuals(&t)?;
        let e = expected_frequencies(&t)?;
        let strong = count_strong_cells(&r, threshold);
        pairs.push(PairResiduals {
            attr_a: a,
            attr_b: b,
            name_a: ds.attribute_names()[a].clone(),
            name_b: ds.attribute_names()[b].clone(),
            row_labels: ds.dictionary(a).to_vec(),
            col_labels: ds.dictionary(b).to_vec(),
            observed: t.counts().rows().into_iter().map(|r| r.to_vec()).collect(),
            expected: e.rows().into_iter().map(|r| r.to_vec()).collect(),
            residuals: r.values.rows().into_iter().map(|r| r.to_vec()).collect(),
            strong_positive: strong.positive,
            strong_negative: strong.negative,
        });
    }
    Ok(ResidualsReport {
        threshold,
        strong_pairs_total: pairs.iter().map(|p| p.strong_positive + p.strong_negative).sum(),
        cell_total,
        pairs,
    })
}

#[derive(Debug, Serialize)]
struct SeparationReport {
    table: Vec<Vec<u64>>,
    /// Closed forms, present for 2x2 tables.
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form: Option<SeparationSummary>,
    sep_bruteforce: u64,
    s_total_bruteforce: u64,
    sep_norm_bruteforce: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theorem1: Option<Theorem1Check>,
}

impl Report for SeparationReport {
    fn write_csv<W: Write>(&self, w: &mut testcat::csv::Writer<W>) -> testcat::harness::Result<()> {
        w.write_record(["sep", "s_total", "sep_norm", "lambda", "lambda_star", "chi2"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let c = self.closed_form.as_ref();
        w.write_record([
            self.sep_bruteforce.to_string(),
            self.s_total_bruteforce.to_string(),
            opt(self.sep_norm_bruteforce),
            opt(c.map(|c| c.lambda)),
            opt(c.and_then(|c| c.lambda_star)),
            opt(c.map(|c| c.chi2)),
        ])?;
        Ok(())
    }
}

fn table_2x2(v: &[u64]) -> Result<ContingencyTable, CliError> {
    if v.len() != 4 {
        return Err(CliError::Usage(format!("a 2x2 table needs 4 counts, got {}", v.len())));
    }
    Ok(ContingencyTable::from_counts(2, 2, v.to_vec())?)
}

fn separation_report(
    ds: Option<&CategoricalDataset>,
    table: Option<&[u64]>,
    compare: Option<&[u64]>,
) -> Result<SeparationReport, CliError> {
    let t = match (ds, table) {
        (Some(ds), None) => {
            if ds.n_attributes() != 2 {
                return Err(SeparationError::NotTwoAttributes(ds.n_attributes()).into());
            }
            build_table(ds, 0, 1)?
        }
        (None, Some(v)) => table_2x2(v)?,
        _ => return Err(CliError::Usage("give either an input file or --table".into())),
    };
    let expanded;
    let ds = match ds {
        Some(ds) => ds,
        None => {
            expanded = table_to_dataset(&t).ok_or(SeparationError::Undefined)?;
            &expanded
        }
    };
    let (sep, s_total) = separation_bruteforce(ds)?;
    let closed_form = match t.shape() {
        (2, 2) => Some(SeparationSummary::of(&t)?),
        _ => None,
    };
    let theorem1 = match compare {
        Some(v) => {
            if t.shape() != (2, 2) {
                return Err(CliError::Usage("--compare needs a 2x2 table".into()));
            }
            Some(check_theorem1(&t, &table_2x2(v)?)?)
        }
        None => None,
    };
    Ok(SeparationReport {
        table: t.counts().rows().into_iter().map(|r| r.to_vec()).collect(),
        closed_form,
        sep_bruteforce: sep,
        s_total_bruteforce: s_total,
        sep_norm_bruteforce: (s_total > 0).then(|| sep as f64 / s_total as f64),
        theorem1,
    })
}

fn parse_pvalues(bytes: &[u8]) -> Result<Vec<f64>, CliError> {
    let text = String::from_utf8_lossy(bytes);
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("not a p-value: {s:?}")))
        })
        .collect()
}

struct Sink {
    path: Option<PathBuf>,
}

impl Sink {
    fn open(&self) -> Result<Box<dyn Write>, CliError> {
        Ok(match &self.path {
            Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|source| CliError::Output {
                path: p.display().to_string(),
                source,
            })?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    fn emit<R: Report>(&self, report: &R, format: ReportFormat) -> Result<(), CliError> {
        emit_report(report, format, self.open()?)?;
        Ok(())
    }
}

/// Exit status 0 on success, 1 on runtime errors, 3 on a requested
/// unclusterable failure. Usage errors exit with 2 from clap.
fn run(cli: Cli) -> Result<ExitCode, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let sink = Sink { path: cli.out.clone() };
    let fmt = cli.output.unwrap_or(ReportFormat::Json);
    let verdict_code = |v: Verdict, flag: bool| {
        if flag && !v.is_clusterable() {
            ExitCode::from(3)
        } else {
            ExitCode::SUCCESS
        }
    };
    match cli.command {
        Command::Test {
            input,
            alpha,
            threshold,
            fail_if_unclusterable,
        } => {
            let ds = load(&input.input, &input.ingest)?;
            let opts = TestOptions {
                alpha,
                residual_threshold: threshold,
            };
            let report: ClusterabilityReport = testcat_report(&ds, &opts)?;
            let verdict = report.verdict;
            sink.emit(
                &Annotated {
                    input: Provenance::new(&input, &ds),
                    report,
                },
                fmt,
            )?;
            Ok(verdict_code(verdict, fail_if_unclusterable))
        }
        Command::Residuals { input, threshold } => {
            let ds = load(&input.input, &input.ingest)?;
            let report = residuals_report(&ds, threshold)?;
            sink.emit(
                &Annotated {
                    input: Provenance::new(&input, &ds),
                    report,
                },
                fmt,
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Randomize {
            input,
            seed,
            fraction,
            representative,
            pool_size,
            tolerance,
        } => {
            if cli.output == Some(ReportFormat::Json) {
                return Err(CliError::Usage("randomize only writes CSV".into()));
            }
            let ds = load(&input.input, &input.ingest)?;
            let out = if representative {
                let cfg = RandomizationConfig {
                    pool_size,
                    tolerance,
                    ..RandomizationConfig::new(seed)
                };
                let rep = representative_crds(&ds, &cfg)?;
                eprintln!(
                    "representative CRDS: attempt {}, p = {:e}, pool median = {:e}",
                    rep.attempt, rep.pvalue, rep.pool.median
                );
                rep.dataset
            } else if fraction >= 1.0 {
                generate_crds(&ds, seed)
            } else {
                partial_shuffle(&ds, fraction, seed)?
            };
            let w = sink.open()?;
            out.write_csv(w, input.ingest.header && !input.ingest.no_header)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Separation {
            input,
            table,
            compare,
        } => {
            let ds = match &input.input {
                Some(p) => Some(load(p, &input.ingest)?),
                None => None,
            };
            let report = separation_report(ds.as_ref(), table.as_deref(), compare.as_deref())?;
            sink.emit(&report, fmt)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Montecarlo {
            input,
            seed,
            replicates,
            alpha,
            fail_if_unclusterable,
        } => {
            let ds = load(&input.input, &input.ingest)?;
            let cfg = MonteCarloConfig { replicates, seed };
            let report = mc_testcat_pvalue(&ds, &cfg)?;
            let verdict = report.verdict(alpha);
            sink.emit(
                &Annotated {
                    input: Provenance::new(&input, &ds),
                    report: McOutput {
                        report,
                        alpha,
                        verdict,
                    },
                },
                fmt,
            )?;
            Ok(verdict_code(verdict, fail_if_unclusterable))
        }
        Command::Robustness {
            input,
            seed,
            fractions,
            repeats,
            alpha,
        } => {
            let ds = load(&input.input, &input.ingest)?;
            let fractions = fractions.unwrap_or_else(default_fractions);
            let curve = robustness_curve(&ds, &fractions, repeats, alpha, seed)?;
            sink.emit(&curve, fmt)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Uniformity {
            input,
            crds,
            seed,
            pvalues,
        } => {
            let ps = if pvalues {
                parse_pvalues(&read_input(&input.input)?)?
            } else {
                let ds = load(&input.input, &input.ingest)?;
                match (crds, seed) {
                    (Some(k), Some(seed)) => {
                        let mut all = Vec::new();
                        for i in 0..k {
                            let c = generate_crds(&ds, derive_seed(seed, &[tag::UNIFORMITY, i as u64]));
                            all.extend(per_pair_pvalues(&c)?);
                        }
                        all
                    }
                    _ => per_pair_pvalues(&ds)?,
                }
            };
            let ks: KsResult = uniformity_test(&ps)?;
            sink.emit(&ks, fmt)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate {
            input,
            seed,
            alpha,
            pool_size,
            tolerance,
            max_attempts,
            name,
        } => {
            let ds = load(&input.input, &input.ingest)?;
            let cfg = RandomizationConfig {
                pool_size,
                tolerance,
                max_attempts,
                ..RandomizationConfig::new(seed)
            };
            let name = name.unwrap_or_else(|| {
                input
                    .input
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "stdin".into())
            });
            let outcome = validate_dataset(&name, &ds, &cfg, alpha)?;
            sink.emit(&outcome, fmt)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Pool {
            input,
            seed,
            pool_size,
        } => {
            let ds = load(&input.input, &input.ingest)?;
            let stats = pvalue_pool(&ds, pool_size, seed)?;
            sink.emit(&stats, fmt)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
