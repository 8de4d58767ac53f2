//! Categorical data sets and UCI-style CSV ingestion.
//!
//! Values are stored column-major as indices into a per-attribute dictionary.
//! Dictionaries hold only observed labels, sorted lexicographically, so the
//! encoding does not depend on row order.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("input contains no data rows")]
    Empty,
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: u64,
        expected: usize,
        found: usize,
    },
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("unknown column {0:?} in drop list")]
    UnknownColumn(String),
    #[error("every column was dropped")]
    NoAttributes,
    #[error("invalid delimiter {0:?}")]
    InvalidDelimiter(char),
    #[error("attribute {attr}: code {code} out of range for {categories} categories")]
    CodeOutOfRange {
        attr: usize,
        code: u32,
        categories: usize,
    },
    #[error("attribute {attr}: category {label:?} never occurs")]
    UnusedCategory { attr: usize, label: String },
    #[error("columns have unequal lengths")]
    ShapeMismatch,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// How rows containing the missing-value token are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// The token is kept as an ordinary category label.
    #[default]
    OwnCategory,
    /// Any row containing the token is discarded.
    DropRow,
}

impl fmt::Display for MissingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MissingPolicy::OwnCategory => f.write_str("own-category"),
            MissingPolicy::DropRow => f.write_str("drop-row"),
        }
    }
}

impl FromStr for MissingPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "own-category" => Ok(MissingPolicy::OwnCategory),
            "drop-row" => Ok(MissingPolicy::DropRow),
            other => Err(format!(
                "unknown missing policy {other:?} (expected own-category or drop-row)"
            )),
        }
    }
}

/// A column reference in a drop list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnSelector {
    Index(usize),
    Name(String),
}

impl FromStr for ColumnSelector {
    type Err = std::convert::Infallible;

    /// Bare non-negative integers are read as 0-based indices, anything else
    /// as a header name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let s = s.trim();
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnSelector::Index(i),
            Err(_) => ColumnSelector::Name(s.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub delimiter: char,
    pub has_header: bool,
    pub missing_token: String,
    pub missing_policy: MissingPolicy,
    pub drop_columns: Vec<ColumnSelector>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            delimiter: ',',
            has_header: false,
            missing_token: "?".to_string(),
            missing_policy: MissingPolicy::OwnCategory,
            drop_columns: Vec::new(),
        }
    }
}

impl IngestOptions {
    pub fn with_header(mut self, has_header: bool) -> Self {
        self.has_header = has_header;
        self
    }

    pub fn with_drop(mut self, columns: impl IntoIterator<Item = ColumnSelector>) -> Self {
        self.drop_columns = columns.into_iter().collect();
        self
    }

    pub fn with_missing_policy(mut self, policy: MissingPolicy) -> Self {
        self.missing_policy = policy;
        self
    }

    fn delimiter_byte(&self) -> Result<u8> {
        let c = self.delimiter;
        if !c.is_ascii() || matches!(c, '"' | '\n' | '\r') {
            return Err(DatasetError::InvalidDelimiter(c));
        }
        Ok(c as u8)
    }
}

/// N objects by M categorical attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalDataset {
    attribute_names: Vec<String>,
    dictionaries: Vec<Vec<String>>,
    columns: Vec<Vec<u32>>,
    n_objects: usize,
}

impl CategoricalDataset {
    /// Encodes string rows. Dictionaries are built from the observed values.
    pub fn from_rows<S: AsRef<str>>(attribute_names: Vec<String>, rows: &[Vec<S>]) -> Result<Self> {
        let m = attribute_names.len();
        if m == 0 {
            return Err(DatasetError::NoAttributes);
        }
        if rows.is_empty() {
            return Err(DatasetError::Empty);
        }
        check_unique(&attribute_names)?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(DatasetError::RaggedRow {
                    row: i as u64 + 1,
                    expected: m,
                    found: row.len(),
                });
            }
        }
        let mut dictionaries = Vec::with_capacity(m);
        let mut columns = Vec::with_capacity(m);
        for attr in 0..m {
            let mut index: BTreeMap<&str, u32> = BTreeMap::new();
            for row in rows {
                index.entry(row[attr].as_ref()).or_insert(0);
            }
            for (code, slot) in index.values_mut().enumerate() {
                *slot = code as u32;
            }
            let column = rows.iter().map(|row| index[row[attr].as_ref()]).collect();
            dictionaries.push(index.keys().map(|s| s.to_string()).collect());
            columns.push(column);
        }
        Ok(CategoricalDataset {
            attribute_names,
            dictionaries,
            columns,
            n_objects: rows.len(),
        })
    }

    /// Builds from pre-encoded columns, validating every invariant.
    pub fn from_columns(
        attribute_names: Vec<String>,
        dictionaries: Vec<Vec<String>>,
        columns: Vec<Vec<u32>>,
    ) -> Result<Self> {
        if attribute_names.is_empty() {
            return Err(DatasetError::NoAttributes);
        }
        if dictionaries.len() != attribute_names.len() || columns.len() != attribute_names.len() {
            return Err(DatasetError::ShapeMismatch);
        }
        check_unique(&attribute_names)?;
        let n = columns[0].len();
        if n == 0 {
            return Err(DatasetError::Empty);
        }
        for (attr, (dict, col)) in dictionaries.iter().zip(&columns).enumerate() {
            if col.len() != n {
                return Err(DatasetError::ShapeMismatch);
            }
            let mut seen = vec![false; dict.len()];
            for &code in col {
                let slot = seen.get_mut(code as usize).ok_or(DatasetError::CodeOutOfRange {
                    attr,
                    code,
                    categories: dict.len(),
                })?;
                *slot = true;
            }
            if let Some(unused) = seen.iter().position(|s| !s) {
                return Err(DatasetError::UnusedCategory {
                    attr,
                    label: dict[unused].clone(),
                });
            }
        }
        Ok(CategoricalDataset {
            attribute_names,
            dictionaries,
            columns,
            n_objects: n,
        })
    }

    /// Same dictionaries and names with replacement columns. Callers guarantee
    /// each column is a rearrangement of the original one.
    pub(crate) fn with_permuted_columns(&self, columns: Vec<Vec<u32>>) -> Self {
        debug_assert_eq!(columns.len(), self.columns.len());
        debug_assert!(columns.iter().all(|c| c.len() == self.n_objects));
        CategoricalDataset {
            attribute_names: self.attribute_names.clone(),
            dictionaries: self.dictionaries.clone(),
            columns,
            n_objects: self.n_objects,
        }
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn n_attributes(&self) -> usize {
        self.columns.len()
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn dictionary(&self, attr: usize) -> &[String] {
        &self.dictionaries[attr]
    }

    pub fn dictionaries(&self) -> &[Vec<String>] {
        &self.dictionaries
    }

    /// Encoded values of one attribute, one per object.
    pub fn column(&self, attr: usize) -> &[u32] {
        &self.columns[attr]
    }

    pub fn columns(&self) -> &[Vec<u32>] {
        &self.columns
    }

    pub fn cell(&self, row: usize, attr: usize) -> u32 {
        self.columns[attr][row]
    }

    pub fn row(&self, row: usize) -> Vec<u32> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    /// Number of categories per attribute, (Q_1, ..., Q_M).
    pub fn category_counts(&self) -> Vec<usize> {
        self.dictionaries.iter().map(Vec::len).collect()
    }

    /// Keeps only the listed attributes, in the given order.
    pub fn select_attributes(&self, attrs: &[usize]) -> Result<Self> {
        let names = attrs.iter().map(|&a| self.attribute_names[a].clone()).collect();
        let dicts = attrs.iter().map(|&a| self.dictionaries[a].clone()).collect();
        let cols = attrs.iter().map(|&a| self.columns[a].clone()).collect();
        CategoricalDataset::from_columns(names, dicts, cols)
    }

    /// Writes the decoded data as CSV.
    pub fn write_csv<W: Write>(&self, sink: W, header: bool) -> Result<()> {
        let mut writer = csv::WriterBuilder::new().from_writer(sink);
        if header {
            writer.write_record(&self.attribute_names)?;
        }
        for row in 0..self.n_objects {
            writer.write_record(
                self.columns
                    .iter()
                    .zip(&self.dictionaries)
                    .map(|(col, dict)| dict[col[row] as usize].as_str()),
            )?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn check_unique(names: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for name in names {
        if !seen.insert(name.as_str()) {
            return Err(DatasetError::DuplicateColumn(name.clone()));
        }
    }
    Ok(())
}

/// Reads a delimited text file into a data set.
///
/// Fields are trimmed, blank lines skipped. Without a header, attributes are
/// named by their 0-based column index in the source file.
pub fn load_csv<R: Read>(source: R, options: &IngestOptions) -> Result<CategoricalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter_byte()?)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let mut header: Option<Vec<String>> = None;
    let mut width: Option<usize> = None;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let fields: Vec<String> = record.iter().map(str::to_string).collect();
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(DatasetError::RaggedRow {
                    row: line,
                    expected: w,
                    found: fields.len(),
                })
            }
            Some(_) => {}
        }
        if options.has_header && header.is_none() {
            header = Some(fields);
            continue;
        }
        if options.missing_policy == MissingPolicy::DropRow
            && fields.iter().any(|f| *f == options.missing_token)
        {
            continue;
        }
        rows.push(fields);
    }

    let width = width.ok_or(DatasetError::Empty)?;
    let names = header.unwrap_or_else(|| (0..width).map(|i| i.to_string()).collect());
    check_unique(&names)?;
    if rows.is_empty() {
        return Err(DatasetError::Empty);
    }

    let mut dropped = vec![false; width];
    for sel in &options.drop_columns {
        let idx = match sel {
            ColumnSelector::Index(i) if *i < width => *i,
            ColumnSelector::Index(i) => return Err(DatasetError::UnknownColumn(i.to_string())),
            ColumnSelector::Name(n) => names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| DatasetError::UnknownColumn(n.clone()))?,
        };
        dropped[idx] = true;
    }
    let keep: Vec<usize> = (0..width).filter(|&i| !dropped[i]).collect();
    if keep.is_empty() {
        return Err(DatasetError::NoAttributes);
    }
    let kept_names = keep.iter().map(|&i| names[i].clone()).collect();
    let kept_rows: Vec<Vec<&str>> = rows
        .iter()
        .map(|r| keep.iter().map(|&i| r[i].as_str()).collect())
        .collect();
    CategoricalDataset::from_rows(kept_names, &kept_rows)
}
