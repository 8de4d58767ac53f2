#![allow(dead_code)]

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use testcat::dataset::{load_csv, CategoricalDataset, ColumnSelector, IngestOptions};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/uci")
}

/// How a bundled file is read: header flag and the columns that are not
/// attributes (identifiers and class labels).
pub struct Source {
    pub file: &'static str,
    pub header: bool,
    pub drop: &'static [&'static str],
    /// Also remove attributes that take a single value.
    pub drop_constant: bool,
}

pub const ZOO: Source = Source { file: "zoo.csv", header: true, drop: &["animal_name", "type"], drop_constant: false };
pub const LENSES: Source = Source { file: "lenses.csv", header: true, drop: &["id", "class"], drop_constant: false };
pub const BALANCE: Source = Source { file: "balance_scale.csv", header: true, drop: &["class"], drop_constant: false };
pub const CAR: Source = Source { file: "car_evaluation.csv", header: true, drop: &[], drop_constant: false };
/// The original headerless file: name, hobby, age, education, marital status, class.
pub const HAYES_ROTH: Source = Source { file: "hayes_roth.csv", header: false, drop: &["0", "5"], drop_constant: false };
/// The original headerless file: 35 attributes then the class label.
pub const SOYBEAN_SMALL: Source = Source { file: "soybean_small.csv", header: false, drop: &["35"], drop_constant: true };
/// The original headerless file: 33 clinical/histopathological attributes, age, class.
pub const DERMATOLOGY: Source = Source { file: "dermatology.csv", header: false, drop: &["33", "34"], drop_constant: false };

/// `Err` carries a reason when the file is absent or unreadable.
pub fn load(src: &Source) -> Result<CategoricalDataset, String> {
    let path = data_dir().join(src.file);
    let file = File::open(&path).map_err(|e| format!("{} not available ({e})", src.file))?;
    let opts = IngestOptions::default()
        .with_header(src.header)
        .with_drop(src.drop.iter().map(|s| s.parse::<ColumnSelector>().unwrap()));
    let ds = load_csv(file, &opts).map_err(|e| format!("{}: {e}", src.file))?;
    if !src.drop_constant {
        return Ok(ds);
    }
    let keep: Vec<usize> = (0..ds.n_attributes()).filter(|&a| ds.dictionary(a).len() > 1).collect();
    ds.select_attributes(&keep).map_err(|e| e.to_string())
}

/// One result line per criterion, written past the test harness's output
/// capture so it always appears in the log.
pub fn report(id: u32, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance {id}] {verdict} {title}: {detail}");
}
