//! Two-way contingency tables and the per-pair chi-squared machinery.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::CategoricalDataset;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContingencyError {
    #[error("attribute pair ({0}, {0}) is not a pair of distinct attributes")]
    SameAttribute(usize),
    #[error("attribute index {index} out of range for {count} attributes")]
    AttributeOutOfRange { index: usize, count: usize },
    #[error("table of shape {rows}x{cols} has a single category on one side")]
    Degenerate { rows: usize, cols: usize },
    #[error("counts do not fill a {rows}x{cols} table")]
    Shape { rows: usize, cols: usize },
    #[error("table has zero grand total")]
    EmptyTable,
}

pub type Result<T> = std::result::Result<T, ContingencyError>;

/// Observed co-occurrence counts for one attribute pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Array2<u64>,
    row_marginals: Vec<u64>,
    col_marginals: Vec<u64>,
    grand_total: u64,
    attr_a: usize,
    attr_b: usize,
}

impl ContingencyTable {
    /// Table from explicit counts, row-major. Zero marginals are permitted
    /// here (hand-written tables), unlike tables built from a data set.
    pub fn from_counts(rows: usize, cols: usize, counts: Vec<u64>) -> Result<Self> {
        if rows == 0 || cols == 0 || counts.len() != rows * cols {
            return Err(ContingencyError::Shape { rows, cols });
        }
        let counts = Array2::from_shape_vec((rows, cols), counts)
            .map_err(|_| ContingencyError::Shape { rows, cols })?;
        Ok(Self::with_marginals(counts, 0, 1))
    }

    /// Convenience for literal tables: `from_rows(&[[20, 5], [20, 55]])`.
    pub fn from_rows<const C: usize>(rows: &[[u64; C]]) -> Result<Self> {
        let flat = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_counts(rows.len(), C, flat)
    }

    fn with_marginals(counts: Array2<u64>, attr_a: usize, attr_b: usize) -> Self {
        let row_marginals: Vec<u64> = counts.rows().into_iter().map(|r| r.sum()).collect();
        let col_marginals: Vec<u64> = counts.columns().into_iter().map(|c| c.sum()).collect();
        let grand_total = row_marginals.iter().sum();
        ContingencyTable {
            counts,
            row_marginals,
            col_marginals,
            grand_total,
            attr_a,
            attr_b,
        }
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[[i, j]]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.counts.dim()
    }

    pub fn row_marginals(&self) -> &[u64] {
        &self.row_marginals
    }

    pub fn col_marginals(&self) -> &[u64] {
        &self.col_marginals
    }

    pub fn grand_total(&self) -> u64 {
        self.grand_total
    }

    pub fn attributes(&self) -> (usize, usize) {
        (self.attr_a, self.attr_b)
    }

    pub fn cell_count(&self) -> usize {
        self.counts.len()
    }

    pub fn transposed(&self) -> Self {
        Self::with_marginals(self.counts.t().to_owned(), self.attr_b, self.attr_a)
    }

    /// (Q_a - 1)(Q_b - 1).
    pub fn degrees_of_freedom(&self) -> u64 {
        let (r, c) = self.shape();
        ((r - 1) * (c - 1)) as u64
    }

    pub fn is_degenerate(&self) -> bool {
        let (r, c) = self.shape();
        r < 2 || c < 2
    }
}

/// Cross-tabulates attributes `a` (rows) and `b` (columns).
pub fn build_table(ds: &CategoricalDataset, a: usize, b: usize) -> Result<ContingencyTable> {
    let m = ds.n_attributes();
    for index in [a, b] {
        if index >= m {
            return Err(ContingencyError::AttributeOutOfRange { index, count: m });
        }
    }
    if a == b {
        return Err(ContingencyError::SameAttribute(a));
    }
    let qa = ds.dictionary(a).len();
    let qb = ds.dictionary(b).len();
    let mut counts = Array2::<u64>::zeros((qa, qb));
    for (&i, &j) in ds.column(a).iter().zip(ds.column(b)) {
        counts[[i as usize, j as usize]] += 1;
    }
    Ok(ContingencyTable::with_marginals(counts, a, b))
}

/// E_ij = O_i. * O_.j / O_..
pub fn expected_frequencies(t: &ContingencyTable) -> Result<Array2<f64>> {
    if t.grand_total == 0 {
        return Err(ContingencyError::EmptyTable);
    }
    let n = t.grand_total as f64;
    Ok(Array2::from_shape_fn(t.shape(), |(i, j)| {
        // integer product first: exact below 2^53, keeps E scale-exact
        (t.row_marginals[i] * t.col_marginals[j]) as f64 / n
    }))
}

/// Pearson statistic and its degrees of freedom for one table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquared {
    pub statistic: f64,
    pub df: u64,
}

/// Pearson chi-squared without continuity correction. Single-category sides
/// give `(0, 0)`; cells with zero expectation (only possible in hand-made
/// tables with empty margins) contribute nothing.
pub fn chi_squared(t: &ContingencyTable) -> ChiSquared {
    if t.is_degenerate() || t.grand_total == 0 {
        return ChiSquared {
            statistic: 0.0,
            df: 0,
        };
    }
    let n = t.grand_total as f64;
    let mut statistic = 0.0;
    for ((i, j), &o) in t.counts.indexed_iter() {
        let e = (t.row_marginals[i] * t.col_marginals[j]) as f64 / n;
        if e > 0.0 {
            let d = o as f64 - e;
            statistic += d * d / e;
        }
    }
    ChiSquared {
        statistic,
        df: t.degrees_of_freedom(),
    }
}

/// Adjusted standardized residuals, one per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualMatrix {
    pub values: Array2<f64>,
}

impl ResidualMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }
}

/// sr_ij = (O_ij - E_ij) / sqrt(E_ij (1 - O_i./O..) (1 - O_.j/O..)).
pub fn standardized_residuals(t: &ContingencyTable) -> Result<ResidualMatrix> {
    let (rows, cols) = t.shape();
    if t.is_degenerate() {
        return Err(ContingencyError::Degenerate { rows, cols });
    }
    let expected = expected_frequencies(t)?;
    let n = t.grand_total as f64;
    let values = Array2::from_shape_fn((rows, cols), |(i, j)| {
        let e = expected[[i, j]];
        let row_share = t.row_marginals[i] as f64 / n;
        let col_share = t.col_marginals[j] as f64 / n;
        (t.counts[[i, j]] as f64 - e) / (e * (1.0 - row_share) * (1.0 - col_share)).sqrt()
    });
    Ok(ResidualMatrix { values })
}

/// Cells with strong positive (`sr > threshold`) and negative
/// (`sr < -threshold`) association.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StrongCells {
    pub positive: usize,
    pub negative: usize,
}

impl StrongCells {
    pub fn total(&self) -> usize {
        self.positive + self.negative
    }
}

pub const DEFAULT_RESIDUAL_THRESHOLD: f64 = 2.0;

pub fn count_strong_cells(r: &ResidualMatrix, threshold: f64) -> StrongCells {
    let mut out = StrongCells::default();
    for &v in &r.values {
        if v > threshold {
            out.positive += 1;
        } else if v < -threshold {
            out.negative += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::CategoricalDataset;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ds1() -> ContingencyTable {
        ContingencyTable::from_rows(&[[20, 5], [20, 55]]).unwrap()
    }

    fn ds2() -> ContingencyTable {
        ContingencyTable::from_rows(&[[15, 10], [25, 50]]).unwrap()
    }

    fn ds3() -> ContingencyTable {
        ContingencyTable::from_rows(&[[10, 15], [30, 45]]).unwrap()
    }

    /// Expands a table into a two-attribute data set, one row per object.
    fn expand(t: &ContingencyTable) -> CategoricalDataset {
        let mut rows = Vec::new();
        for ((i, j), &c) in t.counts().indexed_iter() {
            for _ in 0..c {
                rows.push(vec![format!("a{i}"), format!("b{j}")]);
            }
        }
        CategoricalDataset::from_rows(vec!["A".into(), "B".into()], &rows).unwrap()
    }

    #[test]
    fn builds_worked_example_table() {
        let ds = expand(&ds1());
        let t = build_table(&ds, 0, 1).unwrap();
        assert_eq!(t.counts(), ds1().counts());
        assert_eq!(t.row_marginals(), [25, 75]);
        assert_eq!(t.col_marginals(), [40, 60]);
        assert_eq!(t.grand_total(), 100);
    }

    #[test]
    fn single_object_table() {
        let ds = CategoricalDataset::from_rows(vec!["a".into(), "b".into()], &[vec!["x", "y"]])
            .unwrap();
        let t = build_table(&ds, 0, 1).unwrap();
        assert_eq!(t.counts().as_slice().unwrap(), &[1]);
        assert_eq!(chi_squared(&t), ChiSquared { statistic: 0.0, df: 0 });
    }

    #[test]
    fn build_table_rejects_bad_pairs() {
        let ds = expand(&ds1());
        assert_eq!(build_table(&ds, 1, 1), Err(ContingencyError::SameAttribute(1)));
        assert!(matches!(
            build_table(&ds, 0, 2),
            Err(ContingencyError::AttributeOutOfRange { index: 2, .. })
        ));
    }

    #[test]
    fn build_table_matches_enumeration() {
        let rows = [
            ["p", "x", "1"],
            ["q", "x", "2"],
            ["p", "y", "2"],
            ["r", "y", "1"],
            ["p", "x", "1"],
            ["q", "z", "2"],
            ["r", "x", "1"],
            ["p", "z", "2"],
            ["q", "y", "1"],
            ["p", "x", "2"],
        ];
        let ds = CategoricalDataset::from_rows(
            vec!["u".into(), "v".into(), "w".into()],
            &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        )
        .unwrap();
        for a in 0..3 {
            for b in 0..3 {
                if a == b {
                    continue;
                }
                let t = build_table(&ds, a, b).unwrap();
                for (i, li) in ds.dictionary(a).iter().enumerate() {
                    for (j, lj) in ds.dictionary(b).iter().enumerate() {
                        let tally = rows
                            .iter()
                            .filter(|r| r[a] == li.as_str() && r[b] == lj.as_str())
                            .count() as u64;
                        assert_eq!(t.count(i, j), tally);
                    }
                }
            }
        }
    }

    #[test]
    fn expected_frequencies_examples() {
        let e = expected_frequencies(&ds1()).unwrap();
        assert_eq!(e.as_slice().unwrap(), &[10.0, 15.0, 30.0, 45.0]);
        let e3 = expected_frequencies(&ds3()).unwrap();
        let o3 = ds3().counts().mapv(|c| c as f64);
        assert_eq!(e3, o3);
    }

    #[test]
    fn worked_example_statistics() {
        let c1 = chi_squared(&ds1());
        assert_relative_eq!(c1.statistic, 200.0 / 9.0, max_relative = 1e-14);
        assert_eq!(c1.df, 1);
        let c2 = chi_squared(&ds2());
        assert_relative_eq!(c2.statistic, 50.0 / 9.0, max_relative = 1e-14);
        assert_eq!(chi_squared(&ds3()), ChiSquared { statistic: 0.0, df: 1 });
        let uniform = ContingencyTable::from_counts(3, 4, vec![7; 12]).unwrap();
        assert_eq!(chi_squared(&uniform), ChiSquared { statistic: 0.0, df: 6 });
    }

    #[test]
    fn residual_examples() {
        let r3 = standardized_residuals(&ds3()).unwrap();
        assert!(r3.values.iter().all(|&v| v == 0.0));
        assert_eq!(count_strong_cells(&r3, 2.0), StrongCells::default());

        let r1 = standardized_residuals(&ds1()).unwrap();
        let direct = 10.0 / (10.0f64 * 0.75 * 0.6).sqrt();
        assert_relative_eq!(r1.get(0, 0), direct, max_relative = 1e-14);
        assert_relative_eq!(direct, 4.714_045_207_910_317, max_relative = 1e-12);
        for &v in &r1.values {
            assert_relative_eq!(v.abs(), direct, max_relative = 1e-12);
        }
        assert_eq!(
            count_strong_cells(&r1, 2.0),
            StrongCells {
                positive: 2,
                negative: 2
            }
        );
    }

    #[test]
    fn strong_cell_threshold_is_strict() {
        let r = ResidualMatrix {
            values: Array2::from_shape_vec((2, 2), vec![2.0, -2.0, -2.0, 2.0]).unwrap(),
        };
        assert_eq!(count_strong_cells(&r, 2.0), StrongCells::default());
    }

    #[test]
    fn residuals_reject_degenerate() {
        let t = ContingencyTable::from_counts(1, 3, vec![1, 2, 3]).unwrap();
        assert_eq!(
            standardized_residuals(&t),
            Err(ContingencyError::Degenerate { rows: 1, cols: 3 })
        );
        assert_eq!(chi_squared(&t), ChiSquared { statistic: 0.0, df: 0 });
    }

    fn table_strategy() -> impl Strategy<Value = ContingencyTable> {
        (2usize..5, 2usize..5)
            .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(1u64..30, r * c)))
            .prop_map(|(r, c, v)| ContingencyTable::from_counts(r, c, v).unwrap())
    }

    proptest! {
        #[test]
        fn chi_squared_invariant_under_permutation_and_transpose(
            t in table_strategy(),
            seed in any::<u64>(),
        ) {
            let base = chi_squared(&t).statistic;
            let tt = chi_squared(&t.transposed());
            prop_assert!((tt.statistic - base).abs() <= 1e-9 * base.max(1.0));
            prop_assert_eq!(tt.df, t.degrees_of_freedom());

            let (r, c) = t.shape();
            let row_perm: Vec<usize> = (0..r).map(|i| (i + seed as usize) % r).collect();
            let col_perm: Vec<usize> = (0..c).rev().collect();
            let permuted = Array2::from_shape_fn((r, c), |(i, j)| t.count(row_perm[i], col_perm[j]));
            let p = ContingencyTable::from_counts(r, c, permuted.into_raw_vec_and_offset().0).unwrap();
            prop_assert!((chi_squared(&p).statistic - base).abs() <= 1e-9 * base.max(1.0));
        }

        #[test]
        fn expected_preserves_marginals(t in table_strategy()) {
            let e = expected_frequencies(&t).unwrap();
            for (i, row) in e.rows().into_iter().enumerate() {
                prop_assert!((row.sum() - t.row_marginals()[i] as f64).abs() < 1e-9);
            }
            for (j, col) in e.columns().into_iter().enumerate() {
                prop_assert!((col.sum() - t.col_marginals()[j] as f64).abs() < 1e-9);
            }
        }

        #[test]
        fn statistic_zero_iff_independent(t in table_strategy()) {
            let stat = chi_squared(&t).statistic;
            prop_assert!(stat >= 0.0);
            let e = expected_frequencies(&t).unwrap();
            let exact = t.counts().iter().zip(e.iter()).all(|(&o, &e)| o as f64 == e);
            prop_assert_eq!(stat == 0.0, exact);
        }

        #[test]
        fn two_by_two_residual_identity(v in prop::collection::vec(1u64..200, 4)) {
            let t = ContingencyTable::from_counts(2, 2, v.clone()).unwrap();
            let chi = chi_squared(&t).statistic;
            let r = standardized_residuals(&t).unwrap();
            for &s in &r.values {
                prop_assert!((s * s - chi).abs() <= 1e-9 * chi.max(1e-300) || chi == 0.0 && s == 0.0);
            }
            let (a, b, c, d) = (v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64);
            let n = a + b + c + d;
            let closed = n * (a * d - b * c).powi(2) / ((a + b) * (c + d) * (a + c) * (b + d));
            prop_assert!((closed - chi).abs() <= 1e-9 * chi.max(1e-12));
        }
    }
}
