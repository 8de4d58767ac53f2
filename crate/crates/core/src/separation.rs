//! Separation of the value-pair clustering of a two-attribute data set.
//!
//! Each non-empty cell `(A = a_i, B = b_j)` of a contingency table is one
//! cluster. `Sep` sums the Hamming distances over all object pairs that sit
//! in different clusters and `S_total` counts those pairs. For 2×2 tables
//! both have closed forms in the counts; for any other shape only the
//! enumeration in [`separation_bruteforce`] is provided.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contingency::{chi_squared, ContingencyTable};
use crate::dataset::CategoricalDataset;

#[derive(Debug, Error, PartialEq)]
pub enum SeparationError {
    #[error("expected a 2x2 table, got {rows}x{cols}")]
    NotTwoByTwo { rows: usize, cols: usize },
    #[error("separation is undefined when all objects share one cluster")]
    Undefined,
    #[error("lambda* needs all marginals positive")]
    ZeroMarginal,
    #[error("tables have different marginals")]
    MarginalMismatch,
    #[error("brute-force separation needs exactly 2 attributes, got {0}")]
    NotTwoAttributes(usize),
}

pub type Result<T> = std::result::Result<T, SeparationError>;

struct Cells {
    c11: i128,
    c12: i128,
    c21: i128,
    c22: i128,
}

impl Cells {
    fn of(t: &ContingencyTable) -> Result<Self> {
        let (rows, cols) = t.shape();
        if (rows, cols) != (2, 2) {
            return Err(SeparationError::NotTwoByTwo { rows, cols });
        }
        let c = |i, j| t.count(i, j) as i128;
        Ok(Cells {
            c11: c(0, 0),
            c12: c(0, 1),
            c21: c(1, 0),
            c22: c(1, 1),
        })
    }
    fn n(&self) -> i128 {
        self.c11 + self.c12 + self.c21 + self.c22
    }
    fn row1(&self) -> i128 {
        self.c11 + self.c12
    }
    fn row2(&self) -> i128 {
        self.c21 + self.c22
    }
    fn col1(&self) -> i128 {
        self.c11 + self.c21
    }
    fn col2(&self) -> i128 {
        self.c12 + self.c22
    }
    fn sep(&self) -> i128 {
        let (n, r1, c2) = (self.n(), self.row1(), self.col2());
        (n - r1 - c2) * (r1 + c2) + 2 * r1 * c2
    }
    fn s_total(&self) -> i128 {
        self.sep() - (self.c12 * self.c21 + self.c11 * self.c22)
    }
    /// 4λ, kept integral.
    fn lambda_x4(&self) -> i128 {
        2 * self.row1() + self.col1() - self.col2()
    }
    /// C··C11 − C1·C·1, which equals C11C22 − C12C21.
    fn association(&self) -> i128 {
        self.n() * self.c11 - self.row1() * self.col1()
    }
}

/// Sum of inter-cluster Hamming distances (closed form).
pub fn sep_2x2(t: &ContingencyTable) -> Result<u64> {
    Ok(Cells::of(t)?.sep() as u64)
}

/// Number of inter-cluster object pairs (closed form).
pub fn s_total_2x2(t: &ContingencyTable) -> Result<u64> {
    Ok(Cells::of(t)?.s_total() as u64)
}

pub fn sep_norm(t: &ContingencyTable) -> Result<f64> {
    let c = Cells::of(t)?;
    let s_total = c.s_total();
    if s_total == 0 {
        return Err(SeparationError::Undefined);
    }
    Ok(c.sep() as f64 / s_total as f64)
}

/// Vertex of the quadratic that drives `Sep_norm`: above it, `Sep_norm`
/// grows with C11.
pub fn lambda_threshold(t: &ContingencyTable) -> Result<f64> {
    Ok(Cells::of(t)?.lambda_x4() as f64 / 4.0)
}

/// The chi-squared value at `C11 = λ`.
pub fn lambda_star(t: &ContingencyTable) -> Result<f64> {
    let c = Cells::of(t)?;
    let denom = c.row1() * c.col1() * c.col2() * c.row2();
    if denom == 0 {
        return Err(SeparationError::ZeroMarginal);
    }
    let n = c.n() as f64;
    let lambda = c.lambda_x4() as f64 / 4.0;
    let gap = n * lambda - (c.row1() * c.col1()) as f64;
    Ok(n / denom as f64 * gap * gap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationSummary {
    pub sep: u64,
    pub s_total: u64,
    pub sep_norm: Option<f64>,
    pub lambda: f64,
    pub lambda_star: Option<f64>,
    pub chi2: f64,
}

impl SeparationSummary {
    pub fn of(t: &ContingencyTable) -> Result<Self> {
        let c = Cells::of(t)?;
        Ok(SeparationSummary {
            sep: c.sep() as u64,
            s_total: c.s_total() as u64,
            sep_norm: sep_norm(t).ok(),
            lambda: c.lambda_x4() as f64 / 4.0,
            lambda_star: lambda_star(t).ok(),
            chi2: chi_squared(t).statistic,
        })
    }
}

/// `(Sep, S_total)` by enumerating every object pair. Works for any number
/// of categories on either attribute.
pub fn separation_bruteforce(ds: &CategoricalDataset) -> Result<(u64, u64)> {
    if ds.n_attributes() != 2 {
        return Err(SeparationError::NotTwoAttributes(ds.n_attributes()));
    }
    let (a, b) = (ds.column(0), ds.column(1));
    let mut sep = 0u64;
    let mut pairs = 0u64;
    for i in 0..ds.n_objects() {
        for j in i + 1..ds.n_objects() {
            let d = u64::from(a[i] != a[j]) + u64::from(b[i] != b[j]);
            if d > 0 {
                sep += d;
                pairs += 1;
            }
        }
    }
    Ok((sep, pairs))
}

pub fn sep_norm_bruteforce(ds: &CategoricalDataset) -> Result<f64> {
    let (sep, pairs) = separation_bruteforce(ds)?;
    if pairs == 0 {
        return Err(SeparationError::Undefined);
    }
    Ok(sep as f64 / pairs as f64)
}

/// Expands a table into one object per counted cell entry.
pub fn table_to_dataset(t: &ContingencyTable) -> Option<CategoricalDataset> {
    let (r, c) = t.shape();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..r {
        for j in 0..c {
            for _ in 0..t.count(i, j) {
                a.push(format!("a{i}"));
                b.push(format!("b{j}"));
            }
        }
    }
    let rows: Vec<Vec<String>> = a.into_iter().zip(b).map(|(x, y)| vec![x, y]).collect();
    CategoricalDataset::from_rows(vec!["A".into(), "B".into()], &rows).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PremiseFailure {
    /// C11 ≤ E11 in at least one table.
    NotPositivelyAssociated,
    /// χ²(t1) > χ²(t2) does not hold.
    NotOrdered,
    /// χ²(t2) > λ* does not hold.
    BelowLambdaStar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "reason")]
pub enum Theorem1Outcome {
    PremiseNotMet(PremiseFailure),
    ConclusionHolds,
    ConclusionFails,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Check {
    pub chi2_1: f64,
    pub chi2_2: f64,
    pub lambda_star: f64,
    pub sep_norm_1: f64,
    pub sep_norm_2: f64,
    pub outcome: Theorem1Outcome,
}

/// Checks whether `χ²(t1) > χ²(t2) > λ*` implies `Sep_norm(t1) > Sep_norm(t2)`
/// for two tables with the same marginals.
///
/// The premise also requires `C11 > E11` in both tables, so that cell 1,1 is
/// the positively associated one. Every comparison is made on exact integers.
pub fn check_theorem1(t1: &ContingencyTable, t2: &ContingencyTable) -> Result<Theorem1Check> {
    let (c1, c2) = (Cells::of(t1)?, Cells::of(t2)?);
    if t1.row_marginals() != t2.row_marginals() || t1.col_marginals() != t2.col_marginals() {
        return Err(SeparationError::MarginalMismatch);
    }
    let lambda_star = lambda_star(t1)?;
    let (s1, s2) = (c1.s_total(), c2.s_total());
    if s1 == 0 || s2 == 0 {
        return Err(SeparationError::Undefined);
    }
    let (d1, d2) = (c1.association(), c2.association());
    // chi2 = C_DS · d², with C_DS shared, and λ* = C_DS · ((4·C··λ − 4·C1·C·1)/4)²
    let star_x4 = c1.n() * c1.lambda_x4() - 4 * c1.row1() * c1.col1();
    let outcome = if d1 <= 0 || d2 <= 0 {
        Theorem1Outcome::PremiseNotMet(PremiseFailure::NotPositivelyAssociated)
    } else if d1 * d1 <= d2 * d2 {
        Theorem1Outcome::PremiseNotMet(PremiseFailure::NotOrdered)
    } else if 16 * d2 * d2 <= star_x4 * star_x4 {
        Theorem1Outcome::PremiseNotMet(PremiseFailure::BelowLambdaStar)
    } else if s1 < s2 {
        // Sep depends only on the marginals, so the ratio grows as S_total shrinks
        Theorem1Outcome::ConclusionHolds
    } else {
        Theorem1Outcome::ConclusionFails
    };
    Ok(Theorem1Check {
        chi2_1: chi_squared(t1).statistic,
        chi2_2: chi_squared(t2).statistic,
        lambda_star,
        sep_norm_1: c1.sep() as f64 / s1 as f64,
        sep_norm_2: c2.sep() as f64 / s2 as f64,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn t(c: [[u64; 2]; 2]) -> ContingencyTable {
        ContingencyTable::from_rows(&c).unwrap()
    }

    const DS1: [[u64; 2]; 2] = [[20, 5], [20, 55]];
    const DS2: [[u64; 2]; 2] = [[15, 10], [25, 50]];
    const DS3: [[u64; 2]; 2] = [[10, 15], [30, 45]];

    /// Sep and S_total from cluster sizes, without the closed form.
    fn cell_oracle(t: &ContingencyTable) -> (u64, u64) {
        let cells: Vec<(usize, usize, u64)> = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, t.count(i, j)))
            .collect();
        let (mut sep, mut pairs) = (0, 0);
        for (k, &(i, j, n)) in cells.iter().enumerate() {
            for &(p, q, m) in &cells[k + 1..] {
                let d = u64::from(i != p) + u64::from(j != q);
                sep += d * n * m;
                pairs += n * m;
            }
        }
        (sep, pairs)
    }

    #[test]
    fn worked_example_values() {
        for (c, s_total, norm) in [(DS1, 3075, 1.39), (DS2, 3275, 1.31), (DS3, 3375, 1.27)] {
            let tab = t(c);
            assert_eq!(sep_2x2(&tab).unwrap(), 4275);
            assert_eq!(s_total_2x2(&tab).unwrap(), s_total);
            assert_eq!(cell_oracle(&tab), (4275, s_total));
            assert_abs_diff_eq!(sep_norm(&tab).unwrap(), norm, epsilon = 0.005);
            assert_eq!(lambda_threshold(&tab).unwrap(), 7.5);
            assert_abs_diff_eq!(lambda_star(&tab).unwrap(), 100.0 / 4.5e6 * 250.0 * 250.0, epsilon = 1e-12);
        }
        let ds = table_to_dataset(&t(DS1)).unwrap();
        assert_abs_diff_eq!(sep_norm_bruteforce(&ds).unwrap(), 4275.0 / 3075.0, epsilon = 1e-15);
    }

    #[test]
    fn small_tables() {
        let diag = t([[1, 0], [0, 1]]);
        assert_eq!(sep_2x2(&diag).unwrap(), 2);
        assert_eq!(s_total_2x2(&diag).unwrap(), 1);
        let single = t([[1, 0], [0, 0]]);
        assert_eq!(s_total_2x2(&single).unwrap(), 0);
        assert_eq!(sep_norm(&single), Err(SeparationError::Undefined));
        let one_row = t([[3, 4], [0, 0]]);
        assert_eq!(
            (sep_2x2(&one_row).unwrap(), s_total_2x2(&one_row).unwrap()),
            cell_oracle(&one_row)
        );
        assert_eq!(lambda_star(&one_row), Err(SeparationError::ZeroMarginal));
    }

    #[test]
    fn lambda_formula_cases() {
        // all marginals n: (2n + n - n)/4 = n/2
        assert_eq!(lambda_threshold(&t([[3, 2], [2, 3]])).unwrap(), 2.5);
        // C1· = C·2 = 5, C·1 = 6: λ = (C1· + C·1)/4
        let tab = t([[2, 3], [4, 2]]);
        assert_eq!(lambda_threshold(&tab).unwrap(), (5.0 + 6.0) / 4.0);
    }

    #[test]
    fn lambda_star_zero_at_expected_crossing() {
        // C··λ = C1·C·1 with λ = (2·4 + 4 − 4)/4 = 2 and C·· = 8, C1·C·1 = 16
        assert_eq!(lambda_star(&t([[2, 2], [2, 2]])).unwrap(), 0.0);
    }

    #[test]
    fn lambda_star_under_scaling() {
        let base = t(DS1);
        let scaled = t([[60, 15], [60, 165]]);
        let (n, r1, c1, c2, r2) = (300.0, 75.0, 120.0, 180.0, 225.0);
        let lambda = (2.0 * r1 + c1 - c2) / 4.0;
        let direct = n / (r1 * c1 * c2 * r2) * (n * lambda - r1 * c1) * (n * lambda - r1 * c1);
        assert_abs_diff_eq!(lambda_star(&scaled).unwrap(), direct, epsilon = 1e-12);
        assert!((lambda_star(&scaled).unwrap() / lambda_star(&base).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn non_2x2_rejected() {
        let tab = ContingencyTable::from_rows(&[[1, 2, 3], [4, 5, 6]]).unwrap();
        assert_eq!(sep_2x2(&tab), Err(SeparationError::NotTwoByTwo { rows: 2, cols: 3 }));
    }

    #[test]
    fn bruteforce_general_shapes() {
        let diag = ContingencyTable::from_rows(&[[1, 0, 0], [0, 1, 0], [0, 0, 1]]).unwrap();
        let ds = table_to_dataset(&diag).unwrap();
        assert_eq!(sep_norm_bruteforce(&ds).unwrap(), 2.0);
        let one = CategoricalDataset::from_rows(vec!["a".into(), "b".into()], &[vec!["x", "y"], vec!["x", "y"]])
            .unwrap();
        assert_eq!(sep_norm_bruteforce(&one), Err(SeparationError::Undefined));
        let three =
            CategoricalDataset::from_rows(vec!["a".into(), "b".into(), "c".into()], &[vec!["x", "y", "z"]])
                .unwrap();
        assert_eq!(sep_norm_bruteforce(&three), Err(SeparationError::NotTwoAttributes(3)));
    }

    #[test]
    fn theorem1_worked_example() {
        let check = check_theorem1(&t(DS1), &t(DS2)).unwrap();
        assert_eq!(check.outcome, Theorem1Outcome::ConclusionHolds);
        assert!(check.chi2_1 > check.chi2_2 && check.chi2_2 > check.lambda_star);
        assert!(check.sep_norm_1 > check.sep_norm_2);
        let same = check_theorem1(&t(DS1), &t(DS1)).unwrap();
        assert_eq!(same.outcome, Theorem1Outcome::PremiseNotMet(PremiseFailure::NotOrdered));
        assert_eq!(
            check_theorem1(&t(DS1), &t([[1, 1], [1, 1]])),
            Err(SeparationError::MarginalMismatch)
        );
        let independent = check_theorem1(&t(DS1), &t(DS3)).unwrap();
        assert_eq!(
            independent.outcome,
            Theorem1Outcome::PremiseNotMet(PremiseFailure::NotPositivelyAssociated)
        );
    }

    #[test]
    fn exhaustive_closed_form_vs_enumeration() {
        for n in 0..=20u64 {
            for a in 0..=n {
                for b in 0..=n - a {
                    for c in 0..=n - a - b {
                        let tab = t([[a, b], [c, n - a - b - c]]);
                        let closed = (sep_2x2(&tab).unwrap(), s_total_2x2(&tab).unwrap());
                        assert_eq!(closed, cell_oracle(&tab), "{tab:?}");
                        if n > 0 {
                            let ds = table_to_dataset(&tab).unwrap();
                            assert_eq!(separation_bruteforce(&ds).unwrap(), closed, "{tab:?}");
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn lemma1_sep_norm_monotone_above_lambda(r1 in 1u64..30, c1 in 1u64..30, extra in 0u64..30) {
            let n = r1.max(c1) + extra + 1;
            let lo = (r1 + c1).saturating_sub(n);
            let hi = r1.min(c1);
            let mut prev: Option<f64> = None;
            for c11 in lo..=hi {
                let tab = t([[c11, r1 - c11], [c1 - c11, n + c11 - r1 - c1]]);
                let lambda = lambda_threshold(&tab).unwrap();
                if (c11 as f64) < lambda.ceil() {
                    continue;
                }
                if let Ok(v) = sep_norm(&tab) {
                    if let Some(p) = prev {
                        prop_assert!(v >= p);
                    }
                    prev = Some(v);
                }
            }
        }

        #[test]
        fn lemma2_chi2_increasing_above_expected(r1 in 1u64..30, c1 in 1u64..30, extra in 1u64..30) {
            let n = r1.max(c1) + extra;
            let e11 = (r1 * c1) as f64 / n as f64;
            let lo = (r1 + c1).saturating_sub(n);
            let mut prev: Option<f64> = None;
            for c11 in lo..=r1.min(c1) {
                if (c11 as f64) <= e11 {
                    continue;
                }
                let tab = t([[c11, r1 - c11], [c1 - c11, n + c11 - r1 - c1]]);
                let x = chi_squared(&tab).statistic;
                if let Some(p) = prev {
                    prop_assert!(x > p);
                }
                prev = Some(x);
            }
        }
    }
}
