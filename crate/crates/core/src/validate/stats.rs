//! Correlation and agreement statistics.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("series lengths differ ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("{n} points; at least {min} needed")]
    TooFewPoints { n: usize, min: usize },
    #[error("constant series: correlation is undefined")]
    ConstantSeries,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("contingency table is empty or ragged")]
    MalformedTable,
    #[error("contingency table needs at least 2 rows and 2 columns (k = {k})")]
    TooFewCategories { k: usize },
    #[error("{axis} {index} has a zero margin, so an expected count is 0")]
    DegenerateMargin { axis: &'static str, index: usize },
    #[error("all annotations fall in one category: expected disagreement is 0")]
    NoExpectedDisagreement,
    #[error("invalid weights")]
    InvalidWeights,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn population_std(xs: &[f64]) -> f64 {
    // the mean of repeated 0.7s is not exactly 0.7
    if xs.iter().all(|x| *x == xs[0]) {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewPoints { n: x.len(), min: 2 });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let constant = |s: &[f64]| s.iter().all(|v| *v == s[0]);
    if constant(x) || constant(y) {
        return Err(StatsError::ConstantSeries);
    }
    Ok(())
}

/// Sample Pearson correlation coefficient.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation with non-negative observation weights.
pub fn weighted_pearson_r(x: &[f64], y: &[f64], w: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    if w.len() != x.len() || w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
        return Err(StatsError::InvalidWeights);
    }
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, w)| a * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(b, w)| b * w).sum::<f64>() / sw;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for ((a, b), w) in x.iter().zip(y).zip(w) {
        sxy += w * (a - mx) * (b - my);
        sxx += w * (a - mx).powi(2);
        syy += w * (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Rows by columns of non-negative counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self, StatsError> {
        let cols = counts.first().map_or(0, Vec::len);
        if cols == 0 || counts.iter().any(|r| r.len() != cols) {
            return Err(StatsError::MalformedTable);
        }
        Ok(ContingencyTable { counts })
    }

    /// Cross-tabulates `(row, column)` observations. Row and column labels
    /// are sorted.
    pub fn from_pairs<R: Ord + Clone, C: Ord + Clone>(
        pairs: impl IntoIterator<Item = (R, C)>,
    ) -> Result<Self, StatsError> {
        let mut cells: BTreeMap<(R, C), u64> = BTreeMap::new();
        let mut rows = BTreeMap::new();
        let mut cols = BTreeMap::new();
        for (r, c) in pairs {
            rows.insert(r.clone(), ());
            cols.insert(c.clone(), ());
            *cells.entry((r, c)).or_insert(0) += 1;
        }
        let counts = rows
            .keys()
            .map(|r| {
                cols.keys()
                    .map(|c| cells.get(&(r.clone(), c.clone())).copied().unwrap_or(0))
                    .collect()
            })
            .collect();
        Self::new(counts)
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn rows(&self) -> usize {
        self.counts.len()
    }

    pub fn cols(&self) -> usize {
        self.counts[0].len()
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn k(&self) -> usize {
        self.rows().min(self.cols())
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.cols())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// Drops all-zero columns.
    pub fn without_empty_columns(&self) -> Option<Self> {
        let keep: Vec<usize> = self
            .col_sums()
            .iter()
            .enumerate()
            .filter(|(_, s)| **s > 0)
            .map(|(j, _)| j)
            .collect();
        if keep.is_empty() {
            return None;
        }
        Some(ContingencyTable {
            counts: self
                .counts
                .iter()
                .map(|r| keep.iter().map(|&j| r[j]).collect())
                .collect(),
        })
    }

    /// Pearson chi-squared statistic, no continuity correction.
    pub fn chi_squared(&self) -> Result<f64, StatsError> {
        let rows = self.row_sums();
        let cols = self.col_sums();
        if let Some(i) = rows.iter().position(|s| *s == 0) {
            return Err(StatsError::DegenerateMargin { axis: "row", index: i });
        }
        if let Some(j) = cols.iter().position(|s| *s == 0) {
            return Err(StatsError::DegenerateMargin {
                axis: "column",
                index: j,
            });
        }
        let n = self.n() as f64;
        let mut chi2 = 0.0;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &obs) in row.iter().enumerate() {
                let expected = rows[i] as f64 * cols[j] as f64 / n;
                chi2 += (obs as f64 - expected).powi(2) / expected;
            }
        }
        Ok(chi2)
    }
}

/// Cramér's V = sqrt(chi2 / (n (k - 1))), k = min(rows, cols).
pub fn cramers_v(table: &ContingencyTable) -> Result<f64, StatsError> {
    let k = table.k();
    if k < 2 {
        return Err(StatsError::TooFewCategories { k });
    }
    let chi2 = table.chi_squared()?;
    let n = table.n() as f64;
    Ok((chi2 / (n * (k as f64 - 1.0))).sqrt().min(1.0))
}

/// Two-coder Krippendorff's alpha for nominal labels:
/// `1 - Do/De`, `Do = (1/N) sum delta(a, b)`, `De = sum_{c1 != c2} p(c1) p(c2)`
/// with `p(c) = n_c / 2N`.
pub fn krippendorff_alpha<T: Ord>(pairs: &[(T, T)]) -> Result<f64, StatsError> {
    if pairs.is_empty() {
        return Err(StatsError::TooFewPoints { n: 0, min: 1 });
    }
    let n_items = pairs.len() as f64;
    let disagreements = pairs.iter().filter(|(a, b)| a != b).count() as f64;
    let d_o = disagreements / n_items;

    let mut counts: BTreeMap<&T, u64> = BTreeMap::new();
    for (a, b) in pairs {
        *counts.entry(a).or_insert(0) += 1;
        *counts.entry(b).or_insert(0) += 1;
    }
    let p: Vec<f64> = counts.values().map(|&c| c as f64 / (2.0 * n_items)).collect();
    let mut d_e = 0.0;
    for (i, pi) in p.iter().enumerate() {
        for (j, pj) in p.iter().enumerate() {
            if i != j {
                d_e += pi * pj;
            }
        }
    }
    if d_e == 0.0 {
        return Err(StatsError::NoExpectedDisagreement);
    }
    Ok(1.0 - d_o / d_e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rows: &[&[u64]]) -> ContingencyTable {
        ContingencyTable::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson_r(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson_r(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
        let r = pearson_r(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert_eq!(
            pearson_r(&[1.0, 2.0], &[1.0]),
            Err(StatsError::LengthMismatch { x: 2, y: 1 })
        );
        assert_eq!(pearson_r(&[1.0, 1.0], &[1.0, 2.0]), Err(StatsError::ConstantSeries));
        assert_eq!(
            pearson_r(&[1.0], &[1.0]),
            Err(StatsError::TooFewPoints { n: 1, min: 2 })
        );
    }

    #[test]
    fn weighted_pearson_matches_unweighted_with_equal_weights() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 1.0, 4.0, 3.0, 5.0];
        let r = weighted_pearson_r(&x, &y, &[3.0; 5]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        // a zero weight removes the point
        let r = weighted_pearson_r(&[1.0, 2.0, 3.0, 9.0], &[1.0, 2.0, 3.0, -50.0], &[1.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert_eq!(weighted_pearson_r(&x, &y, &[1.0; 4]), Err(StatsError::InvalidWeights));
    }

    #[test]
    fn cramers_examples() {
        assert_eq!(cramers_v(&table(&[&[5, 5], &[5, 5]])).unwrap(), 0.0);
        assert!((cramers_v(&table(&[&[10, 0], &[0, 10]])).unwrap() - 1.0).abs() < 1e-12);
        assert!((cramers_v(&table(&[&[6, 4], &[4, 6]])).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(
            cramers_v(&table(&[&[3, 0], &[4, 0]])),
            Err(StatsError::DegenerateMargin {
                axis: "column",
                index: 1
            })
        );
        assert_eq!(
            cramers_v(&table(&[&[3, 4]])),
            Err(StatsError::TooFewCategories { k: 1 })
        );
        assert!(ContingencyTable::new(vec![vec![1, 2], vec![3]]).is_err());
    }

    #[test]
    fn table_from_pairs() {
        let t = ContingencyTable::from_pairs([("v1", 1), ("v1", 0), ("v2", 1), ("v2", 1)]).unwrap();
        assert_eq!(t.counts(), &[vec![1, 1], vec![0, 2]]);
        let t = ContingencyTable::new(vec![vec![1, 0, 2], vec![3, 0, 1]]).unwrap();
        assert_eq!(t.without_empty_columns().unwrap().counts(), &[vec![1, 2], vec![3, 1]]);
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(krippendorff_alpha(&[(1, 1), (2, 2), (3, 3)]).unwrap(), 1.0);
        assert!((krippendorff_alpha(&[(1, 1), (1, 2), (2, 2)]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((krippendorff_alpha(&[(1, 2), (2, 1)]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(
            krippendorff_alpha(&[(1, 1), (1, 1)]),
            Err(StatsError::NoExpectedDisagreement)
        );
        assert!(krippendorff_alpha::<u8>(&[]).is_err());
    }

    #[test]
    fn population_std_of_constant_is_zero() {
        assert_eq!(population_std(&[4.0, 4.0, 4.0]), 0.0);
        assert_eq!(population_std(&[0.7; 10]), 0.0);
        assert_eq!(population_std(&[1.0, 3.0]), 1.0);
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(
            x in proptest::collection::vec(-100.0f64..100.0, 3..30),
            a in prop_oneof![0.1f64..10.0, -10.0f64..-0.1],
            b in -50.0f64..50.0,
        ) {
            prop_assume!(x.iter().any(|v| *v != x[0]));
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assume!(y.iter().any(|v| *v != y[0]));
            let r = pearson_r(&x, &y).unwrap();
            prop_assert!((r - a.signum()).abs() < 1e-9);
        }

        #[test]
        fn pearson_bounded(pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..40)) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let Ok(r) = pearson_r(&x, &y) {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }

        #[test]
        fn alpha_is_one_iff_no_disagreement(pairs in proptest::collection::vec((0u8..3, 0u8..3), 1..8)) {
            if let Ok(alpha) = krippendorff_alpha(&pairs) {
                let perfect = pairs.iter().all(|(a, b)| a == b);
                prop_assert_eq!(alpha == 1.0, perfect);
                prop_assert!(alpha <= 1.0);
            }
        }

        #[test]
        fn cramers_bounded_and_invariant(
            cells in proptest::collection::vec(proptest::collection::vec(0u64..20, 3), 2..4),
            m in 1u64..6,
        ) {
            let t = ContingencyTable::new(cells.clone()).unwrap();
            if let Ok(v) = cramers_v(&t) {
                prop_assert!((0.0..=1.0).contains(&v));
                let scaled = ContingencyTable::new(cells.iter().map(|r| r.iter().map(|c| c * m).collect()).collect()).unwrap();
                prop_assert!((cramers_v(&scaled).unwrap() - v).abs() < 1e-12);
                let mut flipped = cells.clone();
                flipped.reverse();
                for r in flipped.iter_mut() { r.reverse(); }
                prop_assert!((cramers_v(&ContingencyTable::new(flipped).unwrap()).unwrap() - v).abs() < 1e-12);
            }
        }
    }
}
