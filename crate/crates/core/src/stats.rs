//! Group comparison tests and the baseline-characteristics table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{chi_square_sf, normal_quantile, student_t_two_sided};
use crate::tabular::{CohortTable, Column, ColumnValues, VarKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    TWelch,
    TPooled,
    ChiSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TVariant {
    #[default]
    Welch,
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTestResult {
    pub variable: String,
    pub statistic: f64,
    pub p_value: f64,
    pub test: TestKind,
    pub dof: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Independent-samples t test. The statistic is `(mean(a) − mean(b)) / se`.
pub fn t_test(a: &[f64], b: &[f64], variant: TVariant) -> Result<GroupTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::DegenerateSample(format!("group sizes {} and {}", a.len(), b.len())));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if va == 0.0 && vb == 0.0 {
        return Err(Error::DegenerateSample("both groups have zero variance".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (se, dof, test) = match variant {
        TVariant::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let dof = (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
            ((qa + qb).sqrt(), dof, TestKind::TWelch)
        }
        TVariant::Pooled => {
            let dof = na + nb - 2.0;
            let sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / dof;
            ((sp2 * (1.0 / na + 1.0 / nb)).sqrt(), dof, TestKind::TPooled)
        }
    };
    let statistic = (ma - mb) / se;
    Ok(GroupTestResult { variable: String::new(), statistic, p_value: student_t_two_sided(statistic, dof), test, dof })
}

/// Pearson χ² test of independence on an r×c count table. Yates' continuity
/// correction applies only to 2×2 tables.
pub fn chi_square(table: &[Vec<f64>], yates: bool) -> Result<GroupTestResult> {
    let r = table.len();
    let c = table.first().map_or(0, Vec::len);
    if r < 2 || c < 2 || table.iter().any(|row| row.len() != c) {
        return Err(Error::DegenerateTable(format!("need a rectangular table of at least 2×2, got {r}×{c}")));
    }
    if table.iter().flatten().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::DegenerateTable("negative or non-finite count".into()));
    }
    let row_sums: Vec<f64> = table.iter().map(|row| row.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..c).map(|j| table.iter().map(|row| row[j]).sum()).collect();
    if row_sums.iter().chain(&col_sums).any(|&s| s <= 0.0) {
        return Err(Error::DegenerateTable("zero marginal".into()));
    }
    let total: f64 = row_sums.iter().sum();
    let correction = if yates && r == 2 && c == 2 { 0.5 } else { 0.0 };
    let mut stat = 0.0;
    for i in 0..r {
        for j in 0..c {
            let e = row_sums[i] * col_sums[j] / total;
            let d = ((table[i][j] - e).abs() - correction).max(0.0);
            stat += d * d / e;
        }
    }
    let dof = ((r - 1) * (c - 1)) as f64;
    Ok(GroupTestResult { variable: String::new(), statistic: stat, p_value: chi_square_sf(stat, dof), test: TestKind::ChiSquare, dof })
}

/// A deterministic sample of size `n` whose sample mean and sample standard
/// deviation (n − 1 denominator) equal `mean` and `sd` exactly up to rounding.
/// Used to run the t test against published summary moments.
pub fn summary_equivalent_sample(n: usize, mean: f64, sd: f64) -> Vec<f64> {
    assert!(n >= 2, "need at least two points");
    let z: Vec<f64> = (0..n).map(|i| normal_quantile((i as f64 + 0.5) / n as f64)).collect();
    let (m, v) = mean_var(&z);
    let s = v.sqrt();
    z.iter().map(|zi| mean + sd * (zi - m) / s).collect()
}

/// One cell pair of the baseline table for one data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCells {
    pub yes: String,
    pub no: String,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
}

impl GroupCells {
    fn blank() -> Self {
        GroupCells { yes: String::new(), no: String::new(), statistic: None, p_value: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub variable: String,
    pub level: String,
    pub train: GroupCells,
    pub test: GroupCells,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineTable {
    pub rows: Vec<BaselineRow>,
    pub t_variant: TVariant,
    pub yates: bool,
}

const NA: &str = "n/a";

fn fmt_stat(v: Option<f64>, has_test: bool) -> String {
    match v {
        Some(v) => format!("{v:.3}"),
        None if has_test => NA.into(),
        None => String::new(),
    }
}

fn fmt_p(p: Option<f64>, has_test: bool) -> String {
    match p {
        Some(p) if p < 0.001 => "<0.001".into(),
        Some(p) => format!("{p:.3}"),
        None if has_test => NA.into(),
        None => String::new(),
    }
}

impl BaselineTable {
    pub const TSV_HEADER: [&'static str; 10] =
        ["variable", "level", "train_yes", "train_no", "train_stat", "train_p", "test_yes", "test_no", "test_stat", "test_p"];

    fn cells(&self) -> Vec<[String; 10]> {
        self.rows
            .iter()
            .map(|r| {
                let head = r.level.is_empty();
                [
                    r.variable.clone(),
                    r.level.clone(),
                    r.train.yes.clone(),
                    r.train.no.clone(),
                    fmt_stat(r.train.statistic, head),
                    fmt_p(r.train.p_value, head),
                    r.test.yes.clone(),
                    r.test.no.clone(),
                    fmt_stat(r.test.statistic, head),
                    fmt_p(r.test.p_value, head),
                ]
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = Self::TSV_HEADER.join("\t");
        out.push('\n');
        for row in self.cells() {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut rows = vec![Self::TSV_HEADER.map(String::from)];
        rows.extend(self.cells());
        let widths: Vec<usize> = (0..10).map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (k, r) in rows.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (cell, w))| if j < 2 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if k == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * 9));
            }
        }
        out
    }
}

fn split_numeric(col: &Column, y: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let mut yes = Vec::new();
    let mut no = Vec::new();
    if let ColumnValues::Numeric(v) = &col.values {
        for (x, &yi) in v.iter().zip(y) {
            if let Some(x) = x {
                if yi == 1 {
                    yes.push(*x)
                } else {
                    no.push(*x)
                }
            }
        }
    }
    (yes, no)
}

fn level_labels(col: &Column, train: &CohortTable, test: &CohortTable) -> Vec<String> {
    match col.kind {
        VarKind::Binary => vec!["Yes".into(), "No".into()],
        _ => {
            let mut levels = col.categories();
            if let Some(tc) = test.column(&col.name) {
                for c in tc.categories() {
                    if !levels.contains(&c) {
                        levels.push(c);
                    }
                }
            }
            let _ = train;
            levels
        }
    }
}

/// Counts per (level, group). Binary levels are ordered Yes, No.
fn level_counts(col: &Column, levels: &[String], y: &[u8]) -> Vec<[f64; 2]> {
    let mut counts = vec![[0.0; 2]; levels.len()];
    match &col.values {
        ColumnValues::Numeric(v) => {
            for (x, &yi) in v.iter().zip(y) {
                if let Some(x) = x {
                    let li = if *x == 1.0 { 0 } else { 1 };
                    counts[li][usize::from(yi == 0)] += 1.0;
                }
            }
        }
        ColumnValues::Categorical(v) => {
            for (x, &yi) in v.iter().zip(y) {
                if let Some(li) = x.as_ref().and_then(|s| levels.iter().position(|l| l == s)) {
                    counts[li][usize::from(yi == 0)] += 1.0;
                }
            }
        }
    }
    counts
}

fn numeric_cells(col: Option<&Column>, y: &[u8], variant: TVariant) -> GroupCells {
    let Some(col) = col else { return na_cells() };
    let (yes, no) = split_numeric(col, y);
    let summary = |x: &[f64]| {
        if x.len() < 2 {
            NA.to_string()
        } else {
            let (m, v) = mean_var(x);
            format!("{m:.1}±{:.1}", v.sqrt())
        }
    };
    let test = t_test(&yes, &no, variant).ok();
    GroupCells { yes: summary(&yes), no: summary(&no), statistic: test.as_ref().map(|t| t.statistic), p_value: test.map(|t| t.p_value) }
}

fn na_cells() -> GroupCells {
    GroupCells { yes: NA.into(), no: NA.into(), statistic: None, p_value: None }
}

fn count_cells(counts: &[[f64; 2]], li: usize) -> GroupCells {
    let tot_yes: f64 = counts.iter().map(|c| c[0]).sum();
    let tot_no: f64 = counts.iter().map(|c| c[1]).sum();
    let pct = |c: f64, t: f64| if t > 0.0 { format!("{} ({:.1})", c as u64, 100.0 * c / t) } else { NA.into() };
    GroupCells { yes: pct(counts[li][0], tot_yes), no: pct(counts[li][1], tot_no), statistic: None, p_value: None }
}

fn chi_cells(counts: &[[f64; 2]], yates: bool) -> GroupCells {
    // Levels absent from this set are dropped before testing.
    let table: Vec<Vec<f64>> = counts.iter().filter(|c| c[0] + c[1] > 0.0).map(|c| c.to_vec()).collect();
    let test = chi_square(&table, yates).ok();
    GroupCells { statistic: test.as_ref().map(|t| t.statistic), p_value: test.map(|t| t.p_value), ..GroupCells::blank() }
}

/// Per-variable comparison of outcome groups in both partitions. Test
/// failures mark the affected cells `n/a` instead of aborting.
pub fn baseline_table(train: &CohortTable, test: &CohortTable, variant: TVariant, yates: bool) -> Result<BaselineTable> {
    if train.schema() != test.schema() {
        return Err(Error::SchemaMismatch("training and testing tables have different schemas".into()));
    }
    let mut rows = Vec::new();
    for col in train.columns() {
        let test_col = test.column(&col.name);
        match col.kind {
            VarKind::Numeric => rows.push(BaselineRow {
                variable: col.name.clone(),
                level: String::new(),
                train: numeric_cells(Some(col), train.outcome(), variant),
                test: numeric_cells(test_col, test.outcome(), variant),
            }),
            VarKind::Binary | VarKind::Categorical => {
                let levels = level_labels(col, train, test);
                let tr = level_counts(col, &levels, train.outcome());
                let te = test_col.map(|c| level_counts(c, &levels, test.outcome())).unwrap_or_else(|| vec![[0.0; 2]; levels.len()]);
                rows.push(BaselineRow {
                    variable: col.name.clone(),
                    level: String::new(),
                    train: chi_cells(&tr, yates),
                    test: chi_cells(&te, yates),
                });
                for (li, level) in levels.iter().enumerate() {
                    rows.push(BaselineRow {
                        variable: col.name.clone(),
                        level: level.clone(),
                        train: count_cells(&tr, li),
                        test: count_cells(&te, li),
                    });
                }
            }
        }
    }
    Ok(BaselineTable { rows, t_variant: variant, yates })
}
