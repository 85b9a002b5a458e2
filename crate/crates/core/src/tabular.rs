//! Columnar cohort tables with a typed schema and explicit missingness.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Numeric,
    Binary,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarDef {
    pub name: String,
    pub kind: VarKind,
}

/// Ordered variable declarations. The outcome is not part of the schema.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema(pub Vec<VarDef>);

impl Schema {
    pub fn new<S: Into<String>>(vars: impl IntoIterator<Item = (S, VarKind)>) -> Self {
        Schema(vars.into_iter().map(|(n, k)| VarDef { name: n.into(), kind: k }).collect())
    }

    pub fn kind_of(&self, name: &str) -> Option<VarKind> {
        self.0.iter().find(|v| v.name == name).map(|v| v.kind)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|v| v.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Cell storage. Binary columns use `Numeric` storage holding 0.0 / 1.0.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnValues {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: VarKind,
    pub values: ColumnValues,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Column { name: name.into(), kind: VarKind::Numeric, values: ColumnValues::Numeric(values) }
    }

    pub fn binary(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Column { name: name.into(), kind: VarKind::Binary, values: ColumnValues::Numeric(values) }
    }

    pub fn categorical(name: impl Into<String>, values: Vec<Option<String>>) -> Self {
        Column { name: name.into(), kind: VarKind::Categorical, values: ColumnValues::Categorical(values) }
    }

    pub fn len(&self) -> usize {
        match &self.values {
            ColumnValues::Numeric(v) => v.len(),
            ColumnValues::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, i: usize) -> bool {
        match &self.values {
            ColumnValues::Numeric(v) => v[i].is_none(),
            ColumnValues::Categorical(v) => v[i].is_none(),
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_missing(i)).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.missing_count() as f64 / self.len() as f64
        }
    }

    pub fn as_numeric(&self) -> Option<&[Option<f64>]> {
        match &self.values {
            ColumnValues::Numeric(v) => Some(v),
            ColumnValues::Categorical(_) => None,
        }
    }

    pub fn as_categorical(&self) -> Option<&[Option<String>]> {
        match &self.values {
            ColumnValues::Categorical(v) => Some(v),
            ColumnValues::Numeric(_) => None,
        }
    }

    /// Distinct observed categories in first-appearance order.
    pub fn categories(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        if let ColumnValues::Categorical(v) = &self.values {
            for s in v.iter().flatten() {
                if seen.insert(s.as_str()) {
                    out.push(s.clone());
                }
            }
        }
        out
    }

    pub fn select(&self, idx: &[usize]) -> Column {
        let values = match &self.values {
            ColumnValues::Numeric(v) => ColumnValues::Numeric(idx.iter().map(|&i| v[i]).collect()),
            ColumnValues::Categorical(v) => ColumnValues::Categorical(idx.iter().map(|&i| v[i].clone()).collect()),
        };
        Column { name: self.name.clone(), kind: self.kind, values }
    }

    /// Sets cells where `mask[i]` is true to missing.
    pub fn mask(&mut self, mask: &[bool]) {
        match &mut self.values {
            ColumnValues::Numeric(v) => v.iter_mut().zip(mask).filter(|(_, &m)| m).for_each(|(x, _)| *x = None),
            ColumnValues::Categorical(v) => v.iter_mut().zip(mask).filter(|(_, &m)| m).for_each(|(x, _)| *x = None),
        }
    }

    fn validate(&self) -> Result<()> {
        match (&self.values, self.kind) {
            (ColumnValues::Numeric(v), VarKind::Numeric) => {
                if let Some(i) = v.iter().position(|x| matches!(x, Some(x) if !x.is_finite())) {
                    return Err(Error::SchemaMismatch(format!("non-finite value in `{}` row {}", self.name, i)));
                }
            }
            (ColumnValues::Numeric(v), VarKind::Binary) => {
                if let Some(i) = v.iter().position(|x| matches!(x, Some(x) if *x != 0.0 && *x != 1.0)) {
                    return Err(Error::SchemaMismatch(format!("non-binary value in `{}` row {}", self.name, i)));
                }
            }
            (ColumnValues::Categorical(_), VarKind::Categorical) => {}
            _ => return Err(Error::SchemaMismatch(format!("storage does not match kind for `{}`", self.name))),
        }
        Ok(())
    }
}

/// A cohort: typed feature columns plus a complete binary outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortTable {
    columns: Vec<Column>,
    outcome: Vec<u8>,
    outcome_name: String,
    row_ids: Vec<String>,
}

impl CohortTable {
    pub fn new(columns: Vec<Column>, outcome: Vec<u8>, outcome_name: impl Into<String>, row_ids: Vec<String>) -> Result<Self> {
        let n = outcome.len();
        if row_ids.len() != n {
            return Err(Error::SchemaMismatch(format!("{} row ids for {} rows", row_ids.len(), n)));
        }
        if outcome.iter().any(|&y| y > 1) {
            return Err(Error::SchemaMismatch("outcome must be 0/1".into()));
        }
        let mut names = HashSet::new();
        for c in &columns {
            if c.len() != n {
                return Err(Error::SchemaMismatch(format!("column `{}` has {} rows, expected {}", c.name, c.len(), n)));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::SchemaMismatch(format!("duplicate column `{}`", c.name)));
            }
            c.validate()?;
        }
        Ok(CohortTable { columns, outcome, outcome_name: outcome_name.into(), row_ids })
    }

    pub fn n_rows(&self) -> usize {
        self.outcome.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn outcome(&self) -> &[u8] {
        &self.outcome
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn positives(&self) -> usize {
        self.outcome.iter().filter(|&&y| y == 1).count()
    }

    pub fn schema(&self) -> Schema {
        Schema(self.columns.iter().map(|c| VarDef { name: c.name.clone(), kind: c.kind }).collect())
    }

    pub fn select_rows(&self, idx: &[usize]) -> CohortTable {
        CohortTable {
            columns: self.columns.iter().map(|c| c.select(idx)).collect(),
            outcome: idx.iter().map(|&i| self.outcome[i]).collect(),
            outcome_name: self.outcome_name.clone(),
            row_ids: idx.iter().map(|&i| self.row_ids[i].clone()).collect(),
        }
    }

    pub fn with_columns(&self, columns: Vec<Column>) -> Result<CohortTable> {
        CohortTable::new(columns, self.outcome.clone(), self.outcome_name.clone(), self.row_ids.clone())
    }

    pub fn without_columns(&self, drop: &[String]) -> CohortTable {
        CohortTable {
            columns: self.columns.iter().filter(|c| !drop.contains(&c.name)).cloned().collect(),
            outcome: self.outcome.clone(),
            outcome_name: self.outcome_name.clone(),
            row_ids: self.row_ids.clone(),
        }
    }

    pub fn into_columns(self) -> Vec<Column> {
        self.columns
    }
}

/// Dense model input: no missing cells, named columns, labels and row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub x: Matrix,
    pub feature_names: Vec<String>,
    pub y: Vec<u8>,
    pub row_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn select_features(&self, names: &[String]) -> Result<FeatureMatrix> {
        let idx = names
            .iter()
            .map(|n| self.feature_index(n).ok_or_else(|| Error::UnknownFeature(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureMatrix {
            x: self.x.select_cols(&idx),
            feature_names: names.to_vec(),
            y: self.y.clone(),
            row_ids: self.row_ids.clone(),
        })
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            x: self.x.select_rows(idx),
            feature_names: self.feature_names.clone(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            row_ids: idx.iter().map(|&i| self.row_ids[i].clone()).collect(),
        }
    }
}

pub const ROW_ID_COLUMN: &str = "row_id";

fn parse_binary(s: &str) -> Option<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(1.0),
        "0" | "false" | "no" => Some(0.0),
        other => match other.parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => Some(v),
            _ => None,
        },
    }
}

fn parse_cell(kind: VarKind, raw: &str, column: &str, row: usize) -> Result<Option<CellValue>> {
    if raw.is_empty() {
        return Ok(None);
    }
    let bad = || Error::SchemaMismatch(format!("cannot read `{raw}` as {kind:?} in column `{column}` (data row {})", row + 1));
    Ok(Some(match kind {
        VarKind::Numeric => {
            let v: f64 = raw.trim().parse().map_err(|_| bad())?;
            if !v.is_finite() {
                return Err(bad());
            }
            CellValue::Num(v)
        }
        VarKind::Binary => CellValue::Num(parse_binary(raw).ok_or_else(bad)?),
        VarKind::Categorical => CellValue::Cat(raw.to_string()),
    }))
}

enum CellValue {
    Num(f64),
    Cat(String),
}

struct RawColumns {
    columns: Vec<Column>,
    row_ids: Vec<String>,
    outcome: Option<Vec<u8>>,
}

fn read_columns<R: Read>(reader: R, schema: &Schema, outcome_name: Option<&str>, outcome_required: bool) -> Result<RawColumns> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let pos: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();

    let mut col_pos = Vec::with_capacity(schema.len());
    for v in &schema.0 {
        let p = pos.get(v.name.as_str()).ok_or_else(|| Error::SchemaMismatch(format!("column `{}` absent from header", v.name)))?;
        col_pos.push(*p);
    }
    let outcome_pos = match outcome_name {
        Some(name) => match pos.get(name) {
            Some(p) => Some(*p),
            None if outcome_required => return Err(Error::OutcomeMissing { column: name.to_string(), row: None }),
            None => None,
        },
        None => None,
    };
    let id_pos = pos.get(ROW_ID_COLUMN).copied();
    let known: HashSet<usize> = col_pos.iter().copied().chain(outcome_pos).chain(id_pos).collect();
    for (i, h) in headers.iter().enumerate() {
        if !known.contains(&i) {
            log::info!("ignoring column `{h}` not declared in the schema");
        }
    }

    let mut num: Vec<Vec<Option<f64>>> = vec![Vec::new(); schema.len()];
    let mut cat: Vec<Vec<Option<String>>> = vec![Vec::new(); schema.len()];
    let mut row_ids = Vec::new();
    let mut outcome = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (j, v) in schema.0.iter().enumerate() {
            match parse_cell(v.kind, &rec[col_pos[j]], &v.name, r)? {
                None if v.kind == VarKind::Categorical => cat[j].push(None),
                None => num[j].push(None),
                Some(CellValue::Num(x)) => num[j].push(Some(x)),
                Some(CellValue::Cat(s)) => cat[j].push(Some(s)),
            }
        }
        if let Some(p) = outcome_pos {
            let name = outcome_name.unwrap_or_default();
            let raw = &rec[p];
            if raw.trim().is_empty() {
                return Err(Error::OutcomeMissing { column: name.to_string(), row: Some(r + 1) });
            }
            let y = parse_binary(raw)
                .ok_or_else(|| Error::SchemaMismatch(format!("outcome `{name}` has non-binary value `{raw}` (data row {})", r + 1)))?;
            outcome.push(y as u8);
        }
        row_ids.push(match id_pos {
            Some(p) => rec[p].to_string(),
            None => (r + 1).to_string(),
        });
    }
    if row_ids.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let columns = schema
        .0
        .iter()
        .enumerate()
        .map(|(j, v)| match v.kind {
            VarKind::Numeric => Column::numeric(&v.name, std::mem::take(&mut num[j])),
            VarKind::Binary => Column::binary(&v.name, std::mem::take(&mut num[j])),
            VarKind::Categorical => Column::categorical(&v.name, std::mem::take(&mut cat[j])),
        })
        .collect();
    Ok(RawColumns { columns, row_ids, outcome: outcome_pos.map(|_| outcome) })
}

/// Reads a labelled cohort. Columns not named in `schema` (other than the
/// outcome and an optional `row_id`) are ignored.
pub fn read_csv<R: Read>(reader: R, schema: &Schema, outcome_name: &str) -> Result<CohortTable> {
    let raw = read_columns(reader, schema, Some(outcome_name), true)?;
    CohortTable::new(raw.columns, raw.outcome.unwrap_or_default(), outcome_name, raw.row_ids)
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema, outcome_name: &str) -> Result<CohortTable> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(f), schema, outcome_name)
}

/// Reads feature columns only, for scoring. The outcome column may be absent.
pub fn load_unlabeled_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<(Vec<Column>, Vec<String>)> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let raw = read_columns(std::io::BufReader::new(f), schema, None, false)?;
    for c in &raw.columns {
        c.validate()?;
    }
    Ok((raw.columns, raw.row_ids))
}

pub fn write_csv<W: Write>(table: &CohortTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![ROW_ID_COLUMN.to_string()];
    header.extend(table.columns.iter().map(|c| c.name.clone()));
    header.push(table.outcome_name.clone());
    w.write_record(&header)?;
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..table.n_rows() {
        rec.clear();
        rec.push(table.row_ids[i].clone());
        for c in &table.columns {
            rec.push(match &c.values {
                ColumnValues::Numeric(v) => match (v[i], c.kind) {
                    (None, _) => String::new(),
                    (Some(x), VarKind::Binary) => format!("{}", x as u8),
                    (Some(x), _) => format!("{x}"),
                },
                ColumnValues::Categorical(v) => v[i].clone().unwrap_or_default(),
            });
        }
        rec.push(table.outcome[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(table: &CohortTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(table, std::io::BufWriter::new(f))
}

/// Seeded split preserving the outcome ratio: each class contributes
/// `round(test_fraction * class_size)` rows (at least one, at most all but
/// one) to the test partition. Both partitions keep the input row order.
pub fn split_stratified(t: &CohortTable, test_fraction: f64, seed: u64) -> Result<(CohortTable, CohortTable)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("test_fraction {test_fraction} not in (0, 1)")));
    }
    let mut rng = seed::rng(seed);
    let mut is_test = vec![false; t.n_rows()];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..t.n_rows()).filter(|&i| t.outcome[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::DegenerateClass { class, count: idx.len(), needed: 2 });
        }
        idx.shuffle(&mut rng);
        let k = ((test_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..k] {
            is_test[i] = true;
        }
    }
    let train: Vec<usize> = (0..t.n_rows()).filter(|&i| !is_test[i]).collect();
    let test: Vec<usize> = (0..t.n_rows()).filter(|&i| is_test[i]).collect();
    Ok((t.select_rows(&train), t.select_rows(&test)))
}
