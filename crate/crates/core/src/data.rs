//! Observation matrices with an explicit missing-entry mask, and their CSV form.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::util::fmt_num;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    Real,
    /// Categorical with `K` levels, values in `0..K`.
    Categorical(usize),
}

impl FromStr for ColumnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "real" {
            return Ok(ColumnKind::Real);
        }
        if let Some(k) = s.strip_prefix("cat:") {
            let k: usize = k
                .parse()
                .map_err(|_| Error::Argument(format!("bad category count in schema entry '{s}'")))?;
            if k < 2 {
                return Err(Error::Argument(format!("categorical columns need K >= 2, got '{s}'")));
            }
            return Ok(ColumnKind::Categorical(k));
        }
        Err(Error::Argument(format!(
            "unknown column type '{s}' (expected 'real' or 'cat:K')"
        )))
    }
}

impl std::fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnKind::Real => write!(f, "real"),
            ColumnKind::Categorical(k) => write!(f, "cat:{k}"),
        }
    }
}

/// `n × D` observations. Categorical cells hold their level as an integral `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    names: Vec<String>,
    kinds: Vec<ColumnKind>,
    values: Vec<f64>,
    missing: Vec<bool>,
    rows: usize,
    row_labels: Option<Vec<String>>,
    classes: Option<ClassLabels>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassLabels {
    pub column: String,
    pub ids: Vec<usize>,
    pub names: Vec<String>,
}

impl DataMatrix {
    /// Builds a matrix from per-row cells; `None` marks a missing entry.
    pub fn new(names: Vec<String>, kinds: Vec<ColumnKind>, cells: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if names.len() != kinds.len() {
            return Err(Error::Argument("column names and kinds differ in length".into()));
        }
        let cols = kinds.len();
        let rows = cells.len();
        let mut values = Vec::with_capacity(rows * cols);
        let mut missing = Vec::with_capacity(rows * cols);
        for (r, row) in cells.into_iter().enumerate() {
            if row.len() != cols {
                return Err(Error::data(
                    Some(r),
                    None,
                    format!("expected {cols} cells, found {}", row.len()),
                ));
            }
            for (c, cell) in row.into_iter().enumerate() {
                match cell {
                    Some(v) => {
                        check_cell(kinds[c], v).map_err(|m| Error::data(Some(r), Some(c), m))?;
                        values.push(v);
                        missing.push(false);
                    }
                    None => {
                        values.push(0.0);
                        missing.push(true);
                    }
                }
            }
        }
        Ok(DataMatrix {
            names,
            kinds,
            values,
            missing,
            rows,
            row_labels: None,
            classes: None,
        })
    }

    /// Fully observed real-valued matrix with columns `x0, x1, ...`.
    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let cells = rows.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect();
        Self::new(default_names(cols), vec![ColumnKind::Real; cols], cells)
    }

    /// Fully observed categorical matrix, every column with `k` levels.
    pub fn from_categorical_rows(rows: &[Vec<usize>], k: usize) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let cells = rows
            .iter()
            .map(|r| r.iter().map(|&v| Some(v as f64)).collect())
            .collect();
        Self::new(default_names(cols), vec![ColumnKind::Categorical(k); cols], cells)
    }

    pub fn with_row_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.rows {
            return Err(Error::Argument(format!(
                "{} row labels for {} rows",
                labels.len(),
                self.rows
            )));
        }
        self.row_labels = Some(labels);
        Ok(self)
    }

    pub fn with_classes(mut self, classes: ClassLabels) -> Result<Self> {
        if classes.ids.len() != self.rows {
            return Err(Error::Argument(format!(
                "{} class labels for {} rows",
                classes.ids.len(),
                self.rows
            )));
        }
        self.classes = Some(classes);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.kinds.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn kind(&self, col: usize) -> ColumnKind {
        self.kinds[col]
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.n_cols() + col;
        (!self.missing[i]).then(|| self.values[i])
    }

    pub fn category(&self, row: usize, col: usize) -> Option<usize> {
        self.get(row, col).map(|v| v as usize)
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.missing[row * self.n_cols() + col]
    }

    pub fn row(&self, row: usize) -> Vec<Option<f64>> {
        (0..self.n_cols()).map(|c| self.get(row, c)).collect()
    }

    pub fn set(&mut self, row: usize, col: usize, value: Option<f64>) -> Result<()> {
        let i = row * self.n_cols() + col;
        match value {
            Some(v) => {
                check_cell(self.kinds[col], v).map_err(|m| Error::data(Some(row), Some(col), m))?;
                self.values[i] = v;
                self.missing[i] = false;
            }
            None => {
                self.values[i] = 0.0;
                self.missing[i] = true;
            }
        }
        Ok(())
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Cells `(row, col)` that are missing, in row-major order.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        let cols = self.n_cols();
        self.missing
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i / cols, i % cols))
            .collect()
    }

    pub fn row_labels(&self) -> Option<&[String]> {
        self.row_labels.as_deref()
    }

    /// Row labels, defaulting to `r0, r1, ...`.
    pub fn leaf_labels(&self) -> Vec<String> {
        match &self.row_labels {
            Some(l) => l.clone(),
            None => (0..self.rows).map(|i| format!("r{i}")).collect(),
        }
    }

    pub fn classes(&self) -> Option<&ClassLabels> {
        self.classes.as_ref()
    }

    pub fn is_all_real(&self) -> bool {
        self.kinds.iter().all(|k| *k == ColumnKind::Real)
    }

    pub fn is_all_categorical(&self) -> bool {
        self.kinds.iter().all(|k| matches!(k, ColumnKind::Categorical(_)))
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DataMatrix {
        let cols = self.n_cols();
        let mut values = Vec::with_capacity(rows.len() * cols);
        let mut missing = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            values.extend_from_slice(&self.values[r * cols..(r + 1) * cols]);
            missing.extend_from_slice(&self.missing[r * cols..(r + 1) * cols]);
        }
        DataMatrix {
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            values,
            missing,
            rows: rows.len(),
            row_labels: self
                .row_labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r].clone()).collect()),
            classes: self.classes.as_ref().map(|c| ClassLabels {
                column: c.column.clone(),
                ids: rows.iter().map(|&r| c.ids[r]).collect(),
                names: c.names.clone(),
            }),
        }
    }
}

fn default_names(cols: usize) -> Vec<String> {
    (0..cols).map(|c| format!("x{c}")).collect()
}

fn check_cell(kind: ColumnKind, v: f64) -> std::result::Result<(), String> {
    match kind {
        ColumnKind::Real if !v.is_finite() => Err(format!("non-finite value {v}")),
        ColumnKind::Real => Ok(()),
        ColumnKind::Categorical(k) => {
            if v.fract() != 0.0 || v < 0.0 || v >= k as f64 {
                Err(format!("category {v} outside 0..{k}"))
            } else {
                Ok(())
            }
        }
    }
}

/// How to read a CSV file.
#[derive(Clone, Debug)]
pub struct CsvOptions {
    /// Column types: a single entry applies to every column, otherwise one per column.
    pub schema: Option<Vec<ColumnKind>>,
    pub na_token: String,
    /// Column holding class labels (excluded from the data).
    pub label_col: Option<String>,
    /// Column holding row names (excluded from the data).
    pub row_label_col: Option<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            schema: None,
            na_token: "NA".into(),
            label_col: None,
            row_label_col: None,
        }
    }
}

/// Parses a schema flag such as `real`, `cat:2` or `real,cat:3,real`.
pub fn parse_schema(s: &str) -> Result<Vec<ColumnKind>> {
    s.split(',').map(str::parse).collect()
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<DataMatrix> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, opts)
}

pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &Option<String>| -> Result<Option<usize>> {
        match name {
            None => Ok(None),
            Some(n) => header
                .iter()
                .position(|h| h == n)
                .map(Some)
                .ok_or_else(|| Error::data(None, None, format!("no column named '{n}'"))),
        }
    };
    let label_idx = find(&opts.label_col)?;
    let row_label_idx = find(&opts.row_label_col)?;
    let data_cols: Vec<usize> = (0..header.len())
        .filter(|&c| Some(c) != label_idx && Some(c) != row_label_idx)
        .collect();

    let mut raw: Vec<Vec<Option<f64>>> = Vec::new();
    let mut class_raw = Vec::new();
    let mut row_labels = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::data(
                Some(r),
                None,
                format!("ragged row: expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let mut row = Vec::with_capacity(data_cols.len());
        for (j, &c) in data_cols.iter().enumerate() {
            let field = &rec[c];
            if field == opts.na_token || field.is_empty() {
                row.push(None);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::data(Some(r), Some(j), format!("cannot parse '{field}'")))?;
                row.push(Some(v));
            }
        }
        raw.push(row);
        if let Some(i) = label_idx {
            class_raw.push(rec[i].to_string());
        }
        if let Some(i) = row_label_idx {
            row_labels.push(rec[i].to_string());
        }
    }

    let names: Vec<String> = data_cols.iter().map(|&c| header[c].clone()).collect();
    let kinds = match &opts.schema {
        Some(s) if s.len() == 1 => vec![s[0]; names.len()],
        Some(s) if s.len() == names.len() => s.clone(),
        Some(s) => {
            return Err(Error::Argument(format!(
                "schema lists {} types for {} data columns",
                s.len(),
                names.len()
            )))
        }
        None => (0..names.len()).map(|c| infer_kind(&raw, c)).collect(),
    };

    let mut m = DataMatrix::new(names, kinds, raw)?;
    if row_label_idx.is_some() {
        m = m.with_row_labels(row_labels)?;
    }
    if let Some(i) = label_idx {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut names = Vec::new();
        let ids = class_raw
            .into_iter()
            .map(|l| {
                *index.entry(l.clone()).or_insert_with(|| {
                    names.push(l);
                    names.len() - 1
                })
            })
            .collect();
        m = m.with_classes(ClassLabels {
            column: header[i].clone(),
            ids,
            names,
        })?;
    }
    Ok(m)
}

/// All-integer columns with values in `0..10` are read as categorical.
fn infer_kind(raw: &[Vec<Option<f64>>], col: usize) -> ColumnKind {
    let mut max = 0.0f64;
    let mut any = false;
    for row in raw {
        if let Some(v) = row[col] {
            if v.fract() != 0.0 || !(0.0..10.0).contains(&v) {
                return ColumnKind::Real;
            }
            max = max.max(v);
            any = true;
        }
    }
    if any {
        ColumnKind::Categorical((max as usize + 1).max(2))
    } else {
        ColumnKind::Real
    }
}

pub fn save_csv(data: &DataMatrix, path: impl AsRef<Path>, na_token: &str) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv(data, file, na_token)
}

/// Writes the matrix with a header; row labels and classes are emitted as
/// leading columns named `row` and the stored label-column name.
pub fn write_csv<W: Write>(data: &DataMatrix, writer: W, na_token: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = Vec::new();
    if data.row_labels.is_some() {
        header.push("row".to_string());
    }
    if let Some(c) = &data.classes {
        header.push(c.column.clone());
    }
    header.extend(data.names.iter().cloned());
    w.write_record(&header)?;
    for r in 0..data.rows {
        let mut rec = Vec::with_capacity(header.len());
        if let Some(l) = &data.row_labels {
            rec.push(l[r].clone());
        }
        if let Some(c) = &data.classes {
            rec.push(c.names[c.ids[r]].clone());
        }
        for c in 0..data.n_cols() {
            rec.push(match (data.get(r, c), data.kinds[c]) {
                (None, _) => na_token.to_string(),
                (Some(v), ColumnKind::Categorical(_)) => format!("{}", v as usize),
                (Some(v), ColumnKind::Real) => fmt_num(v),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
