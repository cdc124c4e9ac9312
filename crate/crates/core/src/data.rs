//! Incomplete data model: the data matrix with holes, its missingness mask,
//! the catalog of distinct missingness patterns, and CSV ingestion.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{PklmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnKind {
    Numeric,
    /// Levels in order of first appearance; cells store the level index.
    Categorical { levels: Vec<String> },
}

impl ColumnKind {
    pub fn is_categorical(&self) -> bool {
        matches!(self, ColumnKind::Categorical { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellValue {
    Numeric(f64),
    Categorical(u32),
}

/// An `n x p` table of optional cells.
///
/// Cells are stored row-major as `Option<f64>`; categorical cells hold their
/// interned level code.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n_rows: usize,
    n_cols: usize,
    cells: Vec<Option<f64>>,
    kinds: Vec<ColumnKind>,
    names: Vec<String>,
}

impl DataMatrix {
    pub fn new(
        names: Vec<String>,
        kinds: Vec<ColumnKind>,
        cells: Vec<Option<f64>>,
    ) -> Result<Self> {
        let n_cols = kinds.len();
        if names.len() != n_cols {
            return Err(PklmError::InvalidData(format!(
                "{} column names for {} columns",
                names.len(),
                n_cols
            )));
        }
        if n_cols < 2 {
            return Err(PklmError::DimensionTooSmall(n_cols));
        }
        if cells.is_empty() {
            return Err(PklmError::EmptyData);
        }
        if !cells.len().is_multiple_of(n_cols) {
            return Err(PklmError::InvalidData(format!(
                "{} cells do not fill rows of width {}",
                cells.len(),
                n_cols
            )));
        }
        for (idx, cell) in cells.iter().enumerate() {
            let Some(v) = *cell else { continue };
            match &kinds[idx % n_cols] {
                ColumnKind::Numeric if !v.is_finite() => {
                    return Err(PklmError::InvalidData(format!(
                        "non-finite value in row {}, column {}",
                        idx / n_cols,
                        idx % n_cols
                    )));
                }
                ColumnKind::Categorical { levels }
                    if v < 0.0 || v.fract() != 0.0 || v as usize >= levels.len() =>
                {
                    return Err(PklmError::InvalidData(format!(
                        "bad level code {v} in row {}, column {}",
                        idx / n_cols,
                        idx % n_cols
                    )));
                }
                _ => {}
            }
        }
        Ok(Self {
            n_rows: cells.len() / n_cols,
            n_cols,
            cells,
            kinds,
            names,
        })
    }

    /// Builds an all-numeric matrix from rows, naming columns `V1..Vp`.
    pub fn from_numeric_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n_cols) {
            return Err(PklmError::RaggedRow {
                row: i,
                found: r.len(),
                expected: n_cols,
            });
        }
        Self::new(
            default_names(n_cols),
            vec![ColumnKind::Numeric; n_cols],
            rows.iter().flatten().copied().collect(),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column_kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    /// Raw cell; categorical cells yield their level code.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row * self.n_cols + col]
    }

    pub fn value(&self, row: usize, col: usize) -> Option<CellValue> {
        self.get(row, col).map(|v| match self.kinds[col] {
            ColumnKind::Numeric => CellValue::Numeric(v),
            ColumnKind::Categorical { .. } => CellValue::Categorical(v as u32),
        })
    }

    pub fn row(&self, row: usize) -> &[Option<f64>] {
        &self.cells[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn is_fully_observed(&self) -> bool {
        self.cells.iter().all(Option::is_some)
    }

    /// Copy of `self` with every cell flagged in `mask` removed.
    pub fn with_mask(&self, mask: &MissingnessMask) -> Result<Self> {
        if mask.n_rows() != self.n_rows || mask.n_cols() != self.n_cols {
            return Err(PklmError::InvalidData("mask shape does not match data".into()));
        }
        let mut out = self.clone();
        for (cell, &bit) in out.cells.iter_mut().zip(&mask.bits) {
            if bit == 1 {
                *cell = None;
            }
        }
        Ok(out)
    }

    /// Drops rows with every cell missing, returning the dropped indices.
    pub fn drop_all_missing_rows(&self) -> Result<(Self, Vec<usize>)> {
        let mut kept = Vec::with_capacity(self.cells.len());
        let mut dropped = Vec::new();
        for i in 0..self.n_rows {
            let row = self.row(i);
            if row.iter().all(Option::is_none) {
                dropped.push(i);
            } else {
                kept.extend_from_slice(row);
            }
        }
        let out = Self::new(self.names.clone(), self.kinds.clone(), kept)?;
        Ok((out, dropped))
    }

    pub fn write_csv<W: Write>(&self, writer: W, options: &CsvOptions) -> Result<()> {
        let missing = options
            .missing_tokens
            .iter()
            .find(|t| !t.is_empty())
            .map_or("NA", String::as_str);
        let mut w = csv::WriterBuilder::new()
            .delimiter(options.delimiter)
            .from_writer(writer);
        if options.has_header {
            w.write_record(&self.names)?;
        }
        let mut record = Vec::with_capacity(self.n_cols);
        for i in 0..self.n_rows {
            record.clear();
            for j in 0..self.n_cols {
                record.push(match (self.get(i, j), &self.kinds[j]) {
                    (None, _) => missing.to_string(),
                    (Some(v), ColumnKind::Numeric) => format!("{v}"),
                    (Some(v), ColumnKind::Categorical { levels }) => levels[v as usize].clone(),
                });
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, options: &CsvOptions) -> Result<()> {
        self.write_csv(File::create(path)?, options)
    }
}

fn default_names(n_cols: usize) -> Vec<String> {
    (1..=n_cols).map(|j| format!("V{j}")).collect()
}

/// Binary `n x p` matrix, `1` where the data cell is absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingnessMask {
    n_rows: usize,
    n_cols: usize,
    bits: Vec<u8>,
}

impl MissingnessMask {
    /// Validates shape, the binary alphabet and the absence of all-ones rows.
    pub fn from_bits(n_rows: usize, n_cols: usize, bits: Vec<u8>) -> Result<Self> {
        if n_rows == 0 {
            return Err(PklmError::EmptyData);
        }
        if bits.len() != n_rows * n_cols {
            return Err(PklmError::InvalidData(format!(
                "{} mask bits for a {n_rows}x{n_cols} mask",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(PklmError::InvalidData("mask bits must be 0 or 1".into()));
        }
        if let Some(i) = bits.chunks_exact(n_cols).position(|r| r.iter().all(|&b| b == 1)) {
            return Err(PklmError::AllMissingRow(i));
        }
        Ok(Self {
            n_rows,
            n_cols,
            bits,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.n_cols + col] == 1
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[u8] {
        &self.bits[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Row `i` of the result is row `mapping[i]` of `self`.
    pub fn permute_rows(&self, mapping: &[usize]) -> Self {
        assert_eq!(mapping.len(), self.n_rows, "permutation length mismatch");
        let mut bits = Vec::with_capacity(self.bits.len());
        for &src in mapping {
            bits.extend_from_slice(self.row(src));
        }
        Self {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            bits,
        }
    }
}

pub fn build_mask(data: &DataMatrix) -> Result<MissingnessMask> {
    if data.n_rows() == 0 {
        return Err(PklmError::EmptyData);
    }
    let bits = data.cells.iter().map(|c| u8::from(c.is_none())).collect();
    MissingnessMask::from_bits(data.n_rows(), data.n_cols(), bits)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternCatalog {
    /// Distinct patterns in first-occurrence order.
    pub patterns: Vec<Vec<u8>>,
    pub row_to_pattern: Vec<usize>,
    pub group_sizes: Vec<usize>,
}

impl PatternCatalog {
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

pub fn extract_patterns(mask: &MissingnessMask) -> PatternCatalog {
    let mut index: HashMap<&[u8], usize> = HashMap::new();
    let mut patterns = Vec::new();
    let mut group_sizes = Vec::new();
    let mut row_to_pattern = Vec::with_capacity(mask.n_rows());
    for i in 0..mask.n_rows() {
        let row = mask.row(i);
        let id = *index.entry(row).or_insert_with(|| {
            patterns.push(row.to_vec());
            group_sizes.push(0);
            patterns.len() - 1
        });
        group_sizes[id] += 1;
        row_to_pattern.push(id);
    }
    PatternCatalog {
        patterns,
        row_to_pattern,
        group_sizes,
    }
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
    pub missing_tokens: Vec<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_header: true,
            missing_tokens: vec![String::new(), "NA".to_string()],
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<DataMatrix> {
    read_csv(File::open(path)?, options)
}

/// Parses delimited text into a [`DataMatrix`].
///
/// A column is numeric when every present token parses as a finite real;
/// otherwise every present token is interned as a categorical level.
pub fn read_csv<R: Read>(reader: R, options: &CsvOptions) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut records = rdr.records();
    let mut names: Option<Vec<String>> = None;
    let mut raw: Vec<Vec<Option<String>>> = Vec::new();
    let mut width: Option<usize> = None;
    let is_missing = |t: &str| options.missing_tokens.iter().any(|m| m == t);

    for (line, rec) in (&mut records).enumerate() {
        let rec = rec.map_err(|e| csv_parse_error(e, line))?;
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(PklmError::RaggedRow {
                row: line,
                found: rec.len(),
                expected,
            });
        }
        if options.has_header && names.is_none() {
            names = Some(rec.iter().map(str::to_string).collect());
        } else {
            raw.push(
                rec.iter()
                    .map(|t| (!is_missing(t)).then(|| t.to_string()))
                    .collect(),
            );
        }
    }

    let n_cols = width.ok_or(PklmError::EmptyData)?;
    if raw.is_empty() {
        return Err(PklmError::EmptyData);
    }
    let names = names.unwrap_or_else(|| default_names(n_cols));

    let mut kinds = Vec::with_capacity(n_cols);
    let mut columns: Vec<Vec<Option<f64>>> = Vec::with_capacity(n_cols);
    for j in 0..n_cols {
        let parsed: Option<Vec<Option<f64>>> = raw
            .iter()
            .map(|r| match &r[j] {
                None => Some(None),
                Some(t) => t.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some),
            })
            .collect();
        match parsed {
            Some(col) => {
                kinds.push(ColumnKind::Numeric);
                columns.push(col);
            }
            None => {
                let mut levels: Vec<String> = Vec::new();
                let mut codes: HashMap<&str, u32> = HashMap::new();
                let col = raw
                    .iter()
                    .map(|r| {
                        r[j].as_deref().map(|t| {
                            let next = codes.len() as u32;
                            let code = *codes.entry(t).or_insert_with(|| {
                                levels.push(t.to_string());
                                next
                            });
                            f64::from(code)
                        })
                    })
                    .collect();
                kinds.push(ColumnKind::Categorical { levels });
                columns.push(col);
            }
        }
    }

    let n_rows = raw.len();
    let mut cells = Vec::with_capacity(n_rows * n_cols);
    for i in 0..n_rows {
        cells.extend(columns.iter().map(|c| c[i]));
    }
    DataMatrix::new(names, kinds, cells)
}

fn csv_parse_error(e: csv::Error, line: usize) -> PklmError {
    match e.kind() {
        csv::ErrorKind::Utf8 { pos, err } => PklmError::ParseError {
            row: pos.as_ref().map_or(line, |p| p.record() as usize),
            col: err.field(),
            message: "invalid UTF-8".into(),
        },
        _ => PklmError::Csv(e),
    }
}
