//! Repository ingestion: CSV tables, columns as nodes, value normalization
//! and tokenization shared by every downstream stage.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const MISSING_MARKERS: [&str; 5] = ["", "null", "na", "n/a", "none"];

/// Trims a raw cell and maps missing markers to `None`. Case is preserved.
pub fn normalize_value(raw: &str) -> Option<&str> {
    let trimmed = raw.trim();
    if MISSING_MARKERS
        .iter()
        .any(|m| trimmed.eq_ignore_ascii_case(m))
    {
        None
    } else {
        Some(trimmed)
    }
}

pub fn is_missing(raw: &str) -> bool {
    normalize_value(raw).is_none()
}

/// Lowercases and splits on maximal runs of non-alphanumeric characters.
pub fn tokenize(value: &str) -> Vec<String> {
    value
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn is_numeric(value: &str) -> bool {
    value.trim().parse::<f64>().map(f64::is_finite).unwrap_or(false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub id: String,
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(id: impl Into<String>, column_names: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        let id = id.into();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != column_names.len() {
                return Err(Error::RaggedRow {
                    path: PathBuf::from(&id),
                    row: i,
                    found: row.len(),
                    expected: column_names.len(),
                });
            }
        }
        Ok(Table {
            id,
            column_names,
            rows,
        })
    }

    pub fn n_columns(&self) -> usize {
        self.column_names.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_cells(&self, col: usize) -> impl Iterator<Item = &str> + '_ {
        self.rows.iter().map(move |r| r[col].as_str())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        writer
            .write_record(&self.column_names)
            .map_err(|e| Error::parse(path, e))?;
        for row in &self.rows {
            writer.write_record(row).map_err(|e| Error::parse(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

/// A column is the unit of matching and a node of the similarity graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub node_id: usize,
    pub table_index: usize,
    pub table_id: String,
    pub name: String,
    /// Non-missing normalized cells in source order.
    pub values: Vec<String>,
    pub distinct_values: BTreeSet<String>,
    /// Row count including missing cells.
    pub n_raw: usize,
}

impl Column {
    pub fn from_cells<'a>(
        node_id: usize,
        table_index: usize,
        table_id: &str,
        name: &str,
        cells: impl Iterator<Item = &'a str>,
    ) -> Self {
        let mut n_raw = 0;
        let mut values = Vec::new();
        for cell in cells {
            n_raw += 1;
            if let Some(v) = normalize_value(cell) {
                values.push(v.to_owned());
            }
        }
        let distinct_values = values.iter().cloned().collect();
        Column {
            node_id,
            table_index,
            table_id: table_id.to_owned(),
            name: name.to_owned(),
            values,
            distinct_values,
            n_raw,
        }
    }

    /// Convenience constructor for tests and synthetic data.
    pub fn from_values<S: AsRef<str>>(node_id: usize, table_id: &str, values: &[S]) -> Self {
        Column::from_cells(
            node_id,
            0,
            table_id,
            &format!("col_{node_id}"),
            values.iter().map(|v| v.as_ref()),
        )
    }

    pub fn n_missing(&self) -> usize {
        self.n_raw - self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Repository {
    pub tables: Vec<Table>,
    /// Columns indexed by node id.
    pub columns: Vec<Column>,
    table_offsets: Vec<usize>,
}

impl Repository {
    /// Builds the repository in the given table order; node ids follow (table, column) order.
    pub fn from_tables(tables: Vec<Table>) -> Self {
        let mut columns = Vec::new();
        let mut table_offsets = Vec::with_capacity(tables.len());
        for (ti, table) in tables.iter().enumerate() {
            table_offsets.push(columns.len());
            for (ci, name) in table.column_names.iter().enumerate() {
                let node_id = columns.len();
                columns.push(Column::from_cells(
                    node_id,
                    ti,
                    &table.id,
                    name,
                    table.column_cells(ci),
                ));
            }
        }
        Repository {
            tables,
            columns,
            table_offsets,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.columns.len()
    }

    pub fn node_id(&self, table_index: usize, column_index: usize) -> usize {
        self.table_offsets[table_index] + column_index
    }

    pub fn find_column(&self, table_id: &str, column: &str) -> Option<usize> {
        let ti = self.tables.iter().position(|t| t.id == table_id)?;
        let ci = self.tables[ti].column_names.iter().position(|c| c == column)?;
        Some(self.node_id(ti, ci))
    }

    pub fn same_table(&self, a: usize, b: usize) -> bool {
        self.columns[a].table_index == self.columns[b].table_index
    }

    /// All unordered cross-table node pairs `(a, b)` with `a < b`, in lexicographic order.
    pub fn cross_table_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n_nodes();
        let mut pairs = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if !self.same_table(a, b) {
                    pairs.push((a, b));
                }
            }
        }
        pairs
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for table in &self.tables {
            table.write_csv(&dir.join(format!("{}.csv", table.id)))?;
        }
        Ok(())
    }
}

pub fn load_repository(path: &Path) -> Result<Repository> {
    load_repository_with(path, b',')
}

pub fn load_repository_with(path: &Path, delimiter: u8) -> Result<Repository> {
    let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let p = entry.path();
        let is_csv = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv && p.is_file() {
            files.push(p);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if files.is_empty() {
        return Err(Error::NoTables(path.to_path_buf()));
    }
    let tables = files
        .iter()
        .map(|f| read_table(f, delimiter))
        .collect::<Result<Vec<_>>>()?;
    Ok(Repository::from_tables(tables))
}

/// Reads one CSV file. The first record is a header iff the file has at least
/// two records and some cell of the first record is non-numeric.
pub fn read_table(path: &Path, delimiter: u8) -> Result<Table> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .from_reader(bytes.as_slice());
    let mut records: Vec<Vec<String>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, format!("record {i}: {e}")))?;
        records.push(rec.iter().map(str::to_owned).collect());
    }
    let width = records.first().map_or(0, Vec::len);
    for (i, r) in records.iter().enumerate() {
        if r.len() != width {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                row: i,
                found: r.len(),
                expected: width,
            });
        }
    }
    let has_header = records.len() >= 2 && records[0].iter().any(|c| !is_numeric(c));
    let column_names = if has_header {
        records.remove(0).into_iter().map(|c| c.trim().to_owned()).collect()
    } else {
        (0..width).map(|i| format!("col_{i}")).collect()
    };
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_owned();
    Ok(Table {
        id,
        column_names,
        rows: records,
    })
}
