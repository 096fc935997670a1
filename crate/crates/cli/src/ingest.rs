use std::path::Path;

use nalgebra::DMatrix;
use ngdim_core::scatter::DataMatrix;

use crate::error::CliError;

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Read a numeric CSV with one observation per row into a p × n matrix.
///
/// The first row is taken as a header when none of its cells parse as a
/// number. Missing, non-numeric and non-finite cells are rejected with their
/// 1-based file row and column.
pub fn ingest_csv(path: &Path) -> Result<DataMatrix, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(file);
    let fail = |message: String| CliError::Csv { path: path.to_path_buf(), message };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| fail(e.to_string()))?;
        let line = i + 1;
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        if i == 0 && record.iter().all(|c| parse_cell(c).is_none()) {
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(fail(format!("row {line} has {} columns, expected {expected}", record.len())));
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, c)| {
                parse_cell(c).ok_or_else(|| fail(format!("row {line}, column {}: '{}' is not a finite number", j + 1, c.trim())))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(fail("no observations".into()));
    }
    let (n, p) = (rows.len(), rows[0].len());
    if n <= p {
        return Err(fail(format!("need more observations than variables, got n = {n}, p = {p}")));
    }
    Ok(DataMatrix::new(DMatrix::from_fn(p, n, |r, c| rows[c][r]))?)
}

/// Write a p × n matrix as CSV, one observation per row, with a
/// `prefix1..prefixp` header. Values use the shortest round-trip form.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, prefix: &str) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_write_error(path, e))?;
    let header: Vec<String> = (1..=m.nrows()).map(|i| format!("{prefix}{i}")).collect();
    w.write_record(&header).map_err(|e| csv_write_error(path, e))?;
    for c in 0..m.ncols() {
        let row: Vec<String> = m.column(c).iter().map(|v| v.to_string()).collect();
        w.write_record(&row).map_err(|e| csv_write_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub(crate) fn csv_write_error(path: &Path, e: csv::Error) -> CliError {
    CliError::Csv { path: path.to_path_buf(), message: e.to_string() }
}
