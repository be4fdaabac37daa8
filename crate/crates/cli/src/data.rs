//! CSV datasets with header `id,coord_1,coord_2,<variables...>`.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use ssmrcd::spatial::Dataset;

use crate::error::{io_error, validation, CliError, CliResult};

/// A dataset together with its variable names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub dataset: Dataset,
    pub variables: Vec<String>,
}

pub const MIN_ROWS: usize = 4;

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn load_dataset(path: &Path) -> CliResult<Table> {
    let file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
    read_dataset(file, &path.display().to_string())
}

pub fn read_dataset<R: std::io::Read>(reader: R, source: &str) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Validation(format!("{source}: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.len() < 4 || header[0] != "id" || header[1] != "coord_1" || header[2] != "coord_2" {
        return validation(format!(
            "{source}: header must be id,coord_1,coord_2 followed by at least one variable"
        ));
    }
    let variables = header[3..].to_vec();
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    let mut values = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| CliError::Validation(format!("{source}: line {line}: {e}")))?;
        let cell = |c: usize| -> CliResult<&str> {
            let v = rec.get(c).unwrap_or("").trim();
            if v.is_empty() {
                validation(format!(
                    "{source}: line {line}, column {} ('{}'): missing value",
                    c + 1,
                    header[c]
                ))
            } else {
                Ok(v)
            }
        };
        let number = |c: usize| -> CliResult<f64> {
            let v = cell(c)?;
            match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => validation(format!(
                    "{source}: line {line}, column {} ('{}'): not a finite number: {v:?}",
                    c + 1,
                    header[c]
                )),
            }
        };
        let id = cell(0)?.to_string();
        if let Some(first) = seen.insert(id.clone(), line) {
            return validation(format!("{source}: line {line}, column 1 ('id'): duplicate id {id:?} (first on line {first})"));
        }
        ids.push(id);
        coords.push([number(1)?, number(2)?]);
        for c in 3..header.len() {
            values.push(number(c)?);
        }
    }
    if ids.len() < MIN_ROWS {
        return validation(format!(
            "{source}: need at least {MIN_ROWS} data rows, found {}",
            ids.len()
        ));
    }
    let x = DMatrix::from_row_slice(ids.len(), variables.len(), &values);
    Ok(Table {
        dataset: Dataset::new(ids, coords, x)?,
        variables,
    })
}

pub fn write_dataset<W: std::io::Write>(writer: W, table: &Table) -> CliResult<()> {
    let d = &table.dataset;
    if table.variables.len() != d.p() {
        return validation("variable names do not match the data width");
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "coord_1".into(), "coord_2".into()];
    header.extend(table.variables.iter().cloned());
    write_row(&mut w, header)?;
    for i in 0..d.n() {
        let mut rec = vec![
            d.ids[i].clone(),
            fmt_f64(d.coords[i][0]),
            fmt_f64(d.coords[i][1]),
        ];
        rec.extend((0..d.p()).map(|c| fmt_f64(d.x[(i, c)])));
        write_row(&mut w, rec)?;
    }
    w.flush().map_err(|e| CliError::Validation(e.to_string()))
}

pub fn save_dataset(path: &Path, table: &Table) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
    write_dataset(file, table)
}

/// Default variable names `x1..xp`.
pub fn default_variables(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

pub(crate) fn write_row<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    rec: Vec<String>,
) -> CliResult<()> {
    w.write_record(&rec)
        .map_err(|e| CliError::Validation(e.to_string()))
}

/// Writes a header and rows of preformatted cells.
pub fn write_table(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    write_row(&mut w, header.iter().map(|s| s.to_string()).collect())?;
    for r in rows {
        write_row(&mut w, r)?;
    }
    w.flush().map_err(|e| io_error(path, e))
}
