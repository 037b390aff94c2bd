//! CSV and JSON datasets: one time column in the original domain, one column
//! per function.
//!
//! ```text
//! t,1979,1980,1981
//! 1,0.12,0.31,0.05
//! 2,0.14,0.29,0.07
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use elastic_changepoint::function::{FunctionSample, Grid};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Largest deviation of a time step from the mean step, relative to it.
pub const UNIFORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `.json` files are JSON, everything else CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    functions: Vec<FunctionSample>,
}

#[derive(Serialize, Deserialize)]
struct JsonColumn {
    label: String,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    t: Vec<f64>,
    functions: Vec<JsonColumn>,
}

fn grid_from_times(t: &[f64]) -> CliResult<Grid> {
    if t.len() < 3 {
        return Err(CliError::input(format!("need at least 3 time points, got {}", t.len())));
    }
    if let Some(j) = t.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(CliError::input(format!(
            "time column must be strictly increasing (row {})",
            j + 2
        )));
    }
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let step = (t1 - t0) / (t.len() - 1) as f64;
    for (j, &x) in t.iter().enumerate() {
        let expect = t0 + j as f64 * step;
        if (x - expect).abs() > UNIFORM_TOL * step {
            return Err(CliError::input(format!(
                "time column is not uniformly spaced at row {} ({x} vs {expect})",
                j + 1
            )));
        }
    }
    Ok(Grid::new(t.len(), t0, t1)?)
}

impl Dataset {
    pub fn new(functions: Vec<FunctionSample>) -> CliResult<Self> {
        let first = functions
            .first()
            .ok_or_else(|| CliError::input("dataset has no functions"))?;
        let grid = *first.grid();
        if functions.iter().any(|f| *f.grid() != grid) {
            return Err(CliError::input("all functions must share one grid"));
        }
        Ok(Self { functions })
    }

    pub fn functions(&self) -> &[FunctionSample] {
        &self.functions
    }

    pub fn into_functions(self) -> Vec<FunctionSample> {
        self.functions
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn grid(&self) -> Grid {
        *self.functions[0].grid()
    }

    /// Column labels; unlabeled functions are numbered from 1.
    pub fn labels(&self) -> Vec<String> {
        self.functions
            .iter()
            .enumerate()
            .map(|(i, f)| f.label().map_or_else(|| (i + 1).to_string(), str::to_string))
            .collect()
    }

    pub fn read(path: &Path, format: Option<Format>) -> CliResult<Self> {
        let file = File::open(path)
            .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;
        let reader = BufReader::new(file);
        match format.unwrap_or_else(|| Format::from_path(path)) {
            Format::Csv => Self::from_csv(reader),
            Format::Json => Self::from_json(reader),
        }
    }

    pub fn write(&self, path: &Path, format: Option<Format>) -> CliResult<()> {
        let mut w = BufWriter::new(File::create(path)?);
        match format.unwrap_or_else(|| Format::from_path(path)) {
            Format::Csv => self.to_csv(&mut w)?,
            Format::Json => self.to_json(&mut w)?,
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_csv(reader: impl Read) -> CliResult<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 {
            return Err(CliError::input("CSV needs a time column and at least one function column"));
        }
        let labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut t = Vec::new();
        let mut cols = vec![Vec::new(); labels.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |j: usize| -> CliResult<f64> {
                let s = rec.get(j).unwrap_or("");
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        CliError::input(format!("row {}, column {}: `{s}` is not a finite number", row + 2, j + 1))
                    })
            };
            t.push(parse(0)?);
            for (j, col) in cols.iter_mut().enumerate() {
                col.push(parse(j + 1)?);
            }
        }
        let grid = grid_from_times(&t)?;
        let functions = cols
            .into_iter()
            .zip(labels)
            .map(|(values, label)| Ok(FunctionSample::new(grid, values)?.with_label(label)))
            .collect::<CliResult<Vec<_>>>()?;
        Self::new(functions)
    }

    pub fn to_csv(&self, writer: impl Write) -> CliResult<()> {
        let t = self.grid().original_points();
        let columns: Vec<&[f64]> = self.functions.iter().map(FunctionSample::values).collect();
        write_table(writer, "t", &t, &self.labels(), &columns)
    }

    pub fn from_json(reader: impl Read) -> CliResult<Self> {
        let doc: JsonDataset = serde_json::from_reader(reader)?;
        let grid = grid_from_times(&doc.t)?;
        let functions = doc
            .functions
            .into_iter()
            .map(|c| Ok(FunctionSample::new(grid, c.values)?.with_label(c.label)))
            .collect::<CliResult<Vec<_>>>()?;
        Self::new(functions)
    }

    pub fn to_json(&self, writer: impl Write) -> CliResult<()> {
        let doc = JsonDataset {
            t: self.grid().original_points(),
            functions: self
                .labels()
                .into_iter()
                .zip(&self.functions)
                .map(|(label, f)| JsonColumn {
                    label,
                    values: f.values().to_vec(),
                })
                .collect(),
        };
        serde_json::to_writer_pretty(writer, &doc)?;
        Ok(())
    }
}

/// Writes `key,h1,h2,...` followed by one row per key value. Numbers use the
/// shortest representation that parses back to the same `f64`.
pub fn write_table(
    writer: impl Write,
    key: &str,
    keys: &[f64],
    headers: &[String],
    columns: &[&[f64]],
) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut head = vec![key.to_string()];
    head.extend(headers.iter().cloned());
    w.write_record(&head)?;
    for (j, k) in keys.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(columns.iter().map(|c| c[j].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// [`write_table`] into a file.
pub fn write_table_file(
    path: &Path,
    key: &str,
    keys: &[f64],
    headers: &[String],
    columns: &[&[f64]],
) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_table(&mut w, key, keys, headers, columns)?;
    w.flush()?;
    Ok(())
}
