//! CSV and JSON helpers. Floats are written with 17 significant digits so
//! every value survives a write/read round trip bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linops::SparseMatrix;

/// `{:.16e}` formatting: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    let t = s.trim();
    match t {
        "NaN" | "nan" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => t.parse().map_err(|_| Error::Format(format!("not a number: '{t}'"))),
    }
}

/// Writes named columns of equal length as CSV with a header row.
pub fn write_columns<P: AsRef<Path>>(path: P, headers: &[&str], columns: &[Vec<f64>]) -> Result<()> {
    if headers.len() != columns.len() {
        return Err(Error::Format("header/column count mismatch".into()));
    }
    let rows = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != rows) {
        return Err(Error::Format("columns have different lengths".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(headers)?;
    for i in 0..rows {
        w.write_record(columns.iter().map(|c| fmt_f64(c[i])))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headed CSV of numbers; returns the header and the columns.
pub fn read_columns<P: AsRef<Path>>(path: P) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for record in r.records() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Format(format!("expected {} fields, found {}", headers.len(), record.len())));
        }
        for (c, field) in columns.iter_mut().zip(record.iter()) {
            c.push(parse_f64(field)?);
        }
    }
    Ok((headers, columns))
}

pub fn write_vector<P: AsRef<Path>>(path: P, header: &str, v: &DVector<f64>) -> Result<()> {
    write_columns(path, &[header], &[v.as_slice().to_vec()])
}

pub fn read_vector<P: AsRef<Path>>(path: P) -> Result<DVector<f64>> {
    let (_, mut cols) = read_columns(path)?;
    if cols.len() != 1 {
        return Err(Error::Format(format!("expected one column, found {}", cols.len())));
    }
    Ok(DVector::from_vec(cols.remove(0)))
}

/// Dense matrix as a header-less CSV, one matrix row per line.
pub fn write_matrix<P: AsRef<Path>>(path: P, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..m.nrows() {
        let line: Vec<String> = m.row(i).iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<P: AsRef<Path>>(path: P) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in r.records() {
        rows.push(record?.iter().map(parse_f64).collect::<Result<_>>()?);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Format("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn write_triplets<P: AsRef<Path>>(path: P, m: &SparseMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "col", "value"])?;
    for (i, j, v) in m.triplets() {
        w.write_record([i.to_string(), j.to_string(), fmt_f64(v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_triplets<P: AsRef<Path>>(path: P, rows: usize, cols: usize) -> Result<SparseMatrix> {
    let mut r = csv::Reader::from_path(path)?;
    let mut triplets = Vec::new();
    for record in r.records() {
        let record = record?;
        if record.len() != 3 {
            return Err(Error::Format("triplet rows need 3 fields".into()));
        }
        let idx = |k: usize| -> Result<usize> {
            record[k].trim().parse().map_err(|_| Error::Format(format!("bad index '{}'", &record[k])))
        };
        triplets.push((idx(0)?, idx(1)?, parse_f64(&record[2])?));
    }
    SparseMatrix::from_triplets(rows, cols, &triplets)
}

pub fn write_json<P: AsRef<Path>, T: Serialize>(path: P, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<P: AsRef<Path>, T: DeserializeOwned>(path: P) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(parse_f64(&fmt_f64(v)).unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        assert!(parse_f64(&fmt_f64(f64::NAN)).unwrap().is_nan());
        assert_eq!(parse_f64("inf").unwrap(), f64::INFINITY);
        assert!(parse_f64("x").is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = DVector::from_column_slice(&[1.0 / 7.0, -3.0, 1e-17]);
        write_vector(dir.path().join("v.csv"), "v", &v).unwrap();
        assert_eq!(read_vector(dir.path().join("v.csv")).unwrap(), v);

        let m = DMatrix::from_fn(3, 2, |i, j| (i as f64 + 1.0) / (j as f64 + 3.0));
        write_matrix(dir.path().join("m.csv"), &m).unwrap();
        assert_eq!(read_matrix(dir.path().join("m.csv")).unwrap(), m);

        let s = SparseMatrix::from_triplets(2, 3, &[(0, 2, 0.3), (1, 0, -1.0 / 9.0)]).unwrap();
        write_triplets(dir.path().join("s.csv"), &s).unwrap();
        assert_eq!(read_triplets(dir.path().join("s.csv"), 2, 3).unwrap().to_dense(), s.to_dense());

        write_columns(dir.path().join("c.csv"), &["a", "b"], &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let (h, c) = read_columns(dir.path().join("c.csv")).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(c[1], vec![3.0, 4.0]);
        assert!(write_columns(dir.path().join("bad.csv"), &["a"], &[vec![1.0], vec![2.0]]).is_err());
    }
}
