//! CSV datasets: header row, one binary label column, numeric features.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::simgen::RawDataset;

/// A parsed dataset with its column names.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvDataset {
    pub feature_names: Vec<String>,
    pub label_name: String,
    pub data: RawDataset,
}

/// Reads a dataset. Every column except `label` must be numeric and finite;
/// the label column must hold 0 or 1. Errors report the 1-based file line.
pub fn read_dataset<R: Read>(reader: R, label: &str) -> Result<CsvDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::InvalidData(format!("header: {e}")))?
        .clone();
    let label_col = headers
        .iter()
        .position(|h| h == label)
        .ok_or_else(|| Error::InvalidData(format!("label column '{label}' not found in header")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_col)
        .map(|(_, h)| h.to_string())
        .collect();
    let p = feature_names.len();
    if p == 0 {
        return Err(Error::InvalidData("no feature columns".into()));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::InvalidData(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        for (i, field) in rec.iter().enumerate() {
            let name = &headers[i];
            if i == label_col {
                let y = match field.trim() {
                    "0" | "0.0" => 0,
                    "1" | "1.0" => 1,
                    other => {
                        return Err(Error::InvalidData(format!(
                            "line {line}: label '{other}' in column '{name}' is not 0 or 1"
                        )))
                    }
                };
                labels.push(y);
            } else {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidData(format!(
                        "line {line}: value '{field}' in column '{name}' is not numeric"
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::InvalidData(format!(
                        "line {line}: non-finite value in column '{name}'"
                    )));
                }
                features.push(v);
            }
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let data = RawDataset::new(n, p, features, labels)?;
    for (j, name) in feature_names.iter().enumerate() {
        let first = data.features[j];
        if data.row_iter().all(|r| r[j] == first) {
            return Err(Error::InvalidData(format!(
                "degenerate feature column '{name}' (constant value {first})"
            )));
        }
    }
    Ok(CsvDataset {
        feature_names,
        label_name: label.to_string(),
        data,
    })
}

/// Writes `x1,...,xp,y`. Floats use the shortest round-trip representation.
pub fn write_dataset<W: Write>(writer: W, data: &RawDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=data.p).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header).map_err(csv_err)?;
    let mut rec = Vec::with_capacity(data.p + 1);
    for (row, y) in data.row_iter().zip(&data.labels) {
        rec.clear();
        rec.extend(row.iter().map(|v| v.to_string()));
        rec.push(y.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidData(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{generate, ModelSpec};

    #[test]
    fn round_trip_is_exact() {
        let raw = generate(&ModelSpec::qda(6), 50, 3).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &raw).unwrap();
        let back = read_dataset(buf.as_slice(), "y").unwrap();
        assert_eq!(back.data, raw);
        assert_eq!(back.feature_names[5], "x6");
    }

    #[test]
    fn label_column_anywhere() {
        let text = "a,y,b\n1.5,0,2\n-1,1,3\n";
        let d = read_dataset(text.as_bytes(), "y").unwrap();
        assert_eq!(d.data.features, vec![1.5, 2.0, -1.0, 3.0]);
        assert_eq!(d.data.labels, vec![0, 1]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = read_dataset("a,y\n1,0\nfoo,1\n".as_bytes(), "y")
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("line 3") && err.contains("not numeric"),
            "{err}"
        );
        let err = read_dataset("a,y\n1,0\n2,2\n".as_bytes(), "y")
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("line 3") && err.contains("not 0 or 1"),
            "{err}"
        );
        let err = read_dataset("a,y\n1,0\nNaN,1\n".as_bytes(), "y")
            .unwrap_err()
            .to_string();
        assert!(err.contains("non-finite"), "{err}");
        let err = read_dataset("a,y\n1,0\n2\n".as_bytes(), "y")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 3"), "{err}");
        let err = read_dataset("a,b\n1,0\n".as_bytes(), "y")
            .unwrap_err()
            .to_string();
        assert!(err.contains("not found"), "{err}");
    }

    #[test]
    fn constant_column_is_rejected() {
        let err = read_dataset("a,b,y\n1,2,0\n1,3,1\n".as_bytes(), "y")
            .unwrap_err()
            .to_string();
        assert!(err.contains("degenerate feature column"), "{err}");
    }
}
