//! CSV ingestion and numeric formatting.

use std::path::Path;

use nalgebra::DMatrix;
use serde_json::value::RawValue;

use super::CliError;
use crate::mask::Mask;

/// Missing-value sentinel written by the filter command.
pub const SENTINEL: &str = "NA";

/// A numeric table with a header row. Missing cells are NaN in `values`
/// and `false` in `observed`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
    pub observed: Mask,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Result<usize, CliError> {
        self.names.iter().position(|n| n == name).ok_or_else(|| {
            CliError::Usage(format!(
                "column '{name}' not found; available: {}",
                self.names.join(", ")
            ))
        })
    }

    pub fn has_missing(&self) -> bool {
        !self.observed.is_all_observed()
    }
}

/// Parse comma-separated text with a header row. `allow_missing` accepts
/// `NA` and empty cells; otherwise they are data errors.
pub fn parse_csv(text: &str, allow_missing: bool) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("cannot read header: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if names.is_empty() || (names.len() == 1 && names[0].is_empty()) {
        return Err(CliError::Data("empty sample".into()));
    }
    let p = names.len();
    let mut cells = Vec::new();
    let mut seen = Vec::new();
    for (r, record) in reader.records().enumerate() {
        // Line numbers are 1-based and count the header.
        let line = r + 2;
        let record = record.map_err(|e| CliError::Data(format!("line {line}: {e}")))?;
        for (c, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() || field == SENTINEL {
                if !allow_missing {
                    return Err(CliError::Data(format!(
                        "line {line}, column {} ('{}'): missing value",
                        c + 1,
                        names[c]
                    )));
                }
                cells.push(f64::NAN);
                seen.push(false);
                continue;
            }
            let v: f64 = field.parse().map_err(|_| {
                CliError::Data(format!(
                    "line {line}, column {} ('{}'): cannot parse '{field}'",
                    c + 1,
                    names[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!(
                    "line {line}, column {} ('{}'): non-finite value",
                    c + 1,
                    names[c]
                )));
            }
            cells.push(v);
            seen.push(true);
        }
    }
    let n = cells.len() / p;
    if n == 0 {
        return Err(CliError::Data("empty sample".into()));
    }
    Ok(Table {
        names,
        values: DMatrix::from_row_slice(n, p, &cells),
        observed: Mask::from_fn(n, p, |i, j| seen[i * p + j]),
    })
}

pub fn read_csv(path: &Path, allow_missing: bool) -> Result<Table, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_csv(&text, allow_missing)
}

/// Shortest text that reads back to the same `f64`, used for CSV output.
pub fn exact(v: f64) -> String {
    format!("{v}")
}

/// Seventeen significant digits.
pub fn sig17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "Infinity".into()
    } else {
        "-Infinity".into()
    }
}

/// JSON number with seventeen significant digits; `null` for non-finite
/// values, which JSON cannot represent.
pub fn json_number(v: f64) -> Box<RawValue> {
    let text = if v.is_finite() { sig17(v) } else { "null".to_string() };
    RawValue::from_string(text).expect("formatted float is valid JSON")
}

pub fn json_numbers(values: impl IntoIterator<Item = f64>) -> Vec<Box<RawValue>> {
    values.into_iter().map(json_number).collect()
}

pub fn json_option(v: Option<f64>) -> Box<RawValue> {
    json_number(v.unwrap_or(f64::NAN))
}

/// Three decimals, or scientific notation for tiny nonzero magnitudes.
pub fn fixed3(v: f64) -> String {
    if v != 0.0 && v.abs() < 5e-4 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_with_sentinel() {
        let t = parse_csv("a,b\n1,NA\n,2.5\n", true).unwrap();
        assert_eq!(t.values.shape(), (2, 2));
        assert!(!t.observed.get(0, 1) && !t.observed.get(1, 0));
        assert_eq!(t.values[(1, 1)], 2.5);
        assert!(parse_csv("a,b\n1,NA\n", false).is_err());
    }

    #[test]
    fn parse_errors_name_the_cell() {
        let err = parse_csv("a,b\n1,2\n3,x\n", false).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("'b'"), "{err}");
        assert_eq!(
            parse_csv("", false).unwrap_err().to_string(),
            "data error: empty sample"
        );
        assert_eq!(
            parse_csv("a,b\n", false).unwrap_err().to_string(),
            "data error: empty sample"
        );
    }

    #[test]
    fn number_formats() {
        assert_eq!(sig17(0.1), "1.0000000000000001e-1");
        assert_eq!(sig17(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(json_number(f64::NAN).get(), "null");
        assert_eq!(fixed3(2.0), "2.000");
        assert_eq!(exact(0.1), "0.1");
    }
}
