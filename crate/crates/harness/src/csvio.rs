//! Minimal RFC-4180 CSV writing and reading.

use stampnet_core::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Quote a field if it contains a comma, quote, or line break.
pub fn escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') || field.contains('\r') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.iter().map(|h| escape(h)).collect::<Vec<_>>().join(","));
    out.push_str("\r\n");
    for row in rows {
        out.push_str(&row.iter().map(|f| escape(f)).collect::<Vec<_>>().join(","));
        out.push_str("\r\n");
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Parse a CSV file into (header, rows). Handles quoted fields, embedded
/// quotes, and CRLF/LF endings.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut field = String::new();
    let mut record = Vec::new();
    let mut in_quotes = false;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if in_quotes {
            match c {
                '"' if chars.peek() == Some(&'"') => {
                    chars.next();
                    field.push('"');
                }
                '"' => in_quotes = false,
                other => field.push(other),
            }
        } else {
            match c {
                '"' => in_quotes = true,
                ',' => record.push(std::mem::take(&mut field)),
                '\r' => {}
                '\n' => {
                    record.push(std::mem::take(&mut field));
                    records.push(std::mem::take(&mut record));
                }
                other => field.push(other),
            }
        }
    }
    if in_quotes {
        return Err(Error::Format { context: "csv", detail: "unterminated quoted field".into() });
    }
    if !field.is_empty() || !record.is_empty() {
        record.push(field);
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Format { context: "csv", detail: "empty file".into() });
    }
    let header = records.remove(0);
    Ok((header, records))
}

/// Parse one column as f64, skipping empty cells.
pub fn column_f64(header: &[String], rows: &[Vec<String>], name: &str) -> Result<Vec<f64>> {
    let idx = header.iter().position(|h| h == name).ok_or_else(|| Error::Format {
        context: "csv",
        detail: format!("missing column {name:?}"),
    })?;
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let cell = row.get(idx).map(|s| s.as_str()).unwrap_or("");
        if cell.is_empty() {
            continue;
        }
        out.push(cell.parse().map_err(|_| Error::Format {
            context: "csv",
            detail: format!("bad number {cell:?} in column {name:?}"),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("stampnet-csv");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_with_quoting() {
        let path = tmp("quoted.csv");
        let rows = vec![
            vec!["1".to_string(), "plain".to_string()],
            vec!["2".to_string(), "has,comma".to_string()],
            vec!["3".to_string(), "has \"quote\"".to_string()],
        ];
        write_csv(&path, &["id", "text"], &rows).unwrap();
        let (header, parsed) = read_csv(&path).unwrap();
        assert_eq!(header, vec!["id", "text"]);
        assert_eq!(parsed, rows);
    }

    #[test]
    fn numeric_column_skips_empty() {
        let path = tmp("nums.csv");
        let rows = vec![
            vec!["1".to_string(), "0.5".to_string()],
            vec!["2".to_string(), String::new()],
            vec!["3".to_string(), "1.25".to_string()],
        ];
        write_csv(&path, &["epoch", "mse"], &rows).unwrap();
        let (h, r) = read_csv(&path).unwrap();
        assert_eq!(column_f64(&h, &r, "mse").unwrap(), vec![0.5, 1.25]);
        assert!(column_f64(&h, &r, "missing").is_err());
    }
}
