//! Minimal reader/writer helpers for the fixed-header numeric CSV formats.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Decimal places for every real-valued CSV column.
pub const DECIMALS: usize = 6;

pub fn fmt_f64(v: f64) -> String {
    let s = format!("{v:.DECIMALS$}");
    // avoid "-0.000000"
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Read a CSV file, check its header exactly and hand back the data rows with
/// their 1-based line numbers. Blank lines are skipped.
pub fn read_rows(path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rows(path, &text, header)
}

pub fn parse_rows(path: &Path, text: &str, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == header => {}
        Some((_, h)) => {
            return Err(Error::parse(
                path,
                1,
                format!("expected header '{header}', found '{h}'"),
            ))
        }
        None => return Err(Error::parse(path, 1, "empty file")),
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if fields.len() != width {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

pub fn parse_f64(path: &Path, line: usize, field: &str, name: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {name} '{field}'")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite {name}")));
    }
    Ok(v)
}

/// Write `header` followed by `rows`, each already comma-joined.
pub fn write_lines<I>(path: &Path, header: &str, rows: I) -> Result<()>
where
    I: IntoIterator<Item = String>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |s: &str| -> Result<()> {
        w.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    };
    put(header)?;
    for row in rows {
        put(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_zero_is_normalised() {
        assert_eq!(fmt_f64(-0.0000001), "0.000000");
        assert_eq!(fmt_f64(-1.5), "-1.500000");
        assert_eq!(fmt_f64(2.0), "2.000000");
    }

    #[test]
    fn wrong_width_names_line() {
        let err = parse_rows(Path::new("x.csv"), "a,b\n1,2\n3\n", "a,b").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }
}
