//! File output: atomic writes, field dumps and plot data.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::solver::ScalarField;

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// CSV with header `x,y,value,is_interior`, one row per grid node (row-major).
pub fn field_csv(field: &ScalarField) -> String {
    let g = &field.grid;
    let mut s = String::with_capacity(g.len() * 40);
    s.push_str("x,y,value,is_interior\n");
    for j in 0..g.ny {
        for i in 0..g.nx {
            let node = g.node(i, j);
            let _ = writeln!(s, "{},{},{},{}", g.x(i), g.y(j), field.values[node], u8::from(g.interior[node]));
        }
    }
    s
}

/// Little-endian binary: `u64 ny`, `u64 nx`, then `ny * nx` `f64` values with
/// `x` varying fastest.
pub fn field_binary(field: &ScalarField) -> Vec<u8> {
    let g = &field.grid;
    let mut out = Vec::with_capacity(16 + 8 * g.len());
    out.extend_from_slice(&(g.ny as u64).to_le_bytes());
    out.extend_from_slice(&(g.nx as u64).to_le_bytes());
    for v in &field.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_field_csv(field: &ScalarField, path: &Path) -> Result<()> {
    atomic_write(path, field_csv(field).as_bytes())
}

pub fn write_field_binary(field: &ScalarField, path: &Path) -> Result<()> {
    atomic_write(path, &field_binary(field))
}

/// Whitespace-separated columns with a `#` header line, readable by gnuplot.
pub fn dat_table(columns: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = format!("# {}\n", columns.join(" "));
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// Comma-separated table with a header row.
pub fn csv_table(columns: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = columns.join(",");
    s.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}
