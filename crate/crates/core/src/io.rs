//! CSV formatting shared by every emitted table.

use std::io::Write;

use crate::error::Result;

/// Floating-point cell at 10 significant digits.
pub fn sig10(x: f64) -> String {
    if x == 0.0 {
        // Avoid "-0.000000000e0".
        return "0.000000000e0".to_string();
    }
    format!("{x:.9e}")
}

pub fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Write a header line and rows, each row already split into cells.
pub fn write_table<W: Write>(mut w: W, header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
