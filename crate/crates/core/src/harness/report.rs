//! Plain-text outputs: versioned CSV tables and 8-bit PGM dumps.

use std::fmt::Debug;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// CSV with a `# sparsepet-<name> v<version>` schema line, a column line,
/// and optional `#` footer lines.
pub struct CsvTable {
    name: &'static str,
    version: u32,
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
    footer: Vec<String>,
}

impl CsvTable {
    pub fn new(name: &'static str, version: u32, columns: &[&'static str]) -> Self {
        Self {
            name,
            version,
            columns: columns.to_vec(),
            rows: Vec::new(),
            footer: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width for {}", self.name);
        self.rows.push(row);
    }

    pub fn footer(&mut self, line: impl Into<String>) {
        self.footer.push(line.into());
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# sparsepet-{} v{}", self.name, self.version)?;
        writeln!(w, "{}", self.columns.join(","))?;
        for r in &self.rows {
            writeln!(w, "{}", r.join(","))?;
        }
        for f in &self.footer {
            writeln!(w, "# {f}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest text that parses back to the same value; empty for `None`.
/// Shortest round-trip form; floats switch to exponent notation at the extremes.
pub fn num(v: impl Debug) -> String {
    format!("{v:?}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Data rows of a CSV written by [`CsvTable`], split on commas, with the
/// column names. Comment lines are skipped.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{} has no column line", path.display())))?;
    let columns = header.split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok((columns, rows))
}

/// 8-bit binary PGM windowed to the image's min..max, with the window
/// written to `<path>.txt`.
pub fn write_pgm(path: &Path, image: &Array2<f64>) -> Result<()> {
    let lo = image.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (h, w) = image.dim();
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = image.iter().map(|&v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    out.write_all(&bytes)?;
    out.flush()?;
    let mut side = path.as_os_str().to_owned();
    side.push(".txt");
    std::fs::write(side, format!("min={lo}\nmax={hi}\n"))?;
    Ok(())
}
