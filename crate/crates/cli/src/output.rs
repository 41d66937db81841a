//! CSV emission with a provenance header.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Rows collected in memory and written in one go, behind `#` comment lines
/// carrying the tool version, the config digest and the seed.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row<S: Into<String>>(&mut self, cells: impl IntoIterator<Item = S>) {
        self.rows.push(cells.into_iter().map(Into::into).collect());
    }

    /// A `key,value` row padded with empty cells to the table width.
    pub fn footer(&mut self, key: &str, value: impl ToString) {
        let mut cells = vec![key.to_string(), value.to_string()];
        cells.resize(self.header.len().max(2), String::new());
        self.rows.push(cells);
    }

    pub fn render(&self, digest: &str, seed: Option<u64>) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        writeln!(out, "# divboot {VERSION}")?;
        writeln!(out, "# config_sha256 {digest}")?;
        match seed {
            Some(s) => writeln!(out, "# seed {s}")?,
            None => writeln!(out, "# seed none")?,
        }
        {
            let mut w = csv::WriterBuilder::new().flexible(true).from_writer(&mut out);
            w.write_record(&self.header)?;
            for r in &self.rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        Ok(out)
    }

    /// Writes to `path`, or to standard output when `path` is `None`.
    pub fn emit(&self, path: Option<&Path>, digest: &str, seed: Option<u64>) -> Result<()> {
        let bytes = self.render(digest, seed)?;
        match path {
            Some(p) => {
                let file = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
                let mut w = BufWriter::new(file);
                w.write_all(&bytes)?;
                w.flush()?;
            }
            None => io::stdout().lock().write_all(&bytes)?,
        }
        Ok(())
    }
}

/// Shortest round-trip representation of a float.
pub fn num(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_and_footer() {
        let mut t = Table::new(["n", "log_phat", "stderr", "hits"]);
        t.row(["50", "-1.5", "0.01", "2000"]);
        t.footer("slope", -0.02);
        let text = String::from_utf8(t.render("abc", Some(7)).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("# divboot {VERSION}"));
        assert_eq!(lines[1], "# config_sha256 abc");
        assert_eq!(lines[2], "# seed 7");
        assert_eq!(lines[3], "n,log_phat,stderr,hits");
        assert_eq!(lines[5], "slope,-0.02,,");
    }
}
