//! CSV output. Files start with optional `# key=value` lines, then a
//! header row naming every column.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub struct CsvOut {
    inner: csv::Writer<BufWriter<File>>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

impl CsvOut {
    pub fn create(path: &Path, comments: &[(String, String)], header: &[&str]) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        for (k, v) in comments {
            writeln!(w, "# {k}={v}")?;
        }
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(header).map_err(csv_err)?;
        Ok(Self { inner })
    }

    /// Opens an existing file for appending rows; creates it like
    /// [`CsvOut::create`] when missing.
    pub fn append(path: &Path, comments: &[(String, String)], header: &[&str]) -> Result<Self> {
        if !path.exists() {
            return Self::create(path, comments, header);
        }
        let f = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            inner: csv::WriterBuilder::new().from_writer(BufWriter::new(f)),
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(csv_err)
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Writes rows of numbers under `header`.
pub fn write_numeric(path: &Path, comments: &[(String, String)], header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = CsvOut::create(path, comments, header)?;
    for r in rows {
        out.row(r.iter().map(|v| v.to_string()))?;
    }
    out.finish()
}
