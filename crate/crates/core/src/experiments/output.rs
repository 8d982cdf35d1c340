use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::io::write_png;
use crate::error::{Error, Result};
use crate::numfmt::fmt_f64;
use crate::tensor::ImageTensor;

/// A CSV cell.
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(v) => fmt_f64(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// Writes a header plus rows; floats use 17 significant digits.
pub fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<Cell>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    w.write_record(header).map_err(|e| Error::data(path, e.to_string()))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::invalid(format!(
                "csv row has {} cells for {} columns",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row.iter().map(Cell::render))
            .map_err(|e| Error::data(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Output directory of one command invocation; tracks the files written so
/// they can be listed in the metadata file.
pub struct RunDir {
    root: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path for a relative output name, creating parent directories.
    pub fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.written.push(rel.to_string());
        Ok(p)
    }

    pub fn csv(&mut self, rel: &str, header: &[&str], rows: Vec<Vec<Cell>>) -> Result<()> {
        let p = self.path(rel)?;
        write_csv(&p, header, rows)
    }

    /// Writes an image clipped to `[0, 1]`.
    pub fn png(&mut self, rel: &str, image: &ImageTensor) -> Result<()> {
        let p = self.path(rel)?;
        write_png(&p, image, 0.0, 1.0)
    }

    pub fn text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.path(rel)?;
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    /// Writes `metadata.json` listing every output and a command summary.
    pub fn finish(mut self, command: &str, summary: impl Serialize) -> Result<()> {
        #[derive(Serialize)]
        struct Metadata<'a, S> {
            command: &'a str,
            version: &'a str,
            outputs: &'a [String],
            summary: S,
        }
        self.written.sort();
        let meta = Metadata {
            command,
            version: env!("CARGO_PKG_VERSION"),
            outputs: &self.written,
            summary,
        };
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
        let p = self.root.join("metadata.json");
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }
}
