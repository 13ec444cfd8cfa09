//! Run directories, JSON reports and CSV tables.

use std::fmt::Display;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Wall-clock data. Nothing else in a report depends on when it was written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub created_unix_s: u64,
}

impl Metadata {
    pub fn now() -> Self {
        let created_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self { created_unix_s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport<R> {
    pub protocol: String,
    pub seed: u64,
    pub config: RunConfig,
    pub result: R,
    pub metadata: Metadata,
}

pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path, protocol: &str, seed: u64) -> Result<Self> {
        let path = root.join(format!("{protocol}-seed{seed}"));
        fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self { path })
    }

    fn open(&self, name: &str) -> Result<BufWriter<fs::File>> {
        let file = self.path.join(name);
        let f = fs::File::create(&file).with_context(|| format!("creating {}", file.display()))?;
        Ok(BufWriter::new(f))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut out = self.open(name)?;
        serde_json::to_writer_pretty(&mut out, value)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    /// Writes a header row and one row per item.
    pub fn write_csv<I>(&self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<Cell>>,
    {
        let mut out = self.open(name)?;
        writeln!(out, "{}", header.join(","))?;
        for row in rows {
            let line: Vec<String> = row.iter().map(Cell::to_string).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Hands a buffered file to a writer that emits its own CSV.
    pub fn write_with<F>(&self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
    {
        let mut out = self.open(name)?;
        f(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

/// One CSV field. Floats print as the shortest decimal that parses back exactly.
pub enum Cell {
    F(f64),
    U(u64),
    S(&'static str),
    Empty,
}

impl Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::F(x) => write!(f, "{x}"),
            Cell::U(x) => write!(f, "{x}"),
            Cell::S(s) => f.write_str(s),
            Cell::Empty => Ok(()),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<&'static str> for Cell {
    fn from(s: &'static str) -> Self {
        Cell::S(s)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::U(x as u64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::U(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::F)
    }
}

#[macro_export]
macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$($crate::output::Cell::from($x)),*] };
}
