//! Atomic output directories and CSV reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use imgtransport::fe::ImageField;
use tempfile::TempDir;

use crate::config::{Display, RunConfig};
use crate::io::save_image;

/// Written into every output directory; its presence marks a directory this
/// tool may replace.
pub const MANIFEST: &str = "run.json";

/// Files go to a hidden sibling of the target and are moved into place by
/// [`Staging::commit`]. Dropping without commit removes everything.
pub struct Staging {
    dir: TempDir,
    target: PathBuf,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self> {
        if target.exists() && !replaceable(target)? {
            bail!("{} exists and was not written by this tool; refusing to replace it", target.display());
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).with_context(|| format!("cannot create {}", parent.display()))?;
        let dir = tempfile::Builder::new()
            .prefix(".imgtransport-")
            .tempdir_in(&parent)
            .with_context(|| format!("cannot create a staging directory in {}", parent.display()))?;
        Ok(Self { dir, target: target.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn subdir(&self, name: &str) -> Result<PathBuf> {
        let p = self.path().join(name);
        std::fs::create_dir_all(&p).with_context(|| format!("cannot create {}", p.display()))?;
        Ok(p)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<()> {
        let p = self.path().join(name);
        std::fs::write(&p, contents).with_context(|| format!("cannot write {}", p.display()))
    }

    pub fn image(&self, name: &str, field: &ImageField, display: Display) -> Result<()> {
        Ok(save_image(field, &self.path().join(name), display)?)
    }

    pub fn commit(self, config: &RunConfig) -> Result<PathBuf> {
        self.write(MANIFEST, &(serde_json::to_string_pretty(config)? + "\n"))?;
        let staged = self.dir.keep();
        if self.target.exists() {
            std::fs::remove_dir_all(&self.target)
                .with_context(|| format!("cannot replace {}", self.target.display()))?;
        }
        if let Err(e) = std::fs::rename(&staged, &self.target) {
            let _ = std::fs::remove_dir_all(&staged);
            return Err(e).with_context(|| format!("cannot move results to {}", self.target.display()));
        }
        Ok(self.target)
    }
}

fn replaceable(target: &Path) -> Result<bool> {
    if !target.is_dir() {
        return Ok(false);
    }
    let mut entries = std::fs::read_dir(target)?;
    Ok(entries.next().is_none() || target.join(MANIFEST).is_file())
}

/// LF-terminated CSV with a fixed header. Floats use the shortest
/// round-trip representation, so identical runs give identical bytes.
#[derive(Debug)]
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { text: header.join(",") + "\n", columns: header.len() }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        assert_eq!(cells.len(), self.columns, "CSV row width");
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::Int(v) => write!(self.text, "{v}").unwrap(),
                Cell::Float(v) => write!(self.text, "{v:e}").unwrap(),
                Cell::Text(s) => self.text.push_str(s),
                Cell::Empty => {}
            }
        }
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

#[macro_export]
macro_rules! row {
    ($($v:expr),* $(,)?) => { &[$($crate::output::Cell::from($v)),*] };
}

pub fn frame_name(prefix: &str, i: usize) -> String {
    format!("{prefix}_{i:03}.png")
}
