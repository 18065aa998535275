use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Everything any subcommand may write into an output directory.
const OWNED: &[&str] = &[
    "summary.json",
    "summary.txt",
    "episodes",
    "simulate.json",
    "simulate.txt",
    "timelines",
    "gantt.txt",
    "gantt.svg",
    "sweep.json",
    "sweep.txt",
    "train_report.json",
    "train.txt",
    "intervals.json",
];

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    /// Creates `root`, refusing a non-empty directory unless `force` is set.
    /// With `force`, earlier outputs of this tool are removed first.
    pub fn prepare(root: &Path, force: bool) -> Result<Self, CliError> {
        if root.exists() {
            let occupied = fs::read_dir(root).map_err(|e| io(root, e))?.next().is_some();
            if occupied && !force {
                return Err(CliError::Config(format!(
                    "output directory {} is not empty; pass --force to overwrite",
                    root.display()
                )));
            }
            for name in OWNED {
                let p = root.join(name);
                if p.is_dir() {
                    fs::remove_dir_all(&p).map_err(|e| io(&p, e))?;
                } else if p.exists() {
                    fs::remove_file(&p).map_err(|e| io(&p, e))?;
                }
            }
        }
        fs::create_dir_all(root).map_err(|e| io(root, e))?;
        Ok(Self { root: root.to_owned() })
    }

    pub fn write(&self, rel: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| io(&path, e))
    }

    pub fn write_json(&self, rel: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        self.write(rel, text)
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Left-aligned first column, right-aligned numbers.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                s.push_str(&format!("{cell:<w$}"));
            } else {
                s.push_str(&format!("  {cell:>w$}"));
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(header.to_vec());
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

pub fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.digits$}"))
}
