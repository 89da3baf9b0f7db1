//! Artifact writers. Every CSV file opens with comment lines carrying the
//! resolved configuration, so a table can be regenerated from its header.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::Value;

pub struct Output {
    dir: Option<PathBuf>,
    header: Value,
}

impl Output {
    pub fn new(dir: Option<PathBuf>, header: Value) -> Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(Self { dir, header })
    }

    fn header_lines(&self) -> String {
        format!("# etoc {}\n# config: {}\n", env!("CARGO_PKG_VERSION"), self.header)
    }

    /// CSV with the config header, written to `path`.
    pub fn csv_at(&self, path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        out.write_all(self.header_lines().as_bytes())?;
        Ok(csv::Writer::from_writer(out))
    }

    /// CSV named `name` inside the output directory, if there is one.
    pub fn csv(&self, name: &str) -> Result<Option<csv::Writer<BufWriter<File>>>> {
        self.dir.as_ref().map(|d| self.csv_at(&d.join(name))).transpose()
    }

    /// Prints the summary record and appends it to `summary.jsonl` in the
    /// output directory.
    pub fn summary(&self, mut record: Value) -> Result<()> {
        record["config"] = self.header.clone();
        let line = serde_json::to_string(&record)?;
        println!("{line}");
        if let Some(d) = &self.dir {
            let path = d.join("summary.jsonl");
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .with_context(|| format!("opening {}", path.display()))?;
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

/// JSON numbers cannot hold infinities; those become `null`.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}
