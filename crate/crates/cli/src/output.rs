//! CSV and JSON artifacts. Every table starts with a `#` line naming the
//! triplet and the config hash, followed by a header row with units.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Provenance written on the first line of every artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub triplet: String,
    pub config_hash: String,
    pub verb: &'static str,
}

impl Provenance {
    fn comment(&self) -> String {
        format!(
            "# verb={} triplet={} config={}\n",
            self.verb, self.triplet, self.config_hash
        )
    }
}

/// A table assembled in memory and written in one go.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

/// Shortest round-trip representation; `NaN` for missing values.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x:?}")
    }
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self, prov: &Provenance) -> Result<String, CliError> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&self.header).map_err(io_error)?;
        for r in &self.rows {
            w.write_record(r).map_err(io_error)?;
        }
        let body = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        let mut text = prov.comment();
        text.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
        Ok(text)
    }
}

fn io_error(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

/// Collects artifacts of one command under `dir` with names `<stem>_<hash>.<ext>`.
#[derive(Debug)]
pub struct ArtifactWriter {
    pub dir: PathBuf,
    pub prov: Provenance,
    pub written: Vec<PathBuf>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path, prov: Provenance) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            prov,
            written: Vec::new(),
        })
    }

    fn path(&self, stem: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{stem}_{}.{ext}", self.prov.config_hash))
    }

    fn write(&mut self, path: PathBuf, text: &str) -> Result<PathBuf, CliError> {
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn table(&mut self, stem: &str, table: &Table) -> Result<PathBuf, CliError> {
        let text = table.render(&self.prov)?;
        let path = self.path(stem, "csv");
        self.write(path, &text)
    }

    pub fn json<T: Serialize>(&mut self, stem: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        let path = self.path(stem, "json");
        self.write(path, &text)
    }

    /// Writes text verbatim without the hash suffix.
    pub fn raw(&mut self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        self.write(path, text)
    }
}
