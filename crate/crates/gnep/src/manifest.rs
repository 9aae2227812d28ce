//! Run manifests and the writers that stamp every output with them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub subcommand: String,
    pub scenario: Option<String>,
    pub scenario_sha256: Option<String>,
    /// Effective options after applying command-line overrides.
    pub options: BTreeMap<String, String>,
    pub out: Option<String>,
    pub seed: u64,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            scenario: None,
            scenario_sha256: None,
            options: BTreeMap::new(),
            out: None,
            seed,
        }
    }

    pub fn with_scenario(mut self, path: &Path, source: &str) -> Self {
        self.scenario = Some(path.display().to_string());
        self.scenario_sha256 = Some(sha256_hex(source.as_bytes()));
        self
    }

    pub fn option(&mut self, key: &str, value: impl ToString) {
        self.options.insert(key.to_string(), value.to_string());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Hash of everything but the output directory, so the same run written
    /// to two places stamps identical files.
    pub fn hash(&self) -> String {
        let placeless = Self { out: None, ..self.clone() };
        sha256_hex(placeless.to_json().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        write!(s, "{b:02x}").expect("writing to a string");
    }
    s
}

/// Fixed 17-significant-digit float formatting for CSV cells.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// CSV table with a `# manifest=… seed=…` first line.
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, manifest: &RunManifest) -> String {
        let mut out = format!("# manifest={} seed={}\n", manifest.hash(), manifest.seed);
        out.push_str(&self.header.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// Where a command's documents go: files in `--out`, or stdout.
pub struct Sink {
    dir: Option<PathBuf>,
    manifest: RunManifest,
}

impl Sink {
    pub fn new(dir: Option<PathBuf>, mut manifest: RunManifest) -> Result<Self, CliError> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| CliError::Input(format!("cannot create {}: {e}", d.display())))?;
            manifest.out = Some(d.display().to_string());
        }
        Ok(Self { dir, manifest })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn write(&self, name: &str, body: &str) -> Result<(), CliError> {
        match &self.dir {
            Some(d) => {
                let p = d.join(name);
                std::fs::write(&p, body).map_err(|e| CliError::Input(format!("cannot write {}: {e}", p.display())))?;
                log::info!("wrote {}", p.display());
                Ok(())
            }
            None => {
                print!("{body}");
                Ok(())
            }
        }
    }

    pub fn csv(&self, name: &str, table: &CsvTable) -> Result<(), CliError> {
        self.write(name, &table.render(&self.manifest))
    }

    /// Writes a JSON document with the manifest hash and seed added.
    pub fn json(&self, name: &str, mut doc: serde_json::Value) -> Result<(), CliError> {
        if let Some(obj) = doc.as_object_mut() {
            obj.insert("manifest".into(), self.manifest.hash().into());
            obj.insert("seed".into(), self.manifest.seed.into());
        }
        let mut body = serde_json::to_string_pretty(&doc).expect("json value serializes");
        body.push('\n');
        self.write(name, &body)
    }

    /// Writes `manifest.json` beside the outputs; a no-op without `--out`.
    pub fn finish(&self) -> Result<(), CliError> {
        if self.dir.is_some() {
            let mut body = self.manifest.to_json();
            body.push('\n');
            self.write("manifest.json", &body)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_options() {
        let mut a = RunManifest::new("solve", 7);
        let b = a.clone();
        assert_eq!(a.hash(), b.hash());
        a.option("tol", 1e-9);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let mut c = a.clone();
        c.out = Some("elsewhere".into());
        assert_eq!(a.hash(), c.hash());
    }

    #[test]
    fn floats_have_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn csv_starts_with_the_stamp() {
        let m = RunManifest::new("sweep", 3);
        let mut t = CsvTable::new(["a", "b"]);
        t.push(vec!["1".into(), "2".into()]);
        let s = t.render(&m);
        assert!(s.starts_with(&format!("# manifest={} seed=3\na,b\n1,2\n", m.hash())));
    }
}
