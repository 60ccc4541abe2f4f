//! Output directory: CSV/JSON artifacts hashed as they are written, plus a manifest.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use tbqkd::sim::sig9;
use tbqkd::Result;

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

/// Buffered file writer that hashes everything passing through it.
pub struct HashingWriter {
    inner: BufWriter<File>,
    hasher: Sha256,
}

impl Write for HashingWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
}

pub struct Artifacts {
    dir: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts { dir: dir.to_path_buf(), entries: Vec::new() })
    }

    /// Streams one artifact through `body` and records its hash.
    pub fn write<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut HashingWriter) -> Result<()>,
    {
        let mut w = HashingWriter { inner: BufWriter::new(File::create(self.dir.join(name))?), hasher: Sha256::new() };
        body(&mut w)?;
        w.flush()?;
        self.entries.push(ArtifactEntry { file: name.to_string(), sha256: hex(&w.hasher.finalize()) });
        Ok(())
    }

    /// CSV with a header row; floats are formatted by the caller.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        self.write(name, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(header)?;
            for r in rows {
                c.write_record(r)?;
            }
            c.flush()?;
            Ok(())
        })
    }

    /// Pretty JSON with every float rendered as an exact decimal string.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let v = exact_decimals(serde_json::to_value(value).map_err(|e| tbqkd::Error::Io(e.to_string()))?);
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, &v).map_err(|e| tbqkd::Error::Io(e.to_string()))?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    pub fn entries(&self) -> &[ArtifactEntry] {
        &self.entries
    }
}

/// Replaces JSON floats by their shortest round-trip decimal strings; integers stay numbers.
pub fn exact_decimals(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => Value::String(n.as_f64().map(|x| x.to_string()).unwrap_or_default()),
        Value::Array(a) => Value::Array(a.into_iter().map(exact_decimals).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, exact_decimals(v))).collect::<Map<_, _>>()),
        other => other,
    }
}

/// CSV cell with 9 significant digits.
pub fn cell(x: f64) -> String {
    sig9(x)
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub threads: usize,
    pub config_sha256: String,
    /// Rerun with `tbqkd <replay>` to regenerate every artifact bit for bit.
    pub replay: String,
    pub artifacts: &'a [ArtifactEntry],
}
