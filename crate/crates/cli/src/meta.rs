//! Provenance stamped on every output file.
//!
//! CSV files open with `# key=value` comment lines; JSON documents carry the same
//! pairs under a `metadata` object. Nothing time-dependent is recorded, so a rerun of
//! the same configuration reproduces every file byte for byte.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use loss_gap::empirical::{RANK_TOL, RNG_NAME};
use loss_gap::reweight::{FEASIBILITY_TOL, OPTIMALITY_TOL, PIVOT_TOL};
use loss_gap::shift::BRACKET_TOL;
use loss_gap::SCHEMA_VERSION;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const TOOL: &str = concat!("loss-gap ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq)]
pub struct Metadata {
    entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn new(command: &str, master_seed: u64, config_hash: &str) -> Self {
        let mut m = Self { entries: Vec::new() };
        m.push("schema_version", SCHEMA_VERSION);
        m.push("tool", TOOL);
        m.push("command", command);
        m.push("master_seed", master_seed);
        m.push("rng", RNG_NAME);
        m.push("config_hash", format!("sha256:{config_hash}"));
        m.push("tol.lp_feasibility", FEASIBILITY_TOL);
        m.push("tol.lp_pivot", PIVOT_TOL);
        m.push("tol.lp_optimality", OPTIMALITY_TOL);
        m.push("tol.ols_rank", RANK_TOL);
        m.push("tol.shift_bracket", BRACKET_TOL);
        m
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write_comments<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(out, "# {k}={v}")?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let map: Map<String, Value> = self.entries.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
        Value::Object(map)
    }
}

/// Output directory plus the metadata every file in it carries.
#[derive(Debug, Clone)]
pub struct OutputSink {
    pub dir: PathBuf,
    pub meta: Metadata,
}

impl OutputSink {
    pub fn create(dir: PathBuf, meta: Metadata) -> CliResult<Self> {
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self { dir, meta })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// A buffered file that already holds the metadata comment block.
    pub fn text_file(&self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.path(name);
        let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(f);
        self.meta.write_comments(&mut w).map_err(|e| CliError::io(&path, e))?;
        Ok(w)
    }

    pub fn csv(&self, name: &str, header: &[&str]) -> CliResult<CsvOut> {
        let path = self.path(name);
        let mut w = csv::Writer::from_writer(self.text_file(name)?);
        w.write_record(header).map_err(|e| csv_err(&path, e))?;
        Ok(CsvOut { w, path })
    }

    /// Writes `{"schema_version", "metadata", ...body}` with a trailing newline.
    pub fn json<T: Serialize>(&self, name: &str, body: &T) -> CliResult<PathBuf> {
        let path = self.path(name);
        let mut doc = Map::new();
        doc.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
        doc.insert("metadata".into(), self.meta.to_json());
        match serde_json::to_value(body).map_err(|e| CliError::config(e.to_string()))? {
            Value::Object(fields) => doc.extend(fields),
            other => {
                doc.insert("body".into(), other);
            }
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(doc)).map_err(|e| CliError::config(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

pub struct CsvOut {
    w: csv::Writer<BufWriter<File>>,
    path: PathBuf,
}

impl CsvOut {
    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).map_err(|e| csv_err(&self.path, e))
    }

    pub fn finish(mut self) -> CliResult<PathBuf> {
        self.w.flush().map_err(|e| CliError::io(&self.path, e))?;
        Ok(self.path)
    }
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e.to_string()))
}

/// Shortest round-trip scientific notation.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Reads a CSV written by [`OutputSink::csv`], skipping the metadata block.
pub fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(|e| csv_err(path, e))?;
    Ok((header, rows))
}

/// Parses the `# key=value` block at the top of a file.
pub fn read_metadata(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(text
        .lines()
        .map_while(|l| l.strip_prefix("# "))
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect())
}
