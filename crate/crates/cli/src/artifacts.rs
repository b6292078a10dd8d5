//! Output files. Every artifact opens with a comment line carrying the
//! config hash; CSV numbers are written with 17 significant digits.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::manifest::OutputRecord;
use crate::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Environment variable naming the output directory when `--out` is absent.
pub const OUT_ENV: &str = "MINSEMI_OUT";
pub const DEFAULT_OUT: &str = "minsemi-out";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn header(subcommand: &str, hash: &str, what: &str) -> String {
    format!("# minsemi {VERSION} {subcommand} config_hash={hash}\n# {what}\n")
}

/// Pull the hash back out of an artifact's first line.
pub fn hash_from_header(text: &str) -> Option<&str> {
    let first = text.lines().next()?.strip_prefix('#')?;
    first.split_whitespace().find_map(|w| w.strip_prefix("config_hash="))
}

/// Round-trippable number: 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Six significant digits for terminal tables.
pub fn human(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let e = v.abs().log10().floor() as i32;
    if (-4..6).contains(&e) {
        format!("{:.*}", (5 - e).max(0) as usize, v)
    } else {
        format!("{v:.5e}")
    }
}

pub fn print_table(title: &str, rows: &[(&str, f64)]) {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    println!("{title}");
    for (k, v) in rows {
        println!("  {k:<width$}  {}", human(*v));
    }
}

pub fn axis_columns(dim: usize) -> Vec<String> {
    (1..=dim).map(|k| format!("x{k}")).collect()
}

pub struct Artifacts {
    dir: PathBuf,
    subcommand: String,
    hash: String,
    written: Vec<OutputRecord>,
}

impl Artifacts {
    pub fn new(dir: &Path, subcommand: &str, hash: &str) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            subcommand: subcommand.to_string(),
            hash: hash.to_string(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn header(&self, what: &str) -> String {
        header(&self.subcommand, &self.hash, what)
    }

    pub fn outputs(&self) -> &[OutputRecord] {
        &self.written
    }

    /// Record a file already written into the output directory.
    pub fn register(&mut self, name: &str) -> CliResult<()> {
        let bytes = fs::read(self.dir.join(name))?;
        let rec = OutputRecord {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
        };
        match self.written.iter_mut().find(|r| r.path == name) {
            Some(r) => *r = rec,
            None => self.written.push(rec),
        }
        Ok(())
    }

    pub fn text(&mut self, name: &str, what: &str, body: &str) -> CliResult<()> {
        let mut s = self.header(what);
        s.push_str(body);
        fs::write(self.dir.join(name), s)?;
        self.register(name)
    }

    pub fn csv(&mut self, name: &str, what: &str, columns: &[String], rows: &[Vec<String>]) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(self.header(what).into_bytes());
        let csv_err = |e: csv::Error| CliError::Usage(format!("writing {name}: {e}"));
        w.write_record(columns).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Usage(format!("writing {name}: {e}")))?;
        fs::write(self.dir.join(name), bytes)?;
        self.register(name)
    }

    pub fn toml<T: Serialize>(&mut self, name: &str, what: &str, value: &T) -> CliResult<()> {
        let body = toml::to_string(value).map_err(|e| CliError::Usage(format!("serializing {name}: {e}")))?;
        self.text(name, what, &body)
    }
}
