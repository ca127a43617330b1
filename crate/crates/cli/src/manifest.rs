//! Run manifests and CSV output. Every CSV starts with the manifest as `#`
//! lines; timing lives on its own lines so bodies stay byte-identical
//! across reruns.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub struct Table {
    pub file: String,
    pub header: String,
    pub rows: Vec<String>,
    /// Extra `#` lines specific to this table.
    pub notes: Vec<String>,
}

impl Table {
    pub fn new(file: impl Into<String>, header: &str) -> Self {
        Self {
            file: file.into(),
            header: header.to_string(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, row: String) {
        self.rows.push(row);
    }
}

pub struct RunManifest {
    subcommand: &'static str,
    flags: String,
    seed: u64,
    started_unix: u64,
    start: Instant,
}

impl RunManifest {
    pub fn start(subcommand: &'static str, flags: String, seed: u64) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            subcommand,
            flags,
            seed,
            started_unix,
            start: Instant::now(),
        }
    }

    fn header(&self, outputs: &[PathBuf], duration: f64) -> String {
        let mut h = String::new();
        let _ = writeln!(h, "# tool: spikeseq {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(h, "# subcommand: {}", self.subcommand);
        let _ = writeln!(h, "# flags: {}", self.flags);
        let _ = writeln!(h, "# seed: {}", self.seed);
        let names: Vec<String> = outputs.iter().map(|p| p.display().to_string()).collect();
        let _ = writeln!(h, "# outputs: {}", names.join(" "));
        let _ = writeln!(h, "# started_unix: {}", self.started_unix);
        let _ = writeln!(h, "# duration_s: {duration:.3}");
        h
    }

    /// Writes every table into `out_dir` and returns the paths written.
    pub fn finish(self, out_dir: &Path, tables: &[Table]) -> Result<Vec<PathBuf>, String> {
        fs::create_dir_all(out_dir).map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
        let paths: Vec<PathBuf> = tables.iter().map(|t| out_dir.join(&t.file)).collect();
        let head = self.header(&paths, self.start.elapsed().as_secs_f64());
        for (t, path) in tables.iter().zip(&paths) {
            let mut s = head.clone();
            for n in &t.notes {
                let _ = writeln!(s, "# {n}");
            }
            s.push_str(&t.header);
            s.push('\n');
            for r in &t.rows {
                s.push_str(r);
                s.push('\n');
            }
            fs::write(path, s).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        }
        Ok(paths)
    }
}
