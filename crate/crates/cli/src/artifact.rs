//! Output locations, artifact headers and file helpers.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use netside::trace::io::{split_preamble, write_preamble};
use netside::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Default output directory when `--out` is not given.
pub const OUT_DIR_ENV: &str = "NETSIDE_OUT_DIR";

/// Per-invocation context: the seed plus the resolved config that goes into
/// every artifact header.
pub struct Ctx {
    pub seed: u64,
    pub command: String,
    pub config: serde_json::Value,
}

impl Ctx {
    pub fn header(&self) -> Vec<String> {
        vec![
            format!("tool: netside {}", env!("CARGO_PKG_VERSION")),
            format!("command: {}", self.command),
            format!("config: {}", self.config),
            format!("seed: {}", self.seed),
        ]
    }

    fn header_with(&self, extra: &[String]) -> Vec<String> {
        let mut h = self.header();
        h.extend(extra.iter().cloned());
        h
    }

    /// `explicit` as given, otherwise `name` inside the default directory.
    pub fn out_path(&self, explicit: Option<&Path>, name: &str) -> PathBuf {
        match explicit {
            Some(p) => p.to_path_buf(),
            None => out_dir().join(name),
        }
    }

    /// Writes `# ` header lines, then `body`.
    pub fn write_text(&self, path: &Path, extra: &[String], body: &str) -> Result<()> {
        let mut w = create(path)?;
        write_preamble(&mut w, &self.header_with(extra))?;
        w.write_all(body.as_bytes()).map_err(|e| io_err(path, e))?;
        w.flush().map_err(|e| io_err(path, e))
    }

    /// JSON document carrying the header fields next to `result`.
    pub fn write_json<T: Serialize>(&self, path: &Path, result: &T) -> Result<()> {
        let doc = serde_json::json!({
            "tool": format!("netside {}", env!("CARGO_PKG_VERSION")),
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "result": result,
        });
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &doc)?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
        w.flush().map_err(|e| io_err(path, e))
    }

    /// Header plus whatever `f` writes.
    pub fn write_with(&self, path: &Path, f: impl FnOnce(&mut BufWriter<File>, &[String]) -> Result<()>) -> Result<()> {
        let mut w = create(path)?;
        f(&mut w, &self.header())?;
        w.flush().map_err(|e| io_err(path, e))
    }
}

pub fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

pub fn io_err(path: &Path, e: io::Error) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| io_err(path, e))
}

/// The `result` member of a document written by [`Ctx::write_json`].
pub fn read_json_result<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let doc: serde_json::Value = serde_json::from_str(&read_text(path)?)?;
    let result =
        doc.get("result").cloned().ok_or_else(|| Error::Schema(format!("{}: no `result` member", path.display())))?;
    Ok(serde_json::from_value(result)?)
}

/// Value of a `# key: value` header line.
pub fn header_value(text: &str, key: &str) -> Option<String> {
    let (lines, _) = split_preamble(text);
    lines.iter().find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(':')).map(|v| v.trim().to_string()))
}
