//! JSONL command logs. The first line names the asset, start frame and
//! configuration; each accepted command follows with the step index at which
//! it was applied; a final line records where the session stopped.
//!
//! ```text
//! {"type":"session","asset":"plume.wsa","frame":1,"step_index":0,"config":{…}}
//! {"type":"command","seq":1,"at_step":0,"cmd":"set_wind","params":{…}}
//! {"type":"end","step_index":120}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::command::Command;
use super::session::Session;
use crate::error::{Error, Result};
use crate::solver::SimConfig;

pub struct CommandLog {
    out: BufWriter<File>,
}

impl CommandLog {
    pub(crate) fn create(
        path: impl AsRef<Path>,
        asset: &Path,
        frame: usize,
        config: &SimConfig,
        step_index: u64,
    ) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = json!({
            "type": "session",
            "asset": asset,
            "frame": frame,
            "step_index": step_index,
            "config": config,
        });
        writeln!(out, "{header}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub(crate) fn append(&mut self, seq: u64, at_step: u64, cmd: &Command) -> Result<()> {
        let line = json!({
            "type": "command",
            "seq": seq,
            "at_step": at_step,
            "cmd": cmd.name(),
            "params": cmd.params(),
        });
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }

    pub(crate) fn finish(&mut self, step_index: u64) -> Result<()> {
        writeln!(self.out, "{}", json!({ "type": "end", "step_index": step_index }))?;
        self.out.flush()?;
        Ok(())
    }
}

fn field<'a>(v: &'a Value, key: &str, line: usize) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| Error::Header(format!("log line {line}: missing `{key}`")))
}

fn as_u64(v: &Value, key: &str, line: usize) -> Result<u64> {
    field(v, key, line)?
        .as_u64()
        .ok_or_else(|| Error::Header(format!("log line {line}: `{key}` must be an unsigned integer")))
}

/// Rebuilds a session by re-applying a command log. Relative asset paths are
/// tried against the working directory, then against the log's directory.
pub fn replay(path: impl AsRef<Path>) -> Result<Session> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut session: Option<Session> = None;
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line)?;
        let kind = field(&v, "type", n)?.as_str().unwrap_or_default();
        match (kind, session.as_mut()) {
            ("session", None) => {
                let asset = PathBuf::from(field(&v, "asset", n)?.as_str().unwrap_or_default());
                let asset = if asset.is_relative() && !asset.exists() {
                    path.parent().map(|d| d.join(&asset)).unwrap_or(asset)
                } else {
                    asset
                };
                let config: SimConfig = serde_json::from_value(field(&v, "config", n)?.clone())?;
                let frame = as_u64(&v, "frame", n)? as usize;
                let mut s = Session::open(&asset, frame, config)?;
                s.run_until(as_u64(&v, "step_index", n)?)?;
                session = Some(s);
            }
            ("command", Some(s)) => {
                s.run_until(as_u64(&v, "at_step", n)?)?;
                let name = field(&v, "cmd", n)?.as_str().unwrap_or_default();
                let cmd = Command::parse(name, field(&v, "params", n)?, s.spec())?;
                s.apply(cmd)?;
            }
            ("end", Some(s)) => s.run_until(as_u64(&v, "step_index", n)?)?,
            (other, _) => {
                return Err(Error::Header(format!("log line {n}: unexpected `{other}` record")));
            }
        }
    }
    session.ok_or_else(|| Error::Header("empty command log".into()))
}
