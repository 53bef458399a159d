//! Binary checkpoint, little-endian throughout:
//!
//! ```text
//! "GMCL"  u32 version
//! u32 length  UTF-8 text: configuration lines, then `state.<key> = <value>` lines
//! u32 tensor count
//! per tensor: u16 name length, UTF-8 name, u8 rank, u32 dims, f32 data
//! ```

use std::fmt::Write as _;
use std::path::Path;

use gmcl_core::training::Snapshot;
use gmcl_core::{RunConfig, RunState, Scalar, Tensor};

use crate::error::{read, write, GmclError, Result};

pub const MAGIC: &[u8; 4] = b"GMCL";
pub const VERSION: u32 = 1;
const STATE_PREFIX: &str = "state.";

pub fn encode<T: Scalar>(snapshot: &Snapshot<T>) -> Vec<u8> {
    let mut text = snapshot.config.to_text();
    for (k, v) in &snapshot.entries {
        let _ = writeln!(text, "{STATE_PREFIX}{k} = {v}");
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(snapshot.tensors.len() as u32).to_le_bytes());
    for (name, t) in &snapshot.tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(GmclError::format(self.path, format!("truncated checkpoint while reading {what} at byte {}", self.pos))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<&'a str> {
        let b = self.take(n, what)?;
        std::str::from_utf8(b).map_err(|_| GmclError::format(self.path, format!("{what} is not UTF-8")))
    }
}

pub fn decode<T: Scalar>(path: &Path, bytes: &[u8]) -> Result<Snapshot<T>> {
    let mut r = Reader { path, bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(GmclError::format(path, "not a GMCL checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(GmclError::format(path, format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("config length")? as usize;
    let text = r.utf8(len, "config text")?;
    let mut config_text = String::new();
    let mut entries = Vec::new();
    for line in text.lines() {
        match line.strip_prefix(STATE_PREFIX) {
            Some(rest) => {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| GmclError::format(path, format!("malformed state line `{line}`")))?;
                entries.push((k.trim().to_string(), v.trim().to_string()));
            }
            None => {
                config_text.push_str(line);
                config_text.push('\n');
            }
        }
    }
    let config = RunConfig::parse(&config_text).map_err(|e| GmclError::format(path, format!("embedded configuration: {e}")))?;
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = r.u16("tensor name length")? as usize;
        let name = r.utf8(name_len, "tensor name")?.to_string();
        let rank = r.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| GmclError::format(path, "tensor too large"))?, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| T::from_f64_lossy(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        tensors.push((name, Tensor::from_vec(&shape, data)));
    }
    if r.pos != bytes.len() {
        return Err(GmclError::format(path, format!("{} trailing bytes after the last tensor", bytes.len() - r.pos)));
    }
    Ok(Snapshot { config, entries, tensors })
}

pub fn save<T: Scalar>(path: &Path, state: &RunState<T>) -> Result<()> {
    write(path, &encode(&state.snapshot()))
}

pub fn load_snapshot<T: Scalar>(path: &Path) -> Result<Snapshot<T>> {
    decode(path, &read(path)?)
}

pub fn load<T: Scalar>(path: &Path) -> Result<RunState<T>> {
    let snapshot = load_snapshot(path)?;
    RunState::from_snapshot(snapshot).map_err(|e| match e {
        gmcl_core::Error::Input(m) | gmcl_core::Error::Config(m) => GmclError::format(path, m),
        other => GmclError::format(path, other.to_string()),
    })
}
