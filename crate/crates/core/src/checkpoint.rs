//! Model checkpoint files.
//!
//! A checkpoint is a text manifest followed by raw parameter data:
//!
//! ```text
//! cpguard-checkpoint 1
//! kind detector
//! config <key> <value>        (zero or more)
//! param <name> <d0> <d1> ...  (one per tensor, in declared order)
//! end
//! <little-endian f32 blocks, one per param line, same order>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::Params;

pub const CHECKPOINT_MAGIC: &str = "cpguard-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: BTreeMap<String, String>,
    pub params: Params,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nkind {}\n", self.kind);
        for (k, v) in &self.config {
            head.push_str(&format!("config {k} {v}\n"));
        }
        for (name, t) in self.params.entries() {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            head.push_str(&format!("param {name} {}\n", dims.join(" ")));
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        for t in self.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, msg);
        let mut pos = 0;
        let mut next_line = || -> Result<String> {
            let rest = &bytes[pos..];
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated header".into()))?;
            let line = std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8".into()))?.to_string();
            pos += end + 1;
            Ok(line)
        };

        let first = next_line()?;
        let mut it = first.split(' ');
        if it.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("not a checkpoint file".into()));
        }
        let version: u32 = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("missing version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { expected: CHECKPOINT_VERSION, found: version });
        }

        let mut kind = None;
        let mut config = BTreeMap::new();
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        loop {
            let line = next_line()?;
            let mut parts = line.splitn(3, ' ');
            match parts.next() {
                Some("end") => break,
                Some("kind") => kind = parts.next().map(str::to_string),
                Some("config") => {
                    let k = parts.next().ok_or_else(|| bad("config line without key".into()))?;
                    config.insert(k.to_string(), parts.next().unwrap_or("").to_string());
                }
                Some("param") => {
                    let name = parts.next().ok_or_else(|| bad("param line without name".into()))?;
                    let dims = parts
                        .next()
                        .unwrap_or("")
                        .split(' ')
                        .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad dimension {d:?} for {name}"))))
                        .collect::<Result<Vec<_>>>()?;
                    shapes.push((name.to_string(), dims));
                }
                other => return Err(bad(format!("unexpected header entry {other:?}"))),
            }
        }
        let kind = kind.ok_or_else(|| bad("missing kind".into()))?;

        let mut offset = pos;
        let mut entries = Vec::with_capacity(shapes.len());
        for (name, dims) in shapes {
            let n: usize = dims.iter().product();
            let end = offset + 4 * n;
            if end > bytes.len() {
                return Err(bad(format!("truncated data for parameter {name}")));
            }
            let data = bytes[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            offset = end;
            entries.push((name, Tensor::new(&dims, data)?));
        }
        if offset != bytes.len() {
            return Err(bad(format!("{} trailing bytes after parameter data", bytes.len() - offset)));
        }
        Ok(Self { kind, config, params: Params::new(entries) })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn expect_kind(&self, kind: &str, path: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(Error::format(path, format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn config_value<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        self.config
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(path, format!("missing or invalid config entry {key}")))
    }
}
