use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::SampleRecord;
use super::split::SplitRanges;
use super::stats::DatasetStats;
use crate::error::{Error, Result};

pub const SHARD_MAGIC: [u8; 4] = *b"CPGB";
pub const FORMAT_VERSION: u32 = 1;
/// magic, version, C, H, W, record count.
pub const SHARD_HEADER_BYTES: usize = 24;
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub count: usize,
    pub records_per_shard: usize,
    pub shards: Vec<String>,
    pub seed: u64,
    /// SHA-256 of the generation config and detector parameters.
    pub config_digest: String,
    pub splits: SplitRanges,
    pub stats: DatasetStats,
}

impl Manifest {
    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version { expected: FORMAT_VERSION, found: self.format_version });
        }
        if self.dims().contains(&0) {
            return Err(Error::config("manifest dims must be positive"));
        }
        if !self.splits.is_partition_of(self.count) {
            return Err(Error::config(format!("split ranges {:?} do not partition {}", self.splits, self.count)));
        }
        if self.records_per_shard == 0 {
            return Err(Error::config("records_per_shard must be positive"));
        }
        if self.shards.len() != self.count.div_ceil(self.records_per_shard) {
            return Err(Error::config(format!("{} shard files for {} records", self.shards.len(), self.count)));
        }
        Ok(())
    }
}

/// Records in stored order (train, then val, then test) with their manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn train(&self) -> &[SampleRecord] {
        &self.records[self.manifest.splits.train.clone()]
    }

    pub fn val(&self) -> &[SampleRecord] {
        &self.records[self.manifest.splits.val.clone()]
    }

    pub fn test(&self) -> &[SampleRecord] {
        &self.records[self.manifest.splits.test.clone()]
    }
}

pub fn shard_name(index: usize) -> String {
    format!("shard-{index:05}.bin")
}

pub fn encode_shard(records: &[SampleRecord], dims: [usize; 3]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(SHARD_HEADER_BYTES + records.len() * SampleRecord::encoded_len(dims));
    out.extend_from_slice(&SHARD_MAGIC);
    for v in [FORMAT_VERSION, dims[0] as u32, dims[1] as u32, dims[2] as u32, records.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (i, r) in records.iter().enumerate() {
        r.validate(dims).map_err(|e| Error::Record { index: i, msg: e.to_string() })?;
        r.encode_into(&mut out);
    }
    Ok(out)
}

/// Decodes one shard; `first_index` numbers records in error messages.
pub fn decode_shard(bytes: &[u8], dims: [usize; 3], first_index: usize, path: &Path) -> Result<Vec<SampleRecord>> {
    if bytes.len() < SHARD_HEADER_BYTES {
        return Err(Error::format(path, "truncated shard header"));
    }
    if bytes[..4] != SHARD_MAGIC {
        return Err(Error::format(path, "bad shard magic"));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[4 * i], bytes[4 * i + 1], bytes[4 * i + 2], bytes[4 * i + 3]]);
    let version = word(1);
    if version != FORMAT_VERSION {
        return Err(Error::Version { expected: FORMAT_VERSION, found: version });
    }
    let found = [word(2) as usize, word(3) as usize, word(4) as usize];
    if found != dims {
        return Err(Error::format(path, format!("shard dims {found:?} differ from manifest {dims:?}")));
    }
    let count = word(5) as usize;
    let stride = SampleRecord::encoded_len(dims);
    let body = &bytes[SHARD_HEADER_BYTES..];
    if body.len() != count * stride {
        return Err(Error::format(path, format!("{} payload bytes for {count} records of {stride}", body.len())));
    }
    body.chunks_exact(stride).enumerate().map(|(i, c)| SampleRecord::decode(c, dims, first_index + i)).collect()
}

/// Writes shards and the manifest into `dir`.
pub fn write_shards(dataset: &Dataset, dir: &Path) -> Result<()> {
    let m = &dataset.manifest;
    m.validate()?;
    if dataset.records.len() != m.count {
        return Err(Error::config(format!("manifest count {} for {} records", m.count, dataset.records.len())));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, chunk) in m.shards.iter().zip(dataset.records.chunks(m.records_per_shard)) {
        let path = dir.join(name);
        fs::write(&path, encode_shard(chunk, m.dims())?).map_err(|e| Error::io(&path, e))?;
    }
    let text = toml::to_string(m).map_err(|e| Error::config(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path: PathBuf = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    m.validate()?;
    Ok(m)
}

pub fn read_shards(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mut records = Vec::with_capacity(manifest.count);
    for name in &manifest.shards {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        records.extend(decode_shard(&bytes, manifest.dims(), records.len(), &path)?);
    }
    if records.len() != manifest.count {
        return Err(Error::format(dir, format!("manifest lists {} records, shards hold {}", manifest.count, records.len())));
    }
    Ok(Dataset { manifest, records })
}
