//! Binary cache of propagator tables `E(t_i, 0, xi_j)`.
//!
//! File layout: the magic bytes `DISPHYPT`, a little-endian `u64` header
//! length, the JSON header, then the payload of little-endian `f64` pairs
//! `(Re, Im)` in row-major `(t, xi, row, col)` order.

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::propagator::PropOptions;
use crate::symbol::ZoneParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const CACHE_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DISPHYPT";

/// Fundamental matrices on a (time, frequency) grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagatorTable {
    pub m: usize,
    pub times: Vec<f64>,
    pub xis: Vec<Vec<f64>>,
    /// Row-major `(t, xi, row, col)`.
    pub entries: Vec<C64>,
}

impl PropagatorTable {
    pub fn zeros(m: usize, times: Vec<f64>, xis: Vec<Vec<f64>>) -> Self {
        let len = times.len() * xis.len() * m * m;
        PropagatorTable { m, times, xis, entries: vec![C64::new(0.0, 0.0); len] }
    }

    fn offset(&self, ti: usize, xj: usize) -> usize {
        (ti * self.xis.len() + xj) * self.m * self.m
    }

    /// Row-major entries of `E(t_i, 0, xi_j)`.
    pub fn block(&self, ti: usize, xj: usize) -> &[C64] {
        let o = self.offset(ti, xj);
        &self.entries[o..o + self.m * self.m]
    }

    pub fn get(&self, ti: usize, xj: usize) -> CMat {
        CMat::from_row_slice(self.m, self.m, self.block(ti, xj))
    }

    pub fn set(&mut self, ti: usize, xj: usize, e: &CMat) {
        let m = self.m;
        let o = self.offset(ti, xj);
        for r in 0..m {
            for c in 0..m {
                self.entries[o + r * m + c] = e[(r, c)];
            }
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.entries.len() * 16);
        for z in &self.entries {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
        out
    }

    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.payload()))
    }
}

/// Everything that determines the content of a table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableKey {
    pub system_hash: String,
    pub zone: ZoneParams,
    pub m: usize,
    pub backend: String,
    pub times: Vec<f64>,
    pub xis: Vec<Vec<f64>>,
    pub tolerances: PropOptions,
}

impl TableKey {
    pub fn file_name(&self) -> String {
        let s = serde_json::to_string(self).expect("serialisable");
        format!("{}.bin", hex::encode(Sha256::digest(s.as_bytes())))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableHeader {
    pub version: u32,
    pub key: TableKey,
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheStatus {
    Disabled,
    Hit,
    Miss,
    /// The file was unusable and the table was recomputed.
    Recomputed(String),
    /// Written by another format version; ignored.
    Bypassed,
}

/// Cache location: `DISPHYP_CACHE_DIR`, else the user cache directory.
pub fn cache_dir() -> PathBuf {
    if let Some(d) = std::env::var_os("DISPHYP_CACHE_DIR") {
        return PathBuf::from(d);
    }
    if let Some(d) = std::env::var_os("XDG_CACHE_HOME") {
        return PathBuf::from(d).join("disphyp");
    }
    if let Some(h) = std::env::var_os("HOME") {
        return PathBuf::from(h).join(".cache").join("disphyp");
    }
    std::env::temp_dir().join("disphyp-cache")
}

pub fn write_table(path: &Path, key: &TableKey, table: &PropagatorTable) -> Result<()> {
    if table.m != key.m || table.times != key.times || table.xis != key.xis {
        return Err(Error::Cache("table does not match its key".into()));
    }
    let payload = table.payload();
    let header = TableHeader {
        version: CACHE_VERSION,
        key: key.clone(),
        checksum: hex::encode(Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Cache(e.to_string()))?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(MAGIC)?;
        f.write_all(&(json.len() as u64).to_le_bytes())?;
        f.write_all(&json)?;
        f.write_all(&payload)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a table written for `key`. `Ok(None)` means no usable file (absent
/// or another format version); corrupted or mismatched files are errors.
pub fn read_table(path: &Path, key: &TableKey) -> Result<Option<PropagatorTable>> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Cache(format!("{}: bad magic or truncated header", path.display())));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 16 + hlen {
        return Err(Error::Cache(format!("{}: truncated header", path.display())));
    }
    let raw: serde_json::Value =
        serde_json::from_slice(&bytes[16..16 + hlen]).map_err(|e| Error::Cache(format!("header: {e}")))?;
    let version = raw.get("version").and_then(|v| v.as_u64());
    if version != Some(CACHE_VERSION as u64) {
        log::warn!("cache file {} has version {:?}, expected {}; bypassing", path.display(), version, CACHE_VERSION);
        return Ok(None);
    }
    let header: TableHeader = serde_json::from_value(raw).map_err(|e| Error::Cache(format!("header: {e}")))?;
    if header.key != *key {
        return Err(Error::Cache(format!("{}: header hash mismatch", path.display())));
    }
    let payload = &bytes[16 + hlen..];
    let expected = key.times.len() * key.xis.len() * key.m * key.m * 16;
    if payload.len() != expected {
        return Err(Error::Cache(format!(
            "{}: payload has {} bytes, expected {expected}",
            path.display(),
            payload.len()
        )));
    }
    if hex::encode(Sha256::digest(payload)) != header.checksum {
        return Err(Error::Cache(format!("{}: payload checksum mismatch", path.display())));
    }
    let entries = payload
        .chunks_exact(16)
        .map(|c| {
            C64::new(
                f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
            )
        })
        .collect();
    Ok(Some(PropagatorTable { m: key.m, times: key.times.clone(), xis: key.xis.clone(), entries }))
}

/// Loads the table for `key` from `dir`, or computes and stores it. Unusable
/// cache files are reported and recomputed.
pub fn load_or_compute<F>(dir: Option<&Path>, key: &TableKey, compute: F) -> Result<(PropagatorTable, CacheStatus)>
where
    F: FnOnce() -> Result<PropagatorTable>,
{
    let Some(dir) = dir else {
        return Ok((compute()?, CacheStatus::Disabled));
    };
    let path = dir.join(key.file_name());
    let status = match read_table(&path, key) {
        Ok(Some(t)) => return Ok((t, CacheStatus::Hit)),
        Ok(None) if path.exists() => CacheStatus::Bypassed,
        Ok(None) => CacheStatus::Miss,
        Err(e) => {
            log::warn!("{e}; recomputing");
            CacheStatus::Recomputed(e.to_string())
        }
    };
    let table = compute()?;
    if let Err(e) = write_table(&path, key, &table) {
        log::warn!("could not write cache file {}: {e}", path.display());
    }
    Ok((table, status))
}
