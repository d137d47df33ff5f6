//! The `GSW1` weights archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GSW1" | version: u16 | entries: u32
//! per entry: name_len: u32 | name: UTF-8 | ndim: u32 | dims: u64 * ndim | values: f64 * prod(dims)
//! checksum: u64   (FNV-1a 64 over every preceding byte)
//! ```

use std::collections::HashSet;
use std::fs;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const ARCHIVE_MAGIC: &[u8; 4] = b"GSW1";
pub const ARCHIVE_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadMode {
    /// Archive and model must hold exactly the same names and shapes.
    Strict,
    /// Load the names present in both; report the rest.
    ByName,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Model parameters absent from the archive.
    pub skipped: Vec<String>,
    /// Archive entries the model does not have.
    pub unused: Vec<String>,
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn encode(store: &ParamStore, keep: impl Fn(&str) -> bool) -> Vec<u8> {
    let entries: Vec<_> = store.iter().filter(|(_, p)| keep(&p.name)).collect();
    let mut out = Vec::new();
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (_, p) in entries {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Archive("truncated archive".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < 4 + 2 + 4 + 8 || &bytes[..4] != ARCHIVE_MAGIC {
        return Err(Error::Archive("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed = checksum(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let version = u16::from_le_bytes([body[4], body[5]]);
    if version != ARCHIVE_VERSION {
        return Err(Error::Archive(format!("unsupported version {version}")));
    }
    let mut r = Reader { bytes: body, pos: 6 };
    let count = r.u32()?;
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Archive("entry name is not UTF-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::Archive(format!("duplicate entry `{name}`")));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::Archive(format!("`{name}`: shape overflows")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Archive("size overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Archive(format!("`{name}`: {e}")))?;
        entries.push((name, t));
    }
    if r.pos != body.len() {
        return Err(Error::Archive("trailing bytes after the entry table".into()));
    }
    Ok(entries)
}

pub fn save_weights(store: &ParamStore, path: &Path) -> Result<()> {
    save_weights_subset(store, path, |_| true)
}

/// Saves only the parameters whose name passes `keep`.
pub fn save_weights_subset(store: &ParamStore, path: &Path, keep: impl Fn(&str) -> bool) -> Result<()> {
    fs::write(path, encode(store, keep)).map_err(|e| Error::io(path, e))
}

/// Loads an archive into `store`. Every check runs before the first write,
/// so on error the store is untouched.
pub fn load_weights(store: &mut ParamStore, path: &Path, mode: LoadMode) -> Result<LoadReport> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    apply(store, decode(&bytes)?, mode)
}

fn apply(store: &mut ParamStore, entries: Vec<(String, Tensor)>, mode: LoadMode) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut updates = Vec::new();
    let names: HashSet<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
    for (name, value) in entries.iter() {
        match store.id(name) {
            Some(id) => {
                let have = store.value(id).shape();
                if have != value.shape() {
                    return Err(Error::Archive(format!(
                        "`{name}`: archive shape {:?} != model shape {have:?}",
                        value.shape()
                    )));
                }
                updates.push((id, value.clone()));
                report.loaded.push(name.clone());
            }
            None => report.unused.push(name.clone()),
        }
    }
    report.skipped = store
        .iter()
        .filter(|(_, p)| !names.contains(p.name.as_str()))
        .map(|(_, p)| p.name.clone())
        .collect();
    if mode == LoadMode::Strict && !(report.skipped.is_empty() && report.unused.is_empty()) {
        return Err(Error::Archive(format!(
            "strict load: {} model parameters missing from archive, {} archive entries unknown (first: {:?})",
            report.skipped.len(),
            report.unused.len(),
            report.skipped.first().or(report.unused.first())
        )));
    }
    for (id, value) in updates {
        *store.value_mut(id) = value;
    }
    Ok(report)
}
