//! Binary index cache.
//!
//! Layout: the magic bytes `NLX1`, a little-endian `u32` format version, then
//! a sequence of sections. Each section is a `u16` name length, the UTF-8
//! name, a `u64` payload length and the payload. Readers skip sections they do
//! not know. Known sections:
//!
//! * `lang`: UTF-8 language code
//! * `digest`: UTF-8 fingerprint of the source lexicon (may be empty)
//! * `entries`: `u64` count, then per entry `u32` cui, `u8` preferred flag,
//!   `u32` text length and the normalized UTF-8 text

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{normalize_term, IndexEntry, TermIndex};
use crate::terminology::ConceptId;

pub const CACHE_MAGIC: &[u8; 4] = b"NLX1";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("index cache I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an index cache (bad magic)")]
    BadMagic,
    #[error("unsupported index cache version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt index cache: {0}")]
    Corrupt(String),
}

/// Hex SHA-256 of arbitrary content, used to tie a cache to its lexicon.
pub fn content_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn push_section(out: &mut Vec<u8>, name: &str, payload: &[u8]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

pub fn write_index_cache(index: &TermIndex, digest: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    push_section(&mut out, "lang", index.lang.as_bytes());
    push_section(&mut out, "digest", digest.as_bytes());
    let mut entries = Vec::new();
    entries.extend_from_slice(&(index.entries.len() as u64).to_le_bytes());
    for e in &index.entries {
        entries.extend_from_slice(&e.cui.numeric_value().to_le_bytes());
        entries.push(u8::from(e.preferred));
        entries.extend_from_slice(&(e.term.text.len() as u32).to_le_bytes());
        entries.extend_from_slice(e.term.text.as_bytes());
    }
    push_section(&mut out, "entries", &entries);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CacheError> {
        if self.buf.len() < n {
            return Err(CacheError::Corrupt("truncated".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, CacheError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CacheError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CacheError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CacheError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self, n: usize) -> Result<&'a str, CacheError> {
        std::str::from_utf8(self.take(n)?).map_err(|_| CacheError::Corrupt("invalid utf-8".into()))
    }
}

/// Parses a cache, returning the index and the stored lexicon digest.
pub fn read_index_cache(bytes: &[u8]) -> Result<(TermIndex, String), CacheError> {
    let mut r = Reader { buf: bytes };
    if r.take(4).map_err(|_| CacheError::BadMagic)? != CACHE_MAGIC {
        return Err(CacheError::BadMagic);
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(CacheError::UnsupportedVersion(version));
    }
    let (mut lang, mut digest, mut entries) = (None, None, None);
    while !r.buf.is_empty() {
        let name_len = r.u16()? as usize;
        let name = r.str(name_len)?;
        let len = usize::try_from(r.u64()?).map_err(|_| CacheError::Corrupt("section too large".into()))?;
        let payload = r.take(len)?;
        match name {
            "lang" => lang = Some(Reader { buf: payload }.str(len)?.to_string()),
            "digest" => digest = Some(Reader { buf: payload }.str(len)?.to_string()),
            "entries" => entries = Some(read_entries(payload)?),
            _ => {}
        }
    }
    let lang = lang.ok_or_else(|| CacheError::Corrupt("missing lang section".into()))?;
    let entries = entries.ok_or_else(|| CacheError::Corrupt("missing entries section".into()))?;
    Ok((TermIndex::from_entries(&lang, entries), digest.unwrap_or_default()))
}

fn read_entries(payload: &[u8]) -> Result<Vec<IndexEntry>, CacheError> {
    let mut r = Reader { buf: payload };
    let count = r.u64()?;
    let mut entries = Vec::new();
    let mut prev: Option<(ConceptId, String)> = None;
    for _ in 0..count {
        let cui = ConceptId::new(r.u32()?).ok_or_else(|| CacheError::Corrupt("cui out of range".into()))?;
        let preferred = match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(CacheError::Corrupt("bad preferred flag".into())),
        };
        let len = r.u32()? as usize;
        let text = r.str(len)?;
        let term = normalize_term(text);
        if term.text != text || term.is_empty() {
            return Err(CacheError::Corrupt("entry text is not normalized".into()));
        }
        let key = (cui, term.text.clone());
        if prev.as_ref().is_some_and(|p| *p >= key) {
            return Err(CacheError::Corrupt("entries out of order".into()));
        }
        prev = Some(key);
        entries.push(IndexEntry { term, cui, preferred });
    }
    if !r.buf.is_empty() {
        return Err(CacheError::Corrupt("trailing bytes in entries".into()));
    }
    Ok(entries)
}

pub fn save_index_cache(index: &TermIndex, digest: &str, path: impl AsRef<Path>) -> Result<(), CacheError> {
    fs::write(path, write_index_cache(index, digest))?;
    Ok(())
}

pub fn load_index_cache(path: impl AsRef<Path>) -> Result<(TermIndex, String), CacheError> {
    read_index_cache(&fs::read(path)?)
}
