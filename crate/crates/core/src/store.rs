//! Binary embedding store.
//!
//! Layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "DPAE"
//! 4       4     u32 version (= 1)
//! 8       4     u32 dim
//! 12      8     u64 count
//! 20      ...   count * dim f32, row-major
//! ```
//!
//! Row ids live in a sidecar text file (`<path>.ids`), one id per line in row order.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::model::Document;

pub const MAGIC: [u8; 4] = *b"DPAE";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic bytes {found:?}, expected \"DPAE\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported store version {0}")]
    UnsupportedVersion(u32),
    #[error("file shorter than the {HEADER_LEN}-byte header ({0} bytes)")]
    TruncatedHeader(usize),
    #[error("truncated payload: header declares {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("payload has {extra} trailing bytes beyond the declared {expected}")]
    TrailingBytes { expected: u64, extra: u64 },
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("row for {id} has dimension {found}, store dimension is {expected}")]
    DimMismatch { id: String, expected: usize, found: usize },
    #[error("id sidecar lists {ids} ids but the store holds {rows} rows")]
    IdCountMismatch { ids: usize, rows: usize },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("unknown id {0}")]
    UnknownId(String),
}

/// Dense row-major embedding matrix addressed by string id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        Ok(Self { dim, ids: Vec::new(), data: Vec::new(), index: HashMap::new() })
    }

    pub fn from_documents(dim: usize, docs: &[Document]) -> Result<Self, StoreError> {
        let mut store = Self::new(dim)?;
        for d in docs {
            store.push(d.doc_id.clone(), &d.embedding)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, id: impl Into<String>, row: &[f32]) -> Result<usize, StoreError> {
        let id = id.into();
        if row.len() != self.dim {
            return Err(StoreError::DimMismatch { id, expected: self.dim, found: row.len() });
        }
        if self.index.contains_key(&id) {
            return Err(StoreError::DuplicateId(id));
        }
        let row_idx = self.ids.len();
        self.index.insert(id.clone(), row_idx);
        self.ids.push(id);
        self.data.extend_from_slice(row);
        Ok(row_idx)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn row_index(&self, id: &str) -> Result<usize, StoreError> {
        self.index.get(id).copied().ok_or_else(|| StoreError::UnknownId(id.to_string()))
    }

    pub fn get(&self, id: &str) -> Result<&[f32], StoreError> {
        Ok(self.row(self.row_index(id)?))
    }

    /// Serializes the binary payload (header plus rows) without ids.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a binary payload; ids are supplied separately in row order.
    pub fn from_bytes(bytes: &[u8], ids: Vec<String>) -> Result<Self, StoreError> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != MAGIC {
                return Err(StoreError::BadMagic { found: bytes[..4].to_vec() });
            }
            return Err(StoreError::TruncatedHeader(bytes.len()));
        }
        if bytes[..4] != MAGIC {
            return Err(StoreError::BadMagic { found: bytes[..4].to_vec() });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        let expected = count.checked_mul(dim as u64).and_then(|n| n.checked_mul(4)).unwrap_or(u64::MAX);
        let found = (bytes.len() - HEADER_LEN) as u64;
        if found < expected {
            return Err(StoreError::Truncated { expected, found });
        }
        if found > expected {
            return Err(StoreError::TrailingBytes { expected, extra: found - expected });
        }
        if ids.len() as u64 != count {
            return Err(StoreError::IdCountMismatch { ids: ids.len(), rows: count as usize });
        }
        let data: Vec<f32> =
            bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(StoreError::DuplicateId(id.clone()));
            }
        }
        Ok(Self { dim, ids, data, index })
    }
}

/// Path of the id sidecar belonging to a store file.
pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

pub fn save_store(store: &EmbeddingStore, path: &Path) -> Result<(), StoreError> {
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| StoreError::Io { path: p, source }
    };
    fs::write(path, store.to_bytes()).map_err(io_err(path))?;
    let sidecar = ids_path(path);
    let file = fs::File::create(&sidecar).map_err(io_err(&sidecar))?;
    let mut w = BufWriter::new(file);
    for id in &store.ids {
        writeln!(w, "{id}").map_err(io_err(&sidecar))?;
    }
    w.flush().map_err(io_err(&sidecar))?;
    Ok(())
}

pub fn load_store(path: &Path) -> Result<EmbeddingStore, StoreError> {
    let bytes = fs::read(path).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
    let sidecar = ids_path(path);
    let ids_text = fs::read_to_string(&sidecar).map_err(|source| StoreError::Io { path: sidecar.clone(), source })?;
    let ids = ids_text.lines().map(str::to_string).collect();
    EmbeddingStore::from_bytes(&bytes, ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basis2() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(2).unwrap();
        s.push("a", &[1.0, 0.0]).unwrap();
        s.push("b", &[0.0, 1.0]).unwrap();
        s
    }

    #[test]
    fn empty_store_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.dpae");
        let s = EmbeddingStore::new(4).unwrap();
        save_store(&s, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), HEADER_LEN as u64);
        assert_eq!(load_store(&path).unwrap(), s);
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.dpae");
        let p2 = dir.path().join("b.dpae");
        let s = basis2();
        save_store(&s, &p1).unwrap();
        let loaded = load_store(&p1).unwrap();
        assert_eq!(loaded, s);
        save_store(&loaded, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(fs::read(ids_path(&p1)).unwrap(), fs::read(ids_path(&p2)).unwrap());
    }

    #[test]
    fn truncated_mid_row_fails() {
        let bytes = basis2().to_bytes();
        let cut = &bytes[..bytes.len() - 2];
        let err = EmbeddingStore::from_bytes(cut, vec!["a".into(), "b".into()]).unwrap_err();
        assert!(matches!(err, StoreError::Truncated { expected: 16, found: 14 }), "{err}");
    }

    #[test]
    fn format_errors_are_distinct() {
        let mut bytes = basis2().to_bytes();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        let ids = || vec!["a".to_string(), "b".to_string()];
        assert!(matches!(EmbeddingStore::from_bytes(&bytes, ids()), Err(StoreError::TrailingBytes { extra: 4, .. })));
        let mut bad = basis2().to_bytes();
        bad[0] = b'X';
        assert!(matches!(EmbeddingStore::from_bytes(&bad, ids()), Err(StoreError::BadMagic { .. })));
        let mut ver = basis2().to_bytes();
        ver[4] = 2;
        assert!(matches!(EmbeddingStore::from_bytes(&ver, ids()), Err(StoreError::UnsupportedVersion(2))));
        assert!(matches!(
            EmbeddingStore::from_bytes(&basis2().to_bytes()[..10], ids()),
            Err(StoreError::TruncatedHeader(10))
        ));
        assert!(matches!(
            EmbeddingStore::from_bytes(&basis2().to_bytes(), vec!["a".into()]),
            Err(StoreError::IdCountMismatch { ids: 1, rows: 2 })
        ));
    }

    #[test]
    fn unknown_id_fails_loudly() {
        let s = basis2();
        assert_eq!(s.get("b").unwrap(), &[0.0, 1.0]);
        assert!(matches!(s.get("zzz"), Err(StoreError::UnknownId(_))));
    }

    #[test]
    fn push_rejects_wrong_dim_and_duplicates() {
        let mut s = basis2();
        assert!(matches!(s.push("c", &[1.0]), Err(StoreError::DimMismatch { .. })));
        assert!(matches!(s.push("a", &[1.0, 1.0]), Err(StoreError::DuplicateId(_))));
    }

    proptest! {
        #[test]
        fn declared_size_must_match_payload(dim in 1usize..6, count in 0usize..6, delta in -7i64..8) {
            let mut s = EmbeddingStore::new(dim).unwrap();
            for i in 0..count {
                s.push(format!("d{i}"), &vec![i as f32; dim]).unwrap();
            }
            let mut bytes = s.to_bytes();
            let ids: Vec<String> = s.ids().to_vec();
            if delta < 0 {
                let cut = (-delta) as usize;
                prop_assume!(cut <= bytes.len() - HEADER_LEN);
                bytes.truncate(bytes.len() - cut);
            } else {
                bytes.extend(std::iter::repeat_n(0u8, delta as usize));
            }
            let parsed = EmbeddingStore::from_bytes(&bytes, ids);
            prop_assert_eq!(parsed.is_ok(), delta == 0);
        }

        #[test]
        fn bytes_roundtrip(rows in proptest::collection::vec(proptest::collection::vec(any::<f32>(), 3), 0..8)) {
            let mut s = EmbeddingStore::new(3).unwrap();
            for (i, r) in rows.iter().enumerate() {
                s.push(format!("r{i}"), r).unwrap();
            }
            let back = EmbeddingStore::from_bytes(&s.to_bytes(), s.ids().to_vec()).unwrap();
            prop_assert_eq!(back.to_bytes(), s.to_bytes());
        }
    }
}
