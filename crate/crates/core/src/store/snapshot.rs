//! Binary snapshot format.
//!
//! ```text
//! "SGC1" | version u8 = 1 | partition_count u32
//! per partition: dim u32 | entry_count u64
//!   per entry: entry_id u64 | created_at_ms u64 | ttl_secs u64
//!              question_len u32 | question utf-8
//!              response_len u32 | response utf-8
//!              dim x f32
//! crc32 u32 over every preceding byte
//! ```
//!
//! All integers and floats are little-endian. Indexes are not persisted; they
//! are rebuilt on load by reinserting entries in `entry_id` order.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;

use super::{CacheEntry, Partition, SemanticStore, StoreError};
use crate::ann::HnswParams;
use crate::clock::Clock;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"SGC1";
pub const SNAPSHOT_VERSION: u8 = 0x01;

impl SemanticStore {
    /// Serializes every unexpired entry into snapshot bytes.
    ///
    /// All partitions are read-locked together so the snapshot is a consistent cut.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let now = self.clock.now_ms();
        let map = self.partitions.read();
        let guards: Vec<_> = map.values().map(|p| p.read()).collect();

        let mut buf = Vec::new();
        buf.extend_from_slice(SNAPSHOT_MAGIC);
        buf.push(SNAPSHOT_VERSION);
        buf.extend_from_slice(&(guards.len() as u32).to_le_bytes());
        for part in &guards {
            let live: Vec<&CacheEntry> = part
                .entries
                .values()
                .filter(|e| !e.is_expired(now))
                .collect();
            buf.extend_from_slice(&(part.dim as u32).to_le_bytes());
            buf.extend_from_slice(&(live.len() as u64).to_le_bytes());
            for e in live {
                buf.extend_from_slice(&e.entry_id.to_le_bytes());
                buf.extend_from_slice(&e.created_at_ms.to_le_bytes());
                buf.extend_from_slice(&e.ttl_secs.to_le_bytes());
                for text in [&e.question, &e.response] {
                    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
                    buf.extend_from_slice(text.as_bytes());
                }
                for v in &e.embedding {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn snapshot_write<W: Write>(&self, mut out: W) -> Result<u64, StoreError> {
        let bytes = self.snapshot_bytes();
        out.write_all(&bytes)?;
        out.flush()?;
        Ok(bytes.len() as u64)
    }

    /// Writes a snapshot to `path` via a temporary file and rename.
    pub fn snapshot_save(&self, path: impl AsRef<Path>) -> Result<u64, StoreError> {
        let path = path.as_ref();
        let bytes = self.snapshot_bytes();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, path)?;
        Ok(bytes.len() as u64)
    }

    pub fn snapshot_load(
        path: impl AsRef<Path>,
        params: HnswParams,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, StoreError> {
        let bytes = fs::read(path)?;
        Self::from_snapshot_bytes(&bytes, params, clock)
    }

    pub fn from_snapshot_bytes(
        bytes: &[u8],
        params: HnswParams,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, StoreError> {
        let partitions = decode(bytes)?;
        let store = SemanticStore::new(params, clock);
        let mut max_id = None;
        {
            let mut map = store.partitions.write();
            for (dim, mut entries) in partitions {
                if map.contains_key(&dim) {
                    return Err(corrupt(format!("duplicate partition for dim {dim}")));
                }
                entries.sort_by_key(|e| e.entry_id);
                let mut part = Partition::new(dim, params);
                for e in entries {
                    if part.entries.contains_key(&e.entry_id) {
                        return Err(corrupt(format!("duplicate entry id {}", e.entry_id)));
                    }
                    max_id = max_id.max(Some(e.entry_id));
                    part.insert(e)
                        .map_err(|err| corrupt(format!("unusable embedding: {err}")))?;
                }
                map.insert(dim, Arc::new(RwLock::new(part)));
            }
        }
        if let Some(id) = max_id {
            store
                .next_entry_id
                .store(id + 1, std::sync::atomic::Ordering::Relaxed);
        }
        Ok(store)
    }
}

fn corrupt(msg: impl Into<String>) -> StoreError {
    StoreError::CorruptSnapshot(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self, what: &str) -> Result<String, StoreError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        let s = std::str::from_utf8(raw).map_err(|_| corrupt(format!("{what} is not UTF-8")))?;
        if s.is_empty() {
            return Err(corrupt(format!("empty {what}")));
        }
        Ok(s.to_owned())
    }
}

fn decode(bytes: &[u8]) -> Result<Vec<(usize, Vec<CacheEntry>)>, StoreError> {
    const HEADER: usize = 4 + 1 + 4;
    if bytes.len() < HEADER + 4 {
        return Err(corrupt("file too short"));
    }
    if &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    if bytes[4] != SNAPSHOT_VERSION {
        return Err(corrupt(format!("unsupported version {}", bytes[4])));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(corrupt("checksum mismatch"));
    }

    let mut r = Reader { buf: body, pos: 5 };
    let partition_count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..partition_count {
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(corrupt("zero-dimension partition"));
        }
        let count = r.u64()?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let entry_id = r.u64()?;
            let created_at_ms = r.u64()?;
            let ttl_secs = r.u64()?;
            let question = r.text("question")?;
            let response = r.text("response")?;
            let raw = r.take(dim.checked_mul(4).ok_or_else(|| corrupt("dim overflow"))?)?;
            let embedding: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(CacheEntry {
                entry_id,
                question,
                response,
                embedding,
                created_at_ms,
                ttl_secs,
            });
        }
        out.push((dim, entries));
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes after last partition"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::vectorops::{normalize, Embedding};

    fn store() -> (SemanticStore, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::new(5_000));
        (SemanticStore::new(HnswParams::default(), clock.clone()), clock)
    }

    fn unit(v: &[f64]) -> crate::vectorops::UnitEmbedding {
        normalize(&Embedding::new(v.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn empty_store_is_header_only() {
        let (s, clock) = store();
        let bytes = s.snapshot_bytes();
        assert_eq!(bytes.len(), 4 + 1 + 4 + 4);
        assert_eq!(&bytes[..5], b"SGC1\x01");
        let loaded = SemanticStore::from_snapshot_bytes(&bytes, HnswParams::default(), clock).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn layout_is_bit_exact() {
        let (s, _) = store();
        let id = s.put("hi", &unit(&[0.6, 0.8]), "yo!", Some(7)).unwrap();
        let b = s.snapshot_bytes();
        let mut expect = Vec::new();
        expect.extend_from_slice(b"SGC1");
        expect.push(1);
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(&1u64.to_le_bytes());
        expect.extend_from_slice(&id.to_le_bytes());
        expect.extend_from_slice(&5_000u64.to_le_bytes());
        expect.extend_from_slice(&7u64.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        expect.extend_from_slice(b"hi");
        expect.extend_from_slice(&3u32.to_le_bytes());
        expect.extend_from_slice(b"yo!");
        expect.extend_from_slice(&0.6f32.to_le_bytes());
        expect.extend_from_slice(&0.8f32.to_le_bytes());
        let crc = crc32fast::hash(&expect);
        expect.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(b, expect);
    }

    #[test]
    fn expired_entries_are_omitted() {
        let (s, clock) = store();
        s.put("old", &unit(&[1., 0.]), "a", Some(1)).unwrap();
        let keep = s.put("new", &unit(&[0., 1.]), "b", Some(0)).unwrap();
        clock.advance_ms(1_500);
        let loaded =
            SemanticStore::from_snapshot_bytes(&s.snapshot_bytes(), HnswParams::default(), clock).unwrap();
        let ids: Vec<u64> = loaded.entries().iter().map(|e| e.entry_id).collect();
        assert_eq!(ids, vec![keep]);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let (s, clock) = store();
        s.put("q", &unit(&[1., 2., 3.]), "r", None).unwrap();
        let good = s.snapshot_bytes();
        let load = |b: &[u8]| SemanticStore::from_snapshot_bytes(b, HnswParams::default(), clock.clone());

        for cut in [0, 3, 8, 12, good.len() - 1] {
            assert!(matches!(load(&good[..cut]), Err(StoreError::CorruptSnapshot(_))), "cut {cut}");
        }
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(load(&bad_version), Err(StoreError::CorruptSnapshot(_))));
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(load(&bad_magic), Err(StoreError::CorruptSnapshot(_))));
        let mut flipped = good.clone();
        flipped[20] ^= 0xff;
        assert!(matches!(load(&flipped), Err(StoreError::CorruptSnapshot(_))));
    }

    #[test]
    fn truncated_body_with_valid_crc_is_rejected() {
        // Structurally short but correctly checksummed: claims one partition, has none.
        let mut b = Vec::new();
        b.extend_from_slice(b"SGC1\x01");
        b.extend_from_slice(&1u32.to_le_bytes());
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        let clock: Arc<dyn Clock> = Arc::new(ManualClock::new(0));
        assert!(matches!(
            SemanticStore::from_snapshot_bytes(&b, HnswParams::default(), clock),
            Err(StoreError::CorruptSnapshot(_))
        ));
    }

    #[test]
    fn next_id_continues_after_load() {
        let (s, clock) = store();
        for i in 0..3 {
            s.put("q", &unit(&[1., i as f64]), "r", None).unwrap();
        }
        let loaded =
            SemanticStore::from_snapshot_bytes(&s.snapshot_bytes(), HnswParams::default(), clock).unwrap();
        assert_eq!(loaded.put("q", &unit(&[0., 1.]), "r", None).unwrap(), 3);
    }

    #[test]
    fn missing_file_is_io_failure() {
        let clock: Arc<dyn Clock> = Arc::new(ManualClock::new(0));
        let err = SemanticStore::snapshot_load("/nonexistent/dir/snap.sgc", HnswParams::default(), clock)
            .unwrap_err();
        assert!(matches!(err, StoreError::IoFailure(_)));
    }
}
