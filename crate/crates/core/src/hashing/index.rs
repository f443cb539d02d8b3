//! The searchable catalog: hash table, parameters and track metadata,
//! with its binary file format.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::lsh::{LshSpec, LSH_BITS, N_LSH};
use super::table::{HashTable, Posting, N_BUCKETS};
use crate::binio::Reader;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BMIX";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexParams {
    pub n_lsh: u16,
    pub l_prime: u16,
    pub lsh_bits: u16,
    pub n_bands: u16,
    pub lsh_seed: u64,
    pub segment_s: f64,
    pub frame_rate: f64,
    /// Digest of the model the index was built with.
    pub model_digest: u64,
}

impl IndexParams {
    pub fn lsh_spec(&self) -> LshSpec {
        LshSpec::new(self.lsh_seed)
    }

    /// Segment containing anchor `frame`.
    pub fn segment_of(&self, frame: usize) -> u16 {
        ((frame as f64 / self.frame_rate) / self.segment_s).floor() as u16
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackInfo {
    pub name: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogIndex {
    pub params: IndexParams,
    pub tracks: Vec<TrackInfo>,
    pub table: HashTable,
    pub n_prints: u64,
}

impl CatalogIndex {
    pub fn lookup(&self, code: u32) -> &[Posting] {
        self.table.lookup(code)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let p = &self.params;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.tracks.len() as u32).to_le_bytes())?;
        w.write_all(&(self.table.len() as u64).to_le_bytes())?;
        w.write_all(&self.n_prints.to_le_bytes())?;
        for v in [p.n_lsh, p.l_prime, p.lsh_bits, p.n_bands] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&p.lsh_seed.to_le_bytes())?;
        w.write_all(&p.segment_s.to_le_bytes())?;
        w.write_all(&p.frame_rate.to_le_bytes())?;
        w.write_all(&p.model_digest.to_le_bytes())?;
        for &o in self.table.offsets() {
            w.write_all(&(o as u64).to_le_bytes())?;
        }
        for q in self.table.postings() {
            w.write_all(&q.track.to_le_bytes())?;
            w.write_all(&q.segment.to_le_bytes())?;
            w.write_all(&q.time.to_le_bytes())?;
        }
        for t in &self.tracks {
            w.write_all(&(t.name.len() as u32).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&t.duration_s.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not an index file (bad magic)".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Mismatch(format!("index version {version}, expected {VERSION}")));
        }
        let n_tracks = r.u32()? as usize;
        let n_postings = r.u64()? as usize;
        let n_prints = r.u64()?;
        let params = IndexParams {
            n_lsh: r.u16()?,
            l_prime: r.u16()?,
            lsh_bits: r.u16()?,
            n_bands: r.u16()?,
            lsh_seed: r.u64()?,
            segment_s: r.f64()?,
            frame_rate: r.f64()?,
            model_digest: r.u64()?,
        };
        if params.n_lsh as usize != N_LSH || params.lsh_bits as usize != LSH_BITS {
            return Err(Error::Mismatch("index uses a different code layout".into()));
        }
        let mut offsets = Vec::with_capacity(N_BUCKETS + 1);
        let raw = r.take((N_BUCKETS + 1) * 8)?;
        for c in raw.chunks_exact(8) {
            let v = u64::from_le_bytes(c.try_into().unwrap());
            offsets.push(u32::try_from(v).map_err(|_| Error::Format("bucket offset overflow".into()))?);
        }
        let raw = r.take(n_postings.checked_mul(8).ok_or_else(|| Error::Format("posting count overflow".into()))?)?;
        let postings = raw
            .chunks_exact(8)
            .map(|c| Posting {
                track: u32::from_le_bytes(c[0..4].try_into().unwrap()),
                segment: u16::from_le_bytes(c[4..6].try_into().unwrap()),
                time: u16::from_le_bytes(c[6..8].try_into().unwrap()),
            })
            .collect();
        let table = HashTable::from_parts(offsets, postings)?;
        let mut tracks = Vec::with_capacity(n_tracks);
        for _ in 0..n_tracks {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("track name is not UTF-8".into()))?;
            tracks.push(TrackInfo { name: name.to_string(), duration_s: r.f64()? });
        }
        if !r.at_end() {
            return Err(Error::Format("trailing bytes after index".into()));
        }
        if table.postings().iter().any(|p| p.track as usize >= n_tracks) {
            return Err(Error::Format("posting refers to an unknown track".into()));
        }
        Ok(Self { params, tracks, table, n_prints })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(std::fs::File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
