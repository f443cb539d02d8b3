//! The 24-bit extended hash table. Built with [`TableBuilder`], searched
//! through the immutable [`HashTable`] returned by `freeze`.

use crate::error::{invalid, Result};

pub const TABLE_BITS: u32 = 24;
pub const N_BUCKETS: usize = 1 << TABLE_BITS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Posting {
    pub track: u32,
    pub segment: u16,
    /// Anchor frame within the track.
    pub time: u16,
}

#[derive(Debug, Default, Clone)]
pub struct TableBuilder {
    entries: Vec<(u32, Posting)>,
}

impl TableBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, code: u32, posting: Posting) -> Result<()> {
        if code as usize >= N_BUCKETS {
            return Err(invalid(format!("code {code:#x} exceeds {TABLE_BITS} bits")));
        }
        self.entries.push((code, posting));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends another builder's entries; insertion order does not affect the frozen table.
    pub fn merge(&mut self, other: TableBuilder) {
        self.entries.extend(other.entries);
    }

    pub fn freeze(self) -> HashTable {
        let mut offsets = vec![0u32; N_BUCKETS + 1];
        for &(code, _) in &self.entries {
            offsets[code as usize + 1] += 1;
        }
        for i in 0..N_BUCKETS {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut postings = vec![Posting { track: 0, segment: 0, time: 0 }; self.entries.len()];
        for (code, p) in self.entries {
            let c = &mut cursor[code as usize];
            postings[*c as usize] = p;
            *c += 1;
        }
        for b in 0..N_BUCKETS {
            let (s, e) = (offsets[b] as usize, offsets[b + 1] as usize);
            if e - s > 1 {
                postings[s..e].sort_unstable();
            }
        }
        HashTable { offsets, postings }
    }
}

/// Immutable bucket directory over a flat posting array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashTable {
    offsets: Vec<u32>,
    postings: Vec<Posting>,
}

/// Bucket occupancy summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadStats {
    pub entries: usize,
    pub non_empty: usize,
    pub max_load: usize,
    /// `max_load` over the mean load of all buckets.
    pub max_over_mean: f64,
}

impl HashTable {
    pub fn from_parts(offsets: Vec<u32>, postings: Vec<Posting>) -> Result<Self> {
        if offsets.len() != N_BUCKETS + 1 || offsets[0] != 0 || *offsets.last().unwrap() as usize != postings.len() {
            return Err(crate::Error::Format("bucket directory does not match postings".into()));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(crate::Error::Format("bucket offsets are not monotone".into()));
        }
        Ok(Self { offsets, postings })
    }

    pub fn lookup(&self, code: u32) -> &[Posting] {
        let c = code as usize;
        if c >= N_BUCKETS {
            return &[];
        }
        &self.postings[self.offsets[c] as usize..self.offsets[c + 1] as usize]
    }

    pub fn len(&self) -> usize {
        self.postings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.postings.is_empty()
    }

    pub fn offsets(&self) -> &[u32] {
        &self.offsets
    }

    pub fn postings(&self) -> &[Posting] {
        &self.postings
    }

    pub fn load_stats(&self) -> LoadStats {
        let mut non_empty = 0;
        let mut max_load = 0;
        for w in self.offsets.windows(2) {
            let n = (w[1] - w[0]) as usize;
            if n > 0 {
                non_empty += 1;
                max_load = max_load.max(n);
            }
        }
        let mean = self.postings.len() as f64 / N_BUCKETS as f64;
        LoadStats {
            entries: self.postings.len(),
            non_empty,
            max_load,
            max_over_mean: if mean > 0.0 { max_load as f64 / mean } else { 0.0 },
        }
    }

    /// Histogram of bucket sizes: `hist[n]` buckets hold `n` postings
    /// (last entry aggregates everything at or above it).
    pub fn load_histogram(&self, cap: usize) -> Vec<usize> {
        let mut hist = vec![0usize; cap + 1];
        for w in self.offsets.windows(2) {
            hist[((w[1] - w[0]) as usize).min(cap)] += 1;
        }
        hist
    }
}
