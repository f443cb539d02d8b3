//! Track manifests, index construction and audio queries.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::audio::{load_audio, AudioBuffer};
use crate::error::{invalid, Error, Result};
use crate::fingerprint::{reduce_prints, Analyzer, Coder};
use crate::hashing::{CatalogIndex, IndexParams, Posting, TableBuilder, TrackInfo, DEFAULT_LSH_SEED, LSH_BITS, N_LSH};
use crate::reduction::ReductionModel;
use crate::search::{search, QueryOutcome, SearchConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub label: Option<String>,
}

/// Tab-separated `id, path[, label]` lines. Blank lines and `#` comments are
/// skipped; relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut f = line.split('\t');
            let id = f.next().unwrap_or("").trim();
            let path = f.next().map(str::trim).filter(|p| !p.is_empty());
            let (Some(path), false) = (path, id.is_empty()) else {
                return Err(Error::Format(format!("manifest line {}: expected `id<TAB>path[<TAB>label]`", no + 1)));
            };
            if !seen.insert(id.to_string()) {
                return Err(Error::Format(format!("manifest line {}: duplicate track id `{id}`", no + 1)));
            }
            let p = PathBuf::from(path);
            let path = if p.is_relative() { base.join(p) } else { p };
            let label = f.next().map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
            entries.push(ManifestEntry { id: id.to_string(), path, label });
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&e.id);
            s.push('\t');
            s.push_str(&e.path.to_string_lossy());
            if let Some(l) = &e.label {
                s.push('\t');
                s.push_str(l);
            }
            s.push('\n');
        }
        s
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexConfig {
    pub l_prime: usize,
    pub segment_s: f64,
    pub lsh_seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self { l_prime: 10, segment_s: 15.0, lsh_seed: DEFAULT_LSH_SEED }
    }
}

struct TrackCodes {
    info: TrackInfo,
    n_prints: u64,
    codes: Vec<(u32, u16, u16)>,
}

fn track_codes(analyzer: &Analyzer, model: &ReductionModel, coder: &Coder, params: &IndexParams, id: &str, buf: &AudioBuffer) -> Result<TrackCodes> {
    let prints = analyzer.prints(buf)?;
    let reduced = reduce_prints(model, &prints)?;
    let mut codes = Vec::with_capacity(reduced.len() * params.l_prime as usize);
    for r in &reduced {
        let time = u16::try_from(r.frame).map_err(|_| invalid(format!("track `{id}` is too long to index")))?;
        let seg = params.segment_of(r.frame);
        for c in coder.index_codes(r, params.l_prime as usize)? {
            codes.push((c, seg, time));
        }
    }
    Ok(TrackCodes { info: TrackInfo { name: id.to_string(), duration_s: buf.duration() }, n_prints: reduced.len() as u64, codes })
}

/// Builds an index over every manifest entry.
pub fn build_index(manifest: &Manifest, model: &ReductionModel, cfg: &IndexConfig) -> Result<CatalogIndex> {
    if manifest.is_empty() {
        return Err(invalid("empty manifest"));
    }
    let analyzer = Analyzer::default();
    let params = index_params(model, cfg, analyzer.frame_rate())?;
    let coder = Coder::new(model, cfg.lsh_seed);
    let per_track: Vec<Result<TrackCodes>> = manifest
        .entries
        .par_iter()
        .map(|e| track_codes(&analyzer, model, &coder, &params, &e.id, &load_audio(&e.path)?))
        .collect();
    assemble(per_track, params)
}

fn index_params(model: &ReductionModel, cfg: &IndexConfig, frame_rate: f64) -> Result<IndexParams> {
    if cfg.l_prime == 0 || cfg.l_prime > N_LSH {
        return Err(invalid(format!("L' must be in 1..={N_LSH}")));
    }
    if !(cfg.segment_s > 0.0) {
        return Err(invalid("segment length must be positive"));
    }
    Ok(IndexParams {
        n_lsh: N_LSH as u16,
        l_prime: cfg.l_prime as u16,
        lsh_bits: LSH_BITS as u16,
        n_bands: model.n_bands() as u16,
        lsh_seed: cfg.lsh_seed,
        segment_s: cfg.segment_s,
        frame_rate,
        model_digest: model.digest(),
    })
}

fn assemble(per_track: Vec<Result<TrackCodes>>, params: IndexParams) -> Result<CatalogIndex> {
    if per_track.is_empty() {
        return Err(invalid("no tracks to index"));
    }
    if per_track.len() > u32::MAX as usize {
        return Err(invalid("too many tracks"));
    }
    let mut builder = TableBuilder::new();
    let mut tracks = Vec::with_capacity(per_track.len());
    let mut n_prints = 0;
    for (i, t) in per_track.into_iter().enumerate() {
        let t = t?;
        for (code, segment, time) in t.codes {
            builder.insert(code, Posting { track: i as u32, segment, time })?;
        }
        n_prints += t.n_prints;
        tracks.push(t.info);
    }
    Ok(CatalogIndex { params, tracks, table: builder.freeze(), n_prints })
}

/// A loaded model and index ready to answer queries.
#[derive(Debug)]
pub struct Matcher<'a> {
    pub model: &'a ReductionModel,
    pub index: &'a CatalogIndex,
    analyzer: Analyzer,
    coder: Coder,
}

impl<'a> Matcher<'a> {
    pub fn new(model: &'a ReductionModel, index: &'a CatalogIndex) -> Result<Self> {
        if model.digest() != index.params.model_digest {
            return Err(Error::Mismatch("index was built with a different model".into()));
        }
        if model.n_bands() != index.params.n_bands as usize {
            return Err(Error::Mismatch("band count differs between model and index".into()));
        }
        Ok(Self { model, index, analyzer: Analyzer::default(), coder: Coder::new(model, index.params.lsh_seed) })
    }

    pub fn query(&self, excerpt: &AudioBuffer, cfg: &SearchConfig) -> Result<QueryOutcome> {
        if excerpt.duration() < self.analyzer.window_s() {
            return Err(Error::TooShort(format!(
                "query of {:.2} s is shorter than one {:.1} s print window",
                excerpt.duration(),
                self.analyzer.window_s()
            )));
        }
        if self.index.tracks.is_empty() {
            return Err(invalid("empty index"));
        }
        let prints = self.analyzer.prints(excerpt)?;
        if prints.is_empty() {
            return Err(Error::TooShort("no analysis time fits in the query".into()));
        }
        let reduced = reduce_prints(self.model, &prints)?;
        let fr = self.analyzer.frame_rate();
        let mut codes = Vec::with_capacity(reduced.len() * N_LSH);
        for r in &reduced {
            codes.extend(self.coder.query_codes(r, fr)?);
        }
        search(&codes, excerpt.duration(), self.index, cfg)
    }
}
