//! Recognition rates of degraded catalog excerpts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio::load_audio;
use crate::catalog::{Manifest, Matcher};
use crate::degrade::{apply, grid_cell, Degradation};
use crate::error::{invalid, Error, Result};
use crate::hashing::{splitmix64, CatalogIndex};
use crate::reduction::ReductionModel;
use crate::search::SearchConfig;

pub const DEFAULT_GRID: [&str; 6] = ["white_noise", "pitch_up", "pitch_down", "stretch_slower", "stretch_faster", "equalizer"];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub queries: usize,
    pub duration_s: f64,
    pub seed: u64,
    /// `(degradation name, level)`; the clean cell is always evaluated first.
    pub cells: Vec<(String, u8)>,
    /// Codec command for the mp3 and scenario cells.
    pub codec: Option<String>,
    pub search: SearchConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            queries: 200,
            duration_s: 7.0,
            seed: 7,
            cells: grid(&DEFAULT_GRID, &[1, 2, 3]),
            codec: None,
            search: SearchConfig::default(),
        }
    }
}

/// Every name at every level.
pub fn grid(names: &[&str], levels: &[u8]) -> Vec<(String, u8)> {
    names.iter().flat_map(|n| levels.iter().map(move |&l| (n.to_string(), l))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub name: String,
    /// 0 for the clean cell.
    pub level: u8,
    pub spec: String,
    pub partial: bool,
    pub queries: usize,
    pub step1_hits: usize,
    pub step2_hits: usize,
    pub accepted_hits: usize,
}

impl CellResult {
    fn pct(&self, n: usize) -> f64 {
        100.0 * n as f64 / self.queries.max(1) as f64
    }

    pub fn step1_rate(&self) -> f64 {
        self.pct(self.step1_hits)
    }

    pub fn step2_rate(&self) -> f64 {
        self.pct(self.step2_hits)
    }

    pub fn accepted_rate(&self) -> f64 {
        self.pct(self.accepted_hits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryDetail {
    pub query: usize,
    pub cell: usize,
    pub truth: u32,
    pub offset_s: f64,
    pub step1_top: Option<u32>,
    pub step2_top: Option<u32>,
    pub score: f64,
    pub alpha: f64,
    pub delta_t_star: f64,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cells: Vec<CellResult>,
    pub details: Vec<QueryDetail>,
    pub runtime_s: f64,
}

impl EvalReport {
    pub fn cell(&self, name: &str, level: u8) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.name == name && c.level == level)
    }

    /// Machine-readable summary; runtime is left out so reruns compare equal.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("degradation\tlevel\tspec\tqueries\tstep1_pct\tstep2_pct\taccepted_pct\tpartial\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.2}\t{:.2}\t{:.2}\t{}",
                c.name,
                c.level,
                c.spec,
                c.queries,
                c.step1_rate(),
                c.step2_rate(),
                c.accepted_rate(),
                if c.partial { "partial" } else { "full" }
            );
        }
        s
    }

    pub fn details_tsv(&self, index: &CatalogIndex) -> String {
        let name = |t: Option<u32>| t.map_or("-".to_string(), |t| index.tracks[t as usize].name.clone());
        let mut s = String::from("query\tdegradation\tlevel\ttruth\toffset_s\tstep1_top\tstep2_top\tscore\talpha\tdelta_t_star\tmatched\n");
        for d in &self.details {
            let c = &self.cells[d.cell];
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.3}\t{}\t{}\t{:.2}\t{:.4}\t{:.3}\t{}",
                d.query,
                c.name,
                c.level,
                name(Some(d.truth)),
                d.offset_s,
                name(d.step1_top),
                name(d.step2_top),
                d.score,
                d.alpha,
                d.delta_t_star,
                d.matched
            );
        }
        s
    }

    /// Human-readable grid with runtime statistics.
    pub fn table(&self) -> String {
        let mut s = format!("{:<18} {:>5} {:>8} {:>8} {:>9}\n", "degradation", "level", "STEP1 %", "STEP2 %", "queries");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{:<18} {:>5} {:>8.1} {:>8.1} {:>9}{}",
                c.name,
                c.level,
                c.step1_rate(),
                c.step2_rate(),
                c.queries,
                if c.partial { "  (partial)" } else { "" }
            );
        }
        let n = self.details.len().max(1);
        let _ = writeln!(s, "{} queries in {:.1} s ({:.1} ms/query)", self.details.len(), self.runtime_s, 1e3 * self.runtime_s / n as f64);
        s
    }
}

struct CellPlan {
    name: String,
    level: u8,
    degradation: Degradation,
    partial: bool,
}

fn seed_for(seed: u64, query: usize, cell: usize) -> u64 {
    let mut s = seed ^ ((query as u64) << 20) ^ cell as u64;
    splitmix64(&mut s)
}

pub fn evaluate(manifest: &Manifest, index: &CatalogIndex, model: &ReductionModel, cfg: &EvalConfig) -> Result<EvalReport> {
    let started = Instant::now();
    if cfg.queries == 0 {
        return Err(invalid("query count must be positive"));
    }
    if !(cfg.duration_s > 0.0) {
        return Err(invalid("query duration must be positive"));
    }
    if manifest.len() != index.tracks.len() || manifest.entries.iter().zip(&index.tracks).any(|(e, t)| e.id != t.name) {
        return Err(Error::Mismatch("index was not built from this manifest".into()));
    }
    let matcher = Matcher::new(model, index)?;
    let mut plans = vec![CellPlan { name: "clean".into(), level: 0, degradation: Degradation::Identity, partial: false }];
    for (name, level) in &cfg.cells {
        if name == "clean" {
            continue;
        }
        let (degradation, partial) = grid_cell(name, *level, cfg.codec.as_deref())?;
        plans.push(CellPlan { name: name.clone(), level: *level, degradation, partial });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut by_track: BTreeMap<u32, Vec<(usize, f64)>> = BTreeMap::new();
    for q in 0..cfg.queries {
        let t = rng.random_range(0..index.tracks.len()) as u32;
        let room = (index.tracks[t as usize].duration_s - cfg.duration_s).max(0.0);
        let offset = (rng.random::<f64>() * room * 1000.0).floor() / 1000.0;
        by_track.entry(t).or_default().push((q, offset));
    }
    let groups: Vec<(u32, Vec<(usize, f64)>)> = by_track.into_iter().collect();
    let per_group: Vec<Result<Vec<QueryDetail>>> = groups
        .par_iter()
        .map(|(t, qs)| {
            let audio = load_audio(&manifest.entries[*t as usize].path)?;
            let mut out = Vec::with_capacity(qs.len() * plans.len());
            for &(q, offset) in qs {
                let excerpt = audio.slice_seconds(offset, cfg.duration_s);
                for (ci, plan) in plans.iter().enumerate() {
                    let degraded = apply(&plan.degradation, &excerpt, seed_for(cfg.seed, q, ci))?;
                    let mut d = QueryDetail {
                        query: q,
                        cell: ci,
                        truth: *t,
                        offset_s: offset,
                        step1_top: None,
                        step2_top: None,
                        score: 0.0,
                        alpha: 1.0,
                        delta_t_star: 0.0,
                        matched: false,
                    };
                    match matcher.query(&degraded, &cfg.search) {
                        Ok(o) => {
                            d.step1_top = o.step1_top();
                            d.step2_top = o.step2_top();
                            d.matched = o.matched;
                            if let Some(r) = o.results.first() {
                                d.score = r.score;
                                d.alpha = r.alpha;
                                d.delta_t_star = r.delta_t_star;
                            }
                        }
                        Err(Error::TooShort(_)) => {}
                        Err(e) => return Err(e),
                    }
                    out.push(d);
                }
            }
            Ok(out)
        })
        .collect();
    let mut details = Vec::with_capacity(cfg.queries * plans.len());
    for g in per_group {
        details.extend(g?);
    }
    details.sort_by_key(|d| (d.query, d.cell));

    let mut cells: Vec<CellResult> = plans
        .iter()
        .map(|p| CellResult {
            name: p.name.clone(),
            level: p.level,
            spec: p.degradation.to_string(),
            partial: p.partial,
            queries: 0,
            step1_hits: 0,
            step2_hits: 0,
            accepted_hits: 0,
        })
        .collect();
    for d in &details {
        let c = &mut cells[d.cell];
        c.queries += 1;
        c.step1_hits += (d.step1_top == Some(d.truth)) as usize;
        c.step2_hits += (d.step2_top == Some(d.truth)) as usize;
        c.accepted_hits += (d.step2_top == Some(d.truth) && d.matched) as usize;
    }
    Ok(EvalReport { cells, details, runtime_s: started.elapsed().as_secs_f64() })
}
