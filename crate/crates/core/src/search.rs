//! Two-step retrieval: segment-wise code counting to pick candidates, then
//! time-coherence analysis of matching (reference, query) time pairs.

use std::collections::BTreeMap;

use crate::error::{invalid, Result};
use crate::hashing::CatalogIndex;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Coherence margin and histogram bin width in seconds.
    pub sigma: f64,
    /// Largest accepted stretch factor (> 1).
    pub alpha_max: f64,
    pub candidate_min: usize,
    pub candidate_max: usize,
    /// Weight pairs by the number of later pairs inside their slope cone.
    pub cone_weighting: bool,
    /// Multiply pair weights by the reliability of the query code.
    pub reliability_weighting: bool,
    /// Absolute floor of the acceptance threshold.
    pub min_score: f64,
    /// Acceptance also needs `score >= median_factor * median(other scores)`.
    pub median_factor: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            sigma: 0.25,
            alpha_max: 1.4,
            candidate_min: 10,
            candidate_max: 500,
            cone_weighting: true,
            reliability_weighting: false,
            min_score: 10.0,
            median_factor: 8.0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(invalid("sigma must be positive"));
        }
        if !(self.alpha_max > 1.0) {
            return Err(invalid("alpha_max must exceed 1"));
        }
        if self.candidate_max == 0 || self.candidate_min > self.candidate_max {
            return Err(invalid("need 0 < candidate_min <= candidate_max"));
        }
        if !(self.min_score >= 0.0) || !(self.median_factor >= 0.0) {
            return Err(invalid("acceptance threshold parameters must be non-negative"));
        }
        Ok(())
    }
}

/// One query code: 24-bit table key, query time in seconds and reliability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryCode {
    pub code: u32,
    pub time_s: f64,
    pub reliability: f64,
}

/// A matching (reference time, query time) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub t: f64,
    pub tau: f64,
}

/// Per-track STEP 1 counts: the best sliding-window sum of segment counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchHistogram {
    /// `(track, N_i)` for every track with at least one match, sorted by
    /// decreasing count then track id.
    pub counts: Vec<(u32, u64)>,
    pub window_segments: usize,
}

/// Sliding-window span, in segments, for a query of `query_s` seconds.
pub fn window_span(query_s: f64, segment_s: f64) -> usize {
    (query_s / segment_s).ceil() as usize + 1
}

/// Counts table hits per (track, segment) and integrates them over sliding
/// windows of `window_span` segments.
pub fn count_matches(codes: &[QueryCode], index: &CatalogIndex, query_s: f64) -> Result<MatchHistogram> {
    if codes.is_empty() {
        return Err(invalid("empty query code set"));
    }
    let span = window_span(query_s, index.params.segment_s);
    let mut per_track: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for q in codes {
        for p in index.lookup(q.code) {
            let segs = per_track.entry(p.track).or_default();
            let s = p.segment as usize;
            if segs.len() <= s {
                segs.resize(s + 1, 0);
            }
            segs[s] += 1;
        }
    }
    let mut counts: Vec<(u32, u64)> = per_track.into_iter().map(|(t, segs)| (t, max_window_sum(&segs, span))).collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(MatchHistogram { counts, window_segments: span })
}

fn max_window_sum(segs: &[u64], span: usize) -> u64 {
    if segs.len() <= span {
        return segs.iter().sum();
    }
    let mut cur: u64 = segs[..span].iter().sum();
    let mut best = cur;
    for i in span..segs.len() {
        cur = cur + segs[i] - segs[i - span];
        best = best.max(cur);
    }
    best
}

/// Tracks with `N_i >= N_1 / 2`, padded with the next best to `min`, capped at `max`.
pub fn select_candidates(hist: &MatchHistogram, min: usize, max: usize) -> Vec<u32> {
    let Some(&(_, top)) = hist.counts.first() else {
        return Vec::new();
    };
    if top == 0 {
        return Vec::new();
    }
    let strong = hist.counts.iter().take_while(|&&(_, n)| 2 * n >= top).count();
    let keep = strong.max(min).min(max).min(hist.counts.len());
    hist.counts[..keep].iter().filter(|&&(_, n)| n > 0).map(|&(t, _)| t).collect()
}

/// `1 +` the number of other pairs strictly later in `t` whose slope from
/// this pair lies in `[1/alpha_max, alpha_max]`. O(n log n).
pub fn cone_weights(pairs: &[Pair], alpha_max: f64) -> Vec<f64> {
    let n = pairs.len();
    if n == 0 {
        return Vec::new();
    }
    let a = alpha_max;
    // m is in the cone of n iff u_m >= u_n and v_m <= v_n (identical points excepted)
    let u: Vec<f64> = pairs.iter().map(|p| p.tau - p.t / a).collect();
    let v: Vec<f64> = pairs.iter().map(|p| p.tau - a * p.t).collect();
    let mut v_sorted = v.clone();
    v_sorted.sort_by(f64::total_cmp);
    v_sorted.dedup();
    let rank = |x: f64| v_sorted.partition_point(|&y| y < x);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| u[j].total_cmp(&u[i]));
    let mut bit = vec![0u32; v_sorted.len() + 1];
    let mut counts = vec![0u32; n];
    let mut g = 0;
    while g < n {
        let mut h = g;
        while h < n && u[order[h]] == u[order[g]] {
            h += 1;
        }
        for &i in &order[g..h] {
            let mut k = rank(v[i]) + 1;
            while k < bit.len() {
                bit[k] += 1;
                k += k & k.wrapping_neg();
            }
        }
        for &i in &order[g..h] {
            let mut k = rank(v[i]) + 1;
            let mut c = 0;
            while k > 0 {
                c += bit[k];
                k -= k & k.wrapping_neg();
            }
            counts[i] = c;
        }
        g = h;
    }
    // remove each pair itself and exact duplicates
    let mut by_point: Vec<usize> = (0..n).collect();
    by_point.sort_by(|&i, &j| pairs[i].t.total_cmp(&pairs[j].t).then(pairs[i].tau.total_cmp(&pairs[j].tau)));
    let mut g = 0;
    while g < n {
        let mut h = g;
        while h < n && pairs[by_point[h]] == pairs[by_point[g]] {
            h += 1;
        }
        for &i in &by_point[g..h] {
            counts[i] -= (h - g) as u32;
        }
        g = h;
    }
    counts.into_iter().map(|c| 1.0 + c as f64).collect()
}

/// Histogram of `u = t - τ` with bin width `sigma`, smoothed over each bin
/// and its two neighbours. Returns the best smoothed mass and the centre of
/// its bin (lowest bin on ties).
pub fn time_coherence(pairs: &[Pair], weights: &[f64], sigma: f64) -> (f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    let bins: Vec<i64> = pairs.iter().map(|p| ((p.t - p.tau) / sigma).floor() as i64).collect();
    let lo = *bins.iter().min().unwrap();
    let hi = *bins.iter().max().unwrap();
    let mut hist = vec![0.0; (hi - lo + 1) as usize];
    for (&b, &w) in bins.iter().zip(weights) {
        hist[(b - lo) as usize] += w;
    }
    let mut best = (f64::MIN, 0usize);
    for i in 0..hist.len() {
        let s = hist[i] + if i > 0 { hist[i - 1] } else { 0.0 } + hist.get(i + 1).copied().unwrap_or(0.0);
        if s > best.0 {
            best = (s, i);
        }
    }
    (best.0, (lo + best.1 as i64) as f64 * sigma + 0.5 * sigma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub alpha: f64,
    pub delta_t_star: f64,
    pub inliers: usize,
    pub low_confidence: bool,
}

/// Least squares `τ = α t - δ`. `None` without spread in `t`.
fn fit_line(pairs: &[Pair], idx: &[usize]) -> Option<(f64, f64)> {
    let n = idx.len() as f64;
    if idx.len() < 2 {
        return None;
    }
    let mt = idx.iter().map(|&i| pairs[i].t).sum::<f64>() / n;
    let mtau = idx.iter().map(|&i| pairs[i].tau).sum::<f64>() / n;
    let (mut stt, mut sttau) = (0.0, 0.0);
    for &i in idx {
        let dt = pairs[i].t - mt;
        stt += dt * dt;
        sttau += dt * (pairs[i].tau - mtau);
    }
    if stt <= 1e-12 * n {
        return None;
    }
    let alpha = sttau / stt;
    Some((alpha, alpha * mt - mtau))
}

/// Line refinement around the winning offset: fit on the pairs of the winning
/// window, trim the worst residual while it exceeds `sigma`, re-gather
/// inliers from all pairs with the fitted line and refit.
pub fn refine_alignment(pairs: &[Pair], delta_t: f64, sigma: f64, alpha_max: f64) -> Alignment {
    let fallback = |inliers| Alignment { alpha: 1.0, delta_t_star: delta_t, inliers, low_confidence: true };
    let mut idx: Vec<usize> =
        (0..pairs.len()).filter(|&i| (pairs[i].t - pairs[i].tau - delta_t).abs() <= 1.5 * sigma).collect();
    let resid = |i: usize, a: f64, d: f64| (pairs[i].tau - (a * pairs[i].t - d)).abs();
    let Some(mut line) = fit_line(pairs, &idx) else {
        return fallback(idx.len());
    };
    loop {
        let (worst, r) = idx
            .iter()
            .enumerate()
            .map(|(k, &i)| (k, resid(i, line.0, line.1)))
            .fold((0, f64::MIN), |b, x| if x.1 > b.1 { x } else { b });
        if r <= sigma || idx.len() <= 2 {
            break;
        }
        idx.remove(worst);
        match fit_line(pairs, &idx) {
            Some(l) => line = l,
            None => return fallback(idx.len()),
        }
    }
    let line = {
        let a = line.0.clamp(1.0 / alpha_max, alpha_max);
        let all: Vec<usize> = (0..pairs.len()).filter(|&i| resid(i, a, line.1) <= sigma).collect();
        match fit_line(pairs, &all) {
            Some(l) => {
                idx = all;
                l
            }
            None => line,
        }
    };
    Alignment {
        alpha: line.0.clamp(1.0 / alpha_max, alpha_max),
        delta_t_star: line.1,
        inliers: idx.len(),
        low_confidence: idx.len() < 2,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub track: u32,
    pub step1_count: u64,
    pub score: f64,
    pub alpha: f64,
    pub delta_t_star: f64,
    pub inliers: usize,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    /// STEP 1 candidates in count order.
    pub step1: Vec<(u32, u64)>,
    /// STEP 2 results, best first.
    pub results: Vec<SearchResult>,
    /// Whether the best result clears the acceptance threshold.
    pub matched: bool,
    pub n_codes: usize,
}

impl QueryOutcome {
    pub fn step1_top(&self) -> Option<u32> {
        self.step1.first().map(|&(t, _)| t)
    }

    pub fn step2_top(&self) -> Option<u32> {
        self.results.first().map(|r| r.track)
    }
}

/// Matching pairs between the query codes and one track's postings.
pub fn gather_pairs(codes: &[QueryCode], index: &CatalogIndex, track: u32) -> (Vec<Pair>, Vec<f64>) {
    let fr = index.params.frame_rate;
    let mut pairs = Vec::new();
    let mut rel = Vec::new();
    for q in codes {
        let post = index.lookup(q.code);
        let start = post.partition_point(|p| p.track < track);
        for p in post[start..].iter().take_while(|p| p.track == track) {
            pairs.push(Pair { t: p.time as f64 / fr, tau: q.time_s });
            rel.push(q.reliability);
        }
    }
    (pairs, rel)
}

/// Scores one candidate.
pub fn score_candidate(pairs: &[Pair], reliab: &[f64], cfg: &SearchConfig) -> (f64, Alignment) {
    let mut w = if cfg.cone_weighting { cone_weights(pairs, cfg.alpha_max) } else { vec![1.0; pairs.len()] };
    if cfg.reliability_weighting {
        w.iter_mut().zip(reliab).for_each(|(w, r)| *w *= r);
    }
    let (score, delta) = time_coherence(pairs, &w, cfg.sigma);
    (score, refine_alignment(pairs, delta, cfg.sigma, cfg.alpha_max))
}

/// Full two-step search for a set of query codes.
pub fn search(codes: &[QueryCode], query_s: f64, index: &CatalogIndex, cfg: &SearchConfig) -> Result<QueryOutcome> {
    cfg.validate()?;
    if index.tracks.is_empty() {
        return Err(invalid("empty index"));
    }
    let hist = count_matches(codes, index, query_s)?;
    let cands = select_candidates(&hist, cfg.candidate_min, cfg.candidate_max);
    let step1: Vec<(u32, u64)> = hist.counts[..cands.len()].to_vec();
    use rayon::prelude::*;
    let mut results: Vec<SearchResult> = step1
        .par_iter()
        .map(|&(track, count)| {
            let (pairs, rel) = gather_pairs(codes, index, track);
            let (score, al) = score_candidate(&pairs, &rel, cfg);
            SearchResult {
                track,
                step1_count: count,
                score,
                alpha: al.alpha,
                delta_t_star: al.delta_t_star,
                inliers: al.inliers,
                low_confidence: al.low_confidence,
            }
        })
        .collect();
    results.sort_by(|a, b| b.score.total_cmp(&a.score).then(b.step1_count.cmp(&a.step1_count)).then(a.track.cmp(&b.track)));
    let matched = match results.first() {
        None => false,
        Some(top) => {
            let mut others: Vec<f64> = results[1..].iter().map(|r| r.score).collect();
            others.sort_by(f64::total_cmp);
            let median = if others.is_empty() {
                0.0
            } else if others.len() % 2 == 1 {
                others[others.len() / 2]
            } else {
                0.5 * (others[others.len() / 2 - 1] + others[others.len() / 2])
            };
            top.score >= cfg.min_score.max(cfg.median_factor * median)
        }
    };
    Ok(QueryOutcome { step1, results, matched, n_codes: codes.len() })
}
