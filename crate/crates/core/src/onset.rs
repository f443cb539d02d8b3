//! Analysis-time selection: onset function, zero-phase smoothing and
//! maximal filtering.

use crate::audio::{hamming_symmetric, sinc, Spectrogram};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnsetConfig {
    /// Rectification parameter in [-1, 1].
    pub h: f64,
    /// Norm order; `f64::INFINITY` selects the max norm.
    pub p: f64,
    /// Normalisation switch, 0 or 1.
    pub d: u8,
    /// Algebraic/geometric normalisation mix.
    pub beta: f64,
    /// Division guard relative to the largest spectrogram magnitude.
    pub epsilon_rel: f64,
    pub r: f64,
    /// Smoother relaxation time in seconds.
    pub t_c: f64,
    /// Smoother length minus one; even.
    pub n: usize,
    /// Mean lag between analysis times in seconds.
    pub mean_lag: f64,
}

impl Default for OnsetConfig {
    fn default() -> Self {
        Self { h: 1.0, p: 1.0, d: 0, beta: 0.0, epsilon_rel: 1e-10, r: 1.0, t_c: 0.050, n: 20, mean_lag: 0.25 }
    }
}

impl OnsetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.h) {
            return Err(invalid("h must lie in [-1, 1]"));
        }
        if !(self.p > 0.0) {
            return Err(invalid("norm order p must be positive"));
        }
        if self.d > 1 {
            return Err(invalid("d must be 0 or 1"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid("beta must lie in [0, 1]"));
        }
        if !(self.epsilon_rel > 0.0) || !(self.r > 0.0) || !(self.t_c > 0.0) || !(self.mean_lag > 0.0) {
            return Err(invalid("epsilon, r, t_c and mean_lag must be positive"));
        }
        if self.n % 2 != 0 {
            return Err(invalid("smoother size n must be even"));
        }
        Ok(())
    }
}

/// Selected anchor frames and their times in seconds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalysisTimes {
    pub frames: Vec<usize>,
    pub seconds: Vec<f64>,
}

impl AnalysisTimes {
    pub fn from_frames(frames: Vec<usize>, frame_rate: f64) -> Self {
        let seconds = frames.iter().map(|&f| f as f64 / frame_rate).collect();
        Self { frames, seconds }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

pub fn rectify(x: f64, h: f64) -> f64 {
    (x + h * x.abs()) / (1.0 + h.abs())
}

fn p_norm<I: Iterator<Item = f64>>(it: I, p: f64) -> f64 {
    if p.is_infinite() {
        it.fold(0.0f64, |m, v| m.max(v.abs()))
    } else if p == 1.0 {
        it.map(f64::abs).sum()
    } else if p == 2.0 {
        it.map(|v| v * v).sum::<f64>().sqrt()
    } else {
        it.map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Generalised spectral flux over magnitude frames. Entry 0 is 0.
pub fn generalized_flux(spec: &Spectrogram, cfg: &OnsetConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if spec.n_frames() < 2 {
        return Err(Error::TooShort("onset function needs at least 2 frames".into()));
    }
    let max = spec.max_magnitude();
    if !spec.all_finite() {
        return Err(Error::NonFinite("spectrogram"));
    }
    let eps = if max > 0.0 { cfg.epsilon_rel * max } else { cfg.epsilon_rel };
    let frames: Vec<&[f64]> = (0..spec.n_frames()).map(|l| spec.frame(l)).collect();
    Ok(flux_over(&frames, cfg, eps))
}

fn flux_over(frames: &[&[f64]], cfg: &OnsetConfig, eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; frames.len()];
    let mut prev_norm = p_norm(frames[0].iter().copied(), cfg.p);
    for l in 1..frames.len() {
        let (cur, prev) = (frames[l], frames[l - 1]);
        let num = p_norm(cur.iter().zip(prev).map(|(a, b)| rectify(a - b, cfg.h)), cfg.p);
        let cur_norm = p_norm(cur.iter().copied(), cfg.p);
        let den = if cfg.d == 0 {
            1.0
        } else {
            (cur_norm * prev_norm).sqrt() + cfg.beta * (cur_norm + prev_norm) + eps
        };
        out[l] = num / den;
        prev_norm = cur_norm;
    }
    out
}

/// Rectified difference of successive frame L1 norms. Entry 0 is 0.
pub fn diff_spectral_norms(spec: &Spectrogram) -> Vec<f64> {
    let norms: Vec<f64> = (0..spec.n_frames()).map(|l| spec.frame(l).iter().sum()).collect();
    diff_of_norms(&norms)
}

fn diff_of_norms(norms: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; norms.len()];
    for l in 1..norms.len() {
        out[l] = rectify(norms[l] - norms[l - 1], 1.0).abs();
    }
    out
}

/// Windowed-sinc low-pass of length `n + 1`, centred, with unit DC gain.
pub fn design_smoother(t_c: f64, n: usize, frame_rate: f64) -> Result<Vec<f64>> {
    if n % 2 != 0 {
        return Err(invalid("smoother size n must be even"));
    }
    if !(t_c > 0.0) || !(frame_rate > 0.0) {
        return Err(invalid("t_c and frame rate must be positive"));
    }
    if n == 0 {
        return Ok(vec![1.0]);
    }
    let fc = 1.0 / t_c;
    let half = (n / 2) as isize;
    let w = hamming_symmetric(n + 1);
    let mut b: Vec<f64> = (-half..=half)
        .zip(&w)
        .map(|(l, w)| 2.0 * fc * sinc(2.0 * fc * l as f64 / frame_rate) * w)
        .collect();
    let sum: f64 = b.iter().sum();
    b.iter_mut().for_each(|v| *v /= sum);
    // exact symmetry regardless of rounding in the window
    for i in 0..b.len() / 2 {
        let j = b.len() - 1 - i;
        let m = 0.5 * (b[i] + b[j]);
        b[i] = m;
        b[j] = m;
    }
    Ok(b)
}

/// `(b * phi^r)` with reflect padding, same length as `phi`.
pub fn post_filter(phi: &[f64], coeffs: &[f64], r: f64) -> Result<Vec<f64>> {
    if !(r > 0.0) {
        return Err(invalid("post-filter exponent must be positive"));
    }
    if phi.iter().any(|&v| v < 0.0) {
        return Err(invalid("onset function must be nonnegative"));
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("onset function"));
    }
    if coeffs.len() % 2 == 0 {
        return Err(invalid("smoother length must be odd"));
    }
    let x: Vec<f64> = if r == 1.0 { phi.to_vec() } else { phi.iter().map(|v| v.powf(r)).collect() };
    let n = x.len() as isize;
    let half = (coeffs.len() / 2) as isize;
    let at = |i: isize| -> f64 { x[reflect(i, n)] };
    Ok((0..n)
        .map(|l| coeffs.iter().enumerate().map(|(j, &c)| c * at(l + half - j as isize)).sum())
        .collect())
}

/// Mirror index without repeating the edge sample (`-1 -> 1`).
fn reflect(mut i: isize, n: isize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Frames where the series equals its centred sliding maximum over
/// `[l - T/2, l + T/2]`, `T = round(mean_lag * F_r)`. Of a run of equal
/// consecutive selected values only the first frame is kept.
pub fn select_times(phi: &[f64], mean_lag: f64, frame_rate: f64) -> Result<AnalysisTimes> {
    if phi.is_empty() {
        return Err(invalid("empty onset series"));
    }
    let t = (mean_lag * frame_rate).round() as usize;
    if t < 1 {
        return Err(invalid("maximal filter window must span at least one frame"));
    }
    let half = t / 2;
    let mx = sliding_max(phi, half);
    let mut frames = Vec::new();
    for l in 0..phi.len() {
        if phi[l] == mx[l] && !(l > 0 && phi[l - 1] == phi[l] && mx[l - 1] == phi[l - 1]) {
            frames.push(l);
        }
    }
    Ok(AnalysisTimes::from_frames(frames, frame_rate))
}

/// Centred running maximum with a monotone deque.
fn sliding_max(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    let mut dq: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut next = 0;
    for (l, o) in out.iter_mut().enumerate() {
        let hi = (l + half).min(n - 1);
        while next <= hi {
            while dq.back().is_some_and(|&j| x[j] <= x[next]) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        let lo = l.saturating_sub(half);
        while dq.front().is_some_and(|&j| j < lo) {
            dq.pop_front();
        }
        *o = x[*dq.front().unwrap()];
    }
    out
}

/// Full selection chain on a spectrogram.
pub fn analysis_times(spec: &Spectrogram, cfg: &OnsetConfig) -> Result<AnalysisTimes> {
    cfg.validate()?;
    let fr = spec.frame_rate();
    let phi = if cfg.h == 1.0 && cfg.p == 1.0 && cfg.d == 0 {
        if spec.n_frames() < 2 {
            return Err(Error::TooShort("onset function needs at least 2 frames".into()));
        }
        diff_spectral_norms(spec)
    } else {
        generalized_flux(spec, cfg)?
    };
    let b = design_smoother(cfg.t_c, cfg.n, fr)?;
    let smooth = post_filter(&phi, &b, cfg.r)?;
    select_times(&smooth, cfg.mean_lag, fr)
}
