//! High-dimensional prints: a 3 s spectrogram window resampled onto
//! logarithmic frequency and time axes, split into overlapping bands,
//! amplitude-compressed and summarised by its 2D-DFT magnitude.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::{hamming_symmetric, Spectrogram, SpectrogramConfig};
use crate::error::{invalid, Result};

pub const BAND_ROWS: usize = 32;
pub const LOG_TIME_COLS: usize = 64;
pub const HALF_COLS: usize = LOG_TIME_COLS / 2 + 1;
pub const PRINT_DIM: usize = BAND_ROWS * HALF_COLS;
pub const N_BANDS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct PrintConfig {
    pub window_s: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub n_logfreq: usize,
    /// First log-frequency row of each band; every band has `BAND_ROWS` rows.
    pub band_starts: [usize; N_BANDS],
    /// Floor ratio of the amplitude rectification.
    pub floor_ratio: f64,
    /// Knee of the quasi-logarithmic amplitude conversion.
    pub log_knee: f64,
}

impl Default for PrintConfig {
    fn default() -> Self {
        Self {
            window_s: 3.0,
            f_min: 150.0,
            f_max: 5000.0,
            t_min: 0.5,
            t_max: 2.5,
            n_logfreq: 94,
            band_starts: [0, 16, 31, 47, 62],
            floor_ratio: 0.15,
            log_knee: 10.0,
        }
    }
}

impl PrintConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_min > 0.0 && self.f_max > self.f_min) {
            return Err(invalid("need 0 < f_min < f_max"));
        }
        if !(self.t_min > 0.0 && self.t_max > self.t_min && self.window_s >= self.t_max) {
            return Err(invalid("need 0 < t_min < t_max <= window"));
        }
        if self.band_starts.iter().any(|&s| s + BAND_ROWS > self.n_logfreq) {
            return Err(invalid("band exceeds the log-frequency axis"));
        }
        if !(self.floor_ratio >= 0.0) || !(self.log_knee > 0.0) {
            return Err(invalid("floor ratio must be >= 0 and knee > 0"));
        }
        Ok(())
    }

    /// Log-frequency rows per octave.
    pub fn bins_per_octave(&self) -> f64 {
        self.n_logfreq as f64 / (self.f_max / self.f_min).log2()
    }

    /// Log-time columns per doubling of time.
    pub fn cols_per_doubling(&self) -> f64 {
        LOG_TIME_COLS as f64 / (self.t_max / self.t_min).log2()
    }
}

/// One 1056-dimensional print.
#[derive(Debug, Clone, PartialEq)]
pub struct HdPrint {
    pub coeffs: Vec<f64>,
    /// Anchor frame in the source spectrogram.
    pub frame: usize,
    pub band: usize,
}

/// A row-major matrix of `rows × cols` reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v))
    }
}

/// Sparse weights mapping a uniform source axis onto geometric cells.
#[derive(Debug, Clone)]
struct AxisMap {
    cells: Vec<Vec<(usize, f64)>>,
}

impl AxisMap {
    /// Cells geometrically partition `[lo, hi]`; source sample `i` sits at
    /// `i * step`. Each cell yields the mean of the linearly interpolated
    /// source over the cell (composite Simpson), or the interpolated value at
    /// the geometric centre when the cell is narrower than two samples.
    fn new(lo: f64, hi: f64, n: usize, step: f64, n_src: usize) -> Self {
        let edge = |i: usize| lo * (hi / lo).powf(i as f64 / n as f64);
        let cells = (0..n)
            .map(|c| {
                let (a, b) = (edge(c), edge(c + 1));
                let mut acc = std::collections::BTreeMap::<usize, f64>::new();
                if b - a < 2.0 * step {
                    add_interp(&mut acc, (a * b).sqrt() / step, 1.0, n_src);
                } else {
                    let m = 2 * ((b - a) / step).ceil() as usize;
                    let hstep = (b - a) / m as f64;
                    for s in 0..=m {
                        let w = if s == 0 || s == m {
                            1.0
                        } else if s % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        add_interp(&mut acc, (a + s as f64 * hstep) / step, w * hstep / 3.0 / (b - a), n_src);
                    }
                }
                acc.into_iter().filter(|&(_, w)| w != 0.0).collect()
            })
            .collect();
        Self { cells }
    }

    fn apply(&self, src: impl Fn(usize) -> f64, out: &mut [f64]) {
        for (o, cell) in out.iter_mut().zip(&self.cells) {
            *o = cell.iter().map(|&(i, w)| w * src(i)).sum();
        }
    }

    fn max_index(&self) -> usize {
        self.cells.iter().flatten().map(|&(i, _)| i).max().unwrap_or(0)
    }
}

fn add_interp(acc: &mut std::collections::BTreeMap<usize, f64>, pos: f64, w: f64, n_src: usize) {
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < n_src {
        *acc.entry(i).or_default() += w * (1.0 - f);
        *acc.entry(i + 1).or_default() += w * f;
    } else if i < n_src {
        *acc.entry(i).or_default() += w;
    }
}

/// Precomputed state for print extraction on a given spectrogram layout.
pub struct PrintExtractor {
    cfg: PrintConfig,
    window_frames: usize,
    freq: AxisMap,
    time: AxisMap,
    w2d: Grid,
    fft_time: Arc<dyn Fft<f64>>,
    fft_freq: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for PrintExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PrintExtractor").field("cfg", &self.cfg).finish()
    }
}

impl PrintExtractor {
    pub fn new(cfg: PrintConfig, spec: &SpectrogramConfig) -> Result<Self> {
        cfg.validate()?;
        let fr = spec.frame_rate();
        let window_frames = (cfg.window_s * fr).round() as usize;
        if cfg.f_max > spec.sample_rate as f64 / 2.0 {
            return Err(invalid("f_max above Nyquist"));
        }
        if cfg.t_max * fr > (window_frames - 1) as f64 {
            return Err(invalid("t_max beyond the analysis window"));
        }
        let freq = AxisMap::new(cfg.f_min, cfg.f_max, cfg.n_logfreq, spec.bin_hz(), spec.n_bins());
        let time = AxisMap::new(cfg.t_min, cfg.t_max, LOG_TIME_COLS, 1.0 / fr, window_frames);
        let wf = hamming_symmetric(BAND_ROWS);
        let wt = hamming_symmetric(LOG_TIME_COLS);
        let w2d = Grid::from_fn(BAND_ROWS, LOG_TIME_COLS, |i, j| wf[i] * wt[j]);
        let mut planner = FftPlanner::new();
        Ok(Self {
            window_frames,
            freq,
            time,
            w2d,
            fft_time: planner.plan_fft_forward(LOG_TIME_COLS),
            fft_freq: planner.plan_fft_forward(BAND_ROWS),
            cfg,
        })
    }

    pub fn config(&self) -> &PrintConfig {
        &self.cfg
    }

    /// Window length in spectrogram frames (150 at the defaults).
    pub fn window_frames(&self) -> usize {
        self.window_frames
    }

    /// Whether a window anchored at `frame` fits in `n_frames`.
    pub fn fits(&self, frame: usize, n_frames: usize) -> bool {
        frame + self.window_frames <= n_frames
    }

    /// Spectrogram columns `[frame, frame + window)`; `None` when the window
    /// runs past the end of the signal.
    pub fn extract_window<'a>(&self, spec: &'a Spectrogram, frame: usize) -> Option<&'a [f64]> {
        self.fits(frame, spec.n_frames()).then(|| spec.frames(frame, self.window_frames))
    }

    /// Log-log resampling of a frame-major window with `n_bins` bins per frame.
    pub fn loglog(&self, window: &[f64], n_bins: usize) -> Grid {
        let nf = self.cfg.n_logfreq;
        let n_cols = window.len() / n_bins;
        debug_assert!(self.time.max_index() < n_cols);
        // frequency first, only on the frames the time map touches
        let mut per_frame = vec![0.0; nf * n_cols];
        let mut used = vec![false; n_cols];
        self.time.cells.iter().flatten().for_each(|&(j, _)| used[j] = true);
        for j in (0..n_cols).filter(|&j| used[j]) {
            let col = &window[j * n_bins..(j + 1) * n_bins];
            self.freq.apply(|k| col[k], &mut per_frame[j * nf..(j + 1) * nf]);
        }
        let mut out = Grid::zeros(nf, LOG_TIME_COLS);
        let mut row = vec![0.0; LOG_TIME_COLS];
        for kappa in 0..nf {
            self.time.apply(|j| per_frame[j * nf + kappa], &mut row);
            out.data[kappa * LOG_TIME_COLS..(kappa + 1) * LOG_TIME_COLS].copy_from_slice(&row);
        }
        for v in &mut out.data {
            // interpolation weights are nonnegative; clamp rounding noise only
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        out
    }

    pub fn split_bands(&self, h: &Grid) -> Vec<Grid> {
        self.cfg
            .band_starts
            .iter()
            .map(|&s| Grid {
                rows: BAND_ROWS,
                cols: h.cols,
                data: h.data[s * h.cols..(s + BAND_ROWS) * h.cols].to_vec(),
            })
            .collect()
    }

    pub fn modify_amplitudes(&self, h: &Grid) -> Grid {
        modify_amplitudes(h, &self.w2d, self.cfg.floor_ratio, self.cfg.log_knee)
    }

    pub fn dft2_magnitude(&self, f: &Grid) -> Vec<f64> {
        let mut spec = vec![Complex::new(0.0, 0.0); BAND_ROWS * HALF_COLS];
        let mut row = vec![Complex::new(0.0, 0.0); LOG_TIME_COLS];
        for k in 0..BAND_ROWS {
            for (c, &v) in row.iter_mut().zip(f.row(k)) {
                *c = Complex::new(v, 0.0);
            }
            self.fft_time.process(&mut row);
            spec[k * HALF_COLS..(k + 1) * HALF_COLS].copy_from_slice(&row[..HALF_COLS]);
        }
        let mut col = vec![Complex::new(0.0, 0.0); BAND_ROWS];
        let mut out = vec![0.0; PRINT_DIM];
        for n in 0..HALF_COLS {
            for (m, c) in col.iter_mut().enumerate() {
                *c = spec[m * HALF_COLS + n];
            }
            self.fft_freq.process(&mut col);
            for (m, c) in col.iter().enumerate() {
                out[m * HALF_COLS + n] = c.norm_sqr().sqrt();
            }
        }
        out
    }

    /// The five band prints for one anchor, or `None` if the window does not fit.
    pub fn prints_at(&self, spec: &Spectrogram, frame: usize) -> Option<Vec<HdPrint>> {
        let window = self.extract_window(spec, frame)?;
        let h = self.loglog(window, spec.n_bins());
        Some(
            self.split_bands(&h)
                .iter()
                .enumerate()
                .map(|(band, b)| HdPrint {
                    coeffs: self.dft2_magnitude(&self.modify_amplitudes(b)),
                    frame,
                    band,
                })
                .collect(),
        )
    }

    /// Prints for every anchor whose window fits, ordered by (time, band).
    pub fn compute_prints(&self, spec: &Spectrogram, frames: &[usize]) -> Vec<HdPrint> {
        frames.iter().filter_map(|&f| self.prints_at(spec, f)).flatten().collect()
    }
}

/// Floor rectification, 2D weighting, max normalisation and
/// quasi-logarithmic conversion.
pub fn modify_amplitudes(h: &Grid, w: &Grid, r: f64, a: f64) -> Grid {
    let sigma = r * h.data.iter().zip(&w.data).fold(0.0f64, |m, (x, y)| m.max(x * y));
    let mut g: Vec<f64> = h.data.iter().zip(&w.data).map(|(&x, &y)| x.max(sigma) * y).collect();
    let mx = g.iter().fold(0.0f64, |m, &v| m.max(v));
    if mx > 0.0 {
        let denom = (1.0 + a).ln();
        for v in &mut g {
            *v = (1.0 + a * (*v / mx)).ln() / denom;
        }
    }
    Grid { rows: h.rows, cols: h.cols, data: g }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::ANALYSIS_RATE;
    use proptest::prelude::*;

    fn extractor() -> PrintExtractor {
        PrintExtractor::new(PrintConfig::default(), &SpectrogramConfig::default()).unwrap()
    }

    fn segment(n_bins: usize, n_cols: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(n_bins * n_cols);
        for j in 0..n_cols {
            for k in 0..n_bins {
                v.push(f(k, j));
            }
        }
        v
    }

    #[test]
    fn geometry() {
        let ex = extractor();
        assert_eq!(ex.window_frames(), 150);
        let spec = Spectrogram::from_frames(vec![vec![0.0; 1025]; 200], SpectrogramConfig::default()).unwrap();
        assert_eq!(ex.extract_window(&spec, 0).unwrap().len(), 150 * 1025);
        assert!(ex.extract_window(&spec, 50).is_some());
        // one second before the end
        assert!(ex.extract_window(&spec, 200 - 50).is_none());
        // anchors 12 frames apart share 138 columns
        assert_eq!(150 - (0.25f64 * SpectrogramConfig::default().frame_rate()).round() as usize, 138);
    }

    #[test]
    fn loglog_constant_and_out_of_range() {
        let ex = extractor();
        let c = ex.loglog(&segment(1025, 150, |_, _| 0.7), 1025);
        assert_eq!((c.rows, c.cols), (94, 64));
        assert!(c.data.iter().all(|v| (v - 0.7).abs() < 1e-12));
        let bin_hz = SpectrogramConfig::default().bin_hz();
        let hi = ex.loglog(&segment(1025, 150, |k, _| if k as f64 * bin_hz > 5100.0 { 1.0 } else { 0.0 }), 1025);
        assert!(hi.data.iter().all(|&v| v == 0.0));
    }

    fn log_gauss(f: f64, centre: f64, width_oct: f64) -> f64 {
        if f <= 0.0 {
            return 0.0;
        }
        let d = (f / centre).log2() / width_oct;
        (-0.5 * d * d).exp()
    }

    /// Value of a row profile at fractional row `x` by linear interpolation.
    fn lerp_rows(g: &Grid, x: f64, col: usize) -> f64 {
        let i = x.floor() as usize;
        let f = x - i as f64;
        g.get(i, col) * (1.0 - f) + g.get(i + 1, col) * f
    }

    #[test]
    fn octave_shift_is_row_translation() {
        let ex = extractor();
        let bin_hz = SpectrogramConfig::default().bin_hz();
        let shift = ex.config().bins_per_octave();
        let a = ex.loglog(&segment(1025, 150, |k, _| log_gauss(k as f64 * bin_hz, 300.0, 0.15)), 1025);
        let b = ex.loglog(&segment(1025, 150, |k, _| log_gauss(k as f64 * bin_hz, 600.0, 0.15)), 1025);
        let (mut num, mut den) = (0.0, 0.0);
        for kappa in 30..80 {
            let src = kappa as f64 - shift;
            let expected = lerp_rows(&a, src, 10);
            num += (b.get(kappa, 10) - expected).powi(2);
            den += expected.powi(2);
        }
        let rel = (num / den).sqrt();
        assert!(rel < 0.05, "relative error {rel}");
    }

    #[test]
    fn time_scaling_is_column_translation() {
        let ex = extractor();
        let fr = SpectrogramConfig::default().frame_rate();
        let shift = ex.config().cols_per_doubling();
        let a = ex.loglog(&segment(1025, 150, |_, j| log_gauss(j as f64 / fr, 0.9, 0.2)), 1025);
        let b = ex.loglog(&segment(1025, 150, |_, j| log_gauss(j as f64 / fr, 1.8, 0.2)), 1025);
        let (mut num, mut den) = (0.0, 0.0);
        for lambda in 30..60 {
            let src = lambda as f64 - shift;
            let i = src.floor() as usize;
            let f = src - i as f64;
            let expected = a.get(40, i) * (1.0 - f) + a.get(40, i + 1) * f;
            num += (b.get(40, lambda) - expected).powi(2);
            den += expected.powi(2);
        }
        assert!((num / den).sqrt() < 0.05);
    }

    #[test]
    fn bands() {
        let ex = extractor();
        let h = Grid::from_fn(94, 64, |i, j| (i * 100 + j) as f64);
        let b = ex.split_bands(&h);
        assert_eq!(b.len(), 5);
        assert_eq!(b[0].get(0, 0), 0.0);
        assert_eq!(b[0].get(31, 5), 3105.0);
        assert_eq!(b[4].get(0, 0), 6200.0);
        assert_eq!(b[4].get(31, 63), 9363.0);
        let starts = PrintConfig::default().band_starts;
        for w in starts.windows(2) {
            assert!(w[0] + BAND_ROWS - w[1] >= 15);
        }
    }

    #[test]
    fn amplitude_examples() {
        let ex = extractor();
        let z = ex.modify_amplitudes(&Grid::zeros(32, 64));
        assert!(z.data.iter().all(|&v| v == 0.0));
        let c = ex.modify_amplitudes(&Grid::from_fn(32, 64, |_, _| 3.0));
        assert!((c.max() - 1.0).abs() < 1e-12);
        let wmax = ex.w2d.max();
        let a = 10f64;
        for (v, w) in c.data.iter().zip(&ex.w2d.data) {
            let expected = (1.0 + a * w / wmax).ln() / (1.0 + a).ln();
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn amplitude_by_hand_on_4x4() {
        // w = outer(hamming(4), hamming(4)); spike 1 at (1,2), zeros elsewhere
        let hw = hamming_symmetric(4);
        let w = Grid::from_fn(4, 4, |i, j| hw[i] * hw[j]);
        let mut h = Grid::zeros(4, 4);
        h.set(1, 2, 1.0);
        let r = 0.15;
        let f = modify_amplitudes(&h, &w, r, 10.0);
        // sigma = r * w[1][2]; g = max(sigma, h) * w; peak at the spike = w12
        let w12 = hw[1] * hw[2];
        let sigma = r * w12;
        assert_eq!(f.get(1, 2), 1.0);
        let border = (1.0 + 10.0 * sigma * w.get(0, 0) / w12).ln() / 11f64.ln();
        assert!((f.get(0, 0) - border).abs() < 1e-15);
        for i in 0..4 {
            for j in 0..4 {
                if i == 0 || j == 0 || i == 3 || j == 3 {
                    let bound = (1.0 + 10.0 * w.get(i, j)).ln() / 11f64.ln();
                    assert!(f.get(i, j) <= bound);
                }
            }
        }
    }

    #[test]
    fn dft2_examples() {
        let ex = extractor();
        let z = ex.dft2_magnitude(&Grid::zeros(32, 64));
        assert_eq!(z.len(), PRINT_DIM);
        assert!(z.iter().all(|&v| v == 0.0));
        let c = ex.dft2_magnitude(&Grid::from_fn(32, 64, |_, _| 0.5));
        assert!((c[0] - 32.0 * 64.0 * 0.5).abs() < 1e-9);
        assert!(c[1..].iter().all(|&v| v < 1e-9));
    }

    #[test]
    fn dft2_matches_direct_sum() {
        let ex = extractor();
        let f = Grid::from_fn(32, 64, |i, j| ((i * 7 + j * 13) % 17) as f64 / 17.0);
        let y = ex.dft2_magnitude(&f);
        use std::f64::consts::PI;
        for &(m, n) in &[(0, 0), (1, 0), (0, 1), (5, 7), (31, 32), (17, 20)] {
            let mut acc = Complex::new(0.0, 0.0);
            for k in 0..32 {
                for l in 0..64 {
                    let ph = -2.0 * PI * (m as f64 * k as f64 / 32.0 + n as f64 * l as f64 / 64.0);
                    acc += Complex::from_polar(f.get(k, l), ph);
                }
            }
            assert!((acc.norm() - y[m * HALF_COLS + n]).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn dft2_circular_shift_invariance(seed in any::<u64>(), dk in 0usize..32, dl in 0usize..64) {
            let ex = extractor();
            let val = |i: usize, j: usize| {
                let mut x = seed ^ ((i as u64) << 32 | j as u64);
                x = x.wrapping_mul(0x9E3779B97F4A7C15);
                (x >> 11) as f64 / (1u64 << 53) as f64
            };
            let f = Grid::from_fn(32, 64, val);
            let g = Grid::from_fn(32, 64, |i, j| val((i + dk) % 32, (j + dl) % 64));
            let (a, b) = (ex.dft2_magnitude(&f), ex.dft2_magnitude(&g));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }

        #[test]
        fn amplitudes_in_unit_range(vals in prop::collection::vec(0.0f64..100.0, 32 * 64), r in 0.0f64..0.5, a in 0.1f64..100.0) {
            let ex = extractor();
            let h = Grid { rows: 32, cols: 64, data: vals };
            let f = modify_amplitudes(&h, &ex.w2d, r, a);
            prop_assert!(f.data.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        }
    }

    #[test]
    fn silence_and_determinism() {
        let ex = extractor();
        let cfg = SpectrogramConfig::default();
        let spec = Spectrogram::from_frames(vec![vec![0.0; cfg.n_bins()]; 300], cfg).unwrap();
        let p = ex.compute_prints(&spec, &[0, 10, 200]);
        assert_eq!(p.len(), 10);
        assert!(p.iter().all(|p| p.coeffs.iter().all(|&v| v == 0.0)));
        assert_eq!(ANALYSIS_RATE, cfg.sample_rate);
    }
}
