//! Audio front end: WAV decoding, resampling, peak normalisation and the
//! magnitude STFT shared by analysis-time selection and print computation.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};

/// Analysis sample rate of the whole pipeline.
pub const ANALYSIS_RATE: u32 = 11025;

/// Mono audio with samples nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Copy of the samples in `[start_s, start_s + len_s)`, clamped to the buffer.
    pub fn slice_seconds(&self, start_s: f64, len_s: f64) -> AudioBuffer {
        let sr = self.sample_rate as f64;
        let a = ((start_s * sr).round().max(0.0) as usize).min(self.samples.len());
        let b = (((start_s + len_s) * sr).round().max(0.0) as usize).min(self.samples.len());
        AudioBuffer { samples: self.samples[a..b].to_vec(), sample_rate: self.sample_rate }
    }
}

/// Reads a PCM WAV file (8/16/24/32-bit integer or 32-bit float), averaging
/// channels to mono and scaling to [-1, 1].
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let err = |reason: String| Error::Audio { path: path.to_path_buf(), reason };
    let mut reader = hound::WavReader::open(path).map_err(|e| err(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(err("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(e.to_string()))?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(e.to_string()))?
        }
        (fmt, bits) => return Err(err(format!("unsupported encoding {fmt:?} {bits}-bit"))),
    };
    if interleaved.is_empty() {
        return Err(err("zero-length stream".into()));
    }
    let samples: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Writes 16-bit mono PCM. Samples are clipped to [-1, 1].
pub fn write_wav(path: impl AsRef<Path>, buf: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let path = path.as_ref();
    let map = |e: hound::Error| Error::Audio { path: path.to_path_buf(), reason: e.to_string() };
    let mut w = hound::WavWriter::create(path, spec).map_err(map)?;
    for &s in &buf.samples {
        w.write_sample(to_i16(s)).map_err(map)?;
    }
    w.finalize().map_err(map)
}

pub(crate) fn to_i16(s: f64) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

/// Scales to unit peak. All-zero input is returned unchanged.
pub fn normalize(buf: &AudioBuffer) -> AudioBuffer {
    let peak = buf.peak();
    if peak == 0.0 {
        return buf.clone();
    }
    AudioBuffer { samples: buf.samples.iter().map(|s| s / peak).collect(), sample_rate: buf.sample_rate }
}

/// Band-limited resampling to `target` Hz. Identity when the rate already matches.
pub fn resample(buf: &AudioBuffer, target: u32) -> Result<AudioBuffer> {
    if target == 0 {
        return Err(invalid("target sample rate must be positive"));
    }
    if target == buf.sample_rate {
        return Ok(buf.clone());
    }
    let ratio = target as f64 / buf.sample_rate as f64;
    let out_len = (buf.samples.len() as f64 * ratio).round() as usize;
    let g = gcd(target as u64, buf.sample_rate as u64);
    let (up, down) = (target as u64 / g, buf.sample_rate as u64 / g);
    let samples = if up <= MAX_PHASES {
        resample_rational(&buf.samples, up as usize, down as usize, out_len)
    } else {
        resample_direct(&buf.samples, ratio, out_len)
    };
    Ok(AudioBuffer { samples, sample_rate: target })
}

/// Closest `up / down` to `x` with `up <= MAX_PHASES`.
fn rational_approx(x: f64) -> (usize, usize) {
    let mut best = (1, 1, f64::INFINITY);
    for up in 1..=MAX_PHASES as usize {
        let down = ((up as f64 / x).round() as usize).max(1);
        let err = (up as f64 / down as f64 - x).abs();
        if err < best.2 {
            best = (up, down, err);
        }
    }
    (best.0, best.1)
}

/// Resampling by an arbitrary ratio. The ratio is rounded to the nearest
/// fraction with at most 4096 phases when that makes the work smaller;
/// the relative rate error stays below 1e-7.
pub(crate) fn resample_ratio(input: &[f64], ratio: f64, out_len: usize) -> Vec<f64> {
    assert!(ratio > 0.0);
    if out_len > 8 * MAX_PHASES as usize {
        let (up, down) = rational_approx(ratio);
        if ((up as f64 / down as f64) / ratio - 1.0).abs() < 1e-7 {
            return resample_rational(input, up, down, out_len);
        }
    }
    resample_direct(input, ratio, out_len)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Largest phase count for which kernel weights are tabulated.
const MAX_PHASES: u64 = 4096;

/// Same kernel as [`resample_direct`] with weights tabulated per phase; output
/// sample `n` is read at input position `n * down / up`.
fn resample_rational(input: &[f64], up: usize, down: usize, out_len: usize) -> Vec<f64> {
    let ratio = up as f64 / down as f64;
    let cutoff = 0.5 * ratio.min(1.0) * 0.94;
    let half = SINC_ZERO_CROSSINGS as f64 / (2.0 * cutoff);
    let table = sinc_table();
    // Per phase: first tap offset relative to the integer position, then weights.
    let phases: Vec<(isize, Vec<f64>)> = (0..up)
        .map(|ph| {
            let frac = ph as f64 / up as f64;
            let lo = (frac - half).ceil() as isize;
            let hi = (frac + half).floor() as isize;
            let w = (lo..=hi).map(|k| kernel_lookup(&table, (k as f64 - frac) * 2.0 * cutoff) * 2.0 * cutoff).collect();
            (lo, w)
        })
        .collect();
    let len = input.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let num = n * down;
        let (base, (lo, w)) = ((num / up) as isize, &phases[num % up]);
        let start = base + lo;
        let mut acc = 0.0;
        if start >= 0 && start + w.len() as isize <= len {
            let xs = &input[start as usize..start as usize + w.len()];
            for (x, c) in xs.iter().zip(w) {
                acc += x * c;
            }
        } else {
            for (k, c) in w.iter().enumerate() {
                let i = start + k as isize;
                if (0..len).contains(&i) {
                    acc += input[i as usize] * c;
                }
            }
        }
        out.push(acc);
    }
    out
}

/// Zero crossings of the interpolation kernel on each side (64 taps total).
const SINC_ZERO_CROSSINGS: usize = 32;
/// Table oversampling factor for kernel lookup.
const SINC_TABLE_PHASES: usize = 512;
const KAISER_BETA: f64 = 8.6;

/// Windowed-sinc interpolator: output sample `n` is read at input position
/// `n / ratio`. The kernel cutoff follows the lower of the two Nyquist limits.
fn resample_direct(input: &[f64], ratio: f64, out_len: usize) -> Vec<f64> {
    assert!(ratio > 0.0);
    let cutoff = 0.5 * ratio.min(1.0) * 0.94;
    // Kernel half-width in input samples.
    let half = SINC_ZERO_CROSSINGS as f64 / (2.0 * cutoff);
    let table = sinc_table();
    let step = 1.0 / ratio;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let pos = n as f64 * step;
        let lo = (pos - half).ceil().max(0.0) as isize;
        let hi = ((pos + half).floor() as isize).min(input.len() as isize - 1);
        let mut acc = 0.0;
        let mut i = lo;
        while i <= hi {
            let x = (i as f64 - pos) * 2.0 * cutoff; // in kernel zero-crossing units
            acc += input[i as usize] * kernel_lookup(&table, x);
            i += 1;
        }
        out.push(acc * 2.0 * cutoff);
    }
    out
}

fn sinc_table() -> Arc<Vec<f64>> {
    use std::sync::OnceLock;
    static TABLE: OnceLock<Arc<Vec<f64>>> = OnceLock::new();
    TABLE
        .get_or_init(|| {
            let n = SINC_ZERO_CROSSINGS * SINC_TABLE_PHASES + 2;
            let i0b = bessel_i0(KAISER_BETA);
            let t = (0..n)
                .map(|j| {
                    let x = j as f64 / SINC_TABLE_PHASES as f64;
                    let r = x / SINC_ZERO_CROSSINGS as f64;
                    if r >= 1.0 {
                        return 0.0;
                    }
                    let w = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0b;
                    sinc(x) * w
                })
                .collect();
            Arc::new(t)
        })
        .clone()
}

fn kernel_lookup(table: &[f64], x: f64) -> f64 {
    let p = x.abs() * SINC_TABLE_PHASES as f64;
    let j = p as usize;
    if j + 1 >= table.len() {
        return 0.0;
    }
    let f = p - j as f64;
    table[j] * (1.0 - f) + table[j + 1] * f
}

pub(crate) fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Periodic (DFT-even) Hann window.
pub fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect()
}

/// Symmetric Hamming window.
pub fn hamming_symmetric(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len).map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrogramConfig {
    pub window_s: f64,
    pub hop_s: f64,
    pub sample_rate: u32,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self { window_s: 0.150, hop_s: 0.020, sample_rate: ANALYSIS_RATE }
    }
}

impl SpectrogramConfig {
    pub fn window_len(&self) -> usize {
        (self.window_s * self.sample_rate as f64).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        ((self.hop_s * self.sample_rate as f64).round() as usize).max(1)
    }

    pub fn fft_size(&self) -> usize {
        self.window_len().next_power_of_two()
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size() / 2 + 1
    }

    /// Frames per second, `F_r`.
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop_len() as f64
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.fft_size() as f64
    }

    fn validate(&self) -> Result<()> {
        if !(self.hop_s > 0.0) || !(self.window_s > 0.0) || self.window_len() == 0 {
            return Err(invalid("spectrogram window and hop must be positive"));
        }
        Ok(())
    }
}

/// Magnitude STFT, stored frame-major: `frame(l)[k] = |X[k, l]|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<f64>,
    n_bins: usize,
    n_frames: usize,
    pub config: SpectrogramConfig,
}

impl Spectrogram {
    pub fn from_frames(frames: Vec<Vec<f64>>, config: SpectrogramConfig) -> Result<Self> {
        let n_bins = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != n_bins) {
            return Err(invalid("ragged spectrogram frames"));
        }
        let n_frames = frames.len();
        Ok(Self { data: frames.into_iter().flatten().collect(), n_bins, n_frames, config })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn frame(&self, l: usize) -> &[f64] {
        &self.data[l * self.n_bins..(l + 1) * self.n_bins]
    }

    /// Contiguous frames `[start, start + count)`.
    pub fn frames(&self, start: usize, count: usize) -> &[f64] {
        &self.data[start * self.n_bins..(start + count) * self.n_bins]
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.data[l * self.n_bins + k]
    }

    pub fn max_magnitude(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v))
    }

    pub fn frame_rate(&self) -> f64 {
        self.config.frame_rate()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Reusable STFT engine (window + FFT plan).
pub struct Stft {
    config: SpectrogramConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl Stft {
    pub fn new(config: SpectrogramConfig) -> Result<Self> {
        config.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size());
        Ok(Self { config, window: hann_periodic(config.window_len()), fft })
    }

    pub fn config(&self) -> &SpectrogramConfig {
        &self.config
    }

    pub fn process(&self, buf: &AudioBuffer) -> Result<Spectrogram> {
        if buf.sample_rate != self.config.sample_rate {
            return Err(invalid(format!(
                "buffer rate {} does not match spectrogram rate {}",
                buf.sample_rate, self.config.sample_rate
            )));
        }
        let win = self.window.len();
        if buf.samples.len() < win {
            return Err(Error::TooShort(format!(
                "{} samples, one analysis window needs {win}",
                buf.samples.len()
            )));
        }
        let hop = self.config.hop_len();
        let n_fft = self.config.fft_size();
        let n_bins = self.config.n_bins();
        let n_frames = 1 + (buf.samples.len() - win) / hop;
        let mut data = Vec::with_capacity(n_frames * n_bins);
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut frame = vec![Complex::new(0.0, 0.0); n_fft];
        for l in 0..n_frames {
            let start = l * hop;
            for (i, c) in frame.iter_mut().enumerate() {
                *c = if i < win {
                    Complex::new(buf.samples[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut frame, &mut scratch);
            data.extend(frame[..n_bins].iter().map(|c| c.norm_sqr().sqrt()));
        }
        Ok(Spectrogram { data, n_bins, n_frames, config: self.config })
    }
}

/// One-shot STFT.
pub fn stft(buf: &AudioBuffer, cfg: SpectrogramConfig) -> Result<Spectrogram> {
    Stft::new(cfg)?.process(buf)
}

/// Loads, resamples to the analysis rate and peak-normalises.
pub fn prepare(buf: &AudioBuffer) -> Result<AudioBuffer> {
    Ok(normalize(&resample(buf, ANALYSIS_RATE)?))
}
