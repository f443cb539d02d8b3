//! Seedable audio degradations for training augmentation and evaluation.
//!
//! Spec strings look like `kind:key=val,key=val` and chain with `+`, for
//! example `time_stretch:stretch_cents=4+white_noise:snr_db=18`. An
//! `external_command` step swallows the rest of the string as its command.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{hann_periodic, load_audio, resample, resample_ratio, to_i16, AudioBuffer};
use crate::error::{invalid, Error, Result};
use crate::hashing::splitmix64;

/// Octave-band centres of the 10-band equalizer.
pub const EQ_CENTRES_HZ: [f64; 10] = [31.25, 62.5, 125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0, 16000.0];

#[derive(Debug, Clone, PartialEq)]
pub enum Degradation {
    Identity,
    WhiteNoise { snr_db: f64 },
    PinkNoise { snr_db: f64 },
    FileNoise { path: PathBuf, snr_db: f64 },
    GraphicEq { gains_db: Vec<f64> },
    Distortion { input_gain_db: f64 },
    Tremolo { depth_db: f64, rate_hz: f64 },
    DynCompress { ratio: f64, release_ms: f64, threshold_db: f64 },
    ReverbSynthetic { mix_db: f64, rt60_s: f64 },
    PitchShift { semitones: f64 },
    TimeStretch { stretch_cents: f64 },
    Chain(Vec<Degradation>),
    /// Shell command reading and writing raw 16-bit LE mono PCM; `{rate}` is
    /// replaced by the sample rate.
    ExternalCommand { cmd: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSpec {
    pub degradation: Degradation,
    pub seed: u64,
}

impl Degradation {
    /// Output length over input length, when known without running it.
    pub fn duration_factor(&self) -> Option<f64> {
        match self {
            Degradation::TimeStretch { stretch_cents } => Some(2f64.powf(stretch_cents / 100.0)),
            Degradation::Chain(v) => v.iter().map(Degradation::duration_factor).product(),
            Degradation::ExternalCommand { .. } => None,
            _ => Some(1.0),
        }
    }
}

impl DegradationSpec {
    pub fn new(degradation: Degradation, seed: u64) -> Self {
        Self { degradation, seed }
    }

    pub fn apply(&self, buf: &AudioBuffer) -> Result<AudioBuffer> {
        apply(&self.degradation, buf, self.seed)
    }
}

fn sub_seed(seed: u64, i: usize) -> u64 {
    let mut s = seed ^ (i as u64).wrapping_mul(0xA24B_AED4_963E_E407);
    splitmix64(&mut s)
}

pub fn apply(d: &Degradation, buf: &AudioBuffer, seed: u64) -> Result<AudioBuffer> {
    let x = &buf.samples;
    let sr = buf.sample_rate;
    let out = match d {
        Degradation::Identity => x.clone(),
        Degradation::WhiteNoise { snr_db } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
            add_at_snr(x, &n, *snr_db)
        }
        Degradation::PinkNoise { snr_db } => add_at_snr(x, &pink_noise(x.len(), seed), *snr_db),
        Degradation::FileNoise { path, snr_db } => {
            let noise = load_audio(path)?;
            let noise = resample(&noise, sr)?;
            if noise.samples.iter().all(|&s| s == 0.0) {
                return Err(invalid(format!("noise file {} is silent", path.display())));
            }
            let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..noise.len());
            let tiled: Vec<f64> = (0..x.len()).map(|i| noise.samples[(start + i) % noise.len()]).collect();
            add_at_snr(x, &tiled, *snr_db)
        }
        Degradation::GraphicEq { gains_db } => graphic_eq(x, sr as f64, gains_db)?,
        Degradation::Distortion { input_gain_db } => distortion(x, *input_gain_db),
        Degradation::Tremolo { depth_db, rate_hz } => x
            .iter()
            .enumerate()
            .map(|(i, &s)| s * db_to_amp(depth_db * (2.0 * PI * rate_hz * i as f64 / sr as f64).sin()))
            .collect(),
        Degradation::DynCompress { ratio, release_ms, threshold_db } => {
            compress(x, sr as f64, *ratio, *release_ms, *threshold_db)?
        }
        Degradation::ReverbSynthetic { mix_db, rt60_s } => reverb(x, sr as f64, *mix_db, *rt60_s, seed)?,
        Degradation::PitchShift { semitones } => {
            let p = 2f64.powf(semitones / 12.0);
            let n_mid = ((x.len() as f64 / p).round() as usize).max(1);
            let mid = resample_ratio(x, 1.0 / p, n_mid);
            stretch_to(&mid, x.len())
        }
        Degradation::TimeStretch { stretch_cents } => {
            let out_len = (x.len() as f64 * 2f64.powf(stretch_cents / 100.0)).round() as usize;
            stretch_to(x, out_len.max(1))
        }
        Degradation::Chain(steps) => {
            let mut cur = buf.clone();
            for (i, s) in steps.iter().enumerate() {
                cur = apply(s, &cur, sub_seed(seed, i))?;
            }
            return Ok(cur);
        }
        Degradation::ExternalCommand { cmd } => external_command(cmd, x, sr)?,
    };
    AudioBuffer::new(out, sr)
}

fn db_to_amp(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Adds `noise` scaled so that signal power / noise power equals `snr_db`.
fn add_at_snr(x: &[f64], noise: &[f64], snr_db: f64) -> Vec<f64> {
    let ps = power(x);
    let pn = power(noise);
    if ps == 0.0 || pn == 0.0 {
        return x.to_vec();
    }
    let g = (ps / pn / 10f64.powf(snr_db / 10.0)).sqrt();
    x.iter().zip(noise).map(|(s, n)| s + g * n).collect()
}

/// 1/f power spectrum by shaping white Gaussian noise in the frequency domain.
pub fn pink_noise(n: usize, seed: u64) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let m = n.next_power_of_two().max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex<f64>> = (0..m).map(|_| Complex::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for k in 1..m {
        let f = k.min(m - k) as f64;
        buf[k] /= f.sqrt();
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    buf[..n].iter().map(|c| c.re / m as f64).collect()
}

const EQ_PAD: usize = 8192;

/// Zero-phase FFT equalizer; the gain in dB is interpolated linearly in
/// log-frequency between the band centres and held flat beyond them.
fn graphic_eq(x: &[f64], sr: f64, gains_db: &[f64]) -> Result<Vec<f64>> {
    if gains_db.len() != EQ_CENTRES_HZ.len() {
        return Err(invalid(format!("graphic_eq needs {} gains, got {}", EQ_CENTRES_HZ.len(), gains_db.len())));
    }
    let gain_at = |f: f64| -> f64 {
        let lf = f.max(1e-9).log2();
        let c0 = EQ_CENTRES_HZ[0].log2();
        let pos = (lf - c0).clamp(0.0, 9.0);
        let i = (pos.floor() as usize).min(8);
        let t = pos - i as f64;
        db_to_amp(gains_db[i] * (1.0 - t) + gains_db[i + 1] * t)
    };
    let n = x.len();
    // the zero-phase response is short next to this padding
    let m = (n + EQ_PAD).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&s| Complex::new(s, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    let gains: Vec<f64> = (0..=m / 2).map(|k| gain_at(k as f64 * sr / m as f64)).collect();
    for (k, c) in buf.iter_mut().enumerate() {
        *c *= gains[k.min(m - k)];
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    Ok(buf[..n].iter().map(|c| c.re / m as f64).collect())
}

/// Alternating `+g, -g, ...` gains over the 10 bands.
pub fn alternating_gains(g: f64) -> Vec<f64> {
    (0..EQ_CENTRES_HZ.len()).map(|i| if i % 2 == 0 { g } else { -g }).collect()
}

/// `atan(G x) / atan(G)` on the peak-normalised signal, rescaled to the input peak.
fn distortion(x: &[f64], input_gain_db: f64) -> Vec<f64> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return x.to_vec();
    }
    let g = db_to_amp(input_gain_db);
    let norm = g.atan();
    x.iter().map(|&s| peak * (g * s / peak).atan() / norm).collect()
}

/// Feed-forward single-band compressor with a peak envelope follower.
/// The threshold is relative to the signal RMS; output RMS matches the input.
fn compress(x: &[f64], sr: f64, ratio: f64, release_ms: f64, threshold_db: f64) -> Result<Vec<f64>> {
    if !(ratio >= 1.0) || !(release_ms > 0.0) {
        return Err(invalid("compressor needs ratio >= 1 and release_ms > 0"));
    }
    let rms = power(x).sqrt();
    if rms == 0.0 {
        return Ok(x.to_vec());
    }
    let thr = 20.0 * rms.log10() + threshold_db;
    let attack = (-1.0 / (0.001 * sr)).exp();
    let release = (-1.0 / (release_ms * 1e-3 * sr)).exp();
    let mut env = 0.0f64;
    let mut y: Vec<f64> = x
        .iter()
        .map(|&s| {
            let a = s.abs();
            let c = if a > env { attack } else { release };
            env = c * env + (1.0 - c) * a;
            let lvl = 20.0 * env.max(1e-12).log10();
            let over = (lvl - thr).max(0.0);
            s * db_to_amp(-over * (1.0 - 1.0 / ratio))
        })
        .collect();
    let g = rms / power(&y).sqrt().max(1e-300);
    y.iter_mut().for_each(|v| *v *= g);
    Ok(y)
}

/// Dry signal plus convolution with decaying noise; `mix_db` is the dry/wet power ratio.
fn reverb(x: &[f64], sr: f64, mix_db: f64, rt60_s: f64, seed: u64) -> Result<Vec<f64>> {
    if !(rt60_s > 0.0) {
        return Err(invalid("rt60_s must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = ((rt60_s * 1.2 * sr) as usize).max(1);
    let decay = 6.91 / (rt60_s * sr);
    let ir: Vec<f64> = (0..len).map(|i| rng.sample::<f64, _>(StandardNormal) * (-decay * i as f64).exp()).collect();
    let wet = fft_convolve(x, &ir, x.len());
    let (pd, pw) = (power(x), power(&wet));
    if pd == 0.0 || pw == 0.0 {
        return Ok(x.to_vec());
    }
    let g = (pd / pw / 10f64.powf(mix_db / 10.0)).sqrt();
    Ok(x.iter().zip(&wet).map(|(d, w)| d + g * w).collect())
}

fn fft_convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    let m = (a.len() + b.len()).next_power_of_two();
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fa.resize(m, Complex::new(0.0, 0.0));
    fb.resize(m, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    fa.iter_mut().zip(&fb).for_each(|(x, y)| *x *= y);
    planner.plan_fft_inverse(m).process(&mut fa);
    fa[..out_len].iter().map(|c| c.re / m as f64).collect()
}

const PV_WINDOW: usize = 2048;
const PV_HOP: usize = PV_WINDOW / 4;

fn princarg(p: f64) -> f64 {
    p - 2.0 * PI * ((p + PI) / (2.0 * PI)).floor()
}

/// Phase-vocoder time scaling to exactly `out_len` samples.
pub fn stretch_to(x: &[f64], out_len: usize) -> Vec<f64> {
    let n = PV_WINDOW;
    let hs = PV_HOP;
    if x.is_empty() {
        return vec![0.0; out_len];
    }
    let ha = hs as f64 * x.len() as f64 / out_len as f64;
    let win = hann_periodic(n);
    let half = n / 2;
    let read = |pos: usize, buf: &mut Vec<Complex<f64>>| {
        buf.clear();
        for j in 0..n {
            // input is centred with `half` leading zeros
            let s = (pos + j).checked_sub(half).and_then(|i| x.get(i)).copied().unwrap_or(0.0);
            buf.push(Complex::new(s * win[j], 0.0));
        }
    };
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let total = out_len + n + hs;
    let mut y = vec![0.0; total];
    let mut wsum = vec![0.0; total];
    let mut phase = vec![0.0; n / 2 + 1];
    let mut prev_arg = vec![0.0; n / 2 + 1];
    let mut prev_pos = 0usize;
    let mut frame = Vec::with_capacity(n);
    let mut m = 0usize;
    while m * hs < out_len + half {
        let pos = (m as f64 * ha).round() as usize;
        read(pos, &mut frame);
        fwd.process(&mut frame);
        let da = pos as f64 - prev_pos as f64;
        for k in 0..=n / 2 {
            let arg = frame[k].arg();
            let omega = 2.0 * PI * k as f64 / n as f64;
            if m == 0 {
                phase[k] = arg;
            } else {
                let inst = if da > 0.0 { omega + princarg(arg - prev_arg[k] - omega * da) / da } else { omega };
                phase[k] += inst * hs as f64;
            }
            prev_arg[k] = arg;
            let mag = frame[k].norm_sqr().sqrt();
            frame[k] = Complex::from_polar(mag, phase[k]);
            if k > 0 && k < n / 2 {
                frame[n - k] = frame[k].conj();
            }
        }
        prev_pos = pos;
        inv.process(&mut frame);
        let s0 = m * hs;
        for j in 0..n {
            if s0 + j < total {
                y[s0 + j] += frame[j].re / n as f64 * win[j];
                wsum[s0 + j] += win[j] * win[j];
            }
        }
        m += 1;
    }
    (0..out_len).map(|i| y[i + half] / wsum[i + half].max(1e-3)).collect()
}

fn external_command(template: &str, x: &[f64], sr: u32) -> Result<Vec<f64>> {
    let cmd = template.replace("{rate}", &sr.to_string());
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::ExternalCommand(format!("cannot spawn `{cmd}`: {e}")))?;
    let bytes: Vec<u8> = x.iter().flat_map(|&s| to_i16(s).to_le_bytes()).collect();
    let mut stdin = child.stdin.take().expect("piped stdin");
    let writer = std::thread::spawn(move || stdin.write_all(&bytes));
    let mut out = Vec::new();
    child.stdout.take().expect("piped stdout").read_to_end(&mut out)?;
    let mut err = String::new();
    child.stderr.take().expect("piped stderr").read_to_string(&mut err)?;
    let status = child.wait()?;
    let wrote = writer.join().map_err(|_| Error::ExternalCommand("stdin writer panicked".into()))?;
    if !status.success() {
        return Err(Error::ExternalCommand(format!("`{cmd}` exited with {status}: {}", err.trim())));
    }
    if let Err(e) = wrote {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            return Err(e.into());
        }
    }
    if out.len() < 2 {
        return Err(Error::ExternalCommand(format!("`{cmd}` produced no audio")));
    }
    Ok(out.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0).collect())
}

/// Evaluation scenarios. Codec steps run through `codec` when given and are
/// otherwise left out, in which case the returned flag marks the chain partial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    GsmLike,
    Slowdown,
    Noise,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gsm_like" | "gsm" => Ok(Self::GsmLike),
            "slowdown" => Ok(Self::Slowdown),
            "noise" => Ok(Self::Noise),
            _ => Err(invalid(format!("unknown scenario `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::GsmLike => "gsm_like",
            Self::Slowdown => "slowdown",
            Self::Noise => "noise",
        }
    }
}

/// Rough handset microphone response over the equalizer bands.
const HANDSET_EQ_DB: [f64; 10] = [-24.0, -18.0, -9.0, -3.0, 0.0, 2.0, 3.0, 0.0, -9.0, -24.0];

pub fn scenario(s: Scenario, level: u8, codec: Option<&str>) -> Result<(Degradation, bool)> {
    if !(1..=3).contains(&level) {
        return Err(invalid(format!("scenario level must be 1..3, got {level}")));
    }
    let l = level as f64;
    let mut steps = Vec::new();
    let codec_step = codec.map(|c| Degradation::ExternalCommand { cmd: c.to_string() });
    let partial = codec_step.is_none();
    match s {
        Scenario::GsmLike => {
            steps.push(Degradation::GraphicEq { gains_db: HANDSET_EQ_DB.to_vec() });
            steps.push(Degradation::WhiteNoise { snr_db: 24.0 - 6.0 * l });
            steps.extend(codec_step);
        }
        Scenario::Slowdown | Scenario::Noise => {
            let (cents, snr) = match s {
                Scenario::Slowdown => (4.0 * l, 18.0),
                _ => (100.0 * 1.04f64.log2(), 24.0 - 6.0 * l),
            };
            steps.push(Degradation::TimeStretch { stretch_cents: cents });
            steps.push(Degradation::GraphicEq { gains_db: alternating_gains(3.0) });
            steps.push(Degradation::DynCompress { ratio: 2.0, release_ms: 100.0, threshold_db: 0.0 });
            steps.extend(codec_step);
            steps.push(Degradation::ReverbSynthetic { mix_db: 3.0, rt60_s: 0.8 });
            steps.push(Degradation::WhiteNoise { snr_db: snr });
        }
    }
    Ok((Degradation::Chain(steps), partial))
}

/// Named single-kind degradations at three strengths, as in the evaluation grid.
pub fn grid_cell(name: &str, level: u8, codec: Option<&str>) -> Result<(Degradation, bool)> {
    if !(1..=3).contains(&level) {
        return Err(invalid(format!("level must be 1..3, got {level}")));
    }
    let i = (level - 1) as usize;
    let pick = |v: [f64; 3]| v[i];
    let d = match name {
        "clean" => Degradation::Identity,
        "equalizer" => Degradation::GraphicEq { gains_db: alternating_gains(pick([3.0, 6.0, 9.0])) },
        "white_noise" => Degradation::WhiteNoise { snr_db: pick([12.0, 6.0, 0.0]) },
        "pink_noise" => Degradation::PinkNoise { snr_db: pick([12.0, 6.0, 0.0]) },
        "pitch_up" => Degradation::PitchShift { semitones: pick([0.5, 1.0, 2.0]) },
        "pitch_down" => Degradation::PitchShift { semitones: -pick([0.5, 1.0, 2.0]) },
        "stretch_slower" => Degradation::TimeStretch { stretch_cents: pick([15.0, 30.0, 45.0]) },
        "stretch_faster" => Degradation::TimeStretch { stretch_cents: -pick([15.0, 30.0, 45.0]) },
        "distortion" => Degradation::Distortion { input_gain_db: pick([5.0, 12.0, 24.0]) },
        "compressor" => Degradation::DynCompress {
            ratio: pick([2.0, 8.0, 50.0]),
            release_ms: pick([100.0, 10.0, 1.0]),
            threshold_db: 0.0,
        },
        "tremolo" => Degradation::Tremolo { depth_db: pick([3.0, 6.0, 9.0]), rate_hz: 4.0 },
        "reverb" => Degradation::ReverbSynthetic { mix_db: pick([9.0, 3.0, 0.0]), rt60_s: 0.8 },
        "mp3" => match codec {
            Some(c) => Degradation::ExternalCommand { cmd: c.to_string() },
            None => return Ok((Degradation::Identity, true)),
        },
        "scenario_gsm" => return scenario(Scenario::GsmLike, level, codec),
        "scenario_slowdown" => return scenario(Scenario::Slowdown, level, codec),
        "scenario_noise" => return scenario(Scenario::Noise, level, codec),
        _ => return Err(invalid(format!("unknown degradation `{name}`"))),
    };
    Ok((d, false))
}

impl fmt::Display for Degradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "identity"),
            Self::WhiteNoise { snr_db } => write!(f, "white_noise:snr_db={snr_db}"),
            Self::PinkNoise { snr_db } => write!(f, "pink_noise:snr_db={snr_db}"),
            Self::FileNoise { path, snr_db } => write!(f, "file_noise:snr_db={snr_db},path={}", path.display()),
            Self::GraphicEq { gains_db } => {
                let g: Vec<String> = gains_db.iter().map(|g| g.to_string()).collect();
                write!(f, "graphic_eq:gains_db={}", g.join("/"))
            }
            Self::Distortion { input_gain_db } => write!(f, "distortion:input_gain_db={input_gain_db}"),
            Self::Tremolo { depth_db, rate_hz } => write!(f, "tremolo:depth_db={depth_db},rate_hz={rate_hz}"),
            Self::DynCompress { ratio, release_ms, threshold_db } => {
                write!(f, "dyn_compress:ratio={ratio},release_ms={release_ms},threshold_db={threshold_db}")
            }
            Self::ReverbSynthetic { mix_db, rt60_s } => write!(f, "reverb_synthetic:mix_db={mix_db},rt60_s={rt60_s}"),
            Self::PitchShift { semitones } => write!(f, "pitch_shift:semitones={semitones}"),
            Self::TimeStretch { stretch_cents } => write!(f, "time_stretch:stretch_cents={stretch_cents}"),
            Self::Chain(steps) => {
                for (i, s) in steps.iter().enumerate() {
                    if i > 0 {
                        f.write_str("+")?;
                    }
                    write!(f, "{s}")?;
                }
                Ok(())
            }
            Self::ExternalCommand { cmd } => write!(f, "external_command:cmd={cmd}"),
        }
    }
}

impl std::str::FromStr for Degradation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut steps = Vec::new();
        let mut rest = s.trim();
        while !rest.is_empty() {
            if rest.starts_with("external_command:") {
                steps.push(parse_one(rest)?);
                break;
            }
            let (head, tail) = rest.split_once('+').unwrap_or((rest, ""));
            steps.push(parse_one(head.trim())?);
            rest = tail.trim();
        }
        match steps.len() {
            0 => Err(invalid("empty degradation spec")),
            1 => Ok(steps.pop().unwrap()),
            _ => Ok(Degradation::Chain(steps)),
        }
    }
}

fn parse_one(s: &str) -> Result<Degradation> {
    let (kind, args) = s.split_once(':').unwrap_or((s, ""));
    if kind == "external_command" {
        let cmd = args.strip_prefix("cmd=").ok_or_else(|| invalid("external_command needs cmd=<command>"))?;
        if cmd.trim().is_empty() {
            return Err(invalid("external_command has an empty command"));
        }
        return Ok(Degradation::ExternalCommand { cmd: cmd.to_string() });
    }
    let mut kv = std::collections::BTreeMap::new();
    for part in args.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| invalid(format!("expected key=value in `{part}`")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let num = |key: &str, default: Option<f64>| -> Result<f64> {
        match kv.get(key) {
            Some(v) => v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| invalid(format!("bad number for {key}: `{v}`"))),
            None => default.ok_or_else(|| invalid(format!("{kind} needs {key}"))),
        }
    };
    let d = match kind {
        "identity" | "none" | "clean" => Degradation::Identity,
        "white_noise" => Degradation::WhiteNoise { snr_db: num("snr_db", None)? },
        "pink_noise" => Degradation::PinkNoise { snr_db: num("snr_db", None)? },
        "file_noise" => Degradation::FileNoise {
            path: kv.get("path").map(PathBuf::from).ok_or_else(|| invalid("file_noise needs path"))?,
            snr_db: num("snr_db", None)?,
        },
        "graphic_eq" => match kv.get("gains_db") {
            Some(list) => Degradation::GraphicEq {
                gains_db: list
                    .split('/')
                    .map(|g| g.parse::<f64>().map_err(|_| invalid(format!("bad gain `{g}`"))))
                    .collect::<Result<_>>()?,
            },
            None => Degradation::GraphicEq { gains_db: alternating_gains(num("gain_db", None)?) },
        },
        "distortion" => Degradation::Distortion { input_gain_db: num("input_gain_db", None)? },
        "tremolo" => Degradation::Tremolo { depth_db: num("depth_db", None)?, rate_hz: num("rate_hz", Some(4.0))? },
        "dyn_compress" => Degradation::DynCompress {
            ratio: num("ratio", None)?,
            release_ms: num("release_ms", Some(100.0))?,
            threshold_db: num("threshold_db", Some(0.0))?,
        },
        "reverb_synthetic" => Degradation::ReverbSynthetic { mix_db: num("mix_db", None)?, rt60_s: num("rt60_s", Some(0.8))? },
        "pitch_shift" => Degradation::PitchShift { semitones: num("semitones", None)? },
        "time_stretch" => Degradation::TimeStretch { stretch_cents: num("stretch_cents", None)? },
        "scenario" => {
            let name = kv.get("name").ok_or_else(|| invalid("scenario needs name"))?;
            let level = num("level", None)?;
            if level.fract() != 0.0 || !(1.0..=3.0).contains(&level) {
                return Err(invalid(format!("scenario level must be 1..3, got {level}")));
            }
            scenario(Scenario::parse(name)?, level as u8, kv.get("codec").map(String::as_str))?.0
        }
        _ => return Err(invalid(format!("unknown degradation kind `{kind}`"))),
    };
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(f: f64, sr: u32, secs: f64, amp: f64) -> AudioBuffer {
        let n = (secs * sr as f64) as usize;
        AudioBuffer::new((0..n).map(|i| amp * (2.0 * PI * f * i as f64 / sr as f64).sin()).collect(), sr).unwrap()
    }

    fn music_like(sr: u32, secs: f64) -> AudioBuffer {
        let n = (secs * sr as f64) as usize;
        let s = (0..n)
            .map(|i| {
                let t = i as f64 / sr as f64;
                [220.0, 330.0, 440.0, 587.0, 880.0].iter().map(|f| (2.0 * PI * f * t).sin()).sum::<f64>() * 0.1
            })
            .collect();
        AudioBuffer::new(s, sr).unwrap()
    }

    fn snr_of(clean: &[f64], noisy: &[f64]) -> f64 {
        let n: Vec<f64> = clean.iter().zip(noisy).map(|(a, b)| b - a).collect();
        10.0 * (power(clean) / power(&n)).log10()
    }

    #[test]
    fn noise_snr_exact() {
        let x = music_like(11025, 3.0);
        for snr in [0.0, 6.0, 12.0] {
            for d in [Degradation::WhiteNoise { snr_db: snr }, Degradation::PinkNoise { snr_db: snr }] {
                let y = apply(&d, &x, 5).unwrap();
                assert!((snr_of(&x.samples, &y.samples) - snr).abs() < 0.1);
            }
        }
    }

    #[test]
    fn file_noise_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.wav");
        let noise = apply(&Degradation::WhiteNoise { snr_db: 0.0 }, &sine(100.0, 8000, 0.5, 0.01), 1).unwrap();
        crate::audio::write_wav(&p, &noise).unwrap();
        let x = music_like(11025, 2.0);
        let y = apply(&Degradation::FileNoise { path: p, snr_db: 6.0 }, &x, 3).unwrap();
        assert!((snr_of(&x.samples, &y.samples) - 6.0).abs() < 0.2);
        let missing = Degradation::FileNoise { path: dir.path().join("nope.wav"), snr_db: 6.0 };
        assert!(apply(&missing, &x, 3).is_err());
    }

    #[test]
    fn pink_slope() {
        let sr = 11025.0;
        let x = pink_noise(1 << 18, 9);
        let seg = 4096;
        let mut psd = vec![0.0; seg / 2 + 1];
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(seg);
        let win = hann_periodic(seg);
        for c in x.chunks_exact(seg) {
            let mut b: Vec<Complex<f64>> = c.iter().zip(&win).map(|(s, w)| Complex::new(s * w, 0.0)).collect();
            fft.process(&mut b);
            for k in 0..psd.len() {
                psd[k] += b[k].norm_sqr();
            }
        }
        let band = |lo: f64| {
            let (a, b) = ((lo * seg as f64 / sr) as usize, (2.0 * lo * seg as f64 / sr) as usize);
            10.0 * (psd[a..b].iter().sum::<f64>() / (b - a) as f64).log10()
        };
        // mean density per octave from 100 Hz to 3200 Hz
        let levels: Vec<f64> = (0..5).map(|o| band(100.0 * 2f64.powi(o))).collect();
        let slope = (levels[4] - levels[0]) / 4.0;
        assert!((slope + 3.0).abs() < 0.5, "slope {slope}");
    }

    #[test]
    fn eq_identity_and_gain() {
        let x = music_like(11025, 1.0);
        let y = apply(&Degradation::GraphicEq { gains_db: vec![0.0; 10] }, &x, 0).unwrap();
        let err: Vec<f64> = x.samples.iter().zip(&y.samples).map(|(a, b)| a - b).collect();
        assert!(10.0 * (power(&err) / power(&x.samples)).log10() < -40.0);
        let s = sine(1000.0, 11025, 1.0, 0.5);
        let y = apply(&Degradation::GraphicEq { gains_db: alternating_gains(6.0) }, &s, 0).unwrap();
        // 1 kHz is the 6th centre, which gets -6 dB
        let r = 10.0 * (power(&y.samples[2000..9000]) / power(&s.samples[2000..9000])).log10();
        assert!((r + 6.0).abs() < 0.3, "{r}");
        assert!(apply(&Degradation::GraphicEq { gains_db: vec![0.0; 3] }, &s, 0).is_err());
    }

    fn thd(y: &[f64], sr: f64, f0: f64) -> f64 {
        let amp = |f: f64| {
            let (mut c, mut s) = (0.0, 0.0);
            for (i, v) in y.iter().enumerate() {
                let ph = 2.0 * PI * f * i as f64 / sr;
                c += v * ph.cos();
                s += v * ph.sin();
            }
            (c * c + s * s).sqrt()
        };
        let fund = amp(f0);
        let harm: f64 = (2..=15).map(|h| amp(h as f64 * f0).powi(2)).sum::<f64>().sqrt();
        harm / fund
    }

    #[test]
    fn distortion_thd() {
        let s = sine(100.0, 11025, 1.0, 1.0);
        let y = apply(&Degradation::Distortion { input_gain_db: 24.0 }, &s, 0).unwrap();
        assert!(thd(&y.samples, 11025.0, 100.0) > 0.10);
        assert!((y.peak() - 1.0).abs() < 1e-3);
        let mild = apply(&Degradation::Distortion { input_gain_db: -40.0 }, &s, 0).unwrap();
        assert!(thd(&mild.samples, 11025.0, 100.0) < 0.01);
    }

    #[test]
    fn tremolo_depth() {
        let s = sine(500.0, 11025, 1.0, 0.5);
        let y = apply(&Degradation::Tremolo { depth_db: 6.0, rate_hz: 4.0 }, &s, 0).unwrap();
        let r = 20.0 * (y.peak() / 0.5).log10();
        assert!((r - 6.0).abs() < 0.1);
    }

    #[test]
    fn compressor_reduces_crest() {
        let mut x = sine(300.0, 11025, 2.0, 0.1);
        for v in &mut x.samples[5000..8000] {
            *v *= 8.0;
        }
        let y = apply(&Degradation::DynCompress { ratio: 8.0, release_ms: 10.0, threshold_db: 0.0 }, &x, 0).unwrap();
        let lvl = |v: &[f64]| 10.0 * (power(&v[6000..7500]) / power(&v[12000..20000])).log10();
        assert!(lvl(&y.samples) < lvl(&x.samples) - 6.0, "{} {}", lvl(&y.samples), lvl(&x.samples));
        assert!((y.rms() - x.rms()).abs() < 1e-9);
    }

    #[test]
    fn reverb_mix() {
        let x = music_like(11025, 2.0);
        let y = apply(&Degradation::ReverbSynthetic { mix_db: 3.0, rt60_s: 0.8 }, &x, 4).unwrap();
        assert!((snr_of(&x.samples, &y.samples) - 3.0).abs() < 1e-6);
        assert_eq!(y, apply(&Degradation::ReverbSynthetic { mix_db: 3.0, rt60_s: 0.8 }, &x, 4).unwrap());
    }

    #[test]
    fn stretch_length_law() {
        let x = music_like(11025, 2.0);
        for c in [-45.0, -30.0, 0.0, 15.0, 30.0] {
            let y = apply(&Degradation::TimeStretch { stretch_cents: c }, &x, 0).unwrap();
            let want = x.len() as f64 * 2f64.powf(c / 100.0);
            assert!((y.len() as f64 - want).abs() <= PV_HOP as f64);
        }
    }

    #[test]
    fn stretch_keeps_pitch() {
        let x = sine(440.0, 11025, 2.0, 0.5);
        let y = stretch_to(&x.samples, (x.len() as f64 * 1.3) as usize);
        let mid = &y[4000..y.len() - 4000];
        let f = zero_crossing_freq(mid, 11025.0);
        assert!((f - 440.0).abs() < 3.0, "{f}");
    }

    fn zero_crossing_freq(y: &[f64], sr: f64) -> f64 {
        let z = y.windows(2).filter(|w| w[0] < 0.0 && w[1] >= 0.0).count();
        z as f64 * sr / y.len() as f64
    }

    /// Power-weighted spectral centroid.
    fn centroid(y: &[f64], sr: f64) -> f64 {
        let n = y.len();
        let mut b: Vec<Complex<f64>> = y.iter().map(|&s| Complex::new(s, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut b);
        let (mut num, mut den) = (0.0, 0.0);
        for k in 1..n / 2 {
            let m = b[k].norm_sqr();
            num += k as f64 * sr / n as f64 * m;
            den += m;
        }
        num / den
    }

    #[test]
    fn pitch_shift_moves_and_restores() {
        let x = sine(440.0, 11025, 2.0, 0.5);
        let up = apply(&Degradation::PitchShift { semitones: 2.0 }, &x, 0).unwrap();
        assert_eq!(up.len(), x.len());
        let f = zero_crossing_freq(&up.samples[3000..up.len() - 3000], 11025.0);
        assert!((f - 440.0 * 2f64.powf(2.0 / 12.0)).abs() < 4.0, "{f}");
        let m = music_like(11025, 2.0);
        let back = apply(&Degradation::PitchShift { semitones: -1.0 }, &apply(&Degradation::PitchShift { semitones: 1.0 }, &m, 0).unwrap(), 0).unwrap();
        let (c0, c1) = (centroid(&m.samples, 11025.0), centroid(&back.samples, 11025.0));
        assert!((c1 / c0 - 1.0).abs() < 0.02, "{c0} {c1}");
    }

    #[test]
    fn determinism_and_chain_seeds() {
        let x = music_like(11025, 1.0);
        let d: Degradation = "white_noise:snr_db=6+pink_noise:snr_db=6".parse().unwrap();
        assert_eq!(apply(&d, &x, 7).unwrap(), apply(&d, &x, 7).unwrap());
        assert_ne!(apply(&d, &x, 7).unwrap(), apply(&d, &x, 8).unwrap());
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in [
            "white_noise:snr_db=12",
            "graphic_eq:gains_db=3/-3/3/-3/3/-3/3/-3/3/-3",
            "time_stretch:stretch_cents=4+dyn_compress:ratio=2,release_ms=100,threshold_db=0+reverb_synthetic:mix_db=3,rt60_s=0.8",
            "pitch_shift:semitones=-0.5+external_command:cmd=sox -t raw -r {rate} - -t raw - vol 0.5",
        ] {
            let d: Degradation = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
        let eq: Degradation = "graphic_eq:gain_db=3".parse().unwrap();
        assert_eq!(eq, Degradation::GraphicEq { gains_db: alternating_gains(3.0) });
        assert!("bogus:x=1".parse::<Degradation>().is_err());
        assert!("white_noise".parse::<Degradation>().is_err());
        assert!("white_noise:snr_db=abc".parse::<Degradation>().is_err());
        assert!("scenario:name=noise,level=4".parse::<Degradation>().is_err());
    }

    #[test]
    fn scenarios() {
        let (d, partial) = scenario(Scenario::Slowdown, 1, None).unwrap();
        assert!(partial);
        let Degradation::Chain(steps) = d else { panic!() };
        assert_eq!(steps[0], Degradation::TimeStretch { stretch_cents: 4.0 });
        assert_eq!(steps[1], Degradation::GraphicEq { gains_db: alternating_gains(3.0) });
        assert!(matches!(steps[2], Degradation::DynCompress { ratio, .. } if ratio == 2.0));
        assert_eq!(steps[3], Degradation::ReverbSynthetic { mix_db: 3.0, rt60_s: 0.8 });
        assert_eq!(steps[4], Degradation::WhiteNoise { snr_db: 18.0 });
        let (d, _) = scenario(Scenario::Noise, 3, None).unwrap();
        let Degradation::Chain(steps) = d else { panic!() };
        assert_eq!(steps.last(), Some(&Degradation::WhiteNoise { snr_db: 6.0 }));
        assert!(scenario(Scenario::Noise, 0, None).is_err());
        assert!(scenario(Scenario::GsmLike, 4, None).is_err());
        let (d, partial) = scenario(Scenario::GsmLike, 2, Some("cat")).unwrap();
        assert!(!partial);
        assert!(matches!(&d, Degradation::Chain(s) if matches!(s.last(), Some(Degradation::ExternalCommand { .. }))));
    }

    #[test]
    fn external_command_contract() {
        let x = sine(300.0, 8000, 0.5, 0.5);
        let y = apply(&Degradation::ExternalCommand { cmd: "cat".into() }, &x, 0).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(x.samples.iter().zip(&y.samples).all(|(a, b)| (a - b).abs() < 1.0 / 16384.0));
        // the rate placeholder reaches the command
        let y = apply(&Degradation::ExternalCommand { cmd: "test {rate} = 8000 && cat".into() }, &x, 0).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(apply(&Degradation::ExternalCommand { cmd: "exit 3".into() }, &x, 0).is_err());
        assert!(apply(&Degradation::ExternalCommand { cmd: "cat > /dev/null".into() }, &x, 0).is_err());
    }
}
