use audioid::audio::{AudioBuffer, SpectrogramConfig, ANALYSIS_RATE};
use audioid::degrade::{apply, Degradation};
use audioid::fingerprint::Analyzer;
use audioid::onset::{analysis_times, OnsetConfig};
use audioid::synth::synth_track;

fn track(seed: u64, secs: f64) -> AudioBuffer {
    synth_track(seed, secs, ANALYSIS_RATE).unwrap()
}

fn times(analyzer: &Analyzer, buf: &AudioBuffer) -> Vec<usize> {
    let spec = analyzer.spectrogram(buf).unwrap();
    analysis_times(&spec, &OnsetConfig::default()).unwrap().frames
}

#[test]
fn onset_times_follow_a_leading_silence() {
    let analyzer = Analyzer::default();
    let hop = SpectrogramConfig::default().hop_len();
    let margin = 50;
    for (seed, shift) in [(11u64, 12usize), (12, 7), (13, 25)] {
        let x = track(seed, 20.0);
        let mut padded = vec![0.0; shift * hop];
        padded.extend_from_slice(&x.samples);
        let a = times(&analyzer, &x);
        let b = times(&analyzer, &AudioBuffer::new(padded, ANALYSIS_RATE).unwrap());
        let end = a.last().copied().unwrap_or(0).saturating_sub(margin);
        let interior: Vec<usize> = a.iter().copied().filter(|&t| t >= margin && t <= end).collect();
        assert!(interior.len() > 30);
        for &t in &interior {
            assert!(b.iter().any(|&u| u.abs_diff(t + shift) <= 1), "seed {seed}: time {t} lost after shift {shift}");
        }
        for &u in b.iter().filter(|&&u| u >= margin + shift && u <= end + shift) {
            assert!(a.iter().any(|&t| (t + shift).abs_diff(u) <= 1), "seed {seed}: spurious time {u}");
        }
    }
}

#[test]
fn onset_density_on_music() {
    let analyzer = Analyzer::default();
    for seed in [21u64, 22] {
        let x = track(seed, 60.0);
        let rate = times(&analyzer, &x).len() as f64 / x.duration();
        assert!((2.0..=8.0).contains(&rate), "{rate} times/s");
    }
}

#[test]
fn onset_selection_survives_noise() {
    let analyzer = Analyzer::default();
    let fr = analyzer.frame_rate();
    let tol = (0.040 * fr).round() as usize;
    let (mut kept, mut total) = (0, 0);
    for seed in 31u64..36 {
        let x = track(seed, 30.0);
        let y = apply(&Degradation::WhiteNoise { snr_db: 12.0 }, &x, seed).unwrap();
        let a = times(&analyzer, &x);
        let b = times(&analyzer, &y);
        kept += a.iter().filter(|&&t| b.iter().any(|&u| u.abs_diff(t) <= tol)).count();
        total += a.len();
    }
    let rate = kept as f64 / total as f64;
    eprintln!("onset times kept under 12 dB white noise: {:.1}%", 100.0 * rate);
    assert!(rate >= 0.7, "{rate}");
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Harmonic notes with a random rhythm and melody.
fn harmonic(seed: u64, secs: f64) -> AudioBuffer {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let sr = ANALYSIS_RATE as f64;
    let n = (secs * sr) as usize;
    let mut x = vec![0.0; n];
    let amps: Vec<f64> = (0..8).map(|_| rng.random_range(0.1..1.0)).collect();
    let mut start = 0usize;
    while start < n {
        let len = (rng.random_range(0.12..0.6) * sr) as usize;
        let f0 = 150.0 * 2f64.powf(rng.random_range(0.0..2.0));
        for i in 0..len.min(n - start) {
            let t = i as f64 / sr;
            let env = (-(t * 4.0)).exp() * (1.0 - (-t * 200.0).exp());
            let s: f64 = amps.iter().enumerate().map(|(h, a)| a * (2.0 * std::f64::consts::PI * f0 * (h + 1) as f64 * t).sin()).sum();
            x[start + i] += env * s;
        }
        start += len;
    }
    AudioBuffer::new(x, ANALYSIS_RATE).unwrap()
}

fn print_at_start(analyzer: &Analyzer, x: &AudioBuffer) -> Vec<f64> {
    let spec = analyzer.spectrogram(x).unwrap();
    analyzer.prints_at(&spec, 0).unwrap().into_iter().flat_map(|p| p.coeffs).collect()
}

#[test]
fn prints_are_nearly_invariant_to_a_semitone() {
    let analyzer = Analyzer::default();
    let pool: Vec<Vec<f64>> = (0..100).map(|s| print_at_start(&analyzer, &harmonic(1000 + s, 3.5))).collect();
    for s in 0..10u64 {
        let x = harmonic(1000 + s, 3.5);
        let shifted = apply(&Degradation::PitchShift { semitones: 1.0 }, &x, 0).unwrap();
        let p = print_at_start(&analyzer, &shifted);
        let own = cosine(&p, &pool[s as usize]);
        let below = pool.iter().enumerate().filter(|(j, q)| *j != s as usize && cosine(&p, q) < own).count();
        assert!(below as f64 >= 0.95 * 99.0, "signal {s}: own {own:.4}, only {below} of 99 below");
    }
}
