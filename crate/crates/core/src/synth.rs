//! Seeded synthetic music: drums, bass, chord pads and a melody over a
//! random tempo, key and progression. Used for demo and test corpora.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;
use crate::error::{invalid, Result};

const MAJOR: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR: [i32; 7] = [0, 2, 3, 5, 7, 8, 10];

fn midi_hz(m: f64) -> f64 {
    440.0 * 2f64.powf((m - 69.0) / 12.0)
}

struct Voice {
    harmonics: Vec<f64>,
    attack: f64,
    decay: f64,
}

impl Voice {
    fn random(rng: &mut ChaCha8Rng, n_harm: usize, decay: (f64, f64)) -> Self {
        let harmonics = (1..=n_harm).map(|k| rng.random_range(0.2..1.0) / k as f64).collect();
        Self { harmonics, attack: rng.random_range(0.003..0.03), decay: rng.random_range(decay.0..decay.1) }
    }

    fn render(&self, out: &mut [f64], sr: f64, start: f64, dur: f64, hz: f64, amp: f64) {
        let i0 = (start * sr) as usize;
        let len = ((dur + 0.05) * sr) as usize;
        for i in 0..len {
            let Some(o) = out.get_mut(i0 + i) else { break };
            let t = i as f64 / sr;
            let env = (t / self.attack).min(1.0) * (-t / self.decay).exp() * if t > dur { (-(t - dur) / 0.01).exp() } else { 1.0 };
            let mut s = 0.0;
            for (k, &h) in self.harmonics.iter().enumerate() {
                let f = hz * (k + 1) as f64;
                if f >= 0.45 * sr {
                    break;
                }
                s += h * (2.0 * PI * f * t).sin();
            }
            *o += amp * env * s;
        }
    }
}

fn kick(out: &mut [f64], sr: f64, start: f64, amp: f64) {
    let i0 = (start * sr) as usize;
    let mut phase = 0.0;
    for i in 0..(0.3 * sr) as usize {
        let Some(o) = out.get_mut(i0 + i) else { break };
        let t = i as f64 / sr;
        let f = 50.0 + 90.0 * (-t / 0.04).exp();
        phase += 2.0 * PI * f / sr;
        *o += amp * phase.sin() * (-t / 0.12).exp();
    }
}

fn noise_hit(out: &mut [f64], rng: &mut ChaCha8Rng, sr: f64, start: f64, amp: f64, decay: f64, tone_hz: f64, bright: bool) {
    let i0 = (start * sr) as usize;
    let mut prev = 0.0;
    for i in 0..(6.0 * decay * sr) as usize {
        let Some(o) = out.get_mut(i0 + i) else { break };
        let t = i as f64 / sr;
        let w: f64 = rng.random_range(-1.0..1.0);
        let n = if bright { w - prev } else { w };
        prev = w;
        let tone = if tone_hz > 0.0 { 0.5 * (2.0 * PI * tone_hz * t).sin() } else { 0.0 };
        *o += amp * (n + tone) * (-t / decay).exp();
    }
}

/// One synthetic track of `duration_s` seconds.
pub fn synth_track(seed: u64, duration_s: f64, sample_rate: u32) -> Result<AudioBuffer> {
    if !(duration_s > 0.0) || sample_rate < 8000 {
        return Err(invalid("synth needs a positive duration and a rate of at least 8 kHz"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let n = (duration_s * sr) as usize;
    let mut out = vec![0.0; n];

    let bpm = rng.random_range(80.0..160.0);
    let beat = 60.0 / bpm;
    let bar = 4.0 * beat;
    let root = rng.random_range(38..50) as f64;
    let scale = if rng.random_bool(0.5) { MAJOR } else { MINOR };
    let degree_pitch = |d: i32| -> f64 {
        let o = d.div_euclid(7);
        root + (12 * o + scale[d.rem_euclid(7) as usize]) as f64
    };
    let progression: Vec<i32> = (0..4).map(|_| rng.random_range(0..7)).collect();
    let pad = Voice::random(&mut rng, 6, (1.5, 4.0));
    let bass = Voice::random(&mut rng, 5, (0.15, 0.5));
    let lead = Voice::random(&mut rng, 8, (0.2, 0.8));
    let kick_mask: Vec<bool> = (0..16).map(|i| i % 8 == 0 || rng.random_bool(0.15)).collect();
    let bass_mask: Vec<bool> = (0..8).map(|i| i == 0 || rng.random_bool(0.5)).collect();
    let hat_mask: Vec<bool> = (0..16).map(|i| i % 2 == 0 || rng.random_bool(0.3)).collect();
    let levels = [rng.random_range(0.5..1.0), rng.random_range(0.3..0.8), rng.random_range(0.1..0.4), rng.random_range(0.3..0.7)];

    let n_bars = (duration_s / bar).ceil() as usize;
    for b in 0..n_bars {
        let t0 = b as f64 * bar;
        let chord = progression[b % progression.len()];
        for d in [0, 2, 4] {
            pad.render(&mut out, sr, t0, bar, midi_hz(degree_pitch(chord + d) + 12.0), 0.06 * levels[1]);
        }
        for (i, &on) in bass_mask.iter().enumerate() {
            if on {
                bass.render(&mut out, sr, t0 + i as f64 * beat / 2.0, beat / 2.0, midi_hz(degree_pitch(chord) - 12.0), 0.25 * levels[3]);
            }
        }
        for i in 0..16 {
            let t = t0 + i as f64 * beat / 4.0;
            if kick_mask[i] {
                kick(&mut out, sr, t, 0.6 * levels[0]);
            }
            if i % 8 == 4 {
                noise_hit(&mut out, &mut rng, sr, t, 0.25 * levels[0], 0.05, 190.0, false);
            }
            if hat_mask[i] {
                noise_hit(&mut out, &mut rng, sr, t, 0.08 * levels[2], 0.015, 0.0, true);
            }
        }
        // melody: fresh random phrase every bar
        let mut t = t0;
        while t < t0 + bar - 1e-9 {
            let len = beat * [0.25, 0.5, 0.5, 1.0, 1.5][rng.random_range(0..5)];
            if rng.random_bool(0.8) {
                let d = chord + rng.random_range(-3..8);
                lead.render(&mut out, sr, t, len.min(t0 + bar - t), midi_hz(degree_pitch(d) + 24.0), 0.12);
            }
            t += len;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.9 / peak);
    }
    AudioBuffer::new(out, sample_rate)
}
