//! Audio to anchors, prints, reduced prints and table codes.

use rayon::prelude::*;

use crate::audio::{prepare, AudioBuffer, Spectrogram, SpectrogramConfig, Stft};
use crate::error::{invalid, Result};
use crate::hashing::{binarize, extended_code, select_reliable, LshSpec, N_LSH};
use crate::onset::{analysis_times, OnsetConfig};
use crate::print::{HdPrint, PrintConfig, PrintExtractor};
use crate::reduction::ReductionModel;
use crate::search::QueryCode;

/// Front-end configuration shared by training, indexing and querying.
#[derive(Debug)]
pub struct Analyzer {
    stft: Stft,
    onset: OnsetConfig,
    extractor: PrintExtractor,
}

impl Analyzer {
    pub fn new(onset: OnsetConfig, print: PrintConfig) -> Result<Self> {
        onset.validate()?;
        let sc = SpectrogramConfig::default();
        Ok(Self { stft: Stft::new(sc)?, onset, extractor: PrintExtractor::new(print, &sc)? })
    }

    pub fn frame_rate(&self) -> f64 {
        self.stft.config().frame_rate()
    }

    pub fn hop_len(&self) -> usize {
        self.stft.config().hop_len()
    }

    pub fn window_len(&self) -> usize {
        self.stft.config().window_len()
    }

    pub fn extractor(&self) -> &PrintExtractor {
        &self.extractor
    }

    /// Print window length in seconds.
    pub fn window_s(&self) -> f64 {
        self.extractor.window_frames() as f64 / self.frame_rate()
    }

    /// Spectrogram of a signal already at the analysis rate.
    pub fn spectrogram_prepared(&self, buf: &AudioBuffer) -> Result<Spectrogram> {
        self.stft.process(buf)
    }

    pub fn spectrogram(&self, buf: &AudioBuffer) -> Result<Spectrogram> {
        self.stft.process(&prepare(buf)?)
    }

    /// Analysis times whose print window fits in the spectrogram.
    pub fn anchors(&self, spec: &Spectrogram) -> Result<Vec<usize>> {
        let t = analysis_times(spec, &self.onset)?;
        Ok(t.frames.into_iter().filter(|&f| self.extractor.fits(f, spec.n_frames())).collect())
    }

    pub fn prints_at(&self, spec: &Spectrogram, frame: usize) -> Option<Vec<HdPrint>> {
        self.extractor.prints_at(spec, frame)
    }

    /// All prints of a signal, anchors in time order, bands in order.
    pub fn prints(&self, buf: &AudioBuffer) -> Result<Vec<HdPrint>> {
        let spec = self.spectrogram(buf)?;
        let anchors = self.anchors(&spec)?;
        Ok(self.extractor.compute_prints(&spec, &anchors))
    }
}

impl Default for Analyzer {
    fn default() -> Self {
        Self::new(OnsetConfig::default(), PrintConfig::default()).expect("default front-end configuration is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedPrint {
    pub frame: usize,
    pub band: usize,
    pub z: Vec<f64>,
}

pub fn reduce_prints(model: &ReductionModel, prints: &[HdPrint]) -> Result<Vec<ReducedPrint>> {
    prints
        .par_iter()
        .map(|p| Ok(ReducedPrint { frame: p.frame, band: p.band, z: model.apply_reduction(p)? }))
        .collect()
}

/// Hashes reduced prints.
#[derive(Debug, Clone)]
pub struct Coder {
    lsh: LshSpec,
    sigma_e: Vec<Vec<f64>>,
}

impl Coder {
    pub fn new(model: &ReductionModel, lsh_seed: u64) -> Self {
        let sigma_e = model.bands.iter().map(|b| b.sigma_e.iter().copied().collect()).collect();
        Self { lsh: LshSpec::new(lsh_seed), sigma_e }
    }

    fn check(&self, r: &ReducedPrint) -> Result<()> {
        if r.band >= self.sigma_e.len() {
            return Err(invalid(format!("band {} outside model", r.band)));
        }
        Ok(())
    }

    /// The `l_prime` most reliable codes of one reduced print.
    pub fn index_codes(&self, r: &ReducedPrint, l_prime: usize) -> Result<Vec<u32>> {
        self.check(r)?;
        let betas = self.lsh.derive(binarize(&r.z)?);
        let rel = self.lsh.reliability(&r.z, &self.sigma_e[r.band]);
        Ok(select_reliable(&rel, l_prime).into_iter().map(|l| extended_code(r.band, l, betas[l])).collect())
    }

    /// All codes of one reduced print with their reliabilities.
    pub fn query_codes(&self, r: &ReducedPrint, frame_rate: f64) -> Result<Vec<QueryCode>> {
        self.check(r)?;
        let betas = self.lsh.derive(binarize(&r.z)?);
        let rel = self.lsh.reliability(&r.z, &self.sigma_e[r.band]);
        let t = r.frame as f64 / frame_rate;
        Ok((0..N_LSH).map(|l| QueryCode { code: extended_code(r.band, l, betas[l]), time_s: t, reliability: rel[l] }).collect())
    }
}
