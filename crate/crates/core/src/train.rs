//! Learning the per-band reduction chain from a training manifest.
//!
//! Pass A accumulates the Gram matrix of original prints for ICCR. Pass B
//! builds the classes (one per chosen anchor, its original print and its
//! degraded variants) and accumulates LDA scatter. Pass C recomputes the
//! classes in LDA space to fit ICA, OMPCA and the degradation noise model;
//! the class matrices of pass B are spilled to a temporary file so the
//! degraded variants are generated only once.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Seek, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio::{load_audio, prepare, AudioBuffer};
use crate::catalog::Manifest;
use crate::degrade::{alternating_gains, apply, Degradation};
use crate::error::{invalid, Error, Result};
use crate::fingerprint::Analyzer;
use crate::hashing::splitmix64;
use crate::print::{HdPrint, N_BANDS, PRINT_DIM};
use crate::reduction::{
    fit_iccr_gram, fit_ica, fit_lda, fit_ompca, hadamard_matrix, BandModel, GramAccumulator, IcaConfig, ReductionModel,
    ScatterAccumulator,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Classes per training track.
    pub anchors_per_track: usize,
    /// Degraded variants per class.
    pub variants: usize,
    pub k_lda: usize,
    pub k_out: usize,
    pub seed: u64,
    pub ica: IcaConfig,
    /// ICA is fitted on at most this many original prints per band.
    pub ica_max_samples: usize,
    /// Tracks processed together between accumulator updates.
    pub batch_tracks: usize,
    /// Required original prints per input dimension for ICCR.
    pub min_originals_ratio: f64,
    /// Use the original print instead of the member mean as class centre.
    pub original_centres: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            anchors_per_track: 10,
            variants: 30,
            k_lda: 80,
            k_out: 40,
            seed: 1,
            ica: IcaConfig::default(),
            ica_max_samples: 20_000,
            batch_tracks: 8,
            min_originals_ratio: 4.0,
            original_centres: false,
        }
    }
}

/// Seconds of context kept before an anchor when degrading a class excerpt.
const PRE_S: f64 = 1.0;
/// Upper bound on the seconds kept after an anchor.
const POST_S: f64 = 4.5;
/// Margin after the (time-scaled) print window.
const TAIL_S: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct BandReport {
    pub j0: usize,
    pub lda_eigenvalues: Vec<f64>,
    pub lda_shrinkage: f64,
    pub ica_converged: bool,
    pub ica_iterations: usize,
    pub ompca_quotients: Vec<f64>,
    pub mean_pos_norm: f64,
    pub mean_neg_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub tracks: usize,
    pub classes: usize,
    pub records: usize,
    pub originals: usize,
    pub bands: Vec<BandReport>,
}

impl std::fmt::Display for TrainReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "tracks {}  classes {}  records {}  original prints/band {}", self.tracks, self.classes, self.records, self.originals)?;
        for (b, r) in self.bands.iter().enumerate() {
            let head = |v: &[f64]| v.iter().take(5).map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
            writeln!(
                f,
                "band {b}: j0 {}  lda eig [{} ...] shrink {:.3e}  ica {} ({} it)  ompca q [{} ...]  |pos| {:.3} |neg| {:.3}",
                r.j0,
                head(&r.lda_eigenvalues),
                r.lda_shrinkage,
                if r.ica_converged { "converged" } else { "whitening fallback" },
                r.ica_iterations,
                head(&r.ompca_quotients),
                r.mean_pos_norm,
                r.mean_neg_norm
            )?;
        }
        Ok(())
    }
}

fn mix_seed(parts: &[u64]) -> u64 {
    let mut s = 0x7261_696E_u64;
    for &p in parts {
        s ^= p;
        s = splitmix64(&mut s);
    }
    s
}

/// A random training degradation.
pub fn training_variant(rng: &mut ChaCha8Rng) -> Degradation {
    match rng.random_range(0..10) {
        0 => Degradation::WhiteNoise { snr_db: rng.random_range(0.0..20.0) },
        1 => Degradation::PinkNoise { snr_db: rng.random_range(0.0..20.0) },
        2 => Degradation::GraphicEq { gains_db: (0..10).map(|_| rng.random_range(-9.0..9.0)).collect() },
        3 => Degradation::Distortion { input_gain_db: rng.random_range(5.0..24.0) },
        4 => Degradation::Tremolo { depth_db: rng.random_range(3.0..9.0), rate_hz: 4.0 },
        5 => Degradation::DynCompress {
            ratio: [2.0, 8.0, 50.0][rng.random_range(0..3)],
            release_ms: [100.0, 10.0, 1.0][rng.random_range(0..3)],
            threshold_db: 0.0,
        },
        6 => Degradation::ReverbSynthetic { mix_db: rng.random_range(0.0..9.0), rt60_s: 0.8 },
        7 => Degradation::PitchShift { semitones: rng.random_range(-2.0..2.0) },
        8 => Degradation::TimeStretch { stretch_cents: rng.random_range(-45.0..45.0) },
        _ => Degradation::Chain(vec![
            Degradation::TimeStretch { stretch_cents: rng.random_range(-12.0..12.0) },
            Degradation::GraphicEq { gains_db: alternating_gains(3.0) },
            Degradation::DynCompress { ratio: 2.0, release_ms: 100.0, threshold_db: 0.0 },
            Degradation::ReverbSynthetic { mix_db: 3.0, rt60_s: 0.8 },
            Degradation::WhiteNoise { snr_db: rng.random_range(6.0..18.0) },
        ]),
    }
}

/// `count` indices spread evenly over `0..n`.
fn spread(n: usize, count: usize) -> Vec<usize> {
    if n <= count {
        return (0..n).collect();
    }
    if count == 1 {
        return vec![n / 2];
    }
    (0..count).map(|i| (i * (n - 1) + (count - 1) / 2) / (count - 1)).collect()
}

struct Prepared {
    buf: AudioBuffer,
    spec: crate::audio::Spectrogram,
    anchors: Vec<usize>,
}

fn prepare_track(analyzer: &Analyzer, path: &std::path::Path) -> Result<Prepared> {
    let buf = prepare(&load_audio(path)?)?;
    let spec = analyzer.spectrogram_prepared(&buf)?;
    let anchors = analyzer.anchors(&spec)?;
    Ok(Prepared { buf, spec, anchors })
}

/// Class anchors: analysis times leaving room for the degraded excerpt.
fn class_anchors(analyzer: &Analyzer, p: &Prepared, count: usize) -> Vec<usize> {
    let fr = analyzer.frame_rate();
    let dur = p.buf.duration();
    let ok: Vec<usize> = p.anchors.iter().copied().filter(|&a| a as f64 / fr + POST_S <= dur).collect();
    spread(ok.len(), count).into_iter().map(|i| ok[i]).collect()
}

fn band_rows(prints: &[HdPrint]) -> [Vec<f64>; N_BANDS] {
    let mut rows: [Vec<f64>; N_BANDS] = Default::default();
    for p in prints {
        rows[p.band].extend_from_slice(&p.coeffs);
    }
    rows
}

/// Records of one class: the original prints then each surviving variant,
/// every record holding one print per band.
fn class_records(analyzer: &Analyzer, p: &Prepared, anchor: usize, cfg: &TrainConfig, ids: [u64; 2]) -> Result<Vec<Vec<HdPrint>>> {
    let mut out = Vec::with_capacity(cfg.variants + 1);
    let Some(orig) = analyzer.prints_at(&p.spec, anchor) else {
        return Ok(out);
    };
    out.push(orig);
    let hop = analyzer.hop_len();
    let fr = analyzer.frame_rate();
    let sr = p.buf.sample_rate as f64;
    let pre_frames = (PRE_S * fr).round() as usize;
    let start_frame = anchor.saturating_sub(pre_frames);
    let start = start_frame * hop;
    let rel_s = (anchor - start_frame) as f64 / fr;
    let span = (analyzer.extractor().window_frames() - 1) * hop + analyzer.window_len();
    for v in 0..cfg.variants {
        let seed = mix_seed(&[cfg.seed, ids[0], ids[1], v as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = training_variant(&mut rng);
        // keep just enough signal for one print window after the variant's time scaling
        let factor = d.duration_factor().unwrap_or(1.0).max(1.0);
        let post = ((span as f64 * factor + TAIL_S * sr) as usize).min((POST_S * sr) as usize);
        let end = (anchor * hop + post).min(p.buf.len());
        let excerpt = AudioBuffer::new(p.buf.samples[start..end].to_vec(), p.buf.sample_rate)?;
        let y = apply(&d, &excerpt, rng.random())?;
        let factor = y.len() as f64 / excerpt.len() as f64;
        let f0 = (rel_s * factor * fr).round() as usize * hop;
        if f0 + span > y.len() {
            continue;
        }
        let slice = AudioBuffer::new(y.samples[f0..f0 + span].to_vec(), y.sample_rate)?;
        let spec = analyzer.spectrogram_prepared(&slice)?;
        if let Some(prints) = analyzer.prints_at(&spec, 0) {
            out.push(prints);
        }
    }
    Ok(out)
}

/// Append-only store of class matrices, read back in write order.
struct Spill {
    writer: BufWriter<std::fs::File>,
}

impl Spill {
    fn new() -> Result<Self> {
        Ok(Self { writer: BufWriter::new(tempfile::tempfile()?) })
    }

    fn push(&mut self, m: &DMatrix<f64>) -> Result<()> {
        self.writer.write_all(&(m.nrows() as u64).to_le_bytes())?;
        self.writer.write_all(&(m.ncols() as u64).to_le_bytes())?;
        for v in m.as_slice() {
            self.writer.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn into_reader(self) -> Result<SpillReader> {
        let mut f = self.writer.into_inner().map_err(|e| e.into_error())?;
        f.rewind()?;
        Ok(SpillReader { reader: BufReader::new(f) })
    }
}

struct SpillReader {
    reader: BufReader<std::fs::File>,
}

impl SpillReader {
    fn next(&mut self) -> Result<DMatrix<f64>> {
        let mut w = [0u8; 8];
        self.reader.read_exact(&mut w)?;
        let r = u64::from_le_bytes(w) as usize;
        self.reader.read_exact(&mut w)?;
        let c = u64::from_le_bytes(w) as usize;
        let mut bytes = vec![0u8; r * c * 8];
        self.reader.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        Ok(DMatrix::from_vec(r, c, data))
    }
}

fn rows_to_matrix(rows: &[f64], dim: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows.len() / dim, dim, rows)
}

fn batches<T>(items: &[T], size: usize) -> impl Iterator<Item = (usize, &[T])> {
    items.chunks(size.max(1)).enumerate().map(move |(i, c)| (i * size.max(1), c))
}

/// Learns the full model.
pub fn train(manifest: &Manifest, cfg: &TrainConfig) -> Result<(ReductionModel, TrainReport)> {
    let (mut models, report) = train_models(manifest, cfg, &[false])?;
    Ok((models.remove(0), report))
}

/// Learns one model per entry of `ablations`; `true` replaces the ICA and
/// Hadamard stages with identities (OMPCA then runs on the LDA output).
pub fn train_models(manifest: &Manifest, cfg: &TrainConfig, ablations: &[bool]) -> Result<(Vec<ReductionModel>, TrainReport)> {
    if manifest.is_empty() {
        return Err(invalid("empty training manifest"));
    }
    if cfg.anchors_per_track == 0 || cfg.variants == 0 || cfg.k_out == 0 || cfg.k_out > cfg.k_lda {
        return Err(invalid("need anchors_per_track, variants > 0 and 0 < K_out <= K_lda"));
    }
    let max_classes = manifest.len() * cfg.anchors_per_track;
    if cfg.k_lda >= max_classes {
        return Err(invalid(format!("K < C violated: K = {}, C = {max_classes}", cfg.k_lda)));
    }
    hadamard_matrix(cfg.k_out)?;
    let analyzer = Analyzer::default();
    let entries = &manifest.entries;

    // pass A
    let mut grams: Vec<GramAccumulator> = (0..N_BANDS).map(|_| GramAccumulator::new(PRINT_DIM)).collect();
    let mut chosen: Vec<Vec<usize>> = Vec::with_capacity(entries.len());
    for (_, batch) in batches(entries, cfg.batch_tracks) {
        let res: Vec<Result<([Vec<f64>; N_BANDS], Vec<usize>)>> = batch
            .par_iter()
            .map(|e| {
                let p = prepare_track(&analyzer, &e.path)?;
                let prints = analyzer.extractor().compute_prints(&p.spec, &p.anchors);
                Ok((band_rows(&prints), class_anchors(&analyzer, &p, cfg.anchors_per_track)))
            })
            .collect();
        for r in res {
            let (rows, anchors) = r?;
            for (b, g) in grams.iter_mut().enumerate() {
                if !rows[b].is_empty() {
                    g.add_rows(&rows_to_matrix(&rows[b], PRINT_DIM));
                }
            }
            chosen.push(anchors);
        }
    }
    let originals = grams[0].count();
    let classes: usize = chosen.iter().map(Vec::len).sum();
    if (originals as f64) < cfg.min_originals_ratio * PRINT_DIM as f64 {
        return Err(Error::InsufficientData(format!(
            "{originals} original prints per band, need at least {:.0} for dependency rejection",
            cfg.min_originals_ratio * PRINT_DIM as f64
        )));
    }
    if cfg.k_lda >= classes {
        return Err(invalid(format!("K < C violated: K = {}, C = {classes}", cfg.k_lda)));
    }
    let p_iccr: Vec<DMatrix<f64>> = grams.iter().map(|g| fit_iccr_gram(g.gram())).collect::<Result<_>>()?;
    drop(grams);

    // pass B
    let mut scatter: Vec<ScatterAccumulator> = p_iccr.iter().map(|p| ScatterAccumulator::new(p.nrows())).collect();
    let mut records = 0;
    let mut spill = Spill::new()?;
    let mut spilled = 0;
    for (off, batch) in batches(entries, cfg.batch_tracks) {
        let res: Vec<Result<Vec<Vec<DMatrix<f64>>>>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, e)| {
                let t = off + i;
                let p = prepare_track(&analyzer, &e.path)?;
                let mut out = Vec::new();
                for (a, &anchor) in chosen[t].iter().enumerate() {
                    let recs = class_records(&analyzer, &p, anchor, cfg, [t as u64, a as u64])?;
                    if recs.len() < 2 {
                        continue;
                    }
                    let rows = band_rows(&recs.concat());
                    out.push((0..N_BANDS).map(|b| rows_to_matrix(&rows[b], PRINT_DIM) * p_iccr[b].transpose()).collect());
                }
                Ok(out)
            })
            .collect();
        for r in res {
            for class in r? {
                records += class[0].nrows();
                for (b, m) in class.iter().enumerate() {
                    let centre = cfg.original_centres.then(|| m.row(0).transpose());
                    scatter[b].add_class(m, centre.as_ref())?;
                    spill.push(m)?;
                }
                spilled += 1;
            }
        }
    }
    let lda: Vec<_> = scatter.iter().map(|s| fit_lda(&s.finalize()?, cfg.k_lda)).collect::<Result<_>>()?;
    drop(scatter);
    let to_lda: Vec<DMatrix<f64>> = (0..N_BANDS).map(|b| &lda[b].projection * &p_iccr[b]).collect();
    let lda_t: Vec<DMatrix<f64>> = lda.iter().map(|l| l.projection.transpose()).collect();

    // pass C
    let mut orig_z: Vec<Vec<f64>> = vec![Vec::new(); N_BANDS];
    // per band, per class: (original, degraded variants) in LDA space
    let mut class_z: Vec<Vec<(DVector<f64>, DMatrix<f64>)>> = vec![Vec::new(); N_BANDS];
    for (_, batch) in batches(entries, cfg.batch_tracks) {
        let res: Vec<Result<[Vec<f64>; N_BANDS]>> = batch
            .par_iter()
            .map(|e| {
                let p = prepare_track(&analyzer, &e.path)?;
                let prints = analyzer.extractor().compute_prints(&p.spec, &p.anchors);
                let rows = band_rows(&prints);
                let mut origs: [Vec<f64>; N_BANDS] = Default::default();
                for b in 0..N_BANDS {
                    if !rows[b].is_empty() {
                        let z = rows_to_matrix(&rows[b], PRINT_DIM) * to_lda[b].transpose();
                        origs[b] = z.transpose().as_slice().to_vec();
                    }
                }
                Ok(origs)
            })
            .collect();
        for r in res {
            let origs = r?;
            for b in 0..N_BANDS {
                orig_z[b].extend_from_slice(&origs[b]);
            }
        }
    }
    let mut reader = spill.into_reader()?;
    for _ in 0..spilled {
        for (b, zb) in class_z.iter_mut().enumerate() {
            let m = reader.next()? * &lda_t[b];
            let o = m.row(0).transpose();
            let d = m.rows(1, m.nrows() - 1).into_owned();
            zb.push((o, d));
        }
    }
    drop(reader);

    let mut models: Vec<Vec<BandModel>> = vec![Vec::new(); ablations.len()];
    let mut band_reports = Vec::with_capacity(N_BANDS);
    for b in 0..N_BANDS {
        let k = cfg.k_lda;
        let all = DMatrix::from_row_slice(orig_z[b].len() / k, k, &orig_z[b]);
        let pick = spread(all.nrows(), cfg.ica_max_samples);
        let ica_in = DMatrix::from_fn(pick.len(), k, |i, j| all[(pick[i], j)]);
        let ica = fit_ica(&ica_in, &cfg.ica)?;

        let classes = &class_z[b];
        let n_deg: usize = classes.iter().map(|c| c.1.nrows()).sum();
        let mut pos = DMatrix::zeros(k, n_deg);
        let mut neg = DMatrix::zeros(k, n_deg);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x4E45_47, b as u64]));
        let mut col = 0;
        for (ci, (o, d)) in classes.iter().enumerate() {
            for r in 0..d.nrows() {
                let x = d.row(r).transpose();
                let mut other = rng.random_range(0..classes.len() - 1);
                if other >= ci {
                    other += 1;
                }
                pos.set_column(col, &(&x - o));
                neg.set_column(col, &(&x - &classes[other].0));
                col += 1;
            }
        }
        let mean_norm = |m: &DMatrix<f64>| m.column_iter().map(|c| c.norm()).sum::<f64>() / m.ncols().max(1) as f64;
        let mut report = BandReport {
            j0: p_iccr[b].nrows(),
            lda_eigenvalues: lda[b].eigenvalues.clone(),
            lda_shrinkage: lda[b].shrinkage,
            ica_converged: ica.converged,
            ica_iterations: ica.iterations,
            ompca_quotients: Vec::new(),
            mean_pos_norm: 0.0,
            mean_neg_norm: 0.0,
        };
        for (m, &ablate) in ablations.iter().enumerate() {
            let (p_ica, t_ica, p_ht) = if ablate {
                (DMatrix::identity(k, k), DVector::zeros(k), DMatrix::identity(cfg.k_out, cfg.k_out))
            } else {
                (ica.projection.clone(), ica.offset.clone(), hadamard_matrix(cfg.k_out)?)
            };
            let pos_i = &p_ica * &pos;
            let neg_i = &p_ica * &neg;
            let om = fit_ompca(&pos_i, &neg_i, cfg.k_out)?;
            let e = &p_ht * &om.projection * &pos_i;
            let sigma_e = DVector::from_fn(cfg.k_out, |i, _| (e.row(i).map(|v| v * v).sum() / e.ncols().max(1) as f64).sqrt().max(1e-12));
            if m == 0 {
                report.ompca_quotients = om.quotients.clone();
                report.mean_pos_norm = mean_norm(&pos_i);
                report.mean_neg_norm = mean_norm(&neg_i);
            }
            let mut band = BandModel::new(
                p_iccr[b].clone(),
                lda[b].projection.clone(),
                p_ica,
                t_ica,
                om.projection,
                p_ht,
                sigma_e,
                ablate || ica.converged,
            )?;
            band.quantize();
            models[m].push(band);
        }
        band_reports.push(report);
    }

    let report = TrainReport { tracks: entries.len(), classes, records, originals, bands: band_reports };
    let mut out = Vec::with_capacity(ablations.len());
    for (bands, &ablate) in models.into_iter().zip(ablations) {
        let mut meta = BTreeMap::new();
        meta.insert("seed".into(), cfg.seed.to_string());
        meta.insert("ica_seed".into(), cfg.ica.seed.to_string());
        meta.insert("anchors_per_track".into(), cfg.anchors_per_track.to_string());
        meta.insert("variants".into(), cfg.variants.to_string());
        meta.insert("k_lda".into(), cfg.k_lda.to_string());
        meta.insert("k_out".into(), cfg.k_out.to_string());
        meta.insert("tracks".into(), report.tracks.to_string());
        meta.insert("classes".into(), classes.to_string());
        meta.insert("records".into(), records.to_string());
        meta.insert("original_prints".into(), originals.to_string());
        meta.insert("ica_samples".into(), cfg.ica_max_samples.min(originals).to_string());
        meta.insert("class_centre".into(), if cfg.original_centres { "original" } else { "mean" }.into());
        if ablate {
            meta.insert("ablation".into(), "ica+hadamard".into());
        }
        out.push(ReductionModel::new(bands, meta)?);
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_is_even_and_bounded() {
        assert_eq!(spread(3, 10), vec![0, 1, 2]);
        assert_eq!(spread(10, 1), vec![5]);
        let s = spread(100, 10);
        assert_eq!(s.len(), 10);
        assert_eq!((s[0], s[9]), (0, 99));
        assert!(s.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn variants_are_seeded() {
        let a = training_variant(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, training_variant(&mut ChaCha8Rng::seed_from_u64(4)));
    }

    #[test]
    fn refuses_too_few_classes() {
        let m = Manifest {
            entries: (0..5)
                .map(|i| crate::catalog::ManifestEntry { id: i.to_string(), path: "x.wav".into(), label: None })
                .collect(),
        };
        let cfg = TrainConfig::default();
        let err = train(&m, &cfg).unwrap_err().to_string();
        assert!(err.contains("K < C violated"), "{err}");
    }
}
