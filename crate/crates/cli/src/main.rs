use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use audioid::audio::{load_audio, write_wav};
use audioid::catalog::{build_index, IndexConfig, Manifest, ManifestEntry, Matcher};
use audioid::degrade::{apply, Degradation};
use audioid::evaluate::{evaluate, grid, EvalConfig, DEFAULT_GRID};
use audioid::hashing::{CatalogIndex, DEFAULT_LSH_SEED};
use audioid::reduction::ReductionModel;
use audioid::search::SearchConfig;
use audioid::synth::synth_track;
use audioid::train::{train_models, TrainConfig};
use audioid::{Error, Result};

#[derive(Parser)]
#[command(name = "audioid", version, about = "Audio fingerprinting: train, index, query, degrade and evaluate")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Learn the reduction model from a training manifest.
    Train(TrainArgs),
    /// Build the catalog index.
    Index(IndexArgs),
    /// Identify an audio excerpt.
    Query(QueryArgs),
    /// Apply a degradation spec to an audio file.
    Degrade(DegradeArgs),
    /// Recognition rates over degraded catalog excerpts.
    Evaluate(EvalArgs),
    /// Summarise a model or index file.
    Inspect { file: PathBuf },
    /// Write a synthetic music corpus and its manifest.
    SynthCorpus(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    anchors: usize,
    #[arg(long, default_value_t = 30)]
    variants: usize,
    #[arg(long, default_value_t = 80)]
    k_lda: usize,
    #[arg(long, default_value_t = 40)]
    k_out: usize,
    #[arg(long, default_value_t = 20_000)]
    ica_max_samples: usize,
    #[arg(long, default_value_t = 4.0)]
    min_originals_ratio: f64,
    /// Class centre = original print instead of member mean.
    #[arg(long)]
    original_centres: bool,
    /// Also write a model with ICA and Hadamard replaced by identities.
    #[arg(long)]
    ablated_out: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Codes kept per print.
    #[arg(long, default_value_t = 10)]
    l_prime: usize,
    #[arg(long, default_value_t = 15.0)]
    segment_s: f64,
    #[arg(long, default_value_t = DEFAULT_LSH_SEED)]
    lsh_seed: u64,
}

#[derive(Args, Clone)]
struct SearchArgs {
    /// Coherence margin in seconds.
    #[arg(long, default_value_t = 0.25)]
    sigma: f64,
    #[arg(long, default_value_t = 1.4)]
    alpha_max: f64,
    #[arg(long, default_value_t = 10)]
    candidates_min: usize,
    #[arg(long, default_value_t = 500)]
    candidates_max: usize,
    /// Disable cone weighting.
    #[arg(long)]
    no_cone: bool,
    /// Weight pairs by query code reliability.
    #[arg(long)]
    reliability_weighting: bool,
    /// Lowest coherence score reported as a match.
    #[arg(long, default_value_t = SearchConfig::default().min_score)]
    min_score: f64,
    /// A match must also score this many times the median of the other candidates.
    #[arg(long, default_value_t = SearchConfig::default().median_factor)]
    median_factor: f64,
}

impl SearchArgs {
    fn config(&self) -> SearchConfig {
        SearchConfig {
            sigma: self.sigma,
            alpha_max: self.alpha_max,
            candidate_min: self.candidates_min,
            candidate_max: self.candidates_max,
            cone_weighting: !self.no_cone,
            reliability_weighting: self.reliability_weighting,
            min_score: self.min_score,
            median_factor: self.median_factor,
        }
    }
}

#[derive(Args)]
struct QueryArgs {
    audio: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    /// Results to print.
    #[arg(long, default_value_t = 5)]
    top: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DegradeArgs {
    input: PathBuf,
    /// e.g. `white_noise:snr_db=12+pitch_shift:semitones=1`
    #[arg(long)]
    spec: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 200)]
    queries: usize,
    #[arg(long, default_value_t = 7.0)]
    duration: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Comma-separated degradation names.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GRID.map(String::from))]
    grid: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u8, 2, 3])]
    levels: Vec<u8>,
    /// Explicit `name:level` cells, overriding --grid and --levels.
    #[arg(long, value_delimiter = ',')]
    cells: Vec<String>,
    /// Codec command (raw PCM on stdin/stdout, `{rate}` placeholder) for mp3 and scenario cells.
    #[arg(long)]
    codec: Option<String>,
    #[command(flatten)]
    search: SearchArgs,
    /// Summary TSV output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-query TSV output.
    #[arg(long)]
    details: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    tracks: usize,
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 22050)]
    rate: u32,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: cannot configure {j} worker threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Index(a) => cmd_index(a),
        Cmd::Query(a) => cmd_query(a),
        Cmd::Degrade(a) => cmd_degrade(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Inspect { file } => cmd_inspect(&file),
        Cmd::SynthCorpus(a) => cmd_synth(a),
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let cfg = TrainConfig {
        anchors_per_track: a.anchors,
        variants: a.variants,
        k_lda: a.k_lda,
        k_out: a.k_out,
        seed: a.seed,
        ica_max_samples: a.ica_max_samples,
        min_originals_ratio: a.min_originals_ratio,
        original_centres: a.original_centres,
        ..TrainConfig::default()
    };
    let ablations: &[bool] = if a.ablated_out.is_some() { &[false, true] } else { &[false] };
    let (models, report) = train_models(&manifest, &cfg, ablations)?;
    models[0].save(&a.out)?;
    if let Some(p) = &a.ablated_out {
        models[1].save(p)?;
    }
    print!("{report}");
    println!("model written to {} (digest {:016x})", a.out.display(), models[0].digest());
    Ok(())
}

fn cmd_index(a: IndexArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let model = ReductionModel::load(&a.model)?;
    let cfg = IndexConfig { l_prime: a.l_prime, segment_s: a.segment_s, lsh_seed: a.lsh_seed };
    let index = build_index(&manifest, &model, &cfg)?;
    index.save(&a.out)?;
    print_index_stats(&index);
    println!("index written to {}", a.out.display());
    Ok(())
}

fn print_index_stats(index: &CatalogIndex) {
    let s = index.table.load_stats();
    let n = index.tracks.len().max(1);
    let secs: f64 = index.tracks.iter().map(|t| t.duration_s).sum();
    println!("tracks {}  total {:.1} s", index.tracks.len(), secs);
    println!(
        "prints {}  ({:.1} per track, {:.2} per second)  codes per print {}",
        index.n_prints,
        index.n_prints as f64 / n as f64,
        index.n_prints as f64 / secs.max(1e-9),
        index.params.l_prime
    );
    println!("postings {}  non-empty buckets {}  max load {}  max/mean {:.2}", s.entries, s.non_empty, s.max_load, s.max_over_mean);
    let hist = index.table.load_histogram(8);
    let cells: Vec<String> = hist.iter().enumerate().map(|(i, c)| format!("{}{}:{c}", i, if i + 1 == hist.len() { "+" } else { "" })).collect();
    println!("bucket load histogram {}", cells.join(" "));
}

fn cmd_query(a: QueryArgs) -> Result<()> {
    let model = ReductionModel::load(&a.model)?;
    let index = CatalogIndex::load(&a.index)?;
    let audio = load_audio(&a.audio)?;
    let matcher = Matcher::new(&model, &index)?;
    let outcome = matcher.query(&audio, &a.search.config())?;
    let name = |t: u32| index.tracks[t as usize].name.clone();
    let top = &outcome.results[..outcome.results.len().min(a.top)];
    if a.json {
        let results: Vec<_> = top
            .iter()
            .enumerate()
            .map(|(i, r)| {
                json!({
                    "rank": i + 1,
                    "track_id": name(r.track),
                    "step1_count": r.step1_count,
                    "coherence": r.score,
                    "alpha": r.alpha,
                    "delta_t_star": r.delta_t_star,
                    "low_confidence": r.low_confidence,
                })
            })
            .collect();
        let v = json!({
            "match": outcome.matched,
            "step1_top": outcome.step1_top().map(name),
            "step2_top": outcome.step2_top().map(name),
            "results": results,
        });
        println!("{v}");
        return Ok(());
    }
    println!("rank\ttrack_id\tstep1_count\tcoherence\talpha\tdelta_t_star");
    for (i, r) in top.iter().enumerate() {
        println!("{}\t{}\t{}\t{:.2}\t{:.4}\t{:.3}", i + 1, name(r.track), r.step1_count, r.score, r.alpha, r.delta_t_star);
    }
    match outcome.results.first() {
        Some(r) if outcome.matched => println!("match: {} at {:.2} s (alpha {:.3})", name(r.track), r.delta_t_star, r.alpha),
        _ => println!("no match"),
    }
    Ok(())
}

fn cmd_degrade(a: DegradeArgs) -> Result<()> {
    let d: Degradation = a.spec.parse()?;
    let input = load_audio(&a.input)?;
    let mut out = apply(&d, &input, a.seed)?;
    let peak = out.peak();
    if peak > 1.0 {
        out.samples.iter_mut().for_each(|s| *s /= peak);
        eprintln!("note: output scaled by {:.3} to avoid clipping", 1.0 / peak);
    }
    write_wav(&a.out, &out)?;
    println!("{} -> {} ({})", a.input.display(), a.out.display(), d);
    Ok(())
}

fn cmd_evaluate(a: EvalArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let model = ReductionModel::load(&a.model)?;
    let index = CatalogIndex::load(&a.index)?;
    let cells = if a.cells.is_empty() {
        let names: Vec<&str> = a.grid.iter().map(String::as_str).collect();
        grid(&names, &a.levels)
    } else {
        a.cells
            .iter()
            .map(|c| {
                let (n, l) = c.split_once(':').ok_or_else(|| Error::InvalidArgument(format!("cell `{c}` is not name:level")))?;
                let l = l.parse::<u8>().map_err(|_| Error::InvalidArgument(format!("bad level in `{c}`")))?;
                Ok((n.to_string(), l))
            })
            .collect::<Result<_>>()?
    };
    let cfg = EvalConfig {
        queries: a.queries,
        duration_s: a.duration,
        seed: a.seed,
        cells,
        codec: a.codec,
        search: a.search.config(),
    };
    let report = evaluate(&manifest, &index, &model, &cfg)?;
    print!("{}", report.table());
    if let Some(p) = &a.out {
        std::fs::write(p, report.to_tsv())?;
    }
    if let Some(p) = &a.details {
        std::fs::write(p, report.details_tsv(&index))?;
    }
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    match bytes.get(..4) {
        Some(b"BMRM") => {
            let m = ReductionModel::from_bytes(&bytes)?;
            println!("model {}  digest {:016x}", path.display(), m.digest());
            println!("bands {}  input {}  output {}", m.n_bands(), m.input_dim(), m.output_dim());
            for (i, b) in m.bands.iter().enumerate() {
                println!(
                    "band {i}: j0 {}  lda {}  out {}  ica {}",
                    b.j0(),
                    b.lda_dim(),
                    b.output_dim(),
                    if b.ica_converged { "converged" } else { "whitening fallback" }
                );
            }
            for (k, v) in &m.metadata {
                println!("{k}={v}");
            }
        }
        Some(b"BMIX") => {
            let index = CatalogIndex::from_bytes(&bytes)?;
            let p = &index.params;
            println!("index {}  model digest {:016x}", path.display(), p.model_digest);
            println!(
                "L {}  L' {}  bits {}  bands {}  lsh seed {}  segment {} s  frame rate {} /s",
                p.n_lsh, p.l_prime, p.lsh_bits, p.n_bands, p.lsh_seed, p.segment_s, p.frame_rate
            );
            print_index_stats(&index);
        }
        _ => return Err(Error::Format(format!("{} is neither a model nor an index file", path.display()))),
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    use rayon::prelude::*;
    let entries: Vec<ManifestEntry> = (0..a.tracks)
        .into_par_iter()
        .map(|i| {
            let id = format!("track{i:04}");
            let file = a.out.join(format!("{id}.wav"));
            write_wav(&file, &synth_track(a.seed.wrapping_add(i as u64), a.duration, a.rate)?)?;
            Ok(ManifestEntry { id, path: PathBuf::from(format!("{}.wav", &file.file_stem().unwrap().to_string_lossy())), label: None })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest { entries };
    let mpath = a.out.join("manifest.tsv");
    std::fs::write(&mpath, manifest.to_tsv())?;
    println!("{} tracks written, manifest {}", a.tracks, mpath.display());
    Ok(())
}
