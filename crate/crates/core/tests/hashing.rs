use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use audioid::hashing::{
    expected_collisions, extended_code, CatalogIndex, IndexParams, Posting, TableBuilder, TrackInfo, DEFAULT_LSH_SEED,
    N_LSH,
};
use audioid::search::{count_matches, QueryCode};

const RATE: f64 = 5.0;
const BANDS: usize = 5;

/// Every print emits all 51 codes of every band with random 16-bit values.
fn random_codes(rng: &mut ChaCha8Rng, n_prints: usize, mut f: impl FnMut(usize, u32)) {
    for t in 0..n_prints {
        for band in 0..BANDS {
            for l in 0..N_LSH {
                f(t, extended_code(band, l, rng.random::<u16>()));
            }
        }
    }
}

fn random_index(rng: &mut ChaCha8Rng, tracks: usize, secs: f64) -> CatalogIndex {
    let mut b = TableBuilder::new();
    let n = (secs * RATE) as usize;
    for track in 0..tracks as u32 {
        random_codes(rng, n, |t, code| b.insert(code, Posting { track, segment: 0, time: t as u16 }).unwrap());
    }
    CatalogIndex {
        params: IndexParams {
            n_lsh: N_LSH as u16,
            l_prime: N_LSH as u16,
            lsh_bits: 16,
            n_bands: BANDS as u16,
            lsh_seed: DEFAULT_LSH_SEED,
            segment_s: 1000.0,
            frame_rate: RATE,
            model_digest: 0,
        },
        tracks: (0..tracks).map(|i| TrackInfo { name: format!("r{i}"), duration_s: secs }).collect(),
        table: b.freeze(),
        n_prints: (tracks * n * BANDS) as u64,
    }
}

fn mean_collisions(ref_s: f64, query_s: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tracks = 40;
    let index = random_index(&mut rng, tracks, ref_s);
    let mut total = 0u64;
    let queries = 10;
    for _ in 0..queries {
        let mut codes = Vec::new();
        random_codes(&mut rng, (query_s * RATE) as usize, |t, code| {
            codes.push(QueryCode { code, time_s: t as f64 / RATE, reliability: 1.0 })
        });
        total += count_matches(&codes, &index, query_s).unwrap().counts.iter().map(|c| c.1).sum::<u64>();
    }
    total as f64 / (queries * tracks) as f64
}

#[test]
fn chance_collisions_scale_with_reference_length() {
    let query_s = 7.0;
    let mut measured = Vec::new();
    for (i, ref_s) in [15.0, 30.0, 60.0].into_iter().enumerate() {
        let got = mean_collisions(ref_s, query_s, 40 + i as u64);
        let want = expected_collisions(ref_s, query_s, RATE, N_LSH, BANDS);
        assert!((got / want - 1.0).abs() < 0.1, "{ref_s} s: {got} vs {want}");
        measured.push((ref_s, got));
    }
    // doubling the reference doubles the chance matches
    let slope = |a: (f64, f64), b: (f64, f64)| (b.1 / a.1).ln() / (b.0 / a.0).ln();
    for w in measured.windows(2) {
        let s = slope(w[0], w[1]);
        assert!((s - 1.0).abs() < 0.2, "slope {s}");
    }
}

#[test]
fn chance_collisions_scale_with_query_length() {
    let a = mean_collisions(30.0, 5.0, 50);
    let b = mean_collisions(30.0, 10.0, 51);
    assert!((b / a - 2.0).abs() < 0.3, "{a} -> {b}");
}
