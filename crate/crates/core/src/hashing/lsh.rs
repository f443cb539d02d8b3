//! Binarisation, reproducible bit sampling and code reliability.

use crate::error::{invalid, Error, Result};

pub const CODE_BITS: usize = 40;
pub const N_LSH: usize = 51;
pub const LSH_BITS: usize = 16;
pub const DEFAULT_LSH_SEED: u64 = 0x5EED_0F_B175;

/// 40-bit binarised reduced print.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HashCode(pub u64);

/// Bit `k` is set iff `z[k] >= 0`.
pub fn binarize(z: &[f64]) -> Result<HashCode> {
    if z.len() > 64 {
        return Err(invalid(format!("cannot binarise {} components", z.len())));
    }
    let mut g = 0u64;
    for (k, &v) in z.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite("reduced print"));
        }
        if v >= 0.0 {
            g |= 1 << k;
        }
    }
    Ok(HashCode(g))
}

/// SplitMix64 step.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bit positions sampled for each LSH code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LshSpec {
    pub seed: u64,
    pub selections: Vec<[u8; LSH_BITS]>,
}

impl LshSpec {
    /// Each selection is the prefix of a partial Fisher–Yates shuffle of
    /// `0..40` driven by one SplitMix64 stream seeded with `seed`.
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let selections = (0..N_LSH)
            .map(|_| {
                let mut pool: Vec<u8> = (0..CODE_BITS as u8).collect();
                let mut sel = [0u8; LSH_BITS];
                for j in 0..LSH_BITS {
                    let pick = j + (splitmix64(&mut state) % (CODE_BITS - j) as u64) as usize;
                    pool.swap(j, pick);
                    sel[j] = pool[j];
                }
                sel
            })
            .collect();
        Self { seed, selections }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = self.seed.to_le_bytes().to_vec();
        for s in &self.selections {
            v.extend_from_slice(s);
        }
        v
    }

    /// `β_ℓ` bit `j` = `Γ` bit `selections[ℓ][j]`.
    pub fn derive(&self, gamma: HashCode) -> [u16; N_LSH] {
        let mut out = [0u16; N_LSH];
        for (o, sel) in out.iter_mut().zip(&self.selections) {
            let mut b = 0u16;
            for (j, &k) in sel.iter().enumerate() {
                b |= (((gamma.0 >> k) & 1) as u16) << j;
            }
            *o = b;
        }
        out
    }

    /// Probability that no selected bit flips under independent Gaussian
    /// perturbations of standard deviation `sigma[k]`.
    pub fn reliability(&self, z: &[f64], sigma: &[f64]) -> [f64; N_LSH] {
        let keep: Vec<f64> = z.iter().zip(sigma).map(|(&v, &s)| 1.0 - flip_probability(v, s)).collect();
        let mut out = [0.0; N_LSH];
        for (o, sel) in out.iter_mut().zip(&self.selections) {
            *o = sel.iter().map(|&k| keep[k as usize]).product();
        }
        out
    }
}

/// `Φ(-|z| / σ)`.
pub fn flip_probability(z: f64, sigma: f64) -> f64 {
    0.5 * libm::erfc(z.abs() / (sigma * std::f64::consts::SQRT_2))
}

/// Indices of the `l_prime` most reliable codes, ascending. Ties go to the lower index.
pub fn select_reliable(reliability: &[f64], l_prime: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..reliability.len()).collect();
    idx.sort_by(|&a, &b| reliability[b].total_cmp(&reliability[a]).then(a.cmp(&b)));
    idx.truncate(l_prime);
    idx.sort_unstable();
    idx
}

/// 24-bit table key: `(band * 51 + ℓ) << 16 | β`.
pub fn extended_code(band: usize, lsh_index: usize, beta: u16) -> u32 {
    (((band * N_LSH + lsh_index) as u32) << 16) | beta as u32
}

/// Mean number of unchanged codes when `k` of the 40 bits are corrupted.
pub fn expected_unchanged(k: usize) -> f64 {
    N_LSH as f64 * (1.0 - k as f64 / CODE_BITS as f64).powi(LSH_BITS as i32)
}

/// Mean number of chance collisions per code set, `L / 2^b`.
pub fn collision_mean() -> f64 {
    N_LSH as f64 / (1u64 << LSH_BITS) as f64
}

/// Expected chance code matches between an unrelated query and reference.
pub fn expected_collisions(ref_s: f64, query_s: f64, rate: f64, l_prime: usize, n_bands: usize) -> f64 {
    ref_s * query_s * rate * rate * l_prime as f64 * n_bands as f64 / (1u64 << LSH_BITS) as f64
}

/// Matching codes expected for a perfect self-match.
pub fn expected_true_matches(ref_s: f64, query_s: f64, rate: f64, l_prime: usize, n_bands: usize) -> f64 {
    ref_s.min(query_s) * rate * l_prime as f64 * n_bands as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[-1.0; 40]).unwrap(), HashCode(0));
        assert_eq!(binarize(&[0.0; 40]).unwrap(), HashCode((1 << 40) - 1));
        let alt: Vec<f64> = (0..40).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(binarize(&alt).unwrap(), HashCode(0x55_5555_5555));
        assert!(binarize(&[f64::NAN]).is_err());
    }

    #[test]
    fn spec_is_deterministic_and_distinct() {
        let a = LshSpec::new(DEFAULT_LSH_SEED);
        assert_eq!(a.to_bytes(), LshSpec::new(DEFAULT_LSH_SEED).to_bytes());
        assert_ne!(a, LshSpec::new(DEFAULT_LSH_SEED + 1));
        let mut counts = [0usize; CODE_BITS];
        for s in &a.selections {
            let mut sorted = s.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), LSH_BITS);
            for &k in s {
                counts[k as usize] += 1;
            }
        }
        assert_eq!(counts.iter().sum::<usize>(), 816);
        assert!(counts.iter().all(|&c| c >= 10), "{counts:?}");
    }

    #[test]
    fn derive_examples() {
        let spec = LshSpec::new(DEFAULT_LSH_SEED);
        assert!(spec.derive(HashCode(0)).iter().all(|&b| b == 0));
        assert!(spec.derive(HashCode((1 << 40) - 1)).iter().all(|&b| b == u16::MAX));
    }

    #[test]
    fn reliability_examples() {
        let spec = LshSpec::new(DEFAULT_LSH_SEED);
        let sigma = vec![1.0; 40];
        let big = spec.reliability(&[1e6; 40], &sigma);
        assert!(big.iter().all(|&r| (r - 1.0).abs() < 1e-12));
        let mut z = vec![3.0; 40];
        z[spec.selections[7][0] as usize] = 0.0;
        let r = spec.reliability(&z, &sigma);
        assert!(r[7] <= 0.5);
        let r2 = spec.reliability(&z, &vec![2.0; 40]);
        assert!(r.iter().zip(&r2).all(|(a, b)| b <= a));
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_reliable(&[0.5; 51], 10), (0..10).collect::<Vec<_>>());
        assert_eq!(select_reliable(&[0.5; 51], 51).len(), 51);
        let mono: Vec<f64> = (0..51).map(|i| i as f64).collect();
        assert_eq!(select_reliable(&mono, 10), (41..51).collect::<Vec<_>>());
    }

    #[test]
    fn unchanged_code_means() {
        assert_eq!(expected_unchanged(0), 51.0);
        for (k, want) in [(1, 34.0), (5, 6.02), (9, 0.86)] {
            let got = expected_unchanged(k);
            assert!((got - want).abs() / want < 0.005, "k={k}: {got}");
        }
        assert_eq!(collision_mean(), 51.0 / 65536.0);
        assert!((collision_mean() - 7.782e-4).abs() < 1e-7);
        let rho20 = expected_unchanged(20) / collision_mean();
        assert!((rho20 - 1.0).abs() < 1e-12);
        assert!((expected_collisions(30.0, 30.0, 4.0, 10, 5) - 10.986).abs() < 1e-3);
        assert_eq!(expected_true_matches(30.0, 30.0, 4.0, 10, 5), 6000.0);
    }

    #[test]
    fn extended_code_layout() {
        assert_eq!(extended_code(0, 0, 0), 0);
        assert_eq!(extended_code(4, 50, 0xFFFF), (254 << 16) | 0xFFFF);
        assert!(extended_code(4, 50, 0xFFFF) < 1 << 24);
    }

    proptest! {
        #[test]
        fn single_flip_touches_exactly_the_selecting_codes(g in 0u64..(1 << 40), k in 0u8..40) {
            let spec = LshSpec::new(DEFAULT_LSH_SEED);
            let a = spec.derive(HashCode(g));
            let b = spec.derive(HashCode(g ^ (1 << k)));
            for l in 0..N_LSH {
                prop_assert_eq!(a[l] != b[l], spec.selections[l].contains(&k));
            }
        }
    }
}
