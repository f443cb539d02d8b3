//! Orthogonal matrices with entries ±1/√K.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Sizes `2^a · m` with `m ∈ {1, 12, 20}` up to 1024.
pub fn valid_sizes() -> Vec<usize> {
    let mut v: Vec<usize> = [1usize, 12, 20]
        .iter()
        .flat_map(|&m| (0..11).map(move |a| m << a))
        .filter(|&k| k <= 1024)
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Unnormalised ±1 Hadamard matrix of order `k` (Sylvester ⊗ Paley).
pub fn hadamard_int(k: usize) -> Result<Vec<Vec<i32>>> {
    if !valid_sizes().contains(&k) {
        return Err(invalid(format!("no Hadamard construction for size {k}")));
    }
    let (base, pow) = if k % 20 == 0 && (k / 20).is_power_of_two() {
        (paley_i(19), k / 20)
    } else if k % 12 == 0 && (k / 12).is_power_of_two() {
        (paley_i(11), k / 12)
    } else {
        (vec![vec![1]], k)
    };
    let mut h = vec![vec![1]];
    let h2 = vec![vec![1, 1], vec![1, -1]];
    let mut p = pow;
    while p > 1 {
        h = kron(&h, &h2);
        p /= 2;
    }
    Ok(kron(&h, &base))
}

/// `K × K` orthogonal matrix `H/√K`.
pub fn hadamard_matrix(k: usize) -> Result<DMatrix<f64>> {
    let h = hadamard_int(k)?;
    let s = 1.0 / (k as f64).sqrt();
    Ok(DMatrix::from_fn(k, k, |i, j| h[i][j] as f64 * s))
}

fn kron(a: &[Vec<i32>], b: &[Vec<i32>]) -> Vec<Vec<i32>> {
    let (na, nb) = (a.len(), b.len());
    let mut out = vec![vec![0; na * nb]; na * nb];
    for i in 0..na {
        for j in 0..na {
            for k in 0..nb {
                for l in 0..nb {
                    out[i * nb + k][j * nb + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

/// Paley construction I for a prime `q ≡ 3 (mod 4)`: order `q + 1`.
fn paley_i(q: usize) -> Vec<Vec<i32>> {
    let is_square: Vec<bool> = {
        let mut s = vec![false; q];
        for x in 1..q {
            s[x * x % q] = true;
        }
        s
    };
    let chi = |x: usize| -> i32 {
        if x % q == 0 {
            0
        } else if is_square[x % q] {
            1
        } else {
            -1
        }
    };
    let n = q + 1;
    // skew matrix S = [[0, 1ᵀ], [-1, Q]] with Q the Jacobsthal matrix
    let mut h = vec![vec![0i32; n]; n];
    for j in 1..n {
        h[0][j] = 1;
        h[j][0] = -1;
    }
    for i in 0..q {
        for j in 0..q {
            h[i + 1][j + 1] = chi(j + q - i);
        }
    }
    for (i, row) in h.iter_mut().enumerate() {
        row[i] += 1;
    }
    h
}

/// Exact integer check `H Hᵀ = K I`.
pub fn is_hadamard(h: &[Vec<i32>]) -> bool {
    let k = h.len();
    (0..k).all(|i| {
        h[i].len() == k
            && (0..k).all(|j| {
                let dot: i64 = h[i].iter().zip(&h[j]).map(|(&a, &b)| (a * b) as i64).sum();
                dot == if i == j { k as i64 } else { 0 }
            })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_list() {
        assert_eq!(
            valid_sizes(),
            vec![1, 2, 4, 8, 12, 16, 20, 24, 32, 40, 48, 64, 80, 96, 128, 160, 192, 256, 320, 384, 512, 640, 768, 1024]
        );
        assert!(hadamard_matrix(28).is_err());
        assert!(hadamard_matrix(0).is_err());
    }

    #[test]
    fn every_size_is_hadamard() {
        for k in valid_sizes() {
            assert!(is_hadamard(&hadamard_int(k).unwrap()), "size {k}");
        }
    }

    #[test]
    fn order_four_matches_reference() {
        let h = hadamard_int(4).unwrap();
        assert_eq!(h, vec![vec![1, 1, 1, 1], vec![1, -1, 1, -1], vec![1, 1, -1, -1], vec![1, -1, -1, 1]]);
        let m = hadamard_matrix(4).unwrap();
        assert!(m.iter().all(|&v| v.abs() == 0.5));
        assert_eq!(hadamard_matrix(1).unwrap(), DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn order_forty() {
        let m = hadamard_matrix(40).unwrap();
        let g = &m * m.transpose();
        assert!((g - DMatrix::identity(40, 40)).amax() < 1e-14);
        let e = 1.0 / 40f64.sqrt();
        assert!(m.iter().all(|&v| (v.abs() - e).abs() < 1e-15));
    }
}
