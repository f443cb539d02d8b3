//! The fitted per-band affine chain and its binary file format.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::binio::{put_matrix, put_u16, put_u32, put_vector, Reader};
use crate::error::{invalid, Error, Result};
use crate::print::HdPrint;

const MAGIC: &[u8; 4] = b"BMRM";
const VERSION: u16 = 1;

/// One band's chain `x ↦ P_ht P_ompca (P_ica P_lda P_iccr x + t_ica)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandModel {
    pub p_iccr: DMatrix<f64>,
    pub p_lda: DMatrix<f64>,
    pub p_ica: DMatrix<f64>,
    pub t_ica: DVector<f64>,
    pub p_ompca: DMatrix<f64>,
    pub p_ht: DMatrix<f64>,
    /// Per-component standard deviation of the reduced-print degradation noise.
    pub sigma_e: DVector<f64>,
    pub ica_converged: bool,
    p_final: DMatrix<f64>,
    t_final: DVector<f64>,
}

impl BandModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p_iccr: DMatrix<f64>,
        p_lda: DMatrix<f64>,
        p_ica: DMatrix<f64>,
        t_ica: DVector<f64>,
        p_ompca: DMatrix<f64>,
        p_ht: DMatrix<f64>,
        sigma_e: DVector<f64>,
        ica_converged: bool,
    ) -> Result<Self> {
        let shapes_ok = p_lda.ncols() == p_iccr.nrows()
            && p_ica.shape() == (p_lda.nrows(), p_lda.nrows())
            && t_ica.len() == p_lda.nrows()
            && p_ompca.ncols() == p_lda.nrows()
            && p_ht.shape() == (p_ompca.nrows(), p_ompca.nrows())
            && sigma_e.len() == p_ompca.nrows();
        if !shapes_ok {
            return Err(invalid("reduction stage shapes do not chain"));
        }
        let mut m = Self {
            p_iccr,
            p_lda,
            p_ica,
            t_ica,
            p_ompca,
            p_ht,
            sigma_e,
            ica_converged,
            p_final: DMatrix::zeros(0, 0),
            t_final: DVector::zeros(0),
        };
        m.compose_final();
        Ok(m)
    }

    /// Recomputes `P_final` and `t_final` from the stages.
    pub fn compose_final(&mut self) {
        let head = &self.p_ht * &self.p_ompca;
        self.p_final = &head * (&self.p_ica * (&self.p_lda * &self.p_iccr));
        self.t_final = &head * &self.t_ica;
    }

    /// Rounds every stage to single precision and recomposes, so that the
    /// in-memory model is exactly what the file stores.
    pub fn quantize(&mut self) {
        for m in [&mut self.p_iccr, &mut self.p_lda, &mut self.p_ica, &mut self.p_ompca, &mut self.p_ht] {
            m.apply(|v| *v = *v as f32 as f64);
        }
        for v in [&mut self.t_ica, &mut self.sigma_e] {
            v.apply(|x| *x = *x as f32 as f64);
        }
        self.compose_final();
    }

    pub fn p_final(&self) -> &DMatrix<f64> {
        &self.p_final
    }

    pub fn t_final(&self) -> &DVector<f64> {
        &self.t_final
    }

    pub fn input_dim(&self) -> usize {
        self.p_iccr.ncols()
    }

    pub fn j0(&self) -> usize {
        self.p_iccr.nrows()
    }

    pub fn lda_dim(&self) -> usize {
        self.p_lda.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.p_ompca.nrows()
    }

    /// `P_final x + t_final`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.t_final.clone();
        out.gemv(1.0, &self.p_final, &DVector::from_column_slice(x), 1.0);
        out.as_slice().to_vec()
    }

    /// Rows of `xs` (`n × J`) reduced to rows of the result (`n × K`).
    pub fn apply_rows(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = xs * self.p_final.transpose();
        for mut row in out.row_iter_mut() {
            row += self.t_final.transpose();
        }
        out
    }

    /// Stage-by-stage application, for checking the factorisation.
    pub fn apply_chain(&self, x: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        let z = &self.p_lda * (&self.p_iccr * x);
        let y = &self.p_ica * z + &self.t_ica;
        (&self.p_ht * (&self.p_ompca * y)).as_slice().to_vec()
    }
}

/// Per-band models plus free-form training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionModel {
    pub bands: Vec<BandModel>,
    pub metadata: BTreeMap<String, String>,
}

impl ReductionModel {
    pub fn new(bands: Vec<BandModel>, metadata: BTreeMap<String, String>) -> Result<Self> {
        if bands.is_empty() {
            return Err(invalid("model needs at least one band"));
        }
        let (j, l, k) = (bands[0].input_dim(), bands[0].lda_dim(), bands[0].output_dim());
        if bands.iter().any(|b| b.input_dim() != j || b.lda_dim() != l || b.output_dim() != k) {
            return Err(invalid("bands disagree on dimensions"));
        }
        Ok(Self { bands, metadata })
    }

    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn output_dim(&self) -> usize {
        self.bands[0].output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.bands[0].input_dim()
    }

    pub fn band(&self, b: usize) -> Result<&BandModel> {
        self.bands.get(b).ok_or_else(|| invalid(format!("band {b} not in model ({} bands)", self.bands.len())))
    }

    pub fn apply_reduction(&self, print: &HdPrint) -> Result<Vec<f64>> {
        let band = self.band(print.band)?;
        if print.coeffs.len() != band.input_dim() {
            return Err(invalid(format!("print has {} coefficients, model expects {}", print.coeffs.len(), band.input_dim())));
        }
        Ok(band.apply(&print.coeffs))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u16(&mut w, VERSION);
        put_u16(&mut w, self.bands.len() as u16);
        put_u32(&mut w, self.input_dim() as u32);
        put_u32(&mut w, self.bands[0].lda_dim() as u32);
        put_u32(&mut w, self.output_dim() as u32);
        for b in &self.bands {
            put_u32(&mut w, b.j0() as u32);
            w.push(b.ica_converged as u8);
            for m in [&b.p_iccr, &b.p_lda, &b.p_ica] {
                put_matrix(&mut w, m);
            }
            put_vector(&mut w, &b.t_ica);
            put_matrix(&mut w, &b.p_ompca);
            put_matrix(&mut w, &b.p_ht);
            put_matrix(&mut w, &b.p_final);
            put_vector(&mut w, &b.t_final);
            put_vector(&mut w, &b.sigma_e);
        }
        put_u32(&mut w, self.metadata.len() as u32);
        for (k, v) in &self.metadata {
            let entry = format!("{k}={v}");
            put_u32(&mut w, entry.len() as u32);
            w.extend_from_slice(entry.as_bytes());
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Mismatch(format!("model version {version}, expected {VERSION}")));
        }
        let n_bands = r.u16()? as usize;
        let j = r.u32()? as usize;
        let l = r.u32()? as usize;
        let k = r.u32()? as usize;
        if n_bands == 0 || j == 0 || l == 0 || k == 0 {
            return Err(Error::Format("empty model dimensions".into()));
        }
        let mut bands = Vec::with_capacity(n_bands);
        for _ in 0..n_bands {
            let j0 = r.u32()? as usize;
            let converged = r.u8()? != 0;
            let p_iccr = r.matrix(j0, j)?;
            let p_lda = r.matrix(l, j0)?;
            let p_ica = r.matrix(l, l)?;
            let t_ica = r.vector(l)?;
            let p_ompca = r.matrix(k, l)?;
            let p_ht = r.matrix(k, k)?;
            let stored_final = r.matrix(k, j)?;
            let stored_t = r.vector(k)?;
            let sigma_e = r.vector(k)?;
            let band = BandModel::new(p_iccr, p_lda, p_ica, t_ica, p_ompca, p_ht, sigma_e, converged)?;
            let scale = band.p_final.amax().max(1e-30);
            let drift = (&band.p_final - stored_final.map(|v| v as f32 as f64)).amax() / scale;
            let tscale = band.t_final.amax().max(1.0);
            if drift > 1e-3 || (&band.t_final - stored_t).amax() / tscale > 1e-3 {
                return Err(Error::Format("stored final projection disagrees with its stages".into()));
            }
            bands.push(band);
        }
        let n_meta = r.u32()? as usize;
        let mut metadata = BTreeMap::new();
        for _ in 0..n_meta {
            let len = r.u32()? as usize;
            let s = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
            let (key, value) = s.split_once('=').ok_or_else(|| Error::Format("metadata entry without '='".into()))?;
            metadata.insert(key.to_string(), value.to_string());
        }
        if !r.at_end() {
            return Err(Error::Format("trailing bytes after model".into()));
        }
        Self::new(bands, metadata)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// First 8 bytes of the SHA-256 of the serialised model.
    pub fn digest(&self) -> u64 {
        let h = Sha256::digest(self.to_bytes());
        u64::from_le_bytes(h[..8].try_into().unwrap())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::reduction::hadamard::hadamard_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A random well-formed band model of the given shape.
    pub fn random_band(j: usize, j0: usize, l: usize, k: usize, seed: u64) -> BandModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() - 0.5);
        let p_iccr = m(j0, j);
        let p_lda = m(l, j0);
        let p_ica = m(l, l);
        let t_ica = m(l, 1).column(0).into_owned();
        let q = m(l, l).qr().q();
        let p_ompca = q.rows(0, k).into_owned();
        let sigma = DVector::from_element(k, 0.3);
        let mut b = BandModel::new(p_iccr, p_lda, p_ica, t_ica, p_ompca, hadamard_matrix(k).unwrap(), sigma, true).unwrap();
        b.quantize();
        b
    }

    #[test]
    fn final_equals_chain() {
        let b = random_band(64, 60, 16, 12, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
            let (a, c) = (b.apply(&x), b.apply_chain(&x));
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            let err = a.iter().zip(&c).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            assert!(err <= 1e-9 * norm.max(1e-300));
        }
        assert_eq!(b.apply(&[0.0; 64]), b.t_final().as_slice().to_vec());
        assert_eq!(b.p_final().shape(), (12, 64));
    }

    #[test]
    fn file_roundtrip_is_exact() {
        let bands = (0..3).map(|i| random_band(40, 37, 10, 8, 10 + i)).collect();
        let mut meta = BTreeMap::new();
        meta.insert("seed".into(), "7".into());
        meta.insert("note".into(), "a=b".into());
        let model = ReductionModel::new(bands, meta).unwrap();
        let bytes = model.to_bytes();
        let back = ReductionModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_bytes(), bytes);
        assert!(ReductionModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ReductionModel::from_bytes(&bad).is_err());
        let mut ver = bytes;
        ver[4] = 9;
        assert!(matches!(ReductionModel::from_bytes(&ver), Err(Error::Mismatch(_))));
    }

    #[test]
    fn band_mismatch_is_an_error() {
        let model = ReductionModel::new(vec![random_band(20, 20, 6, 4, 3)], BTreeMap::new()).unwrap();
        let p = HdPrint { coeffs: vec![0.0; 20], frame: 0, band: 1 };
        assert!(model.apply_reduction(&p).is_err());
        let p = HdPrint { coeffs: vec![0.0; 20], frame: 0, band: 0 };
        assert_eq!(model.apply_reduction(&p).unwrap().len(), 4);
    }
}
