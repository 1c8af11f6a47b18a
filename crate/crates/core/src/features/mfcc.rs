//! Cepstral features: orthonormal DCT-II of each log-mel column.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{delta, FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};
use crate::frontend::LogMelSpectrogram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    /// Cepstra kept, counted from c0. When `include_c0` is false c0 is
    /// dropped from that set, leaving `num_ceps - 1` static coefficients.
    pub num_ceps: usize,
    pub include_c0: bool,
    /// 0: static only, 1: + deltas, 2: + delta-deltas.
    pub delta_orders: usize,
    pub delta_window: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig { num_ceps: 13, include_c0: true, delta_orders: 2, delta_window: 2 }
    }
}

impl MfccConfig {
    pub fn without_deltas() -> Self {
        MfccConfig { delta_orders: 0, ..MfccConfig::default() }
    }

    pub fn validate(&self, num_bands: usize) -> Result<()> {
        if self.num_ceps == 0 || self.num_ceps > num_bands {
            return Err(Error::invalid(format!("num_ceps must be in 1..={num_bands}, got {}", self.num_ceps)));
        }
        if !self.include_c0 && self.num_ceps < 2 {
            return Err(Error::invalid("dropping c0 from a single cepstrum leaves nothing"));
        }
        if self.delta_orders > 2 {
            return Err(Error::invalid(format!("delta_orders must be 0, 1 or 2, got {}", self.delta_orders)));
        }
        if self.delta_window == 0 {
            return Err(Error::invalid("delta_window must be >= 1"));
        }
        Ok(())
    }

    pub fn num_static(&self) -> usize {
        if self.include_c0 {
            self.num_ceps
        } else {
            self.num_ceps - 1
        }
    }

    pub fn dim(&self) -> usize {
        self.num_static() * (1 + self.delta_orders)
    }
}

/// Orthonormal DCT-II matrix with `k` rows over inputs of length `n`.
pub fn dct_matrix(n: usize, k: usize) -> Result<Array2<f64>> {
    if n == 0 || k == 0 || k > n {
        return Err(Error::invalid(format!("need 1 <= k <= n, got n={n}, k={k}")));
    }
    let nf = n as f64;
    Ok(Array2::from_shape_fn((k, n), |(i, j)| {
        let scale = if i == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        scale * (std::f64::consts::PI * i as f64 * (j as f64 + 0.5) / nf).cos()
    }))
}

pub fn mfcc(lm: &LogMelSpectrogram, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    let bands = lm.num_bands();
    cfg.validate(bands)?;
    let dct = dct_matrix(bands, cfg.num_ceps)?;
    let first = usize::from(!cfg.include_c0);
    let dct = dct.slice(ndarray::s![first.., ..]).to_owned();
    // frames × bands times bands × ceps
    let ceps = lm.values.t().dot(&dct.t());
    let statics = FeatureMatrix::new(ceps, lm.frame_shift, FeatureKind::Mfcc)?;
    if cfg.delta_orders == 0 {
        return Ok(statics);
    }
    let mut blocks = vec![statics.clone()];
    let mut last = statics;
    for _ in 0..cfg.delta_orders {
        last = delta(&last, cfg.delta_window)?;
        blocks.push(last.clone());
    }
    FeatureMatrix::hstack(&blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn lm_from(values: Array2<f64>) -> LogMelSpectrogram {
        let bands = values.nrows();
        LogMelSpectrogram {
            values,
            frame_shift: 0.01,
            band_centers: (0..bands).map(|b| 100.0 * (b + 1) as f64).collect(),
        }
    }

    #[test]
    fn dct_is_orthonormal() {
        for n in 1..=64 {
            let m = dct_matrix(n, n).unwrap();
            let eye = m.dot(&m.t());
            for ((i, j), v) in eye.indexed_iter() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((v - target).abs() < 1e-9, "n={n} ({i},{j})={v}");
            }
        }
    }

    #[test]
    fn dct_rejects_k_above_n() {
        assert!(dct_matrix(4, 5).is_err());
        assert!(dct_matrix(0, 0).is_err());
    }

    #[test]
    fn dct_constant_and_two_point() {
        let m = dct_matrix(8, 8).unwrap();
        let out = m.dot(&Array1::from_elem(8, 3.0));
        assert!(out[0] > 0.0);
        assert!(out.iter().skip(1).all(|v| v.abs() < 1e-12));
        let m2 = dct_matrix(2, 2).unwrap();
        let out = m2.dot(&Array1::from(vec![1.0, -1.0]));
        assert!(out[0].abs() < 1e-15);
        assert!((out[1] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn flat_frame_has_only_c0() {
        let lm = lm_from(Array2::from_elem((31, 5), -2.0));
        let fm = mfcc(&lm, &MfccConfig::without_deltas()).unwrap();
        assert_eq!(fm.dim(), 13);
        for row in fm.values.outer_iter() {
            assert!(row[0].abs() > 1.0);
            assert!(row.iter().skip(1).all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn deltas_of_constant_and_ramp() {
        let lm = lm_from(Array2::from_shape_fn((10, 12), |(k, _)| k as f64));
        let cfg = MfccConfig { num_ceps: 5, delta_orders: 1, ..MfccConfig::default() };
        let fm = mfcc(&lm, &cfg).unwrap();
        assert_eq!(fm.dim(), 10);
        assert!(fm.values.slice(ndarray::s![.., 5..]).iter().all(|v| v.abs() < 1e-12));

        // every band rises by 0.5 per frame: c0 rises by 0.5·sqrt(n)
        let lm = lm_from(Array2::from_shape_fn((10, 12), |(_, t)| 0.5 * t as f64));
        let fm = mfcc(&lm, &cfg).unwrap();
        let slope = 0.5 * 10f64.sqrt();
        for t in 2..10 {
            assert!((fm.values[[t, 5]] - slope).abs() < 1e-9);
            assert!(fm.values[[t, 6]].abs() < 1e-9);
        }
    }

    #[test]
    fn dropping_c0_and_dimensions() {
        let lm = lm_from(Array2::from_shape_fn((31, 4), |(k, t)| (k * t) as f64 * 0.1));
        let cfg = MfccConfig { include_c0: false, ..MfccConfig::default() };
        let fm = mfcc(&lm, &cfg).unwrap();
        assert_eq!(fm.dim(), 36);
        let full = mfcc(&lm, &MfccConfig::without_deltas()).unwrap();
        for t in 0..4 {
            for c in 0..12 {
                assert!((fm.values[[t, c]] - full.values[[t, c + 1]]).abs() < 1e-12);
            }
        }
        assert!(mfcc(&lm, &MfccConfig { num_ceps: 32, ..MfccConfig::default() }).is_err());
    }

    #[test]
    fn parseval_on_full_transform() {
        let lm = lm_from(Array2::from_shape_fn((20, 7), |(k, t)| ((k * 7 + t * 3) % 11) as f64 - 4.0));
        let cfg = MfccConfig { num_ceps: 20, include_c0: true, delta_orders: 0, delta_window: 1 };
        let fm = mfcc(&lm, &cfg).unwrap();
        for t in 0..7 {
            let e_in: f64 = lm.values.column(t).iter().map(|v| v * v).sum();
            let e_out: f64 = fm.values.row(t).iter().map(|v| v * v).sum();
            assert!((e_in - e_out).abs() < 1e-9);
        }
    }
}
