//! Separable Gabor filter bank on the log-mel spectrogram.
//!
//! Each 2D spectro-temporal Gabor filter is the product of a spectral and a
//! temporal 1D filter, so it is applied as two 1D convolutions: along the
//! mel axis for each frame, then along time for each (subsampled) channel.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};
use crate::frontend::LogMelSpectrogram;

/// Real 1D Gabor filter: Hann envelope times a cosine carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborFilter1D {
    pub coefficients: Vec<f64>,
    pub center: usize,
    pub omega: f64,
}

impl GaborFilter1D {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Magnitude of the frequency response at `theta` rad/sample.
    pub fn response(&self, theta: f64) -> f64 {
        let c = self.center as f64;
        let z: Complex<f64> =
            self.coefficients.iter().enumerate().map(|(x, &g)| Complex::from_polar(g, -theta * (x as f64 - c))).sum();
        z.norm()
    }

    /// Convolution with symmetric reflection at both ends; any filter
    /// length works on any nonempty input.
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let n = input.len();
        let c = self.center as isize;
        (0..n as isize)
            .map(|i| {
                self.coefficients.iter().enumerate().map(|(j, &g)| g * input[reflect(i + j as isize - c, n)]).sum()
            })
            .collect()
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let r = i.rem_euclid(period) as usize;
    if r < n {
        r
    } else {
        2 * n - 1 - r
    }
}

/// Hann envelope sampled at `1/width` steps around its center, keeping the
/// strictly positive part. Always odd length.
fn hann_envelope(width: f64) -> Vec<f64> {
    let step = 1.0 / width;
    // points strictly inside (0, 1); the tolerance keeps integer widths
    // from gaining zero-valued end taps through rounding
    let mut half = 0usize;
    while ((half + 1) as f64) < width / 2.0 - 1e-9 {
        half += 1;
    }
    (0..=2 * half)
        .map(|i| {
            let x = 0.5 + (i as f64 - half as f64) * step;
            0.5 - 0.5 * (2.0 * PI * x).cos()
        })
        .collect()
}

/// Envelope width in samples for `nu` half-waves of a carrier at `omega`.
pub fn gabor_width(omega: f64, nu: f64) -> f64 {
    PI * nu / omega
}

fn peak_response(g: &[f64]) -> f64 {
    let size = (4 * g.len()).next_power_of_two().max(4096);
    let mut buf: Vec<Complex<f64>> = g.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(size).process(&mut buf);
    buf[..=size / 2].iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Builds one filter. `dc_width` is the envelope width used when
/// `omega == 0`, where the nominal width is infinite.
pub fn gabor_filter_1d(omega: f64, nu: f64, dc_width: f64) -> Result<GaborFilter1D> {
    if !(0.0..PI).contains(&omega) {
        return Err(Error::invalid(format!("omega must be in [0, pi), got {omega}")));
    }
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::invalid(format!("nu must be positive, got {nu}")));
    }
    let width = if omega == 0.0 {
        if !(dc_width >= 1.0) || !dc_width.is_finite() {
            return Err(Error::invalid(format!("DC width must be >= 1, got {dc_width}")));
        }
        dc_width
    } else {
        gabor_width(omega, nu)
    };
    let envelope = hann_envelope(width);
    let center = envelope.len() / 2;
    let mut coefficients: Vec<f64> =
        envelope.iter().enumerate().map(|(x, &e)| e * (omega * (x as f64 - center as f64)).cos()).collect();
    if omega == 0.0 {
        let sum: f64 = coefficients.iter().sum();
        coefficients.iter_mut().for_each(|c| *c /= sum);
    } else {
        let env_sum: f64 = envelope.iter().sum();
        let dc: f64 = coefficients.iter().sum();
        for (c, e) in coefficients.iter_mut().zip(&envelope) {
            *c -= e / env_sum * dc;
        }
        let peak = peak_response(&coefficients);
        coefficients.iter_mut().for_each(|c| *c /= peak);
    }
    Ok(GaborFilter1D { coefficients, center, omega })
}

/// `{0}` followed by the geometric sequence from `omega_min` with ratio
/// `(1 + c) / (1 - c)`, stopping at `omega_max`.
pub fn build_modulation_freqs(omega_min: f64, omega_max: f64, c: f64) -> Result<Vec<f64>> {
    if !(omega_min > 0.0 && omega_min <= omega_max && omega_max < PI) {
        return Err(Error::invalid(format!("need 0 < omega_min <= omega_max < pi, got {omega_min}, {omega_max}")));
    }
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::invalid(format!("growth c must be in (0, 1), got {c}")));
    }
    let ratio = (1.0 + c) / (1.0 - c);
    let limit = omega_max * (1.0 + 1e-12);
    let mut freqs = vec![0.0];
    let mut omega = omega_min;
    while omega <= limit {
        freqs.push(omega.min(omega_max));
        omega *= ratio;
    }
    Ok(freqs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgbfbConfig {
    /// Envelope half-waves on the spectral axis.
    pub spectral_nu: f64,
    /// Envelope half-waves on the temporal axis.
    pub temporal_nu: f64,
    /// rad/channel
    pub spectral_omega_min: f64,
    pub spectral_omega_max: f64,
    /// rad/frame
    pub temporal_omega_min: f64,
    pub temporal_omega_max: f64,
    pub spectral_growth: f64,
    pub temporal_growth: f64,
    /// Spectral DC envelope width in channels; defaults to the width of the
    /// lowest nonzero spectral filter.
    pub spectral_dc_width: Option<f64>,
    /// Temporal DC envelope width in frames; defaults to the width of the
    /// lowest nonzero temporal filter.
    pub temporal_dc_width: Option<f64>,
    /// Channel stride is `ceil(filter length / channel_subsample_factor)`.
    pub channel_subsample_factor: f64,
}

impl Default for SgbfbConfig {
    fn default() -> Self {
        SgbfbConfig {
            spectral_nu: 3.5,
            temporal_nu: 3.5,
            spectral_omega_min: PI / 16.0,
            spectral_omega_max: PI / 2.0,
            temporal_omega_min: PI / 32.0,
            temporal_omega_max: PI / 4.0,
            spectral_growth: 1.0 / 3.0,
            temporal_growth: 1.0 / 3.0,
            spectral_dc_width: None,
            temporal_dc_width: None,
            channel_subsample_factor: 4.0,
        }
    }
}

impl SgbfbConfig {
    pub fn spectral_mod_freqs(&self) -> Result<Vec<f64>> {
        build_modulation_freqs(self.spectral_omega_min, self.spectral_omega_max, self.spectral_growth)
    }

    pub fn temporal_mod_freqs(&self) -> Result<Vec<f64>> {
        build_modulation_freqs(self.temporal_omega_min, self.temporal_omega_max, self.temporal_growth)
    }
}

/// Channels kept after filtering with a spectral filter of length `len`.
pub fn retained_channels(num_bands: usize, len: usize, factor: f64) -> Vec<usize> {
    let stride = ((len as f64 / factor).ceil() as usize).max(1);
    let center = (num_bands - 1) / 2;
    let first = center % stride;
    (first..num_bands).step_by(stride).collect()
}

/// Prebuilt filter bank for a fixed mel band count.
#[derive(Debug, Clone)]
pub struct SgbfbBank {
    pub num_bands: usize,
    pub spectral: Vec<GaborFilter1D>,
    pub temporal: Vec<GaborFilter1D>,
    /// Retained channels per spectral filter.
    pub channels: Vec<Vec<usize>>,
}

impl SgbfbBank {
    pub fn new(cfg: &SgbfbConfig, num_bands: usize) -> Result<Self> {
        if num_bands == 0 {
            return Err(Error::invalid("SGBFB needs at least one mel band"));
        }
        if !(cfg.channel_subsample_factor > 0.0) {
            return Err(Error::invalid("channel_subsample_factor must be positive"));
        }
        let build = |freqs: Vec<f64>, nu: f64, dc: Option<f64>, omega_min: f64| {
            let dc_width = dc.unwrap_or_else(|| gabor_width(omega_min, nu));
            freqs.into_iter().map(|w| gabor_filter_1d(w, nu, dc_width)).collect::<Result<Vec<_>>>()
        };
        let spectral =
            build(cfg.spectral_mod_freqs()?, cfg.spectral_nu, cfg.spectral_dc_width, cfg.spectral_omega_min)?;
        let temporal =
            build(cfg.temporal_mod_freqs()?, cfg.temporal_nu, cfg.temporal_dc_width, cfg.temporal_omega_min)?;
        let channels =
            spectral.iter().map(|f| retained_channels(num_bands, f.len(), cfg.channel_subsample_factor)).collect();
        Ok(SgbfbBank { num_bands, spectral, temporal, channels })
    }

    pub fn dim(&self) -> usize {
        self.channels.iter().map(Vec::len).sum::<usize>() * self.temporal.len()
    }

    /// Applies the bank; output is `frames × dim`, ordered by spectral
    /// filter, then temporal filter, then channel.
    pub fn apply(&self, lm: &LogMelSpectrogram) -> Result<FeatureMatrix> {
        if lm.num_bands() != self.num_bands {
            return Err(Error::invalid(format!(
                "bank built for {} bands, spectrogram has {}",
                self.num_bands,
                lm.num_bands()
            )));
        }
        let frames = lm.num_frames();
        if frames == 0 {
            return Err(Error::invalid("empty spectrogram"));
        }
        let mut out = Array2::zeros((frames, self.dim()));
        let mut col = 0;
        let columns: Vec<Vec<f64>> = (0..frames).map(|t| lm.values.column(t).to_vec()).collect();
        for (sf, chans) in self.spectral.iter().zip(&self.channels) {
            // channel trajectories after spectral filtering, channel × frame
            let mut spec = vec![vec![0.0; frames]; chans.len()];
            for (t, column) in columns.iter().enumerate() {
                let filtered = sf.filter(column);
                for (row, &ch) in spec.iter_mut().zip(chans) {
                    row[t] = filtered[ch];
                }
            }
            for tf in &self.temporal {
                for traj in &spec {
                    for (t, v) in tf.filter(traj).into_iter().enumerate() {
                        out[[t, col]] = v;
                    }
                    col += 1;
                }
            }
        }
        FeatureMatrix::new(out, lm.frame_shift, FeatureKind::Sgbfb)
    }

    /// Column ranges belonging to each (spectral, temporal) filter pair.
    pub fn pair_columns(&self) -> Vec<((usize, usize), std::ops::Range<usize>)> {
        let mut ranges = Vec::new();
        let mut col = 0;
        for (s, chans) in self.channels.iter().enumerate() {
            for t in 0..self.temporal.len() {
                ranges.push(((s, t), col..col + chans.len()));
                col += chans.len();
            }
        }
        ranges
    }
}

pub fn sgbfb(lm: &LogMelSpectrogram, cfg: &SgbfbConfig) -> Result<FeatureMatrix> {
    SgbfbBank::new(cfg, lm.num_bands())?.apply(lm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm_from(values: Array2<f64>) -> LogMelSpectrogram {
        let bands = values.nrows();
        LogMelSpectrogram {
            values,
            frame_shift: 0.01,
            band_centers: (0..bands).map(|b| 100.0 * (b + 1) as f64).collect(),
        }
    }

    #[test]
    fn dc_filter_passes_constants() {
        let f = gabor_filter_1d(0.0, 3.5, 20.0).unwrap();
        assert_eq!(f.len() % 2, 1);
        assert!((f.coefficients.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let out = f.filter(&[2.5; 13]);
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn bandpass_is_dc_free_and_selective() {
        let f = gabor_filter_1d(PI / 2.0, 3.5, 1.0).unwrap();
        assert_eq!(f.len(), 7);
        assert!(f.coefficients.iter().sum::<f64>().abs() < 1e-9);
        // peak response normalized to one, near the carrier
        assert!((f.response(PI / 2.0) - 1.0).abs() < 0.05);
        let f = gabor_filter_1d(PI / 8.0, 3.5, 1.0).unwrap();
        assert!(f.response(PI / 8.0) > f.response(PI / 4.0));
        assert!(f.response(0.0) < 1e-9);
    }

    #[test]
    fn filter_rejects_out_of_range_omega() {
        assert!(gabor_filter_1d(PI, 3.5, 10.0).is_err());
        assert!(gabor_filter_1d(-0.1, 3.5, 10.0).is_err());
        assert!(gabor_filter_1d(0.3, 0.0, 10.0).is_err());
    }

    #[test]
    fn reflection_handles_long_filters() {
        let f = gabor_filter_1d(0.0, 3.5, 40.0).unwrap();
        let out = f.filter(&[1.0, 2.0]);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|v| v.is_finite()));
        assert_eq!(reflect(-1, 3), 0);
        assert_eq!(reflect(3, 3), 2);
        assert_eq!(reflect(7, 3), 1);
        assert_eq!(reflect(-9, 1), 0);
    }

    #[test]
    fn modulation_frequency_lists() {
        assert_eq!(build_modulation_freqs(0.3, 0.3, 0.5).unwrap(), vec![0.0, 0.3]);
        let f = build_modulation_freqs(PI / 8.0, PI / 2.0, 1.0 / 3.0).unwrap();
        let want = [0.0, PI / 8.0, PI / 4.0, PI / 2.0];
        assert_eq!(f.len(), 4);
        for (a, b) in f.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(build_modulation_freqs(0.5, 0.4, 0.3).is_err());
        assert!(build_modulation_freqs(0.0, 0.4, 0.3).is_err());
        assert!(build_modulation_freqs(0.1, 0.4, 1.0).is_err());
        assert!(build_modulation_freqs(0.1, PI, 0.3).is_err());
    }

    #[test]
    fn default_bank_shape() {
        let bank = SgbfbBank::new(&SgbfbConfig::default(), 31).unwrap();
        assert_eq!(bank.spectral.len(), 5);
        assert_eq!(bank.temporal.len(), 5);
        let counts: Vec<usize> = bank.channels.iter().map(Vec::len).collect();
        assert_eq!(counts, vec![3, 3, 5, 7, 15]);
        assert_eq!(bank.dim(), 33 * 5);
        for chans in &bank.channels {
            assert!(chans.contains(&15));
        }
        let lm = lm_from(Array2::from_shape_fn((31, 40), |(k, t)| ((k + 2 * t) % 5) as f64));
        let fm = bank.apply(&lm).unwrap();
        assert_eq!(fm.frames(), 40);
        assert_eq!(fm.dim(), bank.dim());
    }

    #[test]
    fn constant_spectrogram_only_excites_dc_pair() {
        let bank = SgbfbBank::new(&SgbfbConfig::default(), 31).unwrap();
        let fm = bank.apply(&lm_from(Array2::from_elem((31, 30), -3.0))).unwrap();
        for ((s, t), range) in bank.pair_columns() {
            for v in fm.values.slice(ndarray::s![.., range]).iter() {
                if s == 0 && t == 0 {
                    assert!((v + 3.0).abs() < 1e-9);
                } else {
                    assert!(v.abs() < 1e-9, "pair ({s},{t}) = {v}");
                }
            }
        }
    }
}
