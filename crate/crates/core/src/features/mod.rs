//! Feature extraction on top of the log-mel spectrogram.

mod gabor;
mod mfcc;

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub use gabor::{
    build_modulation_freqs, gabor_filter_1d, gabor_width, retained_channels, sgbfb, GaborFilter1D, SgbfbBank,
    SgbfbConfig,
};
pub use mfcc::{dct_matrix, mfcc, MfccConfig};

use crate::error::{Error, Result};
use crate::frontend::{AudioBuffer, LogMelAnalyzer, LogMelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mfcc,
    Sgbfb,
}

/// Observation sequence, `frame × coefficient`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub frame_shift: f64,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>, frame_shift: f64, kind: FeatureKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature matrix contains non-finite values"));
        }
        let values = if values.is_standard_layout() { values } else { values.as_standard_layout().into_owned() };
        Ok(FeatureMatrix { values, frame_shift, kind })
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.values.row(t).to_slice().expect("feature matrices are stored in standard layout")
    }

    /// Concatenates blocks along the coefficient axis.
    pub fn hstack(blocks: &[FeatureMatrix]) -> Result<FeatureMatrix> {
        let first = blocks.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let views: Vec<_> = blocks.iter().map(|b| b.values.view()).collect();
        let values =
            ndarray::concatenate(Axis(1), &views).map_err(|e| Error::invalid(format!("frame counts differ: {e}")))?;
        Ok(FeatureMatrix {
            values: values.as_standard_layout().to_owned(),
            frame_shift: first.frame_shift,
            kind: first.kind,
        })
    }

    /// CSV dump: one row per frame, one column per coefficient.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let header: Vec<String> = (0..self.dim()).map(|c| format!("c{c}")).collect();
        writeln!(w, "frame,{}", header.join(",")).map_err(|e| Error::io(path, e))?;
        for (t, row) in self.values.outer_iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{t},{}", cells.join(",")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Regression-slope deltas over `±window` frames with edge replication:
/// `d[t] = Σθ θ·(x[t+θ] − x[t−θ]) / (2 Σθ θ²)`.
pub fn delta(fm: &FeatureMatrix, window: usize) -> Result<FeatureMatrix> {
    if window == 0 {
        return Err(Error::invalid("delta window must be >= 1"));
    }
    let frames = fm.frames();
    if frames == 0 {
        return Err(Error::invalid("delta of an empty feature matrix"));
    }
    let norm: f64 = 2.0 * (1..=window).map(|th| (th * th) as f64).sum::<f64>();
    let last = frames as isize - 1;
    let at = |t: isize| t.clamp(0, last) as usize;
    let out = Array2::from_shape_fn((frames, fm.dim()), |(t, c)| {
        let t = t as isize;
        (1..=window as isize)
            .map(|th| th as f64 * (fm.values[[at(t + th), c]] - fm.values[[at(t - th), c]]))
            .sum::<f64>()
            / norm
    });
    FeatureMatrix::new(out, fm.frame_shift, fm.kind)
}

/// Per-coefficient zero mean and unit (population) variance over the
/// utterance. Coefficients without variance become zeros.
pub fn mean_variance_normalize(fm: &FeatureMatrix) -> Result<FeatureMatrix> {
    let frames = fm.frames();
    if frames < 2 {
        return Err(Error::invalid(format!("normalization needs at least 2 frames, got {frames}")));
    }
    let mut out = fm.values.clone();
    for mut col in out.columns_mut() {
        let mean = col.sum() / frames as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / frames as f64;
        // relative threshold so rounding noise on a constant is not blown up
        if var <= 1e-24 * mean.abs().max(1.0).powi(2) {
            col.fill(0.0);
        } else {
            let sd = var.sqrt();
            col.mapv_inplace(|v| (v - mean) / sd);
        }
    }
    FeatureMatrix::new(out, fm.frame_shift, fm.kind)
}

/// Feature type and its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureConfig {
    Mfcc(MfccConfig),
    Sgbfb(SgbfbConfig),
}

impl FeatureConfig {
    pub fn kind(&self) -> FeatureKind {
        match self {
            FeatureConfig::Mfcc(_) => FeatureKind::Mfcc,
            FeatureConfig::Sgbfb(_) => FeatureKind::Sgbfb,
        }
    }
}

/// Complete audio-to-features chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendConfig {
    #[serde(default)]
    pub log_mel: LogMelConfig,
    pub features: FeatureConfig,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

impl FrontendConfig {
    pub fn mfcc(cfg: MfccConfig) -> Self {
        FrontendConfig { log_mel: LogMelConfig::default(), features: FeatureConfig::Mfcc(cfg), normalize: true }
    }

    pub fn sgbfb(cfg: SgbfbConfig) -> Self {
        FrontendConfig { log_mel: LogMelConfig::default(), features: FeatureConfig::Sgbfb(cfg), normalize: true }
    }
}

#[derive(Debug, Clone)]
enum Extractor {
    Mfcc(MfccConfig),
    Sgbfb(SgbfbBank),
}

/// Immutable, shareable feature extractor for one sample rate.
#[derive(Debug, Clone)]
pub struct Frontend {
    analyzer: LogMelAnalyzer,
    extractor: Extractor,
    normalize: bool,
}

impl Frontend {
    pub fn new(cfg: &FrontendConfig, sample_rate: u32) -> Result<Self> {
        let analyzer = LogMelAnalyzer::new(cfg.log_mel.clone(), sample_rate)?;
        let bands = cfg.log_mel.num_bands;
        let extractor = match &cfg.features {
            FeatureConfig::Mfcc(m) => {
                m.validate(bands)?;
                Extractor::Mfcc(m.clone())
            }
            FeatureConfig::Sgbfb(s) => Extractor::Sgbfb(SgbfbBank::new(s, bands)?),
        };
        Ok(Frontend { analyzer, extractor, normalize: cfg.normalize })
    }

    pub fn dim(&self) -> usize {
        match &self.extractor {
            Extractor::Mfcc(m) => m.dim(),
            Extractor::Sgbfb(b) => b.dim(),
        }
    }

    pub fn extract(&self, audio: &AudioBuffer) -> Result<FeatureMatrix> {
        let lm = self.analyzer.analyze(audio)?;
        let fm = match &self.extractor {
            Extractor::Mfcc(m) => mfcc(&lm, m)?,
            Extractor::Sgbfb(b) => b.apply(&lm)?,
        };
        if self.normalize {
            mean_variance_normalize(&fm)
        } else {
            Ok(fm)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(values: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix::new(values, 0.01, FeatureKind::Mfcc).unwrap()
    }

    #[test]
    fn delta_edge_cases() {
        let d = delta(&fm(Array2::from_elem((6, 2), 4.0)), 2).unwrap();
        assert!(d.values.iter().all(|&v| v == 0.0));
        let ramp = fm(Array2::from_shape_fn((10, 1), |(t, _)| 0.7 * t as f64));
        for w in 1..=3 {
            let d = delta(&ramp, w).unwrap();
            for t in w..10 - w {
                assert!((d.values[[t, 0]] - 0.7).abs() < 1e-12);
            }
        }
        let single = delta(&fm(Array2::from_elem((1, 3), 2.0)), 2).unwrap();
        assert!(single.values.iter().all(|&v| v == 0.0));
        assert!(delta(&fm(Array2::zeros((0, 3))), 1).is_err());
        assert!(delta(&ramp, 0).is_err());
    }

    #[test]
    fn mvn_examples() {
        let x = fm(Array2::from_shape_vec((2, 1), vec![1.0, 3.0]).unwrap());
        let n = mean_variance_normalize(&x).unwrap();
        assert!((n.values[[0, 0]] + 1.0).abs() < 1e-12);
        assert!((n.values[[1, 0]] - 1.0).abs() < 1e-12);
        let again = mean_variance_normalize(&n).unwrap();
        for (a, b) in n.values.iter().zip(again.values.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = fm(Array2::from_elem((5, 2), 0.3));
        assert!(mean_variance_normalize(&c).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(mean_variance_normalize(&fm(Array2::zeros((1, 2)))).is_err());
    }

    #[test]
    fn csv_dump_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        fm(Array2::from_shape_fn((3, 2), |(t, c)| (t * 2 + c) as f64)).write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "frame,c0,c1");
        assert!(lines[3].starts_with("2,4e0,5e0"));
    }

    #[test]
    fn frontend_dimensions() {
        let audio = AudioBuffer::new((0..8000).map(|n| (n as f64 * 0.05).sin() * 0.3).collect(), 16000).unwrap();
        let m = Frontend::new(&FrontendConfig::mfcc(MfccConfig::default()), 16000).unwrap();
        let f = m.extract(&audio).unwrap();
        assert_eq!(f.dim(), 39);
        assert_eq!(f.dim(), m.dim());
        let s = Frontend::new(&FrontendConfig::sgbfb(SgbfbConfig::default()), 16000).unwrap();
        let f = s.extract(&audio).unwrap();
        assert_eq!(f.dim(), 165);
        assert_eq!(f.frames(), 48);
    }
}
