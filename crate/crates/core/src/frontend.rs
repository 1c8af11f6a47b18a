//! Waveform to log-mel spectrogram conversion.
//!
//! The pipeline is Hamming-windowed STFT (first frame at sample 0, no
//! centering), squared magnitudes, triangular mel filterbank and a floored
//! natural logarithm.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Energies below this value are clamped before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// Mono sampled waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(AudioBuffer { samples, sample_rate })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        AudioBuffer::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        AudioBuffer { samples: self.samples.iter().map(|s| s * gain).collect(), sample_rate: self.sample_rate }
    }

    /// Zero padding of `before` and `after` samples.
    pub fn padded(&self, before: usize, after: usize) -> AudioBuffer {
        let mut samples = vec![0.0; before];
        samples.extend_from_slice(&self.samples);
        samples.resize(samples.len() + after, 0.0);
        AudioBuffer { samples, sample_rate: self.sample_rate }
    }

    pub fn slice(&self, start: usize, len: usize) -> AudioBuffer {
        AudioBuffer { samples: self.samples[start..start + len].to_vec(), sample_rate: self.sample_rate }
    }

    pub fn ms_to_samples(&self, ms: f64) -> usize {
        ms_to_samples(ms, self.sample_rate)
    }
}

pub fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * f64::from(sample_rate) / 1000.0).round() as usize
}

/// Reads a mono WAV file (16-bit integer or 32-bit float PCM).
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::invalid(format!(
            "{}: expected mono audio, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (hound::SampleFormat::Float, 32) => {
            reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>().map_err(wav_err)?
        }
        (format, bits) => {
            return Err(Error::invalid(format!(
                "{}: unsupported sample format {format:?} with {bits} bits",
                path.display()
            )))
        }
    };
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Sample rate from the WAV header without decoding the payload.
pub fn wav_sample_rate(path: impl AsRef<Path>) -> Result<u32> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|source| Error::Wav { path: path.to_path_buf(), source })?;
    Ok(reader.spec().sample_rate)
}

/// Writes 32-bit float mono WAV.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &audio.samples {
        writer.write_sample(s as f32).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

pub fn hz_to_mel(f: f64) -> Result<f64> {
    if !f.is_finite() || f < 0.0 {
        return Err(Error::invalid(format!("frequency must be finite and >= 0, got {f}")));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

pub fn mel_to_hz(m: f64) -> Result<f64> {
    if !m.is_finite() || m < 0.0 {
        return Err(Error::invalid(format!("mel value must be finite and >= 0, got {m}")));
    }
    Ok(700.0 * (10f64.powf(m / 2595.0) - 1.0))
}

/// Symmetric Hamming window.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len).map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos()).collect()
}

/// Frame layout of an STFT in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub window: usize,
    pub shift: usize,
    pub fft_size: usize,
}

impl FrameLayout {
    pub fn from_ms(window_ms: f64, shift_ms: f64, sample_rate: u32) -> Result<Self> {
        let window = ms_to_samples(window_ms, sample_rate);
        let shift = ms_to_samples(shift_ms, sample_rate);
        if window == 0 || shift == 0 {
            return Err(Error::invalid(format!(
                "window {window_ms} ms / shift {shift_ms} ms round to zero samples at {sample_rate} Hz"
            )));
        }
        Ok(FrameLayout { window, shift, fft_size: window.next_power_of_two() })
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn num_frames(&self, len: usize) -> Result<usize> {
        if len < self.window {
            return Err(Error::InputTooShort { got: len, need: self.window });
        }
        Ok((len - self.window) / self.shift + 1)
    }
}

/// Magnitude spectra, one row per frame.
#[derive(Debug, Clone)]
pub struct Stft {
    pub layout: FrameLayout,
    pub sample_rate: u32,
    /// `frames × (fft_size / 2 + 1)`
    pub magnitudes: Array2<f64>,
}

impl Stft {
    pub fn num_frames(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn frame_shift_seconds(&self) -> f64 {
        self.layout.shift as f64 / f64::from(self.sample_rate)
    }
}

pub fn stft(audio: &AudioBuffer, window_ms: f64, shift_ms: f64) -> Result<Stft> {
    let layout = FrameLayout::from_ms(window_ms, shift_ms, audio.sample_rate)?;
    stft_with_layout(audio, layout)
}

pub fn stft_with_layout(audio: &AudioBuffer, layout: FrameLayout) -> Result<Stft> {
    let frames = layout.num_frames(audio.len())?;
    let window = hamming(layout.window);
    let fft = FftPlanner::new().plan_fft_forward(layout.fft_size);
    let bins = layout.num_bins();
    let mut magnitudes = Array2::zeros((frames, bins));
    let mut buf = vec![Complex::new(0.0, 0.0); layout.fft_size];
    for (t, mut row) in magnitudes.outer_iter_mut().enumerate() {
        let start = t * layout.shift;
        let segment = &audio.samples[start..start + layout.window];
        for (slot, (&s, &w)) in buf.iter_mut().zip(segment.iter().zip(&window)) {
            *slot = Complex::new(s * w, 0.0);
        }
        for slot in buf[layout.window..].iter_mut() {
            *slot = Complex::new(0.0, 0.0);
        }
        fft.process(&mut buf);
        for (out, c) in row.iter_mut().zip(&buf[..bins]) {
            *out = c.norm();
        }
    }
    Ok(Stft { layout, sample_rate: audio.sample_rate, magnitudes })
}

/// Triangular filters with edges equally spaced on the mel axis.
///
/// Band `k` rises linearly (in mel) from edge `k` to its center at edge
/// `k + 1` and falls back to zero at edge `k + 2`, so neighbouring triangles
/// meet at each other's centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelFilterbank {
    pub num_bands: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub fft_size: usize,
    pub sample_rate: u32,
    pub band_centers: Vec<f64>,
    /// `num_bands × (fft_size / 2 + 1)`
    pub weights: Array2<f64>,
    edges_mel: Vec<f64>,
}

impl MelFilterbank {
    /// Weight of band `band` at an arbitrary frequency.
    pub fn weight_at(&self, band: usize, hz: f64) -> f64 {
        let mel = match hz_to_mel(hz) {
            Ok(m) => m,
            Err(_) => return 0.0,
        };
        triangle(&self.edges_mel, band, mel)
    }

    pub fn edges_mel(&self) -> &[f64] {
        &self.edges_mel
    }

    /// Band energies of one power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights.outer_iter().map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum()).collect()
    }
}

fn triangle(edges: &[f64], band: usize, mel: f64) -> f64 {
    let (lo, mid, hi) = (edges[band], edges[band + 1], edges[band + 2]);
    if mel <= lo || mel >= hi {
        0.0
    } else if mel <= mid {
        (mel - lo) / (mid - lo)
    } else {
        (hi - mel) / (hi - mid)
    }
}

pub fn build_mel_filterbank(
    num_bands: usize,
    f_min: f64,
    f_max: f64,
    fft_size: usize,
    sample_rate: u32,
) -> Result<MelFilterbank> {
    if num_bands < 2 {
        return Err(Error::invalid("mel filterbank needs at least 2 bands"));
    }
    if sample_rate == 0 || fft_size < 2 {
        return Err(Error::invalid("sample rate and FFT size must be positive"));
    }
    let nyquist = f64::from(sample_rate) / 2.0;
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(Error::invalid(format!("need 0 <= f_min < f_max <= {nyquist}, got f_min={f_min}, f_max={f_max}")));
    }
    let mel_lo = hz_to_mel(f_min)?;
    let mel_hi = hz_to_mel(f_max)?;
    let step = (mel_hi - mel_lo) / (num_bands + 1) as f64;
    let edges_mel: Vec<f64> = (0..num_bands + 2).map(|i| mel_lo + step * i as f64).collect();
    let band_centers = edges_mel[1..=num_bands].iter().map(|&m| mel_to_hz(m)).collect::<Result<Vec<_>>>()?;
    let bins = fft_size / 2 + 1;
    let bin_hz = f64::from(sample_rate) / fft_size as f64;
    let mut weights = Array2::zeros((num_bands, bins));
    for band in 0..num_bands {
        for bin in 0..bins {
            let mel = hz_to_mel(bin as f64 * bin_hz)?;
            weights[[band, bin]] = triangle(&edges_mel, band, mel);
        }
        if weights.row(band).iter().all(|&w| w == 0.0) {
            return Err(Error::invalid(format!(
                "mel band {band} (center {:.1} Hz) covers no FFT bin; use fewer bands or a larger FFT",
                band_centers[band]
            )));
        }
    }
    Ok(MelFilterbank { num_bands, f_min, f_max, fft_size, sample_rate, band_centers, weights, edges_mel })
}

/// Log mel energies, `channel × frame`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    pub values: Array2<f64>,
    pub frame_shift: f64,
    pub band_centers: Vec<f64>,
}

impl LogMelSpectrogram {
    pub fn num_bands(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.values.ncols()
    }
}

pub fn log_mel_spectrogram(
    audio: &AudioBuffer,
    fb: &MelFilterbank,
    window_ms: f64,
    shift_ms: f64,
) -> Result<LogMelSpectrogram> {
    if audio.sample_rate != fb.sample_rate {
        return Err(Error::invalid(format!(
            "audio at {} Hz does not match filterbank at {} Hz",
            audio.sample_rate, fb.sample_rate
        )));
    }
    let layout = FrameLayout::from_ms(window_ms, shift_ms, audio.sample_rate)?;
    if layout.fft_size != fb.fft_size {
        return Err(Error::invalid(format!(
            "filterbank FFT size {} does not match STFT FFT size {}",
            fb.fft_size, layout.fft_size
        )));
    }
    let spec = stft_with_layout(audio, layout)?;
    let mut values = Array2::zeros((fb.num_bands, spec.num_frames()));
    let mut power = vec![0.0; layout.num_bins()];
    for (t, mags) in spec.magnitudes.outer_iter().enumerate() {
        for (p, m) in power.iter_mut().zip(mags.iter()) {
            *p = m * m;
        }
        for (k, e) in fb.apply(&power).into_iter().enumerate() {
            values[[k, t]] = e.max(LOG_FLOOR).ln();
        }
    }
    Ok(LogMelSpectrogram { values, frame_shift: spec.frame_shift_seconds(), band_centers: fb.band_centers.clone() })
}

/// Log-mel analysis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogMelConfig {
    pub num_bands: usize,
    pub f_min: f64,
    /// Upper edge; clipped to Nyquist.
    pub f_max: f64,
    pub window_ms: f64,
    pub shift_ms: f64,
    /// First-order pre-emphasis coefficient, off when `None`.
    pub pre_emphasis: Option<f64>,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        LogMelConfig { num_bands: 31, f_min: 64.0, f_max: 8000.0, window_ms: 25.0, shift_ms: 10.0, pre_emphasis: None }
    }
}

/// Reusable log-mel analyzer for one sample rate.
#[derive(Clone)]
pub struct LogMelAnalyzer {
    config: LogMelConfig,
    filterbank: MelFilterbank,
    layout: FrameLayout,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogMelAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMelAnalyzer")
            .field("config", &self.config)
            .field("layout", &self.layout)
            .finish_non_exhaustive()
    }
}

impl LogMelAnalyzer {
    pub fn new(config: LogMelConfig, sample_rate: u32) -> Result<Self> {
        let layout = FrameLayout::from_ms(config.window_ms, config.shift_ms, sample_rate)?;
        let f_max = config.f_max.min(f64::from(sample_rate) / 2.0);
        let filterbank = build_mel_filterbank(config.num_bands, config.f_min, f_max, layout.fft_size, sample_rate)?;
        let fft = FftPlanner::new().plan_fft_forward(layout.fft_size);
        Ok(LogMelAnalyzer { window: hamming(layout.window), config, filterbank, layout, fft })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn layout(&self) -> FrameLayout {
        self.layout
    }

    pub fn analyze(&self, audio: &AudioBuffer) -> Result<LogMelSpectrogram> {
        if audio.sample_rate != self.filterbank.sample_rate {
            return Err(Error::invalid(format!(
                "audio at {} Hz does not match analyzer at {} Hz",
                audio.sample_rate, self.filterbank.sample_rate
            )));
        }
        let emphasized;
        let samples = match self.config.pre_emphasis {
            Some(a) => {
                emphasized = pre_emphasize(&audio.samples, a);
                &emphasized
            }
            None => &audio.samples,
        };
        let frames = self.layout.num_frames(samples.len())?;
        let bins = self.layout.num_bins();
        let mut values = Array2::zeros((self.filterbank.num_bands, frames));
        let mut buf = vec![Complex::new(0.0, 0.0); self.layout.fft_size];
        let mut power = vec![0.0; bins];
        for t in 0..frames {
            let start = t * self.layout.shift;
            let segment = &samples[start..start + self.layout.window];
            for (slot, (&s, &w)) in buf.iter_mut().zip(segment.iter().zip(&self.window)) {
                *slot = Complex::new(s * w, 0.0);
            }
            for slot in buf[self.layout.window..].iter_mut() {
                *slot = Complex::new(0.0, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf[..bins]) {
                *p = c.norm_sqr();
            }
            for (k, e) in self.filterbank.apply(&power).into_iter().enumerate() {
                values[[k, t]] = e.max(LOG_FLOOR).ln();
            }
        }
        Ok(LogMelSpectrogram {
            values,
            frame_shift: self.layout.shift as f64 / f64::from(audio.sample_rate),
            band_centers: self.filterbank.band_centers.clone(),
        })
    }
}

fn pre_emphasize(x: &[f64], a: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut prev = 0.0;
    for &s in x {
        out.push(s - a * prev);
        prev = s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sine(freq: f64, len: usize, sr: u32) -> AudioBuffer {
        let samples = (0..len).map(|n| (2.0 * std::f64::consts::PI * freq * n as f64 / f64::from(sr)).sin()).collect();
        AudioBuffer::new(samples, sr).unwrap()
    }

    #[test]
    fn mel_scale_reference_points() {
        assert_eq!(hz_to_mel(0.0).unwrap(), 0.0);
        assert_relative_eq!(hz_to_mel(6300.0).unwrap(), 2595.0, epsilon = 1e-9);
        assert_relative_eq!(hz_to_mel(700.0).unwrap(), 2595.0 * 2f64.log10(), epsilon = 1e-9);
        assert_relative_eq!(hz_to_mel(700.0).unwrap(), 781.1728, epsilon = 1e-4);
        assert_eq!(mel_to_hz(0.0).unwrap(), 0.0);
        assert_relative_eq!(mel_to_hz(2595.0).unwrap(), 6300.0, max_relative = 1e-12);
        for f in [100.0, 1000.0, 7999.0] {
            assert_relative_eq!(mel_to_hz(hz_to_mel(f).unwrap()).unwrap(), f, max_relative = 1e-9);
        }
    }

    #[test]
    fn mel_scale_rejects_bad_input() {
        assert!(hz_to_mel(-1.0).is_err());
        assert!(hz_to_mel(f64::NAN).is_err());
        assert!(hz_to_mel(f64::INFINITY).is_err());
        assert!(mel_to_hz(-0.5).is_err());
    }

    #[test]
    fn audio_buffer_invariants() {
        assert!(AudioBuffer::new(vec![0.0], 0).is_err());
        assert!(AudioBuffer::new(vec![0.0, f64::NAN], 16000).is_err());
    }

    #[test]
    fn stft_frame_arithmetic() {
        let layout = FrameLayout::from_ms(25.0, 10.0, 16000).unwrap();
        assert_eq!(layout.window, 400);
        assert_eq!(layout.shift, 160);
        assert_eq!(layout.fft_size, 512);
        let audio = AudioBuffer::zeros(16000, 16000).unwrap();
        assert_eq!(stft(&audio, 25.0, 10.0).unwrap().num_frames(), 98);
    }

    #[test]
    fn stft_rejects_short_input() {
        let audio = AudioBuffer::zeros(399, 16000).unwrap();
        assert!(matches!(stft(&audio, 25.0, 10.0), Err(Error::InputTooShort { got: 399, need: 400 })));
        assert!(stft(&AudioBuffer::zeros(1000, 16000).unwrap(), 0.01, 10.0).is_err());
    }

    #[test]
    fn sine_on_bin_peaks_in_that_bin() {
        // bin 40 of a 512-point FFT at 16 kHz
        let freq = 40.0 * 16000.0 / 512.0;
        let spec = stft(&sine(freq, 8000, 16000), 25.0, 10.0).unwrap();
        for row in spec.magnitudes.outer_iter() {
            let argmax = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(argmax, 40);
        }
    }

    #[test]
    fn filterbank_two_bands_cross_at_mel_midpoint() {
        let fb = build_mel_filterbank(2, 0.0, 6300.0, 512, 16000).unwrap();
        let mid_hz = mel_to_hz(1297.5).unwrap();
        let w0 = fb.weight_at(0, mid_hz);
        let w1 = fb.weight_at(1, mid_hz);
        assert_relative_eq!(w0, w1, epsilon = 1e-9);
        assert_relative_eq!(w0, 0.5, epsilon = 1e-9);
        // below the midpoint band 0 dominates, above it band 1
        assert!(fb.weight_at(0, mid_hz * 0.9) > fb.weight_at(1, mid_hz * 0.9));
        assert!(fb.weight_at(0, mid_hz * 1.1) < fb.weight_at(1, mid_hz * 1.1));
    }

    #[test]
    fn filterbank_centers_equally_spaced_in_mel() {
        let fb = build_mel_filterbank(31, 64.0, 8000.0, 512, 16000).unwrap();
        let mels: Vec<f64> = fb.band_centers.iter().map(|&f| hz_to_mel(f).unwrap()).collect();
        let step = mels[1] - mels[0];
        for pair in mels.windows(2) {
            assert!((pair[1] - pair[0] - step).abs() < 1e-6);
        }
        assert!(fb.weights.iter().all(|&w| w >= 0.0));
        let ones = vec![1.0; fb.weights.ncols()];
        assert!(fb.apply(&ones).iter().all(|&e| e > 0.0));
    }

    #[test]
    fn filterbank_rejects_bad_ranges() {
        assert!(build_mel_filterbank(1, 0.0, 4000.0, 512, 16000).is_err());
        assert!(build_mel_filterbank(10, 5000.0, 4000.0, 512, 16000).is_err());
        assert!(build_mel_filterbank(10, 0.0, 9000.0, 512, 16000).is_err());
        assert!(build_mel_filterbank(10, -1.0, 4000.0, 512, 16000).is_err());
        // too many bands for the bin resolution
        assert!(build_mel_filterbank(200, 0.0, 8000.0, 64, 16000).is_err());
    }

    #[test]
    fn silence_hits_log_floor() {
        let an = LogMelAnalyzer::new(LogMelConfig::default(), 16000).unwrap();
        let lm = an.analyze(&AudioBuffer::zeros(4000, 16000).unwrap()).unwrap();
        assert!(lm.values.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn gain_of_ten_adds_log_hundred() {
        let an = LogMelAnalyzer::new(LogMelConfig::default(), 16000).unwrap();
        let mut rng = crate::seed::rng(3);
        use rand::Rng;
        let noise: Vec<f64> = (0..6000).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let a = AudioBuffer::new(noise, 16000).unwrap();
        let base = an.analyze(&a).unwrap();
        let loud = an.analyze(&a.scaled(10.0)).unwrap();
        for (b, l) in base.values.iter().zip(loud.values.iter()) {
            assert!((l - b - 100f64.ln()).abs() < 1e-9);
        }
        let spec = stft(&a, 25.0, 10.0).unwrap();
        assert_eq!(base.num_frames(), spec.num_frames());
    }

    #[test]
    fn analyzer_matches_free_functions() {
        let cfg = LogMelConfig::default();
        let an = LogMelAnalyzer::new(cfg.clone(), 16000).unwrap();
        let audio = sine(440.0, 5000, 16000);
        let direct = log_mel_spectrogram(&audio, an.filterbank(), cfg.window_ms, cfg.shift_ms).unwrap();
        let fast = an.analyze(&audio).unwrap();
        for (a, b) in direct.values.iter().zip(fast.values.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn wav_roundtrip_and_mono_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let audio = sine(300.0, 1600, 16000).scaled(0.5);
        write_wav(&path, &audio).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 16000);
        for (a, b) in audio.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() < 1e-6);
        }
        let stereo = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        for _ in 0..10 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(read_wav(&stereo).is_err());
    }

    proptest! {
        #[test]
        fn mel_roundtrip(f in 0.0f64..20000.0) {
            let back = mel_to_hz(hz_to_mel(f).unwrap()).unwrap();
            prop_assert!((back - f).abs() <= 1e-9 * f.max(1.0));
        }

        #[test]
        fn mel_strictly_monotone(a in 0.0f64..20000.0, b in 0.0f64..20000.0) {
            prop_assume!(a != b);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(hz_to_mel(lo).unwrap() < hz_to_mel(hi).unwrap());
        }

        #[test]
        fn frame_count_formula(len in 1usize..5000, window in 1usize..300, shift in 1usize..200) {
            prop_assume!(len >= window);
            let layout = FrameLayout { window, shift, fft_size: window.next_power_of_two() };
            let audio = AudioBuffer::zeros(len, 8000).unwrap();
            let spec = stft_with_layout(&audio, layout).unwrap();
            prop_assert_eq!(spec.num_frames(), (len - window) / shift + 1);
        }

        #[test]
        fn trailing_zeros_short_of_a_frame_change_nothing(len in 400usize..3000, seed in 0u64..1000) {
            use rand::Rng;
            let an = LogMelAnalyzer::new(LogMelConfig::default(), 16000).unwrap();
            let mut rng = crate::seed::rng(seed);
            let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let base = an.analyze(&AudioBuffer::new(x.clone(), 16000).unwrap()).unwrap();
            // zeros that do not complete another hop leave the frame grid alone
            let spare = 160 - 1 - (len - 400) % 160;
            let padded = AudioBuffer::new(x, 16000).unwrap().padded(0, spare);
            let after = an.analyze(&padded).unwrap();
            prop_assert_eq!(base.values, after.values);
        }
    }
}
