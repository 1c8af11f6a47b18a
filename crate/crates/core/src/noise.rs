//! Maskers and SNR-controlled mixing.
//!
//! SNR is broadband: `20·log10(rms(speech) / rms(scaled noise section))`,
//! both measured over the full extent of the speech buffer handed to
//! [`mix_at_snr`].

use std::f64::consts::PI;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{ms_to_samples, AudioBuffer};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    File,
    StationarySurrogate,
    GatedSurrogate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSource {
    pub kind: NoiseKind,
    pub label: String,
    pub audio: AudioBuffer,
}

impl NoiseSource {
    pub fn new(kind: NoiseKind, label: impl Into<String>, audio: AudioBuffer) -> Result<Self> {
        let label = label.into();
        if audio.is_empty() || rms_level(&audio)? == 0.0 {
            return Err(Error::invalid(format!("noise '{label}' is silent")));
        }
        Ok(NoiseSource { kind, label, audio })
    }

    pub fn from_wav(label: impl Into<String>, path: impl AsRef<std::path::Path>) -> Result<Self> {
        NoiseSource::new(NoiseKind::File, label, crate::frontend::read_wav(path)?)
    }
}

pub fn rms_level(a: &AudioBuffer) -> Result<f64> {
    rms(a.samples()).ok_or_else(|| Error::invalid("RMS of an empty buffer"))
}

fn rms(x: &[f64]) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    Some((x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt())
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Mixture together with its components.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub mixture: AudioBuffer,
    /// The scaled noise section that was added.
    pub noise: AudioBuffer,
    pub noise_gain: f64,
    pub offset: usize,
}

/// Adds a uniformly drawn noise section of speech length, scaled to the
/// requested SNR.
pub fn mix_at_snr(speech: &AudioBuffer, noise: &NoiseSource, snr_db: f64, rng_seed: u64) -> Result<Mixture> {
    mix_padded(speech, 0, 0, noise, snr_db, rng_seed)
}

/// Like [`mix_at_snr`], but the speech is first surrounded by `before` and
/// `after` samples of silence. The noise section covers the padded extent
/// while both levels entering the SNR are measured over the sentence
/// itself.
pub fn mix_padded(
    speech: &AudioBuffer,
    before: usize,
    after: usize,
    noise: &NoiseSource,
    snr_db: f64,
    rng_seed: u64,
) -> Result<Mixture> {
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("SNR must be finite, got {snr_db}")));
    }
    if speech.sample_rate() != noise.audio.sample_rate() {
        return Err(Error::invalid(format!(
            "speech at {} Hz, noise '{}' at {} Hz",
            speech.sample_rate(),
            noise.label,
            noise.audio.sample_rate()
        )));
    }
    let n = speech.len() + before + after;
    if noise.audio.len() <= n {
        return Err(Error::invalid(format!(
            "noise '{}' ({} samples) must be longer than the speech ({n} samples)",
            noise.label,
            noise.audio.len()
        )));
    }
    let speech_rms = rms_level(speech)?;
    if speech_rms == 0.0 {
        return Err(Error::invalid("speech is silent"));
    }
    let offset = seed::rng(rng_seed).gen_range(0..=noise.audio.len() - n);
    let section = &noise.audio.samples()[offset..offset + n];
    let section_rms = rms(&section[before..before + speech.len()]).unwrap_or(0.0);
    if section_rms == 0.0 {
        return Err(Error::invalid(format!("noise '{}' is silent at offset {offset}", noise.label)));
    }
    let noise_gain = speech_rms / (section_rms * db_to_amplitude(snr_db));
    let scaled: Vec<f64> = section.iter().map(|v| v * noise_gain).collect();
    let padded = speech.padded(before, after);
    let mixed: Vec<f64> = padded.samples().iter().zip(&scaled).map(|(s, v)| s + v).collect();
    Ok(Mixture {
        mixture: AudioBuffer::new(mixed, speech.sample_rate())?,
        noise: AudioBuffer::new(scaled, speech.sample_rate())?,
        noise_gain,
        offset,
    })
}

/// Welch estimate of the long-term power spectrum with Hann-windowed,
/// half-overlapping frames of `fft_size` samples.
pub fn long_term_spectrum(audio: &AudioBuffer, fft_size: usize) -> Result<Vec<f64>> {
    if audio.len() < fft_size || fft_size < 2 {
        return Err(Error::InputTooShort { got: audio.len(), need: fft_size });
    }
    let window: Vec<f64> = (0..fft_size).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / fft_size as f64).cos()).collect();
    let fft = FftPlanner::new().plan_fft_forward(fft_size);
    let bins = fft_size / 2 + 1;
    let mut acc = vec![0.0; bins];
    let hop = fft_size / 2;
    let mut frames = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    let x = audio.samples();
    let mut start = 0;
    while start + fft_size <= x.len() {
        for (b, (&s, &w)) in buf.iter_mut().zip(x[start..].iter().zip(&window)) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf[..bins]) {
            *a += c.norm_sqr();
        }
        frames += 1;
        start += hop;
    }
    acc.iter_mut().for_each(|a| *a /= frames as f64);
    Ok(acc)
}

/// Noise with the long-term spectrum of `reference`, synthesized by
/// random-phase inverse FFT and scaled to the reference RMS.
pub fn gen_stationary_speech_shaped(reference: &AudioBuffer, duration_s: f64, rng_seed: u64) -> Result<NoiseSource> {
    if !(duration_s >= 1.0) {
        return Err(Error::invalid(format!("surrogate noise needs at least 1 s, got {duration_s}")));
    }
    let sr = reference.sample_rate();
    let welch = ms_to_samples(256.0, sr).next_power_of_two().max(64);
    let ltas = long_term_spectrum(reference, welch.min(reference.len().next_power_of_two() / 2).max(2))?;
    let welch = (ltas.len() - 1) * 2;
    let len = (duration_s * f64::from(sr)).round() as usize;
    let size = len.next_power_of_two();
    let mut rng = seed::rng(rng_seed);
    let mut spec = vec![Complex::new(0.0, 0.0); size];
    let ratio = welch as f64 / size as f64;
    for k in 1..size / 2 {
        // linear interpolation of the Welch bins onto the fine grid
        let pos = k as f64 * ratio;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        let p = if i + 1 < ltas.len() { ltas[i] * (1.0 - frac) + ltas[i + 1] * frac } else { ltas[ltas.len() - 1] };
        let phase = rng.gen_range(0.0..2.0 * PI);
        let c = Complex::from_polar(p.sqrt(), phase);
        spec[k] = c;
        spec[size - k] = c.conj();
    }
    FftPlanner::new().plan_fft_inverse(size).process(&mut spec);
    let mut samples: Vec<f64> = spec[..len].iter().map(|c| c.re).collect();
    let out_rms = rms(&samples).unwrap_or(0.0);
    if out_rms == 0.0 {
        return Err(Error::invalid("reference has no spectral energy"));
    }
    let target = rms_level(reference)?;
    samples.iter_mut().for_each(|s| *s *= target / out_rms);
    NoiseSource::new(NoiseKind::StationarySurrogate, "stationary", AudioBuffer::new(samples, sr)?)
}

/// On/off gating settings for the fluctuating surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub on_ms: (f64, f64),
    /// Upper bound is further limited by the requested maximum gap.
    pub off_ms: (f64, f64),
    /// Raised-cosine transition length; shortened to the gap length for
    /// gaps shorter than a ramp.
    pub ramp_ms: f64,
    /// Envelope level inside gaps, dB re the on level.
    pub floor_db: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig { on_ms: (80.0, 600.0), off_ms: (20.0, 250.0), ramp_ms: 10.0, floor_db: -40.0 }
    }
}

/// Gated noise and the gap plateaus (start, length) in samples.
#[derive(Debug, Clone)]
pub struct GatedNoise {
    pub source: NoiseSource,
    pub envelope: Vec<f64>,
    pub gaps: Vec<(usize, usize)>,
}

pub fn gen_gated(base: &NoiseSource, max_gap_ms: f64, cfg: &GateConfig, rng_seed: u64) -> Result<GatedNoise> {
    if !(max_gap_ms > 0.0) || !max_gap_ms.is_finite() {
        return Err(Error::invalid(format!("max gap must be positive, got {max_gap_ms}")));
    }
    let (on_lo, on_hi) = cfg.on_ms;
    if !(on_lo > 0.0 && on_lo <= on_hi) || !(cfg.off_ms.0 >= 0.0 && cfg.off_ms.0 <= cfg.off_ms.1) {
        return Err(Error::invalid("gate on/off ranges must be ordered and positive"));
    }
    if !(cfg.ramp_ms >= 0.0) || 2.0 * cfg.ramp_ms > on_lo {
        return Err(Error::invalid("ramps must fit twice into the shortest on segment"));
    }
    let sr = base.audio.sample_rate();
    let off_hi = cfg.off_ms.1.min(max_gap_ms);
    let off_lo = cfg.off_ms.0.min(off_hi);
    let floor = db_to_amplitude(cfg.floor_db);
    let len = base.audio.len();
    let mut env = vec![1.0; len];
    let mut gaps = Vec::new();
    let mut rng = seed::rng(rng_seed);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| {
        if hi > lo {
            rng.gen_range(lo..=hi)
        } else {
            lo
        }
    };
    let mut pos = 0usize;
    loop {
        pos += ms_to_samples(draw(&mut rng, on_lo, on_hi), sr);
        if pos >= len {
            break;
        }
        let off = ms_to_samples(draw(&mut rng, off_lo, off_hi), sr);
        if off == 0 {
            continue;
        }
        let ramp = ms_to_samples(cfg.ramp_ms, sr).min(off);
        for i in 0..ramp {
            let w = 0.5 * (1.0 + (PI * (i as f64 + 0.5) / ramp as f64).cos());
            let g = floor + (1.0 - floor) * w;
            if pos >= ramp - i && pos - (ramp - i) < len {
                env[pos - (ramp - i)] = g;
            }
            let up = pos + off + i;
            if up < len {
                env[up] = floor + (1.0 - floor) * (1.0 - w);
            }
        }
        let end = (pos + off).min(len);
        env[pos..end].iter_mut().for_each(|e| *e = floor);
        gaps.push((pos, end - pos));
        pos += off + ramp;
    }
    let samples: Vec<f64> = base.audio.samples().iter().zip(&env).map(|(s, e)| s * e).collect();
    let source = NoiseSource::new(
        NoiseKind::GatedSurrogate,
        format!("{}-gated{}", base.label, max_gap_ms),
        AudioBuffer::new(samples, sr)?,
    )?;
    Ok(GatedNoise { source, envelope: env, gaps })
}

/// Longest run (in samples) where the short-time RMS stays below
/// `threshold_db` re the global RMS. Windows of `win` samples, hop `hop`.
pub fn longest_quiet_run(a: &AudioBuffer, threshold_db: f64, win: usize, hop: usize) -> usize {
    let x = a.samples();
    let global = rms(x).unwrap_or(0.0);
    let thr = global * db_to_amplitude(threshold_db);
    let mut best = 0;
    let mut run_start: Option<usize> = None;
    let mut start = 0;
    while start + win <= x.len() {
        let quiet = rms(&x[start..start + win]).unwrap_or(0.0) < thr;
        match (quiet, run_start) {
            (true, None) => run_start = Some(start),
            (false, Some(s)) => {
                best = best.max(start - hop + win - s);
                run_start = None;
            }
            _ => {}
        }
        start += hop;
    }
    if let Some(s) = run_start {
        best = best.max(start - hop + win - s);
    }
    best
}
