//! Synthetic token corpus.
//!
//! Every word is a short harmonic complex following an F0 contour and
//! filtered by a cascade of second-order resonances that glide from start
//! to end targets, optionally preceded by a band-limited noise onset. It is
//! not meant to sound like speech, only to give a recognizer word classes
//! with speech-like spectro-temporal structure.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    sample_sentence, AudioSource, CorpusEntry, CorpusManifest, Effort, MatrixGrammar, SentenceLabel, SpeechCondition,
};
use crate::error::{Error, Result};
use crate::frontend::{ms_to_samples, AudioBuffer};
use crate::seed;

pub const INTER_WORD_GAP_MS: f64 = 50.0;

const TOKEN_RMS: f64 = 0.05;
const MIN_DURATION_MS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecipe {
    pub duration_ms: f64,
    /// F0 in Hz at evenly spaced points across the voiced part.
    pub f0_contour: Vec<f64>,
    pub formants_start: Vec<f64>,
    pub formants_end: Vec<f64>,
    pub bandwidths: Vec<f64>,
    /// Centre frequency of a noise onset, if any.
    pub onset_noise_hz: Option<f64>,
    pub onset_ms: f64,
}

impl TokenRecipe {
    fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyq = sample_rate as f64 / 2.0;
        let in_band = |f: f64| f.is_finite() && f > 0.0 && f < nyq;
        if !(self.duration_ms > MIN_DURATION_MS) {
            return Err(Error::invalid(format!(
                "token duration must exceed {MIN_DURATION_MS} ms, got {}",
                self.duration_ms
            )));
        }
        if self.f0_contour.is_empty() || !self.f0_contour.iter().all(|&f| in_band(f)) {
            return Err(Error::invalid("F0 contour must be nonempty with values in (0, Nyquist)"));
        }
        let n = self.bandwidths.len();
        if n == 0 || self.formants_start.len() != n || self.formants_end.len() != n {
            return Err(Error::invalid("resonance targets and bandwidths must have equal nonzero length"));
        }
        let all = self.formants_start.iter().chain(&self.formants_end).chain(&self.bandwidths);
        if !all.copied().all(in_band) {
            return Err(Error::invalid("resonance frequencies and bandwidths must lie in (0, Nyquist)"));
        }
        if let Some(f) = self.onset_noise_hz {
            if !in_band(f) || !(self.onset_ms >= 0.0 && self.onset_ms < self.duration_ms / 2.0) {
                return Err(Error::invalid("onset noise must lie in (0, Nyquist) and last under half the token"));
            }
        }
        Ok(())
    }
}

/// Speaker-level modifications applied on top of the recipes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoiceParams {
    pub f0_scale: f64,
    pub formant_scale: f64,
    pub duration_scale: f64,
    /// Source spectral slope in dB per octave of harmonic number.
    pub tilt_db_per_octave: f64,
    /// Relative half-range of per-instance F0 and resonance jitter.
    pub jitter: f64,
    /// Half-range of per-instance level jitter in dB.
    pub level_jitter_db: f64,
}

impl Default for VoiceParams {
    fn default() -> Self {
        VoiceParams {
            f0_scale: 1.0,
            formant_scale: 1.0,
            duration_scale: 1.0,
            tilt_db_per_octave: -6.0,
            jitter: 0.04,
            level_jitter_db: 1.5,
        }
    }
}

impl VoiceParams {
    /// Raised-effort voice: higher F0 and first resonances, slower
    /// articulation and a flatter source spectrum.
    pub fn lombard() -> Self {
        VoiceParams {
            f0_scale: 1.25,
            formant_scale: 1.06,
            duration_scale: 1.12,
            tilt_db_per_octave: -3.0,
            ..VoiceParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub grammar: MatrixGrammar,
    /// `recipes[slot][word]`
    pub recipes: Vec<Vec<TokenRecipe>>,
    pub sample_rate: u32,
    pub tonal_mode: bool,
    pub voice: VoiceParams,
    pub condition: SpeechCondition,
}

impl SyntheticCorpusSpec {
    /// Spec with [`default_recipes`] and the default voice.
    pub fn new(grammar: MatrixGrammar, tonal_mode: bool, sample_rate: u32) -> Result<Self> {
        let recipes = default_recipes(&grammar, tonal_mode);
        let spec = SyntheticCorpusSpec {
            grammar,
            recipes,
            sample_rate,
            tonal_mode,
            voice: VoiceParams::default(),
            condition: SpeechCondition {
                speaker: "synth".into(),
                language: if tonal_mode { "tonal" } else { "nontonal" }.into(),
                effort: Effort::Plain,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.grammar.validate()?;
        if self.sample_rate < 8000 {
            return Err(Error::invalid("synthetic corpus needs a sample rate of at least 8 kHz"));
        }
        let v = &self.voice;
        if !(v.f0_scale > 0.0 && v.formant_scale > 0.0 && v.duration_scale > 0.0)
            || !(0.0..0.5).contains(&v.jitter)
            || !(v.level_jitter_db >= 0.0 && v.tilt_db_per_octave.is_finite())
        {
            return Err(Error::invalid("voice parameters out of range"));
        }
        if self.recipes.len() != self.grammar.num_slots() {
            return Err(Error::invalid("one recipe list per slot is required"));
        }
        for (slot, recipes) in self.grammar.slots.iter().zip(&self.recipes) {
            if recipes.len() != slot.words.len() {
                return Err(Error::invalid(format!(
                    "slot '{}' has {} words but {} recipes",
                    slot.name,
                    slot.words.len(),
                    recipes.len()
                )));
            }
            for (i, r) in recipes.iter().enumerate() {
                r.validate(self.sample_rate).map_err(|e| Error::invalid(format!("recipe '{}': {e}", slot.words[i])))?;
                if recipes[..i].contains(r) {
                    return Err(Error::invalid(format!(
                        "recipe for '{}' duplicates another in slot '{}'",
                        slot.words[i], slot.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Token length in samples after voice scaling.
    pub fn token_len(&self, slot: usize, word: usize) -> usize {
        let r = &self.recipes[slot][word];
        ms_to_samples(r.duration_ms * self.voice.duration_scale, self.sample_rate)
    }
}

const VOWELS: [[f64; 3]; 8] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
    [390.0, 1990.0, 2550.0],
    [440.0, 1020.0, 2240.0],
];
/// Start and end vowel of each resonance trajectory.
const TRAJECTORIES: [(usize, usize); 10] =
    [(0, 0), (1, 1), (2, 4), (5, 3), (6, 1), (4, 0), (7, 2), (3, 6), (0, 5), (5, 1)];
const BANDWIDTHS: [f64; 3] = [90.0, 110.0, 170.0];
const ONSETS: [Option<f64>; 3] = [None, Some(4500.0), Some(2500.0)];
/// Start and end F0 relative to the speaker's base.
const TONES: [(f64, f64); 10] = [
    (1.25, 1.25),
    (0.90, 1.35),
    (1.15, 0.75),
    (0.85, 0.85),
    (1.05, 1.05),
    (0.80, 1.05),
    (1.35, 0.95),
    (0.95, 1.20),
    (1.10, 0.90),
    (0.75, 0.75),
];
const BASE_F0: f64 = 120.0;

/// Deterministic recipes for any grammar. Without tonal mode words in a slot
/// differ in resonance trajectory, onset and duration. In tonal mode they
/// share all of those and differ only in F0 contour; slots with more
/// alternatives than tone patterns get shifted copies of the pattern set.
pub fn default_recipes(g: &MatrixGrammar, tonal_mode: bool) -> Vec<Vec<TokenRecipe>> {
    g.slots
        .iter()
        .enumerate()
        .map(|(s, slot)| {
            (0..slot.words.len())
                .map(|w| {
                    let (shape, f0_contour) = if tonal_mode {
                        let (a, b) = TONES[w % TONES.len()];
                        let shift = 1.0 + 0.1 * (w / TONES.len()) as f64;
                        let mid = 0.5 * (a + b) + if a == b { 0.0 } else { 0.05 };
                        (3 * s + 2, vec![BASE_F0 * a * shift, BASE_F0 * mid * shift, BASE_F0 * b * shift])
                    } else {
                        (w + 3 * s, vec![BASE_F0 * 1.08, BASE_F0, BASE_F0 * 0.88])
                    };
                    let (a, b) = TRAJECTORIES[shape % TRAJECTORIES.len()];
                    let (start, end) = (VOWELS[a], VOWELS[b]);
                    let onset = ONSETS[(shape + s) % ONSETS.len()];
                    TokenRecipe {
                        duration_ms: 260.0 + 40.0 * ((shape + 2 * s) % 3) as f64,
                        f0_contour,
                        formants_start: start.to_vec(),
                        formants_end: end.to_vec(),
                        bandwidths: BANDWIDTHS.to_vec(),
                        onset_noise_hz: onset,
                        onset_ms: if onset.is_some() { 60.0 } else { 0.0 },
                    }
                })
                .collect()
        })
        .collect()
}

fn interp(points: &[f64], x: f64) -> f64 {
    if points.len() == 1 {
        return points[0];
    }
    let pos = x.clamp(0.0, 1.0) * (points.len() - 1) as f64;
    let i = (pos.floor() as usize).min(points.len() - 2);
    let t = pos - i as f64;
    points[i] * (1.0 - t) + points[i + 1] * t
}

/// Magnitude of a cascade of second-order resonators, unity at DC.
fn resonance_gain(f: f64, formants: &[f64], bandwidths: &[f64]) -> f64 {
    formants
        .iter()
        .zip(bandwidths)
        .map(|(&fc, &bw)| {
            let r = f / fc;
            1.0 / ((1.0 - r * r).powi(2) + (f * bw / (fc * fc)).powi(2)).sqrt()
        })
        .product()
}

fn raised_cosine(i: usize, n: usize) -> f64 {
    0.5 - 0.5 * (PI * (i as f64 + 0.5) / n as f64).cos()
}

fn synthesize_token(spec: &SyntheticCorpusSpec, recipe: &TokenRecipe, len: usize, token_seed: u64) -> Vec<f64> {
    let sr = spec.sample_rate as f64;
    let v = &spec.voice;
    let mut rng = seed::rng(token_seed);
    let jit = |rng: &mut rand_chacha::ChaCha8Rng| 1.0 + rng.gen_range(-v.jitter..=v.jitter);
    let f0_factor = v.f0_scale * jit(&mut rng);
    let f0: Vec<f64> = recipe.f0_contour.iter().map(|f| f * f0_factor).collect();
    let fmt_factor: Vec<f64> = (0..recipe.bandwidths.len()).map(|_| v.formant_scale * jit(&mut rng)).collect();
    let level = 10f64.powf(rng.gen_range(-v.level_jitter_db..=v.level_jitter_db) / 20.0);

    let onset_len = if recipe.onset_noise_hz.is_some() {
        ms_to_samples(recipe.onset_ms * v.duration_scale, spec.sample_rate).min(len / 2)
    } else {
        0
    };
    let voiced_len = len - onset_len;
    let f_max = (0.45 * sr).min(7500.0);
    let f0_min = f0.iter().copied().fold(f64::INFINITY, f64::min);
    let num_harmonics = (f_max / f0_min).floor().max(1.0) as usize;
    let phases: Vec<f64> = (0..num_harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let tilt_exp = v.tilt_db_per_octave / (20.0 * 2f64.log10());

    let mut out = vec![0.0; len];
    let block = ms_to_samples(2.0, spec.sample_rate).max(1);
    let mut amps = vec![0.0; num_harmonics];
    let mut formants = vec![0.0; recipe.bandwidths.len()];
    let mut phase = 0.0;
    for i in 0..voiced_len {
        let x = i as f64 / voiced_len.max(2) as f64;
        let f0_now = interp(&f0, x);
        if i % block == 0 {
            for (k, f) in formants.iter_mut().enumerate() {
                let target = recipe.formants_start[k] + (recipe.formants_end[k] - recipe.formants_start[k]) * x;
                *f = target * fmt_factor[k];
            }
            for (h, a) in amps.iter_mut().enumerate() {
                let fh = (h + 1) as f64 * f0_now;
                *a = if fh < f_max {
                    ((h + 1) as f64).powf(tilt_exp) * resonance_gain(fh, &formants, &recipe.bandwidths)
                } else {
                    0.0
                };
            }
        }
        phase += 2.0 * PI * f0_now / sr;
        out[onset_len + i] = amps
            .iter()
            .zip(&phases)
            .enumerate()
            .filter(|(_, (a, _))| **a > 0.0)
            .map(|(h, (a, p))| a * ((h + 1) as f64 * phase + p).sin())
            .sum();
    }
    let ramp_on = ms_to_samples(10.0, spec.sample_rate).min(voiced_len / 2);
    let ramp_off = ms_to_samples(25.0, spec.sample_rate).min(voiced_len / 2);
    for i in 0..ramp_on {
        out[onset_len + i] *= raised_cosine(i, ramp_on);
    }
    for i in 0..ramp_off {
        out[len - 1 - i] *= raised_cosine(i, ramp_off);
    }
    normalize_rms(&mut out[onset_len..]);

    if let (Some(fc), true) = (recipe.onset_noise_hz, onset_len > 0) {
        let fc = (fc * fmt_factor[0]).min(0.45 * sr);
        let mut noise = resonator_noise(onset_len, fc, fc / 3.0, sr, &mut rng);
        let ramp = ms_to_samples(5.0, spec.sample_rate).min(onset_len / 2);
        for i in 0..ramp {
            noise[i] *= raised_cosine(i, ramp);
            noise[onset_len - 1 - i] *= raised_cosine(i, ramp);
        }
        normalize_rms(&mut noise);
        for (o, n) in out.iter_mut().zip(noise) {
            *o = 0.5 * n;
        }
    }
    normalize_rms(&mut out);
    for s in &mut out {
        *s *= level;
    }
    out
}

fn normalize_rms(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        for v in x {
            *v *= TOKEN_RMS / rms;
        }
    }
}

/// White noise through a two-pole resonator.
fn resonator_noise(len: usize, fc: f64, bw: f64, sr: f64, rng: &mut impl Rng) -> Vec<f64> {
    let r = (-PI * bw / sr).exp();
    let a1 = 2.0 * r * (2.0 * PI * fc / sr).cos();
    let a2 = -r * r;
    let (mut y1, mut y2) = (0.0, 0.0);
    (0..len)
        .map(|_| {
            let y = rng.gen_range(-1.0..1.0) + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// Audio for one labelled sentence: tokens separated by fixed silences.
pub fn synthesize_sentence(spec: &SyntheticCorpusSpec, label: &SentenceLabel, rng_seed: u64) -> Result<AudioBuffer> {
    let idx = spec.grammar.indices(label)?;
    let gap = ms_to_samples(INTER_WORD_GAP_MS, spec.sample_rate);
    let mut samples = Vec::new();
    for (slot, &word) in idx.iter().enumerate() {
        if slot > 0 {
            samples.extend(std::iter::repeat(0.0).take(gap));
        }
        let len = spec.token_len(slot, word);
        let token_seed = seed::derive_seed(rng_seed, &[slot as u64]);
        samples.extend(synthesize_token(spec, &spec.recipes[slot][word], len, token_seed));
    }
    AudioBuffer::new(samples, spec.sample_rate)
}

/// `sentences` random sentences with in-memory audio, all tagged with the
/// spec's speech condition.
pub fn synthesize_corpus(spec: &SyntheticCorpusSpec, sentences: usize, rng_seed: u64) -> Result<CorpusManifest> {
    spec.validate()?;
    if sentences == 0 {
        return Err(Error::invalid("sentence count must be positive"));
    }
    let entries = (0..sentences)
        .map(|i| {
            let s = seed::derive_seed(rng_seed, &[i as u64]);
            let label = sample_sentence(&spec.grammar, seed::derive_seed(s, &[0]));
            let audio = synthesize_sentence(spec, &label, seed::derive_seed(s, &[1]))?;
            Ok(CorpusEntry { audio: AudioSource::Memory(Arc::new(audio)), label, condition: spec.condition.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    CorpusManifest::new(spec.grammar.clone(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_specs_validate() {
        for g in [MatrixGrammar::desk(), MatrixGrammar::standard()] {
            for tonal in [false, true] {
                SyntheticCorpusSpec::new(g.clone(), tonal, 16000).unwrap();
            }
        }
    }

    #[test]
    fn invalid_recipes_are_rejected() {
        let mut spec = SyntheticCorpusSpec::new(MatrixGrammar::desk(), false, 16000).unwrap();
        spec.recipes[0][1].duration_ms = 90.0;
        assert!(matches!(spec.validate(), Err(Error::InvalidArgument(_))));
        let mut spec = SyntheticCorpusSpec::new(MatrixGrammar::desk(), false, 16000).unwrap();
        spec.recipes[1][2] = spec.recipes[1][0].clone();
        assert!(spec.validate().is_err());
        let mut spec = SyntheticCorpusSpec::new(MatrixGrammar::desk(), false, 16000).unwrap();
        spec.recipes[2][0].formants_end.pop();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn sentence_length_is_tokens_plus_gaps() {
        let spec = SyntheticCorpusSpec::new(MatrixGrammar::standard(), false, 16000).unwrap();
        let label = sample_sentence(&spec.grammar, 9);
        let idx = spec.grammar.indices(&label).unwrap();
        let audio = synthesize_sentence(&spec, &label, 1).unwrap();
        let tokens: usize = idx.iter().enumerate().map(|(s, &w)| spec.token_len(s, w)).sum();
        assert_eq!(audio.len(), tokens + 4 * 800);
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = SyntheticCorpusSpec::new(MatrixGrammar::desk(), true, 16000).unwrap();
        let a = synthesize_corpus(&spec, 3, 5).unwrap();
        let b = synthesize_corpus(&spec, 3, 5).unwrap();
        assert_eq!(a, b);
        let c = synthesize_corpus(&spec, 3, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn interp_endpoints() {
        assert_eq!(interp(&[1.0, 3.0], 0.0), 1.0);
        assert_eq!(interp(&[1.0, 3.0], 1.0), 3.0);
        assert_eq!(interp(&[1.0, 3.0, 2.0], 0.75), 2.5);
        assert_eq!(interp(&[4.0], 0.3), 4.0);
    }

    #[test]
    fn resonance_gain_peaks_near_target() {
        let g = |f| resonance_gain(f, &[1000.0], &[100.0]);
        assert!((g(0.0) - 1.0).abs() < 1e-12);
        assert!(g(1000.0) > 9.0 && g(1000.0) > g(900.0) && g(1000.0) > g(1100.0));
    }
}
