use fade_core::corpus::{synthesize_corpus, MatrixGrammar, SyntheticCorpusSpec};
use fade_core::frontend::AudioBuffer;
use fade_core::noise::{
    gen_gated, gen_stationary_speech_shaped, long_term_spectrum, longest_quiet_run, mix_at_snr, rms_level, GateConfig,
    NoiseSource,
};
use proptest::prelude::*;

const SR: u32 = 16000;
const FFT: usize = 1024;

fn speech_reference() -> AudioBuffer {
    let spec = SyntheticCorpusSpec::new(MatrixGrammar::desk(), false, SR).unwrap();
    let m = synthesize_corpus(&spec, 12, 21).unwrap();
    let samples: Vec<f64> = m.entries.iter().flat_map(|e| e.load_audio().unwrap().samples().to_vec()).collect();
    AudioBuffer::new(samples, SR).unwrap()
}

/// Third-octave band levels in dB between 100 Hz and 6 kHz, normalised to
/// total power so that only spectral shape is compared.
fn third_octave_db(a: &AudioBuffer) -> Vec<f64> {
    let p = long_term_spectrum(a, FFT).unwrap();
    let total: f64 = p.iter().sum();
    let hz_per_bin = SR as f64 / FFT as f64;
    let mut out = Vec::new();
    let mut fc = 100.0f64;
    while fc <= 6000.0 {
        let (lo, hi) = (fc * 2f64.powf(-1.0 / 6.0), fc * 2f64.powf(1.0 / 6.0));
        let e: f64 = p
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let f = *k as f64 * hz_per_bin;
                f >= lo && f < hi
            })
            .map(|(_, v)| v)
            .sum();
        out.push(10.0 * (e / total).log10());
        fc *= 2f64.powf(1.0 / 3.0);
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn stationary_surrogate_matches_reference_spectrum() {
    let reference = speech_reference();
    let r = third_octave_db(&reference);
    for seed in [1, 2] {
        let n = gen_stationary_speech_shaped(&reference, 10.0, seed).unwrap();
        let t = third_octave_db(&n.audio);
        let d = max_abs_diff(&r, &t);
        assert!(d <= 2.0, "seed {seed}: third-octave deviation {d} dB");
    }
    let a = gen_stationary_speech_shaped(&reference, 10.0, 1).unwrap();
    let b = gen_stationary_speech_shaped(&reference, 10.0, 2).unwrap();
    assert_ne!(a.audio, b.audio);
}

#[test]
fn stationary_surrogate_slices_hold_level() {
    let n = gen_stationary_speech_shaped(&speech_reference(), 10.0, 4).unwrap();
    let global = rms_level(&n.audio).unwrap();
    let slice = 4000;
    for start in (0..n.audio.len() - slice).step_by(slice) {
        let db = 20.0 * (rms_level(&n.audio.slice(start, slice)).unwrap() / global).log10();
        assert!(db.abs() <= 3.0, "slice at {start}: {db} dB");
    }
}

#[test]
fn gated_surrogate_keeps_spectrum_and_bounds_gaps() {
    let base = gen_stationary_speech_shaped(&speech_reference(), 20.0, 5).unwrap();
    let b = third_octave_db(&base.audio);
    let ramp = 160;
    for seed in 0..8 {
        let g = gen_gated(&base, 250.0, &GateConfig::default(), seed).unwrap();
        let d = max_abs_diff(&b, &third_octave_db(&g.source.audio));
        assert!(d <= 3.0, "seed {seed}: deviation {d} dB");
        let run = longest_quiet_run(&g.source.audio, -20.0, 80, 16);
        assert!(run <= 4000 + ramp, "seed {seed}: quiet run of {run} samples");
        assert!(run > 0);
    }
}

#[test]
fn gated_energy_below_base() {
    let base = gen_stationary_speech_shaped(&speech_reference(), 5.0, 6).unwrap();
    for seed in 0..5 {
        let g = gen_gated(&base, 250.0, &GateConfig::default(), seed).unwrap();
        assert!(rms_level(&g.source.audio).unwrap() < rms_level(&base.audio).unwrap());
    }
}

fn arb_audio(len: std::ops::Range<usize>) -> impl Strategy<Value = AudioBuffer> {
    prop::collection::vec(-1.0f64..1.0, len)
        .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
        .prop_map(|v| AudioBuffer::new(v, SR).unwrap())
}

proptest! {
    #[test]
    fn mixed_components_realise_requested_snr(
        speech in arb_audio(50..300),
        noise in arb_audio(400..800),
        snr in -40.0f64..40.0,
        seed in any::<u64>(),
    ) {
        let src = NoiseSource::new(fade_core::noise::NoiseKind::File, "n", noise).unwrap();
        let m = mix_at_snr(&speech, &src, snr, seed).unwrap();
        let measured = 20.0 * (rms_level(&speech).unwrap() / rms_level(&m.noise).unwrap()).log10();
        prop_assert!((measured - snr).abs() < 1e-6);
        for ((x, s), n) in m.mixture.samples().iter().zip(speech.samples()).zip(m.noise.samples()) {
            prop_assert_eq!(*x, s + n);
        }
    }
}
