//! Train-SNR × test-SNR sweeps and SRT extraction.
//!
//! For every training SNR a recognizer is trained on noisy sentences and
//! then scored on the test sentences at every test SNR, which yields one
//! row of the recognition matrix. The SRT is the lowest test SNR at which
//! any row reaches the criterion rate, found by linear interpolation along
//! the test-SNR axis.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asr::{init_models, train, Recognizer, TrainConfig};
use crate::corpus::CorpusManifest;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Frontend};
use crate::frontend::{ms_to_samples, AudioBuffer};
use crate::noise::{mix_padded, NoiseSource};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrGrid {
    pub train_snrs: Vec<f64>,
    pub test_snrs: Vec<f64>,
}

/// `lo, lo + step, …` up to and including `hi` (within rounding).
pub fn snr_range(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

impl Default for SnrGrid {
    fn default() -> Self {
        SnrGrid { train_snrs: snr_range(-18.0, 6.0, 3.0), test_snrs: snr_range(-30.0, 9.0, 3.0) }
    }
}

impl SnrGrid {
    pub fn new(train_snrs: Vec<f64>, test_snrs: Vec<f64>) -> Result<Self> {
        let g = SnrGrid { train_snrs, test_snrs };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("train", &self.train_snrs), ("test", &self.test_snrs)] {
            if v.is_empty() {
                return Err(Error::invalid(format!("{name} SNR list is empty")));
            }
            if v.iter().any(|x| !x.is_finite()) || v.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("{name} SNRs must be finite and strictly increasing")));
            }
        }
        Ok(())
    }

    /// Grid with additional test SNRs merged in.
    pub fn with_test_snrs(&self, extra: &[f64]) -> Result<Self> {
        let mut test = self.test_snrs.clone();
        test.extend_from_slice(extra);
        test.sort_by(f64::total_cmp);
        test.dedup();
        SnrGrid::new(self.train_snrs.clone(), test)
    }
}

/// Word-correct rates for every (train SNR, test SNR) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionMatrix {
    pub grid: SnrGrid,
    /// `rates[train][test]`
    pub rates: Vec<Vec<f64>>,
    /// Words tested per cell.
    pub counts: Vec<Vec<u64>>,
}

impl RecognitionMatrix {
    pub fn new(grid: SnrGrid, rates: Vec<Vec<f64>>, counts: Vec<Vec<u64>>) -> Result<Self> {
        grid.validate()?;
        let (n, k) = (grid.train_snrs.len(), grid.test_snrs.len());
        let shape_ok = |lens: Vec<usize>| lens.len() == n && lens.iter().all(|&l| l == k);
        if !shape_ok(rates.iter().map(Vec::len).collect()) || !shape_ok(counts.iter().map(Vec::len).collect()) {
            return Err(Error::invalid(format!("recognition matrix must be {n}×{k}")));
        }
        if rates.iter().flatten().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::invalid("rates must lie in [0, 1]"));
        }
        if counts.iter().flatten().any(|&c| c == 0) {
            return Err(Error::invalid("every cell needs a positive word count"));
        }
        Ok(RecognitionMatrix { grid, rates, counts })
    }

    pub fn from_counts(grid: SnrGrid, correct: &[Vec<u64>], counts: Vec<Vec<u64>>) -> Result<Self> {
        let rates = correct
            .iter()
            .zip(&counts)
            .map(|(c, n)| c.iter().zip(n).map(|(&c, &n)| c as f64 / n.max(1) as f64).collect())
            .collect();
        RecognitionMatrix::new(grid, rates, counts)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("train_snr,test_snr,rate,count\n");
        for (i, tr) in self.grid.train_snrs.iter().enumerate() {
            for (k, te) in self.grid.test_snrs.iter().enumerate() {
                let _ = writeln!(out, "{tr},{te},{},{}", self.rates[i][k], self.counts[i][k]);
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("train_snr,test_snr,rate,count") {
            return Err(Error::invalid("expected header 'train_snr,test_snr,rate,count'"));
        }
        let mut cells = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::invalid(format!("line {}: malformed row '{line}'", i + 2));
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
            cells.push((num(f[0])?, num(f[1])?, num(f[2])?, f[3].trim().parse::<u64>().map_err(|_| bad())?));
        }
        let mut train: Vec<f64> = cells.iter().map(|c| c.0).collect();
        let mut test: Vec<f64> = cells.iter().map(|c| c.1).collect();
        for v in [&mut train, &mut test] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        let grid = SnrGrid::new(train, test)?;
        let (n, k) = (grid.train_snrs.len(), grid.test_snrs.len());
        if cells.len() != n * k {
            return Err(Error::invalid(format!("expected {} cells for a {n}×{k} grid, found {}", n * k, cells.len())));
        }
        let mut rates = vec![vec![f64::NAN; k]; n];
        let mut counts = vec![vec![0; k]; n];
        for (tr, te, r, c) in cells {
            let i = grid.train_snrs.iter().position(|&x| x == tr).expect("from grid");
            let j = grid.test_snrs.iter().position(|&x| x == te).expect("from grid");
            rates[i][j] = r;
            counts[i][j] = c;
        }
        if rates.iter().flatten().any(|r| r.is_nan()) {
            return Err(Error::invalid("duplicate cells in matrix"));
        }
        RecognitionMatrix::new(grid, rates, counts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SrtMethod {
    /// Piecewise-linear interpolation between grid points.
    Linear,
    /// Least-squares logistic fit per row with a fixed lower asymptote.
    Logistic { floor: f64 },
}

impl Default for SrtMethod {
    fn default() -> Self {
        SrtMethod::Linear
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrtEstimate {
    pub srt_db: f64,
    pub sigma_sim: f64,
    pub winning_train_snr: f64,
    /// Row of the recognition matrix that produced the estimate.
    pub row: usize,
    /// Rate change per dB at the crossing.
    pub slope_per_db: f64,
    /// Test SNRs bracketing the crossing.
    pub segment: (f64, f64),
    /// Rate at the crossing.
    pub rate: f64,
    /// Words tested around the crossing.
    pub words: f64,
}

struct Crossing {
    snr: f64,
    rate: f64,
    slope: f64,
    lo: usize,
    hi: usize,
}

/// First upward crossing of `criterion` scanning from the lowest SNR. A row
/// already at or above the criterion at the lowest SNR crosses there.
fn linear_crossing(snrs: &[f64], rates: &[f64], criterion: f64) -> Option<Crossing> {
    let seg_slope = |lo: usize, hi: usize| {
        if hi > lo {
            (rates[hi] - rates[lo]) / (snrs[hi] - snrs[lo])
        } else {
            0.0
        }
    };
    if rates[0] >= criterion {
        let hi = 1.min(snrs.len() - 1);
        return Some(Crossing { snr: snrs[0], rate: rates[0], slope: seg_slope(0, hi), lo: 0, hi });
    }
    (0..snrs.len() - 1).find_map(|k| {
        let (r0, r1) = (rates[k], rates[k + 1]);
        if !(r0 < criterion && r1 >= criterion) {
            return None;
        }
        let snr = if r1 == criterion {
            snrs[k + 1]
        } else {
            snrs[k] + (criterion - r0) * (snrs[k + 1] - snrs[k]) / (r1 - r0)
        };
        Some(Crossing { snr, rate: criterion, slope: seg_slope(k, k + 1), lo: k, hi: k + 1 })
    })
}

fn logistic(x: f64, floor: f64, mid: f64, k: f64) -> f64 {
    floor + (1.0 - floor) / (1.0 + (-k * (x - mid)).exp())
}

/// Crossing of a logistic fitted by a coarse-to-fine grid search over
/// midpoint and slope, weighting cells by their word counts.
fn logistic_crossing(snrs: &[f64], rates: &[f64], counts: &[u64], criterion: f64, floor: f64) -> Option<Crossing> {
    if !(criterion > floor && criterion < 1.0) {
        return None;
    }
    let (lo, hi) = (snrs[0], snrs[snrs.len() - 1]);
    let sse = |mid: f64, k: f64| -> f64 {
        snrs.iter()
            .zip(rates)
            .zip(counts)
            .map(|((&x, &r), &n)| n as f64 * (logistic(x, floor, mid, k) - r).powi(2))
            .sum()
    };
    let span = (hi - lo).max(1.0);
    let (mut best_mid, mut best_lk, mut best) = (lo, 0.0, f64::INFINITY);
    let (mut mid_lo, mut mid_hi) = (lo - span, hi + span);
    let (mut lk_lo, mut lk_hi) = ((0.01f64).ln(), (10.0f64).ln());
    for _ in 0..6 {
        for i in 0..=60 {
            let mid = mid_lo + (mid_hi - mid_lo) * i as f64 / 60.0;
            for j in 0..=60 {
                let lk = lk_lo + (lk_hi - lk_lo) * j as f64 / 60.0;
                let e = sse(mid, lk.exp());
                if e < best {
                    (best_mid, best_lk, best) = (mid, lk, e);
                }
            }
        }
        let (dm, dk) = ((mid_hi - mid_lo) / 10.0, (lk_hi - lk_lo) / 10.0);
        (mid_lo, mid_hi, lk_lo, lk_hi) = (best_mid - dm, best_mid + dm, best_lk - dk, best_lk + dk);
    }
    let k = best_lk.exp();
    let s = (criterion - floor) / (1.0 - floor);
    let snr = best_mid + (s / (1.0 - s)).ln() / k;
    if snr > hi {
        return None;
    }
    let snr = snr.max(lo);
    let hi_idx = snrs.iter().position(|&x| x >= snr).unwrap_or(snrs.len() - 1).max(1.min(snrs.len() - 1));
    Some(Crossing {
        snr,
        rate: criterion,
        slope: (1.0 - floor) * k * s * (1.0 - s),
        lo: hi_idx.saturating_sub(1),
        hi: hi_idx,
    })
}

pub fn srt_from_matrix(m: &RecognitionMatrix, criterion: f64) -> Result<SrtEstimate> {
    srt_with_method(m, criterion, SrtMethod::Linear)
}

/// Lowest crossing over all rows; ties go to the lower training SNR.
pub fn srt_with_method(m: &RecognitionMatrix, criterion: f64, method: SrtMethod) -> Result<SrtEstimate> {
    if !(criterion > 0.0 && criterion < 1.0) {
        return Err(Error::invalid(format!("criterion must be in (0, 1), got {criterion}")));
    }
    let snrs = &m.grid.test_snrs;
    let mut best: Option<(usize, Crossing)> = None;
    for (row, rates) in m.rates.iter().enumerate() {
        let c = match method {
            SrtMethod::Linear => linear_crossing(snrs, rates, criterion),
            SrtMethod::Logistic { floor } => logistic_crossing(snrs, rates, &m.counts[row], criterion, floor),
        };
        if let Some(c) = c {
            if best.as_ref().map_or(true, |(_, b)| c.snr < b.snr) {
                best = Some((row, c));
            }
        }
    }
    let Some((row, c)) = best else {
        return Err(Error::NoSrt(format!("no training SNR reaches a word-correct rate of {criterion}")));
    };
    let words = 0.5 * (m.counts[row][c.lo] + m.counts[row][c.hi]) as f64;
    let mut est = SrtEstimate {
        srt_db: c.snr,
        sigma_sim: 0.0,
        winning_train_snr: m.grid.train_snrs[row],
        row,
        slope_per_db: c.slope,
        segment: (snrs[c.lo], snrs[c.hi]),
        rate: c.rate,
        words,
    };
    est.sigma_sim = srt_uncertainty(&est);
    Ok(est)
}

/// Binomial standard error of the rate at the crossing converted to dB by
/// the local slope. A flat segment yields the segment width instead.
pub fn srt_uncertainty(est: &SrtEstimate) -> f64 {
    let p = est.rate.clamp(0.0, 1.0);
    if est.slope_per_db > 0.0 && est.words > 0.0 {
        (p * (1.0 - p) / est.words).sqrt() / est.slope_per_db
    } else {
        est.segment.1 - est.segment.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: SnrGrid,
    pub train: TrainConfig,
    /// Silence added before and after every sentence prior to mixing.
    pub padding_ms: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { grid: SnrGrid::default(), train: TrainConfig::default(), padding_ms: 250.0 }
    }
}

/// Corpus splits, feature extractor and masker of one condition.
#[derive(Debug, Clone, Copy)]
pub struct SweepInputs<'a> {
    pub train: &'a CorpusManifest,
    pub test: &'a CorpusManifest,
    pub frontend: &'a Frontend,
    pub noise: &'a NoiseSource,
}

/// Word counts of one recognition-matrix row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub correct: Vec<u64>,
    pub words: Vec<u64>,
}

/// Storage for finished rows, used to resume interrupted sweeps.
pub trait RowStore: Sync {
    fn load(&self, row: usize) -> Option<RowResult>;
    fn save(&self, row: usize, result: &RowResult) -> Result<()>;
}

/// Keeps nothing.
pub struct NoStore;

impl RowStore for NoStore {
    fn load(&self, _: usize) -> Option<RowResult> {
        None
    }

    fn save(&self, _: usize, _: &RowResult) -> Result<()> {
        Ok(())
    }
}

const TRAIN_STREAM: &str = "train-mix";
const TEST_STREAM: &str = "test-mix";

pub fn run_sweep(inputs: SweepInputs<'_>, cfg: &SweepConfig, master_seed: u64) -> Result<RecognitionMatrix> {
    run_sweep_with_store(inputs, cfg, master_seed, &NoStore)
}

/// Sweep that skips rows already present in `store` and saves new ones.
/// Mixing seeds depend only on the master seed, the SNR index and the
/// sentence index, so results do not depend on scheduling.
pub fn run_sweep_with_store(
    inputs: SweepInputs<'_>,
    cfg: &SweepConfig,
    master_seed: u64,
    store: &dyn RowStore,
) -> Result<RecognitionMatrix> {
    let grid = &cfg.grid;
    grid.validate()?;
    cfg.train.validate()?;
    if inputs.train.grammar != inputs.test.grammar {
        return Err(Error::invalid("train and test corpora use different grammars"));
    }
    if !(cfg.padding_ms >= 0.0) {
        return Err(Error::invalid("padding must be nonnegative"));
    }
    let k = grid.test_snrs.len();
    let cached: Vec<Option<RowResult>> = (0..grid.train_snrs.len())
        .map(|n| store.load(n).filter(|r| r.correct.len() == k && r.words.len() == k))
        .collect();
    let mut rows: Vec<Option<RowResult>> = cached;
    if rows.iter().any(Option::is_none) {
        let train_audio = load_all(inputs.train)?;
        let test_audio = load_all(inputs.test)?;
        let sr = test_audio[0].sample_rate();
        let pad = ms_to_samples(cfg.padding_ms, sr);
        let test_stream = seed::derive_seed(master_seed, &[seed::label(TEST_STREAM)]);
        info!("extracting test features at {k} SNRs for {} sentences", test_audio.len());
        let test_features: Vec<Vec<FeatureMatrix>> = grid
            .test_snrs
            .par_iter()
            .enumerate()
            .map(|(ki, &snr)| {
                noisy_features(&test_audio, inputs, pad, snr, seed::derive_seed(test_stream, &[ki as u64]))
                    .map_err(|e| context(e, format!("test SNR {snr} dB")))
            })
            .collect::<Result<_>>()?;
        let train_stream = seed::derive_seed(master_seed, &[seed::label(TRAIN_STREAM)]);
        let computed: Vec<(usize, RowResult)> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_none())
            .map(|(n, _)| n)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|n| {
                let snr = grid.train_snrs[n];
                let row = run_row(
                    inputs,
                    cfg,
                    &train_audio,
                    &test_features,
                    pad,
                    snr,
                    seed::derive_seed(train_stream, &[n as u64]),
                )
                .map_err(|e| context(e, format!("train SNR {snr} dB")))?;
                store.save(n, &row)?;
                info!("train SNR {snr} dB done");
                Ok((n, row))
            })
            .collect::<Result<_>>()?;
        for (n, row) in computed {
            rows[n] = Some(row);
        }
    }
    let rows: Vec<RowResult> = rows.into_iter().map(|r| r.expect("all rows filled")).collect();
    let correct: Vec<Vec<u64>> = rows.iter().map(|r| r.correct.clone()).collect();
    let counts: Vec<Vec<u64>> = rows.into_iter().map(|r| r.words).collect();
    RecognitionMatrix::from_counts(grid.clone(), &correct, counts)
}

fn context(e: Error, what: String) -> Error {
    match e {
        Error::TrainingData(m) => Error::TrainingData(format!("{what}: {m}")),
        Error::Decode(m) => Error::Decode(format!("{what}: {m}")),
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{what}: {m}")),
        other => other,
    }
}

fn load_all(m: &CorpusManifest) -> Result<Vec<Arc<AudioBuffer>>> {
    m.entries.par_iter().map(|e| e.load_audio()).collect()
}

fn noisy_features(
    audio: &[Arc<AudioBuffer>],
    inputs: SweepInputs<'_>,
    pad: usize,
    snr: f64,
    stream: u64,
) -> Result<Vec<FeatureMatrix>> {
    audio
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            let mix = mix_padded(a, pad, pad, inputs.noise, snr, seed::derive_seed(stream, &[i as u64]))?;
            inputs.frontend.extract(&mix.mixture)
        })
        .collect()
}

fn run_row(
    inputs: SweepInputs<'_>,
    cfg: &SweepConfig,
    train_audio: &[Arc<AudioBuffer>],
    test_features: &[Vec<FeatureMatrix>],
    pad: usize,
    snr: f64,
    stream: u64,
) -> Result<RowResult> {
    let grammar = &inputs.train.grammar;
    let feats = noisy_features(train_audio, inputs, pad, snr, stream)?;
    let data: Vec<_> = feats.iter().zip(&inputs.train.entries).map(|(f, e)| (f, &e.label)).collect();
    let init = init_models(&data, grammar, &cfg.train)?;
    let (models, _) = train(init, &data, grammar, &cfg.train)?;
    let rec = Recognizer::new(models, grammar.clone(), cfg.train.optional_silence)?;
    let slots = grammar.num_slots() as u64;
    let mut correct = Vec::with_capacity(test_features.len());
    let mut words = Vec::with_capacity(test_features.len());
    for feats in test_features {
        let hits: Vec<u64> = feats
            .par_iter()
            .zip(&inputs.test.entries)
            .map(|(f, e)| {
                let hyp = rec.decode(f)?;
                Ok(hyp.words.iter().zip(&e.label.words).filter(|(a, b)| a == b).count() as u64)
            })
            .collect::<Result<_>>()?;
        correct.push(hits.iter().sum());
        words.push(slots * feats.len() as u64);
    }
    Ok(RowResult { correct, words })
}
