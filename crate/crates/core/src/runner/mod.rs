//! Experiment runner: builds the condition matrix (features × speakers ×
//! languages × efforts × noises), runs one sweep per condition, derives
//! Lombard gains and writes report files.
//!
//! Conditions run one after another; inside a condition the training-SNR
//! rows and the utterances run in parallel on a pool of `workers` threads.
//! Every random stream is derived from the master seed and names (never
//! from positions in the job queue), so results do not depend on the
//! worker count.
//!
//! Seed paths, all below the master seed:
//!
//! - synthetic corpora: `corpus / speaker / language / {0 train, 1 test}`,
//!   shared by both efforts so that plain and Lombard corpora hold the same
//!   sentences
//! - manifest split: `split`
//! - maskers: `noise / name`
//! - sweeps: `sweep / speaker / language / noise`, shared across features
//!   and efforts so that compared conditions see the same noise sections

mod config;
mod report;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use config::{
    desk_test_snrs, CorpusConfig, EmpiricalConfig, ExperimentConfig, GrammarChoice, LanguageConfig, NamedFrontend,
    NoiseConfig, SpeakerConfig, SrtConfig, SyntheticCorpusConfig,
};
pub use report::{
    emit_evaluation, emit_reports, evaluate, load_results, summary_csv, EmpiricalEntry, EmpiricalTable, Evaluation,
    ListenerGainRow, Panel, PanelKind, RunManifest,
};

use crate::corpus::{
    load_manifest, split_train_test, synthesize_corpus, CorpusManifest, Effort, SpeechCondition, SyntheticCorpusSpec,
};
use crate::error::{Error, Result};
use crate::features::Frontend;
use crate::frontend::AudioBuffer;
use crate::noise::{gen_gated, gen_stationary_speech_shaped, NoiseSource};
use crate::seed::{derive_seed, label};
use crate::sim::{
    run_sweep_with_store, srt_with_method, RecognitionMatrix, RowResult, RowStore, SrtEstimate, SweepInputs,
};
use crate::stats::lombard_gain;

/// One cell of the experiment matrix.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConditionKey {
    pub feature: String,
    pub speaker: String,
    pub language: String,
    pub effort: Effort,
    pub noise: String,
}

impl ConditionKey {
    pub fn speech(&self) -> SpeechCondition {
        SpeechCondition { speaker: self.speaker.clone(), language: self.language.clone(), effort: self.effort }
    }

    /// File name stem, the key parts joined by `_`.
    pub fn file_stem(&self) -> String {
        [&self.feature, &self.speaker, &self.language, self.effort.as_str(), &self.noise]
            .map(|s| s.replace(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '.'), "-"))
            .join("_")
    }
}

impl fmt::Display for ConditionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}/{}", self.feature, self.speaker, self.language, self.effort, self.noise)
    }
}

impl std::str::FromStr for ConditionKey {
    type Err = Error;

    /// Parses `feature/speaker/language/effort/noise`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        let [feature, speaker, language, effort, noise] = parts[..] else {
            return Err(Error::Config(format!("condition '{s}' must read feature/speaker/language/effort/noise")));
        };
        Ok(ConditionKey {
            feature: feature.into(),
            speaker: speaker.into(),
            language: language.into(),
            effort: effort.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            noise: noise.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub key: ConditionKey,
    pub matrix: Option<RecognitionMatrix>,
    pub srt: Option<SrtEstimate>,
    /// Why the condition produced no SRT.
    pub failure: Option<String>,
}

/// Plain minus Lombard SRT of one feature, speaker, language and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LombardGain {
    pub feature: String,
    pub speaker: String,
    pub language: String,
    pub noise: String,
    pub gain_db: f64,
    pub sigma_db: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultBundle {
    pub conditions: Vec<ConditionResult>,
    pub gains: Vec<LombardGain>,
}

impl ResultBundle {
    pub fn failed(&self) -> impl Iterator<Item = &ConditionResult> {
        self.conditions.iter().filter(|c| c.failure.is_some())
    }

    pub fn get(&self, key: &ConditionKey) -> Option<&ConditionResult> {
        self.conditions.iter().find(|c| &c.key == key)
    }
}

/// Train and test sentences of one speech condition.
#[derive(Debug, Clone)]
pub struct SpeechMaterial {
    pub condition: SpeechCondition,
    pub train: CorpusManifest,
    pub test: CorpusManifest,
}

pub fn prepare_corpora(cfg: &ExperimentConfig) -> Result<Vec<SpeechMaterial>> {
    match &cfg.corpus {
        CorpusConfig::Synthetic(s) => {
            let grammar = s.grammar.resolve()?;
            let mut out = Vec::new();
            for sp in &s.speakers {
                for lang in &s.languages {
                    let stream = derive_seed(cfg.seed, &[label("corpus"), label(&sp.name), label(&lang.name)]);
                    for &effort in &s.efforts {
                        let mut spec = SyntheticCorpusSpec::new(grammar.clone(), lang.tonal, s.sample_rate)?;
                        spec.voice = sp.voice(effort).clone();
                        spec.condition =
                            SpeechCondition { speaker: sp.name.clone(), language: lang.name.clone(), effort };
                        spec.validate().map_err(|e| Error::Config(format!("speaker '{}' ({effort}): {e}", sp.name)))?;
                        out.push(SpeechMaterial {
                            condition: spec.condition.clone(),
                            train: synthesize_corpus(&spec, s.train_sentences, derive_seed(stream, &[0]))?,
                            test: synthesize_corpus(&spec, s.test_sentences, derive_seed(stream, &[1]))?,
                        });
                    }
                }
            }
            Ok(out)
        }
        CorpusConfig::Manifest { path, train_fraction } => {
            let m = load_manifest(path)?;
            let (train, test) = split_train_test(&m, *train_fraction, derive_seed(cfg.seed, &[label("split")]))?;
            m.conditions()
                .into_keys()
                .map(|c| {
                    let (Some(tr), Some(te)) = (train.subset(&c), test.subset(&c)) else {
                        return Err(Error::Config(format!(
                            "speech condition {c} has too few recordings for a train/test split"
                        )));
                    };
                    Ok(SpeechMaterial { condition: c, train: tr, test: te })
                })
                .collect()
        }
    }
}

/// Maskers in configuration order. Surrogates take their spectrum from the
/// pooled training speech of all conditions.
pub fn prepare_noises(cfg: &ExperimentConfig, materials: &[SpeechMaterial]) -> Result<Vec<NoiseSource>> {
    let sr = materials
        .first()
        .map(|m| m.train.entries[0].load_audio().map(|a| a.sample_rate()))
        .transpose()?
        .ok_or_else(|| Error::Config("corpus has no speech conditions".into()))?;
    let mut reference: Option<AudioBuffer> = None;
    let mut out: Vec<NoiseSource> = Vec::new();
    for n in &cfg.noises {
        let seed = derive_seed(cfg.seed, &[label("noise"), label(n.name())]);
        let mut source = match n {
            NoiseConfig::File { name, path } => NoiseSource::from_wav(name.clone(), path)?,
            NoiseConfig::StationarySurrogate { duration_s, .. } => {
                if reference.is_none() {
                    reference = Some(pooled_speech(materials)?);
                }
                gen_stationary_speech_shaped(reference.as_ref().expect("set above"), *duration_s, seed)?
            }
            NoiseConfig::GatedSurrogate { base, max_gap_ms, gate, .. } => {
                let b = out.iter().find(|s| &s.label == base).expect("validated base");
                gen_gated(b, *max_gap_ms, gate, seed)?.source
            }
        };
        if source.audio.sample_rate() != sr {
            return Err(Error::Config(format!(
                "noise '{}' has sample rate {} Hz, corpus has {sr} Hz",
                n.name(),
                source.audio.sample_rate()
            )));
        }
        source.label = n.name().to_string();
        out.push(source);
    }
    Ok(out)
}

fn pooled_speech(materials: &[SpeechMaterial]) -> Result<AudioBuffer> {
    let mut samples = Vec::new();
    let mut sr = 0;
    for m in materials {
        for e in &m.train.entries {
            let a = e.load_audio()?;
            sr = a.sample_rate();
            samples.extend_from_slice(a.samples());
        }
    }
    AudioBuffer::new(samples, sr)
}

/// Condition keys in run order: feature, speaker, language, effort, noise.
pub fn plan_conditions(cfg: &ExperimentConfig, materials: &[SpeechMaterial]) -> Vec<ConditionKey> {
    let mut speech: Vec<&SpeechCondition> = materials.iter().map(|m| &m.condition).collect();
    if let CorpusConfig::Synthetic(s) = &cfg.corpus {
        let pos = |c: &SpeechCondition| {
            (
                s.speakers.iter().position(|x| x.name == c.speaker),
                s.languages.iter().position(|x| x.name == c.language),
                s.efforts.iter().position(|&e| e == c.effort),
            )
        };
        speech.sort_by_key(|c| pos(c));
    }
    let mut keys = Vec::new();
    for f in &cfg.features {
        for c in &speech {
            for n in &cfg.noises {
                keys.push(ConditionKey {
                    feature: f.name.clone(),
                    speaker: c.speaker.clone(),
                    language: c.language.clone(),
                    effort: c.effort,
                    noise: n.name().to_string(),
                });
            }
        }
    }
    keys
}

/// Where finished rows are kept between runs.
#[derive(Debug, Clone)]
pub struct RowCache {
    pub dir: PathBuf,
    /// Reuse rows written by an earlier run with the same configuration.
    pub resume: bool,
}

#[derive(Serialize, Deserialize)]
struct StoredRow {
    config_hash: String,
    condition: String,
    row: usize,
    result: RowResult,
}

struct FileRowStore {
    dir: PathBuf,
    hash: String,
    condition: String,
    resume: bool,
}

impl FileRowStore {
    fn path(&self, row: usize) -> PathBuf {
        self.dir.join(format!("row_{row:03}.json"))
    }
}

impl RowStore for FileRowStore {
    fn load(&self, row: usize) -> Option<RowResult> {
        if !self.resume {
            return None;
        }
        let text = fs::read_to_string(self.path(row)).ok()?;
        let stored: StoredRow = serde_json::from_str(&text).ok()?;
        (stored.config_hash == self.hash && stored.condition == self.condition && stored.row == row)
            .then_some(stored.result)
    }

    fn save(&self, row: usize, result: &RowResult) -> Result<()> {
        let stored = StoredRow {
            config_hash: self.hash.clone(),
            condition: self.condition.clone(),
            row,
            result: result.clone(),
        };
        let path = self.path(row);
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string(&stored).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

/// Runs every condition. Configuration and input problems abort the run;
/// failures inside a condition are recorded in the bundle.
pub fn run_experiment(cfg: &ExperimentConfig, cache: Option<&RowCache>) -> Result<ResultBundle> {
    run_conditions(cfg, cache, |_| true)
}

/// Like [`run_experiment`] but only for the conditions `select` accepts.
/// Seeds do not depend on the selection.
pub fn run_conditions(
    cfg: &ExperimentConfig,
    cache: Option<&RowCache>,
    select: impl Fn(&ConditionKey) -> bool + Sync,
) -> Result<ResultBundle> {
    cfg.validate()?;
    let workers = cfg.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {workers} worker threads: {e}")))?;
    pool.install(|| run_in_pool(cfg, cache, &select))
}

fn run_in_pool(
    cfg: &ExperimentConfig,
    cache: Option<&RowCache>,
    select: &(dyn Fn(&ConditionKey) -> bool + Sync),
) -> Result<ResultBundle> {
    let materials = prepare_corpora(cfg)?;
    let noises = prepare_noises(cfg, &materials)?;
    let sr = noises[0].audio.sample_rate();
    let frontends: Vec<Arc<Frontend>> = cfg
        .features
        .iter()
        .map(|f| {
            Frontend::new(&f.frontend, sr)
                .map(Arc::new)
                .map_err(|e| Error::Config(format!("feature '{}': {e}", f.name)))
        })
        .collect::<Result<_>>()?;
    let hash = cfg.hash();
    let keys: Vec<ConditionKey> = plan_conditions(cfg, &materials).into_iter().filter(|k| select(k)).collect();
    if keys.is_empty() {
        return Err(Error::Config("no condition matches the selection".into()));
    }
    info!("running {} conditions", keys.len());
    let mut conditions = Vec::with_capacity(keys.len());
    for key in keys {
        let fi = cfg.features.iter().position(|f| f.name == key.feature).expect("planned feature");
        let ni = cfg.noises.iter().position(|n| n.name() == key.noise).expect("planned noise");
        let speech = key.speech();
        let mat = materials.iter().find(|m| m.condition == speech).expect("planned condition");
        let inputs = SweepInputs { train: &mat.train, test: &mat.test, frontend: &frontends[fi], noise: &noises[ni] };
        let seed =
            derive_seed(cfg.seed, &[label("sweep"), label(&key.speaker), label(&key.language), label(&key.noise)]);
        let matrix = match cache {
            Some(c) => {
                let store = FileRowStore {
                    dir: c.dir.join("rows").join(key.file_stem()),
                    hash: hash.clone(),
                    condition: key.to_string(),
                    resume: c.resume,
                };
                fs::create_dir_all(&store.dir).map_err(|e| Error::io(&store.dir, e))?;
                run_sweep_with_store(inputs, &cfg.sweep, seed, &store)
            }
            None => run_sweep_with_store(inputs, &cfg.sweep, seed, &crate::sim::NoStore),
        };
        let result = match matrix {
            Ok(m) => match srt_with_method(&m, cfg.srt.criterion, cfg.srt.method) {
                Ok(est) => {
                    info!("{key}: SRT {:.2} dB ± {:.2}", est.srt_db, est.sigma_sim);
                    ConditionResult { key, matrix: Some(m), srt: Some(est), failure: None }
                }
                Err(e) => {
                    warn!("{key}: {e}");
                    ConditionResult { key, matrix: Some(m), srt: None, failure: Some(e.to_string()) }
                }
            },
            Err(e @ Error::Io { .. }) => return Err(e),
            Err(e) => {
                warn!("{key} failed: {e}");
                ConditionResult { key, matrix: None, srt: None, failure: Some(e.to_string()) }
            }
        };
        conditions.push(result);
    }
    let gains = lombard_gains(&conditions);
    Ok(ResultBundle { conditions, gains })
}

/// Gains for every feature, speaker, language and noise with SRTs for
/// both efforts; the uncertainty combines both SRT uncertainties.
pub fn lombard_gains(conditions: &[ConditionResult]) -> Vec<LombardGain> {
    let mut out = Vec::new();
    for plain in conditions.iter().filter(|c| c.key.effort == Effort::Plain) {
        let lombard_key = ConditionKey { effort: Effort::Lombard, ..plain.key.clone() };
        let Some(lombard) = conditions.iter().find(|c| c.key == lombard_key) else { continue };
        if let (Some(p), Some(l)) = (&plain.srt, &lombard.srt) {
            out.push(LombardGain {
                feature: plain.key.feature.clone(),
                speaker: plain.key.speaker.clone(),
                language: plain.key.language.clone(),
                noise: plain.key.noise.clone(),
                gain_db: lombard_gain(p.srt_db, l.srt_db),
                sigma_db: p.sigma_sim.hypot(l.sigma_sim),
            });
        }
    }
    out
}

/// Output directory chosen by the caller or the configuration.
pub fn output_dir(cfg: &ExperimentConfig, cli_override: Option<&Path>) -> PathBuf {
    cli_override.map(Path::to_path_buf).or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("results"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_plan_has_eight_conditions() {
        let mut cfg = ExperimentConfig::desk(5);
        if let CorpusConfig::Synthetic(s) = &mut cfg.corpus {
            s.train_sentences = 2;
            s.test_sentences = 2;
        }
        let materials = prepare_corpora(&cfg).unwrap();
        assert_eq!(materials.len(), 2);
        let keys = plan_conditions(&cfg, &materials);
        assert_eq!(keys.len(), 8);
        assert_eq!(keys[0].to_string(), "sgbfb/synth/nontonal/plain/icra1");
        assert_eq!(keys[7].to_string(), "mfcc/synth/nontonal/lombard/icra5-250");
        assert_eq!(keys[7].file_stem(), "mfcc_synth_nontonal_lombard_icra5-250");
        assert_eq!(keys[7].to_string().parse::<ConditionKey>().unwrap(), keys[7]);
        assert!("a/b/c/loud/n".parse::<ConditionKey>().is_err());
        assert!("a/b/c".parse::<ConditionKey>().is_err());
    }

    #[test]
    fn four_speaker_bilingual_plan_has_sixty_four_conditions() {
        let mut cfg = ExperimentConfig::desk(5);
        if let CorpusConfig::Synthetic(s) = &mut cfg.corpus {
            s.train_sentences = 1;
            s.test_sentences = 1;
            for (i, f0) in [0.8, 1.6, 1.9].into_iter().enumerate() {
                let mut sp = s.speakers[0].clone();
                sp.name = format!("talker{}", i + 2);
                sp.plain.f0_scale = f0;
                s.speakers.push(sp);
            }
            s.languages.push(LanguageConfig { name: "tonal".into(), tonal: true });
        }
        let materials = prepare_corpora(&cfg).unwrap();
        assert_eq!(materials.len(), 4 * 2 * 2);
        let keys = plan_conditions(&cfg, &materials);
        assert_eq!(keys.len(), 64);
        let distinct: std::collections::BTreeSet<_> = keys.iter().map(ConditionKey::file_stem).collect();
        assert_eq!(distinct.len(), 64);
    }

    #[test]
    fn plain_and_lombard_corpora_share_sentences() {
        let mut cfg = ExperimentConfig::desk(9);
        if let CorpusConfig::Synthetic(s) = &mut cfg.corpus {
            s.train_sentences = 4;
            s.test_sentences = 3;
        }
        let m = prepare_corpora(&cfg).unwrap();
        let labels = |c: &CorpusManifest| c.entries.iter().map(|e| e.label.clone()).collect::<Vec<_>>();
        assert_eq!(labels(&m[0].train), labels(&m[1].train));
        assert_eq!(labels(&m[0].test), labels(&m[1].test));
        let a = m[0].train.entries[0].load_audio().unwrap();
        let b = m[1].train.entries[0].load_audio().unwrap();
        assert!(b.len() > a.len(), "Lombard tokens are slower");
    }

    #[test]
    fn gains_pair_plain_with_lombard() {
        let est = |srt: f64, sigma: f64| SrtEstimate {
            srt_db: srt,
            sigma_sim: sigma,
            winning_train_snr: 0.0,
            row: 0,
            slope_per_db: 0.1,
            segment: (srt - 1.0, srt + 1.0),
            rate: 0.5,
            words: 100.0,
        };
        let key = |effort, noise: &str| ConditionKey {
            feature: "f".into(),
            speaker: "s".into(),
            language: "l".into(),
            effort,
            noise: noise.into(),
        };
        let res = |k, srt: Option<SrtEstimate>| ConditionResult { key: k, matrix: None, failure: None, srt };
        let conditions = vec![
            res(key(Effort::Plain, "a"), Some(est(-10.0, 0.3))),
            res(key(Effort::Lombard, "a"), Some(est(-13.0, 0.4))),
            res(key(Effort::Plain, "b"), Some(est(-20.0, 0.3))),
            res(key(Effort::Lombard, "b"), None),
        ];
        let g = lombard_gains(&conditions);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].gain_db, 3.0);
        assert!((g[0].sigma_db - 0.5).abs() < 1e-12);
    }
}
