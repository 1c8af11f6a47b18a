//! Declarative experiment description, read from TOML.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Effort, MatrixGrammar, VoiceParams};
use crate::error::{Error, Result};
use crate::features::{FrontendConfig, MfccConfig, SgbfbConfig};
use crate::noise::GateConfig;
use crate::sim::{snr_range, SnrGrid, SrtMethod, SweepConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream of the run derives from it.
    pub seed: u64,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub corpus: CorpusConfig,
    pub features: Vec<NamedFrontend>,
    pub noises: Vec<NoiseConfig>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub srt: SrtConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical: Option<EmpiricalConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CorpusConfig {
    Synthetic(SyntheticCorpusConfig),
    /// Recorded corpus; conditions come from the manifest's speaker,
    /// language and effort columns.
    Manifest {
        path: PathBuf,
        train_fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpusConfig {
    pub grammar: GrammarChoice,
    pub sample_rate: u32,
    pub train_sentences: usize,
    pub test_sentences: usize,
    pub speakers: Vec<SpeakerConfig>,
    pub languages: Vec<LanguageConfig>,
    pub efforts: Vec<Effort>,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        SyntheticCorpusConfig {
            grammar: GrammarChoice::Named("desk".into()),
            sample_rate: 16000,
            train_sentences: 60,
            test_sentences: 60,
            speakers: vec![SpeakerConfig {
                name: "synth".into(),
                plain: VoiceParams::default(),
                lombard: VoiceParams::lombard(),
            }],
            languages: vec![LanguageConfig { name: "nontonal".into(), tonal: false }],
            efforts: vec![Effort::Plain, Effort::Lombard],
        }
    }
}

/// `"desk"`, `"standard"` or an explicit slot list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GrammarChoice {
    Named(String),
    Custom(MatrixGrammar),
}

impl GrammarChoice {
    pub fn resolve(&self) -> Result<MatrixGrammar> {
        match self {
            GrammarChoice::Named(n) if n == "desk" => Ok(MatrixGrammar::desk()),
            GrammarChoice::Named(n) if n == "standard" => Ok(MatrixGrammar::standard()),
            GrammarChoice::Named(n) => {
                Err(Error::Config(format!("unknown grammar '{n}', expected 'desk', 'standard' or a slot list")))
            }
            GrammarChoice::Custom(g) => {
                g.validate().map_err(|e| Error::Config(e.to_string()))?;
                Ok(g.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerConfig {
    pub name: String,
    #[serde(default)]
    pub plain: VoiceParams,
    #[serde(default = "VoiceParams::lombard")]
    pub lombard: VoiceParams,
}

impl SpeakerConfig {
    pub fn voice(&self, effort: Effort) -> &VoiceParams {
        match effort {
            Effort::Plain => &self.plain,
            Effort::Lombard => &self.lombard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageConfig {
    pub name: String,
    /// Tonal languages distinguish words within a slot by pitch contour only.
    #[serde(default)]
    pub tonal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedFrontend {
    pub name: String,
    pub frontend: FrontendConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    File {
        name: String,
        path: PathBuf,
    },
    /// Random-phase noise with the long-term spectrum of the pooled
    /// training speech.
    StationarySurrogate {
        name: String,
        #[serde(default = "default_noise_seconds")]
        duration_s: f64,
    },
    /// On/off gated copy of an earlier noise.
    GatedSurrogate {
        name: String,
        base: String,
        max_gap_ms: f64,
        #[serde(default)]
        gate: GateConfig,
    },
}

fn default_noise_seconds() -> f64 {
    30.0
}

impl NoiseConfig {
    pub fn name(&self) -> &str {
        match self {
            NoiseConfig::File { name, .. }
            | NoiseConfig::StationarySurrogate { name, .. }
            | NoiseConfig::GatedSurrogate { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrtConfig {
    pub criterion: f64,
    pub method: SrtMethod,
}

impl Default for SrtConfig {
    fn default() -> Self {
        SrtConfig { criterion: 0.5, method: SrtMethod::Linear }
    }
}

/// Listener data to compare predictions against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalConfig {
    pub table: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub listeners: Option<PathBuf>,
}

/// Test SNRs of the desk setup: the gated masker keeps more than half of the
/// words intelligible down to about −40 dB, so the grid reaches −60 dB.
pub fn desk_test_snrs() -> Vec<f64> {
    let mut v = snr_range(-60.0, 9.0, 3.0);
    v.push(60.0);
    v
}

impl ExperimentConfig {
    /// Desk-scale synthetic experiment: two feature types, one speaker and
    /// language, both efforts, stationary and gated maskers.
    pub fn desk(seed: u64) -> Self {
        let grid = SnrGrid { train_snrs: SnrGrid::default().train_snrs, test_snrs: desk_test_snrs() };
        ExperimentConfig {
            seed,
            workers: None,
            out_dir: None,
            corpus: CorpusConfig::Synthetic(SyntheticCorpusConfig::default()),
            features: vec![
                NamedFrontend { name: "sgbfb".into(), frontend: FrontendConfig::sgbfb(SgbfbConfig::default()) },
                NamedFrontend { name: "mfcc".into(), frontend: FrontendConfig::mfcc(MfccConfig::default()) },
            ],
            noises: vec![
                NoiseConfig::StationarySurrogate { name: "icra1".into(), duration_s: default_noise_seconds() },
                NoiseConfig::GatedSurrogate {
                    name: "icra5-250".into(),
                    base: "icra1".into(),
                    max_gap_ms: 250.0,
                    gate: GateConfig::default(),
                },
            ],
            sweep: SweepConfig { grid, ..SweepConfig::default() },
            srt: SrtConfig::default(),
            empirical: None,
        }
    }

    /// Parses TOML and resolves relative paths against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let CorpusConfig::Manifest { path, .. } = &mut self.corpus {
            fix(path);
        }
        for n in &mut self.noises {
            if let NoiseConfig::File { path, .. } = n {
                fix(path);
            }
        }
        if let Some(e) = &mut self.empirical {
            fix(&mut e.table);
            if let Some(l) = &mut e.listeners {
                fix(l);
            }
        }
        if let Some(o) = &mut self.out_dir {
            fix(o);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if i64::try_from(self.seed).is_err() {
            return bad(format!("seed {} does not fit a signed 64-bit integer", self.seed));
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if self.features.is_empty() || self.noises.is_empty() {
            return bad("at least one feature type and one noise are required".into());
        }
        unique("feature", self.features.iter().map(|f| f.name.as_str()))?;
        unique("noise", self.noises.iter().map(NoiseConfig::name))?;
        for (i, n) in self.noises.iter().enumerate() {
            match n {
                NoiseConfig::File { name, path } if !path.is_file() => {
                    return bad(format!("noise '{name}': file {} does not exist", path.display()));
                }
                NoiseConfig::StationarySurrogate { name, duration_s } if !(*duration_s >= 1.0) => {
                    return bad(format!("noise '{name}': duration must be at least 1 s"));
                }
                NoiseConfig::GatedSurrogate { name, base, max_gap_ms, .. } => {
                    if !self.noises[..i].iter().any(|b| b.name() == base) {
                        return bad(format!("noise '{name}': base '{base}' must be defined before it"));
                    }
                    if !(*max_gap_ms > 0.0) {
                        return bad(format!("noise '{name}': max_gap_ms must be positive"));
                    }
                }
                _ => {}
            }
        }
        match &self.corpus {
            CorpusConfig::Synthetic(s) => {
                s.grammar.resolve()?;
                if s.train_sentences == 0 || s.test_sentences == 0 {
                    return bad("synthetic corpus needs train and test sentences".into());
                }
                if s.speakers.is_empty() || s.languages.is_empty() || s.efforts.is_empty() {
                    return bad("synthetic corpus needs at least one speaker, language and effort".into());
                }
                unique("speaker", s.speakers.iter().map(|x| x.name.as_str()))?;
                unique("language", s.languages.iter().map(|x| x.name.as_str()))?;
                unique("effort", s.efforts.iter().map(|e| e.as_str()))?;
            }
            CorpusConfig::Manifest { path, train_fraction } => {
                if !path.is_file() {
                    return bad(format!("corpus manifest {} does not exist", path.display()));
                }
                if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                    return bad("train_fraction must lie in (0, 1)".into());
                }
            }
        }
        if let Some(e) = &self.empirical {
            for p in std::iter::once(&e.table).chain(&e.listeners) {
                if !p.is_file() {
                    return bad(format!("empirical data file {} does not exist", p.display()));
                }
            }
        }
        self.sweep.grid.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.sweep.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.srt.criterion > 0.0 && self.srt.criterion < 1.0) {
            return bad("SRT criterion must lie in (0, 1)".into());
        }
        Ok(())
    }

    /// SHA-256 over everything that can change results; worker count,
    /// output directory and empirical data are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workers = None;
        c.out_dir = None;
        c.empirical = None;
        let json = serde_json::to_vec(&c).expect("configs always serialize");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn unique<'a>(what: &str, names: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for n in names {
        if n.is_empty() || n.contains(['/', ',', '\n']) {
            return Err(Error::Config(format!("{what} name '{n}' must be nonempty without '/', ',' or newlines")));
        }
        if !seen.insert(n) {
            return Err(Error::Config(format!("duplicate {what} name '{n}'")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::desk(11);
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text, Path::new(".")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let text = r#"
            seed = 3
            [corpus]
            kind = "synthetic"
            grammar = "standard"
            [[features]]
            name = "m"
            frontend.features.kind = "mfcc"
            [[noises]]
            kind = "stationary_surrogate"
            name = "ssn"
        "#;
        let cfg = ExperimentConfig::from_toml(text, Path::new(".")).unwrap();
        let CorpusConfig::Synthetic(s) = &cfg.corpus else { panic!("synthetic corpus expected") };
        assert_eq!(s.grammar.resolve().unwrap(), MatrixGrammar::standard());
        assert_eq!(s.speakers[0].lombard, VoiceParams::lombard());
        assert_eq!(cfg.sweep, SweepConfig::default());
        assert_eq!(cfg.features[0].frontend, FrontendConfig::mfcc(MfccConfig::default()));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = ExperimentConfig::desk(1);
        let mut c = base.clone();
        c.noises.swap(0, 1);
        assert!(c.validate().unwrap_err().to_string().contains("defined before"));
        let mut c = base.clone();
        c.features[1].name = "sgbfb".into();
        assert!(c.validate().unwrap_err().to_string().contains("duplicate feature"));
        let mut c = base.clone();
        c.seed = u64::MAX;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.srt.criterion = 1.0;
        assert!(c.validate().is_err());
        let mut c = base;
        c.corpus = CorpusConfig::Manifest { path: "/nonexistent/manifest.tsv".into(), train_fraction: 0.5 };
        assert!(c.validate().unwrap_err().to_string().contains("does not exist"));
        assert!(matches!(ExperimentConfig::from_toml("seed = 1\nbogus = 2", Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn hash_tracks_numeric_parameters_only() {
        let a = ExperimentConfig::desk(1);
        let mut b = a.clone();
        b.workers = Some(7);
        b.out_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.sweep.padding_ms += 1.0;
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.seed = 2;
        assert_ne!(a.hash(), d.hash());
        let mut e = a.clone();
        e.sweep.grid.test_snrs[3] += 0.5;
        assert_ne!(a.hash(), e.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
