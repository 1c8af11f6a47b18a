//! Matrix-sentence corpus: grammar, labels, manifests and splits.

mod manifest;
mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use manifest::{load_manifest, save_manifest, MANIFEST_HEADER};
pub use synth::{
    default_recipes, synthesize_corpus, synthesize_sentence, SyntheticCorpusSpec, TokenRecipe, VoiceParams,
    INTER_WORD_GAP_MS,
};

use crate::error::{Error, Result};
use crate::frontend::{read_wav, AudioBuffer};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub words: Vec<String>,
}

/// Closed-set sentence grammar: one word from each slot, in slot order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixGrammar {
    pub slots: Vec<Slot>,
}

impl MatrixGrammar {
    pub fn new(slots: Vec<Slot>) -> Result<Self> {
        let g = MatrixGrammar { slots };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots.is_empty() {
            return Err(Error::invalid("grammar needs at least one slot"));
        }
        for slot in &self.slots {
            if slot.words.len() < 2 {
                return Err(Error::invalid(format!(
                    "slot '{}' needs at least 2 alternatives, has {}",
                    slot.name,
                    slot.words.len()
                )));
            }
            let mut seen = HashSet::new();
            for w in &slot.words {
                if w.is_empty() || w.contains(char::is_whitespace) {
                    return Err(Error::invalid(format!(
                        "slot '{}': word '{w}' must be nonempty without whitespace",
                        slot.name
                    )));
                }
                if !seen.insert(w) {
                    return Err(Error::invalid(format!("slot '{}': duplicate word '{w}'", slot.name)));
                }
            }
        }
        Ok(())
    }

    fn from_table(table: &[(&str, &[&str])]) -> Self {
        MatrixGrammar {
            slots: table
                .iter()
                .map(|(name, words)| Slot {
                    name: (*name).to_string(),
                    words: words.iter().map(|w| (*w).to_string()).collect(),
                })
                .collect(),
        }
    }

    /// Five slots with ten alternatives each.
    pub fn standard() -> Self {
        MatrixGrammar::from_table(&[
            ("name", &["peter", "kathy", "lucy", "alan", "rachel", "barry", "steven", "thomas", "doris", "nina"]),
            ("verb", &["got", "sees", "bought", "gives", "sold", "prefers", "has", "kept", "ordered", "wants"]),
            ("numeral", &["two", "three", "four", "nine", "seven", "eight", "six", "ten", "twelve", "fifteen"]),
            ("adjective", &["cheap", "green", "large", "old", "red", "small", "heavy", "dark", "thin", "pretty"]),
            ("noun", &["flowers", "toys", "spoons", "chairs", "desks", "rings", "shoes", "beds", "ships", "houses"]),
        ])
    }

    /// Three slots with four alternatives each, for quick runs.
    pub fn desk() -> Self {
        MatrixGrammar::from_table(&[
            ("name", &["peter", "kathy", "lucy", "alan"]),
            ("verb", &["got", "sees", "bought", "gives"]),
            ("noun", &["flowers", "toys", "spoons", "chairs"]),
        ])
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn sentence_space(&self) -> u128 {
        self.slots.iter().map(|s| s.words.len() as u128).product()
    }

    pub fn word_index(&self, slot: usize, word: &str) -> Option<usize> {
        self.slots.get(slot)?.words.iter().position(|w| w == word)
    }

    /// Word indices of a label, validating it against the grammar.
    pub fn indices(&self, label: &SentenceLabel) -> Result<Vec<usize>> {
        if label.words.len() != self.slots.len() {
            return Err(Error::invalid(format!(
                "label '{label}' has {} words, grammar has {} slots",
                label.words.len(),
                self.slots.len()
            )));
        }
        label
            .words
            .iter()
            .enumerate()
            .map(|(s, w)| {
                self.word_index(s, w).ok_or_else(|| {
                    Error::invalid(format!("word '{w}' is not an alternative of slot '{}'", self.slots[s].name))
                })
            })
            .collect()
    }

    pub fn label_from_indices(&self, idx: &[usize]) -> SentenceLabel {
        SentenceLabel { words: idx.iter().zip(&self.slots).map(|(&i, s)| s.words[i].clone()).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SentenceLabel {
    pub words: Vec<String>,
}

impl SentenceLabel {
    pub fn parse(text: &str) -> Self {
        SentenceLabel { words: text.split_whitespace().map(str::to_string).collect() }
    }
}

impl fmt::Display for SentenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.words.join(" "))
    }
}

/// One uniformly random alternative per slot.
pub fn sample_sentence(g: &MatrixGrammar, rng_seed: u64) -> SentenceLabel {
    let mut rng = seed::rng(rng_seed);
    let idx: Vec<usize> = g.slots.iter().map(|s| rng.gen_range(0..s.words.len())).collect();
    g.label_from_indices(&idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effort {
    Plain,
    Lombard,
}

impl Effort {
    pub fn as_str(self) -> &'static str {
        match self {
            Effort::Plain => "plain",
            Effort::Lombard => "lombard",
        }
    }
}

impl std::str::FromStr for Effort {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Effort::Plain),
            "lombard" => Ok(Effort::Lombard),
            other => Err(Error::invalid(format!("vocal effort must be 'plain' or 'lombard', got '{other}'"))),
        }
    }
}

impl fmt::Display for Effort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Speaker, language and vocal effort of a recording.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpeechCondition {
    pub speaker: String,
    pub language: String,
    pub effort: Effort,
}

impl fmt::Display for SpeechCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.speaker, self.language, self.effort)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AudioSource {
    File(PathBuf),
    Memory(Arc<AudioBuffer>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub audio: AudioSource,
    pub label: SentenceLabel,
    pub condition: SpeechCondition,
}

impl CorpusEntry {
    pub fn load_audio(&self) -> Result<Arc<AudioBuffer>> {
        match &self.audio {
            AudioSource::File(p) => Ok(Arc::new(read_wav(p)?)),
            AudioSource::Memory(a) => Ok(Arc::clone(a)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub grammar: MatrixGrammar,
    pub entries: Vec<CorpusEntry>,
}

impl CorpusManifest {
    pub fn new(grammar: MatrixGrammar, entries: Vec<CorpusEntry>) -> Result<Self> {
        grammar.validate()?;
        if entries.is_empty() {
            return Err(Error::Manifest("empty corpus".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            grammar.indices(&e.label).map_err(|err| Error::Manifest(format!("entry {}: {err}", i + 1)))?;
        }
        Ok(CorpusManifest { grammar, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry indices grouped by speech condition.
    pub fn conditions(&self) -> BTreeMap<SpeechCondition, Vec<usize>> {
        let mut map: BTreeMap<SpeechCondition, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            map.entry(e.condition.clone()).or_default().push(i);
        }
        map
    }

    pub fn subset(&self, condition: &SpeechCondition) -> Option<CorpusManifest> {
        let entries: Vec<CorpusEntry> = self.entries.iter().filter(|e| &e.condition == condition).cloned().collect();
        (!entries.is_empty()).then(|| CorpusManifest { grammar: self.grammar.clone(), entries })
    }
}

/// Stratified split: within each speech condition a seeded shuffle puts
/// `round(fraction · n)` entries into the training part.
pub fn split_train_test(m: &CorpusManifest, fraction: f64, rng_seed: u64) -> Result<(CorpusManifest, CorpusManifest)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    if m.len() < 2 {
        return Err(Error::invalid("split needs at least 2 entries"));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (ci, (_, mut idx)) in m.conditions().into_iter().enumerate() {
        let mut rng = seed::rng(seed::derive_seed(rng_seed, &[ci as u64]));
        idx.shuffle(&mut rng);
        let n_train = (fraction * idx.len() as f64).round() as usize;
        let (a, b) = idx.split_at(n_train);
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_unstable();
        b.sort_unstable();
        train.extend(a);
        test.extend(b);
    }
    train.sort_unstable();
    test.sort_unstable();
    let pick = |idx: &[usize]| CorpusManifest {
        grammar: m.grammar.clone(),
        entries: idx.iter().map(|&i| m.entries[i].clone()).collect(),
    };
    Ok((pick(&train), pick(&test)))
}
