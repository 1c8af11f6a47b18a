//! Whole-word HMM recognizer constrained by a matrix grammar.
//!
//! Every word has its own left-to-right HMM with self loops, and a shared
//! silence HMM may precede and follow the sentence. Emitting states of all
//! models are numbered consecutively (silence first, then words in sorted
//! order) and a [`DecodingGraph`] refers to them by that number.

mod gaussian;
mod graph;
mod train;

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use gaussian::{log_sum_exp, GaussianState};
pub use graph::{DecodingGraph, GraphState, Transcript};
pub use train::{align, init_models, train, uniform_segmentation, Alignment, TrainConfig, TrainReport};

use crate::corpus::{MatrixGrammar, SentenceLabel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Version tag written into serialized model sets.
pub const MODEL_FORMAT_VERSION: u32 = 1;

const SILENCE: &str = "<sil>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmmTopology {
    pub states_per_word: usize,
    pub silence_states: usize,
}

impl Default for HmmTopology {
    fn default() -> Self {
        HmmTopology { states_per_word: 16, silence_states: 4 }
    }
}

impl HmmTopology {
    pub fn validate(&self) -> Result<()> {
        if self.states_per_word == 0 || self.silence_states == 0 {
            return Err(Error::invalid("HMMs need at least one state"));
        }
        Ok(())
    }
}

/// Left-to-right HMM of one word (or of silence).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordHmm {
    pub word: String,
    pub states: Vec<GaussianState>,
    /// Log probability of staying in each state.
    pub log_self: Vec<f64>,
    /// Log probability of leaving each state for the next one (or, for the
    /// last state, for whatever follows the word).
    pub log_next: Vec<f64>,
}

impl WordHmm {
    pub fn new(word: impl Into<String>, states: Vec<GaussianState>, self_prob: Vec<f64>) -> Result<Self> {
        let word = word.into();
        if states.is_empty() || self_prob.len() != states.len() {
            return Err(Error::invalid(format!("model '{word}': one self-loop probability per state")));
        }
        if self_prob.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::invalid(format!("model '{word}': self-loop probabilities must be in (0, 1)")));
        }
        Ok(WordHmm {
            word,
            states,
            log_self: self_prob.iter().map(|p| p.ln()).collect(),
            log_next: self_prob.iter().map(|p| (1.0 - p).ln()).collect(),
        })
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }
}

/// Silence model plus one model per distinct word of a grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmModelSet {
    pub format_version: u32,
    pub topology: HmmTopology,
    pub dim: usize,
    pub var_floor: Vec<f64>,
    pub silence: WordHmm,
    /// Sorted by word identifier.
    pub words: Vec<WordHmm>,
}

impl HmmModelSet {
    pub fn new(topology: HmmTopology, var_floor: Vec<f64>, silence: WordHmm, mut words: Vec<WordHmm>) -> Result<Self> {
        words.sort_by(|a, b| a.word.cmp(&b.word));
        let set = HmmModelSet {
            format_version: MODEL_FORMAT_VERSION,
            topology,
            dim: var_floor.len(),
            var_floor,
            silence,
            words,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.topology.validate()?;
        if self.silence.num_states() != self.topology.silence_states {
            return Err(Error::invalid("silence model does not match the topology"));
        }
        for w in self.words.iter().chain([&self.silence]) {
            if w.word != SILENCE && w.num_states() != self.topology.states_per_word {
                return Err(Error::invalid(format!("model '{}' does not match the topology", w.word)));
            }
            if w.states.iter().any(|s| s.dim() != self.dim) {
                return Err(Error::invalid(format!("model '{}' has the wrong feature dimension", w.word)));
            }
        }
        if self.words.windows(2).any(|p| p[0].word >= p[1].word) {
            return Err(Error::invalid("word models must be unique and sorted"));
        }
        Ok(())
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.words.binary_search_by(|w| w.word.as_str().cmp(word)).ok()
    }

    /// First emitter id of word model `w`.
    pub fn emitter_offset(&self, w: usize) -> usize {
        self.silence.num_states() + w * self.topology.states_per_word
    }

    pub fn num_emitters(&self) -> usize {
        self.silence.num_states() + self.words.len() * self.topology.states_per_word
    }

    pub fn emitter(&self, e: usize) -> &GaussianState {
        let s = self.silence.num_states();
        if e < s {
            &self.silence.states[e]
        } else {
            let k = self.topology.states_per_word;
            &self.words[(e - s) / k].states[(e - s) % k]
        }
    }

    /// `frames × emitters` log-likelihood matrix.
    pub fn emissions(&self, fm: &FeatureMatrix) -> Result<Array2<f64>> {
        if fm.dim() != self.dim {
            return Err(Error::invalid(format!(
                "feature dimension {} does not match model dimension {}",
                fm.dim(),
                self.dim
            )));
        }
        // Expanding (x - m)² turns scoring into two matrix products over
        // all mixture components at once.
        let comps: Vec<(usize, usize, &[f64], &[f64], f64)> = (0..self.num_emitters())
            .flat_map(|e| {
                let g = self.emitter(e);
                (0..g.num_components()).map(move |c| {
                    let (mean, inv, lc) = g.component(c);
                    (e, c, mean, inv, lc)
                })
            })
            .collect();
        let d = self.dim;
        let mut inv = Array2::zeros((d, comps.len()));
        let mut scaled = Array2::zeros((d, comps.len()));
        let mut bias = Vec::with_capacity(comps.len());
        for (j, &(_, _, mean, iv, lc)) in comps.iter().enumerate() {
            let mut q = 0.0;
            for i in 0..d {
                inv[[i, j]] = -0.5 * iv[i];
                scaled[[i, j]] = mean[i] * iv[i];
                q += mean[i] * mean[i] * iv[i];
            }
            bias.push(lc - 0.5 * q);
        }
        let x = &fm.values;
        let mut scores = x.mapv(|v| v * v).dot(&inv);
        scores += &x.dot(&scaled);
        let e = self.num_emitters();
        let mut out = Array2::zeros((fm.frames(), e));
        let mut buf = Vec::new();
        for (srow, mut orow) in scores.rows().into_iter().zip(out.rows_mut()) {
            let mut j = 0;
            while j < comps.len() {
                let em = comps[j].0;
                buf.clear();
                while j < comps.len() && comps[j].0 == em {
                    buf.push(srow[j] + bias[j]);
                    j += 1;
                }
                orow[em] = if buf.len() == 1 { buf[0] } else { log_sum_exp(&buf) };
            }
        }
        Ok(out)
    }

    pub fn covers(&self, grammar: &MatrixGrammar) -> Result<()> {
        for slot in &grammar.slots {
            for w in &slot.words {
                if self.word_index(w).is_none() {
                    return Err(Error::invalid(format!("no model for word '{w}'")));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: HmmModelSet =
            serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        set.validate()?;
        Ok(set)
    }

    /// Graph accepting every sentence of the grammar. Word exits are split
    /// uniformly over the alternatives of the next slot; with optional
    /// silence, entering and leaving silence each carry probability 1/2.
    pub fn grammar_graph(&self, grammar: &MatrixGrammar, optional_silence: bool) -> Result<DecodingGraph> {
        self.covers(grammar)?;
        let slots: Vec<(Vec<&str>, f64)> = grammar
            .slots
            .iter()
            .map(|s| (s.words.iter().map(String::as_str).collect(), -(s.words.len() as f64).ln()))
            .collect();
        Ok(self.slot_graph(&slots, optional_silence))
    }

    /// Graph accepting only `label`, with the same weights its path has in
    /// [`HmmModelSet::grammar_graph`].
    pub fn label_graph(
        &self,
        grammar: &MatrixGrammar,
        label: &SentenceLabel,
        optional_silence: bool,
    ) -> Result<DecodingGraph> {
        grammar.indices(label)?;
        self.covers(grammar)?;
        let slots: Vec<(Vec<&str>, f64)> = grammar
            .slots
            .iter()
            .zip(&label.words)
            .map(|(s, w)| (vec![w.as_str()], -(s.words.len() as f64).ln()))
            .collect();
        Ok(self.slot_graph(&slots, optional_silence))
    }

    fn slot_graph(&self, slots: &[(Vec<&str>, f64)], optional_silence: bool) -> DecodingGraph {
        let mut g = DecodingGraph::new();
        let half = 0.5f64.ln();
        let (enter_sil, skip_sil) = if optional_silence { (half, half) } else { (0.0, f64::NEG_INFINITY) };

        let add_chain = |g: &mut DecodingGraph, hmm: &WordHmm, first_emitter: usize, inst: Option<usize>| {
            let ids: Vec<usize> = (0..hmm.num_states()).map(|k| g.add_state(first_emitter + k, inst)).collect();
            for (k, &s) in ids.iter().enumerate() {
                g.add_arc(s, s, hmm.log_self[k]);
                if k + 1 < ids.len() {
                    g.add_arc(s, ids[k + 1], hmm.log_next[k]);
                }
            }
            ids
        };

        let sil = &self.silence;
        let last_sil = sil.num_states() - 1;
        let start = add_chain(&mut g, sil, 0, None);
        g.set_initial(start[0], enter_sil);
        // (last state, exit log-probability) of everything that can precede the next slot
        let mut exits: Vec<(usize, f64)> = vec![(start[last_sil], sil.log_next[last_sil])];
        let mut entry_from_start = skip_sil;
        for (words, branch) in slots {
            let mut next_exits = Vec::with_capacity(words.len());
            for w in words {
                let wi = self.word_index(w).expect("coverage checked");
                let hmm = &self.words[wi];
                let inst = g.add_word(*w);
                let ids = add_chain(&mut g, hmm, self.emitter_offset(wi), Some(inst));
                for &(from, lp) in &exits {
                    g.add_arc(from, ids[0], lp + branch);
                }
                if entry_from_start > f64::NEG_INFINITY {
                    g.set_initial(ids[0], entry_from_start + branch);
                }
                let last = hmm.num_states() - 1;
                next_exits.push((ids[last], hmm.log_next[last]));
            }
            exits = next_exits;
            entry_from_start = f64::NEG_INFINITY;
        }
        let end = add_chain(&mut g, sil, 0, None);
        for &(from, lp) in &exits {
            g.add_arc(from, end[0], lp + enter_sil);
            g.set_final(from, lp + skip_sil);
        }
        g.set_final(end[last_sil], sil.log_next[last_sil]);
        g
    }
}

/// Trained models together with the grammar graph used for decoding.
#[derive(Debug, Clone)]
pub struct Recognizer {
    pub models: HmmModelSet,
    pub graph: DecodingGraph,
    pub grammar: MatrixGrammar,
}

impl Recognizer {
    pub fn new(models: HmmModelSet, grammar: MatrixGrammar, optional_silence: bool) -> Result<Self> {
        let graph = models.grammar_graph(&grammar, optional_silence)?;
        Ok(Recognizer { models, graph, grammar })
    }

    pub fn decode(&self, fm: &FeatureMatrix) -> Result<Transcript> {
        viterbi_decode(&self.graph, &self.models, fm)
    }
}

pub fn viterbi_decode(graph: &DecodingGraph, models: &HmmModelSet, fm: &FeatureMatrix) -> Result<Transcript> {
    let emit = models.emissions(fm)?;
    graph.viterbi_with_scores(emit.view())
}

/// Fraction of slots where the hypothesis matches the reference.
pub fn score_words(grammar: &MatrixGrammar, reference: &SentenceLabel, hyp: &SentenceLabel) -> Result<f64> {
    grammar.indices(reference)?;
    grammar.indices(hyp)?;
    let hits = reference.words.iter().zip(&hyp.words).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / reference.words.len() as f64)
}
