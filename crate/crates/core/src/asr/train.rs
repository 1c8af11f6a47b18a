//! Flat-start initialization and Viterbi re-estimation.

use log::warn;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gaussian::{init_state, reestimate};
use super::{HmmModelSet, HmmTopology, WordHmm, SILENCE};
use crate::corpus::{MatrixGrammar, SentenceLabel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub topology: HmmTopology,
    /// Gaussian components per state.
    pub mixtures: usize,
    pub max_iterations: usize,
    /// Stop once the objective improves by less than this fraction.
    pub tolerance: f64,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub var_floor_factor: f64,
    pub optional_silence: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            topology: HmmTopology::default(),
            mixtures: 1,
            max_iterations: 10,
            tolerance: 1e-4,
            var_floor_factor: 1e-3,
            optional_silence: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        if self.mixtures == 0 {
            return Err(Error::invalid("at least one mixture component per state"));
        }
        if !(self.tolerance >= 0.0) || !(self.var_floor_factor > 0.0) {
            return Err(Error::invalid("tolerance must be nonnegative and the variance floor positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Objective of the models entering each iteration: summed aligned
    /// log-likelihood plus the log-prior of the transition probabilities.
    pub objective: Vec<f64>,
    pub converged: bool,
    /// Utterances too short for their label's path.
    pub skipped: usize,
}

/// Forced alignment of one utterance: the emitter scored at every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub emitters: Vec<usize>,
    pub log_likelihood: f64,
}

/// State index per frame for `frames` split evenly over `states`.
pub fn uniform_segmentation(frames: usize, states: usize) -> Vec<usize> {
    (0..frames).map(|t| t * states / frames).collect()
}

fn path_emitters(
    models_layout: (&HmmTopology, &[String]),
    grammar: &MatrixGrammar,
    label: &SentenceLabel,
) -> Result<Vec<usize>> {
    let (topo, words) = models_layout;
    let idx = grammar.indices(label)?;
    let mut out: Vec<usize> = (0..topo.silence_states).collect();
    for (slot, &w) in idx.iter().enumerate() {
        let name = &grammar.slots[slot].words[w];
        let wi = words.binary_search(name).expect("grammar words are modelled");
        let first = topo.silence_states + wi * topo.states_per_word;
        out.extend(first..first + topo.states_per_word);
    }
    out.extend(0..topo.silence_states);
    Ok(out)
}

fn global_floor(data: &[(&FeatureMatrix, &SentenceLabel)], factor: f64) -> Result<Vec<f64>> {
    let dim = data[0].0.dim();
    let mut n = 0.0;
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for (fm, _) in data {
        if fm.dim() != dim {
            return Err(Error::invalid(format!("feature dimension {} differs from {dim}", fm.dim())));
        }
        for t in 0..fm.frames() {
            n += 1.0;
            for ((s, q), x) in sum.iter_mut().zip(&mut sq).zip(fm.frame(t)) {
                *s += x;
                *q += x * x;
            }
        }
    }
    Ok(sum
        .iter()
        .zip(&sq)
        .map(|(s, q)| {
            let m = s / n;
            (factor * (q / n - m * m).max(0.0)).max(1e-12)
        })
        .collect())
}

fn grammar_words(grammar: &MatrixGrammar) -> Vec<String> {
    let mut words: Vec<String> = grammar.slots.iter().flat_map(|s| s.words.iter().cloned()).collect();
    words.sort();
    words.dedup();
    words
}

/// Flat start: each usable utterance is cut uniformly over the states of
/// its path (silence, words, silence) and every state is estimated from the
/// frames it received.
pub fn init_models(
    data: &[(&FeatureMatrix, &SentenceLabel)],
    grammar: &MatrixGrammar,
    cfg: &TrainConfig,
) -> Result<HmmModelSet> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::TrainingData("no training utterances".into()));
    }
    let topo = cfg.topology;
    let floor = global_floor(data, cfg.var_floor_factor)?;
    let words = grammar_words(grammar);
    let num_emitters = topo.silence_states + words.len() * topo.states_per_word;
    let mut assigned: Vec<Vec<&[f64]>> = vec![Vec::new(); num_emitters];
    let mut skipped = 0;
    for (fm, label) in data {
        let path = path_emitters((&topo, &words), grammar, label)?;
        if fm.frames() < path.len() {
            skipped += 1;
            continue;
        }
        for (t, q) in uniform_segmentation(fm.frames(), path.len()).into_iter().enumerate() {
            assigned[path[q]].push(fm.frame(t));
        }
    }
    if skipped > 0 {
        warn!("{skipped} utterance(s) shorter than their state path were excluded");
    }
    let build = |name: &str, first: usize, n: usize| -> Result<WordHmm> {
        let states = (first..first + n)
            .map(|e| {
                if assigned[e].is_empty() {
                    return Err(Error::TrainingData(format!("no usable training utterances for '{name}'")));
                }
                init_state(&assigned[e], &floor, cfg.mixtures)
            })
            .collect::<Result<Vec<_>>>()?;
        WordHmm::new(name, states, vec![0.5; n])
    };
    let silence = build(SILENCE, 0, topo.silence_states)?;
    let models = words
        .iter()
        .enumerate()
        .map(|(i, w)| build(w, topo.silence_states + i * topo.states_per_word, topo.states_per_word))
        .collect::<Result<Vec<_>>>()?;
    HmmModelSet::new(topo, floor, silence, models)
}

/// Best path of `fm` through the graph of `label`; `None` if the utterance
/// is too short for it.
pub fn align(
    models: &HmmModelSet,
    grammar: &MatrixGrammar,
    fm: &FeatureMatrix,
    label: &SentenceLabel,
    optional_silence: bool,
) -> Result<Option<Alignment>> {
    let graph = models.label_graph(grammar, label, optional_silence)?;
    if fm.dim() != models.dim {
        return Err(Error::invalid(format!(
            "feature dimension {} does not match model dimension {}",
            fm.dim(),
            models.dim
        )));
    }
    let mut used: Vec<usize> = graph.states().iter().map(|s| s.emitter).collect();
    used.sort_unstable();
    used.dedup();
    let mut emit = Array2::zeros((fm.frames(), models.num_emitters()));
    for t in 0..fm.frames() {
        let x = fm.frame(t);
        for &e in &used {
            emit[[t, e]] = models.emitter(e).log_likelihood(x);
        }
    }
    match graph.viterbi_with_scores(emit.view()) {
        Ok(tr) => Ok(Some(Alignment {
            emitters: tr.path.iter().map(|&s| graph.states()[s].emitter).collect(),
            log_likelihood: tr.log_likelihood,
        })),
        Err(Error::Decode(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn transition_log_prior(m: &HmmModelSet) -> f64 {
    m.words.iter().chain([&m.silence]).flat_map(|w| w.log_self.iter().chain(&w.log_next)).sum()
}

/// Viterbi training. Each iteration aligns every utterance to its label
/// and re-estimates state densities from the aligned frames and transition
/// probabilities from add-one smoothed transition counts.
pub fn train(
    mut models: HmmModelSet,
    data: &[(&FeatureMatrix, &SentenceLabel)],
    grammar: &MatrixGrammar,
    cfg: &TrainConfig,
) -> Result<(HmmModelSet, TrainReport)> {
    cfg.validate()?;
    models.covers(grammar)?;
    let mut report = TrainReport { objective: Vec::new(), converged: false, skipped: 0 };
    let mut previous: Option<Vec<Option<Alignment>>> = None;
    for _ in 0..cfg.max_iterations.max(1) {
        let alignments = data
            .par_iter()
            .map(|(fm, label)| align(&models, grammar, fm, label, cfg.optional_silence))
            .collect::<Result<Vec<_>>>()?;
        report.skipped = alignments.iter().filter(|a| a.is_none()).count();
        if report.skipped == alignments.len() {
            return Err(Error::TrainingData("no utterance can be aligned to its label".into()));
        }
        let objective =
            alignments.iter().flatten().map(|a| a.log_likelihood).sum::<f64>() + transition_log_prior(&models);
        if let Some(&prev) = report.objective.last() {
            let same_paths = previous.as_ref().is_some_and(|p| {
                p.iter().zip(&alignments).all(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => a.emitters == b.emitters,
                    (None, None) => true,
                    _ => false,
                })
            });
            if same_paths || objective - prev <= cfg.tolerance * prev.abs() {
                report.objective.push(objective);
                report.converged = true;
                break;
            }
        }
        report.objective.push(objective);
        models = reestimate_models(&models, data, &alignments)?;
        previous = Some(alignments);
    }
    if report.skipped > 0 {
        warn!("{} utterance(s) could not be aligned and were skipped", report.skipped);
    }
    Ok((models, report))
}

fn reestimate_models(
    models: &HmmModelSet,
    data: &[(&FeatureMatrix, &SentenceLabel)],
    alignments: &[Option<Alignment>],
) -> Result<HmmModelSet> {
    let e = models.num_emitters();
    let mut frames: Vec<Vec<&[f64]>> = vec![Vec::new(); e];
    let mut stay = vec![0usize; e];
    let mut leave = vec![0usize; e];
    for ((fm, _), a) in data.iter().zip(alignments) {
        let Some(a) = a else { continue };
        for (t, &em) in a.emitters.iter().enumerate() {
            frames[em].push(fm.frame(t));
            // frames of the same emitter in a row are self loops, anything else
            // (including the end of the utterance) leaves the state
            if a.emitters.get(t + 1) == Some(&em) {
                stay[em] += 1;
            } else {
                leave[em] += 1;
            }
        }
    }
    let rebuild = |hmm: &WordHmm, first: usize| -> Result<WordHmm> {
        let mut states = Vec::with_capacity(hmm.num_states());
        let mut self_prob = Vec::with_capacity(hmm.num_states());
        for (k, old) in hmm.states.iter().enumerate() {
            let em = first + k;
            states.push(if frames[em].is_empty() {
                old.clone()
            } else {
                reestimate(old, &frames[em], &models.var_floor)?
            });
            self_prob.push((stay[em] as f64 + 1.0) / ((stay[em] + leave[em]) as f64 + 2.0));
        }
        WordHmm::new(hmm.word.clone(), states, self_prob)
    };
    let silence = rebuild(&models.silence, 0)?;
    let words = models
        .words
        .iter()
        .enumerate()
        .map(|(i, w)| rebuild(w, models.emitter_offset(i)))
        .collect::<Result<Vec<_>>>()?;
    HmmModelSet::new(models.topology, models.var_floor.clone(), silence, words)
}
