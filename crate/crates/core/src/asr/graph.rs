//! Composed state graphs and Viterbi search.

use std::cmp::Ordering;
use std::collections::HashMap;

use ndarray::ArrayView2;

use crate::corpus::SentenceLabel;
use crate::error::{Error, Result};

const NO_STATE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphState {
    /// Column of the emission matrix scored by this state.
    pub emitter: usize,
    /// Word instance this state belongs to; `None` for silence.
    pub instance: Option<usize>,
}

/// Emitting states joined by weighted arcs, with entry and exit weights.
/// All weights are natural-log probabilities; `-inf` means absent.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodingGraph {
    states: Vec<GraphState>,
    preds: Vec<Vec<(usize, f64)>>,
    initial: Vec<f64>,
    finals: Vec<f64>,
    words: Vec<String>,
}

/// Best path through a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub words: Vec<String>,
    pub log_likelihood: f64,
    /// Graph state per frame.
    pub path: Vec<usize>,
}

impl Transcript {
    pub fn label(&self) -> SentenceLabel {
        SentenceLabel { words: self.words.clone() }
    }
}

impl Default for DecodingGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl DecodingGraph {
    pub fn new() -> Self {
        DecodingGraph {
            states: Vec::new(),
            preds: Vec::new(),
            initial: Vec::new(),
            finals: Vec::new(),
            words: Vec::new(),
        }
    }

    /// Registers a word instance and returns its id.
    pub fn add_word(&mut self, word: impl Into<String>) -> usize {
        self.words.push(word.into());
        self.words.len() - 1
    }

    pub fn add_state(&mut self, emitter: usize, instance: Option<usize>) -> usize {
        assert!(instance.map_or(true, |i| i < self.words.len()), "unknown word instance");
        self.states.push(GraphState { emitter, instance });
        self.preds.push(Vec::new());
        self.initial.push(f64::NEG_INFINITY);
        self.finals.push(f64::NEG_INFINITY);
        self.states.len() - 1
    }

    pub fn add_arc(&mut self, from: usize, to: usize, log_prob: f64) {
        assert!(from < self.states.len() && to < self.states.len(), "arc to unknown state");
        if log_prob > f64::NEG_INFINITY {
            self.preds[to].push((from, log_prob));
        }
    }

    pub fn set_initial(&mut self, state: usize, log_prob: f64) {
        self.initial[state] = log_prob;
    }

    pub fn set_final(&mut self, state: usize, log_prob: f64) {
        self.finals[state] = log_prob;
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[GraphState] {
        &self.states
    }

    pub fn predecessors(&self, state: usize) -> &[(usize, f64)] {
        &self.preds[state]
    }

    pub fn initial(&self, state: usize) -> f64 {
        self.initial[state]
    }

    pub fn final_weight(&self, state: usize) -> f64 {
        self.finals[state]
    }

    pub fn word(&self, instance: usize) -> &str {
        &self.words[instance]
    }

    pub fn num_emitters(&self) -> usize {
        self.states.iter().map(|s| s.emitter + 1).max().unwrap_or(0)
    }

    /// Arc weight from `from` to `to`, if the arc exists.
    pub fn arc(&self, from: usize, to: usize) -> Option<f64> {
        self.preds[to].iter().find(|(p, _)| *p == from).map(|(_, w)| *w)
    }

    /// Word sequence spelled by a state path.
    pub fn words_of(&self, path: &[usize]) -> Vec<String> {
        self.instances_of(path.iter().copied()).into_iter().map(|i| self.words[i].clone()).collect()
    }

    fn instances_of(&self, path: impl Iterator<Item = usize>) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        let mut prev = None;
        for s in path {
            let inst = self.states[s].instance;
            if inst != prev {
                if let Some(i) = inst {
                    out.push(i);
                }
                prev = inst;
            }
        }
        out
    }

    /// Total log-likelihood of a state path, `-inf` if it is not a path.
    pub fn path_log_likelihood(&self, path: &[usize], emit: ArrayView2<f64>) -> f64 {
        let Some((&first, _)) = path.split_first() else {
            return f64::NEG_INFINITY;
        };
        if path.len() != emit.nrows() {
            return f64::NEG_INFINITY;
        }
        let mut total = self.initial[first] + emit[[0, self.states[first].emitter]];
        for (t, w) in path.windows(2).enumerate() {
            match self.arc(w[0], w[1]) {
                Some(a) => total += a + emit[[t + 1, self.states[w[1]].emitter]],
                None => return f64::NEG_INFINITY,
            }
        }
        total + self.finals[path[path.len() - 1]]
    }

    /// Exact maximum-likelihood path for a `frames × emitters` score matrix.
    /// Among equally likely paths the lexicographically smallest word
    /// sequence wins, then the lexicographically smallest state sequence.
    pub fn viterbi_with_scores(&self, emit: ArrayView2<f64>) -> Result<Transcript> {
        let n = self.states.len();
        let frames = emit.nrows();
        if n == 0 {
            return Err(Error::Decode("empty decoding graph".into()));
        }
        if frames == 0 {
            return Err(Error::Decode("no frames to decode".into()));
        }
        if emit.ncols() < self.num_emitters() {
            return Err(Error::invalid(format!(
                "emission matrix has {} columns, graph needs {}",
                emit.ncols(),
                self.num_emitters()
            )));
        }
        if emit.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("emission scores contain NaN"));
        }
        let mut back = vec![NO_STATE; frames * n];
        // further predecessors scoring exactly as well as the one in `back`
        let mut tied: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut prev: Vec<f64> = (0..n).map(|j| self.initial[j] + emit[[0, self.states[j].emitter]]).collect();
        let mut cur = vec![f64::NEG_INFINITY; n];
        let mut equal = Vec::new();
        for t in 1..frames {
            let row = emit.row(t);
            for j in 0..n {
                let mut best = f64::NEG_INFINITY;
                let mut arg = NO_STATE;
                equal.clear();
                for &(i, w) in &self.preds[j] {
                    let c = prev[i] + w;
                    if c > best {
                        best = c;
                        arg = i as u32;
                        equal.clear();
                    } else if c == best && c > f64::NEG_INFINITY {
                        equal.push(i);
                    }
                }
                back[t * n + j] = arg;
                if !equal.is_empty() {
                    tied.insert(t * n + j, equal.clone());
                }
                cur[j] = if arg == NO_STATE { f64::NEG_INFINITY } else { best + row[self.states[j].emitter] };
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        let totals: Vec<f64> = (0..n).map(|j| prev[j] + self.finals[j]).collect();
        let best = totals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if best == f64::NEG_INFINITY {
            return Err(Error::Decode(format!("no complete path consumes {frames} frames")));
        }
        let ends: Vec<usize> = (0..n).filter(|&j| totals[j] == best).collect();
        let path = if tied.is_empty() && ends.len() == 1 {
            self.trace(&back, n, frames - 1, ends[0])
        } else {
            self.smallest_optimal_path(&back, &tied, n, frames, &ends)
        };
        Ok(Transcript { words: self.words_of(&path), log_likelihood: best, path })
    }

    fn trace(&self, back: &[u32], n: usize, t_end: usize, end: usize) -> Vec<usize> {
        let mut path = vec![0; t_end + 1];
        let mut s = end;
        for t in (0..=t_end).rev() {
            path[t] = s;
            if t > 0 {
                s = back[t * n + s] as usize;
            }
        }
        path
    }

    /// Picks the winner among all optimal paths, which are exactly the
    /// paths through best-scoring predecessors ending in `ends`. Suffixes
    /// are minimized backwards over that subgraph; prepending a common word
    /// sequence preserves lexicographic order, so the per-node minimum
    /// suffix is also part of the global minimum.
    fn smallest_optimal_path(
        &self,
        back: &[u32],
        tied: &HashMap<usize, Vec<usize>>,
        n: usize,
        frames: usize,
        ends: &[usize],
    ) -> Vec<usize> {
        let preds = |t: usize, j: usize| {
            let first = back[t * n + j];
            (first != NO_STATE)
                .then_some(first as usize)
                .into_iter()
                .chain(tied.get(&(t * n + j)).into_iter().flatten().copied())
        };
        // successors of every node on an optimal path, layer by layer
        let mut on = vec![false; frames * n];
        let mut succ: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); n]; frames];
        for &j in ends {
            on[(frames - 1) * n + j] = true;
        }
        for t in (1..frames).rev() {
            for j in 0..n {
                if on[t * n + j] {
                    for i in preds(t, j) {
                        on[(t - 1) * n + i] = true;
                        succ[t - 1][i].push(j);
                    }
                }
            }
        }
        let entered = |from: Option<usize>, to: usize| {
            let inst = self.states[to].instance;
            match inst {
                Some(w) if from.map_or(true, |f| self.states[f].instance != inst) => Some(w),
                _ => None,
            }
        };
        let cmp = |a: &[usize], b: &[usize]| {
            a.iter().map(|&i| self.words[i].as_str()).cmp(b.iter().map(|&i| self.words[i].as_str()))
        };
        // minimal word suffix after each node and the successor realizing it
        let mut suffix: Vec<Option<Vec<usize>>> = (0..n).map(|j| on[(frames - 1) * n + j].then(Vec::new)).collect();
        let mut next = vec![NO_STATE; frames * n];
        for t in (0..frames - 1).rev() {
            let mut layer: Vec<Option<Vec<usize>>> = vec![None; n];
            for j in 0..n {
                let mut succs = succ[t][j].clone();
                succs.sort_unstable();
                succs.dedup();
                for k in succs {
                    let mut cand: Vec<usize> = entered(Some(j), k).into_iter().collect();
                    cand.extend(suffix[k].as_ref().expect("successor lies on an optimal path"));
                    if layer[j].as_ref().map_or(true, |b| cmp(&cand, b) == Ordering::Less) {
                        layer[j] = Some(cand);
                        next[t * n + j] = k as u32;
                    }
                }
            }
            suffix = layer;
        }
        let mut start = None;
        let mut start_words: Option<Vec<usize>> = None;
        for j in 0..n {
            if let Some(rest) = &suffix[j] {
                let mut cand: Vec<usize> = entered(None, j).into_iter().collect();
                cand.extend(rest);
                if start_words.as_ref().map_or(true, |b| cmp(&cand, b) == Ordering::Less) {
                    start_words = Some(cand);
                    start = Some(j);
                }
            }
        }
        let mut path = vec![start.expect("an optimal path exists")];
        for t in 0..frames - 1 {
            path.push(next[t * n + path[t]] as usize);
        }
        path
    }
}
