use fade_core::asr::{
    init_models, train, DecodingGraph, GaussianState, HmmModelSet, HmmTopology, Recognizer, TrainConfig, WordHmm,
};
use fade_core::corpus::{MatrixGrammar, SentenceLabel, Slot};
use fade_core::features::{FeatureKind, FeatureMatrix};
use fade_core::seed;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

// ---------------------------------------------------------------- oracles

/// Maximum path score by enumerating every state sequence.
fn brute_force(g: &DecodingGraph, emit: &Array2<f64>) -> f64 {
    let n = g.num_states();
    let frames = emit.nrows();
    let mut best = f64::NEG_INFINITY;
    let total = n.pow(frames as u32);
    let mut path = vec![0usize; frames];
    for code in 0..total {
        let mut c = code;
        for p in path.iter_mut() {
            *p = c % n;
            c /= n;
        }
        let mut score = g.initial(path[0]) + emit[[0, g.states()[path[0]].emitter]];
        for t in 1..frames {
            let arc = g
                .predecessors(path[t])
                .iter()
                .filter(|(from, _)| *from == path[t - 1])
                .map(|(_, w)| *w)
                .fold(f64::NEG_INFINITY, f64::max);
            score += arc + emit[[t, g.states()[path[t]].emitter]];
        }
        score += g.final_weight(path[frames - 1]);
        best = best.max(score);
    }
    best
}

#[derive(Debug, Clone)]
struct GraphSpec {
    states: Vec<(usize, Option<usize>)>,
    arcs: Vec<(usize, usize, f64)>,
    initial: Vec<Option<f64>>,
    finals: Vec<Option<f64>>,
}

fn build(spec: &GraphSpec) -> DecodingGraph {
    let mut g = DecodingGraph::new();
    for w in ["a", "b", "c"] {
        g.add_word(w);
    }
    for &(e, inst) in &spec.states {
        g.add_state(e, inst);
    }
    for &(f, t, w) in &spec.arcs {
        if f < spec.states.len() && t < spec.states.len() && g.arc(f, t).is_none() {
            g.add_arc(f, t, w);
        }
    }
    for (s, w) in spec.initial.iter().enumerate().take(spec.states.len()) {
        if let Some(w) = w {
            g.set_initial(s, *w);
        }
    }
    for (s, w) in spec.finals.iter().enumerate().take(spec.states.len()) {
        if let Some(w) = w {
            g.set_final(s, *w);
        }
    }
    g
}

fn graph_spec() -> impl Strategy<Value = GraphSpec> {
    (1usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec((0usize..3, prop::option::of(0usize..3)), n),
            prop::collection::vec((0..n, 0..n, -3.0f64..0.0), 0..=n * n),
            prop::collection::vec(prop::option::weighted(0.6, -2.0f64..0.0), n),
            prop::collection::vec(prop::option::weighted(0.6, -2.0f64..0.0), n),
        )
            .prop_map(|(states, arcs, initial, finals)| GraphSpec { states, arcs, initial, finals })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn viterbi_equals_exhaustive_search(spec in graph_spec(), frames in 1usize..=6, seed_ in any::<u64>()) {
        let g = build(&spec);
        let mut rng = seed::rng(seed_);
        let emit = Array2::from_shape_fn((frames, 3), |_| rng.gen_range(-5.0..0.0));
        let oracle = brute_force(&g, &emit);
        match g.viterbi_with_scores(emit.view()) {
            Ok(tr) => {
                prop_assert!((tr.log_likelihood - oracle).abs() < 1e-9);
                prop_assert!((g.path_log_likelihood(&tr.path, emit.view()) - oracle).abs() < 1e-9);
            }
            Err(_) => prop_assert_eq!(oracle, f64::NEG_INFINITY),
        }
    }
}

/// All optimal state paths, by enumeration.
fn optimal_paths(g: &DecodingGraph, emit: &Array2<f64>) -> Vec<Vec<usize>> {
    let n = g.num_states();
    let frames = emit.nrows();
    let mut scored = Vec::new();
    for code in 0..n.pow(frames as u32) {
        let mut c = code;
        let path: Vec<usize> = (0..frames)
            .map(|_| {
                let s = c % n;
                c /= n;
                s
            })
            .collect();
        let score = g.path_log_likelihood(&path, emit.view());
        if score > f64::NEG_INFINITY {
            scored.push((score, path));
        }
    }
    let best = scored.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    scored.into_iter().filter(|p| p.0 == best).map(|p| p.1).collect()
}

/// Graphs whose weights are small dyadic numbers, so many paths tie exactly.
fn tied_graph_spec() -> impl Strategy<Value = GraphSpec> {
    let w = || prop::sample::select(vec![0.0, -0.5, -1.0]);
    (1usize..=5).prop_flat_map(move |n| {
        (
            prop::collection::vec((0usize..3, prop::option::of(0usize..3)), n),
            prop::collection::vec((0..n, 0..n, w()), 0..=n * n),
            prop::collection::vec(prop::option::weighted(0.7, w()), n),
            prop::collection::vec(prop::option::weighted(0.7, w()), n),
        )
            .prop_map(|(states, arcs, initial, finals)| GraphSpec { states, arcs, initial, finals })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn ties_go_to_the_smallest_words_then_states(
        spec in tied_graph_spec(),
        emit in (1usize..=5).prop_flat_map(|f| prop::collection::vec(prop::sample::select(vec![0.0, -0.5, -1.0]), f * 3)),
    ) {
        let g = build(&spec);
        let emit = Array2::from_shape_vec((emit.len() / 3, 3), emit).unwrap();
        let winners = optimal_paths(&g, &emit);
        let expected = winners.iter().map(|p| (g.words_of(p), p.clone())).min();
        match (g.viterbi_with_scores(emit.view()), expected) {
            (Ok(tr), Some((words, path))) => {
                prop_assert_eq!(tr.words, words);
                prop_assert_eq!(tr.path, path);
            }
            (Err(_), None) => {}
            (got, want) => prop_assert!(false, "decoder {:?}, enumeration {:?}", got.map(|t| t.path), want),
        }
    }
}

// ---------------------------------------------------------------- models

fn gaussian(mean: &[f64], var: f64) -> GaussianState {
    GaussianState::single(mean.to_vec(), vec![var; mean.len()]).unwrap()
}

fn known_models(states_per_word: usize, words: &[(&str, Vec<Vec<f64>>)], sil_mean: Vec<f64>, var: f64) -> HmmModelSet {
    let topo = HmmTopology { states_per_word, silence_states: 1 };
    let dim = sil_mean.len();
    let sil = WordHmm::new("<sil>", vec![gaussian(&sil_mean, var)], vec![0.7]).unwrap();
    let ws = words
        .iter()
        .map(|(w, means)| {
            WordHmm::new(*w, means.iter().map(|m| gaussian(m, var)).collect(), vec![0.75; states_per_word]).unwrap()
        })
        .collect();
    HmmModelSet::new(topo, vec![1e-3; dim], sil, ws).unwrap()
}

fn draw_state(hmm: &WordHmm, k: usize, rng: &mut impl Rng, out: &mut Vec<f64>) -> usize {
    let st = &hmm.states[k];
    let stay = hmm.log_self[k].exp();
    let mut n = 1;
    while rng.gen::<f64>() < stay {
        n += 1;
    }
    for _ in 0..n {
        for (m, v) in st.means()[0].iter().zip(&st.variances()[0]) {
            out.push(Normal::new(*m, v.sqrt()).unwrap().sample(rng));
        }
    }
    n
}

/// Frames drawn from silence, the word models in order, and silence.
fn sample_utterance(m: &HmmModelSet, words: &[&str], rng: &mut impl Rng) -> FeatureMatrix {
    let mut data = Vec::new();
    let mut frames = 0;
    let mut run = |hmm: &WordHmm, data: &mut Vec<f64>, rng: &mut _| {
        for k in 0..hmm.num_states() {
            frames += draw_state(hmm, k, rng, data);
        }
    };
    run(&m.silence, &mut data, rng);
    for w in words {
        run(&m.words[m.word_index(w).unwrap()], &mut data, rng);
    }
    run(&m.silence, &mut data, rng);
    FeatureMatrix::new(Array2::from_shape_vec((frames, m.dim), data).unwrap(), 0.01, FeatureKind::Mfcc).unwrap()
}

fn grammar(slots: &[&[&str]]) -> MatrixGrammar {
    MatrixGrammar::new(
        slots
            .iter()
            .enumerate()
            .map(|(i, ws)| Slot { name: format!("slot{i}"), words: ws.iter().map(|w| w.to_string()).collect() })
            .collect(),
    )
    .unwrap()
}

#[test]
fn samples_of_a_word_decode_to_that_word() {
    let m = known_models(
        3,
        &[
            ("a", vec![vec![2.0, 0.0], vec![2.0, 2.0], vec![0.0, 2.0]]),
            ("b", vec![vec![-2.0, 0.0], vec![-2.0, -2.0], vec![0.0, -2.0]]),
        ],
        vec![0.0, 0.0],
        1.0,
    );
    let rec = Recognizer::new(m.clone(), grammar(&[&["a", "b"]]), true).unwrap();
    let mut rng = seed::rng(3);
    let hits = (0..200).filter(|_| rec.decode(&sample_utterance(&m, &["a"], &mut rng)).unwrap().words == ["a"]).count();
    assert!(hits >= 190, "{hits}/200");
}

#[test]
fn decoded_path_beats_reference_path() {
    let m = known_models(
        2,
        &[("a", vec![vec![1.0], vec![0.5]]), ("b", vec![vec![-1.0], vec![0.0]]), ("c", vec![vec![0.3], vec![-0.3]])],
        vec![0.0],
        1.0,
    );
    let g = grammar(&[&["a", "b", "c"], &["a", "c"]]);
    let rec = Recognizer::new(m.clone(), g.clone(), true).unwrap();
    let mut rng = seed::rng(8);
    for i in 0..100 {
        let label = SentenceLabel::parse(if i % 2 == 0 { "b c" } else { "c a" });
        let fm = sample_utterance(&m, &label.words.iter().map(String::as_str).collect::<Vec<_>>(), &mut rng);
        let hyp = rec.decode(&fm).unwrap();
        assert!(g.indices(&hyp.label()).is_ok());
        let reference = m.label_graph(&g, &label, true).unwrap();
        let ref_ll = reference.viterbi_with_scores(m.emissions(&fm).unwrap().view()).unwrap().log_likelihood;
        assert!(hyp.log_likelihood >= ref_ll - 1e-9);
    }
}

#[test]
fn single_sentence_graph_returns_it() {
    let m = known_models(2, &[("a", vec![vec![1.0], vec![0.5]]), ("b", vec![vec![-1.0], vec![0.0]])], vec![0.0], 1.0);
    let g = grammar(&[&["a", "b"]]);
    let only = m.label_graph(&g, &SentenceLabel::parse("b"), false).unwrap();
    let mut rng = seed::rng(1);
    let fm = FeatureMatrix::new(Array2::from_shape_fn((9, 1), |_| rng.gen_range(-3.0..3.0)), 0.01, FeatureKind::Mfcc)
        .unwrap();
    let tr = only.viterbi_with_scores(m.emissions(&fm).unwrap().view()).unwrap();
    assert_eq!(tr.words, ["b"]);
}

fn recovery_setup() -> (HmmModelSet, MatrixGrammar, Vec<(FeatureMatrix, SentenceLabel)>) {
    let truth = known_models(
        2,
        &[("a", vec![vec![3.0, 0.0], vec![0.0, 3.0]]), ("b", vec![vec![-3.0, 0.0], vec![0.0, -3.0]])],
        vec![0.0, 0.0],
        0.5,
    );
    let g = grammar(&[&["a", "b"]]);
    let mut rng = seed::rng(17);
    let data = (0..200)
        .map(|i| {
            let w = if i % 2 == 0 { "a" } else { "b" };
            (sample_utterance(&truth, &[w], &mut rng), SentenceLabel::parse(w))
        })
        .collect();
    (truth, g, data)
}

#[test]
fn training_recovers_known_means_monotonically() {
    let (truth, g, data) = recovery_setup();
    let refs: Vec<_> = data.iter().map(|(f, l)| (f, l)).collect();
    let cfg = TrainConfig { topology: truth.topology, max_iterations: 30, tolerance: 0.0, ..TrainConfig::default() };
    let init = init_models(&refs, &g, &cfg).unwrap();
    let (trained, report) = train(init, &refs, &g, &cfg).unwrap();
    assert!(report.converged);
    for w in report.objective.windows(2) {
        assert!(w[1] >= w[0] - 1e-6 * w[0].abs(), "{:?}", report.objective);
    }
    for (t, e) in truth.words.iter().zip(&trained.words) {
        for (ts, es) in t.states.iter().zip(&e.states) {
            for (a, b) in ts.means()[0].iter().zip(&es.means()[0]) {
                assert!((a - b).abs() < 0.1, "{}: {a} vs {b}", t.word);
            }
        }
    }

    // a converged model is a fixed point
    let (again, _) = train(trained.clone(), &refs, &g, &cfg).unwrap();
    for (x, y) in trained.words.iter().chain([&trained.silence]).zip(again.words.iter().chain([&again.silence])) {
        for (sx, sy) in x.states.iter().zip(&y.states) {
            for (a, b) in
                sx.means()[0].iter().chain(&sx.variances()[0]).zip(sy.means()[0].iter().chain(&sy.variances()[0]))
            {
                assert!((a - b).abs() < 1e-6);
            }
        }
        for (a, b) in x.log_self.iter().zip(&y.log_self) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let (truth, g, data) = recovery_setup();
    let refs: Vec<_> = data.iter().map(|(f, l)| (f, l)).collect();
    let cfg = TrainConfig { topology: truth.topology, mixtures: 2, ..TrainConfig::default() };
    let run = || {
        let init = init_models(&refs, &g, &cfg).unwrap();
        let (m, r) = train(init, &refs, &g, &cfg).unwrap();
        (serde_json::to_string(&m).unwrap(), r)
    };
    let (a, ra) = run();
    let (b, _) = run();
    assert_eq!(a, b);
    for w in ra.objective.windows(2) {
        assert!(w[1] >= w[0] - 1e-6 * w[0].abs());
    }
}
