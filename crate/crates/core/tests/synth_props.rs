use beatgraph::embed::{FeatureBundle, QuerySegment};
use beatgraph::graph::{build_graph_with_index, GestureGraph};
use beatgraph::index::HnswParams;
use beatgraph::synth::{choose_nodes, selection_probabilities, Fallback, GenerationConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn random_graph(seed: u64, nodes: usize, nn: usize) -> GestureGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bundles: Vec<FeatureBundle> = (0..nodes)
        .map(|i| FeatureBundle {
            clip_id: format!("a:{i:05}"),
            source_id: "a".into(),
            segment_index: i,
            start_frame: i * 30,
            gesture: vector(&mut rng, 4),
            gesture_tail: vector(&mut rng, 4),
            audio: vector(&mut rng, 3),
            text: vector(&mut rng, 2),
        })
        .collect();
    build_graph_with_index(&bundles, HnswParams::default(), nn).unwrap()
}

fn queries(seed: u64, count: usize) -> Vec<QuerySegment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..count)
        .map(|i| QuerySegment {
            index: i,
            start_frame: i * 30,
            audio: vector(&mut rng, 3),
            text: vector(&mut rng, 2),
        })
        .collect()
}

fn sequence(graph: &GestureGraph, q: &[QuerySegment], cfg: &GenerationConfig) -> Vec<u32> {
    choose_nodes(graph, q, cfg).unwrap().iter().map(|r| r.node).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn argmin_choice_ignores_positive_weight_scale(seed in 0u64..1000, scale in prop::sample::select(vec![0.25, 0.5, 2.0, 8.0])) {
        let graph = random_graph(seed, 40, 6);
        let q = queries(seed, 8);
        let cfg = GenerationConfig { top_k: 1, ..GenerationConfig::default() };
        let scaled = GenerationConfig { weights: cfg.weights.scaled(scale), ..cfg.clone() };
        prop_assert_eq!(sequence(&graph, &q, &cfg), sequence(&graph, &q, &scaled));
    }

    #[test]
    fn consecutive_choices_follow_edges_and_never_repeat(seed in 0u64..1000, top_k in 1usize..5) {
        let graph = random_graph(seed, 60, 10);
        let q = queries(seed, 12);
        let cfg = GenerationConfig { top_k, seed, ..GenerationConfig::default() };
        let records = choose_nodes(&graph, &q, &cfg).unwrap();
        let mut seen = std::collections::HashSet::new();
        for pair in records.windows(2) {
            let readmitted = pair[1].fallbacks.contains(&Fallback::SelectedReadmitted);
            let global = pair[1].fallbacks.contains(&Fallback::GlobalCandidates);
            prop_assert!(global || graph.has_edge(pair[0].node, pair[1].node));
            prop_assert!(readmitted || !seen.contains(&pair[1].node));
            seen.insert(pair[0].node);
        }
    }

    #[test]
    fn probabilities_form_a_distribution(scores in prop::collection::vec(-100.0f64..100.0, 1..8), tau in 1e-3f64..10.0) {
        let p = selection_probabilities(&scores, tau);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let i = scores.iter().position(|&s| s == best).unwrap();
        prop_assert!(p.iter().all(|&x| x <= p[i] + 1e-15));
    }
}
