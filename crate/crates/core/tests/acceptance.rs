//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Every check compares library output against an oracle written here from
//! first principles, so the two share no code beyond the input types.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::manual_div_ceil,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use beatgraph::corpus::audio::{samples_per_frame, ReferenceAudioEncoder};
use beatgraph::corpus::synthetic::{SyntheticCorpus, SyntheticSpec};
use beatgraph::corpus::{alignment_envelope, segment_count, segment_recording, AudioTrack, Recording, WordTiming};
use beatgraph::embed::{
    fit_corpus, pca_fit, FeatureBundle, FeatureConfig, FittedCorpus, QueryFeaturizer, QuerySegment, TextEncoders,
};
use beatgraph::graph::{build_graph_with_index, EdgeKind, GestureEdge, GestureGraph, GestureNode, NodeFrames};
use beatgraph::index::{brute_force_knn, Hnsw, HnswParams};
use beatgraph::synth::iconic::synthetic_library;
use beatgraph::synth::{
    blend_iconic, generate, max_joint_displacement, node_distance, GenerationConfig, IconicPlacement, ModalityVectors,
    Session, Weights,
};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !($cond) {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------- oracles

fn dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        acc += d * d;
    }
    acc.sqrt()
}

fn cat(parts: &[&[f32]]) -> Vec<f32> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn combined(n: &GestureNode) -> Vec<f32> {
    cat(&[&n.gesture, &n.audio, &n.text])
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Random bundles split into a few sources of consecutive windows.
fn random_bundles(rng: &mut ChaCha8Rng, count: usize, dims: (usize, usize, usize)) -> Vec<FeatureBundle> {
    let sources = rng.random_range(1..=4usize).min(count);
    (0..count)
        .map(|i| {
            let src = i * sources / count;
            let first_of_src = (0..count).find(|&j| j * sources / count == src).unwrap();
            let seg = i - first_of_src;
            FeatureBundle {
                clip_id: format!("s{src}:{seg:05}"),
                source_id: format!("s{src}"),
                segment_index: seg,
                start_frame: seg * 30,
                gesture: random_vec(rng, dims.0),
                gesture_tail: random_vec(rng, dims.0),
                audio: random_vec(rng, dims.1),
                text: random_vec(rng, dims.2),
            }
        })
        .collect()
}

fn random_query(rng: &mut ChaCha8Rng, index: usize, dims: (usize, usize, usize)) -> QuerySegment {
    QuerySegment {
        index,
        start_frame: index * 30,
        audio: random_vec(rng, dims.1),
        text: random_vec(rng, dims.2),
    }
}

/// Out-neighbors of `u` from the raw edge list: one entry per target at its
/// smallest distance, nearest first, ties by target id.
fn oracle_neighbors(edges: &[GestureEdge], u: u32, limit: usize) -> Vec<u32> {
    let mut best: BTreeMap<u32, f64> = BTreeMap::new();
    for e in edges.iter().filter(|e| e.from == u) {
        let d = best.entry(e.to).or_insert(f64::INFINITY);
        if e.dist < *d {
            *d = e.dist;
        }
    }
    let mut v: Vec<(f64, u32)> = best.into_iter().map(|(t, d)| (d, t)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v.into_iter().take(limit).map(|(_, t)| t).collect()
}

fn oracle_cost(prev_tail: &[f32], n: &GestureNode, q: &QuerySegment, w: &Weights) -> f64 {
    w.gesture * dist(prev_tail, &n.gesture) + w.audio * dist(&q.audio, &n.audio) + w.text * dist(&q.text, &n.text)
}

/// Every walk of `len` further hops from `head` over the expansion lists.
fn all_walks(adj: &BTreeMap<u32, Vec<u32>>, head: u32, len: usize) -> Vec<Vec<u32>> {
    let mut walks = vec![vec![head]];
    for _ in 0..len {
        walks = walks
            .into_iter()
            .flat_map(|w| {
                adj[w.last().unwrap()].iter().map(move |&n| {
                    let mut x = w.clone();
                    x.push(n);
                    x
                })
            })
            .collect();
    }
    walks
}

/// Deterministic (k = 1) node sequence by exhaustive enumeration.
fn oracle_sequence(graph: &GestureGraph, queries: &[QuerySegment], cfg: &GenerationConfig) -> Vec<u32> {
    let nodes = graph.nodes();
    let edges = graph.edges();
    let adj: BTreeMap<u32, Vec<u32>> = nodes
        .iter()
        .map(|n| (n.id, oracle_neighbors(edges, n.id, cfg.edges_per_expansion)))
        .collect();
    let w = &cfg.weights;

    let probe0 = cat(&[&queries[0].audio, &queries[0].text]);
    let mut prev = nodes
        .iter()
        .map(|n| (dist(&cat(&[&n.audio, &n.text]), &probe0), n.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .unwrap()
        .1;
    let mut chosen = vec![prev];
    let mut selected: HashSet<u32> = HashSet::from([prev]);

    for t in 1..queries.len() {
        let upcoming = &queries[t..];
        let p = &nodes[prev as usize];
        let probe = cat(&[&p.gesture_tail, &upcoming[0].audio, &upcoming[0].text]);
        let mut pool: Vec<u32> = oracle_neighbors(edges, prev, usize::MAX);
        if pool.is_empty() {
            pool = nodes.iter().map(|n| n.id).filter(|&i| i != prev).collect();
        }
        let mut ranked: Vec<(f64, u32)> = pool
            .iter()
            .map(|&i| (dist(&combined(&nodes[i as usize]), &probe), i))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let cands: Vec<u32> = ranked.into_iter().take(cfg.candidates).map(|(_, i)| i).collect();
        let fresh: Vec<u32> = cands.iter().copied().filter(|c| !selected.contains(c)).collect();
        let (heads, honor) = if fresh.is_empty() {
            (cands, false)
        } else {
            (fresh, true)
        };
        let depth = cfg.depth.min(upcoming.len() - 1);

        // (dead end, score, head)
        let mut best: Option<(bool, f64, u32)> = None;
        for &h in &heads {
            let head_cost = oracle_cost(&p.gesture_tail, &nodes[h as usize], &upcoming[0], w);
            let mut path_best: Option<(f64, Vec<u32>)> = None;
            for walk in all_walks(&adj, h, depth) {
                let distinct: HashSet<u32> = walk.iter().copied().collect();
                if distinct.len() != walk.len() || (honor && walk[1..].iter().any(|n| selected.contains(n))) {
                    continue;
                }
                let mut s = head_cost;
                for i in 1..walk.len() {
                    let from = &nodes[walk[i - 1] as usize];
                    s += oracle_cost(&from.gesture_tail, &nodes[walk[i] as usize], &upcoming[i], w);
                }
                let better = match &path_best {
                    None => true,
                    Some((bs, bw)) => s < *bs || (s == *bs && walk < *bw),
                };
                if better {
                    path_best = Some((s, walk));
                }
            }
            let entry = match path_best {
                Some((s, _)) => (false, s, h),
                None => (depth > 0, head_cost, h),
            };
            if best.is_none_or(|b| entry < b) {
                best = Some(entry);
            }
        }
        prev = best.unwrap().2;
        chosen.push(prev);
        selected.insert(prev);
    }
    chosen
}

/// Edge list rebuilt from exhaustive neighbor lists.
fn oracle_edges(nodes: &[GestureNode], nn_count: usize) -> Vec<GestureEdge> {
    let nn = nn_count.min(nodes.len() - 1);
    let kinds: [(EdgeKind, fn(&GestureNode) -> Vec<f32>); 4] = [
        (EdgeKind::NnGesture, |n| n.gesture.clone()),
        (EdgeKind::NnAudio, |n| n.audio.clone()),
        (EdgeKind::NnText, |n| n.text.clone()),
        (EdgeKind::NnCombined, combined),
    ];
    let mut edges = Vec::new();
    for (kind, vec_of) in kinds {
        for a in nodes {
            let va = vec_of(a);
            let mut others: Vec<(f64, u32)> = nodes
                .iter()
                .filter(|b| b.id != a.id)
                .map(|b| (dist(&va, &vec_of(b)), b.id))
                .collect();
            others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            for (r, &(d, to)) in others.iter().take(nn).enumerate() {
                let b = &nodes[to as usize];
                let reversed = b.source_id == a.source_id && b.segment_index + 1 == a.segment_index;
                if !reversed {
                    edges.push(GestureEdge {
                        from: a.id,
                        to,
                        kind,
                        rank: r as u32 + 1,
                        dist: d,
                    });
                }
            }
        }
    }
    for a in nodes {
        if let Some(b) = nodes
            .iter()
            .find(|b| b.source_id == a.source_id && b.segment_index == a.segment_index + 1)
        {
            edges.push(GestureEdge {
                from: a.id,
                to: b.id,
                kind: EdgeKind::Natural,
                rank: 0,
                dist: dist(&combined(a), &combined(b)),
            });
        }
    }
    edges.sort_by_key(|e| (e.from, e.kind, e.rank, e.to));
    edges
}

// ------------------------------------------------------------ corpus setup

struct Fitted {
    recordings: Vec<Recording>,
    fitted: FittedCorpus,
    graph: GestureGraph,
    frames: NodeFrames,
}

fn text_encoders(cfg: &FeatureConfig) -> TextEncoders {
    TextEncoders::reference(
        cfg.encoder_seed,
        cfg.word_dim,
        cfg.sequence_dim,
        cfg.tx_short,
        cfg.tx_long,
    )
    .unwrap()
}

fn fit_synthetic(sources: usize, seconds: f64, seed: u64, nn_count: usize) -> Fitted {
    let spec = SyntheticSpec {
        sources,
        duration_s: seconds,
        seed,
        ..SyntheticSpec::default()
    };
    let recordings = SyntheticCorpus::generate(&spec).recordings;
    let cfg = FeatureConfig::default();
    let fitted = fit_corpus(&recordings, &cfg, &ReferenceAudioEncoder, &text_encoders(&cfg)).unwrap();
    let graph = build_graph_with_index(&fitted.bundles, HnswParams::default(), nn_count).unwrap();
    let window = fitted.model.window_frames;
    let mut frames = NodeFrames::new(fitted.model.fps, fitted.model.joints, window);
    for b in &fitted.bundles {
        let rec = recordings.iter().find(|r| r.source_id == b.source_id).unwrap();
        frames
            .push(&rec.motion.rows(b.start_frame, window).into_owned())
            .unwrap();
    }
    Fitted {
        recordings,
        fitted,
        graph,
        frames,
    }
}

fn speech(seconds: f64, seed: u64) -> Recording {
    let spec = SyntheticSpec {
        sources: 1,
        duration_s: seconds,
        seed,
        ..SyntheticSpec::default()
    };
    SyntheticCorpus::generate(&spec).recordings.remove(0)
}

fn queries_for(f: &Fitted, rec: &Recording) -> Vec<QuerySegment> {
    let text = text_encoders(&f.fitted.model.config);
    let featurizer = QueryFeaturizer::new(&f.fitted.model, &ReferenceAudioEncoder, &text).unwrap();
    featurizer.featurize(&rec.audio, &rec.words).unwrap()
}

// --------------------------------------------------------------- criteria

fn path_search_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut steps = 0;
    for trial in 0..60 {
        let n = rng.random_range(8..=200usize);
        let dims = (
            rng.random_range(2..=8),
            rng.random_range(2..=6),
            rng.random_range(1..=6),
        );
        let bundles = random_bundles(&mut rng, n, dims);
        let nn = rng.random_range(1..=12usize);
        let graph = build_graph_with_index(&bundles, HnswParams::default(), nn).unwrap();
        let cfg = GenerationConfig {
            depth: rng.random_range(0..=3),
            edges_per_expansion: rng.random_range(1..=4),
            candidates: rng.random_range(1..=16),
            top_k: 1,
            weights: Weights {
                gesture: rng.random_range(0.1..5.0),
                audio: rng.random_range(0.1..5.0),
                text: rng.random_range(0.1..5.0),
            },
            seed: trial,
            ..GenerationConfig::default()
        };
        let queries: Vec<QuerySegment> = (0..rng.random_range(2..=20))
            .map(|i| random_query(&mut rng, i, dims))
            .collect();
        let got: Vec<u32> = beatgraph::synth::choose_nodes(&graph, &queries, &cfg)
            .unwrap()
            .iter()
            .map(|r| r.node)
            .collect();
        let want = oracle_sequence(&graph, &queries, &cfg);
        ensure!(
            got == want,
            "graph {trial} ({n} nodes, {cfg:?}): got {got:?}, oracle {want:?}"
        );
        steps += queries.len();
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("60 graphs, {steps} steps identical, {secs:.1}s"))
}

fn weighted_distance() -> Outcome {
    let w = Weights::default();
    ensure!((w.gesture, w.audio, w.text) == (4.0, 2.0, 1.0), "default weights {w:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let dg = rng.random_range(1..64);
        let da = rng.random_range(1..64);
        let dt = rng.random_range(1..64);
        let mut scale = || rng.random_range(0.01f32..100.0);
        let s = scale();
        let x: Vec<Vec<f32>> = [dg, da, dt]
            .iter()
            .map(|&d| random_vec(&mut rng, d).iter().map(|v| v * s).collect())
            .collect();
        let y: Vec<Vec<f32>> = [dg, da, dt]
            .iter()
            .map(|&d| random_vec(&mut rng, d).iter().map(|v| v * s).collect())
            .collect();
        let got = node_distance(
            ModalityVectors {
                gesture: &x[0],
                audio: &x[1],
                text: &x[2],
            },
            ModalityVectors {
                gesture: &y[0],
                audio: &y[1],
                text: &y[2],
            },
            &w,
        );
        let euclid = |a: &[f32], b: &[f32]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(p, q)| (*p as f64 - *q as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let want = 4.0 * euclid(&x[0], &y[0]) + 2.0 * euclid(&x[1], &y[1]) + euclid(&x[2], &y[2]);
        worst = worst.max((got - want).abs());
    }
    ensure!(worst < 1e-9, "max abs error {worst:e}");
    Ok(format!("1000 triples, max abs error {worst:e}"))
}

fn segmentation_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let fps = 30.0;
    for _ in 0..200 {
        // seconds with millisecond resolution, plus exact frame counts
        let t = rng.random_range(0..120_000u32) as f64 / 1000.0;
        let mut expected = 0;
        while expected as f64 + 2.0 <= t {
            expected += 1;
        }
        ensure!(
            segment_count(t, 2.0) == expected,
            "T={t}: {} vs {expected}",
            segment_count(t, 2.0)
        );

        let frames = rng.random_range(1..3600usize);
        let rate = 16_000;
        let samples = (frames as f64 * samples_per_frame(rate, fps)).round() as usize;
        let rec = Recording {
            source_id: "r".into(),
            fps,
            motion: DMatrix::zeros(frames, 3),
            confidence: None,
            audio: AudioTrack::silence(samples, rate),
            words: Vec::new(),
        };
        let segs = segment_recording(&rec, 2.0).unwrap();
        let want = if frames < 60 { 0 } else { (frames - 60) / 30 + 1 };
        ensure!(
            segs.len() == want,
            "{frames} frames: {} windows, expected {want}",
            segs.len()
        );
        for (i, s) in segs.iter().enumerate() {
            ensure!(
                s.clip.start_frame == 30 * i && s.clip.len() == 60,
                "window {i} at {}",
                s.clip.start_frame
            );
        }
    }
    Ok("200 durations and 200 frame counts exact".into())
}

fn envelope_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut singles = 0;
    for layout in 0..500 {
        let n = rng.random_range(1..200usize);
        let words: Vec<WordTiming> = (0..rng.random_range(0..12))
            .map(|i| {
                let s = rng.random_range(0..n);
                let len = if rng.random_bool(0.2) {
                    0
                } else {
                    rng.random_range(0..20)
                };
                WordTiming::new(format!("w{i}"), s, (s + len).min(n - 1))
            })
            .collect();
        let env = alignment_envelope(&words, n).unwrap();
        ensure!(env.len() == n, "layout {layout}: length {}", env.len());
        ensure!(
            env.iter().all(|v| (0.0..=1.0).contains(v)),
            "layout {layout}: value outside [0, 1]"
        );
        for w in &words {
            let peak = (w.start_frame + w.end_frame + 1) / 2;
            ensure!(env[peak] == 1.0, "layout {layout}: {w:?} peak {}", env[peak]);
            if w.start_frame == w.end_frame {
                singles += 1;
                ensure!(env[w.start_frame] == 1.0, "layout {layout}: single-frame word {w:?}");
            }
        }
        for (f, v) in env.iter().enumerate() {
            let covered = words.iter().any(|w| f + 1 >= w.start_frame && f <= w.end_frame + 1);
            ensure!(
                covered || *v == 0.0,
                "layout {layout}: frame {f} is {v} outside every word"
            );
        }
    }
    Ok(format!("500 layouts exact ({singles} single-frame words)"))
}

fn hnsw_recall() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let dim = 256;
    let data: Vec<Vec<f32>> = (0..10_000)
        .map(|_| (0..dim).map(|_| rng.random::<f32>()).collect())
        .collect();
    let params = HnswParams::default();
    ensure!(params.ef_search == 100, "default ef_search {}", params.ef_search);
    let index = Hnsw::build(
        dim,
        params,
        data.iter().enumerate().map(|(i, v)| (i as u64, v.as_slice())),
    )
    .unwrap();
    let mut hits = 0;
    let queries = 200;
    for _ in 0..queries {
        let q: Vec<f32> = (0..dim).map(|_| rng.random::<f32>()).collect();
        let truth: HashSet<u64> =
            brute_force_knn(data.iter().enumerate().map(|(i, v)| (i as u64, v.as_slice())), &q, 20)
                .into_iter()
                .map(|(id, _)| id)
                .collect();
        hits += index
            .search_knn_ef(&q, 20, 100)
            .unwrap()
            .iter()
            .filter(|(id, _)| truth.contains(id))
            .count();
    }
    let recall = hits as f64 / (20 * queries) as f64;
    let secs = started.elapsed().as_secs_f64();
    ensure!(recall >= 0.95, "recall@20 {recall:.4}");
    ensure!(secs < 120.0, "took {secs:.1}s");
    Ok(format!("recall@20 {recall:.4} in {secs:.1}s"))
}

fn graph_construction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for corpus in 0..20 {
        let dims = (
            rng.random_range(2..=24),
            rng.random_range(2..=24),
            rng.random_range(2..=24),
        );
        let bundles = random_bundles(&mut rng, 30, dims);
        let graph = build_graph_with_index(&bundles, HnswParams::default(), 20).unwrap();
        let want = serde_json::to_vec(&oracle_edges(graph.nodes(), 20)).unwrap();
        let got = serde_json::to_vec(graph.edges()).unwrap();
        ensure!(
            got == want,
            "corpus {corpus}: edge lists differ ({} vs {} bytes)",
            got.len(),
            want.len()
        );
    }
    // one corpus through the full feature pipeline
    let f = fit_synthetic(1, 31.0, 7, 20);
    ensure!(f.graph.len() == 30, "pipeline corpus has {} nodes", f.graph.len());
    let want = serde_json::to_vec(&oracle_edges(f.graph.nodes(), 20)).unwrap();
    ensure!(
        serde_json::to_vec(f.graph.edges()).unwrap() == want,
        "pipeline corpus edge lists differ"
    );
    Ok("20 random corpora and 1 featurized corpus byte-identical".into())
}

fn pca_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut worst_orth, mut worst_mse, mut worst_eig) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        // anisotropic columns so the spectrum is not flat
        let scales: Vec<f64> = (0..10).map(|_| rng.random_range(0.1..3.0)).collect();
        let x = DMatrix::from_fn(50, 10, |_, c| rng.random_range(-1.0..1.0) * scales[c]);
        let mean = x.row_mean();
        let centered = DMatrix::from_fn(50, 10, |r, c| x[(r, c)] - mean[c]);
        let mut eig: Vec<f64> = SymmetricEigen::new(centered.transpose() * &centered / 50.0)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        for k in 1..=10 {
            let m = pca_fit(&x, k).unwrap();
            ensure!(m.output_dim() == k, "asked for {k}, got {}", m.output_dim());
            for i in 0..k {
                for j in 0..k {
                    let dot: f64 = m.component(i).iter().zip(m.component(j)).map(|(a, b)| a * b).sum();
                    worst_orth = worst_orth.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
                }
                worst_eig = worst_eig.max((m.explained_variance[i] - eig[i]).abs());
            }
            let mut mse = 0.0;
            for r in 0..50 {
                let row: Vec<f64> = x.row(r).iter().copied().collect();
                let back = m.reconstruct(&m.project(&row).unwrap()).unwrap();
                mse += row.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
            mse /= 50.0;
            let discarded: f64 = eig[k..].iter().sum();
            worst_mse = worst_mse.max((mse - discarded).abs());
        }
    }
    ensure!(worst_orth < 1e-6, "orthonormality error {worst_orth:e}");
    ensure!(
        worst_mse < 1e-6,
        "reconstruction error vs discarded eigenvalues {worst_mse:e}"
    );
    ensure!(worst_eig < 1e-6, "explained variance vs eigenvalues {worst_eig:e}");
    Ok(format!(
        "20 matrices x 10 ranks: orthonormality {worst_orth:.1e}, mse gap {worst_mse:.1e}, eigenvalues {worst_eig:.1e}"
    ))
}

fn determinism(f: &Fitted, queries: &[QuerySegment]) -> Outcome {
    let cfg = GenerationConfig::default();
    ensure!(cfg.top_k >= 2, "default top_k {}", cfg.top_k);
    let tmp = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for run in 0..2 {
        let dir = tmp.path().join(format!("run{run}"));
        generate(&f.graph, &f.frames, queries, &cfg)
            .unwrap()
            .save(&dir, true)
            .unwrap();
        let files: Vec<Vec<u8>> = ["timeline.json", "frames.bin", "frames.csv"]
            .iter()
            .map(|name| std::fs::read(dir.join(name)).unwrap())
            .collect();
        bytes.push(files);
    }
    ensure!(bytes[0] == bytes[1], "timeline files differ between identical runs");
    let base = generate(&f.graph, &f.frames, queries, &cfg).unwrap().node_sequence();
    let changed = (1..=10)
        .filter(|&seed| {
            let c = GenerationConfig { seed, ..cfg.clone() };
            generate(&f.graph, &f.frames, queries, &c).unwrap().node_sequence() != base
        })
        .count();
    ensure!(changed >= 1, "no seed changed the node sequence");
    Ok(format!("identical bytes; {changed}/10 seeds changed the sequence"))
}

fn continuity(f: &Fitted) -> Outcome {
    let intra = (0..f.frames.len() as u32)
        .map(|n| max_joint_displacement(&f.frames.window(n).unwrap()))
        .fold(0.0, f64::max);
    let bound = 3.0 * intra;
    let rest: Vec<f64> = f.recordings[0].motion.column_iter().map(|c| c.mean()).collect();
    let library = synthetic_library(&rest, &["wave", "point"], f.fitted.model.fps, 1.5, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let rec = speech(rng.random_range(8.0..30.0f64).round(), 1000 + trial);
        let queries = queries_for(f, &rec);
        let cfg = GenerationConfig {
            seed: trial,
            ..GenerationConfig::default()
        };
        let stitched = generate(&f.graph, &f.frames, &queries, &cfg).unwrap();
        let d = max_joint_displacement(&stitched.frames);
        ensure!(d <= bound, "trial {trial}: stitched displacement {d:.4} > {bound:.4}");
        worst = worst.max(d);

        let mut placements = Vec::new();
        let mut t = rng.random_range(0.0..1.0);
        while t + 1.5 < stitched.duration_s() {
            placements.push(IconicPlacement {
                t_s: (t * 10.0f64).round() / 10.0,
                clip_id: library[rng.random_range(0..library.len())].id.clone(),
                blend_s: rng.random_range(0.1..0.5),
            });
            t += rng.random_range(3.0..6.0);
        }
        let blended = blend_iconic(&stitched, &library, &placements).unwrap();
        let d = max_joint_displacement(&blended.frames);
        ensure!(
            d <= bound,
            "trial {trial}: blended displacement {d:.4} > {bound:.4} ({placements:?})"
        );
        worst = worst.max(d);
    }
    Ok(format!(
        "20 generations, worst {worst:.4} vs bound {bound:.4} (corpus max {intra:.4})"
    ))
}

fn realtime_budget() -> Outcome {
    let built = Instant::now();
    let f = fit_synthetic(5, 120.0, 1010, 20);
    let build_secs = built.elapsed().as_secs_f64();
    let stats = f.graph.stats();
    ensure!(
        stats.isolated.is_empty(),
        "{} isolated nodes at nn=20",
        stats.isolated.len()
    );

    let rec = speech(60.0, 2020);
    let text = text_encoders(&f.fitted.model.config);
    let featurizer = QueryFeaturizer::new(&f.fitted.model, &ReferenceAudioEncoder, &text).unwrap();
    let cfg = GenerationConfig::default();

    let full = Instant::now();
    let queries = featurizer.featurize(&rec.audio, &rec.words).unwrap();
    generate(&f.graph, &f.frames, &queries, &cfg).unwrap();
    let full_secs = full.elapsed().as_secs_f64();

    let spf = samples_per_frame(rec.audio.sample_rate(), rec.fps);
    let window = f.fitted.model.window_frames;
    let mut session = Session::new(&f.graph, &cfg).unwrap();
    let mut latencies = Vec::with_capacity(queries.len());
    for (t, q) in queries.iter().enumerate() {
        let started = Instant::now();
        let (start, end) = (q.start_frame, q.start_frame + window);
        let audio = rec
            .audio
            .slice((start as f64 * spf).round() as usize..(end as f64 * spf).round() as usize);
        let words: Vec<WordTiming> = rec
            .words
            .iter()
            .filter(|w| w.end_frame >= start && w.start_frame < end)
            .map(|w| {
                WordTiming::new(
                    w.word.clone(),
                    w.start_frame.max(start) - start,
                    w.end_frame.min(end - 1) - start,
                )
            })
            .collect();
        let one = featurizer.featurize(&audio, &words).unwrap();
        ensure!(one.len() == 1, "a single window featurized into {} queries", one.len());
        session.step(&queries[t..]).unwrap();
        latencies.push(started.elapsed().as_secs_f64() * 1e3);
    }
    latencies.sort_by(f64::total_cmp);
    let median = latencies[latencies.len() / 2];
    ensure!(median < 500.0, "median segment latency {median:.1} ms");
    ensure!(full_secs < 15.0, "60 s generation took {full_secs:.2}s");
    Ok(format!(
        "{} nodes, 0 isolated; median segment {median:.1} ms, 60 s generation {full_secs:.2}s (corpus fit {build_secs:.1}s)",
        f.graph.len()
    ))
}

fn sampler_limit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut steps = 0;
    let mut trial = 0u64;
    while steps < 100 {
        let dims = (4, 3, 3);
        let n = rng.random_range(30..=120);
        let graph = build_graph_with_index(&random_bundles(&mut rng, n, dims), HnswParams::default(), 8).unwrap();
        let queries: Vec<QuerySegment> = (0..11).map(|i| random_query(&mut rng, i, dims)).collect();
        let sharp = GenerationConfig {
            temperature: 1e-6,
            top_k: 4,
            seed: trial,
            ..GenerationConfig::default()
        };
        let argmin = GenerationConfig {
            top_k: 1,
            ..sharp.clone()
        };
        let mut a = Session::new(&graph, &sharp).unwrap();
        let mut b = Session::new(&graph, &argmin).unwrap();
        a.first(&queries[0]).unwrap();
        b.first(&queries[0]).unwrap();
        for t in 1..queries.len() {
            let (x, y) = (a.step(&queries[t..]).unwrap(), b.step(&queries[t..]).unwrap());
            ensure!(x == y, "graph {trial} step {t}: sampled {x}, argmin {y}");
            steps += 1;
        }
        trial += 1;
    }
    Ok(format!("{steps} steps over {trial} graphs match argmin"))
}

fn main() {
    let shared = std::sync::OnceLock::new();
    let corpus = || shared.get_or_init(|| fit_synthetic(2, 60.0, 42, 20));
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        (
            "path search matches exhaustive enumeration",
            Box::new(path_search_oracle),
        ),
        ("weighted node distance", Box::new(weighted_distance)),
        ("segmentation count law", Box::new(segmentation_law)),
        ("alignment envelope properties", Box::new(envelope_properties)),
        ("hnsw recall@20", Box::new(hnsw_recall)),
        ("graph edges match oracle reconstruction", Box::new(graph_construction)),
        ("pca orthonormality and reconstruction", Box::new(pca_properties)),
        (
            "deterministic generation",
            Box::new(|| {
                let f = corpus();
                determinism(f, &queries_for(f, &speech(30.0, 77)))
            }),
        ),
        ("motion continuity", Box::new(|| continuity(corpus()))),
        ("near-real-time budget", Box::new(realtime_budget)),
        ("low-temperature sampling equals argmin", Box::new(sampler_limit)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {:>2}: {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {:>2}: {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
