//! Weighted multimodal path search over the gesture graph.
//!
//! A step scores each candidate head by the best path of up to `depth`
//! further nodes reachable over the top `edges_per_expansion` edges, where
//! every node on the path is compared against the query of its own time
//! step. The gesture term compares the previous node's second-half gesture
//! with the candidate's first half, so a natural continuation costs nothing
//! on that term.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{CandidateScope, GenerationConfig, Weights};
use crate::embed::QuerySegment;
use crate::error::{Error, Result};
use crate::graph::{GestureGraph, GestureNode, KindFilter};
use crate::linalg::{concat, l2};

/// Borrowed per-modality vectors of one side of a comparison.
#[derive(Debug, Clone, Copy)]
pub struct ModalityVectors<'a> {
    pub gesture: &'a [f32],
    pub audio: &'a [f32],
    pub text: &'a [f32],
}

/// `w_g·d(x_g, y_g) + w_a·d(x_a, y_a) + w_t·d(x_t, y_t)`.
pub fn node_distance(x: ModalityVectors<'_>, y: ModalityVectors<'_>, w: &Weights) -> f64 {
    w.gesture * l2(x.gesture, y.gesture) + w.audio * l2(x.audio, y.audio) + w.text * l2(x.text, y.text)
}

/// Cost of playing `node` after a node whose second half is `prev_tail`, against query `q`.
pub fn step_cost(prev_tail: &[f32], node: &GestureNode, q: &QuerySegment, w: &Weights) -> f64 {
    node_distance(
        ModalityVectors {
            gesture: prev_tail,
            audio: &q.audio,
            text: &q.text,
        },
        ModalityVectors {
            gesture: &node.gesture,
            audio: &node.audio,
            text: &node.text,
        },
        w,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathCandidate {
    pub nodes: Vec<u32>,
    pub score: f64,
    /// False when no admissible path reached the full lookahead depth and
    /// the score covers the head alone.
    pub complete: bool,
}

impl PathCandidate {
    pub fn head(&self) -> u32 {
        self.nodes[0]
    }
}

fn better(score: f64, nodes: &[u32], best: &Option<PathCandidate>) -> bool {
    match best {
        None => true,
        Some(b) => match score.total_cmp(&b.score) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Equal => nodes < b.nodes.as_slice(),
            std::cmp::Ordering::Greater => false,
        },
    }
}

/// Best path rooted at `head`; `upcoming[0]` is the current query.
///
/// Depth is `min(depth, upcoming.len() − 1)`. Paths that repeat a node or
/// touch an `excluded` node are dropped; ties go to the lexicographically
/// smallest node sequence.
pub fn path_score(
    graph: &GestureGraph,
    head: u32,
    prev_tail: &[f32],
    upcoming: &[QuerySegment],
    cfg: &GenerationConfig,
    excluded: &dyn Fn(u32) -> bool,
) -> Result<PathCandidate> {
    let first = upcoming.first().ok_or(Error::Empty("no query for path scoring"))?;
    let head_node = graph.node(head)?;
    let head_cost = step_cost(prev_tail, head_node, first, &cfg.weights);
    let depth = cfg.depth.min(upcoming.len() - 1);
    let mut best = None;
    let mut path = vec![head];
    expand(graph, upcoming, cfg, excluded, depth, &mut path, head_cost, &mut best)?;
    Ok(best.unwrap_or(PathCandidate {
        nodes: vec![head],
        score: head_cost,
        complete: depth == 0,
    }))
}

#[allow(clippy::too_many_arguments)]
fn expand(
    graph: &GestureGraph,
    upcoming: &[QuerySegment],
    cfg: &GenerationConfig,
    excluded: &dyn Fn(u32) -> bool,
    depth: usize,
    path: &mut Vec<u32>,
    cost: f64,
    best: &mut Option<PathCandidate>,
) -> Result<()> {
    let level = path.len() - 1;
    if level == depth {
        if better(cost, path, best) {
            *best = Some(PathCandidate {
                nodes: path.clone(),
                score: cost,
                complete: true,
            });
        }
        return Ok(());
    }
    let last = graph.node(*path.last().expect("non-empty path"))?;
    for nb in graph.neighbors(last.id, &KindFilter::All, cfg.edges_per_expansion)? {
        if path.contains(&nb.to) || excluded(nb.to) {
            continue;
        }
        let next = graph.node(nb.to)?;
        let c = cost + step_cost(&last.gesture_tail, next, &upcoming[level + 1], &cfg.weights);
        path.push(nb.to);
        expand(graph, upcoming, cfg, excluded, depth, path, c, best)?;
        path.pop();
    }
    Ok(())
}

/// Min–max normalize then `softmax(−x/τ)`.
pub fn selection_probabilities(scores: &[f64], temperature: f64) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let logits: Vec<f64> = scores
        .iter()
        .map(|s| {
            if span > 0.0 {
                -(s - lo) / span / temperature
            } else {
                0.0
            }
        })
        .collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.iter().map(|e| e / total).collect()
}

/// Draws one index from [`selection_probabilities`]; consumes exactly one
/// uniform from `rng`.
pub fn sample_index(scores: &[f64], temperature: f64, rng: &mut impl Rng) -> usize {
    let probs = selection_probabilities(scores, temperature);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len().saturating_sub(1)
}

/// Node minimizing the distance between its audio⊕text vector and the
/// query's; ties go to the smallest id.
pub fn generate_first(graph: &GestureGraph, q: &QuerySegment) -> Result<u32> {
    let query = concat(&[&q.audio, &q.text]);
    graph
        .nodes()
        .iter()
        .map(|n| (l2(&n.audio_text(), &query), n.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
        .ok_or(Error::Empty("graph has no nodes"))
}

/// Why a step deviated from the plain rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Every candidate was already selected; the constraint was lifted for this step.
    SelectedReadmitted,
    /// The previous node has no outgoing edges; candidates came from the whole graph.
    GlobalCandidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub query_index: usize,
    pub node: u32,
    pub score: f64,
    /// Heads in the sampling pool, best first.
    pub pool: Vec<u32>,
    pub fallbacks: Vec<Fallback>,
}

/// Sequential generation state: selected set and RNG.
pub struct Session<'g> {
    graph: &'g GestureGraph,
    cfg: GenerationConfig,
    rng: ChaCha8Rng,
    selected: BTreeSet<u32>,
    prev: Option<u32>,
    records: Vec<StepRecord>,
}

pub fn check_query(graph: &GestureGraph, q: &QuerySegment) -> Result<()> {
    let dims = graph.meta().dims;
    if q.audio.len() != dims.audio || q.text.len() != dims.text {
        return Err(Error::InvalidInput(format!(
            "query {} has audio/text sizes {}/{}, graph expects {}/{}",
            q.index,
            q.audio.len(),
            q.text.len(),
            dims.audio,
            dims.text
        )));
    }
    if !q.audio.iter().chain(&q.text).all(|x| x.is_finite()) {
        return Err(Error::InvalidInput(format!("query {} has non-finite values", q.index)));
    }
    Ok(())
}

impl<'g> Session<'g> {
    pub fn new(graph: &'g GestureGraph, cfg: &GenerationConfig) -> Result<Self> {
        cfg.validate()?;
        if graph.is_empty() {
            return Err(Error::Empty("graph has no nodes"));
        }
        Ok(Self {
            graph,
            cfg: cfg.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            selected: BTreeSet::new(),
            prev: None,
            records: Vec::new(),
        })
    }

    /// The already-selected rule; the whole session counts.
    pub fn is_selected(&self, id: u32) -> bool {
        self.selected.contains(&id)
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<StepRecord> {
        self.records
    }

    fn commit(&mut self, node: u32, score: f64, pool: Vec<u32>, fallbacks: Vec<Fallback>) -> u32 {
        self.selected.insert(node);
        self.prev = Some(node);
        self.records.push(StepRecord {
            query_index: self.records.len(),
            node,
            score,
            pool,
            fallbacks,
        });
        node
    }

    /// Opens the session with the nearest node on audio and text alone.
    pub fn first(&mut self, q: &QuerySegment) -> Result<u32> {
        if self.prev.is_some() {
            return Err(Error::Invariant("session already started".into()));
        }
        check_query(self.graph, q)?;
        let node = generate_first(self.graph, q)?;
        let n = self.graph.node(node)?;
        let score = l2(&n.audio_text(), &concat(&[&q.audio, &q.text]));
        Ok(self.commit(node, score, vec![node], Vec::new()))
    }

    /// Gn candidates ordered by distance of their combined vector to
    /// `prev_tail ⊕ query audio ⊕ query text`.
    fn candidates(&self, prev: &GestureNode, q: &QuerySegment) -> Result<(Vec<u32>, Vec<Fallback>)> {
        let probe = concat(&[&prev.gesture_tail, &q.audio, &q.text]);
        let mut fallbacks = Vec::new();
        let pool: Vec<u32> = match self.cfg.scope {
            CandidateScope::Neighborhood => {
                let nb = self.graph.neighbors(prev.id, &KindFilter::All, usize::MAX)?;
                if nb.is_empty() {
                    fallbacks.push(Fallback::GlobalCandidates);
                    self.graph
                        .nodes()
                        .iter()
                        .map(|n| n.id)
                        .filter(|&id| id != prev.id)
                        .collect()
                } else {
                    nb.into_iter().map(|n| n.to).collect()
                }
            }
            CandidateScope::Global => self.graph.nodes().iter().map(|n| n.id).collect(),
        };
        let mut ranked: Vec<(f64, u32)> = pool
            .into_iter()
            .map(|id| (l2(&self.graph.nodes()[id as usize].combined(), &probe), id))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        ranked.truncate(self.cfg.candidates);
        Ok((ranked.into_iter().map(|(_, id)| id).collect(), fallbacks))
    }

    /// Chooses the node for `upcoming[0]`; later entries feed the lookahead.
    pub fn step(&mut self, upcoming: &[QuerySegment]) -> Result<u32> {
        let q = upcoming.first().ok_or(Error::Empty("no query for step"))?;
        for u in upcoming.iter().take(self.cfg.depth + 1) {
            check_query(self.graph, u)?;
        }
        let Some(prev_id) = self.prev else {
            return self.first(q);
        };
        let prev = self.graph.node(prev_id)?;
        let (cands, mut fallbacks) = self.candidates(prev, q)?;
        let mut heads: Vec<u32> = cands.iter().copied().filter(|&c| !self.is_selected(c)).collect();
        let mut honor_selected = true;
        if heads.is_empty() {
            log::warn!(
                "step {}: every candidate already selected, re-admitting selected nodes",
                self.records.len()
            );
            fallbacks.push(Fallback::SelectedReadmitted);
            heads = cands;
            honor_selected = false;
        }
        let selected = &self.selected;
        let excluded = |id: u32| honor_selected && selected.contains(&id);
        let mut scored: Vec<PathCandidate> = heads
            .iter()
            .map(|&h| path_score(self.graph, h, &prev.gesture_tail, upcoming, &self.cfg, &excluded))
            .collect::<Result<_>>()?;
        scored.sort_by(|a, b| {
            b.complete
                .cmp(&a.complete)
                .then(a.score.total_cmp(&b.score))
                .then(a.head().cmp(&b.head()))
        });
        scored.truncate(self.cfg.top_k);
        let scores: Vec<f64> = scored.iter().map(|c| c.score).collect();
        let pick = sample_index(&scores, self.cfg.temperature, &mut self.rng);
        let chosen = &scored[pick];
        let (node, score) = (chosen.head(), chosen.score);
        let pool = scored.iter().map(PathCandidate::head).collect();
        Ok(self.commit(node, score, pool, fallbacks))
    }
}

/// Runs a whole session over `queries` and returns the chosen node per query.
pub fn choose_nodes(graph: &GestureGraph, queries: &[QuerySegment], cfg: &GenerationConfig) -> Result<Vec<StepRecord>> {
    let first = queries.first().ok_or(Error::Empty("no query segments"))?;
    let mut session = Session::new(graph, cfg)?;
    session.first(first)?;
    for t in 1..queries.len() {
        session.step(&queries[t..])?;
    }
    Ok(session.into_records())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph_with_index;
    use crate::index::HnswParams;

    fn v(x: &[f32]) -> Vec<f32> {
        x.to_vec()
    }

    #[test]
    fn unit_distances_sum_to_weights() {
        let (a, b) = (v(&[0.0, 0.0]), v(&[1.0, 0.0]));
        let x = ModalityVectors {
            gesture: &a,
            audio: &a,
            text: &a,
        };
        let y = ModalityVectors {
            gesture: &b,
            audio: &b,
            text: &b,
        };
        assert_eq!(node_distance(x, y, &Weights::default()), 7.0);
        assert_eq!(node_distance(x, x, &Weights::default()), 0.0);
    }

    #[test]
    fn hand_arithmetic() {
        let z = v(&[0.0]);
        let (g, a, t) = (v(&[0.5]), v(&[2.0]), v(&[3.0]));
        let d = node_distance(
            ModalityVectors {
                gesture: &z,
                audio: &z,
                text: &z,
            },
            ModalityVectors {
                gesture: &g,
                audio: &a,
                text: &t,
            },
            &Weights::default(),
        );
        assert_eq!(d, 9.0);
    }

    #[test]
    fn probabilities_degenerate_cases() {
        assert_eq!(selection_probabilities(&[3.0], 1.0), vec![1.0]);
        let p = selection_probabilities(&[2.0, 2.0, 2.0], 1.0);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = selection_probabilities(&[1.0, 5.0, 9.0], 1e-6);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = selection_probabilities(&[0.0, 1.0], 1.0);
        assert!((p[0] / p[1] - std::f64::consts::E).abs() < 1e-12);
    }

    fn tiny_graph() -> GestureGraph {
        use crate::embed::FeatureBundle;
        let bundles: Vec<FeatureBundle> = (0..10)
            .map(|i| {
                let x = i as f32;
                FeatureBundle {
                    clip_id: format!("s:{i}"),
                    source_id: "s".into(),
                    segment_index: i,
                    start_frame: 0,
                    gesture: vec![x.sin(), x.cos()],
                    gesture_tail: vec![(x + 1.0).sin(), (x + 1.0).cos()],
                    audio: vec![x * 0.1],
                    text: vec![(x * 0.7).sin()],
                }
            })
            .collect();
        build_graph_with_index(&bundles, HnswParams::default(), 3).unwrap()
    }

    fn query(i: usize, a: f32, t: f32) -> QuerySegment {
        QuerySegment {
            index: i,
            start_frame: 0,
            audio: vec![a],
            text: vec![t],
        }
    }

    #[test]
    fn first_node_is_exact_match() {
        let g = tiny_graph();
        let n = g.node(6).unwrap();
        assert_eq!(generate_first(&g, &query(0, n.audio[0], n.text[0])).unwrap(), 6);
    }

    #[test]
    fn zero_depth_scores_the_head_alone() {
        let g = tiny_graph();
        let cfg = GenerationConfig {
            depth: 0,
            ..GenerationConfig::default()
        };
        let q = [query(0, 0.3, 0.1), query(1, 0.5, 0.2)];
        let tail = g.node(2).unwrap().gesture_tail.clone();
        let p = path_score(&g, 3, &tail, &q, &cfg, &|_| false).unwrap();
        assert_eq!(p.nodes, vec![3]);
        assert_eq!(p.score, step_cost(&tail, g.node(3).unwrap(), &q[0], &cfg.weights));
    }

    #[test]
    fn sessions_never_repeat_without_fallback() {
        let g = tiny_graph();
        let qs: Vec<QuerySegment> = (0..8).map(|i| query(i, i as f32 * 0.1, 0.0)).collect();
        let recs = choose_nodes(&g, &qs, &GenerationConfig::default()).unwrap();
        let mut seen = BTreeSet::new();
        for r in &recs {
            if r.fallbacks.is_empty() {
                assert!(seen.insert(r.node));
            }
        }
        for w in recs.windows(2) {
            assert!(g.has_edge(w[0].node, w[1].node) || !w[1].fallbacks.is_empty());
        }
    }

    #[test]
    fn wrong_query_size_is_rejected() {
        let g = tiny_graph();
        let q = QuerySegment {
            index: 0,
            start_frame: 0,
            audio: vec![0.0, 1.0],
            text: vec![0.0],
        };
        assert!(choose_nodes(&g, &[q], &GenerationConfig::default()).is_err());
    }
}
