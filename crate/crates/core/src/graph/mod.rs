//! The immutable gesture graph.
//!
//! One node per kept corpus window. Edges come from nearest-neighbor
//! searches on each vector kind (gesture, audio, text, combined), plus
//! natural continuations `(source, i) → (source, i+1)`. Edges pointing at a
//! node's immediate predecessor in the same source are dropped afterwards.

mod frames;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use frames::NodeFrames;

use crate::embed::FeatureBundle;
use crate::error::{Error, Result};
use crate::index::{HnswParams, IndexSet, VectorKind};
use crate::linalg::{concat, l2};

pub const GRAPH_VERSION: u32 = 1;
pub const DEFAULT_NN_COUNT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    NnGesture,
    NnAudio,
    NnText,
    NnCombined,
    Natural,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 5] = [
        EdgeKind::NnGesture,
        EdgeKind::NnAudio,
        EdgeKind::NnText,
        EdgeKind::NnCombined,
        EdgeKind::Natural,
    ];

    pub fn nn(kind: VectorKind) -> Self {
        match kind {
            VectorKind::Gesture => EdgeKind::NnGesture,
            VectorKind::Audio => EdgeKind::NnAudio,
            VectorKind::Text => EdgeKind::NnText,
            VectorKind::Combined => EdgeKind::NnCombined,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::NnGesture => "nn_gesture",
            EdgeKind::NnAudio => "nn_audio",
            EdgeKind::NnText => "nn_text",
            EdgeKind::NnCombined => "nn_combined",
            EdgeKind::Natural => "natural",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureEdge {
    pub from: u32,
    pub to: u32,
    pub kind: EdgeKind,
    /// 1-based nearest-neighbor rank (self excluded); 0 for natural edges.
    pub rank: u32,
    pub dist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureNode {
    pub id: u32,
    pub clip_id: String,
    pub source_id: String,
    pub segment_index: usize,
    pub start_frame: usize,
    pub gesture: Vec<f32>,
    pub gesture_tail: Vec<f32>,
    pub audio: Vec<f32>,
    pub text: Vec<f32>,
}

impl GestureNode {
    pub fn combined(&self) -> Vec<f32> {
        concat(&[&self.gesture, &self.audio, &self.text])
    }

    /// The audio and text part of the combined vector.
    pub fn audio_text(&self) -> Vec<f32> {
        concat(&[&self.audio, &self.text])
    }

    pub fn vector(&self, kind: VectorKind) -> Vec<f32> {
        match kind {
            VectorKind::Gesture => self.gesture.clone(),
            VectorKind::Audio => self.audio.clone(),
            VectorKind::Text => self.text.clone(),
            VectorKind::Combined => self.combined(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorDims {
    pub gesture: usize,
    pub audio: usize,
    pub text: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub nn_count: usize,
    /// `min(nn_count, nodes − 1)`.
    pub nn_count_effective: usize,
    pub dims: VectorDims,
    pub index: HnswParams,
    /// sha256 over the serialized feature bundles.
    pub corpus_hash: String,
    pub reversed_removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GraphFile {
    version: u32,
    meta: GraphMeta,
    nodes: Vec<GestureNode>,
    edges: Vec<GestureEdge>,
}

/// Frozen after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureGraph {
    meta: GraphMeta,
    nodes: Vec<GestureNode>,
    /// Sorted by `(from, kind, rank, to)`.
    edges: Vec<GestureEdge>,
    /// `edges[offsets[n]..offsets[n + 1]]` leave node `n`.
    offsets: Vec<usize>,
}

/// Which edge kinds [`GestureGraph::neighbors`] considers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KindFilter {
    /// Every kind, one entry per target (smallest distance wins).
    All,
    Only(Vec<EdgeKind>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub to: u32,
    pub dist: f64,
    pub kind: EdgeKind,
}

pub fn corpus_hash(bundles: &[FeatureBundle]) -> String {
    let mut h = Sha256::new();
    for b in bundles {
        h.update(serde_json::to_vec(b).expect("bundle serializes"));
        h.update(b"\n");
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sort_edges(edges: &mut [GestureEdge]) {
    edges.sort_by(|a, b| {
        (a.from, a.kind, a.rank, a.to)
            .cmp(&(b.from, b.kind, b.rank, b.to))
            .then(a.dist.total_cmp(&b.dist))
    });
}

/// Index of each node's immediate successor within its source.
pub fn successors(nodes: &[GestureNode]) -> Vec<Option<u32>> {
    let mut by_key: BTreeMap<(&str, usize), u32> = BTreeMap::new();
    for n in nodes {
        by_key.insert((n.source_id.as_str(), n.segment_index), n.id);
    }
    nodes
        .iter()
        .map(|n| by_key.get(&(n.source_id.as_str(), n.segment_index + 1)).copied())
        .collect()
}

/// True when `to` is the window right before `from` in the same source.
pub fn is_reversed(from: &GestureNode, to: &GestureNode) -> bool {
    from.source_id == to.source_id && to.segment_index + 1 == from.segment_index
}

pub fn nodes_from_bundles(bundles: &[FeatureBundle]) -> Vec<GestureNode> {
    bundles
        .iter()
        .enumerate()
        .map(|(i, b)| GestureNode {
            id: i as u32,
            clip_id: b.clip_id.clone(),
            source_id: b.source_id.clone(),
            segment_index: b.segment_index,
            start_frame: b.start_frame,
            gesture: b.gesture.clone(),
            gesture_tail: b.gesture_tail.clone(),
            audio: b.audio.clone(),
            text: b.text.clone(),
        })
        .collect()
}

/// Builds the graph from bundles and the index set built over them.
pub fn build_graph(bundles: &[FeatureBundle], indexes: &IndexSet, nn_count: usize) -> Result<GestureGraph> {
    if bundles.is_empty() {
        return Err(Error::Empty("no corpus segments for the graph"));
    }
    if indexes.len() != bundles.len() {
        return Err(Error::DimensionMismatch {
            context: "index size vs bundle count",
            expected: bundles.len(),
            actual: indexes.len(),
        });
    }
    if nn_count == 0 {
        return Err(Error::Config("nn_count must be at least 1".into()));
    }
    let nodes = nodes_from_bundles(bundles);
    let mut seen = std::collections::HashSet::new();
    for n in &nodes {
        if !n
            .gesture
            .iter()
            .chain(&n.gesture_tail)
            .chain(&n.audio)
            .chain(&n.text)
            .all(|x| x.is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "node {} has non-finite vectors",
                n.clip_id
            )));
        }
        if !seen.insert((n.source_id.as_str(), n.segment_index)) {
            return Err(Error::InvalidInput(format!(
                "duplicate segment ({}, {})",
                n.source_id, n.segment_index
            )));
        }
    }
    let count = nodes.len();
    let nn = nn_count.min(count - 1);
    if nn < nn_count {
        log::warn!("nn_count {nn_count} clamped to {nn} for {count} nodes");
    }

    let mut edges = Vec::new();
    let mut removed = 0;
    if nn > 0 {
        for kind in VectorKind::ALL {
            let index = indexes.get(kind);
            for node in &nodes {
                let q = node.vector(kind);
                let found = index.search_knn(&q, nn + 1)?;
                let mut rank = 0u32;
                for (id, dist) in found {
                    if id == u64::from(node.id) {
                        continue;
                    }
                    if rank as usize == nn {
                        break;
                    }
                    rank += 1;
                    let to = &nodes[id as usize];
                    if is_reversed(node, to) {
                        removed += 1;
                        continue;
                    }
                    edges.push(GestureEdge {
                        from: node.id,
                        to: to.id,
                        kind: EdgeKind::nn(kind),
                        rank,
                        dist,
                    });
                }
            }
        }
    }
    for (node, next) in nodes.iter().zip(successors(&nodes)) {
        if let Some(next) = next {
            edges.push(GestureEdge {
                from: node.id,
                to: next,
                kind: EdgeKind::Natural,
                rank: 0,
                dist: l2(&node.combined(), &nodes[next as usize].combined()),
            });
        }
    }
    let first = &nodes[0];
    let meta = GraphMeta {
        nn_count,
        nn_count_effective: nn,
        dims: VectorDims {
            gesture: first.gesture.len(),
            audio: first.audio.len(),
            text: first.text.len(),
        },
        index: *indexes.get(VectorKind::Combined).params(),
        corpus_hash: corpus_hash(bundles),
        reversed_removed: removed,
    };
    GestureGraph::from_parts(meta, nodes, edges)
}

/// Convenience: builds the index set and the graph in one go.
pub fn build_graph_with_index(bundles: &[FeatureBundle], params: HnswParams, nn_count: usize) -> Result<GestureGraph> {
    let indexes = IndexSet::build(bundles, params)?;
    build_graph(bundles, &indexes, nn_count)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub edges: usize,
    /// out-degree → number of nodes
    pub out_degree_histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub per_kind: BTreeMap<EdgeKind, KindStats>,
    /// Nodes no edge points to.
    pub isolated: Vec<u32>,
    /// Nodes without outgoing edges.
    pub dead_ends: Vec<u32>,
    pub reversed_removed: usize,
    pub nn_count: usize,
    pub nn_count_effective: usize,
}

impl GestureGraph {
    /// Validates and freezes a node and edge set.
    pub fn from_parts(meta: GraphMeta, nodes: Vec<GestureNode>, mut edges: Vec<GestureEdge>) -> Result<Self> {
        for (i, n) in nodes.iter().enumerate() {
            if n.id as usize != i {
                return Err(Error::Invariant(format!("node at position {i} has id {}", n.id)));
            }
            let dims = (n.gesture.len(), n.gesture_tail.len(), n.audio.len(), n.text.len());
            if dims != (meta.dims.gesture, meta.dims.gesture, meta.dims.audio, meta.dims.text) {
                return Err(Error::InvalidInput(format!(
                    "node {} vector sizes {dims:?} differ from graph dims",
                    n.id
                )));
            }
        }
        for e in &edges {
            if e.from as usize >= nodes.len() || e.to as usize >= nodes.len() {
                return Err(Error::UnknownNode(e.from.max(e.to)));
            }
            if e.from == e.to {
                return Err(Error::Invariant(format!("self-loop on node {}", e.from)));
            }
            if is_reversed(&nodes[e.from as usize], &nodes[e.to as usize]) {
                return Err(Error::Invariant(format!("reversed edge {} -> {}", e.from, e.to)));
            }
        }
        sort_edges(&mut edges);
        let mut offsets = vec![0usize; nodes.len() + 1];
        for e in &edges {
            offsets[e.from as usize + 1] += 1;
        }
        for i in 0..nodes.len() {
            offsets[i + 1] += offsets[i];
        }
        Ok(Self {
            meta,
            nodes,
            edges,
            offsets,
        })
    }

    pub fn meta(&self) -> &GraphMeta {
        &self.meta
    }

    pub fn nodes(&self) -> &[GestureNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: u32) -> Result<&GestureNode> {
        self.nodes.get(id as usize).ok_or(Error::UnknownNode(id))
    }

    pub fn edges(&self) -> &[GestureEdge] {
        &self.edges
    }

    pub fn out_edges(&self, id: u32) -> Result<&[GestureEdge]> {
        self.node(id)?;
        Ok(&self.edges[self.offsets[id as usize]..self.offsets[id as usize + 1]])
    }

    /// Outgoing edges ascending by `(dist, to, kind)`, at most `limit`.
    pub fn neighbors(&self, id: u32, filter: &KindFilter, limit: usize) -> Result<Vec<Neighbor>> {
        let mut out: Vec<Neighbor> = self
            .out_edges(id)?
            .iter()
            .filter(|e| match filter {
                KindFilter::All => true,
                KindFilter::Only(kinds) => kinds.contains(&e.kind),
            })
            .map(|e| Neighbor {
                to: e.to,
                dist: e.dist,
                kind: e.kind,
            })
            .collect();
        if *filter == KindFilter::All {
            out.sort_by(|a, b| {
                a.to.cmp(&b.to)
                    .then(a.dist.total_cmp(&b.dist))
                    .then(a.kind.cmp(&b.kind))
            });
            out.dedup_by_key(|n| n.to);
        }
        out.sort_by(|a, b| {
            a.dist
                .total_cmp(&b.dist)
                .then(a.to.cmp(&b.to))
                .then(a.kind.cmp(&b.kind))
        });
        out.truncate(limit);
        Ok(out)
    }

    /// True when some edge (any kind) goes from `a` to `b`.
    pub fn has_edge(&self, a: u32, b: u32) -> bool {
        self.out_edges(a).is_ok_and(|es| es.iter().any(|e| e.to == b))
    }

    pub fn stats(&self) -> GraphStats {
        let n = self.nodes.len();
        let mut per_kind: BTreeMap<EdgeKind, KindStats> = BTreeMap::new();
        let mut indegree = vec![0usize; n];
        for kind in EdgeKind::ALL {
            let mut degree = vec![0usize; n];
            let mut count = 0;
            for e in self.edges.iter().filter(|e| e.kind == kind) {
                degree[e.from as usize] += 1;
                count += 1;
            }
            let mut hist = BTreeMap::new();
            for d in degree {
                *hist.entry(d).or_insert(0) += 1;
            }
            per_kind.insert(
                kind,
                KindStats {
                    edges: count,
                    out_degree_histogram: hist,
                },
            );
        }
        for e in &self.edges {
            indegree[e.to as usize] += 1;
        }
        GraphStats {
            nodes: n,
            edges: self.edges.len(),
            per_kind,
            isolated: (0..n as u32).filter(|&i| indegree[i as usize] == 0).collect(),
            dead_ends: (0..n as u32)
                .filter(|&i| self.offsets[i as usize] == self.offsets[i as usize + 1])
                .collect(),
            reversed_removed: self.meta.reversed_removed,
            nn_count: self.meta.nn_count,
            nn_count_effective: self.meta.nn_count_effective,
        }
    }

    /// Canonical `graph.json` bytes.
    pub fn to_json(&self) -> Vec<u8> {
        let file = GraphFile {
            version: GRAPH_VERSION,
            meta: self.meta.clone(),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        };
        let mut bytes = serde_json::to_vec(&file).expect("graph serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json(bytes: &[u8], path: &Path) -> Result<Self> {
        let file: GraphFile = serde_json::from_slice(bytes).map_err(|e| Error::format(path, e.to_string()))?;
        if file.version != GRAPH_VERSION {
            return Err(Error::format(
                path,
                format!("graph version {} (expected {GRAPH_VERSION})", file.version),
            ));
        }
        Self::from_parts(file.meta, file.nodes, file.edges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes, path)
    }
}
