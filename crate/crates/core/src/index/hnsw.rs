//! Hierarchical navigable small-world graph.
//!
//! Levels are drawn from a seeded ChaCha stream keyed by insertion slot, so
//! the same seed and insertion order rebuild an identical structure. Layer 0
//! allows `2·M` links, upper layers `M`. Neighbors are chosen with the
//! diversity heuristic, back-filling pruned candidates to keep degree up.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{l2, l2_squared_fast};

const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 64,
            ef_construction: 200,
            ef_search: 100,
            seed: 0,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.ef_construction == 0 || self.ef_search == 0 {
            return Err(Error::Config(format!(
                "hnsw needs M >= 2 and positive ef values, got M={} ef_construction={} ef_search={}",
                self.m, self.ef_construction, self.ef_search
            )));
        }
        Ok(())
    }
}

/// Distance paired with a slot; ordered by distance, then slot.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored(f32, u32);

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hnsw {
    pub(crate) params: HnswParams,
    pub(crate) dim: usize,
    pub(crate) ids: Vec<u64>,
    pub(crate) vectors: Vec<f32>,
    /// `links[slot][level]` lists neighbor slots.
    pub(crate) links: Vec<Vec<Vec<u32>>>,
    pub(crate) entry: Option<u32>,
    pub(crate) slot_of: HashMap<u64, u32>,
}

impl Hnsw {
    pub fn new(dim: usize, params: HnswParams) -> Result<Self> {
        params.validate()?;
        if dim == 0 {
            return Err(Error::Config("index dimension must be positive".into()));
        }
        Ok(Self {
            params,
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            links: Vec::new(),
            entry: None,
            slot_of: HashMap::new(),
        })
    }

    /// Inserts `records` in order.
    pub fn build<'a>(
        dim: usize,
        params: HnswParams,
        records: impl IntoIterator<Item = (u64, &'a [f32])>,
    ) -> Result<Self> {
        let mut index = Self::new(dim, params)?;
        for (id, v) in records {
            index.insert(id, v)?;
        }
        Ok(index)
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn get(&self, id: u64) -> Option<&[f32]> {
        self.slot_of.get(&id).map(|&s| self.vector(s))
    }

    /// Highest layer of the entry point, or `None` when empty.
    pub fn max_level(&self) -> Option<usize> {
        self.entry.map(|e| self.links[e as usize].len() - 1)
    }

    /// Number of layers element `id` lives on.
    pub fn levels_of(&self, id: u64) -> Option<usize> {
        self.slot_of.get(&id).map(|&s| self.links[s as usize].len())
    }

    /// Layer-0 neighbor ids of `id`.
    pub fn base_neighbors(&self, id: u64) -> Option<Vec<u64>> {
        self.slot_of.get(&id).map(|&s| {
            self.links[s as usize][0]
                .iter()
                .map(|&n| self.ids[n as usize])
                .collect()
        })
    }

    fn vector(&self, slot: u32) -> &[f32] {
        let s = slot as usize * self.dim;
        &self.vectors[s..s + self.dim]
    }

    fn dist(&self, q: &[f32], slot: u32) -> f32 {
        l2_squared_fast(q, self.vector(slot))
    }

    fn max_links(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn draw_level(&self, slot: usize) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        rng.set_stream(slot as u64);
        let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
        let ml = 1.0 / (self.params.m as f64).ln();
        ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL)
    }

    pub fn insert(&mut self, id: u64, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "index insert",
                expected: self.dim,
                actual: v.len(),
            });
        }
        if self.slot_of.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput(format!("vector {id} has non-finite values")));
        }
        let slot = self.ids.len() as u32;
        let level = self.draw_level(slot as usize);
        self.ids.push(id);
        self.vectors.extend_from_slice(v);
        self.links.push(vec![Vec::new(); level + 1]);
        self.slot_of.insert(id, slot);

        let Some(entry) = self.entry else {
            self.entry = Some(slot);
            return Ok(());
        };
        let top = self.links[entry as usize].len() - 1;
        let q = v.to_vec();
        let mut ep = vec![Scored(self.dist(&q, entry), entry)];
        for lc in (level + 1..=top).rev() {
            ep = self.search_layer(&q, &ep, 1, lc);
        }
        for lc in (0..=level.min(top)).rev() {
            let found = self.search_layer(&q, &ep, self.params.ef_construction, lc);
            let chosen = self.select_neighbors(&found, self.params.m);
            self.links[slot as usize][lc] = chosen.iter().map(|s| s.1).collect();
            for &Scored(_, n) in &chosen {
                self.connect(n, slot, lc);
            }
            ep = found;
        }
        if level > top {
            self.entry = Some(slot);
        }
        Ok(())
    }

    /// Adds `to` to `from`'s list at `level`, shrinking it if it overflows.
    fn connect(&mut self, from: u32, to: u32, level: usize) {
        let limit = self.max_links(level);
        let list = &mut self.links[from as usize][level];
        list.push(to);
        if list.len() <= limit {
            return;
        }
        let base = self.vector(from).to_vec();
        let mut cands: Vec<Scored> = self.links[from as usize][level]
            .iter()
            .map(|&n| Scored(self.dist(&base, n), n))
            .collect();
        cands.sort();
        let kept = self.select_neighbors(&cands, limit);
        self.links[from as usize][level] = kept.iter().map(|s| s.1).collect();
    }

    /// Diversity heuristic over ascending `cands`, back-filled to `m`.
    fn select_neighbors(&self, cands: &[Scored], m: usize) -> Vec<Scored> {
        let mut kept: Vec<Scored> = Vec::with_capacity(m);
        let mut pruned = Vec::new();
        for &c in cands {
            if kept.len() >= m {
                break;
            }
            let cv = self.vector(c.1);
            if kept.iter().all(|k| l2_squared_fast(cv, self.vector(k.1)) > c.0) {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        for c in pruned {
            if kept.len() >= m {
                break;
            }
            kept.push(c);
        }
        kept
    }

    /// Best-first search on one layer; returns up to `ef` results ascending.
    fn search_layer(&self, q: &[f32], entry: &[Scored], ef: usize, level: usize) -> Vec<Scored> {
        let mut visited = vec![0u64; self.ids.len().div_ceil(64)];
        let mut mark = |s: u32| {
            let (w, b) = (s as usize / 64, s as usize % 64);
            let seen = visited[w] >> b & 1 == 1;
            visited[w] |= 1 << b;
            seen
        };
        let mut frontier: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        let mut best: BinaryHeap<Scored> = BinaryHeap::new();
        for &e in entry {
            if !mark(e.1) {
                frontier.push(Reverse(e));
                best.push(e);
            }
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(Reverse(c)) = frontier.pop() {
            if best.len() >= ef && c > *best.peek().expect("non-empty") {
                break;
            }
            for &n in &self.links[c.1 as usize][level] {
                if mark(n) {
                    continue;
                }
                let s = Scored(self.dist(q, n), n);
                if best.len() < ef || s < *best.peek().expect("non-empty") {
                    frontier.push(Reverse(s));
                    best.push(s);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    /// Approximate k nearest neighbors with the configured `ef_search`.
    pub fn search_knn(&self, q: &[f32], k: usize) -> Result<Vec<(u64, f64)>> {
        self.search_knn_ef(q, k, self.params.ef_search)
    }

    /// Approximate k nearest neighbors; ascending `(distance, id)`.
    ///
    /// When the index holds no more than `ef` elements the scan is exact.
    pub fn search_knn_ef(&self, q: &[f32], k: usize, ef: usize) -> Result<Vec<(u64, f64)>> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "index search",
                expected: self.dim,
                actual: q.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        let Some(entry) = self.entry else {
            return Err(Error::Empty("index"));
        };
        let ef = ef.max(k);
        let slots: Vec<u32> = if self.len() <= ef {
            (0..self.len() as u32).collect()
        } else {
            let top = self.links[entry as usize].len() - 1;
            let mut ep = vec![Scored(self.dist(q, entry), entry)];
            for lc in (1..=top).rev() {
                ep = self.search_layer(q, &ep, 1, lc);
            }
            self.search_layer(q, &ep, ef, 0).into_iter().map(|s| s.1).collect()
        };
        let mut out: Vec<(u64, f64)> = slots
            .into_iter()
            .map(|s| (self.ids[s as usize], l2(q, self.vector(s))))
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out.truncate(k);
        Ok(out)
    }
}

/// Exact scan; ascending `(distance, id)`, at most `k` results.
pub fn brute_force_knn<'a>(
    records: impl IntoIterator<Item = (u64, &'a [f32])>,
    q: &[f32],
    k: usize,
) -> Vec<(u64, f64)> {
    let mut out: Vec<(u64, f64)> = records.into_iter().map(|(id, v)| (id, l2(q, v))).collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    out.truncate(k);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    fn build(vs: &[Vec<f32>], params: HnswParams) -> Hnsw {
        Hnsw::build(
            vs[0].len(),
            params,
            vs.iter().enumerate().map(|(i, v)| (i as u64, v.as_slice())),
        )
        .unwrap()
    }

    #[test]
    fn three_point_example() {
        let pts = [vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0]];
        let idx = build(&pts, HnswParams::default());
        let r = idx.search_knn(&[0.9, 0.0], 1).unwrap();
        assert_eq!(r[0].0, 1);
    }

    #[test]
    fn inserted_vectors_are_found_at_zero() {
        let vs = random_vectors(400, 16, 1);
        let idx = build(
            &vs,
            HnswParams {
                ef_search: 32,
                ..HnswParams::default()
            },
        );
        for (i, v) in vs.iter().enumerate() {
            let r = idx.search_knn(v, 1).unwrap();
            assert_eq!(r[0], (i as u64, 0.0));
        }
    }

    #[test]
    fn all_elements_live_on_layer_zero() {
        let vs = random_vectors(1000, 8, 2);
        let idx = build(&vs, HnswParams::default());
        assert_eq!(idx.len(), 1000);
        for i in 0..1000u64 {
            assert!(idx.levels_of(i).unwrap() >= 1);
            assert!(!idx.base_neighbors(i).unwrap().is_empty());
        }
    }

    #[test]
    fn same_seed_same_structure() {
        let vs = random_vectors(300, 12, 3);
        assert_eq!(build(&vs, HnswParams::default()), build(&vs, HnswParams::default()));
        let other = build(
            &vs,
            HnswParams {
                seed: 9,
                ..HnswParams::default()
            },
        );
        assert_ne!(other.links, build(&vs, HnswParams::default()).links);
    }

    #[test]
    fn small_index_matches_brute_force_exactly() {
        let vs = random_vectors(50, 6, 4);
        let idx = build(&vs, HnswParams::default());
        for q in random_vectors(20, 6, 5) {
            let exact = brute_force_knn(vs.iter().enumerate().map(|(i, v)| (i as u64, v.as_slice())), &q, 10);
            assert_eq!(idx.search_knn(&q, 10).unwrap(), exact);
        }
    }

    #[test]
    fn errors() {
        let mut idx = Hnsw::new(2, HnswParams::default()).unwrap();
        assert!(matches!(idx.search_knn(&[0.0, 0.0], 1), Err(Error::Empty(_))));
        idx.insert(7, &[0.0, 0.0]).unwrap();
        assert!(matches!(idx.insert(7, &[1.0, 0.0]), Err(Error::DuplicateId(7))));
        assert!(matches!(idx.insert(8, &[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(idx.search_knn(&[0.0, 0.0], 0).is_err());
    }

    #[test]
    fn brute_force_ties_and_short_sets() {
        let pts = [vec![1.0f32, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]];
        let r = brute_force_knn(
            pts.iter().enumerate().map(|(i, v)| (i as u64 + 10, v.as_slice())),
            &[0.0, 0.0],
            5,
        );
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![10, 11, 12]);
    }
}
