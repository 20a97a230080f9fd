//! In-process approximate nearest-neighbor search.
//!
//! One [`Hnsw`] per vector kind, keyed by node id (the bundle's position in
//! the corpus). [`IndexSet`] persists all four in `index.bin`:
//!
//! ```text
//! "BGHX" u32 version u32 sections
//! per section: u8 kind, u32 dim, u32 M, u64 count, u32 ef_construction,
//!   u32 ef_search, u64 seed, i64 entry slot (-1 when empty)
//!   per element: u64 id, u8 levels, per level: u32 n, n × u32 slot
//!   count × dim × f32 vectors
//! ```
//!
//! All integers and floats little-endian.

mod hnsw;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use hnsw::{brute_force_knn, Hnsw, HnswParams};

use crate::embed::FeatureBundle;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BGHX";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorKind {
    Gesture,
    Audio,
    Text,
    Combined,
}

impl VectorKind {
    pub const ALL: [VectorKind; 4] = [
        VectorKind::Gesture,
        VectorKind::Audio,
        VectorKind::Text,
        VectorKind::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VectorKind::Gesture => "gesture",
            VectorKind::Audio => "audio",
            VectorKind::Text => "text",
            VectorKind::Combined => "combined",
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    /// The vector of this kind carried by a bundle (first-half side).
    pub fn of(self, b: &FeatureBundle) -> Vec<f32> {
        match self {
            VectorKind::Gesture => b.gesture.clone(),
            VectorKind::Audio => b.audio.clone(),
            VectorKind::Text => b.text.clone(),
            VectorKind::Combined => b.combined(),
        }
    }
}

/// One line of `vectors.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub clip_id: String,
    pub modality: VectorKind,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexSet {
    indexes: Vec<(VectorKind, Hnsw)>,
}

impl IndexSet {
    /// Builds the four indexes in parallel; node `i` is `bundles[i]`.
    pub fn build(bundles: &[FeatureBundle], params: HnswParams) -> Result<Self> {
        if bundles.is_empty() {
            return Err(Error::Empty("no feature bundles to index"));
        }
        let indexes = VectorKind::ALL
            .par_iter()
            .map(|&kind| {
                let vectors: Vec<Vec<f32>> = bundles.iter().map(|b| kind.of(b)).collect();
                let dim = vectors[0].len();
                let index = Hnsw::build(
                    dim,
                    params,
                    vectors.iter().enumerate().map(|(i, v)| (i as u64, v.as_slice())),
                )?;
                Ok((kind, index))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { indexes })
    }

    pub fn get(&self, kind: VectorKind) -> &Hnsw {
        &self
            .indexes
            .iter()
            .find(|(k, _)| *k == kind)
            .expect("index set holds every kind")
            .1
    }

    pub fn len(&self) -> usize {
        self.indexes[0].1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_set(&mut w, &self.indexes).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let indexes = read_set(&mut r).map_err(|e| match e {
            ReadError::Io(e) => Error::format(path, e.to_string()),
            ReadError::Bad(m) => Error::format(path, m),
        })?;
        let mut kinds: Vec<VectorKind> = indexes.iter().map(|(k, _)| *k).collect();
        kinds.sort();
        if kinds != VectorKind::ALL {
            return Err(Error::format(path, "index set must hold one index per vector kind"));
        }
        Ok(Self { indexes })
    }

    /// Writes every stored vector as a [`VectorRecord`] line.
    pub fn export_jsonl(&self, path: &Path, clip_ids: &[String]) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (kind, index) in &self.indexes {
            for &id in index.ids() {
                let clip_id = clip_ids
                    .get(id as usize)
                    .ok_or_else(|| Error::Invariant(format!("node {id} has no clip id")))?;
                let rec = VectorRecord {
                    clip_id: clip_id.clone(),
                    modality: *kind,
                    vector: index.get(id).expect("listed id").to_vec(),
                };
                let line = serde_json::to_string(&rec).expect("record serializes");
                writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn write_set(w: &mut impl Write, indexes: &[(VectorKind, Hnsw)]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(INDEX_VERSION)?;
    w.write_u32::<LittleEndian>(indexes.len() as u32)?;
    for (kind, h) in indexes {
        w.write_u8(kind.code())?;
        w.write_u32::<LittleEndian>(h.dim as u32)?;
        w.write_u32::<LittleEndian>(h.params.m as u32)?;
        w.write_u64::<LittleEndian>(h.ids.len() as u64)?;
        w.write_u32::<LittleEndian>(h.params.ef_construction as u32)?;
        w.write_u32::<LittleEndian>(h.params.ef_search as u32)?;
        w.write_u64::<LittleEndian>(h.params.seed)?;
        w.write_i64::<LittleEndian>(h.entry.map_or(-1, i64::from))?;
        for (slot, id) in h.ids.iter().enumerate() {
            w.write_u64::<LittleEndian>(*id)?;
            let levels = &h.links[slot];
            w.write_u8(levels.len() as u8)?;
            for list in levels {
                w.write_u32::<LittleEndian>(list.len() as u32)?;
                for n in list {
                    w.write_u32::<LittleEndian>(*n)?;
                }
            }
        }
        for x in &h.vectors {
            w.write_f32::<LittleEndian>(*x)?;
        }
    }
    Ok(())
}

enum ReadError {
    Io(std::io::Error),
    Bad(String),
}

impl From<std::io::Error> for ReadError {
    fn from(e: std::io::Error) -> Self {
        ReadError::Io(e)
    }
}

fn read_set(r: &mut impl Read) -> std::result::Result<Vec<(VectorKind, Hnsw)>, ReadError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ReadError::Bad("not an index file (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != INDEX_VERSION {
        return Err(ReadError::Bad(format!(
            "index version {version}, expected {INDEX_VERSION}"
        )));
    }
    let sections = r.read_u32::<LittleEndian>()?;
    let mut out = Vec::with_capacity(sections as usize);
    for _ in 0..sections {
        let kind = VectorKind::from_code(r.read_u8()?).ok_or_else(|| ReadError::Bad("unknown vector kind".into()))?;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let m = r.read_u32::<LittleEndian>()? as usize;
        let count = r.read_u64::<LittleEndian>()? as usize;
        let params = HnswParams {
            m,
            ef_construction: r.read_u32::<LittleEndian>()? as usize,
            ef_search: r.read_u32::<LittleEndian>()? as usize,
            seed: r.read_u64::<LittleEndian>()?,
        };
        let entry = r.read_i64::<LittleEndian>()?;
        let mut h = Hnsw::new(dim, params).map_err(|e| ReadError::Bad(e.to_string()))?;
        for slot in 0..count {
            let id = r.read_u64::<LittleEndian>()?;
            let levels = r.read_u8()? as usize;
            let mut links = Vec::with_capacity(levels);
            for _ in 0..levels {
                let n = r.read_u32::<LittleEndian>()? as usize;
                let mut list = vec![0u32; n];
                r.read_u32_into::<LittleEndian>(&mut list)?;
                if list.iter().any(|&s| s as usize >= count) {
                    return Err(ReadError::Bad(format!("link out of range at element {slot}")));
                }
                links.push(list);
            }
            if levels == 0 {
                return Err(ReadError::Bad(format!("element {slot} has no layers")));
            }
            if h.slot_of.insert(id, slot as u32).is_some() {
                return Err(ReadError::Bad(format!("duplicate id {id}")));
            }
            h.ids.push(id);
            h.links.push(links);
        }
        h.vectors = vec![0.0; count * dim];
        r.read_f32_into::<LittleEndian>(&mut h.vectors)?;
        h.entry = match entry {
            -1 if count == 0 => None,
            e if e >= 0 && (e as usize) < count => Some(e as u32),
            e => return Err(ReadError::Bad(format!("bad entry point {e}"))),
        };
        out.push((kind, h));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(ReadError::Bad("trailing bytes".into()));
    }
    Ok(out)
}
