//! Raw gesture frames for every node, stored next to `graph.json`.
//!
//! `frames.bin` layout, little-endian:
//!
//! ```text
//! "BGFR" u32 version u64 nodes u32 frames_per_node u32 joints f64 fps
//! nodes × frames_per_node × joints × 3 f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BGFR";
const VERSION: u32 = 1;

/// Full-window joint positions per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFrames {
    pub fps: f64,
    pub joints: usize,
    pub frames_per_node: usize,
    data: Vec<f32>,
}

impl NodeFrames {
    pub fn new(fps: f64, joints: usize, frames_per_node: usize) -> Self {
        Self {
            fps,
            joints,
            frames_per_node,
            data: Vec::new(),
        }
    }

    fn stride(&self) -> usize {
        self.frames_per_node * self.joints * 3
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.stride().max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Appends one node's `frames_per_node × joints·3` window.
    pub fn push(&mut self, window: &DMatrix<f64>) -> Result<()> {
        if window.shape() != (self.frames_per_node, self.joints * 3) {
            return Err(Error::InvalidInput(format!(
                "window shape {:?}, expected ({}, {})",
                window.shape(),
                self.frames_per_node,
                self.joints * 3
            )));
        }
        for r in 0..window.nrows() {
            self.data.extend(window.row(r).iter().map(|&x| x as f32));
        }
        Ok(())
    }

    pub fn window(&self, node: u32) -> Result<DMatrix<f64>> {
        let s = self.stride();
        let start = node as usize * s;
        let slice = self.data.get(start..start + s).ok_or(Error::UnknownNode(node))?;
        Ok(DMatrix::from_row_iterator(
            self.frames_per_node,
            self.joints * 3,
            slice.iter().map(|&x| f64::from(x)),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_u32::<LittleEndian>(VERSION).map_err(io)?;
        w.write_u64::<LittleEndian>(self.len() as u64).map_err(io)?;
        w.write_u32::<LittleEndian>(self.frames_per_node as u32).map_err(io)?;
        w.write_u32::<LittleEndian>(self.joints as u32).map_err(io)?;
        w.write_f64::<LittleEndian>(self.fps).map_err(io)?;
        for x in &self.data {
            w.write_f32::<LittleEndian>(*x).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |m: String| Error::format(path, m);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
        if &magic != MAGIC {
            return Err(bad("not a frames file (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|e| bad(e.to_string()))?;
        if version != VERSION {
            return Err(bad(format!("frames version {version}, expected {VERSION}")));
        }
        let nodes = r.read_u64::<LittleEndian>().map_err(|e| bad(e.to_string()))? as usize;
        let frames_per_node = r.read_u32::<LittleEndian>().map_err(|e| bad(e.to_string()))? as usize;
        let joints = r.read_u32::<LittleEndian>().map_err(|e| bad(e.to_string()))? as usize;
        let fps = r.read_f64::<LittleEndian>().map_err(|e| bad(e.to_string()))?;
        let mut data = vec![0.0f32; nodes * frames_per_node * joints * 3];
        r.read_f32_into::<LittleEndian>(&mut data)
            .map_err(|e| bad(e.to_string()))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
            return Err(bad("trailing bytes".into()));
        }
        Ok(Self {
            fps,
            joints,
            frames_per_node,
            data,
        })
    }
}
