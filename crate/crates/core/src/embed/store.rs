//! On-disk forms of the intermediate featurization stages.
//!
//! ```text
//! recordings.jsonl   one RecordingMeta per line
//! segments.jsonl     one SegmentMeta per line, kept windows in corpus order
//! ingest_report.json IngestReport
//! raw_features.bin   "BGRW" u32 version u64 segments, then per segment the
//!                    seven raw matrices (u32 rows, u32 cols, f64 row-major)
//! halves.json        HalvesHeader (z-scores and encoder ids)
//! halves.bin         "BGHV" u32 version u64 segments, then per segment six
//!                    vectors (first half g/a/t, second half g/a/t) as
//!                    u32 len + f64 values
//! features.jsonl     one FeatureBundle per line
//! ```
//!
//! Integers and floats are little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::features::{
    FeatureBundle, IngestReport, IngestedCorpus, IngestedSegment, Modality, PerModality, RecordingMeta, SegmentHalves,
    SegmentMeta,
};
use super::zscore::ZScore;
use crate::corpus::RawFeatures;
use crate::error::{Error, Result};

pub const RECORDINGS_FILE: &str = "recordings.jsonl";
pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const RAW_FEATURES_FILE: &str = "raw_features.bin";
pub const HALVES_HEADER_FILE: &str = "halves.json";
pub const HALVES_FILE: &str = "halves.bin";
pub const FEATURES_FILE: &str = "features.jsonl";

const RAW_MAGIC: &[u8; 4] = b"BGRW";
const HALVES_MAGIC: &[u8; 4] = b"BGHV";
const VERSION: u32 = 1;

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Blank lines are skipped; errors carry the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::malformed(path, i + 1, e))?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

fn write_matrix(w: &mut impl Write, m: &DMatrix<f64>) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(m.nrows() as u32)?;
    w.write_u32::<LittleEndian>(m.ncols() as u32)?;
    for r in 0..m.nrows() {
        for x in m.row(r).iter() {
            w.write_f64::<LittleEndian>(*x)?;
        }
    }
    Ok(())
}

fn read_matrix(r: &mut impl Read) -> std::io::Result<DMatrix<f64>> {
    let rows = r.read_u32::<LittleEndian>()? as usize;
    let cols = r.read_u32::<LittleEndian>()? as usize;
    let mut data = vec![0.0; rows * cols];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn write_vec(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(v.len() as u32)?;
    v.iter().try_for_each(|x| w.write_f64::<LittleEndian>(*x))
}

fn read_vec(r: &mut impl Read) -> std::io::Result<Vec<f64>> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut v = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut v)?;
    Ok(v)
}

fn header(r: &mut impl Read, magic: &[u8; 4], path: &Path) -> Result<usize> {
    let bad = |m: String| Error::format(path, m);
    let mut got = [0u8; 4];
    r.read_exact(&mut got).map_err(|e| bad(e.to_string()))?;
    if &got != magic {
        return Err(bad("bad magic".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|e| bad(e.to_string()))?;
    if version != VERSION {
        return Err(bad(format!("version {version}, expected {VERSION}")));
    }
    Ok(r.read_u64::<LittleEndian>().map_err(|e| bad(e.to_string()))? as usize)
}

fn expect_end(r: &mut impl Read, path: &Path) -> Result<()> {
    let mut rest = [0u8; 1];
    match r.read(&mut rest) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::format(path, "trailing bytes")),
        Err(e) => Err(Error::io(path, e)),
    }
}

pub fn save_ingested(dir: &Path, corpus: &IngestedCorpus) -> Result<()> {
    write_jsonl(&dir.join(RECORDINGS_FILE), &corpus.recordings)?;
    let metas: Vec<&SegmentMeta> = corpus.segments.iter().map(|s| &s.meta).collect();
    write_jsonl(&dir.join(SEGMENTS_FILE), &metas)?;
    write_json(&dir.join(INGEST_REPORT_FILE), &corpus.report)?;
    let path = dir.join(RAW_FEATURES_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        w.write_all(RAW_MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(corpus.segments.len() as u64)?;
        for s in &corpus.segments {
            let raw = &s.raw;
            write_matrix(&mut w, &raw.gesture_positions)?;
            write_matrix(&mut w, &raw.gesture_derivs)?;
            write_matrix(&mut w, &raw.audio_spectrogram)?;
            write_matrix(&mut w, &raw.audio_embedding)?;
            write_vec(&mut w, &raw.envelope)?;
            write_matrix(&mut w, &raw.processed_spectrogram)?;
            write_matrix(&mut w, &raw.processed_embedding)?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(&path, e))
}

pub fn load_ingested(dir: &Path) -> Result<IngestedCorpus> {
    let recordings: Vec<RecordingMeta> = read_jsonl(&dir.join(RECORDINGS_FILE))?;
    let metas: Vec<SegmentMeta> = read_jsonl(&dir.join(SEGMENTS_FILE))?;
    let report: IngestReport = read_json(&dir.join(INGEST_REPORT_FILE))?;
    let path = dir.join(RAW_FEATURES_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut r = BufReader::new(file);
    let count = header(&mut r, RAW_MAGIC, &path)?;
    if count != metas.len() {
        return Err(Error::format(
            &path,
            format!("{count} raw entries for {} segments", metas.len()),
        ));
    }
    let mut segments = Vec::with_capacity(count);
    for meta in metas {
        let raw = (|| -> std::io::Result<RawFeatures> {
            Ok(RawFeatures {
                gesture_positions: read_matrix(&mut r)?,
                gesture_derivs: read_matrix(&mut r)?,
                audio_spectrogram: read_matrix(&mut r)?,
                audio_embedding: read_matrix(&mut r)?,
                envelope: read_vec(&mut r)?,
                processed_spectrogram: read_matrix(&mut r)?,
                processed_embedding: read_matrix(&mut r)?,
            })
        })()
        .map_err(|e| Error::format(&path, e.to_string()))?;
        if raw.frames() != meta.frames {
            return Err(Error::format(
                &path,
                format!("segment {} frame count differs", meta.clip_id),
            ));
        }
        segments.push(IngestedSegment { meta, raw });
    }
    expect_end(&mut r, &path)?;
    Ok(IngestedCorpus {
        recordings,
        segments,
        report,
    })
}

/// Everything the reduction stage needs besides the half vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalvesHeader {
    pub audio_encoder: String,
    pub text_encoder: String,
    pub zscore: PerModality<ZScore>,
}

pub fn save_halves(dir: &Path, header: &HalvesHeader, halves: &[SegmentHalves]) -> Result<()> {
    write_json(&dir.join(HALVES_HEADER_FILE), header)?;
    let path = dir.join(HALVES_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        w.write_all(HALVES_MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(halves.len() as u64)?;
        for h in halves {
            for m in Modality::ALL {
                write_vec(&mut w, h.first.get(m))?;
            }
            for m in Modality::ALL {
                write_vec(&mut w, h.second.get(m))?;
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(&path, e))
}

/// Pairs the stored half vectors with `segments`, which must be in the
/// order they were written.
pub fn load_halves(dir: &Path, segments: &[SegmentMeta]) -> Result<(HalvesHeader, Vec<SegmentHalves>)> {
    let header: HalvesHeader = read_json(&dir.join(HALVES_HEADER_FILE))?;
    let path = dir.join(HALVES_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut r = BufReader::new(file);
    let count = header_count(&mut r, &path)?;
    if count != segments.len() {
        return Err(Error::format(
            &path,
            format!("{count} entries for {} segments", segments.len()),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for meta in segments {
        let mut six = Vec::with_capacity(6);
        for _ in 0..6 {
            six.push(read_vec(&mut r).map_err(|e| Error::format(&path, e.to_string()))?);
        }
        let mut it = six.into_iter();
        let mut next = || it.next().expect("six vectors");
        let first = PerModality {
            gesture: next(),
            audio: next(),
            text: next(),
        };
        let second = PerModality {
            gesture: next(),
            audio: next(),
            text: next(),
        };
        out.push(SegmentHalves {
            meta: meta.clone(),
            first,
            second,
        });
    }
    expect_end(&mut r, &path)?;
    Ok((header, out))
}

fn header_count(r: &mut impl Read, path: &Path) -> Result<usize> {
    header(r, HALVES_MAGIC, path)
}

pub fn save_bundles(path: &Path, bundles: &[FeatureBundle]) -> Result<()> {
    write_jsonl(path, bundles)
}

pub fn load_bundles(path: &Path) -> Result<Vec<FeatureBundle>> {
    let bundles: Vec<FeatureBundle> = read_jsonl(path)?;
    if bundles.is_empty() {
        return Err(Error::Empty("features file holds no bundles"));
    }
    Ok(bundles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{SyntheticCorpus, SyntheticSpec};
    use crate::corpus::ReferenceAudioEncoder;
    use crate::embed::features::{frame_features, ingest, standardize_and_split, FeatureConfig};
    use crate::embed::TextEncoders;

    #[test]
    fn ingested_corpus_and_halves_round_trip() {
        let spec = SyntheticSpec {
            sources: 1,
            duration_s: 8.0,
            joints: 3,
            ..SyntheticSpec::default()
        };
        let recs = SyntheticCorpus::generate(&spec).recordings;
        let cfg = FeatureConfig::default();
        let corpus = ingest(&recs, &cfg, &ReferenceAudioEncoder).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_ingested(dir.path(), &corpus).unwrap();
        let back = load_ingested(dir.path()).unwrap();
        assert_eq!(back.recordings, corpus.recordings);
        assert_eq!(back.segments.len(), corpus.segments.len());
        for (a, b) in back.segments.iter().zip(&corpus.segments) {
            assert_eq!(a.meta, b.meta);
            assert_eq!(a.raw.processed_spectrogram, b.raw.processed_spectrogram);
            assert_eq!(a.raw.envelope, b.raw.envelope);
        }

        let text = TextEncoders::reference(0, 32, 16, 8, 32).unwrap();
        let frames = frame_features(&back, &text).unwrap();
        let (zscore, halves) = standardize_and_split(&frames).unwrap();
        let header = HalvesHeader {
            audio_encoder: "a".into(),
            text_encoder: "t".into(),
            zscore,
        };
        save_halves(dir.path(), &header, &halves).unwrap();
        let metas: Vec<SegmentMeta> = halves.iter().map(|h| h.meta.clone()).collect();
        let (h2, halves2) = load_halves(dir.path(), &metas).unwrap();
        assert_eq!(h2, header);
        assert_eq!(halves2, halves);
        assert!(load_halves(dir.path(), &metas[1..]).is_err());
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        std::fs::write(&path, "1\n\n2\nnope\n").unwrap();
        let err = read_jsonl::<u32>(&path).unwrap_err().to_string();
        assert!(err.contains(":4:"), "{err}");
    }
}
