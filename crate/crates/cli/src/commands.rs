//! Stage implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use beatgraph::corpus::io::{list_recordings, read_recording, read_words};
use beatgraph::corpus::synthetic::{SyntheticCorpus, SyntheticSpec};
use beatgraph::corpus::{segment_count, AudioEncoder, AudioTrack, ReferenceAudioEncoder};
use beatgraph::embed::store::{
    load_bundles, load_halves, load_ingested, read_json, read_jsonl, save_bundles, save_halves, save_ingested,
    write_jsonl, HalvesHeader, FEATURES_FILE, HALVES_FILE, HALVES_HEADER_FILE, INGEST_REPORT_FILE, RAW_FEATURES_FILE,
    RECORDINGS_FILE, SEGMENTS_FILE,
};
use beatgraph::embed::text::PrecomputedContext;
use beatgraph::embed::{
    fit_pca_models, frame_features_per_recording, ingest as ingest_corpus, project_bundles, standardize_and_split,
    ContextEncoder, FeatureModel, IngestReport, QueryFeaturizer, QuerySegment, SegmentMeta, TextEncoders,
    FEATURE_MODEL_VERSION,
};
use beatgraph::graph::{build_graph as build_gesture_graph, GestureGraph, NodeFrames, GRAPH_VERSION};
use beatgraph::index::{IndexSet, INDEX_VERSION};
use beatgraph::synth::iconic::{load_library, load_placements, save_library, synthetic_library};
use beatgraph::synth::timeline::{FRAMES_FILE, TIMELINE_FILE, TIMELINE_VERSION};
use beatgraph::synth::{assemble, blend_iconic, check_frames, MotionTimeline, Session};
use serde::de::IgnoredAny;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, TextEncoderChoice};
use crate::error::CliError;
use crate::manifest::{hash_file, hash_tree, sha256_hex, RunManifest, StageRecord, RESOLVED_CONFIG_FILE};
use crate::{BlendArgs, GenerateArgs, SynthArgs};

pub const PCA_MODEL_FILE: &str = "pca_models.json";
pub const INDEX_FILE: &str = "index.bin";
pub const VECTORS_FILE: &str = "vectors.jsonl";
pub const GRAPH_FILE: &str = "graph.json";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const TEXT_CONTEXT_FILE: &str = "text_context.jsonl";

struct Stage<'a> {
    name: &'static str,
    cfg: &'a PipelineConfig,
    started: Instant,
}

impl<'a> Stage<'a> {
    fn begin(name: &'static str, cfg: &'a PipelineConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(&cfg.out).map_err(|e| beatgraph::Error::Io {
            path: cfg.out.clone(),
            source: e,
        })?;
        log::info!("{name}: output directory {}", cfg.out.display());
        Ok(Self {
            name,
            cfg,
            started: Instant::now(),
        })
    }

    fn out(&self, file: &str) -> PathBuf {
        self.cfg.out.join(file)
    }

    /// Writes the resolved config and merges this stage into the manifest.
    fn finish(
        self,
        outputs: &[PathBuf],
        edit: impl FnOnce(&mut RunManifest, &mut StageRecord),
    ) -> Result<(), CliError> {
        let resolved = self.cfg.to_toml();
        let path = self.out(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, &resolved).map_err(|e| beatgraph::Error::Io { path, source: e })?;
        let mut manifest = RunManifest::load_or_default(&self.cfg.out)?;
        manifest.config_hash = sha256_hex(resolved.as_bytes());
        for (k, v) in [
            ("feature_model", FEATURE_MODEL_VERSION),
            ("index", INDEX_VERSION),
            ("graph", GRAPH_VERSION),
            ("timeline", TIMELINE_VERSION),
        ] {
            manifest.versions.insert(k.into(), v);
        }
        let mut record = StageRecord::default();
        for p in outputs {
            let name = p
                .strip_prefix(&self.cfg.out)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned();
            record.outputs.insert(name, hash_file(p)?);
        }
        edit(&mut manifest, &mut record);
        record.seconds = self.started.elapsed().as_secs_f64();
        log::info!("{} finished in {:.2}s", self.name, record.seconds);
        manifest.stages.insert(self.name.into(), record);
        manifest.save_atomic(&self.cfg.out)
    }
}

fn need(path: &Path, producer: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Input(format!(
            "expected {} but it does not exist; run `beatgraph {producer}` first (or pass the path explicitly)",
            path.display()
        )))
    }
}

fn text_encoder_for_corpus(
    cfg: &PipelineConfig,
    source_ids: &[String],
) -> Result<Vec<Box<dyn ContextEncoder>>, CliError> {
    match cfg.text_encoder {
        TextEncoderChoice::Reference => {
            let f = &cfg.features;
            source_ids
                .iter()
                .map(|_| {
                    let enc =
                        TextEncoders::reference(f.encoder_seed, f.word_dim, f.sequence_dim, f.tx_short, f.tx_long)?;
                    Ok(Box::new(enc) as Box<dyn ContextEncoder>)
                })
                .collect()
        }
        TextEncoderChoice::Precomputed => {
            let corpus = cfg.corpus.as_ref().ok_or_else(|| {
                CliError::Config("the precomputed text encoder needs the corpus directory in the config".into())
            })?;
            source_ids
                .iter()
                .map(|id| load_precomputed(&corpus.join(id).join(TEXT_CONTEXT_FILE)))
                .collect()
        }
    }
}

fn load_precomputed(path: &Path) -> Result<Box<dyn ContextEncoder>, CliError> {
    let vectors: Vec<Vec<f64>> = read_jsonl(path)?;
    Ok(Box::new(PrecomputedContext::new(vectors)?))
}

pub fn ingest(cfg: &PipelineConfig) -> Result<(), CliError> {
    let corpus = cfg
        .corpus
        .clone()
        .ok_or_else(|| CliError::Config("no corpus directory: pass --corpus or set `corpus` in the config".into()))?;
    let stage = Stage::begin("ingest", cfg)?;
    let dirs = list_recordings(&corpus).map_err(|e| match e {
        beatgraph::Error::InvalidInput(m) => CliError::Input(m),
        e => e.into(),
    })?;
    let recordings = dirs.iter().map(|d| read_recording(d)).collect::<Result<Vec<_>, _>>()?;
    let ingested = ingest_corpus(&recordings, &cfg.features, &ReferenceAudioEncoder)?;
    save_ingested(&cfg.out, &ingested)?;
    let mut corpus_hash = String::new();
    for d in &dirs {
        corpus_hash.push_str(&hash_tree(d)?);
    }
    let r = &ingested.report;
    println!(
        "ingested {} recordings: {} windows, {} segments kept ({} low confidence, {} static)",
        r.recordings, r.windows, r.kept, r.dropped_low_confidence, r.dropped_static
    );
    let outputs = [RECORDINGS_FILE, SEGMENTS_FILE, INGEST_REPORT_FILE, RAW_FEATURES_FILE].map(|f| stage.out(f));
    stage.finish(&outputs, |m, _| {
        m.corpus_hash = Some(sha256_hex(corpus_hash.as_bytes()))
    })
}

pub fn features(cfg: &PipelineConfig) -> Result<(), CliError> {
    let stage = Stage::begin("features", cfg)?;
    need(&stage.out(SEGMENTS_FILE), "ingest")?;
    let corpus = load_ingested(&cfg.out)?;
    let ids: Vec<String> = corpus.recordings.iter().map(|r| r.source_id.clone()).collect();
    let encoders = text_encoder_for_corpus(cfg, &ids)?;
    let refs: Vec<&dyn ContextEncoder> = encoders.iter().map(|e| e.as_ref()).collect();
    let frames = frame_features_per_recording(&corpus, &refs)?;
    let (zscore, halves) = standardize_and_split(&frames)?;
    let header = HalvesHeader {
        audio_encoder: ReferenceAudioEncoder.id().to_string(),
        text_encoder: refs.first().map(|e| e.id()).unwrap_or_default(),
        zscore,
    };
    save_halves(&cfg.out, &header, &halves)?;
    println!("standardized {} segments", halves.len());
    let outputs = [stage.out(HALVES_HEADER_FILE), stage.out(HALVES_FILE)];
    stage.finish(&outputs, |_, _| {})
}

pub fn fit_pca(cfg: &PipelineConfig) -> Result<(), CliError> {
    let stage = Stage::begin("fit-pca", cfg)?;
    need(&stage.out(HALVES_FILE), "features")?;
    let metas: Vec<SegmentMeta> = read_jsonl(&stage.out(SEGMENTS_FILE))?;
    let report: IngestReport = read_json(&stage.out(INGEST_REPORT_FILE))?;
    let (header, halves) = load_halves(&cfg.out, &metas)?;
    let pca = fit_pca_models(&halves, cfg.features.target_dim)?;
    let bundles = project_bundles(&halves, &pca)?;
    let first = &metas[0];
    let model = FeatureModel {
        version: FEATURE_MODEL_VERSION,
        config: cfg.features.clone(),
        fps: first.fps,
        window_frames: first.frames,
        joints: first.joints,
        spectrogram_max: report.spectrogram_max,
        audio_encoder: header.audio_encoder,
        text_encoder: header.text_encoder,
        zscore: header.zscore,
        pca,
    };
    let model_path = stage.out(PCA_MODEL_FILE);
    model.save(&model_path)?;
    save_bundles(&stage.out(FEATURES_FILE), &bundles)?;
    let dims = model.dims();
    println!(
        "reduced {} segments to gesture {} / audio {} / text {} dims",
        bundles.len(),
        dims.gesture,
        dims.audio,
        dims.text
    );
    for (name, p) in [
        ("gesture", &model.pca.gesture),
        ("audio", &model.pca.audio),
        ("text", &model.pca.text),
    ] {
        println!(
            "  {name}: {:.1}% variance retained",
            100.0 * p.explained_variance_ratio.iter().sum::<f64>()
        );
    }
    let outputs = [
        model_path.clone(),
        FeatureModel::matrices_path(&model_path),
        stage.out(FEATURES_FILE),
    ];
    stage.finish(&outputs, |_, _| {})
}

pub fn build_index(cfg: &PipelineConfig) -> Result<(), CliError> {
    let stage = Stage::begin("build-index", cfg)?;
    need(&stage.out(FEATURES_FILE), "fit-pca")?;
    let bundles = load_bundles(&stage.out(FEATURES_FILE))?;
    let set = IndexSet::build(&bundles, cfg.index)?;
    set.save(&stage.out(INDEX_FILE))?;
    let ids: Vec<String> = bundles.iter().map(|b| b.clip_id.clone()).collect();
    set.export_jsonl(&stage.out(VECTORS_FILE), &ids)?;
    println!("indexed {} segments", set.len());
    let outputs = [stage.out(INDEX_FILE), stage.out(VECTORS_FILE)];
    stage.finish(&outputs, |_, _| {})
}

pub fn build_graph(cfg: &PipelineConfig) -> Result<(), CliError> {
    let stage = Stage::begin("build-graph", cfg)?;
    need(&stage.out(INDEX_FILE), "build-index")?;
    let bundles = load_bundles(&stage.out(FEATURES_FILE))?;
    let set = IndexSet::load(&stage.out(INDEX_FILE))?;
    if set.len() != bundles.len() {
        return Err(CliError::Input(format!(
            "index holds {} vectors per kind but features.jsonl has {} bundles; rebuild the index",
            set.len(),
            bundles.len()
        )));
    }
    let graph = build_gesture_graph(&bundles, &set, cfg.graph.nn_count)?;
    graph.save(&stage.out(GRAPH_FILE))?;

    let corpus = load_ingested(&cfg.out)?;
    if corpus.segments.len() != bundles.len()
        || corpus
            .segments
            .iter()
            .zip(&bundles)
            .any(|(s, b)| s.meta.clip_id != b.clip_id)
    {
        return Err(CliError::Input(
            "segments.jsonl and features.jsonl disagree; rerun the pipeline from ingest".into(),
        ));
    }
    let first = &corpus.segments[0].meta;
    let mut frames = NodeFrames::new(first.fps, first.joints, first.frames);
    for s in &corpus.segments {
        frames.push(&s.raw.gesture_positions)?;
    }
    frames.save(&stage.out(FRAMES_FILE))?;
    let st = graph.stats();
    println!(
        "graph: {} nodes, {} edges, {} isolated, {} reversed edges removed",
        st.nodes,
        st.edges,
        st.isolated.len(),
        st.reversed_removed
    );
    let outputs = [stage.out(GRAPH_FILE), stage.out(FRAMES_FILE)];
    stage.finish(&outputs, |_, _| {})
}

pub fn stats(cfg: &PipelineConfig, graph: Option<&Path>) -> Result<(), CliError> {
    let path = graph.map_or_else(|| cfg.out.join(GRAPH_FILE), Path::to_path_buf);
    need(&path, "build-graph")?;
    let graph = GestureGraph::load(&path)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&graph.stats()).expect("stats serialize")
    );
    Ok(())
}

/// One line of a query features file: corpus feature schema without gesture.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clip_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segment_index: Option<usize>,
    #[serde(default)]
    start_frame: usize,
    #[serde(default, skip_serializing, rename = "gesture")]
    _gesture: Option<IgnoredAny>,
    #[serde(default, skip_serializing, rename = "gesture_tail")]
    _gesture_tail: Option<IgnoredAny>,
    audio: Vec<f32>,
    text: Vec<f32>,
}

fn read_queries(path: &Path) -> Result<Vec<QuerySegment>, CliError> {
    let lines: Vec<QueryLine> = read_jsonl(path)?;
    if lines.is_empty() {
        return Err(CliError::Input(format!("{} holds no query segments", path.display())));
    }
    Ok(lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| QuerySegment {
            index: l.segment_index.unwrap_or(i),
            start_frame: l.start_frame,
            audio: l.audio,
            text: l.text,
        })
        .collect())
}

fn featurize_speech(cfg: &PipelineConfig, args: &GenerateArgs) -> Result<Vec<QuerySegment>, CliError> {
    let audio_path = args.audio.as_ref().expect("checked by caller");
    let words_path = args.words.as_ref().expect("clap requires words with audio");
    let model_path = args.model.clone().unwrap_or_else(|| cfg.out.join(PCA_MODEL_FILE));
    need(&model_path, "fit-pca")?;
    let model = FeatureModel::load(&model_path)?;
    let audio = AudioTrack::read_wav(audio_path)?;
    let text: Box<dyn ContextEncoder> = match cfg.text_encoder {
        TextEncoderChoice::Reference => {
            let f = &model.config;
            Box::new(TextEncoders::reference(
                f.encoder_seed,
                f.word_dim,
                f.sequence_dim,
                f.tx_short,
                f.tx_long,
            )?)
        }
        TextEncoderChoice::Precomputed => {
            let p = args.text_context.as_ref().ok_or_else(|| {
                CliError::Config("the precomputed text encoder needs --text-context for speech input".into())
            })?;
            load_precomputed(p)?
        }
    };
    let featurizer = QueryFeaturizer::new(&model, &ReferenceAudioEncoder, text.as_ref())?;
    let frames = featurizer.frames_for(&audio);
    let words = read_words(words_path, model.fps, frames)?;
    Ok(featurizer.featurize(&audio, &words)?)
}

pub fn generate(cfg: &PipelineConfig, args: &GenerateArgs) -> Result<(), CliError> {
    let graph_path = args.graph.clone().unwrap_or_else(|| cfg.out.join(GRAPH_FILE));
    need(&graph_path, "build-graph")?;
    let frames_path = graph_path.with_file_name(FRAMES_FILE);
    need(&frames_path, "build-graph")?;
    let stage = Stage::begin("generate", cfg)?;
    let graph = GestureGraph::load(&graph_path)?;
    let store = NodeFrames::load(&frames_path)?;
    check_frames(&graph, &store, &cfg.generation)?;

    let featurize_started = Instant::now();
    let queries = match (&args.queries, &args.audio) {
        (Some(q), _) => read_queries(q)?,
        (None, Some(_)) => featurize_speech(cfg, args)?,
        (None, None) => {
            return Err(CliError::Input(
                "generate needs --queries <features.jsonl> or --audio <wav> --words <jsonl>".into(),
            ))
        }
    };
    let featurize_ms = featurize_started.elapsed().as_secs_f64() * 1e3 / queries.len() as f64;

    let mut session = Session::new(&graph, &cfg.generation)?;
    let mut latency = Vec::with_capacity(queries.len());
    for t in 0..queries.len() {
        let started = Instant::now();
        if t == 0 {
            session.first(&queries[0])?;
        } else {
            session.step(&queries[t..])?;
        }
        latency.push(featurize_ms + started.elapsed().as_secs_f64() * 1e3);
    }
    let timeline = assemble(&store, session.into_records(), &cfg.generation)?;
    let dir = args.timeline_dir.clone().unwrap_or_else(|| cfg.out.join("timeline"));
    timeline.save(&dir, args.csv)?;
    let query_lines: Vec<QueryLine> = queries
        .iter()
        .map(|q| QueryLine {
            clip_id: None,
            source_id: None,
            segment_index: Some(q.index),
            start_frame: q.start_frame,
            _gesture: None,
            _gesture_tail: None,
            audio: q.audio.clone(),
            text: q.text.clone(),
        })
        .collect();
    write_jsonl(&dir.join(QUERIES_FILE), &query_lines)?;

    let flagged = timeline.steps.iter().filter(|s| !s.fallbacks.is_empty()).count();
    println!(
        "generated {:.2}s of motion from {} segments ({} steps used a fallback) into {}",
        timeline.duration_s(),
        queries.len(),
        flagged,
        dir.display()
    );
    let mut outputs = vec![dir.join(TIMELINE_FILE), dir.join(FRAMES_FILE)];
    if args.csv {
        outputs.push(dir.join(beatgraph::synth::timeline::CSV_FILE));
    }
    stage.finish(&outputs, |_, rec| rec.segment_latency_ms = latency)
}

pub fn blend(cfg: &PipelineConfig, args: &BlendArgs) -> Result<(), CliError> {
    let stage = Stage::begin("blend", cfg)?;
    let input = args.timeline.clone().unwrap_or_else(|| cfg.out.join("timeline"));
    need(&input.join(TIMELINE_FILE), "generate")?;
    let timeline = MotionTimeline::load(&input)?;
    let clips = load_library(&args.library)?;
    let placements = load_placements(&args.placements)?;
    let blended = blend_iconic(&timeline, &clips, &placements)?;
    let dir = args.timeline_out.clone().unwrap_or_else(|| cfg.out.join("blended"));
    blended.save(&dir, args.csv)?;
    println!("blended {} iconic clips into {}", placements.len(), dir.display());
    stage.finish(&[dir.join(TIMELINE_FILE), dir.join(FRAMES_FILE)], |_, _| {})
}

pub fn synth_corpus(cfg: &PipelineConfig, args: &SynthArgs, seed: u64) -> Result<(), CliError> {
    let s = cfg.features.segment_seconds;
    if segment_count(args.duration, s) == 0 {
        return Err(CliError::Input(format!(
            "duration {}s is shorter than one {s}s segment",
            args.duration
        )));
    }
    let stage = Stage::begin("synth-corpus", cfg)?;
    let spec = SyntheticSpec {
        sources: args.sources,
        duration_s: args.duration,
        fps: args.fps,
        joints: args.joints,
        seed,
        ..SyntheticSpec::default()
    };
    let corpus = SyntheticCorpus::generate(&spec);
    corpus.write(&cfg.out)?;
    let mut outputs = Vec::new();
    if !args.iconic_labels.is_empty() {
        let motion = &corpus.recordings[0].motion;
        let rest: Vec<f64> = motion.column_iter().map(|c| c.mean()).collect();
        let labels: Vec<&str> = args.iconic_labels.iter().map(String::as_str).collect();
        let lib = synthetic_library(&rest, &labels, args.fps, 1.5, seed)?;
        let dir = cfg.out.join("iconic");
        save_library(&dir, &lib)?;
        outputs.push(dir.join(beatgraph::synth::iconic::LIBRARY_FILE));
        outputs.push(dir.join(beatgraph::synth::iconic::LIBRARY_FRAMES_FILE));
    }
    println!(
        "wrote {} synthetic recordings of {}s to {}",
        args.sources,
        args.duration,
        cfg.out.display()
    );
    stage.finish(&outputs, |_, _| {})
}
