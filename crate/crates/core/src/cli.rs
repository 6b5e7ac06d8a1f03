//! Command-line front end behind the `osgrag` binary: argument parsing,
//! layered configuration (defaults, then `--config` TOML, then flags) and one
//! function per subcommand. Lives in the library so whole runs can be driven
//! in-process by tests.
//!
//! Every command writes a single JSON document to stdout (or a plain table
//! with `--format table`) and echoes the effective configuration in it.
//! Exit codes: 0 success, 1 pipeline or model error, 2 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::best_view::ViewScoreConfig;
use crate::canonical::to_canonical_bytes;
use crate::evaluation::{ablation_table, evaluate, report_table, run_ablation, MatchConfig, Matcher};
use crate::frames::{read_frames, FrameError};
use crate::fusion::FusionConfig;
use crate::model_clients::{ClientConfig, ClientError, Completer, Encoder, HttpModels, Labeler, MockFixture, MockModels, RelationRanker};
use crate::pipeline::{build_graph, PipelineConfig, PipelineError};
use crate::rag_tasks::{
    answer_question, ground_query, map_location, plan_task, render_map_svg, retrieve_instance, InstanceQuery,
    TaskError,
};
use crate::relations::PairFilterConfig;
use crate::scene_model::{deserialize_graph, serialize_graph, NodeId, SceneError, SceneGraph, DEFAULT_BACKGROUND_LABELS};
use crate::synthetic::{
    default_intrinsics, generate_scene, render_observations, scan_trajectory, write_scene_frames, RenderConfig,
    SceneSpec, SyntheticError, GROUND_TRUTH_FILE, MOCK_FIXTURE_FILE,
};
use crate::vector_store::{build_chunks, index_chunks, StoreError, VectorDb};

pub const GRAPH_FILE: &str = "graph.json";
pub const DB_FILE: &str = "scene.db";
pub const FRAMES_DIR: &str = "frames";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Mock,
    Http,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Table,
}

#[derive(Debug, Parser)]
#[command(name = "osgrag", version, about = "Open-vocabulary 3D scene graphs with retrieval-augmented reasoning")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Default, Args)]
pub struct GlobalArgs {
    /// TOML file with `[section]` tables; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<Backend>,
    /// Chunks retrieved per query.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Centroid distance threshold of the pair filter (m).
    #[arg(long = "d-thresh", global = true)]
    pub d_thresh: Option<f64>,
    #[arg(long = "output-dir", global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,
    /// Frames directory (default `<output-dir>/frames`). Its mock fixture, if
    /// any, is loaded by every command.
    #[arg(long, global = true, value_name = "DIR")]
    pub frames: Option<PathBuf>,
    /// Extra mock fixture merged over the built-in one.
    #[arg(long, global = true, value_name = "FILE")]
    pub fixture: Option<PathBuf>,
}

#[derive(Clone, Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene and render its frames.
    Synth {
        #[arg(long)]
        objects: Option<usize>,
        /// Number of camera poses.
        #[arg(long)]
        views: Option<usize>,
        #[arg(long = "feature-noise")]
        feature_noise: Option<f64>,
    },
    /// Fuse frames into a scene graph.
    Build {
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
    },
    /// Chunk and embed a scene graph into a vector database.
    Index {
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        db: Option<PathBuf>,
    },
    /// Answer a question about the scene.
    Query {
        question: String,
        #[arg(long, value_name = "FILE")]
        db: Option<PathBuf>,
    },
    /// Answer a "where is" question and locate the object.
    Ground {
        question: String,
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        db: Option<PathBuf>,
    },
    /// Find one instance from a text description and/or an image crop.
    Retrieve {
        #[arg(long)]
        text: Option<String>,
        /// Crop reference `image#x0,y0,x1,y1` relative to the frames directory.
        #[arg(long)]
        image: Option<String>,
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        db: Option<PathBuf>,
    },
    /// Turn an instruction into an action sequence.
    Plan {
        instruction: String,
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
    },
    /// Recall@k of a predicted graph against ground truth.
    Eval {
        #[arg(long, value_name = "FILE")]
        pred: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        gt: Option<PathBuf>,
    },
    /// Relation recall under each pair-filter combination.
    Ablate {
        #[arg(long, value_name = "FILE")]
        graph: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        gt: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub seed: u64,
    pub backend: Backend,
    pub k: usize,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            backend: Backend::Mock,
            k: crate::rag_tasks::DEFAULT_K,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Pipeline settings that are not part of a sub-config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSection {
    pub background_labels: Vec<String>,
    pub max_view_points: usize,
    pub relation_parallelism: usize,
    pub floor_margin: f64,
    pub voxel_size: f64,
    pub upright_boxes: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            background_labels: DEFAULT_BACKGROUND_LABELS.iter().map(|s| s.to_string()).collect(),
            max_view_points: p.max_view_points,
            relation_parallelism: p.relation_parallelism,
            floor_margin: p.floor_margin,
            voxel_size: p.voxel_size,
            upright_boxes: p.upright_boxes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub object_count: usize,
    pub views: usize,
    pub feature_noise: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            object_count: 10,
            views: 32,
            feature_noise: 0.0,
        }
    }
}

/// Effective configuration of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run: RunSection,
    pub fusion: FusionConfig,
    pub view: ViewScoreConfig,
    pub filter: PairFilterConfig,
    pub pipeline: PipelineSection,
    pub client: ClientConfig,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    pub synth: SynthSection,
}

impl RunConfig {
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            fusion: self.fusion,
            view: self.view,
            filter: self.filter,
            background_labels: self.pipeline.background_labels.clone(),
            max_view_points: self.pipeline.max_view_points,
            relation_parallelism: self.pipeline.relation_parallelism,
            floor_margin: self.pipeline.floor_margin,
            voxel_size: self.pipeline.voxel_size,
            upright_boxes: self.pipeline.upright_boxes,
        }
    }

    /// Parses TOML text, rejecting keys the configuration does not have.
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let cfg: RunConfig = toml::Value::Table(raw.clone()).try_into().map_err(|e: toml::de::Error| e.to_string())?;
        let known = serde_json::to_value(&cfg).expect("config serializes");
        let raw = serde_json::to_value(&raw).map_err(|e| e.to_string())?;
        if let Some(key) = unknown_key(&raw, &known, String::new()) {
            return Err(format!("unknown key {key}"));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.fusion.validate()?;
        self.view.validate()?;
        self.matching.validate()?;
        self.client.validate()?;
        if self.run.k == 0 {
            return Err("run.k must be at least 1".into());
        }
        if !(self.filter.d_thresh > 0.0) {
            return Err("filter.d_thresh must be positive".into());
        }
        Ok(())
    }
}

fn unknown_key(raw: &Value, known: &Value, prefix: String) -> Option<String> {
    let (Value::Object(raw), Value::Object(known)) = (raw, known) else {
        return None;
    };
    for (k, v) in raw {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match known.get(k) {
            None => return Some(path),
            Some(kv) => {
                if let Some(p) = unknown_key(v, kv, path) {
                    return Some(p);
                }
            }
        }
    }
    None
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{flag}: {message}")]
    Usage { flag: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage { .. } => 2,
            _ => 1,
        }
    }
}

fn usage(flag: &str, message: impl Into<String>) -> CliError {
    CliError::Usage {
        flag: flag.into(),
        message: message.into(),
    }
}

trait ModelStack: Labeler + RelationRanker + Completer + Encoder {}
impl<T: Labeler + RelationRanker + Completer + Encoder> ModelStack for T {}

/// Everything a command needs after flags and config are merged.
struct Context {
    cfg: RunConfig,
    format: Format,
    frames: PathBuf,
    fixture: Option<PathBuf>,
}

impl Context {
    fn new(global: &GlobalArgs) -> Result<Self, CliError> {
        let mut cfg = match &global.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| usage("--config", format!("cannot read {}: {e}", path.display())))?;
                RunConfig::from_toml(&text).map_err(|m| usage("--config", format!("{}: {m}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = global.seed {
            cfg.run.seed = seed;
        }
        if let Some(b) = global.backend {
            cfg.run.backend = b;
        }
        if let Some(k) = global.k {
            if k == 0 {
                return Err(usage("--k", "must be at least 1"));
            }
            cfg.run.k = k;
        }
        if let Some(d) = global.d_thresh {
            if !(d > 0.0 && d.is_finite()) {
                return Err(usage("--d-thresh", "must be a positive number"));
            }
            cfg.filter.d_thresh = d;
        }
        if let Some(dir) = &global.output_dir {
            cfg.run.output_dir = dir.clone();
        }
        cfg.validate().map_err(|m| usage("--config", m))?;
        let frames = global.frames.clone().unwrap_or_else(|| cfg.run.output_dir.join(FRAMES_DIR));
        Ok(Self {
            cfg,
            format: global.format,
            frames,
            fixture: global.fixture.clone(),
        })
    }

    fn out_path(&self, given: &Option<PathBuf>, default_name: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.cfg.run.output_dir.join(default_name))
    }

    fn models(&self) -> Result<Box<dyn ModelStack>, CliError> {
        match self.cfg.run.backend {
            Backend::Mock => {
                let mut fixture = MockFixture::builtin();
                let scene_fx = self.frames.join(MOCK_FIXTURE_FILE);
                if scene_fx.is_file() {
                    fixture.merge(read_fixture(&scene_fx, "--frames")?);
                }
                if let Some(path) = &self.fixture {
                    fixture.merge(read_fixture(path, "--fixture")?);
                }
                Ok(Box::new(MockModels::new(fixture, self.cfg.run.seed).with_image_root(&self.frames)))
            }
            Backend::Http => Ok(Box::new(
                HttpModels::new(self.cfg.client.clone())?.with_image_root(&self.frames),
            )),
        }
    }

    fn write_artifact(&self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        std::fs::write(path, bytes).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    fn envelope(&self, task: &str, mut body: serde_json::Map<String, Value>) -> Value {
        body.insert("task".into(), json!(task));
        body.insert("config".into(), serde_json::to_value(&self.cfg).expect("config serializes"));
        Value::Object(body)
    }
}

fn read_fixture(path: &Path, flag: &str) -> Result<MockFixture, CliError> {
    let bytes = std::fs::read(path).map_err(|e| usage(flag, format!("cannot read {}: {e}", path.display())))?;
    MockFixture::from_json(&bytes).map_err(|e| usage(flag, format!("{}: {e}", path.display())))
}

fn existing_file(path: PathBuf, flag: &str) -> Result<PathBuf, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(usage(flag, format!("file {} does not exist", path.display())))
    }
}

fn load_graph(path: PathBuf, flag: &str) -> Result<SceneGraph, CliError> {
    let path = existing_file(path, flag)?;
    let bytes = std::fs::read(&path).map_err(|source| CliError::Io { path, source })?;
    Ok(deserialize_graph(&bytes)?)
}

fn load_db(path: PathBuf, flag: &str) -> Result<VectorDb, CliError> {
    let path = existing_file(path, flag)?;
    Ok(VectorDb::load(&path)?)
}

fn obj(pairs: Value) -> serde_json::Map<String, Value> {
    match pairs {
        Value::Object(m) => m,
        _ => unreachable!("object literal"),
    }
}

/// Parses `args` (program name first), runs the command and writes its
/// document to `out`.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| usage("arguments", e.to_string()))?;
    run(&cli, out)
}

/// Binary entry point: returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let ctx = Context::new(&cli.global)?;
    let (doc, table) = match &cli.command {
        Command::Synth {
            objects,
            views,
            feature_noise,
        } => cmd_synth(&ctx, *objects, *views, *feature_noise)?,
        Command::Build { graph } => cmd_build(&ctx, graph)?,
        Command::Index { graph, db } => cmd_index(&ctx, graph, db)?,
        Command::Query { question, db } => cmd_query(&ctx, question, db)?,
        Command::Ground { question, graph, db } => cmd_ground(&ctx, question, graph, db)?,
        Command::Retrieve { text, image, graph, db } => cmd_retrieve(&ctx, text, image, graph, db)?,
        Command::Plan { instruction, graph } => cmd_plan(&ctx, instruction, graph)?,
        Command::Eval { pred, gt } => cmd_eval(&ctx, pred, gt)?,
        Command::Ablate { graph, gt } => cmd_ablate(&ctx, graph, gt)?,
    };
    let io = |source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    };
    match ctx.format {
        Format::Json => out.write_all(&to_canonical_bytes(&doc)).map_err(io)?,
        Format::Table => out.write_all(table.as_bytes()).map_err(io)?,
    }
    Ok(())
}

type Output = (Value, String);

fn cmd_synth(ctx: &Context, objects: Option<usize>, views: Option<usize>, noise: Option<f64>) -> Result<Output, CliError> {
    let s = &ctx.cfg.synth;
    let object_count = objects.unwrap_or(s.object_count);
    let views = views.unwrap_or(s.views);
    let feature_noise = noise.unwrap_or(s.feature_noise);
    if views == 0 {
        return Err(usage("--views", "must be at least 1"));
    }
    if !(feature_noise >= 0.0 && feature_noise.is_finite()) {
        return Err(usage("--feature-noise", "must be a non-negative number"));
    }
    let spec = SceneSpec {
        seed: ctx.cfg.run.seed,
        object_count,
        feature_dim: ctx.cfg.fusion.feature_dim,
        ..SceneSpec::default()
    };
    if let Err(e) = spec.validate() {
        return Err(usage("--objects", e.to_string()));
    }
    let scene = generate_scene(&spec)?;
    let render = RenderConfig {
        seed: ctx.cfg.run.seed,
        feature_noise,
        ..RenderConfig::default()
    };
    let frames = render_observations(&scene, &scan_trajectory(spec.room_extent, views), &default_intrinsics(), &render);
    write_scene_frames(&ctx.frames, &scene, &frames)?;
    let table = format!(
        "frames   {}\nobjects  {}\nrelations {}\nviews    {}\n",
        ctx.frames.display(),
        scene.graph.nodes.len(),
        scene.graph.edges.len(),
        frames.len()
    );
    let doc = ctx.envelope(
        "synth",
        obj(json!({
            "frames_dir": ctx.frames.display().to_string(),
            "ground_truth": ctx.frames.join(GROUND_TRUTH_FILE).display().to_string(),
            "objects": scene.graph.nodes.len(),
            "relations": scene.graph.edges.len(),
            "views": frames.len(),
        })),
    );
    Ok((doc, table))
}

fn cmd_build(ctx: &Context, graph: &Option<PathBuf>) -> Result<Output, CliError> {
    if !ctx.frames.is_dir() {
        return Err(usage("--frames", format!("directory {} does not exist", ctx.frames.display())));
    }
    let frames = read_frames(&ctx.frames)?;
    let models = ctx.models()?;
    let built = build_graph(&frames, &ctx.cfg.pipeline_config(), &*models, &*models)?;
    for f in &built.relation_failures {
        log::warn!("relation {} -> {} dropped: {}", f.subject_id, f.object_id, f.error);
    }
    let path = ctx.out_path(graph, GRAPH_FILE);
    ctx.write_artifact(&path, &serialize_graph(&built.graph))?;
    let table = format!(
        "graph  {}\nnodes  {}\nedges  {}\n",
        path.display(),
        built.graph.nodes.len(),
        built.graph.edges.len()
    );
    let doc = ctx.envelope(
        "build",
        obj(json!({
            "graph": path.display().to_string(),
            "nodes": built.graph.nodes.len(),
            "edges": built.graph.edges.len(),
            "frames": frames.len(),
            "dropped_tracks": built.dropped_tracks,
            "relation_failures": built.relation_failures.len(),
        })),
    );
    Ok((doc, table))
}

fn cmd_index(ctx: &Context, graph: &Option<PathBuf>, db: &Option<PathBuf>) -> Result<Output, CliError> {
    let g = load_graph(ctx.out_path(graph, GRAPH_FILE), "--graph")?;
    let models = ctx.models()?;
    let chunks = build_chunks(&g);
    let database = index_chunks(&chunks, &*models)?;
    let path = ctx.out_path(db, DB_FILE);
    ctx.write_artifact(&path, &database.to_bytes())?;
    let labels: Vec<&str> = chunks.iter().map(|c| c.label.as_str()).collect();
    let table = format!("db      {}\nrecords {}\nlabels  {}\n", path.display(), database.len(), labels.join(", "));
    let doc = ctx.envelope(
        "index",
        obj(json!({
            "db": path.display().to_string(),
            "records": database.len(),
            "labels": labels,
        })),
    );
    Ok((doc, table))
}

fn write_map(ctx: &Context, task: &str, graph: &SceneGraph, ids: &[NodeId], marker: Option<nalgebra::Vector2<f64>>) -> Result<String, CliError> {
    let name = format!("{task}_map.svg");
    ctx.write_artifact(&ctx.cfg.run.output_dir.join(&name), render_map_svg(graph, ids, marker).as_bytes())?;
    Ok(name)
}

fn fact_lines(facts: &[String]) -> String {
    facts.iter().map(|f| format!("  - {f}\n")).collect()
}

fn cmd_query(ctx: &Context, question: &str, db: &Option<PathBuf>) -> Result<Output, CliError> {
    let database = load_db(ctx.out_path(db, DB_FILE), "--db")?;
    let models = ctx.models()?;
    let qa = answer_question(question, &database, &*models, &*models, ctx.cfg.run.k)?;
    let facts = qa.context.facts();
    let node_ids: Vec<NodeId> = qa.context.entries.iter().flat_map(|e| e.node_ids.iter().copied()).collect();
    let table = format!("question {question}\nanswer   {}\ncontext\n{}", qa.answer, fact_lines(&facts));
    let doc = ctx.envelope(
        "qa",
        obj(json!({
            "query": question,
            "answer": qa.answer,
            "context_facts": facts,
            "node_ids": node_ids,
            "map": Value::Null,
            "crop_refs": Vec::<String>::new(),
            "scores": qa.context.source_scores(),
        })),
    );
    Ok((doc, table))
}

fn cmd_ground(ctx: &Context, question: &str, graph: &Option<PathBuf>, db: &Option<PathBuf>) -> Result<Output, CliError> {
    let g = load_graph(ctx.out_path(graph, GRAPH_FILE), "--graph")?;
    let database = load_db(ctx.out_path(db, DB_FILE), "--db")?;
    let models = ctx.models()?;
    let r = ground_query(question, &database, &*models, &*models, &g, ctx.cfg.run.k)?;
    let svg = write_map(ctx, "ground", &g, &[r.instance.node_id], Some(r.instance.map.xy))?;
    let facts = r.context.facts();
    let table = format!(
        "question {question}\nanswer   {}\nnode     {} ({})\nmap      ({:.2}, {:.2}) -> {}\ncrop     {}\n",
        r.text,
        r.instance.node_id,
        r.instance.label,
        r.instance.map.xy.x,
        r.instance.map.xy.y,
        svg,
        r.instance.crop.as_deref().unwrap_or("-")
    );
    let doc = ctx.envelope(
        "ground",
        obj(json!({
            "query": question,
            "answer": r.text,
            "context_facts": facts,
            "node_ids": [r.instance.node_id],
            "map": {"location": r.instance.map, "svg": svg},
            "crop_refs": r.instance.crop.iter().collect::<Vec<_>>(),
            "scores": [r.instance.score],
        })),
    );
    Ok((doc, table))
}

fn cmd_retrieve(
    ctx: &Context,
    text: &Option<String>,
    image: &Option<String>,
    graph: &Option<PathBuf>,
    db: &Option<PathBuf>,
) -> Result<Output, CliError> {
    if text.is_none() && image.is_none() {
        return Err(usage("--text", "give --text, --image, or both"));
    }
    let g = load_graph(ctx.out_path(graph, GRAPH_FILE), "--graph")?;
    let database = load_db(ctx.out_path(db, DB_FILE), "--db")?;
    let models = ctx.models()?;
    let query = InstanceQuery {
        text: text.clone(),
        image: image.clone(),
    };
    let m = retrieve_instance(&query, &database, &*models, &g, ctx.cfg.run.k)?;
    let svg = write_map(ctx, "retrieve", &g, &[m.node_id], Some(m.map.xy))?;
    let table = format!(
        "node  {} ({}: {})\nscore {:.4}\nmap   ({:.2}, {:.2}) -> {}\ncrop  {}\n",
        m.node_id,
        m.label,
        m.description,
        m.score,
        m.map.xy.x,
        m.map.xy.y,
        svg,
        m.crop.as_deref().unwrap_or("-")
    );
    let doc = ctx.envelope(
        "retrieve",
        obj(json!({
            "query": query,
            "answer": format!("{}: {}", m.label, m.description),
            "context_facts": Vec::<String>::new(),
            "node_ids": [m.node_id],
            "map": {"location": m.map, "svg": svg},
            "crop_refs": m.crop.iter().collect::<Vec<_>>(),
            "scores": [m.score],
        })),
    );
    Ok((doc, table))
}

fn cmd_plan(ctx: &Context, instruction: &str, graph: &Option<PathBuf>) -> Result<Output, CliError> {
    let g = load_graph(ctx.out_path(graph, GRAPH_FILE), "--graph")?;
    let models = ctx.models()?;
    let p = plan_task(instruction, &g, &*models, &*models)?;
    let bound: Vec<NodeId> = p.plan.target_bindings.values().copied().collect();
    let svg = write_map(ctx, "plan", &g, &bound, None)?;
    let crops: Vec<String> = bound
        .iter()
        .filter_map(|id| g.nodes.get(id).and_then(|n| n.best_view.as_ref()).map(|b| b.crop.clone()))
        .collect();
    let locations: Vec<Value> = bound
        .iter()
        .filter_map(|&id| map_location(&g, id).map(|m| json!({"node_id": id, "location": m})))
        .collect();
    let table = format!(
        "instruction {instruction}\nplan        {}\nbindings    {:?}\n",
        p.plan.render(),
        p.plan.target_bindings
    );
    let doc = ctx.envelope(
        "plan",
        obj(json!({
            "query": instruction,
            "plan": {
                "steps": p.plan.render(),
                "target_bindings": p.plan.target_bindings,
                "reply": p.reply,
            },
            "context_facts": p.prompt.context_facts,
            "node_ids": p.subgraph_nodes,
            "map": {"locations": locations, "svg": svg},
            "crop_refs": crops,
            "scores": Vec::<f64>::new(),
        })),
    );
    Ok((doc, table))
}

fn gt_path(ctx: &Context, gt: &Option<PathBuf>) -> PathBuf {
    gt.clone().unwrap_or_else(|| ctx.frames.join(GROUND_TRUTH_FILE))
}

fn cmd_eval(ctx: &Context, pred: &Option<PathBuf>, gt: &Option<PathBuf>) -> Result<Output, CliError> {
    let p = load_graph(ctx.out_path(pred, GRAPH_FILE), "--pred")?;
    let g = load_graph(gt_path(ctx, gt), "--gt")?;
    let models = ctx.models()?;
    let matcher = Matcher::new(&*models, ctx.cfg.matching);
    let report = evaluate(&p, &g, &matcher)?;
    let table = report_table(&report);
    let doc = ctx.envelope("eval", obj(json!({ "report": report })));
    Ok((doc, table))
}

fn cmd_ablate(ctx: &Context, graph: &Option<PathBuf>, gt: &Option<PathBuf>) -> Result<Output, CliError> {
    let p = load_graph(ctx.out_path(graph, GRAPH_FILE), "--graph")?;
    let g = load_graph(gt_path(ctx, gt), "--gt")?;
    let models = ctx.models()?;
    let matcher = Matcher::new(&*models, ctx.cfg.matching);
    let report = run_ablation(
        &p,
        &g,
        ctx.cfg.filter.d_thresh,
        &*models,
        &matcher,
        ctx.cfg.pipeline.relation_parallelism,
    )?;
    let table = ablation_table(&report);
    let doc = ctx.envelope("ablate", obj(json!({ "report": report })));
    Ok((doc, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_sections_parse_and_unknown_keys_fail() {
        let cfg = RunConfig::from_toml("[run]\nseed = 7\nk = 5\n[filter]\nd_thresh = 0.8\n[match]\nobject_threshold = 0.9\n").unwrap();
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.run.k, 5);
        assert_eq!(cfg.filter.d_thresh, 0.8);
        assert!(cfg.filter.use_iou);
        let err = RunConfig::from_toml("[filter]\nd_tresh = 0.8\n").unwrap_err();
        assert!(err.contains("filter.d_tresh"), "{err}");
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[run]\nseed = 3\nk = 2\n").unwrap();
        let global = GlobalArgs {
            config: Some(path),
            seed: Some(9),
            ..GlobalArgs::default()
        };
        let ctx = Context::new(&global).unwrap();
        assert_eq!((ctx.cfg.run.seed, ctx.cfg.run.k), (9, 2));
    }

    #[test]
    fn missing_frames_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        let mut out = Vec::new();
        let err = run_from(["osgrag", "build", "--frames", missing.to_str().unwrap()], &mut out).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().starts_with("--frames"), "{err}");
    }

    #[test]
    fn bad_flag_values_name_the_flag() {
        let mut out = Vec::new();
        let err = run_from(["osgrag", "query", "x", "--k", "0"], &mut out).unwrap_err();
        assert!(err.to_string().starts_with("--k"));
        let err = run_from(["osgrag", "query", "x", "--backend", "gpu"], &mut out).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
