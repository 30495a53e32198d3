//! Command-line front end.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use bagsplat::embedding::{
    build_bank, ingest_bank, load_visibility_stats, save_visibility_stats, write_bank, MaskedView,
    DEFAULT_CANONICAL_PHRASES, DEFAULT_VISIBILITY_THRESHOLD,
};
use bagsplat::eval::{evaluate, DatasetManifest};
use bagsplat::grouping::{visibility_stats_from_masks, IdMaskImage};
use bagsplat::gsg::{load_scene, save_scene};
use bagsplat::image::{labels_to_pgm, read_ppm, write_pgm16, write_planar_f32, write_ppm};
use bagsplat::relevancy::{rank_objects, DEFAULT_TOP_K};
use bagsplat::render::{render, DEFAULT_ALPHA_FLOOR, DEFAULT_TILE_SIZE};
use bagsplat::synthetic;
use bagsplat::tasks::mask_from_view;
use bagsplat::{IdentityClassifier, QueryResult, RenderOptions, SelectionRule, IDENTITY_DIM};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::service::{self, AppState, ADDR_ENV, DEFAULT_ADDR};
use crate::session::{encode_png, load_embedder, parse_ids, AssetPaths, EmbedderKind, Session, SessionConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "bagsplat",
    version,
    about = "Open-vocabulary object queries over grouped Gaussian-splat scenes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank objects for a text query and segment (2d) or extract (3d) them.
    Query(QueryArgs),
    /// Render one view to PPM / PGM / raw float32 files.
    Render(RenderArgs),
    /// Batch-evaluate a dataset manifest.
    Eval(EvalArgs),
    /// Build or filter embedding banks.
    #[command(subcommand)]
    Bank(BankCommand),
    /// Scene container operations.
    #[command(subcommand)]
    Scene(SceneCommand),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "3d")]
    ThreeD,
}

#[derive(Debug, Args)]
pub struct EmbedderArgs {
    #[arg(long, value_enum, default_value = "toy")]
    pub embedder: EmbedderKind,
    /// JSON file of precomputed embeddings (with `--embedder file`).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    /// Required for 2d mode.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    #[arg(long)]
    pub text: String,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub k: usize,
    /// top1, top_n:N or threshold:T
    #[arg(long, default_value = "top1")]
    pub rule: SelectionRule,
    #[arg(long, value_enum, default_value = "3d")]
    pub mode: Mode,
    /// View to segment (2d mode only).
    #[arg(long)]
    pub view: Option<String>,
    /// 3d: extracted GSG container. 2d: 8-bit PGM mask.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ALPHA_FLOOR)]
    pub alpha_floor: f32,
    /// Print the query result as JSON on stdout.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long)]
    pub view: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write an overlay PNG highlighting these IDs.
    #[arg(long)]
    pub ids: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
    pub tile_size: u32,
    #[arg(long, default_value_t = DEFAULT_ALPHA_FLOOR)]
    pub alpha_floor: f32,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_report: Option<PathBuf>,
    /// Directory for predicted masks.
    #[arg(long)]
    pub artifacts: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub rule: Option<SelectionRule>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum BankCommand {
    /// Embed per-object masked views into a bank.
    Build(BankBuildArgs),
    /// Drop objects seen in too few views.
    FilterVisibility(FilterArgs),
}

#[derive(Debug, Args)]
pub struct BankBuildArgs {
    /// Directory of `<view_id>.pgm` 16-bit ID masks.
    #[arg(long)]
    pub masks: PathBuf,
    /// Directory of `<view_id>.ppm` images.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated canonical phrases.
    #[arg(long, default_value = "object,stuff,texture")]
    pub canonical: String,
    /// Also write per-object visibility stats as JSON.
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub min_pixels: usize,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["stats", "masks"])))]
pub struct FilterArgs {
    #[arg(long)]
    pub bank: PathBuf,
    /// JSON visibility stats.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Directory of 16-bit ID masks to count visibility from.
    #[arg(long)]
    pub masks: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_VISIBILITY_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1)]
    pub min_pixels: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum SceneCommand {
    /// Keep only the Gaussians of the given object IDs.
    Extract(ExtractArgs),
    /// Write the three-cluster demo scene, its bank and classifier.
    Synthetic(SyntheticArgs),
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Comma-separated object IDs.
    #[arg(long)]
    pub ids: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub include_unassigned: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, requires_all = ["bank", "classifier"])]
    pub scene: Option<PathBuf>,
    #[arg(long, requires = "scene")]
    pub bank: Option<PathBuf>,
    #[arg(long, requires = "scene")]
    pub classifier: Option<PathBuf>,
    /// Bind address; defaults to $BAGSPLAT_ADDR, then 127.0.0.1:8080.
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub k: usize,
    #[arg(long, default_value = "top1")]
    pub rule: SelectionRule,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
}

/// An error with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

trait Classify<T> {
    fn input(self) -> Result<T, Failure>;
    fn internal(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_INPUT,
            error: e.into(),
        })
    }

    fn internal(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_INTERNAL,
            error: e.into(),
        })
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let help = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let sink: &mut dyn Write = if help { out } else { err };
            let _ = write!(sink, "{}", e.render());
            return if help { EXIT_OK } else { EXIT_INPUT };
        }
    };
    match dispatch(cli, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {:#}", f.error);
            f.code
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Query(a) => cmd_query(a, out),
        Command::Render(a) => cmd_render(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Bank(BankCommand::Build(a)) => cmd_bank_build(a, out),
        Command::Bank(BankCommand::FilterVisibility(a)) => cmd_filter(a, out),
        Command::Scene(SceneCommand::Extract(a)) => cmd_extract(a),
        Command::Scene(SceneCommand::Synthetic(a)) => cmd_synthetic(a, out),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn emit_json(out: &mut dyn Write, value: &impl serde::Serialize) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(value).internal()?;
    writeln!(out, "{s}").internal()
}

fn print_ranking(out: &mut dyn Write, r: &QueryResult) -> Result<(), Failure> {
    writeln!(out, "query {:?} (k={}, rule={})", r.query, r.k, r.rule).internal()?;
    for o in &r.ranked {
        let mark = if r.selected.contains(&o.object_id) { "*" } else { " " };
        writeln!(out, "{mark} {:>6}  {:.6}", o.object_id, o.score).internal()?;
    }
    Ok(())
}

fn cmd_query(a: QueryArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.k == 0 {
        return Err(anyhow!("--k must be at least 1")).input();
    }
    match a.mode {
        Mode::ThreeD if a.view.is_some() => return Err(anyhow!("--view only applies to --mode 2d")).input(),
        Mode::TwoD if a.view.is_none() => return Err(anyhow!("--mode 2d needs --view")).input(),
        Mode::TwoD if a.classifier.is_none() => return Err(anyhow!("--mode 2d needs --classifier")).input(),
        _ => {}
    }
    let embedder = load_embedder(a.embedder.embedder, a.embedder.embeddings.as_deref()).input()?;
    let scene = load_scene(&a.scene)
        .with_context(|| format!("loading {}", a.scene.display()))
        .input()?;
    let bank = ingest_bank(&a.bank)
        .with_context(|| format!("loading {}", a.bank.display()))
        .input()?;
    if let Some(bad) = bank.bags().keys().find(|&&id| id >= scene.num_objects()) {
        return Err(anyhow!(
            "bank object {bad} is not in the scene ({} objects)",
            scene.num_objects()
        ))
        .input();
    }
    let result = rank_objects(&bank, &a.text, embedder.as_ref(), a.k, a.rule).input()?;
    let selected = result.selected_set();

    match a.mode {
        Mode::ThreeD => {
            if let Some(path) = &a.out {
                let sub = scene.filter_by_object_ids(&selected).input()?;
                save_scene(&sub, path).internal()?;
            }
        }
        Mode::TwoD => {
            let clf_path = a.classifier.as_ref().expect("checked above");
            let clf = IdentityClassifier::load(clf_path).input()?;
            let view_id = a.view.as_deref().expect("checked above");
            let cam = scene
                .camera(view_id)
                .ok_or_else(|| anyhow!("unknown view {view_id:?}"))
                .input()?;
            let options = RenderOptions {
                alpha_floor: a.alpha_floor,
                ..RenderOptions::default()
            };
            let view = render(&scene, cam, &clf, &options).input()?;
            let mask = mask_from_view(&view, &selected);
            if let Some(path) = &a.out {
                mask.save(path).internal()?;
            }
        }
    }
    if a.json {
        emit_json(out, &result)
    } else {
        print_ranking(out, &result)
    }
}

fn cmd_render(a: RenderArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let scene = load_scene(&a.scene).input()?;
    let clf = IdentityClassifier::load(&a.classifier).input()?;
    let cam = scene
        .camera(&a.view)
        .ok_or_else(|| anyhow!("unknown view {:?}", a.view))
        .input()?;
    let ids = a.ids.as_deref().map(parse_ids).transpose().input()?;
    let options = RenderOptions {
        tile_size: a.tile_size,
        alpha_floor: a.alpha_floor,
    };
    let view = render(&scene, cam, &clf, &options).input()?;
    std::fs::create_dir_all(&a.out_dir).internal()?;
    let stem = sanitize(&a.view);
    let rgb = a.out_dir.join(format!("{stem}.ppm"));
    let id_map = a.out_dir.join(format!("{stem}.ids.pgm"));
    let features = a.out_dir.join(format!("{stem}.identity.f32"));
    let alpha = a.out_dir.join(format!("{stem}.alpha.f32"));
    write_ppm(&rgb, &view.rgb_image()).internal()?;
    write_pgm16(&id_map, cam.width, cam.height, &labels_to_pgm(&view.id_map).input()?).internal()?;
    write_planar_f32(&features, &view.identity_features, IDENTITY_DIM).internal()?;
    write_planar_f32(&alpha, &view.alpha, 1).internal()?;
    let overlay = match ids {
        Some(ids) => {
            let p = a.out_dir.join(format!("{stem}.overlay.png"));
            let png = encode_png(&view.overlay(&ids, crate::session::HIGHLIGHT, crate::session::HIGHLIGHT_BLEND))
                .internal()?;
            std::fs::write(&p, png).internal()?;
            Some(p)
        }
        None => None,
    };
    let summary = json!({
        "view_id": a.view,
        "width": cam.width,
        "height": cam.height,
        "channels": IDENTITY_DIM,
        "rgb": rgb,
        "id_map": id_map,
        "identity_features": features,
        "alpha": alpha,
        "overlay": overlay,
    });
    std::fs::write(
        a.out_dir.join(format!("{stem}.json")),
        serde_json::to_vec_pretty(&summary).internal()?,
    )
    .internal()?;
    if a.json {
        emit_json(out, &summary)
    } else {
        writeln!(
            out,
            "rendered {} ({}x{}) to {}",
            a.view,
            cam.width,
            cam.height,
            a.out_dir.display()
        )
        .internal()
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let manifest = DatasetManifest::load(&a.manifest).input()?;
    let mut config = manifest.config.unwrap_or_default();
    if let Some(k) = a.k {
        if k == 0 {
            return Err(anyhow!("--k must be at least 1")).input();
        }
        config.k = k;
    }
    if let Some(rule) = a.rule {
        config.rule = rule;
    }
    let report = evaluate(&a.manifest, Some(config), a.artifacts.as_deref()).input()?;
    if let Some(p) = &a.out_report {
        std::fs::write(p, serde_json::to_vec_pretty(&report).internal()?).internal()?;
    }
    if a.json {
        emit_json(out, &report)
    } else {
        write!(out, "{}", report.to_table()).internal()
    }
}

fn read_masks(dir: &Path) -> anyhow::Result<Vec<IdMaskImage>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "pgm"));
    paths.sort();
    if paths.is_empty() {
        bail!("no .pgm masks in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let view_id = p.file_stem().and_then(|s| s.to_str()).context("non UTF-8 mask name")?;
            Ok(IdMaskImage::load(p, view_id)?)
        })
        .collect()
}

fn num_objects_in(masks: &[IdMaskImage]) -> u32 {
    masks
        .iter()
        .flat_map(|m| m.labels.iter().flatten())
        .max()
        .map_or(0, |m| m + 1)
}

fn cmd_bank_build(a: BankBuildArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let embedder = load_embedder(a.embedder.embedder, a.embedder.embeddings.as_deref()).input()?;
    let masks = read_masks(&a.masks).input()?;
    let mut views = Vec::new();
    for mask in &masks {
        let img_path = a.images.join(format!("{}.ppm", mask.view_id));
        let img = read_ppm(&img_path)
            .with_context(|| format!("reading {}", img_path.display()))
            .input()?;
        if (img.width, img.height) != (mask.width, mask.height) {
            return Err(anyhow!(
                "view {:?}: image is {}x{}, mask is {}x{}",
                mask.view_id,
                img.width,
                img.height,
                mask.width,
                mask.height
            ))
            .input();
        }
        let ids: BTreeSet<u32> = mask.labels.iter().flatten().copied().collect();
        for id in ids {
            views.push(MaskedView {
                object_id: id,
                view_id: mask.view_id.clone(),
                image: img.masked(|p| mask.labels[p] == Some(id)),
            });
        }
    }
    let phrases: Vec<&str> = a
        .canonical
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    let phrases = if phrases.is_empty() {
        DEFAULT_CANONICAL_PHRASES.to_vec()
    } else {
        phrases
    };
    let mut bank = build_bank(&views, embedder.as_ref(), &phrases).input()?;
    // views where nothing was labeled still count toward the total
    if bank.total_views() as usize != masks.len() {
        bank = bagsplat::EmbeddingBank::new(
            bank.dim(),
            bank.bags().clone(),
            bank.canonical().to_vec(),
            masks.len() as u32,
        )
        .internal()?;
    }
    write_bank(&bank, &a.out).internal()?;
    let stats = visibility_stats_from_masks(&masks, num_objects_in(&masks), a.min_pixels);
    if let Some(p) = &a.stats_out {
        save_visibility_stats(&stats, p).internal()?;
    }
    let summary = json!({
        "objects": bank.bags().len(),
        "entries": bank.entry_count(),
        "total_views": bank.total_views(),
        "dim": bank.dim(),
        "visibility": stats,
    });
    if a.json {
        emit_json(out, &summary)
    } else {
        writeln!(
            out,
            "bank with {} objects, {} entries over {} views written to {}",
            bank.bags().len(),
            bank.entry_count(),
            bank.total_views(),
            a.out.display()
        )
        .internal()
    }
}

fn cmd_filter(a: FilterArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let bank = ingest_bank(&a.bank).input()?;
    let stats = match (&a.stats, &a.masks) {
        (Some(p), None) => load_visibility_stats(p).input()?,
        (None, Some(dir)) => {
            let masks = read_masks(dir).input()?;
            let k = bank
                .bags()
                .keys()
                .max()
                .map_or(0, |m| m + 1)
                .max(num_objects_in(&masks));
            visibility_stats_from_masks(&masks, k, a.min_pixels)
        }
        _ => return Err(anyhow!("give exactly one of --stats and --masks")).input(),
    };
    let filtered = bank.visibility_filter(&stats, a.threshold).input()?;
    write_bank(&filtered, &a.out).internal()?;
    let removed: Vec<u32> = bank
        .bags()
        .keys()
        .filter(|id| filtered.bag(**id).is_none())
        .copied()
        .collect();
    if a.json {
        emit_json(
            out,
            &json!({"kept": filtered.bags().keys().collect::<Vec<_>>(), "removed": removed}),
        )
    } else {
        writeln!(out, "kept {} objects, removed {:?}", filtered.bags().len(), removed).internal()
    }
}

fn cmd_extract(a: ExtractArgs) -> Result<(), Failure> {
    let scene = load_scene(&a.scene).input()?;
    let ids = parse_ids(&a.ids).input()?;
    let sub = scene.filter_with(&ids, a.include_unassigned).input()?;
    save_scene(&sub, &a.out).internal()
}

fn cmd_synthetic(a: SyntheticArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (scene, clf, bank) = synthetic::benchmark();
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))
        .input()?;
    save_scene(&scene, &a.out_dir.join("scene.zip")).internal()?;
    write_bank(&bank, &a.out_dir.join("bank.emb")).internal()?;
    clf.save(&a.out_dir.join("classifier.json")).internal()?;
    writeln!(
        out,
        "wrote scene.zip, bank.emb, classifier.json to {}",
        a.out_dir.display()
    )
    .internal()
}

fn cmd_serve(a: ServeArgs) -> Result<(), Failure> {
    let state = match (&a.scene, &a.bank, &a.classifier) {
        (Some(scene), Some(bank), Some(classifier)) => {
            let paths = AssetPaths {
                scene: scene.clone(),
                bank: bank.clone(),
                classifier: classifier.clone(),
                embedder: a.embedder.embedder,
                embeddings: a.embedder.embeddings.clone(),
            };
            if a.k == 0 {
                return Err(anyhow!("--k must be at least 1")).input();
            }
            let config = SessionConfig {
                k: a.k,
                rule: a.rule,
                ..SessionConfig::default()
            };
            AppState::with_session(Session::load(&paths, config).input()?)
        }
        _ => AppState::default(),
    };
    let addr = a
        .addr
        .or_else(|| std::env::var(ADDR_ENV).ok())
        .unwrap_or_else(|| DEFAULT_ADDR.to_string());
    let rt = tokio::runtime::Runtime::new().internal()?;
    rt.block_on(service::serve(state, &addr)).internal()
}
