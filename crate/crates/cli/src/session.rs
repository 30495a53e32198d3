//! Assets shared by CLI commands and the HTTP service.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use anyhow::{bail, Context, Result};
use bagsplat::embedding::ingest_bank;
use bagsplat::gsg::load_scene;
use bagsplat::relevancy::{rank_objects, DEFAULT_TOP_K};
use bagsplat::render::render;
use bagsplat::{
    Embedder, EmbeddingBank, FileEmbedder, GroupedScene, IdentityClassifier, ObjectId, QueryResult, RenderOptions,
    RenderedView, SelectionRule, ToyEmbedder,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum EmbedderKind {
    #[default]
    Toy,
    File,
}

pub fn load_embedder(kind: EmbedderKind, path: Option<&Path>) -> Result<Arc<dyn Embedder>> {
    Ok(match (kind, path) {
        (EmbedderKind::Toy, None) => Arc::new(ToyEmbedder),
        (EmbedderKind::Toy, Some(_)) => bail!("--embeddings is only used with --embedder file"),
        (EmbedderKind::File, Some(p)) => {
            Arc::new(FileEmbedder::load(p).with_context(|| format!("loading {}", p.display()))?)
        }
        (EmbedderKind::File, None) => bail!("--embedder file needs --embeddings <PATH>"),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub k: usize,
    pub rule: SelectionRule,
    pub render: RenderOptions,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            rule: SelectionRule::Top1,
            render: RenderOptions::default(),
        }
    }
}

/// Paths of one scene's assets.
#[derive(Debug, Clone, Default)]
pub struct AssetPaths {
    pub scene: PathBuf,
    pub bank: PathBuf,
    pub classifier: PathBuf,
    pub embedder: EmbedderKind,
    pub embeddings: Option<PathBuf>,
}

/// One loaded scene. Read-only apart from the render cache.
pub struct Session {
    pub scene: GroupedScene,
    pub bank: EmbeddingBank,
    pub classifier: IdentityClassifier,
    pub embedder: Arc<dyn Embedder>,
    pub config: SessionConfig,
    revision: u64,
    cache: RwLock<HashMap<(String, u64), Arc<RenderedView>>>,
}

impl Session {
    pub fn new(
        scene: GroupedScene,
        bank: EmbeddingBank,
        classifier: IdentityClassifier,
        embedder: Arc<dyn Embedder>,
        config: SessionConfig,
    ) -> Result<Self> {
        if classifier.num_objects() != scene.num_objects() {
            bail!(
                "classifier has {} object classes, scene has {}",
                classifier.num_objects(),
                scene.num_objects()
            );
        }
        if bank.dim() != embedder.dim() {
            bail!("bank dim {} does not match embedder dim {}", bank.dim(), embedder.dim());
        }
        Ok(Self {
            scene,
            bank,
            classifier,
            embedder,
            config,
            revision: 0,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn load(paths: &AssetPaths, config: SessionConfig) -> Result<Self> {
        let scene = load_scene(&paths.scene).with_context(|| format!("loading scene {}", paths.scene.display()))?;
        let bank = ingest_bank(&paths.bank).with_context(|| format!("loading bank {}", paths.bank.display()))?;
        let classifier = IdentityClassifier::load(&paths.classifier)
            .with_context(|| format!("loading classifier {}", paths.classifier.display()))?;
        let embedder = load_embedder(paths.embedder, paths.embeddings.as_deref())?;
        Self::new(scene, bank, classifier, embedder, config)
    }

    /// Scene revision; part of every render-cache key.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn query(&self, text: &str, k: Option<usize>, rule: Option<SelectionRule>) -> bagsplat::Result<QueryResult> {
        let k = k.unwrap_or(self.config.k);
        if k == 0 {
            return Err(bagsplat::Error::InvalidArgument("k must be at least 1".into()));
        }
        rank_objects(
            &self.bank,
            text,
            self.embedder.as_ref(),
            k,
            rule.unwrap_or(self.config.rule),
        )
    }

    /// Cached render of `view_id`; `None` for an unknown view.
    pub fn rendered(&self, view_id: &str) -> Option<bagsplat::Result<Arc<RenderedView>>> {
        let cam = self.scene.camera(view_id)?;
        let key = (view_id.to_string(), self.revision);
        if let Some(v) = self.cache.read().expect("cache lock").get(&key) {
            return Some(Ok(Arc::clone(v)));
        }
        let view = match render(&self.scene, cam, &self.classifier, &self.config.render) {
            Ok(v) => Arc::new(v),
            Err(e) => return Some(Err(e)),
        };
        let mut cache = self.cache.write().expect("cache lock");
        Some(Ok(Arc::clone(cache.entry(key).or_insert(view))))
    }

    pub fn cached_views(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    pub fn check_ids(&self, ids: &BTreeSet<ObjectId>) -> bagsplat::Result<()> {
        let k = self.scene.num_objects();
        let unknown: Vec<ObjectId> = ids.iter().copied().filter(|&i| i >= k).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(bagsplat::Error::UnknownIds {
                ids: unknown,
                num_objects: k,
            })
        }
    }
}

/// Parses `"0,2,5"`; empty input is the empty set.
pub fn parse_ids(s: &str) -> Result<BTreeSet<ObjectId>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<ObjectId>()
                .with_context(|| format!("invalid object id {t:?}"))
        })
        .collect()
}

/// 8-bit RGB PNG.
pub fn encode_png(img: &bagsplat::RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width, img.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&img.to_rgb8())?;
    }
    Ok(out)
}

/// Highlight color of selected objects in overlays.
pub const HIGHLIGHT: [f32; 3] = [1.0, 0.85, 0.0];
pub const HIGHLIGHT_BLEND: f32 = 0.5;
