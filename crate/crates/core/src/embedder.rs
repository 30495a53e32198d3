//! Embedders turn masked object views and query text into unit vectors in a
//! shared space.
//!
//! Real deployments precompute CLIP vectors elsewhere and load them through
//! [`FileEmbedder`]. [`ToyEmbedder`] is a deterministic colour-concept
//! embedder that makes the whole pipeline testable without a model.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::scene::ObjectId;

/// A unit-L2-norm vector. Stored as `f32`, dotted in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Normalizes `v`; `None` for zero-norm or non-finite input.
    pub fn normalized(v: &[f64]) -> Option<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        Some(Self(v.iter().map(|x| (x / norm) as f32).collect()))
    }

    pub fn normalized_f32(v: &[f32]) -> Option<Self> {
        let wide: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
        Self::normalized(&wide)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Embeds one masked view of an object.
    fn embed_view(&self, object_id: ObjectId, view_id: &str, image: &RgbImage) -> Result<Embedding>;

    fn embed_text(&self, text: &str) -> Result<Embedding>;
}

pub const TOY_DIM: usize = 16;

const WHITE_BIN: usize = 12;
const GRAY_BIN: usize = 13;
const BLACK_BIN: usize = 14;
/// Pixels below this saturation are achromatic.
const MIN_SATURATION: f32 = 0.25;

/// Keyword table shared by text and image descriptors. Bins 0..12 are hue
/// sectors 30 degrees wide starting at red.
const KEYWORDS: &[(&str, usize)] = &[
    ("red", 0),
    ("crimson", 0),
    ("orange", 1),
    ("brown", 1),
    ("yellow", 2),
    ("gold", 2),
    ("lime", 3),
    ("chartreuse", 3),
    ("green", 4),
    ("spring", 5),
    ("mint", 5),
    ("cyan", 6),
    ("turquoise", 6),
    ("azure", 7),
    ("sky", 7),
    ("blue", 8),
    ("navy", 8),
    ("purple", 9),
    ("violet", 9),
    ("magenta", 10),
    ("fuchsia", 10),
    ("pink", 11),
    ("rose", 11),
    ("white", WHITE_BIN),
    ("gray", GRAY_BIN),
    ("grey", GRAY_BIN),
    ("silver", GRAY_BIN),
    ("black", BLACK_BIN),
];

/// Deterministic 16-bin colour-concept embedder.
///
/// Images: each non-black pixel votes for one bin (hue sector, or
/// white/gray when desaturated) with weight equal to its brightness.
/// Pure black pixels are treated as masked out. Text: every known colour
/// word adds one to its bin; text without any colour word maps to the
/// uniform vector.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyEmbedder;

impl Embedder for ToyEmbedder {
    fn dim(&self) -> usize {
        TOY_DIM
    }

    fn embed_view(&self, _object_id: ObjectId, _view_id: &str, image: &RgbImage) -> Result<Embedding> {
        toy_embed_image(image)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        Ok(toy_embed_text(text))
    }
}

pub fn toy_embed_image(image: &RgbImage) -> Result<Embedding> {
    if image.is_empty() {
        return Err(Error::InvalidArgument("cannot embed an empty image".into()));
    }
    let mut bins = [0.0f64; TOY_DIM];
    for px in image.pixels() {
        if let Some((bin, weight)) = color_bin(px) {
            bins[bin] += f64::from(weight);
        }
    }
    Embedding::normalized(&bins).ok_or_else(|| Error::InvalidArgument("image has no unmasked pixels".into()))
}

pub fn toy_embed_text(text: &str) -> Embedding {
    let mut bins = [0.0f64; TOY_DIM];
    for word in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        let word = word.to_lowercase();
        if let Some(&(_, bin)) = KEYWORDS.iter().find(|(k, _)| *k == word) {
            bins[bin] += 1.0;
        }
    }
    if bins.iter().all(|&b| b == 0.0) {
        bins = [1.0; TOY_DIM];
    }
    Embedding::normalized(&bins).expect("nonzero by construction")
}

fn color_bin([r, g, b]: [f32; 3]) -> Option<(usize, f32)> {
    let max = r.max(g).max(b);
    if max <= 0.0 {
        return None;
    }
    let min = r.min(g).min(b);
    let saturation = (max - min) / max;
    if saturation < MIN_SATURATION {
        let bin = if max > 0.75 {
            WHITE_BIN
        } else if max > 0.15 {
            GRAY_BIN
        } else {
            BLACK_BIN
        };
        return Some((bin, max));
    }
    let delta = max - min;
    let hue = if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sector = ((hue / 30.0).round() as usize) % 12;
    Some((sector, max))
}

/// Precomputed embeddings loaded from JSON:
///
/// ```json
/// { "dim": 512,
///   "texts": { "red cube": [ ... ] },
///   "views": { "3/view_007": [ ... ] } }
/// ```
///
/// View keys are `"{object_id}/{view_id}"`.
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    dim: usize,
    texts: HashMap<String, Embedding>,
    views: HashMap<String, Embedding>,
}

#[derive(Deserialize)]
struct EmbeddingFile {
    dim: usize,
    #[serde(default)]
    texts: HashMap<String, Vec<f32>>,
    #[serde(default)]
    views: HashMap<String, Vec<f32>>,
}

impl FileEmbedder {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: EmbeddingFile = serde_json::from_slice(&bytes)?;
        let convert = |kind: &str, map: HashMap<String, Vec<f32>>| -> Result<HashMap<String, Embedding>> {
            map.into_iter()
                .map(|(k, v)| {
                    if v.len() != file.dim {
                        return Err(Error::Dimension(format!(
                            "{kind} {k:?} has dim {}, file dim {}",
                            v.len(),
                            file.dim
                        )));
                    }
                    let e = Embedding::normalized_f32(&v).ok_or_else(|| Error::ZeroNorm(format!("{kind} {k:?}")))?;
                    Ok((k, e))
                })
                .collect()
        };
        Ok(Self {
            dim: file.dim,
            texts: convert("text", file.texts)?,
            views: convert("view", file.views)?,
        })
    }
}

impl Embedder for FileEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_view(&self, object_id: ObjectId, view_id: &str, _image: &RgbImage) -> Result<Embedding> {
        let key = format!("{object_id}/{view_id}");
        self.views.get(&key).cloned().ok_or_else(|| Error::Embed {
            context: key,
            message: "no precomputed embedding".into(),
        })
    }

    fn embed_text(&self, text: &str) -> Result<Embedding> {
        self.texts.get(text).cloned().ok_or_else(|| Error::Embed {
            context: format!("text {text:?}"),
            message: "no precomputed embedding".into(),
        })
    }
}
