//! Per-object bags of multiview embeddings.
//!
//! Every object keeps one embedding per view in which it was visible rather
//! than a single averaged vector, so view-specific details stay queryable.
//! The bank also caches the canonical-phrase embeddings that compete with
//! the query during relevancy scoring.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::embedder::{Embedder, Embedding};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::scene::ObjectId;

pub const DEFAULT_CANONICAL_PHRASES: [&str; 3] = ["object", "stuff", "texture"];
/// Minimum fraction of views an object must be visible in to stay queryable.
pub const DEFAULT_VISIBILITY_THRESHOLD: f64 = 0.2;

pub const EMB_MANIFEST: &str = "manifest.json";
pub const EMB_VECTORS: &str = "vectors.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct BagEntry {
    pub view_id: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBag {
    pub object_id: ObjectId,
    pub entries: Vec<BagEntry>,
}

impl EmbeddingBag {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn embeddings(&self) -> impl Iterator<Item = &Embedding> {
        self.entries.iter().map(|e| &e.embedding)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalPhrase {
    pub phrase: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibilityStats {
    pub object_id: ObjectId,
    pub views_visible: u32,
    pub total_views: u32,
}

impl VisibilityStats {
    pub fn ratio(&self) -> f64 {
        if self.total_views == 0 {
            0.0
        } else {
            f64::from(self.views_visible) / f64::from(self.total_views)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    dim: usize,
    bags: BTreeMap<ObjectId, EmbeddingBag>,
    canonical: Vec<CanonicalPhrase>,
    total_views: u32,
}

/// One masked image of one object, ready for embedding.
#[derive(Debug, Clone)]
pub struct MaskedView {
    pub object_id: ObjectId,
    pub view_id: String,
    pub image: RgbImage,
}

impl EmbeddingBank {
    pub fn new(
        dim: usize,
        bags: BTreeMap<ObjectId, EmbeddingBag>,
        canonical: Vec<CanonicalPhrase>,
        total_views: u32,
    ) -> Result<Self> {
        if canonical.is_empty() {
            return Err(Error::InvalidArgument("canonical phrase list is empty".into()));
        }
        for c in &canonical {
            if c.embedding.dim() != dim {
                return Err(Error::Dimension(format!(
                    "canonical {:?} has dim {}, bank dim {dim}",
                    c.phrase,
                    c.embedding.dim()
                )));
            }
        }
        for (id, bag) in &bags {
            if bag.object_id != *id {
                return Err(Error::InvalidArgument(format!(
                    "bag keyed {id} holds object {}",
                    bag.object_id
                )));
            }
            let mut seen = HashSet::new();
            for e in &bag.entries {
                if e.embedding.dim() != dim {
                    return Err(Error::Dimension(format!(
                        "object {id} view {:?} has dim {}, bank dim {dim}",
                        e.view_id,
                        e.embedding.dim()
                    )));
                }
                if !seen.insert(e.view_id.as_str()) {
                    return Err(Error::InvalidArgument(format!(
                        "object {id} has view {:?} twice",
                        e.view_id
                    )));
                }
            }
        }
        Ok(Self {
            dim,
            bags,
            canonical,
            total_views,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bags(&self) -> &BTreeMap<ObjectId, EmbeddingBag> {
        &self.bags
    }

    pub fn bag(&self, id: ObjectId) -> Option<&EmbeddingBag> {
        self.bags.get(&id)
    }

    pub fn canonical(&self) -> &[CanonicalPhrase] {
        &self.canonical
    }

    pub fn canonical_embeddings(&self) -> Vec<Embedding> {
        self.canonical.iter().map(|c| c.embedding.clone()).collect()
    }

    pub fn total_views(&self) -> u32 {
        self.total_views
    }

    pub fn entry_count(&self) -> usize {
        self.bags.values().map(EmbeddingBag::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    /// Drops bags whose object was visible in fewer than `threshold` of the
    /// views. The boundary is inclusive: a ratio equal to the threshold is
    /// kept. Every bag must have stats.
    pub fn visibility_filter(&self, stats: &[VisibilityStats], threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidArgument(format!(
                "visibility threshold {threshold} outside [0, 1]"
            )));
        }
        let by_id: BTreeMap<ObjectId, &VisibilityStats> = stats.iter().map(|s| (s.object_id, s)).collect();
        let missing: Vec<ObjectId> = self.bags.keys().copied().filter(|id| !by_id.contains_key(id)).collect();
        if !missing.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "visibility stats missing for objects {missing:?}"
            )));
        }
        let bags = self
            .bags
            .iter()
            .filter(|(id, _)| by_id[*id].ratio() >= threshold)
            .map(|(id, bag)| (*id, bag.clone()))
            .collect();
        Ok(Self { bags, ..self.clone() })
    }
}

/// Embeds every masked view and groups the results per object.
///
/// Canonical phrases are embedded once with the same embedder.
pub fn build_bank(views: &[MaskedView], embedder: &dyn Embedder, canonical_phrases: &[&str]) -> Result<EmbeddingBank> {
    let mut seen = HashSet::new();
    for v in views {
        if !seen.insert((v.object_id, v.view_id.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "duplicate (object {}, view {:?}) pair",
                v.object_id, v.view_id
            )));
        }
    }
    let canonical = canonical_phrases
        .iter()
        .map(|&phrase| {
            let embedding = embedder.embed_text(phrase).map_err(|e| Error::Embed {
                context: format!("canonical phrase {phrase:?}"),
                message: e.to_string(),
            })?;
            Ok(CanonicalPhrase {
                phrase: phrase.to_string(),
                embedding,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut bags: BTreeMap<ObjectId, EmbeddingBag> = BTreeMap::new();
    for v in views {
        let embedding = embedder
            .embed_view(v.object_id, &v.view_id, &v.image)
            .map_err(|e| Error::Embed {
                context: format!("object {} view {:?}", v.object_id, v.view_id),
                message: e.to_string(),
            })?;
        bags.entry(v.object_id)
            .or_insert_with(|| EmbeddingBag {
                object_id: v.object_id,
                entries: Vec::new(),
            })
            .entries
            .push(BagEntry {
                view_id: v.view_id.clone(),
                embedding,
            });
    }
    let total_views = views.iter().map(|v| v.view_id.as_str()).collect::<BTreeSet<_>>().len() as u32;
    EmbeddingBank::new(embedder.dim(), bags, canonical, total_views)
}

// --- EMB container -------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbManifest {
    format: String,
    version: u32,
    dim: usize,
    #[serde(default)]
    total_views: Option<u32>,
    canonical: Vec<CanonicalRecord>,
    records: Vec<EmbRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CanonicalRecord {
    phrase: String,
    /// Byte offset into `vectors.bin`.
    offset: usize,
    dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbRecord {
    object_id: ObjectId,
    view_id: String,
    offset: usize,
    dim: usize,
}

/// Reads a JSON array of [`VisibilityStats`].
pub fn load_visibility_stats(path: &Path) -> Result<Vec<VisibilityStats>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let stats: Vec<VisibilityStats> = serde_json::from_slice(&bytes)?;
    if let Some(s) = stats.iter().find(|s| s.views_visible > s.total_views) {
        return Err(Error::InvalidArgument(format!(
            "object {} visible in {} of {} views",
            s.object_id, s.views_visible, s.total_views
        )));
    }
    Ok(stats)
}

pub fn save_visibility_stats(stats: &[VisibilityStats], path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(stats)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn ingest_bank(path: &Path) -> Result<EmbeddingBank> {
    let mut entries = container::read_entries(path, &[EMB_MANIFEST, EMB_VECTORS])?;
    let vectors = entries.pop().unwrap_or_default();
    let manifest = entries.pop().unwrap_or_default();
    decode_bank(&manifest, &vectors)
}

pub fn write_bank(bank: &EmbeddingBank, path: &Path) -> Result<()> {
    let (manifest, vectors) = encode_bank(bank)?;
    container::write_entries(path, &[(EMB_MANIFEST, &manifest), (EMB_VECTORS, &vectors)])
}

fn encode_bank(bank: &EmbeddingBank) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut vectors = Vec::new();
    let mut push = |e: &Embedding| {
        let offset = vectors.len();
        for v in e.as_slice() {
            vectors.extend_from_slice(&v.to_le_bytes());
        }
        offset
    };
    let canonical = bank
        .canonical
        .iter()
        .map(|c| CanonicalRecord {
            phrase: c.phrase.clone(),
            offset: push(&c.embedding),
            dim: bank.dim,
        })
        .collect();
    let records = bank
        .bags
        .values()
        .flat_map(|bag| bag.entries.iter().map(move |e| (bag.object_id, e)))
        .map(|(object_id, e)| EmbRecord {
            object_id,
            view_id: e.view_id.clone(),
            offset: push(&e.embedding),
            dim: bank.dim,
        })
        .collect();
    let manifest = EmbManifest {
        format: "emb".into(),
        version: 1,
        dim: bank.dim,
        total_views: Some(bank.total_views),
        canonical,
        records,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    Ok((bytes, vectors))
}

fn decode_bank(manifest_bytes: &[u8], vectors: &[u8]) -> Result<EmbeddingBank> {
    let m: EmbManifest = serde_json::from_slice(manifest_bytes).map_err(|e| Error::Manifest(e.to_string()))?;
    if m.format != "emb" || m.version != 1 {
        return Err(Error::Manifest(format!(
            "unsupported container {:?} v{}",
            m.format, m.version
        )));
    }
    if m.dim == 0 {
        return Err(Error::Manifest("dim must be positive".into()));
    }
    let read = |what: &str, offset: usize, dim: usize| -> Result<Embedding> {
        if dim != m.dim {
            return Err(Error::Dimension(format!("{what} has dim {dim}, bank dim {}", m.dim)));
        }
        let end = offset + 4 * dim;
        if !offset.is_multiple_of(4) || end > vectors.len() {
            return Err(Error::ArrayLength(format!(
                "{what} spans bytes {offset}..{end}, vectors.bin holds {}",
                vectors.len()
            )));
        }
        let raw: Vec<f32> = vectors[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Embedding::normalized_f32(&raw).ok_or_else(|| Error::ZeroNorm(what.to_string()))
    };

    let canonical = m
        .canonical
        .iter()
        .map(|c| {
            Ok(CanonicalPhrase {
                phrase: c.phrase.clone(),
                embedding: read(&format!("canonical {:?}", c.phrase), c.offset, c.dim)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut bags: BTreeMap<ObjectId, EmbeddingBag> = BTreeMap::new();
    for (i, r) in m.records.iter().enumerate() {
        let what = format!("record {i} (object {}, view {:?})", r.object_id, r.view_id);
        let embedding = read(&what, r.offset, r.dim)?;
        bags.entry(r.object_id)
            .or_insert_with(|| EmbeddingBag {
                object_id: r.object_id,
                entries: Vec::new(),
            })
            .entries
            .push(BagEntry {
                view_id: r.view_id.clone(),
                embedding,
            });
    }
    let total_views = m.total_views.unwrap_or_else(|| {
        m.records
            .iter()
            .map(|r| r.view_id.as_str())
            .collect::<BTreeSet<_>>()
            .len() as u32
    });
    EmbeddingBank::new(m.dim, bags, canonical, total_views)
}
