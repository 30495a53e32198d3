//! Manifest-driven batch evaluation of text-driven 2D segmentation.
//!
//! A dataset manifest is JSON; relative paths resolve against the manifest's
//! directory:
//!
//! ```json
//! {
//!   "scene": "scene.gsg",
//!   "bank": "bank.emb",
//!   "classifier": "classifier.json",
//!   "cases": [ { "view_id": "cam0", "query": "red", "gt_mask": "gt/cam0_red.pgm" } ],
//!   "config": { "k": 5, "rule": "top1" }
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::IdentityClassifier;
use crate::embedder::{Embedder, FileEmbedder, ToyEmbedder};
use crate::embedding::{ingest_bank, EmbeddingBank};
use crate::error::{Error, Result};
use crate::gsg::load_scene;
use crate::relevancy::{rank_objects, SelectionRule, DEFAULT_TOP_K};
use crate::render::{render, RenderOptions, RenderedView, DEFAULT_ALPHA_FLOOR, DEFAULT_TILE_SIZE};
use crate::scene::{GroupedScene, ObjectId};
use crate::tasks::{iou, localization_hit, mask_from_view, BinaryMask};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderSpec {
    #[default]
    Toy,
    /// Precomputed embeddings, see [`FileEmbedder`].
    File(PathBuf),
}

impl EmbedderSpec {
    pub fn load(&self, base: &Path) -> Result<Arc<dyn Embedder>> {
        Ok(match self {
            EmbedderSpec::Toy => Arc::new(ToyEmbedder),
            EmbedderSpec::File(p) => Arc::new(FileEmbedder::load(&base.join(p))?),
        })
    }
}

/// How a case with empty prediction and empty ground truth is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyPolicy {
    /// IoU 1.0, flagged in the case row.
    #[default]
    Vacuous,
    /// Left out of the mIoU mean.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k: usize,
    pub rule: SelectionRule,
    pub alpha_floor: f32,
    pub tile_size: u32,
    pub empty_policy: EmptyPolicy,
    pub embedder: EmbedderSpec,
    /// Echoed only; evaluation draws no random numbers.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            rule: SelectionRule::Top1,
            alpha_floor: DEFAULT_ALPHA_FLOOR,
            tile_size: DEFAULT_TILE_SIZE,
            empty_policy: EmptyPolicy::Vacuous,
            embedder: EmbedderSpec::Toy,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            tile_size: self.tile_size,
            alpha_floor: self.alpha_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub view_id: String,
    pub query: String,
    pub gt_mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scene: PathBuf,
    pub bank: PathBuf,
    pub classifier: PathBuf,
    pub cases: Vec<CaseSpec>,
    #[serde(default)]
    pub config: Option<PipelineConfig>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub view_id: String,
    pub query: String,
    pub selected: Vec<ObjectId>,
    /// `None` when skipped under [`EmptyPolicy::Skip`].
    pub iou: Option<f64>,
    pub hit: bool,
    /// Prediction and ground truth were both empty.
    pub both_empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cases: Vec<CaseReport>,
    pub miou: f64,
    pub localization_accuracy: f64,
    pub scored_cases: usize,
    pub config: PipelineConfig,
}

impl EvalReport {
    pub fn from_cases(cases: Vec<CaseReport>, config: PipelineConfig) -> Self {
        let ious: Vec<f64> = cases.iter().filter_map(|c| c.iou).collect();
        let miou = if ious.is_empty() {
            0.0
        } else {
            ious.iter().sum::<f64>() / ious.len() as f64
        };
        let localization_accuracy = if cases.is_empty() {
            0.0
        } else {
            cases.iter().filter(|c| c.hit).count() as f64 / cases.len() as f64
        };
        Self {
            scored_cases: ious.len(),
            cases,
            miou,
            localization_accuracy,
            config,
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:<24} {:>8} {:>5}  selected",
            "view", "query", "IoU", "hit"
        );
        for c in &self.cases {
            let iou = c.iou.map_or("skip".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "{:<16} {:<24} {:>8} {:>5}  {:?}{}",
                c.view_id,
                c.query,
                iou,
                if c.hit { "yes" } else { "no" },
                c.selected,
                if c.both_empty { " (empty)" } else { "" }
            );
        }
        let _ = writeln!(
            out,
            "mIoU {:.4} over {} cases, localization accuracy {:.4} (k={}, rule={})",
            self.miou, self.scored_cases, self.localization_accuracy, self.config.k, self.config.rule
        );
        out
    }
}

/// Loaded assets for one scene.
pub struct Assets {
    pub scene: GroupedScene,
    pub bank: EmbeddingBank,
    pub classifier: IdentityClassifier,
}

/// Runs every case in `manifest_path`. `config` overrides the manifest's
/// own config block. Predicted masks are written to `artifact_dir` when set.
pub fn evaluate(
    manifest_path: &Path,
    config: Option<PipelineConfig>,
    artifact_dir: Option<&Path>,
) -> Result<EvalReport> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let config = config.or_else(|| manifest.config.clone()).unwrap_or_default();

    let resolve = |p: &Path| base.join(p);
    let mut missing: Vec<String> = [&manifest.scene, &manifest.bank, &manifest.classifier]
        .into_iter()
        .chain(manifest.cases.iter().map(|c| &c.gt_mask))
        .map(|p| resolve(p))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if let EmbedderSpec::File(p) = &config.embedder {
        if !resolve(p).exists() {
            missing.push(resolve(p).display().to_string());
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingAssets(missing));
    }

    let assets = Assets {
        scene: load_scene(&resolve(&manifest.scene))?,
        bank: ingest_bank(&resolve(&manifest.bank))?,
        classifier: IdentityClassifier::load(&resolve(&manifest.classifier))?,
    };
    let unknown_views: Vec<String> = manifest
        .cases
        .iter()
        .filter(|c| assets.scene.camera(&c.view_id).is_none())
        .map(|c| format!("view {:?}", c.view_id))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !unknown_views.is_empty() {
        return Err(Error::MissingAssets(unknown_views));
    }
    let gts = manifest
        .cases
        .iter()
        .map(|c| BinaryMask::load(&resolve(&c.gt_mask)))
        .collect::<Result<Vec<_>>>()?;
    let embedder = config.embedder.load(base)?;
    evaluate_cases(&assets, &manifest.cases, &gts, embedder.as_ref(), &config, artifact_dir)
}

/// Core of [`evaluate`] over already-loaded inputs.
pub fn evaluate_cases(
    assets: &Assets,
    cases: &[CaseSpec],
    gts: &[BinaryMask],
    embedder: &dyn Embedder,
    config: &PipelineConfig,
    artifact_dir: Option<&Path>,
) -> Result<EvalReport> {
    if cases.len() != gts.len() {
        return Err(Error::InvalidArgument("one ground-truth mask per case required".into()));
    }
    let options = config.render_options();
    let views: BTreeSet<&str> = cases.iter().map(|c| c.view_id.as_str()).collect();
    let rendered: BTreeMap<&str, RenderedView> = views
        .into_par_iter()
        .map(|v| {
            let cam = assets
                .scene
                .camera(v)
                .ok_or_else(|| Error::MissingAssets(vec![format!("view {v:?}")]))?;
            Ok((v, render(&assets.scene, cam, &assets.classifier, &options)?))
        })
        .collect::<Result<_>>()?;

    if let Some(dir) = artifact_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let rows = cases
        .par_iter()
        .zip(gts)
        .enumerate()
        .map(|(i, (case, gt))| {
            let view = &rendered[case.view_id.as_str()];
            let result = rank_objects(&assets.bank, &case.query, embedder, config.k, config.rule)?;
            let pred = mask_from_view(view, &result.selected_set());
            let both_empty = pred.is_empty() && gt.is_empty();
            let iou = match (both_empty, config.empty_policy) {
                (true, EmptyPolicy::Skip) => None,
                _ => Some(iou(&pred, gt)?),
            };
            let hit = localization_hit(&pred, Some(&view.alpha), gt)?;
            if let Some(dir) = artifact_dir {
                pred.save(&dir.join(format!("{i:04}_{}.pgm", sanitize(&case.view_id))))?;
            }
            Ok(CaseReport {
                view_id: case.view_id.clone(),
                query: case.query.clone(),
                selected: result.selected,
                iou,
                hit,
                both_empty,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_cases(rows, config.clone()))
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(iou: Option<f64>, hit: bool) -> CaseReport {
        CaseReport {
            view_id: "v".into(),
            query: "q".into(),
            selected: vec![0],
            iou,
            hit,
            both_empty: false,
        }
    }

    #[test]
    fn aggregation_is_plain_means() {
        let r = EvalReport::from_cases(
            vec![row(Some(1.0), true), row(Some(0.0), false)],
            PipelineConfig::default(),
        );
        assert_eq!(r.miou, 0.5);
        assert_eq!(r.localization_accuracy, 0.5);
        let r = EvalReport::from_cases(vec![row(Some(1.0), true), row(None, false)], PipelineConfig::default());
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.scored_cases, 1);
        assert!(r.to_table().contains("skip"));
    }

    #[test]
    fn config_defaults_and_echo() {
        let c: PipelineConfig = serde_json::from_str(r#"{"rule":"threshold:0.6"}"#).unwrap();
        assert_eq!(c.k, 5);
        assert_eq!(c.rule, SelectionRule::Threshold(0.6));
        let json = serde_json::to_value(&c).unwrap();
        assert_eq!(json["k"], 5);
        assert_eq!(json["embedder"], "toy");
        let f: PipelineConfig = serde_json::from_str(r#"{"embedder":{"file":"e.json"}}"#).unwrap();
        assert_eq!(f.embedder, EmbedderSpec::File("e.json".into()));
    }

    #[test]
    fn missing_assets_are_listed_together() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.json");
        std::fs::write(
            &m,
            r#"{"scene":"s.gsg","bank":"b.emb","classifier":"c.json",
                "cases":[{"view_id":"v","query":"red","gt_mask":"gt1.pgm"},
                         {"view_id":"v","query":"red","gt_mask":"gt2.pgm"}]}"#,
        )
        .unwrap();
        match evaluate(&m, None, None).unwrap_err() {
            Error::MissingAssets(list) => {
                assert_eq!(list.len(), 5);
                assert!(list.iter().any(|p| p.ends_with("gt2.pgm")));
            }
            other => panic!("unexpected {other}"),
        }
    }
}
