//! Deterministic demo scenes: colored Gaussian clusters seen by a ring of
//! cameras, with an identity classifier and a toy-embedder bank to match.

use crate::classifier::IdentityClassifier;
use crate::embedder::ToyEmbedder;
use crate::embedding::{build_bank, EmbeddingBank, MaskedView, DEFAULT_CANONICAL_PHRASES};
use crate::error::Result;
use crate::render::{render, RenderOptions, RenderedView};
use crate::scene::{Camera, GroupedScene, ObjectId, SplatGaussian, IDENTITY_DIM};

/// One cluster of isotropic Gaussians sharing color and object ID.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub object_id: ObjectId,
    pub name: &'static str,
    pub center: [f32; 3],
    pub color: [f32; 3],
}

pub const CLUSTER_SIGMA: f32 = 0.18;
pub const CLUSTER_OPACITY: f32 = 0.95;
/// Offsets of the members from the cluster center.
pub const CLUSTER_OFFSETS: [[f32; 3]; 5] = [
    [0.0, 0.0, 0.0],
    [0.22, 0.0, 0.0],
    [-0.22, 0.0, 0.0],
    [0.0, 0.22, 0.0],
    [0.0, -0.22, 0.0],
];
/// Scale of the one-hot identity encodings.
pub const IDENTITY_SCALE: f32 = 10.0;
pub const CLASSIFIER_BACKGROUND_LOGIT: f64 = 1.0;

pub fn benchmark_clusters() -> Vec<Cluster> {
    vec![
        Cluster {
            object_id: 0,
            name: "red",
            center: [-1.6, 0.0, 0.0],
            color: [0.9, 0.1, 0.1],
        },
        Cluster {
            object_id: 1,
            name: "green",
            center: [0.0, 0.3, 0.0],
            color: [0.1, 0.8, 0.15],
        },
        Cluster {
            object_id: 2,
            name: "blue",
            center: [1.6, -0.2, 0.0],
            color: [0.1, 0.2, 0.9],
        },
    ]
}

pub fn identity_for(id: ObjectId) -> [f32; IDENTITY_DIM] {
    let mut e = [0.0; IDENTITY_DIM];
    e[id as usize] = IDENTITY_SCALE;
    e
}

pub fn benchmark_cameras() -> Vec<Camera> {
    let eyes = [[0.0, 0.0, -6.0], [1.5, 0.8, -5.6], [-1.5, 0.6, -5.7], [0.4, -1.2, -5.8]];
    eyes.iter()
        .enumerate()
        .map(|(i, &eye)| Camera::look_at(format!("cam{i}"), eye, [0.0; 3], [0.0, 1.0, 0.0], 90.0, 96, 64))
        .collect()
}

/// Three well-separated clusters (red, green, blue; IDs 0-2) of five
/// Gaussians each, viewed by four cameras.
pub fn benchmark_scene() -> GroupedScene {
    let gaussians = benchmark_clusters()
        .iter()
        .flat_map(|c| {
            CLUSTER_OFFSETS.iter().map(move |o| {
                let p = [c.center[0] + o[0], c.center[1] + o[1], c.center[2] + o[2]];
                SplatGaussian::isotropic(p, CLUSTER_SIGMA, CLUSTER_OPACITY, c.color)
                    .with_identity(identity_for(c.object_id))
                    .with_object(Some(c.object_id))
            })
        })
        .collect();
    GroupedScene::new(gaussians, benchmark_cameras(), 3).expect("valid by construction")
}

pub fn benchmark_classifier() -> IdentityClassifier {
    IdentityClassifier::one_hot(3, 1.0, CLASSIFIER_BACKGROUND_LOGIT)
}

/// One masked image per (object, view) pair: the rendered RGB with every
/// pixel outside the object's ID region blacked out.
pub fn masked_views(view: &RenderedView) -> Vec<MaskedView> {
    let ids: std::collections::BTreeSet<ObjectId> = view.id_map.iter().flatten().copied().collect();
    let rgb = view.rgb_image();
    ids.into_iter()
        .map(|id| MaskedView {
            object_id: id,
            view_id: view.camera.view_id.clone(),
            image: rgb.masked(|p| view.id_map[p] == Some(id)),
        })
        .collect()
}

/// Renders every camera of `scene` and embeds each object's masked views.
pub fn bank_from_renders(
    scene: &GroupedScene,
    clf: &IdentityClassifier,
    options: &RenderOptions,
) -> Result<EmbeddingBank> {
    let mut views = Vec::new();
    for cam in scene.cameras() {
        views.extend(masked_views(&render(scene, cam, clf, options)?));
    }
    build_bank(&views, &ToyEmbedder, &DEFAULT_CANONICAL_PHRASES)
}

/// Scene, classifier and bank of the three-cluster benchmark.
pub fn benchmark() -> (GroupedScene, IdentityClassifier, EmbeddingBank) {
    let scene = benchmark_scene();
    let clf = benchmark_classifier();
    let bank = bank_from_renders(&scene, &clf, &RenderOptions::default()).expect("benchmark renders");
    (scene, clf, bank)
}
