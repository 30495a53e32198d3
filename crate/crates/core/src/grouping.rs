//! Forward evaluation of the identity-grouping supervision signals and the
//! per-object visibility counts derived from ID masks.

use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classifier::IdentityClassifier;
use crate::embedding::VisibilityStats;
use crate::error::{Error, Result};
use crate::image;
use crate::scene::{GroupedScene, ObjectId, IDENTITY_DIM};

pub const DEFAULT_NEIGHBORS: usize = 5;

/// Per-view object ID mask, as produced by an external segment-and-track
/// stage.
#[derive(Debug, Clone, PartialEq)]
pub struct IdMaskImage {
    pub view_id: String,
    pub width: u32,
    pub height: u32,
    pub labels: Vec<Option<ObjectId>>,
}

impl IdMaskImage {
    pub fn new(view_id: impl Into<String>, width: u32, height: u32, labels: Vec<Option<ObjectId>>) -> Result<Self> {
        if labels.len() != width as usize * height as usize {
            return Err(Error::Dimension(format!(
                "{} labels for a {width}x{height} mask",
                labels.len()
            )));
        }
        Ok(Self {
            view_id: view_id.into(),
            width,
            height,
            labels,
        })
    }

    /// Reads a 16-bit PGM (65535 = UNASSIGNED).
    pub fn load(path: &Path, view_id: impl Into<String>) -> Result<Self> {
        let (w, h, values) = image::read_pgm(path)?;
        Self::new(view_id, w, h, image::pgm_to_labels(&values))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        image::write_pgm16(path, self.width, self.height, &image::labels_to_pgm(&self.labels)?)
    }
}

/// Which per-neighbour distance the 3D regularizer averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborDivergence {
    /// `KL(p||q) + KL(q||p)` between classifier distributions.
    #[default]
    SymmetricKl,
    /// Squared L2 distance between raw identity encodings.
    L2,
}

/// Mean cross-entropy of the classifier over labeled pixels.
/// UNASSIGNED pixels do not count.
pub fn identity_loss_2d(features: &[f32], clf: &IdentityClassifier, gt: &IdMaskImage) -> Result<f64> {
    if features.len() != gt.labels.len() * IDENTITY_DIM {
        return Err(Error::Dimension(format!(
            "{} feature values for a {}x{} mask",
            features.len(),
            gt.width,
            gt.height
        )));
    }
    if let Some(bad) = gt.labels.iter().flatten().find(|&&l| l >= clf.num_objects()) {
        return Err(Error::InvalidArgument(format!(
            "mask label {bad} is not below the classifier's {} objects",
            clf.num_objects()
        )));
    }
    let terms: Vec<f64> = features
        .par_chunks(IDENTITY_DIM)
        .zip(gt.labels.par_iter())
        .filter_map(|(f, label)| label.map(|l| -clf.log_probabilities(f)[l as usize]))
        .collect();
    if terms.is_empty() {
        return Err(Error::InvalidArgument("mask has no labeled pixels".into()));
    }
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

/// Exact `m` nearest neighbours of point `i` by Euclidean distance, ties
/// broken by index.
pub fn nearest_neighbors(positions: &[[f64; 3]], i: usize, m: usize) -> Vec<usize> {
    let p = positions[i];
    let mut d: Vec<(f64, usize)> = positions
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, q)| ((0..3).map(|k| (p[k] - q[k]).powi(2)).sum(), j))
        .collect();
    let m = m.min(d.len());
    if m == 0 {
        return Vec::new();
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    d.select_nth_unstable_by(m - 1, cmp);
    d.truncate(m);
    d.sort_by(cmp);
    d.into_iter().map(|(_, j)| j).collect()
}

/// Mean divergence between sampled Gaussians and their `m` nearest
/// neighbours. `sample >= N` uses every Gaussian; otherwise `sample`
/// distinct Gaussians are drawn with `seed`.
pub fn knn_regularization_3d(
    scene: &GroupedScene,
    clf: &IdentityClassifier,
    m: usize,
    sample: usize,
    seed: u64,
    divergence: NeighborDivergence,
) -> Result<f64> {
    let n = scene.len();
    if m == 0 {
        return Err(Error::InvalidArgument("neighbour count must be at least 1".into()));
    }
    if m >= n {
        return Err(Error::InvalidArgument(format!(
            "neighbour count {m} must be below the Gaussian count {n}"
        )));
    }
    if sample == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let points: Vec<usize> = if sample >= n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, n, sample).into_vec();
        idx.sort_unstable();
        idx
    };

    let positions: Vec<[f64; 3]> = scene.gaussians().iter().map(|g| g.position.map(f64::from)).collect();
    let log_probs: Vec<Vec<f64>> = match divergence {
        NeighborDivergence::SymmetricKl => scene
            .gaussians()
            .par_iter()
            .map(|g| clf.log_probabilities(&g.identity))
            .collect(),
        NeighborDivergence::L2 => Vec::new(),
    };

    let terms: Vec<f64> = points
        .par_iter()
        .flat_map_iter(|&i| {
            let neighbors = nearest_neighbors(&positions, i, m);
            let log_probs = &log_probs;
            neighbors.into_iter().map(move |j| match divergence {
                NeighborDivergence::SymmetricKl => symmetric_kl(&log_probs[i], &log_probs[j]),
                NeighborDivergence::L2 => {
                    let (a, b) = (&scene.gaussians()[i].identity, &scene.gaussians()[j].identity);
                    a.iter()
                        .zip(b)
                        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
                        .sum()
                }
            })
        })
        .collect();
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

/// `KL(p||q) + KL(q||p) = sum (p - q)(log p - log q)`, from log-probabilities.
pub fn symmetric_kl(log_p: &[f64], log_q: &[f64]) -> f64 {
    log_p
        .iter()
        .zip(log_q)
        .map(|(&lp, &lq)| (lp.exp() - lq.exp()) * (lp - lq))
        .sum()
}

/// Counts, for every object `0..num_objects`, the masks containing at least
/// `min_pixels` of its pixels.
pub fn visibility_stats_from_masks(masks: &[IdMaskImage], num_objects: u32, min_pixels: usize) -> Vec<VisibilityStats> {
    let total_views = masks.len() as u32;
    let mut visible = vec![0u32; num_objects as usize];
    for mask in masks {
        let mut counts = vec![0usize; num_objects as usize];
        for id in mask.labels.iter().flatten() {
            if let Some(c) = counts.get_mut(*id as usize) {
                *c += 1;
            }
        }
        for (v, c) in visible.iter_mut().zip(counts) {
            if c >= min_pixels.max(1) {
                *v += 1;
            }
        }
    }
    visible
        .into_iter()
        .enumerate()
        .map(|(id, views_visible)| VisibilityStats {
            object_id: id as ObjectId,
            views_visible,
            total_views,
        })
        .collect()
}

/// Object IDs that occur anywhere in `masks`.
pub fn ids_in_masks(masks: &[IdMaskImage]) -> BTreeSet<ObjectId> {
    masks.iter().flat_map(|m| m.labels.iter().flatten().copied()).collect()
}

/// Pairwise (cascade) summation; result does not depend on how the terms
/// were produced, only on their order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SplatGaussian;

    fn mask(labels: Vec<Option<ObjectId>>) -> IdMaskImage {
        let n = labels.len() as u32;
        IdMaskImage::new("v", n, 1, labels).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_num_classes() {
        let clf = IdentityClassifier::one_hot(3, 0.0, 0.0);
        let feats = vec![0.3f32; 4 * IDENTITY_DIM];
        let loss = identity_loss_2d(&feats, &clf, &mask(vec![Some(0), Some(2), None, Some(1)])).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unlabeled_mask_is_an_error() {
        let clf = IdentityClassifier::one_hot(3, 0.0, 0.0);
        let feats = vec![0.0f32; 2 * IDENTITY_DIM];
        assert!(identity_loss_2d(&feats, &clf, &mask(vec![None, None])).is_err());
        assert!(identity_loss_2d(&feats, &clf, &mask(vec![Some(7), None])).is_err());
    }

    #[test]
    fn neighbor_count_must_be_below_n() {
        let gs: Vec<_> = (0..3)
            .map(|i| SplatGaussian::isotropic([i as f32, 0.0, 0.0], 0.1, 0.5, [0.5; 3]))
            .collect();
        let scene = GroupedScene::new(gs, vec![], 1).unwrap();
        let clf = IdentityClassifier::one_hot(1, 1.0, 0.0);
        assert!(knn_regularization_3d(&scene, &clf, 3, 3, 0, NeighborDivergence::SymmetricKl).is_err());
        assert!(knn_regularization_3d(&scene, &clf, 2, 3, 0, NeighborDivergence::SymmetricKl).is_ok());
    }

    #[test]
    fn neighbors_tie_break_by_index() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        assert_eq!(nearest_neighbors(&pts, 0, 2), vec![1, 2]);
        assert_eq!(nearest_neighbors(&pts, 3, 1), vec![0]);
    }

    #[test]
    fn visibility_counts() {
        let masks: Vec<IdMaskImage> = (0..10)
            .map(|v| {
                mask(if v < 3 {
                    vec![Some(2), Some(0)]
                } else {
                    vec![Some(0), None]
                })
            })
            .collect();
        let stats = visibility_stats_from_masks(&masks, 3, 1);
        assert_eq!((stats[2].views_visible, stats[2].total_views), (3, 10));
        assert_eq!(stats[0].views_visible, 10);
        assert_eq!(stats[1].views_visible, 0);
    }

    #[test]
    fn min_pixels_threshold() {
        let masks = vec![mask(vec![Some(0), Some(1), Some(1)])];
        let stats = visibility_stats_from_masks(&masks, 2, 2);
        assert_eq!(stats[0].views_visible, 0);
        assert_eq!(stats[1].views_visible, 1);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| f64::from(i) * 0.5).collect();
        assert_eq!(pairwise_sum(&v), v.iter().sum::<f64>());
    }
}
