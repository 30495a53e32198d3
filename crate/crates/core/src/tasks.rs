//! Downstream uses of a query answer: masking pixels of a rendered view
//! (2D segmentation) and filtering Gaussians (3D extraction), plus the
//! mask metrics used to score them.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use crate::classifier::IdentityClassifier;
use crate::embedder::Embedder;
use crate::embedding::EmbeddingBank;
use crate::error::{Error, Result};
use crate::image;
use crate::relevancy::{rank_objects, QueryResult, SelectionRule};
use crate::render::{render, RenderOptions, RenderedView};
use crate::scene::{Camera, GroupedScene};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32, pixels: Vec<bool>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::Dimension(format!(
                "{} pixels for a {width}x{height} mask",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self { width, height, pixels }
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Any nonzero PGM sample is foreground.
    pub fn load(path: &Path) -> Result<Self> {
        let (w, h, values) = image::read_pgm(path)?;
        Self::new(w, h, values.into_iter().map(|v| v != 0).collect())
    }

    /// 8-bit PGM, 255 for foreground.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.pixels.iter().map(|&p| if p { 255 } else { 0 }).collect();
        image::write_pgm8(path, self.width, self.height, &bytes)
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::Dimension(format!(
                "mask sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Everything produced by one text-driven 2D segmentation.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub mask: BinaryMask,
    pub result: QueryResult,
    pub view: RenderedView,
}

fn check_bank_ids(bank: &EmbeddingBank, num_objects: u32) -> Result<()> {
    let unknown: Vec<_> = bank.bags().keys().copied().filter(|&id| id >= num_objects).collect();
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(Error::UnknownIds {
            ids: unknown,
            num_objects,
        })
    }
}

/// Pixels of `view` whose ID was selected.
pub fn mask_from_view(view: &RenderedView, selected: &BTreeSet<u32>) -> BinaryMask {
    BinaryMask {
        width: view.width(),
        height: view.height(),
        pixels: view.id_mask(selected),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn segment_2d(
    scene: &GroupedScene,
    cam: &Camera,
    clf: &IdentityClassifier,
    bank: &EmbeddingBank,
    query: &str,
    embedder: &dyn Embedder,
    k: usize,
    rule: SelectionRule,
    options: &RenderOptions,
) -> Result<Segmentation> {
    check_bank_ids(bank, scene.num_objects())?;
    let result = rank_objects(bank, query, embedder, k, rule)?;
    let view = render(scene, cam, clf, options)?;
    let mask = mask_from_view(&view, &result.selected_set());
    Ok(Segmentation { mask, result, view })
}

pub fn extract_3d(
    scene: &GroupedScene,
    bank: &EmbeddingBank,
    query: &str,
    embedder: &dyn Embedder,
    k: usize,
    rule: SelectionRule,
) -> Result<(GroupedScene, QueryResult)> {
    check_bank_ids(bank, scene.num_objects())?;
    let result = rank_objects(bank, query, embedder, k, rule)?;
    let sub = scene.filter_by_object_ids(&result.selected_set())?;
    Ok((sub, result))
}

/// Intersection over union. Two empty masks score 1.0.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.same_shape(gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.pixels.iter().zip(&gt.pixels) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Largest 8-connected component (ties: the one reached first in raster
/// order), as pixel indices.
pub fn largest_component(mask: &BinaryMask) -> Vec<usize> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut seen = vec![false; mask.pixels.len()];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..mask.pixels.len() {
        if !mask.pixels[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            let (x, y) = ((p as i64) % w, (p as i64) / w);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let q = (ny * w + nx) as usize;
                    if mask.pixels[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best.sort_unstable();
    best
}

/// Representative pixel of a predicted mask: the rounded centroid of its
/// largest component, or, when that lands outside the component, the
/// component pixel with the highest `alpha` (nearest to the centroid when
/// no alpha is given). `None` for an empty mask.
pub fn representative_point(mask: &BinaryMask, alpha: Option<&[f32]>) -> Option<(u32, u32)> {
    let comp = largest_component(mask);
    if comp.is_empty() {
        return None;
    }
    let w = mask.width as usize;
    let n = comp.len() as f64;
    let cx = comp.iter().map(|&p| (p % w) as f64).sum::<f64>() / n;
    let cy = comp.iter().map(|&p| (p / w) as f64).sum::<f64>() / n;
    let centroid = cy.round() as usize * w + cx.round() as usize;
    let pixel = if comp.binary_search(&centroid).is_ok() {
        centroid
    } else if let Some(alpha) = alpha {
        *comp
            .iter()
            .reduce(|best, p| if alpha[*p] > alpha[*best] { p } else { best })
            .expect("nonempty")
    } else {
        let dist = |p: usize| ((p % w) as f64 - cx).powi(2) + ((p / w) as f64 - cy).powi(2);
        *comp
            .iter()
            .reduce(|best, p| if dist(*p) < dist(*best) { p } else { best })
            .expect("nonempty")
    };
    Some(((pixel % w) as u32, (pixel / w) as u32))
}

/// True when the representative point of `pred` lies inside `gt`. An empty
/// prediction is a miss.
pub fn localization_hit(pred: &BinaryMask, alpha: Option<&[f32]>, gt: &BinaryMask) -> Result<bool> {
    pred.same_shape(gt)?;
    if let Some(a) = alpha {
        if a.len() != pred.pixels.len() {
            return Err(Error::Dimension("alpha size differs from mask".into()));
        }
    }
    Ok(representative_point(pred, alpha).is_some_and(|(x, y)| gt.get(x, y)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    #[test]
    fn iou_cases() {
        let a = rect(8, 8, 1, 1, 4, 4);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &rect(8, 8, 5, 5, 7, 7)).unwrap(), 0.0);
        assert_eq!(iou(&rect(8, 8, 0, 0, 4, 8), &rect(8, 8, 0, 0, 8, 8)).unwrap(), 0.5);
        assert_eq!(iou(&BinaryMask::empty(4, 4), &BinaryMask::empty(4, 4)).unwrap(), 1.0);
        assert!(iou(&a, &BinaryMask::empty(4, 4)).is_err());
    }

    #[test]
    fn hit_inside_and_empty_miss() {
        let gt = rect(10, 10, 2, 2, 8, 8);
        assert!(localization_hit(&rect(10, 10, 3, 3, 6, 6), None, &gt).unwrap());
        assert!(!localization_hit(&BinaryMask::empty(10, 10), None, &gt).unwrap());
    }

    #[test]
    fn larger_component_decides() {
        let gt = rect(12, 12, 6, 6, 12, 12);
        let mut pred = rect(12, 12, 7, 7, 11, 11); // 16 px inside gt
        pred.pixels[0] = true; // 1 px outside
        pred.pixels[1] = true;
        assert!(localization_hit(&pred, None, &gt).unwrap());
    }

    #[test]
    fn ring_falls_back_to_alpha_peak() {
        // centroid of a ring is its hole
        let ring = BinaryMask::from_fn(9, 9, |x, y| {
            let (dx, dy) = (x as i32 - 4, y as i32 - 4);
            dx.abs().max(dy.abs()) == 3
        });
        let mut alpha = vec![0.1f32; 81];
        alpha[7 * 9 + 4] = 0.9;
        assert_eq!(representative_point(&ring, Some(&alpha)), Some((4, 7)));
        let p = representative_point(&ring, None).unwrap();
        assert!(ring.get(p.0, p.1));
    }

    #[test]
    fn component_is_eight_connected() {
        let diag = BinaryMask::from_fn(4, 4, |x, y| x == y);
        assert_eq!(largest_component(&diag).len(), 4);
    }
}
