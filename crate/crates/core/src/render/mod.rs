//! CPU tile-based Gaussian splatting.
//!
//! Colour and the 16-channel identity encoding are alpha-blended front to
//! back with the same weights:
//!
//! ```text
//! out(p) = sum_i v_i * alpha_i(p) * prod_{j<i} (1 - alpha_j(p))
//! ```
//!
//! Splats are sorted once per view by depth (ties by source index), binned
//! into tiles by their footprint, and every tile is blended independently.
//! The footprint is exact with respect to the skip threshold, so a pixel
//! sees the same contributions in the same order for any tile size and
//! the output is bit-identical across tile sizes and thread schedules.

mod project;

pub use project::{
    covariance_3d, project_gaussian, ProjectedSplat, ALPHA_MAX, ALPHA_MIN, COV2D_DILATION, NEAR_PLANE,
    TRANSMITTANCE_MIN,
};

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::classifier::IdentityClassifier;
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::scene::{Camera, GroupedScene, ObjectId, IDENTITY_DIM};

pub const DEFAULT_TILE_SIZE: u32 = 16;
/// Pixels with accumulated alpha at or below this stay UNASSIGNED.
pub const DEFAULT_ALPHA_FLOOR: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub tile_size: u32,
    pub alpha_floor: f32,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            alpha_floor: DEFAULT_ALPHA_FLOOR,
        }
    }
}

/// Output of one render. All buffers are row-major; `rgb` is `H x W x 3`
/// and `identity_features` is `H x W x 16`. Background is black.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub camera: Camera,
    pub rgb: Vec<f32>,
    pub alpha: Vec<f32>,
    pub identity_features: Vec<f32>,
    pub id_map: Vec<Option<ObjectId>>,
}

impl RenderedView {
    pub fn width(&self) -> u32 {
        self.camera.width
    }

    pub fn height(&self) -> u32 {
        self.camera.height
    }

    pub fn feature(&self, pixel: usize) -> &[f32] {
        &self.identity_features[pixel * IDENTITY_DIM..(pixel + 1) * IDENTITY_DIM]
    }

    pub fn rgb_image(&self) -> RgbImage {
        RgbImage {
            width: self.width(),
            height: self.height(),
            data: self.rgb.clone(),
        }
    }

    /// Pixels whose ID is in `ids`.
    pub fn id_mask(&self, ids: &BTreeSet<ObjectId>) -> Vec<bool> {
        self.id_map
            .iter()
            .map(|id| id.is_some_and(|id| ids.contains(&id)))
            .collect()
    }

    /// RGB with pixels of `ids` blended toward `highlight` by `strength`.
    pub fn overlay(&self, ids: &BTreeSet<ObjectId>, highlight: [f32; 3], strength: f32) -> RgbImage {
        let mut img = self.rgb_image();
        for (px, hit) in img.data.chunks_exact_mut(3).zip(self.id_mask(ids)) {
            if hit {
                for (c, h) in px.iter_mut().zip(highlight) {
                    *c = (1.0 - strength) * *c + strength * h;
                }
            }
        }
        img
    }
}

/// Blended buffers before classification.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<f32>,
    pub alpha: Vec<f32>,
    pub identity_features: Vec<f32>,
}

/// Projects all Gaussians and sorts the survivors front to back.
pub fn project_scene(scene: &GroupedScene, cam: &Camera) -> Vec<ProjectedSplat> {
    let mut splats: Vec<ProjectedSplat> = scene
        .gaussians()
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, i, cam))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source_index.cmp(&b.source_index)));
    splats
}

/// Blends depth-sorted splats into colour, alpha and identity buffers.
pub fn rasterize(sorted: &[ProjectedSplat], width: u32, height: u32, tile_size: u32) -> Raster {
    assert!(tile_size > 0, "tile size must be positive");
    let (w, h) = (width as usize, height as usize);
    let tiles_x = width.div_ceil(tile_size) as usize;
    let tiles_y = height.div_ceil(tile_size) as usize;

    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, s) in sorted.iter().enumerate() {
        let Some((x0, y0, x1, y1)) = s.pixel_rect(width, height) else {
            continue;
        };
        for ty in (y0 / tile_size)..=(y1 / tile_size) {
            for tx in (x0 / tile_size)..=(x1 / tile_size) {
                bins[ty as usize * tiles_x + tx as usize].push(i as u32);
            }
        }
    }

    let tiles: Vec<TileOutput> = bins
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let tx = (t % tiles_x) as u32 * tile_size;
            let ty = (t / tiles_x) as u32 * tile_size;
            blend_tile(
                sorted,
                list,
                tx,
                ty,
                tile_size.min(width - tx),
                tile_size.min(height - ty),
            )
        })
        .collect();

    let mut rgb = vec![0.0f32; w * h * 3];
    let mut alpha = vec![0.0f32; w * h];
    let mut features = vec![0.0f32; w * h * IDENTITY_DIM];
    for tile in tiles {
        for row in 0..tile.h as usize {
            for col in 0..tile.w as usize {
                let src = row * tile.w as usize + col;
                let dst = (tile.y as usize + row) * w + tile.x as usize + col;
                alpha[dst] = tile.alpha[src];
                rgb[dst * 3..dst * 3 + 3].copy_from_slice(&tile.rgb[src * 3..src * 3 + 3]);
                features[dst * IDENTITY_DIM..(dst + 1) * IDENTITY_DIM]
                    .copy_from_slice(&tile.features[src * IDENTITY_DIM..(src + 1) * IDENTITY_DIM]);
            }
        }
    }
    Raster {
        width,
        height,
        rgb,
        alpha,
        identity_features: features,
    }
}

struct TileOutput {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    rgb: Vec<f32>,
    alpha: Vec<f32>,
    features: Vec<f32>,
}

fn blend_tile(sorted: &[ProjectedSplat], list: &[u32], x: u32, y: u32, w: u32, h: u32) -> TileOutput {
    let n = w as usize * h as usize;
    let mut out = TileOutput {
        x,
        y,
        w,
        h,
        rgb: vec![0.0; n * 3],
        alpha: vec![0.0; n],
        features: vec![0.0; n * IDENTITY_DIM],
    };
    for row in 0..h {
        for col in 0..w {
            let (px, py) = (f64::from(x + col), f64::from(y + row));
            let mut transmittance = 1.0f64;
            let mut acc_alpha = 0.0f64;
            let mut acc_rgb = [0.0f64; 3];
            let mut acc_feat = [0.0f64; IDENTITY_DIM];
            for &i in list {
                let s = &sorted[i as usize];
                let a = s.alpha_at(px, py);
                if a < ALPHA_MIN {
                    continue;
                }
                let next = transmittance * (1.0 - a);
                if next < TRANSMITTANCE_MIN {
                    break;
                }
                let weight = a * transmittance;
                for (acc, &c) in acc_rgb.iter_mut().zip(&s.color) {
                    *acc += weight * f64::from(c);
                }
                for (acc, &e) in acc_feat.iter_mut().zip(&s.identity) {
                    *acc += weight * f64::from(e);
                }
                acc_alpha += weight;
                transmittance = next;
            }
            let p = (row * w + col) as usize;
            out.alpha[p] = acc_alpha as f32;
            for (dst, &v) in out.rgb[p * 3..p * 3 + 3].iter_mut().zip(&acc_rgb) {
                *dst = v as f32;
            }
            for (dst, &v) in out.features[p * IDENTITY_DIM..(p + 1) * IDENTITY_DIM]
                .iter_mut()
                .zip(&acc_feat)
            {
                *dst = v as f32;
            }
        }
    }
    out
}

/// Argmax ID per pixel where `alpha > alpha_floor`, UNASSIGNED elsewhere.
pub fn classify_pixels(
    features: &[f32],
    alpha: &[f32],
    clf: &IdentityClassifier,
    alpha_floor: f32,
) -> Result<Vec<Option<ObjectId>>> {
    if features.len() != alpha.len() * IDENTITY_DIM {
        return Err(Error::Dimension(format!(
            "{} feature values for {} pixels, expected {IDENTITY_DIM} per pixel",
            features.len(),
            alpha.len()
        )));
    }
    Ok(features
        .par_chunks(IDENTITY_DIM * 256)
        .zip(alpha.par_chunks(256))
        .flat_map_iter(|(feats, alphas)| {
            let mut scratch = vec![0.0; clf.num_classes()];
            feats
                .chunks_exact(IDENTITY_DIM)
                .zip(alphas)
                .map(|(f, &a)| {
                    if a > alpha_floor {
                        clf.classify_with(f, &mut scratch)
                    } else {
                        None
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect())
}

/// Renders `scene` from `cam` and classifies every covered pixel.
pub fn render(
    scene: &GroupedScene,
    cam: &Camera,
    clf: &IdentityClassifier,
    options: &RenderOptions,
) -> Result<RenderedView> {
    if clf.num_objects() != scene.num_objects() {
        return Err(Error::Dimension(format!(
            "classifier has {} object classes, scene has {}",
            clf.num_objects(),
            scene.num_objects()
        )));
    }
    if options.tile_size == 0 {
        return Err(Error::InvalidArgument("tile size must be positive".into()));
    }
    cam.validate()?;
    let sorted = project_scene(scene, cam);
    let raster = rasterize(&sorted, cam.width, cam.height, options.tile_size);
    let id_map = classify_pixels(&raster.identity_features, &raster.alpha, clf, options.alpha_floor)?;
    Ok(RenderedView {
        camera: cam.clone(),
        rgb: raster.rgb,
        alpha: raster.alpha,
        identity_features: raster.identity_features,
        id_map,
    })
}
