//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls into the library's math; the reference renderer,
//! relevancy, top-k and kNN oracles are written from the formulas directly.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use bagsplat::embedding::write_bank;
use bagsplat::gsg::save_scene;
use bagsplat::synthetic::{self, Cluster, CLUSTER_OFFSETS, CLUSTER_OPACITY, CLUSTER_SIGMA};
use bagsplat::{BinaryMask, Camera, Embedding, GroupedScene, SplatGaussian, IDENTITY_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Some(e) = Embedding::normalized(&v) {
            return e;
        }
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += f64::from(a[i]) * f64::from(b[i]);
    }
    s
}

// --- relevancy ------------------------------------------------------------

/// `min_k exp(o.q) / (exp(o.q) + exp(o.c_k))`, evaluated literally.
pub fn relevancy_oracle(obj: &[f32], query: &[f32], canon: &[&[f32]]) -> f64 {
    let eq = dot(obj, query).exp();
    canon
        .iter()
        .map(|c| eq / (eq + dot(obj, c).exp()))
        .fold(f64::INFINITY, f64::min)
}

/// Sort descending, average the first `min(k, n)`.
pub fn top_k_oracle(scores: &[f64], k: usize) -> f64 {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let n = k.min(s.len());
    s[..n].iter().sum::<f64>() / n as f64
}

// --- classifier / grouping --------------------------------------------------

pub fn logits_oracle(weights: &[f64], bias: &[f64], x: &[f32]) -> Vec<f64> {
    let classes = bias.len();
    (0..classes)
        .map(|c| {
            let mut s = bias[c];
            for j in 0..IDENTITY_DIM {
                s += weights[c * IDENTITY_DIM + j] * f64::from(x[j]);
            }
            s
        })
        .collect()
}

pub fn softmax_oracle(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn argmax_oracle(z: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..z.len() {
        if z[i] > z[best] {
            best = i;
        }
    }
    best
}

/// `KL(p||q) + KL(q||p)` from probabilities.
pub fn sym_kl_oracle(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * (x / y).ln()).sum::<f64>();
    kl(p, q) + kl(q, p)
}

/// Brute force: every point, fully sorted distance list, first `m`.
pub fn knn_kl_oracle(positions: &[[f32; 3]], probs: &[Vec<f64>], m: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..positions.len() {
        let mut d: Vec<(f64, usize)> = (0..positions.len())
            .filter(|&j| j != i)
            .map(|j| {
                let s: f64 = (0..3)
                    .map(|k| (f64::from(positions[i][k]) - f64::from(positions[j][k])).powi(2))
                    .sum();
                (s, j)
            })
            .collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in d.iter().take(m) {
            total += sym_kl_oracle(&probs[i], &probs[j]);
            count += 1;
        }
    }
    total / count as f64
}

// --- rendering --------------------------------------------------------------

pub struct ReferenceImage {
    pub rgb: Vec<f64>,
    pub alpha: Vec<f64>,
    pub features: Vec<f64>,
}

fn quat_to_matrix(q: [f32; 4]) -> [[f64; 3]; 3] {
    let n = q.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| f64::from(v) / n);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

fn matmul<const A: usize, const B: usize, const C: usize>(l: &[[f64; B]; A], r: &[[f64; C]; B]) -> [[f64; C]; A] {
    let mut out = [[0.0; C]; A];
    for i in 0..A {
        for j in 0..C {
            for k in 0..B {
                out[i][j] += l[i][k] * r[k][j];
            }
        }
    }
    out
}

fn transpose<const A: usize, const B: usize>(m: &[[f64; B]; A]) -> [[f64; A]; B] {
    let mut out = [[0.0; A]; B];
    for i in 0..A {
        for j in 0..B {
            out[j][i] = m[i][j];
        }
    }
    out
}

struct RefSplat {
    depth: f64,
    index: usize,
    mean: [f64; 2],
    inv: [[f64; 2]; 2],
    opacity: f64,
    color: [f64; 3],
    identity: [f64; IDENTITY_DIM],
}

fn ref_project(g: &SplatGaussian, index: usize, cam: &Camera) -> Option<RefSplat> {
    let p = g.position.map(f64::from);
    let pc: [f64; 3] =
        std::array::from_fn(|i| cam.translation[i] + (0..3).map(|k| cam.rotation[i][k] * p[k]).sum::<f64>());
    let [x, y, z] = pc;
    if z <= 0.01 {
        return None;
    }
    let r = quat_to_matrix(g.rotation);
    let s2 = [
        [f64::from(g.scale[0]).powi(2), 0.0, 0.0],
        [0.0, f64::from(g.scale[1]).powi(2), 0.0],
        [0.0, 0.0, f64::from(g.scale[2]).powi(2)],
    ];
    let sigma = matmul(&matmul(&r, &s2), &transpose(&r));
    let w = cam.rotation;
    let jac = [
        [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
        [0.0, cam.fy / z, -cam.fy * y / (z * z)],
    ];
    let t = matmul(&jac, &w);
    let cov = matmul(&matmul(&t, &sigma), &transpose(&t));
    let a = cov[0][0] + 0.3;
    let b = cov[0][1];
    let c = cov[1][1] + 0.3;
    let det = a * c - b * b;
    Some(RefSplat {
        depth: z,
        index,
        mean: [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy],
        inv: [[c / det, -b / det], [-b / det, a / det]],
        opacity: f64::from(g.opacity),
        color: g.color.map(f64::from),
        identity: g.identity.map(f64::from),
    })
}

/// Per-pixel full-sort front-to-back compositing over every splat.
pub fn reference_render(scene: &GroupedScene, cam: &Camera) -> ReferenceImage {
    let mut splats: Vec<RefSplat> = scene
        .gaussians()
        .iter()
        .enumerate()
        .filter_map(|(i, g)| ref_project(g, i, cam))
        .collect();
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut out = ReferenceImage {
        rgb: vec![0.0; w * h * 3],
        alpha: vec![0.0; w * h],
        features: vec![0.0; w * h * IDENTITY_DIM],
    };
    for py in 0..h {
        for px in 0..w {
            splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));
            let p = py * w + px;
            let mut t = 1.0;
            for s in &splats {
                let d = [px as f64 - s.mean[0], py as f64 - s.mean[1]];
                let q =
                    d[0] * (s.inv[0][0] * d[0] + s.inv[0][1] * d[1]) + d[1] * (s.inv[1][0] * d[0] + s.inv[1][1] * d[1]);
                let alpha = (s.opacity * (-0.5 * q).exp()).min(0.99);
                if alpha < 1.0 / 255.0 {
                    continue;
                }
                if t * (1.0 - alpha) < 1e-4 {
                    break;
                }
                let wgt = alpha * t;
                for c in 0..3 {
                    out.rgb[p * 3 + c] += wgt * s.color[c];
                }
                for c in 0..IDENTITY_DIM {
                    out.features[p * IDENTITY_DIM + c] += wgt * s.identity[c];
                }
                out.alpha[p] += wgt;
                t *= 1.0 - alpha;
            }
        }
    }
    out
}

pub fn random_gaussian(rng: &mut impl Rng, num_objects: u32) -> SplatGaussian {
    let pos = [
        rng.random_range(-1.5..1.5),
        rng.random_range(-1.5..1.5),
        rng.random_range(-1.0..1.5),
    ];
    let rotation = loop {
        let q: [f32; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f32>().sqrt();
        if n > 0.1 {
            break q.map(|v| v / n);
        }
    };
    let mut g = SplatGaussian::isotropic(
        pos,
        0.1,
        rng.random_range(0.0..=1.0),
        std::array::from_fn(|_| rng.random_range(0.0..=1.0)),
    );
    g.rotation = rotation;
    g.scale = std::array::from_fn(|_| rng.random_range(0.01..0.35));
    g.identity = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    g.object_id = if rng.random_bool(0.1) {
        None
    } else {
        Some(rng.random_range(0..num_objects))
    };
    g
}

/// Up to `max_splats` random Gaussians around the origin seen by one random
/// 32x32 camera.
pub fn random_render_scene(rng: &mut impl Rng, max_splats: usize) -> GroupedScene {
    let n = rng.random_range(1..=max_splats);
    let gs = (0..n).map(|_| random_gaussian(rng, 4)).collect();
    let eye = [
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        -4.0 + rng.random_range(-0.5..0.5),
    ];
    let cam = Camera::look_at(
        "r",
        eye,
        [0.0; 3],
        [0.0, 1.0, 0.0],
        rng.random_range(20.0..40.0),
        32,
        32,
    );
    GroupedScene::new(gs, vec![cam], 4).unwrap()
}

// --- benchmark ground truth -------------------------------------------------

/// Alpha > 0.5 region of one cluster, from the closed-form screen
/// covariance of an isotropic Gaussian:
/// `s^2 (f/z)^2 [[1 + x^2/z^2, xy/z^2], [xy/z^2, 1 + y^2/z^2]] + 0.3 I`.
pub fn analytic_cluster_mask(cluster: &Cluster, cam: &Camera) -> BinaryMask {
    let s2 = f64::from(CLUSTER_SIGMA).powi(2);
    let o = f64::from(CLUSTER_OPACITY);
    let members: Vec<([f64; 2], [f64; 3])> = CLUSTER_OFFSETS
        .iter()
        .map(|off| {
            let world: [f64; 3] = std::array::from_fn(|i| f64::from(cluster.center[i] + off[i]));
            let pc: [f64; 3] = std::array::from_fn(|i| {
                cam.translation[i] + (0..3).map(|k| cam.rotation[i][k] * world[k]).sum::<f64>()
            });
            let [x, y, z] = pc;
            let f2 = (cam.fx / z).powi(2);
            let cov = [
                s2 * f2 * (1.0 + x * x / (z * z)) + 0.3,
                s2 * f2 * x * y / (z * z),
                s2 * f2 * (1.0 + y * y / (z * z)) + 0.3,
            ];
            ([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], cov)
        })
        .collect();
    BinaryMask::from_fn(cam.width, cam.height, |px, py| {
        let mut t = 1.0;
        for (mean, [a, b, c]) in &members {
            let (dx, dy) = (f64::from(px) - mean[0], f64::from(py) - mean[1]);
            let det = a * c - b * b;
            let q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
            t *= 1.0 - (o * (-0.5 * q).exp()).min(0.99);
        }
        1.0 - t > 0.5
    })
}

pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub scene: PathBuf,
    pub bank: PathBuf,
    pub classifier: PathBuf,
}

/// Writes the three-cluster benchmark (scene as zip, bank as directory),
/// analytic ground-truth masks for every (view, color) pair, and a manifest.
pub fn write_benchmark_dataset(dir: &Path) -> Dataset {
    let (scene, clf, bank) = synthetic::benchmark();
    let scene_path = dir.join("scene.zip");
    let bank_path = dir.join("bank.emb");
    let clf_path = dir.join("classifier.json");
    save_scene(&scene, &scene_path).unwrap();
    write_bank(&bank, &bank_path).unwrap();
    clf.save(&clf_path).unwrap();
    std::fs::create_dir_all(dir.join("gt")).unwrap();
    let mut cases = Vec::new();
    for cam in scene.cameras() {
        for cluster in synthetic::benchmark_clusters() {
            let rel = format!("gt/{}_{}.pgm", cam.view_id, cluster.name);
            analytic_cluster_mask(&cluster, cam).save(&dir.join(&rel)).unwrap();
            cases.push(serde_json::json!({"view_id": cam.view_id, "query": cluster.name, "gt_mask": rel}));
        }
    }
    let manifest = serde_json::json!({
        "scene": "scene.zip",
        "bank": "bank.emb",
        "classifier": "classifier.json",
        "cases": cases,
    });
    let manifest_path = dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest).unwrap()).unwrap();
    Dataset {
        dir: dir.to_path_buf(),
        manifest: manifest_path,
        scene: scene_path,
        bank: bank_path,
        classifier: clf_path,
    }
}
