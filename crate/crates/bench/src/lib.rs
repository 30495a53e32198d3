//! Seeded fixtures for the criterion benches.

use std::collections::BTreeMap;

use bagsplat::embedding::{BagEntry, CanonicalPhrase};
use bagsplat::{Camera, Embedding, EmbeddingBag, EmbeddingBank, GroupedScene, SplatGaussian, IDENTITY_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` random splats in a unit cube in front of a `size x size` camera,
/// assigned round-robin to `num_objects` objects.
pub fn random_scene(n: usize, num_objects: u32, size: u32, seed: u64) -> GroupedScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussians = (0..n)
        .map(|i| {
            let position = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let mut g = SplatGaussian::isotropic(
                position,
                rng.random_range(0.02..0.12),
                rng.random_range(0.2..0.95),
                std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            );
            g.scale = std::array::from_fn(|_| rng.random_range(0.02..0.12));
            let q: [f32; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let norm = q.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-3);
            g.rotation = q.map(|v| v / norm);
            let id = i as u32 % num_objects;
            let mut identity = [0.0; IDENTITY_DIM];
            identity[id as usize % IDENTITY_DIM] = 1.0;
            g.with_identity(identity).with_object(Some(id))
        })
        .collect();
    let focal = f64::from(size) * 1.2;
    let cam = Camera::look_at("bench", [0.0, 0.0, -3.5], [0.0; 3], [0.0, 1.0, 0.0], focal, size, size);
    GroupedScene::new(gaussians, vec![cam], num_objects).expect("valid random scene")
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Some(e) = Embedding::normalized(&v) {
            return e;
        }
    }
}

/// Bank of `objects` bags with `views` embeddings each, plus a query.
pub fn random_bank(objects: u32, views: usize, dim: usize, seed: u64) -> (EmbeddingBank, Embedding) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let canonical = ["object", "stuff", "texture"]
        .iter()
        .map(|p| CanonicalPhrase {
            phrase: p.to_string(),
            embedding: unit(&mut rng, dim),
        })
        .collect();
    let bags: BTreeMap<_, _> = (0..objects)
        .map(|id| {
            let entries = (0..views)
                .map(|j| BagEntry {
                    view_id: format!("view_{j:04}"),
                    embedding: unit(&mut rng, dim),
                })
                .collect();
            (id, EmbeddingBag { object_id: id, entries })
        })
        .collect();
    let bank = EmbeddingBank::new(dim, bags, canonical, views as u32).expect("valid random bank");
    let query = unit(&mut rng, dim);
    (bank, query)
}
