//! GSG container: `manifest.json` + `arrays.bin`.
//!
//! `arrays.bin` holds little-endian 32-bit arrays concatenated in manifest
//! order. The writer always emits the canonical order:
//!
//! | name         | dtype | components |
//! |--------------|-------|------------|
//! | `positions`  | f32   | 3          |
//! | `rotations`  | f32   | 4 (w,x,y,z)|
//! | `scales`     | f32   | 3          |
//! | `opacities`  | f32   | 1          |
//! | `colors`     | f32   | 3          |
//! | `identity`   | f32   | 16         |
//! | `object_ids` | i32   | 1 (-1 = UNASSIGNED) |

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::scene::{Camera, GroupedScene, ObjectId, ObjectInfo, SplatGaussian, IDENTITY_DIM};

pub const MANIFEST: &str = "manifest.json";
pub const ARRAYS: &str = "arrays.bin";
const FORMAT: &str = "gsg";
const VERSION: u32 = 1;

/// 32-bit values stored per Gaussian across all arrays.
pub const VALUES_PER_GAUSSIAN: usize = 3 + 4 + 3 + 1 + 3 + IDENTITY_DIM + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    I32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayDescriptor {
    pub name: String,
    pub dtype: DType,
    pub components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsgManifest {
    pub format: String,
    pub version: u32,
    pub num_gaussians: usize,
    pub num_objects: u32,
    pub cameras: Vec<Camera>,
    pub arrays: Vec<ArrayDescriptor>,
    #[serde(default)]
    pub object_table: BTreeMap<ObjectId, ObjectInfo>,
}

const CANONICAL: [(&str, DType, usize); 7] = [
    ("positions", DType::F32, 3),
    ("rotations", DType::F32, 4),
    ("scales", DType::F32, 3),
    ("opacities", DType::F32, 1),
    ("colors", DType::F32, 3),
    ("identity", DType::F32, IDENTITY_DIM),
    ("object_ids", DType::I32, 1),
];

fn canonical_descriptors() -> Vec<ArrayDescriptor> {
    CANONICAL
        .iter()
        .map(|&(name, dtype, components)| ArrayDescriptor {
            name: name.to_string(),
            dtype,
            components,
        })
        .collect()
}

pub fn load_scene(path: &Path) -> Result<GroupedScene> {
    let mut entries = container::read_entries(path, &[MANIFEST, ARRAYS])?;
    let arrays = entries.pop().unwrap_or_default();
    let manifest = entries.pop().unwrap_or_default();
    decode(&manifest, &arrays)
}

pub fn save_scene(scene: &GroupedScene, path: &Path) -> Result<()> {
    let (manifest, arrays) = encode(scene)?;
    container::write_entries(path, &[(MANIFEST, &manifest), (ARRAYS, &arrays)])
}

/// The scene as a single zip archive, byte-identical to what
/// [`save_scene`] writes for a `.zip` path.
pub fn scene_zip_bytes(scene: &GroupedScene) -> Result<Vec<u8>> {
    let (manifest, arrays) = encode(scene)?;
    container::zip_bytes(&[(MANIFEST, &manifest), (ARRAYS, &arrays)])
}

pub fn load_scene_from_zip_bytes(bytes: &[u8]) -> Result<GroupedScene> {
    let mut entries = container::read_zip_entries(bytes, &[MANIFEST, ARRAYS])?;
    let arrays = entries.pop().unwrap_or_default();
    let manifest = entries.pop().unwrap_or_default();
    decode(&manifest, &arrays)
}

pub fn encode(scene: &GroupedScene) -> Result<(Vec<u8>, Vec<u8>)> {
    let n = scene.len();
    let manifest = GsgManifest {
        format: FORMAT.into(),
        version: VERSION,
        num_gaussians: n,
        num_objects: scene.num_objects(),
        cameras: scene.cameras().to_vec(),
        arrays: canonical_descriptors(),
        object_table: scene.object_table().clone(),
    };
    let mut manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
    manifest_bytes.push(b'\n');

    let gs = scene.gaussians();
    let mut out = Vec::with_capacity(4 * VALUES_PER_GAUSSIAN * n);
    let mut put = |vals: &[f32]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    gs.iter().for_each(|g| put(&g.position));
    gs.iter().for_each(|g| put(&g.rotation));
    gs.iter().for_each(|g| put(&g.scale));
    gs.iter().for_each(|g| put(&[g.opacity]));
    gs.iter().for_each(|g| put(&g.color));
    gs.iter().for_each(|g| put(&g.identity));
    for g in gs {
        let id: i32 = match g.object_id {
            Some(id) => i32::try_from(id).map_err(|_| Error::OutOfRange {
                field: "object_id",
                index: 0,
            })?,
            None => -1,
        };
        out.extend_from_slice(&id.to_le_bytes());
    }
    Ok((manifest_bytes, out))
}

pub fn decode(manifest_bytes: &[u8], arrays: &[u8]) -> Result<GroupedScene> {
    let manifest: GsgManifest = serde_json::from_slice(manifest_bytes).map_err(|e| Error::Manifest(e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(Error::Manifest(format!(
            "format is {:?}, expected \"gsg\"",
            manifest.format
        )));
    }
    if manifest.version != VERSION {
        return Err(Error::Manifest(format!("unsupported version {}", manifest.version)));
    }
    let n = manifest.num_gaussians;

    // Locate each canonical array by name; manifest order defines offsets.
    let mut offsets: BTreeMap<&str, usize> = BTreeMap::new();
    let mut cursor = 0usize;
    for desc in &manifest.arrays {
        let Some(&(name, dtype, comps)) = CANONICAL.iter().find(|c| c.0 == desc.name) else {
            return Err(Error::Manifest(format!("unknown array {:?}", desc.name)));
        };
        if desc.dtype != dtype || desc.components != comps {
            return Err(Error::Manifest(format!(
                "array {name} must be {dtype:?} with {comps} components"
            )));
        }
        if offsets.insert(name, cursor).is_some() {
            return Err(Error::Manifest(format!("array {name} declared twice")));
        }
        cursor += 4 * comps * n;
    }
    if let Some((name, ..)) = CANONICAL.iter().find(|c| !offsets.contains_key(c.0)) {
        return Err(Error::Manifest(format!("array {name} missing")));
    }
    if arrays.len() != cursor {
        return Err(Error::ArrayLength(format!(
            "arrays.bin holds {} bytes, manifest declares {cursor} for {n} Gaussians",
            arrays.len()
        )));
    }

    let word = |name: &str, i: usize| -> [u8; 4] {
        let at = offsets[name] + 4 * i;
        [arrays[at], arrays[at + 1], arrays[at + 2], arrays[at + 3]]
    };
    let f = |name: &str, i: usize| f32::from_le_bytes(word(name, i));
    let vec_of =
        |name: &str, g: usize, comps: usize| -> Vec<f32> { (0..comps).map(|c| f(name, g * comps + c)).collect() };

    let mut gaussians = Vec::with_capacity(n);
    for i in 0..n {
        let raw_id = i32::from_le_bytes(word("object_ids", i));
        let object_id = match raw_id {
            -1 => None,
            id if id >= 0 => Some(id as ObjectId),
            _ => {
                return Err(Error::OutOfRange {
                    field: "object_id",
                    index: i,
                })
            }
        };
        let mut identity = [0.0; IDENTITY_DIM];
        identity.copy_from_slice(&vec_of("identity", i, IDENTITY_DIM));
        gaussians.push(SplatGaussian {
            position: to3(&vec_of("positions", i, 3)),
            rotation: to4(&vec_of("rotations", i, 4)),
            scale: to3(&vec_of("scales", i, 3)),
            opacity: f("opacities", i),
            color: to3(&vec_of("colors", i, 3)),
            identity,
            object_id,
        });
    }
    let mut scene = GroupedScene::new(gaussians, manifest.cameras, manifest.num_objects)?;
    scene.verify_object_table(&manifest.object_table)?;
    scene.set_object_info(&manifest.object_table);
    Ok(scene)
}

fn to3(v: &[f32]) -> [f32; 3] {
    [v[0], v[1], v[2]]
}

fn to4(v: &[f32]) -> [f32; 4] {
    [v[0], v[1], v[2], v[3]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GroupedScene {
        let g = SplatGaussian::isotropic([0.0, 0.0, 1.0], 0.2, 0.7, [1.0, 0.0, 0.0]).with_object(Some(0));
        let cam = Camera::look_at("v0", [0.0, 0.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0], 30.0, 8, 8);
        GroupedScene::new(vec![g], vec![cam], 1).unwrap()
    }

    #[test]
    fn minimal_container_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.gsg");
        save_scene(&tiny(), &path).unwrap();
        let back = load_scene(&path).unwrap();
        assert_eq!(back.num_objects(), 1);
        assert_eq!(back, tiny());
    }

    #[test]
    fn opacity_above_one_is_rejected() {
        let (manifest, mut arrays) = encode(&tiny()).unwrap();
        // opacities follow positions(3) + rotations(4) + scales(3) for N = 1
        let at = 4 * 10;
        arrays[at..at + 4].copy_from_slice(&1.5f32.to_le_bytes());
        let err = decode(&manifest, &arrays).unwrap_err();
        assert_eq!(err.to_string(), "opacity out of range at index 0");
    }

    #[test]
    fn nan_in_array_is_rejected() {
        let (manifest, mut arrays) = encode(&tiny()).unwrap();
        arrays[4..8].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = decode(&manifest, &arrays).unwrap_err();
        assert_eq!(err.to_string(), "NaN in position at index 0");
    }

    #[test]
    fn truncated_arrays_are_rejected() {
        let (manifest, arrays) = encode(&tiny()).unwrap();
        let err = decode(&manifest, &arrays[..arrays.len() - 4]).unwrap_err();
        assert!(matches!(err, Error::ArrayLength(_)));
    }

    #[test]
    fn malformed_manifest_is_rejected() {
        let (_, arrays) = encode(&tiny()).unwrap();
        assert!(matches!(decode(b"{not json", &arrays), Err(Error::Manifest(_))));
    }

    #[test]
    fn wrong_object_table_is_rejected() {
        let (manifest, arrays) = encode(&tiny()).unwrap();
        let text = String::from_utf8(manifest)
            .unwrap()
            .replace("\"gaussian_count\": 1", "\"gaussian_count\": 4");
        assert!(matches!(decode(text.as_bytes(), &arrays), Err(Error::Manifest(_))));
    }

    #[test]
    fn zip_and_directory_agree() {
        let dir = tempfile::tempdir().unwrap();
        let zip_path = dir.path().join("s.zip");
        save_scene(&tiny(), &zip_path).unwrap();
        assert_eq!(std::fs::read(&zip_path).unwrap(), scene_zip_bytes(&tiny()).unwrap());
        assert_eq!(load_scene(&zip_path).unwrap(), tiny());
    }
}
