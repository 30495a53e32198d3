//! Grouped Gaussian scenes: the per-Gaussian data model, cameras, and the
//! object-ID filters that turn a query answer into a 3D extraction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::classifier::IdentityClassifier;
use crate::error::{Error, Result};

/// Object identifier. `None` in an `Option<ObjectId>` is the UNASSIGNED sentinel.
pub type ObjectId = u32;

/// Length of the per-Gaussian identity encoding.
pub const IDENTITY_DIM: usize = 16;

const UNIT_QUAT_TOL: f64 = 1e-6;
const ORTHONORMAL_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct SplatGaussian {
    pub position: [f32; 3],
    /// Unit quaternion, (w, x, y, z).
    pub rotation: [f32; 4],
    /// Per-axis standard deviations in world units.
    pub scale: [f32; 3],
    pub opacity: f32,
    /// Degree-0 RGB in [0, 1].
    pub color: [f32; 3],
    pub identity: [f32; IDENTITY_DIM],
    pub object_id: Option<ObjectId>,
}

impl SplatGaussian {
    /// An isotropic, unrotated Gaussian. Handy for fixtures.
    pub fn isotropic(position: [f32; 3], sigma: f32, opacity: f32, color: [f32; 3]) -> Self {
        Self {
            position,
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: [sigma; 3],
            opacity,
            color,
            identity: [0.0; IDENTITY_DIM],
            object_id: None,
        }
    }

    pub fn with_identity(mut self, identity: [f32; IDENTITY_DIM]) -> Self {
        self.identity = identity;
        self
    }

    pub fn with_object(mut self, id: Option<ObjectId>) -> Self {
        self.object_id = id;
        self
    }

    /// Checks field invariants and renormalizes the rotation when it drifts
    /// from unit length. `index` is used in error messages only.
    pub(crate) fn validate(&mut self, index: usize, num_objects: u32) -> Result<()> {
        check_finite("position", index, &self.position)?;
        check_finite("rotation", index, &self.rotation)?;
        check_finite("scale", index, &self.scale)?;
        check_finite("opacity", index, &[self.opacity])?;
        check_finite("color", index, &self.color)?;
        check_finite("identity", index, &self.identity)?;

        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::OutOfRange { field: "scale", index });
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::OutOfRange {
                field: "opacity",
                index,
            });
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::OutOfRange { field: "color", index });
        }
        let norm = self
            .rotation
            .iter()
            .map(|&q| f64::from(q) * f64::from(q))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Err(Error::OutOfRange {
                field: "rotation",
                index,
            });
        }
        // Already-unit quaternions are left bit-for-bit untouched.
        if (norm - 1.0).abs() > UNIT_QUAT_TOL {
            for q in &mut self.rotation {
                *q = (f64::from(*q) / norm) as f32;
            }
        }
        if let Some(id) = self.object_id {
            if id >= num_objects {
                return Err(Error::OutOfRange {
                    field: "object_id",
                    index,
                });
            }
        }
        Ok(())
    }
}

fn check_finite(field: &'static str, index: usize, values: &[f32]) -> Result<()> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NaN { field, index });
    }
    if values.iter().any(|v| v.is_infinite()) {
        return Err(Error::OutOfRange { field, index });
    }
    Ok(())
}

/// Pinhole camera with a world-to-camera rigid pose.
///
/// Camera space follows the usual vision convention: +z looks forward, +x is
/// right and +y is down. Pixel `(u, v)` has its center at the integer
/// coordinate `(u, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub view_id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Camera {
    /// Builds a camera at `eye` looking at `target`. `up` is the world
    /// direction that should appear upward in the image.
    pub fn look_at(
        view_id: impl Into<String>,
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        focal: f64,
        width: u32,
        height: u32,
    ) -> Self {
        use nalgebra::Vector3;
        let eye = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye).normalize();
        let right = forward.cross(&Vector3::from(up)).normalize();
        let down = forward.cross(&right);
        let rows = [right, down, forward];
        let rotation = rows.map(|r| [r.x, r.y, r.z]);
        let t = rows.map(|r| -r.dot(&eye));
        Self {
            view_id: view_id.into(),
            fx: focal,
            fy: focal,
            cx: (f64::from(width) - 1.0) / 2.0,
            cy: (f64::from(height) - 1.0) / 2.0,
            width,
            height,
            rotation,
            translation: t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Error::InvalidArgument(format!("camera {:?}: {what}", self.view_id));
        let all = [self.fx, self.fy, self.cx, self.cy]
            .into_iter()
            .chain(self.rotation.iter().flatten().copied())
            .chain(self.translation);
        for v in all {
            if !v.is_finite() {
                return Err(bad("non-finite parameter"));
            }
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(bad("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(bad("resolution must be at least 1x1"));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > ORTHONORMAL_TOL {
                    return Err(bad("rotation is not orthonormal"));
                }
            }
        }
        Ok(())
    }

    /// World point to camera space.
    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [0, 1, 2].map(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i])
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Per-object bookkeeping kept alongside a scene.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectInfo {
    pub gaussian_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub views_visible: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_views: Option<u32>,
}

/// A scene whose Gaussians have been grouped into `num_objects` objects.
///
/// Immutable once constructed; every operation returns a new scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedScene {
    gaussians: Vec<SplatGaussian>,
    cameras: Vec<Camera>,
    num_objects: u32,
    object_table: BTreeMap<ObjectId, ObjectInfo>,
}

impl GroupedScene {
    pub fn new(mut gaussians: Vec<SplatGaussian>, cameras: Vec<Camera>, num_objects: u32) -> Result<Self> {
        for (i, g) in gaussians.iter_mut().enumerate() {
            g.validate(i, num_objects)?;
        }
        for cam in &cameras {
            cam.validate()?;
        }
        let mut seen = BTreeSet::new();
        for cam in &cameras {
            if !seen.insert(cam.view_id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate view_id {:?}", cam.view_id)));
            }
        }
        let object_table = count_objects(&gaussians, num_objects);
        Ok(Self {
            gaussians,
            cameras,
            num_objects,
            object_table,
        })
    }

    pub fn gaussians(&self) -> &[SplatGaussian] {
        &self.gaussians
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn camera(&self, view_id: &str) -> Option<&Camera> {
        self.cameras.iter().find(|c| c.view_id == view_id)
    }

    pub fn num_objects(&self) -> u32 {
        self.num_objects
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn object_table(&self) -> &BTreeMap<ObjectId, ObjectInfo> {
        &self.object_table
    }

    /// Records visibility statistics in the object table.
    pub fn with_visibility(mut self, stats: &[crate::embedding::VisibilityStats]) -> Self {
        for s in stats {
            if let Some(info) = self.object_table.get_mut(&s.object_id) {
                info.views_visible = Some(s.views_visible);
                info.total_views = Some(s.total_views);
            }
        }
        self
    }

    /// Checks the stored object table against the actual Gaussian counts.
    pub(crate) fn verify_object_table(&self, declared: &BTreeMap<ObjectId, ObjectInfo>) -> Result<()> {
        for (id, info) in declared {
            let actual = self.object_table.get(id).map_or(0, |i| i.gaussian_count);
            if actual != info.gaussian_count {
                return Err(Error::Manifest(format!(
                    "object_table declares {} Gaussians for object {id}, found {actual}",
                    info.gaussian_count
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn set_object_info(&mut self, declared: &BTreeMap<ObjectId, ObjectInfo>) {
        for (id, info) in declared {
            if let Some(slot) = self.object_table.get_mut(id) {
                slot.views_visible = info.views_visible;
                slot.total_views = info.total_views;
            }
        }
    }

    /// Keeps exactly the Gaussians whose object ID is in `ids`, in their
    /// original relative order. UNASSIGNED Gaussians are dropped.
    pub fn filter_by_object_ids(&self, ids: &BTreeSet<ObjectId>) -> Result<Self> {
        self.filter_with(ids, false)
    }

    /// Like [`filter_by_object_ids`](Self::filter_by_object_ids), optionally
    /// keeping UNASSIGNED Gaussians as well.
    pub fn filter_with(&self, ids: &BTreeSet<ObjectId>, include_unassigned: bool) -> Result<Self> {
        let unknown: Vec<ObjectId> = ids.iter().copied().filter(|&id| id >= self.num_objects).collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownIds {
                ids: unknown,
                num_objects: self.num_objects,
            });
        }
        let gaussians: Vec<SplatGaussian> = self
            .gaussians
            .iter()
            .filter(|g| match g.object_id {
                Some(id) => ids.contains(&id),
                None => include_unassigned,
            })
            .cloned()
            .collect();
        let mut object_table = count_objects(&gaussians, self.num_objects);
        for (id, info) in &mut object_table {
            let old = &self.object_table[id];
            info.views_visible = old.views_visible;
            info.total_views = old.total_views;
        }
        Ok(Self {
            gaussians,
            cameras: self.cameras.clone(),
            num_objects: self.num_objects,
            object_table,
        })
    }

    /// Assigns each Gaussian the classifier's argmax over its identity
    /// encoding. The background class maps to UNASSIGNED.
    pub fn resolve_gaussian_ids(&self, clf: &IdentityClassifier) -> Result<Self> {
        if clf.num_objects() != self.num_objects {
            return Err(Error::Dimension(format!(
                "classifier has {} object classes, scene has {}",
                clf.num_objects(),
                self.num_objects
            )));
        }
        let gaussians: Vec<SplatGaussian> = self
            .gaussians
            .iter()
            .map(|g| {
                let mut g = g.clone();
                g.object_id = clf.classify(&g.identity);
                g
            })
            .collect();
        let mut object_table = count_objects(&gaussians, self.num_objects);
        for (id, info) in &mut object_table {
            let old = &self.object_table[id];
            info.views_visible = old.views_visible;
            info.total_views = old.total_views;
        }
        Ok(Self {
            gaussians,
            cameras: self.cameras.clone(),
            num_objects: self.num_objects,
            object_table,
        })
    }
}

fn count_objects(gaussians: &[SplatGaussian], num_objects: u32) -> BTreeMap<ObjectId, ObjectInfo> {
    let mut table: BTreeMap<ObjectId, ObjectInfo> = (0..num_objects).map(|id| (id, ObjectInfo::default())).collect();
    for id in gaussians.iter().filter_map(|g| g.object_id) {
        if let Some(info) = table.get_mut(&id) {
            info.gaussian_count += 1;
        }
    }
    table
}
