//! Linear + softmax identity classifier shared by pixel classification and
//! per-Gaussian ID resolution.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{ObjectId, IDENTITY_DIM};

/// Maps a 16-dim identity feature to `num_objects + 1` logits. The last
/// class is background; predicting it yields UNASSIGNED.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClassifierFile", into = "ClassifierFile")]
pub struct IdentityClassifier {
    num_objects: u32,
    /// Row-major, `(num_objects + 1) x IDENTITY_DIM`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ClassifierFile {
    num_objects: u32,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl TryFrom<ClassifierFile> for IdentityClassifier {
    type Error = Error;

    fn try_from(f: ClassifierFile) -> Result<Self> {
        let classes = f.num_objects as usize + 1;
        if f.weights.len() != classes {
            return Err(Error::Dimension(format!(
                "classifier weights have {} rows, expected {classes}",
                f.weights.len()
            )));
        }
        if let Some((i, row)) = f.weights.iter().enumerate().find(|(_, r)| r.len() != IDENTITY_DIM) {
            return Err(Error::Dimension(format!(
                "classifier weight row {i} has {} columns, expected {IDENTITY_DIM}",
                row.len()
            )));
        }
        let weights = f.weights.into_iter().flatten().collect();
        Self::new(f.num_objects, weights, f.bias)
    }
}

impl From<IdentityClassifier> for ClassifierFile {
    fn from(c: IdentityClassifier) -> Self {
        ClassifierFile {
            num_objects: c.num_objects,
            weights: c.weights.chunks(IDENTITY_DIM).map(<[f64]>::to_vec).collect(),
            bias: c.bias,
        }
    }
}

impl IdentityClassifier {
    pub fn new(num_objects: u32, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let classes = num_objects as usize + 1;
        if weights.len() != classes * IDENTITY_DIM {
            return Err(Error::Dimension(format!(
                "classifier weights hold {} values, expected {classes}x{IDENTITY_DIM}",
                weights.len()
            )));
        }
        if bias.len() != classes {
            return Err(Error::Dimension(format!(
                "classifier bias has {} entries, expected {classes}",
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("classifier has non-finite entries".into()));
        }
        Ok(Self {
            num_objects,
            weights,
            bias,
        })
    }

    /// One-hot classifier: object `j < 16` reads channel `j`, background
    /// is a constant `background_logit`.
    pub fn one_hot(num_objects: u32, scale: f64, background_logit: f64) -> Self {
        assert!(
            num_objects as usize <= IDENTITY_DIM,
            "one_hot supports at most 16 objects"
        );
        let classes = num_objects as usize + 1;
        let mut weights = vec![0.0; classes * IDENTITY_DIM];
        for j in 0..num_objects as usize {
            weights[j * IDENTITY_DIM + j] = scale;
        }
        let mut bias = vec![0.0; classes];
        bias[num_objects as usize] = background_logit;
        Self {
            num_objects,
            weights,
            bias,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn num_objects(&self) -> u32 {
        self.num_objects
    }

    pub fn num_classes(&self) -> usize {
        self.num_objects as usize + 1
    }

    pub fn background_class(&self) -> usize {
        self.num_objects as usize
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Writes the logits for `feature` into `out` (length `num_classes`).
    pub fn logits_into(&self, feature: &[f32], out: &mut [f64]) {
        debug_assert_eq!(feature.len(), IDENTITY_DIM);
        for ((o, row), b) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(IDENTITY_DIM))
            .zip(&self.bias)
        {
            *o = row.iter().zip(feature).map(|(w, &x)| w * f64::from(x)).sum::<f64>() + b;
        }
    }

    pub fn logits(&self, feature: &[f32]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_classes()];
        self.logits_into(feature, &mut out);
        out
    }

    pub fn probabilities(&self, feature: &[f32]) -> Vec<f64> {
        softmax(&self.logits(feature))
    }

    pub fn log_probabilities(&self, feature: &[f32]) -> Vec<f64> {
        log_softmax(&self.logits(feature))
    }

    /// Most probable class, mapped to an object ID (`None` for background).
    pub fn classify(&self, feature: &[f32]) -> Option<ObjectId> {
        let mut buf = vec![0.0; self.num_classes()];
        self.classify_with(feature, &mut buf)
    }

    pub(crate) fn classify_with(&self, feature: &[f32], scratch: &mut [f64]) -> Option<ObjectId> {
        self.logits_into(feature, scratch);
        let class = argmax(scratch);
        (class != self.background_class()).then_some(class as ObjectId)
    }
}

/// Index of the largest value; ties go to the lowest index. Softmax is
/// monotone, so this is also the argmax of the probabilities.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
