//! Detector scores for boxes: the IoU oracle, linear scorers over
//! pluggable features, a synthetic feature world for desk-scale runs, and a
//! file-backed feature store.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::FeatureError;
use crate::geometry::{iou, BoundingBox};
use crate::structsvm::WeightVector;

/// Boxes to score on one image for one category.
#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub image: &'a str,
    pub category: &'a str,
    pub boxes: &'a [BoundingBox],
}

/// A detector score function. Implementations are read-only after
/// construction and must give identical results for identical requests,
/// whatever the batching or calling thread.
pub trait Scorer: Sync {
    fn score_batch(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, FeatureError>;

    fn score(&self, image: &str, category: &str, bbox: &BoundingBox) -> Result<f64, FeatureError> {
        let boxes = [*bbox];
        Ok(self.score_batch(&ScoreRequest { image, category, boxes: &boxes })?[0])
    }
}

/// φ(x, y): a fixed-length feature vector per (image, box).
pub trait FeatureProvider: Sync {
    fn dim(&self) -> usize;
    fn features(&self, image: &str, bbox: &BoundingBox) -> Result<Vec<f64>, FeatureError>;
}

/// Ground-truth boxes by image, each tagged with its category.
pub type GroundTruthIndex = HashMap<String, Vec<(String, BoundingBox)>>;

/// Max IoU of `y` against `gt`; 0 when there is no ground truth.
pub fn oracle_score(y: &BoundingBox, gt: &[BoundingBox]) -> f64 {
    gt.iter().map(|g| iou(y, g)).fold(0.0, f64::max)
}

/// Scores a box by its best overlap with the same-category ground truth.
#[derive(Debug, Clone, Default)]
pub struct OracleScorer {
    gts: GroundTruthIndex,
}

impl OracleScorer {
    pub fn new(gts: GroundTruthIndex) -> Self {
        Self { gts }
    }

    fn gt_for(&self, image: &str, category: &str) -> Vec<BoundingBox> {
        self.gts
            .get(image)
            .map(|v| v.iter().filter(|(c, _)| c == category).map(|(_, b)| *b).collect())
            .unwrap_or_default()
    }
}

impl Scorer for OracleScorer {
    fn score_batch(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, FeatureError> {
        let gt = self.gt_for(req.image, req.category);
        Ok(req.boxes.iter().map(|b| oracle_score(b, &gt)).collect())
    }
}

/// `wᵀ φ(x, y)`
pub fn linear_score<P: FeatureProvider + ?Sized>(
    w: &WeightVector,
    provider: &P,
    image: &str,
    y: &BoundingBox,
) -> Result<f64, FeatureError> {
    let phi = provider.features(image, y)?;
    w.dot(&phi).map_err(|_| FeatureError::DimensionMismatch { expected: w.len(), got: phi.len() })
}

/// One linear classifier per category over a shared feature provider.
pub struct LinearScorer<'a, P: FeatureProvider + ?Sized> {
    weights: BTreeMap<String, WeightVector>,
    provider: &'a P,
}

impl<'a, P: FeatureProvider + ?Sized> LinearScorer<'a, P> {
    pub fn new(weights: BTreeMap<String, WeightVector>, provider: &'a P) -> Self {
        Self { weights, provider }
    }

    pub fn weights(&self) -> &BTreeMap<String, WeightVector> {
        &self.weights
    }
}

impl<P: FeatureProvider + ?Sized> Scorer for LinearScorer<'_, P> {
    fn score_batch(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, FeatureError> {
        let Some(w) = self.weights.get(req.category) else {
            // no classifier for this category: nothing is ever detected
            return Ok(vec![f64::NEG_INFINITY; req.boxes.len()]);
        };
        req.boxes.iter().map(|b| linear_score(w, self.provider, req.image, b)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureWorldConfig {
    /// Length of the prototype directions (the bias adds one more entry).
    pub dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for FeatureWorldConfig {
    fn default() -> Self {
        Self { dim: 16, noise: 0.1, seed: 7 }
    }
}

/// Synthetic features: each category has a unit prototype direction, the
/// background another. A box's feature blends them by its overlap with the
/// image's ground truth, plus deterministic per-box noise, plus a constant
/// bias entry.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    gts: GroundTruthIndex,
    prototypes: BTreeMap<String, Vec<f64>>,
    background: Vec<f64>,
    config: FeatureWorldConfig,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl SyntheticWorld {
    pub fn new(gts: GroundTruthIndex, categories: &[String], config: FeatureWorldConfig) -> Self {
        assert!(config.dim >= 1, "feature dimension must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_f00d);
        let mut drawn: Vec<Vec<f64>> = Vec::new();
        // categories in sorted order so the prototypes do not depend on input order
        let mut cats: Vec<&String> = categories.iter().collect();
        cats.sort();
        cats.dedup();
        let mut next_distinct = |rng: &mut ChaCha8Rng| loop {
            let v = unit_vector(rng, config.dim);
            let distinct = drawn
                .iter()
                .all(|u| u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() < 0.95);
            if distinct || config.dim == 1 {
                drawn.push(v.clone());
                return v;
            }
        };
        let background = next_distinct(&mut rng);
        let prototypes = cats.into_iter().map(|c| (c.clone(), next_distinct(&mut rng))).collect();
        Self { gts, prototypes, background, config }
    }

    pub fn config(&self) -> &FeatureWorldConfig {
        &self.config
    }

    pub fn prototype(&self, category: &str) -> Option<&[f64]> {
        self.prototypes.get(category).map(|v| v.as_slice())
    }

    pub fn background(&self) -> &[f64] {
        &self.background
    }

    fn noise_rng(&self, image: &str, y: &BoundingBox) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.config.seed.to_le_bytes());
        h.update((image.len() as u64).to_le_bytes());
        h.update(image.as_bytes());
        for c in y.coords() {
            // quantized to 0.25 px
            h.update(((c * 4.0).round() as i64).to_le_bytes());
        }
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest[..32]);
        ChaCha8Rng::from_seed(seed)
    }
}

impl FeatureProvider for SyntheticWorld {
    fn dim(&self) -> usize {
        self.config.dim + 1
    }

    fn features(&self, image: &str, y: &BoundingBox) -> Result<Vec<f64>, FeatureError> {
        let gts = self.gts.get(image).ok_or_else(|| FeatureError::UnknownImage(image.to_string()))?;
        let mut phi = vec![0.0; self.config.dim];
        let mut max_overlap = 0.0f64;
        for (cat, proto) in &self.prototypes {
            let o = gts.iter().filter(|(c, _)| c == cat).map(|(_, g)| iou(y, g)).fold(0.0, f64::max);
            if o > 0.0 {
                for (p, v) in phi.iter_mut().zip(proto) {
                    *p += o * v;
                }
                max_overlap = max_overlap.max(o);
            }
        }
        for (p, v) in phi.iter_mut().zip(&self.background) {
            *p += (1.0 - max_overlap) * v;
        }
        if self.config.noise > 0.0 {
            let mut rng = self.noise_rng(image, y);
            for p in phi.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *p += self.config.noise * e;
            }
        }
        phi.push(1.0);
        Ok(phi)
    }
}

/// Features loaded from the binary `BXF1` format:
/// magic `"BXF1"`, `u32` dimension, then records of
/// (`u32` length + UTF-8 image id, 4 × `f64` box, dim × `f32`), all little-endian.
#[derive(Debug, Clone, Default)]
pub struct FeatureFile {
    dim: usize,
    records: HashMap<(String, [u64; 4]), Vec<f32>>,
}

pub const FEATURE_MAGIC: &[u8; 4] = b"BXF1";

impl FeatureFile {
    pub fn new(dim: usize) -> Self {
        Self { dim, records: HashMap::new() }
    }

    pub fn insert(&mut self, image: &str, bbox: &BoundingBox, features: Vec<f32>) -> Result<(), FeatureError> {
        if features.len() != self.dim {
            return Err(FeatureError::DimensionMismatch { expected: self.dim, got: features.len() });
        }
        self.records.insert((image.to_string(), bbox.coords().map(f64::to_bits)), features);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn read(path: &Path) -> Result<Self, FeatureError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FEATURE_MAGIC {
            return Err(FeatureError::Format(format!("bad magic {magic:?}")));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        let mut out = Self::new(dim);
        let mut index = 0usize;
        loop {
            match r.read_exact(&mut u32buf) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let len = u32::from_le_bytes(u32buf) as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let image = String::from_utf8(name)
                .map_err(|_| FeatureError::Format(format!("record {index}: image id is not UTF-8")))?;
            let mut c = [0.0f64; 4];
            let mut f8 = [0u8; 8];
            for slot in c.iter_mut() {
                r.read_exact(&mut f8)?;
                *slot = f64::from_le_bytes(f8);
            }
            let bbox = BoundingBox::try_from(c)
                .map_err(|e| FeatureError::Format(format!("record {index}: {e}")))?;
            let mut feats = Vec::with_capacity(dim);
            for _ in 0..dim {
                r.read_exact(&mut u32buf)?;
                feats.push(f32::from_le_bytes(u32buf));
            }
            out.insert(&image, &bbox, feats)?;
            index += 1;
        }
        Ok(out)
    }

    /// Writes records sorted by (image, box) so output is reproducible.
    pub fn write(&self, path: &Path) -> Result<(), FeatureError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        let mut keys: Vec<&(String, [u64; 4])> = self.records.keys().collect();
        keys.sort();
        for key in keys {
            let (image, bits) = key;
            w.write_all(&(image.len() as u32).to_le_bytes())?;
            w.write_all(image.as_bytes())?;
            for b in bits {
                w.write_all(&f64::from_bits(*b).to_le_bytes())?;
            }
            for f in &self.records[key] {
                w.write_all(&f.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl FeatureProvider for FeatureFile {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, image: &str, bbox: &BoundingBox) -> Result<Vec<f64>, FeatureError> {
        self.records
            .get(&(image.to_string(), bbox.coords().map(f64::to_bits)))
            .map(|v| v.iter().map(|&x| x as f64).collect())
            .ok_or_else(|| FeatureError::Missing { image: image.to_string(), bbox: bbox.to_string() })
    }
}
