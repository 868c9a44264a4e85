//! Synthetic benchmark: random images with 1 to 3 objects and proposals
//! made by jittering the ground truth.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BoundingBox};
use crate::proposals::{perturbation_proposals, seeded_rng, PerturbConfig, ProposalMap};

use super::manifest::{ImageRecord, Manifest, ObjectRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub train_images: usize,
    pub test_images: usize,
    pub categories: Vec<String>,
    pub width: (f64, f64),
    pub height: (f64, f64),
    pub objects: (usize, usize),
    /// Object sides as a fraction of the image side.
    pub object_size: (f64, f64),
    /// Objects overlap each other by at most this IoU.
    pub max_object_overlap: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_images: 60,
            test_images: 200,
            categories: vec!["bird".into(), "boat".into(), "car".into()],
            width: (320.0, 480.0),
            height: (240.0, 400.0),
            objects: (1, 3),
            object_size: (0.15, 0.5),
            max_object_overlap: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.categories.is_empty() {
            return Err("categories must not be empty".into());
        }
        let ok_range = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !ok_range(self.width) || !ok_range(self.height) {
            return Err("image size ranges must satisfy 0 < lo <= hi".into());
        }
        let (a, b) = self.object_size;
        if !(a > 0.0 && a <= b && b <= 1.0) {
            return Err("object_size must satisfy 0 < lo <= hi <= 1".into());
        }
        if self.objects.0 > self.objects.1 {
            return Err("objects range is empty".into());
        }
        Ok(())
    }
}

fn draw_image(id: String, split: &str, cfg: &SynthConfig, seed: u64) -> ImageRecord {
    let mut rng = seeded_rng(seed, &format!("synth/{id}"));
    let w = rng.random_range(cfg.width.0..=cfg.width.1).round();
    let h = rng.random_range(cfg.height.0..=cfg.height.1).round();
    let n = rng.random_range(cfg.objects.0..=cfg.objects.1);
    let mut objects: Vec<ObjectRecord> = Vec::new();
    let mut attempts = 0;
    while objects.len() < n && attempts < 1000 {
        attempts += 1;
        let cat = cfg.categories.choose(&mut rng).expect("non-empty categories").clone();
        let bw = w * rng.random_range(cfg.object_size.0..=cfg.object_size.1);
        let bh = h * rng.random_range(cfg.object_size.0..=cfg.object_size.1);
        let u1 = rng.random_range(0.0..=(w - bw));
        let v1 = rng.random_range(0.0..=(h - bh));
        let Ok(bbox) = BoundingBox::new(u1, v1, u1 + bw, v1 + bh) else { continue };
        if objects.iter().any(|o| iou(&o.bbox, &bbox) > cfg.max_object_overlap) {
            continue;
        }
        objects.push(ObjectRecord { cat, bbox, difficult: false });
    }
    ImageRecord { id, w, h, split: Some(split.to_string()), objects }
}

/// Builds the manifest (train split first, then test) and perturbation
/// proposals for every image. Deterministic in `seed`.
pub fn generate_benchmark(cfg: &SynthConfig, perturb: &PerturbConfig, seed: u64) -> (Manifest, ProposalMap) {
    let mut images = Vec::with_capacity(cfg.train_images + cfg.test_images);
    for k in 0..cfg.train_images {
        images.push(draw_image(format!("train{k:04}"), "train", cfg, seed));
    }
    for k in 0..cfg.test_images {
        images.push(draw_image(format!("test{k:04}"), "test", cfg, seed));
    }
    let manifest = Manifest { images };
    let proposals = generate_proposals(&manifest, perturb);
    (manifest, proposals)
}

/// Perturbation proposals for every image of the manifest.
pub fn generate_proposals(manifest: &Manifest, perturb: &PerturbConfig) -> ProposalMap {
    manifest
        .images
        .iter()
        .map(|img| {
            let gts: Vec<BoundingBox> = img.objects.iter().map(|o| o.bbox).collect();
            let mut rng = seeded_rng(perturb.seed, &format!("proposals/{}", img.id));
            (img.id.clone(), perturbation_proposals(&gts, perturb, &img.frame(), &mut rng))
        })
        .collect()
}
