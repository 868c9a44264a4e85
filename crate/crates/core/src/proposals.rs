//! Initial regions: proposal files, a synthetic generator that jitters
//! ground truth, and the local random-search baseline.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DataError, FeatureError};
use crate::fgs::{Provenance, ScoredBox, ScoredBoxSet, SearchTarget};
use crate::geometry::{greedy_nms, iou, BoundingBox};
use crate::scoring::{ScoreRequest, Scorer};

/// Proposal boxes per image, optionally per category.
pub trait ProposalSource {
    fn proposals(&self, image: &str, category: Option<&str>) -> Vec<BoundingBox>;
}

/// Category-agnostic proposals keyed by image id.
pub type ProposalMap = BTreeMap<String, Vec<BoundingBox>>;

impl ProposalSource for ProposalMap {
    fn proposals(&self, image: &str, _category: Option<&str>) -> Vec<BoundingBox> {
        self.get(image).cloned().unwrap_or_default()
    }
}

/// A ChaCha8 stream derived from `seed` and a tag (for example an image id),
/// so per-image draws do not depend on processing order.
pub fn seeded_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    let mut s = [0u8; 32];
    s.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    pub boxes_per_gt: usize,
    /// Std-dev of the center shift, as a fraction of the GT width/height.
    pub center_jitter: f64,
    /// Std-dev of the log-width and log-height shift.
    pub log_size_jitter: f64,
    pub background: usize,
    /// Background box sides are uniform in this fraction range of the image side.
    pub background_size: (f64, f64),
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            boxes_per_gt: 30,
            center_jitter: 0.18,
            log_size_jitter: 0.18,
            background: 50,
            background_size: (0.05, 0.25),
            seed: 0,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.center_jitter >= 0.0 && self.log_size_jitter >= 0.0) {
            return Err("jitter scales must be non-negative".into());
        }
        let (lo, hi) = self.background_size;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err("background_size must satisfy 0 < lo <= hi <= 1".into());
        }
        Ok(())
    }
}

const MAX_DRAWS: usize = 100;

/// Gaussian jitter of each ground truth in `(ū, v̄, ln w, ln h)`, clipped to
/// `frame`, plus uniformly placed background boxes. `rng` should be
/// per-image (see [`seeded_rng`]).
pub fn perturbation_proposals(
    gts: &[BoundingBox],
    cfg: &PerturbConfig,
    frame: &BoundingBox,
    rng: &mut ChaCha8Rng,
) -> Vec<BoundingBox> {
    let mut out = Vec::with_capacity(gts.len() * cfg.boxes_per_gt + cfg.background);
    for gt in gts {
        for _ in 0..cfg.boxes_per_gt {
            for _ in 0..MAX_DRAWS {
                let e: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let b = BoundingBox::from_center_size(
                    gt.center_u() + cfg.center_jitter * gt.width() * e[0],
                    gt.center_v() + cfg.center_jitter * gt.height() * e[1],
                    gt.width() * (cfg.log_size_jitter * e[2]).exp(),
                    gt.height() * (cfg.log_size_jitter * e[3]).exp(),
                )
                .ok()
                .and_then(|b| b.clip_to(frame));
                if let Some(b) = b {
                    out.push(b);
                    break;
                }
            }
        }
    }
    let (lo, hi) = cfg.background_size;
    for _ in 0..cfg.background {
        let w = frame.width() * rng.random_range(lo..=hi);
        let h = frame.height() * rng.random_range(lo..=hi);
        let u1 = frame.u1() + rng.random_range(0.0..=(frame.width() - w));
        let v1 = frame.v1() + rng.random_range(0.0..=(frame.height() - h));
        if let Ok(b) = BoundingBox::new(u1, v1, (u1 + w).min(frame.u2()), (v1 + h).min(frame.v2())) {
            out.push(b);
        }
    }
    out
}

/// Local optima as FGS sees them: NMS survivors among boxes scoring above
/// `f_prune`.
pub fn local_regions(set: &ScoredBoxSet, f_prune: f64, nms_threshold: f64) -> Vec<BoundingBox> {
    let pruned: Vec<(BoundingBox, f64)> = set.pairs().into_iter().filter(|(_, s)| *s > f_prune).collect();
    greedy_nms(&pruned, nms_threshold).into_iter().map(|(b, _)| b).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomSearchConfig {
    pub f_prune: f64,
    pub nms_threshold: f64,
    /// Samples must overlap their region's anchor by more than this IoU.
    pub rho: f64,
    /// Rejection-sampling attempts allowed per requested box.
    pub max_attempts: usize,
}

impl Default for RandomSearchConfig {
    fn default() -> Self {
        Self { f_prune: 0.0, nms_threshold: 0.3, rho: 0.3, max_attempts: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct RandomSearchOutcome {
    pub boxes: ScoredBoxSet,
    pub regions: usize,
    /// Boxes requested but not found within the attempt cap.
    pub shortfall: usize,
}

/// Draws a box around `anchor`: center uniform within one anchor size,
/// log-size uniform within `ln(1/ρ)` of the anchor's.
fn draw_near(anchor: &BoundingBox, rho: f64, rng: &mut ChaCha8Rng) -> Option<BoundingBox> {
    let span = (1.0 / rho).ln();
    let cu = anchor.center_u() + anchor.width() * rng.random_range(-1.0..=1.0);
    let cv = anchor.center_v() + anchor.height() * rng.random_range(-1.0..=1.0);
    let w = anchor.width() * (span * rng.random_range(-1.0..=1.0)).exp();
    let h = anchor.height() * (span * rng.random_range(-1.0..=1.0)).exp();
    BoundingBox::from_center_size(cu, cv, w, h).ok()
}

/// Samples `budget` boxes per local region with IoU above `rho` to the
/// region's anchor, scores them, and appends them.
pub fn local_random_search<S: Scorer + ?Sized>(
    target: &SearchTarget<'_>,
    initial: ScoredBoxSet,
    scorer: &S,
    budget: usize,
    cfg: &RandomSearchConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RandomSearchOutcome, FeatureError> {
    let regions = local_regions(&initial, cfg.f_prune, cfg.nms_threshold);
    let mut sampled = Vec::new();
    let mut shortfall = 0;
    for anchor in &regions {
        let mut found = 0;
        let mut attempts = 0;
        while found < budget && attempts < budget * cfg.max_attempts {
            attempts += 1;
            let Some(mut b) = draw_near(anchor, cfg.rho, rng) else { continue };
            if let Some(frame) = &target.frame {
                match b.clip_to(frame) {
                    Some(c) => b = c,
                    None => continue,
                }
            }
            if iou(&b, anchor) > cfg.rho {
                sampled.push(b);
                found += 1;
            }
        }
        shortfall += budget - found;
    }
    let mut boxes = initial;
    if !sampled.is_empty() {
        let scores = scorer.score_batch(&ScoreRequest { image: target.image, category: target.category, boxes: &sampled })?;
        for (bbox, score) in sampled.into_iter().zip(scores) {
            if score.is_finite() {
                boxes.push(ScoredBox { bbox, score, provenance: Provenance::Proposed(1) });
            }
        }
    }
    Ok(RandomSearchOutcome { boxes, regions: regions.len(), shortfall })
}

#[derive(Debug, Serialize, Deserialize)]
struct ProposalRow {
    image_id: String,
    u1: f64,
    v1: f64,
    u2: f64,
    v2: f64,
}

/// Reads `image_id,u1,v1,u2,v2` (one header line). Errors name the line.
pub fn load_proposals(path: &Path) -> Result<ProposalMap, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut out = ProposalMap::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record).map_err(|e| csv_error(path, e))? {
        let line = record.position().map_or(0, |p| p.line() as usize);
        let parse = |msg: String| DataError::Parse { path: path.to_path_buf(), line, msg };
        let row: ProposalRow = record.deserialize(Some(&headers)).map_err(|e| parse(format!("{:?}", e.kind())))?;
        let b = BoundingBox::new(row.u1, row.v1, row.u2, row.v2).map_err(|e| parse(e.to_string()))?;
        out.entry(row.image_id).or_default().push(b);
    }
    Ok(out)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DataError::io(path, source),
        kind => DataError::Parse { path: path.to_path_buf(), line, msg: format!("{kind:?}") },
    }
}

/// Writes proposals sorted by image id, boxes in stored order.
pub fn save_proposals(path: &Path, proposals: &ProposalMap) -> Result<(), DataError> {
    let file = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| DataError::io(path, e);
    writeln!(w, "image_id,u1,v1,u2,v2").map_err(io)?;
    for (image, boxes) in proposals {
        for b in boxes {
            let [u1, v1, u2, v2] = b.coords();
            writeln!(w, "{},{u1:?},{v1:?},{u2:?},{v2:?}", csv_field(image)).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Quotes a CSV field when needed.
pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
