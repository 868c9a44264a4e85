//! Local fine-grained search.
//!
//! Starting from a set of scored boxes for one image and one category, each
//! iteration prunes low scores, keeps the NMS survivors as local optima, and
//! around every optimum fits a GP to the boxes overlapping it at several IoU
//! levels. The EI maximizer of each local model is scored by the real
//! detector and added to the set.

use serde::{Deserialize, Serialize};

use crate::error::FeatureError;
use crate::geometry::{greedy_nms, iou, BoundingBox};
use crate::gp::{maximize_ei_with, EiSearchConfig, GpHyperParams, GpModel, ObservationSet, SearchBounds};
use crate::scoring::{ScoreRequest, Scorer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FgsConfig {
    pub t_max: usize,
    pub rho_levels: Vec<f64>,
    pub f_prune: f64,
    pub nms_threshold: f64,
    pub min_ei: f64,
    pub max_local_obs: usize,
    /// Proposals within this many pixels (per coordinate) of a known box are dropped.
    pub dedup_tol: f64,
    /// How far past the local observations the EI search may reach, as a
    /// fraction of their enclosing rectangle.
    pub search_margin: f64,
    /// Cap on ascent starts per EI maximization.
    pub ei_starts: Option<usize>,
}

impl Default for FgsConfig {
    fn default() -> Self {
        Self {
            t_max: 8,
            rho_levels: vec![0.3, 0.5, 0.7],
            f_prune: 0.0,
            nms_threshold: 0.3,
            min_ei: 1e-4,
            max_local_obs: 150,
            dedup_tol: 0.5,
            search_margin: 0.25,
            ei_starts: None,
        }
    }
}

impl FgsConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.rho_levels.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err("rho_levels must lie in (0, 1)".into());
        }
        if self.rho_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err("rho_levels must be strictly increasing".into());
        }
        if !(self.nms_threshold > 0.0 && self.nms_threshold <= 1.0) {
            return Err("nms_threshold must lie in (0, 1]".into());
        }
        if self.max_local_obs == 0 {
            return Err("max_local_obs must be at least 1".into());
        }
        if !(self.min_ei >= 0.0 && self.dedup_tol >= 0.0 && self.search_margin >= 0.0) {
            return Err("min_ei, dedup_tol and search_margin must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Initial,
    /// Proposed by the search at the given iteration (1-based).
    Proposed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: BoundingBox,
    pub score: f64,
    pub provenance: Provenance,
}

/// Scored boxes of one category on one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredBoxSet {
    entries: Vec<ScoredBox>,
}

impl ScoredBoxSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Initial boxes; non-finite scores are dropped.
    pub fn from_initial(items: impl IntoIterator<Item = (BoundingBox, f64)>) -> Self {
        let entries = items
            .into_iter()
            .filter(|(_, s)| s.is_finite())
            .map(|(bbox, score)| ScoredBox { bbox, score, provenance: Provenance::Initial })
            .collect();
        Self { entries }
    }

    pub fn push(&mut self, entry: ScoredBox) {
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ScoredBox] {
        &self.entries
    }

    pub fn pairs(&self) -> Vec<(BoundingBox, f64)> {
        self.entries.iter().map(|e| (e.bbox, e.score)).collect()
    }

    pub fn max_score(&self) -> Option<f64> {
        self.entries.iter().map(|e| e.score).reduce(f64::max)
    }

    pub fn proposed_count(&self) -> usize {
        self.entries.iter().filter(|e| e.provenance != Provenance::Initial).count()
    }
}

/// `{(y, f) ∈ D : IoU(y, y_best) > ρ}`, deduplicated. Above `cap`
/// observations, the `cap` best-scored are kept, plus `y_best`.
pub fn build_local_set(all: &ScoredBoxSet, y_best: &BoundingBox, rho: f64, cap: usize) -> ObservationSet {
    let local: ObservationSet = all
        .entries()
        .iter()
        .filter(|e| iou(&e.bbox, y_best) > rho)
        .map(|e| (e.bbox, e.score))
        .collect();
    if local.len() <= cap {
        return local;
    }
    let mut order: Vec<usize> = (0..local.len()).collect();
    order.sort_by(|&a, &b| {
        local.scores()[b]
            .total_cmp(&local.scores()[a])
            .then_with(|| local.boxes()[a].lex_cmp(&local.boxes()[b]))
    });
    let mut kept: ObservationSet = order[..cap].iter().map(|&i| (local.boxes()[i], local.scores()[i])).collect();
    if let Some(i) = local.boxes().iter().position(|b| b == y_best) {
        kept.push(local.boxes()[i], local.scores()[i]);
    }
    kept
}

/// Image and category a search runs on. `frame` (the image rectangle)
/// bounds every proposal when given.
#[derive(Debug, Clone, Copy)]
pub struct SearchTarget<'a> {
    pub image: &'a str,
    pub category: &'a str,
    pub frame: Option<BoundingBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// All `t_max` iterations ran.
    Completed,
    /// Nothing scored above `f_prune`.
    PrunedEmpty,
    /// No local optimum produced an acceptable, new proposal.
    NoProposal,
}

#[derive(Debug, Clone)]
pub struct FgsOutcome {
    pub boxes: ScoredBoxSet,
    /// Max score in the set before the first iteration and after each one.
    pub best_trace: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
    /// Largest number of NMS survivors seen in any iteration.
    pub max_survivors: usize,
}

impl FgsOutcome {
    /// `t_max · max survivors · |ρ levels|`: the most boxes the run could add.
    pub fn proposal_bound(&self, cfg: &FgsConfig) -> usize {
        cfg.t_max * self.max_survivors * cfg.rho_levels.len()
    }
}

fn near_duplicate(a: &BoundingBox, others: impl IntoIterator<Item = BoundingBox>, tol: f64) -> bool {
    others.into_iter().any(|b| a.approx_eq(&b, tol))
}

/// Runs the search on one image and category.
pub fn local_fgs<S: Scorer + ?Sized>(
    target: &SearchTarget<'_>,
    scorer: &S,
    initial: ScoredBoxSet,
    hyper: &GpHyperParams,
    cfg: &FgsConfig,
) -> Result<FgsOutcome, FeatureError> {
    let ei_cfg = EiSearchConfig { max_starts: cfg.ei_starts, ..Default::default() };
    let mut d = initial;
    let mut best_trace = vec![d.max_score().unwrap_or(f64::NEG_INFINITY)];
    let mut stop = StopReason::Completed;
    let mut iterations = 0;
    let mut max_survivors = 0;

    for t in 1..=cfg.t_max {
        let pruned: Vec<(BoundingBox, f64)> = d
            .entries()
            .iter()
            .filter(|e| e.score > cfg.f_prune)
            .map(|e| (e.bbox, e.score))
            .collect();
        if pruned.is_empty() {
            stop = StopReason::PrunedEmpty;
            break;
        }
        let optima = greedy_nms(&pruned, cfg.nms_threshold);
        max_survivors = max_survivors.max(optima.len());

        let mut proposals: Vec<BoundingBox> = Vec::new();
        for (y_best, _) in &optima {
            for &rho in &cfg.rho_levels {
                let local = build_local_set(&d, y_best, rho, cfg.max_local_obs);
                let Ok(model) = GpModel::fit(local, *hyper) else {
                    log::debug!("{}/{}: GP conditioning failed, skipping region", target.image, target.category);
                    continue;
                };
                let Some(bounds) = SearchBounds::around(model.observations(), cfg.search_margin, target.frame.as_ref())
                else {
                    continue;
                };
                let found = maximize_ei_with(&model, &bounds, &ei_cfg);
                if found.ei < cfg.min_ei {
                    continue;
                }
                let known = d.entries().iter().map(|e| e.bbox).chain(proposals.iter().copied());
                if near_duplicate(&found.bbox, known, cfg.dedup_tol) {
                    continue;
                }
                proposals.push(found.bbox);
            }
        }
        if proposals.is_empty() {
            stop = StopReason::NoProposal;
            break;
        }
        let scores = scorer.score_batch(&ScoreRequest {
            image: target.image,
            category: target.category,
            boxes: &proposals,
        })?;
        for (bbox, score) in proposals.into_iter().zip(scores) {
            if score.is_finite() {
                d.push(ScoredBox { bbox, score, provenance: Provenance::Proposed(t) });
            }
        }
        iterations = t;
        best_trace.push(d.max_score().unwrap_or(f64::NEG_INFINITY));
    }
    Ok(FgsOutcome { boxes: d, best_trace, iterations, stop, max_survivors })
}
