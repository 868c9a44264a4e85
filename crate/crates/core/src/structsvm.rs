//! Linear structured SVM with a localization-aware loss.
//!
//! Training minimizes the hinge form of the structured objective
//!
//! ```text
//! ½‖w‖² + (1/M) (C1 Σ_pos h_pos,i(w) + C2 Σ_neg h_neg,i(w))
//! h_pos,i = max{0, 1 − wᵀφ(x_i,y_i), max_y wᵀ(φ(x_i,y) − φ(x_i,y_i)) + Δloc(y,y_i)}
//! h_neg,i = max{0, max_y 1 + wᵀφ(x_i,y)}
//! ```
//!
//! where `y` ranges over the example's candidate boxes. The objective is
//! convex and piecewise quadratic; it is minimized by L-BFGS driven by
//! subgradients, optionally inside a hard-mining loop that keeps only
//! candidates likely to affect the gradient.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{FeatureError, SvmError};
use crate::geometry::{iou, BoundingBox};
use crate::optim::{lbfgs, LbfgsConfig, Termination};
use crate::scoring::FeatureProvider;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Self {
        Self(w)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, phi: &[f64]) -> Result<f64, SvmError> {
        if phi.len() != self.0.len() {
            return Err(SvmError::DimensionMismatch { expected: self.0.len(), got: phi.len() });
        }
        Ok(dot(&self.0, phi))
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(l, box)`: object present at `box`, or no object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StructuredLabel {
    Positive(BoundingBox),
    Negative,
}

impl StructuredLabel {
    /// The presence flag `l ∈ {+1, −1}`.
    pub fn flag(&self) -> i8 {
        match self {
            StructuredLabel::Positive(_) => 1,
            StructuredLabel::Negative => -1,
        }
    }
}

/// `Δ(y, y_i)`: `1 − IoU` if both have objects, 0 if neither, 1 otherwise.
pub fn structured_loss(y: &StructuredLabel, y_i: &StructuredLabel) -> f64 {
    match (y, y_i) {
        (StructuredLabel::Positive(a), StructuredLabel::Positive(b)) => 1.0 - iou(a, b),
        (StructuredLabel::Negative, StructuredLabel::Negative) => 0.0,
        _ => 1.0,
    }
}

/// A candidate box of an example's restricted output set with its feature
/// vector and, for positive examples, `Δloc` against the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub bbox: BoundingBox,
    pub features: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub image: String,
    pub label: StructuredLabel,
    /// φ(x_i, y_i); present exactly for positives.
    pub gt_features: Option<Vec<f64>>,
    pub candidates: Vec<Candidate>,
}

impl TrainingExample {
    pub fn positive(
        image: impl Into<String>,
        gt: BoundingBox,
        gt_features: Vec<f64>,
        candidates: Vec<(BoundingBox, Vec<f64>)>,
    ) -> Self {
        let candidates = candidates
            .into_iter()
            .map(|(bbox, features)| Candidate { loss: 1.0 - iou(&bbox, &gt), bbox, features })
            .collect();
        Self { image: image.into(), label: StructuredLabel::Positive(gt), gt_features: Some(gt_features), candidates }
    }

    pub fn negative(image: impl Into<String>, candidates: Vec<(BoundingBox, Vec<f64>)>) -> Self {
        let candidates = candidates
            .into_iter()
            .map(|(bbox, features)| Candidate { loss: 1.0, bbox, features })
            .collect();
        Self { image: image.into(), label: StructuredLabel::Negative, gt_features: None, candidates }
    }

    /// Pulls features for the ground truth (if any) and every candidate box.
    pub fn from_provider<P: FeatureProvider + ?Sized>(
        provider: &P,
        image: &str,
        label: StructuredLabel,
        boxes: &[BoundingBox],
    ) -> Result<Self, FeatureError> {
        let cands = boxes
            .iter()
            .map(|b| Ok((*b, provider.features(image, b)?)))
            .collect::<Result<Vec<_>, FeatureError>>()?;
        Ok(match label {
            StructuredLabel::Positive(gt) => Self::positive(image, gt, provider.features(image, &gt)?, cands),
            StructuredLabel::Negative => Self::negative(image, cands),
        })
    }

    pub fn is_positive(&self) -> bool {
        matches!(self.label, StructuredLabel::Positive(_))
    }

    fn check_dim(&self, d: usize) -> Result<(), SvmError> {
        let bad = self
            .gt_features
            .iter()
            .chain(self.candidates.iter().map(|c| &c.features))
            .find(|f| f.len() != d);
        match bad {
            Some(f) => Err(SvmError::DimensionMismatch { expected: d, got: f.len() }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// C1, weight of positive hinges.
    pub c_pos: f64,
    /// C2, weight of negative hinges.
    pub c_neg: f64,
    pub update_threshold: usize,
    pub epochs: usize,
    /// ε1, activation slack for mining.
    pub eps_activate: f64,
    /// ε2, eviction margin for mining.
    pub eps_evict: f64,
    /// In the first epoch, train on at most as many positives as there are
    /// negatives with active candidates.
    pub balance_first_epoch: bool,
    /// Extra mining passes after the scheduled epochs, run only while some
    /// candidate outside the active set still passes the activation test.
    pub max_extra_passes: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c_pos: 2.0,
            c_neg: 1.0,
            update_threshold: 5000,
            epochs: 2,
            eps_activate: 1e-4,
            eps_evict: 0.2,
            balance_first_epoch: true,
            max_extra_passes: 10,
            max_iter: 500,
            grad_tol: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SvmError> {
        if !(self.c_pos > 0.0 && self.c_neg > 0.0) {
            return Err(SvmError::Config("C1 and C2 must be positive".into()));
        }
        if !(self.eps_activate >= 0.0 && self.eps_evict >= 0.0) {
            return Err(SvmError::Config("mining thresholds must be non-negative".into()));
        }
        if self.update_threshold == 0 {
            return Err(SvmError::Config("update_threshold must be at least 1".into()));
        }
        Ok(())
    }
}

/// Which training instances take part in the objective: the ground-truth
/// pair of each positive example and a subset of each example's candidates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    gt: Vec<bool>,
    candidates: Vec<BTreeSet<usize>>,
}

impl ActiveSet {
    /// Every ground-truth pair and every candidate.
    pub fn full(data: &[TrainingExample]) -> Self {
        Self {
            gt: data.iter().map(|e| e.is_positive()).collect(),
            candidates: data.iter().map(|e| (0..e.candidates.len()).collect()).collect(),
        }
    }

    /// Only the positives' ground-truth pairs.
    pub fn positives_only(data: &[TrainingExample]) -> Self {
        Self {
            gt: data.iter().map(|e| e.is_positive()).collect(),
            candidates: vec![BTreeSet::new(); data.len()],
        }
    }

    pub fn contains(&self, example: usize, candidate: usize) -> bool {
        self.candidates[example].contains(&candidate)
    }

    pub fn candidates(&self, example: usize) -> impl Iterator<Item = usize> + '_ {
        self.candidates[example].iter().copied()
    }

    pub fn candidate_count(&self) -> usize {
        self.candidates.iter().map(|c| c.len()).sum()
    }

    fn includes_example(&self, i: usize) -> bool {
        self.gt[i] || !self.candidates[i].is_empty()
    }
}

fn dims(w: &[f64], data: &[TrainingExample]) -> Result<(), SvmError> {
    data.iter().try_for_each(|e| e.check_dim(w.len()))
}

/// Which term attains a hinge maximum; used for subgradients.
enum Active {
    Zero,
    Margin,
    Candidate(usize),
}

fn pos_terms<'a>(w: &[f64], ex: &TrainingExample, cands: impl Iterator<Item = usize>) -> (f64, Active) {
    let phi_gt = ex.gt_features.as_deref().expect("positive example has ground-truth features");
    let s_gt = dot(w, phi_gt);
    let margin = 1.0 - s_gt;
    let mut best: Option<(usize, f64)> = None;
    for j in cands {
        let c = &ex.candidates[j];
        let v = dot(w, &c.features) - s_gt + c.loss;
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    let aug = best.map_or(f64::NEG_INFINITY, |(_, v)| v);
    let h = 0.0f64.max(margin).max(aug);
    let which = if h <= 0.0 {
        Active::Zero
    } else if margin >= aug {
        Active::Margin
    } else {
        Active::Candidate(best.expect("aug finite").0)
    };
    (h, which)
}

fn neg_terms(w: &[f64], ex: &TrainingExample, cands: impl Iterator<Item = usize>) -> (f64, Active) {
    let mut best: Option<(usize, f64)> = None;
    for j in cands {
        let v = 1.0 + dot(w, &ex.candidates[j].features);
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    match best {
        Some((j, v)) if v > 0.0 => (v, Active::Candidate(j)),
        _ => (0.0, Active::Zero),
    }
}

pub fn hinge_pos(w: &WeightVector, ex: &TrainingExample) -> Result<f64, SvmError> {
    if !ex.is_positive() {
        return Err(SvmError::WrongPolarity { which: "pos" });
    }
    ex.check_dim(w.len())?;
    Ok(pos_terms(w.as_slice(), ex, 0..ex.candidates.len()).0)
}

pub fn hinge_neg(w: &WeightVector, ex: &TrainingExample) -> Result<f64, SvmError> {
    if ex.is_positive() {
        return Err(SvmError::WrongPolarity { which: "neg" });
    }
    ex.check_dim(w.len())?;
    Ok(neg_terms(w.as_slice(), ex, 0..ex.candidates.len()).0)
}

/// Objective over `view`, normalized by the full example count, with an
/// optional subgradient written to `grad`.
fn evaluate(w: &[f64], data: &[TrainingExample], view: &ActiveSet, cfg: &TrainConfig, grad: Option<&mut [f64]>) -> f64 {
    let m = data.len() as f64;
    let mut value = 0.5 * dot(w, w);
    let mut g = grad;
    if let Some(g) = g.as_deref_mut() {
        g.copy_from_slice(w);
    }
    for (i, ex) in data.iter().enumerate() {
        if !view.includes_example(i) {
            continue;
        }
        let cands = view.candidates[i].iter().copied();
        let (h, which, c) = if ex.is_positive() {
            if !view.gt[i] {
                continue;
            }
            let (h, a) = pos_terms(w, ex, cands);
            (h, a, cfg.c_pos / m)
        } else {
            let (h, a) = neg_terms(w, ex, cands);
            (h, a, cfg.c_neg / m)
        };
        value += c * h;
        if let Some(g) = g.as_deref_mut() {
            match (which, ex.gt_features.as_deref()) {
                (Active::Zero, _) => {}
                (Active::Margin, Some(phi)) => {
                    for (gk, p) in g.iter_mut().zip(phi) {
                        *gk -= c * p;
                    }
                }
                (Active::Candidate(j), Some(phi)) => {
                    for ((gk, p), q) in g.iter_mut().zip(&ex.candidates[j].features).zip(phi) {
                        *gk += c * (p - q);
                    }
                }
                (Active::Candidate(j), None) => {
                    for (gk, p) in g.iter_mut().zip(&ex.candidates[j].features) {
                        *gk += c * p;
                    }
                }
                (Active::Margin, None) => unreachable!("margin term only exists for positives"),
            }
        }
    }
    value
}

/// `½‖w‖² + (1/M)(C1 Σ h_pos + C2 Σ h_neg)` over all candidates.
pub fn objective(w: &WeightVector, data: &[TrainingExample], cfg: &TrainConfig) -> Result<f64, SvmError> {
    if data.is_empty() {
        return Err(SvmError::EmptyData);
    }
    dims(w.as_slice(), data)?;
    Ok(evaluate(w.as_slice(), data, &ActiveSet::full(data), cfg, None))
}

/// Objective restricted to the instances in `active`.
pub fn objective_on(w: &WeightVector, data: &[TrainingExample], active: &ActiveSet, cfg: &TrainConfig) -> Result<f64, SvmError> {
    if data.is_empty() {
        return Err(SvmError::EmptyData);
    }
    dims(w.as_slice(), data)?;
    Ok(evaluate(w.as_slice(), data, active, cfg, None))
}

/// A subgradient of [`objective`]. At kinks: an inactive hinge contributes
/// nothing, then the margin term wins ties, then the lowest-index candidate.
pub fn subgradient(w: &WeightVector, data: &[TrainingExample], cfg: &TrainConfig) -> Result<Vec<f64>, SvmError> {
    if data.is_empty() {
        return Err(SvmError::EmptyData);
    }
    dims(w.as_slice(), data)?;
    let mut g = vec![0.0; w.len()];
    evaluate(w.as_slice(), data, &ActiveSet::full(data), cfg, Some(&mut g));
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub w: WeightVector,
    /// Objective at `w` over the instances it was trained on.
    pub objective: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// False when the iteration cap was hit; `w` is then the best iterate.
    pub converged: bool,
}

fn feature_dim(data: &[TrainingExample]) -> Result<usize, SvmError> {
    data.iter()
        .flat_map(|e| e.gt_features.iter().chain(e.candidates.iter().map(|c| &c.features)))
        .map(|f| f.len())
        .next()
        .ok_or(SvmError::EmptyData)
}

fn check_classes(data: &[TrainingExample]) -> Result<(), SvmError> {
    if data.is_empty() {
        return Err(SvmError::EmptyData);
    }
    if !data.iter().any(|e| e.is_positive()) || !data.iter().any(|e| !e.is_positive()) {
        return Err(SvmError::MissingClass);
    }
    Ok(())
}

fn train_view(data: &[TrainingExample], view: &ActiveSet, w0: &[f64], cfg: &TrainConfig) -> TrainOutcome {
    let lb = LbfgsConfig { max_iter: cfg.max_iter, grad_tol: cfg.grad_tol, memory: 10, ..Default::default() };
    let min = lbfgs(|x, g| evaluate(x, data, view, cfg, Some(g)), w0, &lb);
    TrainOutcome {
        converged: min.termination != Termination::MaxIterations,
        w: WeightVector::new(min.x),
        objective: min.value,
        iterations: min.iterations,
        termination: min.termination,
    }
}

/// Minimizes [`objective`] over all candidates, starting from `w = 0`.
pub fn train(data: &[TrainingExample], cfg: &TrainConfig) -> Result<TrainOutcome, SvmError> {
    cfg.validate()?;
    check_classes(data)?;
    let d = feature_dim(data)?;
    dims(&vec![0.0; d], data)?;
    Ok(train_view(data, &ActiveSet::full(data), &vec![0.0; d], cfg))
}

#[derive(Debug, Clone)]
pub struct MiningOutcome {
    pub w: WeightVector,
    /// Full-data objective at `w`.
    pub objective: f64,
    pub active: ActiveSet,
    /// Number of classifier updates performed.
    pub updates: usize,
    /// False if any update hit the optimizer iteration cap.
    pub converged: bool,
}

fn activates(w: &[f64], ex: &TrainingExample, j: usize, eps: f64) -> bool {
    let c = &ex.candidates[j];
    let s = dot(w, &c.features);
    match ex.gt_features.as_deref() {
        Some(phi) => {
            let s_gt = dot(w, phi);
            s - s_gt + c.loss >= 0.0f64.max(1.0 - s_gt) - eps
        }
        None => 1.0 + s >= -eps,
    }
}

fn evicts(w: &[f64], ex: &TrainingExample, j: usize, eps: f64) -> bool {
    let c = &ex.candidates[j];
    let s = dot(w, &c.features);
    match ex.gt_features.as_deref() {
        Some(phi) => {
            let s_gt = dot(w, phi);
            s - s_gt + c.loss <= 0.0f64.min(1.0 - s_gt) - eps
        }
        None => 1.0 + s <= -eps,
    }
}

/// Alternates classifier updates with hard mining: candidates that pass the
/// activation test queue up; once `update_threshold` are pending (or the
/// data ends) they join the active set, `w` is re-trained on it (warm
/// started), and candidates that pass the eviction test leave. After the
/// scheduled epochs, further passes run (up to `max_extra_passes`) until no
/// excluded candidate passes the activation test.
pub fn train_with_mining(data: &[TrainingExample], cfg: &TrainConfig) -> Result<MiningOutcome, SvmError> {
    cfg.validate()?;
    check_classes(data)?;
    let d = feature_dim(data)?;
    dims(&vec![0.0; d], data)?;

    let mut active = ActiveSet::positives_only(data);
    let mut pending: Vec<(usize, usize)> = Vec::new();
    let mut queued: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); data.len()];
    let mut w = vec![0.0; d];
    let mut updates = 0;
    let mut converged = true;
    let m = data.len();

    let passes = cfg.epochs + cfg.max_extra_passes;
    for epoch in 0..passes {
        if epoch >= cfg.epochs && !any_activation(&w, data, &active, cfg.eps_activate) {
            break;
        }
        for i in 0..m {
            let ex = &data[i];
            for j in 0..ex.candidates.len() {
                if !active.contains(i, j) && !queued[i].contains(&j) && activates(&w, ex, j, cfg.eps_activate) {
                    queued[i].insert(j);
                    pending.push((i, j));
                }
            }
            if pending.len() >= cfg.update_threshold || i + 1 == m {
                for (a, b) in pending.drain(..) {
                    active.candidates[a].insert(b);
                    queued[a].remove(&b);
                }
                let view = if epoch == 0 && cfg.balance_first_epoch {
                    balanced_view(data, &active)
                } else {
                    active.clone()
                };
                let out = train_view(data, &view, &w, cfg);
                converged &= out.converged;
                w = out.w.into_vec();
                updates += 1;
                for (k, ex) in data.iter().enumerate() {
                    active.candidates[k].retain(|&j| !evicts(&w, ex, j, cfg.eps_evict));
                }
            }
        }
    }
    let w = WeightVector::new(w);
    let objective = evaluate(w.as_slice(), data, &ActiveSet::full(data), cfg, None);
    Ok(MiningOutcome { w, objective, active, updates, converged })
}

fn any_activation(w: &[f64], data: &[TrainingExample], active: &ActiveSet, eps: f64) -> bool {
    data.iter()
        .enumerate()
        .any(|(i, ex)| (0..ex.candidates.len()).any(|j| !active.contains(i, j) && activates(w, ex, j, eps)))
}

/// Keeps the first `k` positives in data order, `k` = number of negatives
/// that currently have active candidates.
fn balanced_view(data: &[TrainingExample], active: &ActiveSet) -> ActiveSet {
    let active_negatives = data
        .iter()
        .enumerate()
        .filter(|(i, e)| !e.is_positive() && !active.candidates[*i].is_empty())
        .count();
    let mut view = active.clone();
    let mut kept = 0;
    for (i, e) in data.iter().enumerate() {
        if e.is_positive() {
            if kept < active_negatives {
                kept += 1;
            } else {
                view.gt[i] = false;
                view.candidates[i].clear();
            }
        }
    }
    view
}
