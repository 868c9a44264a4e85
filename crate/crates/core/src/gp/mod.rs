//! Gaussian-process regression over bounding boxes.
//!
//! Boxes enter the kernel through the latent-scale transform
//! [`psi_transform`](crate::geometry::psi_transform): centers are divided by
//! `e^z`, sizes are taken in log space. The covariance is a squared
//! exponential with one precision per transformed coordinate (ARD), the mean
//! is a constant `m0`, and observations carry Gaussian noise of precision `β`.
//!
//! The per-set latent scale `z` is fitted by marginal likelihood
//! ([`fit_latent_scale`]); the seven shared hyperparameters are learned from
//! many observation sets jointly ([`fit_gp_hyperparameters`]).

mod likelihood;
pub mod linalg;
mod model;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::GpError;
use crate::geometry::{psi_transform, BoundingBox, TransformedBox};

pub use likelihood::{
    fit_gp_hyperparameters, fit_latent_scale, fit_latent_scale_with, joint_objective,
    lml_with_gradient, log_marginal_likelihood, GpFit, GpFitConfig, LatentScaleConfig,
    LmlGradient,
};
pub use model::{
    expected_improvement, ei_closed_form, maximize_ei, maximize_ei_with, EiMaximum,
    EiSearchConfig, GpModel, Posterior, SearchBounds, SIGMA_FLOOR,
};

/// Number of free hyperparameters: `β, m0, η, λ1²..λ4²`.
pub const N_HYPER: usize = 7;

/// GP hyperparameters. Positive quantities are stored as logs so that
/// optimizers can move freely; `lambda` are the ARD precisions `λ_i²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyperParams {
    log_beta: f64,
    m0: f64,
    log_eta: f64,
    log_lambda: [f64; 4],
}

impl GpHyperParams {
    pub fn new(beta: f64, m0: f64, eta: f64, lambda: [f64; 4]) -> Result<Self, GpError> {
        let check = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v.ln())
            } else {
                Err(GpError::InvalidHyper { name, value: v })
            }
        };
        if !m0.is_finite() {
            return Err(GpError::InvalidHyper { name: "m0", value: m0 });
        }
        let mut log_lambda = [0.0; 4];
        for (k, l) in lambda.iter().enumerate() {
            log_lambda[k] = check("lambda", *l)?;
        }
        Ok(Self { log_beta: check("beta", beta)?, m0, log_eta: check("eta", eta)?, log_lambda })
    }

    /// Packs into `[ln β, m0, ln η, ln λ1², .., ln λ4²]`.
    pub fn to_vec(&self) -> [f64; N_HYPER] {
        let l = self.log_lambda;
        [self.log_beta, self.m0, self.log_eta, l[0], l[1], l[2], l[3]]
    }

    pub fn from_vec(v: &[f64]) -> Result<Self, GpError> {
        assert_eq!(v.len(), N_HYPER);
        let out = Self { log_beta: v[0], m0: v[1], log_eta: v[2], log_lambda: [v[3], v[4], v[5], v[6]] };
        for (name, x) in [("beta", out.beta()), ("m0", out.m0), ("eta", out.eta())] {
            if !(x.is_finite()) || (name != "m0" && x <= 0.0) {
                return Err(GpError::InvalidHyper { name, value: x });
            }
        }
        if out.lambda().iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(GpError::InvalidHyper { name: "lambda", value: f64::NAN });
        }
        Ok(out)
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }
    pub fn m0(&self) -> f64 {
        self.m0
    }
    pub fn eta(&self) -> f64 {
        self.log_eta.exp()
    }
    pub fn lambda(&self) -> [f64; 4] {
        self.log_lambda.map(f64::exp)
    }
    pub fn noise_variance(&self) -> f64 {
        (-self.log_beta).exp()
    }

    pub fn with_m0(mut self, m0: f64) -> Self {
        self.m0 = m0;
        self
    }

    /// Shifts the scale gauge: the returned parameters with latent scale
    /// `z - shift` give the same kernel as `self` with `z`.
    pub fn regauged(mut self, shift: f64) -> Self {
        self.log_lambda[0] -= 2.0 * shift;
        self.log_lambda[1] -= 2.0 * shift;
        self
    }
}

impl Default for GpHyperParams {
    /// A neutral starting point for scores in roughly `[0, 1]`.
    fn default() -> Self {
        Self::new(100.0, 0.0, 1.0, [1.0; 4]).unwrap()
    }
}

/// The on-disk form: `{"beta", "m0", "eta", "lambda": [4], "note"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperRecord {
    pub beta: f64,
    pub m0: f64,
    pub eta: f64,
    pub lambda: [f64; 4],
    #[serde(default)]
    pub note: String,
}

impl From<&GpHyperParams> for GpHyperRecord {
    fn from(h: &GpHyperParams) -> Self {
        Self { beta: h.beta(), m0: h.m0(), eta: h.eta(), lambda: h.lambda(), note: String::new() }
    }
}

impl TryFrom<&GpHyperRecord> for GpHyperParams {
    type Error = GpError;

    fn try_from(r: &GpHyperRecord) -> Result<Self, GpError> {
        GpHyperParams::new(r.beta, r.m0, r.eta, r.lambda)
    }
}

/// Scored boxes conditioning a GP. Exact duplicate boxes are merged,
/// keeping the larger score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationSet {
    boxes: Vec<BoundingBox>,
    scores: Vec<f64>,
    index: HashMap<[u64; 4], usize>,
}

impl ObservationSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an observation. Returns `false` if the box was already present
    /// (its score is raised to the max of the two).
    pub fn push(&mut self, bbox: BoundingBox, score: f64) -> bool {
        let key = bbox.coords().map(f64::to_bits);
        match self.index.get(&key) {
            Some(&i) => {
                if score > self.scores[i] {
                    self.scores[i] = score;
                }
                false
            }
            None => {
                self.index.insert(key, self.boxes.len());
                self.boxes.push(bbox);
                self.scores.push(score);
                true
            }
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn boxes(&self) -> &[BoundingBox] {
        &self.boxes
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BoundingBox, f64)> {
        self.boxes.iter().zip(self.scores.iter().copied())
    }

    /// `f̂ = max_j f_j`
    pub fn best_score(&self) -> Option<f64> {
        self.scores.iter().copied().reduce(f64::max)
    }

    /// Every box scaled by `s`, scores unchanged.
    pub fn scaled(&self, s: f64) -> Self {
        self.iter()
            .map(|(b, f)| (b.scaled(s).expect("positive scale keeps boxes valid"), f))
            .collect()
    }
}

impl FromIterator<(BoundingBox, f64)> for ObservationSet {
    fn from_iter<I: IntoIterator<Item = (BoundingBox, f64)>>(iter: I) -> Self {
        let mut set = Self::new();
        for (b, f) in iter {
            set.push(b, f);
        }
        set
    }
}

pub(crate) fn seard_transformed(a: &TransformedBox, b: &TransformedBox, hyper: &GpHyperParams) -> f64 {
    let lambda = hyper.lambda();
    let d = a.diff(b);
    let q: f64 = (0..4).map(|k| lambda[k] * d[k] * d[k]).sum();
    hyper.eta() * (-0.5 * q).exp()
}

/// `η · exp(-½ (Ψ_z(a) − Ψ_z(b))ᵀ Λ (Ψ_z(a) − Ψ_z(b)))`
pub fn kernel_seard(a: &BoundingBox, b: &BoundingBox, z: f64, hyper: &GpHyperParams) -> f64 {
    seard_transformed(&psi_transform(a, z), &psi_transform(b, z), hyper)
}

/// `K_N = [k(y_i, y_j)] + β⁻¹ I`, row-major.
pub fn gram_matrix(obs: &ObservationSet, z: f64, hyper: &GpHyperParams) -> Vec<f64> {
    let t: Vec<TransformedBox> = obs.boxes().iter().map(|b| psi_transform(b, z)).collect();
    let n = t.len();
    let mut k = vec![0.0; n * n];
    let noise = hyper.noise_variance();
    for i in 0..n {
        k[i * n + i] = hyper.eta() + noise;
        for j in 0..i {
            let v = seard_transformed(&t[i], &t[j], hyper);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}
