use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::GpError;
use crate::geometry::{psi_transform, BoundingBox, TransformedBox};
use crate::optim::{spg, SpgConfig};

use super::linalg::Cholesky;
use super::{gram_matrix, seard_transformed, GpHyperParams, ObservationSet};

/// Below this predictive standard deviation EI degenerates to `max(0, μ − f̂)`.
pub const SIGMA_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mu: f64,
    pub sigma2: f64,
}

/// A GP conditioned on an observation set at a fixed latent scale.
#[derive(Debug, Clone)]
pub struct GpModel {
    hyper: GpHyperParams,
    z: f64,
    obs: ObservationSet,
    transformed: Vec<TransformedBox>,
    chol: Cholesky,
    alpha: Vec<f64>,
    best: f64,
}

impl GpModel {
    pub fn new(obs: ObservationSet, hyper: GpHyperParams, z: f64) -> Result<Self, GpError> {
        let n = obs.len();
        if n == 0 {
            return Err(GpError::EmptyObservations);
        }
        let k = gram_matrix(&obs, z, &hyper);
        let chol = Cholesky::factor(&k, n, hyper.eta())?;
        let r: Vec<f64> = obs.scores().iter().map(|f| f - hyper.m0()).collect();
        let alpha = chol.solve(&r);
        let transformed = obs.boxes().iter().map(|b| psi_transform(b, z)).collect();
        let best = obs.best_score().expect("non-empty");
        Ok(Self { hyper, z, obs, transformed, chol, alpha, best })
    }

    /// Builds the model at the marginal-likelihood latent scale.
    pub fn fit(obs: ObservationSet, hyper: GpHyperParams) -> Result<Self, GpError> {
        let z = super::fit_latent_scale(&obs, &hyper)?;
        Self::new(obs, hyper, z)
    }

    pub fn hyper(&self) -> &GpHyperParams {
        &self.hyper
    }

    pub fn latent_scale(&self) -> f64 {
        self.z
    }

    pub fn observations(&self) -> &ObservationSet {
        &self.obs
    }

    /// `f̂_N`
    pub fn best_score(&self) -> f64 {
        self.best
    }

    pub fn posterior(&self, y: &BoundingBox) -> Posterior {
        self.posterior_transformed(&psi_transform(y, self.z))
    }

    fn posterior_transformed(&self, t: &TransformedBox) -> Posterior {
        let mut k: Vec<f64> = self.transformed.iter().map(|tj| seard_transformed(t, tj, &self.hyper)).collect();
        let mu = self.hyper.m0() + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        self.chol.solve_lower_in_place(&mut k);
        let explained: f64 = k.iter().map(|v| v * v).sum();
        let sigma2 = (self.hyper.noise_variance() + self.hyper.eta() - explained).max(0.0);
        Posterior { mu, sigma2 }
    }

    /// Posterior and its gradient with respect to `x = (ū, v̄, ln w, ln h)`.
    fn posterior_grad(&self, x: &[f64; 4]) -> (Posterior, [f64; 4], [f64; 4]) {
        let scale = (-self.z).exp();
        let t = TransformedBox([x[0] * scale, x[1] * scale, x[2], x[3]]);
        let chain = [scale, scale, 1.0, 1.0];
        let lambda = self.hyper.lambda();
        let n = self.transformed.len();
        let mut k = vec![0.0; n];
        let mut dk = vec![[0.0; 4]; n];
        for (j, tj) in self.transformed.iter().enumerate() {
            let kj = seard_transformed(&t, tj, &self.hyper);
            let d = t.diff(tj);
            k[j] = kj;
            for dim in 0..4 {
                dk[j][dim] = -kj * lambda[dim] * d[dim] * chain[dim];
            }
        }
        let mu = self.hyper.m0() + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let mut dmu = [0.0; 4];
        for j in 0..n {
            for dim in 0..4 {
                dmu[dim] += self.alpha[j] * dk[j][dim];
            }
        }
        let u = self.chol.solve(&k);
        let explained: f64 = k.iter().zip(&u).map(|(a, b)| a * b).sum();
        let raw = self.hyper.noise_variance() + self.hyper.eta() - explained;
        let mut ds2 = [0.0; 4];
        if raw > 0.0 {
            for j in 0..n {
                for dim in 0..4 {
                    ds2[dim] -= 2.0 * u[j] * dk[j][dim];
                }
            }
        }
        (Posterior { mu, sigma2: raw.max(0.0) }, dmu, ds2)
    }

    pub fn expected_improvement(&self, y: &BoundingBox) -> f64 {
        let p = self.posterior(y);
        ei_closed_form(p.mu, p.sigma2.sqrt(), self.best)
    }

    /// EI and its gradient at `x = (ū, v̄, ln w, ln h)`.
    pub fn ei_at(&self, x: &[f64; 4]) -> (f64, [f64; 4]) {
        let (p, dmu, ds2) = self.posterior_grad(x);
        let sigma = p.sigma2.sqrt();
        let diff = p.mu - self.best;
        if sigma < SIGMA_FLOOR {
            return if diff > 0.0 { (diff, dmu) } else { (0.0, [0.0; 4]) };
        }
        let gamma = diff / sigma;
        let cdf = normal_cdf(gamma);
        let pdf = normal_pdf(gamma);
        let ei = (sigma * (gamma * cdf + pdf)).max(0.0);
        // ∂EI/∂μ = Φ(γ), ∂EI/∂σ = φ(γ)
        let mut g = [0.0; 4];
        for dim in 0..4 {
            g[dim] = cdf * dmu[dim] + pdf * ds2[dim] / (2.0 * sigma);
        }
        (ei, g)
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `σ (γ F(γ) + N(γ; 0, 1))` with `γ = (μ − f̂) / σ`; never negative.
pub fn ei_closed_form(mu: f64, sigma: f64, best: f64) -> f64 {
    if !(sigma >= SIGMA_FLOOR) {
        return (mu - best).max(0.0);
    }
    let gamma = (mu - best) / sigma;
    (sigma * (gamma * normal_cdf(gamma) + normal_pdf(gamma))).max(0.0)
}

pub fn expected_improvement(model: &GpModel, y: &BoundingBox) -> f64 {
    model.expected_improvement(y)
}

/// Rectangle in pixel coordinates that EI maximization must stay inside,
/// plus a minimum proposal size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBounds {
    pub frame: BoundingBox,
    pub min_width: f64,
    pub min_height: f64,
}

impl SearchBounds {
    pub fn new(frame: BoundingBox, min_width: f64, min_height: f64) -> Self {
        Self {
            frame,
            min_width: min_width.clamp(1e-6, frame.width()),
            min_height: min_height.clamp(1e-6, frame.height()),
        }
    }

    /// Tightest rectangle around the observed boxes, grown by `margin` of its
    /// size on each side and intersected with `limit` when given. The minimum
    /// proposal size is half the smallest observed side.
    pub fn around(obs: &ObservationSet, margin: f64, limit: Option<&BoundingBox>) -> Option<Self> {
        let boxes = obs.boxes();
        let first = boxes.first()?;
        let mut c = first.coords();
        let (mut min_w, mut min_h) = (first.width(), first.height());
        for b in &boxes[1..] {
            c[0] = c[0].min(b.u1());
            c[1] = c[1].min(b.v1());
            c[2] = c[2].max(b.u2());
            c[3] = c[3].max(b.v2());
            min_w = min_w.min(b.width());
            min_h = min_h.min(b.height());
        }
        let (mw, mh) = (margin * (c[2] - c[0]), margin * (c[3] - c[1]));
        let mut frame = BoundingBox::new(c[0] - mw, c[1] - mh, c[2] + mw, c[3] + mh).ok()?;
        if let Some(l) = limit {
            frame = frame.clip_to(l)?;
        }
        Some(Self::new(frame, 0.5 * min_w, 0.5 * min_h))
    }

    /// Bounds on `(ū, v̄, ln w, ln h)`.
    fn limits(&self) -> ([f64; 4], [f64; 4]) {
        let f = &self.frame;
        (
            [f.u1(), f.v1(), self.min_width.ln(), self.min_height.ln()],
            [f.u2(), f.v2(), f.width().ln(), f.height().ln()],
        )
    }

    fn to_box(&self, x: &[f64]) -> Option<BoundingBox> {
        BoundingBox::from_center_size(x[0], x[1], x[2].exp(), x[3].exp())
            .ok()
            .and_then(|b| b.clip_to(&self.frame))
    }
}

#[derive(Debug, Clone)]
pub struct EiSearchConfig {
    pub spg: SpgConfig,
    /// Ascend only from the this many seeds with the highest EI
    /// (all seeds still bound the result from below). `None` = every seed.
    pub max_starts: Option<usize>,
}

impl Default for EiSearchConfig {
    fn default() -> Self {
        Self { spg: SpgConfig { max_iter: 60, tol: 1e-9, max_backtrack: 30 }, max_starts: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EiMaximum {
    pub bbox: BoundingBox,
    pub ei: f64,
}

fn box_to_x(b: &BoundingBox) -> [f64; 4] {
    [b.center_u(), b.center_v(), b.width().ln(), b.height().ln()]
}

/// `argmax_y EI(y)` by multi-start projected-gradient ascent in
/// `(ū, v̄, ln w, ln h)`, seeded at every observed box and at the midpoint
/// of the two best-scored boxes.
pub fn maximize_ei(model: &GpModel, bounds: &SearchBounds) -> EiMaximum {
    maximize_ei_with(model, bounds, &EiSearchConfig::default())
}

pub fn maximize_ei_with(model: &GpModel, bounds: &SearchBounds, cfg: &EiSearchConfig) -> EiMaximum {
    let (lo, hi) = bounds.limits();
    let clamp = |x: [f64; 4]| {
        let mut c = x;
        for d in 0..4 {
            c[d] = c[d].clamp(lo[d], hi[d]);
        }
        c
    };
    let obs = model.observations();
    let mut seeds: Vec<[f64; 4]> = obs.boxes().iter().map(|b| clamp(box_to_x(b))).collect();
    if obs.len() >= 2 {
        let mut order: Vec<usize> = (0..obs.len()).collect();
        order.sort_by(|&a, &b| obs.scores()[b].total_cmp(&obs.scores()[a]).then(a.cmp(&b)));
        let (p, q) = (box_to_x(&obs.boxes()[order[0]]), box_to_x(&obs.boxes()[order[1]]));
        seeds.push(clamp([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2]), 0.5 * (p[3] + q[3])]));
    }

    // Candidates are judged by the EI of the box actually returned (after clipping).
    let score_x = |x: &[f64]| -> Option<(BoundingBox, f64)> {
        let b = bounds.to_box(x)?;
        Some((b, model.expected_improvement(&b)))
    };
    let mut best: Option<(BoundingBox, f64)> = None;
    let consider = |cand: Option<(BoundingBox, f64)>, best: &mut Option<(BoundingBox, f64)>| {
        if let Some((b, e)) = cand {
            if best.map_or(true, |(_, be)| e > be) {
                *best = Some((b, e));
            }
        }
    };
    let mut seed_ei: Vec<(usize, f64)> = Vec::with_capacity(seeds.len());
    for (i, s) in seeds.iter().enumerate() {
        let c = score_x(s);
        seed_ei.push((i, c.map_or(f64::NEG_INFINITY, |(_, e)| e)));
        consider(c, &mut best);
    }
    seed_ei.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let starts = cfg.max_starts.map_or(seed_ei.len(), |m| m.min(seed_ei.len()));

    let neg_ei = |x: &[f64], g: &mut [f64]| {
        let (e, de) = model.ei_at(&[x[0], x[1], x[2], x[3]]);
        for d in 0..4 {
            g[d] = -de[d];
        }
        -e
    };
    for &(i, _) in seed_ei.iter().take(starts) {
        let seed = seeds[i];
        let mut m = spg(neg_ei, &seed, &lo, &hi, &cfg.spg);
        if m.iterations == 0 {
            // stationary seed (e.g. an isolated observation): nudge off it
            let mut nudged = seed;
            for d in 0..4 {
                let span = hi[d] - lo[d];
                let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
                nudged[d] = (seed[d] + sign * 0.05 * span).clamp(lo[d], hi[d]);
            }
            m = spg(neg_ei, &nudged, &lo, &hi, &cfg.spg);
        }
        consider(score_x(&m.x), &mut best);
    }
    let (bbox, ei) = best.unwrap_or_else(|| {
        let b = obs.boxes()[0];
        (b, model.expected_improvement(&b))
    });
    EiMaximum { bbox, ei }
}
