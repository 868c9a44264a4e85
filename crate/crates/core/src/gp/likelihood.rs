use std::f64::consts::PI;

use crate::error::GpError;
use crate::geometry::{psi_transform, TransformedBox};
use crate::optim::{lbfgs, LbfgsConfig, Termination};

use super::linalg::Cholesky;
use super::{gram_matrix, seard_transformed, GpHyperParams, ObservationSet, N_HYPER};

/// Log marginal likelihood with its gradient. `d_hyper` is taken with
/// respect to `[ln β, m0, ln η, ln λ1², .., ln λ4²]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmlGradient {
    pub value: f64,
    pub d_hyper: [f64; N_HYPER],
    pub d_z: f64,
}

struct Factored {
    chol: Cholesky,
    alpha: Vec<f64>,
    value: f64,
}

fn factor(obs: &ObservationSet, z: f64, hyper: &GpHyperParams) -> Result<Factored, GpError> {
    let n = obs.len();
    if n == 0 {
        return Err(GpError::EmptyObservations);
    }
    let k = gram_matrix(obs, z, hyper);
    let chol = Cholesky::factor(&k, n, hyper.eta())?;
    let r: Vec<f64> = obs.scores().iter().map(|f| f - hyper.m0()).collect();
    let alpha = chol.solve(&r);
    let quad: f64 = r.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let value = -0.5 * quad - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();
    Ok(Factored { chol, alpha, value })
}

/// `log N(f; m0·1, K_N)`
pub fn log_marginal_likelihood(obs: &ObservationSet, z: f64, hyper: &GpHyperParams) -> Result<f64, GpError> {
    factor(obs, z, hyper).map(|f| f.value)
}

pub fn lml_with_gradient(obs: &ObservationSet, z: f64, hyper: &GpHyperParams) -> Result<LmlGradient, GpError> {
    let n = obs.len();
    let Factored { chol, alpha, value } = factor(obs, z, hyper)?;
    let kinv = chol.inverse();
    let t: Vec<TransformedBox> = obs.boxes().iter().map(|b| psi_transform(b, z)).collect();
    let lambda = hyper.lambda();
    let noise = hyper.noise_variance();

    // dL/dp = ½ Σ_ij W_ij ∂K_ij/∂p, W = ααᵀ − K⁻¹ (symmetric; sum lower triangle twice)
    let mut d = [0.0; N_HYPER];
    let mut d_z = 0.0;
    for i in 0..n {
        let w_ii = alpha[i] * alpha[i] - kinv[i * n + i];
        d[0] += 0.5 * w_ii * (-noise);
        d[2] += 0.5 * w_ii * hyper.eta();
        for j in 0..i {
            let w = alpha[i] * alpha[j] - kinv[i * n + j];
            let k = seard_transformed(&t[i], &t[j], hyper);
            let delta = t[i].diff(&t[j]);
            // factor 2 for the symmetric pair cancels the ½
            d[2] += w * k;
            let mut center_q = 0.0;
            for dim in 0..4 {
                let q = lambda[dim] * delta[dim] * delta[dim];
                d[3 + dim] += w * k * (-0.5 * q);
                if dim < 2 {
                    center_q += q;
                }
            }
            d_z += w * k * center_q;
        }
    }
    d[1] = alpha.iter().sum();
    Ok(LmlGradient { value, d_hyper: d, d_z })
}

#[derive(Debug, Clone)]
pub struct LatentScaleConfig {
    pub lo: f64,
    pub hi: f64,
    pub grid_points: usize,
    /// Bracket width at which the root search on ∂L/∂z stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LatentScaleConfig {
    fn default() -> Self {
        Self { lo: -5.0, hi: 5.0, grid_points: 17, tol: 1e-7, max_iter: 100 }
    }
}

/// `ẑ = argmax_z log p(f | y; θ, z)` over `[-5, 5]`.
pub fn fit_latent_scale(obs: &ObservationSet, hyper: &GpHyperParams) -> Result<f64, GpError> {
    fit_latent_scale_with(obs, hyper, &LatentScaleConfig::default())
}

pub fn fit_latent_scale_with(
    obs: &ObservationSet,
    hyper: &GpHyperParams,
    cfg: &LatentScaleConfig,
) -> Result<f64, GpError> {
    if obs.is_empty() {
        return Err(GpError::EmptyObservations);
    }
    if obs.len() == 1 {
        return Ok(0.0);
    }
    let g = cfg.grid_points.max(2);
    let step = (cfg.hi - cfg.lo) / (g - 1) as f64;
    let grid: Vec<f64> = (0..g).map(|k| if k + 1 == g { cfg.hi } else { cfg.lo + k as f64 * step }).collect();
    let mut scan: Vec<Option<(f64, f64)>> = Vec::with_capacity(g);
    let mut last_err = None;
    for &z in &grid {
        match lml_with_gradient(obs, z, hyper) {
            Ok(r) => scan.push(Some((r.value, r.d_z))),
            Err(e) => {
                last_err = Some(e);
                scan.push(None);
            }
        }
    }
    let mut best: Option<(f64, f64)> = None;
    let mut consider = |z: f64, v: f64| {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((z, v));
        }
    };
    for (k, s) in scan.iter().enumerate() {
        if let Some((v, _)) = s {
            consider(grid[k], *v);
        }
    }
    // every grid cell whose derivative changes sign from + to − brackets a
    // local maximum; refine each one
    for k in 0..g - 1 {
        let (Some((_, fa)), Some((_, fb))) = (scan[k], scan[k + 1]) else { continue };
        if fa > 0.0 && fb < 0.0 {
            if let Ok(z) = regula_falsi(obs, hyper, cfg, grid[k], grid[k + 1], fa, fb) {
                if let Ok(v) = log_marginal_likelihood(obs, z, hyper) {
                    consider(z, v);
                }
            }
        }
    }
    match best {
        Some((z, _)) => Ok(z),
        None => Err(last_err.unwrap_or(GpError::EmptyObservations)),
    }
}

/// Illinois regula falsi for the root of ∂L/∂z in `[a, b]`, given
/// `∂L/∂z(a) > 0 > ∂L/∂z(b)`.
fn regula_falsi(
    obs: &ObservationSet,
    hyper: &GpHyperParams,
    cfg: &LatentScaleConfig,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
) -> Result<f64, GpError> {
    let mut side = 0i8;
    let mut root = 0.5 * (a + b);
    for it in 0..cfg.max_iter {
        let prev = root;
        root = (a * fb - b * fa) / (fb - fa);
        if !(root > a && root < b) {
            root = 0.5 * (a + b);
        }
        if it > 0 && (root - prev).abs() < cfg.tol {
            return Ok(root);
        }
        let fr = lml_with_gradient(obs, root, hyper)?.d_z;
        if fr == 0.0 {
            return Ok(root);
        }
        if fr > 0.0 {
            a = root;
            fa = fr;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        } else {
            b = root;
            fb = fr;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        }
        if (b - a) < cfg.tol {
            return Ok(0.5 * (a + b));
        }
    }
    Ok(root)
}

#[derive(Debug, Clone)]
pub struct GpFitConfig {
    /// Starting point; derived from the data when `None`.
    pub init: Option<GpHyperParams>,
    pub lbfgs: LbfgsConfig,
    pub latent: LatentScaleConfig,
    /// Shift the scale gauge so that the fitted latent scales average zero.
    /// The joint objective is flat along `(ln λ1², ln λ2², z) + (c, c, c/2)`,
    /// so some gauge must be chosen.
    pub center_latent_scales: bool,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self {
            init: None,
            lbfgs: LbfgsConfig { max_iter: 100, grad_tol: 1e-6, ..Default::default() },
            latent: LatentScaleConfig::default(),
            center_latent_scales: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpFit {
    pub hyper: GpHyperParams,
    /// Fitted `ẑ` per training set (sets with fewer than 2 observations skipped).
    pub latent_scales: Vec<f64>,
    /// Σ_sets max_z log p at the returned parameters.
    pub objective: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Joint objective after each accepted iteration; non-decreasing.
    pub history: Vec<f64>,
}

/// `Σ_s max_z log p(D_s; θ, z)` and its gradient in θ. By the envelope
/// theorem the gradient is the partial derivative at each set's `ẑ`.
pub fn joint_objective(
    sets: &[ObservationSet],
    hyper: &GpHyperParams,
    latent: &LatentScaleConfig,
) -> Result<(f64, [f64; N_HYPER], Vec<f64>), GpError> {
    let mut total = 0.0;
    let mut grad = [0.0; N_HYPER];
    let mut zs = Vec::with_capacity(sets.len());
    for set in sets {
        let z = fit_latent_scale_with(set, hyper, latent)?;
        let g = lml_with_gradient(set, z, hyper)?;
        total += g.value;
        for (acc, d) in grad.iter_mut().zip(g.d_hyper) {
            *acc += d;
        }
        zs.push(z);
    }
    Ok((total, grad, zs))
}

fn data_driven_init(sets: &[ObservationSet]) -> GpHyperParams {
    let scores: Vec<f64> = sets.iter().flat_map(|s| s.scores().iter().copied()).collect();
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = (scores.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n).max(1e-6);
    // pooled within-set variance of each transformed coordinate at z = 0
    let mut spread = [0.0f64; 4];
    let mut count = 0.0;
    for set in sets {
        let t: Vec<[f64; 4]> = set.boxes().iter().map(|b| psi_transform(b, 0.0).0).collect();
        let m = t.len() as f64;
        for dim in 0..4 {
            let mu = t.iter().map(|x| x[dim]).sum::<f64>() / m;
            spread[dim] += t.iter().map(|x| (x[dim] - mu).powi(2)).sum::<f64>();
        }
        count += m;
    }
    let lambda = spread.map(|s| (count / s.max(1e-12)).clamp(1e-6, 1e6));
    GpHyperParams::new(10.0 / var, mean, var, lambda).expect("finite positive init")
}

/// Learns θ by maximizing the summed marginal likelihood of `sets`, re-fitting
/// each set's latent scale at every evaluation.
pub fn fit_gp_hyperparameters(sets: &[ObservationSet], cfg: &GpFitConfig) -> Result<GpFit, GpError> {
    let usable: Vec<ObservationSet> = sets.iter().filter(|s| s.len() >= 2).cloned().collect();
    if usable.is_empty() {
        return Err(GpError::NoTrainingSets);
    }
    let init = cfg.init.unwrap_or_else(|| data_driven_init(&usable));
    // initial feasibility check surfaces conditioning failures as errors
    joint_objective(&usable, &init, &cfg.latent)?;
    let total_obs: f64 = usable.iter().map(|s| s.len() as f64).sum();

    let objective = |x: &[f64], g: &mut [f64]| -> f64 {
        let Ok(h) = GpHyperParams::from_vec(x) else {
            return f64::INFINITY;
        };
        match joint_objective(&usable, &h, &cfg.latent) {
            Ok((v, grad, _)) => {
                for (gi, d) in g.iter_mut().zip(grad) {
                    *gi = -d / total_obs;
                }
                -v / total_obs
            }
            Err(_) => f64::INFINITY,
        }
    };
    let min = lbfgs(objective, &init.to_vec(), &cfg.lbfgs);
    let mut hyper = GpHyperParams::from_vec(&min.x)?;
    let (mut value, _, mut zs) = joint_objective(&usable, &hyper, &cfg.latent)?;
    if cfg.center_latent_scales {
        let shift = zs.iter().sum::<f64>() / zs.len() as f64;
        let candidate = hyper.regauged(shift);
        let (v2, _, zs2) = joint_objective(&usable, &candidate, &cfg.latent)?;
        if v2 >= value - 1e-9 * value.abs().max(1.0) {
            hyper = candidate;
            value = v2;
            zs = zs2;
        }
    }
    Ok(GpFit {
        hyper,
        latent_scales: zs,
        objective: value,
        iterations: min.iterations,
        termination: min.termination,
        history: min.history.iter().map(|v| -v * total_obs).collect(),
    })
}
