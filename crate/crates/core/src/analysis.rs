//! Closed-form AirComp error and convergence diagnostics, plus a toy
//! strongly convex problem on which they can be checked empirically.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::aircomp::{over_the_air, Uplink};
use crate::breathing::{adaptive_depth, estimate_gsi, SirConfig};
use crate::channel::{draw_channels, InterferenceProfile, PowerLedger};
use crate::error::{Error, Result};
use crate::learning::ideal_aggregate;
use crate::signal::{prunable_picks, GradientVector, NormalizationParams, PnSequenceSet, PruningMask};

/// Distortion of randomly pruning the average of `k_active` i.i.d.
/// N(0, σ²) vectors: `(1 − γ)·D·σ²/|K|`.
pub fn generic_pruning_mse(sigma_sq: f64, d: usize, gamma: f64, k_active: usize) -> f64 {
    (1.0 - gamma) * d as f64 * sigma_sq / k_active.max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseBreakdown {
    pub pruning_term: f64,
    pub interference_term: f64,
    pub total: f64,
}

/// Expected AirComp error split into its pruning and interference parts:
/// `(1 − γ)·E[α²] + γ·D·P_I·E[V²]·E[1/|K|²]/(G·P0)`.
pub fn closed_form_mse(
    gamma: f64,
    g_depth: usize,
    cfg: &SirConfig,
    alpha_sq: f64,
    v_sq: f64,
    inv_k_sq: f64,
) -> MseBreakdown {
    let pruning_term = (1.0 - gamma) * alpha_sq;
    let interference_term =
        gamma * cfg.d as f64 * cfg.p_i * v_sq * inv_k_sq / (g_depth.max(1) as f64 * cfg.p0);
    MseBreakdown {
        pruning_term,
        interference_term,
        total: pruning_term + interference_term,
    }
}

/// Which form of the fading/gradient-randomness term to use in `u(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PropagationForm {
    /// `(2 − ξ_a)·σ_g²/(K·ξ_a)`
    #[default]
    MainText,
    /// `sqrt((2 − ξ_a)/(K·ξ_a))·σ_g`
    Appendix,
}

/// Propagation loss `u(n)`: fading/gradient term plus `sqrt(MSE(n))`.
pub fn propagation_loss(mse_total: f64, k: usize, xi_a: f64, sigma_g_sq: f64) -> f64 {
    propagation_loss_with(PropagationForm::MainText, mse_total, k, xi_a, sigma_g_sq)
}

pub fn propagation_loss_with(form: PropagationForm, mse_total: f64, k: usize, xi_a: f64, sigma_g_sq: f64) -> f64 {
    let ratio = (2.0 - xi_a) / (k as f64 * xi_a);
    let fading = match form {
        PropagationForm::MainText => ratio * sigma_g_sq,
        PropagationForm::Appendix => (ratio * sigma_g_sq).sqrt(),
    };
    fading + mse_total.max(0.0).sqrt()
}

/// Constants of the supermartingale convergence argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceParams {
    /// Strong-convexity constant c.
    pub c: f64,
    /// Success-region radius ε on ‖w − w*‖².
    pub epsilon: f64,
    /// Bound 𝔾² on the squared norm of aggregated gradients.
    pub g_bound_sq: f64,
    pub sigma_g_sq: f64,
    pub zeta_sq: f64,
    pub eta: f64,
}

impl ConvergenceParams {
    /// Rejects non-positive constants and learning rates with `η ≥ 2cε/𝔾²`,
    /// for which `2ηcε − η²𝔾²` is not positive.
    pub fn new(c: f64, epsilon: f64, g_bound_sq: f64, sigma_g_sq: f64, zeta_sq: f64, eta: f64) -> Result<Self> {
        let p = Self {
            c,
            epsilon,
            g_bound_sq,
            sigma_g_sq,
            zeta_sq,
            eta,
        };
        if [c, epsilon, g_bound_sq, eta].iter().any(|v| !(*v > 0.0)) || sigma_g_sq < 0.0 || zeta_sq < 0.0 {
            return Err(Error::config("convergence constants must be positive"));
        }
        if eta >= p.max_learning_rate() {
            return Err(Error::config(format!(
                "learning rate {eta} must be below 2cε/𝔾² = {}",
                p.max_learning_rate()
            )));
        }
        Ok(p)
    }

    pub fn max_learning_rate(&self) -> f64 {
        2.0 * self.c * self.epsilon / self.g_bound_sq
    }

    /// `2ηcε − η²𝔾²`
    pub fn rate(&self) -> f64 {
        2.0 * self.eta * self.c * self.epsilon - self.eta * self.eta * self.g_bound_sq
    }

    /// Lipschitz constant `H = 2√ε/(2ηcε − η²𝔾²)` of W_n in its first argument.
    pub fn h_lipschitz(&self) -> f64 {
        2.0 * self.epsilon.sqrt() / self.rate()
    }
}

/// `W_n = ε/(2ηcε − η²𝔾²)·log(e·‖w − w*‖²/ε) + n`.
pub fn rate_supermartingale(w: &[f64], w_star: &[f64], p: &ConvergenceParams, n: usize) -> f64 {
    let dist_sq: f64 = w.iter().zip(w_star).map(|(a, b)| (a - b) * (a - b)).sum();
    rate_supermartingale_at(dist_sq, p, n)
}

pub fn rate_supermartingale_at(dist_sq: f64, p: &ConvergenceParams, n: usize) -> f64 {
    p.epsilon / p.rate() * (std::f64::consts::E * dist_sq / p.epsilon).ln() + n as f64
}

/// `U_n = W_n − η·H·Σ_{i<n} u(i)`.
pub fn air_supermartingale(dist_sq: f64, p: &ConvergenceParams, n: usize, u_prefix_sum: f64) -> f64 {
    rate_supermartingale_at(dist_sq, p, n) - p.eta * p.h_lipschitz() * u_prefix_sum
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureBound {
    /// Unclamped value; meaningless when `vacuous`.
    pub raw: f64,
    /// Clamped to `[0, 1]`.
    pub bound: f64,
    /// Denominator not positive: the bound says nothing.
    pub vacuous: bool,
    /// Whether `η < 2√ε(c√ε·N − Σu)/(N·𝔾²)` holds.
    pub learning_rate_ok: bool,
}

/// Bound on the probability of never entering the success region within
/// `N = u_series.len()` rounds.
pub fn failure_bound(p: &ConvergenceParams, u_series: &[f64], w0_dist_sq: f64) -> FailureBound {
    let n = u_series.len() as f64;
    let sum_u: f64 = u_series.iter().sum();
    let se = p.epsilon.sqrt();
    let numerator = p.epsilon * (std::f64::consts::E * w0_dist_sq / p.epsilon).ln();
    let denominator = p.rate() * n - 2.0 * p.eta * se * sum_u;
    let learning_rate_ok = n > 0.0 && p.eta < 2.0 * se * (p.c * se * n - sum_u) / (n * p.g_bound_sq);
    if !(denominator > 0.0) {
        return FailureBound {
            raw: f64::INFINITY,
            bound: 1.0,
            vacuous: true,
            learning_rate_ok,
        };
    }
    let raw = numerator / denominator;
    FailureBound {
        raw,
        bound: raw.clamp(0.0, 1.0),
        vacuous: false,
        learning_rate_ok,
    }
}

/// Expected air-interface statistics for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundStats {
    /// E[α²]
    pub alpha_sq: f64,
    /// E[V²]
    pub v_sq: f64,
    /// E[1/|K|²]
    pub inv_k_sq: f64,
}

/// Air-interface error `β_n(G) = (1 − 1/G)·E[α²] + D·P_I·E[V²/|K|²]/(G²·P0)`.
pub fn air_interface_error(g: usize, stats: &RoundStats, cfg: &SirConfig) -> f64 {
    let g = g.max(1) as f64;
    (1.0 - 1.0 / g) * stats.alpha_sq + cfg.d as f64 * cfg.p_i * stats.v_sq * stats.inv_k_sq / (g * g * cfg.p0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremTerms {
    pub per_round: Vec<f64>,
    /// β_Σ = Σ sqrt(β_n(G_n))
    pub beta_sigma: f64,
}

pub fn theorem_bound_terms(g_series: &[usize], stats: &[RoundStats], cfg: &SirConfig) -> Result<TheoremTerms> {
    if g_series.len() != stats.len() {
        return Err(Error::config(format!(
            "{} depths for {} rounds of statistics",
            g_series.len(),
            stats.len()
        )));
    }
    let per_round: Vec<f64> = g_series
        .iter()
        .zip(stats)
        .map(|(&g, s)| air_interface_error(g, s, cfg))
        .collect();
    let beta_sigma = per_round.iter().map(|b| b.max(0.0).sqrt()).sum();
    Ok(TheoremTerms { per_round, beta_sigma })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaReport {
    /// Γ = (‖ḡ‖² + σ_g²)/D
    pub gamma: f64,
    pub mean_alpha_sq: f64,
    pub mean_v_sq: f64,
    pub alpha_ok: bool,
    pub v_ok: bool,
    /// Whether K·ξ_a ≥ 2 (at least two devices expected active).
    pub expected_devices_ok: bool,
}

/// Check `E[α²] ≤ D·Γ` and `E[V²] ≤ Γ` on gradient samples. Each entry of
/// `rounds` is the set of active-device gradients of one round.
pub fn gamma_bound_check(rounds: &[Vec<GradientVector>], sigma_g_sq: f64, k: usize, xi_a: f64) -> Result<GammaReport> {
    let all: Vec<GradientVector> = rounds.iter().flatten().cloned().collect();
    let mean = ideal_aggregate(&all)?;
    let d = mean.dim() as f64;
    let gamma = (mean.norm_sq() + sigma_g_sq) / d;
    let mut alpha = 0.0;
    let mut v = 0.0;
    let mut used = 0usize;
    for r in rounds.iter().filter(|r| !r.is_empty()) {
        alpha += ideal_aggregate(r)?.norm_sq();
        v += estimate_gsi(r)?.v_sq;
        used += 1;
    }
    let mean_alpha_sq = alpha / used as f64;
    let mean_v_sq = v / used as f64;
    let slack = 1e-12 * (1.0 + d * gamma);
    Ok(GammaReport {
        gamma,
        mean_alpha_sq,
        mean_v_sq,
        alpha_ok: mean_alpha_sq <= d * gamma + slack,
        v_ok: mean_v_sq <= gamma + slack,
        expected_devices_ok: k as f64 * xi_a >= 2.0,
    })
}

/// Mean squared deviation of gradients from their mean, `E‖g_k − ḡ‖²`.
pub fn gradient_spread(gradients: &[GradientVector]) -> Result<f64> {
    let mean = ideal_aggregate(gradients)?;
    Ok(gradients
        .iter()
        .map(|g| g.values().iter().zip(mean.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / gradients.len() as f64)
}

/// `F(w) = (c/2)‖w − w*‖²` with device gradients `c(w − w*) + ξ_k`,
/// `ξ_k ~ N(0, noise²·I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyQuadratic {
    pub curvature: f64,
    pub optimum: Vec<f64>,
    pub noise_sd: f64,
}

impl ToyQuadratic {
    pub fn dim(&self) -> usize {
        self.optimum.len()
    }

    /// σ_g² = D·noise².
    pub fn sigma_g_sq(&self) -> f64 {
        self.dim() as f64 * self.noise_sd * self.noise_sd
    }

    pub fn exact_gradient(&self, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&self.optimum).map(|(a, b)| self.curvature * (a - b)).collect()
    }

    pub fn device_gradient<R: Rng + ?Sized>(&self, w: &[f64], rng: &mut R) -> GradientVector {
        let n = Normal::new(0.0, self.noise_sd.max(0.0)).unwrap();
        let g = self
            .exact_gradient(w)
            .into_iter()
            .map(|v| if self.noise_sd > 0.0 { v + n.sample(rng) } else { v })
            .collect();
        GradientVector::new(g).expect("finite toy gradient")
    }
}

/// Outcome of one adaptive-breathing round on the toy problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyStep {
    pub w: Vec<f64>,
    pub skipped: bool,
    pub depth: usize,
    /// Closed-form MSE at the realized statistics of the round.
    pub mse: f64,
}

/// One round of adaptive spectrum breathing on the toy quadratic with
/// every prunable coordinate eligible.
pub fn toy_adaptive_step<R: Rng + ?Sized>(
    toy: &ToyQuadratic,
    w: &[f64],
    cfg: &SirConfig,
    g_th: f64,
    eta: f64,
    rng: &mut R,
) -> Result<ToyStep> {
    let d = toy.dim();
    let chan = draw_channels(cfg.k, g_th, cfg.p0, rng)?;
    let active = chan.active_count();
    if active == 0 {
        return Ok(ToyStep {
            w: w.to_vec(),
            skipped: true,
            depth: 0,
            mse: 0.0,
        });
    }
    let grads: Vec<GradientVector> = (0..active).map(|_| toy.device_gradient(w, rng)).collect();
    let gsi = estimate_gsi(&grads)?;
    let depth = adaptive_depth(&gsi, active, cfg)?.g;
    let picks = prunable_picks(d, depth);
    let mask = PruningMask::sample(&vec![true; d], picks, rng)?;
    let pn = PnSequenceSet::generate(mask.len(), depth, 0, rng);
    let norm = NormalizationParams::new(gsi.mean, gsi.v_sq.sqrt()).unwrap_or_else(|_| NormalizationParams::identity());
    let uplink = Uplink {
        p0: cfg.p0,
        interference: InterferenceProfile::new(cfg.p_i)?,
    };
    let mut ledger = PowerLedger::new(cfg.k, f64::INFINITY);
    let est = over_the_air(&uplink, &grads, &chan, &mask, &pn, &norm, &mut ledger, rng)?;
    let alpha_sq = ideal_aggregate(&grads)?.norm_sq();
    let gamma = mask.len() as f64 / d as f64;
    let v_sq = norm.std() * norm.std();
    let mse = closed_form_mse(gamma, depth, cfg, alpha_sq, v_sq, 1.0 / (active * active) as f64).total;
    Ok(ToyStep {
        w: w.iter().zip(est.values()).map(|(a, g)| a - eta * g).collect(),
        skipped: false,
        depth,
        mse,
    })
}
