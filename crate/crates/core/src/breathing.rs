//! Breathing-depth control.
//!
//! The breathing depth `G` trades gradient pruning (keep `1/G` of the
//! coordinates) against processing gain (each kept coordinate occupies `G`
//! chips). [`fixed_depth`] picks one `G` for the whole run from the receive
//! SIR alone; [`adaptive_depth`] re-picks it every round from gradient
//! statistics fed back by the devices and the active-device count.

use tracing::warn;

use crate::error::{Error, Result};
use crate::signal::GradientVector;

/// Known system parameters: alignment power, interference power, device
/// count, activation probability and model size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirConfig {
    pub p0: f64,
    pub p_i: f64,
    pub k: usize,
    pub xi_a: f64,
    pub d: usize,
}

impl SirConfig {
    pub fn new(p0: f64, p_i: f64, k: usize, xi_a: f64, d: usize) -> Result<Self> {
        if !(p0 > 0.0) || !(p_i >= 0.0) || k == 0 || d == 0 {
            return Err(Error::config("P0, K and D must be positive and P_I nonnegative"));
        }
        if !(xi_a > 0.0 && xi_a <= 1.0) {
            return Err(Error::config("activation probability must lie in (0, 1]"));
        }
        Ok(Self { p0, p_i, k, xi_a, d })
    }

    /// Build from a receive SIR in dB with `P_I = 1`.
    pub fn from_sir_db(sir_db: f64, k: usize, xi_a: f64, d: usize) -> Result<Self> {
        Self::new(10f64.powf(sir_db / 10.0), 1.0, k, xi_a, d)
    }

    /// `P_I / P0`
    pub fn interference_ratio(&self) -> f64 {
        self.p_i / self.p0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    ClipLow,
    Interior,
    ClipHigh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthDecision {
    pub g: usize,
    /// Unclipped continuous minimizer.
    pub relaxed_x: f64,
    pub regime: Regime,
    /// Set when the gradient statistics carried no signal (α̂² = 0).
    pub degenerate: bool,
}

/// Clip `x` into `[1, d]`, choosing between floor and ceil by `beta`
/// (ties go to the smaller depth).
fn clip_relaxed(x: f64, d: usize, beta: impl Fn(usize) -> f64) -> DepthDecision {
    let (g, regime) = if x < 1.0 {
        (1, Regime::ClipLow)
    } else if x >= d as f64 {
        (d, Regime::ClipHigh)
    } else {
        let lo = x.floor() as usize;
        let hi = (x.ceil() as usize).min(d);
        let g = if beta(lo) <= beta(hi) { lo } else { hi };
        (g, Regime::Interior)
    };
    DepthDecision {
        g,
        relaxed_x: x,
        regime,
        degenerate: false,
    }
}

/// SIR-only surrogate `β_F(G) = sqrt(1 - 1/G + 6·P_I/(G²·K²·ξ_a²·P0))`.
pub fn beta_fixed(g: usize, cfg: &SirConfig) -> f64 {
    let g = g.max(1) as f64;
    let kx = cfg.k as f64 * cfg.xi_a;
    (1.0 - 1.0 / g + 6.0 * cfg.p_i / (g * g * kx * kx * cfg.p0)).sqrt()
}

/// Depth used for every round when no gradient or channel feedback exists.
pub fn fixed_depth(cfg: &SirConfig) -> DepthDecision {
    let kx = cfg.k as f64 * cfg.xi_a;
    let x = 12.0 * cfg.p_i / (cfg.p0 * kx * kx);
    clip_relaxed(x, cfg.d, |g| beta_fixed(g, cfg))
}

/// Gradient state information estimated from device feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct GsiEstimate {
    /// α̂²: mean squared norm of the active devices' gradients.
    pub alpha_sq: f64,
    /// V̂²: mean of the per-device coordinate variances.
    pub v_sq: f64,
    /// M̂: mean of the per-device coordinate means.
    pub mean: f64,
    pub per_device: Vec<DeviceFeedback>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceFeedback {
    pub norm_sq: f64,
    pub local_var: f64,
    pub local_mean: f64,
}

impl DeviceFeedback {
    pub fn from_gradient(g: &GradientVector) -> Self {
        Self {
            norm_sq: g.norm_sq(),
            local_var: g.coordinate_variance(),
            local_mean: g.mean(),
        }
    }
}

impl GsiEstimate {
    pub fn from_feedback(per_device: Vec<DeviceFeedback>) -> Result<Self> {
        if per_device.is_empty() {
            return Err(Error::RoundSkipped);
        }
        let n = per_device.len() as f64;
        let alpha_sq = per_device.iter().map(|f| f.norm_sq).sum::<f64>() / n;
        let v_sq = per_device.iter().map(|f| f.local_var).sum::<f64>() / n;
        let mean = per_device.iter().map(|f| f.local_mean).sum::<f64>() / n;
        Ok(Self {
            alpha_sq,
            v_sq,
            mean,
            per_device,
        })
    }
}

pub fn estimate_gsi(active_gradients: &[GradientVector]) -> Result<GsiEstimate> {
    GsiEstimate::from_feedback(active_gradients.iter().map(DeviceFeedback::from_gradient).collect())
}

/// Per-round estimate `β̂_n(G) = (1 - 1/G)·α̂² + D·P_I·V̂²/(G²·P0·|K|²)`.
pub fn beta_adaptive(g: usize, gsi: &GsiEstimate, active_count: usize, cfg: &SirConfig) -> f64 {
    let g = g.max(1) as f64;
    let kk = active_count.max(1) as f64;
    (1.0 - 1.0 / g) * gsi.alpha_sq
        + cfg.d as f64 * cfg.p_i * gsi.v_sq / (g * g * cfg.p0 * kk * kk)
}

/// Per-round depth minimizing [`beta_adaptive`] over `{1..D}`.
pub fn adaptive_depth(gsi: &GsiEstimate, active_count: usize, cfg: &SirConfig) -> Result<DepthDecision> {
    if active_count == 0 {
        return Err(Error::RoundSkipped);
    }
    if gsi.alpha_sq <= 0.0 {
        warn!("degenerate GSI (zero gradient norm); using maximum breathing depth");
        return Ok(DepthDecision {
            g: cfg.d,
            relaxed_x: f64::INFINITY,
            regime: Regime::ClipHigh,
            degenerate: true,
        });
    }
    let kk = active_count as f64;
    let x = 2.0 * cfg.p_i * cfg.d as f64 * gsi.v_sq / (cfg.p0 * kk * kk * gsi.alpha_sq);
    Ok(clip_relaxed(x, cfg.d, |g| beta_adaptive(g, gsi, active_count, cfg)))
}
