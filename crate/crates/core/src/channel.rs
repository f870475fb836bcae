//! Block Rayleigh fading, truncated channel inversion and chip-level
//! superposition under worst-case Gaussian interference.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::signal::ChipFrame;

/// Probability that a unit-variance Rayleigh gain clears `g_th`: `exp(-g_th)`.
pub fn activation_probability(g_th: f64) -> f64 {
    (-g_th).exp()
}

/// One round of fading and the resulting inversion coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Vec<Complex64>,
    /// Complex amplitude scaling; `h[k] * p[k] == √P0` for active devices.
    pub p: Vec<Complex64>,
    pub active: Vec<bool>,
}

impl ChannelRealization {
    /// Apply truncated inversion to given fading coefficients.
    pub fn from_gains(h: Vec<Complex64>, g_th: f64, p0: f64) -> Result<Self> {
        if !(g_th >= 0.0) {
            return Err(Error::config("truncation threshold must be nonnegative"));
        }
        if !(p0 > 0.0) {
            return Err(Error::config("alignment factor P0 must be positive"));
        }
        let amp = Complex64::new(p0.sqrt(), 0.0);
        let active: Vec<bool> = h.iter().map(|hk| hk.norm_sqr() >= g_th && hk.norm_sqr() > 0.0).collect();
        let p = h
            .iter()
            .zip(&active)
            .map(|(hk, &a)| if a { amp / hk } else { Complex64::new(0.0, 0.0) })
            .collect();
        Ok(Self { h, p, active })
    }

    pub fn num_devices(&self) -> usize {
        self.h.len()
    }

    /// |K(n)|
    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_devices(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().enumerate().filter(|(_, &a)| a).map(|(k, _)| k)
    }
}

/// Draw i.i.d. CN(0,1) coefficients and invert those above `g_th`.
pub fn draw_channels<R: Rng + ?Sized>(
    num_devices: usize,
    g_th: f64,
    p0: f64,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let n = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
    let h = (0..num_devices)
        .map(|_| Complex64::new(n.sample(rng), n.sample(rng)))
        .collect();
    ChannelRealization::from_gains(h, g_th, p0)
}

/// Gaussian interference with `power` per real dimension, i.e. each chip is
/// CN(0, 2·power).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferenceProfile {
    power: f64,
}

impl InterferenceProfile {
    pub fn new(power: f64) -> Result<Self> {
        if !(power > 0.0) || !power.is_finite() {
            return Err(Error::config("interference power must be positive"));
        }
        Ok(Self { power })
    }

    /// Interference switched off, for ablations.
    pub fn none() -> Self {
        Self { power: 0.0 }
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn sample_chip<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        if self.power == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let sd = self.power.sqrt();
        let n = Normal::new(0.0, sd).unwrap();
        Complex64::new(n.sample(rng), n.sample(rng))
    }
}

/// Cumulative transmit energy per device, `Σ_n G_n·S_n·|p_k(n)|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLedger {
    energy: Vec<f64>,
    budget: f64,
    rounds: usize,
}

impl PowerLedger {
    pub fn new(num_devices: usize, budget: f64) -> Self {
        Self {
            energy: vec![0.0; num_devices],
            budget,
            rounds: 0,
        }
    }

    pub fn charge(&mut self, device: usize, energy: f64) {
        debug_assert!(energy >= 0.0);
        self.energy[device] += energy;
    }

    pub fn end_round(&mut self) {
        self.rounds += 1;
    }

    pub fn energy(&self) -> &[f64] {
        &self.energy
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Fold another ledger (e.g. from a parallel trial) into this one.
    pub fn merge(&mut self, other: &PowerLedger) -> Result<()> {
        if other.energy.len() != self.energy.len() {
            return Err(Error::config("ledgers track different device counts"));
        }
        for (a, b) in self.energy.iter_mut().zip(&other.energy) {
            *a += b;
        }
        self.rounds += other.rounds;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerReport {
    pub rounds: usize,
    pub energy: Vec<f64>,
    /// Energy as a fraction of the budget; infinite budgets report 0.
    pub budget_fraction: Vec<f64>,
    pub over_budget: Vec<bool>,
}

/// Report only; transmission is never blocked on the budget.
pub fn audit_power(ledger: &PowerLedger) -> PowerReport {
    let budget_fraction: Vec<f64> = ledger
        .energy
        .iter()
        .map(|e| if ledger.budget.is_finite() && ledger.budget > 0.0 { e / ledger.budget } else { 0.0 })
        .collect();
    PowerReport {
        rounds: ledger.rounds,
        energy: ledger.energy.clone(),
        over_budget: budget_fraction.iter().map(|f| *f > 1.0).collect(),
        budget_fraction,
    }
}

/// Superpose the active devices' chips through their channels and add
/// interference. `per_device_chips` has one entry per device; entries of
/// inactive devices are ignored but must still have the common length.
pub fn transmit_round<R: Rng + ?Sized>(
    per_device_chips: &[Vec<f64>],
    chan: &ChannelRealization,
    intf: &InterferenceProfile,
    ledger: &mut PowerLedger,
    rng: &mut R,
) -> Result<ChipFrame> {
    if per_device_chips.len() != chan.num_devices() {
        return Err(Error::config(format!(
            "{} chip streams for {} devices",
            per_device_chips.len(),
            chan.num_devices()
        )));
    }
    let len = per_device_chips.first().map_or(0, Vec::len);
    if per_device_chips.iter().any(|c| c.len() != len) {
        return Err(Error::config("devices supplied chip vectors of different lengths"));
    }
    if ledger.energy.len() != chan.num_devices() {
        return Err(Error::config("power ledger does not match device count"));
    }

    let mut symbols: Vec<Complex64> = (0..len).map(|_| intf.sample_chip(rng)).collect();
    for k in chan.active_devices() {
        let gain = chan.h[k] * chan.p[k];
        for (y, &c) in symbols.iter_mut().zip(&per_device_chips[k]) {
            *y += gain * c;
        }
        ledger.charge(k, len as f64 * chan.p[k].norm_sqr());
    }
    ledger.end_round();
    Ok(ChipFrame { symbols })
}
