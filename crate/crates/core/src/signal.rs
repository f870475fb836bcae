//! Device-side and server-side signal chain.
//!
//! Transmitter: [`prune`] → [`normalize`] → (channel inversion, see
//! [`crate::channel`]) → [`spread`]. Receiver: [`despread`] →
//! [`denormalize`] → [`zero_pad`].
//!
//! All operations are pure; identical inputs (including PN chips) give
//! bit-identical outputs.

use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Standard deviations at or below this are treated as degenerate.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// A D-dimensional real model update.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    values: Vec<f64>,
}

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("gradient must have at least one coordinate"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("gradient coordinate {i} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Mean of the coordinates.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.dim() as f64
    }

    /// Population variance of the coordinates, `(1/D) Σ (g_d - mean)^2`.
    pub fn coordinate_variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.dim() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// The coordinate set ψ_n kept in one round, shared by every device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruningMask {
    id: u64,
    indices: Vec<usize>,
    source_dim: usize,
}

impl PruningMask {
    /// Build a mask from explicit indices; they must be strictly increasing and `< source_dim`.
    pub fn from_indices(indices: Vec<usize>, source_dim: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::config("pruning mask must keep at least one coordinate"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("mask indices must be strictly increasing"));
        }
        if *indices.last().unwrap() >= source_dim {
            return Err(Error::config(format!(
                "mask index {} out of range for dimension {source_dim}",
                indices.last().unwrap()
            )));
        }
        Ok(Self {
            id: 0,
            indices,
            source_dim,
        })
    }

    /// Keep every coordinate.
    pub fn full(source_dim: usize) -> Self {
        Self {
            id: 0,
            indices: (0..source_dim).collect(),
            source_dim,
        }
    }

    /// Draw `picks` coordinates uniformly from the prunable set; every
    /// non-prunable coordinate is kept as well.
    pub fn sample<R: Rng + ?Sized>(prunable: &[bool], picks: usize, rng: &mut R) -> Result<Self> {
        let candidates: Vec<usize> = (0..prunable.len()).filter(|&i| prunable[i]).collect();
        if picks > candidates.len() {
            return Err(Error::config(format!(
                "cannot keep {picks} of {} prunable coordinates",
                candidates.len()
            )));
        }
        let mut indices: Vec<usize> = if picks == candidates.len() {
            candidates
        } else {
            index::sample(rng, candidates.len(), picks)
                .into_iter()
                .map(|j| candidates[j])
                .collect()
        };
        indices.extend((0..prunable.len()).filter(|&i| !prunable[i]));
        indices.sort_unstable();
        Self::from_indices(indices, prunable.len())
    }

    pub fn with_id(mut self, id: u64) -> Self {
        self.id = id;
        self
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }
}

/// Number of prunable coordinates kept at breathing depth `depth`:
/// `max(1, floor(prunable / depth))`, or zero when nothing is prunable.
pub fn prunable_picks(prunable_count: usize, depth: usize) -> usize {
    if prunable_count == 0 {
        return 0;
    }
    (prunable_count / depth.max(1)).max(1)
}

/// An S_n-length vector tied to the mask that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedGradient {
    pub values: Vec<f64>,
    pub mask_id: u64,
}

impl CompressedGradient {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationParams {
    mean: f64,
    std: f64,
}

impl NormalizationParams {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() {
            return Err(Error::config("normalization statistics must be finite"));
        }
        if std <= SIGMA_FLOOR {
            return Err(Error::DegenerateStatistics {
                std,
                floor: SIGMA_FLOOR,
            });
        }
        Ok(Self { mean, std })
    }

    /// M = 0, V = 1: transmit unnormalized.
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }
}

/// ±1 chip matrix with one row per surviving coefficient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnSequenceSet {
    chips: Vec<i8>,
    rows: usize,
    depth: usize,
    seed: u64,
}

impl PnSequenceSet {
    /// i.i.d. fair Bernoulli chips.
    pub fn generate<R: Rng + ?Sized>(rows: usize, depth: usize, seed: u64, rng: &mut R) -> Self {
        let chips = (0..rows * depth)
            .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
            .collect();
        Self {
            chips,
            rows,
            depth,
            seed,
        }
    }

    pub fn from_rows(rows: Vec<Vec<i8>>) -> Result<Self> {
        let depth = rows.first().map_or(0, Vec::len);
        if depth == 0 {
            return Err(Error::config("PN set needs at least one chip per row"));
        }
        if rows.iter().any(|r| r.len() != depth) {
            return Err(Error::config("PN rows must share one length"));
        }
        if rows.iter().flatten().any(|&c| c != 1 && c != -1) {
            return Err(Error::config("PN chips must be +1 or -1"));
        }
        Ok(Self {
            rows: rows.len(),
            depth,
            chips: rows.into_iter().flatten().collect(),
            seed: 0,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Processing gain G_n.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, s: usize) -> &[i8] {
        &self.chips[s * self.depth..(s + 1) * self.depth]
    }
}

/// Received baseband chips, row-major by coefficient then chip.
#[derive(Debug, Clone, PartialEq)]
pub struct ChipFrame {
    pub symbols: Vec<Complex64>,
}

pub fn prune(g: &GradientVector, mask: &PruningMask) -> Result<CompressedGradient> {
    if mask.source_dim() != g.dim() {
        return Err(Error::config(format!(
            "mask built for dimension {} applied to gradient of dimension {}",
            mask.source_dim(),
            g.dim()
        )));
    }
    Ok(CompressedGradient {
        values: mask.indices().iter().map(|&i| g.values()[i]).collect(),
        mask_id: mask.id(),
    })
}

pub fn normalize(gc: &CompressedGradient, p: &NormalizationParams) -> Result<CompressedGradient> {
    if p.std <= SIGMA_FLOOR {
        return Err(Error::DegenerateStatistics {
            std: p.std,
            floor: SIGMA_FLOOR,
        });
    }
    Ok(CompressedGradient {
        values: gc.values.iter().map(|v| (v - p.mean) / p.std).collect(),
        mask_id: gc.mask_id,
    })
}

pub fn spread(gn: &CompressedGradient, pn: &PnSequenceSet) -> Result<Vec<f64>> {
    if pn.rows() != gn.len() {
        return Err(Error::config(format!(
            "{} PN rows for {} coefficients",
            pn.rows(),
            gn.len()
        )));
    }
    let mut out = Vec::with_capacity(gn.len() * pn.depth());
    for (s, &v) in gn.values.iter().enumerate() {
        out.extend(pn.row(s).iter().map(|&c| v * f64::from(c)));
    }
    Ok(out)
}

pub fn despread(frame: &ChipFrame, pn: &PnSequenceSet) -> Result<Vec<f64>> {
    let g = pn.depth();
    if frame.symbols.len() != pn.rows() * g {
        return Err(Error::config(format!(
            "frame of {} chips does not match {}x{} PN set",
            frame.symbols.len(),
            pn.rows(),
            g
        )));
    }
    Ok(frame
        .symbols
        .chunks_exact(g)
        .enumerate()
        .map(|(s, chunk)| {
            let acc: f64 = pn
                .row(s)
                .iter()
                .zip(chunk)
                .map(|(&c, y)| f64::from(c) * y.re)
                .sum();
            acc / g as f64
        })
        .collect())
}

/// Undo normalization and amplitude alignment: `(V / (√P0·|K|))·y + M`.
pub fn denormalize(
    y: &[f64],
    p: &NormalizationParams,
    active_count: usize,
    p0: f64,
) -> Result<Vec<f64>> {
    if active_count == 0 {
        return Err(Error::RoundSkipped);
    }
    if p0 <= 0.0 {
        return Err(Error::config("alignment factor P0 must be positive"));
    }
    let scale = p.std / (p0.sqrt() * active_count as f64);
    Ok(y.iter().map(|v| scale * v + p.mean).collect())
}

pub fn zero_pad(y: &[f64], mask: &PruningMask) -> Result<GradientVector> {
    if y.len() != mask.len() {
        return Err(Error::config(format!(
            "{} symbols for a mask of {} coordinates",
            y.len(),
            mask.len()
        )));
    }
    let mut out = vec![0.0; mask.source_dim()];
    for (&i, &v) in mask.indices().iter().zip(y) {
        out[i] = v;
    }
    Ok(GradientVector { values: out })
}
