//! Experiment orchestration: one trial is a sequential round loop, trials
//! run in parallel, and everything is a pure function of the config.

pub mod config;
pub mod telemetry;

use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{apply_override, DataConfig, DataSource, ExperimentConfig, OutputPaths, PropagationVariant, Scheme};
pub use telemetry::{
    emit_plot_data, format_sig9, plot_series, read_telemetry, read_telemetry_file, telemetry_to_string,
    write_telemetry, PlotSeries, RoundTelemetry, TELEMETRY_HEADER,
};

use crate::aircomp::{over_the_air, Uplink};
use crate::analysis::{air_interface_error, closed_form_mse, gradient_spread, propagation_loss_with, RoundStats};
use crate::breathing::{adaptive_depth, estimate_gsi, fixed_depth, SirConfig};
use crate::channel::{audit_power, draw_channels, InterferenceProfile, PowerLedger};
use crate::error::{Error, Result};
use crate::learning::{
    apply_update, evaluate, ideal_aggregate, load_csv, load_idx, local_gradient, partition, Dataset, DeviceShard,
    ModelState, Objective,
};
use crate::rng::{SeedTree, StreamKind};
use crate::signal::{prunable_picks, GradientVector, NormalizationParams, PnSequenceSet, PruningMask};

/// Everything one trial carries between rounds.
pub struct TrialState {
    pub trial: usize,
    pub model: ModelState,
    pub objective: Box<dyn Objective>,
    pub shards: Vec<DeviceShard>,
    pub test: Dataset,
    pub sir: SirConfig,
    pub seeds: SeedTree,
    /// Depth used every round, or `None` when chosen per round.
    pub fixed_depth: Option<usize>,
    pub cumulative_chips: u64,
    pub ledger: PowerLedger,
}

impl TrialState {
    pub fn prunable_count(&self) -> usize {
        self.model.prunable.iter().filter(|p| **p).count()
    }
}

/// Load the configured data and shuffle it into train/test.
pub fn load_dataset(cfg: &ExperimentConfig, seeds: &SeedTree) -> Result<(Dataset, Dataset)> {
    let mut rng = seeds.stream(StreamKind::Data, &[0]);
    let full = match &cfg.data.source {
        DataSource::GaussianMixture(gm) => gm.generate(&mut rng)?,
        DataSource::Csv { path } => load_csv(path)?,
        DataSource::Idx { images, labels } => load_idx(images, labels)?,
    };
    let mut order: Vec<usize> = (0..full.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut seeds.stream(StreamKind::Data, &[1]));
    let shuffled = full.subset(&order);
    let n_test = ((full.len() as f64) * cfg.data.test_fraction).round() as usize;
    let n_test = n_test.clamp(1, full.len().saturating_sub(1).max(1));
    let (test, train) = shuffled.split_at(n_test);
    Ok((train, test))
}

pub fn sir_config(cfg: &ExperimentConfig, d: usize) -> Result<SirConfig> {
    let p_i = if cfg.interference { 1.0 } else { 0.0 };
    SirConfig::new(10f64.powf(cfg.sir_db / 10.0), p_i, cfg.num_devices, cfg.xi_a(), d)
}

pub fn prepare_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialState> {
    cfg.validate()?;
    let seeds = SeedTree::new(cfg.master_seed).child(trial as u64);
    let (train, test) = load_dataset(cfg, &seeds)?;
    let objective = cfg.task.build(train.n_features(), train.n_classes().max(test.n_classes()))?;
    let shards = partition(&train, cfg.num_devices, cfg.data.partition, &mut seeds.stream(StreamKind::Partition, &[]))?;
    let model = ModelState::init(objective.as_ref(), &mut seeds.stream(StreamKind::Init, &[]));
    let sir = sir_config(cfg, model.dim())?;
    let mut ts = TrialState {
        trial,
        model,
        objective,
        shards,
        test,
        sir,
        seeds,
        fixed_depth: None,
        cumulative_chips: 0,
        ledger: PowerLedger::new(cfg.num_devices, cfg.power_budget.unwrap_or(f64::INFINITY)),
    };
    ts.fixed_depth = match cfg.scheme {
        Scheme::Ideal | Scheme::AdaptiveBd => None,
        Scheme::NoSb | Scheme::PruneOnly { .. } => Some(1),
        Scheme::FixedBd => Some(fixed_depth(&ts.sir).g),
        Scheme::FixedBdOracle => Some(oracle_fixed_depth(&ts, cfg)?),
    };
    if cfg.force_depth.is_some() && cfg.scheme != Scheme::Ideal {
        ts.fixed_depth = cfg.force_depth.map(|g| g.min(ts.model.dim()));
    }
    Ok(ts)
}

/// Depth minimizing the air-interface error with `E[α²]` and `E[V²/|K|²]`
/// measured by warm-up draws at the initial model (conditioned on `|K| ≥ 1`).
pub fn oracle_fixed_depth(ts: &TrialState, cfg: &ExperimentConfig) -> Result<usize> {
    let (mut alpha, mut v_over_k, mut used) = (0.0, 0.0, 0usize);
    for i in 0..cfg.oracle_warmup as u64 {
        let chan = draw_channels(
            cfg.num_devices,
            cfg.g_th,
            ts.sir.p0,
            &mut ts.seeds.stream(StreamKind::MonteCarlo, &[0, i]),
        )?;
        let k = chan.active_count();
        if k == 0 {
            continue;
        }
        let grads = chan
            .active_devices()
            .map(|dev| {
                let mut rng = ts.seeds.stream(StreamKind::MonteCarlo, &[1, i, dev as u64]);
                local_gradient(&ts.model, &ts.shards[dev], ts.objective.as_ref(), cfg.task.batch_size, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        alpha += ideal_aggregate(&grads)?.norm_sq();
        v_over_k += estimate_gsi(&grads)?.v_sq / (k * k) as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::config("oracle warm-up never saw an active device"));
    }
    let stats = RoundStats {
        alpha_sq: alpha / used as f64,
        v_sq: v_over_k / used as f64,
        inv_k_sq: 1.0,
    };
    let mut best = (1, air_interface_error(1, &stats, &ts.sir));
    for g in 2..=ts.sir.d {
        let b = air_interface_error(g, &stats, &ts.sir);
        if b < best.1 {
            best = (g, b);
        }
    }
    Ok(best.0)
}

fn local_gradients(ts: &TrialState, cfg: &ExperimentConfig, devices: impl Iterator<Item = usize>) -> Result<Vec<GradientVector>> {
    let n = ts.model.round as u64;
    devices
        .map(|dev| {
            let mut rng = ts.seeds.stream(StreamKind::Batch, &[n, dev as u64]);
            local_gradient(&ts.model, &ts.shards[dev], ts.objective.as_ref(), cfg.task.batch_size, &mut rng)
        })
        .collect()
}

fn check_finite(model: &ModelState) -> Result<()> {
    match model.w.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Diverged(format!("weight {i} is not finite after round {}", model.round))),
        None => Ok(()),
    }
}

/// Execute one round in protocol order and advance the trial.
pub fn run_round(ts: &mut TrialState, cfg: &ExperimentConfig) -> Result<RoundTelemetry> {
    let n = ts.model.round;
    let d = ts.model.dim();
    let k_total = cfg.num_devices;

    if cfg.scheme == Scheme::Ideal {
        let grads = local_gradients(ts, cfg, 0..k_total)?;
        let gsi = estimate_gsi(&grads)?;
        let agg = ideal_aggregate(&grads)?;
        let sigma_g_sq = gradient_spread(&grads)?;
        ts.model = apply_update(&ts.model, &agg, cfg.task.learning_rate)?;
        check_finite(&ts.model)?;
        ts.cumulative_chips += d as u64;
        ts.ledger.end_round();
        let ev = evaluate(&ts.model, &ts.test, ts.objective.as_ref());
        return Ok(RoundTelemetry {
            trial: ts.trial,
            round: n,
            skipped: false,
            g_depth: 1,
            s_n: d,
            gamma_eff: 1.0,
            active_count: k_total,
            alpha_sq_hat: gsi.alpha_sq,
            v_sq_hat: gsi.v_sq,
            mse_empirical: 0.0,
            mse_closed_form: 0.0,
            u_n: propagation_loss_with(cfg.propagation.into(), 0.0, k_total, 1.0, sigma_g_sq),
            loss: ev.loss,
            accuracy: ev.accuracy,
            cumulative_chips: ts.cumulative_chips,
            power_spent: 0.0,
        });
    }

    let chan = draw_channels(
        k_total,
        cfg.g_th,
        ts.sir.p0,
        &mut ts.seeds.stream(StreamKind::Channel, &[n as u64]),
    )?;
    let active = chan.active_count();
    if active == 0 {
        ts.model.round += 1;
        ts.ledger.end_round();
        let ev = evaluate(&ts.model, &ts.test, ts.objective.as_ref());
        return Ok(RoundTelemetry {
            trial: ts.trial,
            round: n,
            skipped: true,
            g_depth: 0,
            s_n: 0,
            gamma_eff: 0.0,
            active_count: 0,
            alpha_sq_hat: 0.0,
            v_sq_hat: 0.0,
            mse_empirical: 0.0,
            mse_closed_form: 0.0,
            u_n: 0.0,
            loss: ev.loss,
            accuracy: ev.accuracy,
            cumulative_chips: ts.cumulative_chips,
            power_spent: 0.0,
        });
    }

    let grads = local_gradients(ts, cfg, chan.active_devices())?;
    let gsi = estimate_gsi(&grads)?;
    let depth = match ts.fixed_depth {
        Some(g) => g,
        None => adaptive_depth(&gsi, active, &ts.sir)?.g,
    };
    let prunable = ts.prunable_count();
    let picks = match cfg.scheme {
        Scheme::PruneOnly { gamma } if prunable > 0 => ((gamma * prunable as f64).floor() as usize).max(1),
        _ => prunable_picks(prunable, depth),
    };
    let mask = PruningMask::sample(
        &ts.model.prunable,
        picks,
        &mut ts.seeds.stream(StreamKind::Mask, &[n as u64]),
    )?
    .with_id(n as u64);
    let pn = PnSequenceSet::generate(
        mask.len(),
        depth,
        n as u64,
        &mut ts.seeds.stream(StreamKind::Pn, &[n as u64]),
    );
    let norm = NormalizationParams::new(gsi.mean, gsi.v_sq.sqrt()).unwrap_or_else(|_| NormalizationParams::identity());
    let uplink = Uplink {
        p0: ts.sir.p0,
        interference: if ts.sir.p_i > 0.0 {
            InterferenceProfile::new(ts.sir.p_i)?
        } else {
            InterferenceProfile::none()
        },
    };
    let mut round_ledger = PowerLedger::new(k_total, ts.ledger.budget());
    let est = over_the_air(
        &uplink,
        &grads,
        &chan,
        &mask,
        &pn,
        &norm,
        &mut round_ledger,
        &mut ts.seeds.stream(StreamKind::Interference, &[n as u64]),
    )?;
    let truth = ideal_aggregate(&grads)?;
    let mse_empirical: f64 = est
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let gamma = mask.len() as f64 / d as f64;
    let closed = closed_form_mse(gamma, depth, &ts.sir, truth.norm_sq(), gsi.v_sq, 1.0 / (active * active) as f64);
    let sigma_g_sq = gradient_spread(&grads)?;
    let u_n = propagation_loss_with(cfg.propagation.into(), closed.total, k_total, ts.sir.xi_a, sigma_g_sq);

    ts.model = apply_update(&ts.model, &est, cfg.task.learning_rate)?;
    check_finite(&ts.model)?;
    ts.cumulative_chips += (mask.len() * depth) as u64;
    ts.ledger.merge(&round_ledger)?;
    let ev = evaluate(&ts.model, &ts.test, ts.objective.as_ref());
    Ok(RoundTelemetry {
        trial: ts.trial,
        round: n,
        skipped: false,
        g_depth: depth,
        s_n: mask.len(),
        gamma_eff: if prunable > 0 { picks as f64 / prunable as f64 } else { 1.0 },
        active_count: active,
        alpha_sq_hat: gsi.alpha_sq,
        v_sq_hat: gsi.v_sq,
        mse_empirical,
        mse_closed_form: closed.total,
        u_n,
        loss: ev.loss,
        accuracy: ev.accuracy,
        cumulative_chips: ts.cumulative_chips,
        power_spent: round_ledger.energy().iter().sum(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub trial: usize,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub best_accuracy: f64,
    pub skipped_rounds: usize,
    pub total_chips: u64,
    pub mean_depth: f64,
    pub total_energy: f64,
    pub over_budget_devices: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub label: String,
    pub trials: Vec<TrialSummary>,
}

impl ExperimentSummary {
    pub fn mean_final_accuracy(&self) -> f64 {
        self.trials.iter().map(|t| t.final_accuracy).sum::<f64>() / self.trials.len() as f64
    }

    pub fn mean_final_loss(&self) -> f64 {
        self.trials.iter().map(|t| t.final_loss).sum::<f64>() / self.trials.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<RoundTelemetry>,
    pub summary: ExperimentSummary,
}

/// Run all rounds of one trial.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<(Vec<RoundTelemetry>, TrialSummary)> {
    let mut ts = prepare_trial(cfg, trial)?;
    let mut rows = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        rows.push(run_round(&mut ts, cfg)?);
    }
    let last = rows.last().expect("rounds >= 1");
    let active: Vec<&RoundTelemetry> = rows.iter().filter(|r| !r.skipped).collect();
    let audit = audit_power(&ts.ledger);
    let summary = TrialSummary {
        trial,
        final_accuracy: last.accuracy,
        final_loss: last.loss,
        best_accuracy: rows.iter().map(|r| r.accuracy).fold(f64::NAN, f64::max),
        skipped_rounds: rows.len() - active.len(),
        total_chips: ts.cumulative_chips,
        mean_depth: if active.is_empty() {
            0.0
        } else {
            active.iter().map(|r| r.g_depth as f64).sum::<f64>() / active.len() as f64
        },
        total_energy: audit.energy.iter().sum(),
        over_budget_devices: audit.over_budget.iter().filter(|o| **o).count(),
    };
    Ok((rows, summary))
}

/// Worker pool honouring `AIRBREATHE_THREADS`.
fn pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("AIRBREATHE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("AIRBREATHE_THREADS={v} is not a thread count")))?;
        if n == 0 {
            return Err(Error::config("AIRBREATHE_THREADS must be at least 1"));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::config(e.to_string()))
}

fn create_output(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(File::create(path)?)
}

/// Run every trial, then write CSV and summary if output paths are set.
/// Output files are opened before any simulation work.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let files = match &cfg.output {
        Some(out) => Some((create_output(&out.csv)?, create_output(&out.summary)?)),
        None => None,
    };
    let results: Vec<(Vec<RoundTelemetry>, TrialSummary)> =
        pool()?.install(|| (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, t)).collect::<Result<_>>())?;
    let mut rows = Vec::with_capacity(cfg.trials * cfg.rounds);
    let mut trials = Vec::with_capacity(cfg.trials);
    for (r, s) in results {
        rows.extend(r);
        trials.push(s);
    }
    let report = ExperimentReport {
        config: cfg.clone(),
        rows,
        summary: ExperimentSummary {
            label: cfg.scheme.label(),
            trials,
        },
    };
    if let Some((csv, mut summary)) = files {
        write_telemetry(&report.rows, std::io::BufWriter::new(csv))?;
        std::io::Write::write_all(&mut summary, render_summary(&report).as_bytes())?;
    }
    Ok(report)
}

pub fn render_summary(report: &ExperimentReport) -> String {
    let s = &report.summary;
    let mut out = String::new();
    let _ = writeln!(out, "experiment: {}", report.config.name);
    let _ = writeln!(out, "scheme: {}", s.label);
    let _ = writeln!(out, "trials: {}", s.trials.len());
    let _ = writeln!(out, "mean_final_accuracy: {}", format_sig9(s.mean_final_accuracy()));
    let _ = writeln!(out, "mean_final_loss: {}", format_sig9(s.mean_final_loss()));
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "trial  final_accuracy  final_loss  best_accuracy  skipped_rounds  total_chips  mean_depth  total_energy  over_budget_devices"
    );
    for t in &s.trials {
        let _ = writeln!(
            out,
            "{}  {}  {}  {}  {}  {}  {}  {}  {}",
            t.trial,
            format_sig9(t.final_accuracy),
            format_sig9(t.final_loss),
            format_sig9(t.best_accuracy),
            t.skipped_rounds,
            t.total_chips,
            format_sig9(t.mean_depth),
            format_sig9(t.total_energy),
            t.over_budget_devices
        );
    }
    let _ = writeln!(out, "\n[config]");
    out.push_str(&report.config.to_toml());
    out
}

/// Grid for [`sweep`]. An empty axis keeps the base config's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepGrid {
    pub sir_db: Vec<f64>,
    pub num_devices: Vec<usize>,
    pub depth: Vec<usize>,
}

/// Run the base config at every grid point. With `out_dir`, each point
/// writes `<name>.csv` and `<name>.summary.txt` there.
pub fn sweep(base: &ExperimentConfig, grid: &SweepGrid, out_dir: Option<&Path>) -> Result<Vec<ExperimentReport>> {
    let sirs: Vec<Option<f64>> = axis(&grid.sir_db);
    let ks: Vec<Option<usize>> = axis(&grid.num_devices);
    let gs: Vec<Option<usize>> = axis(&grid.depth);
    let mut reports = Vec::new();
    for s in &sirs {
        for k in &ks {
            for g in &gs {
                let mut cfg = base.clone();
                let mut name = base.name.clone();
                if let Some(s) = s {
                    cfg.sir_db = *s;
                    name.push_str(&format!("_sir{s}"));
                }
                if let Some(k) = k {
                    cfg.num_devices = *k;
                    name.push_str(&format!("_k{k}"));
                }
                if let Some(g) = g {
                    cfg.force_depth = Some(*g);
                    name.push_str(&format!("_g{g}"));
                }
                cfg.output = out_dir.map(|dir| OutputPaths {
                    csv: dir.join(format!("{name}.csv")),
                    summary: dir.join(format!("{name}.summary.txt")),
                });
                cfg.name = name;
                reports.push(run_experiment(&cfg)?);
            }
        }
    }
    Ok(reports)
}

fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

/// Label for a telemetry file: its stem.
pub fn table_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into())
}

/// Read telemetry files and write one plot series per file into `dir`.
pub fn plot_data_from_files(inputs: &[PathBuf], dir: &Path) -> Result<Vec<PathBuf>> {
    let tables = inputs
        .iter()
        .map(|p| Ok((table_label(p), read_telemetry_file(p)?)))
        .collect::<Result<Vec<_>>>()?;
    emit_plot_data(&tables, dir)
}
