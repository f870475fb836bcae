//! Run every benchmark scheme on one config across several seeds.
//!
//! ```text
//! cargo run --release --example compare_schemes -- configs/desk_logistic.toml 10 task.learning_rate=0.3
//! ```

use airbreathe::harness::{run_experiment, ExperimentConfig, Scheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "configs/desk_logistic.toml".into());
    let seeds: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5);
    let overrides: Vec<String> = args.collect();
    let base = ExperimentConfig::load(&path, &overrides)?;

    let schemes = [
        Scheme::Ideal,
        Scheme::NoSb,
        Scheme::PruneOnly { gamma: 0.1 },
        Scheme::FixedBd,
        Scheme::FixedBdOracle,
        Scheme::AdaptiveBd,
    ];
    println!("{:<16} {:>9} {:>9} {:>9} {:>11}", "scheme", "acc", "acc_min", "loss", "mean_depth");
    let mut final_loss = Vec::new();
    for scheme in schemes {
        let mut accs = Vec::new();
        let mut losses = Vec::new();
        let mut depth = 0.0;
        for seed in 0..seeds {
            let cfg = ExperimentConfig {
                scheme,
                master_seed: base.master_seed + seed,
                output: None,
                ..base.clone()
            };
            let report = run_experiment(&cfg)?;
            let t = &report.summary.trials[0];
            accs.push(t.final_accuracy);
            losses.push(t.final_loss);
            depth += t.mean_depth / seeds as f64;
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        println!(
            "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>11.2}",
            scheme.label(),
            mean(&accs),
            accs.iter().cloned().fold(f64::INFINITY, f64::min),
            mean(&losses),
            depth
        );
        final_loss.push((scheme, losses));
    }
    let loss_of = |s: Scheme| &final_loss.iter().find(|(x, _)| *x == s).unwrap().1;
    let wins = loss_of(Scheme::AdaptiveBd)
        .iter()
        .zip(loss_of(Scheme::FixedBd))
        .filter(|(a, f)| a <= f)
        .count();
    println!("adaptive_bd loss <= fixed_bd loss in {wins}/{seeds} seeds");
    Ok(())
}
