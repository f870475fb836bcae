//! The CNN preset on MNIST, if the IDX files are present.
//!
//! ```text
//! cargo run --release --example mnist_cnn -- configs/mnist_cnn.toml rounds=50
//! ```

use airbreathe::harness::{render_summary, run_experiment, DataSource, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "configs/mnist_cnn.toml".into());
    let overrides: Vec<String> = args.collect();
    let cfg = ExperimentConfig::load(&path, &overrides)?;
    if let DataSource::Idx { images, labels } = &cfg.data.source {
        if !images.exists() || !labels.exists() {
            println!("MNIST files not found ({}, {}); skipping", images.display(), labels.display());
            return Ok(());
        }
    }
    print!("{}", render_summary(&run_experiment(&cfg)?));
    Ok(())
}
