//! The breathing-depth tradeoff: pruning error grows with G while the
//! interference error shrinks, and the controllers pick the valley.
//!
//! ```text
//! cargo run --example breathing_depth
//! ```

use airbreathe::breathing::{adaptive_depth, beta_adaptive, beta_fixed, fixed_depth, GsiEstimate, SirConfig};

fn main() -> airbreathe::Result<()> {
    let d = 128;
    let active = 8;
    let gsi = GsiEstimate {
        alpha_sq: 4.0,
        v_sq: 0.02,
        mean: 0.0,
        per_device: Vec::new(),
    };
    for sir_db in [-30.0, -23.0, -10.0, 0.0] {
        let cfg = SirConfig::from_sir_db(sir_db, 10, 0.8187, d)?;
        let fixed = fixed_depth(&cfg);
        let adaptive = adaptive_depth(&gsi, active, &cfg)?;
        println!(
            "SIR {sir_db:>5} dB: fixed G={:<3} ({:?}), adaptive G={:<3} ({:?})",
            fixed.g, fixed.regime, adaptive.g, adaptive.regime
        );
    }
    let cfg = SirConfig::from_sir_db(-23.0, 10, 0.8187, d)?;
    println!("\n{:>4} {:>10} {:>10}", "G", "beta_F", "beta_hat");
    for g in [1, 2, 4, 6, 8, 16, 32, 64, 128] {
        println!("{g:>4} {:>10.4} {:>10.4}", beta_fixed(g, &cfg), beta_adaptive(g, &gsi, active, &cfg));
    }
    Ok(())
}
