//! Truncated channel inversion: how many devices clear the fading
//! threshold, and how much the surviving ones pay to align.
//!
//! ```text
//! cargo run --release --example channel_activation
//! ```

use airbreathe::channel::{activation_probability, draw_channels};
use airbreathe::rng::{SeedTree, StreamKind};

fn main() -> airbreathe::Result<()> {
    let k = 10;
    let mut rng = SeedTree::new(3).stream(StreamKind::Channel, &[]);
    println!("{:>5} {:>9} {:>9} {:>12}", "G_th", "xi_a", "measured", "mean |p|^2");
    for g_th in [0.05, 0.2, 0.5, 1.0] {
        let (mut active, mut power, rounds) = (0usize, 0.0, 20_000);
        for _ in 0..rounds {
            let chan = draw_channels(k, g_th, 1.0, &mut rng)?;
            active += chan.active_count();
            power += chan.p.iter().map(|p| p.norm_sqr()).sum::<f64>();
        }
        println!(
            "{g_th:>5} {:>9.4} {:>9.4} {:>12.3}",
            activation_probability(g_th),
            active as f64 / (rounds * k) as f64,
            power / active as f64
        );
    }
    Ok(())
}
