//! One uplink round, stage by stage, with three devices and a small
//! gradient. Prints what the server recovers against the true average.
//!
//! ```text
//! cargo run --example signal_chain
//! ```

use airbreathe::aircomp::{over_the_air, Uplink};
use airbreathe::breathing::estimate_gsi;
use airbreathe::channel::{draw_channels, InterferenceProfile, PowerLedger};
use airbreathe::learning::ideal_aggregate;
use airbreathe::rng::{SeedTree, StreamKind};
use airbreathe::signal::{normalize, prune, spread, GradientVector, NormalizationParams, PnSequenceSet, PruningMask};

fn main() -> airbreathe::Result<()> {
    let seeds = SeedTree::new(11);
    let grads: Vec<GradientVector> = [
        vec![0.9, -0.2, 0.4, 0.1, -0.7, 0.3, 0.0, 0.5],
        vec![1.1, -0.1, 0.2, 0.3, -0.5, 0.1, 0.2, 0.4],
        vec![0.8, -0.3, 0.6, 0.0, -0.9, 0.2, -0.1, 0.6],
    ]
    .into_iter()
    .map(GradientVector::new)
    .collect::<airbreathe::Result<_>>()?;
    let (depth, picks, p0) = (2, 4, 100.0);

    let chan = draw_channels(grads.len(), 0.0, p0, &mut seeds.stream(StreamKind::Channel, &[0]))?;
    let gsi = estimate_gsi(&grads)?;
    let norm = NormalizationParams::new(gsi.mean, gsi.v_sq.sqrt())?;
    let mask = PruningMask::sample(&[true; 8], picks, &mut seeds.stream(StreamKind::Mask, &[0]))?;
    let pn = PnSequenceSet::generate(picks, depth, 0, &mut seeds.stream(StreamKind::Pn, &[0]));
    println!("kept coordinates {:?}, spread over {depth} chips each", mask.indices());

    let first = normalize(&prune(&grads[0], &mask)?, &norm)?;
    println!("device 0 normalized symbols {:.3?}", first.values);
    println!("device 0 chips {:?}", spread(&first, &pn)?);

    let uplink = Uplink {
        p0,
        interference: InterferenceProfile::new(1.0)?,
    };
    let mut ledger = PowerLedger::new(grads.len(), f64::INFINITY);
    let est = over_the_air(
        &uplink,
        &grads,
        &chan,
        &mask,
        &pn,
        &norm,
        &mut ledger,
        &mut seeds.stream(StreamKind::Interference, &[0]),
    )?;
    let truth = ideal_aggregate(&grads)?;
    println!("true average  {:.3?}", truth.values());
    println!("AirComp estimate {:.3?}", est.values());
    println!("transmit energy per device {:.3?}", ledger.energy());
    Ok(())
}
