//! One full uplink: every active device runs the transmitter chain, the
//! channel superposes the chips, and the server runs the receiver chain.

use rand::Rng;

use crate::channel::{transmit_round, ChannelRealization, InterferenceProfile, PowerLedger};
use crate::error::{Error, Result};
use crate::signal::{
    denormalize, despread, normalize, prune, spread, zero_pad, GradientVector,
    NormalizationParams, PnSequenceSet, PruningMask,
};

/// Per-round radio parameters shared by all devices.
#[derive(Debug, Clone, Copy)]
pub struct Uplink {
    pub p0: f64,
    pub interference: InterferenceProfile,
}

/// Run the chain for one round.
///
/// `active_gradients` holds the local gradients of the active devices, in
/// the order of [`ChannelRealization::active_devices`]. Returns the
/// zero-padded estimate of their average.
pub fn over_the_air<R: Rng + ?Sized>(
    uplink: &Uplink,
    active_gradients: &[GradientVector],
    chan: &ChannelRealization,
    mask: &PruningMask,
    pn: &PnSequenceSet,
    norm: &NormalizationParams,
    ledger: &mut PowerLedger,
    interference_rng: &mut R,
) -> Result<GradientVector> {
    let active = chan.active_count();
    if active == 0 {
        return Err(Error::RoundSkipped);
    }
    if active_gradients.len() != active {
        return Err(Error::config(format!(
            "{} gradients supplied for {active} active devices",
            active_gradients.len()
        )));
    }
    let frame_len = mask.len() * pn.depth();
    let mut chips = vec![Vec::new(); chan.num_devices()];
    for (k, g) in chan.active_devices().zip(active_gradients) {
        let gn = normalize(&prune(g, mask)?, norm)?;
        chips[k] = spread(&gn, pn)?;
    }
    for (k, c) in chips.iter_mut().enumerate() {
        if !chan.active[k] {
            *c = vec![0.0; frame_len];
        }
    }
    let frame = transmit_round(&chips, chan, &uplink.interference, ledger, interference_rng)?;
    let y = despread(&frame, pn)?;
    let y = denormalize(&y, norm, active, uplink.p0)?;
    zero_pad(&y, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::draw_channels;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lossless_chain_recovers_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (k, d) = (6usize, 40usize);
        let grads: Vec<GradientVector> = (0..k)
            .map(|_| GradientVector::new((0..d).map(|_| rng.gen_range(-2.0..3.0)).collect()).unwrap())
            .collect();
        let chan = draw_channels(k, 0.0, 0.7, &mut rng).unwrap();
        let mask = PruningMask::full(d);
        let pn = PnSequenceSet::generate(d, 1, 0, &mut rng);
        let norm = NormalizationParams::new(0.4, 1.3).unwrap();
        let uplink = Uplink {
            p0: 0.7,
            interference: InterferenceProfile::none(),
        };
        let mut ledger = PowerLedger::new(k, f64::INFINITY);
        let out =
            over_the_air(&uplink, &grads, &chan, &mask, &pn, &norm, &mut ledger, &mut rng).unwrap();
        for i in 0..d {
            let ideal: f64 = grads.iter().map(|g| g.values()[i]).sum::<f64>() / k as f64;
            assert!((out.values()[i] - ideal).abs() <= 1e-10 * ideal.abs().max(1.0));
        }
    }

    #[test]
    fn pruned_chain_matches_pruned_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (k, d) = (4usize, 30usize);
        let grads: Vec<GradientVector> = (0..k)
            .map(|_| GradientVector::new((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let chan = draw_channels(k, 0.0, 2.0, &mut rng).unwrap();
        let mask = PruningMask::sample(&vec![true; d], 7, &mut rng).unwrap();
        let pn = PnSequenceSet::generate(mask.len(), 4, 0, &mut rng);
        let norm = NormalizationParams::new(-0.1, 0.6).unwrap();
        let uplink = Uplink {
            p0: 2.0,
            interference: InterferenceProfile::none(),
        };
        let mut ledger = PowerLedger::new(k, f64::INFINITY);
        let out =
            over_the_air(&uplink, &grads, &chan, &mask, &pn, &norm, &mut ledger, &mut rng).unwrap();
        for i in 0..d {
            let ideal: f64 = grads.iter().map(|g| g.values()[i]).sum::<f64>() / k as f64;
            if mask.indices().contains(&i) {
                assert!((out.values()[i] - ideal).abs() < 1e-10);
            } else {
                assert_eq!(out.values()[i], 0.0);
            }
        }
        // energy G*S*|p|^2 per device
        for dev in 0..k {
            let e = (mask.len() * 4) as f64 * chan.p[dev].norm_sqr();
            assert!((ledger.energy()[dev] - e).abs() < 1e-9 * e);
        }
    }

    #[test]
    fn no_active_devices_skips() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let chan = draw_channels(3, f64::INFINITY, 1.0, &mut rng).unwrap();
        let uplink = Uplink {
            p0: 1.0,
            interference: InterferenceProfile::none(),
        };
        let mask = PruningMask::full(2);
        let pn = PnSequenceSet::generate(2, 1, 0, &mut rng);
        let mut ledger = PowerLedger::new(3, 1.0);
        let r = over_the_air(
            &uplink,
            &[],
            &chan,
            &mask,
            &pn,
            &NormalizationParams::identity(),
            &mut ledger,
            &mut rng,
        );
        assert!(matches!(r, Err(Error::RoundSkipped)));
    }
}
