//! Convergence diagnostics on a toy quadratic: measured constants,
//! propagation loss per round and the failure bound against the
//! observed failure rate.
//!
//! ```text
//! cargo run --release --example convergence_bounds
//! ```

use airbreathe::analysis::failure_bound;
use airbreathe::rng::{SeedTree, StreamKind};
use airbreathe::verify::ToyScenario;

fn main() -> airbreathe::Result<()> {
    let sc = ToyScenario::benign();
    let toy = sc.problem(1);
    let p = sc.measure(&toy, 1)?;
    println!(
        "c={} eps={} G^2={:.3} sigma_g^2={:.4} zeta^2={:.3} eta={} (max {:.3})",
        p.c,
        p.epsilon,
        p.g_bound_sq,
        p.sigma_g_sq,
        p.zeta_sq,
        p.eta,
        p.max_learning_rate()
    );
    let (runs, horizon) = (200u64, 40usize);
    let mut u_sum = vec![0.0; horizon];
    let mut failures = vec![0usize; horizon + 1];
    for r in 0..runs {
        let mut rng = SeedTree::new(1).stream(StreamKind::MonteCarlo, &[r]);
        let mut w = sc.start_point(&toy, sc.start_dist_sq, &mut rng);
        let mut hit = horizon;
        for n in 0..horizon {
            if hit == horizon && toy.optimum.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= p.epsilon {
                hit = n;
            }
            let (next, u) = sc.step(&toy, &p, &w, &mut rng)?;
            u_sum[n] += u / runs as f64;
            w = next;
        }
        for f in failures.iter_mut().take(hit + 1).skip(1) {
            *f += 1;
        }
    }
    println!("{:>4} {:>10} {:>10}", "N", "observed", "bound");
    for n in [5, 10, 20, 40] {
        let b = failure_bound(&p, &u_sum[..n], sc.start_dist_sq);
        let bound = if b.vacuous { "vacuous".to_string() } else { format!("{:.3}", b.bound) };
        println!("{n:>4} {:>10.3} {bound:>10}", failures[n] as f64 / runs as f64);
    }
    Ok(())
}
