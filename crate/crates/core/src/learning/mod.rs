//! Federated-learning substrate: model state, local mini-batch gradients,
//! ideal aggregation and the global SGD step.

pub mod data;
pub mod models;

use rand::seq::index;
use rand::Rng;

pub use data::{
    load_csv, load_idx, parse_csv, parse_idx, partition, Dataset, DeviceShard, GaussianMixture,
    PartitionScheme,
};
pub use models::{Logistic, MnistCnn, Mlp, Objective, TaskKind, TaskSpec};

use crate::error::{Error, Result};
use crate::signal::GradientVector;

/// The canonical global model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub w: Vec<f64>,
    pub round: usize,
    pub prunable: Vec<bool>,
}

impl ModelState {
    pub fn new(w: Vec<f64>, prunable: Vec<bool>) -> Result<Self> {
        if w.len() != prunable.len() {
            return Err(Error::config("prunable flags must match the model dimension"));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("model weights must be finite"));
        }
        Ok(Self { w, round: 0, prunable })
    }

    pub fn init<R: Rng>(objective: &dyn Objective, rng: &mut R) -> Self {
        Self {
            w: objective.init(rng),
            round: 0,
            prunable: objective.prunable(),
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn dist_sq(&self, other: &[f64]) -> f64 {
        self.w.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

/// Mini-batch gradient on one device's shard. Batches are drawn without
/// replacement; a batch larger than the shard uses the whole shard.
pub fn local_gradient<R: Rng + ?Sized>(
    state: &ModelState,
    shard: &DeviceShard,
    objective: &dyn Objective,
    batch_size: usize,
    rng: &mut R,
) -> Result<GradientVector> {
    let n = shard.data.len();
    if n == 0 {
        return Err(Error::config(format!("device {} has no data", shard.device_id)));
    }
    let rows: Vec<usize> = if batch_size >= n {
        (0..n).collect()
    } else {
        index::sample(rng, n, batch_size).into_vec()
    };
    let mut g = vec![0.0; state.dim()];
    objective.loss_grad(&state.w, &shard.data, &rows, Some(&mut g));
    GradientVector::new(g)
}

/// Gradient of the objective over a whole dataset.
pub fn full_gradient(state: &ModelState, data: &Dataset, objective: &dyn Objective) -> Result<GradientVector> {
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut g = vec![0.0; state.dim()];
    objective.loss_grad(&state.w, data, &rows, Some(&mut g));
    GradientVector::new(g)
}

/// Coordinatewise mean.
pub fn ideal_aggregate(gradients: &[GradientVector]) -> Result<GradientVector> {
    let first = gradients
        .first()
        .ok_or_else(|| Error::config("cannot aggregate an empty gradient set"))?;
    let d = first.dim();
    if gradients.iter().any(|g| g.dim() != d) {
        return Err(Error::config("gradients have different dimensions"));
    }
    let mut acc = vec![0.0; d];
    for g in gradients {
        for (a, v) in acc.iter_mut().zip(g.values()) {
            *a += v;
        }
    }
    let inv = 1.0 / gradients.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    GradientVector::new(acc)
}

/// `w ← w − η·update`; advances the round counter.
pub fn apply_update(state: &ModelState, update: &GradientVector, eta: f64) -> Result<ModelState> {
    if update.dim() != state.dim() {
        return Err(Error::config(format!(
            "update of dimension {} for a model of dimension {}",
            update.dim(),
            state.dim()
        )));
    }
    Ok(ModelState {
        w: state.w.iter().zip(update.values()).map(|(w, u)| w - eta * u).collect(),
        round: state.round + 1,
        prunable: state.prunable.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Regularized objective on the evaluation set.
    pub loss: f64,
    pub accuracy: f64,
}

pub fn evaluate(state: &ModelState, data: &Dataset, objective: &dyn Objective) -> Evaluation {
    if data.is_empty() {
        return Evaluation {
            loss: f64::NAN,
            accuracy: f64::NAN,
        };
    }
    let rows: Vec<usize> = (0..data.len()).collect();
    let loss = objective.loss_grad(&state.w, data, &rows, None);
    let correct = rows
        .iter()
        .filter(|&&i| objective.predict(&state.w, data.row(i)) == data.label(i))
        .count();
    Evaluation {
        loss,
        accuracy: correct as f64 / data.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mixture(n: usize, features: usize, sep: f64, seed: u64) -> Dataset {
        GaussianMixture {
            samples: n,
            features,
            classes: 2,
            separation: sep,
            label_noise: 0.0,
        }
        .generate(&mut ChaCha8Rng::seed_from_u64(seed))
        .unwrap()
    }

    #[test]
    fn regularizer_only_gradient() {
        // all-zero features: data term is (σ(b) - y)·[0, .., 1]; drop the bias to isolate λw
        let ds = Dataset::new(vec![0.0; 6], vec![0, 1, 0], 2, 2).unwrap();
        let obj = Logistic { features: 2, l2: 0.3 };
        let state = ModelState::new(vec![1.0, -2.0, 0.0], obj.prunable()).unwrap();
        let g = full_gradient(&state, &ds, &obj).unwrap();
        assert!((g.values()[0] - 0.3).abs() < 1e-15);
        assert!((g.values()[1] + 0.6).abs() < 1e-15);
    }

    #[test]
    fn logistic_gradient_at_origin() {
        let x = [0.7, -1.2, 2.0];
        for y in [0usize, 1] {
            let ds = Dataset::new(x.to_vec(), vec![y], 3, 2).unwrap();
            let obj = Logistic { features: 3, l2: 0.5 };
            let state = ModelState::new(vec![0.0; 4], obj.prunable()).unwrap();
            let g = full_gradient(&state, &ds, &obj).unwrap();
            let r = 0.5 - y as f64;
            for j in 0..3 {
                assert!((g.values()[j] - r * x[j]).abs() < 1e-15);
            }
            assert!((g.values()[3] - r).abs() < 1e-15);
        }
    }

    #[test]
    fn aggregate_examples() {
        let g = GradientVector::new(vec![1.0, -3.0]).unwrap();
        assert_eq!(ideal_aggregate(&[g.clone()]).unwrap(), g);
        let neg = GradientVector::new(vec![-1.0, 3.0]).unwrap();
        assert_eq!(ideal_aggregate(&[g.clone(), neg]).unwrap().values(), &[0.0, 0.0]);
        assert!(ideal_aggregate(&[]).is_err());
        assert!(ideal_aggregate(&[g, GradientVector::zeros(3)]).is_err());
    }

    #[test]
    fn aggregate_variance_shrinks_with_device_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (k, trials, sigma) = (8usize, 20_000usize, 1.5f64);
        let dist = rand_distr::Normal::new(0.0, sigma).unwrap();
        let mut sq = 0.0;
        for _ in 0..trials {
            let gs: Vec<GradientVector> = (0..k)
                .map(|_| GradientVector::new(vec![rng.sample(dist)]).unwrap())
                .collect();
            sq += ideal_aggregate(&gs).unwrap().values()[0].powi(2);
        }
        let var = sq / trials as f64;
        let expect = sigma * sigma / k as f64;
        assert!((var / expect - 1.0).abs() < 0.05, "{var} vs {expect}");
    }

    #[test]
    fn update_examples() {
        let s = ModelState::new(vec![1.0, 2.0], vec![true, false]).unwrap();
        let zero = GradientVector::zeros(2);
        assert_eq!(apply_update(&s, &zero, 0.5).unwrap().w, s.w);
        let u = GradientVector::new(vec![3.0, 4.0]).unwrap();
        let same = apply_update(&s, &u, 0.0).unwrap();
        assert_eq!((same.w.clone(), same.round), (s.w.clone(), 1));
        // F = ½‖w‖², exact gradient w, η = 1
        let g = GradientVector::new(s.w.clone()).unwrap();
        assert_eq!(apply_update(&s, &g, 1.0).unwrap().w, vec![0.0, 0.0]);
        assert!(apply_update(&s, &GradientVector::zeros(3), 1.0).is_err());
    }

    #[test]
    fn perfect_fit_scores_one() {
        let ds = Dataset::new(vec![-2.0, -1.0, 1.0, 3.0], vec![0, 0, 1, 1], 1, 2).unwrap();
        let obj = Logistic { features: 1, l2: 0.01 };
        let state = ModelState::new(vec![5.0, 0.0], obj.prunable()).unwrap();
        assert_eq!(evaluate(&state, &ds, &obj).accuracy, 1.0);
    }

    #[test]
    fn random_labels_score_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 4000;
        let features: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let ds = Dataset::new(features, labels, 3, 2).unwrap();
        let obj = Logistic { features: 3, l2: 0.1 };
        let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let acc = evaluate(&ModelState::new(w, obj.prunable()).unwrap(), &ds, &obj).accuracy;
        // 4 standard errors at n = 4000
        assert!((acc - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "{acc}");
    }

    #[test]
    fn full_batch_descent_decreases_loss() {
        let ds = mixture(400, 6, 2.0, 3);
        let obj = Logistic { features: 6, l2: 0.05 };
        let mut state = ModelState::new(vec![0.0; 7], obj.prunable()).unwrap();
        let mut prev = evaluate(&state, &ds, &obj).loss;
        for _ in 0..100 {
            let g = full_gradient(&state, &ds, &obj).unwrap();
            state = apply_update(&state, &g, 0.1).unwrap();
            let now = evaluate(&state, &ds, &obj).loss;
            assert!(now < prev, "loss went up: {prev} -> {now}");
            prev = now;
        }
    }

    #[test]
    fn minibatch_gradient_is_unbiased() {
        let ds = mixture(12, 3, 1.0, 8);
        let shard = DeviceShard { device_id: 0, data: ds };
        let obj = Logistic { features: 3, l2: 0.2 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let state = ModelState::new(w, obj.prunable()).unwrap();
        let full = full_gradient(&state, &shard.data, &obj).unwrap();
        let draws = 10_000;
        let mut sum = vec![0.0; 4];
        let mut sumsq = vec![0.0; 4];
        for _ in 0..draws {
            let g = local_gradient(&state, &shard, &obj, 3, &mut rng).unwrap();
            for j in 0..4 {
                sum[j] += g.values()[j];
                sumsq[j] += g.values()[j].powi(2);
            }
        }
        for j in 0..4 {
            let mean = sum[j] / draws as f64;
            let var = sumsq[j] / draws as f64 - mean * mean;
            let se = (var / draws as f64).sqrt();
            assert!((mean - full.values()[j]).abs() < 3.0 * se + 1e-12, "coord {j}");
        }
    }

    #[test]
    fn logistic_objective_is_strongly_convex() {
        let ds = mixture(50, 4, 1.5, 10);
        let lambda = 0.3;
        let obj = Logistic { features: 4, l2: lambda };
        let rows: Vec<usize> = (0..50).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let w1: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let w2: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut g1 = vec![0.0; 5];
            let f1 = obj.loss_grad(&w1, &ds, &rows, Some(&mut g1));
            let f2 = obj.loss_grad(&w2, &ds, &rows, None);
            let lin: f64 = g1.iter().zip(w2.iter().zip(&w1)).map(|(g, (b, a))| g * (b - a)).sum();
            let dist: f64 = w1.iter().zip(&w2).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(f2 - f1 >= lin + 0.5 * lambda * dist - 1e-9);
        }
    }
}
