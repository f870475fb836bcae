//! Differentiable objectives with hand-written backward passes.

use std::fmt::Debug;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::{Error, Result};

/// A regularized empirical loss `F(w) = mean_j f_j(w) + (λ/2)‖w‖²`.
pub trait Objective: Debug + Send + Sync {
    fn dim(&self) -> usize;

    /// Coordinates eligible for pruning (weights, not biases).
    fn prunable(&self) -> Vec<bool>;

    fn init(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    fn l2(&self) -> f64;

    /// Mean loss over `rows` plus the regularizer. When `grad` is given it
    /// is overwritten with the matching gradient.
    fn loss_grad(&self, w: &[f64], data: &Dataset, rows: &[usize], grad: Option<&mut [f64]>) -> f64;

    fn predict(&self, w: &[f64], x: &[f64]) -> usize;
}

fn add_regularizer(l2: f64, w: &[f64], n: usize, loss_sum: f64, grad: Option<&mut [f64]>) -> f64 {
    let inv = 1.0 / n.max(1) as f64;
    if let Some(g) = grad {
        for (gi, wi) in g.iter_mut().zip(w) {
            *gi = *gi * inv + l2 * wi;
        }
    }
    loss_sum * inv + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// In-place softmax; returns `log Σ exp(o)`.
fn softmax(o: &mut [f64]) -> f64 {
    let m = o.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = o.iter().map(|v| (v - m).exp()).sum();
    let lse = m + s.ln();
    for v in o.iter_mut() {
        *v = (*v - m).exp() / s;
    }
    lse
}

/// Binary logistic regression; the last coordinate is the bias.
#[derive(Debug, Clone)]
pub struct Logistic {
    pub features: usize,
    pub l2: f64,
}

impl Objective for Logistic {
    fn dim(&self) -> usize {
        self.features + 1
    }

    fn prunable(&self) -> Vec<bool> {
        let mut p = vec![true; self.dim()];
        p[self.features] = false;
        p
    }

    fn init(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    fn l2(&self) -> f64 {
        self.l2
    }

    fn loss_grad(&self, w: &[f64], data: &Dataset, rows: &[usize], mut grad: Option<&mut [f64]>) -> f64 {
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let d = self.features;
        let mut total = 0.0;
        for &j in rows {
            let x = data.row(j);
            let y = data.label(j) as f64;
            let z = w[d] + x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            total += softplus(z) - y * z;
            if let Some(g) = grad.as_deref_mut() {
                let r = sigmoid(z) - y;
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += r * xi;
                }
                g[d] += r;
            }
        }
        add_regularizer(self.l2, w, rows.len(), total, grad)
    }

    fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        let z = w[self.features] + x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        usize::from(z > 0.0)
    }
}

/// One tanh hidden layer and a softmax output.
/// Layout: `W1 [h×d] | b1 [h] | W2 [c×h] | b2 [c]`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    pub classes: usize,
    pub l2: f64,
}

impl Mlp {
    fn offsets(&self) -> (usize, usize, usize, usize) {
        let w1 = 0;
        let b1 = w1 + self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.classes * self.hidden;
        (w1, b1, w2, b2)
    }

    fn forward(&self, w: &[f64], x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let (w1, b1, w2, b2) = self.offsets();
        let (d, h) = (self.inputs, self.hidden);
        for i in 0..h {
            let row = &w[w1 + i * d..w1 + (i + 1) * d];
            hidden[i] = (w[b1 + i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).tanh();
        }
        for c in 0..self.classes {
            let row = &w[w2 + c * h..w2 + (c + 1) * h];
            out[c] = w[b2 + c] + row.iter().zip(hidden.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

impl Objective for Mlp {
    fn dim(&self) -> usize {
        self.offsets().3 + self.classes
    }

    fn prunable(&self) -> Vec<bool> {
        let (_, b1, w2, b2) = self.offsets();
        (0..self.dim())
            .map(|i| !((b1..w2).contains(&i) || i >= b2))
            .collect()
    }

    fn init(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let (_, b1, w2, b2) = self.offsets();
        let s1 = (6.0 / (self.inputs + self.hidden) as f64).sqrt();
        let s2 = (6.0 / (self.hidden + self.classes) as f64).sqrt();
        (0..self.dim())
            .map(|i| {
                if i < b1 {
                    rng.gen_range(-s1..s1)
                } else if (w2..b2).contains(&i) {
                    rng.gen_range(-s2..s2)
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn l2(&self) -> f64 {
        self.l2
    }

    fn loss_grad(&self, w: &[f64], data: &Dataset, rows: &[usize], mut grad: Option<&mut [f64]>) -> f64 {
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let (w1, b1, w2, b2) = self.offsets();
        let (d, h) = (self.inputs, self.hidden);
        let mut hidden = vec![0.0; h];
        let mut out = vec![0.0; self.classes];
        let mut dh = vec![0.0; h];
        let mut total = 0.0;
        for &j in rows {
            let x = data.row(j);
            let y = data.label(j);
            self.forward(w, x, &mut hidden, &mut out);
            let logit_y = out[y];
            total += softmax(&mut out) - logit_y;
            let Some(g) = grad.as_deref_mut() else { continue };
            out[y] -= 1.0;
            dh.fill(0.0);
            for c in 0..self.classes {
                let delta = out[c];
                g[b2 + c] += delta;
                for i in 0..h {
                    g[w2 + c * h + i] += delta * hidden[i];
                    dh[i] += delta * w[w2 + c * h + i];
                }
            }
            for i in 0..h {
                let da = dh[i] * (1.0 - hidden[i] * hidden[i]);
                g[b1 + i] += da;
                for (gk, xk) in g[w1 + i * d..w1 + (i + 1) * d].iter_mut().zip(x) {
                    *gk += da * xk;
                }
            }
        }
        add_regularizer(self.l2, w, rows.len(), total, grad)
    }

    fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        let mut hidden = vec![0.0; self.hidden];
        let mut out = vec![0.0; self.classes];
        self.forward(w, x, &mut hidden, &mut out);
        argmax(&out)
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

const IMG: usize = 28;
const K: usize = 5;
const C1: usize = 10;
const C2: usize = 20;
const FC: usize = 50;
const OUT: usize = 10;
const S1: usize = IMG - K + 1; // 24
const P1: usize = S1 / 2; // 12
const S2: usize = P1 - K + 1; // 8
const P2: usize = S2 / 2; // 4
const FLAT: usize = C2 * P2 * P2; // 320

/// The 21,840-parameter MNIST network: two 5×5 conv layers (10, 20
/// channels) each followed by ReLU and 2×2 max-pooling, a 50-unit ReLU
/// layer and a 10-way softmax.
#[derive(Debug, Clone)]
pub struct MnistCnn {
    pub l2: f64,
}

struct CnnLayout {
    c1w: usize,
    c1b: usize,
    c2w: usize,
    c2b: usize,
    f1w: usize,
    f1b: usize,
    f2w: usize,
    f2b: usize,
    end: usize,
}

const LAYOUT: CnnLayout = {
    let c1w = 0;
    let c1b = c1w + C1 * K * K;
    let c2w = c1b + C1;
    let c2b = c2w + C2 * C1 * K * K;
    let f1w = c2b + C2;
    let f1b = f1w + FC * FLAT;
    let f2w = f1b + FC;
    let f2b = f2w + OUT * FC;
    CnnLayout {
        c1w,
        c1b,
        c2w,
        c2b,
        f1w,
        f1b,
        f2w,
        f2b,
        end: f2b + OUT,
    }
};

/// Activations kept for the backward pass.
struct CnnTrace {
    conv1: Vec<f64>,     // C1×S1×S1 after ReLU
    pool1: Vec<f64>,     // C1×P1×P1
    pool1_arg: Vec<usize>,
    conv2: Vec<f64>,     // C2×S2×S2 after ReLU
    pool2: Vec<f64>,     // FLAT
    pool2_arg: Vec<usize>,
    fc1: Vec<f64>,       // FC after ReLU
    out: Vec<f64>,       // OUT logits
}

/// Valid 5×5 convolution, `input` is `cin×n×n`, output `cout×(n-4)×(n-4)` after ReLU.
fn conv_relu(w: &[f64], bias: &[f64], input: &[f64], cin: usize, cout: usize, n: usize) -> Vec<f64> {
    let m = n - K + 1;
    let mut out = vec![0.0; cout * m * m];
    for o in 0..cout {
        for r in 0..m {
            for c in 0..m {
                let mut acc = bias[o];
                for i in 0..cin {
                    let kw = &w[(o * cin + i) * K * K..(o * cin + i + 1) * K * K];
                    let plane = &input[i * n * n..(i + 1) * n * n];
                    for u in 0..K {
                        let row = &plane[(r + u) * n + c..(r + u) * n + c + K];
                        acc += row.iter().zip(&kw[u * K..(u + 1) * K]).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                out[(o * m + r) * m + c] = acc.max(0.0);
            }
        }
    }
    out
}

fn max_pool(input: &[f64], ch: usize, n: usize) -> (Vec<f64>, Vec<usize>) {
    let m = n / 2;
    let mut out = vec![0.0; ch * m * m];
    let mut arg = vec![0; ch * m * m];
    for c in 0..ch {
        for r in 0..m {
            for q in 0..m {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for (dr, dq) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let idx = (c * n + 2 * r + dr) * n + 2 * q + dq;
                    if input[idx] > best {
                        best = input[idx];
                        at = idx;
                    }
                }
                out[(c * m + r) * m + q] = best;
                arg[(c * m + r) * m + q] = at;
            }
        }
    }
    (out, arg)
}

/// Backward of conv+ReLU: `dout` is w.r.t. the post-ReLU output; returns the
/// gradient w.r.t. the input when `want_input`.
#[allow(clippy::too_many_arguments)]
fn conv_relu_backward(
    w: &[f64],
    input: &[f64],
    output: &[f64],
    dout: &[f64],
    cin: usize,
    cout: usize,
    n: usize,
    gw: &mut [f64],
    gb: &mut [f64],
    want_input: bool,
) -> Vec<f64> {
    let m = n - K + 1;
    let mut din = if want_input { vec![0.0; cin * n * n] } else { Vec::new() };
    for o in 0..cout {
        for r in 0..m {
            for c in 0..m {
                let at = (o * m + r) * m + c;
                if output[at] <= 0.0 {
                    continue;
                }
                let d = dout[at];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for i in 0..cin {
                    let base = (o * cin + i) * K * K;
                    for u in 0..K {
                        for v in 0..K {
                            let xi = (i * n + r + u) * n + c + v;
                            gw[base + u * K + v] += d * input[xi];
                            if want_input {
                                din[xi] += d * w[base + u * K + v];
                            }
                        }
                    }
                }
            }
        }
    }
    din
}

impl MnistCnn {
    fn forward(&self, w: &[f64], x: &[f64]) -> CnnTrace {
        let l = &LAYOUT;
        let conv1 = conv_relu(&w[l.c1w..l.c1b], &w[l.c1b..l.c2w], x, 1, C1, IMG);
        let (pool1, pool1_arg) = max_pool(&conv1, C1, S1);
        let conv2 = conv_relu(&w[l.c2w..l.c2b], &w[l.c2b..l.f1w], &pool1, C1, C2, P1);
        let (pool2, pool2_arg) = max_pool(&conv2, C2, S2);
        let fc1: Vec<f64> = (0..FC)
            .map(|u| {
                let row = &w[l.f1w + u * FLAT..l.f1w + (u + 1) * FLAT];
                (w[l.f1b + u] + row.iter().zip(&pool2).map(|(a, b)| a * b).sum::<f64>()).max(0.0)
            })
            .collect();
        let out: Vec<f64> = (0..OUT)
            .map(|c| {
                let row = &w[l.f2w + c * FC..l.f2w + (c + 1) * FC];
                w[l.f2b + c] + row.iter().zip(&fc1).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        CnnTrace {
            conv1,
            pool1,
            pool1_arg,
            conv2,
            pool2,
            pool2_arg,
            fc1,
            out,
        }
    }
}

impl Objective for MnistCnn {
    fn dim(&self) -> usize {
        LAYOUT.end
    }

    fn prunable(&self) -> Vec<bool> {
        let l = &LAYOUT;
        let bias = [(l.c1b, l.c2w), (l.c2b, l.f1w), (l.f1b, l.f2w), (l.f2b, l.end)];
        (0..self.dim())
            .map(|i| !bias.iter().any(|&(a, b)| (a..b).contains(&i)))
            .collect()
    }

    fn init(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let l = &LAYOUT;
        let mut w = vec![0.0; self.dim()];
        let fill = |w: &mut [f64], fan_in: usize, rng: &mut dyn RngCore| {
            let s = (6.0 / fan_in as f64).sqrt();
            for v in w {
                *v = rng.gen_range(-s..s);
            }
        };
        fill(&mut w[l.c1w..l.c1b], K * K, rng);
        fill(&mut w[l.c2w..l.c2b], C1 * K * K, rng);
        fill(&mut w[l.f1w..l.f1b], FLAT, rng);
        fill(&mut w[l.f2w..l.f2b], FC, rng);
        w
    }

    fn l2(&self) -> f64 {
        self.l2
    }

    fn loss_grad(&self, w: &[f64], data: &Dataset, rows: &[usize], mut grad: Option<&mut [f64]>) -> f64 {
        assert_eq!(data.n_features(), IMG * IMG, "MNIST network expects 28x28 inputs");
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let l = &LAYOUT;
        let mut total = 0.0;
        for &j in rows {
            let x = data.row(j);
            let y = data.label(j);
            let mut t = self.forward(w, x);
            let logit_y = t.out[y];
            total += softmax(&mut t.out) - logit_y;
            let Some(g) = grad.as_deref_mut() else { continue };
            t.out[y] -= 1.0;

            let mut dfc1 = vec![0.0; FC];
            for c in 0..OUT {
                let d = t.out[c];
                g[l.f2b + c] += d;
                for u in 0..FC {
                    g[l.f2w + c * FC + u] += d * t.fc1[u];
                    dfc1[u] += d * w[l.f2w + c * FC + u];
                }
            }
            let mut dpool2 = vec![0.0; FLAT];
            for u in 0..FC {
                if t.fc1[u] <= 0.0 {
                    continue;
                }
                let d = dfc1[u];
                g[l.f1b + u] += d;
                for q in 0..FLAT {
                    g[l.f1w + u * FLAT + q] += d * t.pool2[q];
                    dpool2[q] += d * w[l.f1w + u * FLAT + q];
                }
            }
            let mut dconv2 = vec![0.0; C2 * S2 * S2];
            for (q, &at) in t.pool2_arg.iter().enumerate() {
                dconv2[at] += dpool2[q];
            }
            let (gc2w, rest) = g[l.c2w..l.f1w].split_at_mut(C2 * C1 * K * K);
            let dpool1 = conv_relu_backward(
                &w[l.c2w..l.c2b],
                &t.pool1,
                &t.conv2,
                &dconv2,
                C1,
                C2,
                P1,
                gc2w,
                rest,
                true,
            );
            let mut dconv1 = vec![0.0; C1 * S1 * S1];
            for (q, &at) in t.pool1_arg.iter().enumerate() {
                dconv1[at] += dpool1[q];
            }
            let (gc1w, rest) = g[l.c1w..l.c2w].split_at_mut(C1 * K * K);
            conv_relu_backward(&w[l.c1w..l.c1b], x, &t.conv1, &dconv1, 1, C1, IMG, gc1w, rest, false);
        }
        add_regularizer(self.l2, w, rows.len(), total, grad)
    }

    fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        argmax(&self.forward(w, x).out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    LogisticL2,
    MlpSmall,
    CnnMnistOptional,
}

/// Learning-task hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// L2 strength λ.
    #[serde(default)]
    pub l2: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Hidden width for `mlp_small`.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_hidden() -> usize {
    16
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kind == TaskKind::LogisticL2 && !(self.l2 > 0.0) {
            return Err(Error::config("logistic_l2 needs a positive L2 strength"));
        }
        if self.l2 < 0.0 {
            return Err(Error::config("L2 strength must be nonnegative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if self.kind == TaskKind::MlpSmall && self.hidden == 0 {
            return Err(Error::config("mlp_small needs at least one hidden unit"));
        }
        Ok(())
    }

    /// Instantiate the objective for data of the given shape.
    pub fn build(&self, n_features: usize, n_classes: usize) -> Result<Box<dyn Objective>> {
        self.validate()?;
        Ok(match self.kind {
            TaskKind::LogisticL2 => {
                if n_classes != 2 {
                    return Err(Error::config("logistic_l2 is a two-class task"));
                }
                Box::new(Logistic {
                    features: n_features,
                    l2: self.l2,
                })
            }
            TaskKind::MlpSmall => Box::new(Mlp {
                inputs: n_features,
                hidden: self.hidden,
                classes: n_classes,
                l2: self.l2,
            }),
            TaskKind::CnnMnistOptional => {
                if n_features != IMG * IMG || n_classes != OUT {
                    return Err(Error::config("cnn_mnist_optional expects 28x28 images and 10 classes"));
                }
                Box::new(MnistCnn { l2: self.l2 })
            }
        })
    }
}
