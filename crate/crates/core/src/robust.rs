//! Training against the expected bounds, PGD attacks, and robustness
//! evaluation.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{propagate_blockwise_trace, width, InputBox, Interval};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngState, Vector};
use crate::network::{GradientTape, ReluNetwork};

/// Hyperparameters of robust training. `kappa = 0` is nominal training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub kappa: f64,
    pub eps_train: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Logits are divided by this before the softmax.
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default)]
    pub momentum: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be finite and non-negative, got {v}")))
            }
        };
        finite_nonneg("kappa", self.kappa)?;
        finite_nonneg("eps_train", self.eps_train)?;
        finite_nonneg("learning_rate", self.learning_rate)?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::param("temperature", format!("must be positive, got {}", self.temperature)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", format!("must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Projected gradient descent attack settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgdConfig {
    pub eps_test: f64,
    pub steps: usize,
    pub step_size: f64,
    pub restarts: usize,
    pub seed: u64,
}

pub const PGD_DEFAULT_STEPS: usize = 40;
/// Default step size as a multiple of `eps_test / steps`.
pub const PGD_STEP_SCALE: f64 = 2.5;

impl PgdConfig {
    /// 40 steps of size `2.5 ε / 40` and a single restart.
    pub fn with_defaults(eps_test: f64, seed: u64) -> Self {
        PgdConfig {
            eps_test,
            steps: PGD_DEFAULT_STEPS,
            step_size: PGD_STEP_SCALE * eps_test / PGD_DEFAULT_STEPS as f64,
            restarts: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_test >= 0.0 && self.eps_test.is_finite()) {
            return Err(Error::param("eps_test", format!("must be finite and non-negative, got {}", self.eps_test)));
        }
        if self.steps == 0 {
            return Err(Error::param("steps", "must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::param("restarts", "must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) && self.eps_test > 0.0 {
            return Err(Error::param("step_size", format!("must be positive, got {}", self.step_size)));
        }
        Ok(())
    }
}

/// Worst-case logits built from output bounds: the lower bound at the true
/// class and upper bounds elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialLogits {
    pub z: Vector,
}

pub fn robust_logits(bounds: &Interval, true_label: usize) -> Result<AdversarialLogits> {
    if true_label >= bounds.len() {
        return Err(Error::param(
            "true_label",
            format!("{true_label} is out of range for {} classes", bounds.len()),
        ));
    }
    let z = (0..bounds.len())
        .map(|j| if j == true_label { bounds.lower()[j] } else { bounds.upper()[j] })
        .collect();
    Ok(AdversarialLogits { z })
}

/// `−log softmax(logits / T)[label]`, computed with the maximum subtracted.
pub fn cross_entropy(logits: &[f64], label: usize, temperature: f64) -> f64 {
    let scaled: Vec<f64> = logits.iter().map(|v| v / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - scaled[label]
}

/// Gradient of [`cross_entropy`] with respect to the logits.
fn cross_entropy_grad(logits: &[f64], label: usize, temperature: f64) -> Vector {
    let scaled: Vec<f64> = logits.iter().map(|v| v / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter()
        .enumerate()
        .map(|(j, e)| (e / total - if j == label { 1.0 } else { 0.0 }) / temperature)
        .collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Value and gradient of `CE(f(x)/T, y) + κ·CE(z/T, y)` where `z` are the
/// adversarial logits of the expected bounds over `input`, whose center is
/// `x`.
#[derive(Clone, Debug)]
pub struct RobustLoss {
    pub loss: f64,
    pub nominal: f64,
    /// The unweighted bound term `CE(z/T, y)`; zero when `κ = 0`.
    pub robust: f64,
    /// Mean width of the expected bounds; zero when `κ = 0`.
    pub mean_width: f64,
    pub grads: GradientTape,
}

pub fn robust_loss(net: &ReluNetwork, input: &InputBox, label: usize, cfg: &TrainConfig) -> Result<RobustLoss> {
    let mut grads = GradientTape::zeros_like(net);
    let (loss, nominal, robust, mean_width) = accumulate_robust_loss(net, input, label, cfg, 1.0, &mut grads)?;
    Ok(RobustLoss {
        loss,
        nominal,
        robust,
        mean_width,
        grads,
    })
}

/// Adds `scale · ∇loss` into `grads`; returns `(loss, nominal, robust,
/// mean_width)`.
///
/// The activation masks of the bounds are held fixed, so the bound term is
/// differentiated as the affine expression it is within the current masks.
fn accumulate_robust_loss(
    net: &ReluNetwork,
    input: &InputBox,
    label: usize,
    cfg: &TrainConfig,
    scale: f64,
    grads: &mut GradientTape,
) -> Result<(f64, f64, f64, f64)> {
    if label >= net.output_dim() {
        return Err(Error::param("label", format!("{label} is out of range for {} classes", net.output_dim())));
    }
    let x = input.center();
    let logits = net.forward(x)?;
    let nominal = cross_entropy(&logits, label, cfg.temperature);
    let g_nom = cross_entropy_grad(&logits, label, cfg.temperature);
    grads.add_scaled(scale, &net.backward(x, &g_nom)?);
    if cfg.kappa == 0.0 {
        return Ok((nominal, nominal, 0.0, 0.0));
    }

    let trace = propagate_blockwise_trace(net, input, true)?;
    let z = robust_logits(&trace.bounds, label)?.z;
    let robust = cross_entropy(&z, label, cfg.temperature);
    let mean_width = width(&trace.bounds).iter().sum::<f64>() / z.len() as f64;

    let delta = cross_entropy_grad(&z, label, cfg.temperature).map(|d| d * cfg.kappa * scale);
    let eps = input.radius();
    let layers = net.layers();
    let last = layers.len() - 1;

    // z = c + ε s ⊙ |G|1 with s = −1 at the label and +1 elsewhere.
    let mut d_center = delta.clone();
    let mut d_map = Matrix::zeros(trace.maps[last].rows(), trace.maps[last].cols());
    for j in 0..d_map.rows() {
        let s = if j == label { -1.0 } else { 1.0 };
        let coef = eps * s * delta[j];
        for (d, &g) in d_map.row_mut(j).iter_mut().zip(trace.maps[last].row(j)) {
            *d = coef * sign(g);
        }
    }

    for l in (1..=last).rev() {
        let mask = &trace.masks[l - 1];
        let mut p = trace.maps[l - 1].clone();
        let mut q = trace.centers[l - 1].clone();
        for r in 0..p.rows() {
            if !mask.is_active(r) {
                p.row_mut(r).fill(0.0);
                q[r] = 0.0;
            }
        }
        let w = layers[l].weights();
        grads.weights[l].add_scaled(1.0, &d_map.matmul_transpose_b(&p)?);
        grads.weights[l].add_outer(1.0, &d_center, &q);
        for (b, d) in grads.biases[l].iter_mut().zip(d_center.iter()) {
            *b += d;
        }
        let mut next_map = w.matmul_transpose_a(&d_map)?;
        let mut next_center = w.matvec_transposed(&d_center)?;
        for r in 0..next_map.rows() {
            if !mask.is_active(r) {
                next_map.row_mut(r).fill(0.0);
                next_center[r] = 0.0;
            }
        }
        d_map = next_map;
        d_center = next_center;
    }
    grads.weights[0].add_scaled(1.0, &d_map);
    grads.weights[0].add_outer(1.0, &d_center, x);
    for (b, d) in grads.biases[0].iter_mut().zip(d_center.iter()) {
        *b += d;
    }
    let d_input = layers[0].weights().matvec_transposed(&d_center)?;
    for (g, d) in grads.input.iter_mut().zip(d_input.iter()) {
        *g += d;
    }
    Ok((nominal + cfg.kappa * robust, nominal, robust, mean_width))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn pgd_loss_and_grad(net: &ReluNetwork, x: &[f64], label: usize) -> Result<(f64, Vector)> {
    let logits = net.forward(x)?;
    let g = cross_entropy_grad(&logits, label, 1.0);
    Ok((cross_entropy(&logits, label, 1.0), net.backward(x, &g)?.input))
}

/// Projects onto the `ℓ∞` ball around `center`, then onto the data range.
fn project(point: &mut [f64], center: &[f64], eps: f64, range: Option<(f64, f64)>) {
    for (p, &c) in point.iter_mut().zip(center) {
        *p = p.clamp(c - eps, c + eps);
        if let Some((lo, hi)) = range {
            *p = p.clamp(lo, hi);
        }
    }
}

/// Sign-gradient ascent on the cross-entropy from a uniform random start in
/// the ball, with projection after every step. Returns the highest-loss
/// point seen, `x` itself included.
pub fn pgd_attack(
    net: &ReluNetwork,
    x: &[f64],
    label: usize,
    cfg: &PgdConfig,
    range: Option<(f64, f64)>,
    rng: &mut RngState,
) -> Result<Vector> {
    cfg.validate()?;
    let mut best = Vector::from(x);
    if cfg.eps_test == 0.0 {
        return Ok(best);
    }
    let (mut best_loss, _) = pgd_loss_and_grad(net, x, label)?;
    for _ in 0..cfg.restarts {
        let mut cur: Vector = x.iter().map(|&c| rng.uniform_in(c - cfg.eps_test, c + cfg.eps_test)).collect();
        project(&mut cur, x, cfg.eps_test, range);
        for _ in 0..cfg.steps {
            let (_, g) = pgd_loss_and_grad(net, &cur, label)?;
            for (c, gi) in cur.iter_mut().zip(g.iter()) {
                *c += cfg.step_size * sign(*gi);
            }
            project(&mut cur, x, cfg.eps_test, range);
            let (loss, _) = pgd_loss_and_grad(net, &cur, label)?;
            if loss > best_loss {
                best_loss = loss;
                best.copy_from_slice(&cur);
            }
        }
    }
    Ok(best)
}

/// Fraction of samples whose predicted class is unchanged by
/// [`pgd_attack`], whether or not the prediction is correct. The attack
/// targets the predicted class.
pub fn pgd_robustness(net: &ReluNetwork, dataset: &Dataset, cfg: &PgdConfig) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::param("dataset", "must not be empty"));
    }
    cfg.validate()?;
    let kept: Vec<bool> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let x = dataset.sample(i);
            let pred = argmax(&net.forward(x)?);
            let mut rng = RngState::with_stream(cfg.seed, i as u64);
            let adv = pgd_attack(net, x, pred, cfg, dataset.declared_range(), &mut rng)?;
            Ok(argmax(&net.forward(&adv)?) == pred)
        })
        .collect::<Result<_>>()?;
    Ok(kept.iter().filter(|&&k| k).count() as f64 / dataset.len() as f64)
}

pub fn accuracy(net: &ReluNetwork, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::param("dataset", "must not be empty"));
    }
    let mut correct = 0;
    for i in 0..dataset.len() {
        if argmax(&net.forward(dataset.sample(i))?) == dataset.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Accuracy on the evaluation set (the training set if none was given).
    pub nominal_acc: f64,
    /// Mean expected-bound width at `eps_train`, averaged over the epoch's
    /// samples; zero when `κ = 0`.
    pub mean_bound_width: f64,
}

/// Minibatch SGD on [`robust_loss`] with constant `κ` and `ε_train`.
/// Each epoch visits the training set in a fresh seeded order.
pub fn train(
    net: &ReluNetwork,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(ReluNetwork, Vec<EpochLog>)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::param("train_set", "must not be empty"));
    }
    if train_set.dim() != net.input_dim() {
        return Err(Error::dim("train: input", net.input_dim(), train_set.dim()));
    }
    let mut net = net.clone();
    let mut velocity = GradientTape::zeros_like(&net);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = RngState::with_stream(cfg.seed, epoch as u64);
        rng.shuffle(&mut order);
        let (mut loss_sum, mut width_sum) = (0.0, 0.0);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = GradientTape::zeros_like(&net);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let input = InputBox::new(train_set.sample(i).into(), cfg.eps_train)?;
                let (loss, _, _, w) =
                    accumulate_robust_loss(&net, &input, train_set.label(i), cfg, scale, &mut grads)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, step, loss });
                }
                loss_sum += loss;
                width_sum += w;
            }
            if !grads.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: f64::NAN,
                });
            }
            if cfg.momentum > 0.0 {
                velocity.scale(cfg.momentum);
                velocity.add_scaled(1.0, &grads);
                net.apply_update(&velocity, cfg.learning_rate);
            } else {
                net.apply_update(&grads, cfg.learning_rate);
            }
        }
        let n = train_set.len() as f64;
        log.push(EpochLog {
            epoch,
            loss: loss_sum / n,
            nominal_acc: accuracy(&net, eval_set.unwrap_or(train_set))?,
            mean_bound_width: width_sum / n,
        });
    }
    Ok((net, log))
}

pub fn write_train_log<W: Write>(log: &[EpochLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// A trained model to evaluate, with the settings it was trained under.
#[derive(Clone, Debug)]
pub struct EvalModel {
    pub model_id: String,
    pub eps_train: f64,
    pub kappa: f64,
    pub net: ReluNetwork,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub model_id: String,
    pub eps_train: f64,
    pub kappa: f64,
    pub accuracy: f64,
    /// One entry per `eps_test`, in grid order.
    pub robustness: Vec<f64>,
    pub mean_robustness: f64,
    pub meets_accuracy_floor: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalTable {
    pub eps_test: Vec<f64>,
    pub accuracy_floor: f64,
    pub rows: Vec<EvalRow>,
}

/// The MNIST attack radii.
pub const MNIST_EPS_TEST: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
/// Minimum test accuracy for a model to enter the MNIST scatter plot.
pub const MNIST_ACCURACY_FLOOR: f64 = 0.975;

/// Test accuracy and PGD robustness at every `eps_test` for each model.
/// Attacks use `steps` steps of size `2.5 ε / steps` and `restarts`
/// restarts.
pub fn evaluate_grid(
    models: &[EvalModel],
    test_set: &Dataset,
    eps_test: &[f64],
    steps: usize,
    restarts: usize,
    seed: u64,
    accuracy_floor: f64,
) -> Result<EvalTable> {
    if models.is_empty() || eps_test.is_empty() {
        return Err(Error::param("evaluate_grid", "models and eps_test must be nonempty"));
    }
    let cfg = |eps: f64| PgdConfig {
        eps_test: eps,
        steps,
        step_size: PGD_STEP_SCALE * eps / steps.max(1) as f64,
        restarts,
        seed,
    };
    let jobs: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..eps_test.len()).map(move |e| (m, e)))
        .collect();
    let rob: Vec<f64> = jobs
        .par_iter()
        .map(|&(m, e)| pgd_robustness(&models[m].net, test_set, &cfg(eps_test[e])))
        .collect::<Result<_>>()?;
    let rows = models
        .iter()
        .enumerate()
        .map(|(m, model)| {
            let robustness = rob[m * eps_test.len()..(m + 1) * eps_test.len()].to_vec();
            let acc = accuracy(&model.net, test_set)?;
            Ok(EvalRow {
                model_id: model.model_id.clone(),
                eps_train: model.eps_train,
                kappa: model.kappa,
                accuracy: acc,
                mean_robustness: robustness.iter().sum::<f64>() / robustness.len() as f64,
                robustness,
                meets_accuracy_floor: acc >= accuracy_floor,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalTable {
        eps_test: eps_test.to_vec(),
        accuracy_floor,
        rows,
    })
}

impl EvalTable {
    /// Rows meeting the accuracy floor.
    pub fn retained(&self) -> impl Iterator<Item = &EvalRow> {
        self.rows.iter().filter(|r| r.meets_accuracy_floor)
    }

    /// Header `model_id,eps_train,kappa,accuracy,robustness_<ε>...,mean_robustness,meets_accuracy_floor`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["model_id".to_string(), "eps_train".into(), "kappa".into(), "accuracy".into()];
        header.extend(self.eps_test.iter().map(|e| format!("robustness_{e}")));
        header.extend(["mean_robustness".to_string(), "meets_accuracy_floor".into()]);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.model_id.clone(),
                r.eps_train.to_string(),
                r.kappa.to_string(),
                r.accuracy.to_string(),
            ];
            rec.extend(r.robustness.iter().map(f64::to_string));
            rec.extend([r.mean_robustness.to_string(), r.meets_accuracy_floor.to_string()]);
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
