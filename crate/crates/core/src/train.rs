//! Deterministic minibatch training.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{AnnotatedDataset, PreferencePair};
use crate::error::{Error, Result};
use crate::losses::{
    implicit_reward, reference_logprobs, variant_gradient_with_reference, BalancedWeights,
    FactorMode, LossVariant,
};
use crate::math;
use crate::model::{Model, PolicyParameters};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    /// Adaptive-moment updates with bias correction.
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam { .. } => "adaptive-moment",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub variant: LossVariant,
    pub beta: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl TrainConfig {
    pub const DEFAULT_ALPHA: f64 = 1.5;
    pub const DEFAULT_EPOCHS: usize = 1;

    /// `beta` has no default on purpose; `alpha` and `epochs` start at 1.5 and 1.
    pub fn new(
        variant: LossVariant,
        beta: f64,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
        optimizer: Optimizer,
    ) -> Self {
        Self {
            variant,
            beta,
            alpha: Self::DEFAULT_ALPHA,
            learning_rate,
            epochs: Self::DEFAULT_EPOCHS,
            batch_size,
            seed,
            optimizer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidArgument(format!("train config: {msg}")));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return fail("beta must be > 0");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail("alpha must be >= 0");
        }
        // zero is accepted as a no-op run
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be >= 0");
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if let Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } = self.optimizer
        {
            if !(0.0..1.0).contains(&beta1)
                || !(0.0..1.0).contains(&beta2)
                || epsilon.is_nan()
                || epsilon <= 0.0
            {
                return fail("invalid adaptive-moment hyperparameters");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub mean_loss: f64,
    pub mean_reward_margin: f64,
    pub mean_lambda_w: f64,
    pub mean_lambda_l: f64,
    pub mean_scaling_factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: PolicyParameters,
    pub metrics: Vec<MetricsRow>,
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        let (m, v) = match kind {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
        };
        Self {
            kind,
            lr,
            m,
            v,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
                let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= self.lr * m_hat / (math::sqrt(v_hat) + epsilon);
                }
            }
        }
    }
}

/// Visiting order for one epoch: a function of the seed and the epoch index only.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Runs `config.epochs` passes over `data`, starting from `init`.
///
/// The reference model is a frozen copy of `init`. If `data` was annotated at a
/// different `alpha`, its weights are rederived from the stored MI values at
/// `config.alpha`. Metrics log the weights the loss actually applies, so plain
/// DPO reports `(1, 1)`. The batch loss is the ordered mean of per-pair losses and the
/// final partial batch is kept.
pub fn train(
    model: &Model,
    config: &TrainConfig,
    data: &AnnotatedDataset,
    init: &PolicyParameters,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.check_params(init)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training data is empty".into()));
    }
    let data = if data.alpha() == config.alpha {
        data.clone()
    } else {
        data.reweighted(config.alpha)?
    };
    let reference = init.snapshot();
    let ref_lp = data
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| reference_logprobs(model, &reference, &r.pair).map_err(|e| e.at_pair(i)))
        .collect::<Result<Vec<_>>>()?;

    let mut params = init.clone();
    let n_params = params.len();
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate, n_params);
    let mut metrics = Vec::new();
    let mut step = 0;

    for epoch in 0..config.epochs {
        let order = epoch_order(data.len(), config.seed, epoch);
        for batch in order.chunks(config.batch_size) {
            step += 1;
            let mut grad = vec![0.0; n_params];
            let (mut loss, mut margin, mut lw, mut ll, mut factor) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &i in batch {
                let rec = &data.records()[i];
                let weights = if config.variant == LossVariant::Dpo {
                    BalancedWeights::UNIT
                } else {
                    rec.weights
                };
                let lg = variant_gradient_with_reference(
                    config.variant,
                    model,
                    &params,
                    ref_lp[i],
                    &rec.pair,
                    config.beta,
                    &weights,
                    FactorMode::Frozen,
                )
                .map_err(|e| e.at_pair(i))?;
                for (a, g) in grad.iter_mut().zip(&lg.grad) {
                    *a += g;
                }
                loss += lg.head.loss;
                margin += lg.head.reward_w.0 - lg.head.reward_l.0;
                lw += weights.lambda_w;
                ll += weights.lambda_l;
                factor += lg.head.factor;
            }
            let k = batch.len() as f64;
            for g in &mut grad {
                *g /= k;
            }
            let row = MetricsRow {
                step,
                mean_loss: loss / k,
                mean_reward_margin: margin / k,
                mean_lambda_w: lw / k,
                mean_lambda_l: ll / k,
                mean_scaling_factor: factor / k,
            };
            if !row.mean_loss.is_finite() {
                return Err(Error::NonFinite { what: "loss", step });
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    what: "gradient",
                    step,
                });
            }
            opt.step(params.values_mut(), &grad);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite {
                    what: "parameter",
                    step,
                });
            }
            metrics.push(row);
        }
    }
    Ok(TrainOutcome { params, metrics })
}

/// Settings for fitting a reference model by maximum likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 30,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Fits a reference model to the responses of `pairs` by maximum likelihood.
///
/// Each response is scored both after its query and after the bare BOS token, so
/// the fitted model carries a query-conditioned distribution and a marginal one.
/// Returns the fitted parameters and the mean per-token negative log-likelihood
/// of each epoch.
pub fn pretrain(
    model: &Model,
    config: &PretrainConfig,
    pairs: &[PreferencePair],
    init: &PolicyParameters,
) -> Result<(PolicyParameters, Vec<f64>)> {
    model.check_params(init)?;
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "pretrain epochs and batch_size must be >= 1".into(),
        ));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidArgument(
            "pretrain learning_rate must be >= 0".into(),
        ));
    }
    for (i, p) in pairs.iter().enumerate() {
        p.validate(model.vocab_size()).map_err(|e| e.at_pair(i))?;
    }
    let mut params = init.clone();
    let mut opt = OptimizerState::new(Optimizer::ADAM, config.learning_rate, params.len());
    let empty = crate::vocab::TokenSequence::default().with_bos();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let order = epoch_order(pairs.len(), config.seed, epoch);
        let (mut nll, mut tokens) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            step += 1;
            let mut grad = vec![0.0; params.len()];
            let mut batch_tokens = 0usize;
            for &i in batch {
                let p = &pairs[i];
                let prefix = p.query.with_bos();
                for y in [&p.preferred, &p.dispreferred] {
                    for pre in [&prefix, &empty] {
                        let lp = model
                            .accumulate_logprob_gradient(&params, pre, y, -1.0, &mut grad)
                            .map_err(|e| e.at_pair(i))?;
                        nll -= lp;
                        batch_tokens += y.len();
                    }
                }
            }
            tokens += batch_tokens;
            for g in &mut grad {
                *g /= batch_tokens as f64;
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    what: "gradient",
                    step,
                });
            }
            opt.step(params.values_mut(), &grad);
        }
        history.push(if tokens == 0 {
            0.0
        } else {
            nll / tokens as f64
        });
    }
    Ok((params, history))
}

/// `r̂(x, y_w) − r̂(x, y_l)`.
pub fn reward_margin(
    model: &Model,
    policy: &[f64],
    reference: &[f64],
    pair: &PreferencePair,
    beta: f64,
) -> Result<f64> {
    let w = implicit_reward(model, policy, reference, &pair.query, &pair.preferred, beta)?;
    let l = implicit_reward(
        model,
        policy,
        reference,
        &pair.query,
        &pair.dispreferred,
        beta,
    )?;
    Ok(w.0 - l.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Fraction of pairs with a strictly positive reward margin.
    pub preference_accuracy: f64,
    pub mean_margin: f64,
}

pub fn evaluate(
    model: &Model,
    policy: &[f64],
    reference: &[f64],
    pairs: &[PreferencePair],
    beta: f64,
) -> Result<Evaluation> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "evaluation needs at least one pair".into(),
        ));
    }
    let (mut wins, mut total) = (0usize, 0.0);
    for (i, p) in pairs.iter().enumerate() {
        let m = reward_margin(model, policy, reference, p, beta).map_err(|e| e.at_pair(i))?;
        if m > 0.0 {
            wins += 1;
        }
        total += m;
    }
    let n = pairs.len() as f64;
    Ok(Evaluation {
        preference_accuracy: wins as f64 / n,
        mean_margin: total / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(10, 3, 0);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(10, 3, 0));
        assert_ne!(a, epoch_order(10, 3, 1));
        assert_ne!(a, epoch_order(10, 4, 0));
    }

    #[test]
    fn config_bounds() {
        let ok = TrainConfig::new(LossVariant::Bdpo, 0.1, 1e-3, 4, 0, Optimizer::ADAM);
        assert_eq!(ok.alpha, 1.5);
        assert_eq!(ok.epochs, 1);
        ok.validate().unwrap();
        assert!(TrainConfig { beta: 0.0, ..ok }.validate().is_err());
        assert!(TrainConfig { alpha: -1.0, ..ok }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..ok }.validate().is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..ok
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            learning_rate: -1.0,
            ..ok
        }
        .validate()
        .is_err());
    }
}
