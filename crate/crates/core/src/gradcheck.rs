//! Randomized verification of every loss gradient.
//!
//! Each trial draws a small model, a reference perturbed away from the policy, a
//! preference pair and balanced weights away from `(1, 1)`, then checks:
//!
//! * the implemented gradient of every variant against central finite
//!   differences of the same objective with the scaling factor held at its
//!   current value;
//! * the closed-form balanced gradient against the reverse-mode one;
//! * that the implemented balanced gradient is exactly the frozen factor times
//!   the inner-loss gradient, and that differentiating through the factor would
//!   give something else.

use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{PreferencePair, SafetyLabel};
use crate::error::Result;
use crate::losses::{
    balanced_weights, bdpo_analytic_gradient, bdpo_inner_analytic_gradient, loss_from_rewards,
    reference_logprobs, scaling_factor, variant_gradient_with_reference, BalancedWeights,
    FactorMode, ImplicitReward, LossVariant, PairLogprobs,
};
use crate::model::{Model, ModelConfig, PolicyParameters};
use crate::vocab::TokenSequence;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const ANALYTIC_TOLERANCE: f64 = 1e-10;
pub const STOP_GRADIENT_TOLERANCE: f64 = 1e-12;
/// Minimum relative gap between the frozen and fully differentiated gradients
/// for an instance to count as showing that freezing matters.
pub const UNFROZEN_MIN_DIFFERENCE: f64 = 1e-6;

/// Normwise relative error `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`; zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// One randomized gradient-check instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: Model,
    pub policy: PolicyParameters,
    pub reference: PolicyParameters,
    pub pair: PreferencePair,
    pub beta: f64,
    pub weights: BalancedWeights,
}

fn random_seq(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> TokenSequence {
    TokenSequence::new((0..len).map(|_| rng.gen_range(1..vocab as u32)).collect())
}

/// Draws an instance with `V ≤ 8` and sequences of at most three tokens.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let vocab = rng.gen_range(3..=8);
    let q = rng.gen_range(1..=3);
    let (lw, ll) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let config = ModelConfig {
        vocab_size: vocab,
        embed_dim: rng.gen_range(1..=4),
        context_window: 1 + q + lw.max(ll) + rng.gen_range(0..=2),
        hidden_dim: rng.gen_range(1..=4),
        seed: rng.gen(),
    };
    let model = Model::new(config).expect("valid random config");
    let policy = model.init_params();
    let mut reference = policy.clone();
    for v in reference.values_mut() {
        *v += rng.gen_range(-0.3..0.3);
    }
    let query = random_seq(rng, q, vocab);
    let preferred = random_seq(rng, lw, vocab);
    let dispreferred = loop {
        let s = random_seq(rng, ll, vocab);
        if s != preferred {
            break s;
        }
    };
    let label = *[SafetyLabel::Safe, SafetyLabel::Unsafe]
        .choose(rng)
        .unwrap();
    let pair = PreferencePair::new("gc", query, preferred, dispreferred, label)
        .expect("valid random pair");
    let weights = balanced_weights(
        rng.gen_range(0.05..2.0),
        rng.gen_range(0.05..2.0),
        rng.gen_range(0.5..2.5),
    )
    .expect("valid weights");
    Instance {
        model,
        policy,
        reference,
        pair,
        beta: rng.gen_range(0.1..2.0),
        weights,
    }
}

impl Instance {
    fn reference_lp(&self) -> Result<(f64, f64)> {
        reference_logprobs(&self.model, &self.reference, &self.pair)
    }

    pub fn gradient(&self, variant: LossVariant, mode: FactorMode) -> Result<Vec<f64>> {
        Ok(variant_gradient_with_reference(
            variant,
            &self.model,
            &self.policy,
            self.reference_lp()?,
            &self.pair,
            self.beta,
            &self.weights,
            mode,
        )?
        .grad)
    }

    fn policy_lp(&self, params: &[f64]) -> Result<(f64, f64)> {
        let prefix = self.pair.query.with_bos();
        Ok((
            self.model
                .sequence_logprob(params, &prefix, &self.pair.preferred)?,
            self.model
                .sequence_logprob(params, &prefix, &self.pair.dispreferred)?,
        ))
    }

    fn rewards_at(
        &self,
        params: &[f64],
        reference_lp: (f64, f64),
    ) -> Result<(ImplicitReward, ImplicitReward)> {
        let (w, l) = self.policy_lp(params)?;
        Ok(PairLogprobs {
            policy_w: w,
            policy_l: l,
            reference_w: reference_lp.0,
            reference_l: reference_lp.1,
        }
        .rewards(self.beta))
    }

    /// Scaling factor at the instance's current parameters.
    pub fn current_factor(&self) -> Result<f64> {
        let (w, l) = self.rewards_at(&self.policy, self.reference_lp()?)?;
        scaling_factor(w, l, &self.weights)
    }

    /// Central finite differences of every variant's objective with the factor
    /// frozen at its current value, plus the fully differentiated balanced loss.
    /// Returns gradients indexed like [`LossVariant::ALL`], then the unfrozen one.
    pub fn finite_differences(&self) -> Result<[Vec<f64>; 5]> {
        let reference_lp = self.reference_lp()?;
        let factor0 = self.current_factor()?;
        let unit = BalancedWeights::UNIT;
        let objectives = |params: &[f64]| -> Result<[f64; 5]> {
            let (w, l) = self.rewards_at(params, reference_lp)?;
            let dpo = loss_from_rewards(LossVariant::Dpo, w, l, &unit)?;
            let inner = loss_from_rewards(LossVariant::DpoBw, w, l, &self.weights)?;
            let full = loss_from_rewards(LossVariant::Bdpo, w, l, &self.weights)?;
            Ok([dpo, inner, factor0 * dpo, factor0 * inner, full])
        };
        let n = self.policy.len();
        let mut out: [Vec<f64>; 5] = Default::default();
        for g in &mut out {
            g.reserve(n);
        }
        let mut p = self.policy.values().to_vec();
        for j in 0..n {
            let orig = p[j];
            p[j] = orig + FD_STEP;
            let plus = objectives(&p)?;
            p[j] = orig - FD_STEP;
            let minus = objectives(&p)?;
            p[j] = orig;
            for k in 0..5 {
                out[k].push((plus[k] - minus[k]) / (2.0 * FD_STEP));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub trials: usize,
    /// Negative control: perturbs the implemented gradients before comparison.
    pub corrupt: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    /// Finite-difference error of the implemented gradient, per [`LossVariant::ALL`].
    pub max_fd_error: [f64; 4],
    /// Finite-difference error of the fully differentiated balanced gradient.
    pub max_unfrozen_fd_error: f64,
    /// Closed-form inner-loss gradient vs reverse mode.
    pub max_inner_analytic_error: f64,
    /// Closed-form balanced gradient vs reverse mode.
    pub max_bdpo_analytic_error: f64,
    /// Balanced gradient vs frozen factor × inner gradient.
    pub max_stop_gradient_error: f64,
    /// Largest relative gap between frozen and unfrozen balanced gradients.
    pub max_unfrozen_difference: f64,
    pub min_unfrozen_difference: f64,
}

impl GradcheckReport {
    pub fn fd_passed(&self) -> bool {
        self.max_fd_error.iter().all(|&e| e < FD_TOLERANCE)
            && self.max_unfrozen_fd_error < FD_TOLERANCE
    }

    pub fn analytic_passed(&self) -> bool {
        self.max_inner_analytic_error < ANALYTIC_TOLERANCE
            && self.max_bdpo_analytic_error < ANALYTIC_TOLERANCE
    }

    pub fn stop_gradient_passed(&self) -> bool {
        self.max_stop_gradient_error < STOP_GRADIENT_TOLERANCE
            && self.max_unfrozen_difference > UNFROZEN_MIN_DIFFERENCE
    }

    pub fn passed(&self) -> bool {
        self.fd_passed() && self.analytic_passed() && self.stop_gradient_passed()
    }
}

fn corrupt(g: &mut [f64]) {
    if let Some(x) = g.iter_mut().find(|x| **x != 0.0) {
        *x *= 1.01;
    }
}

pub fn run(config: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = GradcheckReport {
        trials: config.trials,
        max_fd_error: [0.0; 4],
        max_unfrozen_fd_error: 0.0,
        max_inner_analytic_error: 0.0,
        max_bdpo_analytic_error: 0.0,
        max_stop_gradient_error: 0.0,
        max_unfrozen_difference: 0.0,
        min_unfrozen_difference: f64::INFINITY,
    };
    for _ in 0..config.trials {
        let inst = random_instance(&mut rng);
        let fd = inst.finite_differences()?;
        let mut implemented = Vec::with_capacity(4);
        for (k, v) in LossVariant::ALL.into_iter().enumerate() {
            let mut g = inst.gradient(v, FactorMode::Frozen)?;
            if config.corrupt {
                corrupt(&mut g);
            }
            report.max_fd_error[k] = report.max_fd_error[k].max(rel_error(&g, &fd[k]));
            implemented.push(g);
        }
        let unfrozen = inst.gradient(LossVariant::Bdpo, FactorMode::Differentiated)?;
        report.max_unfrozen_fd_error = report
            .max_unfrozen_fd_error
            .max(rel_error(&unfrozen, &fd[4]));

        let (m, p, r, pair, beta, w) = (
            &inst.model,
            &inst.policy,
            &inst.reference,
            &inst.pair,
            inst.beta,
            &inst.weights,
        );
        let inner_cf = bdpo_inner_analytic_gradient(m, p, r, pair, beta, w)?;
        report.max_inner_analytic_error = report
            .max_inner_analytic_error
            .max(rel_error(&inner_cf, &implemented[1]));
        let bdpo_cf = bdpo_analytic_gradient(m, p, r, pair, beta, w)?;
        report.max_bdpo_analytic_error = report
            .max_bdpo_analytic_error
            .max(rel_error(&bdpo_cf, &implemented[3]));

        let factor = inst.current_factor()?;
        let scaled: Vec<f64> = implemented[1].iter().map(|g| factor * g).collect();
        report.max_stop_gradient_error = report
            .max_stop_gradient_error
            .max(rel_error(&implemented[3], &scaled));
        let diff = rel_error(&unfrozen, &implemented[3]);
        report.max_unfrozen_difference = report.max_unfrozen_difference.max(diff);
        report.min_unfrozen_difference = report.min_unfrozen_difference.min(diff);
    }
    Ok(report)
}
