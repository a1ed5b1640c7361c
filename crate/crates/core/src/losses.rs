//! Preference losses.
//!
//! With implicit rewards `r_w`, `r_l` (β-scaled policy/reference log-ratios of
//! the preferred and dispreferred responses) and balanced weights `λ_w`, `λ_l`:
//!
//! ```text
//! dpo    = -log σ(r_w - r_l)
//! inner  = -log σ(λ_w r_w - λ_l r_l)
//! factor = σ(r_l - r_w) / σ(λ_l r_l - λ_w r_w)      (no gradient)
//! bdpo   = factor · inner
//! ```
//!
//! `dpo-bw` is `inner` alone and `dpo-sf` is `factor · dpo`, with the factor
//! still computed from the balanced weights.

use core::fmt;
use core::str::FromStr;

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::PreferencePair;
use crate::error::{Error, Result};
use crate::math;
use crate::model::Model;
use crate::tape::Tape;
use crate::vocab::TokenSequence;

/// Lower bound applied to mutual-information values before exponentiation.
pub const MI_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancedWeights {
    pub lambda_w: f64,
    pub lambda_l: f64,
    pub alpha: f64,
}

impl BalancedWeights {
    /// `(1, 1)`: the weights under which every variant reduces to DPO.
    pub const UNIT: Self = Self {
        lambda_w: 1.0,
        lambda_l: 1.0,
        alpha: 0.0,
    };

    pub fn is_unit(&self) -> bool {
        self.lambda_w == 1.0 && self.lambda_l == 1.0
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be finite and non-negative, got {alpha}"
        )));
    }
    Ok(())
}

/// Balanced weights from the two mutual-information values.
///
/// `λ_w = 2 I_l^α / (I_w^α + I_l^α)` and `λ_l = 2 I_w^α / (I_w^α + I_l^α)`, with both
/// MI values first clamped to [`MI_FLOOR`]. The better-understood response gets
/// the smaller weight. Evaluated as `2σ(±α(ln I_l − ln I_w))`, which is the same
/// ratio without overflow for large `α`.
pub fn balanced_weights(mi_w: f64, mi_l: f64, alpha: f64) -> Result<BalancedWeights> {
    check_alpha(alpha)?;
    if !mi_w.is_finite() || !mi_l.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "mutual information must be finite, got ({mi_w}, {mi_l})"
        )));
    }
    let iw = mi_w.max(MI_FLOOR);
    let il = mi_l.max(MI_FLOOR);
    let z = alpha * (math::ln(il) - math::ln(iw));
    Ok(BalancedWeights {
        lambda_w: 2.0 * math::sigmoid(z),
        lambda_l: 2.0 * math::sigmoid(-z),
        alpha,
    })
}

/// `β · log(π_θ(y|x) / π_ref(y|x))`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ImplicitReward(pub f64);

impl ImplicitReward {
    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossVariant {
    Dpo,
    DpoBw,
    DpoSf,
    Bdpo,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [Self::Dpo, Self::DpoBw, Self::DpoSf, Self::Bdpo];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dpo => "dpo",
            Self::DpoBw => "dpo-bw",
            Self::DpoSf => "dpo-sf",
            Self::Bdpo => "bdpo",
        }
    }

    pub fn uses_scaling_factor(self) -> bool {
        matches!(self, Self::DpoSf | Self::Bdpo)
    }

    pub fn uses_balanced_inner(self) -> bool {
        matches!(self, Self::DpoBw | Self::Bdpo)
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "beta must be positive and finite, got {beta}"
        )));
    }
    Ok(())
}

// Closed interval: at extreme MI ratios one weight rounds to exactly 2.
fn check_weights(w: &BalancedWeights) -> Result<()> {
    let ok = |l: f64| (0.0..=2.0).contains(&l);
    if !ok(w.lambda_w) || !ok(w.lambda_l) {
        return Err(Error::InvalidArgument(format!(
            "weights ({}, {}) outside [0, 2]",
            w.lambda_w, w.lambda_l
        )));
    }
    Ok(())
}

/// Sequence log-probabilities of both responses under policy and reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLogprobs {
    pub policy_w: f64,
    pub policy_l: f64,
    pub reference_w: f64,
    pub reference_l: f64,
}

impl PairLogprobs {
    pub fn compute(
        model: &Model,
        policy: &[f64],
        reference: &[f64],
        pair: &PreferencePair,
    ) -> Result<Self> {
        let (w, l) = reference_logprobs(model, reference, pair)?;
        let prefix = pair.query.with_bos();
        Ok(Self {
            policy_w: model.sequence_logprob(policy, &prefix, &pair.preferred)?,
            policy_l: model.sequence_logprob(policy, &prefix, &pair.dispreferred)?,
            reference_w: w,
            reference_l: l,
        })
    }

    pub fn rewards(&self, beta: f64) -> (ImplicitReward, ImplicitReward) {
        (
            ImplicitReward(beta * (self.policy_w - self.reference_w)),
            ImplicitReward(beta * (self.policy_l - self.reference_l)),
        )
    }
}

/// Reference log-probabilities `(log π_ref(y_w|x), log π_ref(y_l|x))`.
pub fn reference_logprobs(
    model: &Model,
    reference: &[f64],
    pair: &PreferencePair,
) -> Result<(f64, f64)> {
    let prefix = pair.query.with_bos();
    Ok((
        model.sequence_logprob(reference, &prefix, &pair.preferred)?,
        model.sequence_logprob(reference, &prefix, &pair.dispreferred)?,
    ))
}

pub fn implicit_reward(
    model: &Model,
    policy: &[f64],
    reference: &[f64],
    x: &TokenSequence,
    y: &TokenSequence,
    beta: f64,
) -> Result<ImplicitReward> {
    check_beta(beta)?;
    let prefix = x.with_bos();
    let p = model.sequence_logprob(policy, &prefix, y)?;
    let r = model.sequence_logprob(reference, &prefix, y)?;
    Ok(ImplicitReward(beta * (p - r)))
}

fn pair_rewards(
    model: &Model,
    policy: &[f64],
    reference: &[f64],
    pair: &PreferencePair,
    beta: f64,
) -> Result<(ImplicitReward, ImplicitReward)> {
    check_beta(beta)?;
    Ok(PairLogprobs::compute(model, policy, reference, pair)?.rewards(beta))
}

pub fn dpo_from_rewards(r_w: ImplicitReward, r_l: ImplicitReward) -> f64 {
    -math::log_sigmoid(r_w.0 - r_l.0)
}

pub fn inner_from_rewards(r_w: ImplicitReward, r_l: ImplicitReward, w: &BalancedWeights) -> f64 {
    -math::log_sigmoid(r_w.0 * w.lambda_w - r_l.0 * w.lambda_l)
}

/// `σ(r_l − r_w) / σ(λ_l r_l − λ_w r_w)`, evaluated as a difference of log-sigmoids.
pub fn scaling_factor(
    r_w: ImplicitReward,
    r_l: ImplicitReward,
    weights: &BalancedWeights,
) -> Result<f64> {
    if !r_w.0.is_finite() || !r_l.0.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-finite rewards ({}, {})",
            r_w.0, r_l.0
        )));
    }
    check_weights(weights)?;
    let num = math::log_sigmoid(r_l.0 - r_w.0);
    let den = math::log_sigmoid(r_l.0 * weights.lambda_l - r_w.0 * weights.lambda_w);
    Ok(math::exp(num - den))
}

/// Loss of `variant` given the two rewards.
pub fn loss_from_rewards(
    variant: LossVariant,
    r_w: ImplicitReward,
    r_l: ImplicitReward,
    weights: &BalancedWeights,
) -> Result<f64> {
    Ok(match variant {
        LossVariant::Dpo => dpo_from_rewards(r_w, r_l),
        LossVariant::DpoBw => inner_from_rewards(r_w, r_l, weights),
        LossVariant::DpoSf => scaling_factor(r_w, r_l, weights)? * dpo_from_rewards(r_w, r_l),
        LossVariant::Bdpo => {
            scaling_factor(r_w, r_l, weights)? * inner_from_rewards(r_w, r_l, weights)
        }
    })
}

pub fn dpo_loss(
    model: &Model,
    policy: &[f64],
    reference: &[f64],
    pair: &PreferencePair,
    beta: f64,
) -> Result<f64> {
    let (w, l) = pair_rewards(model, policy, reference, pair, beta)?;
    Ok(dpo_from_rewards(w, l))
}

pub fn bdpo_inner_loss(
    model: &Model,
    policy: &[f64],
    reference: &[f64],
    pair: &PreferencePair,
    beta: f64,
    weights: &BalancedWeights,
) -> Result<f64> {
    check_weights(weights)?;
    let (w, l) = pair_rewards(model, policy, reference, pair, beta)?;
    Ok(inner_from_rewards(w, l, weights))
}

pub fn bdpo_loss(
    model: &Model,
    policy: &[f64],
    reference: &[f64],
    pair: &PreferencePair,
    beta: f64,
    weights: &BalancedWeights,
) -> Result<f64> {
    variant_loss(
        LossVariant::Bdpo,
        model,
        policy,
        reference,
        pair,
        beta,
        weights,
    )
}

pub fn variant_loss(
    variant: LossVariant,
    model: &Model,
    policy: &[f64],
    reference: &[f64],
    pair: &PreferencePair,
    beta: f64,
    weights: &BalancedWeights,
) -> Result<f64> {
    check_weights(weights)?;
    let (w, l) = pair_rewards(model, policy, reference, pair, beta)?;
    loss_from_rewards(variant, w, l, weights)
}

/// How the scaling factor is treated when differentiating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorMode {
    /// Evaluated at the current parameters, excluded from differentiation.
    Frozen,
    /// Differentiated like any other term (the total derivative of the written
    /// expression). Only used to show that freezing matters.
    Differentiated,
}

/// Loss value and its adjoints with respect to the two policy log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossHead {
    pub loss: f64,
    pub d_policy_w: f64,
    pub d_policy_l: f64,
    pub reward_w: ImplicitReward,
    pub reward_l: ImplicitReward,
    /// Scaling factor applied to the loss; 1 for variants without one.
    pub factor: f64,
}

/// Reverse-mode evaluation of a variant's loss over the pair log-probabilities.
pub fn loss_head(
    variant: LossVariant,
    lp: &PairLogprobs,
    beta: f64,
    weights: &BalancedWeights,
    mode: FactorMode,
) -> Result<LossHead> {
    check_beta(beta)?;
    check_weights(weights)?;
    let mut t = Tape::new();
    let pw = t.input(lp.policy_w);
    let pl = t.input(lp.policy_l);
    let qw = t.input(lp.reference_w);
    let ql = t.input(lp.reference_l);
    let dw = t.sub(pw, qw);
    let dl = t.sub(pl, ql);
    let rw = t.scale(dw, beta);
    let rl = t.scale(dl, beta);

    let dpo_z = t.sub(rw, rl);
    let wrw = t.scale(rw, weights.lambda_w);
    let wrl = t.scale(rl, weights.lambda_l);
    let inner_z = t.sub(wrw, wrl);

    let base_z = if variant.uses_balanced_inner() {
        inner_z
    } else {
        dpo_z
    };
    let ls = t.log_sigmoid(base_z);
    let base = t.neg(ls);

    let (root, factor) = if variant.uses_scaling_factor() {
        let num_z = t.neg(dpo_z);
        let den_z = t.neg(inner_z);
        let num = t.log_sigmoid(num_z);
        let den = t.log_sigmoid(den_z);
        let log_f = t.sub(num, den);
        let f = t.exp(log_f);
        let f = match mode {
            FactorMode::Frozen => t.detach(f),
            FactorMode::Differentiated => f,
        };
        (t.mul(f, base), t.value(f))
    } else {
        (base, 1.0)
    };

    let adj = t.backward(root);
    Ok(LossHead {
        loss: t.value(root),
        d_policy_w: adj[pw.index()],
        d_policy_l: adj[pl.index()],
        reward_w: ImplicitReward(t.value(rw)),
        reward_l: ImplicitReward(t.value(rl)),
        factor,
    })
}

/// Loss value and full parameter gradient for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub head: LossHead,
    pub grad: Vec<f64>,
}

/// Gradient of a variant's loss, with the reference log-probabilities supplied
/// by the caller (they are constant during training).
#[allow(clippy::too_many_arguments)]
pub fn variant_gradient_with_reference(
    variant: LossVariant,
    model: &Model,
    policy: &[f64],
    reference_lp: (f64, f64),
    pair: &PreferencePair,
    beta: f64,
    weights: &BalancedWeights,
    mode: FactorMode,
) -> Result<LossGradient> {
    let prefix = pair.query.with_bos();
    let (lw, gw) = model.logprob_with_gradient(policy, &prefix, &pair.preferred)?;
    let (ll, gl) = model.logprob_with_gradient(policy, &prefix, &pair.dispreferred)?;
    let lp = PairLogprobs {
        policy_w: lw,
        policy_l: ll,
        reference_w: reference_lp.0,
        reference_l: reference_lp.1,
    };
    let head = loss_head(variant, &lp, beta, weights, mode)?;
    let grad = gw
        .iter()
        .zip(&gl)
        .map(|(a, b)| head.d_policy_w * a + head.d_policy_l * b)
        .collect();
    Ok(LossGradient { head, grad })
}

/// Implemented gradient of a variant's loss (scaling factor frozen).
pub fn variant_gradient(
    variant: LossVariant,
    model: &Model,
    policy: &[f64],
    reference: &[f64],
    pair: &PreferencePair,
    beta: f64,
    weights: &BalancedWeights,
) -> Result<LossGradient> {
    let r = reference_logprobs(model, reference, pair)?;
    variant_gradient_with_reference(
        variant,
        model,
        policy,
        r,
        pair,
        beta,
        weights,
        FactorMode::Frozen,
    )
}

/// Closed-form gradient of the balanced inner loss:
/// `−β σ(λ_l r_l − λ_w r_w) [λ_w ∇log π(y_w|x) − λ_l ∇log π(y_l|x)]`.
pub fn bdpo_inner_analytic_gradient(
    model: &Model,
    policy: &[f64],
    reference: &[f64],
    pair: &PreferencePair,
    beta: f64,
    weights: &BalancedWeights,
) -> Result<Vec<f64>> {
    Ok(analytic_parts(model, policy, reference, pair, beta, weights)?.0)
}

/// Closed-form balanced-loss gradient: the inner gradient times the frozen
/// scaling factor.
pub fn bdpo_analytic_gradient(
    model: &Model,
    policy: &[f64],
    reference: &[f64],
    pair: &PreferencePair,
    beta: f64,
    weights: &BalancedWeights,
) -> Result<Vec<f64>> {
    let (mut g, factor) = analytic_parts(model, policy, reference, pair, beta, weights)?;
    for v in &mut g {
        *v *= factor;
    }
    Ok(g)
}

fn analytic_parts(
    model: &Model,
    policy: &[f64],
    reference: &[f64],
    pair: &PreferencePair,
    beta: f64,
    weights: &BalancedWeights,
) -> Result<(Vec<f64>, f64)> {
    check_beta(beta)?;
    check_weights(weights)?;
    let prefix = pair.query.with_bos();
    let (lw, gw) = model.logprob_with_gradient(policy, &prefix, &pair.preferred)?;
    let (ll, gl) = model.logprob_with_gradient(policy, &prefix, &pair.dispreferred)?;
    let (qw, ql) = reference_logprobs(model, reference, pair)?;
    let r_w = beta * (lw - qw);
    let r_l = beta * (ll - ql);
    let strength = math::sigmoid(weights.lambda_l * r_l - weights.lambda_w * r_w);
    let c = -beta * strength;
    let mut g = vec![0.0; gw.len()];
    for ((o, a), b) in g.iter_mut().zip(&gw).zip(&gl) {
        *o = c * (weights.lambda_w * a - weights.lambda_l * b);
    }
    let factor = scaling_factor(ImplicitReward(r_w), ImplicitReward(r_l), weights)?;
    Ok((g, factor))
}
