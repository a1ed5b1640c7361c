//! Fixed-window neural autoregressive model.
//!
//! For a context `c` of length `n` (at most `context_window`, always starting
//! with the begin-of-sequence token) the next-token distribution is
//!
//! ```text
//! pre_j   = b_j + Σ_{k<n} Σ_i M[k][j][i] · E[c_{n-1-k}][i]
//! h_j     = tanh(pre_j)
//! logit_v = o_v + Σ_j U[v][j] · h_j
//! p       = softmax(logit)
//! ```
//!
//! `k` counts backwards from the most recent token, so a shorter context
//! simply uses fewer mixing slots; there is no padding token.

use core::ops::{Deref, Range};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math;
use crate::vocab::{TokenSequence, BOS_ID, MAX_VOCAB};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub context_window: usize,
    pub hidden_dim: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("context_window", self.context_window),
            ("hidden_dim", self.hidden_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.vocab_size < 2 || self.vocab_size > MAX_VOCAB {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} outside [2, {MAX_VOCAB}]",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// Offsets of the named parameter blocks inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub embeddings: Range<usize>,
    pub mixing: Range<usize>,
    pub hidden_bias: Range<usize>,
    pub output: Range<usize>,
    pub output_bias: Range<usize>,
}

impl ParamLayout {
    pub fn for_config(c: &ModelConfig) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let embeddings = take(c.vocab_size * c.embed_dim);
        let mixing = take(c.context_window * c.hidden_dim * c.embed_dim);
        let hidden_bias = take(c.hidden_dim);
        let output = take(c.vocab_size * c.hidden_dim);
        let output_bias = take(c.vocab_size);
        Self {
            embeddings,
            mixing,
            hidden_bias,
            output,
            output_bias,
        }
    }

    pub fn len(&self) -> usize {
        self.output_bias.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Trainable parameters of the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    values: Vec<f64>,
}

impl PolicyParameters {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Freezes a copy of these parameters as a reference model.
    pub fn snapshot(&self) -> ReferenceSnapshot {
        ReferenceSnapshot {
            values: self.values.clone().into_boxed_slice(),
        }
    }
}

impl Deref for PolicyParameters {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Frozen parameters serving as the reference model. Immutable once created.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSnapshot {
    values: alloc::boxed::Box<[f64]>,
}

impl ReferenceSnapshot {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Hex SHA-256 over the little-endian bytes of the parameter vector.
    pub fn fingerprint(&self) -> alloc::string::String {
        fingerprint(&self.values)
    }

    /// A trainable copy, used when fine-tuning starts from the reference.
    pub fn to_policy(&self) -> PolicyParameters {
        PolicyParameters {
            values: self.values.to_vec(),
        }
    }
}

impl Deref for ReferenceSnapshot {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

pub fn fingerprint(values: &[f64]) -> alloc::string::String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Intermediate values of one next-token evaluation, kept for the backward pass.
#[derive(Debug, Clone)]
struct StepCache {
    hidden: Vec<f64>,
    logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layout: ParamLayout,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            layout: ParamLayout::for_config(&config),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// Deterministic initialization from `config.seed`. Each block is drawn
    /// uniformly from a symmetric interval scaled by its fan-in.
    pub fn init_params(&self) -> PolicyParameters {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut values = vec![0.0; self.layout.len()];
        let blocks = [
            (self.layout.embeddings.clone(), 1.0),
            (
                self.layout.mixing.clone(),
                1.0 / math::sqrt(c.embed_dim as f64),
            ),
            (self.layout.hidden_bias.clone(), 0.1),
            (
                self.layout.output.clone(),
                1.0 / math::sqrt(c.hidden_dim as f64),
            ),
            (self.layout.output_bias.clone(), 0.1),
        ];
        for (range, scale) in blocks {
            for v in &mut values[range] {
                *v = rng.gen_range(-scale..scale);
            }
        }
        PolicyParameters { values }
    }

    /// Wraps a raw vector after checking its length and finiteness.
    pub fn params_from_values(&self, values: Vec<f64>) -> Result<PolicyParameters> {
        self.check_params(&values)?;
        Ok(PolicyParameters { values })
    }

    pub fn check_params(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.layout.len() {
            return Err(Error::LayoutMismatch {
                expected: self.layout.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParameter(i));
        }
        Ok(())
    }

    fn check_len(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.layout.len() {
            return Err(Error::LayoutMismatch {
                expected: self.layout.len(),
                got: params.len(),
            });
        }
        Ok(())
    }

    fn check_context(&self, context: &[u32]) -> Result<()> {
        if context.first() != Some(&BOS_ID) {
            return Err(Error::MissingBos);
        }
        if context.len() > self.config.context_window {
            return Err(Error::ContextOverflow {
                len: context.len(),
                window: self.config.context_window,
            });
        }
        for &id in &context[1..] {
            if id as usize >= self.config.vocab_size {
                return Err(Error::InvalidToken {
                    id,
                    vocab_size: self.config.vocab_size,
                });
            }
            if id == BOS_ID {
                return Err(Error::UnexpectedBos);
            }
        }
        Ok(())
    }

    fn check_prefix_target(&self, prefix: &[u32], target: &[u32]) -> Result<()> {
        if target.is_empty() {
            return Err(Error::EmptySequence);
        }
        let total = prefix.len() + target.len();
        if total > self.config.context_window {
            return Err(Error::ContextOverflow {
                len: total,
                window: self.config.context_window,
            });
        }
        self.check_context(prefix)?;
        TokenSequence::new(target.to_vec()).validate_body(self.config.vocab_size)
    }

    fn forward(&self, params: &[f64], context: &[u32]) -> StepCache {
        let c = &self.config;
        let (d, h_dim, v_dim) = (c.embed_dim, c.hidden_dim, c.vocab_size);
        let emb = &params[self.layout.embeddings.clone()];
        let mix = &params[self.layout.mixing.clone()];
        let mut pre = params[self.layout.hidden_bias.clone()].to_vec();
        let n = context.len();
        for k in 0..n {
            let tok = context[n - 1 - k] as usize;
            let e = &emb[tok * d..(tok + 1) * d];
            let m_k = &mix[k * h_dim * d..(k + 1) * h_dim * d];
            for (j, p) in pre.iter_mut().enumerate() {
                let row = &m_k[j * d..(j + 1) * d];
                *p += row.iter().zip(e).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let hidden: Vec<f64> = pre.iter().map(|&x| libm::tanh(x)).collect();
        let out = &params[self.layout.output.clone()];
        let out_bias = &params[self.layout.output_bias.clone()];
        let mut logits: Vec<f64> = (0..v_dim)
            .map(|v| {
                let row = &out[v * h_dim..(v + 1) * h_dim];
                out_bias[v] + row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let lse = math::log_sum_exp(&logits);
        for l in &mut logits {
            *l -= lse;
        }
        StepCache {
            hidden,
            logprobs: logits,
        }
    }

    /// Backpropagates `upstream · ∂ log p(target | context)` into `grad`.
    fn backward(
        &self,
        params: &[f64],
        context: &[u32],
        cache: &StepCache,
        target: u32,
        upstream: f64,
        grad: &mut [f64],
    ) {
        let c = &self.config;
        let (d, h_dim, v_dim) = (c.embed_dim, c.hidden_dim, c.vocab_size);
        let out = &params[self.layout.output.clone()];

        // d logp_target / d logit_v = [v == target] - p_v
        let dlogits: Vec<f64> = (0..v_dim)
            .map(|v| {
                let ind = if v as u32 == target { 1.0 } else { 0.0 };
                upstream * (ind - math::exp(cache.logprobs[v]))
            })
            .collect();

        let mut dhidden = vec![0.0; h_dim];
        {
            let (ob_start, o_start) = (self.layout.output_bias.start, self.layout.output.start);
            for (v, &dl) in dlogits.iter().enumerate() {
                grad[ob_start + v] += dl;
                let row = &out[v * h_dim..(v + 1) * h_dim];
                let grow = &mut grad[o_start + v * h_dim..o_start + (v + 1) * h_dim];
                for j in 0..h_dim {
                    grow[j] += dl * cache.hidden[j];
                    dhidden[j] += dl * row[j];
                }
            }
        }

        let dpre: Vec<f64> = dhidden
            .iter()
            .zip(&cache.hidden)
            .map(|(dh, h)| dh * (1.0 - h * h))
            .collect();
        let hb = self.layout.hidden_bias.start;
        for (j, dp) in dpre.iter().enumerate() {
            grad[hb + j] += dp;
        }

        let emb = &params[self.layout.embeddings.clone()];
        let mix = &params[self.layout.mixing.clone()];
        let (e_start, m_start) = (self.layout.embeddings.start, self.layout.mixing.start);
        let n = context.len();
        for k in 0..n {
            let tok = context[n - 1 - k] as usize;
            for (j, &dp) in dpre.iter().enumerate() {
                if dp == 0.0 {
                    continue;
                }
                let base = k * h_dim * d + j * d;
                for i in 0..d {
                    grad[m_start + base + i] += dp * emb[tok * d + i];
                    grad[e_start + tok * d + i] += dp * mix[base + i];
                }
            }
        }
    }

    /// Log-probabilities of the next token after `context`.
    pub fn next_token_logprobs(&self, params: &[f64], context: &TokenSequence) -> Result<Vec<f64>> {
        self.check_len(params)?;
        self.check_context(context.ids())?;
        Ok(self.forward(params, context.ids()).logprobs)
    }

    /// Next-token probability vector after `context`.
    pub fn next_token_distribution(
        &self,
        params: &[f64],
        context: &TokenSequence,
    ) -> Result<Vec<f64>> {
        Ok(self
            .next_token_logprobs(params, context)?
            .into_iter()
            .map(math::exp)
            .collect())
    }

    /// `Σ_t log P(target_t | prefix ⊕ target_{<t})`, not length-normalized.
    pub fn sequence_logprob(
        &self,
        params: &[f64],
        prefix: &TokenSequence,
        target: &TokenSequence,
    ) -> Result<f64> {
        self.check_len(params)?;
        self.check_prefix_target(prefix.ids(), target.ids())?;
        let mut ctx = prefix.ids().to_vec();
        let mut total = 0.0;
        for &tok in target.ids() {
            total += self.forward(params, &ctx).logprobs[tok as usize];
            ctx.push(tok);
        }
        Ok(total)
    }

    /// Adds `scale · ∇ sequence_logprob` into `grad` and returns the log-probability.
    pub fn accumulate_logprob_gradient(
        &self,
        params: &[f64],
        prefix: &TokenSequence,
        target: &TokenSequence,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_len(params)?;
        self.check_len(grad)?;
        self.check_prefix_target(prefix.ids(), target.ids())?;
        let mut ctx = prefix.ids().to_vec();
        let mut total = 0.0;
        for &tok in target.ids() {
            let cache = self.forward(params, &ctx);
            total += cache.logprobs[tok as usize];
            if scale != 0.0 {
                self.backward(params, &ctx, &cache, tok, scale, grad);
            }
            ctx.push(tok);
        }
        Ok(total)
    }

    /// Exact reverse-mode gradient of [`Model::sequence_logprob`].
    pub fn logprob_gradient(
        &self,
        params: &[f64],
        prefix: &TokenSequence,
        target: &TokenSequence,
    ) -> Result<Vec<f64>> {
        Ok(self.logprob_with_gradient(params, prefix, target)?.1)
    }

    pub fn logprob_with_gradient(
        &self,
        params: &[f64],
        prefix: &TokenSequence,
        target: &TokenSequence,
    ) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.layout.len()];
        let lp = self.accumulate_logprob_gradient(params, prefix, target, 1.0, &mut grad)?;
        Ok((lp, grad))
    }

    /// Entropy in nats of every next-token distribution along `prefix ⊕ target`,
    /// teacher-forced on `target`.
    pub(crate) fn step_entropies(
        &self,
        params: &[f64],
        prefix: &TokenSequence,
        target: &TokenSequence,
    ) -> Result<Vec<f64>> {
        self.check_len(params)?;
        self.check_prefix_target(prefix.ids(), target.ids())?;
        let mut ctx = prefix.ids().to_vec();
        let mut out = Vec::with_capacity(target.len());
        for &tok in target.ids() {
            out.push(math::entropy_from_logprobs(
                &self.forward(params, &ctx).logprobs,
            ));
            ctx.push(tok);
        }
        Ok(out)
    }
}

/// Convenience wrapper: validates the config and draws parameters from its seed.
pub fn init_params(config: ModelConfig) -> Result<PolicyParameters> {
    Ok(Model::new(config)?.init_params())
}
