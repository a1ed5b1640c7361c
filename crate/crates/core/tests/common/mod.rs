#![allow(dead_code)]

use bdpo_core::{Model, ModelConfig, PreferencePair, SafetyLabel, TokenSequence};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small random model with parameters spread wider than the default init.
pub fn random_model(r: &mut ChaCha8Rng, max_vocab: usize, window: usize) -> (Model, Vec<f64>) {
    let config = ModelConfig {
        vocab_size: r.gen_range(2..=max_vocab),
        embed_dim: r.gen_range(1..=4),
        context_window: window,
        hidden_dim: r.gen_range(1..=5),
        seed: r.gen(),
    };
    let model = Model::new(config).unwrap();
    let spread = r.gen_range(0.5..3.0);
    let params = model
        .init_params()
        .into_values()
        .into_iter()
        .map(|v| v * spread)
        .collect();
    (model, params)
}

/// Random body tokens (never BOS) with a length drawn from `lo..=hi`.
pub fn random_tokens(r: &mut ChaCha8Rng, vocab_size: usize, lo: usize, hi: usize) -> TokenSequence {
    let len = r.gen_range(lo..=hi);
    TokenSequence::new(
        (0..len)
            .map(|_| r.gen_range(1..vocab_size as u32))
            .collect(),
    )
}

pub fn random_pair(
    r: &mut ChaCha8Rng,
    vocab_size: usize,
    max_len: usize,
    id: &str,
) -> PreferencePair {
    loop {
        let q = random_tokens(r, vocab_size, 1, max_len);
        let w = random_tokens(r, vocab_size, 1, max_len);
        let l = random_tokens(r, vocab_size, 1, max_len);
        if w != l {
            return PreferencePair::new(
                id.to_string(),
                q,
                w,
                l,
                SafetyLabel::from_is_safe(r.gen()),
            )
            .unwrap();
        }
    }
}

/// Next-token distribution evaluated straight from the model definition:
/// `softmax(U tanh(b + Σ_k M_k E[c_{n-1-k}]) + o)`.
pub fn naive_distribution(config: &ModelConfig, params: &[f64], context: &[u32]) -> Vec<f64> {
    let (v, d, w, h) = (
        config.vocab_size,
        config.embed_dim,
        config.context_window,
        config.hidden_dim,
    );
    let e0 = 0;
    let m0 = e0 + v * d;
    let b0 = m0 + w * h * d;
    let u0 = b0 + h;
    let o0 = u0 + v * h;
    assert_eq!(o0 + v, params.len());
    let n = context.len();
    let mut hidden = vec![0.0; h];
    for j in 0..h {
        let mut s = params[b0 + j];
        for k in 0..n {
            let tok = context[n - 1 - k] as usize;
            for i in 0..d {
                s += params[m0 + k * h * d + j * d + i] * params[e0 + tok * d + i];
            }
        }
        hidden[j] = s.tanh();
    }
    let logits: Vec<f64> = (0..v)
        .map(|a| {
            params[o0 + a]
                + (0..h)
                    .map(|j| params[u0 + a * h + j] * hidden[j])
                    .sum::<f64>()
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = ex.iter().sum();
    ex.into_iter().map(|e| e / z).collect()
}

/// Mean over positions of `-Σ_v p log p`, teacher-forced on `y` after `prefix`.
pub fn naive_entropy(config: &ModelConfig, params: &[f64], prefix: &[u32], y: &[u32]) -> f64 {
    let mut ctx = prefix.to_vec();
    let mut total = 0.0;
    for &t in y {
        let p = naive_distribution(config, params, &ctx);
        let mut hstep = 0.0;
        for pv in p {
            if pv > 0.0 {
                hstep -= pv * pv.ln();
            }
        }
        total += hstep;
        ctx.push(t);
    }
    total / y.len() as f64
}

pub fn naive_logprob(config: &ModelConfig, params: &[f64], prefix: &[u32], y: &[u32]) -> f64 {
    let mut ctx = prefix.to_vec();
    let mut total = 0.0;
    for &t in y {
        total += naive_distribution(config, params, &ctx)[t as usize].ln();
        ctx.push(t);
    }
    total
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}
