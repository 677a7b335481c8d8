//! The temporal mistake detector: projected step features with sinusoidal
//! positions, a dual-stream temporal attention with a learnable distance
//! prior, cross-attention to prompt tokens, and a linear per-step head.

mod checkpoint;
mod net;
mod prompt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{NumericsError, Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use net::{
    classify, forward, positional_encoding, semantic_alignment, temporal_context, ForwardTrace,
    ForwardVars, SemanticVars, TemporalVars, LAYER_NORM_EPS,
};
pub use prompt::{embed_prompts, token_vector, tokenize, PromptEmbedding};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("prompt has no tokens")]
    EmptyPrompt,
    #[error("{what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("episode has no valid steps")]
    NoValidSteps,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    /// Global and causal streams fused by the learned gate.
    #[default]
    Dual,
    /// Causal stream removed; the gate is fixed fully open on the global
    /// stream.
    GlobalOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub d_model: usize,
    pub prompt_seed: u64,
    pub init_seed: u64,
    pub temporal: TemporalMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            d_model: 32,
            prompt_seed: 0,
            init_seed: 0,
            temporal: TemporalMode::Dual,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.feature_dim == 0 || self.d_model == 0 {
            return Err(ModelError::Config("feature_dim and d_model must be positive".into()));
        }
        Ok(())
    }
}

pub const PARAM_NAMES: [&str; 14] = [
    "w_in", "w_q_time", "w_k_time", "w_v_time", "gamma", "beta", "alpha", "w_q", "w_k", "w_v",
    "ln_gain", "ln_bias", "w_out", "b_out",
];

/// Every learnable array of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub w_in: Tensor,
    pub w_q_time: Tensor,
    pub w_k_time: Tensor,
    pub w_v_time: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub alpha: Tensor,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

/// Parameter leaves bound to one tape.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub mode: TemporalMode,
    pub w_in: Var,
    pub w_q_time: Var,
    pub w_k_time: Var,
    pub w_v_time: Var,
    pub gamma: Var,
    pub beta: Var,
    pub alpha: Var,
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub ln_gain: Var,
    pub ln_bias: Var,
    pub w_out: Var,
    pub b_out: Var,
}

impl ParamVars {
    pub fn vars(&self) -> [Var; 14] {
        [
            self.w_in,
            self.w_q_time,
            self.w_k_time,
            self.w_v_time,
            self.gamma,
            self.beta,
            self.alpha,
            self.w_q,
            self.w_k,
            self.w_v,
            self.ln_gain,
            self.ln_bias,
            self.w_out,
            self.b_out,
        ]
    }
}

impl ModelParams {
    /// Weights uniform in `±1/sqrt(d)`, prior `γ = 0.1, β = 0`, gate `α = 0`,
    /// identity layer norm, zero output bias.
    pub fn init(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (fd, d) = (config.feature_dim, config.d_model);
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut uniform = |rows, cols| Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound));
        Ok(Self {
            w_in: uniform(fd, d),
            w_q_time: uniform(d, d),
            w_k_time: uniform(d, d),
            w_v_time: uniform(d, d),
            gamma: Tensor::scalar(0.1),
            beta: Tensor::scalar(0.0),
            alpha: Tensor::scalar(0.0),
            w_q: uniform(d, d),
            w_k: uniform(d, d),
            w_v: uniform(d, d),
            ln_gain: Tensor::filled(1, d, 1.0),
            ln_bias: Tensor::zeros(1, d),
            w_out: uniform(d, 1),
            b_out: Tensor::scalar(0.0),
            config,
        })
    }

    pub fn tensors(&self) -> [&Tensor; 14] {
        [
            &self.w_in,
            &self.w_q_time,
            &self.w_k_time,
            &self.w_v_time,
            &self.gamma,
            &self.beta,
            &self.alpha,
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.ln_gain,
            &self.ln_bias,
            &self.w_out,
            &self.b_out,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 14] {
        [
            &mut self.w_in,
            &mut self.w_q_time,
            &mut self.w_k_time,
            &mut self.w_v_time,
            &mut self.gamma,
            &mut self.beta,
            &mut self.alpha,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.ln_gain,
            &mut self.ln_bias,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    /// `(name, tensor)` in registry order.
    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        PARAM_NAMES.into_iter().zip(self.tensors())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Shapes the registry expects for `config`.
    pub fn expected_shapes(config: &ModelConfig) -> [(usize, usize); 14] {
        let (fd, d) = (config.feature_dim, config.d_model);
        [
            (fd, d),
            (d, d),
            (d, d),
            (d, d),
            (1, 1),
            (1, 1),
            (1, 1),
            (d, d),
            (d, d),
            (d, d),
            (1, d),
            (1, d),
            (d, 1),
            (1, 1),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        let [w_in, w_q_time, w_k_time, w_v_time, gamma, beta, alpha, w_q, w_k, w_v, ln_gain, ln_bias, w_out, b_out] =
            self.tensors().map(|t| tape.leaf(t.clone()));
        ParamVars {
            mode: self.config.temporal,
            w_in,
            w_q_time,
            w_k_time,
            w_v_time,
            gamma,
            beta,
            alpha,
            w_q,
            w_k,
            w_v,
            ln_gain,
            ln_bias,
            w_out,
            b_out,
        }
    }

    /// Runs the network on one unpadded episode and returns every
    /// intermediate.
    pub fn trace(&self, features: &Tensor, prompt: &PromptEmbedding) -> Result<ForwardTrace, ModelError> {
        let valid = vec![true; features.rows()];
        self.trace_masked(features, prompt, &valid)
    }

    pub fn trace_masked(
        &self,
        features: &Tensor,
        prompt: &PromptEmbedding,
        valid: &[bool],
    ) -> Result<ForwardTrace, ModelError> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let out = forward(&mut tape, &p, features, prompt, valid)?;
        Ok(out.trace(&tape))
    }

    /// Per-step logits.
    pub fn logits(&self, features: &Tensor, prompt: &PromptEmbedding) -> Result<Vec<f64>, ModelError> {
        Ok(self.trace(features, prompt)?.logits)
    }

    /// Per-step mistake probabilities.
    pub fn predict(&self, features: &Tensor, prompt: &PromptEmbedding) -> Result<Vec<f64>, ModelError> {
        Ok(self
            .logits(features, prompt)?
            .into_iter()
            .map(sigmoid)
            .collect())
    }

    /// Prompt embedding in this model's width and seed.
    pub fn embed(&self, task_prompt: &str, mistake_prompt: &str) -> Result<PromptEmbedding, ModelError> {
        embed_prompts(task_prompt, mistake_prompt, self.config.d_model, self.config.prompt_seed)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
