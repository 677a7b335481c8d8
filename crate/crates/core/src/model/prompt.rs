use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::ModelError;
use crate::numerics::Tensor;

/// Token embeddings of the task and mistake prompts.
///
/// Every token maps to a fixed pseudo-random unit vector derived from a
/// hash of the token string, so equal tokens share a row and the matrix
/// carries no positional information.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptEmbedding {
    pub tokens: Vec<String>,
    pub matrix: Tensor,
}

pub fn tokenize(prompt: &str) -> Vec<String> {
    prompt.split_whitespace().map(str::to_lowercase).collect()
}

pub fn token_vector(token: &str, d: usize, seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn embed_prompts(
    task_prompt: &str,
    mistake_prompt: &str,
    d: usize,
    seed: u64,
) -> Result<PromptEmbedding, ModelError> {
    if d == 0 {
        return Err(ModelError::Config("model width must be positive".into()));
    }
    let mut tokens = tokenize(task_prompt);
    let mistake = tokenize(mistake_prompt);
    if tokens.is_empty() || mistake.is_empty() {
        return Err(ModelError::EmptyPrompt);
    }
    tokens.extend(mistake);
    let rows: Vec<Vec<f64>> = tokens.iter().map(|t| token_vector(t, d, seed)).collect();
    Ok(PromptEmbedding {
        matrix: Tensor::from_rows(&rows)?,
        tokens,
    })
}

impl PromptEmbedding {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: &str = "robot NOT IN lion AND green ball";
    const M: &str = "robot IN lion AND green ball";

    #[test]
    fn mutex_prompts_give_thirteen_rows() {
        let e = embed_prompts(P, M, 32, 0).unwrap();
        assert_eq!(e.len(), 13);
        assert_eq!(e.matrix.shape(), (13, 32));
        assert_eq!(e.tokens[1], "not");
        // "robot" at positions 0 and 7 shares one vector
        assert_eq!(e.matrix.row(0), e.matrix.row(7));
        assert_eq!(e, embed_prompts(P, M, 32, 0).unwrap());
        for r in 0..13 {
            let n: f64 = e.matrix.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn case_is_ignored() {
        assert_eq!(token_vector("lion", 16, 3), tokenize("LION").iter().map(|t| token_vector(t, 16, 3)).next().unwrap());
    }

    #[test]
    fn unrelated_tokens_are_nearly_orthogonal() {
        let e = embed_prompts("alpha beta gamma delta", "one two three four five", 32, 9).unwrap();
        let mut total = 0.0;
        let mut pairs = 0;
        for i in 0..4 {
            for j in 4..9 {
                let c: f64 = e.matrix.row(i).iter().zip(e.matrix.row(j)).map(|(a, b)| a * b).sum();
                total += c.abs();
                pairs += 1;
            }
        }
        assert!(total / (pairs as f64) < 0.5);
    }

    #[test]
    fn empty_prompt_rejected() {
        assert!(matches!(embed_prompts("   ", M, 8, 0), Err(ModelError::EmptyPrompt)));
        assert!(matches!(embed_prompts(P, "", 8, 0), Err(ModelError::EmptyPrompt)));
    }
}
