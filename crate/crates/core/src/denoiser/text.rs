use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NULL_TOKEN: usize = 0;

/// Wraps a prompt in the fixed captioning template.
pub fn prompt_template(prompt: &str) -> Result<String> {
    if prompt.trim().is_empty() {
        return Err(Error::InvalidArgument("empty prompt".into()));
    }
    Ok(format!("A DSLR photo of {prompt}, 3d asset"))
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Prompt tokens and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedding {
    /// `[T, E]`
    pub tokens: Tensor,
    /// `[E]`
    pub pooled: Tensor,
}

/// Hash-bucket word embedder with a seeded random table. Row 0 is reserved
/// for the null prompt.
#[derive(Clone, Debug)]
pub struct ToyTextEncoder {
    table: Tensor,
}

impl ToyTextEncoder {
    pub const SEED: u64 = 0x7e47;

    pub fn new(vocab: usize, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(Self::SEED);
        Self {
            table: Tensor::randn(&[vocab.max(2), dim], 1.0, &mut rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn vocab(&self) -> usize {
        self.table.shape()[0]
    }

    /// Lower-cased alphanumeric words hashed into `1..vocab`.
    pub fn tokenize(&self, text: &str) -> Vec<(String, usize)> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| {
                let w = w.to_lowercase();
                let id = 1 + (fnv1a(&w) % (self.vocab() as u64 - 1)) as usize;
                (w, id)
            })
            .collect()
    }

    /// Tokens of the templated prompt.
    pub fn trace(&self, prompt: &str) -> Result<Vec<(String, usize)>> {
        Ok(self.tokenize(&prompt_template(prompt)?))
    }

    fn embed_ids(&self, ids: &[usize]) -> TextEmbedding {
        let e = self.dim();
        let mut tokens = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            tokens.extend_from_slice(&self.table.data()[id * e..(id + 1) * e]);
        }
        let mut pooled = vec![0.0; e];
        for row in tokens.chunks(e) {
            for (p, v) in pooled.iter_mut().zip(row) {
                *p += v;
            }
        }
        for p in &mut pooled {
            *p /= ids.len() as f64;
        }
        TextEmbedding {
            tokens: Tensor::from_parts(vec![ids.len(), e], tokens),
            pooled: Tensor::from_parts(vec![e], pooled),
        }
    }

    pub fn encode(&self, prompt: &str) -> Result<TextEmbedding> {
        let ids: Vec<usize> = self.trace(prompt)?.into_iter().map(|(_, id)| id).collect();
        Ok(self.embed_ids(&ids))
    }

    /// Unconditional embedding.
    pub fn null(&self) -> TextEmbedding {
        self.embed_ids(&[NULL_TOKEN])
    }
}
