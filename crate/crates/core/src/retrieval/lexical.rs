use crate::Scalar;

use super::{EmbeddingProvider, ProviderError};

pub const DEFAULT_LEXICAL_DIMENSION: usize = 4096;

/// Deterministic offline provider: L2-normalized term frequencies over a
/// hash-bucketed vocabulary of case-folded alphanumeric tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LexicalEmbedder {
    dimension: usize,
}

impl LexicalEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        LexicalEmbedder { dimension }
    }
}

impl Default for LexicalEmbedder {
    fn default() -> Self {
        LexicalEmbedder::new(DEFAULT_LEXICAL_DIMENSION)
    }
}

impl<S: Scalar> EmbeddingProvider<S> for LexicalEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<S>, ProviderError> {
        Ok(lexical_embed(text, self.dimension))
    }
}

pub(crate) fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

// FNV-1a, 64 bit
fn bucket(token: &str, dimension: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    (h % dimension as u64) as usize
}

/// Raw (unnormalized) term-frequency counts per bucket.
pub(crate) fn term_counts(text: &str, dimension: usize) -> Vec<usize> {
    let mut counts = vec![0usize; dimension];
    for t in tokens(text) {
        counts[bucket(&t, dimension)] += 1;
    }
    counts
}

pub fn lexical_embed<S: Scalar>(text: &str, dimension: usize) -> Vec<S> {
    let counts = term_counts(text, dimension);
    let norm = counts.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
    counts
        .into_iter()
        .map(|c| {
            if norm == 0.0 {
                S::zero()
            } else {
                S::from_f64_lossy(c as f64 / norm)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::dot;

    #[test]
    fn repeated_token_doubles_weight() {
        let once = term_counts("a b", 64);
        let twice = term_counts("a a b", 64);
        let a = bucket("a", 64);
        assert_eq!(twice[a], 2 * once[a]);
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let v: Vec<f64> = lexical_embed("", 32);
        assert!(v.iter().all(|&x| x == 0.0));
        let v: Vec<f64> = lexical_embed("?!", 32);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn word_order_does_not_matter() {
        let a: Vec<f64> = lexical_embed("train seat", DEFAULT_LEXICAL_DIMENSION);
        let b: Vec<f64> = lexical_embed("Seat, TRAIN", DEFAULT_LEXICAL_DIMENSION);
        assert!((dot(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalized() {
        let v: Vec<f32> = lexical_embed("one two two three", 128);
        let n: f32 = dot(&v, &v);
        assert!((n - 1.0).abs() < 1e-6);
    }
}
