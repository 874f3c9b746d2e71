use sha2::{Digest, Sha256};

use super::Embedder;
use crate::error::{Error, Result};
use crate::text_metrics::{token_sequence, EmbeddingVector};

/// Model id of the offline embedding. It is a bag of hashed features, not a
/// semantic embedding.
pub const HASH_EMBED_MODEL: &str = "hash-embed-v1";
pub const HASH_EMBED_DIM: usize = 256;

/// Deterministic feature-hashing embedding over word unigrams and character
/// trigrams.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashEmbedder;

fn bucket(feature: &str) -> usize {
    let digest = Sha256::digest(feature.as_bytes());
    let word = u64::from_le_bytes(digest[..8].try_into().unwrap());
    (word % HASH_EMBED_DIM as u64) as usize
}

impl HashEmbedder {
    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut values = vec![0.0; HASH_EMBED_DIM];
        for token in token_sequence(text) {
            values[bucket(&format!("w:{token}"))] += 1.0;
        }
        let padded: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
        for window in padded.windows(3) {
            let gram: String = window.iter().collect();
            values[bucket(&format!("c:{gram}"))] += 0.5;
        }
        values
    }
}

impl Embedder for HashEmbedder {
    fn backend_id(&self) -> String {
        HASH_EMBED_MODEL.to_string()
    }

    fn embed(&self, text: &str, model_id: &str) -> Result<EmbeddingVector> {
        if model_id != HASH_EMBED_MODEL {
            return Err(Error::UnsupportedModel(model_id.to_string()));
        }
        if text.is_empty() {
            return Err(Error::Precondition("cannot embed empty text".into()));
        }
        EmbeddingVector::new(self.vector(text), HASH_EMBED_MODEL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text_metrics::cosine_similarity;

    #[test]
    fn deterministic_and_distinguishing() {
        let e = HashEmbedder;
        let a = e.embed("abc", HASH_EMBED_MODEL).unwrap();
        assert_eq!(a, e.embed("abc", HASH_EMBED_MODEL).unwrap());
        assert_ne!(a, e.embed("abd", HASH_EMBED_MODEL).unwrap());
        assert_eq!(a.len(), HASH_EMBED_DIM);
    }

    #[test]
    fn identical_text_has_unit_cosine() {
        let e = HashEmbedder;
        let a = e
            .embed("write two AI startup ideas", HASH_EMBED_MODEL)
            .unwrap();
        let b = e
            .embed("write two AI startup ideas", HASH_EMBED_MODEL)
            .unwrap();
        assert!((cosine_similarity(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        // Punctuation-only text still has non-zero norm via trigrams.
        assert!(e.vector("!!").iter().any(|v| *v > 0.0));
    }

    #[test]
    fn other_models_unsupported() {
        assert!(matches!(
            HashEmbedder.embed("x", "text-embedding-ada-002"),
            Err(Error::UnsupportedModel(_))
        ));
    }
}
