//! Hashed bag-of-n-gram features over token streams.

use alloc::vec::Vec;

use crate::lexer::Token;
use crate::math;
use crate::rng::fnv1a;

pub const DEFAULT_FEATURE_DIM: usize = 256;

const UNIGRAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const BIGRAM_SALT: u64 = 0x517c_c1b7_2722_0a95;

/// Token 1-grams and 2-grams hashed into `dim - 1` buckets with a fixed
/// salt, counts L2-normalized, and a constant bias feature appended so the
/// vector never has zero norm. Whitespace and comments are dropped.
pub fn extract_features(tokens: &[Token], dim: usize) -> Vec<f64> {
    assert!(dim >= 2, "feature dim must leave room for the bias");
    let buckets = dim - 1;
    let mut counts = alloc::vec![0.0f64; buckets];

    let texts: Vec<&str> = tokens
        .iter()
        .filter(|t| t.is_significant())
        .map(|t| t.text.as_str())
        .collect();

    for w in &texts {
        let h = fnv1a(w.as_bytes(), UNIGRAM_SALT);
        counts[(h % buckets as u64) as usize] += 1.0;
    }
    for pair in texts.windows(2) {
        let mut h = fnv1a(pair[0].as_bytes(), BIGRAM_SALT);
        h = fnv1a(&[0x1f], h); // unit separator between the two grams
        h = fnv1a(pair[1].as_bytes(), h);
        counts[(h % buckets as u64) as usize] += 1.0;
    }

    let norm = math::norm(&counts);
    if norm > 0.0 {
        for c in &mut counts {
            *c /= norm;
        }
    }
    counts.push(1.0);
    counts
}
