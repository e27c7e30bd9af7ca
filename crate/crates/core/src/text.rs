//! Tokenization and stable hashing shared across the pipeline.

/// Lowercase, split on anything non-alphanumeric, drop empty tokens.
///
/// Every module that touches text (corpus stats, BM25, embeddings, TU docids)
/// goes through this one function so term spaces line up.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| s.to_lowercase())
        .collect()
}

/// FNV-1a 64-bit hash. Stable across platforms and releases, unlike the
/// std hasher, so seeds derived from it reproduce forever.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a per-item RNG seed from a base seed and a string tag.
pub fn mix_seed(base: u64, tag: &str) -> u64 {
    let mut buf = Vec::with_capacity(8 + tag.len());
    buf.extend_from_slice(&base.to_le_bytes());
    buf.extend_from_slice(tag.as_bytes());
    fnv1a64(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_splits_punctuation() {
        assert_eq!(tokenize("Albert_Einstein, physicist!"), vec!["albert", "einstein", "physicist"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("---"), Vec::<String>::new());
        assert_eq!(tokenize("a1 B2"), vec!["a1", "b2"]);
    }

    #[test]
    fn fnv_matches_reference_vectors() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn mix_seed_differs_by_tag() {
        assert_ne!(mix_seed(1, "a"), mix_seed(1, "b"));
        assert_ne!(mix_seed(1, "a"), mix_seed(2, "a"));
        assert_eq!(mix_seed(7, "doc-1"), mix_seed(7, "doc-1"));
    }
}
