use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::EmbeddingSequence;
use crate::error::{Error, Result};

pub const START_TOKEN: &str = "[CLS]";
pub const END_TOKEN: &str = "[SEP]";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Unit-norm vector for one token, a pure function of `(token, dim)`.
pub fn token_vector(token: &str, dim: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()));
    let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    raw.iter().map(|x| (x / norm) as f32).collect()
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // ext A
        | 0x4E00..=0x9FFF    // unified ideographs
        | 0xAC00..=0xD7AF    // hangul
        | 0xF900..=0xFAFF
        | 0x20000..=0x2FA1F)
}

/// Whitespace tokenization with every CJK character as its own token.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut start = None;
        for (i, c) in word.char_indices() {
            if is_cjk(c) {
                if let Some(s) = start.take() {
                    out.push(&word[s..i]);
                }
                out.push(&word[i..i + c.len_utf8()]);
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            out.push(&word[s..]);
        }
    }
    out
}

/// Deterministic stand-in for a frozen sentence encoder.
///
/// Keeps the earliest `max_len − 2` tokens and wraps them in the boundary
/// vectors, so `valid_len <= max_len`.
pub fn toy_embed(text: &str, dim: usize, max_len: usize) -> Result<EmbeddingSequence> {
    if dim == 0 {
        return Err(Error::input("embedding dim must be positive"));
    }
    if max_len < 3 {
        return Err(Error::input(format!("max_len must be at least 3, got {max_len}")));
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::input("cannot embed empty text"));
    }
    let kept = &tokens[..tokens.len().min(max_len - 2)];
    let mut data = Vec::with_capacity((kept.len() + 2) * dim);
    data.extend(token_vector(START_TOKEN, dim));
    for t in kept {
        data.extend(token_vector(t, dim));
    }
    data.extend(token_vector(END_TOKEN, dim));
    EmbeddingSequence::new(dim, data)
}
