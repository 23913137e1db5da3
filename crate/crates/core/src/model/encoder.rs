//! Frozen post encoders.
//!
//! `HashedBow` is a signed feature-hashing bag of words over whitespace
//! tokens, L2-normalized. `Precomputed` passes through user-supplied
//! embeddings after a dimension check.

use serde::{Deserialize, Serialize};

use crate::data::Payload;
use crate::error::{invalid, Error, Result};
use crate::numerics::{stream_key, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    HashedBow,
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub dim: usize,
    pub hash_seed: u64,
}

impl EncoderConfig {
    pub fn hashed(dim: usize, hash_seed: u64) -> Self {
        Self {
            kind: EncoderKind::HashedBow,
            dim,
            hash_seed,
        }
    }

    pub fn precomputed(dim: usize) -> Self {
        Self {
            kind: EncoderKind::Precomputed,
            dim,
            hash_seed: 0,
        }
    }
}

/// FNV-1a over the token bytes, finalized together with the seed.
fn token_hash(token: &str, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    stream_key(&[seed, h])
}

/// Bucket and sign assigned to `token`.
pub fn hash_bucket(token: &str, dim: usize, seed: u64) -> (usize, f64) {
    let h = token_hash(token, seed);
    let bucket = (h % dim as u64) as usize;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    (bucket, sign)
}

fn hashed_bow(text: &str, cfg: &EncoderConfig) -> Result<Vector> {
    let mut v = vec![0.0; cfg.dim];
    let mut any = false;
    for token in text.split_whitespace() {
        let (b, s) = hash_bucket(token, cfg.dim, cfg.hash_seed);
        v[b] += s;
        any = true;
    }
    if !any {
        return Err(invalid("hashed_bow encoder needs at least one token"));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(v)
}

/// Encodes one post payload into a `cfg.dim` vector.
pub fn encode_post(payload: &Payload, cfg: &EncoderConfig) -> Result<Vector> {
    if cfg.dim == 0 {
        return Err(invalid("encoder dim must be positive"));
    }
    match (cfg.kind, payload) {
        (EncoderKind::HashedBow, Payload::Text(t)) => hashed_bow(t, cfg),
        (_, Payload::Embedding(e)) => {
            if e.len() != cfg.dim {
                return Err(Error::DimensionMismatch {
                    expected: cfg.dim,
                    got: e.len(),
                });
            }
            if e.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite);
            }
            Ok(e.clone())
        }
        (EncoderKind::Precomputed, Payload::Text(_)) => {
            Err(invalid("precomputed encoder received a text payload"))
        }
    }
}
