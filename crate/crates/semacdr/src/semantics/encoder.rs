//! Text encoders turning semantic summaries into fixed-dimension vectors.
//!
//! The backend is pluggable; the mandatory offline fallback is a hashed
//! character-trigram frequency vector.

use super::SemanticsError;

pub trait TextEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<f64>, SemanticsError>;
}

/// Deterministic offline encoder: character trigrams over the text padded
/// with start/end sentinels, hashed into `dim` buckets, L2-normalized.
/// Empty text maps to the zero vector.
#[derive(Debug, Clone)]
pub struct TrigramEncoder {
    dim: usize,
}

impl TrigramEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        Self { dim }
    }
}

const START_SENTINEL: char = '\u{2}';
const END_SENTINEL: char = '\u{3}';

fn fnv1a_str(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl TextEncoder for TrigramEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>, SemanticsError> {
        let mut v = vec![0.0f64; self.dim];
        if text.is_empty() {
            return Ok(v);
        }
        let mut chars: Vec<char> = Vec::with_capacity(text.chars().count() + 2);
        chars.push(START_SENTINEL);
        chars.extend(text.chars());
        chars.push(END_SENTINEL);
        for w in chars.windows(3) {
            let tri: String = w.iter().collect();
            let bucket = (fnv1a_str(&tri) % self.dim as u64) as usize;
            v[bucket] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v)
    }
}

/// Remote embedding endpoint: POST `{ "text": ... }`, expects
/// `{ "embedding": [...] }` of the configured dimension.
pub struct RemoteEncoder {
    url: String,
    dim: usize,
}

impl RemoteEncoder {
    pub fn new(url: impl Into<String>, dim: usize) -> Self {
        Self { url: url.into(), dim }
    }
}

impl TextEncoder for RemoteEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>, SemanticsError> {
        let response = ureq::post(&self.url)
            .send_json(serde_json::json!({ "text": text }))
            .map_err(|e| SemanticsError::Encoder(format!("remote encoder unreachable: {e}")))?;
        let payload: serde_json::Value = response
            .into_body()
            .read_json()
            .map_err(|e| SemanticsError::Encoder(e.to_string()))?;
        let embedding: Vec<f64> = payload["embedding"]
            .as_array()
            .ok_or_else(|| SemanticsError::Encoder("no embedding array".into()))?
            .iter()
            .map(|v| v.as_f64().unwrap_or(f64::NAN))
            .collect();
        if embedding.len() != self.dim || embedding.iter().any(|x| !x.is_finite()) {
            return Err(SemanticsError::Encoder(format!(
                "expected finite embedding of dimension {}, got {}",
                self.dim,
                embedding.len()
            )));
        }
        Ok(embedding)
    }
}
