use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::Mutex;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Result};

/// Word-vector source for object labels. Multiword labels embed as the
/// mean of their per-token vectors.
#[derive(Debug)]
pub struct EmbeddingProvider {
    dimension: usize,
    seed: u64,
    table: Option<HashMap<String, Vec<f64>>>,
    warned: Mutex<HashSet<String>>,
}

// FNV-1a; the std hasher's algorithm is not pinned across releases and
// these hashes feed dataset bytes.
fn fnv1a(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for byte in text.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl EmbeddingProvider {
    /// Seeded-hash fallback provider: every token maps to a stable
    /// unit-variance vector, no files involved.
    pub fn deterministic(dimension: usize, seed: u64) -> Self {
        Self {
            dimension,
            seed,
            table: None,
            warned: Mutex::new(HashSet::new()),
        }
    }

    /// Plain-text word vectors, one `token v1 v2 ... vd` line each.
    pub fn from_text_file(path: &Path, dimension: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut table = HashMap::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields
                .next()
                .ok_or_else(|| DataError::Schema(format!("line {}: empty", line_no + 1)))?;
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        DataError::Schema(format!("line {}: bad float {f:?}", line_no + 1))
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != dimension {
                return Err(DataError::Schema(format!(
                    "line {}: {} values, expected {}",
                    line_no + 1,
                    values.len(),
                    dimension
                )));
            }
            table.insert(token.to_string(), values);
        }
        Ok(Self {
            dimension,
            seed: 0,
            table: Some(table),
            warned: Mutex::new(HashSet::new()),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn is_file_backed(&self) -> bool {
        self.table.is_some()
    }

    fn fallback_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(token));
        // Uniform on [-sqrt(3), sqrt(3)) has unit variance.
        let half_width = 3.0f64.sqrt();
        (0..self.dimension)
            .map(|_| rng.gen_range(-half_width..half_width))
            .collect()
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        match &self.table {
            Some(table) => match table.get(token) {
                Some(v) => v.clone(),
                None => {
                    let mut warned = self.warned.lock().unwrap();
                    if warned.insert(token.to_string()) {
                        log::warn!("embedding token {token:?} missing, using fallback vector");
                    }
                    self.fallback_vector(token)
                }
            },
            None => self.fallback_vector(token),
        }
    }

    /// Embed a (possibly multiword) label.
    pub fn embed(&self, label: &str) -> Vec<f64> {
        let tokens: Vec<&str> = label.split_whitespace().collect();
        if tokens.is_empty() {
            return vec![0.0; self.dimension];
        }
        let mut out = vec![0.0; self.dimension];
        for token in &tokens {
            for (acc, v) in out.iter_mut().zip(self.token_vector(token)) {
                *acc += v;
            }
        }
        for v in &mut out {
            *v /= tokens.len() as f64;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_across_calls() {
        let p = EmbeddingProvider::deterministic(16, 42);
        assert_eq!(p.embed("horse"), p.embed("horse"));
        assert_ne!(p.embed("horse"), p.embed("person"));
        assert_eq!(p.embed("horse").len(), 16);
    }

    #[test]
    fn multiword_is_token_mean() {
        let p = EmbeddingProvider::deterministic(8, 42);
        let a = p.embed("made");
        let b = p.embed("of");
        let both = p.embed("made of");
        for i in 0..8 {
            assert!((both[i] - (a[i] + b[i]) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn parses_text_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.txt");
        std::fs::write(&path, "cat 0.1 0.2\ndog -1.5 2.5\n").unwrap();
        let p = EmbeddingProvider::from_text_file(&path, 2).unwrap();
        assert_eq!(p.embed("cat"), vec![0.1, 0.2]);
        assert_eq!(p.embed("dog"), vec![-1.5, 2.5]);
    }

    #[test]
    fn file_dimension_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.txt");
        std::fs::write(&path, "cat 0.1 0.2 0.3\n").unwrap();
        assert!(EmbeddingProvider::from_text_file(&path, 2).is_err());
    }

    #[test]
    fn missing_token_falls_back_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.txt");
        std::fs::write(&path, "cat 0.1 0.2\n").unwrap();
        let p = EmbeddingProvider::from_text_file(&path, 2).unwrap();
        let a = p.embed("unicorn");
        let b = p.embed("unicorn");
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn fallback_has_roughly_unit_variance() {
        let p = EmbeddingProvider::deterministic(2048, 7);
        let v = p.embed("person");
        let mean: f64 = v.iter().sum::<f64>() / v.len() as f64;
        let var: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        assert!((var - 1.0).abs() < 0.15, "variance {var}");
    }
}
