/// Maps prompt text to a fixed-dimension embedding.
pub trait PromptEmbedder {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Vec<f64>;

    /// Elementwise mean of the embeddings of several prompts.
    fn mean_embed(&self, texts: &[&str]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for t in texts {
            for (a, v) in acc.iter_mut().zip(self.embed(t)) {
                *a += v;
            }
        }
        if !texts.is_empty() {
            let n = texts.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
        }
        acc
    }
}

/// Signed feature hashing over lowercase whitespace tokens (FNV-1a).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(64)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl PromptEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for token in text.split_whitespace() {
            let token: String = token
                .chars()
                .filter(|c| c.is_alphanumeric() || *c == '_')
                .flat_map(char::to_lowercase)
                .collect();
            if token.is_empty() {
                continue;
            }
            let h = fnv1a(token.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            out[(h % self.dim as u64) as usize] += sign;
        }
        out
    }
}
