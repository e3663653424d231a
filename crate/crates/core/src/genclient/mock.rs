use std::sync::atomic::{AtomicUsize, Ordering};

use async_trait::async_trait;
use sha2::{Digest, Sha256};

use super::{Backend, GenError, GenerationRequest, GenerationResult, TokenLogprob};

pub const MOCK_MODEL_ID: &str = "mock-lvlm";

const WORDS: [&str; 32] = [
    "a", "the", "person", "dog", "street", "table", "window", "tree", "red", "blue", "bright",
    "quiet", "standing", "sitting", "near", "beside", "under", "large", "small", "car", "bicycle",
    "kitchen", "park", "sky", "cloudy", "sunlit", "wooden", "plate", "cup", "child", "building",
    "grass",
];

fn sha(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// Pure pseudo-generation: the text is a function of the seed, the image
/// digest and the prompt digest only.
pub fn mock_generate(seed: u64, req: &GenerationRequest) -> GenerationResult {
    let image_digest = req
        .image
        .as_ref()
        .map(|i| i.digest())
        .unwrap_or_else(|| "none".to_string());
    let prompt_digest = hex::encode(sha(&[req.prompt.as_bytes()]));
    let mut block = sha(&[&seed.to_le_bytes(), image_digest.as_bytes(), prompt_digest.as_bytes()]);

    let n_words = 12 + (block[0] % 13) as usize;
    let mut bytes = Vec::with_capacity(n_words * 2);
    let mut counter = 0u64;
    while bytes.len() < n_words * 2 {
        counter += 1;
        bytes.extend_from_slice(&block);
        block = sha(&[&block, &counter.to_le_bytes()]);
    }
    let words: Vec<&str> = (0..n_words).map(|i| WORDS[bytes[2 * i] as usize % WORDS.len()]).collect();

    let mut tokens: Vec<String> = format!(
        "[mock image={} prompt={}] {}.",
        &image_digest[..image_digest.len().min(12)],
        &prompt_digest[..12],
        words.join(" ")
    )
    .split(' ')
    .map(str::to_string)
    .collect();
    tokens.truncate(req.max_tokens as usize);
    let text = tokens.join(" ");

    let token_logprobs = req.want_logprobs.then(|| {
        tokens
            .iter()
            .enumerate()
            .map(|(i, t)| TokenLogprob {
                token: t.clone(),
                logprob: -(0.01 + bytes[(2 * i + 1) % bytes.len()] as f64 / 64.0),
            })
            .collect()
    });

    GenerationResult {
        text,
        token_logprobs,
        model_id: MOCK_MODEL_ID.to_string(),
        latency_ms: 0,
    }
}

/// Offline backend over [`mock_generate`] that counts its calls.
#[derive(Debug, Default)]
pub struct MockBackend {
    seed: u64,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl Backend for MockBackend {
    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, GenError> {
        req.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(mock_generate(self.seed, req))
    }

    fn model_id(&self) -> &str {
        MOCK_MODEL_ID
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}
