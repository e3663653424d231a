#![allow(dead_code)]

pub mod hp;
pub mod oracles;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use async_trait::async_trait;
use serde_json::json;
use stic_core::corruption::ImageBuffer;
use stic_core::genclient::{Backend, GenError, GenerationRequest, GenerationResult, MockBackend};

/// A small deterministic image whose content depends on `k`.
pub fn pattern_image(k: u32, width: u32, height: u32) -> ImageBuffer {
    let mut px = Vec::with_capacity((width * height * 3) as usize);
    for y in 0..height {
        for x in 0..width {
            px.push(((x * 7 + k * 13) % 256) as u8);
            px.push(((y * 11 + k * 29) % 256) as u8);
            px.push(((x + y + k * 5) % 256) as u8);
        }
    }
    ImageBuffer::new(width, height, px).unwrap()
}

/// Writes `n` PNGs named `img_0000.png`, ... with varying sizes.
pub fn write_images(dir: &Path, n: u32) {
    std::fs::create_dir_all(dir).unwrap();
    for k in 0..n {
        let img = pattern_image(k, 16 + k % 9, 12 + k % 5);
        img.save(&dir.join(format!("img_{k:04}.png"))).unwrap();
    }
}

/// Writes an SFT file with `n` records; every fourth one is text-only.
/// Images referenced by the others are created under `root`.
pub fn write_sft(path: &Path, root: &Path, n: u32) {
    std::fs::create_dir_all(root.join("coco")).unwrap();
    let mut out = String::new();
    for k in 0..n {
        let mut rec = json!({
            "id": format!("sft-{k}"),
            "conversations": [
                {"from": "human", "value": format!("<image>\nWhat is in picture {k}?")},
                {"from": "gpt", "value": format!("Answer number {k}.")},
                {"from": "human", "value": "And then?"},
                {"from": "gpt", "value": "Nothing else."}
            ]
        });
        if k % 4 != 0 {
            let rel = format!("coco/{k:05}.png");
            pattern_image(k, 10, 10).save(&root.join(&rel)).unwrap();
            rec["image"] = json!(rel);
        }
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

/// Mock backend that fails with an authentication error once `limit`
/// calls have been made, simulating an interrupted run.
pub struct FailAfter {
    pub inner: MockBackend,
    pub limit: usize,
    pub seen: AtomicUsize,
}

impl FailAfter {
    pub fn new(seed: u64, limit: usize) -> Self {
        Self {
            inner: MockBackend::new(seed),
            limit,
            seen: AtomicUsize::new(0),
        }
    }
}

#[async_trait]
impl Backend for FailAfter {
    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, GenError> {
        if self.seen.fetch_add(1, Ordering::SeqCst) >= self.limit {
            return Err(GenError::Auth { status: 401 });
        }
        self.inner.generate(req).await
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Records with log-probs spread over several orders of magnitude in
/// `[-300, -1e-3]`.
pub fn random_records(seed: u64, n: usize) -> Vec<stic_core::losscore::PreferenceLogprobRecord> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut lp = move || -(rng.random_range(1e-3f64.ln()..300f64.ln())).exp();
    (0..n)
        .map(|i| stic_core::losscore::PreferenceLogprobRecord::new(format!("r{i}"), lp(), lp(), lp(), lp()).unwrap())
        .collect()
}

use stic_core::pipeline::{
    build_infused_dataset, build_preference_dataset, ingest_images, load_sft, PipelineConfig, PipelineError,
    RunOptions, StageOutput,
};

pub async fn run_pref(
    images: &Path,
    out: &Path,
    cfg: &PipelineConfig,
    backend: &dyn Backend,
    resume: bool,
) -> Result<StageOutput, PipelineError> {
    let ingest = ingest_images(images, None)?;
    build_preference_dataset(&ingest.records, &ingest.warnings, cfg, backend, out, RunOptions { resume }).await
}

pub async fn run_infuse(
    sft: &Path,
    root: &Path,
    subset: usize,
    out: &Path,
    cfg: &PipelineConfig,
    backend: &dyn Backend,
) -> Result<StageOutput, PipelineError> {
    let records = load_sft(sft)?;
    build_infused_dataset(&records, subset, root, cfg, backend, out, RunOptions::default()).await
}

pub fn read_lines(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
