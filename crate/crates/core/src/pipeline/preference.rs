use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::runner::{output_parent_exists, run_stage, Audit, ItemFailure, StageRun};
use super::{ImageRecord, IngestWarning, PipelineConfig, PipelineError, RunOptions, Stage, StageOutput};
use crate::corruption::{self, CorruptionSpec, ImageBuffer};
use crate::genclient::{Backend, GenerationRequest};
use crate::rng::{streams, SeededRng};

pub const BRANCH_BAD_PROMPT: &str = "bad_prompt";
pub const BRANCH_CORRUPTION: &str = "corruption";

/// How the dispreferred response was elicited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Provenance {
    BadPrompt {
        prompt_id: String,
    },
    Corruption {
        #[serde(flatten)]
        spec: CorruptionSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenMeta {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub prompt_id: String,
    /// SHA-256 of the source image file.
    pub image_digest: String,
    /// Pixel digests of the images actually sent for each response.
    pub chosen_input_digest: String,
    pub rejected_input_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

/// One emitted preference line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    /// Image path relative to the ingestion root.
    pub image: String,
    /// The stored training prompt.
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub provenance: Provenance,
    pub meta: GenMeta,
}

fn load_checked(rec: &ImageRecord) -> Result<ImageBuffer, ItemFailure> {
    let bytes = std::fs::read(&rec.path).map_err(|e| ItemFailure::new("image", e.to_string()))?;
    if hex::encode(Sha256::digest(&bytes)) != rec.digest {
        return Err(ItemFailure::new("image", "file changed since ingestion"));
    }
    ImageBuffer::decode(&bytes).map_err(|e| ItemFailure::new("image", e.to_string()))
}

fn now(deterministic: bool) -> Option<String> {
    (!deterministic).then(|| chrono::Utc::now().to_rfc3339())
}

/// Builds the preference dataset for `images`, writing JSONL to `output`
/// and a manifest beside it.
pub async fn build_preference_dataset(
    images: &[ImageRecord],
    ingest_warnings: &[IngestWarning],
    cfg: &PipelineConfig,
    backend: &dyn Backend,
    output: &Path,
    options: RunOptions,
) -> Result<StageOutput, PipelineError> {
    if images.is_empty() {
        return Err(PipelineError::Precondition("image list is empty".into()));
    }
    cfg.validate()?;
    output_parent_exists(output)?;

    let inputs: Vec<_> = images.iter().map(|r| json!([r.image_id, r.digest])).collect();
    let run = StageRun {
        stage: Stage::Preference,
        output: output.to_path_buf(),
        keys: images.iter().map(|r| r.image_id.clone()).collect(),
        seed: cfg.seed,
        config: cfg.fingerprint(Stage::Preference, backend),
        inputs_digest: super::digest_value(&json!(inputs)),
        ingest_warnings: ingest_warnings.to_vec(),
        workers: cfg.workers,
        flush_every: cfg.manifest_flush_every,
        max_skip_rate: cfg.max_skip_rate,
        options,
    };

    let branch_rng = SeededRng::new(cfg.seed, streams::BRANCH);
    let caption_rng = SeededRng::new(cfg.seed, streams::CAPTION);
    let bad_rng = SeededRng::new(cfg.seed, streams::BAD_PROMPT);
    let corruption_rng = SeededRng::new(cfg.seed, streams::CORRUPTION);
    let gen_rng = SeededRng::new(cfg.seed, streams::GEN_SEED);
    let deterministic = backend.is_deterministic();

    let process = |i: usize| {
        let rec = &images[i];
        let idx = i as u64;
        let coin = branch_rng.unit(idx);
        let use_bad_prompt = coin < 0.5;
        let audit = Audit {
            coin,
            branch: if use_bad_prompt { BRANCH_BAD_PROMPT } else { BRANCH_CORRUPTION }.to_string(),
        };
        let (caption_rng, bad_rng, corruption_rng, gen_rng) = (&caption_rng, &bad_rng, &corruption_rng, &gen_rng);
        async move {
            let result = async {
                let started_at = now(deterministic);
                let clean = {
                    let rec = rec.clone();
                    tokio::task::spawn_blocking(move || load_checked(&rec))
                        .await
                        .map_err(|e| ItemFailure::new("image", e.to_string()))??
                };
                let training_prompt = cfg.prompts.sample_caption_prompt(caption_rng, idx);
                let good = cfg.prompts.good_prompt();

                let chosen_req = GenerationRequest::new(good.text.clone(), Some(clean.clone()), &cfg.decoding)
                    .with_seed(gen_rng.u64(2 * idx));
                let chosen = backend.generate(&chosen_req).await?;

                let (rejected_req, provenance) = if use_bad_prompt {
                    let bad = cfg.prompts.sample_bad_prompt(bad_rng, idx);
                    (
                        GenerationRequest::new(bad.text.clone(), Some(clean.clone()), &cfg.decoding),
                        Provenance::BadPrompt {
                            prompt_id: bad.id.clone(),
                        },
                    )
                } else {
                    let spec = corruption::sample_corruption(&cfg.corruption, corruption_rng, idx);
                    let corrupted = {
                        let (img, spec) = (clean.clone(), spec.clone());
                        tokio::task::spawn_blocking(move || corruption::apply(&img, &spec))
                            .await
                            .map_err(|e| ItemFailure::new("corruption", e.to_string()))?
                            .map_err(|e| ItemFailure::new("corruption", e.to_string()))?
                    };
                    (
                        GenerationRequest::new(training_prompt.text.clone(), Some(corrupted), &cfg.decoding),
                        Provenance::Corruption { spec },
                    )
                };
                let rejected_req = rejected_req.with_seed(gen_rng.u64(2 * idx + 1));
                let rejected = backend.generate(&rejected_req).await?;

                if chosen.text == rejected.text {
                    return Err(ItemFailure::new("degenerate_pair", "preferred and dispreferred responses are identical"));
                }
                Ok(PreferenceRecord {
                    image: rec.image_id.clone(),
                    prompt: training_prompt.text.clone(),
                    chosen: chosen.text,
                    rejected: rejected.text,
                    provenance,
                    meta: GenMeta {
                        model_id: chosen.model_id,
                        temperature: cfg.decoding.temperature,
                        max_tokens: cfg.decoding.max_tokens,
                        prompt_id: training_prompt.id.clone(),
                        image_digest: rec.digest.clone(),
                        chosen_input_digest: clean.digest(),
                        rejected_input_digest: rejected_req.image.as_ref().map(|i| i.digest()).unwrap_or_default(),
                        started_at,
                        finished_at: now(deterministic),
                    },
                })
            }
            .await;
            (Some(audit), result)
        }
    };

    run_stage(run, process).await
}
