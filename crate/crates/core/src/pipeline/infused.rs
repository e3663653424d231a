use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::runner::{output_parent_exists, run_stage, ItemFailure, StageRun};
use super::{PipelineConfig, PipelineError, RunOptions, Stage, StageOutput};
use crate::corruption::ImageBuffer;
use crate::genclient::{Backend, GenerationRequest};
use crate::prompts::infused_prompt;
use crate::rng::{streams, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "human")]
    Human,
    #[serde(rename = "gpt")]
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(rename = "from")]
    pub role: Role,
    #[serde(rename = "value")]
    pub text: String,
}

/// One instruction-tuning example in the LLaVA conversation layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    #[serde(rename = "id", deserialize_with = "id_string")]
    pub sft_id: String,
    #[serde(rename = "image", default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(rename = "conversations")]
    pub turns: Vec<Turn>,
}

fn id_string<'de, D: serde::Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        N(u64),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::N(n) => n.to_string(),
    })
}

impl SftRecord {
    pub fn validate(&self) -> Result<(), String> {
        match self.turns.first() {
            Some(t) if t.role == Role::Human => {}
            Some(_) => return Err("first turn must be from `human`".into()),
            None => return Err("conversation is empty".into()),
        }
        if !self.turns.iter().any(|t| t.role == Role::Assistant) {
            return Err("conversation has no `gpt` turn".into());
        }
        Ok(())
    }

    pub fn first_instruction(&self) -> &str {
        &self.turns[0].text
    }

    pub fn first_completion(&self) -> &str {
        &self
            .turns
            .iter()
            .find(|t| t.role == Role::Assistant)
            .expect("validated record has an assistant turn")
            .text
    }
}

/// One emitted description-infused line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfusedRecord {
    #[serde(rename = "id")]
    pub sft_id: String,
    #[serde(rename = "image")]
    pub image_ref: Option<String>,
    #[serde(rename = "prompt")]
    pub infused_prompt: String,
    pub completion: String,
    pub description: String,
}

/// Reads an SFT JSONL file; blank lines are ignored.
pub fn load_sft(path: &Path) -> Result<Vec<SftRecord>, PipelineError> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let input_err = |message: String| PipelineError::Input {
            path: path.display().to_string(),
            line: n + 1,
            message,
        };
        let rec: SftRecord = serde_json::from_str(&line).map_err(|e| input_err(e.to_string()))?;
        rec.validate().map_err(input_err)?;
        out.push(rec);
    }
    Ok(out)
}

/// Seeded uniform subsample (without replacement) of the records that have
/// an image, returned as ascending indices into `sft`.
pub(crate) fn subsample(sft: &[SftRecord], subset_size: usize, seed: u64) -> Result<Vec<usize>, PipelineError> {
    let pool: Vec<usize> = (0..sft.len()).filter(|&i| sft[i].image_ref.is_some()).collect();
    if subset_size > pool.len() {
        return Err(PipelineError::SubsetTooLarge {
            requested: subset_size,
            available: pool.len(),
        });
    }
    let mut rng = SeededRng::new(seed, streams::SUBSAMPLE).at(0);
    let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), subset_size)
        .into_iter()
        .map(|p| pool[p])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Builds the description-infused dataset from a subsample of `sft`.
/// Image references resolve against `images_root`.
pub async fn build_infused_dataset(
    sft: &[SftRecord],
    subset_size: usize,
    images_root: &Path,
    cfg: &PipelineConfig,
    backend: &dyn Backend,
    output: &Path,
    options: RunOptions,
) -> Result<StageOutput, PipelineError> {
    cfg.validate()?;
    output_parent_exists(output)?;
    for (i, rec) in sft.iter().enumerate() {
        rec.validate()
            .map_err(|m| PipelineError::Precondition(format!("sft record {i} (`{}`): {m}", rec.sft_id)))?;
    }
    let chosen = subsample(sft, subset_size, cfg.seed)?;
    let mut seen = HashSet::new();
    for &i in &chosen {
        if !seen.insert(sft[i].sft_id.as_str()) {
            return Err(PipelineError::Precondition(format!("duplicate sft id `{}`", sft[i].sft_id)));
        }
    }

    let mut fingerprint = cfg.fingerprint(Stage::Infused, backend);
    fingerprint["subset_size"] = json!(subset_size);
    let inputs: Vec<_> = chosen.iter().map(|&i| json!([i, sft[i]])).collect();
    let run = StageRun {
        stage: Stage::Infused,
        output: output.to_path_buf(),
        keys: chosen.iter().map(|&i| sft[i].sft_id.clone()).collect(),
        seed: cfg.seed,
        config: fingerprint,
        inputs_digest: super::digest_value(&json!(inputs)),
        ingest_warnings: Vec::new(),
        workers: cfg.workers,
        flush_every: cfg.manifest_flush_every,
        max_skip_rate: cfg.max_skip_rate,
        options,
    };

    let describe_rng = SeededRng::new(cfg.seed, streams::DESCRIBE);
    let gen_rng = SeededRng::new(cfg.seed, streams::GEN_SEED);
    let process = |k: usize| {
        let src = &sft[chosen[k]];
        let idx = chosen[k] as u64;
        let (describe_rng, gen_rng) = (&describe_rng, &gen_rng);
        async move {
            let result = async {
                let image_ref = src.image_ref.as_deref().expect("pool holds only records with images");
                let path = images_root.join(image_ref);
                if !path.is_file() {
                    return Err(ItemFailure::new("missing_image", format!("{} not found", path.display())));
                }
                let image = tokio::task::spawn_blocking(move || ImageBuffer::open(&path))
                    .await
                    .map_err(|e| ItemFailure::new("image", e.to_string()))?
                    .map_err(|e| ItemFailure::new("image", e.to_string()))?;
                let describe = cfg.prompts.sample_describe_prompt(describe_rng, idx);
                let req = GenerationRequest::new(describe.text.clone(), Some(image), &cfg.decoding)
                    .with_seed(gen_rng.u64(idx));
                let description = backend.generate(&req).await?.text;
                Ok(InfusedRecord {
                    sft_id: src.sft_id.clone(),
                    image_ref: src.image_ref.clone(),
                    infused_prompt: infused_prompt(&description, src.first_instruction()),
                    completion: src.first_completion().to_string(),
                    description,
                })
            }
            .await;
            (None, result)
        }
    };

    run_stage(run, process).await
}
