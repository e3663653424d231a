//! Dataset construction.
//!
//! Stage 1 ([`build_preference_dataset`]) turns unlabeled images into
//! preference pairs: the preferred description comes from the step-by-step
//! prompt on the clean image, the dispreferred one from either a
//! hallucination-inducing prompt or a corrupted image, chosen by a fair coin
//! per image. Stage 2 ([`build_infused_dataset`]) prefixes a subsample of
//! existing instruction data with model-written image descriptions.
//!
//! Both stages share one runner: a bounded set of in-flight items, an
//! append-only journal of finished records, a reorder buffer so output
//! order equals input order, and a manifest that makes runs resumable.

mod infused;
mod ingest;
pub mod manifest;
mod preference;
mod runner;
mod validate;

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corruption::CorruptionConfig;
use crate::genclient::{Backend, DecodingConfig};
use crate::prompts::PromptRegistry;

pub use infused::{build_infused_dataset, load_sft, InfusedRecord, Role, SftRecord, Turn};
pub use ingest::{ingest_images, ImageRecord, IngestOutcome};
pub use manifest::{MANIFEST_VERSION, IngestWarning, ItemEntry, ItemStatus, RunCounts, RunManifest, Stage};
pub use preference::{build_preference_dataset, GenMeta, PreferenceRecord, Provenance};
pub use validate::{validate_dataset, Schema, ValidationReport, Violation};

pub const DEFAULT_MAX_SKIP_RATE: f64 = 0.10;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("no usable images under {0}")]
    NoImages(String),
    #[error("subset of {requested} requested but only {available} records have images")]
    SubsetTooLarge { requested: usize, available: usize },
    #[error("{path}:{line}: {message}")]
    Input {
        path: String,
        line: usize,
        message: String,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("config digest mismatch (manifest {manifest}, current {current}); changed: {}", .changes.join("; "))]
    ConfigMismatch {
        manifest: String,
        current: String,
        changes: Vec<String>,
    },
    #[error("run aborted at item `{key}`: {message}")]
    Aborted { key: String, message: String },
    #[error("skip rate {rate:.3} exceeds limit {limit:.3} ({skipped} of {total} items skipped)")]
    SkipRateExceeded {
        rate: f64,
        limit: f64,
        skipped: usize,
        total: usize,
        manifest: Box<RunManifest>,
    },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Everything that shapes a run's output, plus scheduling knobs that do not.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    pub decoding: DecodingConfig,
    pub corruption: CorruptionConfig,
    pub prompts: PromptRegistry,
    pub max_skip_rate: f64,
    /// Items in flight at once. Does not affect output bytes.
    pub workers: usize,
    /// Manifest rewrite interval, in completed items.
    pub manifest_flush_every: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            decoding: DecodingConfig::default(),
            corruption: CorruptionConfig::default(),
            prompts: PromptRegistry::builtin().clone(),
            max_skip_rate: DEFAULT_MAX_SKIP_RATE,
            workers: 8,
            manifest_flush_every: 25,
        }
    }
}

impl PipelineConfig {
    /// Canonical JSON of the behavior-affecting settings for `stage`.
    pub fn fingerprint(&self, stage: Stage, backend: &dyn Backend) -> Value {
        let mut v = json!({
            "stage": stage,
            "seed": self.seed,
            "decoding": self.decoding,
            "prompts": self.prompts,
            "max_skip_rate": self.max_skip_rate,
            "backend": {
                "model": backend.model_id(),
                "deterministic": backend.is_deterministic(),
            },
        });
        if stage == Stage::Preference {
            v["corruption"] = json!(self.corruption);
        }
        v
    }

    fn validate(&self) -> Result<(), PipelineError> {
        self.corruption
            .validate()
            .map_err(|e| PipelineError::Precondition(e.to_string()))?;
        if self.workers == 0 {
            return Err(PipelineError::Precondition("workers must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_skip_rate) {
            return Err(PipelineError::Precondition("max_skip_rate must be in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn digest_value(v: &Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(v).expect("json value serializes")))
}

pub fn file_digest(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Continue from an existing manifest instead of starting over.
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub output: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: RunManifest,
    pub rows: usize,
    pub output_digest: String,
    /// Items generated in this invocation (excludes re-emitted ones).
    pub generated: usize,
}
