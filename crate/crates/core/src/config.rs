//! TOML run configuration.
//!
//! Every section is optional; a missing file means all defaults. Relative
//! paths inside the file resolve against the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corruption::CorruptionConfig;
use crate::fraction::Fraction;
use crate::genclient::{DecodingConfig, EndpointConfig};
use crate::losscore::{LossConfig, DEFAULT_LAMBDA};
use crate::pipeline::{digest_value, PipelineConfig, DEFAULT_MAX_SKIP_RATE};
use crate::prompts::{PromptError, PromptRegistry};

pub const DEFAULT_PREFERENCE_COUNT: usize = 6000;
pub const DEFAULT_INFUSE_SUBSET: usize = 5000;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("prompt override: {0}")]
    Prompts(#[from] PromptError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub preference_count: usize,
    pub output: Option<PathBuf>,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            preference_count: DEFAULT_PREFERENCE_COUNT,
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub infuse_subset: usize,
    pub output: Option<PathBuf>,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            infuse_subset: DEFAULT_INFUSE_SUBSET,
            output: None,
        }
    }
}

/// Loss settings as written in config files. `alpha` is a fraction so that
/// `"1/1024"` is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda: f64,
    pub alpha: Fraction,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            alpha: Fraction::new(1, 1024),
        }
    }
}

impl LossSection {
    pub fn to_loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            alpha: self.alpha.to_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub max_skip_rate: f64,
    /// Items in flight; defaults to the endpoint's concurrency limit.
    pub workers: Option<usize>,
    pub prompts_override: Option<PathBuf>,
    pub endpoint: EndpointConfig,
    pub decoding: DecodingConfig,
    pub corruption: CorruptionConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub loss: LossSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_skip_rate: DEFAULT_MAX_SKIP_RATE,
            workers: None,
            prompts_override: None,
            endpoint: EndpointConfig::default(),
            decoding: DecodingConfig::default(),
            corruption: CorruptionConfig::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            loss: LossSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(raw: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(raw)
    }

    /// Reads `path`, resolving relative paths in it against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&raw).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.message().to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p.as_mut() {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        rebase(&mut cfg.prompts_override);
        rebase(&mut cfg.endpoint.log_file);
        rebase(&mut cfg.stage1.output);
        rebase(&mut cfg.stage2.output);
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.corruption
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("corruption: {e}")))?;
        self.endpoint
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("endpoint: {e}")))?;
        self.loss
            .to_loss_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("loss: {e}")))?;
        if !(0.0..=1.0).contains(&self.max_skip_rate) {
            return Err(ConfigError::Invalid("max_skip_rate must be in [0, 1]".into()));
        }
        if self.workers == Some(0) {
            return Err(ConfigError::Invalid("workers must be >= 1".into()));
        }
        if !(self.decoding.temperature.is_finite() && self.decoding.temperature >= 0.0) {
            return Err(ConfigError::Invalid("decoding.temperature must be >= 0".into()));
        }
        if self.decoding.max_tokens == 0 {
            return Err(ConfigError::Invalid("decoding.max_tokens must be >= 1".into()));
        }
        Ok(())
    }

    pub fn prompts(&self) -> Result<PromptRegistry, ConfigError> {
        Ok(match &self.prompts_override {
            Some(p) => PromptRegistry::from_override_file(p)?,
            None => PromptRegistry::builtin().clone(),
        })
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, ConfigError> {
        self.validate()?;
        Ok(PipelineConfig {
            seed: self.seed,
            decoding: self.decoding.clone(),
            corruption: self.corruption.clone(),
            prompts: self.prompts()?,
            max_skip_rate: self.max_skip_rate,
            workers: self.workers.unwrap_or(self.endpoint.max_concurrency),
            ..PipelineConfig::default()
        })
    }

    /// SHA-256 over the settings that can change any output. Scheduling,
    /// timeouts, credentials and output paths are left out.
    pub fn digest(&self) -> String {
        digest_value(&json!({
            "seed": self.seed,
            "max_skip_rate": self.max_skip_rate,
            "prompts_override": self.prompts_override,
            "model": self.endpoint.model,
            "decoding": self.decoding,
            "corruption": self.corruption,
            "preference_count": self.stage1.preference_count,
            "infuse_subset": self.stage2.infuse_subset,
            "loss": self.loss,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.stage1.preference_count, 6000);
        assert_eq!(cfg.stage2.infuse_subset, 5000);
        assert_eq!(cfg.loss.to_loss_config().alpha, 1.0 / 1024.0);
        assert_eq!(cfg.pipeline().unwrap().workers, 8);
    }

    #[test]
    fn full_file_parses() {
        let raw = r#"
            # experiment A
            seed = 42
            max_skip_rate = 0.05
            workers = 3

            [endpoint]
            base_url = "http://localhost:9000/v1"
            model = "llava-1.5-7b"

            [decoding]
            temperature = 0.0

            [corruption]
            lowres_factor = "1/4"
            sat_scale = { min = 0.5, max = 1.5 }

            [stage1]
            preference_count = 100

            [loss]
            alpha = "0.0009765625"
        "#;
        let cfg = RunConfig::from_toml(raw).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.endpoint.model, "llava-1.5-7b");
        assert_eq!(cfg.corruption.lowres_factor, Fraction::new(1, 4));
        assert_eq!(cfg.loss.alpha, Fraction::new(1, 1024));
        assert_eq!(cfg.decoding.max_tokens, 1024);
        let p = cfg.pipeline().unwrap();
        assert_eq!(p.workers, 3);
        assert_eq!(p.max_skip_rate, 0.05);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sede = 1").is_err());
        assert!(RunConfig::from_toml("[corruption]\nfactor = \"1/8\"").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let cfg = RunConfig::from_toml("[corruption]\nlowres_factor = \"0\"").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_toml("[loss]\nlambda = -1.0").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_toml("workers = 0").unwrap();
        assert!(cfg.pipeline().is_err());
    }

    #[test]
    fn digest_ignores_scheduling_and_tracks_outputs() {
        let base = RunConfig::default();
        let mut sched = base.clone();
        sched.workers = Some(1);
        sched.endpoint.timeout_secs = 5.0;
        sched.endpoint.api_key = Some("k".into());
        assert_eq!(base.digest(), sched.digest());
        let mut seeded = base.clone();
        seeded.seed = 1;
        assert_ne!(base.digest(), seeded.digest());
    }

    #[test]
    fn relative_paths_rebase_on_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "prompts_override = \"prompts.json\"\n").unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.prompts_override.unwrap(), dir.path().join("prompts.json"));
        assert!(matches!(
            RunConfig::load(&dir.path().join("missing.toml")),
            Err(ConfigError::Read { .. })
        ));
    }
}
