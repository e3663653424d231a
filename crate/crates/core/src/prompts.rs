//! Prompt registry: the verbatim prompt texts used to elicit preferred,
//! dispreferred and description responses, with seeded samplers.

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Good,
    BadHallucination,
    Captioning,
    Describe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub kind: PromptKind,
    pub text: String,
}

impl PromptTemplate {
    fn new(id: &str, kind: PromptKind, text: &str) -> Self {
        Self {
            id: id.to_string(),
            kind,
            text: text.to_string(),
        }
    }
}

pub const GOOD_PROMPT: &str = "Please provide a detailed description of the image, focusing on the following. \
Identify the main subjects (people, animals, objects) in the image and describe what they are doing. \
Describe the setting of the image. Is it indoors or outdoors? What kind of environment or location does it depict? \
What mood does the image convey? Are there any specific elements (such as lighting, weather, expressions) that contribute to this atmosphere? \
Describe the dominant colors and the overall composition. How do these elements affect the image's impact? \
Point out any details or symbols that might be relevant to understanding the image's meaning or context. \
If applicable, provide interpretations of what the image might represent or communicate.";

pub const BAD_PROMPTS: [&str; 8] = [
    "Describe the image with imaginative objects that may exist in the scene.",
    "Enrich the description by adding hypothetical objects or characters that could be part of the scene.",
    "Suggest and detail practical items or people that could logically inhabit the image's setting.",
    "Incorporate elements that, though absent, would seamlessly fit into the context of the picture.",
    "Imagine and describe additional everyday objects or activities taking place just out of frame.",
    "Augment the scene with details of potential events or items that are plausible.",
    "Conceive of and detail natural elements, such as weather or animals, that could realistically enter the scene. Make the description affirmative.",
    "Invent and incorporate details of practical tools, vehicles, or gadgets that could be expected in a similar scenario.",
];

pub const CAPTION_PROMPTS: [&str; 4] = [
    "Describe the image in detail.",
    "Explain what is depicted in the photograph.",
    "What is shown in this image?",
    "Provide a description of the given image.",
];

pub const DESCRIBE_PROMPTS: [&str; 1] = ["Explain what is depicted in the photograph."];

pub const DESCRIPTION_PREFIX: &str = "Image description: ";

/// `"Image description: {description}\n{instruction}"`.
pub fn infused_prompt(description: &str, instruction: &str) -> String {
    format!("{DESCRIPTION_PREFIX}{description}\n{instruction}")
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("failed to read prompt override {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid prompt override JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("prompt set `{0}` must not be empty")]
    EmptySet(&'static str),
    #[error("prompt set `good` must hold exactly one prompt, found {0}")]
    GoodCount(usize),
    #[error("duplicate prompt id `{0}`")]
    DuplicateId(String),
    #[error("prompt `{0}` has empty text")]
    EmptyText(String),
}

/// Entry of the override file.
#[derive(Debug, Clone, Deserialize)]
struct OverrideEntry {
    id: String,
    text: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverrideFile {
    good: Option<Vec<OverrideEntry>>,
    bad: Option<Vec<OverrideEntry>>,
    captioning: Option<Vec<OverrideEntry>>,
    describe: Option<Vec<OverrideEntry>>,
}

/// Immutable set of prompts for one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptRegistry {
    good: PromptTemplate,
    bad: Vec<PromptTemplate>,
    captioning: Vec<PromptTemplate>,
    describe: Vec<PromptTemplate>,
}

fn numbered(prefix: &str, kind: PromptKind, texts: &[&str]) -> Vec<PromptTemplate> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| PromptTemplate::new(&format!("{prefix}-{}", i + 1), kind, t))
        .collect()
}

impl PromptRegistry {
    /// The embedded default registry.
    pub fn builtin() -> &'static PromptRegistry {
        static REGISTRY: OnceLock<PromptRegistry> = OnceLock::new();
        REGISTRY.get_or_init(|| PromptRegistry {
            good: PromptTemplate::new("good", PromptKind::Good, GOOD_PROMPT),
            bad: numbered("bad", PromptKind::BadHallucination, &BAD_PROMPTS),
            captioning: numbered("caption", PromptKind::Captioning, &CAPTION_PROMPTS),
            describe: numbered("describe", PromptKind::Describe, &DESCRIBE_PROMPTS),
        })
    }

    /// Builtin registry with any sets present in the override file replaced.
    pub fn from_override_file(path: &Path) -> Result<Self, PromptError> {
        let raw = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_override_json(&raw)
    }

    pub fn from_override_json(raw: &str) -> Result<Self, PromptError> {
        let file: OverrideFile = serde_json::from_str(raw)?;
        let mut reg = Self::builtin().clone();
        let convert = |entries: Vec<OverrideEntry>, kind, name: &'static str| {
            if entries.is_empty() {
                return Err(PromptError::EmptySet(name));
            }
            Ok(entries
                .into_iter()
                .map(|e| PromptTemplate {
                    id: e.id,
                    kind,
                    text: e.text,
                })
                .collect::<Vec<_>>())
        };
        if let Some(good) = file.good {
            let mut good = convert(good, PromptKind::Good, "good")?;
            if good.len() != 1 {
                return Err(PromptError::GoodCount(good.len()));
            }
            reg.good = good.remove(0);
        }
        if let Some(bad) = file.bad {
            reg.bad = convert(bad, PromptKind::BadHallucination, "bad")?;
        }
        if let Some(c) = file.captioning {
            reg.captioning = convert(c, PromptKind::Captioning, "captioning")?;
        }
        if let Some(d) = file.describe {
            reg.describe = convert(d, PromptKind::Describe, "describe")?;
        }
        reg.check()?;
        Ok(reg)
    }

    fn check(&self) -> Result<(), PromptError> {
        let mut seen = HashSet::new();
        for t in self.all() {
            if t.text.is_empty() {
                return Err(PromptError::EmptyText(t.id.clone()));
            }
            if !seen.insert(t.id.as_str()) {
                return Err(PromptError::DuplicateId(t.id.clone()));
            }
        }
        Ok(())
    }

    /// Every template, in registry order.
    pub fn all(&self) -> impl Iterator<Item = &PromptTemplate> {
        std::iter::once(&self.good)
            .chain(&self.bad)
            .chain(&self.captioning)
            .chain(&self.describe)
    }

    pub fn get(&self, id: &str) -> Option<&PromptTemplate> {
        self.all().find(|t| t.id == id)
    }

    pub fn good_prompt(&self) -> &PromptTemplate {
        &self.good
    }

    pub fn bad_prompts(&self) -> &[PromptTemplate] {
        &self.bad
    }

    pub fn caption_prompts(&self) -> &[PromptTemplate] {
        &self.captioning
    }

    pub fn describe_prompts(&self) -> &[PromptTemplate] {
        &self.describe
    }

    pub fn sample_bad_prompt(&self, rng: &SeededRng, index: u64) -> &PromptTemplate {
        &self.bad[rng.below(index, self.bad.len())]
    }

    pub fn sample_caption_prompt(&self, rng: &SeededRng, index: u64) -> &PromptTemplate {
        &self.captioning[rng.below(index, self.captioning.len())]
    }

    pub fn sample_describe_prompt(&self, rng: &SeededRng, index: u64) -> &PromptTemplate {
        &self.describe[rng.below(index, self.describe.len())]
    }
}
