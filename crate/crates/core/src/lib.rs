//! Self-training data factory for vision-language models and the
//! regularized preference loss it trains with.
//!
//! - [`prompts`]: prompt registry and seeded samplers
//! - [`corruption`]: low-resolution and color-jitter image corruption
//! - [`genclient`]: OpenAI-compatible generation client and offline mock
//! - [`pipeline`]: preference and description-infused dataset construction
//! - [`losscore`]: sequence log-probs, DPO/SPIN and the regularized loss
//! - [`config`] and [`cli`]: TOML run configuration and the `stic` binary

pub mod cli;
pub mod config;
pub mod corruption;
pub mod fraction;
pub mod genclient;
pub mod losscore;
pub mod pipeline;
pub mod prompts;
pub mod rng;
