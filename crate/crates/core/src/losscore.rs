//! Preference-loss family over sequence log-probabilities.
//!
//! All quantities are natural-log probabilities. With
//!
//! ```text
//! margin = lambda * ((policy_w - ref_w) - (policy_l - ref_l))
//! ```
//!
//! the DPO term is `l(margin)` with the logistic loss `l(t) = log(1 + exp(-t))`,
//! and the regularized objective adds `-alpha * policy_w`, which pulls up the
//! likelihood of the preferred response. Gradients are taken with respect to
//! the four sequence log-probs, not model parameters.

use serde::{Deserialize, Serialize};

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("sequence has no tokens")]
    EmptySequence,
    #[error("token log-prob at position {index} is {value}; must be finite and <= 0")]
    BadTokenLogprob { index: usize, value: f64 },
    #[error("record `{id}`: field `{field}` is {value}; must be finite and <= 0")]
    BadRecord {
        id: String,
        field: &'static str,
        value: f64,
    },
    #[error("logistic loss argument must be finite, got {0}")]
    Domain(f64),
    #[error("lambda must be finite and > 0, got {0}")]
    BadLambda(f64),
    #[error("alpha must be finite and >= 0, got {0}")]
    BadAlpha(f64),
    #[error("batch is empty")]
    EmptyBatch,
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Per-token log-probs of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLogprobs(Vec<f64>);

impl SequenceLogprobs {
    pub fn new(token_logprobs: Vec<f64>) -> Result<Self, LossError> {
        if token_logprobs.is_empty() {
            return Err(LossError::EmptySequence);
        }
        if let Some((index, &value)) = token_logprobs
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v <= 0.0))
        {
            return Err(LossError::BadTokenLogprob { index, value });
        }
        Ok(Self(token_logprobs))
    }

    pub fn tokens(&self) -> &[f64] {
        &self.0
    }
}

/// Log-probability of the whole sequence: the sum of its token log-probs.
pub fn seq_logprob(s: &SequenceLogprobs) -> f64 {
    compensated_sum(s.0.iter().copied())
}

/// `log(1 + exp(-t))` without overflow.
pub fn logistic_loss(t: f64) -> Result<f64, LossError> {
    if !t.is_finite() {
        return Err(LossError::Domain(t));
    }
    Ok(softplus_neg(t))
}

fn softplus_neg(t: f64) -> f64 {
    if t > 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

/// `1 / (1 + exp(-t))` without overflow.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceLogprobRecord {
    #[serde(rename = "id")]
    pub record_id: String,
    pub policy_w: f64,
    pub policy_l: f64,
    pub ref_w: f64,
    pub ref_l: f64,
}

impl PreferenceLogprobRecord {
    pub fn new(
        record_id: impl Into<String>,
        policy_w: f64,
        policy_l: f64,
        ref_w: f64,
        ref_l: f64,
    ) -> Result<Self, LossError> {
        let rec = Self {
            record_id: record_id.into(),
            policy_w,
            policy_l,
            ref_w,
            ref_l,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let fields = [
            ("policy_w", self.policy_w),
            ("policy_l", self.policy_l),
            ("ref_w", self.ref_w),
            ("ref_l", self.ref_l),
        ];
        for (field, value) in fields {
            if !(value.is_finite() && value <= 0.0) {
                return Err(LossError::BadRecord {
                    id: self.record_id.clone(),
                    field,
                    value,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl LossConfig {
    pub fn new(lambda: f64, alpha: f64) -> Result<Self, LossError> {
        let cfg = Self { lambda, alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(LossError::BadLambda(self.lambda));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(LossError::BadAlpha(self.alpha));
        }
        Ok(())
    }
}

pub fn margin(rec: &PreferenceLogprobRecord, lambda: f64) -> f64 {
    lambda * ((rec.policy_w - rec.ref_w) - (rec.policy_l - rec.ref_l))
}

pub fn dpo_loss(rec: &PreferenceLogprobRecord, lambda: f64) -> f64 {
    softplus_neg(margin(rec, lambda))
}

/// Self-play variant: `ref_*` come from the previous iterate and the
/// dispreferred sequence is the model's own generation. Numerically the
/// same as [`dpo_loss`].
pub fn spin_loss(rec: &PreferenceLogprobRecord, lambda: f64) -> f64 {
    dpo_loss(rec, lambda)
}

/// DPO term plus `-alpha * policy_w`.
pub fn stic_loss(rec: &PreferenceLogprobRecord, cfg: &LossConfig) -> f64 {
    dpo_loss(rec, cfg.lambda) - cfg.alpha * rec.policy_w
}

/// Partial derivatives of [`stic_loss`] with respect to each input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossGradient {
    pub policy_w: f64,
    pub policy_l: f64,
    pub ref_w: f64,
    pub ref_l: f64,
}

impl LossGradient {
    pub fn as_array(&self) -> [f64; 4] {
        [self.policy_w, self.policy_l, self.ref_w, self.ref_l]
    }

    pub fn sum(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

pub fn stic_loss_grad(rec: &PreferenceLogprobRecord, cfg: &LossConfig) -> LossGradient {
    let s = cfg.lambda * sigmoid(-margin(rec, cfg.lambda));
    LossGradient {
        policy_w: -s - cfg.alpha,
        policy_l: s,
        ref_w: s,
        ref_l: -s,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLoss {
    pub id: String,
    pub loss: f64,
    pub margin: f64,
    pub dpo_term: f64,
    pub reg_term: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient: Option<LossGradient>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossAggregate {
    pub count: usize,
    pub mean_loss: f64,
    pub mean_margin: f64,
    pub frac_margin_positive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub lambda: f64,
    pub alpha: f64,
    pub records: Vec<RecordLoss>,
    pub aggregate: LossAggregate,
}

impl LossReport {
    pub fn without_gradients(mut self) -> Self {
        for r in &mut self.records {
            r.gradient = None;
        }
        self
    }
}

/// Per-record losses and their unweighted means.
pub fn batch_report(records: &[PreferenceLogprobRecord], cfg: &LossConfig) -> Result<LossReport, LossError> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let per: Vec<RecordLoss> = records
        .iter()
        .map(|rec| {
            rec.validate()?;
            let m = margin(rec, cfg.lambda);
            let dpo_term = softplus_neg(m);
            let reg_term = -cfg.alpha * rec.policy_w;
            Ok(RecordLoss {
                id: rec.record_id.clone(),
                loss: dpo_term + reg_term,
                margin: m,
                dpo_term,
                reg_term,
                gradient: Some(stic_loss_grad(rec, cfg)),
            })
        })
        .collect::<Result<_, LossError>>()?;
    let n = per.len() as f64;
    let aggregate = LossAggregate {
        count: per.len(),
        mean_loss: compensated_sum(per.iter().map(|r| r.loss)) / n,
        mean_margin: compensated_sum(per.iter().map(|r| r.margin)) / n,
        frac_margin_positive: per.iter().filter(|r| r.margin > 0.0).count() as f64 / n,
    };
    Ok(LossReport {
        lambda: cfg.lambda,
        alpha: cfg.alpha,
        records: per,
        aggregate,
    })
}
