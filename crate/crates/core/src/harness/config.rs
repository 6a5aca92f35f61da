use std::path::Path;

use serde::{Deserialize, Serialize};

use super::canonical::parse;
use super::{read_text, HarnessError, Result};
use crate::csrec::CsrecHyper;
use crate::metrics::HistoryMode;
use crate::seqrec::{Hyperparams, SeqError};
use crate::sim::{DecisionModelParams, ExposurePolicy};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_users: usize,
    pub n_genres: usize,
    pub items_per_genre: usize,
    pub decision: DecisionModelParams,
    pub obs_policy: ExposurePolicy,
    pub intv_policy: ExposurePolicy,
    pub obs_len: usize,
    pub intv_len: usize,
    pub drift_rate: Option<f64>,
    pub split: [f64; 3],
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_genres: 10,
            items_per_genre: 20,
            decision: DecisionModelParams::default(),
            obs_policy: ExposurePolicy::UserProposal { kappa: 3.0 },
            intv_policy: ExposurePolicy::Uniform,
            obs_len: 60,
            intv_len: 30,
            drift_rate: None,
            split: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub ftilde: Hyperparams,
    pub csrec: CsrecHyper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: Vec<usize>,
    pub alpha: Vec<f64>,
    pub beta: usize,
    pub history: HistoryMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: vec![5, 10, 20], alpha: vec![0.2, 0.5], beta: 3, history: HistoryMode::TeacherForcing }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub seed: u64,
    pub output_dir: String,
    pub simulator: SimConfig,
    pub model: ModelConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            seed: 0,
            output_dir: "run".into(),
            simulator: SimConfig::default(),
            model: ModelConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> HarnessError {
    HarnessError::Validation { field: field.into(), reason: reason.into() }
}

fn hyper_error(prefix: &str, e: SeqError) -> HarnessError {
    match e {
        SeqError::InvalidHyper { field, reason } => invalid(format!("{prefix}.{field}"), reason),
        other => invalid(prefix, other.to_string()),
    }
}

fn check_policy(field: &str, p: &ExposurePolicy) -> Result<()> {
    if let ExposurePolicy::UserProposal { kappa } = p {
        if !(kappa.is_finite() && *kappa >= 0.0) {
            return Err(invalid(format!("{field}.kappa"), "must be finite and >= 0"));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(invalid("format_version", format!("unsupported version {}", self.format_version)));
        }
        let s = &self.simulator;
        for (field, v) in [
            ("simulator.n_users", s.n_users),
            ("simulator.n_genres", s.n_genres),
            ("simulator.items_per_genre", s.items_per_genre),
            ("simulator.obs_len", s.obs_len),
            ("simulator.intv_len", s.intv_len),
        ] {
            if v == 0 {
                return Err(invalid(field, "must be positive"));
            }
        }
        let d = &s.decision;
        for (field, v) in [("w_p", d.w_p), ("w_d", d.w_d), ("w_r", d.w_r), ("b", d.b)] {
            if !v.is_finite() {
                return Err(invalid(format!("simulator.decision.{field}"), "must be finite"));
            }
        }
        check_policy("simulator.obs_policy", &s.obs_policy)?;
        check_policy("simulator.intv_policy", &s.intv_policy)?;
        if let Some(r) = s.drift_rate {
            if !(0.0..1.0).contains(&r) {
                return Err(invalid("simulator.drift_rate", "must lie in [0, 1)"));
            }
        }
        let sum: f64 = s.split.iter().sum();
        if s.split.iter().any(|r| !(*r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(invalid("simulator.split", "ratios must be >= 0 and sum to 1"));
        }
        self.model.ftilde.validate().map_err(|e| hyper_error("model.ftilde", e))?;
        self.model.csrec.validate().map_err(|e| match e {
            SeqError::InvalidHyper { field: "lambda", reason } => invalid("model.csrec.lambda", reason),
            e => hyper_error("model.csrec.train", e),
        })?;
        let (f, c) = (&self.model.ftilde, &self.model.csrec.train);
        if self.model.csrec.init_from_ftilde && (f.embed_dim != c.embed_dim || f.max_seq_len != c.max_seq_len) {
            return Err(invalid(
                "model.csrec.train.embed_dim",
                "warm start requires embed_dim and max_seq_len equal to the observational model",
            ));
        }
        let e = &self.eval;
        if e.k.is_empty() || e.k.contains(&0) {
            return Err(invalid("eval.k", "needs at least one positive k"));
        }
        if e.alpha.is_empty() || e.alpha.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(invalid("eval.alpha", "values must lie in (0, 1)"));
        }
        if e.beta == 0 || e.beta > s.intv_len {
            return Err(invalid("eval.beta", "must lie in 1..=simulator.intv_len"));
        }
        Ok(())
    }
}

pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = parse(text, origin)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&read_text(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = parse_config("{}", "t").unwrap();
        let h = &c.model.ftilde;
        assert_eq!((h.embed_dim, h.max_seq_len, h.batch_size), (64, 50, 256));
        assert_eq!((h.adam_beta1, h.adam_beta2, h.learning_rate), (0.9, 0.999, 0.0005));
        assert_eq!(c.eval.k, vec![5, 10, 20]);
        assert_eq!(c.eval.alpha, vec![0.2, 0.5]);
        assert_eq!(c.eval.beta, 3);
        assert_eq!(c.model.csrec.lambda, 1.0);
        assert!(c.model.csrec.detach_target);
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn negative_learning_rate_names_the_field() {
        let err = parse_config(r#"{"model":{"ftilde":{"learning_rate":-1.0}}}"#, "t").unwrap_err();
        match err {
            HarnessError::Validation { field, .. } => assert_eq!(field, "model.ftilde.learning_rate"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = parse_config("{\n \"simulator\": {\"n_user\": 3}\n}", "t").unwrap_err();
        assert!(matches!(err, HarnessError::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn range_checks() {
        for (text, field) in [
            (r#"{"eval":{"alpha":[1.5]}}"#, "eval.alpha"),
            (r#"{"simulator":{"split":[0.5,0.1,0.1]}}"#, "simulator.split"),
            (r#"{"simulator":{"n_users":0}}"#, "simulator.n_users"),
            (r#"{"model":{"csrec":{"lambda":-1.0}}}"#, "model.csrec.lambda"),
            (r#"{"simulator":{"obs_policy":{"kind":"user_proposal","kappa":-1.0}}}"#, "simulator.obs_policy.kappa"),
        ] {
            match parse_config(text, "t").unwrap_err() {
                HarnessError::Validation { field: f, .. } => assert_eq!(f, field),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn config_round_trips() {
        let mut c = ExperimentConfig::default();
        c.simulator.drift_rate = Some(0.25);
        c.eval.history = HistoryMode::SelfRollout;
        let text = super::super::canonical::to_canonical_string(&c).unwrap();
        assert_eq!(parse_config(&text, "t").unwrap(), c);
    }
}
