use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use gridmind::agent::PpoConfig;
use gridmind::priors::{ConditionalTrainConfig, GibbsConfig};
use gridmind::synthesis::{SearchBudget, WakeSleepConfig};

use crate::CliError;

pub const SEED_ENV: &str = "GRIDMIND_SEED";

/// Everything a run can be configured with. Config files are partial: any
/// key left out keeps its default, unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub side: usize,
    pub paths: Paths,
    pub prior_count: usize,
    pub conditional: ConditionalTrainConfig,
    pub accuracy_trials: usize,
    pub gibbs: GibbsConfig,
    /// Distinct boards (highest weight first) handed to synthesis.
    pub synth_tasks: usize,
    pub wake_sleep: WakeSleepConfig,
    pub describe_per_board: usize,
    pub text_dim: usize,
    /// Grounding providers trained in the pipeline besides the baseline and the autoencoder.
    pub providers: Vec<String>,
    pub ppo_grounding: PpoConfig,
    pub ppo_baseline: PpoConfig,
    pub eval_episodes: usize,
    /// Boards per test distribution, highest weight first.
    pub eval_boards: usize,
    pub train_fraction: f64,
    pub resamples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub out_dir: Option<PathBuf>,
    pub priors: Option<PathBuf>,
    pub human_descriptions: Option<PathBuf>,
    pub human_embeddings: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            side: 4,
            paths: Paths::default(),
            prior_count: 500,
            conditional: ConditionalTrainConfig::default(),
            accuracy_trials: 10_000,
            gibbs: GibbsConfig::default(),
            synth_tasks: 60,
            wake_sleep: WakeSleepConfig {
                budget: SearchBudget {
                    max_nodes: 50_000,
                    max_program_size: 16,
                    timeout: std::time::Duration::from_secs(600),
                },
                ..WakeSleepConfig::default()
            },
            describe_per_board: 10,
            text_dim: gridmind::embeddings::TEXT_DIM,
            providers: vec!["language".into(), "program".into()],
            ppo_grounding: PpoConfig::grounding(),
            ppo_baseline: PpoConfig::no_grounding(),
            eval_episodes: 20,
            eval_boards: 50,
            train_fraction: 0.8,
            resamples: gridmind::analysis::DEFAULT_RESAMPLES,
        }
    }
}

impl ExperimentConfig {
    /// Defaults overlaid with `path` (if any), then the seed override.
    pub fn resolve(path: Option<&Path>, seed_flag: Option<u64>) -> Result<Self, CliError> {
        let mut cfg = match path {
            None => ExperimentConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
                let user: Value = serde_json::from_str(&text).map_err(|e| {
                    CliError::Validation(format!("{}: line {}: {e}", p.display(), e.line()))
                })?;
                Self::from_value(user).map_err(|m| CliError::Validation(format!("{}: {m}", p.display())))?
            }
        };
        if let Some(s) = seed_from_env()? {
            cfg.seed = s;
        }
        if let Some(s) = seed_flag {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(user: Value) -> Result<Self, String> {
        let mut base = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
        merge(&mut base, user, "")?;
        serde_json::from_value(base).map_err(|e| e.to_string())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if !(gridmind::board::MIN_SIDE..=gridmind::board::MAX_SIDE).contains(&self.side) {
            return bad(format!("side {} out of range", self.side));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)".into());
        }
        for p in &self.providers {
            if !matches!(p.as_str(), "language" | "program" | "human") {
                return bad(format!("unknown provider {p:?} (expected language, program or human)"));
            }
        }
        self.gibbs.validate().map_err(|e| CliError::Validation(format!("gibbs: {e}")))?;
        self.ppo_grounding
            .validate()
            .map_err(|e| CliError::Validation(format!("ppo_grounding: {e}")))?;
        self.ppo_baseline
            .validate()
            .map_err(|e| CliError::Validation(format!("ppo_baseline: {e}")))?;
        Ok(())
    }
}

fn seed_from_env() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Validation(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Recursive overlay; objects merge key by key, everything else replaces.
fn merge(base: &mut Value, user: Value, at: &str) -> Result<(), String> {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &path)?,
                    None => return Err(format!("unknown key {path:?}")),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}
