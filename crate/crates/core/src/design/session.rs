use serde::{Deserialize, Serialize};

use super::{CandidateSet, CriterionKind, Schedule, UseProfile};
use crate::error::{Error, Result};
use crate::fatigue_model::TestConfig;
use crate::likelihood::{Dataset, Observation};
use crate::posterior::{derive_seed, McmcSettings, PriorSpec};

pub const SESSION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryEntry {
    /// 1-based run index.
    pub run: usize,
    pub criterion: CriterionKind,
    pub stress: f64,
    pub value: f64,
}

/// Persisted state of one test campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSession {
    pub format_version: u32,
    pub cfg: TestConfig,
    pub prior: PriorSpec,
    pub profile: UseProfile,
    pub candidates: CandidateSet,
    pub schedule: Schedule,
    pub observations: Dataset,
    pub history: Vec<HistoryEntry>,
    pub seed: u64,
    #[serde(default)]
    pub mcmc: McmcSettings,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DesignSession {
    /// Session with the default use profile, candidate grid and sampler settings.
    pub fn new(cfg: TestConfig, prior: PriorSpec, schedule: Schedule, observations: Dataset, seed: u64) -> Result<Self> {
        let s = DesignSession {
            format_version: SESSION_FORMAT_VERSION,
            cfg,
            prior,
            profile: UseProfile::default(),
            candidates: CandidateSet::default(),
            schedule,
            observations,
            history: Vec::new(),
            seed,
            mcmc: McmcSettings::default(),
            warnings: Vec::new(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != SESSION_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported session format_version {} (expected {SESSION_FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.cfg.validate()?;
        self.prior.validate()?;
        self.profile.validate()?;
        self.candidates.validate()?;
        self.schedule.validate()?;
        self.mcmc.validate()?;
        self.observations.validate(&self.cfg)?;
        if self.history.len() > self.schedule.n {
            return Err(Error::Validation(format!(
                "history has {} entries but the schedule allows {}",
                self.history.len(),
                self.schedule.n
            )));
        }
        for (i, h) in self.history.iter().enumerate() {
            let expected = self.schedule.criterion_for_run(i + 1);
            if h.run != i + 1 || h.criterion != expected {
                return Err(Error::Validation(format!(
                    "history entry {} is run {} with {}, expected run {} with {expected}",
                    i,
                    h.run,
                    h.criterion,
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.history.len() >= self.schedule.n
    }

    /// Sampler seed for the next recommendation; differs per run index.
    pub fn posterior_seed(&self) -> u64 {
        derive_seed(self.seed, self.history.len() as u64 + 1)
    }

    /// Append an observation. A stress that differs from the latest
    /// recommendation is accepted but leaves a warning in the session.
    pub fn record_observation(&mut self, obs: Observation) -> Result<Option<String>> {
        obs.validate(&self.cfg)?;
        let warning = self.history.last().and_then(|h| {
            let tol = 1e-9 * h.stress.abs();
            ((obs.x - h.stress).abs() > tol).then(|| {
                format!(
                    "observation {} at stress {} differs from run {} recommendation {}",
                    self.observations.len() + 1,
                    obs.x,
                    h.run,
                    h.stress
                )
            })
        });
        self.observations.push(obs);
        if let Some(w) = &warning {
            self.warnings.push(w.clone());
        }
        Ok(warning)
    }
}
