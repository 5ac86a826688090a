//! Monte Carlo comparison of sequential strategies: simulate campaigns from a
//! known truth, replicate trials, and summarise estimator precision and where
//! each strategy puts its test units.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{next_point, CandidateSet, CriterionKind, DesignSession, Schedule, UseProfile};
use crate::design::weighted_avar_report;
use crate::error::{Error, Result};
use crate::fatigue_model::{mu, ModelParams, TestConfig};
use crate::likelihood::{fit_mle, Dataset, Observation};
use crate::posterior::{sample_posterior, McmcSettings, PriorSpec, DEFAULT_NU_RANGE};

/// Draw one lifetime at stress `x`, censored at the configured horizon.
pub fn simulate_lifetime(theta: &ModelParams, x: f64, cfg: &TestConfig, rng: &mut dyn RngCore) -> Result<Observation> {
    if !(theta.nu >= 0.0 && theta.nu.is_finite()) {
        return Err(Error::domain(format!("nu must be non-negative, got {}", theta.nu)));
    }
    let loc = mu(x, theta.a, theta.b, cfg)?;
    let z = cfg.family.standard().sample(rng);
    let t = (loc + theta.nu * z).exp();
    Ok(if t > cfg.censor_time {
        Observation::censored(x, cfg.censor_time)
    } else {
        Observation::failure(x, t)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialLevel {
    /// Stress as a fraction of the ultimate stress.
    pub q: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    pub theta_true: ModelParams,
    /// Seed observations simulated from the truth before the first run.
    pub initial_design: Vec<InitialLevel>,
    /// Fixed seed observations; replaces `initial_design` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_data: Option<Dataset>,
}

impl Default for TruthSpec {
    fn default() -> Self {
        TruthSpec {
            theta_true: ModelParams::new(0.00157, 0.3188, 0.7259),
            initial_design: [0.45, 0.55, 0.65]
                .iter()
                .map(|&q| InitialLevel { q, count: 1 })
                .collect(),
            initial_data: None,
        }
    }
}

impl TruthSpec {
    pub fn validate(&self, cfg: &TestConfig) -> Result<()> {
        self.theta_true.validate()?;
        let n = match &self.initial_data {
            Some(d) => {
                d.validate(cfg)?;
                d.len()
            }
            None => {
                if let Some(l) = self.initial_design.iter().find(|l| !(l.q > 0.0 && l.q < 1.0)) {
                    return Err(Error::Validation(format!("initial design q = {} must lie in (0, 1)", l.q)));
                }
                self.initial_design.iter().map(|l| l.count).sum()
            }
        };
        if n < 3 {
            return Err(Error::Validation(format!("initial design yields {n} observations, need at least 3")));
        }
        Ok(())
    }

    fn seed_observations(&self, cfg: &TestConfig, rng: &mut dyn RngCore) -> Result<Dataset> {
        if let Some(d) = &self.initial_data {
            return Ok(d.clone());
        }
        let mut data = Dataset::default();
        for level in &self.initial_design {
            for _ in 0..level.count {
                data.push(simulate_lifetime(&self.theta_true, cfg.stress_from_fraction(level.q), cfg, rng)?);
            }
        }
        Ok(data)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub label: String,
    pub schedule: Schedule,
}

impl StrategySpec {
    pub fn new(label: &str, n: usize, n1: usize) -> Self {
        StrategySpec {
            label: label.to_string(),
            schedule: Schedule { n, n1 },
        }
    }

    /// Twelve-run strategies from all C-optimal to all D-optimal.
    pub fn defaults() -> Vec<StrategySpec> {
        vec![
            StrategySpec::new("a: 12 C-opt", 12, 0),
            StrategySpec::new("b: 12 D-opt", 12, 12),
            StrategySpec::new("c: 6 D-opt + 6 C-opt", 12, 6),
            StrategySpec::new("d: 4 D-opt + 8 C-opt", 12, 4),
            StrategySpec::new("e: 2 D-opt + 10 C-opt", 12, 2),
        ]
    }
}

/// Everything a study needs; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub cfg: TestConfig,
    pub prior: PriorSpec,
    pub profile: UseProfile,
    pub candidates: CandidateSet,
    pub mcmc: McmcSettings,
    pub truth: TruthSpec,
    pub strategies: Vec<StrategySpec>,
    pub trials: usize,
    pub seed: u64,
}

pub const DEFAULT_TRIALS: usize = 20;
pub const DEFAULT_STUDY_SEED: u64 = 20_240_917;

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            cfg: TestConfig::composite_fatigue(),
            prior: PriorSpec::example(),
            profile: UseProfile::default(),
            candidates: CandidateSet::default(),
            mcmc: McmcSettings::default(),
            truth: TruthSpec::default(),
            strategies: StrategySpec::defaults(),
            trials: DEFAULT_TRIALS,
            seed: DEFAULT_STUDY_SEED,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        self.prior.validate()?;
        self.profile.validate()?;
        self.candidates.validate()?;
        self.mcmc.validate()?;
        self.truth.validate(&self.cfg)?;
        if self.trials == 0 {
            return Err(Error::Validation("trials must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Validation("no strategies given".into()));
        }
        for (i, s) in self.strategies.iter().enumerate() {
            s.schedule.validate()?;
            if self.strategies[..i].iter().any(|o| o.label == s.label) {
                return Err(Error::Validation(format!("duplicate strategy label '{}'", s.label)));
            }
        }
        Ok(())
    }

    fn session(&self, schedule: Schedule, observations: Dataset, seed: u64) -> Result<DesignSession> {
        let mut s = DesignSession::new(self.cfg.clone(), self.prior, schedule, observations, seed)?;
        s.profile = self.profile.clone();
        s.candidates = self.candidates.clone();
        s.mcmc = self.mcmc;
        s.validate()?;
        Ok(s)
    }
}

/// Annotations attached to a run record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunFlag {
    /// ML fit failed; the posterior mean of this run's draws was used instead.
    MleFallback,
    /// ML estimate sits on the estimation box.
    MleBoundary,
    MleNotConverged,
    /// Information was regularised before inversion.
    Ridge,
    /// Some candidate had more than 10% of its draws skipped.
    UnreliableCandidate,
}

impl RunFlag {
    pub fn name(self) -> &'static str {
        match self {
            RunFlag::MleFallback => "mle_fallback",
            RunFlag::MleBoundary => "mle_boundary",
            RunFlag::MleNotConverged => "mle_not_converged",
            RunFlag::Ridge => "ridge",
            RunFlag::UnreliableCandidate => "unreliable_candidate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub criterion: CriterionKind,
    pub q: f64,
    pub observation: Observation,
    pub theta_hat: ModelParams,
    pub avar: f64,
    pub flags: Vec<RunFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub strategy: String,
    pub trial: usize,
    pub seed_observations: Dataset,
    pub runs: Vec<RunRecord>,
}

/// Run one sequential campaign under `strategy`, starting from `seeds`.
pub fn run_trial(
    strategy: &StrategySpec,
    trial: usize,
    seeds: &Dataset,
    study: &StudyConfig,
    rng: &mut dyn RngCore,
) -> Result<TrialRecord> {
    let truth = &study.truth;
    let cfg = &study.cfg;
    let seeds = seeds.clone();
    let mut session = study.session(strategy.schedule, seeds.clone(), rng.next_u64())?;
    let bounds = study.prior.bounds(DEFAULT_NU_RANGE);
    let mut runs = Vec::with_capacity(strategy.schedule.n);
    while !session.is_complete() {
        let draws = sample_posterior(&session.observations, &session.prior, cfg, &session.mcmc, rng.next_u64())?;
        let rec = next_point(&mut session, &draws)?;
        let obs = simulate_lifetime(&truth.theta_true, rec.stress, cfg, rng)?;
        session.record_observation(obs)?;

        let mut flags = Vec::new();
        if rec.table.iter().any(|r| r.unreliable) {
            flags.push(RunFlag::UnreliableCandidate);
        }
        let theta_hat = match fit_mle(&session.observations, cfg, &bounds) {
            Ok(fit) => {
                if fit.report.boundary_hit {
                    flags.push(RunFlag::MleBoundary);
                }
                if !fit.report.converged {
                    flags.push(RunFlag::MleNotConverged);
                }
                fit.theta
            }
            Err(_) => {
                flags.push(RunFlag::MleFallback);
                draws.mean()
            }
        };
        let (avar, cov) = weighted_avar_report(&theta_hat, &session.observations.stresses(), &session.profile, cfg)?;
        if cov.ridge > 0.0 {
            flags.push(RunFlag::Ridge);
        }
        runs.push(RunRecord {
            run: rec.run,
            criterion: rec.criterion,
            q: rec.q,
            observation: obs,
            theta_hat,
            avar,
            flags,
        });
    }
    Ok(TrialRecord {
        strategy: strategy.label.clone(),
        trial,
        seed_observations: seeds,
        runs,
    })
}

/// Total relative mean squared error over the three parameters.
pub fn m_measure(estimates: &[ModelParams], truth: &ModelParams) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::domain("no estimates supplied"));
    }
    let t = truth.to_array();
    if t.iter().any(|v| *v == 0.0) {
        return Err(Error::domain("true parameter components must be nonzero"));
    }
    let k = estimates.len() as f64;
    let mut total = 0.0;
    for (j, tj) in t.iter().enumerate() {
        let sq: f64 = estimates.iter().map(|e| ((e.to_array()[j] - tj) / tj).powi(2)).sum();
        total += sq / k;
    }
    Ok(total)
}

/// Independent random stream for one (strategy, trial) pair.
pub fn trial_rng(seed: u64, strategy: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((strategy as u64) << 32) | trial as u64);
    rng
}

const SEED_DATA_STREAM: usize = u32::MAX as usize;

/// Seed observations for trial `trial`, shared by every strategy.
pub fn trial_seed_data(study: &StudyConfig, trial: usize) -> Result<Dataset> {
    let mut rng = trial_rng(study.seed, SEED_DATA_STREAM, trial);
    study.truth.seed_observations(&study.cfg, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvarPoint {
    pub strategy: String,
    pub run: usize,
    pub mean_avar: f64,
    /// Standard error across trials; NaN with a single trial.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MPoint {
    pub strategy: String,
    pub run: usize,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPoint {
    pub strategy: String,
    /// `None` for the overall allocation.
    pub run: Option<usize>,
    pub q: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub strategies: Vec<StrategySpec>,
    pub candidates: Vec<f64>,
    pub sigma_ult: f64,
    pub theta_true: ModelParams,
    pub trials: Vec<TrialRecord>,
}

impl StudyResult {
    fn trials_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a TrialRecord> + 'a {
        self.trials.iter().filter(move |t| t.strategy == label)
    }

    pub fn avar_trajectory(&self) -> Vec<AvarPoint> {
        let mut out = Vec::new();
        for s in &self.strategies {
            for run in 1..=s.schedule.n {
                let v: Vec<f64> = self.trials_for(&s.label).map(|t| t.runs[run - 1].avar).collect();
                let k = v.len() as f64;
                let mean = v.iter().sum::<f64>() / k;
                let se = if v.len() > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt() / k.sqrt()
                } else {
                    f64::NAN
                };
                out.push(AvarPoint {
                    strategy: s.label.clone(),
                    run,
                    mean_avar: mean,
                    se,
                });
            }
        }
        out
    }

    pub fn m_trajectory(&self) -> Result<Vec<MPoint>> {
        let mut out = Vec::new();
        for s in &self.strategies {
            for run in 1..=s.schedule.n {
                let est: Vec<ModelParams> = self.trials_for(&s.label).map(|t| t.runs[run - 1].theta_hat).collect();
                out.push(MPoint {
                    strategy: s.label.clone(),
                    run,
                    m: m_measure(&est, &self.theta_true)?,
                });
            }
        }
        Ok(out)
    }

    fn fractions(&self, label: &str, run: Option<usize>) -> Vec<f64> {
        let mut counts = vec![0usize; self.candidates.len()];
        let mut total = 0usize;
        for t in self.trials_for(label) {
            for r in t.runs.iter().filter(|r| run.is_none_or(|k| r.run == k)) {
                if let Some(i) = self.candidates.iter().position(|q| *q == r.q) {
                    counts[i] += 1;
                }
                total += 1;
            }
        }
        counts.iter().map(|c| *c as f64 / total as f64).collect()
    }

    /// Share of all sequential runs placed at each candidate level.
    pub fn allocation(&self) -> Vec<AllocationPoint> {
        let mut out = Vec::new();
        for s in &self.strategies {
            for (q, fraction) in self.candidates.iter().zip(self.fractions(&s.label, None)) {
                out.push(AllocationPoint {
                    strategy: s.label.clone(),
                    run: None,
                    q: *q,
                    fraction,
                });
            }
        }
        out
    }

    /// Share of trials placing run `r` at each candidate level.
    pub fn per_run_allocation(&self) -> Vec<AllocationPoint> {
        let mut out = Vec::new();
        for s in &self.strategies {
            for run in 1..=s.schedule.n {
                for (q, fraction) in self.candidates.iter().zip(self.fractions(&s.label, Some(run))) {
                    out.push(AllocationPoint {
                        strategy: s.label.clone(),
                        run: Some(run),
                        q: *q,
                        fraction,
                    });
                }
            }
        }
        out
    }
}

/// Run every strategy for `study.trials` trials. Trials run in parallel and
/// the result does not depend on the number of worker threads.
pub fn run_study(study: &StudyConfig) -> Result<StudyResult> {
    run_study_with_progress(study, &|_, _| {})
}

pub fn run_study_with_progress(
    study: &StudyConfig,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<StudyResult> {
    study.validate()?;
    let jobs: Vec<(usize, usize)> = (0..study.strategies.len())
        .flat_map(|s| (0..study.trials).map(move |k| (s, k)))
        .collect();
    let seeds = (0..study.trials)
        .map(|k| trial_seed_data(study, k))
        .collect::<Result<Vec<_>>>()?;
    let done = std::sync::atomic::AtomicUsize::new(0);
    let trials = jobs
        .par_iter()
        .map(|&(s, k)| {
            let mut rng = trial_rng(study.seed, s, k);
            let record = run_trial(&study.strategies[s], k, &seeds[k], study, &mut rng).map_err(|e| {
                Error::Planning(format!("strategy '{}' trial {k}: {e}", study.strategies[s].label))
            })?;
            let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
            progress(n, jobs.len());
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyResult {
        strategies: study.strategies.clone(),
        candidates: study.candidates.q.clone(),
        sigma_ult: study.cfg.sigma_ult,
        theta_true: study.truth.theta_true,
        trials,
    })
}
