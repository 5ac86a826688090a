//! Right-censored likelihood and maximum likelihood estimation of `(A, B, nu)`.

use serde::{Deserialize, Serialize};

use crate::distributions::StandardFamily;
use crate::error::{Error, Result};
use crate::fatigue_model::{ModelParams, StressLevel, TestConfig};
use crate::simplex::{self, SimplexOptions};

/// One tested unit: stress, cycles, and censoring flag (1 = survived the horizon).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub x: f64,
    pub t: f64,
    pub delta: u8,
}

impl Observation {
    pub fn failure(x: f64, t: f64) -> Self {
        Observation { x, t, delta: 0 }
    }

    pub fn censored(x: f64, t: f64) -> Self {
        Observation { x, t, delta: 1 }
    }

    pub fn is_censored(&self) -> bool {
        self.delta == 1
    }

    pub fn validate(&self, cfg: &TestConfig) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::Validation(format!("cycles t must be positive, got {}", self.t)));
        }
        if self.delta > 1 {
            return Err(Error::Validation(format!(
                "censoring indicator must be 0 or 1, got {}",
                self.delta
            )));
        }
        if !(self.x > 0.0 && self.x < cfg.sigma_ult) {
            return Err(Error::Validation(format!(
                "stress {} must lie strictly inside (0, {})",
                self.x, cfg.sigma_ult
            )));
        }
        Ok(())
    }
}

/// Ordered test history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dataset {
    pub observations: Vec<Observation>,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>) -> Self {
        Dataset { observations }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn push(&mut self, obs: Observation) {
        self.observations.push(obs);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation> {
        self.observations.iter()
    }

    pub fn stresses(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.x).collect()
    }

    pub fn failures(&self) -> usize {
        self.observations.iter().filter(|o| !o.is_censored()).count()
    }

    pub fn distinct_stresses(&self) -> usize {
        let mut xs = self.stresses();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs.len()
    }

    pub fn validate(&self, cfg: &TestConfig) -> Result<()> {
        for (i, obs) in self.observations.iter().enumerate() {
            obs.validate(cfg)
                .map_err(|e| Error::Validation(format!("observation {}: {e}", i + 1)))?;
        }
        Ok(())
    }
}

impl FromIterator<Observation> for Dataset {
    fn from_iter<I: IntoIterator<Item = Observation>>(iter: I) -> Self {
        Dataset::new(iter.into_iter().collect())
    }
}

/// Dataset with the stress-dependent constants and log cycles precomputed.
pub(crate) struct PreparedData {
    rows: Vec<(StressLevel, f64, bool)>,
    family: &'static dyn StandardFamily,
}

impl PreparedData {
    pub(crate) fn new(data: &Dataset, cfg: &TestConfig) -> Result<Self> {
        data.validate(cfg)?;
        let rows = data
            .iter()
            .map(|o| Ok((StressLevel::new(o.x, cfg)?, o.t.ln(), o.is_censored())))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedData {
            rows,
            family: cfg.family.standard(),
        })
    }

    /// Log-likelihood for already-validated parameters.
    pub(crate) fn log_lik(&self, a: f64, b: f64, nu: f64) -> f64 {
        let ln_nu = nu.ln();
        self.rows
            .iter()
            .map(|(level, ln_t, censored)| {
                let z = (ln_t - level.mu(a, b)) / nu;
                if *censored {
                    self.family.log_sf(z)
                } else {
                    self.family.log_pdf(z) - ln_nu - ln_t
                }
            })
            .sum()
    }
}

/// Censored-data log-likelihood of `theta`.
pub fn log_likelihood(theta: &ModelParams, data: &Dataset, cfg: &TestConfig) -> Result<f64> {
    theta.validate()?;
    let prepared = PreparedData::new(data, cfg)?;
    Ok(prepared.log_lik(theta.a, theta.b, theta.nu))
}

/// Search box for the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBounds {
    #[serde(rename = "A")]
    pub a: (f64, f64),
    #[serde(rename = "B")]
    pub b: (f64, f64),
    pub nu: (f64, f64),
}

impl ParamBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("A", self.a), ("B", self.b), ("nu", self.nu)] {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(Error::Validation(format!(
                    "bounds for {name} must satisfy 0 < lo < hi, got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, theta: &ModelParams) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        inside(theta.a, self.a) && inside(theta.b, self.b) && inside(theta.nu, self.nu)
    }

    fn log_box(&self) -> ([f64; 3], [f64; 3]) {
        (
            [self.a.0.ln(), self.b.0.ln(), self.nu.0.ln()],
            [self.a.1.ln(), self.b.1.ln(), self.nu.1.ln()],
        )
    }
}

/// Number of multi-start points drawn from the Halton sequence.
pub const MLE_STARTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleReport {
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub boundary_hit: bool,
    pub best_start: usize,
    pub n_observations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub theta: ModelParams,
    pub report: MleReport,
}

/// Radical-inverse low-discrepancy point in `[0, 1)^3`.
pub(crate) fn halton3(index: usize) -> [f64; 3] {
    fn radical_inverse(mut i: usize, base: usize) -> f64 {
        let mut f = 1.0;
        let mut r = 0.0;
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    }
    [radical_inverse(index, 2), radical_inverse(index, 3), radical_inverse(index, 5)]
}

/// Maximum likelihood estimate by multi-start simplex search in log-parameter space.
pub fn fit_mle(data: &Dataset, cfg: &TestConfig, bounds: &ParamBounds) -> Result<MleFit> {
    bounds.validate()?;
    if data.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 observations for 3 parameters, got {}",
            data.len()
        )));
    }
    if data.distinct_stresses() < 2 {
        return Err(Error::InsufficientData(
            "need at least 2 distinct stress levels".into(),
        ));
    }
    if data.failures() == 0 {
        return Err(Error::Estimation(
            "all observations are censored; the likelihood has no interior maximum".into(),
        ));
    }
    let prepared = PreparedData::new(data, cfg)?;
    let (lower, upper) = bounds.log_box();
    let objective = |v: &[f64]| -prepared.log_lik(v[0].exp(), v[1].exp(), v[2].exp());

    let opts = SimplexOptions::default();
    let mut best: Option<(usize, simplex::SimplexResult)> = None;
    let mut total_iter = 0;
    for start in 0..MLE_STARTS {
        let u = halton3(start + 1);
        let x0: Vec<f64> = (0..3).map(|i| lower[i] + u[i] * (upper[i] - lower[i])).collect();
        let mut res = simplex::minimize(objective, &x0, &lower, &upper, &opts);
        total_iter += res.iterations;
        // restart from the optimum to escape premature simplex collapse
        let polish = SimplexOptions {
            initial_step: 0.01,
            ..opts
        };
        for _ in 0..3 {
            let again = simplex::minimize(objective, &res.x, &lower, &upper, &polish);
            total_iter += again.iterations;
            let improved = again.value < res.value - 1e-10 * res.value.abs().max(1.0);
            if again.value <= res.value {
                res = again;
            }
            if !improved {
                break;
            }
        }
        let better = match &best {
            None => true,
            Some((_, b)) => res.value < b.value,
        };
        if better {
            best = Some((start, res));
        }
    }
    let (best_start, res) = best.expect("at least one start");
    if !res.value.is_finite() {
        return Err(Error::Estimation("log-likelihood is not finite at any start".into()));
    }
    let boundary_hit = (0..3).any(|i| res.x[i] - lower[i] < 1e-6 || upper[i] - res.x[i] < 1e-6);
    let theta = ModelParams::new(
        res.x[0].exp().clamp(bounds.a.0, bounds.a.1),
        res.x[1].exp().clamp(bounds.b.0, bounds.b.1),
        res.x[2].exp().clamp(bounds.nu.0, bounds.nu.1),
    );
    Ok(MleFit {
        theta,
        report: MleReport {
            log_likelihood: -res.value,
            iterations: total_iter,
            converged: res.converged,
            boundary_hit,
            best_start,
            n_observations: data.len(),
        },
    })
}
