//! Priors and random-walk Metropolis sampling of the posterior of `(A, B, nu)`.
//!
//! `A` and `B` carry uniform priors; `nu^2` carries an inverse-gamma prior. The
//! chain runs on `(A, B, log nu)` with one Gaussian proposal per coordinate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;

use crate::error::{Error, Result};
use crate::fatigue_model::{ModelParams, TestConfig};
use crate::likelihood::{halton3, Dataset, ParamBounds, PreparedData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    #[serde(rename = "A_range")]
    pub a_range: (f64, f64),
    #[serde(rename = "B_range")]
    pub b_range: (f64, f64),
    /// Inverse-gamma shape for nu^2.
    pub nu2_shape: f64,
    /// Inverse-gamma scale for nu^2.
    pub nu2_scale: f64,
}

impl PriorSpec {
    /// Example prior bracketing the glass-fibre estimates. These ranges are
    /// planning choices, not measured values.
    pub fn example() -> Self {
        PriorSpec {
            a_range: (1e-4, 1e-2),
            b_range: (0.05, 1.5),
            nu2_shape: 3.0,
            nu2_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a1, a2) = self.a_range;
        let (b1, b2) = self.b_range;
        if !(a1 > 0.0 && a1 < a2 && a2.is_finite()) {
            return Err(Error::Validation(format!("A_range must satisfy 0 < a1 < a2, got ({a1}, {a2})")));
        }
        if !(b1 > 0.0 && b1 < b2 && b2.is_finite()) {
            return Err(Error::Validation(format!("B_range must satisfy 0 < b1 < b2, got ({b1}, {b2})")));
        }
        if !(self.nu2_shape > 0.0 && self.nu2_scale > 0.0) {
            return Err(Error::Validation("inverse-gamma shape and scale must be positive".into()));
        }
        Ok(())
    }

    pub fn in_support(&self, theta: &ModelParams) -> bool {
        theta.a >= self.a_range.0
            && theta.a <= self.a_range.1
            && theta.b >= self.b_range.0
            && theta.b <= self.b_range.1
            && theta.nu > 0.0
            && theta.nu.is_finite()
    }

    /// Log prior density of `theta` with respect to `(A, B, nu)`.
    pub fn log_density(&self, theta: &ModelParams) -> f64 {
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        let (a1, a2) = self.a_range;
        let (b1, b2) = self.b_range;
        let k = self.nu2_shape;
        let g = self.nu2_scale;
        let s = theta.nu * theta.nu;
        let inv_gamma = k * g.ln() - ln_gamma(k) - (k + 1.0) * s.ln() - g / s;
        // change of variables nu^2 -> nu
        let jacobian = (2.0 * theta.nu).ln();
        -(a2 - a1).ln() - (b2 - b1).ln() + inv_gamma + jacobian
    }

    /// Estimation box matching the prior support, with `nu` limited to `nu_range`.
    pub fn bounds(&self, nu_range: (f64, f64)) -> ParamBounds {
        ParamBounds {
            a: self.a_range,
            b: self.b_range,
            nu: nu_range,
        }
    }
}

/// Range for `nu` used whenever a finite box is needed for estimation.
pub const DEFAULT_NU_RANGE: (f64, f64) = (1e-3, 20.0);

/// Unnormalised log posterior; `-inf` outside the prior support.
pub fn log_posterior_unnorm(
    theta: &ModelParams,
    data: &Dataset,
    prior: &PriorSpec,
    cfg: &TestConfig,
) -> Result<f64> {
    let lp = prior.log_density(theta);
    if lp == f64::NEG_INFINITY || data.is_empty() {
        return Ok(lp);
    }
    let prepared = PreparedData::new(data, cfg)?;
    Ok(lp + prepared.log_lik(theta.a, theta.b, theta.nu))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcSettings {
    /// Total sweeps including burn-in.
    pub length: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Sweeps between proposal-scale updates during burn-in.
    pub adapt_interval: usize,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            length: 11_000,
            burn_in: 1_000,
            thin: 10,
            adapt_interval: 50,
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.adapt_interval == 0 {
            return Err(Error::Validation("thin and adapt_interval must be positive".into()));
        }
        if self.length <= self.burn_in || (self.length - self.burn_in) < self.thin {
            return Err(Error::Validation(format!(
                "chain length {} leaves no draws after burn-in {} and thinning {}",
                self.length, self.burn_in, self.thin
            )));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.length - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcDiagnostics {
    /// Post-burn-in acceptance over all coordinate updates.
    pub acceptance_rate: f64,
    pub coordinate_acceptance: [f64; 3],
    pub proposal_scales: [f64; 3],
    pub chain_length: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub draws: Vec<ModelParams>,
    pub diagnostics: McmcDiagnostics,
}

impl PosteriorDraws {
    /// Wrap fixed draws, e.g. a point mass for plug-in evaluation.
    pub fn from_draws(draws: Vec<ModelParams>) -> Self {
        let n = draws.len();
        PosteriorDraws {
            draws,
            diagnostics: McmcDiagnostics {
                acceptance_rate: 1.0,
                coordinate_acceptance: [1.0; 3],
                proposal_scales: [0.0; 3],
                chain_length: n,
                burn_in: 0,
                thin: 1,
                seed: 0,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn mean(&self) -> ModelParams {
        let n = self.draws.len() as f64;
        let (a, b, nu) = self
            .draws
            .iter()
            .fold((0.0, 0.0, 0.0), |(a, b, nu), d| (a + d.a, b + d.b, nu + d.nu));
        ModelParams::new(a / n, b / n, nu / n)
    }
}

/// Componentwise Gaussian random-walk Metropolis kernel.
#[derive(Debug, Clone)]
pub struct RandomWalkKernel<const N: usize> {
    pub scales: [f64; N],
    accepted: [usize; N],
    proposed: [usize; N],
}

impl<const N: usize> RandomWalkKernel<N> {
    pub fn new(scales: [f64; N]) -> Self {
        RandomWalkKernel {
            scales,
            accepted: [0; N],
            proposed: [0; N],
        }
    }

    /// One sweep: update each coordinate in turn.
    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        state: &mut [f64; N],
        log_target: &mut f64,
        target: &impl Fn(&[f64; N]) -> f64,
        rng: &mut R,
    ) {
        for i in 0..N {
            let step: f64 = rng.sample(StandardNormal);
            let mut proposal = *state;
            proposal[i] += self.scales[i] * step;
            let lp = target(&proposal);
            self.proposed[i] += 1;
            let u: f64 = rng.random();
            if lp > f64::NEG_INFINITY && u.ln() < lp - *log_target {
                *state = proposal;
                *log_target = lp;
                self.accepted[i] += 1;
            }
        }
    }

    pub fn acceptance(&self) -> [f64; N] {
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] = if self.proposed[i] == 0 {
                0.0
            } else {
                self.accepted[i] as f64 / self.proposed[i] as f64
            };
        }
        out
    }

    pub fn overall_acceptance(&self) -> f64 {
        let p: usize = self.proposed.iter().sum();
        if p == 0 {
            0.0
        } else {
            self.accepted.iter().sum::<usize>() as f64 / p as f64
        }
    }

    pub fn reset_counts(&mut self) {
        self.accepted = [0; N];
        self.proposed = [0; N];
    }

    /// Nudge each scale toward acceptance in `[0.2, 0.45]`, then reset counters.
    pub fn adapt(&mut self) {
        let rates = self.acceptance();
        for (scale, rate) in self.scales.iter_mut().zip(rates) {
            let factor = match rate {
                r if r < 0.05 => 0.4,
                r if r < 0.2 => 0.7,
                r if r > 0.8 => 2.5,
                r if r > 0.45 => 1.5,
                _ => 1.0,
            };
            *scale *= factor;
        }
        self.reset_counts();
    }
}

/// Mix a base seed with a key into an independent-looking 64-bit seed.
pub fn derive_seed(base: u64, key: u64) -> u64 {
    // splitmix64 finaliser over the combined words
    let mut z = base ^ key.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const MIN_ACCEPTANCE: f64 = 0.01;
const INIT_CANDIDATES: usize = 64;

/// Draw from the posterior (or from the prior when `data` is empty).
pub fn sample_posterior(
    data: &Dataset,
    prior: &PriorSpec,
    cfg: &TestConfig,
    mcmc: &McmcSettings,
    seed: u64,
) -> Result<PosteriorDraws> {
    prior.validate()?;
    mcmc.validate()?;
    let prepared = if data.is_empty() {
        None
    } else {
        Some(PreparedData::new(data, cfg)?)
    };
    let target = |u: &[f64; 3]| -> f64 {
        let theta = ModelParams::new(u[0], u[1], u[2].exp());
        let lp = prior.log_density(&theta);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        let ll = prepared.as_ref().map_or(0.0, |p| p.log_lik(theta.a, theta.b, theta.nu));
        let v = lp + ll + u[2];
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let (a1, a2) = prior.a_range;
    let (b1, b2) = prior.b_range;
    let nu_mode = (prior.nu2_scale / (prior.nu2_shape + 1.0)).sqrt();
    let mut state = [0.5 * (a1 + a2), 0.5 * (b1 + b2), nu_mode.ln()];
    let mut log_target = target(&state);
    if prepared.is_some() {
        let (lo, hi) = (nu_mode.ln() - 3.0, nu_mode.ln() + 1.5);
        for i in 1..=INIT_CANDIDATES {
            let h = halton3(i);
            let cand = [a1 + h[0] * (a2 - a1), b1 + h[1] * (b2 - b1), lo + h[2] * (hi - lo)];
            let v = target(&cand);
            if v > log_target {
                state = cand;
                log_target = v;
            }
        }
    }
    if log_target == f64::NEG_INFINITY {
        return Err(Error::Sampler("no starting point with positive posterior density".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kernel = RandomWalkKernel::new([0.05 * (a2 - a1), 0.05 * (b2 - b1), 0.2]);
    for i in 0..mcmc.burn_in {
        kernel.sweep(&mut state, &mut log_target, &target, &mut rng);
        if (i + 1) % mcmc.adapt_interval == 0 {
            kernel.adapt();
        }
    }
    kernel.reset_counts();

    let mut draws = Vec::with_capacity(mcmc.retained());
    for i in 0..(mcmc.length - mcmc.burn_in) {
        kernel.sweep(&mut state, &mut log_target, &target, &mut rng);
        if (i + 1) % mcmc.thin == 0 {
            draws.push(ModelParams::new(state[0], state[1], state[2].exp()));
        }
    }

    let diagnostics = McmcDiagnostics {
        acceptance_rate: kernel.overall_acceptance(),
        coordinate_acceptance: kernel.acceptance(),
        proposal_scales: kernel.scales,
        chain_length: mcmc.length,
        burn_in: mcmc.burn_in,
        thin: mcmc.thin,
        seed,
    };
    if diagnostics.acceptance_rate < MIN_ACCEPTANCE {
        return Err(Error::Sampler(format!(
            "acceptance rate {:.4} after adaptation (per coordinate {:?}, scales {:?})",
            diagnostics.acceptance_rate, diagnostics.coordinate_acceptance, diagnostics.proposal_scales
        )));
    }
    Ok(PosteriorDraws { draws, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fatigue_model::mu;
    use crate::likelihood::{log_likelihood, Observation};
    use approx::assert_abs_diff_eq;

    const TRUTH: ModelParams = ModelParams::new(0.00157, 0.3188, 0.7259);

    fn cfg() -> TestConfig {
        TestConfig::composite_fatigue()
    }

    #[test]
    fn outside_support_is_neg_infinity() {
        let p = PriorSpec::example();
        let th = ModelParams::new(0.5, 0.3, 0.7);
        assert_eq!(log_posterior_unnorm(&th, &Dataset::default(), &p, &cfg()).unwrap(), f64::NEG_INFINITY);
        let th = ModelParams::new(0.001, 0.3, -0.7);
        assert_eq!(p.log_density(&th), f64::NEG_INFINITY);
    }

    #[test]
    fn empty_data_gives_prior_only() {
        let p = PriorSpec::example();
        let v = log_posterior_unnorm(&TRUTH, &Dataset::default(), &p, &cfg()).unwrap();
        assert_eq!(v, p.log_density(&TRUTH));
    }

    // Inverse-gamma density for nu^2 written directly, mapped to nu.
    fn prior_oracle(th: &ModelParams, p: &PriorSpec) -> f64 {
        let s = th.nu * th.nu;
        let (k, g) = (p.nu2_shape, p.nu2_scale);
        // shape 3 in the example prior, so Gamma(k) = 2
        assert_eq!(k, 3.0);
        let gamma_k = 2.0;
        let ig = g.powf(k) / gamma_k * s.powf(-k - 1.0) * (-g / s).exp();
        (ig * 2.0 * th.nu / ((p.a_range.1 - p.a_range.0) * (p.b_range.1 - p.b_range.0))).ln()
    }

    #[test]
    fn matches_independent_likelihood_plus_prior() {
        let p = PriorSpec::example();
        let c = cfg();
        let data = Dataset::new(vec![
            Observation::failure(600.0, 4e8),
            Observation::censored(500.0, 2e9),
            Observation::failure(900.0, 2e6),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let th = ModelParams::new(
                rng.random_range(p.a_range.0..p.a_range.1),
                rng.random_range(p.b_range.0..p.b_range.1),
                rng.random_range(0.2..2.0),
            );
            let expected = prior_oracle(&th, &p) + log_likelihood(&th, &data, &c).unwrap();
            let got = log_posterior_unnorm(&th, &data, &p, &c).unwrap();
            assert_abs_diff_eq!(got, expected, epsilon = 1e-10 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn prior_density_integrates_to_one_in_nu() {
        let p = PriorSpec::example();
        let area = (p.a_range.1 - p.a_range.0) * (p.b_range.1 - p.b_range.0);
        let n = 200_000;
        let (lo, hi) = (1e-4, 30.0);
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..n)
            .map(|i| {
                let nu = lo + (i as f64 + 0.5) * h;
                p.log_density(&ModelParams::new(0.001, 0.3, nu)).exp() * h
            })
            .sum();
        assert_abs_diff_eq!(total * area, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let p = PriorSpec::example();
        let short = McmcSettings {
            length: 2000,
            burn_in: 500,
            thin: 5,
            adapt_interval: 50,
        };
        let data = Dataset::new(vec![
            Observation::failure(0.45 * 1339.67, 1e8),
            Observation::failure(0.55 * 1339.67, 3e7),
            Observation::failure(0.65 * 1339.67, 5e6),
        ]);
        let a = sample_posterior(&data, &p, &cfg(), &short, 42).unwrap();
        let b = sample_posterior(&data, &p, &cfg(), &short, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        assert!(a.draws.iter().all(|d| p.in_support(d)));
        let c = sample_posterior(&data, &p, &cfg(), &short, 43).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn prior_recovery_without_data() {
        let p = PriorSpec::example();
        let draws = sample_posterior(&Dataset::default(), &p, &cfg(), &McmcSettings::default(), 7).unwrap();
        let n = draws.len() as f64;
        let mean_a = draws.draws.iter().map(|d| d.a).sum::<f64>() / n;
        let mean_b = draws.draws.iter().map(|d| d.b).sum::<f64>() / n;
        // thinning by 10 leaves some autocorrelation; compare loosely here,
        // the acceptance suite applies the batch-means standard error
        let sd_a = (p.a_range.1 - p.a_range.0) / 12f64.sqrt();
        let sd_b = (p.b_range.1 - p.b_range.0) / 12f64.sqrt();
        assert!((mean_a - 0.5 * (p.a_range.0 + p.a_range.1)).abs() < 0.15 * sd_a * 10.0 / n.sqrt() * 10.0);
        assert!((mean_b - 0.5 * (p.b_range.0 + p.b_range.1)).abs() < 0.15 * sd_b * 10.0 / n.sqrt() * 10.0);
    }

    #[test]
    fn kernel_recovers_two_bin_target() {
        // density 0.3 on [0,1), 0.7 on [1,2), zero elsewhere
        let target = |u: &[f64; 1]| match u[0] {
            x if (0.0..1.0).contains(&x) => 0.3f64.ln(),
            x if (1.0..2.0).contains(&x) => 0.7f64.ln(),
            _ => f64::NEG_INFINITY,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut kernel = RandomWalkKernel::new([0.8]);
        let mut state = [0.5];
        let mut lt = target(&state);
        let n = 200_000;
        let thin = 20;
        let mut upper = 0usize;
        let mut kept = 0usize;
        for i in 0..n * thin {
            kernel.sweep(&mut state, &mut lt, &target, &mut rng);
            if i % thin == 0 {
                kept += 1;
                if state[0] >= 1.0 {
                    upper += 1;
                }
            }
        }
        let freq = upper as f64 / kept as f64;
        // thinned draws are close to independent; allow for residual correlation
        let se = (0.7 * 0.3 / kept as f64).sqrt() * 2.0;
        assert!((freq - 0.7).abs() < 3.0 * se, "freq {freq} se {se}");
    }

    #[test]
    fn adaptation_moves_scale_toward_band() {
        let mut k = RandomWalkKernel::new([1.0, 1.0]);
        k.accepted = [1, 90];
        k.proposed = [100, 100];
        k.adapt();
        assert!(k.scales[0] < 1.0);
        assert!(k.scales[1] > 1.0);
    }

    #[test]
    fn large_sample_posterior_centres_on_truth() {
        let c = TestConfig {
            censor_time: f64::MAX,
            ..cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fam = c.family.standard();
        let data: Dataset = (0..500)
            .map(|i| {
                let x = (0.35 + 0.05 * (i % 9) as f64) * c.sigma_ult;
                let t = (mu(x, TRUTH.a, TRUTH.b, &c).unwrap() + TRUTH.nu * fam.sample(&mut rng)).exp();
                Observation::failure(x, t)
            })
            .collect();
        let draws = sample_posterior(&data, &PriorSpec::example(), &c, &McmcSettings::default(), 5).unwrap();
        let m = draws.mean();
        for (est, truth) in m.to_array().iter().zip(TRUTH.to_array()) {
            assert!(((est - truth) / truth).abs() < 0.1, "{m:?}");
        }
    }

    #[test]
    fn settings_validation() {
        assert!(McmcSettings::default().validate().is_ok());
        assert!(McmcSettings { length: 100, burn_in: 100, ..Default::default() }.validate().is_err());
        assert!(McmcSettings { thin: 0, ..Default::default() }.validate().is_err());
        assert_eq!(McmcSettings::default().retained(), 1000);
    }
}
