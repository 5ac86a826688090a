//! Stress-life relationship for constant-amplitude fatigue of fibre composites.
//!
//! The location of log cycles-to-failure at stress `x` is
//!
//! ```text
//! mu(x) = (1/B) * ln{ (B/A) * h^B * (s - 1) * s^(gamma - 1) * (1 - psi)^(-gamma) + 1 },  s = sigma_ult / x
//! ```
//!
//! with `psi = psi(R)` and `gamma = 1.6 - psi * |sin(alpha)|`. Everything that
//! does not involve `(A, B)` is folded into a per-stress constant, see
//! [`StressLevel`].

use serde::{Deserialize, Serialize};

use crate::distributions::{std_quantile, DistributionFamily};
use crate::error::{Error, Result};

/// Known planning constants of a fatigue test campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    /// Cyclic test frequency.
    pub h: f64,
    /// Stress ratio sigma_min / sigma_max.
    #[serde(rename = "R")]
    pub stress_ratio: f64,
    /// Angle between loading and fibre direction, in degrees.
    pub alpha: f64,
    /// Ultimate stress, same units as test stresses.
    pub sigma_ult: f64,
    pub family: DistributionFamily,
    /// Target lower-tail quantile probability.
    pub p: f64,
    /// Type-I censoring horizon in cycles.
    pub censor_time: f64,
}

impl TestConfig {
    /// Glass-fibre composite constants (h = 2, R = 0.1, alpha = 0,
    /// sigma_ult = 1339.67) with the default quantile and censoring horizon.
    pub fn composite_fatigue() -> Self {
        TestConfig {
            h: 2.0,
            stress_ratio: 0.1,
            alpha: 0.0,
            sigma_ult: 1339.67,
            family: DistributionFamily::Lognormal,
            p: 0.05,
            censor_time: DEFAULT_CENSOR_TIME,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_ult > 0.0 && self.sigma_ult.is_finite()) {
            return Err(Error::Validation(format!("sigma_ult must be positive, got {}", self.sigma_ult)));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::Validation(format!("h must be positive, got {}", self.h)));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Validation(format!("p must lie in (0, 1), got {}", self.p)));
        }
        if !(self.censor_time > 0.0) {
            return Err(Error::Validation(format!(
                "censor_time must be positive, got {}",
                self.censor_time
            )));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Validation("alpha must be finite".into()));
        }
        psi_of_r(self.stress_ratio).map_err(|e| Error::Validation(e.to_string()))?;
        Ok(())
    }

    /// Absolute stress for a fraction of the ultimate stress.
    pub fn stress_from_fraction(&self, q: f64) -> f64 {
        q * self.sigma_ult
    }

    pub fn fraction_from_stress(&self, x: f64) -> f64 {
        x / self.sigma_ult
    }

    pub fn z_p(&self) -> Result<f64> {
        std_quantile(self.p, self.family)
    }
}

/// Planning censoring horizon in cycles. Long enough that units at the
/// lowest default candidate (q = 0.35) mostly fail under the example truth;
/// override it with the horizon of the actual test programme.
pub const DEFAULT_CENSOR_TIME: f64 = 6.0e9;

/// Unknown model parameters `(A, B, nu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub nu: f64,
}

impl ModelParams {
    pub const fn new(a: f64, b: f64, nu: f64) -> Self {
        ModelParams { a, b, nu }
    }

    pub fn validate(&self) -> Result<()> {
        check_ab(self.a, self.b)?;
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::domain(format!("nu must be positive, got {}", self.nu)));
        }
        Ok(())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.a, self.b, self.nu]
    }
}

fn check_ab(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::domain(format!("A must be positive, got {a}")));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::domain(format!("B must be positive, got {b}")));
    }
    Ok(())
}

pub fn psi_of_r(r: f64) -> Result<f64> {
    if !r.is_finite() || r == 1.0 {
        return Err(Error::domain(format!("psi(R) undefined at R = {r}")));
    }
    Ok(if r < 1.0 { r } else { 1.0 / r })
}

/// `gamma(alpha) = 1.6 - psi(R) |sin(alpha)|`, alpha in degrees.
pub fn gamma_of_alpha(alpha: f64, r: f64) -> Result<f64> {
    let psi = psi_of_r(r)?;
    Ok(1.6 - psi * alpha.to_radians().sin().abs())
}

/// Test stress with the `(A, B)`-free part of the stress-life curve precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StressLevel {
    pub x: f64,
    /// ln[(s - 1) s^(gamma - 1) (1 - psi)^(-gamma)]
    ln_shape: f64,
    ln_h: f64,
}

impl StressLevel {
    pub fn new(x: f64, cfg: &TestConfig) -> Result<Self> {
        if !(x > 0.0 && x < cfg.sigma_ult) {
            return Err(Error::domain(format!(
                "stress {x} must lie strictly inside (0, sigma_ult = {})",
                cfg.sigma_ult
            )));
        }
        let psi = psi_of_r(cfg.stress_ratio)?;
        let gamma = gamma_of_alpha(cfg.alpha, cfg.stress_ratio)?;
        let s = cfg.sigma_ult / x;
        let ln_shape = (s - 1.0).ln() + (gamma - 1.0) * s.ln() - gamma * (-psi).ln_1p();
        Ok(StressLevel {
            x,
            ln_shape,
            ln_h: cfg.h.ln(),
        })
    }

    /// ln g where the curve is mu = ln(1 + g) / B.
    #[inline]
    fn ln_g(&self, a: f64, b: f64) -> f64 {
        b.ln() - a.ln() + b * self.ln_h + self.ln_shape
    }

    #[inline]
    pub fn mu(&self, a: f64, b: f64) -> f64 {
        softplus(self.ln_g(a, b)) / b
    }

    /// `(mu, d mu / dA, d mu / dB)`.
    #[inline]
    pub fn mu_and_grad(&self, a: f64, b: f64) -> (f64, f64, f64) {
        let ln_g = self.ln_g(a, b);
        let mu = softplus(ln_g) / b;
        // g / (1 + g)
        let frac = logistic(ln_g);
        let d_a = -frac / (a * b);
        let d_b = -mu / b + frac * (1.0 / b + self.ln_h) / b;
        (mu, d_a, d_b)
    }
}

/// ln(1 + e^v) without overflow.
#[inline]
fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

#[inline]
fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Location of log cycles-to-failure at stress `x`.
pub fn mu(x: f64, a: f64, b: f64, cfg: &TestConfig) -> Result<f64> {
    check_ab(a, b)?;
    Ok(StressLevel::new(x, cfg)?.mu(a, b))
}

/// Analytic `(d mu / dA, d mu / dB)`.
pub fn mu_grad(x: f64, a: f64, b: f64, cfg: &TestConfig) -> Result<(f64, f64)> {
    check_ab(a, b)?;
    let (_, d_a, d_b) = StressLevel::new(x, cfg)?.mu_and_grad(a, b);
    Ok((d_a, d_b))
}

/// `log zeta_p(x) = mu(x) + z_p nu`. A zero scale is accepted.
pub fn log_quantile_life(x: f64, theta: &ModelParams, cfg: &TestConfig) -> Result<f64> {
    if !(theta.nu >= 0.0 && theta.nu.is_finite()) {
        return Err(Error::domain(format!("nu must be non-negative, got {}", theta.nu)));
    }
    let loc = mu(x, theta.a, theta.b, cfg)?;
    if theta.nu == 0.0 {
        return Ok(loc);
    }
    Ok(loc + cfg.z_p()? * theta.nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    const A_HAT: f64 = 0.00157;
    const B_HAT: f64 = 0.3188;

    fn cfg() -> TestConfig {
        TestConfig::composite_fatigue()
    }

    #[test]
    fn psi_branches() {
        assert_eq!(psi_of_r(0.1).unwrap(), 0.1);
        assert_eq!(psi_of_r(2.0).unwrap(), 0.5);
        assert_eq!(psi_of_r(0.0).unwrap(), 0.0);
        assert!(psi_of_r(1.0).is_err());
    }

    #[test]
    fn gamma_values() {
        assert_abs_diff_eq!(gamma_of_alpha(0.0, 0.1).unwrap(), 1.6, epsilon = 1e-15);
        assert_abs_diff_eq!(gamma_of_alpha(90.0, 0.1).unwrap(), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(gamma_of_alpha(30.0, 0.5).unwrap(), 1.35, epsilon = 1e-15);
        assert!(gamma_of_alpha(10.0, 1.0).is_err());
    }

    #[test]
    fn mu_matches_high_precision_oracle() {
        // 40-digit evaluation of the stress-life curve
        let cases = [
            (669.835, 19.200_524_391_835_648),
            (0.35 * 1339.67, 21.809_690_229_483_375),
            (0.75 * 1339.67, 15.010_737_390_554_074),
            (0.05 * 1339.67, 32.763_324_693_806_59),
        ];
        for (x, expected) in cases {
            assert_relative_eq!(mu(x, A_HAT, B_HAT, &cfg()).unwrap(), expected, max_relative = 1e-13);
        }
    }

    #[test]
    fn mu_vanishes_at_ultimate_stress() {
        let x = 1339.67 * (1.0 - 1e-12);
        let m = mu(x, A_HAT, B_HAT, &cfg()).unwrap();
        assert!(m > 0.0 && m < 1e-6, "mu = {m}");
        let (da, db) = mu_grad(x, A_HAT, B_HAT, &cfg()).unwrap();
        assert!(da.abs() < 1e-3 && db.abs() < 1e-6, "{da} {db}");
    }

    #[test]
    fn mu_domain_errors() {
        let c = cfg();
        assert!(mu(0.0, A_HAT, B_HAT, &c).is_err());
        assert!(mu(c.sigma_ult, A_HAT, B_HAT, &c).is_err());
        assert!(mu(-5.0, A_HAT, B_HAT, &c).is_err());
        assert!(mu(500.0, 0.0, B_HAT, &c).is_err());
        assert!(mu(500.0, A_HAT, -1.0, &c).is_err());
    }

    #[test]
    fn life_decreases_with_stress() {
        let c = cfg();
        assert!(mu(0.35 * c.sigma_ult, A_HAT, B_HAT, &c).unwrap() > mu(0.75 * c.sigma_ult, A_HAT, B_HAT, &c).unwrap());
    }

    fn fd_grad(x: f64, a: f64, b: f64, c: &TestConfig) -> (f64, f64) {
        let ha = a * 1e-6;
        let hb = b * 1e-6;
        let da = (mu(x, a + ha, b, c).unwrap() - mu(x, a - ha, b, c).unwrap()) / (2.0 * ha);
        let db = (mu(x, a, b + hb, c).unwrap() - mu(x, a, b - hb, c).unwrap()) / (2.0 * hb);
        (da, db)
    }

    #[test]
    fn gradient_matches_finite_differences_at_midpoint() {
        let c = cfg();
        let x = 0.5 * c.sigma_ult;
        let (da, db) = mu_grad(x, A_HAT, B_HAT, &c).unwrap();
        let (fa, fb) = fd_grad(x, A_HAT, B_HAT, &c);
        assert_relative_eq!(da, fa, max_relative = 1e-5);
        assert_relative_eq!(db, fb, max_relative = 1e-5);
        assert!(da < 0.0);
    }

    #[test]
    fn log_quantile_life_cases() {
        let c = cfg();
        let x = 0.5 * c.sigma_ult;
        let m = mu(x, A_HAT, B_HAT, &c).unwrap();
        let median_cfg = TestConfig { p: 0.5, ..c.clone() };
        let th = ModelParams::new(A_HAT, B_HAT, 0.7259);
        assert_eq!(log_quantile_life(x, &th, &median_cfg).unwrap(), m);
        let degenerate = ModelParams::new(A_HAT, B_HAT, 0.0);
        assert_eq!(log_quantile_life(x, &degenerate, &c).unwrap(), m);
        assert_relative_eq!(
            log_quantile_life(x, &th, &c).unwrap(),
            18.006_525_144_031_574,
            max_relative = 1e-12
        );
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(TestConfig { stress_ratio: 1.0, ..cfg() }.validate().is_err());
        assert!(TestConfig { p: 1.0, ..cfg() }.validate().is_err());
        assert!(TestConfig { censor_time: 0.0, ..cfg() }.validate().is_err());
        assert!(TestConfig { sigma_ult: -1.0, ..cfg() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn mu_strictly_decreasing(a in 1e-4f64..1e-2, b in 0.05f64..1.5) {
            let c = cfg();
            let mut prev = f64::INFINITY;
            for i in 0..100 {
                let q = 0.01 + 0.98 * i as f64 / 99.0;
                let m = mu(q * c.sigma_ult, a, b, &c).unwrap();
                prop_assert!(m < prev);
                prop_assert!(m > 0.0);
                prev = m;
            }
        }

        #[test]
        fn gradient_agrees_with_finite_differences(a in 2e-4f64..1e-2, b in 0.08f64..1.5, q in 0.05f64..0.9) {
            let c = cfg();
            let x = q * c.sigma_ult;
            let (da, db) = mu_grad(x, a, b, &c).unwrap();
            let (fa, fb) = fd_grad(x, a, b, &c);
            prop_assert!((da - fa).abs() <= 1e-5 * fa.abs());
            prop_assert!((db - fb).abs() <= 1e-5 * fb.abs().max(1e-3));
            prop_assert!(da < 0.0);
        }

        #[test]
        fn gamma_within_branch_bounds(alpha in -360.0f64..360.0, r in -5.0f64..5.0) {
            prop_assume!((r - 1.0).abs() > 1e-9);
            let psi = psi_of_r(r).unwrap();
            let g = gamma_of_alpha(alpha, r).unwrap();
            let (lo, hi) = if psi >= 0.0 { (1.6 - psi, 1.6) } else { (1.6, 1.6 - psi) };
            prop_assert!(g >= lo - 1e-12 && g <= hi + 1e-12);
        }
    }
}
