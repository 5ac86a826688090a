//! Standardized log-location-scale families.
//!
//! A lifetime `T` is modelled through `Z = (log T - mu) / nu`, where `Z` follows
//! either the standard normal (lognormal lifetimes) or the standard smallest
//! extreme value distribution (Weibull lifetimes). Each family is a
//! [`StandardFamily`] implementation; [`DistributionFamily`] selects one by name.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Behaviour shared by the standardized distributions.
///
/// Methods take already-validated arguments and are used on hot paths.
pub trait StandardFamily: Send + Sync {
    fn name(&self) -> &'static str;
    fn cdf(&self, z: f64) -> f64;
    fn pdf(&self, z: f64) -> f64;
    fn log_pdf(&self, z: f64) -> f64;
    /// `log(1 - F(z))`, accurate far into the upper tail.
    fn log_sf(&self, z: f64) -> f64;
    fn quantile(&self, p: f64) -> f64;
    /// `f'(z) / f(z)`.
    fn log_pdf_slope(&self, z: f64) -> f64;
    /// Interval outside of which the density is negligible for integration.
    fn effective_support(&self) -> (f64, f64);
    fn sample(&self, rng: &mut dyn rand::RngCore) -> f64;
}

pub struct StandardNormalFamily;
pub struct SmallestExtremeValue;

impl StandardFamily for StandardNormalFamily {
    fn name(&self) -> &'static str {
        "lognormal"
    }

    fn cdf(&self, z: f64) -> f64 {
        0.5 * erfc(-z * FRAC_1_SQRT_2)
    }

    fn pdf(&self, z: f64) -> f64 {
        (-0.5 * z * z - LN_SQRT_2PI).exp()
    }

    fn log_pdf(&self, z: f64) -> f64 {
        -0.5 * z * z - LN_SQRT_2PI
    }

    fn log_sf(&self, z: f64) -> f64 {
        if z < 37.0 {
            (0.5 * erfc(z * FRAC_1_SQRT_2)).ln()
        } else {
            // Mills-ratio expansion; erfc underflows past this point.
            let r = 1.0 / (z * z);
            self.log_pdf(z) - z.ln() + (1.0 - r + 3.0 * r * r - 15.0 * r * r * r).ln()
        }
    }

    fn quantile(&self, p: f64) -> f64 {
        normal_quantile(p)
    }

    fn log_pdf_slope(&self, z: f64) -> f64 {
        -z
    }

    fn effective_support(&self) -> (f64, f64) {
        (-14.0, 14.0)
    }

    fn sample(&self, rng: &mut dyn rand::RngCore) -> f64 {
        rng.sample(StandardNormal)
    }
}

impl StandardFamily for SmallestExtremeValue {
    fn name(&self) -> &'static str {
        "weibull"
    }

    fn cdf(&self, z: f64) -> f64 {
        -(-z.exp()).exp_m1()
    }

    fn pdf(&self, z: f64) -> f64 {
        (z - z.exp()).exp()
    }

    fn log_pdf(&self, z: f64) -> f64 {
        z - z.exp()
    }

    fn log_sf(&self, z: f64) -> f64 {
        -z.exp()
    }

    fn quantile(&self, p: f64) -> f64 {
        (-(-p).ln_1p()).ln()
    }

    fn log_pdf_slope(&self, z: f64) -> f64 {
        1.0 - z.exp()
    }

    fn effective_support(&self) -> (f64, f64) {
        (-50.0, 5.0)
    }

    fn sample(&self, rng: &mut dyn rand::RngCore) -> f64 {
        // open interval (0, 1)
        let u: f64 = loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break u;
            }
        };
        self.quantile(u)
    }
}

/// Lifetime distribution family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionFamily {
    Lognormal,
    Weibull,
}

static NORMAL: StandardNormalFamily = StandardNormalFamily;
static SEV: SmallestExtremeValue = SmallestExtremeValue;

impl DistributionFamily {
    pub const ALL: [DistributionFamily; 2] = [DistributionFamily::Lognormal, DistributionFamily::Weibull];

    pub fn standard(self) -> &'static dyn StandardFamily {
        match self {
            DistributionFamily::Lognormal => &NORMAL,
            DistributionFamily::Weibull => &SEV,
        }
    }

    pub fn name(self) -> &'static str {
        self.standard().name()
    }
}

impl fmt::Display for DistributionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistributionFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistributionFamily::ALL
            .into_iter()
            .find(|fam| fam.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown distribution family '{s}'")))
    }
}

fn check_finite(z: f64) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("standardized value must be finite, got {z}")))
    }
}

pub fn std_cdf(z: f64, family: DistributionFamily) -> Result<f64> {
    check_finite(z)?;
    Ok(family.standard().cdf(z))
}

pub fn std_pdf(z: f64, family: DistributionFamily) -> Result<f64> {
    check_finite(z)?;
    Ok(family.standard().pdf(z))
}

pub fn std_quantile(p: f64, family: DistributionFamily) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability must lie in (0, 1), got {p}")));
    }
    Ok(family.standard().quantile(p))
}

/// Inverse standard normal cdf: Acklam's rational approximation followed by
/// one Halley refinement step against the erfc-based cdf.
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (-p).ln_1p()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Work on whichever tail keeps the residual well conditioned.
    let e = if x <= 0.0 {
        0.5 * erfc(-x * FRAC_1_SQRT_2) - p
    } else {
        (1.0 - p) - 0.5 * erfc(x * FRAC_1_SQRT_2)
    };
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}
