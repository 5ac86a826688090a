//! Expected Fisher information under Type-I right censoring.
//!
//! For one unit with standardized censoring point `zc`, the information about
//! `(mu, nu)` is `F(zc) / nu^2` where
//!
//! ```text
//! F(zc) = int_{-inf}^{zc} s_f(z) s_f(z)' f(z) dz + (1 - F(zc)) s_c(zc) s_c(zc)'
//! s_f(z) = -(g(z), 1 + z g(z)),   g = f'/f      (failure score)
//! s_c(z) = h(z) (1, z),           h = f/(1-F)   (survivor score)
//! ```
//!
//! The failure part is integrated numerically; the survivor part is closed form.
//! Chaining through the Jacobian of `(mu, nu)` in `(A, B, nu)` gives the 3x3
//! per-unit block.

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::{Matrix2, Matrix3, SymmetricEigen};

use crate::distributions::DistributionFamily;
use crate::error::{Error, Result};
use crate::fatigue_model::{ModelParams, StressLevel, TestConfig};
use crate::quadrature::{self, QuadOptions};

/// 3x3 information in parameter order `(A, B, nu)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoMatrix(pub Matrix3<f64>);

/// Asymptotic covariance with the ridge that was added before inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovMatrix {
    pub matrix: Matrix3<f64>,
    pub ridge: f64,
}

impl InfoMatrix {
    pub fn zeros() -> Self {
        InfoMatrix(Matrix3::zeros())
    }

    /// `log |I|`, or `None` when the matrix is not numerically positive definite.
    pub fn log_det(&self) -> Option<f64> {
        let chol = self.0.cholesky()?;
        let l = chol.l_dirty();
        let v = 2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln() + l[(2, 2)].ln());
        v.is_finite().then_some(v)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Add for InfoMatrix {
    type Output = InfoMatrix;
    fn add(self, rhs: InfoMatrix) -> InfoMatrix {
        InfoMatrix(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for InfoMatrix {
    fn add_assign(&mut self, rhs: InfoMatrix) {
        self.0 += rhs.0;
    }
}

impl std::ops::Mul<InfoMatrix> for f64 {
    type Output = InfoMatrix;
    fn mul(self, rhs: InfoMatrix) -> InfoMatrix {
        InfoMatrix(rhs.0 * self)
    }
}

const ZETA_QUANTUM: f64 = 1e-6;
const ZETA_CLAMP: f64 = 1e4;
const CACHE_CAPACITY: usize = 1 << 18;

thread_local! {
    static LOC_SCALE_CACHE: RefCell<HashMap<(DistributionFamily, i64), [f64; 3]>> =
        RefCell::new(HashMap::new());
}

/// Standardized per-unit information `F(zc)` for `(mu, nu)`, before the `1/nu^2` factor.
///
/// `zeta_c` may be `+inf` (no censoring) or `-inf` (certain censoring).
pub fn unit_info_location_scale(zeta_c: f64, family: DistributionFamily) -> Result<Matrix2<f64>> {
    let [f11, f12, f22] = loc_scale_entries(zeta_c, family)?;
    Ok(Matrix2::new(f11, f12, f12, f22))
}

fn loc_scale_entries(zeta_c: f64, family: DistributionFamily) -> Result<[f64; 3]> {
    if zeta_c.is_nan() {
        return Err(Error::domain("standardized censoring point is NaN"));
    }
    if zeta_c == f64::NEG_INFINITY {
        return Ok([0.0; 3]);
    }
    if zeta_c == f64::INFINITY {
        return compute_loc_scale(None, family);
    }
    // Entries are evaluated at the quantized point so cached and fresh values agree exactly.
    let key = (zeta_c.clamp(-ZETA_CLAMP, ZETA_CLAMP) / ZETA_QUANTUM).round() as i64;
    if let Some(hit) = LOC_SCALE_CACHE.with(|c| c.borrow().get(&(family, key)).copied()) {
        return Ok(hit);
    }
    let value = compute_loc_scale(Some(key as f64 * ZETA_QUANTUM), family)?;
    LOC_SCALE_CACHE.with(|c| {
        let mut cache = c.borrow_mut();
        if cache.len() >= CACHE_CAPACITY {
            cache.clear();
        }
        cache.insert((family, key), value);
    });
    Ok(value)
}

fn compute_loc_scale(zeta_c: Option<f64>, family: DistributionFamily) -> Result<[f64; 3]> {
    let fam = family.standard();
    let (lo, hi) = fam.effective_support();
    let upper = zeta_c.map_or(hi, |z| z.min(hi));

    let mut out = [0.0; 3];
    if upper > lo {
        let integrand = |z: f64| {
            let dens = fam.pdf(z);
            let g = fam.log_pdf_slope(z);
            let s = 1.0 + z * g;
            [g * g * dens, g * s * dens, s * s * dens]
        };
        let res = quadrature::integrate(integrand, lo, upper, &QuadOptions::default()).map_err(|e| {
            Error::Numerical(format!("unit information ({family}, zeta_c = {zeta_c:?}): {e}"))
        })?;
        out = res.value;
    }
    if let Some(z) = zeta_c {
        // (1 - F) h^2 = f^2 / (1 - F)
        let mass = (2.0 * fam.log_pdf(z) - fam.log_sf(z)).exp();
        if mass.is_finite() {
            out[0] += mass;
            out[1] += mass * z;
            out[2] += mass * z * z;
        }
    }
    Ok(out)
}

/// Per-unit information for a prepared stress level.
pub(crate) fn unit_info_at(
    level: &StressLevel,
    theta: &ModelParams,
    ln_censor: f64,
    family: DistributionFamily,
) -> Result<InfoMatrix> {
    let (mu, d_a, d_b) = level.mu_and_grad(theta.a, theta.b);
    let zeta_c = if ln_censor.is_finite() {
        (ln_censor - mu) / theta.nu
    } else {
        f64::INFINITY
    };
    let [f11, f12, f22] = loc_scale_entries(zeta_c, family)?;
    let inv_nu2 = 1.0 / (theta.nu * theta.nu);
    let (f11, f12, f22) = (f11 * inv_nu2, f12 * inv_nu2, f22 * inv_nu2);
    let m = Matrix3::new(
        f11 * d_a * d_a,
        f11 * d_a * d_b,
        f12 * d_a,
        f11 * d_a * d_b,
        f11 * d_b * d_b,
        f12 * d_b,
        f12 * d_a,
        f12 * d_b,
        f22,
    );
    Ok(InfoMatrix(m))
}

/// Expected information contributed by one unit tested at stress `x`.
pub fn unit_info(theta: &ModelParams, x: f64, cfg: &TestConfig) -> Result<InfoMatrix> {
    theta.validate()?;
    let level = StressLevel::new(x, cfg)?;
    unit_info_at(&level, theta, cfg.censor_time.ln(), cfg.family)
}

/// Sum of per-unit information over a design.
pub fn total_info(theta: &ModelParams, stresses: &[f64], cfg: &TestConfig) -> Result<InfoMatrix> {
    if stresses.is_empty() {
        return Err(Error::domain("design must contain at least one stress"));
    }
    let mut total = InfoMatrix::zeros();
    for &x in stresses {
        total += unit_info(theta, x, cfg)?;
    }
    Ok(total)
}

/// Eigenvalue ratio below which the matrix is regularised before inversion.
pub const RIDGE_TRIGGER: f64 = 1e-10;
/// Ridge size relative to the mean diagonal entry.
pub const RIDGE_SCALE: f64 = 1e-8;

/// Invert an information matrix, adding a recorded ridge when it is near singular.
pub fn invert_info(info: &InfoMatrix) -> Result<CovMatrix> {
    if !info.is_finite() {
        return Err(Error::Singular("information matrix has non-finite entries".into()));
    }
    let m = (info.0 + info.0.transpose()) * 0.5;
    if m.iter().all(|v| *v == 0.0) {
        return Err(Error::Singular(
            "information matrix is identically zero; the design cannot identify the parameters".into(),
        ));
    }
    let eig = SymmetricEigen::new(m).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if max <= 0.0 {
        return Err(Error::Singular(format!("largest eigenvalue {max:.3e} is not positive")));
    }
    let ridge = if min < RIDGE_TRIGGER * max {
        RIDGE_SCALE * m.trace() / 3.0
    } else {
        0.0
    };
    let regularised = m + Matrix3::identity() * ridge;
    let chol = regularised.cholesky().ok_or_else(|| {
        Error::Singular(format!(
            "factorisation failed (eigenvalues {min:.3e}..{max:.3e}, ridge {ridge:.3e})"
        ))
    })?;
    let inv = chol.inverse();
    if !inv.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular("inverse has non-finite entries".into()));
    }
    Ok(CovMatrix { matrix: inv, ridge })
}
