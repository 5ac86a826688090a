//! Adaptive Gauss-Kronrod (7/15) quadrature for small vector-valued integrands.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: 1e-13,
            rel_tol: 1e-11,
            max_intervals: 500,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult<const N: usize> {
    pub value: [f64; N],
    pub error: f64,
    pub intervals: usize,
    pub evaluations: usize,
}

struct Segment<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    error: f64,
}

impl<const N: usize> PartialEq for Segment<N> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<const N: usize> Eq for Segment<N> {}
impl<const N: usize> PartialOrd for Segment<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const N: usize> Ord for Segment<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<const N: usize>(f: &mut impl FnMut(f64) -> [f64; N], a: f64, b: f64) -> Segment<N> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = [0.0; N];
    let mut gauss = [0.0; N];
    let fc = f(center);
    for k in 0..N {
        kronrod[k] = WGK[7] * fc[k];
        gauss[k] = WG[3] * fc[k];
    }
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        for k in 0..N {
            let s = f1[k] + f2[k];
            kronrod[k] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[k] += WG[j / 2] * s;
            }
        }
    }
    let mut error: f64 = 0.0;
    let mut value = [0.0; N];
    for k in 0..N {
        value[k] = kronrod[k] * half;
        error = error.max(((kronrod[k] - gauss[k]) * half).abs());
    }
    Segment { a, b, value, error }
}

/// Integrate `f` over the finite interval `[a, b]`, bisecting the segment with
/// the largest error estimate until the total error meets the tolerance.
pub fn integrate<const N: usize>(
    mut f: impl FnMut(f64) -> [f64; N],
    a: f64,
    b: f64,
    opts: &QuadOptions,
) -> Result<QuadResult<N>> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numerical(format!("quadrature limits must be finite: [{a}, {b}]")));
    }
    if a == b {
        return Ok(QuadResult {
            value: [0.0; N],
            error: 0.0,
            intervals: 0,
            evaluations: 0,
        });
    }
    let mut heap = BinaryHeap::new();
    heap.push(gk15(&mut f, a, b));
    let mut evaluations = 15;
    loop {
        let mut total = [0.0; N];
        let mut err = 0.0;
        for s in heap.iter() {
            for k in 0..N {
                total[k] += s.value[k];
            }
            err += s.error;
        }
        let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if err <= opts.abs_tol.max(opts.rel_tol * scale) {
            return Ok(QuadResult {
                value: total,
                error: err,
                intervals: heap.len(),
                evaluations,
            });
        }
        if heap.len() >= opts.max_intervals {
            return Err(Error::Numerical(format!(
                "quadrature on [{a}, {b}] did not converge: error estimate {err:.3e} with {} intervals \
                 and {evaluations} evaluations (largest integral magnitude {scale:.3e})",
                heap.len()
            )));
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        heap.push(gk15(&mut f, worst.a, mid));
        heap.push(gk15(&mut f, mid, worst.b));
        evaluations += 30;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x| [x * x, x.powi(5)], 0.0, 2.0, &QuadOptions::default()).unwrap();
        assert!((r.value[0] - 8.0 / 3.0).abs() < 1e-14);
        assert!((r.value[1] - 64.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_moments() {
        let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let r = integrate(
            |z| {
                let p = c * (-0.5 * z * z).exp();
                [p, z * z * p, z.powi(4) * p]
            },
            -15.0,
            15.0,
            &QuadOptions::default(),
        )
        .unwrap();
        assert!((r.value[0] - 1.0).abs() < 1e-12);
        assert!((r.value[1] - 1.0).abs() < 1e-12);
        assert!((r.value[2] - 3.0).abs() < 1e-11);
    }

    #[test]
    fn reports_non_convergence() {
        let opts = QuadOptions {
            max_intervals: 3,
            ..QuadOptions::default()
        };
        let err = integrate(|x: f64| [(1.0 / x.abs().max(1e-300)).sin()], -1.0, 1.0, &opts).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref m) if m.contains("did not converge")));
    }
}
