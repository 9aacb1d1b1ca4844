//! Globally adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! Segments are bisected in order of decreasing error estimate until the
//! summed estimate meets `max(abs_tol, rel_tol * |I|)`. Integrands are never
//! evaluated at the segment endpoints, which keeps endpoint singularities
//! of `1/(x - a)` type out of reach.
#![allow(clippy::excessive_precision)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not converge: estimate {value} with error {error} after {segments} segments")]
    NotConverged {
        value: f64,
        error: f64,
        segments: usize,
    },
    #[error("integrand returned a non-finite value at x = {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_segments: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_segments: 2000,
        }
    }
}

// Kronrod abscissae (positive half, descending) and weights; Gauss weights
// for the 7-point rule on the odd-indexed abscissae.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<Segment, QuadError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(QuadError::NonFinite(center));
    }
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    for (j, (&x, &wk)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let (xl, xr) = (center - dx, center + dx);
        let (fl, fr) = (f(xl), f(xr));
        if !fl.is_finite() {
            return Err(QuadError::NonFinite(xl));
        }
        if !fr.is_finite() {
            return Err(QuadError::NonFinite(xr));
        }
        res_k += wk * (fl + fr);
        if j % 2 == 1 {
            res_g += WG[j / 2] * (fl + fr);
        }
    }
    let value = res_k * half;
    let error = ((res_k - res_g) * half).abs();
    // floor the estimate at rounding level so converged segments stop splitting
    let error = error.max(50.0 * f64::EPSILON * value.abs());
    Ok(Segment { a, b, value, error })
}

/// Integrates `f` over `[a, b]`. `a > b` yields the negated integral.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    opts: QuadOptions,
) -> Result<QuadResult, QuadError> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    if a > b {
        let r = integrate(f, b, a, opts)?;
        return Ok(QuadResult {
            value: -r.value,
            ..r
        });
    }
    let mut heap = BinaryHeap::new();
    let first = kronrod(&mut f, a, b)?;
    let mut total = first.value;
    let mut total_err = first.error;
    let mut evaluations = 15;
    heap.push(first);
    loop {
        let target = opts.abs_tol.max(opts.rel_tol * total.abs());
        if total_err <= target {
            break;
        }
        if heap.len() >= opts.max_segments {
            return Err(QuadError::NotConverged {
                value: total,
                error: total_err,
                segments: heap.len(),
            });
        }
        let worst = heap.pop().expect("heap is non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // cannot split further in floating point
            return Err(QuadError::NotConverged {
                value: total,
                error: total_err,
                segments: heap.len() + 1,
            });
        }
        let left = kronrod(&mut f, worst.a, mid)?;
        let right = kronrod(&mut f, mid, worst.b)?;
        evaluations += 30;
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // re-sum to shed the drift of the running updates
    let value: f64 = heap.iter().map(|s| s.value).sum();
    let error: f64 = heap.iter().map(|s| s.error).sum();
    Ok(QuadResult {
        value,
        error,
        evaluations,
    })
}

/// Integrates over consecutive pieces `[p0, p1], [p1, p2], ...` and sums.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(
    mut f: F,
    points: &[f64],
    opts: QuadOptions,
) -> Result<QuadResult, QuadError> {
    let mut out = QuadResult {
        value: 0.0,
        error: 0.0,
        evaluations: 0,
    };
    for w in points.windows(2) {
        let r = integrate(&mut f, w[0], w[1], opts)?;
        out.value += r.value;
        out.error += r.error;
        out.evaluations += r.evaluations;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact_in_one_pass() {
        let r = integrate(
            |x| x.powi(5) - 3.0 * x * x,
            -1.0,
            2.0,
            QuadOptions::default(),
        )
        .unwrap();
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0);
        assert!((r.value - exact).abs() < 1e-13);
        assert_eq!(r.evaluations, 15);
    }

    #[test]
    fn reversed_limits_negate() {
        let f = |x: f64| x.exp();
        let fw = integrate(f, 0.0, 1.0, QuadOptions::default())
            .unwrap()
            .value;
        let bw = integrate(f, 1.0, 0.0, QuadOptions::default())
            .unwrap()
            .value;
        assert_eq!(fw, -bw);
        assert!((fw - (1f64.exp() - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn inverse_sqrt_singularity() {
        // ∫0^1 x^{-1/2} = 2; endpoint never sampled
        let opts = QuadOptions {
            rel_tol: 1e-9,
            max_segments: 5000,
            ..Default::default()
        };
        let r = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, opts).unwrap();
        assert!((r.value - 2.0).abs() < 1e-8, "{}", r.value);
    }

    #[test]
    fn kink_handled_by_pieces() {
        let f = |x: f64| (x - 0.3).abs();
        let r = integrate_pieces(f, &[0.0, 0.3, 1.0], QuadOptions::default()).unwrap();
        assert!((r.value - (0.045 + 0.245)).abs() < 1e-14);
    }

    #[test]
    fn nonconvergence_reported() {
        let opts = QuadOptions {
            abs_tol: 0.0,
            rel_tol: 1e-15,
            max_segments: 4,
        };
        let err = integrate(|x| (1.0 / x).sin(), 1e-3, 1.0, opts).unwrap_err();
        assert!(matches!(err, QuadError::NotConverged { .. }));
    }
}
