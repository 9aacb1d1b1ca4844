//! Stationary densities of the two-mode system.
//!
//! Any stationary pair satisfies `(b x - a) ψ1 = (c - d x) ψ2 =: h`, and `h`
//! solves `h' = (λ/(b x - a) - μ/(c - d x)) h` with `h = 0` at both ends. So
//!
//! ```text
//! h(x) = K exp(E(x)),   E(x) = ∫_{x0}^{x} λ(y)/(b y - a) - μ(y)/(c - d y) dy
//! ```
//!
//! Writing `p1 = λ(xL)/b` and `p2 = μ(xR)/d`, the integrand splits into a
//! bounded part plus `p1/(y - xL) + p2/(y - xR)`, whose logarithms are
//! integrated exactly. For affine rates the bounded part is the constant
//! `s = l/b + m/d` and everything is closed form:
//!
//! ```text
//! ψ1 = (K'/b) e^{s x} (x - xL)^{p1 - 1} (xR - x)^{p2}
//! ψ2 = (K'/d) e^{s x} (x - xL)^{p1} (xR - x)^{p2 - 1}
//! ```
//!
//! The constant `K` stored here is `h(x0)`; it differs from the `K'` of the
//! power form by the factor `e^{s x0} (x0 - xL)^{p1} (xR - x0)^{p2}`.

use serde::Serialize;
use thiserror::Error;

use crate::model::Model;
use crate::quad::{self, QuadError, QuadOptions};

/// Absolute tolerance for the exponent integral.
pub const TOL_QUAD: f64 = 1e-10;
/// Relative normalization tolerance, both endpoints non-singular.
pub const TOL_NORM: f64 = 1e-8;
/// Relative normalization tolerance when a density is singular at an end.
pub const TOL_NORM_SINGULAR: f64 = 1e-6;
/// Quadrature never samples closer than this fraction of the length to an
/// endpoint.
pub const ENDPOINT_GUARD: f64 = 1e-12;

/// Relative tolerance deciding `al + kb = b²` (and the right analogue).
const BORDER_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StationaryError {
    #[error("x = {x} is not strictly inside ({left}, {right})")]
    OutOfDomain { x: f64, left: f64, right: f64 },
    #[error("operation requires affine switching rates")]
    NotAffine,
    #[error("normalization failed: {0}")]
    NormalizationFailure(String),
    #[error("{0:?} is singular at an endpoint; no finite maximum")]
    SingularComponent(Target),
}

/// How the exponent integral is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    ClosedForm,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Which density a maximum or polynomial refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Psi1,
    Psi2,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Singular,
    FiniteNonzero,
    Zero,
}

/// Behaviour of `ψ1` at the left end and of `ψ2` at the right end. (The
/// other density always vanishes at each end.)
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EndpointBehavior {
    pub at_left: EndpointKind,
    pub at_right: EndpointKind,
}

fn kind_from_sign(lhs: f64, rhs: f64) -> EndpointKind {
    let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
    if (lhs - rhs).abs() <= BORDER_TOL * scale {
        EndpointKind::FiniteNonzero
    } else if lhs < rhs {
        EndpointKind::Singular
    } else {
        EndpointKind::Zero
    }
}

/// Classifies the endpoint behaviour from the signs of `al + kb - b²` and
/// `cm + nd - d²`.
pub fn classify_endpoints(model: &Model) -> Result<EndpointBehavior, StationaryError> {
    let (l, k, m, n) = model
        .affine_coefficients()
        .ok_or(StationaryError::NotAffine)?;
    let (a, b, c, d) = (model.a(), model.b(), model.c(), model.d());
    Ok(EndpointBehavior {
        at_left: kind_from_sign(a * l + k * b, b * b),
        at_right: kind_from_sign(c * m + n * d, d * d),
    })
}

/// Exponent data of the closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineExponents {
    /// `al/b² + k/b`, the power of `(x - xL)` in `h`.
    pub p1: f64,
    /// `cm/d² + n/d`, the power of `(xR - x)` in `h`.
    pub p2: f64,
    /// `l/b + m/d`, the rate of the exponential factor.
    pub s: f64,
}

pub fn affine_exponents(model: &Model) -> Result<AffineExponents, StationaryError> {
    let (l, k, m, n) = model
        .affine_coefficients()
        .ok_or(StationaryError::NotAffine)?;
    let (a, b, c, d) = (model.a(), model.b(), model.c(), model.d());
    Ok(AffineExponents {
        p1: a * l / (b * b) + k / b,
        p2: c * m / (d * d) + n / d,
        s: l / b + m / d,
    })
}

/// Evaluator for `E(x)` relative to a base point.
#[derive(Debug, Clone)]
struct Exponent {
    model: Model,
    method: Method,
    x0: f64,
    p1: f64,
    p2: f64,
    s: f64,
    ln_dl0: f64,
    ln_dr0: f64,
}

impl Exponent {
    fn new(model: &Model, x0: f64, method: Method) -> Result<Self, StationaryError> {
        let iv = model.interval();
        if !iv.contains_open(x0) {
            return Err(StationaryError::OutOfDomain {
                x: x0,
                left: iv.left,
                right: iv.right,
            });
        }
        let (p1, p2, s) = match method {
            Method::ClosedForm => {
                let e = affine_exponents(model)?;
                (e.p1, e.p2, e.s)
            }
            Method::Quadrature => (
                model.lambda(iv.left) / model.b(),
                model.mu(iv.right) / model.d(),
                f64::NAN,
            ),
        };
        Ok(Self {
            model: model.clone(),
            method,
            x0,
            p1,
            p2,
            s,
            ln_dl0: (x0 - iv.left).ln(),
            ln_dr0: (iv.right - x0).ln(),
        })
    }

    /// `[λ(y) - λ(xL)]/(b(y - xL)) - [μ(y) - μ(xR)]/(d(xR - y))`, bounded.
    fn regular_integrand(&self, y: f64) -> f64 {
        let iv = self.model.interval();
        let guard = ENDPOINT_GUARD * iv.length();
        let y = y.clamp(iv.left + guard, iv.right - guard);
        let m = &self.model;
        let left = (m.lambda(y) - m.lambda(iv.left)) / (m.b() * (y - iv.left));
        let right = (m.mu(y) - m.mu(iv.right)) / (m.d() * (iv.right - y));
        left - right
    }

    /// `∫_{x0}^{x}` of the bounded part.
    fn regular_part(&self, x: f64) -> f64 {
        match self.method {
            Method::ClosedForm => self.s * (x - self.x0),
            Method::Quadrature => {
                let (lo, hi) = if x < self.x0 {
                    (x, self.x0)
                } else {
                    (self.x0, x)
                };
                let mut pts = vec![lo];
                let mut kinks = self.model.params().lambda.kinks_within(lo, hi);
                kinks.extend(self.model.params().mu.kinks_within(lo, hi));
                kinks.sort_by(f64::total_cmp);
                pts.extend(kinks);
                pts.push(hi);
                let opts = QuadOptions {
                    abs_tol: 0.01 * TOL_QUAD,
                    rel_tol: 1e-13,
                    max_segments: 500,
                };
                let value = match quad::integrate_pieces(|y| self.regular_integrand(y), &pts, opts)
                {
                    Ok(r) => r.value,
                    Err(QuadError::NotConverged { value, error, .. }) => {
                        log::warn!("exponent integral to x = {x} not converged (err {error:e})");
                        value
                    }
                    Err(QuadError::NonFinite(y)) => {
                        log::warn!("exponent integrand non-finite at {y}");
                        f64::NAN
                    }
                };
                if x < self.x0 {
                    -value
                } else {
                    value
                }
            }
        }
    }

    fn value_logs(&self, x: f64, ln_dl: f64, ln_dr: f64) -> f64 {
        self.regular_part(x) + self.p1 * (ln_dl - self.ln_dl0) + self.p2 * (ln_dr - self.ln_dr0)
    }
}

/// `E(x) = ∫_{x0}^{x} (λ(y)/(b y - a) - μ(y)/(c - d y)) dy` for `x, x0`
/// strictly inside the interval.
pub fn exponent_integral(
    model: &Model,
    x: f64,
    x0: f64,
    method: Method,
) -> Result<f64, StationaryError> {
    let iv = model.interval();
    if !iv.contains_open(x) {
        return Err(StationaryError::OutOfDomain {
            x,
            left: iv.left,
            right: iv.right,
        });
    }
    let e = Exponent::new(model, x0, method)?;
    Ok(e.value_logs(x, (x - iv.left).ln(), (iv.right - x).ln()))
}

/// Options controlling [`StationarySolution::normalize`].
#[derive(Debug, Clone, Copy, Default)]
pub struct StationaryOptions {
    /// `None` picks the closed form when both rates are affine.
    pub method: Option<Method>,
    /// `None` uses the interval midpoint.
    pub x0: Option<f64>,
}

/// Normalized stationary solution.
#[derive(Debug, Clone)]
pub struct StationarySolution {
    exponent: Exponent,
    ln_k: f64,
    norm_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationarySample {
    pub x: f64,
    pub psi1: f64,
    pub psi2: f64,
    pub sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MaximumLocation {
    Interior,
    LeftEndpoint,
    RightEndpoint,
    /// The density is constant; every point is maximal.
    Plateau,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Maximum {
    pub x: f64,
    pub value: f64,
    pub location: MaximumLocation,
}

impl StationarySolution {
    pub fn normalize(model: &Model, opts: StationaryOptions) -> Result<Self, StationaryError> {
        let method = match opts.method {
            Some(m) => m,
            None if model.affine_coefficients().is_some() => Method::ClosedForm,
            None => Method::Quadrature,
        };
        let x0 = opts.x0.unwrap_or_else(|| model.interval().midpoint());
        let exponent = Exponent::new(model, x0, method)?;
        for (name, p) in [("left", exponent.p1), ("right", exponent.p2)] {
            if !(p > ENDPOINT_GUARD) || !p.is_finite() {
                return Err(StationaryError::NormalizationFailure(format!(
                    "{name} exponent {p} is not positive; density is not integrable"
                )));
            }
        }
        let mut sol = Self {
            exponent,
            ln_k: 0.0,
            norm_error: 0.0,
        };
        let (mass, err) = sol.unnormalized_mass()?;
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(StationaryError::NormalizationFailure(format!(
                "total mass {mass} is not a positive finite number"
            )));
        }
        let rel = err / mass;
        let tol = if sol.exponent.p1 < 1.0 || sol.exponent.p2 < 1.0 {
            TOL_NORM_SINGULAR
        } else {
            TOL_NORM
        };
        if rel > tol {
            return Err(StationaryError::NormalizationFailure(format!(
                "relative error estimate {rel:e} exceeds {tol:e}"
            )));
        }
        sol.ln_k = -mass.ln();
        sol.norm_error = rel;
        Ok(sol)
    }

    /// `∫(ψ1 + ψ2)` at the current constant, with the substitution
    /// `u = (x - xL)^α`, `α = min(p1, 1)` on the left half and its mirror on
    /// the right half.
    fn unnormalized_mass(&self) -> Result<(f64, f64), StationaryError> {
        let iv = self.model().interval();
        let x0 = self.exponent.x0;
        let opts = QuadOptions {
            abs_tol: 0.0,
            rel_tol: 1e-11,
            max_segments: 4000,
        };
        let fail = |e: QuadError| StationaryError::NormalizationFailure(e.to_string());

        let alpha_l = self.exponent.p1.min(1.0);
        let u_left = ((x0 - iv.left).ln() * alpha_l).exp();
        let left = quad::integrate(
            |u| {
                let ln_u = u.ln();
                let ln_dl = ln_u / alpha_l;
                let dl = ln_dl.exp();
                let x = iv.left + dl;
                let ln_dr = (iv.right - x).ln();
                let ln_jac = (1.0 / alpha_l - 1.0) * ln_u - alpha_l.ln();
                let (l1, l2) = self.log_psi(x, ln_dl, ln_dr);
                (l1 + ln_jac).exp() + (l2 + ln_jac).exp()
            },
            0.0,
            u_left,
            opts,
        )
        .map_err(fail)?;

        let alpha_r = self.exponent.p2.min(1.0);
        let u_right = ((iv.right - x0).ln() * alpha_r).exp();
        let right = quad::integrate(
            |u| {
                let ln_u = u.ln();
                let ln_dr = ln_u / alpha_r;
                let dr = ln_dr.exp();
                let x = iv.right - dr;
                let ln_dl = (x - iv.left).ln();
                let ln_jac = (1.0 / alpha_r - 1.0) * ln_u - alpha_r.ln();
                let (l1, l2) = self.log_psi(x, ln_dl, ln_dr);
                (l1 + ln_jac).exp() + (l2 + ln_jac).exp()
            },
            0.0,
            u_right,
            opts,
        )
        .map_err(fail)?;

        Ok((left.value + right.value, left.error + right.error))
    }

    fn log_h(&self, x: f64, ln_dl: f64, ln_dr: f64) -> f64 {
        self.ln_k + self.exponent.value_logs(x, ln_dl, ln_dr)
    }

    fn log_psi(&self, x: f64, ln_dl: f64, ln_dr: f64) -> (f64, f64) {
        let lh = self.log_h(x, ln_dl, ln_dr);
        (
            lh - self.model().b().ln() - ln_dl,
            lh - self.model().d().ln() - ln_dr,
        )
    }

    pub fn model(&self) -> &Model {
        &self.exponent.model
    }

    pub fn method(&self) -> Method {
        self.exponent.method
    }

    pub fn x0(&self) -> f64 {
        self.exponent.x0
    }

    /// Normalization constant, equal to `h(x0)`.
    pub fn k(&self) -> f64 {
        self.ln_k.exp()
    }

    /// Left and right exponents `(p1, p2)` of `h`.
    pub fn exponents(&self) -> (f64, f64) {
        (self.exponent.p1, self.exponent.p2)
    }

    /// Achieved relative error estimate of the normalizing integral.
    pub fn normalization_error(&self) -> f64 {
        self.norm_error
    }

    /// `K e^{E(x)}` inside, `0` at and beyond the endpoints.
    pub fn h(&self, x: f64) -> f64 {
        let iv = self.model().interval();
        if !iv.contains_open(x) {
            return 0.0;
        }
        self.log_h(x, (x - iv.left).ln(), (iv.right - x).ln()).exp()
    }

    pub fn psi(&self, x: f64) -> Result<(f64, f64), StationaryError> {
        let iv = self.model().interval();
        if !iv.contains_open(x) {
            return Err(StationaryError::OutOfDomain {
                x,
                left: iv.left,
                right: iv.right,
            });
        }
        let (l1, l2) = self.log_psi(x, (x - iv.left).ln(), (iv.right - x).ln());
        Ok((l1.exp(), l2.exp()))
    }

    /// `ψ1` evaluated at distance `eps` from the left end (or `ψ2` from the
    /// right end), computed from `ln eps` to avoid cancellation.
    pub fn psi_near_endpoint(&self, side: Side, eps: f64) -> f64 {
        let iv = self.model().interval();
        match side {
            Side::Left => {
                let x = iv.left + eps;
                self.log_psi(x, eps.ln(), (iv.right - x).ln()).0.exp()
            }
            Side::Right => {
                let x = iv.right - eps;
                self.log_psi(x, (x - iv.left).ln(), eps.ln()).1.exp()
            }
        }
    }

    pub fn sum(&self, x: f64) -> Result<f64, StationaryError> {
        self.psi(x).map(|(a, b)| a + b)
    }

    pub fn sample(&self, xs: &[f64]) -> Result<Vec<StationarySample>, StationaryError> {
        xs.iter()
            .map(|&x| {
                let (psi1, psi2) = self.psi(x)?;
                Ok(StationarySample {
                    x,
                    psi1,
                    psi2,
                    sum: psi1 + psi2,
                })
            })
            .collect()
    }

    /// Finite limit of `ψ1` at the left end (or `ψ2` at the right end);
    /// `None` unless the corresponding exponent equals 1.
    pub fn endpoint_value(&self, side: Side) -> Option<f64> {
        let iv = self.model().interval();
        let e = &self.exponent;
        let ln_len = iv.length().ln();
        match side {
            Side::Left => {
                if kind_from_sign(e.p1, 1.0) != EndpointKind::FiniteNonzero {
                    return None;
                }
                let lv = self.ln_k + e.regular_part(iv.left) - e.p1 * e.ln_dl0
                    + e.p2 * (ln_len - e.ln_dr0)
                    - self.model().b().ln();
                Some(lv.exp())
            }
            Side::Right => {
                if kind_from_sign(e.p2, 1.0) != EndpointKind::FiniteNonzero {
                    return None;
                }
                let lv = self.ln_k + e.regular_part(iv.right) + e.p1 * (ln_len - e.ln_dl0)
                    - e.p2 * e.ln_dr0
                    - self.model().d().ln();
                Some(lv.exp())
            }
        }
    }

    fn classification(&self) -> Result<EndpointBehavior, StationaryError> {
        classify_endpoints(self.model())
    }

    /// Maxima of `ψ1`, `ψ2` or their sum (affine rates only).
    pub fn maxima(&self, target: Target) -> Result<Vec<Maximum>, StationaryError> {
        let cls = self.classification()?;
        let ex = affine_exponents(self.model())?;
        let iv = self.model().interval();
        let len = iv.length();
        let (b, d) = (self.model().b(), self.model().d());
        let singular = match target {
            Target::Psi1 => cls.at_left == EndpointKind::Singular,
            Target::Psi2 => cls.at_right == EndpointKind::Singular,
            Target::Sum => {
                cls.at_left == EndpointKind::Singular || cls.at_right == EndpointKind::Singular
            }
        };
        if singular {
            return Err(StationaryError::SingularComponent(target));
        }

        let value_at = |x: f64| -> f64 {
            let (p1, p2) = self.psi(x).expect("interior point");
            match target {
                Target::Psi1 => p1,
                Target::Psi2 => p2,
                Target::Sum => p1 + p2,
            }
        };

        let mut out = Vec::new();
        let poly = match target {
            Target::Psi1 => critical_polynomial(self.model(), 1)?.as_poly(),
            Target::Psi2 => critical_polynomial(self.model(), 2)?.as_poly(),
            Target::Sum => sum_derivative_polynomial(self.model())?,
        };
        if poly.is_zero() {
            let x = iv.midpoint();
            return Ok(vec![Maximum {
                x,
                value: value_at(x),
                location: MaximumLocation::Plateau,
            }]);
        }
        for r in poly.interior_sign_changes(iv.left, iv.right) {
            if r.falling {
                out.push(Maximum {
                    x: r.x,
                    value: value_at(r.x),
                    location: MaximumLocation::Interior,
                });
            }
        }

        // border case: the density is finite at the end; decide from the
        // slope factor left after dividing out the endpoint root
        let left_finite = cls.at_left == EndpointKind::FiniteNonzero;
        let right_finite = cls.at_right == EndpointKind::FiniteNonzero;
        let left_max = match target {
            Target::Psi1 => left_finite && ex.s * len - ex.p2 <= 0.0,
            Target::Psi2 => false,
            Target::Sum => left_finite && (ex.s * len - ex.p2) / b + 1.0 / d <= 0.0,
        };
        let right_max = match target {
            Target::Psi1 => false,
            Target::Psi2 => right_finite && ex.s * len + ex.p1 >= 0.0,
            Target::Sum => right_finite && (ex.s * len + ex.p1) / d - 1.0 / b >= 0.0,
        };
        if left_max {
            let v1 = self.endpoint_value(Side::Left).expect("finite left limit");
            out.insert(
                0,
                Maximum {
                    x: iv.left,
                    value: v1,
                    location: MaximumLocation::LeftEndpoint,
                },
            );
        }
        if right_max {
            let v2 = self
                .endpoint_value(Side::Right)
                .expect("finite right limit");
            out.push(Maximum {
                x: iv.right,
                value: v2,
                location: MaximumLocation::RightEndpoint,
            });
        }
        Ok(out)
    }

    pub fn summary(&self) -> StationarySummary {
        let maxima = |t| self.maxima(t).ok();
        StationarySummary {
            k: self.k(),
            x0: self.x0(),
            method: self.method(),
            exponents: self.exponents(),
            affine: affine_exponents(self.model()).ok(),
            classification: classify_endpoints(self.model()).ok(),
            normalization_error: self.norm_error,
            maxima_psi1: maxima(Target::Psi1),
            maxima_psi2: maxima(Target::Psi2),
            maxima_sum: maxima(Target::Sum),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarySummary {
    pub k: f64,
    pub x0: f64,
    pub method: Method,
    pub exponents: (f64, f64),
    pub affine: Option<AffineExponents>,
    pub classification: Option<EndpointBehavior>,
    pub normalization_error: f64,
    pub maxima_psi1: Option<Vec<Maximum>>,
    pub maxima_psi2: Option<Vec<Maximum>>,
    pub maxima_sum: Option<Vec<Maximum>>,
}

/// Polynomial with ascending coefficients.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Poly(pub Vec<f64>);

#[derive(Debug, Clone, Copy)]
pub(crate) struct SignChange {
    pub x: f64,
    /// `+` to `-` as x increases.
    pub falling: bool,
}

impl Poly {
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        Poly(
            (0..n)
                .map(|i| self.0.get(i).unwrap_or(&0.0) + other.0.get(i).unwrap_or(&0.0))
                .collect(),
        )
    }

    fn is_zero(&self) -> bool {
        self.0.iter().all(|c| c.abs() <= 1e-13)
    }

    /// Sign changes strictly inside `(lo, hi)`, located by a scan and
    /// bisection to full precision.
    pub fn interior_sign_changes(&self, lo: f64, hi: f64) -> Vec<SignChange> {
        const SCAN: usize = 4096;
        let margin = 1e-12 * (hi - lo);
        let xs: Vec<f64> = (0..=SCAN)
            .map(|i| lo + margin + (hi - lo - 2.0 * margin) * i as f64 / SCAN as f64)
            .collect();
        let mut out = Vec::new();
        let mut prev_x = xs[0];
        let mut prev_v = self.eval(prev_x);
        for &x in &xs[1..] {
            let v = self.eval(x);
            if v == 0.0 {
                continue;
            }
            if prev_v != 0.0 && (prev_v > 0.0) != (v > 0.0) {
                let (mut a, mut b) = (prev_x, x);
                let fa_pos = prev_v > 0.0;
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if m <= a || m >= b {
                        break;
                    }
                    if (self.eval(m) > 0.0) == fa_pos {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                out.push(SignChange {
                    x: 0.5 * (a + b),
                    falling: fa_pos,
                });
            }
            prev_x = x;
            prev_v = v;
        }
        out
    }
}

/// Quadratic factor `P` of a density derivative:
/// `ψ1' ∝ (x - xL)^{p1-2} (xR - x)^{p2-1} P1(x)` and
/// `ψ2' ∝ (x - xL)^{p1-1} (xR - x)^{p2-2} P2(x)` with positive prefactors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalPolynomial {
    /// `x²` coefficient.
    pub alpha: f64,
    /// `x` coefficient.
    pub beta: f64,
    /// constant term.
    pub gamma: f64,
    /// 1 for `ψ1`, 2 for `ψ2`.
    pub component: u8,
}

impl CriticalPolynomial {
    pub fn eval(&self, x: f64) -> f64 {
        (self.alpha * x + self.beta) * x + self.gamma
    }

    pub fn derivative(&self, x: f64) -> f64 {
        2.0 * self.alpha * x + self.beta
    }

    fn as_poly(&self) -> Poly {
        Poly(vec![self.gamma, self.beta, self.alpha])
    }

    /// Real roots in ascending order.
    pub fn roots(&self) -> Vec<f64> {
        let (a, b, c) = (self.alpha, self.beta, self.gamma);
        let scale = b.abs().max(c.abs());
        if a == 0.0 || a.abs() <= 1e-14 * scale {
            if b == 0.0 {
                return Vec::new();
            }
            return vec![-c / b];
        }
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return Vec::new();
        }
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        let mut r = if q == 0.0 {
            vec![0.0, 0.0]
        } else {
            vec![q / a, c / q]
        };
        r.sort_by(f64::total_cmp);
        r
    }
}

/// Builds `P1` (component 1) or `P2` (component 2):
///
/// ```text
/// P1 = s (x - xL)(xR - x) - p2 (x - xL) + (p1 - 1)(xR - x)
/// P2 = s (x - xL)(xR - x) + p1 (xR - x) - (p2 - 1)(x - xL)
/// ```
pub fn critical_polynomial(
    model: &Model,
    component: u8,
) -> Result<CriticalPolynomial, StationaryError> {
    let ex = affine_exponents(model)?;
    let iv = model.interval();
    let (xl, xr) = (iv.left, iv.right);
    // (x - xL)(xR - x) = -x² + (xL + xR) x - xL xR
    let (cl, cr) = match component {
        // coefficient on (x - xL), coefficient on (xR - x)
        1 => (-ex.p2, ex.p1 - 1.0),
        2 => (-(ex.p2 - 1.0), ex.p1),
        _ => panic!("component must be 1 or 2"),
    };
    Ok(CriticalPolynomial {
        alpha: -ex.s,
        beta: ex.s * (xl + xr) + cl - cr,
        gamma: -ex.s * xl * xr - cl * xl + cr * xr,
        component,
    })
}

/// `Q = (xR - x) P1 / b + (x - xL) P2 / d`, a cubic with
/// `(ψ1 + ψ2)' ∝ (x - xL)^{p1-2} (xR - x)^{p2-2} Q(x)`.
fn sum_derivative_polynomial(model: &Model) -> Result<Poly, StationaryError> {
    let iv = model.interval();
    let p1 = critical_polynomial(model, 1)?.as_poly();
    let p2 = critical_polynomial(model, 2)?.as_poly();
    let (b, d) = (model.b(), model.d());
    let left = p1.mul(&Poly(vec![iv.right / b, -1.0 / b]));
    let right = p2.mul(&Poly(vec![-iv.left / d, 1.0 / d]));
    Ok(left.add(&right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example_model, ModelParams, RateFunction};
    use approx::assert_relative_eq;
    use std::f64::consts::{E, PI};

    fn example(n: usize) -> Model {
        example_model(n).unwrap().validate_lenient().unwrap()
    }

    fn solve(n: usize) -> StationarySolution {
        StationarySolution::normalize(&example(n), StationaryOptions::default()).unwrap()
    }

    fn solve_quad(n: usize) -> StationarySolution {
        StationarySolution::normalize(
            &example(n),
            StationaryOptions {
                method: Some(Method::Quadrature),
                x0: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn exponent_integral_examples() {
        let m1 = example(1);
        assert_eq!(
            exponent_integral(&m1, 0.0, 0.0, Method::ClosedForm).unwrap(),
            0.0
        );
        // ln(1 - x²) at x = 0.5
        let e = exponent_integral(&m1, 0.5, 0.0, Method::ClosedForm).unwrap();
        assert_relative_eq!(e, -0.287_682_072_451_780_9, max_relative = 1e-14);
        let e = exponent_integral(&m1, 0.5, 0.0, Method::Quadrature).unwrap();
        assert_relative_eq!(e, -0.287_682_072_451_780_9, max_relative = 1e-12);
        let m3 = example(3);
        let e = exponent_integral(&m3, 0.5, 0.0, Method::ClosedForm).unwrap();
        assert_relative_eq!(e, -0.143_841_036_225_890_4, max_relative = 1e-14);
        assert!(matches!(
            exponent_integral(&m3, 1.0, 0.0, Method::ClosedForm),
            Err(StationaryError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn h_examples() {
        let s1 = solve(1);
        assert_relative_eq!(s1.h(0.0), 0.25, max_relative = 1e-12);
        assert_relative_eq!(s1.h(0.3), (1.0 - 0.09) / 4.0, max_relative = 1e-12);
        for n in 1..=7 {
            let s = solve(n);
            let iv = s.model().interval();
            assert_eq!(s.h(iv.left), 0.0);
            assert_eq!(s.h(iv.right), 0.0);
        }
        assert_relative_eq!(solve(2).h(0.0), 3.0 / 8.0, max_relative = 1e-12);
    }

    #[test]
    fn psi_examples() {
        let (a, b) = solve(1).psi(0.0).unwrap();
        assert_relative_eq!(a, 0.25, max_relative = 1e-12);
        assert_relative_eq!(b, 0.25, max_relative = 1e-12);
        let (a, _) = solve(3).psi(0.0).unwrap();
        assert_relative_eq!(a, 1.0 / (2.0 * PI), max_relative = 1e-10);
        let want = E / (2.0 * (E * E + 1.0));
        let (a, b) = solve(4).psi(0.0).unwrap();
        assert_relative_eq!(a, want, max_relative = 1e-10);
        assert_relative_eq!(b, want, max_relative = 1e-10);
        assert!(matches!(
            solve(1).psi(-1.0),
            Err(StationaryError::OutOfDomain { .. })
        ));
        assert!(matches!(
            solve(1).psi(1.0),
            Err(StationaryError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn normalization_constants() {
        assert_relative_eq!(solve(1).k(), 0.25, max_relative = 1e-10);
        assert_relative_eq!(solve(3).k(), 1.0 / (2.0 * PI), max_relative = 1e-9);
        // h(0) = ψ1(0) for b = 1 at x0 = 0
        assert_relative_eq!(
            solve(2).psi(0.0).unwrap().0,
            3.0 / 8.0,
            max_relative = 1e-10
        );
        assert!(solve(3).normalization_error() <= TOL_NORM_SINGULAR);
        assert!(solve(2).normalization_error() <= TOL_NORM);
    }

    #[test]
    fn example_two_components_follow_the_general_formula() {
        // p1 = p2 = 2 puts (x+1)^1 (1-x)^2 in ψ1
        let s = solve(2);
        for &x in &[-0.7, -0.2, 0.4, 0.9] {
            let (a, b) = s.psi(x).unwrap();
            assert_relative_eq!(
                a,
                3.0 * (x + 1.0) * (1.0 - x).powi(2) / 8.0,
                max_relative = 1e-10
            );
            assert_relative_eq!(
                b,
                3.0 * (x + 1.0).powi(2) * (1.0 - x) / 8.0,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn example_seven_normalizes_to_exact_integral() {
        // ∫ 2 e^x (1-x)² over [-1, 1] = 4e - 20/e
        let k_power = E / (4.0 * E * E - 20.0);
        let s = solve(7);
        for &x in &[-0.5, 0.0, 0.7] {
            let (a, _) = s.psi(x).unwrap();
            assert_relative_eq!(
                a,
                k_power * x.exp() * (1.0 - x).powi(3),
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn classification_examples() {
        use EndpointKind::*;
        assert_eq!(classify_endpoints(&example(3)).unwrap().at_left, Singular);
        assert_eq!(
            classify_endpoints(&example(1)).unwrap().at_left,
            FiniteNonzero
        );
        assert_eq!(classify_endpoints(&example(2)).unwrap().at_left, Zero);
        assert_eq!(classify_endpoints(&example(4)).unwrap().at_right, Zero);
        assert_relative_eq!(
            solve(1).endpoint_value(Side::Left).unwrap(),
            0.5,
            max_relative = 1e-10
        );
        let tab = ModelParams::new(
            -1.0,
            1.0,
            1.0,
            1.0,
            RateFunction::tabulated(vec![(-1.0, 1.0), (1.0, 1.0)]),
            RateFunction::constant(1.0),
        )
        .validate()
        .unwrap();
        assert_eq!(classify_endpoints(&tab), Err(StationaryError::NotAffine));
    }

    #[test]
    fn critical_polynomial_examples() {
        let p = critical_polynomial(&example(2), 1).unwrap();
        assert_eq!(p.alpha, 0.0);
        let r = p.roots();
        assert_eq!(r.len(), 1);
        assert_relative_eq!(r[0], -1.0 / 3.0, max_relative = 1e-14);
        let p = critical_polynomial(&example(1), 1).unwrap();
        // P1 = -(x + 1)
        assert_eq!((p.alpha, p.beta, p.gamma), (0.0, -1.0, -1.0));
        assert_eq!(p.roots(), vec![-1.0]);
        // border case: root at the left end
        let p = critical_polynomial(&example(4), 1).unwrap();
        let r = p.roots();
        assert_relative_eq!(r[0], -1.0, epsilon = 1e-14);
        assert_relative_eq!(r[1], 3.0, epsilon = 1e-14);
    }

    fn numeric_log_derivative(s: &StationarySolution, comp: usize, x: f64) -> f64 {
        let h = 1e-6;
        let f = |x: f64| {
            let (a, b) = s.psi(x).unwrap();
            if comp == 1 { a } else { b }.ln()
        };
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn critical_polynomials_match_numeric_derivatives() {
        // sign(ψ') = sign(P), and ψ'/ψ = P / ((x-xL)(xR-x))
        for n in [2, 4, 5, 6, 7] {
            let s = solve(n);
            let iv = s.model().interval();
            for comp in [1u8, 2] {
                let p = critical_polynomial(s.model(), comp).unwrap();
                for i in 1..20 {
                    let x = iv.left + iv.length() * i as f64 / 20.0;
                    let want = p.eval(x) / ((x - iv.left) * (iv.right - x));
                    let got = numeric_log_derivative(&s, comp as usize, x);
                    assert!(
                        (want - got).abs() < 1e-6 * (1.0 + want.abs()),
                        "ex {n} comp {comp} x {x}"
                    );
                }
            }
        }
    }

    #[test]
    fn maxima_examples() {
        let s = solve(2);
        let m = s.maxima(Target::Psi1).unwrap();
        assert_eq!(m.len(), 1);
        assert_relative_eq!(m[0].x, -1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(m[0].value, 4.0 / 9.0, max_relative = 1e-10);
        let m = s.maxima(Target::Psi2).unwrap();
        assert_relative_eq!(m[0].x, 1.0 / 3.0, epsilon = 1e-12);
        let m = s.maxima(Target::Sum).unwrap();
        assert_eq!(m.len(), 1);
        assert!(m[0].x.abs() < 1e-12);
        assert_relative_eq!(m[0].value, 0.75, max_relative = 1e-10);

        let m = solve(4).maxima(Target::Psi1).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].location, MaximumLocation::LeftEndpoint);
        assert_eq!(m[0].x, -1.0);
        let k = E / (2.0 * (E * E + 1.0));
        assert_relative_eq!(m[0].value, k * E * 4.0, max_relative = 1e-10);

        assert_eq!(
            solve(3).maxima(Target::Psi1),
            Err(StationaryError::SingularComponent(Target::Psi1))
        );
        let m = solve(1).maxima(Target::Sum).unwrap();
        assert_eq!(m[0].location, MaximumLocation::Plateau);
    }

    #[test]
    fn border_examples_six_and_seven() {
        // Example 6: interior maximum; Example 7: decreasing from the left end
        let m6 = solve(6).maxima(Target::Psi1).unwrap();
        assert_eq!(m6.len(), 1);
        assert_eq!(m6[0].location, MaximumLocation::Interior);
        // ψ1 ∝ e^{2x} (1-x)³, maximum where 2(1-x) = 3
        assert_relative_eq!(m6[0].x, -0.5, epsilon = 1e-12);
        let m7 = solve(7).maxima(Target::Psi1).unwrap();
        assert_eq!(m7.len(), 1);
        assert_eq!(m7[0].location, MaximumLocation::LeftEndpoint);
    }

    #[test]
    fn sum_maxima_found_by_derivative_sign() {
        // compare against a brute-force scan of ψ1 + ψ2
        for n in [2, 4, 5, 6, 7] {
            let s = solve(n);
            let iv = s.model().interval();
            let mut best = (f64::NAN, f64::NEG_INFINITY);
            for i in 1..20000 {
                let x = iv.left + iv.length() * i as f64 / 20000.0;
                let v = s.sum(x).unwrap();
                if v > best.1 {
                    best = (x, v);
                }
            }
            let m = s.maxima(Target::Sum).unwrap();
            let top = m
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, |a, b| a.max(b.value));
            assert!(top >= best.1 - 1e-9, "example {n}: {top} < {}", best.1);
            assert!((top - best.1).abs() < 1e-3 * best.1, "example {n}");
        }
    }

    #[test]
    fn flux_identity_and_positivity() {
        for n in 1..=7 {
            let s = solve(n);
            let m = s.model();
            let iv = m.interval();
            let pts: Vec<f64> = (1..=1000)
                .map(|i| iv.left + iv.length() * i as f64 / 1001.0)
                .collect();
            let hmax = pts.iter().map(|&x| s.h(x)).fold(0.0, f64::max);
            for &x in &pts {
                let (a, b) = s.psi(x).unwrap();
                assert!(a > 0.0 && b > 0.0);
                let lhs = (m.b() * x - m.a()) * a;
                let rhs = (m.c() - m.d() * x) * b;
                assert!((lhs - rhs).abs() <= 1e-10 * hmax);
            }
        }
    }

    fn stationarity_residual(s: &StationarySolution, x: f64, dx: f64) -> f64 {
        let m = s.model();
        let flux1 = |x: f64| (m.a() - m.b() * x) * s.psi(x).unwrap().0;
        let (a, b) = s.psi(x).unwrap();
        -(flux1(x + dx) - flux1(x - dx)) / (2.0 * dx) - m.lambda(x) * a + m.mu(x) * b
    }

    #[test]
    fn stationarity_residual_is_second_order() {
        for n in [1, 2, 4, 6] {
            let s = solve(n);
            let x = s.model().interval().midpoint() + 0.137;
            let r1 = stationarity_residual(&s, x, 1e-2).abs();
            let r2 = stationarity_residual(&s, x, 5e-3).abs();
            if r1 < 1e-12 {
                // exact polynomial flux: residual at rounding level
                assert!(r2 < 1e-9);
                continue;
            }
            let ratio = r1 / r2;
            assert!((ratio - 4.0).abs() < 0.2, "example {n}: ratio {ratio}");
        }
    }

    #[test]
    fn closed_form_and_quadrature_agree() {
        for n in 1..=7 {
            let a = solve(n);
            let b = solve_quad(n);
            let iv = a.model().interval();
            for i in 1..100 {
                let x = iv.left + iv.length() * i as f64 / 100.0;
                let (a1, a2) = a.psi(x).unwrap();
                let (b1, b2) = b.psi(x).unwrap();
                assert!(((a1 - b1) / a1).abs() <= 10.0 * TOL_QUAD, "ex {n} x {x}");
                assert!(((a2 - b2) / a2).abs() <= 10.0 * TOL_QUAD, "ex {n} x {x}");
            }
        }
    }

    #[test]
    fn tabulated_rates_match_ode_oracle() {
        // λ piecewise linear with a kink, μ constant; integrate
        // h' = (λ/(bx-a) - μ/(c-dx)) h by RK4 from x0 as an independent check
        let params = ModelParams::new(
            -1.0,
            1.0,
            1.0,
            1.0,
            RateFunction::tabulated(vec![(-1.0, 1.5), (0.2, 3.0), (1.0, 2.0)]),
            RateFunction::tabulated(vec![(-1.0, 2.0), (-0.4, 1.0), (1.0, 2.5)]),
        );
        let model = params.validate().unwrap();
        let s = StationarySolution::normalize(&model, StationaryOptions::default()).unwrap();
        assert_eq!(s.method(), Method::Quadrature);
        let rhs = |x: f64| model.lambda(x) / (x + 1.0) - model.mu(x) / (1.0 - x);
        let x0: f64 = 0.0;
        let target: f64 = 0.7;
        let steps = 200_000;
        let dx = (target - x0) / steps as f64;
        let mut ln_h = 0.0;
        let mut x = x0;
        for _ in 0..steps {
            let k1 = rhs(x);
            let k2 = rhs(x + 0.5 * dx);
            let k4 = rhs(x + dx);
            ln_h += dx * (k1 + 4.0 * k2 + k4) / 6.0;
            x += dx;
        }
        let ratio_oracle = ln_h.exp();
        let ratio = s.h(target) / s.h(x0);
        assert_relative_eq!(ratio, ratio_oracle, max_relative = 1e-8);
    }

    #[test]
    fn exponent_recovery_near_left_end() {
        for (n, want) in [(1, 0.0), (2, 1.0), (3, -0.5)] {
            let s = solve(n);
            let len = s.model().interval().length();
            let pts: Vec<(f64, f64)> = (3..=6)
                .map(|k| {
                    let eps = 10f64.powi(-k) * len;
                    (eps.ln(), s.psi_near_endpoint(Side::Left, eps).ln())
                })
                .collect();
            let slope = (pts[3].1 - pts[0].1) / (pts[3].0 - pts[0].0);
            let (p1, _) = s.exponents();
            assert!((slope - (p1 - 1.0)).abs() < 0.05);
            assert!((slope - want).abs() < 0.05);
        }
    }

    #[test]
    fn non_integrable_rate_rejected() {
        // λ(xL) = 0 gives ψ1 ~ 1/(x - xL)
        let p = ModelParams::new(
            -1.0,
            1.0,
            1.0,
            1.0,
            RateFunction::affine(1.0, 1.0),
            RateFunction::constant(1.0),
        )
        .validate()
        .unwrap();
        assert!(matches!(
            StationarySolution::normalize(&p, StationaryOptions::default()),
            Err(StationaryError::NormalizationFailure(_))
        ));
    }

    #[test]
    fn closed_form_refused_for_tables() {
        let p = ModelParams::new(
            -1.0,
            1.0,
            1.0,
            1.0,
            RateFunction::tabulated(vec![(-1.0, 1.0), (1.0, 1.0)]),
            RateFunction::constant(1.0),
        )
        .validate()
        .unwrap();
        let r = StationarySolution::normalize(
            &p,
            StationaryOptions {
                method: Some(Method::ClosedForm),
                x0: None,
            },
        );
        assert!(matches!(r, Err(StationaryError::NotAffine)));
    }

    #[test]
    fn base_point_does_not_change_densities() {
        let m = example(5);
        let a = StationarySolution::normalize(&m, StationaryOptions::default()).unwrap();
        let b = StationarySolution::normalize(
            &m,
            StationaryOptions {
                method: None,
                x0: Some(0.3),
            },
        )
        .unwrap();
        for &x in &[0.1, 0.8, 1.9] {
            assert_relative_eq!(
                a.psi(x).unwrap().0,
                b.psi(x).unwrap().0,
                max_relative = 1e-10
            );
        }
    }
}
