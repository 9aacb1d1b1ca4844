//! Model parameters, switching-rate functions and the state interval.
//!
//! The raw [`ModelParams`] are turned into a [`Model`] by
//! [`ModelParams::validate`], which checks that the interval `[a/b, c/d]`
//! is non-degenerate, that both drift slopes are positive, and that the
//! switching rates are positive on the interval.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Strict positivity threshold for switching rates.
pub const TOL_POSITIVE: f64 = 1e-12;

/// Number of probe points used to check positivity of tabulated rates.
pub const PROBE_POINTS: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("degenerate interval: a*d = {ad} must be smaller than b*c = {bc}")]
    DegenerateInterval { ad: f64, bc: f64 },
    #[error("drift slope {name} must be nonzero")]
    ZeroSlope { name: &'static str },
    #[error("drift slope {name} = {value} is negative; only b > 0, d > 0 is supported")]
    UnsupportedSign { name: &'static str, value: f64 },
    #[error("rate {name} is not positive at x = {x} (value {value})")]
    NonpositiveRate {
        name: &'static str,
        x: f64,
        value: f64,
    },
    #[error("x = {x} lies outside [{left}, {right}]")]
    OutOfDomain { x: f64, left: f64, right: f64 },
    #[error("invalid rate table: {0}")]
    InvalidTable(String),
    #[error("non-finite parameter {0}")]
    NonFinite(&'static str),
}

/// A mode-switching rate as a function of concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RateFunction {
    /// `slope * x + intercept`.
    Affine { slope: f64, intercept: f64 },
    /// Piecewise-linear interpolation through `(x, value)` nodes with
    /// strictly increasing `x`.
    Tabulated { nodes: Vec<(f64, f64)> },
}

impl RateFunction {
    pub fn constant(value: f64) -> Self {
        RateFunction::Affine {
            slope: 0.0,
            intercept: value,
        }
    }

    pub fn affine(slope: f64, intercept: f64) -> Self {
        RateFunction::Affine { slope, intercept }
    }

    pub fn tabulated(nodes: Vec<(f64, f64)>) -> Self {
        RateFunction::Tabulated { nodes }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, RateFunction::Affine { .. })
    }

    /// Evaluates without a domain check. Tabulated rates are extended by
    /// their end values outside the node range.
    pub fn value(&self, x: f64) -> f64 {
        match self {
            RateFunction::Affine { slope, intercept } => slope * x + intercept,
            RateFunction::Tabulated { nodes } => interpolate(nodes, x),
        }
    }

    /// Evaluates the rate at `x`, refusing points outside the interval.
    pub fn evaluate(&self, x: f64, interval: &DomainInterval) -> Result<f64, ModelError> {
        if !interval.contains(x) {
            return Err(ModelError::OutOfDomain {
                x,
                left: interval.left,
                right: interval.right,
            });
        }
        Ok(self.value(x))
    }

    /// Lower and upper bounds of the rate over the interval.
    ///
    /// Exact for both representations: an affine function attains its
    /// extremes at the endpoints, a piecewise-linear one at its nodes or at
    /// the endpoints.
    pub fn bounds(&self, interval: &DomainInterval) -> (f64, f64) {
        let mut lo = self.value(interval.left).min(self.value(interval.right));
        let mut hi = self.value(interval.left).max(self.value(interval.right));
        if let RateFunction::Tabulated { nodes } = self {
            for &(x, v) in nodes {
                if x > interval.left && x < interval.right {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        (lo, hi)
    }

    /// Breakpoints strictly inside `(lo, hi)`, ascending.
    pub fn kinks_within(&self, lo: f64, hi: f64) -> Vec<f64> {
        match self {
            RateFunction::Affine { .. } => Vec::new(),
            RateFunction::Tabulated { nodes } => nodes
                .iter()
                .map(|&(x, _)| x)
                .filter(|&x| x > lo && x < hi)
                .collect(),
        }
    }

    fn check_table(&self, name: &'static str, interval: &DomainInterval) -> Result<(), ModelError> {
        let RateFunction::Tabulated { nodes } = self else {
            return Ok(());
        };
        if nodes.len() < 2 {
            return Err(ModelError::InvalidTable(format!(
                "{name} needs at least two nodes"
            )));
        }
        if nodes.iter().any(|(x, v)| !x.is_finite() || !v.is_finite()) {
            return Err(ModelError::InvalidTable(format!(
                "{name} has non-finite entries"
            )));
        }
        if nodes.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(ModelError::InvalidTable(format!(
                "{name} nodes must have strictly increasing x"
            )));
        }
        let (first, last) = (nodes[0].0, nodes[nodes.len() - 1].0);
        if first > interval.left || last < interval.right {
            return Err(ModelError::InvalidTable(format!(
                "{name} nodes [{first}, {last}] do not cover [{}, {}]",
                interval.left, interval.right
            )));
        }
        Ok(())
    }
}

fn interpolate(nodes: &[(f64, f64)], x: f64) -> f64 {
    let n = nodes.len();
    if x <= nodes[0].0 {
        return nodes[0].1;
    }
    if x >= nodes[n - 1].0 {
        return nodes[n - 1].1;
    }
    // first node with x_j > x
    let j = nodes.partition_point(|&(xj, _)| xj <= x);
    let (x0, v0) = nodes[j - 1];
    let (x1, v1) = nodes[j];
    let w = (x - x0) / (x1 - x0);
    v0 + w * (v1 - v0)
}

/// The invariant interval `[a/b, c/d]` of the two drift flows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainInterval {
    pub left: f64,
    pub right: f64,
}

impl DomainInterval {
    pub fn length(&self) -> f64 {
        self.right - self.left
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.left + self.right)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.left && x <= self.right
    }

    pub fn contains_open(&self, x: f64) -> bool {
        x > self.left && x < self.right
    }
}

/// Unvalidated model parameters as read from input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Mode-1 drift intercept.
    pub a: f64,
    /// Mode-1 drift slope.
    pub b: f64,
    /// Mode-2 drift intercept.
    pub c: f64,
    /// Mode-2 drift slope.
    pub d: f64,
    /// Switching rate out of mode 1.
    pub lambda: RateFunction,
    /// Switching rate out of mode 2.
    pub mu: RateFunction,
}

impl ModelParams {
    pub fn new(a: f64, b: f64, c: f64, d: f64, lambda: RateFunction, mu: RateFunction) -> Self {
        Self {
            a,
            b,
            c,
            d,
            lambda,
            mu,
        }
    }

    pub fn validate(self) -> Result<Model, ModelError> {
        self.validate_with(true)
    }

    /// Like [`ModelParams::validate`], but a rate that is not positive
    /// somewhere is recorded as a warning instead of an error. The stationary
    /// formulas stay defined as long as the endpoint exponents are positive;
    /// the transient solver and the simulator refuse such models.
    pub fn validate_lenient(self) -> Result<Model, ModelError> {
        self.validate_with(false)
    }

    fn validate_with(self, strict: bool) -> Result<Model, ModelError> {
        for (name, v) in [("a", self.a), ("b", self.b), ("c", self.c), ("d", self.d)] {
            if !v.is_finite() {
                return Err(ModelError::NonFinite(name));
            }
        }
        for (name, v) in [("b", self.b), ("d", self.d)] {
            if v == 0.0 {
                return Err(ModelError::ZeroSlope { name });
            }
            if v < 0.0 {
                return Err(ModelError::UnsupportedSign { name, value: v });
            }
        }
        let (ad, bc) = (self.a * self.d, self.b * self.c);
        if ad >= bc {
            return Err(ModelError::DegenerateInterval { ad, bc });
        }
        let interval = DomainInterval {
            left: self.a / self.b,
            right: self.c / self.d,
        };
        if interval.left >= interval.right {
            return Err(ModelError::DegenerateInterval { ad, bc });
        }

        let mut warnings = Vec::new();
        let mut rates_positive = true;
        for (name, rate) in [("lambda", &self.lambda), ("mu", &self.mu)] {
            rate.check_table(name, &interval)?;
            match check_positive(name, rate, &interval) {
                Ok(Some(w)) => {
                    log::warn!("{w}");
                    warnings.push(w);
                }
                Ok(None) => {}
                Err(e @ ModelError::NonpositiveRate { .. }) if !strict => {
                    let w = format!("{e}; accepted for stationary evaluation only");
                    log::warn!("{w}");
                    warnings.push(w);
                    rates_positive = false;
                }
                Err(e) => return Err(e),
            }
        }

        Ok(Model {
            params: self,
            interval,
            warnings,
            rates_positive,
        })
    }
}

/// Strict positivity on the open interval; a zero value is tolerated at
/// an endpoint and reported as a warning.
fn check_positive(
    name: &'static str,
    rate: &RateFunction,
    interval: &DomainInterval,
) -> Result<Option<String>, ModelError> {
    let probes: Vec<f64> = match rate {
        RateFunction::Affine { .. } => vec![interval.left, interval.right],
        RateFunction::Tabulated { .. } => (0..PROBE_POINTS)
            .map(|i| interval.left + interval.length() * i as f64 / (PROBE_POINTS - 1) as f64)
            .collect(),
    };
    let last = probes.len() - 1;
    let mut zero_at = Vec::new();
    for (i, &x) in probes.iter().enumerate() {
        let v = rate.value(x);
        if !v.is_finite() {
            return Err(ModelError::NonpositiveRate { name, x, value: v });
        }
        if v > TOL_POSITIVE {
            continue;
        }
        let at_endpoint = i == 0 || i == last;
        if at_endpoint && v >= -TOL_POSITIVE {
            zero_at.push(x);
        } else {
            return Err(ModelError::NonpositiveRate { name, x, value: v });
        }
    }
    match zero_at.len() {
        0 => Ok(None),
        1 => Ok(Some(format!(
            "rate {name} vanishes at the endpoint x = {}; accepted, positive inside",
            zero_at[0]
        ))),
        _ => Err(ModelError::NonpositiveRate {
            name,
            x: zero_at[1],
            value: rate.value(zero_at[1]),
        }),
    }
}

/// Validated model: parameters plus the derived interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    params: ModelParams,
    interval: DomainInterval,
    #[serde(skip)]
    warnings: Vec<String>,
    #[serde(default = "default_true")]
    rates_positive: bool,
}

fn default_true() -> bool {
    true
}

impl Model {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn interval(&self) -> DomainInterval {
        self.interval
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `false` for models admitted by [`ModelParams::validate_lenient`] with
    /// a rate that is negative somewhere on the interval.
    pub fn rates_positive(&self) -> bool {
        self.rates_positive
    }

    pub fn a(&self) -> f64 {
        self.params.a
    }
    pub fn b(&self) -> f64 {
        self.params.b
    }
    pub fn c(&self) -> f64 {
        self.params.c
    }
    pub fn d(&self) -> f64 {
        self.params.d
    }

    pub fn lambda(&self, x: f64) -> f64 {
        self.params.lambda.value(x)
    }

    pub fn mu(&self, x: f64) -> f64 {
        self.params.mu.value(x)
    }

    /// Drift velocities `(a - b x, c - d x)`, written around the fixed
    /// points so that they vanish exactly at the endpoints.
    pub fn velocities(&self, x: f64) -> (f64, f64) {
        (
            -self.params.b * (x - self.interval.left),
            -self.params.d * (x - self.interval.right),
        )
    }

    /// Both rates affine: returns `(l, k, m, n)` with `λ = l x + k`,
    /// `μ = m x + n`.
    pub fn affine_coefficients(&self) -> Option<(f64, f64, f64, f64)> {
        match (&self.params.lambda, &self.params.mu) {
            (
                RateFunction::Affine {
                    slope: l,
                    intercept: k,
                },
                RateFunction::Affine {
                    slope: m,
                    intercept: n,
                },
            ) => Some((*l, *k, *m, *n)),
            _ => None,
        }
    }

    pub fn lambda_bounds(&self) -> (f64, f64) {
        self.params.lambda.bounds(&self.interval)
    }

    pub fn mu_bounds(&self) -> (f64, f64) {
        self.params.mu.bounds(&self.interval)
    }

    pub fn revalidate(&self) -> Result<Model, ModelError> {
        self.params.clone().validate()
    }
}

/// The seven parameter sets used throughout the tests and bundled model
/// files. `example_model(5)` has rates vanishing at one endpoint each;
/// `example_model(6)` has `μ < 0` on `[-1, -1/2)` and only passes
/// [`ModelParams::validate_lenient`].
pub fn example_model(n: usize) -> Option<ModelParams> {
    let sym = |lam: f64, mu: f64| {
        ModelParams::new(
            -1.0,
            1.0,
            1.0,
            1.0,
            RateFunction::constant(lam),
            RateFunction::constant(mu),
        )
    };
    let affine = |a, b, c, d, l, k, m, n| {
        ModelParams::new(
            a,
            b,
            c,
            d,
            RateFunction::affine(l, k),
            RateFunction::affine(m, n),
        )
    };
    Some(match n {
        1 => sym(1.0, 1.0),
        2 => sym(2.0, 2.0),
        3 => sym(0.5, 0.5),
        4 => affine(-1.0, 1.0, 1.0, 1.0, 0.0, 1.0, -1.0, 3.0),
        5 => affine(0.0, 1.0, 2.0, 1.0, -2.0, 4.0, 1.0, 0.0),
        6 => affine(-1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 2.0, 1.0),
        7 => affine(-1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 2.0),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn interval(l: f64, r: f64) -> DomainInterval {
        DomainInterval { left: l, right: r }
    }

    #[test]
    fn example_one_is_valid_on_minus_one_one() {
        let model = example_model(1).unwrap().validate().unwrap();
        assert_eq!(model.interval(), interval(-1.0, 1.0));
        assert!(model.warnings().is_empty());
    }

    #[test]
    fn equal_products_are_degenerate() {
        let p = ModelParams::new(
            1.0,
            1.0,
            1.0,
            1.0,
            RateFunction::constant(1.0),
            RateFunction::constant(1.0),
        );
        assert!(matches!(
            p.validate(),
            Err(ModelError::DegenerateInterval { .. })
        ));
    }

    #[test]
    fn slope_checks() {
        let mk = |b, d| {
            ModelParams::new(
                -1.0,
                b,
                1.0,
                d,
                RateFunction::constant(1.0),
                RateFunction::constant(1.0),
            )
            .validate()
        };
        assert_eq!(
            mk(0.0, 1.0).unwrap_err(),
            ModelError::ZeroSlope { name: "b" }
        );
        assert_eq!(
            mk(1.0, 0.0).unwrap_err(),
            ModelError::ZeroSlope { name: "d" }
        );
        assert!(matches!(
            mk(-1.0, 1.0).unwrap_err(),
            ModelError::UnsupportedSign { name: "b", .. }
        ));
    }

    #[test]
    fn example_five_accepted_with_endpoint_warnings() {
        let model = example_model(5).unwrap().validate().unwrap();
        assert_eq!(model.interval(), interval(0.0, 2.0));
        // λ(2) = 0 and μ(0) = 0
        assert_eq!(model.warnings().len(), 2);
    }

    #[test]
    fn negative_rate_rejected() {
        let p = ModelParams::new(
            -1.0,
            1.0,
            1.0,
            1.0,
            RateFunction::affine(2.0, 1.0),
            RateFunction::constant(1.0),
        );
        assert!(matches!(
            p.validate(),
            Err(ModelError::NonpositiveRate { name: "lambda", .. })
        ));
    }

    #[test]
    fn rate_zero_at_both_endpoints_rejected() {
        let p = ModelParams::new(
            -1.0,
            1.0,
            1.0,
            1.0,
            RateFunction::tabulated(vec![(-1.0, 0.0), (0.0, 1.0), (1.0, 0.0)]),
            RateFunction::constant(1.0),
        );
        assert!(matches!(
            p.validate(),
            Err(ModelError::NonpositiveRate { .. })
        ));
    }

    #[test]
    fn tabulated_dip_caught_by_probe_grid() {
        let p = ModelParams::new(
            -1.0,
            1.0,
            1.0,
            1.0,
            RateFunction::tabulated(vec![(-1.0, 1.0), (0.3, -0.5), (1.0, 1.0)]),
            RateFunction::constant(1.0),
        );
        assert!(matches!(
            p.validate(),
            Err(ModelError::NonpositiveRate { .. })
        ));
    }

    #[test]
    fn tables_must_cover_the_interval() {
        let p = ModelParams::new(
            -1.0,
            1.0,
            1.0,
            1.0,
            RateFunction::tabulated(vec![(-0.5, 1.0), (1.0, 1.0)]),
            RateFunction::constant(1.0),
        );
        assert!(matches!(p.validate(), Err(ModelError::InvalidTable(_))));
        let p = ModelParams::new(
            -1.0,
            1.0,
            1.0,
            1.0,
            RateFunction::tabulated(vec![(-1.0, 1.0), (-1.0, 2.0), (1.0, 1.0)]),
            RateFunction::constant(1.0),
        );
        assert!(matches!(p.validate(), Err(ModelError::InvalidTable(_))));
    }

    #[test]
    fn evaluate_rate_examples() {
        let iv = interval(-1.0, 1.0);
        assert_eq!(
            RateFunction::affine(0.0, 1.0).evaluate(0.3, &iv).unwrap(),
            1.0
        );
        assert_eq!(
            RateFunction::affine(-1.0, 3.0).evaluate(1.0, &iv).unwrap(),
            2.0
        );
        let t = RateFunction::tabulated(vec![(0.0, 1.0), (2.0, 3.0)]);
        assert_eq!(t.evaluate(1.0, &interval(0.0, 2.0)).unwrap(), 2.0);
        assert!(matches!(
            t.evaluate(2.5, &interval(0.0, 2.0)),
            Err(ModelError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn negative_rate_only_passes_lenient_validation() {
        let p = example_model(6).unwrap();
        assert!(matches!(
            p.clone().validate(),
            Err(ModelError::NonpositiveRate { name: "mu", .. })
        ));
        let m = p.validate_lenient().unwrap();
        assert!(!m.rates_positive());
        assert_eq!(m.warnings().len(), 1);
        let m = example_model(7).unwrap().validate_lenient().unwrap();
        assert!(m.rates_positive());
        // structural errors stay errors
        let bad = ModelParams::new(
            1.0,
            1.0,
            1.0,
            1.0,
            RateFunction::constant(1.0),
            RateFunction::constant(1.0),
        );
        assert!(bad.validate_lenient().is_err());
    }

    #[test]
    fn rate_bounds_examples() {
        let iv = interval(-1.0, 1.0);
        assert_eq!(RateFunction::affine(0.0, 1.0).bounds(&iv), (1.0, 1.0));
        assert_eq!(RateFunction::affine(-1.0, 3.0).bounds(&iv), (2.0, 4.0));
        assert_eq!(RateFunction::affine(2.0, 1.0).bounds(&iv), (-1.0, 3.0));
        let t = RateFunction::tabulated(vec![(-2.0, 9.0), (0.0, 0.5), (0.5, 4.0), (2.0, 0.1)]);
        let (lo, hi) = t.bounds(&iv);
        assert_eq!(lo, 0.5);
        // left endpoint interpolates to 4.75
        assert_eq!(hi, 4.75);
    }

    #[test]
    fn velocities_vanish_at_fixed_points() {
        for n in 1..=7 {
            let m = example_model(n).unwrap().validate_lenient().unwrap();
            let iv = m.interval();
            assert_eq!(m.velocities(iv.left).0, 0.0);
            assert_eq!(m.velocities(iv.right).1, 0.0);
            assert!((m.b() * iv.left - m.a()).abs() <= 4.0 * f64::EPSILON * m.a().abs().max(1.0));
            assert!((m.c() - m.d() * iv.right).abs() <= 4.0 * f64::EPSILON * m.c().abs().max(1.0));
        }
        let m = example_model(1).unwrap().validate().unwrap();
        assert_eq!(m.velocities(0.0), (-1.0, 1.0));
    }

    proptest! {
        #[test]
        fn validate_is_idempotent(
            a in -5.0f64..5.0, b in 0.1f64..5.0, width in 0.1f64..5.0, d in 0.1f64..5.0,
            k in 0.1f64..5.0, n in 0.1f64..5.0,
        ) {
            let xl = a / b;
            let c = (xl + width) * d;
            let p = ModelParams::new(a, b, c, d, RateFunction::constant(k), RateFunction::constant(n));
            if let Ok(m) = p.validate() {
                let again = m.revalidate().unwrap();
                prop_assert_eq!(again, m);
            }
        }

        #[test]
        fn affine_bounds_match_endpoint_values(l in -3.0f64..3.0, k in -3.0f64..3.0, lo in -2.0f64..0.0, w in 0.01f64..3.0) {
            let iv = interval(lo, lo + w);
            let r = RateFunction::affine(l, k);
            let (min, max) = r.bounds(&iv);
            let (vl, vr) = (r.value(iv.left), r.value(iv.right));
            prop_assert_eq!(min, vl.min(vr));
            prop_assert_eq!(max, vl.max(vr));
        }
    }
}
